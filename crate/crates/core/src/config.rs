//! Run configuration, presets and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binary::{CostParams, FeedbackMode, PolicyEvaluation, SolveMethod, SolveOptions};
use crate::dsmc::{CollisionRule, PhiEstimatorKind, Populations, ScalingParams};
use crate::error::{Error, FieldError, Result};
use crate::kernels::{KernelSpec, KernelTriple};

pub const PRESETS: [&str; 5] = ["test1", "test2", "test2-noleaders", "test3a", "test3b"];

/// Running-cost weights and control bounds. The DP time step lives in
/// [`DpConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub a_f: f64,
    pub a_l: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub x_ref: f64,
    pub u_min: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpMethod {
    ValueIter,
    PolicyIter,
    /// Closed-form feedback; constant kernels only.
    Riccati,
}

impl DpMethod {
    pub fn solve_method(self) -> Option<SolveMethod> {
        match self {
            DpMethod::ValueIter => Some(SolveMethod::ValueIter),
            DpMethod::PolicyIter => Some(SolveMethod::PolicyIter),
            DpMethod::Riccati => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_nodes")]
    pub n_controls: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_max_eval_sweeps")]
    pub max_eval_sweeps: usize,
    pub method: DpMethod,
    /// Linear solver used inside policy iteration.
    #[serde(default)]
    pub evaluation: PolicyEvaluation,
    /// Binary time step; defaults to `2ε` so the feedback is synthesized at
    /// the deployed interaction strength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_feedback")]
    pub feedback: FeedbackMode,
    /// Load the value grid from this file instead of solving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_file: Option<PathBuf>,
}

fn default_nodes() -> usize {
    41
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    SolveOptions::default().max_iter
}
fn default_max_eval_sweeps() -> usize {
    SolveOptions::default().max_eval_sweeps
}
fn default_feedback() -> FeedbackMode {
    FeedbackMode::PolicyTable
}

impl DpConfig {
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            max_eval_sweeps: self.max_eval_sweeps,
            evaluation: self.evaluation,
        }
    }
}

/// Which control the leaders receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlChoice {
    None,
    /// Feedback from the `dp` section.
    Dp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_dx")]
    pub dx: f64,
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    #[serde(default = "default_surface_points")]
    pub surface_points: usize,
    #[serde(default = "default_surface_leaders")]
    pub surface_leaders: usize,
    /// Where synthesized value grids are cached; no caching when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_stride() -> usize {
    25
}
fn default_dx() -> f64 {
    0.025
}
fn default_domain() -> [f64; 2] {
    [-1.0, 1.0]
}
fn default_surface_points() -> usize {
    81
}
fn default_surface_leaders() -> usize {
    256
}
fn default_workers() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            stride: default_stride(),
            dx: default_dx(),
            domain: default_domain(),
            surface_points: default_surface_points(),
            surface_leaders: default_surface_leaders(),
            cache_dir: None,
            workers: default_workers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    pub control: ControlChoice,
    pub kernels: KernelTriple,
    pub cost: CostConfig,
    pub scaling: ScalingParams,
    pub populations: Populations,
    pub dp: DpConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Cost parameters of the binary problem, with the resolved DP time step.
    pub fn cost_params(&self) -> CostParams {
        let c = &self.cost;
        CostParams {
            a_f: c.a_f,
            a_l: c.a_l,
            gamma: c.gamma,
            lambda: c.lambda,
            x_ref: c.x_ref,
            dt: self.dp_dt(),
            u_min: c.u_min,
            u_max: c.u_max,
        }
    }

    pub fn dp_dt(&self) -> f64 {
        self.dp.dt.unwrap_or(2.0 * self.scaling.eps)
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.field_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut errs = self.kernels.validate("kernels");
        errs.extend(self.cost_params().validate("cost").into_iter().map(|mut e| {
            if e.field == "cost.dt" {
                e.field = "dp.dt".into();
            }
            e
        }));
        let p = &self.populations;
        errs.extend(p.validate("populations"));
        errs.extend(self.scaling.validate("scaling", p.rho_f, p.rho_l));
        let dp = &self.dp;
        if dp.nodes < 2 {
            errs.push(FieldError::new(
                "dp.nodes",
                format!("need at least 2 nodes per axis, got {}", dp.nodes),
            ));
        }
        if dp.n_controls < 3 || dp.n_controls % 2 == 0 {
            errs.push(FieldError::new(
                "dp.n_controls",
                format!("must be odd and >= 3 so that u = 0 is a node, got {}", dp.n_controls),
            ));
        }
        if !(dp.tol > 0.0) {
            errs.push(FieldError::new("dp.tol", format!("must be > 0, got {}", dp.tol)));
        }
        if dp.max_iter == 0 {
            errs.push(FieldError::new("dp.max_iter", "must be >= 1"));
        }
        if dp.method == DpMethod::Riccati && !self.kernels.is_linear() {
            errs.push(FieldError::new(
                "dp.method",
                "riccati requires constant (or zero) kernels for ff, fl and ll",
            ));
        }
        if self.cost.u_min > 0.0 || self.cost.u_max < 0.0 {
            errs.push(FieldError::new("cost.u_min", "the control interval must contain 0"));
        } else if self.cost.u_min != -self.cost.u_max && dp.method != DpMethod::Riccati {
            errs.push(FieldError::new(
                "cost.u_min",
                "the control grid needs a symmetric interval u_min = -u_max",
            ));
        }
        let o = &self.output;
        if o.stride == 0 {
            errs.push(FieldError::new("output.stride", "must be >= 1"));
        }
        let [lo, hi] = o.domain;
        if !(lo < hi) {
            errs.push(FieldError::new(
                "output.domain",
                format!("need lo < hi, got [{lo}, {hi}]"),
            ));
        } else if !(o.dx > 0.0) {
            errs.push(FieldError::new("output.dx", format!("must be > 0, got {}", o.dx)));
        } else {
            let r = (hi - lo) / o.dx;
            if (r - r.round()).abs() > 1e-9 * r.max(1.0) {
                errs.push(FieldError::new(
                    "output.dx",
                    format!("{} does not divide the domain width {}", o.dx, hi - lo),
                ));
            }
        }
        if o.workers == 0 {
            errs.push(FieldError::new("output.workers", "must be >= 1"));
        }
        errs
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("config (bytes {}..{})", s.start, s.end))
                .unwrap_or_else(|| "config".into());
            Error::validation(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// A preset by name, at desk scale.
    pub fn preset(name: &str) -> Result<Self> {
        let shared_scaling = ScalingParams {
            eps: 0.01,
            dt: 2.0 / 3.0 * 1e-2,
            sigma_s: 64,
            t_final: 0.0,
            phi_estimator: PhiEstimatorKind::Full,
            collisions: CollisionRule::OneSided,
        };
        let pops = |f: [f64; 2], l: [f64; 2]| Populations {
            rho_f: 1.0,
            rho_l: 0.5,
            n_followers: 10_000,
            n_leaders: 5_000,
            followers_init: f,
            leaders_init: l,
        };
        let dp = |method| DpConfig {
            nodes: default_nodes(),
            n_controls: default_nodes(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            max_eval_sweeps: default_max_eval_sweeps(),
            evaluation: PolicyEvaluation::default(),
            method,
            dt: None,
            feedback: default_feedback(),
            grid_file: None,
        };
        let output = |dir: &str| OutputConfig {
            dir: PathBuf::from("out").join(dir),
            ..OutputConfig::default()
        };
        let bc = |r| KernelSpec::BoundedConfidence { r };
        let one = KernelSpec::Constant { c: 1.0 };
        let par = |s| KernelSpec::Parabolic { s };

        let test2 = |fl: KernelSpec, control, dir: &str| RunConfig {
            name: Some(dir.into()),
            seed: 2,
            control,
            kernels: KernelTriple::new(bc(0.3), fl, one),
            cost: CostConfig {
                a_f: 10.0,
                a_l: 0.1,
                gamma: 0.05,
                lambda: 0.1,
                x_ref: 0.25,
                u_min: -1.0,
                u_max: 1.0,
            },
            scaling: ScalingParams {
                t_final: 10.0,
                ..shared_scaling
            },
            populations: pops([-0.9, 1.3], [0.0, 0.5]),
            dp: DpConfig {
                tol: 1e-5,
                ..dp(DpMethod::PolicyIter)
            },
            // The initial followers extend to 1.3, beyond the DP domain.
            output: OutputConfig {
                domain: [-1.0, 1.5],
                ..output(dir)
            },
        };
        let test3 = |ff: KernelSpec, fl: KernelSpec, dir: &str| RunConfig {
            name: Some(dir.into()),
            seed: 3,
            control: ControlChoice::Dp,
            kernels: KernelTriple::new(ff, fl, par(1.0)),
            cost: CostConfig {
                a_f: 1.0,
                a_l: 0.01,
                gamma: 1.0,
                lambda: 0.5,
                x_ref: 0.0,
                u_min: -1.0,
                u_max: 1.0,
            },
            // Final time from the parameter table; the running text quotes 2.5.
            scaling: ScalingParams {
                t_final: 3.5,
                ..shared_scaling
            },
            populations: pops([0.05, 0.55], [-0.45, 0.05]),
            dp: dp(DpMethod::PolicyIter),
            output: output(dir),
        };

        let cfg = match name {
            "test1" => RunConfig {
                name: Some("test1".into()),
                seed: 1,
                control: ControlChoice::Dp,
                kernels: KernelTriple::uniform(one),
                cost: CostConfig {
                    a_f: 1.0,
                    a_l: 1.0,
                    gamma: 1.0,
                    lambda: 1.0,
                    x_ref: -0.5,
                    u_min: -1.0,
                    u_max: 1.0,
                },
                scaling: ScalingParams {
                    t_final: 2.5,
                    ..shared_scaling
                },
                populations: pops([-1.0, 1.0], [0.15, 0.85]),
                dp: dp(DpMethod::Riccati),
                output: output("test1"),
            },
            "test2" => test2(bc(0.8), ControlChoice::Dp, "test2"),
            "test2-noleaders" => test2(KernelSpec::Zero, ControlChoice::None, "test2-noleaders"),
            // Repulsive followers, attractive leaders.
            "test3a" => test3(par(-1.0), par(1.0), "test3a"),
            // Attractive followers, repulsive leaders.
            "test3b" => test3(par(1.0), par(-1.0), "test3b"),
            other => {
                return Err(Error::validation(
                    "preset",
                    format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", ")),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switch to full-size sample counts (10⁶ followers, 5×10⁵ leaders) and the subsampled control
    /// estimator.
    pub fn full_scale(&mut self) {
        self.populations.n_followers = 1_000_000;
        self.populations.n_leaders = 500_000;
        self.scaling.phi_estimator = PhiEstimatorKind::Subsampled;
        self.scaling.sigma_s = match self.name.as_deref() {
            Some(n) if n.starts_with("test3") => 500_000,
            _ => 200_000,
        };
    }
}
