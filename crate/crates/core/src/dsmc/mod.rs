//! Two-population Boltzmann particle engine with binary feedback control.
//!
//! Followers and leaders are represented by `N_s` and `M_s` samples. Each time
//! step a stochastically rounded number of samples undergoes a binary
//! collision (follower–follower, follower–leader, leader–leader) with
//! interaction strength `α = ε`. Leader collisions carry the control term
//! `2α·φ(y_i, y_r)`, where `φ` averages the binary feedback over pairs of
//! follower samples. Collision counts reproduce the interaction fractions
//! `δt·ρ/ε` of the first-order splitting of the scaled Boltzmann system, so the
//! gain operators are sampled and never assembled.

mod phi;
mod run;
mod step;

pub use phi::{estimate_phi, PhiField};
pub use run::{run_tpbb, run_tpbb_partial, RecordOptions, RunRecord, Snapshot, StepTrace, TpbbSetup};
pub use step::{tpbb_step, StepStats, Workspace};

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};
use crate::kernels::KernelSpec;

/// Empirical follower and leader measures.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub followers: Vec<f64>,
    pub leaders: Vec<f64>,
    pub rho_f: f64,
    pub rho_l: f64,
    pub t: f64,
}

impl ParticleEnsemble {
    pub fn new(followers: Vec<f64>, leaders: Vec<f64>, rho_f: f64, rho_l: f64) -> Self {
        ParticleEnsemble {
            followers,
            leaders,
            rho_f,
            rho_l,
            t: 0.0,
        }
    }

    /// Sample both populations uniformly on their initial intervals.
    pub fn sample(pop: &Populations, rng: &mut impl Rng) -> Result<Self> {
        let followers = sample_initial(pop.followers_init, pop.n_followers, rng)?;
        let leaders = sample_initial(pop.leaders_init, pop.n_leaders, rng)?;
        Ok(ParticleEnsemble::new(followers, leaders, pop.rho_f, pop.rho_l))
    }
}

/// Masses, sample counts and initial supports of the two populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Populations {
    pub rho_f: f64,
    pub rho_l: f64,
    pub n_followers: usize,
    pub n_leaders: usize,
    pub followers_init: [f64; 2],
    pub leaders_init: [f64; 2],
}

impl Populations {
    pub fn validate(&self, field: &str) -> Vec<FieldError> {
        let mut errs = Vec::new();
        for (name, rho) in [("rho_f", self.rho_f), ("rho_l", self.rho_l)] {
            if !(rho > 0.0 && rho.is_finite()) {
                errs.push(FieldError::new(
                    format!("{field}.{name}"),
                    format!("mass must be > 0, got {rho}"),
                ));
            }
        }
        for (name, [a, b]) in [
            ("followers_init", self.followers_init),
            ("leaders_init", self.leaders_init),
        ] {
            if !(a < b && a.is_finite() && b.is_finite()) {
                errs.push(FieldError::new(
                    format!("{field}.{name}"),
                    format!("need a finite interval with a < b, got [{a}, {b}]"),
                ));
            }
        }
        if self.n_followers == 0 {
            errs.push(FieldError::new(
                format!("{field}.n_followers"),
                "need at least one follower sample",
            ));
        }
        if self.n_leaders == 0 {
            errs.push(FieldError::new(
                format!("{field}.n_leaders"),
                "need at least one leader sample",
            ));
        }
        errs
    }
}

/// How the binary feedback is averaged over follower samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhiEstimatorKind {
    /// All `σ_s²` ordered pairs of the drawn samples.
    #[default]
    Full,
    /// `σ_s` independently drawn pairs; unbiased for the same expectation.
    Subsampled,
}

/// Which samples a selected collision updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CollisionRule {
    /// Only the selected sample moves; its partner is drawn with repetition.
    #[default]
    OneSided,
    /// Selected samples collide pairwise and both move.
    Symmetric,
}

/// Scaling and sampling parameters of the particle scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingParams {
    /// Interaction strength `α = ε`; the collision rate is `1/ε`.
    pub eps: f64,
    pub dt: f64,
    pub sigma_s: usize,
    pub t_final: f64,
    #[serde(default)]
    pub phi_estimator: PhiEstimatorKind,
    #[serde(default)]
    pub collisions: CollisionRule,
}

impl ScalingParams {
    pub fn alpha(&self) -> f64 {
        self.eps
    }

    /// `N_T` with `N_T·δt = T`, if `T/δt` is integral.
    pub fn steps(&self) -> Option<usize> {
        let r = self.t_final / self.dt;
        let n = r.round();
        ((r - n).abs() <= 1e-6 * n.max(1.0) && n >= 0.0).then_some(n as usize)
    }

    /// `δt ≤ ε/(ρ_F + ρ_L)`, with a relative slack of a few ulps.
    pub fn satisfies_cfl(&self, rho_f: f64, rho_l: f64) -> bool {
        self.dt <= self.eps / (rho_f + rho_l) * (1.0 + 1e-12)
    }

    pub fn validate(&self, field: &str, rho_f: f64, rho_l: f64) -> Vec<FieldError> {
        let mut errs = Vec::new();
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            errs.push(FieldError::new(
                format!("{field}.eps"),
                format!("must be > 0, got {}", self.eps),
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(FieldError::new(
                format!("{field}.dt"),
                format!("must be > 0, got {}", self.dt),
            ));
        } else if !self.satisfies_cfl(rho_f, rho_l) {
            errs.push(FieldError::new(
                format!("{field}.dt"),
                format!(
                    "CFL violated: dt = {} > eps/(rho_f + rho_l) = {}",
                    self.dt,
                    self.eps / (rho_f + rho_l)
                ),
            ));
        }
        if self.sigma_s == 0 {
            errs.push(FieldError::new(
                format!("{field}.sigma_s"),
                "need at least one control sample",
            ));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            errs.push(FieldError::new(format!("{field}.t_final"), "must be finite and >= 0"));
        } else if self.dt > 0.0 && self.steps().is_none() {
            errs.push(FieldError::new(
                format!("{field}.t_final"),
                format!("t_final/dt = {} is not an integer", self.t_final / self.dt),
            ));
        }
        errs
    }
}

/// `⌊x⌋ + Bernoulli(x − ⌊x⌋)`, so that the expectation is exactly `x`.
pub fn stochastic_round(x: f64, rng: &mut impl Rng) -> usize {
    debug_assert!(x >= 0.0, "stochastic_round needs x >= 0, got {x}");
    let floor = x.floor();
    let frac = x - floor;
    let bump = frac > 0.0 && rng.random::<f64>() < frac;
    floor as usize + usize::from(bump)
}

/// `n` independent uniform samples on `[a, b]`.
pub fn sample_initial(interval: [f64; 2], n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let [a, b] = interval;
    let dist = Uniform::new_inclusive(a, b).ok().filter(|_| a < b).ok_or_else(|| {
        Error::validation(
            "populations",
            format!("need a < b for uniform sampling, got [{a}, {b}]"),
        )
    })?;
    Ok(dist.sample_iter(rng).take(n).collect())
}

/// Follower–follower rule; only the selected follower moves.
#[inline]
pub fn ff_collision(x_i: f64, x_r: f64, alpha: f64, k_ff: &KernelSpec) -> f64 {
    x_i + alpha * k_ff.velocity(x_i, x_r)
}

/// Follower–leader rule; the leader sample is left untouched.
#[inline]
pub fn fl_collision(x_j: f64, y_r: f64, alpha: f64, k_fl: &KernelSpec) -> f64 {
    x_j + alpha * k_fl.velocity(x_j, y_r)
}

/// Leader–leader rule with control `φ`.
#[inline]
pub fn ll_collision(y_i: f64, y_r: f64, alpha: f64, k_ll: &KernelSpec, phi: f64) -> f64 {
    y_i + alpha * k_ll.velocity(y_i, y_r) + 2.0 * alpha * phi
}
