//! The reduced two-follower / two-leader control problem.
//!
//! Dynamic programming is tractable on this 4-dimensional state space. The
//! feedback synthesized here is what the particle engine deploys on the full
//! populations.

mod grid;
mod riccati;
mod solver;

pub use grid::{GridAxis, PolicyTable, ValueGrid};
pub use riccati::{riccati_feedback, RiccatiFeedback};
pub use solver::{
    policy_iteration, value_iteration, FeedbackMode, GridFeedback, PolicyEvaluation, Solution, SolveMethod,
    SolveOptions, SolveReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};
use crate::kernels::KernelTriple;

/// `(x1, x2, y1, y2)`: two followers and two leaders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryState {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
}

impl BinaryState {
    pub const fn new(x1: f64, x2: f64, y1: f64, y2: f64) -> Self {
        BinaryState { x1, x2, y1, y2 }
    }

    pub const fn consensus(c: f64) -> Self {
        BinaryState::new(c, c, c, c)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.x2, self.y1, self.y2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BinaryState::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Running-cost weights, discounting and the admissible control interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub a_f: f64,
    pub a_l: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub x_ref: f64,
    /// Time step of the binary dynamics the DP is solved for.
    pub dt: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl CostParams {
    /// Discount factor `e^{−λΔt}`.
    pub fn beta(&self) -> f64 {
        (-self.lambda * self.dt).exp()
    }

    pub fn clamp_control(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    pub fn validate(&self, field: &str) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, name: &str, msg: String| {
            if !ok {
                errs.push(FieldError::new(format!("{field}.{name}"), msg));
            }
        };
        check(
            self.a_f >= 0.0 && self.a_f.is_finite(),
            "a_f",
            format!("must be >= 0, got {}", self.a_f),
        );
        check(
            self.a_l >= 0.0 && self.a_l.is_finite(),
            "a_l",
            format!("must be >= 0, got {}", self.a_l),
        );
        check(
            self.gamma >= 0.0 && self.gamma.is_finite(),
            "gamma",
            format!("must be >= 0, got {}", self.gamma),
        );
        check(
            self.lambda > 0.0 && self.lambda.is_finite(),
            "lambda",
            format!("discount rate must be > 0, got {}", self.lambda),
        );
        check(self.x_ref.is_finite(), "x_ref", "must be finite".into());
        check(
            self.dt > 0.0 && self.dt.is_finite(),
            "dt",
            format!("time step must be > 0, got {}", self.dt),
        );
        check(
            self.u_min < self.u_max,
            "u_min",
            format!("need u_min < u_max, got [{}, {}]", self.u_min, self.u_max),
        );
        errs
    }
}

/// Uniform discretization of `U = [u_min, u_max]`, with `u = 0` as a node.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    values: Vec<f64>,
    /// Indices into `values` ordered by the tie-break rule (`|u|`, then `u`).
    search_order: Vec<usize>,
}

impl ControlGrid {
    pub fn new(u_min: f64, u_max: f64, n: usize) -> Result<Self> {
        if n < 3 || n % 2 == 0 {
            return Err(Error::validation(
                "dp.n_controls",
                format!("need an odd count >= 3, got {n}"),
            ));
        }
        if !(u_min < 0.0 && u_max > 0.0) || (u_min + u_max).abs() > 1e-12 * u_max.abs() {
            return Err(Error::validation(
                "cost.u_min",
                format!("control interval must be symmetric about 0, got [{u_min}, {u_max}]"),
            ));
        }
        let mid = n / 2;
        let step = (u_max - u_min) / (n - 1) as f64;
        let values: Vec<f64> = (0..n)
            .map(|k| match k {
                0 => u_min,
                k if k == n - 1 => u_max,
                k if k == mid => 0.0,
                k => u_min + k as f64 * step,
            })
            .collect();
        let mut search_order: Vec<usize> = (0..n).collect();
        search_order.sort_by(|&a, &b| {
            let (ua, ub) = (values[a], values[b]);
            ua.abs().total_cmp(&ub.abs()).then(ua.total_cmp(&ub))
        });
        Ok(ControlGrid { values, search_order })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.values[self.len() - 1] - self.values[0]) / (self.len() - 1) as f64
    }

    /// Controls in tie-break order: taking the first strict minimum over this
    /// sequence yields the smallest `|u|`, then the smallest `u`.
    pub fn tie_break_order(&self) -> impl Iterator<Item = f64> + '_ {
        self.search_order.iter().map(move |&i| self.values[i])
    }
}

/// Everything that defines the binary control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryProblem {
    pub kernels: KernelTriple,
    pub cost: CostParams,
    pub controls: ControlGrid,
}

impl BinaryProblem {
    pub fn new(kernels: KernelTriple, cost: CostParams, n_controls: usize) -> Result<Self> {
        let errs = cost.validate("cost");
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        let controls = ControlGrid::new(cost.u_min, cost.u_max, n_controls)?;
        Ok(BinaryProblem {
            kernels,
            cost,
            controls,
        })
    }

    pub fn step(&self, s: &BinaryState, u: f64) -> BinaryState {
        binary_step(s, u, self.cost.dt, &self.kernels)
    }

    pub fn running_cost(&self, s: &BinaryState, u: f64) -> f64 {
        running_cost(s, u, &self.cost)
    }
}

/// Uncontrolled part of one binary step: post-step followers and the leaders'
/// interaction drift. The controlled leader states are `drift + Δt·u`.
#[inline]
pub(crate) fn binary_drift(s: &BinaryState, dt: f64, k: &KernelTriple) -> BinaryState {
    let h = dt / 2.0;
    let x1 = s.x1 + h * (k.ff.velocity(s.x1, s.x2) + (k.fl.velocity(s.x1, s.y1) + k.fl.velocity(s.x1, s.y2)));
    let x2 = s.x2 + h * (k.ff.velocity(s.x2, s.x1) + (k.fl.velocity(s.x2, s.y1) + k.fl.velocity(s.x2, s.y2)));
    let y1 = s.y1 + h * k.ll.velocity(s.y1, s.y2);
    let y2 = s.y2 + h * k.ll.velocity(s.y2, s.y1);
    BinaryState::new(x1, x2, y1, y2)
}

/// One forward-Euler step of the two-follower / two-leader system; the
/// control enters both leader equations.
#[inline]
pub fn binary_step(s: &BinaryState, u: f64, dt: f64, k: &KernelTriple) -> BinaryState {
    let d = binary_drift(s, dt, k);
    let push = dt * u;
    BinaryState::new(d.x1, d.x2, d.y1 + push, d.y2 + push)
}

#[inline]
pub(crate) fn state_cost(s: &BinaryState, p: &CostParams) -> f64 {
    let dev = |v: f64| (v - p.x_ref) * (v - p.x_ref);
    0.5 * p.a_f * (dev(s.x1) + dev(s.x2)) + 0.5 * p.a_l * (dev(s.y1) + dev(s.y2))
}

/// `(a_F/2)Σ(x−x̄)² + (a_L/2)Σ(y−x̄)² + γu²`.
#[inline]
pub fn running_cost(s: &BinaryState, u: f64, p: &CostParams) -> f64 {
    state_cost(s, p) + p.gamma * u * u
}
