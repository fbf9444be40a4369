//! Direct simulation of the finite follower/leader system.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binary::{BinaryState, CostParams};
use crate::control::ControlSource;
use crate::error::{Error, Result};
use crate::kernels::KernelTriple;

#[derive(Debug, Clone, PartialEq)]
pub struct MicroState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
}

impl MicroState {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::validation(
                "microsim",
                "need at least one follower and one leader",
            ));
        }
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return Err(Error::validation("microsim", "states must be finite"));
        }
        Ok(MicroState { x, y, t: 0.0 })
    }

    pub fn from_binary(s: &BinaryState) -> Self {
        MicroState {
            x: vec![s.x1, s.x2],
            y: vec![s.y1, s.y2],
            t: 0.0,
        }
    }
}

/// Forward-Euler step of the full system; the control enters every leader.
///
/// Self-interaction terms are part of the sums (they contribute nothing), so
/// the normalizations are exactly `1/N` and `1/M`.
pub fn micro_step(s: &MicroState, u: f64, dt: f64, k: &KernelTriple) -> MicroState {
    let inv_n = 1.0 / s.x.len() as f64;
    let inv_m = 1.0 / s.y.len() as f64;
    let x =
        s.x.iter()
            .map(|&xi| {
                let ff = s.x.iter().fold(0.0, |acc, &xk| acc + k.ff.velocity(xi, xk));
                let fl = s.y.iter().fold(0.0, |acc, &yl| acc + k.fl.velocity(xi, yl));
                xi + dt * (ff * inv_n + fl * inv_m)
            })
            .collect();
    let push = dt * u;
    let y =
        s.y.iter()
            .map(|&yj| {
                let ll = s.y.iter().fold(0.0, |acc, &yl| acc + k.ll.velocity(yj, yl));
                yj + dt * (ll * inv_m) + push
            })
            .collect();
    MicroState { x, y, t: s.t + dt }
}

/// `ℓ = (a_F/N)Σ(x−x̄)² + (a_L/M)Σ(y−x̄)² + γu²`.
pub fn micro_running_cost(s: &MicroState, u: f64, p: &CostParams) -> f64 {
    let dev = |v: &f64| (v - p.x_ref) * (v - p.x_ref);
    p.a_f / s.x.len() as f64 * s.x.iter().map(dev).sum::<f64>()
        + p.a_l / s.y.len() as f64 * s.y.iter().map(dev).sum::<f64>()
        + p.gamma * u * u
}

/// How the binary feedback is evaluated for `N, M` other than 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackEval {
    /// Two followers and two leaders drawn uniformly (with repetition) each step.
    #[default]
    Subsample,
    /// Both follower slots at the follower mean, both leader slots at the leader mean.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `n_steps + 1` states, starting with the initial one.
    pub states: Vec<MicroState>,
    /// Control applied at each of the `n_steps` steps.
    pub controls: Vec<f64>,
    /// `Σ β^n Δt ℓ(x^n, y^n, u^n)` with `β = e^{−λΔt}`.
    pub cost: f64,
}

fn binary_view(s: &MicroState, eval: FeedbackEval, rng: &mut impl Rng) -> BinaryState {
    if s.x.len() == 2 && s.y.len() == 2 {
        return BinaryState::new(s.x[0], s.x[1], s.y[0], s.y[1]);
    }
    match eval {
        FeedbackEval::Subsample => {
            let x = |rng: &mut _| s.x[Rng::random_range(rng, 0..s.x.len())];
            let y = |rng: &mut _| s.y[Rng::random_range(rng, 0..s.y.len())];
            let (x1, x2) = (x(rng), x(rng));
            let (y1, y2) = (y(rng), y(rng));
            BinaryState::new(x1, x2, y1, y2)
        }
        FeedbackEval::Mean => {
            let mx = s.x.iter().sum::<f64>() / s.x.len() as f64;
            let my = s.y.iter().sum::<f64>() / s.y.len() as f64;
            BinaryState::new(mx, mx, my, my)
        }
    }
}

/// Roll out [`micro_step`] under `control` and accumulate the discounted cost.
///
/// At `N = M = 2` the feedback sees the state itself; otherwise `eval`
/// decides which binary state it is evaluated at.
#[allow(clippy::too_many_arguments)]
pub fn simulate_micro(
    s0: &MicroState,
    control: &ControlSource,
    dt: f64,
    n_steps: usize,
    k: &KernelTriple,
    p: &CostParams,
    eval: FeedbackEval,
    rng: &mut impl Rng,
) -> Rollout {
    let beta = (-p.lambda * dt).exp();
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut controls = Vec::with_capacity(n_steps);
    states.push(s0.clone());
    let mut cost = 0.0;
    let mut disc = 1.0;
    for _ in 0..n_steps {
        let s = states.last().expect("nonempty");
        let u = if control.is_none() {
            0.0
        } else {
            control.control(&binary_view(s, eval, rng))
        };
        cost += disc * dt * micro_running_cost(s, u, p);
        disc *= beta;
        let next = micro_step(s, u, dt, k);
        controls.push(u);
        states.push(next);
    }
    Rollout { states, controls, cost }
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    t: f64,
    agent_kind: &'a str,
    agent_index: usize,
    state: f64,
    u_applied: Option<f64>,
}

/// CSV with columns `t, agent_kind, agent_index, state, u_applied`; the
/// final state has no applied control.
pub fn write_trajectory_csv(w: impl Write, rollout: &Rollout) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (n, s) in rollout.states.iter().enumerate() {
        let u = rollout.controls.get(n).copied();
        for (kind, values) in [("F", &s.x), ("L", &s.y)] {
            for (i, &v) in values.iter().enumerate() {
                out.serialize(TrajectoryRow {
                    t: s.t,
                    agent_kind: kind,
                    agent_index: i,
                    state: v,
                    u_applied: u,
                })?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_trajectory_csv(path: &Path, rollout: &Rollout) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::persist(path, e))?;
    write_trajectory_csv(std::io::BufWriter::new(file), rollout)
}
