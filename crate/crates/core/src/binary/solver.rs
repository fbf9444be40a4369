//! Semi-Lagrangian dynamic programming for the binary problem.
//!
//! The Bellman operator is
//!
//! ```text
//! (T V)(s) = min_{u ∈ U_h} { β·V(step(s, u)) + Δt·ℓ(s, u) }
//! ```
//!
//! with `V(·)` the multilinear interpolant of the nodal values (clamped to
//! `Ω⁴`). Interpolation weights are convex, so `T` is a `β`-contraction in the
//! sup norm and both solvers below converge from any start.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::grid::{sup_distance, Cell, GridAxis, PolicyTable, ValueGrid};
use super::{binary_drift, state_cost, BinaryProblem, BinaryState};

const CHUNK: usize = 4096;

/// Grid solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    ValueIter,
    PolicyIter,
}

/// Linear solver for the frozen-policy value inside policy iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyEvaluation {
    /// Fixed-point sweeps `V ← c + βP V`; the error shrinks by `β` per sweep.
    Jacobi,
    /// Matrix-free BiCGSTAB on `(I − βP) V = c`, restarted from the true
    /// residual when the recurrence drifts or breaks down.
    #[default]
    Bicgstab,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stop once the sup-norm Bellman residual drops below this.
    pub tol: f64,
    /// Bellman sweeps (value iteration) or improvement steps (policy iteration).
    pub max_iter: usize,
    /// Cap on the operator applications of one policy evaluation.
    pub max_eval_sweeps: usize,
    pub evaluation: PolicyEvaluation,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-6,
            max_iter: 100_000,
            max_eval_sweeps: 200_000,
            evaluation: PolicyEvaluation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: SolveMethod,
    /// Bellman sweeps (value iteration) or improvement steps (policy iteration).
    pub iterations: usize,
    /// Frozen-policy operator applications spent in policy evaluation (0 for
    /// value iteration).
    pub eval_sweeps: usize,
    pub residual: f64,
    pub tol: f64,
    pub converged: bool,
    /// `‖V_{k+1} − V_k‖_∞` per Bellman sweep; for policy iteration, the
    /// residual at each improvement step.
    pub residual_log: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub grid: ValueGrid,
    /// Greedy controls at the nodes of `grid`'s predecessor iterate.
    pub policy: PolicyTable,
    pub report: SolveReport,
}

impl Solution {
    /// The solution, or `NonConvergence` if the residual never reached `tol`.
    pub fn require_converged(self) -> Result<Self> {
        if self.report.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.report.iterations,
                residual: self.report.residual,
                tol: self.report.tol,
            })
        }
    }
}

impl BinaryProblem {
    /// Minimize the Bellman objective at `s` over the control grid.
    ///
    /// Returns `(value, u*)`; ties go to the smallest `|u|`, then the smallest `u`.
    ///
    /// Only the leader coordinates depend on `u`, and they move along the
    /// diagonal by at most `Δt·|U|`, so the follower axes are contracted once
    /// over the window of leader cells the controls can reach. The result is
    /// bitwise identical to interpolating at `step(s, u)` for each `u`.
    pub(crate) fn greedy(&self, axis: &GridAxis, values: &[f64], s: &BinaryState) -> (f64, f64) {
        let p = &self.cost;
        let beta = p.beta();
        let d = binary_drift(s, p.dt, &self.kernels);
        let st = axis.strides();

        let (i1, f1) = axis.locate(d.x1);
        let (i2, f2) = axis.locate(d.x2);
        let wx = [(1.0 - f1) * (1.0 - f2), (1.0 - f1) * f2, f1 * (1.0 - f2), f1 * f2];
        let xbase = i1 * st[0] + i2 * st[1];
        let xoff = [0, st[1], st[0], st[0] + st[1]];

        let (push_lo, push_hi) = (p.dt * p.u_min, p.dt * p.u_max);
        let (lo_a, hi_a) = ordered(axis.locate(d.y1 + push_lo).0, axis.locate(d.y1 + push_hi).0);
        let (lo_b, hi_b) = ordered(axis.locate(d.y2 + push_lo).0, axis.locate(d.y2 + push_hi).0);
        let (ka, kb) = (hi_a - lo_a + 2, hi_b - lo_b + 2);

        let mut stack = [0.0f64; 64];
        let mut heap = Vec::new();
        let window: &mut [f64] = if ka * kb <= stack.len() {
            &mut stack[..ka * kb]
        } else {
            heap.resize(ka * kb, 0.0);
            &mut heap
        };
        for a in 0..ka {
            for b in 0..kb {
                let base = xbase + (lo_a + a) * st[2] + (lo_b + b) * st[3];
                window[a * kb + b] = wx[0] * values[base + xoff[0]]
                    + wx[1] * values[base + xoff[1]]
                    + wx[2] * values[base + xoff[2]]
                    + wx[3] * values[base + xoff[3]];
            }
        }

        let sc = state_cost(s, p);
        let mut best = (f64::INFINITY, 0.0);
        for u in self.controls.tie_break_order() {
            let push = p.dt * u;
            let (ja, ga) = axis.locate(d.y1 + push);
            let (jb, gb) = axis.locate(d.y2 + push);
            let (a, b) = (ja - lo_a, jb - lo_b);
            let w = |a: usize, b: usize| window[a * kb + b];
            let val = (1.0 - ga) * ((1.0 - gb) * w(a, b) + gb * w(a, b + 1))
                + ga * ((1.0 - gb) * w(a + 1, b) + gb * w(a + 1, b + 1));
            let obj = beta * val + p.dt * (sc + p.gamma * u * u);
            if obj < best.0 {
                best = (obj, u);
            }
        }
        best
    }

    /// Bellman update at `s` against `v`: `(min value, argmin control)`.
    pub fn bellman_update(&self, v: &ValueGrid, s: &BinaryState) -> (f64, f64) {
        self.greedy(&v.axis, &v.values, s)
    }

    /// Optimal feedback `F(s)` extracted from a value grid; `s` may be off-grid.
    pub fn feedback(&self, v: &ValueGrid, s: &BinaryState) -> f64 {
        self.greedy(&v.axis, &v.values, s).1
    }

    /// One Jacobi sweep `V ↦ T V`, writing values and argmins.
    pub(crate) fn sweep(&self, axis: &GridAxis, v: &[f64], out: &mut [f64], policy: &mut [f64]) {
        out.par_chunks_mut(CHUNK)
            .zip(policy.par_chunks_mut(CHUNK))
            .enumerate()
            .for_each(|(c, (vals, pols))| {
                let start = c * CHUNK;
                for (k, (val, pol)) in vals.iter_mut().zip(pols.iter_mut()).enumerate() {
                    let s = axis.node_state(start + k);
                    let (value, u) = self.greedy(axis, v, &s);
                    *val = value;
                    *pol = u;
                }
            });
    }

    /// `T V` on every node.
    pub fn bellman_operator(&self, v: &ValueGrid) -> ValueGrid {
        let mut out = v.clone();
        let mut pol = vec![0.0; v.values.len()];
        self.sweep(&v.axis, &v.values, &mut out.values, &mut pol);
        out
    }

    fn check_grid(&self, v: &ValueGrid) -> Result<()> {
        v.matches(&v.axis, &self.cost, &self.kernels, self.controls.len())
            .map_err(|m| Error::validation("dp", m))
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Jacobi value iteration from `v0` until the sup-norm residual is below `tol`.
///
/// A run that hits `max_iter` is still returned, with `report.converged = false`.
pub fn value_iteration(v0: ValueGrid, problem: &BinaryProblem, opts: &SolveOptions) -> Result<Solution> {
    problem.check_grid(&v0)?;
    let axis = v0.axis;
    let mut grid = v0;
    let mut next = vec![0.0; grid.values.len()];
    let mut policy = vec![0.0; grid.values.len()];
    let mut log = Vec::new();
    let mut residual = f64::INFINITY;
    while log.len() < opts.max_iter {
        problem.sweep(&axis, &grid.values, &mut next, &mut policy);
        residual = sup_distance(&next, &grid.values);
        std::mem::swap(&mut grid.values, &mut next);
        log.push(residual);
        if residual < opts.tol {
            break;
        }
    }
    grid.residual = residual;
    Ok(Solution {
        grid,
        policy: PolicyTable { axis, controls: policy },
        report: SolveReport {
            method: SolveMethod::ValueIter,
            iterations: log.len(),
            eval_sweeps: 0,
            residual,
            tol: opts.tol,
            converged: residual < opts.tol,
            residual_log: log,
        },
    })
}

/// Frozen-policy transition: where each node lands and what it pays.
struct PolicyStencil {
    cells: Vec<Cell>,
    costs: Vec<f64>,
}

impl PolicyStencil {
    fn build(problem: &BinaryProblem, axis: &GridAxis, policy: &[f64]) -> Self {
        let (cells, costs) = (0..policy.len())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| {
                let s = axis.node_state(i);
                let u = policy[i];
                let p = &problem.cost;
                let d = binary_drift(&s, p.dt, &problem.kernels);
                let push = p.dt * u;
                let next = BinaryState::new(d.x1, d.x2, d.y1 + push, d.y2 + push);
                (Cell::locate(axis, &next), p.dt * (state_cost(&s, p) + p.gamma * u * u))
            })
            .unzip();
        PolicyStencil { cells, costs }
    }

    /// `out = c + βP v`.
    fn apply(&self, beta: f64, strides: [usize; 4], v: &[f64], out: &mut [f64]) {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, vals)| {
            let start = c * CHUNK;
            for (k, val) in vals.iter_mut().enumerate() {
                let i = start + k;
                *val = beta * self.cells[i].apply(v, strides) + self.costs[i];
            }
        });
    }

    /// `out = (I − βP) v`.
    fn linear(&self, beta: f64, strides: [usize; 4], v: &[f64], out: &mut [f64]) {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, vals)| {
            let start = c * CHUNK;
            for (k, val) in vals.iter_mut().enumerate() {
                let i = start + k;
                *val = v[i] - beta * self.cells[i].apply(v, strides);
            }
        });
    }

    /// `out = c − (I − βP) v`, returning its sup norm. This is also the
    /// fixed-point change `‖c + βP v − v‖_∞` that Jacobi stops on.
    fn residual(&self, beta: f64, strides: [usize; 4], v: &[f64], out: &mut [f64]) -> f64 {
        self.apply(beta, strides, v, out);
        out.par_chunks_mut(CHUNK)
            .zip(v.par_chunks(CHUNK))
            .map(|(r, x)| {
                let mut m: f64 = 0.0;
                for (ri, xi) in r.iter_mut().zip(x) {
                    *ri -= xi;
                    m = m.max(ri.abs());
                }
                m
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Chunked dot product; partial sums are combined in chunk order so the
/// result does not depend on the thread count.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let parts: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    parts.iter().sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.par_chunks(CHUNK)
        .map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .reduce(|| 0.0, f64::max)
}

/// `y ← y + a·x`.
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.par_chunks_mut(CHUNK).zip(x.par_chunks(CHUNK)).for_each(|(yc, xc)| {
        for (yi, xi) in yc.iter_mut().zip(xc) {
            *yi += a * xi;
        }
    });
}

/// Solve the frozen-policy system in place, starting from `v`; returns the
/// number of operator applications.
fn evaluate(stencil: &PolicyStencil, beta: f64, strides: [usize; 4], v: &mut Vec<f64>, opts: &SolveOptions) -> usize {
    match opts.evaluation {
        PolicyEvaluation::Jacobi => evaluate_jacobi(stencil, beta, strides, v, opts.tol, opts.max_eval_sweeps),
        PolicyEvaluation::Bicgstab => evaluate_bicgstab(stencil, beta, strides, v, opts.tol, opts.max_eval_sweeps),
    }
}

fn evaluate_jacobi(
    stencil: &PolicyStencil,
    beta: f64,
    strides: [usize; 4],
    v: &mut Vec<f64>,
    tol: f64,
    cap: usize,
) -> usize {
    let mut scratch = vec![0.0; v.len()];
    let mut sweeps = 0;
    while sweeps < cap {
        stencil.apply(beta, strides, v, &mut scratch);
        let change = sup_distance(&scratch, v);
        std::mem::swap(v, &mut scratch);
        sweeps += 1;
        if change < tol {
            break;
        }
    }
    sweeps
}

fn evaluate_bicgstab(
    stencil: &PolicyStencil,
    beta: f64,
    strides: [usize; 4],
    x: &mut Vec<f64>,
    tol: f64,
    cap: usize,
) -> usize {
    let n = x.len();
    let mut r = vec![0.0; n];
    let mut used = 1;
    let mut res = stencil.residual(beta, strides, x, &mut r);
    let (mut r0, mut p, mut v, mut t) = (r.clone(), vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stalls = 0;
    'restart: while res >= tol && used < cap {
        r0.copy_from_slice(&r);
        p.copy_from_slice(&r);
        let mut rho = dot(&r0, &r);
        loop {
            if used + 2 > cap {
                break 'restart;
            }
            stencil.linear(beta, strides, &p, &mut v);
            used += 1;
            let r0v = dot(&r0, &v);
            if rho == 0.0 || r0v == 0.0 || !r0v.is_finite() {
                break;
            }
            let alpha = rho / r0v;
            axpy(alpha, &p, x);
            axpy(-alpha, &v, &mut r);
            if sup_norm(&r) < tol {
                break;
            }
            stencil.linear(beta, strides, &r, &mut t);
            used += 1;
            let tt = dot(&t, &t);
            let omega = if tt > 0.0 { dot(&t, &r) / tt } else { 0.0 };
            if omega == 0.0 || !omega.is_finite() {
                break;
            }
            axpy(omega, &r, x);
            axpy(-omega, &t, &mut r);
            if sup_norm(&r) < tol {
                break;
            }
            let rho_next = dot(&r0, &r);
            let b = (rho_next / rho) * (alpha / omega);
            rho = rho_next;
            // p ← r + b (p − ω v)
            p.par_chunks_mut(CHUNK)
                .zip(r.par_chunks(CHUNK).zip(v.par_chunks(CHUNK)))
                .for_each(|(pc, (rc, vc))| {
                    for ((pi, ri), vi) in pc.iter_mut().zip(rc).zip(vc) {
                        *pi = ri + b * (*pi - omega * vi);
                    }
                });
        }
        // The recurrence residual drifts from the true one; check and restart.
        let prev = res;
        res = stencil.residual(beta, strides, x, &mut r);
        used += 1;
        if res >= prev {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        }
    }
    if res >= tol && used < cap {
        used += evaluate_jacobi(stencil, beta, strides, x, tol, cap - used);
    }
    used
}

/// Policy iteration: alternate frozen-policy evaluation (Jacobi sweeps of the
/// linear fixed point, warm started) with greedy improvement.
///
/// Converges to the same fixed point as [`value_iteration`]; the residual is
/// the Bellman residual `‖T V − V‖_∞` at each improvement step.
pub fn policy_iteration(v0: ValueGrid, problem: &BinaryProblem, opts: &SolveOptions) -> Result<Solution> {
    problem.check_grid(&v0)?;
    let axis = v0.axis;
    let strides = axis.strides();
    let beta = problem.cost.beta();
    let n = v0.values.len();

    let mut grid = v0;
    let mut improved = vec![0.0; n];
    let mut policy = vec![0.0; n];
    let mut log = Vec::new();
    let mut eval_sweeps = 0;

    problem.sweep(&axis, &grid.values, &mut improved, &mut policy);
    let mut residual = sup_distance(&improved, &grid.values);
    log.push(residual);

    while residual >= opts.tol && log.len() < opts.max_iter {
        let stencil = PolicyStencil::build(problem, &axis, &policy);
        std::mem::swap(&mut grid.values, &mut improved);
        eval_sweeps += evaluate(&stencil, beta, strides, &mut grid.values, opts);
        problem.sweep(&axis, &grid.values, &mut improved, &mut policy);
        residual = sup_distance(&improved, &grid.values);
        log.push(residual);
    }

    grid.values = improved;
    grid.residual = residual;
    Ok(Solution {
        grid,
        policy: PolicyTable { axis, controls: policy },
        report: SolveReport {
            method: SolveMethod::PolicyIter,
            iterations: log.len(),
            eval_sweeps,
            residual,
            tol: opts.tol,
            converged: residual < opts.tol,
            residual_log: log,
        },
    })
}

/// How a converged value grid is turned into controls at arbitrary states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Re-solve the Bellman argmin at the query state.
    Argmin,
    /// Interpolate the nodal argmin table. Linear in the nodal controls, which
    /// lets the particle engine average it over follower pairs exactly.
    PolicyTable,
}

/// Feedback map `F(x1, x2, y1, y2)` backed by a converged value grid.
#[derive(Debug, Clone)]
pub struct GridFeedback {
    pub problem: BinaryProblem,
    pub grid: ValueGrid,
    pub mode: FeedbackMode,
    policy: PolicyTable,
}

impl GridFeedback {
    /// Builds the nodal policy table with one greedy sweep over `grid`.
    pub fn new(problem: BinaryProblem, grid: ValueGrid, mode: FeedbackMode) -> Result<Self> {
        problem.check_grid(&grid)?;
        let mut values = vec![0.0; grid.values.len()];
        let mut controls = vec![0.0; grid.values.len()];
        problem.sweep(&grid.axis, &grid.values, &mut values, &mut controls);
        Ok(GridFeedback {
            problem,
            policy: PolicyTable {
                axis: grid.axis,
                controls,
            },
            grid,
            mode,
        })
    }

    pub fn control(&self, s: &BinaryState) -> f64 {
        match self.mode {
            FeedbackMode::Argmin => self.problem.feedback(&self.grid, s),
            FeedbackMode::PolicyTable => self.policy.control(s),
        }
    }

    pub fn policy(&self) -> &PolicyTable {
        &self.policy
    }
}
