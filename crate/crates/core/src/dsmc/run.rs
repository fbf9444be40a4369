//! The full time loop with snapshot recording.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binary::CostParams;
use crate::control::ControlSource;
use crate::diagnostics::{histogram, mean_opinion, CostAccumulator, DensityHistogram};
use crate::error::{Error, Result};
use crate::kernels::KernelTriple;

use super::phi::PhiField;
use super::step::{tpbb_step, Workspace};
use super::{ParticleEnsemble, Populations, ScalingParams};

/// Everything the particle run needs besides recording options.
#[derive(Debug, Clone)]
pub struct TpbbSetup {
    pub kernels: KernelTriple,
    /// Used for cost accounting and the reference state only.
    pub cost: CostParams,
    pub scaling: ScalingParams,
    pub populations: Populations,
    pub control: ControlSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordOptions {
    /// Record a snapshot every `stride` steps (and always at the end).
    pub stride: usize,
    pub dx: f64,
    pub domain: [f64; 2],
    /// Points of the uniform `y`-grid of the control surface.
    pub surface_points: usize,
    /// Leader partners averaged over for the control surface.
    pub surface_leaders: usize,
}

impl Default for RecordOptions {
    fn default() -> Self {
        RecordOptions {
            stride: 25,
            dx: 0.025,
            domain: [-1.0, 1.0],
            surface_points: 81,
            surface_leaders: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub followers: DensityHistogram,
    pub leaders: DensityHistogram,
    pub mean_f: f64,
    pub mean_l: f64,
    /// `(y, Φ(y))` with `Φ(y) = ρ_L·avg_z φ(y, z)` over current leaders `z`.
    pub surface: Vec<(f64, f64)>,
    pub cost_accum: f64,
}

/// Per-step record; `t` is the time after the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub t: f64,
    pub n_ff: usize,
    pub n_fl: usize,
    pub n_ll: usize,
    pub n_followers: usize,
    pub n_leaders: usize,
    pub mean_phi: f64,
    pub control_drift: f64,
    pub mean_f: f64,
    pub mean_l: f64,
    pub cost_accum: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub snapshots: Vec<Snapshot>,
    pub trace: Vec<StepTrace>,
    pub initial_means: (f64, f64),
    pub final_state: ParticleEnsemble,
}

impl RunRecord {
    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    /// Mean control drift of the leaders at step `n` (piecewise constant).
    pub fn drift_at(&self, t: f64, dt: f64) -> f64 {
        if self.trace.is_empty() {
            return 0.0;
        }
        let n = ((t / dt).floor() as usize).min(self.trace.len() - 1);
        self.trace[n].control_drift
    }
}

/// Sample initial data and iterate [`tpbb_step`] `N_T` times.
pub fn run_tpbb(setup: &TpbbSetup, rec: &RecordOptions, rng: &mut impl Rng) -> Result<RunRecord> {
    match run_tpbb_partial(setup, rec, rng) {
        (Ok(r), None) => Ok(r),
        (_, Some(e)) | (Err(e), None) => Err(e),
    }
}

/// Like [`run_tpbb`], but a failing step still returns what was recorded up
/// to that point together with the error.
pub fn run_tpbb_partial(
    setup: &TpbbSetup,
    rec: &RecordOptions,
    rng: &mut impl Rng,
) -> (Result<RunRecord>, Option<Error>) {
    let sp = &setup.scaling;
    let Some(n_t) = sp.steps() else {
        return (
            Err(Error::validation("scaling.t_final", "t_final/dt is not an integer")),
            None,
        );
    };
    if rec.stride == 0 {
        return (Err(Error::validation("output.stride", "must be >= 1")), None);
    }
    let mut e = match ParticleEnsemble::sample(&setup.populations, rng) {
        Ok(e) => e,
        Err(err) => return (Err(err), None),
    };
    let mut diag = ChaCha8Rng::seed_from_u64(rng.random());
    let mut ws = Workspace::new();
    let mut acc = CostAccumulator::default();
    let initial_means = match (mean_opinion(&e.followers), mean_opinion(&e.leaders)) {
        (Ok(f), Ok(l)) => (f, l),
        (Err(err), _) | (_, Err(err)) => return (Err(err), None),
    };
    let mut record = RunRecord {
        snapshots: Vec::with_capacity(n_t / rec.stride + 2),
        trace: Vec::with_capacity(n_t),
        initial_means,
        final_state: e.clone(),
    };
    let snap =
        |e: &ParticleEnsemble, step: usize, cost: f64, diag: &mut ChaCha8Rng| snapshot(e, step, cost, setup, rec, diag);
    match snap(&e, 0, 0.0, &mut diag) {
        Ok(s) => record.snapshots.push(s),
        Err(err) => return (Err(err), None),
    }

    let mut failure = None;
    for n in 0..n_t {
        let (followers_before, leaders_before) = (e.followers.clone(), e.leaders.clone());
        let t_n = e.t;
        let stats = match tpbb_step(&mut e, sp, &setup.kernels, &setup.control, &mut ws, rng) {
            Ok(s) => s,
            Err(err) => {
                failure = Some(err);
                break;
            }
        };
        acc.add(
            &followers_before,
            &leaders_before,
            stats.mean_phi_sq(),
            t_n,
            sp.dt,
            &setup.cost,
        );
        // Pin the clock to the grid to avoid drift from repeated additions.
        e.t = (n + 1) as f64 * sp.dt;
        let mean_f = mean_opinion(&e.followers).unwrap_or(f64::NAN);
        let mean_l = mean_opinion(&e.leaders).unwrap_or(f64::NAN);
        record.trace.push(StepTrace {
            step: n + 1,
            t: e.t,
            n_ff: stats.n_ff,
            n_fl: stats.n_fl,
            n_ll: stats.n_ll,
            n_followers: e.followers.len(),
            n_leaders: e.leaders.len(),
            mean_phi: if stats.n_ll == 0 {
                0.0
            } else {
                stats.phi_sum / stats.n_ll as f64
            },
            control_drift: stats.control_drift,
            mean_f,
            mean_l,
            cost_accum: acc.total,
        });
        if (n + 1) % rec.stride == 0 || n + 1 == n_t {
            match snap(&e, n + 1, acc.total, &mut diag) {
                Ok(s) => record.snapshots.push(s),
                Err(err) => {
                    failure = Some(err);
                    break;
                }
            }
        }
    }
    record.final_state = e;
    (Ok(record), failure)
}

fn snapshot(
    e: &ParticleEnsemble,
    step: usize,
    cost_accum: f64,
    setup: &TpbbSetup,
    rec: &RecordOptions,
    diag: &mut ChaCha8Rng,
) -> Result<Snapshot> {
    let followers = histogram(&e.followers, rec.dx, e.rho_f, rec.domain)?;
    let leaders = histogram(&e.leaders, rec.dx, e.rho_l, rec.domain)?;
    let surface = control_surface(e, setup, rec, diag)?;
    Ok(Snapshot {
        step,
        t: e.t,
        followers,
        leaders,
        mean_f: mean_opinion(&e.followers)?,
        mean_l: mean_opinion(&e.leaders)?,
        surface,
        cost_accum,
    })
}

fn control_surface(
    e: &ParticleEnsemble,
    setup: &TpbbSetup,
    rec: &RecordOptions,
    diag: &mut ChaCha8Rng,
) -> Result<Vec<(f64, f64)>> {
    let [lo, hi] = rec.domain;
    let n = rec.surface_points;
    let ys: Vec<f64> = match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    };
    let sp = &setup.scaling;
    let field = PhiField::draw(&setup.control, &e.followers, sp.sigma_s, sp.phi_estimator, diag)?;
    if field.is_zero() || e.leaders.is_empty() {
        return Ok(ys.into_iter().map(|y| (y, 0.0)).collect());
    }
    let partners: Vec<f64> = if e.leaders.len() <= rec.surface_leaders {
        e.leaders.clone()
    } else {
        (0..rec.surface_leaders.max(1))
            .map(|_| e.leaders[diag.random_range(0..e.leaders.len())])
            .collect()
    };
    Ok(ys
        .into_iter()
        .map(|y| {
            let avg = partners.iter().map(|&z| field.phi(y, z)).sum::<f64>() / partners.len() as f64;
            (y, e.rho_l * avg)
        })
        .collect())
}
