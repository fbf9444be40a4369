//! Density reconstruction, moments, cost accumulation and the moment-ODE
//! reference for constant kernels.

use crate::binary::CostParams;
use crate::error::{Error, Result};

/// Piecewise-constant density on `[lo, hi]` with mass `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityHistogram {
    pub lo: f64,
    pub hi: f64,
    pub dx: f64,
    pub mass: f64,
    pub heights: Vec<f64>,
}

impl DensityHistogram {
    pub fn bins(&self) -> usize {
        self.heights.len()
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.dx
    }

    /// `Σ h·δx`.
    pub fn total_mass(&self) -> f64 {
        self.heights.iter().sum::<f64>() * self.dx
    }

    /// Mass in the bins whose centres lie in `[a, b]`.
    pub fn mass_within(&self, a: f64, b: f64) -> f64 {
        (0..self.bins())
            .filter(|&i| (a..=b).contains(&self.center(i)))
            .map(|i| self.heights[i] * self.dx)
            .sum()
    }

    /// Maximal runs of occupied bins, as `(first, last)` bin indices.
    pub fn clusters(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &h) in self.heights.iter().enumerate() {
            match (h > 0.0, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push((s, i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.bins() - 1));
        }
        out
    }
}

/// Bin `samples` on `[lo, hi]` with width `dx`, normalized to mass `rho`.
/// Samples outside the domain land in the nearest boundary bin.
pub fn histogram(samples: &[f64], dx: f64, rho: f64, domain: [f64; 2]) -> Result<DensityHistogram> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let [lo, hi] = domain;
    if !(dx > 0.0 && hi > lo && rho > 0.0) {
        return Err(Error::validation(
            "output.dx",
            format!("need dx > 0, hi > lo and rho > 0, got dx = {dx}, [{lo}, {hi}], rho = {rho}"),
        ));
    }
    let ratio = (hi - lo) / dx;
    let bins = ratio.round() as usize;
    if bins == 0 || (ratio - bins as f64).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::validation(
            "output.dx",
            format!("dx = {dx} does not divide the domain width {}", hi - lo),
        ));
    }
    let dx = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let i = ((x - lo) / dx).floor();
        let i = if i.is_nan() {
            0
        } else {
            i.clamp(0.0, (bins - 1) as f64) as usize
        };
        counts[i] += 1;
    }
    let scale = rho / (samples.len() as f64 * dx);
    Ok(DensityHistogram {
        lo,
        hi,
        dx,
        mass: rho,
        heights: counts.into_iter().map(|c| c as f64 * scale).collect(),
    })
}

pub fn mean_opinion(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Mean of `(v − x̄)²`.
fn mean_sq_dev(samples: &[f64], x_ref: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|v| (v - x_ref).powi(2)).sum::<f64>() / samples.len() as f64
}

/// Running discounted cost `Σ e^{−λt_n}·δt·L_n` of a particle run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostAccumulator {
    pub total: f64,
}

impl CostAccumulator {
    /// Add `e^{−λt}·δt·[a_F·avg_F (x−x̄)² + a_L·avg_L (y−x̄)² + γ·avg u²]`.
    pub fn add(&mut self, followers: &[f64], leaders: &[f64], mean_u_sq: f64, t: f64, dt: f64, p: &CostParams) -> f64 {
        let inc = (-p.lambda * t).exp()
            * dt
            * (p.a_f * mean_sq_dev(followers, p.x_ref) + p.a_l * mean_sq_dev(leaders, p.x_ref) + p.gamma * mean_u_sq);
        self.total += inc;
        inc
    }
}

/// Functional form of [`CostAccumulator::add`].
pub fn accumulate_cost(
    acc: f64,
    followers: &[f64],
    leaders: &[f64],
    mean_u_sq: f64,
    t: f64,
    dt: f64,
    p: &CostParams,
) -> f64 {
    let mut c = CostAccumulator { total: acc };
    c.add(followers, leaders, mean_u_sq, t, dt, p);
    c.total
}

/// One point of a mean trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPoint {
    pub t: f64,
    pub m_f: f64,
    pub m_l: f64,
}

/// RK4 integration of `m_F' = ρ_L (m_L − m_F)`, `m_L' = Φ̄(t)` on `[0, T]`.
///
/// The last step is shortened so the trajectory ends exactly at `T`.
pub fn linear_moment_odes(
    m_f0: f64,
    m_l0: f64,
    rho_l: f64,
    phi_bar: impl Fn(f64) -> f64,
    t_final: f64,
    dt_ode: f64,
) -> Result<Vec<MomentPoint>> {
    if !(dt_ode > 0.0) {
        return Err(Error::validation("dt_ode", format!("must be > 0, got {dt_ode}")));
    }
    let rhs = |t: f64, [f, l]: [f64; 2]| [rho_l * (l - f), phi_bar(t)];
    let mut t = 0.0;
    let mut y = [m_f0, m_l0];
    let mut out = vec![MomentPoint {
        t,
        m_f: y[0],
        m_l: y[1],
    }];
    while t < t_final * (1.0 - 1e-14) {
        let h = dt_ode.min(t_final - t);
        let k1 = rhs(t, y);
        let k2 = rhs(t + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = rhs(t + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = rhs(t + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        for i in 0..2 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
        out.push(MomentPoint {
            t,
            m_f: y[0],
            m_l: y[1],
        });
    }
    Ok(out)
}

/// Linear interpolation of a trajectory at time `t` (clamped to its range).
pub fn moment_at(traj: &[MomentPoint], t: f64) -> Option<MomentPoint> {
    let first = traj.first()?;
    if t <= first.t {
        return Some(*first);
    }
    let i = traj.partition_point(|p| p.t < t);
    if i >= traj.len() {
        return traj.last().copied();
    }
    let (a, b) = (traj[i - 1], traj[i]);
    let w = (t - a.t) / (b.t - a.t);
    Some(MomentPoint {
        t,
        m_f: a.m_f + w * (b.m_f - a.m_f),
        m_l: a.m_l + w * (b.m_l - a.m_l),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_bin_holds_all_mass() {
        let h = histogram(&[0.01, 0.011, 0.02], 0.025, 1.0, [-1.0, 1.0]).unwrap();
        assert_eq!(h.bins(), 80);
        assert_relative_eq!(h.heights[40], 1.0 / 0.025, max_relative = 1e-12);
        assert_eq!(h.heights.iter().filter(|v| **v > 0.0).count(), 1);
    }

    #[test]
    fn outside_samples_go_to_boundary_bins() {
        let h = histogram(&[-3.0, 2.0, 1.0], 0.5, 0.5, [-1.0, 1.0]).unwrap();
        assert!(h.heights[0] > 0.0 && h.heights[3] > 0.0);
        assert_relative_eq!(h.total_mass(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn uniform_samples_give_flat_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = histogram(&xs, 0.025, 1.0, [-1.0, 1.0]).unwrap();
        for &v in &h.heights[1..79] {
            assert!((v - 0.5).abs() < 0.05, "bin {v}");
        }
    }

    #[test]
    fn histogram_errors() {
        assert!(matches!(
            histogram(&[], 0.1, 1.0, [-1.0, 1.0]),
            Err(Error::EmptySampleSet)
        ));
        assert!(histogram(&[0.0], 0.3, 1.0, [-1.0, 1.0]).is_err());
    }

    #[test]
    fn clusters_are_found() {
        let h = histogram(&[-0.9, -0.85, 0.5, 0.52], 0.1, 1.0, [-1.0, 1.0]).unwrap();
        let c = h.clusters();
        assert_eq!(c.len(), 2);
        assert!(c[1].0 - c[0].1 > 3);
    }

    #[test]
    fn means() {
        assert_eq!(mean_opinion(&[0.3; 5]).unwrap(), 0.3);
        assert_eq!(mean_opinion(&[-1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(mean_opinion(&[0.0, 0.5, 1.0]).unwrap(), 0.5);
        assert!(matches!(mean_opinion(&[]), Err(Error::EmptySampleSet)));
    }

    fn cost() -> CostParams {
        CostParams {
            a_f: 1.0,
            a_l: 1.0,
            gamma: 1.0,
            lambda: 1.0,
            x_ref: -0.5,
            dt: 0.02,
            u_min: -1.0,
            u_max: 1.0,
        }
    }

    #[test]
    fn cost_increments() {
        let p = cost();
        assert_eq!(accumulate_cost(0.0, &[-0.5; 4], &[-0.5; 2], 0.0, 0.3, 0.01, &p), 0.0);
        let a = accumulate_cost(0.0, &[0.5], &[-0.5], 0.0, 0.0, 0.01, &p);
        assert_relative_eq!(a, 0.01);
        let b = accumulate_cost(0.0, &[0.5], &[-0.5], 0.0, 2.0, 0.01, &p);
        assert_relative_eq!(b / a, (-2.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn moment_closed_form() {
        let traj = linear_moment_odes(0.0, 0.5, 0.5, |_| 0.0, 2.5, 1e-3).unwrap();
        let end = traj.last().unwrap();
        assert_relative_eq!(end.t, 2.5, epsilon = 1e-12);
        assert_relative_eq!(end.m_f, 0.5 * (1.0 - (-1.25f64).exp()), epsilon = 1e-12);
        assert_eq!(end.m_l, 0.5);
        let mid = moment_at(&traj, 1.0).unwrap();
        assert_relative_eq!(mid.m_f, 0.5 * (1.0 - (-0.5f64).exp()), epsilon = 1e-6);
    }

    #[test]
    fn equal_means_stay_put() {
        let traj = linear_moment_odes(0.2, 0.2, 0.5, |_| 0.0, 1.0, 0.01).unwrap();
        assert!(traj.iter().all(|p| p.m_f == 0.2 && p.m_l == 0.2));
    }

    #[test]
    fn constant_control_moves_leader_mean_linearly() {
        let traj = linear_moment_odes(0.0, 0.0, 0.5, |_| -0.2, 2.0, 0.01).unwrap();
        assert_relative_eq!(traj.last().unwrap().m_l, -0.4, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn histogram_mass_is_exact(xs in prop::collection::vec(-2.0f64..2.0, 1..500), rho in 0.1f64..3.0) {
            let h = histogram(&xs, 0.025, rho, [-1.0, 1.0]).unwrap();
            prop_assert!((h.total_mass() - rho).abs() < 1e-12);
            prop_assert!(h.heights.iter().all(|v| *v >= 0.0));
        }
    }
}
