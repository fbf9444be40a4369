//! One step of the two-population particle scheme.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::ControlSource;
use crate::error::{Error, Result};
use crate::kernels::KernelTriple;

use super::phi::PhiField;
use super::{
    ff_collision, fl_collision, ll_collision, stochastic_round, CollisionRule, ParticleEnsemble, ScalingParams,
};

/// Selected samples per partner stream. Fixed, so results do not depend on
/// the number of worker threads.
const CHUNK: usize = 2048;

/// Buffers reused across steps.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    perm_f: Vec<usize>,
    perm_l: Vec<usize>,
    snap_f: Vec<f64>,
    snap_l: Vec<f64>,
    updates: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, e: &ParticleEnsemble) {
        if self.perm_f.len() != e.followers.len() {
            self.perm_f = (0..e.followers.len()).collect();
        }
        if self.perm_l.len() != e.leaders.len() {
            self.perm_l = (0..e.leaders.len()).collect();
        }
        self.snap_f.clear();
        self.snap_f.extend_from_slice(&e.followers);
        self.snap_l.clear();
        self.snap_l.extend_from_slice(&e.leaders);
    }
}

/// Collision counts and control statistics of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub n_ff: usize,
    pub n_fl: usize,
    pub n_ll: usize,
    /// Sum of `φ` over the leader collisions.
    pub phi_sum: f64,
    /// Sum of `φ²` over the leader collisions.
    pub phi_sq_sum: f64,
    /// Mean leader displacement due to control per unit time,
    /// `Σ 2αφ / (M_s·δt)`.
    pub control_drift: f64,
}

impl StepStats {
    /// Mean of `φ²` over the leader collisions (0 without collisions).
    pub fn mean_phi_sq(&self) -> f64 {
        if self.n_ll == 0 {
            0.0
        } else {
            self.phi_sq_sum / self.n_ll as f64
        }
    }
}

/// Move the first `k` entries of `perm` to a uniform random `k`-subset.
fn partial_shuffle(perm: &mut [usize], k: usize, rng: &mut impl Rng) {
    let n = perm.len();
    for i in 0..k {
        let j = rng.random_range(i..n);
        perm.swap(i, j);
    }
}

/// Compute `f(idx, rng)` for each selected index in parallel, with one
/// counter-based stream per chunk of the selection.
fn chunked<T, F>(selected: &[usize], seed: u64, out: &mut Vec<T>, f: F)
where
    T: Send + Default + Clone,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    out.clear();
    out.resize(selected.len(), T::default());
    out.par_chunks_mut(CHUNK)
        .zip(selected.par_chunks(CHUNK))
        .enumerate()
        .for_each(|(c, (dst, idx))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            for (d, &i) in dst.iter_mut().zip(idx) {
                *d = f(i, &mut rng);
            }
        });
}

/// Partner for each selected sample under the symmetric rule: consecutive
/// entries collide with each other. An unpaired last sample gets a partner
/// drawn with repetition from `0..n`.
fn pair_partners(selected: &[usize], seed: u64, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(selected.len());
    for pair in selected.chunks(2) {
        match *pair {
            [i, j] => {
                out.push(j);
                out.push(i);
            }
            [_] => out.push(ChaCha8Rng::seed_from_u64(seed).random_range(0..n)),
            _ => unreachable!(),
        }
    }
    out
}

fn partners(rule: CollisionRule, selected: &[usize], seed: u64, n: usize, out: &mut Vec<usize>) {
    match rule {
        CollisionRule::OneSided => chunked(selected, seed, out, |_, r| r.random_range(0..n)),
        CollisionRule::Symmetric => *out = pair_partners(selected, seed, n),
    }
}

/// Stochastic rounding of `a` and `b` driven by one uniform `U`: `a` rounds
/// up when `U < frac(a)`, `b` when `1 − U < frac(b)`. Each marginal is the
/// usual unbiased rounding, and `a + b ≤ n` with `n` integral implies the
/// rounded counts sum to at most `n`.
pub(crate) fn coupled_round(a: f64, b: f64, rng: &mut impl Rng) -> (usize, usize) {
    let u: f64 = rng.random();
    let (fa, fb) = (a.floor(), b.floor());
    let up_a = u < a - fa;
    let up_b = 1.0 - u < b - fb;
    (fa as usize + usize::from(up_a), fb as usize + usize::from(up_b))
}

/// Advance the ensemble by one time step `δt`.
///
/// The follower counts `N_c^FF`, `N_c^FL` are rounded jointly (see
/// [`coupled_round`]) so that a step at the CFL limit never asks for more
/// collisions than there are samples.
pub fn tpbb_step(
    e: &mut ParticleEnsemble,
    sp: &ScalingParams,
    k: &KernelTriple,
    control: &ControlSource,
    ws: &mut Workspace,
    rng: &mut impl Rng,
) -> Result<StepStats> {
    let n_s = e.followers.len();
    let m_s = e.leaders.len();
    let alpha = sp.alpha();
    let x_ff = sp.dt * e.rho_f / sp.eps * n_s as f64;
    let x_fl = sp.dt * e.rho_l / sp.eps * n_s as f64;
    let x_ll = sp.dt * e.rho_l / sp.eps * m_s as f64;
    let infeasible = || Error::InfeasibleCounts {
        ff: x_ff.ceil() as usize,
        fl: x_fl.ceil() as usize,
        ll: x_ll.ceil() as usize,
        followers: n_s,
        leaders: m_s,
    };
    if x_ff + x_fl > n_s as f64 * (1.0 + 1e-12) || x_ll > m_s as f64 * (1.0 + 1e-12) {
        return Err(infeasible());
    }
    let (n_ff, n_fl) = coupled_round(x_ff, x_fl, rng);
    let n_ll = stochastic_round(x_ll, rng);
    if n_ff + n_fl > n_s || n_ll > m_s {
        return Err(Error::InfeasibleCounts {
            ff: n_ff,
            fl: n_fl,
            ll: n_ll,
            followers: n_s,
            leaders: m_s,
        });
    }
    if n_fl > 0 && m_s == 0 {
        return Err(Error::EmptySampleSet);
    }
    ws.prepare(e);

    // Followers.
    partial_shuffle(&mut ws.perm_f, n_ff + n_fl, rng);
    let seed_ff: u64 = rng.random();
    let seed_fl: u64 = rng.random();
    let (sel_ff, rest) = ws.perm_f.split_at(n_ff);
    let sel_fl = &rest[..n_fl];
    let snap_f = &ws.snap_f;
    let snap_l = &ws.snap_l;

    let mut partner = Vec::new();
    partners(sp.collisions, sel_ff, seed_ff, n_s, &mut partner);
    ws.updates.clear();
    ws.updates.extend(
        sel_ff
            .iter()
            .zip(&partner)
            .map(|(&i, &r)| ff_collision(snap_f[i], snap_f[r], alpha, &k.ff)),
    );
    scatter(&mut e.followers, sel_ff, &ws.updates);

    // Follower-leader collisions leave the leader untouched, so they are
    // one-sided under either rule.
    chunked(sel_fl, seed_fl, &mut partner, |_, r| r.random_range(0..m_s));
    ws.updates.clear();
    ws.updates.extend(
        sel_fl
            .iter()
            .zip(&partner)
            .map(|(&i, &r)| fl_collision(snap_f[i], snap_l[r], alpha, &k.fl)),
    );
    scatter(&mut e.followers, sel_fl, &ws.updates);

    // Leaders; the control samples come from the beginning-of-step followers.
    let field = PhiField::draw(control, snap_f, sp.sigma_s, sp.phi_estimator, rng)?;
    partial_shuffle(&mut ws.perm_l, n_ll, rng);
    let seed_ll: u64 = rng.random();
    let sel_ll = &ws.perm_l[..n_ll];
    partners(sp.collisions, sel_ll, seed_ll, m_s, &mut partner);

    let mut phis = vec![0.0; n_ll];
    if !field.is_zero() {
        phis.par_iter_mut()
            .zip(sel_ll.par_iter().zip(partner.par_iter()))
            .for_each(|(p, (&i, &r))| *p = field.phi(snap_l[i], snap_l[r]));
    }
    ws.updates.clear();
    ws.updates.extend(
        sel_ll
            .iter()
            .zip(&partner)
            .zip(&phis)
            .map(|((&i, &r), &phi)| ll_collision(snap_l[i], snap_l[r], alpha, &k.ll, phi)),
    );
    scatter(&mut e.leaders, sel_ll, &ws.updates);

    let phi_sum: f64 = phis.iter().sum();
    let phi_sq_sum: f64 = phis.iter().map(|p| p * p).sum();
    e.t += sp.dt;
    Ok(StepStats {
        n_ff,
        n_fl,
        n_ll,
        phi_sum,
        phi_sq_sum,
        control_drift: if m_s == 0 {
            0.0
        } else {
            2.0 * alpha * phi_sum / (m_s as f64 * sp.dt)
        },
    })
}

fn scatter(target: &mut [f64], selected: &[usize], values: &[f64]) {
    for (&i, &v) in selected.iter().zip(values) {
        target[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsmc::{PhiEstimatorKind, Populations};
    use crate::kernels::KernelSpec;
    use proptest::prelude::*;

    fn scaling(dt: f64) -> ScalingParams {
        ScalingParams {
            eps: 0.01,
            dt,
            sigma_s: 8,
            t_final: 1.0,
            phi_estimator: PhiEstimatorKind::Full,
            collisions: CollisionRule::OneSided,
        }
    }

    fn ensemble(seed: u64, n: usize, m: usize) -> (ParticleEnsemble, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Populations {
            rho_f: 1.0,
            rho_l: 0.5,
            n_followers: n,
            n_leaders: m,
            followers_init: [-1.0, 1.0],
            leaders_init: [0.15, 0.85],
        };
        let e = ParticleEnsemble::sample(&pop, &mut rng).unwrap();
        (e, rng)
    }

    #[test]
    fn zero_rates_leave_samples_untouched() {
        let (mut e, mut rng) = ensemble(1, 500, 200);
        let before = e.clone();
        let k = KernelTriple::uniform(KernelSpec::Constant { c: 1.0 });
        let st = tpbb_step(
            &mut e,
            &scaling(1e-30),
            &k,
            &ControlSource::None,
            &mut Workspace::new(),
            &mut rng,
        )
        .unwrap();
        assert_eq!((st.n_ff, st.n_fl, st.n_ll), (0, 0, 0));
        assert_eq!(e.followers, before.followers);
        assert_eq!(e.leaders, before.leaders);
        assert!(e.t > 0.0);
    }

    #[test]
    fn reference_step_counts() {
        let (mut e, mut rng) = ensemble(2, 3000, 1500);
        let k = KernelTriple::uniform(KernelSpec::Constant { c: 1.0 });
        let st = tpbb_step(
            &mut e,
            &scaling(2.0 / 3.0 * 1e-2),
            &k,
            &ControlSource::None,
            &mut Workspace::new(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(st.n_ff, 2000);
        assert_eq!(st.n_fl, 1000);
        assert_eq!(st.n_ll, 500);
    }

    #[test]
    fn coupled_rounding_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut sa, mut sb) = (0usize, 0usize);
        let n = 100_000;
        for _ in 0..n {
            let (a, b) = coupled_round(6666.0 + 2.0 / 3.0, 3333.0 + 1.0 / 3.0, &mut rng);
            assert!(a + b <= 10_000);
            sa += a;
            sb += b;
        }
        assert!((sa as f64 / n as f64 - (6666.0 + 2.0 / 3.0)).abs() < 0.005);
        assert!((sb as f64 / n as f64 - (3333.0 + 1.0 / 3.0)).abs() < 0.005);
    }

    #[test]
    fn infeasible_counts_are_reported() {
        let (mut e, mut rng) = ensemble(3, 100, 100);
        let k = KernelTriple::uniform(KernelSpec::Constant { c: 1.0 });
        let err = tpbb_step(
            &mut e,
            &scaling(0.02),
            &k,
            &ControlSource::None,
            &mut Workspace::new(),
            &mut rng,
        );
        assert!(matches!(err, Err(Error::InfeasibleCounts { .. })));
    }

    #[test]
    fn only_selected_samples_move() {
        let (mut e, mut rng) = ensemble(4, 1000, 400);
        let before = e.clone();
        let k = KernelTriple::uniform(KernelSpec::Constant { c: 1.0 });
        let st = tpbb_step(
            &mut e,
            &scaling(2e-3),
            &k,
            &ControlSource::None,
            &mut Workspace::new(),
            &mut rng,
        )
        .unwrap();
        let moved_f = e
            .followers
            .iter()
            .zip(&before.followers)
            .filter(|(a, b)| a != b)
            .count();
        let moved_l = e.leaders.iter().zip(&before.leaders).filter(|(a, b)| a != b).count();
        assert!(moved_f <= st.n_ff + st.n_fl);
        assert!(moved_l <= st.n_ll);
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let k = KernelTriple::uniform(KernelSpec::Constant { c: 1.0 });
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let (mut e, mut rng) = ensemble(5, 20_000, 10_000);
                let mut ws = Workspace::new();
                for _ in 0..3 {
                    tpbb_step(
                        &mut e,
                        &scaling(2.0 / 3.0 * 1e-2),
                        &k,
                        &ControlSource::None,
                        &mut ws,
                        &mut rng,
                    )
                    .unwrap();
                }
                e
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn symmetric_rule_conserves_pair_means_for_constant_kernels() {
        let (mut e, mut rng) = ensemble(6, 1000, 500);
        let mut sp = scaling(2.0 / 3.0 * 1e-2);
        sp.collisions = CollisionRule::Symmetric;
        let k = KernelTriple::new(
            KernelSpec::Constant { c: 1.0 },
            KernelSpec::Zero,
            KernelSpec::Constant { c: 1.0 },
        );
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mf, ml) = (mean(&e.followers), mean(&e.leaders));
        let st = tpbb_step(&mut e, &sp, &k, &ControlSource::None, &mut Workspace::new(), &mut rng).unwrap();
        // Pairwise exchanges preserve the sum whenever every selected sample is paired.
        if st.n_ff % 2 == 0 {
            assert!((mean(&e.followers) - mf).abs() < 1e-12);
        }
        if st.n_ll % 2 == 0 {
            assert!((mean(&e.leaders) - ml).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn counts_are_conserved(seed in 0u64..1000, n in 1usize..400, m in 1usize..200) {
            let (mut e, mut rng) = ensemble(seed, n, m);
            let k = KernelTriple::uniform(KernelSpec::BoundedConfidence { r: 0.3 });
            let mut ws = Workspace::new();
            for _ in 0..5 {
                tpbb_step(&mut e, &scaling(2.0 / 3.0 * 1e-2), &k, &ControlSource::None, &mut ws, &mut rng).unwrap();
                prop_assert_eq!(e.followers.len(), n);
                prop_assert_eq!(e.leaders.len(), m);
            }
        }

        #[test]
        fn uncontrolled_samples_stay_in_hull(seed in 0u64..1000, sym in any::<bool>()) {
            let (mut e, mut rng) = ensemble(seed, 300, 150);
            let all = |e: &ParticleEnsemble| e.followers.iter().chain(&e.leaders).cloned().collect::<Vec<_>>();
            let lo = all(&e).into_iter().fold(f64::INFINITY, f64::min);
            let hi = all(&e).into_iter().fold(f64::NEG_INFINITY, f64::max);
            let k = KernelTriple::new(
                KernelSpec::BoundedConfidence { r: 0.3 },
                KernelSpec::Constant { c: 1.0 },
                KernelSpec::Parabolic { s: 1.0 },
            );
            let mut sp = scaling(2.0 / 3.0 * 1e-2);
            if sym {
                sp.collisions = CollisionRule::Symmetric;
            }
            let mut ws = Workspace::new();
            for _ in 0..40 {
                tpbb_step(&mut e, &sp, &k, &ControlSource::None, &mut ws, &mut rng).unwrap();
            }
            prop_assert!(all(&e).iter().all(|v| *v >= lo && *v <= hi));
        }

        #[test]
        fn coupled_rounding_respects_the_total(a in 0.0f64..1000.0, seed in 0u64..1000) {
            let total = 1000.0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let (x, y) = coupled_round(a, total - a, &mut rng);
                prop_assert!(x + y <= 1000);
                prop_assert!(x == a.floor() as usize || x == a.ceil() as usize);
            }
        }
    }
}
