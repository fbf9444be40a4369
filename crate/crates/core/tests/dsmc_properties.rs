//! Particle-scheme properties checked on full runs.

use kincontrol::config::{ControlChoice, RunConfig};
use kincontrol::diagnostics::histogram;
use kincontrol::dsmc::{run_tpbb, sample_initial, stochastic_round, RunRecord};
use kincontrol::experiment::{build_control, record_options, setup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(cfg: &RunConfig) -> RunRecord {
    let (control, _) = build_control(cfg).unwrap();
    run_tpbb(
        &setup(cfg, control),
        &record_options(cfg),
        &mut ChaCha8Rng::seed_from_u64(cfg.seed),
    )
    .unwrap()
}

#[test]
fn stochastic_round_mean_within_three_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let total: usize = (0..n).map(|_| stochastic_round(2.3, &mut rng)).sum();
    let mean = total as f64 / n as f64;
    assert!((mean - 2.3).abs() < 0.005, "{mean}");
}

#[test]
fn uniform_initial_mean_within_three_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs = sample_initial([0.0, 1.0], 100_000, &mut rng).unwrap();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!((mean - 0.5).abs() < 0.003, "{mean}");
    assert!(xs.iter().all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn uniform_histogram_is_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs = sample_initial([-1.0, 1.0], 100_000, &mut rng).unwrap();
    let h = histogram(&xs, 0.025, 1.0, [-1.0, 1.0]).unwrap();
    for (i, d) in h.heights.iter().enumerate().skip(1).take(h.bins() - 2) {
        assert!((d - 0.5).abs() < 0.05, "bin {i}: {d}");
    }
}

#[test]
fn sample_counts_never_change() {
    let cfg = RunConfig::preset("test2-noleaders").unwrap();
    let rec = run(&cfg);
    let (n, m) = (cfg.populations.n_followers, cfg.populations.n_leaders);
    assert_eq!(rec.trace.len(), cfg.scaling.steps().unwrap());
    assert!(rec.trace.iter().all(|s| s.n_followers == n && s.n_leaders == m));
    assert_eq!((rec.final_state.followers.len(), rec.final_state.leaders.len()), (n, m));
}

#[test]
fn uncontrolled_linear_leaders_keep_their_mean() {
    let mut cfg = RunConfig::preset("test1").unwrap();
    cfg.control = ControlChoice::None;
    let rec = run(&cfg);
    let last = rec.final_snapshot().unwrap();
    assert!((last.mean_l - rec.initial_means.1).abs() < 0.02);
    assert!(rec.trace.iter().all(|s| s.control_drift == 0.0));
}

#[test]
fn control_lowers_the_discounted_cost() {
    let mut cfg = RunConfig::preset("test1").unwrap();
    let controlled = run(&cfg).final_snapshot().unwrap().cost_accum;
    cfg.control = ControlChoice::None;
    let free = run(&cfg).final_snapshot().unwrap().cost_accum;
    assert!(controlled < free, "controlled {controlled}, uncontrolled {free}");
}

#[test]
fn controlled_leaders_move_toward_reference() {
    let mut cfg = RunConfig::preset("test1").unwrap();
    let on = run(&cfg);
    cfg.control = ControlChoice::None;
    let off = run(&cfg);
    let x_ref = cfg.cost.x_ref;
    let (a, b) = (on.final_snapshot().unwrap(), off.final_snapshot().unwrap());
    assert!((a.mean_l - x_ref).abs() < (b.mean_l - x_ref).abs());
    assert!((a.mean_f - x_ref).abs() < (b.mean_f - x_ref).abs());
    // Initial control pushes the leaders down, toward the reference.
    assert!(on.trace[0].control_drift < 0.0);
}
