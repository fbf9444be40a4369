//! Controlling disagreement: both parabolic-kernel variants with grid
//! feedback. A coarse grid keeps the run short; pass the node count as the
//! first argument for a finer one.

use kincontrol::config::RunConfig;
use kincontrol::dsmc::run_tpbb;
use kincontrol::experiment::{build_control, record_options, setup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kincontrol::Result<()> {
    let nodes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(13);
    for name in ["test3a", "test3b"] {
        let mut cfg = RunConfig::preset(name)?;
        cfg.dp.nodes = nodes;
        cfg.dp.tol = 1e-5;
        let (control, dp) = build_control(&cfg)?;
        if let Some(dp) = dp {
            println!(
                "{name}: {} improvements, residual {:.2e}, {:.1}s",
                dp.iterations, dp.residual, dp.seconds
            );
        }
        let rec = run_tpbb(
            &setup(&cfg, control),
            &record_options(&cfg),
            &mut ChaCha8Rng::seed_from_u64(cfg.seed),
        )?;
        let last = rec.snapshots.len() - 1;
        for s in rec
            .snapshots
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 7 == 0 || *i == last)
            .map(|(_, s)| s)
        {
            let peak = s.surface.iter().map(|&(_, p)| p.abs()).fold(0.0, f64::max);
            println!(
                "  t = {:>4.2}: mean_F {:+.4}  mean_L {:+.4}  max |Phi| {:.3}",
                s.t, s.mean_f, s.mean_l, peak
            );
        }
    }
    Ok(())
}
