//! Bounded-confidence followers without leader interaction: opinion clusters
//! form and stay apart.

use kincontrol::config::RunConfig;
use kincontrol::dsmc::run_tpbb;
use kincontrol::experiment::{build_control, record_options, setup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kincontrol::Result<()> {
    let cfg = RunConfig::preset("test2-noleaders")?;
    let (control, _) = build_control(&cfg)?;
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
        .filter(|(i, _)| i % 12 == 0 || *i == last)
        .map(|(_, s)| s)
    {
        let clusters: Vec<String> = s
            .followers
            .clusters()
            .iter()
            .map(|&(a, b)| {
                let h = &s.followers;
                format!(
                    "[{:.3}, {:.3}] mass {:.3}",
                    h.center(a) - h.dx / 2.0,
                    h.center(b) + h.dx / 2.0,
                    h.mass_within(h.center(a), h.center(b))
                )
            })
            .collect();
        println!("t = {:>5.2}: {}", s.t, clusters.join("  "));
    }
    Ok(())
}
