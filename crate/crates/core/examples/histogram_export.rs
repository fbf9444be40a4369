//! Run a preset end to end and write the CSV artifacts, the same way the CLI
//! does. The output directory defaults to a temporary location.

use kincontrol::config::RunConfig;
use kincontrol::experiment::run_experiment;

fn main() -> kincontrol::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "test1".into());
    let mut cfg = RunConfig::preset(&preset)?;
    cfg.output.dir = args
        .next()
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("kincontrol-{preset}")));
    cfg.output.cache_dir = Some(cfg.output.dir.join("dp-cache"));
    let out = run_experiment(&cfg)?;
    for s in &out.record.snapshots {
        let peak = s.followers.heights.iter().cloned().fold(0.0, f64::max);
        println!(
            "t = {:>6.3}  mean_F {:+.4}  mean_L {:+.4}  peak density_F {:.3}",
            s.t, s.mean_f, s.mean_l, peak
        );
    }
    for f in out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
