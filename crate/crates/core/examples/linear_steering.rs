//! Linear test: uncontrolled vs Riccati-controlled particle runs, with the
//! moment ODE as a reference for the mean opinions.

use kincontrol::config::{ControlChoice, RunConfig};
use kincontrol::diagnostics::{linear_moment_odes, moment_at};
use kincontrol::dsmc::run_tpbb;
use kincontrol::experiment::{build_control, record_options, setup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> kincontrol::Result<()> {
    let mut cfg = RunConfig::preset("test1")?;
    for choice in [ControlChoice::None, ControlChoice::Dp] {
        cfg.control = choice;
        let (control, _) = build_control(&cfg)?;
        let label = control.label();
        let rec = run_tpbb(
            &setup(&cfg, control),
            &record_options(&cfg),
            &mut ChaCha8Rng::seed_from_u64(cfg.seed),
        )?;
        let (mf0, ml0) = rec.initial_means;
        let dt = cfg.scaling.dt;
        let ode = linear_moment_odes(mf0, ml0, cfg.populations.rho_l, |t| rec.drift_at(t, dt), 2.5, dt / 4.0)?;
        println!("control = {label}");
        println!(
            "  {:>5} {:>10} {:>10} {:>10} {:>10}",
            "t", "mean_F", "ode_F", "mean_L", "ode_L"
        );
        for s in rec.snapshots.iter().step_by(3) {
            let m = moment_at(&ode, s.t).expect("nonempty trajectory");
            println!(
                "  {:>5.2} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                s.t, s.mean_f, m.m_f, s.mean_l, m.m_l
            );
        }
        println!(
            "  discounted cost {:.4}",
            rec.final_snapshot().map_or(0.0, |s| s.cost_accum)
        );
    }
    Ok(())
}
