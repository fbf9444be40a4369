//! Finite-agent rollouts: the two-by-two system under Riccati feedback, whose
//! discounted cost reproduces the quadratic value, and a larger system whose
//! trajectory is written to CSV.

use kincontrol::binary::{riccati_feedback, BinaryState, CostParams};
use kincontrol::control::ControlSource;
use kincontrol::kernels::{KernelSpec, KernelTriple};
use kincontrol::microsim::{save_trajectory_csv, simulate_micro, FeedbackEval, MicroState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> kincontrol::Result<()> {
    let cost = CostParams {
        a_f: 1.0,
        a_l: 1.0,
        gamma: 1.0,
        lambda: 1.0,
        x_ref: -0.5,
        dt: 0.02,
        u_min: -1.0,
        u_max: 1.0,
    };
    let k = KernelTriple::uniform(KernelSpec::Constant { c: 1.0 });
    let ric = riccati_feedback(&cost, &k)?;
    let control = ControlSource::Riccati(ric);
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let s = BinaryState::new(-0.4, -0.6, -0.45, -0.3);
    let r = simulate_micro(
        &MicroState::from_binary(&s),
        &control,
        cost.dt,
        1000,
        &k,
        &cost,
        FeedbackEval::Subsample,
        &mut rng,
    );
    println!(
        "2x2 rollout cost {:.6}, quadratic value {:.6}",
        r.cost,
        ric.value_at(&s)
    );

    let x: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..10).map(|_| rng.random_range(0.15..0.85)).collect();
    let s0 = MicroState::new(x, y)?;
    for eval in [FeedbackEval::Subsample, FeedbackEval::Mean] {
        let r = simulate_micro(&s0, &control, cost.dt, 125, &k, &cost, eval, &mut rng);
        let last = r.states.last().expect("initial state present");
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "40x10 {eval:?}: cost {:.4}, mean_F {:+.4}, mean_L {:+.4} at t = {:.2}",
            r.cost,
            mean(&last.x),
            mean(&last.y),
            last.t
        );
        if eval == FeedbackEval::Subsample {
            let path = std::env::temp_dir().join("kincontrol_micro.csv");
            save_trajectory_csv(&path, &r)?;
            println!("trajectory written to {}", path.display());
        }
    }
    Ok(())
}
