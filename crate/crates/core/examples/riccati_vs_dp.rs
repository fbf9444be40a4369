//! Compare the closed-form Riccati feedback with the grid feedback for the
//! linear test problem.

use kincontrol::binary::{
    policy_iteration, riccati_feedback, BinaryProblem, BinaryState, CostParams, GridAxis, SolveOptions, ValueGrid,
};
use kincontrol::kernels::{KernelSpec, KernelTriple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> kincontrol::Result<()> {
    let nodes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(17);
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
    let kernels = KernelTriple::uniform(KernelSpec::Constant { c: 1.0 });
    let problem = BinaryProblem::new(kernels, cost, 41)?;
    let ric = riccati_feedback(&cost, &kernels)?;
    println!(
        "Riccati gain {:?} after {} iterations",
        ric.gain.as_slice(),
        ric.iterations
    );

    let grid = ValueGrid::zeros(GridAxis::unit(nodes)?, cost, kernels, 41);
    let sol = policy_iteration(grid, &problem, &SolveOptions::default())?.require_converged()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 100 {
        let s = BinaryState::new(
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.9..0.9),
        );
        let u = ric.unclamped(&s);
        if u.abs() >= 1.0 {
            continue;
        }
        worst = worst.max((problem.feedback(&sol.grid, &s) - u).abs());
        n += 1;
    }
    println!(
        "{nodes}^4 grid: max |F_dp - F_riccati| over 100 interior states = {worst:.4} (h = {:.4})",
        2.0 / (nodes - 1) as f64
    );
    Ok(())
}
