//! Solve the Test-1 binary problem on a coarse grid with value iteration and
//! policy iteration and compare the two.

use kincontrol::binary::{
    policy_iteration, value_iteration, BinaryProblem, BinaryState, CostParams, GridAxis, SolveOptions, ValueGrid,
};
use kincontrol::kernels::{KernelSpec, KernelTriple};

fn main() -> kincontrol::Result<()> {
    let nodes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(9);
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
    let problem = BinaryProblem::new(KernelTriple::uniform(KernelSpec::Constant { c: 1.0 }), cost, 41)?;
    let axis = GridAxis::unit(nodes)?;
    let opts = SolveOptions {
        tol: 1e-6,
        ..Default::default()
    };

    let v0 = ValueGrid::zeros(axis, cost, problem.kernels, 41);
    let vi = value_iteration(v0.clone(), &problem, &opts)?.require_converged()?;
    let pi = policy_iteration(v0, &problem, &opts)?.require_converged()?;
    println!(
        "value iteration : {} sweeps, residual {:.2e}",
        vi.report.iterations, vi.report.residual
    );
    println!(
        "policy iteration: {} improvements, {} evaluation sweeps, residual {:.2e}",
        pi.report.iterations, pi.report.eval_sweeps, pi.report.residual
    );
    println!("sup |V_vi - V_pi| = {:.2e}", vi.grid.sup_distance(&pi.grid));
    for s in [
        BinaryState::consensus(-0.5),
        BinaryState::new(0.0, 0.0, 0.5, 0.5),
        BinaryState::new(-0.8, 0.3, 0.6, -0.2),
    ] {
        println!(
            "V{:?} = {:.5}, u* = {:+.3}",
            s.to_array(),
            pi.grid.interpolate(&s),
            problem.feedback(&pi.grid, &s)
        );
    }
    Ok(())
}
