//! Evaluate the interaction kernels and their velocity fields.

use kincontrol::kernels::KernelSpec;

fn main() {
    let kernels = [
        ("zero", KernelSpec::Zero),
        ("constant(1)", KernelSpec::Constant { c: 1.0 }),
        ("bounded_confidence(0.3)", KernelSpec::BoundedConfidence { r: 0.3 }),
        ("parabolic(+1)", KernelSpec::Parabolic { s: 1.0 }),
        ("parabolic(-1)", KernelSpec::Parabolic { s: -1.0 }),
    ];
    let pairs = [(0.0, 0.2), (0.0, 0.5), (0.5, -0.5), (0.9, 0.1)];
    println!("{:<26}{:>12}{:>12}{:>12}", "kernel", "(x, y)", "K(x, y)", "K(y - x)");
    for (name, k) in kernels {
        for (x, y) in pairs {
            println!(
                "{name:<26}{:>12}{:>12.4}{:>12.4}",
                format!("({x}, {y})"),
                k.eval(x, y),
                k.velocity(x, y)
            );
        }
    }
}
