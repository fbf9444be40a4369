//! Closed-form feedback for linear (constant-kernel) binary dynamics.
//!
//! With constant kernels the binary step is `z⁺ = A z + B u` in the shifted
//! state `z = s − x̄·𝟙`, and the stage cost `Δt·ℓ` is `zᵀQz + R u²`. The
//! discounted value is `zᵀPz` with
//!
//! ```text
//! P = Q + β AᵀPA − β² AᵀPB (R + β BᵀPB)⁻¹ BᵀPA
//! ```
//!
//! solved here by fixed-point iteration on the recursion.

use nalgebra::{Matrix4, RowVector4, Vector4};

use crate::error::{Error, Result};
use crate::kernels::KernelTriple;

use super::{BinaryState, CostParams};

const TOL: f64 = 1e-12;
const MAX_ITER: usize = 2_000_000;

/// `u(s) = clamp(G·(s − x̄·𝟙) + g, U)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiFeedback {
    pub gain: RowVector4<f64>,
    pub offset: f64,
    pub x_ref: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Value matrix of the unconstrained problem.
    pub value: Matrix4<f64>,
    pub iterations: usize,
}

impl RiccatiFeedback {
    /// The affine law before clamping.
    pub fn unclamped(&self, s: &BinaryState) -> f64 {
        (self.gain * self.shifted(s))[0] + self.offset
    }

    pub fn control(&self, s: &BinaryState) -> f64 {
        self.unclamped(s).clamp(self.u_min, self.u_max)
    }

    /// Unconstrained discounted value `zᵀPz`.
    pub fn value_at(&self, s: &BinaryState) -> f64 {
        let z = self.shifted(s);
        (z.transpose() * self.value * z)[0]
    }

    fn shifted(&self, s: &BinaryState) -> Vector4<f64> {
        Vector4::new(
            s.x1 - self.x_ref,
            s.x2 - self.x_ref,
            s.y1 - self.x_ref,
            s.y2 - self.x_ref,
        )
    }
}

/// System matrices `(A, B)` of the binary step for constant kernels.
pub fn linear_binary_system(p: &CostParams, k: &KernelTriple) -> Result<(Matrix4<f64>, Vector4<f64>)> {
    let (Some(cff), Some(cfl), Some(cll)) = (k.ff.constant_rate(), k.fl.constant_rate(), k.ll.constant_rate()) else {
        return Err(Error::validation(
            "dp.method",
            "Riccati feedback requires constant (or zero) kernels",
        ));
    };
    let h = p.dt / 2.0;
    #[rustfmt::skip]
    let a = Matrix4::new(
        1.0 - h * (cff + 2.0 * cfl), h * cff,                      h * cfl,       h * cfl,
        h * cff,                     1.0 - h * (cff + 2.0 * cfl),  h * cfl,       h * cfl,
        0.0,                         0.0,                          1.0 - h * cll, h * cll,
        0.0,                         0.0,                          h * cll,       1.0 - h * cll,
    );
    let b = Vector4::new(0.0, 0.0, p.dt, p.dt);
    Ok((a, b))
}

pub fn riccati_feedback(p: &CostParams, k: &KernelTriple) -> Result<RiccatiFeedback> {
    let (a, b) = linear_binary_system(p, k)?;
    let beta = p.beta();
    let q = Matrix4::from_diagonal(&Vector4::new(
        0.5 * p.a_f * p.dt,
        0.5 * p.a_f * p.dt,
        0.5 * p.a_l * p.dt,
        0.5 * p.a_l * p.dt,
    ));
    let r = p.gamma * p.dt;

    let mut pm = Matrix4::zeros();
    for it in 1..=MAX_ITER {
        let pb = pm * b;
        let denom = r + beta * (b.transpose() * pb)[0];
        let bpa = pb.transpose() * a;
        let gain = if denom > 0.0 {
            -(beta / denom) * bpa
        } else {
            RowVector4::zeros()
        };
        let closed = a + b * gain;
        let next = q + beta * closed.transpose() * pm * closed + gain.transpose() * r * gain;
        let next = 0.5 * (next + next.transpose());
        if !next.iter().all(|v| v.is_finite()) || next.amax() > 1e12 {
            return Err(Error::NoStabilizingSolution(format!(
                "value matrix diverged after {it} iterations (check dt against kernel magnitudes)"
            )));
        }
        let change = (next - pm).amax();
        pm = next;
        if change < TOL {
            return Ok(RiccatiFeedback {
                gain,
                offset: 0.0,
                x_ref: p.x_ref,
                u_min: p.u_min,
                u_max: p.u_max,
                value: pm,
                iterations: it,
            });
        }
    }
    Err(Error::NoStabilizingSolution(format!(
        "no fixed point within {MAX_ITER} iterations"
    )))
}
