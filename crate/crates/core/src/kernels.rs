//! Binary interaction kernels `K(x, y)`.
//!
//! Kernels are closed descriptors rather than callbacks, so that a run
//! configuration can serialize them and the offline DP solver and the particle
//! engine are guaranteed to evaluate the same rule.

use serde::{Deserialize, Serialize};

use crate::error::FieldError;

/// Interaction kernel descriptor.
///
/// Serialized as a tagged record, e.g. `{ kind = "bounded_confidence", r = 0.3 }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `K ≡ 0`.
    Zero,
    /// `K ≡ c`.
    Constant { c: f64 },
    /// Indicator of `|x − y| ≤ r`.
    BoundedConfidence { r: f64 },
    /// `s·(1 − x²)`, depending only on the evaluating agent's own state.
    Parabolic { s: f64 },
}

impl KernelSpec {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            KernelSpec::Zero => 0.0,
            KernelSpec::Constant { c } => c,
            KernelSpec::BoundedConfidence { r } => {
                if (x - y).abs() <= r {
                    1.0
                } else {
                    0.0
                }
            }
            KernelSpec::Parabolic { s } => s * (1.0 - x * x),
        }
    }

    /// `K(x, y)·(y − x)`: the velocity induced on an agent at `x` by one at `y`.
    #[inline]
    pub fn velocity(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y) * (y - x)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, KernelSpec::Constant { .. })
    }

    /// Constant rate if the kernel is position independent (`Zero` counts as 0).
    pub fn constant_rate(&self) -> Option<f64> {
        match *self {
            KernelSpec::Zero => Some(0.0),
            KernelSpec::Constant { c } => Some(c),
            _ => None,
        }
    }

    pub fn validate(&self, field: &str) -> Vec<FieldError> {
        let mut errs = Vec::new();
        match *self {
            KernelSpec::Zero => {}
            KernelSpec::Constant { c } => {
                if !c.is_finite() {
                    errs.push(FieldError::new(format!("{field}.c"), "must be finite"));
                }
            }
            KernelSpec::BoundedConfidence { r } => {
                if !(r.is_finite() && r > 0.0) {
                    errs.push(FieldError::new(
                        format!("{field}.r"),
                        format!("confidence radius must be > 0, got {r}"),
                    ));
                }
            }
            KernelSpec::Parabolic { s } => {
                if s != 1.0 && s != -1.0 {
                    errs.push(FieldError::new(
                        format!("{field}.s"),
                        format!("sign must be +1 or -1, got {s}"),
                    ));
                }
            }
        }
        errs
    }

    /// Stable byte encoding used by the value-grid header and cache digests.
    pub(crate) fn encode(&self) -> (u8, f64) {
        match *self {
            KernelSpec::Zero => (0, 0.0),
            KernelSpec::Constant { c } => (1, c),
            KernelSpec::BoundedConfidence { r } => (2, r),
            KernelSpec::Parabolic { s } => (3, s),
        }
    }

    pub(crate) fn decode(tag: u8, param: f64) -> Option<Self> {
        Some(match tag {
            0 => KernelSpec::Zero,
            1 => KernelSpec::Constant { c: param },
            2 => KernelSpec::BoundedConfidence { r: param },
            3 => KernelSpec::Parabolic { s: param },
            _ => return None,
        })
    }
}

/// Follower–follower, follower–leader and leader–leader kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTriple {
    pub ff: KernelSpec,
    pub fl: KernelSpec,
    pub ll: KernelSpec,
}

impl KernelTriple {
    pub fn new(ff: KernelSpec, fl: KernelSpec, ll: KernelSpec) -> Self {
        KernelTriple { ff, fl, ll }
    }

    pub fn uniform(spec: KernelSpec) -> Self {
        KernelTriple::new(spec, spec, spec)
    }

    /// All three kernels position independent, i.e. the dynamics are linear.
    pub fn is_linear(&self) -> bool {
        [self.ff, self.fl, self.ll].iter().all(|k| k.constant_rate().is_some())
    }

    pub fn validate(&self, field: &str) -> Vec<FieldError> {
        let mut errs = self.ff.validate(&format!("{field}.ff"));
        errs.extend(self.fl.validate(&format!("{field}.fl")));
        errs.extend(self.ll.validate(&format!("{field}.ll")));
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_kernel() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            Just(KernelSpec::Zero),
            (-5.0..5.0f64).prop_map(|c| KernelSpec::Constant { c }),
            (0.01..2.0f64).prop_map(|r| KernelSpec::BoundedConfidence { r }),
            prop_oneof![Just(1.0), Just(-1.0)].prop_map(|s| KernelSpec::Parabolic { s }),
        ]
    }

    #[test]
    fn bounded_confidence_indicator() {
        let k = KernelSpec::BoundedConfidence { r: 0.3 };
        assert_eq!(k.eval(0.0, 0.2), 1.0);
        assert_eq!(k.eval(0.0, 0.5), 0.0);
    }

    #[test]
    fn parabolic_vanishes_at_boundary() {
        let k = KernelSpec::Parabolic { s: -1.0 };
        assert_eq!(k.eval(1.0, 0.7), 0.0);
        assert_eq!(k.eval(-1.0, 0.7), 0.0);
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(KernelSpec::Constant { c: 1.0 }.velocity(0.0, 1.0), 1.0);
        assert_eq!(KernelSpec::Parabolic { s: 1.0 }.velocity(0.5, -0.5), -0.75);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(!KernelSpec::BoundedConfidence { r: 0.0 }.validate("k").is_empty());
        assert!(!KernelSpec::Parabolic { s: 0.5 }.validate("k").is_empty());
        assert!(KernelSpec::Parabolic { s: -1.0 }.validate("k").is_empty());
    }

    #[test]
    fn tagged_record_format() {
        let k: KernelSpec = toml::from_str("kind = \"bounded_confidence\"\nr = 0.8").unwrap();
        assert_eq!(k, KernelSpec::BoundedConfidence { r: 0.8 });
        let z: KernelSpec = toml::from_str("kind = \"zero\"").unwrap();
        assert_eq!(z, KernelSpec::Zero);
        assert!(toml::from_str::<KernelSpec>("kind = \"cubic\"").is_err());
    }

    proptest! {
        #[test]
        fn no_velocity_at_zero_displacement(k in any_kernel(), x in -2.0..2.0f64) {
            prop_assert_eq!(k.velocity(x, x), 0.0);
        }

        #[test]
        fn bounded_confidence_is_binary(r in 0.01..2.0f64, x in -2.0..2.0f64, y in -2.0..2.0f64) {
            let v = KernelSpec::BoundedConfidence { r }.eval(x, y);
            prop_assert!(v == 0.0 || v == 1.0);
        }

        #[test]
        fn parabolic_bounded_on_domain(x in -1.0..=1.0f64, y in -3.0..3.0f64, neg in any::<bool>()) {
            let s = if neg { -1.0 } else { 1.0 };
            let k = KernelSpec::Parabolic { s };
            prop_assert!(k.eval(x, y).abs() <= 1.0);
        }

        #[test]
        fn encoding_roundtrips(k in any_kernel()) {
            let (tag, p) = k.encode();
            prop_assert_eq!(KernelSpec::decode(tag, p), Some(k));
        }
    }
}
