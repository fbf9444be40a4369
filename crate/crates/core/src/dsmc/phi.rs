//! Monte Carlo average of the binary feedback over follower pairs:
//!
//! ```text
//! φ(y_i, y_r) = (1/σ²) Σ_h Σ_k F(x_h, x_k, y_i, y_r)
//! ```
//!
//! When `F` is an interpolated policy table it is linear in the nodal
//! controls, so the double sum collapses onto a 2-D table over the leader
//! axes: with hat weights `w(x, i)` of the follower axis,
//!
//! ```text
//! φ(y1, y2) = Σ_j w(y1, j1) w(y2, j2) Σ_{i1,i2} C[i1, i2] F[i1, i2, j1, j2]
//! ```
//!
//! where `C` is the outer product of the mean hat weights (full double sum) or
//! the mean pair-weight matrix (subsampled pairs). This is the same number the
//! explicit sum produces, for a cost independent of `σ_s²`.
//!
//! The clamped affine Riccati law `clamp(a(x_h, x_k) + b(y_i, y_r))` is handled
//! by sorting the follower parts `a` once: the average is then a prefix-sum
//! lookup at the two clamping thresholds.

use rand::Rng;

use crate::binary::{BinaryState, FeedbackMode, GridAxis};
use crate::control::ControlSource;
use crate::error::{Error, Result};

use super::PhiEstimatorKind;

/// `φ(·, ·)` frozen for one time step.
#[derive(Debug, Clone)]
pub struct PhiField<'a> {
    inner: Inner<'a>,
}

#[derive(Debug, Clone)]
enum Inner<'a> {
    Zero,
    /// Aggregated leader-axis table.
    Table {
        axis: GridAxis,
        values: Vec<f64>,
    },
    /// Sorted follower parts of a clamped affine law with their prefix sums.
    Affine {
        parts: Vec<f64>,
        prefix: Vec<f64>,
        gain_y: [f64; 2],
        x_ref: f64,
        offset: f64,
        bounds: [f64; 2],
    },
    /// Explicit sum over all ordered pairs of `samples`.
    Full {
        source: &'a ControlSource,
        samples: Vec<f64>,
    },
    /// Explicit average over independent pairs.
    Pairs {
        source: &'a ControlSource,
        pairs: Vec<(f64, f64)>,
    },
}

impl<'a> PhiField<'a> {
    /// Draw the follower samples (with repetition) and freeze `φ`.
    ///
    /// For [`ControlSource::None`] nothing is drawn and `φ ≡ 0`.
    pub fn draw(
        source: &'a ControlSource,
        followers: &[f64],
        sigma_s: usize,
        kind: PhiEstimatorKind,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if source.is_none() {
            return Ok(PhiField { inner: Inner::Zero });
        }
        if followers.is_empty() {
            return Err(Error::EmptyFollowerSet);
        }
        let draws = match kind {
            PhiEstimatorKind::Full => sigma_s,
            PhiEstimatorKind::Subsampled => 2 * sigma_s,
        };
        let samples: Vec<f64> = (0..draws)
            .map(|_| followers[rng.random_range(0..followers.len())])
            .collect();
        Ok(PhiField::from_samples(source, samples, kind))
    }

    /// Freeze `φ` for given follower samples. For the subsampled estimator the
    /// samples are consumed as consecutive pairs.
    pub fn from_samples(source: &'a ControlSource, samples: Vec<f64>, kind: PhiEstimatorKind) -> Self {
        let inner = match source {
            ControlSource::None => Inner::Zero,
            ControlSource::Grid(g) if g.mode == FeedbackMode::PolicyTable => {
                let policy = g.policy();
                let weights = pair_weights(&policy.axis, &samples, kind);
                Inner::Table {
                    axis: policy.axis,
                    values: contract(&policy.axis, &policy.controls, &weights),
                }
            }
            ControlSource::Riccati(r) => {
                let g = r.gain;
                let part = |h: f64, k: f64| g[0] * (h - r.x_ref) + g[1] * (k - r.x_ref);
                let mut parts: Vec<f64> = match kind {
                    PhiEstimatorKind::Full => samples
                        .iter()
                        .flat_map(|&h| samples.iter().map(move |&k| part(h, k)))
                        .collect(),
                    PhiEstimatorKind::Subsampled => samples.chunks_exact(2).map(|p| part(p[0], p[1])).collect(),
                };
                parts.sort_by(f64::total_cmp);
                let mut prefix = Vec::with_capacity(parts.len() + 1);
                prefix.push(0.0);
                let mut acc = 0.0;
                for &a in &parts {
                    acc += a;
                    prefix.push(acc);
                }
                Inner::Affine {
                    parts,
                    prefix,
                    gain_y: [g[2], g[3]],
                    x_ref: r.x_ref,
                    offset: r.offset,
                    bounds: [r.u_min, r.u_max],
                }
            }
            _ => match kind {
                PhiEstimatorKind::Full => Inner::Full { source, samples },
                PhiEstimatorKind::Subsampled => Inner::Pairs {
                    source,
                    pairs: samples.chunks_exact(2).map(|p| (p[0], p[1])).collect(),
                },
            },
        };
        PhiField { inner }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.inner, Inner::Zero)
    }

    /// `φ(y_i, y_r)`: control for leader `y_i` colliding with `y_r`.
    pub fn phi(&self, y_i: f64, y_r: f64) -> f64 {
        match &self.inner {
            Inner::Zero => 0.0,
            Inner::Table { axis, values } => {
                let n = axis.nodes;
                let (a, fa) = axis.locate(y_i);
                let (b, fb) = axis.locate(y_r);
                let v = |a: usize, b: usize| values[a * n + b];
                (1.0 - fa) * ((1.0 - fb) * v(a, b) + fb * v(a, b + 1))
                    + fa * ((1.0 - fb) * v(a + 1, b) + fb * v(a + 1, b + 1))
            }
            Inner::Affine {
                parts,
                prefix,
                gain_y,
                x_ref,
                offset,
                bounds: [lo, hi],
            } => {
                let b = gain_y[0] * (y_i - x_ref) + gain_y[1] * (y_r - x_ref) + offset;
                let n = parts.len();
                let below = parts.partition_point(|&a| a + b < *lo);
                let inside = parts.partition_point(|&a| a + b <= *hi);
                let sum = below as f64 * lo
                    + (prefix[inside] - prefix[below])
                    + (inside - below) as f64 * b
                    + (n - inside) as f64 * hi;
                sum / n as f64
            }
            Inner::Full { source, samples } => {
                let mut sum = 0.0;
                for &xh in samples {
                    for &xk in samples {
                        sum += source.control(&BinaryState::new(xh, xk, y_i, y_r));
                    }
                }
                sum / (samples.len() * samples.len()) as f64
            }
            Inner::Pairs { source, pairs } => {
                let sum: f64 = pairs
                    .iter()
                    .map(|&(xh, xk)| source.control(&BinaryState::new(xh, xk, y_i, y_r)))
                    .sum();
                sum / pairs.len() as f64
            }
        }
    }
}

/// One-shot estimate: draw `σ_s` follower samples and evaluate `φ(y_i, y_r)`.
pub fn estimate_phi(
    followers: &[f64],
    y_i: f64,
    y_r: f64,
    sigma_s: usize,
    source: &ControlSource,
    rng: &mut impl Rng,
) -> Result<f64> {
    if followers.is_empty() {
        return Err(Error::EmptyFollowerSet);
    }
    let field = PhiField::draw(source, followers, sigma_s, PhiEstimatorKind::Full, rng)?;
    Ok(field.phi(y_i, y_r))
}

/// Dense `n × n` weight matrix `C[i1, i2]` over the follower axes.
fn pair_weights(axis: &GridAxis, samples: &[f64], kind: PhiEstimatorKind) -> Vec<f64> {
    let n = axis.nodes;
    let mut c = vec![0.0; n * n];
    match kind {
        PhiEstimatorKind::Full => {
            let mut w = vec![0.0; n];
            let inv = 1.0 / samples.len() as f64;
            for &x in samples {
                let (i, f) = axis.locate(x);
                w[i] += (1.0 - f) * inv;
                w[i + 1] += f * inv;
            }
            for (i1, &w1) in w.iter().enumerate() {
                if w1 != 0.0 {
                    for (i2, &w2) in w.iter().enumerate() {
                        c[i1 * n + i2] = w1 * w2;
                    }
                }
            }
        }
        PhiEstimatorKind::Subsampled => {
            let pairs = samples.len() / 2;
            let inv = 1.0 / pairs as f64;
            for p in samples.chunks_exact(2) {
                let (i, f) = axis.locate(p[0]);
                let (k, g) = axis.locate(p[1]);
                c[i * n + k] += (1.0 - f) * (1.0 - g) * inv;
                c[i * n + k + 1] += (1.0 - f) * g * inv;
                c[(i + 1) * n + k] += f * (1.0 - g) * inv;
                c[(i + 1) * n + k + 1] += f * g * inv;
            }
        }
    }
    c
}

/// `G[j1, j2] = Σ_{i1,i2} C[i1, i2]·F[i1, i2, j1, j2]`.
fn contract(axis: &GridAxis, table: &[f64], weights: &[f64]) -> Vec<f64> {
    let n2 = axis.nodes * axis.nodes;
    let mut out = vec![0.0; n2];
    for (ix, &c) in weights.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let block = &table[ix * n2..(ix + 1) * n2];
        for (o, &f) in out.iter_mut().zip(block) {
            *o += c * f;
        }
    }
    out
}
