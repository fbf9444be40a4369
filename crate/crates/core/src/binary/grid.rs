use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, KernelTriple};

use super::{BinaryState, CostParams};

const MAGIC: &[u8; 8] = b"KCVGRID\0";
const VERSION: u32 = 1;

/// Uniform axis shared by all four coordinates of the binary state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub nodes: usize,
    pub lo: f64,
    pub hi: f64,
}

impl GridAxis {
    pub fn new(nodes: usize, lo: f64, hi: f64) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::validation(
                "dp.nodes",
                format!("need >= 2 nodes per axis, got {nodes}"),
            ));
        }
        if !(lo < hi) {
            return Err(Error::validation(
                "dp.domain",
                format!("need lo < hi, got [{lo}, {hi}]"),
            ));
        }
        Ok(GridAxis { nodes, lo, hi })
    }

    /// The default domain `[−1, 1]`.
    pub fn unit(nodes: usize) -> Result<Self> {
        GridAxis::new(nodes, -1.0, 1.0)
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i == self.nodes - 1 {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn len4(&self) -> usize {
        self.nodes.pow(4)
    }

    #[inline]
    pub fn strides(&self) -> [usize; 4] {
        let n = self.nodes;
        [n * n * n, n * n, n, 1]
    }

    /// Cell index and fractional offset after clamping `v` into the axis.
    #[inline]
    pub fn locate(&self, v: f64) -> (usize, f64) {
        let v = v.clamp(self.lo, self.hi);
        let t = (v - self.lo) / self.spacing();
        let i = (t.floor() as usize).min(self.nodes - 2);
        (i, (t - i as f64).clamp(0.0, 1.0))
    }

    /// Flat row-major index (x1 slowest).
    #[inline]
    pub fn flat(&self, idx: [usize; 4]) -> usize {
        let n = self.nodes;
        ((idx[0] * n + idx[1]) * n + idx[2]) * n + idx[3]
    }

    #[inline]
    pub fn unflatten(&self, mut flat: usize) -> [usize; 4] {
        let n = self.nodes;
        let i4 = flat % n;
        flat /= n;
        let i3 = flat % n;
        flat /= n;
        let i2 = flat % n;
        [flat / n, i2, i3, i4]
    }

    pub fn node_state(&self, flat: usize) -> BinaryState {
        let i = self.unflatten(flat);
        BinaryState::new(self.node(i[0]), self.node(i[1]), self.node(i[2]), self.node(i[3]))
    }

    /// Multilinear interpolation of nodal `values` at `s`, clamping `s` into
    /// the box first.
    pub fn interpolate(&self, values: &[f64], s: &BinaryState) -> f64 {
        let cell = Cell::locate(self, s);
        cell.apply(values, self.strides())
    }
}

/// Base node and per-axis fractional offsets of a point inside the grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    pub base: usize,
    pub frac: [f64; 4],
}

impl Cell {
    #[inline]
    pub fn locate(axis: &GridAxis, s: &BinaryState) -> Self {
        let (i1, f1) = axis.locate(s.x1);
        let (i2, f2) = axis.locate(s.x2);
        let (i3, f3) = axis.locate(s.y1);
        let (i4, f4) = axis.locate(s.y2);
        Cell {
            base: axis.flat([i1, i2, i3, i4]),
            frac: [f1, f2, f3, f4],
        }
    }

    /// Contract the follower axes first, then the leader axes.
    #[inline]
    pub fn apply(&self, values: &[f64], strides: [usize; 4]) -> f64 {
        let [f1, f2, f3, f4] = self.frac;
        let wx = [(1.0 - f1) * (1.0 - f2), (1.0 - f1) * f2, f1 * (1.0 - f2), f1 * f2];
        let xoff = [0, strides[1], strides[0], strides[0] + strides[1]];
        let mut y = [0.0; 4];
        let yoff = [0, strides[3], strides[2], strides[2] + strides[3]];
        for (yv, &yo) in y.iter_mut().zip(&yoff) {
            let b = self.base + yo;
            *yv = wx[0] * values[b + xoff[0]]
                + wx[1] * values[b + xoff[1]]
                + wx[2] * values[b + xoff[2]]
                + wx[3] * values[b + xoff[3]];
        }
        (1.0 - f3) * ((1.0 - f4) * y[0] + f4 * y[1]) + f3 * ((1.0 - f4) * y[2] + f4 * y[3])
    }
}

/// Value-function samples on the uniform grid over `Ω⁴`, together with the
/// problem data they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub axis: GridAxis,
    pub values: Vec<f64>,
    pub cost: CostParams,
    pub kernels: KernelTriple,
    pub n_controls: usize,
    /// Sup-norm residual of the last sweep (`NaN` if never solved).
    pub residual: f64,
}

impl ValueGrid {
    pub fn zeros(axis: GridAxis, cost: CostParams, kernels: KernelTriple, n_controls: usize) -> Self {
        ValueGrid {
            axis,
            values: vec![0.0; axis.len4()],
            cost,
            kernels,
            n_controls,
            residual: f64::NAN,
        }
    }

    pub fn from_fn(
        axis: GridAxis,
        cost: CostParams,
        kernels: KernelTriple,
        n_controls: usize,
        f: impl Fn(&BinaryState) -> f64,
    ) -> Self {
        let values = (0..axis.len4()).map(|i| f(&axis.node_state(i))).collect();
        ValueGrid {
            axis,
            values,
            cost,
            kernels,
            n_controls,
            residual: f64::NAN,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.axis.spacing()
    }

    pub fn at(&self, idx: [usize; 4]) -> f64 {
        self.values[self.axis.flat(idx)]
    }

    pub fn interpolate(&self, s: &BinaryState) -> f64 {
        self.axis.interpolate(&self.values, s)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup-norm distance to another grid on the same axis.
    pub fn sup_distance(&self, other: &ValueGrid) -> f64 {
        sup_distance(&self.values, &other.values)
    }

    /// Compatibility check against the problem a run is configured with.
    pub fn matches(
        &self,
        axis: &GridAxis,
        cost: &CostParams,
        kernels: &KernelTriple,
        n_controls: usize,
    ) -> Result<(), String> {
        if self.axis != *axis {
            return Err(format!("grid axis {:?} differs from configured {:?}", self.axis, axis));
        }
        if self.cost != *cost {
            return Err(format!(
                "grid cost parameters {:?} differ from configured {:?}",
                self.cost, cost
            ));
        }
        if self.kernels != *kernels {
            return Err(format!(
                "grid kernels {:?} differ from configured {:?}",
                self.kernels, kernels
            ));
        }
        if self.n_controls != n_controls {
            return Err(format!(
                "grid control count {} differs from configured {}",
                self.n_controls, n_controls
            ));
        }
        Ok(())
    }

    /// Header followed by the values as little-endian `f64`, x1 slowest.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for _ in 0..4 {
            w.write_all(&(self.axis.nodes as u32).to_le_bytes())?;
        }
        let c = &self.cost;
        for v in [self.axis.spacing(), self.axis.lo, self.axis.hi] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [c.a_f, c.a_l, c.gamma, c.lambda, c.x_ref, c.dt, c.u_min, c.u_max] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.n_controls as u32).to_le_bytes())?;
        for k in [self.kernels.ff, self.kernels.fl, self.kernels.ll] {
            let (tag, p) = k.encode();
            w.write_all(&[tag])?;
            w.write_all(&p.to_le_bytes())?;
        }
        w.write_all(&self.residual.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::persist(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::persist(path, e))
    }

    pub fn read_from(mut r: impl Read, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::GridFormat {
            path: path.to_path_buf(),
            reason,
        };
        let io = |e: std::io::Error| Error::GridFormat {
            path: path.to_path_buf(),
            reason: format!("truncated or unreadable: {e}"),
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("bad magic bytes".into()));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut counts = [0u32; 4];
        for c in &mut counts {
            *c = read_u32(&mut r).map_err(io)?;
        }
        if counts.iter().any(|&c| c != counts[0]) {
            return Err(bad(format!("non-uniform axis node counts {counts:?}")));
        }
        let h = read_f64(&mut r).map_err(io)?;
        let lo = read_f64(&mut r).map_err(io)?;
        let hi = read_f64(&mut r).map_err(io)?;
        let axis = GridAxis::new(counts[0] as usize, lo, hi).map_err(|e| bad(e.to_string()))?;
        if (axis.spacing() - h).abs() > 1e-12 * h.abs().max(1.0) {
            return Err(bad(format!("spacing {h} inconsistent with axis {axis:?}")));
        }
        let mut c = [0.0; 8];
        for v in &mut c {
            *v = read_f64(&mut r).map_err(io)?;
        }
        let cost = CostParams {
            a_f: c[0],
            a_l: c[1],
            gamma: c[2],
            lambda: c[3],
            x_ref: c[4],
            dt: c[5],
            u_min: c[6],
            u_max: c[7],
        };
        let n_controls = read_u32(&mut r).map_err(io)? as usize;
        let mut ks = [KernelSpec::Zero; 3];
        for k in &mut ks {
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(io)?;
            let p = read_f64(&mut r).map_err(io)?;
            *k = KernelSpec::decode(tag[0], p).ok_or_else(|| bad(format!("unknown kernel tag {}", tag[0])))?;
        }
        let residual = read_f64(&mut r).map_err(io)?;
        let len = axis.len4();
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes).map_err(io)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(bad("trailing bytes after value block".into()));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        Ok(ValueGrid {
            axis,
            values,
            cost,
            kernels: KernelTriple::new(ks[0], ks[1], ks[2]),
            n_controls,
            residual,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::GridFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        ValueGrid::read_from(BufReader::new(file), path)
    }
}

/// Nodal argmin controls; off-grid states are served by multilinear
/// interpolation of the table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub axis: GridAxis,
    pub controls: Vec<f64>,
}

impl PolicyTable {
    pub fn control(&self, s: &BinaryState) -> f64 {
        self.axis.interpolate(&self.controls, s)
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
