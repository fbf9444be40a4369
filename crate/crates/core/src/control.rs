//! Where the leaders' control comes from at run time.

use std::sync::Arc;

use crate::binary::{BinaryState, GridFeedback, RiccatiFeedback};

#[derive(Debug, Clone, Default)]
pub enum ControlSource {
    /// Uncontrolled dynamics, `Φ ≡ 0`.
    #[default]
    None,
    /// Feedback extracted from a DP value grid.
    Grid(Arc<GridFeedback>),
    /// Clamped affine Riccati law (linear kernels only).
    Riccati(RiccatiFeedback),
}

impl ControlSource {
    pub fn is_none(&self) -> bool {
        matches!(self, ControlSource::None)
    }

    /// Binary feedback `F(x1, x2, y1, y2)`.
    #[inline]
    pub fn control(&self, s: &BinaryState) -> f64 {
        match self {
            ControlSource::None => 0.0,
            ControlSource::Grid(g) => g.control(s),
            ControlSource::Riccati(r) => r.control(s),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ControlSource::None => "none",
            ControlSource::Grid(_) => "grid",
            ControlSource::Riccati(_) => "riccati",
        }
    }
}

impl From<GridFeedback> for ControlSource {
    fn from(g: GridFeedback) -> Self {
        ControlSource::Grid(Arc::new(g))
    }
}

impl From<RiccatiFeedback> for ControlSource {
    fn from(r: RiccatiFeedback) -> Self {
        ControlSource::Riccati(r)
    }
}
