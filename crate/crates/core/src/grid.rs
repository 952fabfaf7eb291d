use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_POINTS: usize = 16;

/// Uniform radial mesh. Evolution grids start at `r = 1`; exterior meshes used
/// by the projection code start at the projection radius instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    r_min: f64,
    r_max: f64,
    npoints: usize,
    dr: f64,
}

impl RadialGrid {
    /// Grid on `[1, r_max]`.
    pub fn new(r_max: f64, npoints: usize) -> Result<Self> {
        Self::exterior(1.0, r_max, npoints)
    }

    /// Grid on `[1, r_max]` with spacing as close to `dr` as the node count allows.
    pub fn with_spacing(r_max: f64, dr: f64) -> Result<Self> {
        if !(dr > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {dr}")));
        }
        let intervals = ((r_max - 1.0) / dr).round().max(1.0) as usize;
        Self::new(r_max, intervals + 1)
    }

    /// Grid on `[1, 1 + (npoints - 1) dr]` with exactly the given spacing.
    pub fn from_spacing(npoints: usize, dr: f64) -> Result<Self> {
        if !(dr > 0.0) || !dr.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {dr}")));
        }
        let r_max = 1.0 + (npoints.saturating_sub(1)) as f64 * dr;
        let mut g = Self::exterior(1.0, r_max, npoints)?;
        g.dr = dr;
        Ok(g)
    }

    pub fn exterior(r_min: f64, r_max: f64, npoints: usize) -> Result<Self> {
        if !(r_min >= 1.0) {
            return Err(Error::InvalidGrid(format!("r_min must be >= 1, got {r_min}")));
        }
        if !(r_max > r_min) {
            return Err(Error::InvalidGrid(format!("r_max {r_max} must exceed r_min {r_min}")));
        }
        if npoints < MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_POINTS} points, got {npoints}"
            )));
        }
        let dr = (r_max - r_min) / (npoints - 1) as f64;
        Ok(Self { r_min, r_max, npoints, dr })
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn len(&self) -> usize {
        self.npoints
    }

    pub fn is_empty(&self) -> bool {
        self.npoints == 0
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn r(&self, i: usize) -> f64 {
        if i + 1 == self.npoints {
            self.r_max
        } else {
            self.r_min + i as f64 * self.dr
        }
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.npoints).map(|i| self.r(i)).collect()
    }

    /// Index of the first node with `r >= radius` (up to rounding).
    pub fn index_at_or_above(&self, radius: f64) -> usize {
        let x = (radius - self.r_min) / self.dr;
        let i = (x - 1e-9).ceil().max(0.0) as usize;
        i.min(self.npoints - 1)
    }

    /// Index of the last node with `r <= radius` (up to rounding).
    pub fn index_at_or_below(&self, radius: f64) -> usize {
        let x = (radius - self.r_min) / self.dr;
        let i = (x + 1e-9).floor().max(0.0) as usize;
        i.min(self.npoints - 1)
    }

    /// Sub-mesh of the nodes `from..=to`.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if to >= self.npoints || to < from + MIN_POINTS - 1 {
            return Err(Error::InvalidGrid(format!(
                "slice {from}..={to} of a {}-point grid is too short",
                self.npoints
            )));
        }
        Ok(Self {
            r_min: self.r(from),
            r_max: self.r(to),
            npoints: to - from + 1,
            dr: self.dr,
        })
    }

    /// Doubles the interval count, keeping every existing node.
    pub fn refined(&self) -> Self {
        let npoints = 2 * (self.npoints - 1) + 1;
        Self { npoints, dr: self.dr / 2.0, ..*self }
    }
}
