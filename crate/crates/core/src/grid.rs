//! Uniform periodic lattices and the physical constants shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic rectangular lattice in one to three dimensions.
///
/// Axes beyond `dims` have one point and unit extent so that indexing is
/// always three-dimensional. Points are stored row-major with the x axis
/// slowest. Coordinates run from `-extent/2` in steps of `spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: usize,
    points: [usize; 3],
    extent: [f64; 3],
    spacing: [f64; 3],
}

impl Grid {
    pub fn new(points: &[usize], extent: &[f64]) -> Result<Self> {
        let dims = points.len();
        if !(1..=3).contains(&dims) {
            return Err(Error::InvalidGrid(format!("{dims} dimensions (expected 1 to 3)")));
        }
        if extent.len() != dims {
            return Err(Error::InvalidGrid(format!(
                "{} extents for {dims} axes",
                extent.len()
            )));
        }
        let mut p = [1usize; 3];
        let mut e = [1.0f64; 3];
        let mut h = [1.0f64; 3];
        for k in 0..dims {
            if points[k] < 2 {
                return Err(Error::InvalidGrid(format!("axis {k} has {} points", points[k])));
            }
            if !(extent[k].is_finite() && extent[k] > 0.0) {
                return Err(Error::InvalidGrid(format!("axis {k} extent {}", extent[k])));
            }
            p[k] = points[k];
            e[k] = extent[k];
            h[k] = extent[k] / points[k] as f64;
        }
        Ok(Self { dims, points: p, extent: e, spacing: h })
    }

    pub fn line(points: usize, extent: f64) -> Result<Self> {
        Self::new(&[points], &[extent])
    }

    pub fn square(points: usize, extent: f64) -> Result<Self> {
        Self::new(&[points, points], &[extent, extent])
    }

    pub fn cube(points: usize, extent: f64) -> Result<Self> {
        Self::new(&[points; 3], &[extent; 3])
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Points per axis; unused axes report 1.
    pub fn points(&self) -> [usize; 3] {
        self.points
    }

    pub fn extent(&self) -> [f64; 3] {
        self.extent
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// All axes are periodic in this release.
    pub fn periodic(&self) -> [bool; 3] {
        [true; 3]
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dims].iter().product()
    }

    /// Largest spacing over the active axes.
    pub fn max_spacing(&self) -> f64 {
        self.spacing[..self.dims].iter().copied().fold(0.0, f64::max)
    }

    pub fn index(&self, i: [usize; 3]) -> usize {
        (i[0] * self.points[1] + i[1]) * self.points[2] + i[2]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.points[2];
        let rest = idx / self.points[2];
        [rest / self.points[1], rest % self.points[1], k]
    }

    /// Coordinate of lattice index `i` along `axis`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if axis >= self.dims {
            return 0.0;
        }
        -0.5 * self.extent[axis] + i as f64 * self.spacing[axis]
    }

    /// Position of a flat point index; inactive axes are zero.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        [self.coord(0, m[0]), self.coord(1, m[1]), self.coord(2, m[2])]
    }

    /// Angular wavenumber of FFT bin `i` along `axis` (standard FFT ordering).
    pub fn wavenumber(&self, axis: usize, i: usize) -> f64 {
        let n = self.points[axis];
        let j = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
        2.0 * std::f64::consts::PI * j / self.extent[axis]
    }

    /// Refined copy with `factor` times as many points on every active axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let pts: Vec<usize> = self.points[..self.dims].iter().map(|p| p * factor).collect();
        Self::new(&pts, &self.extent[..self.dims])
    }
}

/// Physical constants: reduced Planck constant, mass and charge coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub hbar: f64,
    pub mass: f64,
    pub charge: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0, charge: 0.0 }
    }
}

impl PhysicalParams {
    pub fn new(hbar: f64, mass: f64, charge: f64) -> Result<Self> {
        let p = Self { hbar, mass, charge };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return Err(Error::InvalidParameter(format!("hbar must be > 0, got {}", self.hbar)));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidParameter(format!("mass must be > 0, got {}", self.mass)));
        }
        if !self.charge.is_finite() {
            return Err(Error::InvalidParameter("charge must be finite".into()));
        }
        Ok(())
    }
}
