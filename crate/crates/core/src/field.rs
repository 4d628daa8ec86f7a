//! Sampled fields on a [`Grid`].

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Per-point value that can be checked for finiteness.
pub trait Sample: Copy + Send + Sync {
    fn all_finite(&self) -> bool;
}

impl Sample for f64 {
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl Sample for Complex64 {
    fn all_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl<T: Sample, const N: usize> Sample for [T; N] {
    fn all_finite(&self) -> bool {
        self.iter().all(Sample::all_finite)
    }
}

/// Scalar types the differential operators act on.
pub trait Scalar: Sample {
    fn to_complex(self) -> Complex64;
    fn from_complex(c: Complex64) -> Self;
    fn zero() -> Self;
}

impl Scalar for f64 {
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn from_complex(c: Complex64) -> Self {
        c.re
    }
    fn zero() -> Self {
        0.0
    }
}

impl Scalar for Complex64 {
    fn to_complex(self) -> Complex64 {
        self
    }
    fn from_complex(c: Complex64) -> Self {
        c
    }
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
}

/// One value per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    grid: Grid,
    values: Vec<T>,
}

pub type RealField = Field<f64>;
pub type ComplexField = Field<Complex64>;
/// Always three components; axes a grid lacks carry zeros.
pub type VectorField = Field<[f64; 3]>;
/// Complex three-vector per point (gradients of complex fields).
pub type ComplexVectorField = Field<[Complex64; 3]>;
/// Pauli spinor per point: (spin-up, spin-down).
pub type SpinorField = Field<[Complex64; 2]>;

impl<T: Sample> Field<T> {
    /// Checked constructor: length must match the grid and every value be finite.
    pub fn from_values(grid: Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.all_finite()) {
            return Err(Error::NonFinite { what: "field values", index });
        }
        Ok(Self { grid, values })
    }

    /// Evaluates `f` at every grid position.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> T) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self { grid, values }
    }

    pub fn filled(grid: Grid, value: T) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.values.iter().position(|v| !v.all_finite()) {
            Some(index) => Err(Error::NonFinite { what, index }),
            None => Ok(()),
        }
    }

    pub fn map<U: Sample>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map<U: Sample, V: Sample>(
        &self,
        other: &Field<U>,
        f: impl Fn(T, U) -> V,
    ) -> Result<Field<V>> {
        self.same_grid(other)?;
        Ok(Field {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn same_grid<U>(&self, other: &Field<U>) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

impl RealField {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl ComplexField {
    /// |ψ|² per point.
    pub fn density(&self) -> RealField {
        self.map(|z| z.norm_sqr())
    }

    /// Multiplies by a constant spinor, giving the factorized spinor field ψ·χ.
    pub fn times_spinor(&self, chi: [Complex64; 2]) -> SpinorField {
        self.map(|z| [z * chi[0], z * chi[1]])
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        self.map(|z| z * c)
    }
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self::filled(grid, [0.0; 3])
    }

    pub fn component(&self, k: usize) -> RealField {
        self.map(|v| v[k])
    }

    pub fn from_components(c: [&RealField; 3]) -> Result<Self> {
        c[0].same_grid(c[1])?;
        c[0].same_grid(c[2])?;
        let values = (0..c[0].len())
            .map(|i| [c[0].values[i], c[1].values[i], c[2].values[i]])
            .collect();
        Ok(Self { grid: c[0].grid, values })
    }

    pub fn norm(&self) -> RealField {
        self.map(norm)
    }

    /// Pointwise scaling by a real field.
    pub fn scale_by(&self, s: &RealField) -> Result<Self> {
        self.zip_map(s, |v, a| scale(v, a))
    }
}

/// Pointwise cross product of two vector fields.
pub fn cross_fields(a: &VectorField, b: &VectorField) -> Result<VectorField> {
    a.zip_map(b, cross)
}

/// Pointwise dot product of two vector fields.
pub fn dot_fields(a: &VectorField, b: &VectorField) -> Result<RealField> {
    a.zip_map(b, dot)
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
