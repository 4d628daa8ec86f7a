//! Discrete differential operators on periodic grids.
//!
//! Two backends share one interface. [`Backend::Spectral`] differentiates in
//! Fourier space and is exact for resolved periodic fields; [`Backend::Fd2`]
//! uses second-order central differences and exists mainly for
//! convergence-order checks. The Nyquist bin is dropped from first
//! derivatives and kept (as `-k²`) in second derivatives.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, RealField, Scalar, VectorField};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Spectral,
    Fd2,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Spectral => "spectral",
            Backend::Fd2 => "fd2",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Backend::Spectral),
            "fd2" => Ok(Backend::Fd2),
            other => Err(Error::InvalidParameter(format!("unknown backend `{other}`"))),
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

fn axis_stride(grid: &Grid, axis: usize) -> usize {
    let p = grid.points();
    match axis {
        0 => p[1] * p[2],
        1 => p[2],
        _ => 1,
    }
}

/// Calls `f` on a contiguous copy of every lattice line along `axis` and
/// writes the result back.
pub(crate) fn for_each_line(
    grid: &Grid,
    axis: usize,
    data: &mut [Complex64],
    mut f: impl FnMut(&mut [Complex64]),
) {
    let n = grid.points()[axis];
    let stride = axis_stride(grid, axis);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for start in 0..grid.len() {
        if grid.multi_index(start)[axis] != 0 {
            continue;
        }
        for (j, slot) in line.iter_mut().enumerate() {
            *slot = data[start + j * stride];
        }
        f(&mut line);
        for (j, v) in line.iter().enumerate() {
            data[start + j * stride] = *v;
        }
    }
}

/// Multiplies the Fourier transform along `axis` by `symbol(bin)`.
fn spectral_axis(grid: &Grid, axis: usize, data: &mut [Complex64], symbol: impl Fn(usize) -> Complex64) {
    let n = grid.points()[axis];
    let (fwd, inv) = plans(n);
    let norm = 1.0 / n as f64;
    let mults: Vec<Complex64> = (0..n).map(|i| symbol(i) * norm).collect();
    let mut scratch = vec![Complex64::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
    for_each_line(grid, axis, data, |line| {
        fwd.process_with_scratch(line, &mut scratch);
        for (v, m) in line.iter_mut().zip(&mults) {
            *v *= m;
        }
        inv.process_with_scratch(line, &mut scratch);
    });
}

/// Forward (or inverse, unnormalized) FFT over every active axis.
pub(crate) fn fft_all_axes(grid: &Grid, data: &mut [Complex64], inverse: bool) {
    for axis in 0..grid.dims() {
        let (fwd, inv) = plans(grid.points()[axis]);
        let plan = if inverse { inv } else { fwd };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for_each_line(grid, axis, data, |line| plan.process_with_scratch(line, &mut scratch));
    }
}

fn check_backend(grid: &Grid, backend: Backend) -> Result<()> {
    if backend == Backend::Spectral {
        for axis in 0..grid.dims() {
            let points = grid.points()[axis];
            if points % 2 != 0 {
                return Err(Error::OddSpectralAxis { axis, points });
            }
        }
    }
    Ok(())
}

fn to_complex<T: Scalar>(f: &Field<T>) -> Vec<Complex64> {
    f.values().iter().map(|v| v.to_complex()).collect()
}

fn from_complex<T: Scalar>(grid: Grid, data: Vec<Complex64>) -> Field<T> {
    Field::from_raw(grid, data.into_iter().map(T::from_complex).collect())
}

fn derivative_in_place(grid: &Grid, axis: usize, data: &mut [Complex64], order: u8, backend: Backend) {
    let n = grid.points()[axis];
    let h = grid.spacing()[axis];
    match backend {
        Backend::Spectral => spectral_axis(grid, axis, data, |i| {
            let k = grid.wavenumber(axis, i);
            match order {
                1 if 2 * i == n => Complex64::new(0.0, 0.0),
                1 => Complex64::new(0.0, k),
                _ => Complex64::new(-k * k, 0.0),
            }
        }),
        Backend::Fd2 => {
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            for_each_line(grid, axis, data, |line| {
                for j in 0..n {
                    let prev = line[(j + n - 1) % n];
                    let next = line[(j + 1) % n];
                    out[j] = match order {
                        1 => (next - prev) / (2.0 * h),
                        _ => (next - 2.0 * line[j] + prev) / (h * h),
                    };
                }
                line.copy_from_slice(&out);
            });
        }
    }
}

/// Partial derivative along one axis. Inactive axes give zero.
pub fn partial<T: Scalar>(f: &Field<T>, axis: usize, backend: Backend) -> Result<Field<T>> {
    f.check_finite("operator input")?;
    let grid = *f.grid();
    check_backend(&grid, backend)?;
    if axis >= grid.dims() {
        return Ok(Field::filled(grid, T::zero()));
    }
    let mut data = to_complex(f);
    derivative_in_place(&grid, axis, &mut data, 1, backend);
    Ok(from_complex(grid, data))
}

/// Gradient as a three-component field; axes the grid lacks are zero.
pub fn gradient<T: Scalar>(f: &Field<T>, backend: Backend) -> Result<Field<[T; 3]>> {
    let parts = [partial(f, 0, backend)?, partial(f, 1, backend)?, partial(f, 2, backend)?];
    let values = (0..f.len())
        .map(|i| [parts[0].values()[i], parts[1].values()[i], parts[2].values()[i]])
        .collect();
    Ok(Field::from_raw(*f.grid(), values))
}

pub fn laplacian<T: Scalar>(f: &Field<T>, backend: Backend) -> Result<Field<T>> {
    f.check_finite("operator input")?;
    let grid = *f.grid();
    check_backend(&grid, backend)?;
    let base = to_complex(f);
    let mut total = vec![Complex64::new(0.0, 0.0); base.len()];
    for axis in 0..grid.dims() {
        let mut data = base.clone();
        derivative_in_place(&grid, axis, &mut data, 2, backend);
        for (t, d) in total.iter_mut().zip(&data) {
            *t += d;
        }
    }
    Ok(from_complex(grid, total))
}

pub fn divergence(v: &VectorField, backend: Backend) -> Result<RealField> {
    let mut out = RealField::filled(*v.grid(), 0.0);
    for axis in 0..v.grid().dims() {
        let d = partial(&v.component(axis), axis, backend)?;
        for (o, x) in out.values_mut().iter_mut().zip(d.values()) {
            *o += x;
        }
    }
    Ok(out)
}

pub fn curl(v: &VectorField, backend: Backend) -> Result<VectorField> {
    let c = [v.component(0), v.component(1), v.component(2)];
    let d = |comp: usize, axis: usize| partial(&c[comp], axis, backend);
    let (dzy, dyz) = (d(2, 1)?, d(1, 2)?);
    let (dxz, dzx) = (d(0, 2)?, d(2, 0)?);
    let (dyx, dxy) = (d(1, 0)?, d(0, 1)?);
    let values = (0..v.len())
        .map(|i| {
            [
                dzy.values()[i] - dyz.values()[i],
                dxz.values()[i] - dzx.values()[i],
                dyx.values()[i] - dxy.values()[i],
            ]
        })
        .collect();
    Ok(Field::from_raw(*v.grid(), values))
}

/// Riemann sum times cell volume, summed in index order.
pub fn integrate(f: &RealField) -> f64 {
    let mut sum = 0.0;
    for v in f.values() {
        sum += v;
    }
    sum * f.grid().cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn max_err(a: &RealField, b: impl Fn([f64; 3]) -> f64) -> f64 {
        (0..a.len())
            .map(|i| (a.values()[i] - b(a.grid().position(i))).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_of_fourier_mode() {
        let l = 7.0;
        let g = Grid::line(32, l).unwrap();
        let f = RealField::from_fn(g, |x| (2.0 * PI * x[0] / l).sin());
        let grad = gradient(&f, Backend::Spectral).unwrap();
        let err = max_err(&grad.component(0), |x| 2.0 * PI / l * (2.0 * PI * x[0] / l).cos());
        assert!(err < 1e-13, "{err}");
        assert_eq!(grad.component(1).max_abs(), 0.0);
        assert_eq!(grad.component(2).max_abs(), 0.0);
    }

    #[test]
    fn constant_has_zero_derivatives() {
        for backend in [Backend::Spectral, Backend::Fd2] {
            let g = Grid::square(16, 3.0).unwrap();
            let f = RealField::filled(g, 2.5);
            assert!(gradient(&f, backend).unwrap().norm().max_abs() < 1e-14);
            assert!(laplacian(&f, backend).unwrap().max_abs() < 1e-13);
            let v = VectorField::filled(g, [1.0, -2.0, 3.0]);
            assert!(divergence(&v, backend).unwrap().max_abs() < 1e-14);
            assert!(curl(&v, backend).unwrap().norm().max_abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_derivatives_spectral() {
        let g = Grid::line(256, 20.0).unwrap();
        let f = RealField::from_fn(g, |x| (-x[0] * x[0] / 2.0).exp());
        let d1 = gradient(&f, Backend::Spectral).unwrap().component(0);
        let d2 = laplacian(&f, Backend::Spectral).unwrap();
        let inside = |a: &RealField, h: &dyn Fn(f64) -> f64| {
            (0..a.len())
                .filter(|&i| a.grid().position(i)[0].abs() < 5.0)
                .map(|i| (a.values()[i] - h(a.grid().position(i)[0])).abs())
                .fold(0.0, f64::max)
        };
        assert!(inside(&d1, &|x| -x * (-x * x / 2.0).exp()) < 1e-10);
        assert!(inside(&d2, &|x| (x * x - 1.0) * (-x * x / 2.0).exp()) < 1e-9);
    }

    #[test]
    fn laplacian_of_fourier_mode() {
        let l = 5.0;
        let g = Grid::line(16, l).unwrap();
        let k = 2.0 * PI / l;
        let f = RealField::from_fn(g, |x| (k * x[0]).sin());
        let lap = laplacian(&f, Backend::Spectral).unwrap();
        assert!(max_err(&lap, |x| -k * k * (k * x[0]).sin()) < 1e-12);
    }

    #[test]
    fn curl_of_periodic_rotation() {
        let l = 6.0;
        let k = 2.0 * PI / l;
        let g = Grid::square(32, l).unwrap();
        let v = VectorField::from_fn(g, |x| [-(k * x[1]).sin(), (k * x[0]).sin(), 0.0]);
        let c = curl(&v, Backend::Spectral).unwrap();
        assert!(c.component(0).max_abs() < 1e-13);
        assert!(c.component(1).max_abs() < 1e-13);
        let err = max_err(&c.component(2), |x| k * ((k * x[0]).cos() + (k * x[1]).cos()));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn fd2_is_second_order() {
        let err_at = |n: usize| {
            let g = Grid::line(n, 20.0).unwrap();
            let f = RealField::from_fn(g, |x| (-x[0] * x[0] / 2.0).exp());
            let d = gradient(&f, Backend::Fd2).unwrap().component(0);
            max_err(&d, |x| -x[0] * (-x[0] * x[0] / 2.0).exp())
        };
        let (e1, e2) = (err_at(128), err_at(256));
        assert!(e1 / e2 >= 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn spectral_rejects_odd_axis() {
        let g = Grid::line(15, 1.0).unwrap();
        let f = RealField::filled(g, 1.0);
        assert!(matches!(
            gradient(&f, Backend::Spectral),
            Err(Error::OddSpectralAxis { axis: 0, points: 15 })
        ));
        assert!(gradient(&f, Backend::Fd2).is_ok());
    }

    #[test]
    fn rejects_non_finite_input() {
        let g = Grid::line(8, 1.0).unwrap();
        let mut f = RealField::filled(g, 1.0);
        f.values_mut()[3] = f64::INFINITY;
        assert!(matches!(laplacian(&f, Backend::Spectral), Err(Error::NonFinite { index: 3, .. })));
    }

    #[test]
    fn integrate_examples() {
        let g = Grid::line(64, 3.0).unwrap();
        assert!((integrate(&RealField::filled(g, 1.0)) - 3.0).abs() < 1e-14);
        let s = RealField::from_fn(g, |x| (2.0 * PI * x[0] / 3.0).sin());
        assert!(integrate(&s).abs() < 1e-15);
        let g = Grid::line(512, 40.0).unwrap();
        let gauss = RealField::from_fn(g, |x| (-x[0] * x[0] / 2.0).exp() / (2.0 * PI).sqrt());
        assert!((integrate(&gauss) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backend_parses() {
        assert_eq!("fd2".parse::<Backend>().unwrap(), Backend::Fd2);
        assert_eq!(Backend::Spectral.to_string(), "spectral");
        assert!("chebyshev".parse::<Backend>().is_err());
    }
}
