//! Built-in wavefunction families and potentials.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::grid::{Grid, PhysicalParams};
use crate::ops::integrate;

/// Normalized plane wave `e^{ik·x}/√V`. `k` should be a lattice wavevector
/// (see [`lattice_wavevector`]) for the state to be periodic.
pub fn plane_wave(grid: Grid, k: [f64; 3]) -> ComplexField {
    let volume: f64 = grid.extent()[..grid.dims()].iter().product();
    let amp = volume.sqrt().recip();
    ComplexField::from_fn(grid, |x| {
        Complex64::from_polar(amp, k[0] * x[0] + k[1] * x[1] + k[2] * x[2])
    })
}

/// Wavevector `2π n_k / L_k` for integer mode numbers.
pub fn lattice_wavevector(grid: &Grid, modes: [i32; 3]) -> [f64; 3] {
    let mut k = [0.0; 3];
    for axis in 0..grid.dims() {
        k[axis] = 2.0 * PI * modes[axis] as f64 / grid.extent()[axis];
    }
    k
}

/// Normalized Gaussian packet with density width `sigma` per axis and mean
/// momentum `momentum`: `(2πσ²)^{-d/4} exp(-(x-c)²/4σ²) exp(i p·x/ħ)`.
pub fn gaussian(
    grid: Grid,
    center: [f64; 3],
    sigma: f64,
    momentum: [f64; 3],
    params: &PhysicalParams,
) -> ComplexField {
    let d = grid.dims();
    let amp = (2.0 * PI * sigma * sigma).powf(-(d as f64) / 4.0);
    ComplexField::from_fn(grid, |x| {
        let mut r2 = 0.0;
        let mut phase = 0.0;
        for k in 0..d {
            r2 += (x[k] - center[k]).powi(2);
            phase += momentum[k] * x[k] / params.hbar;
        }
        Complex64::from_polar(amp * (-r2 / (4.0 * sigma * sigma)).exp(), phase)
    })
}

/// Ground state of the isotropic harmonic oscillator with frequency `omega`.
pub fn harmonic_ground(grid: Grid, omega: f64, params: &PhysicalParams) -> ComplexField {
    let d = grid.dims();
    let a = params.mass * omega / params.hbar;
    let amp = (a / PI).powf(d as f64 / 4.0);
    ComplexField::from_fn(grid, |x| {
        let r2: f64 = x[..d].iter().map(|v| v * v).sum();
        Complex64::new(amp * (-0.5 * a * r2).exp(), 0.0)
    })
}

/// Ground-state energy `d·ħω/2`.
pub fn harmonic_ground_energy(grid: &Grid, omega: f64, params: &PhysicalParams) -> f64 {
    0.5 * grid.dims() as f64 * params.hbar * omega
}

/// `U = ½ m ω² |x|²`.
pub fn harmonic_potential(grid: Grid, omega: f64, params: &PhysicalParams) -> RealField {
    let c = 0.5 * params.mass * omega * omega;
    RealField::from_fn(grid, |x| c * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]))
}

/// Constant spinor `(cos θ/2, e^{iφ} sin θ/2)`, Bloch angles (θ, φ).
pub fn bloch_spinor(theta: f64, phi: f64) -> [Complex64; 2] {
    [
        Complex64::new((theta / 2.0).cos(), 0.0),
        Complex64::from_polar((theta / 2.0).sin(), phi),
    ]
}

pub fn spin_up() -> [Complex64; 2] {
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
}

/// Smooth node-free state: a Gaussian envelope times `exp(c(x))` where `c`
/// is a random complex combination of the lowest `modes` Fourier modes.
/// Deterministic for a given seed; normalized.
pub fn random_smooth(grid: Grid, sigma: f64, modes: usize, amplitude: f64, seed: u64) -> ComplexField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dims();
    let mut terms = Vec::new();
    for axis in 0..d {
        for n in 1..=modes {
            let k = 2.0 * PI * n as f64 / grid.extent()[axis];
            let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let b = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            terms.push((axis, k, a * amplitude / n as f64, b * amplitude / n as f64));
        }
    }
    let envelope = gaussian(grid, [0.0; 3], sigma, [0.0; 3], &PhysicalParams::default());
    let psi = ComplexField::from_fn(grid, |x| {
        let c: Complex64 = terms
            .iter()
            .map(|&(axis, k, a, b)| a * (k * x[axis]).cos() + b * (k * x[axis]).sin())
            .sum();
        c.exp()
    });
    let psi = psi.zip_map(&envelope, |p, e| p * e).expect("same grid");
    normalize(&psi).expect("node-free state")
}

/// `∫|ψ|²`.
pub fn norm_squared(psi: &ComplexField) -> f64 {
    integrate(&psi.density())
}

pub fn normalize(psi: &ComplexField) -> Result<ComplexField> {
    let n = norm_squared(psi);
    if n <= 0.0 {
        return Err(Error::ZeroWavefunction);
    }
    Ok(psi.scaled(Complex64::new(n.sqrt().recip(), 0.0)))
}
