//! Hydrodynamic (Madelung) form of a scalar wavefunction.
//!
//! `ψ = √ρ e^{iφ/ħ}` is split into density `ρ`, phase `φ` (action units) and
//! momentum `p = ∇φ`. The momentum is taken from the current bilinear
//! `ħ Im(ψ*∇ψ)/ρ`, which needs no phase unwrapping. Quantities that divide by
//! `ρ` are only evaluated where `ρ > NODE_THRESHOLD · max ρ`; elsewhere they
//! are zero and the point is flagged in a [`NodeMask`].

use log::warn;

use crate::error::{Error, Result};
use crate::field::{dot, norm, ComplexField, Field, RealField, VectorField};
use crate::grid::{Grid, PhysicalParams};
use crate::ops::{self, gradient, laplacian, Backend};
use crate::states::norm_squared;

/// Node threshold relative to the density maximum.
pub const NODE_THRESHOLD: f64 = 1e-12;

/// Points where the density is too small for `1/ρ` quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMask {
    masked: Vec<bool>,
    threshold: f64,
}

impl NodeMask {
    pub fn from_density(rho: &RealField) -> Self {
        Self::with_relative_threshold(rho, NODE_THRESHOLD)
    }

    pub fn with_relative_threshold(rho: &RealField, relative: f64) -> Self {
        let threshold = relative * rho.max().max(0.0);
        Self { masked: rho.values().iter().map(|&r| r <= threshold).collect(), threshold }
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.masked.len() as f64
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.masked
    }

    /// Union of two masks.
    pub fn union(&self, other: &NodeMask) -> NodeMask {
        NodeMask {
            masked: self.masked.iter().zip(&other.masked).map(|(a, b)| *a || *b).collect(),
            threshold: self.threshold.max(other.threshold),
        }
    }
}

/// Applies `f` on unmasked points and writes zero on masked ones.
pub(crate) fn masked_map<T: crate::field::Sample, U: crate::field::Sample + Default>(
    field: &Field<T>,
    mask: &NodeMask,
    f: impl Fn(usize, T) -> U,
) -> Field<U> {
    let values = field
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask.is_masked(i) { U::default() } else { f(i, v) })
        .collect();
    Field::from_raw(*field.grid(), values)
}

/// Static external potential `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalPotential {
    u: RealField,
}

impl ExternalPotential {
    pub fn new(u: RealField) -> Result<Self> {
        u.check_finite("external potential")?;
        Ok(Self { u })
    }

    pub fn zero(grid: Grid) -> Self {
        Self { u: RealField::filled(grid, 0.0) }
    }

    pub fn harmonic(grid: Grid, omega: f64, params: &PhysicalParams) -> Self {
        Self { u: crate::states::harmonic_potential(grid, omega, params) }
    }

    pub fn field(&self) -> &RealField {
        &self.u
    }
}

#[derive(Debug, Clone)]
pub struct MadelungFields {
    pub rho: RealField,
    /// `ħ·arg ψ`, principal value.
    pub phase: RealField,
    pub momentum: VectorField,
    pub mask: NodeMask,
}

fn check_density(rho: &RealField) -> Result<()> {
    rho.check_finite("density")?;
    match rho.values().iter().position(|&r| r < 0.0) {
        Some(index) => Err(Error::NegativeDensity { index, value: rho.values()[index] }),
        None => Ok(()),
    }
}

/// Probability current `ħ Im(ψ*∇ψ)/m`, summed over spinor components by callers.
pub(crate) fn convective_flux(psi: &ComplexField, hbar: f64, backend: Backend) -> Result<VectorField> {
    let grad = gradient(psi, backend)?;
    psi.zip_map(&grad, |z, g| {
        let zc = z.conj();
        [hbar * (zc * g[0]).im, hbar * (zc * g[1]).im, hbar * (zc * g[2]).im]
    })
}

/// Madelung decomposition of a scalar wavefunction.
pub fn decompose(psi: &ComplexField, params: &PhysicalParams, backend: Backend) -> Result<MadelungFields> {
    psi.check_finite("wavefunction")?;
    params.validate()?;
    let rho = psi.density();
    if rho.max() <= 0.0 {
        return Err(Error::ZeroWavefunction);
    }
    let n = norm_squared(psi);
    if (n - 1.0).abs() > 1e-6 {
        warn!("wavefunction norm is {n}, expected 1");
    }
    let mask = NodeMask::from_density(&rho);
    let flux = convective_flux(psi, params.hbar, backend)?;
    let momentum = masked_map(&flux, &mask, |i, f| {
        let r = rho.values()[i];
        [f[0] / r, f[1] / r, f[2] / r]
    });
    let phase = psi.map(|z| params.hbar * z.arg());
    Ok(MadelungFields { rho, phase, momentum, mask })
}

/// Quantum potential in both closed forms.
#[derive(Debug, Clone)]
pub struct QuantumPotentialField {
    /// `−(ħ²/2m) △√ρ / √ρ`.
    pub q: RealField,
    /// `(ħ²/4m)[½(∇ρ/ρ)² − △ρ/ρ]`.
    pub q_density_form: RealField,
    pub node_mask: NodeMask,
}

pub fn quantum_potential(rho: &RealField, params: &PhysicalParams, backend: Backend) -> Result<QuantumPotentialField> {
    check_density(rho)?;
    let mask = NodeMask::from_density(rho);
    let (hbar, m) = (params.hbar, params.mass);

    let amp = rho.map(f64::sqrt);
    let lap_amp = laplacian(&amp, backend)?;
    let q = masked_map(&lap_amp, &mask, |i, l| -hbar * hbar / (2.0 * m) * l / amp.values()[i]);

    let bracket = log_density_bracket(rho, &mask, backend)?;
    let c = hbar * hbar / (4.0 * m);
    let q_density_form = masked_map(&bracket, &mask, |_, b| c * b);
    Ok(QuantumPotentialField { q, q_density_form, node_mask: mask })
}

/// `½(∇ρ/ρ)² − △ρ/ρ` on unmasked points.
pub(crate) fn log_density_bracket(rho: &RealField, mask: &NodeMask, backend: Backend) -> Result<RealField> {
    let grad = gradient(rho, backend)?;
    let lap = laplacian(rho, backend)?;
    Ok(masked_map(rho, mask, |i, r| {
        let g = grad.values()[i];
        0.5 * dot(g, g) / (r * r) - lap.values()[i] / r
    }))
}

/// `(ħ²/8m)(∇ρ/ρ)²`, the internal (Zitterbewegung) kinetic energy per unit density.
pub fn internal_kinetic_density(rho: &RealField, params: &PhysicalParams, backend: Backend) -> Result<RealField> {
    check_density(rho)?;
    let mask = NodeMask::from_density(rho);
    let grad = gradient(rho, backend)?;
    let c = params.hbar * params.hbar / (8.0 * params.mass);
    Ok(masked_map(rho, &mask, |i, r| {
        let g = grad.values()[i];
        c * dot(g, g) / (r * r)
    }))
}

/// `|V| = (ħ/2)|∇ρ|/(mρ)`.
pub fn zbw_speed(rho: &RealField, params: &PhysicalParams, backend: Backend) -> Result<RealField> {
    check_density(rho)?;
    let mask = NodeMask::from_density(rho);
    let grad = gradient(rho, backend)?;
    let c = 0.5 * params.hbar / params.mass;
    Ok(masked_map(rho, &mask, |i, r| c * norm(grad.values()[i]) / r))
}

/// Three consecutive states `ψ(t−Δt), ψ(t), ψ(t+Δt)` of one evolution.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotTriple<'a> {
    pub prev: &'a ComplexField,
    pub current: &'a ComplexField,
    pub next: &'a ComplexField,
    pub dt: f64,
}

impl<'a> SnapshotTriple<'a> {
    pub fn new(prev: &'a ComplexField, current: &'a ComplexField, next: &'a ComplexField, dt: f64) -> Result<Self> {
        prev.same_grid(current)?;
        next.same_grid(current)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("snapshot spacing must be > 0, got {dt}")));
        }
        Ok(Self { prev, current, next, dt })
    }
}

/// Largest phase increment between consecutive snapshots that a central
/// difference of principal values accepts.
pub const MAX_PHASE_INCREMENT: f64 = std::f64::consts::FRAC_PI_2;

/// Pieces shared by the Hamilton–Jacobi residuals and the Lagrangian density,
/// all at the middle snapshot.
pub(crate) struct HydroTerms {
    pub rho: RealField,
    pub mask: NodeMask,
    /// `∂φ/∂t`.
    pub phase_rate: RealField,
    /// `(∇φ)²`.
    pub momentum_sq: RealField,
    /// `(∇ρ/ρ)²`.
    pub log_grad_sq: RealField,
    /// `½(∇ρ/ρ)² − △ρ/ρ`.
    pub bracket: RealField,
}

pub(crate) fn hydro_terms(s: &SnapshotTriple<'_>, params: &PhysicalParams, backend: Backend) -> Result<HydroTerms> {
    for psi in [s.prev, s.current, s.next] {
        psi.check_finite("snapshot")?;
    }
    params.validate()?;
    let fields = decompose(s.current, params, backend)?;
    let mask = fields.mask;
    let rho = fields.rho;

    let mut rate = vec![0.0; rho.len()];
    for (i, r) in rate.iter_mut().enumerate() {
        if mask.is_masked(i) {
            continue;
        }
        let c = s.current.values()[i];
        let fwd = (s.next.values()[i] * c.conj()).arg();
        let bwd = (c * s.prev.values()[i].conj()).arg();
        for inc in [fwd, bwd] {
            if inc.abs() >= MAX_PHASE_INCREMENT {
                return Err(Error::PhaseJump { index: i, increment: inc });
            }
        }
        *r = params.hbar * (fwd + bwd) / (2.0 * s.dt);
    }
    let phase_rate = RealField::from_raw(*rho.grid(), rate);
    let momentum_sq = fields.momentum.map(|p| dot(p, p));
    let grad = gradient(&rho, backend)?;
    let log_grad_sq = masked_map(&rho, &mask, |i, r| dot(grad.values()[i], grad.values()[i]) / (r * r));
    let bracket = log_density_bracket(&rho, &mask, backend)?;
    Ok(HydroTerms { rho, mask, phase_rate, momentum_sq, log_grad_sq, bracket })
}

/// Residual of `∂φ/∂t + (∇φ)²/2m + Q + U` at the middle snapshot, with `Q`
/// in its density form. Zero on masked points.
pub fn hj_residual(
    s: &SnapshotTriple<'_>,
    u: &ExternalPotential,
    params: &PhysicalParams,
    backend: Backend,
) -> Result<RealField> {
    hj_residual_with_coefficient(s, u, params, backend, params.hbar * params.hbar / (4.0 * params.mass))
}

/// Hamilton–Jacobi residual with an arbitrary coefficient in front of the
/// quantum bracket; `ħ²/4m` gives the standard equation.
pub(crate) fn hj_residual_with_coefficient(
    s: &SnapshotTriple<'_>,
    u: &ExternalPotential,
    params: &PhysicalParams,
    backend: Backend,
    coefficient: f64,
) -> Result<RealField> {
    u.field().same_grid(s.current)?;
    let t = hydro_terms(s, params, backend)?;
    let m = params.mass;
    Ok(masked_map(&t.rho, &t.mask, |i, _| {
        t.phase_rate.values()[i]
            + t.momentum_sq.values()[i] / (2.0 * m)
            + coefficient * t.bracket.values()[i]
            + u.field().values()[i]
    }))
}

/// Residual of `∂ρ/∂t + ∇·(ρ∇φ/m)` at the middle snapshot. The flux is built
/// from the current bilinear, so it is defined at nodes as well.
pub fn continuity_residual(s: &SnapshotTriple<'_>, params: &PhysicalParams, backend: Backend) -> Result<RealField> {
    params.validate()?;
    for psi in [s.prev, s.current, s.next] {
        psi.check_finite("snapshot")?;
    }
    let flux = convective_flux(s.current, params.hbar, backend)?;
    let flux = flux.map(|f| [f[0] / params.mass, f[1] / params.mass, f[2] / params.mass]);
    let div = ops::divergence(&flux, backend)?;
    let values = (0..div.len())
        .map(|i| {
            let drho = (s.next.values()[i].norm_sqr() - s.prev.values()[i].norm_sqr()) / (2.0 * s.dt);
            drho + div.values()[i]
        })
        .collect();
    Ok(RealField::from_raw(*s.current.grid(), values))
}

/// Lagrangian density in its hydrodynamic form and in the form with the
/// internal kinetic energy written as `½mV²`.
#[derive(Debug, Clone)]
pub struct LagrangianDensity {
    /// `−[∂φ/∂t + (∇φ)²/2m + (ħ²/8m)(∇ρ/ρ)² + U]ρ`.
    pub hydrodynamic: RealField,
    /// `−[∂φ/∂t + (∇φ)²/2m + ½mV² + U]ρ` with `|V| = (ħ/2)|∇ρ|/(mρ)`.
    pub koenig: RealField,
    pub mask: NodeMask,
}

pub fn lagrangian_density(
    s: &SnapshotTriple<'_>,
    u: &ExternalPotential,
    params: &PhysicalParams,
    backend: Backend,
) -> Result<LagrangianDensity> {
    u.field().same_grid(s.current)?;
    let t = hydro_terms(s, params, backend)?;
    let (hbar, m) = (params.hbar, params.mass);
    let speed = zbw_speed(&t.rho, params, backend)?;
    let base = |i: usize| t.phase_rate.values()[i] + t.momentum_sq.values()[i] / (2.0 * m) + u.field().values()[i];
    let hydrodynamic = masked_map(&t.rho, &t.mask, |i, r| {
        -(base(i) + hbar * hbar / (8.0 * m) * t.log_grad_sq.values()[i]) * r
    });
    let koenig = masked_map(&t.rho, &t.mask, |i, r| {
        let v = speed.values()[i];
        -(base(i) + 0.5 * m * v * v) * r
    });
    Ok(LagrangianDensity { hydrodynamic, koenig, mask: t.mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{gaussian, harmonic_ground, lattice_wavevector, plane_wave};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn p() -> PhysicalParams {
        PhysicalParams::default()
    }

    fn max_err_where(f: &RealField, keep: impl Fn(f64) -> bool, oracle: impl Fn(f64) -> f64) -> f64 {
        (0..f.len())
            .filter(|&i| keep(f.grid().position(i)[0]))
            .map(|i| (f.values()[i] - oracle(f.grid().position(i)[0])).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn plane_wave_decomposition() {
        let g = Grid::line(64, 10.0).unwrap();
        let k = lattice_wavevector(&g, [1, 0, 0]);
        let f = decompose(&plane_wave(g, k), &p(), Backend::Spectral).unwrap();
        assert!(f.rho.values().iter().all(|r| (r - 0.1).abs() < 1e-15));
        assert!(f.momentum.values().iter().all(|v| (v[0] - k[0]).abs() < 1e-12 && v[1] == 0.0));
        assert_eq!(f.mask.count(), 0);
    }

    #[test]
    fn real_gaussian_has_no_momentum() {
        let g = Grid::line(128, 30.0).unwrap();
        let f = decompose(&gaussian(g, [0.0; 3], 1.0, [0.0; 3], &p()), &p(), Backend::Spectral).unwrap();
        assert_eq!(f.phase.max_abs(), 0.0);
        let px = f.momentum.component(0);
        assert!(max_err_where(&px, |x| x.abs() < 6.0, |_| 0.0) < 1e-12);
    }

    #[test]
    fn boosted_gaussian() {
        let g = Grid::line(256, 40.0).unwrap();
        let f = decompose(&gaussian(g, [0.0; 3], 1.0, [1.0, 0.0, 0.0], &p()), &p(), Backend::Spectral).unwrap();
        let rho_err = max_err_where(&f.rho, |_| true, |x| (-x * x / 2.0).exp() / (2.0 * PI).sqrt());
        assert!(rho_err < 1e-15);
        let px = f.momentum.component(0);
        let mom_err = max_err_where(&px, |x| x.abs() < 6.0, |_| 1.0);
        assert!(mom_err < 1e-9, "{mom_err}");
    }

    #[test]
    fn zero_wavefunction_rejected() {
        let g = Grid::line(8, 1.0).unwrap();
        let z = ComplexField::filled(g, Complex64::new(0.0, 0.0));
        assert!(matches!(decompose(&z, &p(), Backend::Spectral), Err(Error::ZeroWavefunction)));
    }

    #[test]
    fn gaussian_quantum_potential() {
        let g = Grid::line(256, 40.0).unwrap();
        let rho = RealField::from_fn(g, |x| (-x[0] * x[0] / 2.0).exp() / (2.0 * PI).sqrt());
        let q = quantum_potential(&rho, &p(), Backend::Spectral).unwrap();
        let oracle = |x: f64| (1.0 - x * x / 2.0) / 4.0;
        assert!(max_err_where(&q.q, |x| x.abs() < 5.0, oracle) < 1e-8);
        assert!(max_err_where(&q.q_density_form, |x| x.abs() < 5.0, oracle) < 1e-8);

        // h = 1/8 puts x = 0 and x = 2 on lattice points
        let g = Grid::line(256, 32.0).unwrap();
        let rho = RealField::from_fn(g, |x| (-x[0] * x[0] / 2.0).exp() / (2.0 * PI).sqrt());
        let q = quantum_potential(&rho, &p(), Backend::Spectral).unwrap();
        let at = |x0: f64| {
            let i = (0..g.len()).find(|&i| (g.position(i)[0] - x0).abs() < 1e-12).unwrap();
            q.q.values()[i]
        };
        assert!((at(0.0) - 0.25).abs() < 1e-12);
        assert!((at(2.0) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn harmonic_ground_quantum_potential_balances_potential() {
        let g = Grid::line(256, 30.0).unwrap();
        let rho = harmonic_ground(g, 1.0, &p()).density();
        let q = quantum_potential(&rho, &p(), Backend::Spectral).unwrap();
        let total = max_err_where(&q.q, |x| x.abs() < 4.0, |x| 0.5 - x * x / 2.0);
        assert!(total < 1e-9, "{total}");
    }

    #[test]
    fn constant_density_has_no_quantum_terms() {
        let g = Grid::square(16, 4.0).unwrap();
        let rho = RealField::filled(g, 1.0 / 16.0);
        let q = quantum_potential(&rho, &p(), Backend::Spectral).unwrap();
        assert!(q.q.max_abs() < 1e-14 && q.q_density_form.max_abs() < 1e-14);
        assert!(zbw_speed(&rho, &p(), Backend::Spectral).unwrap().max_abs() < 1e-14);
        assert!(internal_kinetic_density(&rho, &p(), Backend::Spectral).unwrap().max_abs() < 1e-28);
    }

    #[test]
    fn negative_density_rejected() {
        let g = Grid::line(8, 1.0).unwrap();
        let mut rho = RealField::filled(g, 1.0);
        rho.values_mut()[5] = -1e-3;
        assert!(matches!(
            quantum_potential(&rho, &p(), Backend::Spectral),
            Err(Error::NegativeDensity { index: 5, .. })
        ));
    }

    #[test]
    fn speed_and_internal_density_on_gaussian() {
        let g = Grid::line(256, 32.0).unwrap();
        let rho = RealField::from_fn(g, |x| (-x[0] * x[0] / 2.0).exp() / (2.0 * PI).sqrt());
        let speed = zbw_speed(&rho, &p(), Backend::Spectral).unwrap();
        let ikd = internal_kinetic_density(&rho, &p(), Backend::Spectral).unwrap();
        let at = |f: &RealField, x0: f64| {
            let i = (0..g.len()).find(|&i| (g.position(i)[0] - x0).abs() < 1e-12).unwrap();
            f.values()[i]
        };
        assert!((at(&speed, 1.0) - 0.5).abs() < 1e-12);
        assert!((at(&speed, 2.0) - 1.0).abs() < 1e-12);
        assert!((at(&ikd, 1.0) - 0.125).abs() < 1e-12);
        for i in 0..g.len() {
            let half_mv2 = 0.5 * speed.values()[i].powi(2);
            let d = ikd.values()[i];
            assert!((half_mv2 - d).abs() <= 1e-12 * d.abs().max(1e-300));
        }
    }

    #[test]
    fn global_phase_leaves_density_and_momentum_unchanged() {
        let g = Grid::line(128, 30.0).unwrap();
        let psi = gaussian(g, [0.5, 0.0, 0.0], 1.2, [0.7, 0.0, 0.0], &p());
        let a = decompose(&psi, &p(), Backend::Spectral).unwrap();
        let rotated = psi.scaled(Complex64::from_polar(1.0, 0.3));
        let b = decompose(&rotated, &p(), Backend::Spectral).unwrap();
        let rho_err = a.rho.zip_map(&b.rho, |x, y| (x - y).abs()).unwrap().max_abs();
        assert!(rho_err <= 1e-16);
        let resolved = NodeMask::with_relative_threshold(&a.rho, 1e-6);
        for i in 0..g.len() {
            if resolved.is_masked(i) {
                continue;
            }
            assert!((a.momentum.values()[i][0] - b.momentum.values()[i][0]).abs() < 1e-12);
        }
        for i in 0..g.len() {
            if a.mask.is_masked(i) {
                continue;
            }
            let d = (b.phase.values()[i] - a.phase.values()[i] - 0.3).rem_euclid(2.0 * PI);
            assert!(d.min(2.0 * PI - d) < 1e-12);
        }
    }
}
