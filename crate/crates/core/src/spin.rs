//! Pauli spinor hydrodynamics.
//!
//! For a two-component spinor `ψ` the probability current splits into a
//! convective part, a diamagnetic part and a spin (magnetization) part,
//! `j = (ħ/m)Im(ψ†∇ψ) − (e/m)Aρ + (1/m)∇×(ψ†ŝψ)`. Dividing by `ρ` gives the
//! velocity `v = w + V`, with drift `w = (p − eA)/m` and internal
//! Zitterbewegung velocity `V = ∇×(ρs)/(mρ)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{add, cross, dot, norm, ComplexField, RealField, SpinorField, VectorField};
use crate::grid::PhysicalParams;
use crate::madelung::{self, hj_residual_with_coefficient, masked_map, ExternalPotential, NodeMask, SnapshotTriple};
use crate::ops::{curl, divergence, gradient, integrate, laplacian, Backend};

/// A spinor field together with the constants it is interpreted with.
#[derive(Debug, Clone)]
pub struct SpinorWavefunction {
    psi: SpinorField,
    params: PhysicalParams,
}

impl SpinorWavefunction {
    pub fn new(psi: SpinorField, params: PhysicalParams) -> Result<Self> {
        psi.check_finite("spinor")?;
        params.validate()?;
        Ok(Self { psi, params })
    }

    /// Factorized state `ψ·χ` with a constant spinor `χ` (normalized here).
    pub fn factorized(scalar: &ComplexField, chi: [Complex64; 2], params: PhysicalParams) -> Result<Self> {
        let n = (chi[0].norm_sqr() + chi[1].norm_sqr()).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidParameter("constant spinor must be non-zero".into()));
        }
        Self::new(scalar.times_spinor([chi[0] / n, chi[1] / n]), params)
    }

    pub fn psi(&self) -> &SpinorField {
        &self.psi
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    /// `ρ = ψ†ψ`.
    pub fn density(&self) -> RealField {
        self.psi.map(|c| c[0].norm_sqr() + c[1].norm_sqr())
    }

    fn component(&self, k: usize) -> ComplexField {
        self.psi.map(|c| c[k])
    }

    /// Global phase rotation.
    pub fn rotated(&self, angle: f64) -> Self {
        let r = Complex64::from_polar(1.0, angle);
        Self { psi: self.psi.map(|c| [c[0] * r, c[1] * r]), params: self.params }
    }
}

/// `ψ†ŝψ = ρs` with `ŝ = (ħ/2)σ`.
fn spin_bilinear(c: [Complex64; 2], hbar: f64) -> [f64; 3] {
    let ab = c[0].conj() * c[1];
    let h = 0.5 * hbar;
    [h * 2.0 * ab.re, h * 2.0 * ab.im, h * (c[0].norm_sqr() - c[1].norm_sqr())]
}

/// Spin vector of a constant two-component spinor (normalized first).
pub fn spinor_spin(chi: [Complex64; 2], hbar: f64) -> Result<[f64; 3]> {
    let n = chi[0].norm_sqr() + chi[1].norm_sqr();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidParameter("spinor must be finite and non-zero".into()));
    }
    Ok(spin_bilinear(chi, hbar).map(|v| v / n))
}

/// Local spin vector `s = ψ†ŝψ/ρ` and the density it was divided by.
#[derive(Debug, Clone)]
pub struct SpinVectorField {
    pub s: VectorField,
    pub rho: RealField,
    pub mask: NodeMask,
}

impl SpinVectorField {
    /// `ρs`, formed on demand.
    pub fn rho_s(&self) -> VectorField {
        self.s.scale_by(&self.rho).expect("same grid")
    }

    /// The spin vector if it is the same at every unmasked point (within
    /// `tol` per component).
    pub fn uniform_value(&self, tol: f64) -> Option<[f64; 3]> {
        let first = (0..self.s.len()).find(|&i| !self.mask.is_masked(i))?;
        let s0 = self.s.values()[first];
        let uniform = (0..self.s.len()).filter(|&i| !self.mask.is_masked(i)).all(|i| {
            let s = self.s.values()[i];
            (0..3).all(|k| (s[k] - s0[k]).abs() <= tol)
        });
        uniform.then_some(s0)
    }
}

pub fn spin_density(psi: &SpinorWavefunction) -> SpinVectorField {
    let rho = psi.density();
    let mask = NodeMask::from_density(&rho);
    let hbar = psi.params.hbar;
    let s = masked_map(psi.psi(), &mask, |i, c| {
        let b = spin_bilinear(c, hbar);
        let r = rho.values()[i];
        [b[0] / r, b[1] / r, b[2] / r]
    });
    SpinVectorField { s, rho, mask }
}

/// `ψ†ŝψ` evaluated without dividing by `ρ`.
fn rho_s_bilinear(psi: &SpinorWavefunction) -> VectorField {
    let hbar = psi.params.hbar;
    psi.psi().map(|c| spin_bilinear(c, hbar))
}

/// `ħ Im(ψ†∇ψ)`, summed over both components.
fn convective_momentum_flux(psi: &SpinorWavefunction, backend: Backend) -> Result<VectorField> {
    let up = madelung::convective_flux(&psi.component(0), psi.params.hbar, backend)?;
    let down = madelung::convective_flux(&psi.component(1), psi.params.hbar, backend)?;
    up.zip_map(&down, add)
}

fn check_vector_potential(psi: &SpinorWavefunction, a: &VectorField) -> Result<()> {
    a.check_finite("vector potential")?;
    psi.psi().same_grid(a)
}

/// Pauli current and its three terms.
#[derive(Debug, Clone)]
pub struct PauliCurrent {
    /// `(iħ/2m)[(∇ψ†)ψ − ψ†∇ψ]`.
    pub convective: VectorField,
    /// `−(eA/m)ψ†ψ`.
    pub diamagnetic: VectorField,
    /// `(1/m)∇×(ψ†ŝψ)`.
    pub spin: VectorField,
    pub total: VectorField,
}

pub fn pauli_current(psi: &SpinorWavefunction, a: &VectorField, backend: Backend) -> Result<PauliCurrent> {
    check_vector_potential(psi, a)?;
    let PhysicalParams { mass: m, charge: e, .. } = psi.params;
    let rho = psi.density();
    let convective = convective_momentum_flux(psi, backend)?.map(|f| [f[0] / m, f[1] / m, f[2] / m]);
    let diamagnetic = a.zip_map(&rho, |av, r| [-e * av[0] * r / m, -e * av[1] * r / m, -e * av[2] * r / m])?;
    let spin = curl(&rho_s_bilinear(psi), backend)?.map(|c| [c[0] / m, c[1] / m, c[2] / m]);
    let total = convective.zip_map(&diamagnetic, add)?.zip_map(&spin, add)?;
    Ok(PauliCurrent { convective, diamagnetic, spin, total })
}

/// Split of the local velocity into centre-of-mass drift and internal motion.
#[derive(Debug, Clone)]
pub struct VelocityDecomposition {
    /// `w = (p − eA)/m`.
    pub drift: VectorField,
    /// `V = ∇×(ρs)/(mρ)`.
    pub zbw: VectorField,
    /// `v = w + V`.
    pub total: VectorField,
    /// `∇ρ×s/(mρ)`, present when the spin vector is uniform.
    pub zbw_uniform: Option<VectorField>,
    pub mask: NodeMask,
}

/// Tolerance (in units of ħ) for treating a spin field as uniform.
pub const UNIFORM_SPIN_TOLERANCE: f64 = 1e-12;

pub fn velocity_decomposition(
    psi: &SpinorWavefunction,
    a: &VectorField,
    backend: Backend,
) -> Result<VelocityDecomposition> {
    check_vector_potential(psi, a)?;
    let PhysicalParams { hbar, mass: m, charge: e } = psi.params;
    let spin = spin_density(psi);
    let rho = &spin.rho;
    let mask = spin.mask.clone();
    let flux = convective_momentum_flux(psi, backend)?;
    let drift = masked_map(&flux, &mask, |i, f| {
        let r = rho.values()[i];
        let av = a.values()[i];
        [(f[0] / r - e * av[0]) / m, (f[1] / r - e * av[1]) / m, (f[2] / r - e * av[2]) / m]
    });
    let rot = curl(&rho_s_bilinear(psi), backend)?;
    let zbw = masked_map(&rot, &mask, |i, c| {
        let mr = m * rho.values()[i];
        [c[0] / mr, c[1] / mr, c[2] / mr]
    });
    let total = drift.zip_map(&zbw, add)?;
    let zbw_uniform = match spin.uniform_value(UNIFORM_SPIN_TOLERANCE * hbar) {
        Some(s) => Some(zbw_uniform_spin(rho, s, &psi.params, backend)?),
        None => None,
    };
    Ok(VelocityDecomposition { drift, zbw, total, zbw_uniform, mask })
}

/// Internal velocity for a spin vector constant in space, `∇ρ×s/(mρ)`.
pub fn zbw_uniform_spin(rho: &RealField, s: [f64; 3], params: &PhysicalParams, backend: Backend) -> Result<VectorField> {
    let mask = NodeMask::from_density(rho);
    let grad = gradient(rho, backend)?;
    let m = params.mass;
    Ok(masked_map(&grad, &mask, |i, g| {
        let c = cross(g, s);
        let mr = m * rho.values()[i];
        [c[0] / mr, c[1] / mr, c[2] / mr]
    }))
}

/// Residuals of `∇·(ρs) = 0` and `∇ρ·s = 0`.
#[derive(Debug, Clone)]
pub struct HestenesResidual {
    pub div_rho_s: RealField,
    pub grad_rho_dot_s: RealField,
    /// Sup norms of (`∇·(ρs)`, `∇ρ·s`).
    pub max_abs: [f64; 2],
    /// `(∫ρ r²)^{1/2}` for each residual, with `ρ` normalized to unit mass.
    pub weighted_l2: [f64; 2],
}

impl HestenesResidual {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.max_abs[0] <= tol && self.max_abs[1] <= tol
    }
}

pub fn hestenes_residual(rho: &RealField, s: &VectorField, backend: Backend) -> Result<HestenesResidual> {
    rho.same_grid(s)?;
    let rho_s = s.scale_by(rho)?;
    let div_rho_s = divergence(&rho_s, backend)?;
    let grad = gradient(rho, backend)?;
    let grad_rho_dot_s = grad.zip_map(s, dot)?;
    let mass = integrate(rho);
    let weighted = |r: &RealField| {
        if mass <= 0.0 {
            return 0.0;
        }
        let w = r.zip_map(rho, |x, d| d * x * x).expect("same grid");
        (integrate(&w) / mass).sqrt()
    };
    Ok(HestenesResidual {
        max_abs: [div_rho_s.max_abs(), grad_rho_dot_s.max_abs()],
        weighted_l2: [weighted(&div_rho_s), weighted(&grad_rho_dot_s)],
        div_rho_s,
        grad_rho_dot_s,
    })
}

/// Relative size of `∇ρ·s` (against `|∇ρ||s|`) below which the reduced
/// `V² = s²(∇ρ/mρ)²` form is accepted.
pub const REDUCTION_TOLERANCE: f64 = 1e-10;

/// `V²` from the spin vector in the general and reduced forms.
#[derive(Debug, Clone)]
pub struct VsqForms {
    /// `[(∇ρ)²s² − (∇ρ·s)²]/(mρ)²`.
    pub general: RealField,
    /// `s²(∇ρ/mρ)²`; meaningful only where `reduced_valid`.
    pub reduced: RealField,
    pub reduced_valid: Vec<bool>,
    /// Largest `|∇ρ·s|/(mρ)` over unmasked points.
    pub violation: f64,
    pub mask: NodeMask,
}

impl VsqForms {
    pub fn reduction_valid_everywhere(&self) -> bool {
        self.reduced_valid.iter().enumerate().all(|(i, &v)| v || self.mask.is_masked(i))
    }
}

pub fn vsq_from_spin(rho: &RealField, s: &VectorField, params: &PhysicalParams, backend: Backend) -> Result<VsqForms> {
    rho.same_grid(s)?;
    let mask = NodeMask::from_density(rho);
    let grad = gradient(rho, backend)?;
    let m = params.mass;
    let mut violation: f64 = 0.0;
    let mut valid = vec![false; rho.len()];
    let n = rho.len();
    let mut general = vec![0.0; n];
    let mut reduced = vec![0.0; n];
    for i in 0..n {
        if mask.is_masked(i) {
            continue;
        }
        let (g, sv) = (grad.values()[i], s.values()[i]);
        let mr2 = (m * rho.values()[i]).powi(2);
        let (gg, ss, gs) = (dot(g, g), dot(sv, sv), dot(g, sv));
        general[i] = (gg * ss - gs * gs) / mr2;
        reduced[i] = ss * gg / mr2;
        violation = violation.max(gs.abs() / (m * rho.values()[i]));
        valid[i] = gs.abs() <= REDUCTION_TOLERANCE * norm(g) * norm(sv);
    }
    let grid = *rho.grid();
    Ok(VsqForms {
        general: RealField::from_raw(grid, general),
        reduced: RealField::from_raw(grid, reduced),
        reduced_valid: valid,
        violation,
        mask,
    })
}

/// Energy split of a factorized state `√ρ e^{iφ/ħ}χ`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergyBudget {
    /// `∫ρ(∇φ)²/2m`.
    pub translational: f64,
    /// `∫ρ(ħ²/8m)(∇ρ/ρ)²`.
    pub internal: f64,
    /// `∫ρ·½m|V|²` with `V = ∇ρ×s/(mρ)`.
    pub internal_zbw: f64,
    /// `∫ρU`.
    pub potential: f64,
    /// translational + internal + potential (equals `⟨H⟩`).
    pub total: f64,
}

pub fn koenig_energy(
    psi: &ComplexField,
    chi: [Complex64; 2],
    u: &ExternalPotential,
    params: &PhysicalParams,
    backend: Backend,
) -> Result<EnergyBudget> {
    u.field().same_grid(psi)?;
    let fields = madelung::decompose(psi, params, backend)?;
    let rho = &fields.rho;
    let m = params.mass;
    let n = (chi[0].norm_sqr() + chi[1].norm_sqr()).sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidParameter("constant spinor must be non-zero".into()));
    }
    let s = spin_bilinear([chi[0] / n, chi[1] / n], params.hbar);

    let kinetic = fields.momentum.zip_map(rho, |p, r| r * dot(p, p) / (2.0 * m))?;
    let ikd = madelung::internal_kinetic_density(rho, params, backend)?;
    let internal = ikd.zip_map(rho, |k, r| k * r)?;
    let v = zbw_uniform_spin(rho, s, params, backend)?;
    let internal_zbw = v.zip_map(rho, |v, r| 0.5 * m * dot(v, v) * r)?;
    let potential = u.field().zip_map(rho, |x, r| x * r)?;
    let (translational, internal, internal_zbw, potential) =
        (integrate(&kinetic), integrate(&internal), integrate(&internal_zbw), integrate(&potential));
    Ok(EnergyBudget {
        translational,
        internal,
        internal_zbw,
        potential,
        total: translational + internal + potential,
    })
}

fn stationary_residual_with(psi: &ComplexField, energy: f64, coefficient: f64, backend: Backend) -> Result<RealField> {
    let lap = laplacian(psi, backend)?;
    lap.zip_map(psi, |l, z| (-coefficient * l - energy * z).norm())
}

/// `|−(2s²/m)△ψ − Eψ|` pointwise.
pub fn spin_schrodinger_residual(
    psi: &ComplexField,
    energy: f64,
    s_mag: f64,
    params: &PhysicalParams,
    backend: Backend,
) -> Result<RealField> {
    check_spin_magnitude(s_mag)?;
    stationary_residual_with(psi, energy, 2.0 * s_mag * s_mag / params.mass, backend)
}

/// `|−(ħ²/2m)△ψ − Eψ|` pointwise (free stationary equation).
pub fn stationary_schrodinger_residual(
    psi: &ComplexField,
    energy: f64,
    params: &PhysicalParams,
    backend: Backend,
) -> Result<RealField> {
    stationary_residual_with(psi, energy, params.hbar * params.hbar / (2.0 * params.mass), backend)
}

/// Hamilton–Jacobi residual with `ħ²/4` replaced by `s²`:
/// `∂φ/∂t + (∇φ)²/2m + (s²/m)[½(∇ρ/ρ)² − △ρ/ρ] + U`.
pub fn spin_hj_residual(
    s: &SnapshotTriple<'_>,
    u: &ExternalPotential,
    s_mag: f64,
    params: &PhysicalParams,
    backend: Backend,
) -> Result<RealField> {
    check_spin_magnitude(s_mag)?;
    hj_residual_with_coefficient(s, u, params, backend, s_mag * s_mag / params.mass)
}

fn check_spin_magnitude(s_mag: f64) -> Result<()> {
    if s_mag.is_finite() && s_mag >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("spin magnitude must be >= 0, got {s_mag}")))
    }
}
