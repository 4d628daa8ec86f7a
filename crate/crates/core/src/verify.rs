//! Identity battery: runs every hydrodynamic and spin identity the toolkit
//! implements on a fixed set of states and checks each against a versioned
//! tolerance table.
//!
//! Identities that are exact algebra on shared discrete derivatives carry the
//! same tolerance on both backends. Identities that compare two different
//! discretizations (the two quantum-potential forms, the stationary equation
//! on a plane wave) are exact under the spectral backend and carry an
//! `O(h²)` tolerance under `fd2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::evolve::{propagate, EvolutionConfig};
use crate::field::{cross, dot, norm, ComplexField, RealField, VectorField};
use crate::grid::{Grid, PhysicalParams};
use crate::madelung::{
    hj_residual, internal_kinetic_density, lagrangian_density, quantum_potential, zbw_speed, ExternalPotential,
    NodeMask,
};
use crate::ops::{divergence, Backend};
use crate::spin::{
    hestenes_residual, koenig_energy, pauli_current, spin_density, spin_hj_residual, spin_schrodinger_residual,
    velocity_decomposition, vsq_from_spin, SpinorWavefunction,
};
use crate::states::{self, lattice_wavevector};

pub const TOLERANCE_TABLE_VERSION: &str = "mzbw-tolerances-1";

/// Density (relative to its maximum) above which `1/ρ` comparisons are made.
pub const RESOLVED_THRESHOLD: f64 = 1e-6;

/// Smallest `∇ρ·s` sup norm that counts as a detected constraint violation.
pub const VIOLATION_DETECTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fd2Tolerance {
    /// Same bound as the spectral backend.
    Fixed { value: f64 },
    /// `coefficient · h²` with `h` the largest grid spacing.
    Order2 { coefficient: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToleranceRow {
    pub id: &'static str,
    /// Relative rows are scaled by the reference magnitude of the state.
    pub relative: bool,
    pub spectral: f64,
    pub fd2: Fd2Tolerance,
}

impl ToleranceRow {
    pub fn bound(&self, backend: Backend, h: f64) -> f64 {
        match (backend, self.fd2) {
            (Backend::Spectral, _) => self.spectral,
            (Backend::Fd2, Fd2Tolerance::Fixed { value }) => value,
            (Backend::Fd2, Fd2Tolerance::Order2 { coefficient }) => coefficient * h * h,
        }
    }
}

const fn fixed(id: &'static str, relative: bool, tol: f64) -> ToleranceRow {
    ToleranceRow { id, relative, spectral: tol, fd2: Fd2Tolerance::Fixed { value: tol } }
}

pub const QUANTUM_POTENTIAL_FORMS: &str = "quantum-potential-forms";
pub const INTERNAL_ENERGY_SPEED: &str = "internal-energy-vs-zbw-speed";
pub const ZBW_SPEED_MAGNITUDE: &str = "zbw-speed-vs-zbw-velocity";
pub const ZBW_CURL_GRADIENT: &str = "zbw-curl-vs-gradient-form";
pub const PAULI_CURRENT: &str = "pauli-current-vs-velocity";
pub const CROSS_SQUARE: &str = "cross-product-square";
pub const VSQ_FORMS: &str = "vsq-general-vs-reduced";
pub const HESTENES_PLANAR: &str = "hestenes-constraint-planar";
pub const HESTENES_DETECTED: &str = "hestenes-violation-detected";
pub const ROTOR_DIVERGENCE: &str = "rotor-divergence";
pub const SPIN_HJ: &str = "spin-hamilton-jacobi";
pub const SPIN_STATIONARY: &str = "spin-stationary-equation";
pub const KOENIG: &str = "koenig-split";
pub const LAGRANGIAN_FORMS: &str = "lagrangian-forms";

/// The tolerance table; see the module docs for the two row families.
pub const TOLERANCES: &[ToleranceRow] = &[
    ToleranceRow {
        id: QUANTUM_POTENTIAL_FORMS,
        relative: true,
        spectral: 1e-8,
        fd2: Fd2Tolerance::Order2 { coefficient: 20.0 },
    },
    fixed(INTERNAL_ENERGY_SPEED, true, 1e-12),
    fixed(ZBW_SPEED_MAGNITUDE, true, 1e-10),
    fixed(ZBW_CURL_GRADIENT, true, 1e-10),
    fixed(PAULI_CURRENT, false, 1e-8),
    fixed(CROSS_SQUARE, true, 1e-12),
    fixed(VSQ_FORMS, true, 1e-12),
    fixed(HESTENES_PLANAR, false, 1e-12),
    fixed(HESTENES_DETECTED, false, VIOLATION_DETECTION),
    fixed(ROTOR_DIVERGENCE, false, 1e-10),
    fixed(SPIN_HJ, false, 1e-14),
    ToleranceRow {
        id: SPIN_STATIONARY,
        relative: true,
        spectral: 1e-10,
        fd2: Fd2Tolerance::Order2 { coefficient: 1.0 },
    },
    fixed(KOENIG, true, 1e-10),
    fixed(LAGRANGIAN_FORMS, true, 1e-12),
];

pub fn tolerance(id: &str) -> &'static ToleranceRow {
    TOLERANCES.iter().find(|r| r.id == id).expect("identity id is in the table")
}

/// Deliberate corruption used to check that the battery notices failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    FlipQuantumPotentialSign,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub backend: Backend,
    /// Multiplies the battery's point counts.
    pub refinement: usize,
    pub params: PhysicalParams,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { backend: Backend::Spectral, refinement: 1, params: PhysicalParams::default(), seed: 20, fault: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityResult {
    pub id: String,
    pub state: String,
    pub max_abs_error: f64,
    /// Normalizer of relative rows (1 for absolute rows).
    pub scale: f64,
    /// Bound applied to `max_abs_error`.
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub tolerance_table: &'static str,
    pub tolerances: Vec<ToleranceRow>,
    pub backend: Backend,
    pub refinement: usize,
    pub entries: Vec<IdentityResult>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &IdentityResult> {
        self.entries.iter().filter(|e| !e.pass)
    }

    /// Largest error recorded for an identity across all states.
    pub fn max_error(&self, id: &str) -> Option<f64> {
        self.entries.iter().filter(|e| e.id == id).map(|e| e.max_abs_error).reduce(f64::max)
    }
}

/// One battery state with the potential it lives in.
pub struct BatteryState {
    pub name: String,
    pub psi: ComplexField,
    pub potential: ExternalPotential,
}

/// The scalar states every identity is checked on. Grids are scaled by
/// `opts.refinement`.
pub fn battery(opts: &VerifyOptions) -> Result<Vec<BatteryState>> {
    let p = &opts.params;
    let r = opts.refinement.max(1);
    let line = Grid::line(160 * r, 40.0)?;
    let plane = Grid::square(96 * r, 24.0)?;
    let free = |g: Grid| ExternalPotential::zero(g);
    let k = lattice_wavevector(&line, [3, 0, 0]);
    let k2 = lattice_wavevector(&plane, [1, 2, 0]);
    Ok(vec![
        BatteryState { name: "plane-wave-1d".into(), psi: states::plane_wave(line, k), potential: free(line) },
        BatteryState { name: "plane-wave-2d".into(), psi: states::plane_wave(plane, k2), potential: free(plane) },
        BatteryState {
            name: "gaussian-1d".into(),
            psi: states::gaussian(line, [0.0; 3], 1.0, [0.0; 3], p),
            potential: free(line),
        },
        BatteryState {
            name: "gaussian-2d".into(),
            psi: states::gaussian(plane, [0.3, -0.2, 0.0], 1.0, [0.0; 3], p),
            potential: free(plane),
        },
        BatteryState {
            name: "harmonic-ground-1d".into(),
            psi: states::harmonic_ground(line, 1.0, p),
            potential: ExternalPotential::harmonic(line, 1.0, p),
        },
        BatteryState {
            name: "boosted-gaussian-1d".into(),
            psi: states::gaussian(line, [0.5, 0.0, 0.0], 1.2, [1.0, 0.0, 0.0], p),
            potential: free(line),
        },
        BatteryState {
            name: "random-smooth-1d".into(),
            psi: states::random_smooth(line, 1.5, 3, 0.3, opts.seed),
            potential: free(line),
        },
        BatteryState {
            name: "random-smooth-2d".into(),
            psi: states::random_smooth(plane, 1.0, 2, 0.3, opts.seed + 1),
            potential: free(plane),
        },
    ])
}

struct Recorder<'a> {
    opts: &'a VerifyOptions,
    entries: Vec<IdentityResult>,
}

impl Recorder<'_> {
    fn record(&mut self, id: &str, state: &str, grid: &Grid, max_abs_error: f64, scale: f64) {
        let row = tolerance(id);
        let scale = if row.relative { scale.max(f64::MIN_POSITIVE) } else { 1.0 };
        let tolerance = row.bound(self.opts.backend, grid.max_spacing()) * scale;
        self.entries.push(IdentityResult {
            id: id.into(),
            state: state.into(),
            max_abs_error,
            scale,
            tolerance,
            pass: max_abs_error <= tolerance && max_abs_error.is_finite(),
        });
    }
}

fn max_diff_on(a: &RealField, b: &RealField, keep: &NodeMask) -> (f64, f64) {
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..a.len() {
        if keep.is_masked(i) {
            continue;
        }
        err = err.max((a.values()[i] - b.values()[i]).abs());
        scale = scale.max(a.values()[i].abs()).max(b.values()[i].abs());
    }
    (err, scale)
}

fn max_vec_diff_on(a: &VectorField, b: &VectorField, keep: &NodeMask) -> (f64, f64) {
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..a.len() {
        if keep.is_masked(i) {
            continue;
        }
        let (x, y) = (a.values()[i], b.values()[i]);
        err = err.max(norm([x[0] - y[0], x[1] - y[1], x[2] - y[2]]));
        scale = scale.max(norm(x)).max(norm(y));
    }
    (err, scale)
}

/// Scale for relative rows: quantities that vanish identically (plane waves)
/// are compared against 1.
fn unit_floor(scale: f64) -> f64 {
    scale.max(1.0)
}

fn check_state(st: &BatteryState, rec: &mut Recorder<'_>) -> Result<()> {
    let opts = rec.opts;
    let (b, p) = (opts.backend, &opts.params);
    let grid = *st.psi.grid();
    let name = st.name.as_str();
    let rho = st.psi.density();
    let resolved = NodeMask::with_relative_threshold(&rho, RESOLVED_THRESHOLD);

    // quantum potential, two closed forms
    let mut q = quantum_potential(&rho, p, b)?;
    if opts.fault == Some(Fault::FlipQuantumPotentialSign) {
        q.q = q.q.map(|v| -v);
    }
    let (err, scale) = max_diff_on(&q.q, &q.q_density_form, &resolved);
    rec.record(QUANTUM_POTENTIAL_FORMS, name, &grid, err, unit_floor(scale));

    // internal kinetic density = ½ m |V|²
    let ikd = internal_kinetic_density(&rho, p, b)?;
    let speed = zbw_speed(&rho, p, b)?;
    let half_mv2 = speed.map(|v| 0.5 * p.mass * v * v);
    let all = NodeMask::from_density(&rho);
    let (err, scale) = max_diff_on(&ikd, &half_mv2, &all);
    rec.record(INTERNAL_ENERGY_SPEED, name, &grid, err, unit_floor(scale));

    // spin-up factorized spinor: s uniform along z, ∇ρ ⟂ s on 1D/2D grids
    let chi = states::spin_up();
    let spinor = SpinorWavefunction::factorized(&st.psi, chi, *p)?;
    let a = VectorField::zeros(grid);
    let vel = velocity_decomposition(&spinor, &a, b)?;
    let sv = spin_density(&spinor);

    let zbw_mag = vel.zbw.norm();
    let (err, scale) = max_diff_on(&zbw_mag, &speed, &resolved);
    rec.record(ZBW_SPEED_MAGNITUDE, name, &grid, err, unit_floor(scale));

    let uniform = vel.zbw_uniform.as_ref().expect("spin-up spinor has uniform spin");
    let (err, scale) = max_vec_diff_on(&vel.zbw, uniform, &resolved);
    rec.record(ZBW_CURL_GRADIENT, name, &grid, err, unit_floor(scale));

    let j = pauli_current(&spinor, &a, b)?;
    let rho_v = vel.total.scale_by(&rho)?;
    let (err, _) = max_vec_diff_on(&rho_v, &j.total, &all);
    rec.record(PAULI_CURRENT, name, &grid, err, 1.0);

    let vsq = vsq_from_spin(&rho, &sv.s, p, b)?;
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..rho.len() {
        if vsq.mask.is_masked(i) || !vsq.reduced_valid[i] {
            continue;
        }
        err = err.max((vsq.general.values()[i] - vsq.reduced.values()[i]).abs());
        scale = scale.max(vsq.reduced.values()[i].abs());
    }
    rec.record(VSQ_FORMS, name, &grid, err, unit_floor(scale));

    let h = hestenes_residual(&sv.rho, &sv.s, b)?;
    rec.record(HESTENES_PLANAR, name, &grid, h.max_abs[0].max(h.max_abs[1]), 1.0);

    let rho_zbw = vel.zbw.scale_by(&rho)?;
    let div = divergence(&rho_zbw, b)?;
    rec.record(ROTOR_DIVERGENCE, name, &grid, div.max_abs(), 1.0);

    let budget = koenig_energy(&st.psi, chi, &st.potential, p, b)?;
    rec.record(KOENIG, name, &grid, (budget.internal - budget.internal_zbw).abs(), unit_floor(budget.internal.abs()));

    // snapshot triple from a short evolution
    let dt = 1e-3;
    let cfg = EvolutionConfig { dt, steps: 2, snapshot_stride: 1, potential: st.potential.clone(), params: *p };
    let series = propagate(&st.psi, &cfg)?;
    let triple = series.triple(1)?;
    let hj = hj_residual(&triple, &st.potential, p, b)?;
    let spin_hj = spin_hj_residual(&triple, &st.potential, 0.5 * p.hbar, p, b)?;
    let (err, _) = max_diff_on(&hj, &spin_hj, &all);
    rec.record(SPIN_HJ, name, &grid, err, 1.0);

    let lag = lagrangian_density(&triple, &st.potential, p, b)?;
    let (err, scale) = max_diff_on(&lag.hydrodynamic, &lag.koenig, &lag.mask);
    rec.record(LAGRANGIAN_FORMS, name, &grid, err, unit_floor(scale));
    Ok(())
}

fn check_plane_wave_stationary(rec: &mut Recorder<'_>) -> Result<()> {
    let p = rec.opts.params;
    let grid = Grid::line(160 * rec.opts.refinement.max(1), 40.0)?;
    let k = lattice_wavevector(&grid, [3, 0, 0]);
    let psi = states::plane_wave(grid, k);
    let s = 0.5 * p.hbar;
    let energy = 2.0 * s * s * k[0] * k[0] / p.mass;
    let r = spin_schrodinger_residual(&psi, energy, s, &p, rec.opts.backend)?;
    let amp = psi.values()[0].norm();
    rec.record(SPIN_STATIONARY, "plane-wave-1d", &grid, r.max_abs(), energy * amp);
    Ok(())
}

fn check_cross_square(rec: &mut Recorder<'_>) -> Result<()> {
    let grid = Grid::square(32, 4.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rec.opts.seed);
    let mut draw = || -> Vec<[f64; 3]> {
        (0..grid.len()).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect()
    };
    let (a, c) = (draw(), draw());
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (x, y) in a.iter().zip(&c) {
        let cr = cross(*x, *y);
        let lhs = dot(cr, cr);
        let rhs = dot(*x, *x) * dot(*y, *y) - dot(*x, *y).powi(2);
        err = err.max((lhs - rhs).abs());
        scale = scale.max(dot(*x, *x) * dot(*y, *y));
    }
    rec.record(CROSS_SQUARE, "random-vectors", &grid, err, scale);
    Ok(())
}

fn check_hestenes_violation(rec: &mut Recorder<'_>) -> Result<()> {
    let p = rec.opts.params;
    let grid = Grid::cube(24 * rec.opts.refinement.max(1), 12.0)?;
    let psi = states::gaussian(grid, [0.0; 3], 1.0, [0.0; 3], &p);
    let spinor = SpinorWavefunction::factorized(&psi, states::spin_up(), p)?;
    let sv = spin_density(&spinor);
    let h = hestenes_residual(&sv.rho, &sv.s, rec.opts.backend)?;
    // inverted sense: pass when the violation is large enough to be seen
    let row = tolerance(HESTENES_DETECTED);
    let bound = row.bound(rec.opts.backend, grid.max_spacing());
    let detected = h.max_abs[1];
    rec.entries.push(IdentityResult {
        id: HESTENES_DETECTED.into(),
        state: "gaussian-3d".into(),
        max_abs_error: detected,
        scale: 1.0,
        tolerance: bound,
        pass: detected > bound,
    });
    Ok(())
}

/// Runs the whole battery.
pub fn run(opts: &VerifyOptions) -> Result<VerifyReport> {
    opts.params.validate()?;
    let mut rec = Recorder { opts, entries: Vec::new() };
    for st in battery(opts)? {
        check_state(&st, &mut rec)?;
    }
    check_plane_wave_stationary(&mut rec)?;
    check_cross_square(&mut rec)?;
    check_hestenes_violation(&mut rec)?;
    let pass = rec.entries.iter().all(|e| e.pass);
    Ok(VerifyReport {
        tolerance_table: TOLERANCE_TABLE_VERSION,
        tolerances: TOLERANCES.to_vec(),
        backend: opts.backend,
        refinement: opts.refinement.max(1),
        entries: rec.entries,
        pass,
    })
}
