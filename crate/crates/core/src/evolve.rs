//! Time evolution of scalar wavefunctions by symmetric (Strang) operator
//! splitting: half a potential step, a full kinetic step applied in Fourier
//! space, then another half potential step. Every factor is a pure phase, so
//! the scheme is unitary to round-off and exact for free motion.

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, RealField};
use crate::grid::{Grid, PhysicalParams};
use crate::madelung::{ExternalPotential, SnapshotTriple};
use crate::ops::{fft_all_axes, integrate, laplacian, Backend};
use crate::states::norm_squared;

#[derive(Debug, Clone)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub steps: usize,
    pub snapshot_stride: usize,
    pub potential: ExternalPotential,
    pub params: PhysicalParams,
}

impl EvolutionConfig {
    pub fn free(grid: Grid, dt: f64, steps: usize, snapshot_stride: usize) -> Self {
        Self {
            dt,
            steps,
            snapshot_stride,
            potential: ExternalPotential::zero(grid),
            params: PhysicalParams::default(),
        }
    }

    pub fn total_time(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be positive".into()));
        }
        if self.snapshot_stride == 0 || self.steps % self.snapshot_stride != 0 {
            return Err(Error::InvalidParameter(format!(
                "snapshot stride {} must divide step count {}",
                self.snapshot_stride, self.steps
            )));
        }
        Ok(())
    }
}

/// Norm, energy, mean position and per-axis width of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub norm: f64,
    pub energy: f64,
    pub mean: [f64; 3],
    pub width: [f64; 3],
}

/// `⟨ψ|H|ψ⟩` uses the spectral Laplacian; moments use the lattice coordinates.
pub fn observables(psi: &ComplexField, u: &ExternalPotential, params: &PhysicalParams) -> Result<Observables> {
    psi.check_finite("wavefunction")?;
    u.field().same_grid(psi)?;
    let grid = *psi.grid();
    let rho = psi.density();
    let norm = integrate(&rho);
    let lap = laplacian(psi, Backend::Spectral)?;
    let kin = params.hbar * params.hbar / (2.0 * params.mass);
    let e: Vec<f64> = (0..grid.len())
        .map(|i| (psi.values()[i].conj() * (-kin * lap.values()[i])).re + u.field().values()[i] * rho.values()[i])
        .collect();
    let energy = integrate(&RealField::from_raw(grid, e)) / norm;

    let mut mean = [0.0; 3];
    let mut width = [0.0; 3];
    for axis in 0..grid.dims() {
        let m1 = integrate(&RealField::from_fn(grid, |x| x[axis]).zip_map(&rho, |x, r| x * r)?) / norm;
        let m2 = integrate(&RealField::from_fn(grid, |x| x[axis] * x[axis]).zip_map(&rho, |x, r| x * r)?) / norm;
        mean[axis] = m1;
        width[axis] = (m2 - m1 * m1).max(0.0).sqrt();
    }
    Ok(Observables { norm, energy, mean, width })
}

/// Precomputed phase factors for one split step.
pub struct SplitStepPropagator {
    grid: Grid,
    kinetic: Vec<Complex64>,
    half_potential: Vec<Complex64>,
}

impl SplitStepPropagator {
    pub fn new(grid: Grid, cfg: &EvolutionConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.potential.field().check_finite("external potential")?;
        if *cfg.potential.field().grid() != grid {
            return Err(Error::GridMismatch);
        }
        for axis in 0..grid.dims() {
            let points = grid.points()[axis];
            if points % 2 != 0 {
                return Err(Error::OddSpectralAxis { axis, points });
            }
        }
        let PhysicalParams { hbar, mass, .. } = cfg.params;
        let norm = 1.0 / grid.len() as f64;
        let mut max_phase: f64 = 0.0;
        let kinetic = (0..grid.len())
            .map(|idx| {
                let m = grid.multi_index(idx);
                let k2: f64 = (0..grid.dims()).map(|a| grid.wavenumber(a, m[a]).powi(2)).sum();
                let phase = hbar * k2 * cfg.dt / (2.0 * mass);
                max_phase = max_phase.max(phase);
                Complex64::from_polar(norm, -phase)
            })
            .collect();
        if max_phase > std::f64::consts::PI {
            warn!("kinetic phase per step reaches {max_phase:.2} rad (> π); dt is too large for this grid");
        }
        let half_potential = cfg
            .potential
            .field()
            .values()
            .iter()
            .map(|&u| Complex64::from_polar(1.0, -u * cfg.dt / (2.0 * hbar)))
            .collect();
        Ok(Self { grid, kinetic, half_potential })
    }

    pub fn step(&self, psi: &mut [Complex64]) {
        for (z, v) in psi.iter_mut().zip(&self.half_potential) {
            *z *= v;
        }
        fft_all_axes(&self.grid, psi, false);
        for (z, k) in psi.iter_mut().zip(&self.kinetic) {
            *z *= k;
        }
        fft_all_axes(&self.grid, psi, true);
        for (z, v) in psi.iter_mut().zip(&self.half_potential) {
            *z *= v;
        }
    }
}

/// States at evenly spaced times plus their conserved quantities.
#[derive(Debug, Clone)]
pub struct SnapshotSeries {
    pub times: Vec<f64>,
    pub states: Vec<ComplexField>,
    pub conserved: Vec<Observables>,
}

impl SnapshotSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Snapshot spacing (uniform by construction).
    pub fn spacing(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Triple centred on snapshot `i` (needs `0 < i < len − 1`).
    pub fn triple(&self, i: usize) -> Result<SnapshotTriple<'_>> {
        if i == 0 || i + 1 >= self.len() {
            return Err(Error::InvalidParameter(format!(
                "snapshot {i} has no neighbours in a series of {}",
                self.len()
            )));
        }
        SnapshotTriple::new(&self.states[i - 1], &self.states[i], &self.states[i + 1], self.spacing())
    }

    pub fn max_norm_drift(&self) -> f64 {
        let n0 = self.conserved[0].norm;
        self.conserved.iter().map(|o| (o.norm - n0).abs()).fold(0.0, f64::max)
    }

    pub fn max_relative_energy_drift(&self) -> f64 {
        let e0 = self.conserved[0].energy;
        self.conserved.iter().map(|o| ((o.energy - e0) / e0).abs()).fold(0.0, f64::max)
    }
}

/// Evolves `psi0` and records every `snapshot_stride`-th state, starting at t = 0.
pub fn propagate(psi0: &ComplexField, cfg: &EvolutionConfig) -> Result<SnapshotSeries> {
    psi0.check_finite("initial state")?;
    let n = norm_squared(psi0);
    if (n - 1.0).abs() > 1e-6 {
        warn!("initial state norm is {n}, expected 1");
    }
    let grid = *psi0.grid();
    let prop = SplitStepPropagator::new(grid, cfg)?;
    let mut psi = psi0.values().to_vec();
    let record = |psi: &[Complex64]| -> Result<(ComplexField, Observables)> {
        let f = ComplexField::from_values(grid, psi.to_vec())?;
        let o = observables(&f, &cfg.potential, &cfg.params)?;
        Ok((f, o))
    };
    let mut series = SnapshotSeries { times: vec![], states: vec![], conserved: vec![] };
    let (f, o) = record(&psi)?;
    series.times.push(0.0);
    series.states.push(f);
    series.conserved.push(o);
    for step in 1..=cfg.steps {
        prop.step(&mut psi);
        if step % cfg.snapshot_stride == 0 {
            let (f, o) = record(&psi)?;
            series.times.push(step as f64 * cfg.dt);
            series.states.push(f);
            series.conserved.push(o);
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{gaussian, harmonic_ground, lattice_wavevector, plane_wave};

    #[test]
    fn config_validation() {
        let g = Grid::line(16, 1.0).unwrap();
        assert!(EvolutionConfig::free(g, 0.0, 10, 1).validate().is_err());
        assert!(EvolutionConfig::free(g, -1e-3, 10, 1).validate().is_err());
        assert!(EvolutionConfig::free(g, 1e-3, 10, 3).validate().is_err());
        assert!(EvolutionConfig::free(g, 1e-3, 0, 1).validate().is_err());
        assert!(EvolutionConfig::free(g, 1e-3, 10, 5).validate().is_ok());
    }

    #[test]
    fn plane_wave_is_exact() {
        let g = Grid::line(64, 10.0).unwrap();
        let k = lattice_wavevector(&g, [2, 0, 0]);
        let cfg = EvolutionConfig::free(g, 1e-2, 100, 50);
        let series = propagate(&plane_wave(g, k), &cfg).unwrap();
        let t = series.times[2];
        let exact = plane_wave(g, k).scaled(Complex64::from_polar(1.0, -k[0] * k[0] * t / 2.0));
        let err = series.states[2].zip_map(&exact, |a, b| (a - b).norm()).unwrap().max_abs();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn harmonic_ground_state_is_stationary() {
        let g = Grid::line(128, 20.0).unwrap();
        let params = PhysicalParams::default();
        let psi0 = harmonic_ground(g, 1.0, &params);
        let cfg = EvolutionConfig {
            dt: 1e-3,
            steps: 1000,
            snapshot_stride: 1000,
            potential: ExternalPotential::harmonic(g, 1.0, &params),
            params,
        };
        let series = propagate(&psi0, &cfg).unwrap();
        let last = series.states.last().unwrap();
        let overlap: Complex64 = psi0.values().iter().zip(last.values()).map(|(a, b)| a.conj() * b).sum::<Complex64>()
            * g.cell_volume();
        assert!(overlap.norm() > 1.0 - 1e-8, "{}", overlap.norm());
        assert!((overlap.arg() + 0.5).abs() < 1e-5, "{}", overlap.arg());
    }

    #[test]
    fn observables_of_known_states() {
        let g = Grid::line(256, 40.0).unwrap();
        let p = PhysicalParams::default();
        let o = observables(&gaussian(g, [1.0, 0.0, 0.0], 1.0, [0.0; 3], &p), &ExternalPotential::zero(g), &p).unwrap();
        assert!((o.norm - 1.0).abs() < 1e-12);
        assert!((o.mean[0] - 1.0).abs() < 1e-12);
        assert!((o.width[0] - 1.0).abs() < 1e-12);
        let o = observables(&harmonic_ground(g, 1.0, &p), &ExternalPotential::harmonic(g, 1.0, &p), &p).unwrap();
        assert!((o.energy - 0.5).abs() < 1e-8);
        let k = lattice_wavevector(&g, [3, 0, 0]);
        let o = observables(&plane_wave(g, k), &ExternalPotential::zero(g), &p).unwrap();
        assert!((o.energy - k[0] * k[0] / 2.0).abs() < 1e-12);
    }

    #[test]
    fn triple_requires_neighbours() {
        let g = Grid::line(16, 4.0).unwrap();
        let psi = plane_wave(g, [0.0; 3]);
        let series = propagate(&psi, &EvolutionConfig::free(g, 1e-3, 4, 1)).unwrap();
        assert_eq!(series.len(), 5);
        assert!(series.triple(0).is_err());
        assert!(series.triple(4).is_err());
        assert!(series.triple(2).is_ok());
    }
}
