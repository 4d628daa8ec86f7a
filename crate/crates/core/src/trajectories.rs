//! Bohmian transport of particle ensembles.
//!
//! Particles move along either the drift velocity `w = p/m` (the centre of
//! mass, `ξ`) or the total velocity `v = w + V` with `V = ∇ρ×s/(mρ)` for a
//! uniform spin `s` (the charge, `x = ξ + X`). The internal coordinate `X` is
//! the difference of paired total and drift paths from the same seed.
//!
//! Velocities are interpolated multilinearly in space (periodically) and
//! linearly in time between snapshots; paths are integrated with classical
//! fourth-order Runge–Kutta. A particle whose step would touch a node cell is
//! frozen in place and flagged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{add, scale, sub, ComplexField, RealField, VectorField};
use crate::grid::{Grid, PhysicalParams};
use crate::madelung::{decompose, NodeMask};
use crate::evolve::SnapshotSeries;
use crate::ops::Backend;
use crate::spin::zbw_uniform_spin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    Drift,
    Total,
}

impl std::fmt::Display for TransportMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransportMode::Drift => "drift",
            TransportMode::Total => "total",
        })
    }
}

/// Velocity as a function of time and position; `None` inside node regions.
pub trait VelocitySource: Sync {
    fn velocity(&self, t: f64, x: [f64; 3]) -> Option<[f64; 3]>;
}

/// Closed-form velocity field, mainly for oracles.
pub struct AnalyticVelocity<F>(pub F);

impl<F: Fn(f64, [f64; 3]) -> [f64; 3] + Sync> VelocitySource for AnalyticVelocity<F> {
    fn velocity(&self, t: f64, x: [f64; 3]) -> Option<[f64; 3]> {
        Some((self.0)(t, x))
    }
}

/// Corner indices and weights of the multilinear stencil around `x`.
pub(crate) fn stencil(grid: &Grid, x: [f64; 3]) -> ([usize; 8], [f64; 8], usize) {
    let mut idx = [[0usize; 2]; 3];
    let mut w = [[1.0f64, 0.0]; 3];
    for axis in 0..grid.dims() {
        let n = grid.points()[axis];
        let u = (x[axis] + 0.5 * grid.extent()[axis]) / grid.spacing()[axis];
        let base = u.floor();
        let frac = u - base;
        let i0 = (base as i64).rem_euclid(n as i64) as usize;
        idx[axis] = [i0, (i0 + 1) % n];
        w[axis] = [1.0 - frac, frac];
    }
    let count = 1usize << grid.dims();
    let mut corners = [0usize; 8];
    let mut weights = [0.0f64; 8];
    for c in 0..count {
        let b = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
        corners[c] = grid.index([idx[0][b[0]], idx[1][b[1]], idx[2][b[2]]]);
        weights[c] = w[0][b[0]] * w[1][b[1]] * w[2][b[2]];
    }
    (corners, weights, count)
}

/// Multilinear periodic interpolation of a real field.
pub fn interpolate(f: &RealField, x: [f64; 3]) -> f64 {
    let (c, w, n) = stencil(f.grid(), x);
    (0..n).map(|k| w[k] * f.values()[c[k]]).sum()
}

struct Frame {
    velocity: VectorField,
    mask: NodeMask,
}

/// Velocity fields on the lattice at a sequence of equally spaced times.
pub struct GridVelocity {
    grid: Grid,
    t0: f64,
    spacing: f64,
    frames: Vec<Frame>,
}

impl GridVelocity {
    fn frame(psi: &ComplexField, mode: TransportMode, spin: Option<[f64; 3]>, params: &PhysicalParams, backend: Backend) -> Result<Frame> {
        let fields = decompose(psi, params, backend)?;
        let m = params.mass;
        let drift = fields.momentum.map(|p| [p[0] / m, p[1] / m, p[2] / m]);
        let velocity = match mode {
            TransportMode::Drift => drift,
            TransportMode::Total => {
                let s = spin.ok_or_else(|| Error::InvalidParameter("total-mode transport needs a spin vector".into()))?;
                drift.zip_map(&zbw_uniform_spin(&fields.rho, s, params, backend)?, add)?
            }
        };
        Ok(Frame { velocity, mask: fields.mask })
    }

    pub fn from_series(
        series: &SnapshotSeries,
        mode: TransportMode,
        spin: Option<[f64; 3]>,
        params: &PhysicalParams,
        backend: Backend,
    ) -> Result<Self> {
        if series.len() < 2 {
            return Err(Error::InvalidParameter("need at least two snapshots".into()));
        }
        let frames = series
            .states
            .iter()
            .map(|psi| Self::frame(psi, mode, spin, params, backend))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: *series.states[0].grid(), t0: series.times[0], spacing: series.spacing(), frames })
    }

    /// Time-independent field from a single state.
    pub fn from_static(
        psi: &ComplexField,
        mode: TransportMode,
        spin: Option<[f64; 3]>,
        params: &PhysicalParams,
        backend: Backend,
    ) -> Result<Self> {
        let frame = Self::frame(psi, mode, spin, params, backend)?;
        Ok(Self { grid: *psi.grid(), t0: 0.0, spacing: f64::INFINITY, frames: vec![frame] })
    }

    /// Latest time covered, or infinity for static fields.
    pub fn t_end(&self) -> f64 {
        if self.frames.len() == 1 {
            f64::INFINITY
        } else {
            self.t0 + self.spacing * (self.frames.len() - 1) as f64
        }
    }

    fn sample(&self, frame: &Frame, x: [f64; 3]) -> Option<[f64; 3]> {
        let (c, w, n) = stencil(&self.grid, x);
        let mut v = [0.0; 3];
        for k in 0..n {
            if frame.mask.is_masked(c[k]) {
                return None;
            }
            v = add(v, scale(frame.velocity.values()[c[k]], w[k]));
        }
        Some(v)
    }
}

impl VelocitySource for GridVelocity {
    fn velocity(&self, t: f64, x: [f64; 3]) -> Option<[f64; 3]> {
        if self.frames.len() == 1 {
            return self.sample(&self.frames[0], x);
        }
        let u = (t - self.t0) / self.spacing;
        let i = (u.floor().max(0.0) as usize).min(self.frames.len() - 2);
        let a = u - i as f64;
        let v0 = self.sample(&self.frames[i], x)?;
        let v1 = self.sample(&self.frames[i + 1], x)?;
        Some(add(scale(v0, 1.0 - a), scale(v1, a)))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdvectConfig {
    pub t0: f64,
    pub t_end: f64,
    /// Integrator step; adjusted down so that it divides the interval.
    pub step: f64,
    /// Record every n-th step (the first and last positions are always kept).
    pub record_every: usize,
}

impl AdvectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > self.t0 && self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need t_end > t0 and step > 0 (t0 {}, t_end {}, step {})",
                self.t0, self.t_end, self.step
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be positive".into()));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        ((self.t_end - self.t0) / self.step).ceil().max(1.0) as usize
    }
}

/// Paths of an ensemble sharing one time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub mode: TransportMode,
    pub seed: Option<u64>,
    pub seeds: Vec<[f64; 3]>,
    pub times: Vec<f64>,
    pub paths: Vec<Vec<[f64; 3]>>,
    pub frozen: Vec<bool>,
    /// Time at which each frozen particle stopped.
    pub frozen_at: Vec<Option<f64>>,
}

impl TrajectorySet {
    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    pub fn endpoints(&self) -> Vec<[f64; 3]> {
        self.paths.iter().map(|p| *p.last().expect("non-empty path")).collect()
    }

    /// True if, along axis 0, particle order never changes between records.
    pub fn preserves_ordering(&self) -> bool {
        let mut order: Vec<usize> = (0..self.seeds.len()).collect();
        order.sort_by(|&a, &b| self.seeds[a][0].total_cmp(&self.seeds[b][0]));
        (0..self.times.len())
            .all(|k| order.windows(2).all(|w| self.paths[w[0]][k][0] <= self.paths[w[1]][k][0]))
    }
}

fn rk4_step(src: &dyn VelocitySource, t: f64, x: [f64; 3], h: f64) -> Option<[f64; 3]> {
    let k1 = src.velocity(t, x)?;
    let k2 = src.velocity(t + 0.5 * h, add(x, scale(k1, 0.5 * h)))?;
    let k3 = src.velocity(t + 0.5 * h, add(x, scale(k2, 0.5 * h)))?;
    let k4 = src.velocity(t + h, add(x, scale(k3, h)))?;
    let incr = add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4));
    Some(add(x, scale(incr, h / 6.0)))
}

/// Integrates every seed through `source`. Particles are independent and are
/// processed in parallel; results do not depend on the thread count.
pub fn advect(
    seeds: &[[f64; 3]],
    source: &dyn VelocitySource,
    mode: TransportMode,
    cfg: &AdvectConfig,
) -> Result<TrajectorySet> {
    cfg.validate()?;
    let steps = cfg.steps();
    let h = (cfg.t_end - cfg.t0) / steps as f64;
    let recorded: Vec<usize> = (0..=steps).filter(|k| k % cfg.record_every == 0 || *k == steps).collect();
    let times = recorded.iter().map(|&k| cfg.t0 + k as f64 * h).collect();
    let results: Vec<(Vec<[f64; 3]>, Option<f64>)> = seeds
        .par_iter()
        .map(|&x0| {
            let mut path = Vec::with_capacity(recorded.len());
            path.push(x0);
            let mut x = x0;
            let mut frozen_at = None;
            for k in 1..=steps {
                if frozen_at.is_none() {
                    let t = cfg.t0 + (k - 1) as f64 * h;
                    match rk4_step(source, t, x, h) {
                        Some(next) => x = next,
                        None => frozen_at = Some(t),
                    }
                }
                if k % cfg.record_every == 0 || k == steps {
                    path.push(x);
                }
            }
            (path, frozen_at)
        })
        .collect();
    let (paths, frozen_at): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let frozen = frozen_at.iter().map(Option::is_some).collect();
    Ok(TrajectorySet { mode, seed: None, seeds: seeds.to_vec(), times, paths, frozen, frozen_at })
}

/// `X = x − ξ` per particle and record, from paired total and drift runs.
pub fn internal_displacement(total: &TrajectorySet, drift: &TrajectorySet) -> Result<Vec<Vec<[f64; 3]>>> {
    if total.seeds != drift.seeds || total.times != drift.times {
        return Err(Error::InvalidParameter("trajectory sets do not share seeds and times".into()));
    }
    Ok(total
        .paths
        .iter()
        .zip(&drift.paths)
        .map(|(a, b)| a.iter().zip(b).map(|(x, xi)| sub(*x, *xi)).collect())
        .collect())
}

fn check_sampling_density(rho: &RealField) -> Result<()> {
    rho.check_finite("sampling density")?;
    if let Some(index) = rho.values().iter().position(|&r| r < 0.0) {
        return Err(Error::NegativeDensity { index, value: rho.values()[index] });
    }
    if rho.max() <= 0.0 {
        return Err(Error::ZeroWavefunction);
    }
    Ok(())
}

/// Draws `n` positions distributed as `rho`. In 1D the density is treated as
/// constant on each lattice cell (centred on its node) and sampled by inverse
/// CDF; in 2D/3D by rejection against the multilinear interpolant.
pub fn sample_initial(rho: &RealField, n: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    check_sampling_density(rho)?;
    let grid = *rho.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if grid.dims() == 1 {
        let cdf = cell_cdf(rho.values());
        let h = grid.spacing()[0];
        return Ok((0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                let (cell, frac) = invert_cdf(&cdf, u);
                [grid.coord(0, cell) - 0.5 * h + frac * h, 0.0, 0.0]
            })
            .collect());
    }
    let max = rho.max();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut x = [0.0; 3];
        for axis in 0..grid.dims() {
            let half = 0.5 * grid.extent()[axis];
            x[axis] = rng.gen_range(-half..half);
        }
        if rng.gen::<f64>() * max < interpolate(rho, x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Normalized cumulative masses at cell right edges, starting with 0.
fn cell_cdf(masses: &[f64]) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(masses.len() + 1);
    let mut acc = 0.0;
    cdf.push(0.0);
    for m in masses {
        acc += m;
        cdf.push(acc);
    }
    for c in cdf.iter_mut() {
        *c /= acc;
    }
    cdf
}

fn invert_cdf(cdf: &[f64], u: f64) -> (usize, f64) {
    let cell = cdf.partition_point(|&c| c <= u).saturating_sub(1).min(cdf.len() - 2);
    let width = cdf[cell + 1] - cdf[cell];
    let frac = if width > 0.0 { ((u - cdf[cell]) / width).clamp(0.0, 1.0) } else { 0.5 };
    (cell, frac)
}

/// Two-sided Kolmogorov–Smirnov distance between samples and a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    /// KS distance of each active axis marginal.
    pub ks: Vec<f64>,
    pub critical: f64,
    pub samples: usize,
    pub frozen_excluded: usize,
    pub pass: bool,
}

/// Compares trajectory endpoints with `rho_t`, axis by axis, using the
/// cell-constant marginal CDF of the lattice density.
pub fn equivariance_check(traj: &TrajectorySet, rho_t: &RealField) -> Result<EquivarianceReport> {
    check_sampling_density(rho_t)?;
    let grid = *rho_t.grid();
    let ends: Vec<[f64; 3]> = traj
        .endpoints()
        .into_iter()
        .zip(&traj.frozen)
        .filter(|(_, f)| !**f)
        .map(|(x, _)| x)
        .collect();
    let mut ks = Vec::new();
    for axis in 0..grid.dims() {
        let n = grid.points()[axis];
        let mut marginal = vec![0.0; n];
        for (idx, r) in rho_t.values().iter().enumerate() {
            marginal[grid.multi_index(idx)[axis]] += r;
        }
        let cdf = cell_cdf(&marginal);
        let (h, lo) = (grid.spacing()[axis], grid.coord(axis, 0) - 0.5 * grid.spacing()[axis]);
        let eval = |x: f64| {
            let u = (x - lo) / h;
            if u <= 0.0 {
                return 0.0;
            }
            if u >= n as f64 {
                return 1.0;
            }
            let cell = u.floor() as usize;
            cdf[cell] + (u - cell as f64) * (cdf[cell + 1] - cdf[cell])
        };
        let xs: Vec<f64> = ends.iter().map(|x| x[axis]).collect();
        ks.push(ks_statistic(&xs, eval));
    }
    let critical = ks_critical_1pct(ends.len());
    let pass = ks.iter().all(|&d| d < critical);
    Ok(EquivarianceReport { ks, critical, samples: ends.len(), frozen_excluded: traj.frozen_count(), pass })
}
