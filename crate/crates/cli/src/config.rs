//! Run configuration: one TOML file per run. Every table rejects unknown keys
//! and every value is range-checked before any computation starts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use mzbw_core::io::{self, FieldKind};
use mzbw_core::madelung::ExternalPotential;
use mzbw_core::states;
use mzbw_core::trajectories::TransportMode;
use mzbw_core::{ComplexField, Grid, PhysicalParams, SpinorField};
use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub params: ParamsSpec,
    /// RNG seed for sampling and random states; `--seed` overrides it.
    pub seed: Option<u64>,
    pub state: Option<StateSpec>,
    pub spinor: Option<SpinorSpec>,
    #[serde(default)]
    pub potential: PotentialSpec,
    pub spin: Option<SpinSpec>,
    pub evolution: Option<EvolutionSpec>,
    pub trajectories: Option<TrajectorySpec>,
    pub verify: Option<VerifySpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: Vec<usize>,
    pub extent: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default)]
    pub charge: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ParamsSpec {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0, charge: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateSpec {
    /// `k` must be a lattice wavevector of the grid.
    PlaneWave { k: Vec<f64> },
    Gaussian {
        center: Vec<f64>,
        sigma: f64,
        #[serde(default)]
        boost: Option<Vec<f64>>,
    },
    HarmonicGround { omega: f64 },
    RandomSmooth { sigma: f64, modes: usize, amplitude: f64 },
    /// A complex or spinor field file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinorSpec {
    pub theta: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    None,
    Harmonic { omega: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSpec {
    /// Bound on the sup norms of the two constraint residuals.
    #[serde(default = "default_hestenes_tolerance")]
    pub hestenes_tolerance: f64,
}

fn default_hestenes_tolerance() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// Evaluate the hydrodynamic residuals at every interior snapshot.
    #[serde(default)]
    pub residuals: bool,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub mode: TransportMode,
    /// Number of particles sampled from the initial density.
    pub particles: Option<usize>,
    /// Explicit seed positions, one entry per active axis each.
    pub seeds: Option<Vec<Vec<f64>>>,
    pub step: f64,
    #[serde(default = "default_stride")]
    pub record_every: usize,
    pub t_end: Option<f64>,
    /// Snapshot directory written by `evolve`.
    pub series: Option<PathBuf>,
    /// For total mode, also run drift mode from the same seeds and write the
    /// internal displacement.
    #[serde(default)]
    pub paired: bool,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "default_refinement")]
    pub refinement: usize,
    /// Self-test hook: corrupts one quantity so the report must flag it.
    #[serde(default)]
    pub fault: Option<FaultSpec>,
}

fn default_refinement() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultSpec {
    FlipQuantumPotentialSign,
}

pub fn parse(text: &str) -> CliResult<RunConfig> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

/// Reads and parses a config file. Relative paths inside it are resolved
/// against the file's directory.
pub fn load(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let Some(StateSpec::File { path }) = &mut cfg.state {
        fix(path);
    }
    if let PotentialSpec::File { path } = &mut cfg.potential {
        fix(path);
    }
    if let Some(TrajectorySpec { series: Some(p), .. }) = &mut cfg.trajectories {
        fix(p);
    }
    Ok(cfg)
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(format!("{name} must be positive and finite, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(format!("{name} must be finite, got {v}")))
    }
}

/// Pads a per-axis list to three entries after checking its length.
fn per_axis(name: &str, v: &[f64], dims: usize) -> CliResult<[f64; 3]> {
    if v.len() != dims {
        return Err(bad(format!("{name} needs {dims} entries, got {}", v.len())));
    }
    let mut out = [0.0; 3];
    for (o, &x) in out.iter_mut().zip(v) {
        *o = finite(name, x)?;
    }
    Ok(out)
}

/// Initial state as loaded or built.
#[derive(Debug, Clone)]
pub enum InitialState {
    Scalar(ComplexField),
    Spinor(SpinorField),
}

/// Everything a command needs, validated.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid,
    pub params: PhysicalParams,
    pub seed: u64,
    pub state: Option<InitialState>,
    pub spinor: Option<[Complex64; 2]>,
    pub potential: ExternalPotential,
}

impl Setup {
    pub fn scalar(&self) -> CliResult<&ComplexField> {
        match &self.state {
            Some(InitialState::Scalar(psi)) => Ok(psi),
            Some(InitialState::Spinor(_)) => Err(bad("this command needs a scalar state, the file holds a spinor")),
            None => Err(bad("missing [state] table")),
        }
    }
}

fn grid_from_spec(spec: &GridSpec) -> CliResult<Grid> {
    if spec.points.len() != spec.extent.len() {
        return Err(bad("grid.points and grid.extent must have the same length"));
    }
    Grid::new(&spec.points, &spec.extent).map_err(|e| bad(e.to_string()))
}

fn file_header(path: &Path) -> CliResult<io::Header> {
    let bytes = std::fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    io::read_header(&bytes).map_err(|e| bad(format!("{}: {e}", path.display())))
}

/// Works out the grid: from `[grid]`, from a state file, or from a snapshot
/// series; when more than one is present they must agree.
fn resolve_grid(cfg: &RunConfig) -> CliResult<Grid> {
    let mut candidates: Vec<(String, Grid)> = Vec::new();
    if let Some(g) = &cfg.grid {
        candidates.push(("[grid]".into(), grid_from_spec(g)?));
    }
    if let Some(StateSpec::File { path }) = &cfg.state {
        candidates.push((path.display().to_string(), file_header(path)?.grid));
    }
    if let Some(TrajectorySpec { series: Some(dir), .. }) = &cfg.trajectories {
        let manifest = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest)
            .map_err(|e| bad(format!("cannot read {}: {e}", manifest.display())))?;
        let m: io::SeriesManifest =
            serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", manifest.display())))?;
        let first = m.files.first().ok_or_else(|| bad("snapshot series is empty"))?;
        candidates.push((dir.display().to_string(), file_header(&dir.join(first))?.grid));
    }
    let (name, grid) = candidates.first().cloned().ok_or_else(|| bad("missing [grid] table"))?;
    for (other, g) in &candidates[1..] {
        if *g != grid {
            return Err(bad(format!("grid of {other} does not match {name}")));
        }
    }
    Ok(grid)
}

fn build_state(spec: &StateSpec, grid: Grid, params: &PhysicalParams, seed: u64) -> CliResult<InitialState> {
    let d = grid.dims();
    let psi = match spec {
        StateSpec::PlaneWave { k } => {
            let k = per_axis("state.k", k, d)?;
            for axis in 0..d {
                let n = k[axis] * grid.extent()[axis] / (2.0 * PI);
                if (n - n.round()).abs() > 1e-9 * n.abs().max(1.0) {
                    return Err(bad(format!(
                        "state.k[{axis}] = {} is not a multiple of 2π/L = {}",
                        k[axis],
                        2.0 * PI / grid.extent()[axis]
                    )));
                }
            }
            states::plane_wave(grid, k)
        }
        StateSpec::Gaussian { center, sigma, boost } => {
            let c = per_axis("state.center", center, d)?;
            let b = match boost {
                Some(b) => per_axis("state.boost", b, d)?,
                None => [0.0; 3],
            };
            states::gaussian(grid, c, positive("state.sigma", *sigma)?, b, params)
        }
        StateSpec::HarmonicGround { omega } => {
            states::harmonic_ground(grid, positive("state.omega", *omega)?, params)
        }
        StateSpec::RandomSmooth { sigma, modes, amplitude } => {
            if *modes == 0 {
                return Err(bad("state.modes must be at least 1"));
            }
            states::random_smooth(grid, positive("state.sigma", *sigma)?, *modes, finite("state.amplitude", *amplitude)?, seed)
        }
        StateSpec::File { path } => {
            let header = file_header(path)?;
            return match header.kind {
                FieldKind::Complex => Ok(InitialState::Scalar(io::load_complex(path).context("loading state")?)),
                FieldKind::Spinor => Ok(InitialState::Spinor(io::load_spinor(path).context("loading state")?)),
                other => Err(bad(format!("{} holds a {other:?} field, expected complex or spinor", path.display()))),
            };
        }
    };
    Ok(InitialState::Scalar(psi))
}

fn build_potential(spec: &PotentialSpec, grid: Grid, params: &PhysicalParams) -> CliResult<ExternalPotential> {
    match spec {
        PotentialSpec::None => Ok(ExternalPotential::zero(grid)),
        PotentialSpec::Harmonic { omega } => {
            Ok(ExternalPotential::harmonic(grid, positive("potential.omega", *omega)?, params))
        }
        PotentialSpec::File { path } => {
            let header = file_header(path)?;
            if header.kind != FieldKind::Real {
                return Err(bad(format!("{} must hold a real field", path.display())));
            }
            if header.grid != grid {
                return Err(bad(format!("grid of {} does not match the run grid", path.display())));
            }
            ExternalPotential::new(io::load_real(path).context("loading potential")?)
                .map_err(|e| bad(format!("{}: {e}", path.display())))
        }
    }
}

fn check_blocks(cfg: &RunConfig) -> CliResult<()> {
    if let Some(s) = &cfg.spin {
        positive("spin.hestenes_tolerance", s.hestenes_tolerance)?;
    }
    if let Some(e) = &cfg.evolution {
        positive("evolution.dt", e.dt)?;
        if e.steps == 0 || e.snapshot_stride == 0 {
            return Err(bad("evolution.steps and evolution.snapshot_stride must be at least 1"));
        }
        if e.steps % e.snapshot_stride != 0 {
            return Err(bad("evolution.snapshot_stride must divide evolution.steps"));
        }
        if e.residuals && e.steps / e.snapshot_stride < 2 {
            return Err(bad("evolution.residuals needs at least three snapshots"));
        }
    }
    if let Some(t) = &cfg.trajectories {
        positive("trajectories.step", t.step)?;
        if t.record_every == 0 {
            return Err(bad("trajectories.record_every must be at least 1"));
        }
        if let Some(te) = t.t_end {
            positive("trajectories.t_end", te)?;
        }
        match (t.particles, &t.seeds) {
            (Some(0), _) => return Err(bad("trajectories.particles must be at least 1")),
            (Some(_), Some(_)) => return Err(bad("give trajectories.particles or trajectories.seeds, not both")),
            (None, None) => return Err(bad("trajectories needs particles or seeds")),
            (None, Some(s)) if s.is_empty() => return Err(bad("trajectories.seeds is empty")),
            _ => {}
        }
        if t.paired && t.mode != TransportMode::Total {
            return Err(bad("trajectories.paired applies to total mode only"));
        }
        if t.mode == TransportMode::Total && cfg.spinor.is_none() {
            return Err(bad("total-mode transport needs a [spinor] table"));
        }
    }
    if let Some(v) = &cfg.verify {
        if !(1..=8).contains(&v.refinement) {
            return Err(bad("verify.refinement must be in 1..=8"));
        }
    }
    Ok(())
}

/// Validates the grid-independent parts of the config: constants, seed and
/// command blocks.
pub fn general(cfg: &RunConfig, seed_override: Option<u64>) -> CliResult<(PhysicalParams, u64)> {
    let p = &cfg.params;
    finite("params.charge", p.charge)?;
    let params = PhysicalParams::new(p.hbar, p.mass, p.charge).map_err(|e| bad(e.to_string()))?;
    check_blocks(cfg)?;
    Ok((params, seed_override.or(cfg.seed).unwrap_or(0)))
}

/// Validates the whole config and builds the initial state and potential.
/// `needs_state` is false for commands that can run without `[state]`.
pub fn setup(cfg: &RunConfig, seed_override: Option<u64>, needs_state: bool) -> CliResult<Setup> {
    let (params, seed) = general(cfg, seed_override)?;
    let spinor = match cfg.spinor {
        Some(s) => Some(states::bloch_spinor(finite("spinor.theta", s.theta)?, finite("spinor.phi", s.phi)?)),
        None => None,
    };
    if cfg.state.is_none() && needs_state {
        return Err(bad("missing [state] table"));
    }
    let grid = resolve_grid(cfg)?;
    let state = match &cfg.state {
        Some(spec) => Some(build_state(spec, grid, &params, seed)?),
        None => None,
    };
    let potential = build_potential(&cfg.potential, grid, &params)?;
    Ok(Setup { grid, params, seed, state, spinor, potential })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        [grid]
        points = [64]
        extent = [20.0]
        [state]
        family = "gaussian"
        center = [0.0]
        sigma = 1.0
    "#;

    #[test]
    fn minimal_config_parses() {
        let cfg = parse(BASE).unwrap();
        let s = setup(&cfg, None, true).unwrap();
        assert_eq!(s.grid.points(), [64, 1, 1]);
        assert_eq!(s.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        for extra in [
            "bogus = 1\n",
            "[grid]\npoints=[8]\nextent=[1.0]\nwrap = true\n",
            "[params]\nplanck = 1.0\n",
            "[spinor]\ntheta = 0.0\nphi = 0.0\npsi = 1.0\n",
            "[potential]\nkind = \"harmonic\"\nomega = 1.0\nshift = 2.0\n",
            "[evolution]\ndt = 0.1\nsteps = 1\nmethod = \"rk4\"\n",
        ] {
            let text = if extra.starts_with("[grid]") {
                format!("{extra}[state]\nfamily = \"gaussian\"\ncenter = [0.0]\nsigma = 1.0\n")
            } else {
                format!("{extra}{BASE}")
            };
            assert!(parse(&text).is_err(), "accepted: {extra}");
        }
        let wrong_field = BASE.replace("sigma = 1.0", "sigma = 1.0\nomega = 2.0");
        assert!(parse(&wrong_field).is_err());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for (from, to) in [
            ("sigma = 1.0", "sigma = -1.0"),
            ("center = [0.0]", "center = [0.0, 1.0]"),
            ("extent = [20.0]", "extent = [0.0]"),
        ] {
            let cfg = parse(&BASE.replace(from, to)).unwrap();
            assert!(setup(&cfg, None, true).is_err(), "{to}");
        }
        let stride = format!("{BASE}[evolution]\ndt = 0.01\nsteps = 10\nsnapshot_stride = 3\n");
        assert!(setup(&parse(&stride).unwrap(), None, true).is_err());
    }

    #[test]
    fn plane_wave_must_fit_the_box() {
        let text = BASE.replace("family = \"gaussian\"\n        center = [0.0]\n        sigma = 1.0", "family = \"plane-wave\"\n k = [0.5]");
        assert!(setup(&parse(&text).unwrap(), None, true).is_err());
        let k = 2.0 * PI * 3.0 / 20.0;
        let text = text.replace("k = [0.5]", &format!("k = [{k}]"));
        assert!(setup(&parse(&text).unwrap(), None, true).is_ok());
    }

    #[test]
    fn seed_flag_overrides_config() {
        let cfg = parse(&format!("seed = 4\n{BASE}")).unwrap();
        assert_eq!(setup(&cfg, None, true).unwrap().seed, 4);
        assert_eq!(setup(&cfg, Some(9), true).unwrap().seed, 9);
    }

    #[test]
    fn total_mode_needs_a_spinor() {
        let text = format!("{BASE}[trajectories]\nmode = \"total\"\nparticles = 10\nstep = 0.1\nt_end = 1.0\n");
        assert!(setup(&parse(&text).unwrap(), None, true).is_err());
        let text = format!("{text}[spinor]\ntheta = 0.0\nphi = 0.0\n");
        assert!(setup(&parse(&text).unwrap(), None, true).is_ok());
    }
}
