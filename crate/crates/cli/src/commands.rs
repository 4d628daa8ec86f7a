use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use mzbw_core::evolve::{propagate, EvolutionConfig, SnapshotSeries};
use mzbw_core::io;
use mzbw_core::madelung::{
    continuity_residual, decompose, hj_residual, internal_kinetic_density, quantum_potential, NodeMask,
};
use mzbw_core::ops::integrate;
use mzbw_core::spin::{
    hestenes_residual, koenig_energy, pauli_current, spin_density, spinor_spin, velocity_decomposition,
    SpinorWavefunction,
};
use mzbw_core::trajectories::{
    advect, equivariance_check, internal_displacement, sample_initial, AdvectConfig, GridVelocity, TrajectorySet,
    TransportMode,
};
use mzbw_core::verify::{self, Fault, VerifyOptions};
use mzbw_core::{Backend, ComplexField, Grid, PhysicalParams, RealField, VectorField};
use serde::Serialize;
use serde_json::json;

use crate::config::{FaultSpec, InitialState, RunConfig, Setup, VerifySpec};
use crate::error::{CliError, CliResult, Context};

/// Density (relative to its maximum) above which residuals are reported.
const RESOLVED: f64 = 1e-6;

pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub setup: Setup,
    pub backend: Backend,
    pub out: PathBuf,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn save<T: io::BinaryValue>(&self, name: &str, f: &mzbw_core::Field<T>) -> CliResult<()> {
        f.check_finite("output field").context(name)?;
        io::save_field(f, self.path(name)).context(name)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
        fs::write(self.path(name), text + "\n")?;
        Ok(())
    }

    fn header(&self, command: &str) -> serde_json::Value {
        json!({
            "command": command,
            "grid": {
                "points": &self.setup.grid.points()[..self.setup.grid.dims()],
                "extent": &self.setup.grid.extent()[..self.setup.grid.dims()],
            },
            "params": self.setup.params,
            "backend": self.backend,
            "seed": self.setup.seed,
        })
    }
}

fn merge(mut a: serde_json::Value, b: serde_json::Value) -> serde_json::Value {
    if let (Some(a), serde_json::Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
    a
}

fn sup_resolved(values: &[f64], mask: &NodeMask) -> f64 {
    values.iter().enumerate().filter(|(i, _)| !mask.is_masked(*i)).map(|(_, v)| v.abs()).fold(0.0, f64::max)
}

fn csv_file(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn decompose_cmd(run: &Run) -> CliResult<()> {
    let psi = run.setup.scalar()?;
    let p = &run.setup.params;
    let b = run.backend;
    let fields = decompose(psi, p, b).context("decompose")?;
    let q = quantum_potential(&fields.rho, p, b).context("quantum potential")?;
    let ikd = internal_kinetic_density(&fields.rho, p, b).context("internal kinetic density")?;
    let u = run.setup.potential.field();

    let rho = &fields.rho;
    let weighted = |f: &RealField| -> CliResult<f64> { Ok(integrate(&rho.zip_map(f, |r, v| r * v).context("energies")?)) };
    let kinetic = fields.momentum.map(|m| (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) / (2.0 * p.mass));
    let translational = weighted(&kinetic)?;
    let internal = weighted(&ikd)?;
    let quantum = weighted(&q.q)?;
    let potential = weighted(u)?;
    let resolved = NodeMask::with_relative_threshold(rho, RESOLVED);
    let q_diff: Vec<f64> = q.q.values().iter().zip(q.q_density_form.values()).map(|(a, c)| a - c).collect();

    run.save("rho.mzbw", rho)?;
    run.save("phase.mzbw", &fields.phase)?;
    run.save("momentum.mzbw", &fields.momentum)?;
    run.save("q.mzbw", &q.q)?;
    run.save("q_density.mzbw", &q.q_density_form)?;

    let grid = *rho.grid();
    let mut w = csv_file(&run.path("fields.csv"))?;
    writeln!(w, "x,y,z,rho,phase,px,py,pz,q,masked")?;
    for i in 0..grid.len() {
        let x = grid.position(i);
        let m = fields.momentum.values()[i];
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            x[0],
            x[1],
            x[2],
            rho.values()[i],
            fields.phase.values()[i],
            m[0],
            m[1],
            m[2],
            q.q.values()[i],
            fields.mask.is_masked(i) as u8
        )?;
    }
    w.flush()?;

    let summary = merge(
        run.header("decompose"),
        json!({
            "norm": integrate(rho),
            "masked_fraction": fields.mask.fraction(),
            "energy": {
                "translational": translational,
                "internal": internal,
                "quantum_potential": quantum,
                "potential": potential,
                "total": translational + internal + potential,
            },
            "max_abs_q": q.q.max_abs(),
            "q_forms_max_diff": sup_resolved(&q_diff, &resolved),
            "files": ["rho.mzbw", "phase.mzbw", "momentum.mzbw", "q.mzbw", "q_density.mzbw", "fields.csv"],
        }),
    );
    run.write_json("summary.json", &summary)?;
    println!("decompose: norm {:.12}, internal energy {:.12}", integrate(rho), internal);
    Ok(())
}

fn spinor_state(run: &Run) -> CliResult<(SpinorWavefunction, Option<[num_complex::Complex64; 2]>)> {
    let p = run.setup.params;
    match &run.setup.state {
        Some(InitialState::Spinor(f)) => Ok((SpinorWavefunction::new(f.clone(), p).context("spinor state")?, None)),
        Some(InitialState::Scalar(psi)) => {
            let chi = run.setup.spinor.ok_or_else(|| CliError::Config("spin needs a [spinor] table".into()))?;
            Ok((SpinorWavefunction::factorized(psi, chi, p).context("spinor state")?, Some(chi)))
        }
        None => Err(CliError::Config("missing [state] table".into())),
    }
}

pub fn spin_cmd(run: &Run) -> CliResult<()> {
    let b = run.backend;
    let (spinor, chi) = spinor_state(run)?;
    let grid = *spinor.psi().grid();
    let a = VectorField::zeros(grid);
    let sv = spin_density(&spinor);
    let j = pauli_current(&spinor, &a, b).context("pauli current")?;
    let v = velocity_decomposition(&spinor, &a, b).context("velocity decomposition")?;
    let h = hestenes_residual(&sv.rho, &sv.s, b).context("constraint residual")?;
    let tol = run.cfg.spin.map_or(1e-12, |s| s.hestenes_tolerance);

    let mut consistency: f64 = 0.0;
    for i in 0..grid.len() {
        let (t, r) = (j.total.values()[i], v.total.values()[i]);
        for c in 0..3 {
            consistency = consistency.max((sv.rho.values()[i] * r[c] - t[c]).abs());
        }
    }
    let energy = match (chi, &run.setup.state) {
        (Some(chi), Some(InitialState::Scalar(psi))) => {
            Some(koenig_energy(psi, chi, &run.setup.potential, &run.setup.params, b).context("energy budget")?)
        }
        _ => None,
    };

    run.save("s.mzbw", &sv.s)?;
    run.save("j.mzbw", &j.total)?;
    run.save("drift.mzbw", &v.drift)?;
    run.save("zbw.mzbw", &v.zbw)?;
    run.save("total.mzbw", &v.total)?;

    let satisfied = h.satisfied(tol);
    let summary = merge(
        run.header("spin"),
        json!({
            "hestenes": {
                "div_rho_s_max": h.max_abs[0],
                "grad_rho_dot_s_max": h.max_abs[1],
                "weighted_l2": h.weighted_l2,
                "tolerance": tol,
                "satisfied": satisfied,
            },
            "current_consistency_max": consistency,
            "uniform_spin": sv.uniform_value(mzbw_core::spin::UNIFORM_SPIN_TOLERANCE * run.setup.params.hbar),
            "masked_fraction": sv.mask.fraction(),
            "energy": energy,
            "files": ["s.mzbw", "j.mzbw", "drift.mzbw", "zbw.mzbw", "total.mzbw"],
        }),
    );
    run.write_json("summary.json", &summary)?;
    println!(
        "spin: constraint residuals {:.3e} / {:.3e} (tolerance {tol:.1e}), max |ρv - j| {consistency:.3e}",
        h.max_abs[0], h.max_abs[1]
    );
    if !satisfied {
        return Err(CliError::Verification(format!(
            "spin constraint violated: |∇·(ρs)| {:.3e}, |∇ρ·s| {:.3e} exceed {tol:.1e}",
            h.max_abs[0], h.max_abs[1]
        )));
    }
    Ok(())
}

fn evolution_config(run: &Run) -> CliResult<EvolutionConfig> {
    let e = run.cfg.evolution.ok_or_else(|| CliError::Config("missing [evolution] table".into()))?;
    let cfg = EvolutionConfig {
        dt: e.dt,
        steps: e.steps,
        snapshot_stride: e.snapshot_stride,
        potential: run.setup.potential.clone(),
        params: run.setup.params,
    };
    cfg.validate().context("evolution")?;
    Ok(cfg)
}

fn evolve_series(run: &Run) -> CliResult<(SnapshotSeries, EvolutionConfig)> {
    let cfg = evolution_config(run)?;
    let psi = run.setup.scalar()?;
    let series = propagate(psi, &cfg).context("propagate")?;
    for s in &series.states {
        s.check_finite("evolved state").context("propagate")?;
    }
    Ok((series, cfg))
}

pub fn evolve_cmd(run: &Run) -> CliResult<()> {
    let (series, cfg) = evolve_series(run)?;
    io::write_series(&series, cfg.dt, cfg.steps, cfg.snapshot_stride, &cfg.params, &run.out).context("writing series")?;

    let mut w = csv_file(&run.path("observables.csv"))?;
    writeln!(w, "t,norm,energy,mean_x,mean_y,mean_z,width_x,width_y,width_z")?;
    for (t, o) in series.times.iter().zip(&series.conserved) {
        writeln!(
            w,
            "{t:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            o.norm, o.energy, o.mean[0], o.mean[1], o.mean[2], o.width[0], o.width[1], o.width[2]
        )?;
    }
    w.flush()?;

    let mut residuals = Vec::new();
    if run.cfg.evolution.is_some_and(|e| e.residuals) {
        let mut w = csv_file(&run.path("residuals.csv"))?;
        writeln!(w, "t,hamilton_jacobi,continuity")?;
        for i in 1..series.len() - 1 {
            let triple = series.triple(i).context("residuals")?;
            let mask = NodeMask::with_relative_threshold(&triple.current.density(), RESOLVED);
            let hj = hj_residual(&triple, &cfg.potential, &cfg.params, run.backend).context("residuals")?;
            let cont = continuity_residual(&triple, &cfg.params, run.backend).context("residuals")?;
            let r = (series.times[i], sup_resolved(hj.values(), &mask), sup_resolved(cont.values(), &mask));
            writeln!(w, "{:.17e},{:.17e},{:.17e}", r.0, r.1, r.2)?;
            residuals.push(r);
        }
        w.flush()?;
    }

    let summary = merge(
        run.header("evolve"),
        json!({
            "dt": cfg.dt,
            "steps": cfg.steps,
            "snapshot_stride": cfg.snapshot_stride,
            "snapshots": series.len(),
            "total_time": cfg.total_time(),
            "max_norm_drift": series.max_norm_drift(),
            "max_relative_energy_drift": series.max_relative_energy_drift(),
            "max_hamilton_jacobi_residual": residuals.iter().map(|r| r.1).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))),
            "max_continuity_residual": residuals.iter().map(|r| r.2).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))),
        }),
    );
    run.write_json("summary.json", &summary)?;
    println!(
        "evolve: {} snapshots to t = {}, norm drift {:.3e}, energy drift {:.3e}",
        series.len(),
        cfg.total_time(),
        series.max_norm_drift(),
        series.max_relative_energy_drift()
    );
    Ok(())
}

/// Where velocities come from: a snapshot series or the static initial state.
enum Flow {
    Series(SnapshotSeries),
    Static(ComplexField),
}

impl Flow {
    fn new(run: &Run) -> CliResult<Self> {
        let spec = run.cfg.trajectories.as_ref().expect("checked by caller");
        if let Some(dir) = &spec.series {
            Ok(Flow::Series(io::read_series(dir).context("reading series")?.0))
        } else if run.cfg.evolution.is_some() {
            Ok(Flow::Series(evolve_series(run)?.0))
        } else {
            Ok(Flow::Static(run.setup.scalar()?.clone()))
        }
    }

    fn source(&self, run: &Run, mode: TransportMode, spin: Option<[f64; 3]>) -> CliResult<GridVelocity> {
        let (p, b) = (&run.setup.params, run.backend);
        match self {
            Flow::Series(s) => GridVelocity::from_series(s, mode, spin, p, b),
            Flow::Static(psi) => GridVelocity::from_static(psi, mode, spin, p, b),
        }
        .context("velocity field")
    }

    fn rho_start(&self) -> RealField {
        match self {
            Flow::Series(s) => s.states[0].density(),
            Flow::Static(psi) => psi.density(),
        }
    }

    /// End time, checked against what the flow covers.
    fn t_end(&self, requested: Option<f64>) -> CliResult<f64> {
        match self {
            Flow::Series(s) => {
                let end = *s.times.last().expect("non-empty series");
                let t = requested.unwrap_or(end);
                if t > end + 1e-12 {
                    return Err(CliError::Config(format!("trajectories.t_end = {t} is past the series end {end}")));
                }
                Ok(t)
            }
            Flow::Static(_) => {
                requested.ok_or_else(|| CliError::Config("static transport needs trajectories.t_end".into()))
            }
        }
    }

    /// Density at `t`, if the flow has it.
    fn rho_at(&self, t: f64) -> Option<RealField> {
        match self {
            Flow::Series(s) => {
                s.times.iter().position(|&ts| (ts - t).abs() <= 1e-9 * t.max(1.0)).map(|k| s.states[k].density())
            }
            Flow::Static(psi) => Some(psi.density()),
        }
    }
}

fn seeds(run: &Run, grid: &Grid, rho: &RealField) -> CliResult<(Vec<[f64; 3]>, bool)> {
    let spec = run.cfg.trajectories.as_ref().expect("checked by caller");
    if let Some(list) = &spec.seeds {
        let d = grid.dims();
        let mut out = Vec::with_capacity(list.len());
        for s in list {
            if s.len() != d || s.iter().any(|x| !x.is_finite()) {
                return Err(CliError::Config(format!("each seed needs {d} finite coordinates")));
            }
            let mut x = [0.0; 3];
            x[..d].copy_from_slice(s);
            out.push(x);
        }
        return Ok((out, false));
    }
    let n = spec.particles.expect("checked by config");
    Ok((sample_initial(rho, n, run.setup.seed).context("sampling")?, true))
}

fn write_internal_csv(path: &Path, traj: &TrajectorySet, x: &[Vec<[f64; 3]>]) -> CliResult<()> {
    let mut w = csv_file(path)?;
    writeln!(w, "particle,t,X,Y,Z")?;
    for (id, path) in x.iter().enumerate() {
        for (t, v) in traj.times.iter().zip(path) {
            writeln!(w, "{id},{t:.17e},{:.17e},{:.17e},{:.17e}", v[0], v[1], v[2])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn trajectories_cmd(run: &Run) -> CliResult<()> {
    let spec = run.cfg.trajectories.as_ref().ok_or_else(|| CliError::Config("missing [trajectories] table".into()))?;
    let spin = match run.setup.spinor {
        Some(chi) => Some(spinor_spin(chi, run.setup.params.hbar).context("spinor")?),
        None => None,
    };
    let flow = Flow::new(run)?;
    let t_end = flow.t_end(spec.t_end)?;
    let rho_start = flow.rho_start();
    let (seeds, sampled) = seeds(run, rho_start.grid(), &rho_start)?;
    let cfg = AdvectConfig { t0: 0.0, t_end, step: spec.step, record_every: spec.record_every };
    let source = flow.source(run, spec.mode, spin)?;
    let mut traj = advect(&seeds, &source, spec.mode, &cfg).context("advect")?;
    if sampled {
        traj.seed = Some(run.setup.seed);
    }
    if traj.paths.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(CliError::Core {
            context: "advect".into(),
            source: mzbw_core::Error::NonFinite { what: "trajectory", index: 0 },
        });
    }
    let mut w = csv_file(&run.path("trajectories.csv"))?;
    io::write_trajectory_csv(&traj, &mut w).context("writing trajectories")?;
    w.flush()?;
    let mut files = vec!["trajectories.csv".to_string()];

    if spec.paired {
        let drift_source = flow.source(run, TransportMode::Drift, spin)?;
        let drift = advect(&seeds, &drift_source, TransportMode::Drift, &cfg).context("advect")?;
        let mut w = csv_file(&run.path("drift.csv"))?;
        io::write_trajectory_csv(&drift, &mut w).context("writing trajectories")?;
        w.flush()?;
        let x = internal_displacement(&traj, &drift).context("internal displacement")?;
        write_internal_csv(&run.path("internal.csv"), &traj, &x)?;
        files.extend(["drift.csv".to_string(), "internal.csv".to_string()]);
    }

    let equivariance = match (flow.rho_at(t_end), sampled) {
        (Some(rho), true) => Some(equivariance_check(&traj, &rho).context("equivariance")?),
        _ => None,
    };
    let manifest = merge(
        run.header("trajectories"),
        json!({
            "format": "mzbw-trajectories-1",
            "mode": spec.mode,
            "sampling_seed": traj.seed,
            "particles": traj.seeds.len(),
            "t_end": t_end,
            "step": spec.step,
            "records": traj.times.len(),
            "frozen": traj.frozen_count(),
            "frozen_at": traj.frozen_at.iter().enumerate().filter_map(|(i, t)| t.map(|t| json!({"particle": i, "t": t}))).collect::<Vec<_>>(),
            "spin": spin,
            "equivariance": equivariance,
            "files": files,
        }),
    );
    run.write_json("manifest.json", &manifest)?;
    println!(
        "trajectories: {} particles ({} mode) to t = {}, {} frozen",
        traj.seeds.len(),
        spec.mode,
        t_end,
        traj.frozen_count()
    );
    if let Some(e) = &equivariance {
        info!("equivariance KS {:?} against critical {}", e.ks, e.critical);
    }
    Ok(())
}

pub fn verify_cmd(
    spec: Option<VerifySpec>,
    params: PhysicalParams,
    seed: u64,
    backend: Backend,
    out: &Path,
) -> CliResult<()> {
    let opts = VerifyOptions {
        backend,
        refinement: spec.map_or(1, |v| v.refinement),
        params,
        seed,
        fault: spec.and_then(|v| v.fault).map(|f| match f {
            FaultSpec::FlipQuantumPotentialSign => Fault::FlipQuantumPotentialSign,
        }),
    };
    let report = verify::run(&opts).context("verify")?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.into()))?;
    fs::write(out.join("report.json"), text + "\n")?;
    let failed: Vec<String> = report.failures().map(|e| format!("{} on {}", e.id, e.state)).collect();
    println!(
        "verify: {} of {} checks passed ({} backend, tolerance table {})",
        report.entries.len() - failed.len(),
        report.entries.len(),
        report.backend,
        report.tolerance_table
    );
    if !failed.is_empty() {
        return Err(CliError::Verification(failed.join(", ")));
    }
    Ok(())
}
