//! File formats.
//!
//! # Field binary format (`.mzbw`)
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | content |
//! |-------:|-----:|---------|
//! | 0  | 5  | magic `MZBW1` |
//! | 5  | 1  | `dims` (1–3) |
//! | 6  | 24 | points per axis, 3 × u64 (unused axes hold 1) |
//! | 30 | 24 | extent per axis, 3 × f64 (unused axes hold 1.0) |
//! | 54 | 1  | field kind: 0 real, 1 complex, 2 real vector, 3 complex spinor |
//! | 55 | 1  | component count per point: 1, 1, 3, 2 respectively |
//! | 56 | …  | values as f64, points in row-major order (x slowest), components consecutive, complex numbers as (re, im) |
//!
//! # Snapshot series
//!
//! A directory holding `state_NNNNN.mzbw` (complex fields) and
//! `manifest.json` with times, the configuration echo and the per-snapshot
//! norm/energy log.
//!
//! # Trajectories
//!
//! CSV with header `particle,t,x,y,z,mode,frozen`, one row per particle and
//! recorded time, plus a JSON manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{Observables, SnapshotSeries};
use crate::field::{ComplexField, Field, RealField, Sample, SpinorField, VectorField};
use crate::grid::{Grid, PhysicalParams};
use crate::trajectories::TrajectorySet;

pub const MAGIC: &[u8; 5] = b"MZBW1";
pub const HEADER_LEN: usize = 56;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FieldKind {
    Real = 0,
    Complex = 1,
    Vector = 2,
    Spinor = 3,
}

impl FieldKind {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => FieldKind::Real,
            1 => FieldKind::Complex,
            2 => FieldKind::Vector,
            3 => FieldKind::Spinor,
            other => return Err(Error::Format(format!("unknown field kind {other}"))),
        })
    }

    pub fn components(self) -> u8 {
        match self {
            FieldKind::Real | FieldKind::Complex => 1,
            FieldKind::Vector => 3,
            FieldKind::Spinor => 2,
        }
    }

    fn floats_per_point(self) -> usize {
        match self {
            FieldKind::Real => 1,
            FieldKind::Complex => 2,
            FieldKind::Vector => 3,
            FieldKind::Spinor => 4,
        }
    }
}

/// Per-point values that have a binary layout.
pub trait BinaryValue: Sample {
    const KIND: FieldKind;
    fn push_floats(&self, out: &mut Vec<f64>);
    fn from_floats(f: &[f64]) -> Self;
}

impl BinaryValue for f64 {
    const KIND: FieldKind = FieldKind::Real;
    fn push_floats(&self, out: &mut Vec<f64>) {
        out.push(*self);
    }
    fn from_floats(f: &[f64]) -> Self {
        f[0]
    }
}

impl BinaryValue for Complex64 {
    const KIND: FieldKind = FieldKind::Complex;
    fn push_floats(&self, out: &mut Vec<f64>) {
        out.extend([self.re, self.im]);
    }
    fn from_floats(f: &[f64]) -> Self {
        Complex64::new(f[0], f[1])
    }
}

impl BinaryValue for [f64; 3] {
    const KIND: FieldKind = FieldKind::Vector;
    fn push_floats(&self, out: &mut Vec<f64>) {
        out.extend(self);
    }
    fn from_floats(f: &[f64]) -> Self {
        [f[0], f[1], f[2]]
    }
}

impl BinaryValue for [Complex64; 2] {
    const KIND: FieldKind = FieldKind::Spinor;
    fn push_floats(&self, out: &mut Vec<f64>) {
        out.extend([self[0].re, self[0].im, self[1].re, self[1].im]);
    }
    fn from_floats(f: &[f64]) -> Self {
        [Complex64::new(f[0], f[1]), Complex64::new(f[2], f[3])]
    }
}

/// Header fields of a field file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub grid: Grid,
    pub kind: FieldKind,
}

pub fn write_field<T: BinaryValue, W: Write>(field: &Field<T>, mut w: W) -> Result<()> {
    let g = field.grid();
    let mut buf = Vec::with_capacity(HEADER_LEN + field.len() * 8 * T::KIND.floats_per_point());
    buf.extend_from_slice(MAGIC);
    buf.push(g.dims() as u8);
    for p in g.points() {
        buf.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for e in g.extent() {
        buf.extend_from_slice(&e.to_le_bytes());
    }
    buf.push(T::KIND as u8);
    buf.push(T::KIND.components());
    let mut floats = Vec::with_capacity(T::KIND.floats_per_point());
    for v in field.values() {
        floats.clear();
        v.push_floats(&mut floats);
        for f in &floats {
            buf.extend_from_slice(&f.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N].try_into().expect("slice length")
}

pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..5] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dims = bytes[5] as usize;
    if !(1..=3).contains(&dims) {
        return Err(Error::Format(format!("dims {dims}")));
    }
    let points: Vec<usize> = (0..dims).map(|k| u64::from_le_bytes(take(bytes, 6 + 8 * k)) as usize).collect();
    let extent: Vec<f64> = (0..dims).map(|k| f64::from_le_bytes(take(bytes, 30 + 8 * k))).collect();
    let grid = Grid::new(&points, &extent).map_err(|e| Error::Format(e.to_string()))?;
    let kind = FieldKind::from_byte(bytes[54])?;
    if bytes[55] != kind.components() {
        return Err(Error::Format(format!("component count {} does not match kind {kind:?}", bytes[55])));
    }
    Ok(Header { grid, kind })
}

pub fn read_field<T: BinaryValue, R: Read>(mut r: R) -> Result<Field<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let header = read_header(&bytes)?;
    if header.kind != T::KIND {
        return Err(Error::Format(format!("expected a {:?} field, file holds {:?}", T::KIND, header.kind)));
    }
    let per = T::KIND.floats_per_point();
    let expected = HEADER_LEN + header.grid.len() * per * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let floats: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let values = floats.chunks_exact(per).map(T::from_floats).collect();
    Field::from_values(header.grid, values)
}

pub fn save_field<T: BinaryValue>(field: &Field<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_field<T: BinaryValue>(path: impl AsRef<Path>) -> Result<Field<T>> {
    read_field(BufReader::new(File::open(path)?))
}

pub fn load_real(path: impl AsRef<Path>) -> Result<RealField> {
    load_field(path)
}

pub fn load_complex(path: impl AsRef<Path>) -> Result<ComplexField> {
    load_field(path)
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<VectorField> {
    load_field(path)
}

pub fn load_spinor(path: impl AsRef<Path>) -> Result<SpinorField> {
    load_field(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesManifest {
    pub format: String,
    pub times: Vec<f64>,
    pub files: Vec<String>,
    pub dt: f64,
    pub steps: usize,
    pub snapshot_stride: usize,
    pub params: PhysicalParams,
    pub conserved: Vec<Observables>,
}

pub fn write_series(
    series: &SnapshotSeries,
    dt: f64,
    steps: usize,
    snapshot_stride: usize,
    params: &PhysicalParams,
    dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(series.len());
    for (i, state) in series.states.iter().enumerate() {
        let name = format!("state_{i:05}.mzbw");
        save_field(state, dir.join(&name))?;
        files.push(name);
    }
    let manifest = SeriesManifest {
        format: "mzbw-series-1".into(),
        times: series.times.clone(),
        files,
        dt,
        steps,
        snapshot_stride,
        params: *params,
        conserved: series.conserved.clone(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn read_series(dir: impl AsRef<Path>) -> Result<(SnapshotSeries, SeriesManifest)> {
    let dir = dir.as_ref();
    let manifest: SeriesManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let states = manifest.files.iter().map(|f| load_complex(dir.join(f))).collect::<Result<Vec<_>>>()?;
    if states.len() != manifest.times.len() || manifest.conserved.len() != states.len() {
        return Err(Error::Format("manifest lists inconsistent snapshot counts".into()));
    }
    let series = SnapshotSeries { times: manifest.times.clone(), states, conserved: manifest.conserved.clone() };
    Ok((series, manifest))
}

pub fn write_trajectory_csv<W: Write>(traj: &TrajectorySet, mut w: W) -> Result<()> {
    writeln!(w, "particle,t,x,y,z,mode,frozen")?;
    for (id, path) in traj.paths.iter().enumerate() {
        for (t, x) in traj.times.iter().zip(path) {
            let frozen = traj.frozen_at[id].is_some_and(|tf| tf <= *t);
            writeln!(
                w,
                "{id},{t:.17e},{:.17e},{:.17e},{:.17e},{},{}",
                x[0], x[1], x[2], traj.mode, frozen as u8
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{gaussian, random_smooth};

    #[test]
    fn header_layout() {
        let g = Grid::new(&[4, 6], &[1.0, 2.5]).unwrap();
        let f = VectorField::from_fn(g, |x| [x[0], x[1], 1.0]);
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"MZBW1");
        assert_eq!(buf[5], 2);
        assert_eq!(u64::from_le_bytes(take(&buf, 6)), 4);
        assert_eq!(u64::from_le_bytes(take(&buf, 14)), 6);
        assert_eq!(u64::from_le_bytes(take(&buf, 22)), 1);
        assert_eq!(f64::from_le_bytes(take(&buf, 38)), 2.5);
        assert_eq!(buf[54], 2);
        assert_eq!(buf[55], 3);
        assert_eq!(buf.len(), HEADER_LEN + 24 * 3 * 8);
        // second point is (x0, y1)
        assert_eq!(f64::from_le_bytes(take(&buf, HEADER_LEN + 24 + 8)), g.coord(1, 1));
    }

    #[test]
    fn spinor_round_trip_is_bit_exact() {
        let g = Grid::square(8, 3.0).unwrap();
        let psi = random_smooth(g, 1.0, 2, 0.4, 1);
        let f = psi.times_spinor([Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let back: SpinorField = read_field(&buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_wrong_kind_and_truncation() {
        let g = Grid::line(8, 1.0).unwrap();
        let psi = gaussian(g, [0.0; 3], 0.2, [0.0; 3], &PhysicalParams::default());
        let mut buf = Vec::new();
        write_field(&psi, &mut buf).unwrap();
        assert!(matches!(read_field::<f64, _>(&buf[..]), Err(Error::Format(_))));
        assert!(matches!(read_field::<Complex64, _>(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_field::<Complex64, _>(&bad[..]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[55] = 2;
        assert!(matches!(read_field::<Complex64, _>(&bad[..]), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_non_finite_payload() {
        let g = Grid::line(4, 1.0).unwrap();
        let f = RealField::filled(g, 1.0);
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        buf[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(read_field::<f64, _>(&buf[..]), Err(Error::NonFinite { .. })));
    }
}
