//! Field-pair files and trajectory export.
//!
//! NLWP layout, all little endian: `b"NLWP"`, `u32` version, `u32` d,
//! `u32` n, `f64` L, then the position and velocity coefficient arrays in
//! FFT-order row-major frequency order as interleaved `(re, im)` `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{NlwError, Result};
use crate::grid::{FieldPair, Grid, SpectralField};
use crate::randomization::CutoffKind;
use crate::solver::Trajectory;

pub const NLWP_MAGIC: &[u8; 4] = b"NLWP";
pub const NLWP_VERSION: u32 = 1;

pub fn write_pair<W: Write>(mut w: W, pair: &FieldPair) -> Result<()> {
    let g = pair.grid();
    w.write_all(NLWP_MAGIC)?;
    w.write_all(&NLWP_VERSION.to_le_bytes())?;
    w.write_all(&(g.dim() as u32).to_le_bytes())?;
    w.write_all(&(g.n() as u32).to_le_bytes())?;
    w.write_all(&g.side().to_le_bytes())?;
    for field in [&pair.pos, &pair.vel] {
        for c in field.coeffs() {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| NlwError::Format(format!("truncated while reading {what}")))?;
    Ok(buf)
}

pub fn read_pair<R: Read>(mut r: R) -> Result<FieldPair> {
    let magic: [u8; 4] = read_array(&mut r, "magic")?;
    if &magic != NLWP_MAGIC {
        return Err(NlwError::Format(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_array(&mut r, "version")?);
    if version != NLWP_VERSION {
        return Err(NlwError::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(read_array(&mut r, "dimension")?) as usize;
    let n = u32::from_le_bytes(read_array(&mut r, "resolution")?) as usize;
    let side = f64::from_le_bytes(read_array(&mut r, "box side")?);
    let grid = Grid::new(dim, n, side).map_err(|e| NlwError::Format(e.to_string()))?;
    let mut fields = Vec::with_capacity(2);
    let mut bytes = vec![0u8; 16 * grid.points()];
    for name in ["position", "velocity"] {
        r.read_exact(&mut bytes)
            .map_err(|_| NlwError::Format(format!("truncated {name} coefficients")))?;
        let coeffs = bytes
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        fields.push(SpectralField::new(grid, coeffs)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(NlwError::Format("trailing bytes after coefficients".into()));
    }
    let vel = fields.pop().expect("two fields");
    let pos = fields.pop().expect("two fields");
    FieldPair::new(pos, vel)
}

/// Provenance stored next to a field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format_version: u32,
    pub profile: String,
    pub seed: Option<u64>,
    pub cutoff: Option<CutoffKind>,
    /// Regularity index the data were built for.
    pub s: f64,
    /// Named norms of the stored pair.
    pub norms: BTreeMap<String, f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

pub fn save_pair(path: &Path, pair: &FieldPair, sidecar: &Sidecar) -> Result<()> {
    write_pair(BufWriter::new(fs::File::create(path)?), pair)?;
    let mut text = serde_json::to_string_pretty(sidecar)?;
    text.push('\n');
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn load_pair(path: &Path) -> Result<FieldPair> {
    read_pair(BufReader::new(fs::File::open(path)?))
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar> {
    Ok(serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?)
}

/// Key used for an exponent in exported records: `"6"`, `"4.666667"`, `"inf"`.
pub fn exponent_key(r: f64) -> String {
    if r.is_infinite() {
        "inf".into()
    } else if r == r.round() {
        format!("{}", r as i64)
    } else {
        format!("{r:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub energy: f64,
    pub norms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub z_norms: BTreeMap<String, f64>,
}

pub fn trajectory_records(traj: &Trajectory) -> Vec<TrajectoryRecord> {
    (0..traj.times.len())
        .map(|i| TrajectoryRecord {
            t: traj.times[i],
            energy: traj.energy[i],
            norms: traj
                .norms
                .iter()
                .map(|s| (format!("L{}", exponent_key(s.exponent)), s.values[i]))
                .collect(),
            z_norms: traj
                .z_norms
                .iter()
                .map(|s| (format!("L{}", exponent_key(s.exponent)), s.values[i]))
                .collect(),
        })
        .collect()
}

/// One JSON object per recorded time.
pub fn write_trajectory_jsonl<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    for rec in trajectory_records(traj) {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
