//! CSV time series, TDF1 binary field snapshots and JSON documents.
//!
//! TDF1 layout: the 4 bytes `TDF1`, then little-endian u32 `grid_x1`,
//! `grid_x2`, `components`, then `grid_x1·grid_x2·components` little-endian
//! f64 values in row-major order `[i][l][c]`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::control::OptimizationTrace;
use crate::error::{Error, Result};
use crate::grid::{NodalField, VectorModal};
use crate::timestepper::{EnergySeries, TrajectoryRecord};

pub const TDF1_MAGIC: &[u8; 4] = b"TDF1";

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, format!("{other:?}")),
    }
}

/// Header plus rows of numbers; `f64` Display is the shortest text that
/// parses back to the same bits.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::Dimension(format!(
                "row has {} values for {} columns",
                r.len(),
                header.len()
            )));
        }
        w.write_record(r.iter().map(|x| x.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header and numeric rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(path, format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub const ENERGY_COLUMNS: [&str; 6] = ["time", "l2_sq", "h10_sq", "zhat_sq", "sigma_channel", "jump_channel"];

/// Per-step energies and stochastic-integral channels of one path.
pub fn write_energy_csv(path: &Path, t: &TrajectoryRecord) -> Result<()> {
    let e = &t.energies;
    let rows: Vec<Vec<f64>> = (0..e.len())
        .map(|m| {
            vec![
                t.step_times[m],
                e.l2_sq[m],
                e.h10_sq[m],
                e.zhat_sq[m],
                t.sigma_channel[m],
                t.jump_channel[m],
            ]
        })
        .collect();
    write_csv(path, &ENERGY_COLUMNS, &rows)
}

/// Times and energies back from [`write_energy_csv`].
pub fn read_energy_csv(path: &Path) -> Result<(Vec<f64>, EnergySeries)> {
    let (h, rows) = read_csv(path)?;
    if h != ENERGY_COLUMNS {
        return Err(parse_err(path, format!("unexpected header {h:?}")));
    }
    let mut e = EnergySeries::default();
    let mut times = Vec::with_capacity(rows.len());
    for r in rows {
        times.push(r[0]);
        e.l2_sq.push(r[1]);
        e.h10_sq.push(r[2]);
        e.zhat_sq.push(r[3]);
    }
    Ok((times, e))
}

/// Modal coefficients as rows (j, k, component, value).
pub fn write_modes_csv(path: &Path, u: &VectorModal) -> Result<()> {
    let (m1, m2) = u.modes();
    let mut rows = Vec::new();
    for (c, comp) in [(1.0, &u.comp1), (2.0, &u.comp2)] {
        for j in 1..=m1 {
            for k in 1..=m2 {
                rows.push(vec![j as f64, k as f64, c, comp.get(j, k)]);
            }
        }
    }
    write_csv(path, &["j", "k", "component", "value"], &rows)
}

pub fn read_modes_csv(path: &Path, modes_x1: usize, modes_x2: usize) -> Result<VectorModal> {
    let (_, rows) = read_csv(path)?;
    let mut u = VectorModal::zeros(modes_x1, modes_x2);
    for r in rows {
        if r.len() != 4 {
            return Err(parse_err(path, "expected 4 columns"));
        }
        let (j, k) = (r[0] as usize, r[1] as usize);
        if j == 0 || k == 0 || j > modes_x1 || k > modes_x2 {
            return Err(parse_err(path, format!("mode ({j},{k}) out of range")));
        }
        match r[2] as u8 {
            1 => u.comp1.set(j, k, r[3]),
            2 => u.comp2.set(j, k, r[3]),
            c => return Err(parse_err(path, format!("bad component {c}"))),
        }
    }
    Ok(u)
}

pub fn write_trace_csv(path: &Path, t: &OptimizationTrace) -> Result<()> {
    let rows: Vec<Vec<f64>> = t
        .iterates
        .iter()
        .map(|i| vec![i.iteration as f64, i.value, i.stderr])
        .collect();
    write_csv(path, &["iteration", "cost", "stderr"], &rows)
}

pub fn tdf1_bytes(f: &NodalField) -> Vec<u8> {
    let nc = f.components();
    let n = f.grid_x1 * f.grid_x2;
    let mut out = Vec::with_capacity(16 + 8 * n * nc);
    out.extend_from_slice(TDF1_MAGIC);
    for d in [f.grid_x1, f.grid_x2, nc] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for idx in 0..n {
        for c in 0..nc {
            out.extend_from_slice(&f.data[c][idx].to_le_bytes());
        }
    }
    out
}

pub fn tdf1_from_bytes(bytes: &[u8]) -> std::result::Result<NodalField, String> {
    if bytes.len() < 16 || &bytes[..4] != TDF1_MAGIC {
        return Err("missing TDF1 header".into());
    }
    let dim = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (g1, g2, nc) = (dim(4), dim(8), dim(12));
    let n = g1 * g2;
    if bytes.len() != 16 + 8 * n * nc {
        return Err(format!(
            "payload is {} bytes, header implies {}",
            bytes.len() - 16,
            8 * n * nc
        ));
    }
    let mut data = vec![vec![0.0; n]; nc];
    for (k, chunk) in bytes[16..].chunks_exact(8).enumerate() {
        data[k % nc][k / nc] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(NodalField {
        grid_x1: g1,
        grid_x2: g2,
        data,
    })
}

pub fn write_tdf1(path: &Path, f: &NodalField) -> Result<()> {
    fs::write(path, tdf1_bytes(f)).map_err(|e| Error::io(path, e))
}

pub fn read_tdf1(path: &Path) -> Result<NodalField> {
    let b = fs::read(path).map_err(|e| Error::io(path, e))?;
    tdf1_from_bytes(&b).map_err(|m| parse_err(path, m))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| parse_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;

    #[test]
    fn zero_snapshot_size() {
        let d = DomainSpec::unit_square(3, 2);
        let f = NodalField::vector_zeros(&d);
        let b = tdf1_bytes(&f);
        assert_eq!(b.len(), 4 + 12 + 8 * 7 * 5 * 2);
        assert!(b[16..].iter().all(|x| *x == 0));
        assert_eq!(&b[4..8], &7u32.to_le_bytes());
    }

    #[test]
    fn tdf1_layout_is_row_major_interleaved() {
        let d = DomainSpec::unit_square(1, 1);
        let f = NodalField::vector_from_fn(&d, |x, y| (x + 10.0 * y, -1.0));
        let b = tdf1_bytes(&f);
        let at = |k: usize| f64::from_le_bytes(b[16 + 8 * k..24 + 8 * k].try_into().unwrap());
        // node (i=0, l=1) at y = 0.5: components (5, -1)
        assert_eq!(at(2), 5.0);
        assert_eq!(at(3), -1.0);
        assert_eq!(tdf1_from_bytes(&b).unwrap(), f);
    }

    #[test]
    fn tdf1_rejects_truncated() {
        let d = DomainSpec::unit_square(1, 1);
        let b = tdf1_bytes(&NodalField::scalar_zeros(&d));
        assert!(tdf1_from_bytes(&b[..b.len() - 1]).is_err());
        assert!(tdf1_from_bytes(b"TDF2").is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let rows = vec![vec![0.1, 1.0 / 3.0], vec![f64::MIN_POSITIVE, -2.5e300]];
        write_csv(&p, &["time", "v"], &rows).unwrap();
        let (h, back) = read_csv(&p).unwrap();
        assert_eq!(h, ["time", "v"]);
        for (a, b) in rows.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn missing_file_names_path() {
        let e = read_tdf1(Path::new("/nonexistent/field.tdf")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/field.tdf"));
    }
}
