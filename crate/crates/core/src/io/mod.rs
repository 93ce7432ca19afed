//! File formats: run configuration, CSV tables, binary density dumps,
//! trajectory ingestion and SVG plots.

pub mod config;
pub mod svg;
pub mod trajectory;

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::diagram::DiagramPoint;
use crate::error::{Error, Result};
use crate::fp::StepRecord;
use crate::grid::{GridDistribution, VelocityGrid};
use crate::hybrid::MomentRecord;
use crate::mc::{OracleSample, ParticleEnsemble};

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(
        path,
    )?)))
}

/// Writes `v_x_center, v_y_center, value` rows in storage order.
pub fn write_density_csv(path: &Path, dist: &GridDistribution) -> Result<()> {
    write_field_csv(path, dist.grid(), dist.values())
}

/// Same layout as [`write_density_csv`] for any cellwise field.
pub fn write_field_csv(path: &Path, grid: &VelocityGrid, values: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["v_x_center", "v_y_center", "value"])?;
    for j in 0..grid.n_y() {
        for i in 0..grid.n_x() {
            w.write_record(&[
                grid.x_center(i).to_string(),
                grid.y_center(j).to_string(),
                values[grid.index(i, j)].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_step_log_csv(path: &Path, log: &[StepRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "time", "dt", "mass", "min_value", "residual"])?;
    for r in log {
        w.write_record(&[
            r.step.to_string(),
            r.time.to_string(),
            r.dt.to_string(),
            r.mass.to_string(),
            r.min_value.to_string(),
            r.residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Moment time series as `t, u_x, u_y, E_x, E_y`.
pub fn write_moments_csv(path: &Path, log: &[MomentRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "u_x", "u_y", "E_x", "E_y"])?;
    for r in log {
        let m = r.moments;
        w.write_record(&[
            r.tau.to_string(),
            m.u_x.to_string(),
            m.u_y.to_string(),
            m.e_x.to_string(),
            m.e_y.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_oracle_csv(path: &Path, samples: &[OracleSample]) -> Result<()> {
    let log: Vec<MomentRecord> = samples
        .iter()
        .map(|s| MomentRecord {
            tau: s.t,
            moments: s.moments,
        })
        .collect();
    write_moments_csv(path, &log)
}

pub fn write_ensemble_csv(path: &Path, ens: &ParticleEnsemble) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["v_x", "v_y"])?;
    for (x, y) in &ens.pairs {
        w.write_record(&[x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagram_csv(path: &Path, points: &[DiagramPoint]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "rho",
        "ux_inf",
        "uy_bar_inf",
        "Iy",
        "band_lo",
        "band_hi",
        "equilibrated",
    ])?;
    for p in points {
        w.write_record(&[
            p.rho.to_string(),
            p.ux_inf.to_string(),
            p.uy_bar_inf.to_string(),
            p.iy.to_string(),
            p.band_lo.to_string(),
            p.band_hi.to_string(),
            p.equilibrated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scalar summaries as `m, quantity, value`.
pub fn write_summary_csv(path: &Path, rows: &[(usize, String, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["m", "quantity", "value"])?;
    for (m, q, v) in rows {
        w.write_record(&[m.to_string(), q.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Little-endian dump: `n_x: u64, n_y: u64, epsilon: f64, mass: f64`, then
/// the values row by row.
pub fn encode_density(dist: &GridDistribution) -> Vec<u8> {
    let g = dist.grid();
    let mut out = Vec::with_capacity(32 + 8 * g.len());
    out.extend_from_slice(&(g.n_x() as u64).to_le_bytes());
    out.extend_from_slice(&(g.n_y() as u64).to_le_bytes());
    out.extend_from_slice(&g.epsilon().to_le_bytes());
    out.extend_from_slice(&dist.mass().to_le_bytes());
    for v in dist.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_density(bytes: &[u8]) -> Result<GridDistribution> {
    let word = |k: usize| -> Result<[u8; 8]> {
        bytes
            .get(8 * k..8 * k + 8)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| Error::Input("truncated density dump".into()))
    };
    let n_x = u64::from_le_bytes(word(0)?) as usize;
    let n_y = u64::from_le_bytes(word(1)?) as usize;
    let eps = f64::from_le_bytes(word(2)?);
    let mass = f64::from_le_bytes(word(3)?);
    let grid = VelocityGrid::new(n_x, n_y, eps)?;
    if bytes.len() != 32 + 8 * grid.len() {
        return Err(Error::Input(format!(
            "dump holds {} bytes, expected {}",
            bytes.len(),
            32 + 8 * grid.len()
        )));
    }
    let values = (0..grid.len())
        .map(|k| word(4 + k).map(f64::from_le_bytes))
        .collect::<Result<Vec<_>>>()?;
    let dist = GridDistribution::from_values(grid, values)?;
    if dist.mass().to_bits() != mass.to_bits() {
        return Err(Error::Input(format!(
            "header mass {mass} does not match the values ({})",
            dist.mass()
        )));
    }
    Ok(dist)
}

pub fn write_density_bin(path: &Path, dist: &GridDistribution) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_density(dist))?;
    f.flush()?;
    Ok(())
}

pub fn read_density_bin(path: &Path) -> Result<GridDistribution> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_density(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let g = VelocityGrid::new(7, 5, 0.6).unwrap();
        let d =
            GridDistribution::from_product(g, |x| (3.0 * x).sin() + 1.1, |y| 1.0 + y * y).unwrap();
        let back = decode_density(&encode_density(&d)).unwrap();
        assert_eq!(back.grid(), d.grid());
        for (a, b) in back.values().iter().zip(d.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let g = VelocityGrid::new(3, 3, 1.0).unwrap();
        let bytes = encode_density(&GridDistribution::initial_condition(g));
        assert!(decode_density(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_density(&bytes[..10]).is_err());
    }

    #[test]
    fn density_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let g = VelocityGrid::new(2, 2, 1.0).unwrap();
        write_density_csv(&path, &GridDistribution::initial_condition(g)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "v_x_center,v_y_center,value");
        assert_eq!(lines[1], "0.25,-0.5,0.5");
        assert_eq!(lines.len(), 5);
    }
}
