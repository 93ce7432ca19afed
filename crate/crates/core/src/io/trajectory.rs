//! Aggregation of vehicle trajectories into normalised density and speed
//! samples.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub vehicle_id: String,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Binning of the road in time and space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregation {
    pub dt_window: f64,
    pub dx_window: f64,
    pub lane_count: usize,
    /// Positions at or beyond this are dropped; `None` keeps all.
    pub road_length: Option<f64>,
}

impl Default for Aggregation {
    fn default() -> Self {
        Self {
            dt_window: 5.0,
            dx_window: 100.0,
            lane_count: 1,
            road_length: None,
        }
    }
}

/// Raw statistics of one `(time window, space window)` bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub t_bin: i64,
    pub x_bin: i64,
    /// Vehicles per metre per lane.
    pub density: f64,
    pub ux: f64,
    pub uy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedSample {
    pub t_bin: i64,
    pub x_bin: i64,
    pub rho_norm: f64,
    pub ux_norm: f64,
    pub uy_norm: f64,
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["vehicle_id", "t", "x", "y"] {
        return Err(Error::Input(format!(
            "expected header vehicle_id,t,x,y, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: TrajectoryRecord = row?;
        if !(r.t.is_finite() && r.x.is_finite() && r.y.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite record for vehicle {}",
                r.vehicle_id
            )));
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Default)]
struct Acc {
    vehicles: std::collections::BTreeSet<String>,
    ux: f64,
    uy: f64,
    samples: usize,
}

/// Per-bin densities and mean speeds.
///
/// Speeds are forward differences between consecutive records of a vehicle
/// and are credited to the bin of the earlier record. A vehicle counts once
/// towards the density of every bin holding one of its records. Bins without
/// a speed sample are skipped.
pub fn aggregate(records: &[TrajectoryRecord], agg: &Aggregation) -> Result<Vec<BinStats>> {
    if !(agg.dt_window > 0.0 && agg.dx_window > 0.0) || agg.lane_count == 0 {
        return Err(Error::param(
            "dx_window",
            "windows and lane count must be positive",
        ));
    }
    let mut by_vehicle: BTreeMap<&str, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        by_vehicle.entry(r.vehicle_id.as_str()).or_default().push(r);
    }
    let inside = |r: &TrajectoryRecord| agg.road_length.is_none_or(|l| r.x < l) && r.x >= 0.0;
    let bin = |r: &TrajectoryRecord| {
        (
            (r.t / agg.dt_window).floor() as i64,
            (r.x / agg.dx_window).floor() as i64,
        )
    };
    let mut bins: BTreeMap<(i64, i64), Acc> = BTreeMap::new();
    for (id, recs) in &by_vehicle {
        for pair in recs.windows(2) {
            if !(pair[1].t > pair[0].t) {
                return Err(Error::Input(format!(
                    "timestamps of vehicle {id} are not increasing at t = {}",
                    pair[1].t
                )));
            }
        }
        for (k, r) in recs.iter().enumerate() {
            if !inside(r) {
                continue;
            }
            let acc = bins.entry(bin(r)).or_default();
            acc.vehicles.insert(id.to_string());
            if let Some(next) = recs.get(k + 1) {
                let dt = next.t - r.t;
                acc.ux += (next.x - r.x) / dt;
                acc.uy += (next.y - r.y) / dt;
                acc.samples += 1;
            }
        }
    }
    let area = agg.dx_window * agg.lane_count as f64;
    Ok(bins
        .into_iter()
        .filter(|(_, a)| a.samples > 0)
        .map(|((t_bin, x_bin), a)| BinStats {
            t_bin,
            x_bin,
            density: a.vehicles.len() as f64 / area,
            ux: a.ux / a.samples as f64,
            uy: a.uy / a.samples as f64,
        })
        .collect())
}

/// Scales density and along-lane speed by their dataset maxima and the
/// lateral speed by its largest magnitude, keeping the sign.
pub fn normalize(stats: &[BinStats]) -> Vec<AggregatedSample> {
    let max_rho = stats.iter().map(|s| s.density).fold(0.0, f64::max);
    let max_ux = stats.iter().map(|s| s.ux.abs()).fold(0.0, f64::max);
    let max_uy = stats.iter().map(|s| s.uy.abs()).fold(0.0, f64::max);
    let scale = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    stats
        .iter()
        .map(|s| AggregatedSample {
            t_bin: s.t_bin,
            x_bin: s.x_bin,
            rho_norm: scale(s.density, max_rho),
            ux_norm: scale(s.ux, max_ux),
            uy_norm: scale(s.uy, max_uy),
        })
        .collect()
}

pub fn ingest_trajectories(path: &Path, agg: &Aggregation) -> Result<Vec<AggregatedSample>> {
    Ok(normalize(&aggregate(&read_trajectories(path)?, agg)?))
}

pub fn write_samples_csv(path: &Path, samples: &[AggregatedSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_bin", "x_bin", "rho_norm", "ux_norm", "uy_norm"])?;
    for s in samples {
        w.write_record(&[
            s.t_bin.to_string(),
            s.x_bin.to_string(),
            s.rho_norm.to_string(),
            s.ux_norm.to_string(),
            s.uy_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
