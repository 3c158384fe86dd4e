//! Fleet CSV schemas.
//!
//! Series file: one row per (vehicle, step) with columns
//! `vehicle_id, t, demand_drive, demand_thermal, charge_min, charge_max,
//! discharge_min, discharge_max, soc_min, soc_max`.
//! Sidecar parameter file: one row per vehicle with columns
//! `vehicle_id, rho, eta_c, eta_d, final_soc_target`.

use super::{EvParams, EvProfile};
use crate::grid::TimeGrid;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileCsvError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("vehicle `{id}`: {msg}")]
    Vehicle { id: String, msg: String },
    #[error("vehicle `{id}`, step {step}, column `{column}`: {msg}")]
    Cell {
        id: String,
        step: usize,
        column: String,
        msg: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesRow {
    vehicle_id: String,
    t: usize,
    demand_drive: f64,
    demand_thermal: f64,
    charge_min: f64,
    charge_max: f64,
    discharge_min: f64,
    discharge_max: f64,
    soc_min: f64,
    soc_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsRow {
    vehicle_id: String,
    rho: f64,
    eta_c: f64,
    eta_d: f64,
    final_soc_target: f64,
}

pub fn fleet_to_csv(fleet: &[EvProfile]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in fleet {
        for t in 0..p.grid.steps() {
            w.serialize(SeriesRow {
                vehicle_id: p.id.clone(),
                t,
                demand_drive: p.demand_drive[t],
                demand_thermal: p.demand_thermal[t],
                charge_min: p.charge_min[t],
                charge_max: p.charge_max[t],
                discharge_min: p.discharge_min[t],
                discharge_max: p.discharge_max[t],
                soc_min: p.soc_min[t],
                soc_max: p.soc_max[t],
            })
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf8")
}

pub fn fleet_params_to_csv(fleet: &[EvProfile]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in fleet {
        w.serialize(ParamsRow {
            vehicle_id: p.id.clone(),
            rho: p.params.self_discharge,
            eta_c: p.params.eff_charge,
            eta_d: p.params.eff_discharge,
            final_soc_target: p.params.final_soc_target,
        })
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf8")
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse fleet series and parameter CSVs into profiles aligned to `grid`.
/// Vehicles are ordered by first appearance in the series file.
pub fn load_profiles_csv(
    series_text: &str,
    params_text: &str,
    grid: &TimeGrid,
) -> Result<Vec<EvProfile>, ProfileCsvError> {
    let mut params: BTreeMap<String, EvParams> = BTreeMap::new();
    let params_clean = strip_comments(params_text);
    let mut reader = csv::Reader::from_reader(params_clean.as_bytes());
    for (i, rec) in reader.deserialize::<ParamsRow>().enumerate() {
        let rec = rec.map_err(|e| ProfileCsvError::Row {
            row: i + 2,
            msg: format!("params file: {e}"),
        })?;
        params.insert(
            rec.vehicle_id.clone(),
            EvParams {
                self_discharge: rec.rho,
                eff_charge: rec.eta_c,
                eff_discharge: rec.eta_d,
                final_soc_target: rec.final_soc_target,
            },
        );
    }

    let mut order: Vec<String> = Vec::new();
    let mut partial: BTreeMap<String, Vec<Option<SeriesRow>>> = BTreeMap::new();
    let series_clean = strip_comments(series_text);
    let mut reader = csv::Reader::from_reader(series_clean.as_bytes());
    for (i, rec) in reader.deserialize::<SeriesRow>().enumerate() {
        let rec = rec.map_err(|e| ProfileCsvError::Row {
            row: i + 2,
            msg: format!("series file: {e}"),
        })?;
        if rec.t >= grid.steps() {
            return Err(ProfileCsvError::Cell {
                id: rec.vehicle_id,
                step: rec.t,
                column: "t".into(),
                msg: format!("step outside grid of {} steps", grid.steps()),
            });
        }
        let slot = partial.entry(rec.vehicle_id.clone()).or_insert_with(|| {
            order.push(rec.vehicle_id.clone());
            (0..grid.steps()).map(|_| None).collect()
        });
        if slot[rec.t].is_some() {
            return Err(ProfileCsvError::Cell {
                id: rec.vehicle_id,
                step: rec.t,
                column: "t".into(),
                msg: "duplicate (vehicle, step) row".into(),
            });
        }
        let t = rec.t;
        slot[t] = Some(rec);
    }

    let mut fleet = Vec::with_capacity(order.len());
    for id in order {
        let rows = partial.remove(&id).expect("inserted above");
        let p = params.get(&id).ok_or_else(|| ProfileCsvError::Vehicle {
            id: id.clone(),
            msg: "missing row in parameters file".into(),
        })?;
        let mut profile = EvProfile {
            id: id.clone(),
            grid: *grid,
            params: *p,
            demand_drive: vec![0.0; grid.steps()],
            demand_thermal: vec![0.0; grid.steps()],
            charge_min: vec![0.0; grid.steps()],
            charge_max: vec![0.0; grid.steps()],
            discharge_min: vec![0.0; grid.steps()],
            discharge_max: vec![0.0; grid.steps()],
            soc_min: vec![0.0; grid.steps()],
            soc_max: vec![0.0; grid.steps()],
        };
        for (t, row) in rows.into_iter().enumerate() {
            let row = row.ok_or_else(|| ProfileCsvError::Vehicle {
                id: id.clone(),
                msg: format!("missing step {t}; series must cover every grid step"),
            })?;
            profile.demand_drive[t] = row.demand_drive;
            profile.demand_thermal[t] = row.demand_thermal;
            profile.charge_min[t] = row.charge_min;
            profile.charge_max[t] = row.charge_max;
            profile.discharge_min[t] = row.discharge_min;
            profile.discharge_max[t] = row.discharge_max;
            profile.soc_min[t] = row.soc_min;
            profile.soc_max[t] = row.soc_max;
        }
        // Surface bound violations with their position instead of loading
        // silently broken data.
        for t in 0..grid.steps() {
            for (col, lo, hi) in [
                ("charge", profile.charge_min[t], profile.charge_max[t]),
                ("discharge", profile.discharge_min[t], profile.discharge_max[t]),
                ("soc", profile.soc_min[t], profile.soc_max[t]),
            ] {
                if lo > hi {
                    return Err(ProfileCsvError::Cell {
                        id: id.clone(),
                        step: t,
                        column: format!("{col}_min/{col}_max"),
                        msg: format!("bounds inverted: {lo} > {hi}"),
                    });
                }
            }
        }
        fleet.push(profile);
    }
    Ok(fleet)
}
