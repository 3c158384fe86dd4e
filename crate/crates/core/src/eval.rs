//! Deviation metrics and comparison reports across aggregation approaches.

use crate::aggregate::AevEnvelope;
use crate::dispatch::{DispatchSchedule, FleetReference};
use crate::grid::{weekday_name, TimeGrid};
use crate::prices::PriceSeries;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series must be non-empty")]
    Empty,
    #[error("duplicate approach name `{0}`")]
    DuplicateName(String),
    #[error("schedule `{name}` has {got} steps, reference has {want}")]
    GridMismatch {
        name: String,
        got: usize,
        want: usize,
    },
    #[error("missing input for figure data: {0}")]
    MissingInput(String),
}

/// Root-mean-square error between two equally long series.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum_sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum_sq / a.len() as f64).sqrt())
}

/// One comparison row: an approach's AEV schedule plus optional solver stats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproachRow {
    pub name: String,
    pub objective: Option<f64>,
    pub best_bound: Option<f64>,
    pub rel_gap: Option<f64>,
    /// MW (numerically MWh/h on the hourly grid).
    pub rmse_charge: f64,
    pub rmse_discharge: f64,
    /// MWh.
    pub rmse_soc: f64,
}

/// Study metadata carried on every report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub steps: usize,
    pub start_weekday: u8,
    pub fleet_size: usize,
    pub seed: Option<u64>,
    pub config_digest: String,
    pub aggregation_param_rule: String,
    pub soc_min_source: String,
}

/// Table-style comparison of approaches against the fleet reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub meta: ReportMeta,
    pub rows: Vec<ApproachRow>,
}

/// An approach to evaluate: a name, the AEV dispatch it produced, and
/// optional solver statistics for the report row.
#[derive(Debug, Clone)]
pub struct Approach {
    pub name: String,
    pub schedule: DispatchSchedule,
    pub objective: Option<f64>,
    pub best_bound: Option<f64>,
    pub rel_gap: Option<f64>,
}

/// Compute RMSE rows for every approach against the reference sums.
pub fn evaluate(
    approaches: &[Approach],
    reference: &FleetReference,
    meta: ReportMeta,
) -> Result<EvalReport, EvalError> {
    let mut seen = BTreeSet::new();
    let mut rows = Vec::with_capacity(approaches.len());
    for a in approaches {
        if !seen.insert(a.name.clone()) {
            return Err(EvalError::DuplicateName(a.name.clone()));
        }
        if a.schedule.len() != reference.grid.steps() {
            return Err(EvalError::GridMismatch {
                name: a.name.clone(),
                got: a.schedule.len(),
                want: reference.grid.steps(),
            });
        }
        rows.push(ApproachRow {
            name: a.name.clone(),
            objective: a.objective,
            best_bound: a.best_bound,
            rel_gap: a.rel_gap,
            rmse_charge: rmse(&a.schedule.charge, &reference.agg_charge)?,
            rmse_discharge: rmse(&a.schedule.discharge, &reference.agg_discharge)?,
            rmse_soc: rmse(&a.schedule.soc, &reference.agg_soc)?,
        });
    }
    Ok(EvalReport {
        schema_version: 1,
        meta,
        rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x}"))
}

/// CSV rendering: header plus one line per approach.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from(
        "approach,objective,best_bound,rel_gap,rmse_charge_mw,rmse_discharge_mw,rmse_soc_mwh\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.name,
            fmt_opt(r.objective),
            fmt_opt(r.best_bound),
            fmt_opt(r.rel_gap),
            r.rmse_charge,
            r.rmse_discharge,
            r.rmse_soc
        );
    }
    out
}

pub fn report_to_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn report_from_json(text: &str) -> Result<EvalReport, serde_json::Error> {
    serde_json::from_str(text)
}

/// Inputs for figure-ready data files.
pub enum FigureData<'a> {
    /// Price, reference and per-approach charge/SOC trajectories over time.
    PriceSocCharge {
        prices: &'a PriceSeries,
        reference: &'a FleetReference,
        approaches: &'a [(&'a str, &'a DispatchSchedule)],
    },
    /// `(role, tau, weekday, mapping, value)` tuples per fitted mapping.
    ScalingFactors {
        grid: &'a TimeGrid,
        maps: &'a [(&'a str, &'a crate::aggregate::ScalingMap)],
    },
    /// Per-mapping envelope corridors with the reference overlay.
    Envelopes {
        reference: &'a FleetReference,
        envelopes: &'a [(&'a str, &'a AevEnvelope)],
    },
}

/// Emit tidy CSV files for plotting; returns `(file_stem, contents)` pairs.
pub fn emit_figure_data(data: &FigureData) -> Result<Vec<(String, String)>, EvalError> {
    match data {
        FigureData::PriceSocCharge {
            prices,
            reference,
            approaches,
        } => {
            let t_total = reference.grid.steps();
            if prices.len() != t_total {
                return Err(EvalError::MissingInput(format!(
                    "price series has {} steps, reference {}",
                    prices.len(),
                    t_total
                )));
            }
            for (name, s) in approaches.iter() {
                if s.len() != t_total {
                    return Err(EvalError::GridMismatch {
                        name: (*name).to_string(),
                        got: s.len(),
                        want: t_total,
                    });
                }
            }
            let mut out = String::from("t,price_eur_mwh,ref_charge,ref_discharge,ref_soc");
            for (name, _) in approaches.iter() {
                let _ = write!(out, ",{name}_charge,{name}_discharge,{name}_soc");
            }
            out.push('\n');
            for t in 0..t_total {
                let _ = write!(
                    out,
                    "{},{},{},{},{}",
                    t,
                    prices.values()[t],
                    reference.agg_charge[t],
                    reference.agg_discharge[t],
                    reference.agg_soc[t]
                );
                for (_, s) in approaches.iter() {
                    let _ = write!(out, ",{},{},{}", s.charge[t], s.discharge[t], s.soc[t]);
                }
                out.push('\n');
            }
            Ok(vec![("fig_price_soc_charge".to_string(), out)])
        }
        FigureData::ScalingFactors { grid, maps } => {
            let mut out = String::from("mapping,role,tau,weekday,value\n");
            for (mapping, map) in maps.iter() {
                for (role, arr) in map.roles() {
                    for (tau, v) in arr.iter().enumerate() {
                        // The weekday label of the group's first hour, taking
                        // the horizon's start weekday into account.
                        let hour = tau * map.group_width;
                        let wd = weekday_name(grid.weekday_of_step(hour % grid.steps().max(1)));
                        let _ = writeln!(out, "{mapping},{role},{tau},{wd},{v}");
                    }
                }
            }
            Ok(vec![("fig_scaling_factors".to_string(), out)])
        }
        FigureData::Envelopes {
            reference,
            envelopes,
        } => {
            let t_total = reference.grid.steps();
            let mut files = Vec::new();
            for (name, env) in envelopes.iter() {
                if env.grid.steps() != t_total {
                    return Err(EvalError::GridMismatch {
                        name: (*name).to_string(),
                        got: env.grid.steps(),
                        want: t_total,
                    });
                }
                let mut out = String::from(
                    "t,charge_min,charge_max,discharge_min,discharge_max,soc_min,soc_max,ref_charge,ref_soc\n",
                );
                for t in 0..t_total {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        t,
                        env.charge_min[t],
                        env.charge_max[t],
                        env.discharge_min[t],
                        env.discharge_max[t],
                        env.soc_min[t],
                        env.soc_max[t],
                        reference.agg_charge[t],
                        reference.agg_soc[t]
                    );
                }
                files.push((format!("fig_envelope_{name}"), out));
            }
            Ok(files)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference(t: usize) -> FleetReference {
        FleetReference {
            grid: TimeGrid::new(t, 0).unwrap(),
            agg_charge: (0..t).map(|i| i as f64 * 0.1).collect(),
            agg_discharge: vec![0.0; t],
            agg_soc: (0..t).map(|i| 1.0 + i as f64).collect(),
            total_objective: 1.0,
            member_ids: vec!["a".into()],
        }
    }

    fn schedule_of(r: &FleetReference, name: &str) -> DispatchSchedule {
        DispatchSchedule {
            owner: name.into(),
            charge: r.agg_charge.clone(),
            discharge: r.agg_discharge.clone(),
            soc: r.agg_soc.clone(),
            objective: 0.0,
        }
    }

    #[test]
    fn rmse_hand_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let v = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((v - 12.5_f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn rmse_two_pass_oracle() {
        // Independent two-pass computation: mean of squares, then sqrt.
        let a: Vec<f64> = (0..97).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..97).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut acc = 0.0;
        for i in 0..97 {
            let d = a[i] - b[i];
            acc += d * d;
        }
        let expected = (acc / 97.0).sqrt();
        assert!((rmse(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rmse_metric_properties(
            a in proptest::collection::vec(-1e3..1e3f64, 1..40),
            scale in 0.1..10.0f64,
        ) {
            let b: Vec<f64> = a.iter().map(|v| v * 0.5 + 1.0).collect();
            let ab = rmse(&a, &b).unwrap();
            let ba = rmse(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab.abs()));
            prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
            let sa: Vec<f64> = a.iter().map(|v| scale * v).collect();
            let sb: Vec<f64> = b.iter().map(|v| scale * v).collect();
            let scaled = rmse(&sa, &sb).unwrap();
            prop_assert!((scaled - scale * ab).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }
    }

    #[test]
    fn reference_row_is_all_zero() {
        let r = reference(8);
        let rep = evaluate(
            &[Approach {
                name: "self".into(),
                schedule: schedule_of(&r, "self"),
                objective: None,
                best_bound: None,
                rel_gap: None,
            }],
            &r,
            ReportMeta::default(),
        )
        .unwrap();
        assert_eq!(rep.rows[0].rmse_charge, 0.0);
        assert_eq!(rep.rows[0].rmse_soc, 0.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = reference(4);
        let a = Approach {
            name: "x".into(),
            schedule: schedule_of(&r, "x"),
            objective: None,
            best_bound: None,
            rel_gap: None,
        };
        assert!(matches!(
            evaluate(&[a.clone(), a], &r, ReportMeta::default()),
            Err(EvalError::DuplicateName(_))
        ));
    }

    #[test]
    fn csv_golden_and_json_round_trip() {
        let r = reference(4);
        let mut sched = schedule_of(&r, "sa");
        sched.charge[0] += 2.0;
        let rep = evaluate(
            &[Approach {
                name: "sa".into(),
                schedule: sched,
                objective: Some(1.5),
                best_bound: None,
                rel_gap: None,
            }],
            &r,
            ReportMeta::default(),
        )
        .unwrap();
        let csv = report_to_csv(&rep);
        assert_eq!(
            csv,
            "approach,objective,best_bound,rel_gap,rmse_charge_mw,rmse_discharge_mw,rmse_soc_mwh\n\
             sa,1.5,n/a,n/a,1,0,0\n"
        );
        let back = report_from_json(&report_to_json(&rep)).unwrap();
        assert_eq!(back.rows.len(), 1);
        assert_eq!(back.rows[0].rmse_charge, 1.0);
        // Empty report keeps the header.
        let empty = evaluate(&[], &r, ReportMeta::default()).unwrap();
        assert_eq!(report_to_csv(&empty).lines().count(), 1);
    }

    #[test]
    fn figure_data_shapes() {
        let r = reference(6);
        let grid = r.grid;
        let prices = PriceSeries::new(vec![10.0; 6], &grid).unwrap();
        let s = schedule_of(&r, "aev_n24");
        let files = emit_figure_data(&FigureData::PriceSocCharge {
            prices: &prices,
            reference: &r,
            approaches: &[("aev_n24", &s)],
        })
        .unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].1.lines().count(), 7);
        let map = crate::aggregate::ScalingMap::unit(24).unwrap();
        let files = emit_figure_data(&FigureData::ScalingFactors {
            grid: &grid,
            maps: &[("24h", &map)],
        })
        .unwrap();
        assert!(files[0].1.lines().skip(1).all(|l| l.ends_with(",1")));
        assert_eq!(files[0].1.lines().count(), 1 + 6 * 7);
    }
}
