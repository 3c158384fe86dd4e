//! Unit dispatch: cost-minimizing charge/discharge/SOC scheduling of a single
//! storage unit against an hourly price series, for individual vehicles and
//! for the aggregated unit alike, plus assembly of the fleet reference.

use crate::grid::TimeGrid;
use crate::lp::{
    check_duality, solve_lp, solve_qp, DualityReport, LinearModel, LpSolution, RowId, Sense,
    SolveStatus, ToleranceConfig, VarId,
};
use crate::prices::PriceSeries;
use crate::profiles::{EvParams, EvProfile};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("dispatch problem for `{owner}` is infeasible")]
    Infeasible {
        owner: String,
        farkas: Option<Vec<f64>>,
    },
    #[error("dispatch problem for `{owner}` is unbounded")]
    Unbounded { owner: String },
    #[error("solver hit its iteration limit on `{owner}`")]
    IterationLimit { owner: String },
    #[error("series length {got} does not match grid length {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("no schedules to aggregate")]
    EmptyFleet,
    #[error(transparent)]
    Lp(#[from] crate::lp::LpError),
}

/// A (charge, discharge, SOC) trajectory with its dispatch cost
/// `sum_t price_t (charge_t - discharge_t)` in EUR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSchedule {
    pub owner: String,
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    pub soc: Vec<f64>,
    pub objective: f64,
}

impl DispatchSchedule {
    pub fn len(&self) -> usize {
        self.charge.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charge.is_empty()
    }

    pub fn cost(&self, prices: &PriceSeries) -> f64 {
        prices
            .values()
            .iter()
            .zip(self.charge.iter().zip(&self.discharge))
            .map(|(p, (c, d))| p * (c - d))
            .sum()
    }
}

/// Borrowed per-step bound series; both [`EvProfile`] and the AEV envelope
/// expose this view.
#[derive(Debug, Clone, Copy)]
pub struct UnitBounds<'a> {
    pub charge_min: &'a [f64],
    pub charge_max: &'a [f64],
    pub discharge_min: &'a [f64],
    pub discharge_max: &'a [f64],
    pub soc_min: &'a [f64],
    pub soc_max: &'a [f64],
}

impl<'a> UnitBounds<'a> {
    pub fn of_profile(p: &'a EvProfile) -> Self {
        Self {
            charge_min: &p.charge_min,
            charge_max: &p.charge_max,
            discharge_min: &p.discharge_min,
            discharge_max: &p.discharge_max,
            soc_min: &p.soc_min,
            soc_max: &p.soc_max,
        }
    }
}

/// Variable/row handles of an assembled unit dispatch LP.
pub struct UnitLp {
    pub model: LinearModel,
    pub xc: Vec<VarId>,
    pub xd: Vec<VarId>,
    pub xs: Vec<VarId>,
    /// Storage continuity rows; the last one is the terminal condition.
    pub continuity: Vec<RowId>,
}

/// Assemble the unit dispatch LP:
/// minimize `sum_t price_t (xc_t - xd_t)` subject to per-step bounds and the
/// storage continuity `xs_{t+1} = rho xs_t - demand_t + etaC xc_t - xd_t/etaD`,
/// with the final step pinned to `params.final_soc_target`.
pub fn build_unit_lp(
    name: &str,
    bounds: UnitBounds,
    params: &EvParams,
    demand: &[f64],
    prices: &PriceSeries,
) -> Result<UnitLp, DispatchError> {
    let t_total = demand.len();
    if prices.len() != t_total {
        return Err(DispatchError::LengthMismatch {
            got: prices.len(),
            want: t_total,
        });
    }
    let mut model = LinearModel::new(name);
    let mut xc = Vec::with_capacity(t_total);
    let mut xd = Vec::with_capacity(t_total);
    let mut xs = Vec::with_capacity(t_total);
    for t in 0..t_total {
        xc.push(model.add_var(format!("xC{t}"), bounds.charge_min[t], bounds.charge_max[t])?);
        xd.push(model.add_var(
            format!("xD{t}"),
            bounds.discharge_min[t],
            bounds.discharge_max[t],
        )?);
        xs.push(model.add_var(format!("xS{t}"), bounds.soc_min[t], bounds.soc_max[t])?);
    }
    for t in 0..t_total {
        model.set_obj_coef(xc[t], prices.values()[t]);
        model.set_obj_coef(xd[t], -prices.values()[t]);
    }
    let rho = params.self_discharge;
    let eta_c = params.eff_charge;
    let inv_eta_d = 1.0 / params.eff_discharge;
    let mut continuity = Vec::with_capacity(t_total);
    for t in 0..t_total - 1 {
        continuity.push(model.add_row(
            format!("cont{t}"),
            Sense::Eq,
            -demand[t],
            &[
                (xs[t + 1], 1.0),
                (xs[t], -rho),
                (xc[t], -eta_c),
                (xd[t], inv_eta_d),
            ],
        )?);
    }
    let last = t_total - 1;
    continuity.push(model.add_row(
        "term",
        Sense::Eq,
        -demand[last] - params.final_soc_target,
        &[(xs[last], -rho), (xc[last], -eta_c), (xd[last], inv_eta_d)],
    )?);
    Ok(UnitLp {
        model,
        xc,
        xd,
        xs,
        continuity,
    })
}

/// Inner-problem dual trajectories extracted from a unit LP solution:
/// `lambda` on the continuity rows and the six bound multiplier families
/// (charge lo/up, discharge lo/up, SOC lo/up).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitDuals {
    pub lambda: Vec<f64>,
    pub mu: [Vec<f64>; 6],
}

#[derive(Debug, Clone)]
pub struct UnitSolve {
    pub schedule: DispatchSchedule,
    pub duals: UnitDuals,
    pub duality: DualityReport,
    pub lp_objective: f64,
}

fn extract_unit_solution(
    owner: &str,
    unit: &UnitLp,
    sol: &LpSolution,
    prices: &PriceSeries,
) -> UnitSolve {
    let t_total = unit.xc.len();
    let mut charge = Vec::with_capacity(t_total);
    let mut discharge = Vec::with_capacity(t_total);
    let mut soc = Vec::with_capacity(t_total);
    for t in 0..t_total {
        charge.push(sol.primal[unit.xc[t].0]);
        discharge.push(sol.primal[unit.xd[t].0]);
        soc.push(sol.primal[unit.xs[t].0]);
    }
    // Lagrangian convention: continuity written as
    // xs_{t+1} - rho xs_t + demand - etaC xc + xd/etaD = 0 with multiplier
    // lambda added, which is the negated shadow price.
    let lambda: Vec<f64> = unit.continuity.iter().map(|r| -sol.duals[r.0]).collect();
    let split = |ids: &[VarId]| -> (Vec<f64>, Vec<f64>) {
        let lo = ids.iter().map(|v| sol.reduced_costs[v.0].max(0.0)).collect();
        let up = ids
            .iter()
            .map(|v| (-sol.reduced_costs[v.0]).max(0.0))
            .collect();
        (lo, up)
    };
    let (mu1, mu2) = split(&unit.xc);
    let (mu3, mu4) = split(&unit.xd);
    let (mu5, mu6) = split(&unit.xs);
    let schedule = DispatchSchedule {
        owner: owner.to_string(),
        objective: prices
            .values()
            .iter()
            .zip(charge.iter().zip(&discharge))
            .map(|(p, (c, d))| p * (c - d))
            .sum(),
        charge,
        discharge,
        soc,
    };
    UnitSolve {
        schedule,
        duals: UnitDuals {
            lambda,
            mu: [mu1, mu2, mu3, mu4, mu5, mu6],
        },
        duality: DualityReport {
            primal_residual: 0.0,
            dual_residual: 0.0,
            complementarity: 0.0,
            duality_gap: 0.0,
            rel_gap: 0.0,
            objective_primal: 0.0,
            objective_dual: 0.0,
        },
        lp_objective: sol.objective,
    }
}

/// Optional quadratic pull toward a given schedule (the uncontrolled behavior),
/// `weight * sum_t (xc_t - anchor_t)^2` added to the dispatch cost.
#[derive(Debug, Clone)]
pub struct Anchor<'a> {
    pub weight: f64,
    pub charge: &'a [f64],
}

/// Solve the unit dispatch problem for arbitrary bounds/params. Returns the
/// schedule, the dual trajectories, and the duality report of the solve.
pub fn solve_unit(
    owner: &str,
    bounds: UnitBounds,
    params: &EvParams,
    demand: &[f64],
    prices: &PriceSeries,
    anchor: Option<&Anchor>,
    tol: &ToleranceConfig,
) -> Result<UnitSolve, DispatchError> {
    let mut unit = build_unit_lp(owner, bounds, params, demand, prices)?;
    if let Some(a) = anchor {
        for t in 0..unit.xc.len() {
            unit.model
                .add_sq_term(a.weight, vec![(unit.xc[t], 1.0)], -a.charge[t])
                .map_err(DispatchError::Lp)?;
        }
    }
    let sol = if anchor.is_some() {
        solve_qp(&unit.model, tol)?
    } else {
        solve_lp(&unit.model, tol)?
    };
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(DispatchError::Infeasible {
                owner: owner.to_string(),
                farkas: sol.farkas,
            })
        }
        SolveStatus::Unbounded => {
            return Err(DispatchError::Unbounded {
                owner: owner.to_string(),
            })
        }
        SolveStatus::IterationLimit => {
            return Err(DispatchError::IterationLimit {
                owner: owner.to_string(),
            })
        }
    }
    let mut out = extract_unit_solution(owner, &unit, &sol, prices);
    out.duality = check_duality(&unit.model, &sol);
    Ok(out)
}

/// Solve the individual EV dispatch problem for one vehicle.
pub fn solve_individual(
    profile: &EvProfile,
    prices: &PriceSeries,
    anchor: Option<&Anchor>,
    tol: &ToleranceConfig,
) -> Result<UnitSolve, DispatchError> {
    let demand: Vec<f64> = (0..profile.grid.steps()).map(|t| profile.demand(t)).collect();
    solve_unit(
        &profile.id,
        UnitBounds::of_profile(profile),
        &profile.params,
        &demand,
        prices,
        anchor,
        tol,
    )
}

/// Elementwise sums of the member schedules; the outer-level fitting target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetReference {
    pub grid: TimeGrid,
    pub agg_charge: Vec<f64>,
    pub agg_discharge: Vec<f64>,
    pub agg_soc: Vec<f64>,
    pub total_objective: f64,
    pub member_ids: Vec<String>,
}

pub fn build_reference(
    schedules: &[DispatchSchedule],
    grid: TimeGrid,
) -> Result<FleetReference, DispatchError> {
    if schedules.is_empty() {
        return Err(DispatchError::EmptyFleet);
    }
    let t_total = grid.steps();
    let mut agg_charge = vec![0.0; t_total];
    let mut agg_discharge = vec![0.0; t_total];
    let mut agg_soc = vec![0.0; t_total];
    let mut total_objective = 0.0;
    let mut member_ids = Vec::with_capacity(schedules.len());
    for s in schedules {
        if s.len() != t_total {
            return Err(DispatchError::LengthMismatch {
                got: s.len(),
                want: t_total,
            });
        }
        for t in 0..t_total {
            agg_charge[t] += s.charge[t];
            agg_discharge[t] += s.discharge[t];
            agg_soc[t] += s.soc[t];
        }
        total_objective += s.objective;
        member_ids.push(s.owner.clone());
    }
    Ok(FleetReference {
        grid,
        agg_charge,
        agg_discharge,
        agg_soc,
        total_objective,
        member_ids,
    })
}

/// Solve every vehicle and assemble the reference. Per-vehicle problems are
/// independent and solved in parallel; output order follows the input order.
pub fn solve_fleet_reference(
    fleet: &[EvProfile],
    prices: &PriceSeries,
    anchor_weight: Option<f64>,
    uncontrolled: Option<&[DispatchSchedule]>,
    tol: &ToleranceConfig,
) -> Result<(Vec<UnitSolve>, FleetReference), DispatchError> {
    if fleet.is_empty() {
        return Err(DispatchError::EmptyFleet);
    }
    let grid = fleet[0].grid;
    let solves: Result<Vec<UnitSolve>, DispatchError> = fleet
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let anchor_data;
            let anchor = match (anchor_weight, uncontrolled) {
                (Some(w), Some(unc)) if w > 0.0 => {
                    anchor_data = Anchor {
                        weight: w,
                        charge: &unc[i].charge,
                    };
                    Some(&anchor_data)
                }
                _ => None,
            };
            solve_individual(p, prices, anchor, tol)
        })
        .collect();
    let solves = solves?;
    let schedules: Vec<DispatchSchedule> = solves.iter().map(|s| s.schedule.clone()).collect();
    let reference = build_reference(&schedules, grid)?;
    Ok((solves, reference))
}

/// How the end-of-horizon storage requirement is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalRule {
    /// The implied post-horizon SOC must equal the target (the optimization
    /// problem's convention).
    Exact,
    /// It must only reach the target; behavioral (uncontrolled) schedules end
    /// wherever greedy charging puts them.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleViolation {
    pub step: usize,
    pub what: String,
    pub amount: f64,
}

/// Evaluate a schedule against bounds and storage dynamics. Used for both
/// optimized and uncontrolled schedules.
pub fn schedule_violations(
    schedule: &DispatchSchedule,
    bounds: UnitBounds,
    params: &EvParams,
    demand: &[f64],
    terminal: TerminalRule,
    tol: f64,
) -> Vec<ScheduleViolation> {
    let mut out = Vec::new();
    let t_total = demand.len();
    if schedule.len() != t_total {
        out.push(ScheduleViolation {
            step: 0,
            what: format!("length {} != horizon {}", schedule.len(), t_total),
            amount: (schedule.len() as f64 - t_total as f64).abs(),
        });
        return out;
    }
    let mut check = |step: usize, what: &str, violation: f64| {
        if violation > tol {
            out.push(ScheduleViolation {
                step,
                what: what.to_string(),
                amount: violation,
            });
        }
    };
    for t in 0..t_total {
        check(t, "charge below minimum", bounds.charge_min[t] - schedule.charge[t]);
        check(t, "charge above maximum", schedule.charge[t] - bounds.charge_max[t]);
        check(
            t,
            "discharge below minimum",
            bounds.discharge_min[t] - schedule.discharge[t],
        );
        check(
            t,
            "discharge above maximum",
            schedule.discharge[t] - bounds.discharge_max[t],
        );
        check(t, "soc below minimum", bounds.soc_min[t] - schedule.soc[t]);
        check(t, "soc above maximum", schedule.soc[t] - bounds.soc_max[t]);
    }
    for t in 0..t_total {
        let next = params.self_discharge * schedule.soc[t] - demand[t]
            + params.eff_charge * schedule.charge[t]
            - schedule.discharge[t] / params.eff_discharge;
        if t + 1 < t_total {
            check(t + 1, "storage continuity", (schedule.soc[t + 1] - next).abs());
        } else {
            match terminal {
                TerminalRule::Exact => {
                    check(t, "terminal storage target", (next - params.final_soc_target).abs())
                }
                TerminalRule::AtLeast => {
                    check(t, "terminal storage target", params.final_soc_target - next)
                }
            }
        }
    }
    out
}

/// Reference CSV: `t, agg_charge, agg_discharge, agg_soc`.
pub fn reference_to_csv(reference: &FleetReference) -> String {
    let mut out = String::from("t,agg_charge,agg_discharge,agg_soc\n");
    for t in 0..reference.grid.steps() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t, reference.agg_charge[t], reference.agg_discharge[t], reference.agg_soc[t]
        ));
    }
    out
}

pub fn reference_from_csv(text: &str, grid: TimeGrid) -> Result<FleetReference, DispatchError> {
    let mut agg_charge = vec![0.0; grid.steps()];
    let mut agg_discharge = vec![0.0; grid.steps()];
    let mut agg_soc = vec![0.0; grid.steps()];
    let mut count = 0usize;
    for line in text.lines().skip_while(|l| l.starts_with('#')).skip(1) {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            continue;
        }
        let t: usize = cols[0].trim().parse().map_err(|_| DispatchError::LengthMismatch {
            got: 0,
            want: grid.steps(),
        })?;
        agg_charge[t] = cols[1].trim().parse().unwrap_or(f64::NAN);
        agg_discharge[t] = cols[2].trim().parse().unwrap_or(f64::NAN);
        agg_soc[t] = cols[3].trim().parse().unwrap_or(f64::NAN);
        count += 1;
    }
    if count != grid.steps() {
        return Err(DispatchError::LengthMismatch {
            got: count,
            want: grid.steps(),
        });
    }
    Ok(FleetReference {
        grid,
        agg_charge,
        agg_discharge,
        agg_soc,
        total_objective: f64::NAN,
        member_ids: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params_ideal(target: f64) -> EvParams {
        EvParams {
            self_discharge: 1.0,
            eff_charge: 1.0,
            eff_discharge: 1.0,
            final_soc_target: target,
        }
    }

    fn series(grid: &TimeGrid, v: Vec<f64>) -> PriceSeries {
        PriceSeries::new(v, grid).unwrap()
    }

    #[test]
    fn no_demand_positive_price_means_no_charging() {
        let grid = TimeGrid::new(1, 0).unwrap();
        let prices = series(&grid, vec![10.0]);
        let bounds = UnitBounds {
            charge_min: &[0.0],
            charge_max: &[1.0],
            discharge_min: &[0.0],
            discharge_max: &[0.0],
            soc_min: &[0.0],
            soc_max: &[1.0],
        };
        let sol = solve_unit(
            "u",
            bounds,
            &params_ideal(0.0),
            &[0.0],
            &prices,
            None,
            &ToleranceConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.schedule.charge[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.schedule.objective, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn charges_in_the_cheap_hour() {
        // Demand of 1 MWh falls in step 2; the battery starts empty (step-0
        // SOC pinned to zero) so the energy must be bought, and with equal
        // availability the unit buys at the cheaper price 10.
        let grid = TimeGrid::new(2, 0).unwrap();
        let prices = series(&grid, vec![50.0, 10.0]);
        let bounds = UnitBounds {
            charge_min: &[0.0, 0.0],
            charge_max: &[1.0, 1.0],
            discharge_min: &[0.0, 0.0],
            discharge_max: &[0.0, 0.0],
            soc_min: &[0.0, 0.0],
            soc_max: &[0.0, 1.0],
        };
        let sol = solve_unit(
            "u",
            bounds,
            &params_ideal(0.0),
            &[0.0, 1.0],
            &prices,
            None,
            &ToleranceConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.schedule.objective, 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.schedule.charge[1], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.schedule.charge[0], 0.0, epsilon = 1e-6);
        assert!(sol.duality.passes(&ToleranceConfig::default()), "{:?}", sol.duality);
    }

    #[test]
    fn forced_expensive_charge_when_late_hour_unavailable() {
        let grid = TimeGrid::new(2, 0).unwrap();
        let prices = series(&grid, vec![50.0, 10.0]);
        let bounds = UnitBounds {
            charge_min: &[0.0, 0.0],
            charge_max: &[1.0, 0.0],
            discharge_min: &[0.0, 0.0],
            discharge_max: &[0.0, 0.0],
            soc_min: &[0.0, 0.0],
            soc_max: &[0.0, 1.0],
        };
        let sol = solve_unit(
            "u",
            bounds,
            &params_ideal(0.0),
            &[0.0, 1.0],
            &prices,
            None,
            &ToleranceConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.schedule.objective, 50.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.schedule.charge[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_demand_reports_certificate() {
        let grid = TimeGrid::new(1, 0).unwrap();
        let prices = series(&grid, vec![10.0]);
        let bounds = UnitBounds {
            charge_min: &[0.0],
            charge_max: &[0.5],
            discharge_min: &[0.0],
            discharge_max: &[0.0],
            soc_min: &[0.0],
            soc_max: &[1.0],
        };
        // Demand 2 with max charge 0.5 and SOC cap 1 cannot be met.
        let err = solve_unit(
            "u",
            bounds,
            &params_ideal(0.5),
            &[2.0],
            &prices,
            None,
            &ToleranceConfig::default(),
        )
        .unwrap_err();
        match err {
            DispatchError::Infeasible { farkas, .. } => assert!(farkas.is_some()),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn reference_sums_members() {
        let grid = TimeGrid::new(2, 0).unwrap();
        let ones = DispatchSchedule {
            owner: "a".into(),
            charge: vec![1.0, 1.0],
            discharge: vec![0.0, 0.0],
            soc: vec![1.0, 1.0],
            objective: 5.0,
        };
        let mut b = ones.clone();
        b.owner = "b".into();
        let r = build_reference(&[ones.clone(), b], grid).unwrap();
        assert_eq!(r.agg_charge, vec![2.0, 2.0]);
        assert_eq!(r.total_objective, 10.0);
        let single = build_reference(&[ones], grid).unwrap();
        assert_eq!(single.agg_charge, vec![1.0, 1.0]);
        assert!(build_reference(&[], grid).is_err());
    }

    #[test]
    fn anchor_pulls_toward_uncontrolled() {
        // Flat prices make the pure LP indifferent; the anchor decides.
        let grid = TimeGrid::new(2, 0).unwrap();
        let prices = series(&grid, vec![10.0, 10.0]);
        let bounds = UnitBounds {
            charge_min: &[0.0, 0.0],
            charge_max: &[1.0, 1.0],
            discharge_min: &[0.0, 0.0],
            discharge_max: &[0.0, 0.0],
            soc_min: &[0.0, 0.0],
            soc_max: &[0.0, 1.0],
        };
        let anchor_charge = [1.0, 0.0];
        let sol = solve_unit(
            "u",
            bounds,
            &params_ideal(0.0),
            &[0.0, 1.0],
            &prices,
            Some(&Anchor {
                weight: 1.0,
                charge: &anchor_charge,
            }),
            &ToleranceConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.schedule.charge[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(sol.schedule.objective, 10.0, epsilon = 1e-6);
    }

    #[test]
    fn reference_csv_round_trip() {
        let grid = TimeGrid::new(3, 0).unwrap();
        let r = FleetReference {
            grid,
            agg_charge: vec![0.5, 0.25, 0.0],
            agg_discharge: vec![0.0; 3],
            agg_soc: vec![1.0, 1.5, 1.25],
            total_objective: 12.5,
            member_ids: vec!["a".into()],
        };
        let text = reference_to_csv(&r);
        let back = reference_from_csv(&text, grid).unwrap();
        assert_eq!(back.agg_charge, r.agg_charge);
        assert_eq!(back.agg_soc, r.agg_soc);
    }
}
