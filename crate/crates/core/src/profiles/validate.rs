//! Structural and LP-feasibility validation of EV profiles.

use super::EvProfile;
use crate::dispatch::{build_unit_lp, UnitBounds};
use crate::lp::{solve_lp, SolveStatus, ToleranceConfig};
use crate::prices::PriceSeries;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Step index when the violation is per-step; `None` for global findings.
    pub step: Option<usize>,
    pub what: String,
}

impl Violation {
    fn global(what: impl Into<String>) -> Self {
        Self {
            step: None,
            what: what.into(),
        }
    }

    fn at(step: usize, what: impl Into<String>) -> Self {
        Self {
            step: Some(step),
            what: what.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileValidation {
    pub violations: Vec<Violation>,
}

impl ProfileValidation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every profile invariant and the feasibility of the dispatch LP.
/// Returns findings instead of failing.
pub fn validate_profile(profile: &EvProfile) -> ProfileValidation {
    let mut violations = Vec::new();
    let t_total = profile.grid.steps();

    if !profile.params.is_valid() {
        violations.push(Violation::global(
            "params out of range: retention/efficiencies must lie in (0,1], target >= 0",
        ));
    }
    for (name, series) in profile.series() {
        if series.len() != t_total {
            violations.push(Violation::global(format!(
                "{name} has {} steps, expected {t_total}",
                series.len()
            )));
        }
    }
    if !violations.is_empty() {
        // Lengths are broken; per-step checks would index out of range.
        return ProfileValidation { violations };
    }

    for t in 0..t_total {
        let pairs = [
            ("charge", profile.charge_min[t], profile.charge_max[t]),
            ("discharge", profile.discharge_min[t], profile.discharge_max[t]),
            ("soc", profile.soc_min[t], profile.soc_max[t]),
        ];
        for (name, lo, hi) in pairs {
            if lo > hi {
                violations.push(Violation::at(t, format!("{name} bounds inverted ({lo} > {hi})")));
            }
            if lo < 0.0 {
                violations.push(Violation::at(t, format!("{name} lower bound negative ({lo})")));
            }
            if !lo.is_finite() || !hi.is_finite() {
                violations.push(Violation::at(t, format!("{name} bounds not finite")));
            }
        }
        for (name, v) in [
            ("demand_drive", profile.demand_drive[t]),
            ("demand_thermal", profile.demand_thermal[t]),
        ] {
            if !v.is_finite() || v < 0.0 {
                violations.push(Violation::at(t, format!("{name} must be finite and >= 0")));
            }
        }
    }
    if !violations.is_empty() {
        return ProfileValidation { violations };
    }

    // Feasibility of the dispatch LP with a zero objective.
    let zero_prices = PriceSeries::new(vec![0.0; t_total], &profile.grid).expect("length checked");
    let demand: Vec<f64> = (0..t_total).map(|t| profile.demand(t)).collect();
    match build_unit_lp(
        "feas",
        UnitBounds::of_profile(profile),
        &profile.params,
        &demand,
        &zero_prices,
    ) {
        Ok(unit) => match solve_lp(&unit.model, &ToleranceConfig::default()) {
            Ok(sol) => match sol.status {
                SolveStatus::Optimal => {}
                SolveStatus::Infeasible => violations.push(Violation::global(
                    "dispatch problem infeasible: demands cannot be met within the bounds",
                )),
                other => violations.push(Violation::global(format!(
                    "feasibility solve inconclusive: {other:?}"
                ))),
            },
            Err(e) => violations.push(Violation::global(format!("feasibility solve failed: {e}"))),
        },
        Err(e) => violations.push(Violation::global(format!("model assembly failed: {e}"))),
    }
    ProfileValidation { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::profiles::{generate_commuter_fleet, EvParams, FleetGenSpec};

    #[test]
    fn generated_profiles_are_clean() {
        let grid = TimeGrid::new(168, 0).unwrap();
        let fleet = generate_commuter_fleet(11, 5, &grid, &FleetGenSpec::default()).unwrap();
        for p in &fleet {
            let v = validate_profile(p);
            assert!(v.is_ok(), "{}: {:?}", p.id, v.violations);
        }
    }

    #[test]
    fn impossible_demand_flags_infeasibility() {
        let grid = TimeGrid::new(2, 0).unwrap();
        let p = EvProfile {
            id: "hog".into(),
            grid,
            params: EvParams {
                self_discharge: 1.0,
                eff_charge: 1.0,
                eff_discharge: 1.0,
                final_soc_target: 0.0,
            },
            demand_drive: vec![10.0, 0.0],
            demand_thermal: vec![0.0; 2],
            charge_min: vec![0.0; 2],
            charge_max: vec![0.011; 2],
            discharge_min: vec![0.0; 2],
            discharge_max: vec![0.0; 2],
            soc_min: vec![0.0; 2],
            soc_max: vec![0.05; 2],
        };
        let v = validate_profile(&p);
        assert!(v.violations.iter().any(|x| x.what.contains("infeasible")), "{v:?}");
    }

    #[test]
    fn inverted_and_negative_bounds_flagged_with_step() {
        let grid = TimeGrid::new(2, 0).unwrap();
        let mut p = EvProfile {
            id: "bad".into(),
            grid,
            params: EvParams {
                self_discharge: 1.0,
                eff_charge: 1.0,
                eff_discharge: 1.0,
                final_soc_target: 0.0,
            },
            demand_drive: vec![0.0; 2],
            demand_thermal: vec![0.0; 2],
            charge_min: vec![0.0; 2],
            charge_max: vec![0.01; 2],
            discharge_min: vec![0.0, -0.5],
            discharge_max: vec![0.0; 2],
            soc_min: vec![0.0, 0.6],
            soc_max: vec![0.5; 2],
        };
        let v = validate_profile(&p);
        assert!(v
            .violations
            .iter()
            .any(|x| x.step == Some(1) && x.what.contains("soc bounds inverted")));
        assert!(v
            .violations
            .iter()
            .any(|x| x.step == Some(1) && x.what.contains("discharge lower bound negative")));
        // Fixing the issues clears the findings.
        p.discharge_min[1] = 0.0;
        p.soc_min[1] = 0.0;
        assert!(validate_profile(&p).is_ok());
    }
}
