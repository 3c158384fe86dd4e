//! Post-solve validation: inner optimality, big-M activity, complementarity
//! residuals, and envelope consistency.

use super::{BilevelSolution, BoundFamily, SingleLevelModel};
use crate::aggregate::{apply_scaling, AevEnvelope};
use crate::dispatch::{solve_unit, DispatchSchedule, FleetReference, UnitDuals};
use serde::{Deserialize, Serialize};

/// How close multipliers and slacks come to their big-M constants. Ratios
/// near 1 mean the constants clipped the solution and must be enlarged.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MActivityReport {
    pub max_mu_over_m: f64,
    pub max_slack_over_m: f64,
    pub max_lambda_over_m: f64,
    /// Pairs whose multiplier or slack came within the flag margin of its M.
    pub binding: Vec<String>,
}

impl MActivityReport {
    pub fn any_binding(&self) -> bool {
        !self.binding.is_empty()
    }
}

/// Margin: anything within `1e-4 * M` of its M is flagged.
const M_FLAG_MARGIN: f64 = 1e-4;

pub(super) fn m_activity(
    sl: &SingleLevelModel,
    duals: &UnitDuals,
    schedule: &DispatchSchedule,
    envelope: &AevEnvelope,
) -> MActivityReport {
    let mut report = MActivityReport::default();
    for pair in &sl.pairs {
        let fam = pair.family as usize;
        if duals.mu[fam].is_empty() {
            continue;
        }
        let mu = duals.mu[fam][pair.t];
        let slack = pair_slack(pair.family, pair.t, schedule, envelope);
        report.max_mu_over_m = report.max_mu_over_m.max(mu / pair.m_dual);
        report.max_slack_over_m = report.max_slack_over_m.max(slack / pair.m_primal);
        if mu > pair.m_dual * (1.0 - M_FLAG_MARGIN) {
            report.binding.push(format!(
                "mu {:?} t={} value {mu:.6} within margin of M_dual {:.6}; enlarge M",
                pair.family, pair.t, pair.m_dual
            ));
        }
        if slack > pair.m_primal * (1.0 - M_FLAG_MARGIN) {
            report.binding.push(format!(
                "slack {:?} t={} value {slack:.6} within margin of M_primal {:.6}; enlarge M",
                pair.family, pair.t, pair.m_primal
            ));
        }
    }
    // Lambda shares the dual box of the charge-lower family.
    for (t, lam) in duals.lambda.iter().enumerate() {
        if sl.pairs.is_empty() {
            break;
        }
        let m_dual = sl.pairs[t.min(sl.pairs.len() - 1)].m_dual;
        report.max_lambda_over_m = report.max_lambda_over_m.max(lam.abs() / m_dual);
        if lam.abs() > m_dual * (1.0 - M_FLAG_MARGIN) {
            report
                .binding
                .push(format!("lambda t={t} value {lam:.6} within margin of its box; enlarge M"));
        }
    }
    report
}

fn pair_slack(
    family: BoundFamily,
    t: usize,
    schedule: &DispatchSchedule,
    envelope: &AevEnvelope,
) -> f64 {
    match family {
        BoundFamily::ChargeLo => schedule.charge[t] - envelope.charge_min[t],
        BoundFamily::ChargeUp => envelope.charge_max[t] - schedule.charge[t],
        BoundFamily::DischargeLo => schedule.discharge[t] - envelope.discharge_min[t],
        BoundFamily::DischargeUp => envelope.discharge_max[t] - schedule.discharge[t],
        BoundFamily::SocLo => schedule.soc[t] - envelope.soc_min[t],
        BoundFamily::SocUp => envelope.soc_max[t] - schedule.soc[t],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// |direct inner LP optimum - solution's inner objective|.
    pub inner_objective_gap: f64,
    pub inner_ok: bool,
    pub m_report: MActivityReport,
    /// Largest normalized `mu * slack` product.
    pub max_complementarity: f64,
    pub complementarity_ok: bool,
    /// Envelope equals `apply_scaling` of the reported factors, bitwise.
    pub envelope_consistent: bool,
    /// Steps where the scaled envelope crossed (lower > upper); such
    /// instances are flagged, not rejected.
    pub crossed_bounds: Vec<usize>,
    /// |recomputed outer deviation - reported incumbent|.
    pub outer_objective_gap: f64,
    pub outer_ok: bool,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.inner_ok
            && self.complementarity_ok
            && self.envelope_consistent
            && self.outer_ok
            && !self.m_report.any_binding()
    }
}

/// Validate an incumbent solution against the model it came from.
pub fn validate_solution(
    sl: &SingleLevelModel,
    sol: &BilevelSolution,
    reference: &FleetReference,
) -> ValidationReport {
    let m_report = m_activity(sl, &UnitDuals {
        lambda: sol.lambda.clone(),
        mu: sol.mu.clone(),
    }, &sol.schedule, &sol.envelope);

    // (a) Inner optimality: re-dispatch the envelope and compare objectives.
    let demand = sl.agg.total_demand();
    let (inner_objective_gap, inner_ok) = match solve_unit(
        "validate",
        sol.envelope.bounds(),
        &sl.agg.params,
        &demand,
        &sl.prices,
        None,
        &sl.cfg.tol,
    ) {
        Ok(direct) => {
            let gap = (direct.schedule.objective - sol.schedule.objective).abs();
            let ok = gap <= 1e-6 * (1.0 + sol.schedule.objective.abs());
            (gap, ok)
        }
        Err(_) => (f64::INFINITY, false),
    };

    // (c) Complementarity residuals, normalized to be scale-free.
    let mut max_comp = 0.0_f64;
    for pair in &sl.pairs {
        let fam = pair.family as usize;
        if sol.mu[fam].is_empty() {
            continue;
        }
        let mu = sol.mu[fam][pair.t];
        let slack = pair_slack(pair.family, pair.t, &sol.schedule, &sol.envelope).max(0.0);
        max_comp = max_comp.max((mu * slack) / ((1.0 + mu.abs()) * (1.0 + slack.abs())));
    }
    let complementarity_ok = max_comp <= sl.cfg.tol.comp_tol;

    // (d) Envelope reconstruction must be exact: same code path, same floats.
    let envelope_consistent = apply_scaling(&sl.agg, &sol.scaling, sl.cfg.soc_min_source)
        .map(|e| e == sol.envelope)
        .unwrap_or(false);

    let mut crossed_bounds = Vec::new();
    for t in 0..sl.layout.steps {
        if sol.envelope.charge_min[t] > sol.envelope.charge_max[t]
            || sol.envelope.discharge_min[t] > sol.envelope.discharge_max[t]
            || sol.envelope.soc_min[t] > sol.envelope.soc_max[t]
        {
            crossed_bounds.push(t);
        }
    }

    let recomputed = super::outer_value(&sl.cfg, reference, &sol.schedule);
    let outer_objective_gap = (recomputed - sol.incumbent).abs();
    let outer_ok = outer_objective_gap <= 1e-6 * (1.0 + sol.incumbent.abs());

    ValidationReport {
        inner_objective_gap,
        inner_ok,
        m_report,
        max_complementarity: max_comp,
        complementarity_ok,
        envelope_consistent,
        crossed_bounds,
        outer_objective_gap,
        outer_ok,
    }
}
