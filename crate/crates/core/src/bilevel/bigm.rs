//! Disjunctive big-M reformulation of the complementarity pairs.
//!
//! Each pair `mu >= 0 perp slack >= 0` gains a binary `z` and the rows
//! `mu <= M_dual z` and `slack <= M_primal (1 - z)`: `z = 1` selects the
//! binding-constraint branch (slack pinned to zero), `z = 0` the inactive
//! branch (multiplier pinned to zero). The M constants are the per-pair
//! derived values recorded in the metadata, so the post-solve validator can
//! flag any that turn out to bind.

use super::{BilevelError, SingleLevelModel};
use crate::lp::Sense;

pub fn big_m_reformulate(sl: &SingleLevelModel) -> Result<SingleLevelModel, BilevelError> {
    if sl.reformulated {
        return Ok(sl.clone());
    }
    let mut out = sl.clone();
    let rows = out.model.matrix_rows();
    for idx in 0..out.pairs.len() {
        let pair = out.pairs[idx].clone();
        if !(pair.m_dual > 0.0 && pair.m_primal > 0.0) {
            return Err(BilevelError::BadConfig(format!(
                "big-M for {:?} at t={} must be positive",
                pair.family, pair.t
            )));
        }
        let z = out
            .model
            .add_binary(format!("z{}{}", pair.family.tag(), pair.t))?;
        out.model.add_row(
            format!("bm{}{}", pair.family.tag(), pair.t),
            Sense::Le,
            0.0,
            &[(pair.mu, 1.0), (z, -pair.m_dual)],
        )?;
        // slack <= M (1 - z), written on the slack row's own expression.
        let mut terms: Vec<(crate::lp::VarId, f64)> = rows[pair.slack_row.0]
            .iter()
            .map(|&(c, v)| (crate::lp::VarId(c), v))
            .collect();
        terms.push((z, pair.m_primal));
        out.model.add_row(
            format!("bs{}{}", pair.family.tag(), pair.t),
            Sense::Le,
            pair.m_primal,
            &terms,
        )?;
        out.pairs[idx].z = Some(z);
    }
    out.reformulated = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{sum_profiles, AggregationParamRule};
    use crate::bilevel::{build_single_level, BilevelConfig, BoundFamily};
    use crate::grid::TimeGrid;
    use crate::lp::{solve_qp, SolveStatus, ToleranceConfig, VarKind};
    use crate::prices::{generate_prices, PriceGenSpec};
    use crate::profiles::{generate_commuter_fleet, FleetGenSpec};

    fn small_sl() -> SingleLevelModel {
        let grid = TimeGrid::new(6, 0).unwrap();
        let fleet = generate_commuter_fleet(4, 2, &grid, &FleetGenSpec::default()).unwrap();
        let prices = generate_prices(2, &grid, &PriceGenSpec::default()).unwrap();
        let (_, reference) = crate::dispatch::solve_fleet_reference(
            &fleet,
            &prices,
            None,
            None,
            &ToleranceConfig::default(),
        )
        .unwrap();
        let agg = sum_profiles(&fleet, AggregationParamRule::CapacityWeighted).unwrap();
        build_single_level(&reference, &agg, &prices, &BilevelConfig::default()).unwrap()
    }

    #[test]
    fn slack_row_coefficient_is_m_primal() {
        let sl = small_sl();
        let reformed = big_m_reformulate(&sl).unwrap();
        let pair = &reformed.pairs[0];
        let z = pair.z.expect("binary assigned");
        assert_eq!(reformed.model.var_kind(z), VarKind::Binary);
        // Find the slack big-M row and check the z coefficient.
        let rows = reformed.model.matrix_rows();
        let name = format!("bs{}{}", pair.family.tag(), pair.t);
        let row_idx = (0..reformed.model.num_rows())
            .find(|&r| reformed.model.row_name(crate::lp::RowId(r)) == name)
            .unwrap();
        let coef = rows[row_idx]
            .iter()
            .find(|(c, _)| *c == z.0)
            .map(|(_, v)| *v)
            .unwrap();
        assert_eq!(coef, pair.m_primal);
        assert_eq!(
            reformed.model.row_rhs(crate::lp::RowId(row_idx)),
            pair.m_primal
        );
    }

    #[test]
    fn z_one_forces_slack_zero_and_z_zero_forces_mu_zero() {
        let sl = small_sl();
        let reformed = big_m_reformulate(&sl).unwrap();
        // Pick the charge-upper pair at a step with positive availability so
        // both branches are meaningful; leave the other binaries relaxed.
        let pair = reformed
            .pairs
            .iter()
            .find(|p| {
                p.family == BoundFamily::ChargeUp && reformed.agg.sum_charge_max[p.t] > 0.0
            })
            .unwrap();
        let z = pair.z.unwrap();
        let tol = ToleranceConfig::default();
        let rows = reformed.model.matrix_rows();

        // Branch z = 1: the slack is squeezed between 0 and M(1-z) = 0.
        let mut m1 = reformed.model.with_binaries_fixed(&[]);
        m1.pin_var(z, 1.0);
        let sol = solve_qp(&m1, &tol).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let slack = reformed.model.row_activity(&rows, pair.slack_row.0, &sol.primal);
        assert!(slack.abs() < 1e-6, "slack {slack} should be forced to zero");

        // Branch z = 0: the multiplier is squeezed between 0 and M z = 0.
        let mut m0 = reformed.model.with_binaries_fixed(&[]);
        m0.pin_var(z, 0.0);
        let sol0 = solve_qp(&m0, &tol).unwrap();
        assert_eq!(sol0.status, SolveStatus::Optimal);
        assert!(sol0.primal[pair.mu.0].abs() < 1e-6);
    }
}
