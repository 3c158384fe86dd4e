//! Assembly of the single-level KKT system.
//!
//! Sign conventions come from the Lagrangian of the inner dispatch LP with
//! storage continuity written as
//! `xs_{t+1} - rho xs_t + demand_t - etaC xc_t + xd_t/etaD = 0` (multiplier
//! `lambda_t`, the final row carrying the terminal target constant) and the
//! six bound inequalities subtracted with multipliers `mu >= 0`:
//!
//! - d/dxc: `price_t - etaC lambda_t - mu1_t + mu2_t = 0`
//! - d/dxd: `-price_t + lambda_t/etaD - mu3_t + mu4_t = 0`
//! - d/dxs: `lambda_{t-1} - rho lambda_t - mu5_t + mu6_t = 0` (the `t = 0`
//!   row drops the `lambda_{t-1}` term)
//!
//! These match the dual extraction of the direct LP solve, which is what the
//! fixed-kappa equivalence test checks end to end.

use super::{
    BilevelConfig, BilevelError, BoundFamily, CompPair, ObjectiveNorm, SingleLevelModel, SlLayout,
};
use crate::aggregate::{active_groups, group_step_counts, AggregateProfile, SocMinSource};
use crate::dispatch::FleetReference;
use crate::lp::{LinearModel, RowId, Sense, VarId};
use crate::prices::PriceSeries;

/// Base series of each family's envelope under unit scaling.
fn family_base<'a>(
    agg: &'a AggregateProfile,
    soc_min_source: SocMinSource,
    family: BoundFamily,
) -> &'a [f64] {
    match family {
        BoundFamily::ChargeLo => &agg.sum_charge_min,
        BoundFamily::ChargeUp => &agg.sum_charge_max,
        BoundFamily::DischargeLo => &agg.sum_discharge_min,
        BoundFamily::DischargeUp => &agg.sum_discharge_max,
        BoundFamily::SocLo => match soc_min_source {
            SocMinSource::SocMinSum => &agg.sum_soc_min,
            SocMinSource::SocMaxSum => &agg.sum_soc_max,
        },
        BoundFamily::SocUp => &agg.sum_soc_max,
    }
}

/// Derived big-M constants for a pair. The primal constant bounds the slack
/// by the widest envelope the scaling can open (`kappa_max` times the unit
/// envelope magnitude at that step, floored for zero-availability hours);
/// the dual constant bounds multipliers by the price scale amplified by the
/// worst efficiency factor.
fn derive_ms(
    cfg: &BilevelConfig,
    agg: &AggregateProfile,
    prices: &PriceSeries,
    family: BoundFamily,
    t: usize,
) -> Result<(f64, f64), BilevelError> {
    let fam = family as usize;
    let m_dual = match cfg.m_overrides.m_dual[fam] {
        Some(m) => m,
        None => prices.max_abs() * (1.0 + 1.0 / agg.params.eff_discharge) * cfg.m_dual_headroom,
    };
    let magnitude = match family {
        BoundFamily::ChargeLo | BoundFamily::ChargeUp => agg.sum_charge_max[t],
        BoundFamily::DischargeLo | BoundFamily::DischargeUp => agg.sum_discharge_max[t],
        BoundFamily::SocLo | BoundFamily::SocUp => agg.sum_soc_max[t],
    };
    let m_primal = match cfg.m_overrides.m_primal[fam] {
        Some(m) => m,
        None => (cfg.kappa_max * magnitude).max(cfg.m_primal_floor),
    };
    if !(m_dual > 0.0 && m_primal > 0.0) {
        return Err(BilevelError::BadConfig(format!(
            "derived big-M nonpositive for {:?} at t={t}",
            family
        )));
    }
    Ok((m_dual, m_primal))
}

/// Build the single-level model: linking equalities, inner primal
/// feasibility, storage continuity, dual stationarity, the quadratic (or L1)
/// outer objective, and complementarity metadata ready for reformulation or
/// direct branching.
pub fn build_single_level(
    reference: &FleetReference,
    agg: &AggregateProfile,
    prices: &PriceSeries,
    cfg: &BilevelConfig,
) -> Result<SingleLevelModel, BilevelError> {
    cfg.validate()?;
    if reference.grid != agg.grid || prices.len() != agg.grid.steps() {
        return Err(BilevelError::GridMismatch);
    }
    let t_total = agg.grid.steps();
    let n = cfg.group_width;
    let groups = active_groups(&agg.grid, n);
    let mut warnings = Vec::new();
    let counts = group_step_counts(&agg.grid, n);
    for &g in &groups {
        if counts[g] < 2 {
            warnings.push(format!(
                "scaling group {g} covers only {} step(s); factors fitted on fewer than two \
                 steps can match the reference exactly instead of characterizing flexibility",
                counts[g]
            ));
        }
    }

    let mut model = LinearModel::new(format!("aev_single_level_n{n}"));

    // Scaling factors, bounded to [0, kappa_max].
    let mut kappa: [Vec<VarId>; 6] = Default::default();
    for family in BoundFamily::ALL {
        for &g in &groups {
            kappa[family as usize].push(model.add_var(
                format!("k{}{g}", family.tag()),
                0.0,
                cfg.kappa_max,
            )?);
        }
    }
    let group_pos = |g: usize| groups.binary_search(&g).expect("group is active");

    // Envelope bounds; nonnegative because factors and summed bounds are.
    let mut envelope: [Vec<VarId>; 6] = Default::default();
    for t in 0..t_total {
        for family in BoundFamily::ALL {
            envelope[family as usize].push(model.add_var(
                format!("e{}{t}", family.tag()),
                0.0,
                f64::INFINITY,
            )?);
        }
    }

    // Inner primal variables with valid implied box bounds.
    let mut xc = Vec::with_capacity(t_total);
    let mut xd = Vec::with_capacity(t_total);
    let mut xs = Vec::with_capacity(t_total);
    for t in 0..t_total {
        xc.push(model.add_var(
            format!("xC{t}"),
            0.0,
            cfg.kappa_max * agg.sum_charge_max[t],
        )?);
        xd.push(model.add_var(
            format!("xD{t}"),
            0.0,
            cfg.kappa_max * agg.sum_discharge_max[t],
        )?);
        xs.push(model.add_var(format!("xS{t}"), 0.0, cfg.kappa_max * agg.sum_soc_max[t])?);
    }

    // Duals of the inner problem. lambda is free in sign; both are clipped by
    // the dual big-M box, which the post-solve validator checks for binding.
    let mut lambda = Vec::with_capacity(t_total);
    let mut mu_vars: [Vec<VarId>; 6] = Default::default();
    for t in 0..t_total {
        let (m_dual, _) = derive_ms(cfg, agg, prices, BoundFamily::ChargeLo, t)?;
        lambda.push(model.add_var(format!("lam{t}"), -m_dual, m_dual)?);
    }
    for family in BoundFamily::ALL {
        for t in 0..t_total {
            let (m_dual, _) = derive_ms(cfg, agg, prices, family, t)?;
            mu_vars[family as usize].push(model.add_var(
                format!("mu{}{t}", family.tag()),
                0.0,
                m_dual,
            )?);
        }
    }

    // Linking equalities: envelope = kappa * summed series.
    let mut linking: [Vec<RowId>; 6] = Default::default();
    for family in BoundFamily::ALL {
        let base = family_base(agg, cfg.soc_min_source, family);
        for t in 0..t_total {
            let g = crate::aggregate::mapping_index(t, n);
            let k = kappa[family as usize][group_pos(g)];
            linking[family as usize].push(model.add_row(
                format!("lk{}{t}", family.tag()),
                Sense::Eq,
                0.0,
                &[(envelope[family as usize][t], 1.0), (k, -base[t])],
            )?);
        }
    }

    // Inner primal feasibility; these rows' activities are the
    // complementarity slacks.
    let mut feasibility: [Vec<RowId>; 6] = Default::default();
    for t in 0..t_total {
        let rows = [
            (BoundFamily::ChargeLo, xc[t], envelope[0][t], 1.0),
            (BoundFamily::ChargeUp, xc[t], envelope[1][t], -1.0),
            (BoundFamily::DischargeLo, xd[t], envelope[2][t], 1.0),
            (BoundFamily::DischargeUp, xd[t], envelope[3][t], -1.0),
            (BoundFamily::SocLo, xs[t], envelope[4][t], 1.0),
            (BoundFamily::SocUp, xs[t], envelope[5][t], -1.0),
        ];
        for (family, primal, env, sign) in rows {
            feasibility[family as usize].push(model.add_row(
                format!("f{}{t}", family.tag()),
                Sense::Ge,
                0.0,
                &[(primal, sign), (env, -sign)],
            )?);
        }
    }

    // Storage continuity with the summed demand and summed terminal target.
    let rho = agg.params.self_discharge;
    let eta_c = agg.params.eff_charge;
    let inv_eta_d = 1.0 / agg.params.eff_discharge;
    let mut continuity = Vec::with_capacity(t_total);
    for t in 0..t_total - 1 {
        continuity.push(model.add_row(
            format!("cont{t}"),
            Sense::Eq,
            -agg.demand(t),
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
        -agg.demand(last) - agg.params.final_soc_target,
        &[(xs[last], -rho), (xc[last], -eta_c), (xd[last], inv_eta_d)],
    )?);

    // Dual stationarity.
    let mut stat_charge = Vec::with_capacity(t_total);
    let mut stat_discharge = Vec::with_capacity(t_total);
    let mut stat_soc = Vec::with_capacity(t_total);
    for t in 0..t_total {
        stat_charge.push(model.add_row(
            format!("stC{t}"),
            Sense::Eq,
            -prices.values()[t],
            &[
                (lambda[t], -eta_c),
                (mu_vars[0][t], -1.0),
                (mu_vars[1][t], 1.0),
            ],
        )?);
        stat_discharge.push(model.add_row(
            format!("stD{t}"),
            Sense::Eq,
            prices.values()[t],
            &[
                (lambda[t], inv_eta_d),
                (mu_vars[2][t], -1.0),
                (mu_vars[3][t], 1.0),
            ],
        )?);
        let mut terms = vec![
            (lambda[t], -rho),
            (mu_vars[4][t], -1.0),
            (mu_vars[5][t], 1.0),
        ];
        if t > 0 {
            terms.push((lambda[t - 1], 1.0));
        }
        stat_soc.push(model.add_row(format!("stS{t}"), Sense::Eq, 0.0, &terms)?);
    }

    // Outer deviation objective.
    let mut l1_dev = None;
    match cfg.objective_norm {
        ObjectiveNorm::L2 => {
            for t in 0..t_total {
                model.add_sq_term(
                    cfg.weight_charge,
                    vec![(xc[t], 1.0)],
                    -reference.agg_charge[t],
                )?;
                model.add_sq_term(
                    cfg.weight_discharge,
                    vec![(xd[t], 1.0)],
                    -reference.agg_discharge[t],
                )?;
                model.add_sq_term(cfg.weight_soc, vec![(xs[t], 1.0)], -reference.agg_soc[t])?;
            }
        }
        ObjectiveNorm::L1 => {
            let mut dev = Vec::new();
            let weighted: [(f64, &Vec<VarId>, &[f64], &str); 3] = [
                (cfg.weight_charge, &xc, &reference.agg_charge, "C"),
                (cfg.weight_discharge, &xd, &reference.agg_discharge, "D"),
                (cfg.weight_soc, &xs, &reference.agg_soc, "S"),
            ];
            for (w, vars, target, tag) in weighted {
                if w == 0.0 {
                    continue;
                }
                for t in 0..t_total {
                    let dp = model.add_var(format!("dp{tag}{t}"), 0.0, f64::INFINITY)?;
                    let dm = model.add_var(format!("dm{tag}{t}"), 0.0, f64::INFINITY)?;
                    model.set_obj_coef(dp, w);
                    model.set_obj_coef(dm, w);
                    model.add_row(
                        format!("dev{tag}{t}"),
                        Sense::Eq,
                        target[t],
                        &[(vars[t], 1.0), (dp, -1.0), (dm, 1.0)],
                    )?;
                    dev.push((dp, dm));
                }
            }
            l1_dev = Some(dev);
        }
    }

    // Complementarity metadata, reformulated later or branched on directly.
    let mut pairs = Vec::with_capacity(6 * t_total);
    for family in BoundFamily::ALL {
        for t in 0..t_total {
            let (m_dual, m_primal) = derive_ms(cfg, agg, prices, family, t)?;
            pairs.push(CompPair {
                family,
                t,
                mu: mu_vars[family as usize][t],
                slack_row: feasibility[family as usize][t],
                m_dual,
                m_primal,
                z: None,
            });
        }
    }

    Ok(SingleLevelModel {
        model,
        layout: SlLayout {
            steps: t_total,
            group_width: n,
            active_groups: groups,
            kappa,
            envelope,
            xc,
            xd,
            xs,
            lambda,
            mu: mu_vars,
            linking,
            feasibility,
            continuity,
            stat_charge,
            stat_discharge,
            stat_soc,
            l1_dev,
        },
        pairs,
        reformulated: false,
        warnings,
        agg: agg.clone(),
        prices: prices.clone(),
        reference: reference.clone(),
        cfg: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{sum_profiles, AggregationParamRule};
    use crate::grid::TimeGrid;
    use crate::profiles::{generate_commuter_fleet, FleetGenSpec};
    use crate::{dispatch, prices::PriceGenSpec};

    fn setup(t: usize) -> (FleetReference, AggregateProfile, PriceSeries) {
        let grid = TimeGrid::new(t, 0).unwrap();
        let fleet = generate_commuter_fleet(3, 2, &grid, &FleetGenSpec::default()).unwrap();
        let prices =
            crate::prices::generate_prices(1, &grid, &PriceGenSpec::default()).unwrap();
        let (_, reference) = dispatch::solve_fleet_reference(
            &fleet,
            &prices,
            None,
            None,
            &crate::lp::ToleranceConfig::default(),
        )
        .unwrap();
        let agg = sum_profiles(&fleet, AggregationParamRule::CapacityWeighted).unwrap();
        (reference, agg, prices)
    }

    #[test]
    fn variable_count_matches_closed_form() {
        let (reference, agg, prices) = setup(2);
        let cfg = BilevelConfig::default();
        let sl = build_single_level(&reference, &agg, &prices, &cfg).unwrap();
        let t = 2;
        let active = 1;
        // envelope 6T + primal 3T + duals 7T + kappa 6*active.
        assert_eq!(sl.model.num_vars(), 6 * t + 3 * t + 7 * t + 6 * active);
        let reformed = crate::bilevel::big_m_reformulate(&sl).unwrap();
        // Binaries add 6T.
        assert_eq!(
            reformed.model.num_vars(),
            6 * t + 3 * t + 7 * t + 6 * t + 6 * active
        );
        assert_eq!(sl.pairs.len(), 6 * t);
    }

    #[test]
    fn zero_weights_touch_only_charge_columns() {
        let (reference, agg, prices) = setup(4);
        let cfg = BilevelConfig::default();
        let sl = build_single_level(&reference, &agg, &prices, &cfg).unwrap();
        let quad = sl.model.canonical_quad();
        let charge_cols: std::collections::BTreeSet<usize> =
            sl.layout.xc.iter().map(|v| v.0).collect();
        for (i, j, _) in quad {
            assert!(charge_cols.contains(&i) && charge_cols.contains(&j));
        }
    }

    #[test]
    fn short_group_warning_raised() {
        let (reference, agg, prices) = setup(25);
        let cfg = BilevelConfig::default();
        let sl = build_single_level(&reference, &agg, &prices, &cfg).unwrap();
        // Day two covers a single hour.
        assert!(!sl.warnings.is_empty());
    }

    #[test]
    fn grid_mismatch_rejected() {
        let (reference, agg, _) = setup(4);
        let other = PriceSeries::new(vec![1.0; 5], &TimeGrid::new(5, 0).unwrap()).unwrap();
        assert!(matches!(
            build_single_level(&reference, &agg, &other, &BilevelConfig::default()),
            Err(BilevelError::GridMismatch)
        ));
    }
}
