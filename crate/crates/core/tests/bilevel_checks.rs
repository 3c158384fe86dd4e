//! End-to-end checks of the single-level assembly: sign conventions against
//! the direct LP duals, fixed-kappa equivalence, the fix-and-solve oracle for
//! the big-M reformulation, and solution validation behavior.

use aevkit_core::aggregate::{sum_profiles, AggregationParamRule, ScalingMap, SocMinSource};
use aevkit_core::bilevel::{
    big_m_reformulate, build_single_level, solve_bilevel, validate_solution, BilevelConfig,
};
use aevkit_core::dispatch::{solve_fleet_reference, solve_unit};
use aevkit_core::grid::TimeGrid;
use aevkit_core::lp::{solve_qp, RowId, Sense, SolveStatus, ToleranceConfig, VarId};
use aevkit_core::prices::{generate_prices, PriceGenSpec};
use aevkit_core::profiles::{generate_commuter_fleet, FleetGenSpec};

struct Setup {
    reference: aevkit_core::dispatch::FleetReference,
    agg: aevkit_core::aggregate::AggregateProfile,
    prices: aevkit_core::prices::PriceSeries,
}

fn setup(seed: u64, n_vehicles: usize, steps: usize) -> Setup {
    let grid = TimeGrid::new(steps, 0).unwrap();
    let fleet = generate_commuter_fleet(seed, n_vehicles, &grid, &FleetGenSpec::default()).unwrap();
    let prices = generate_prices(seed, &grid, &PriceGenSpec::default()).unwrap();
    let (_, reference) =
        solve_fleet_reference(&fleet, &prices, None, None, &ToleranceConfig::default()).unwrap();
    let agg = sum_profiles(&fleet, AggregationParamRule::CapacityWeighted).unwrap();
    Setup {
        reference,
        agg,
        prices,
    }
}

/// Embed the direct inner-LP solution (primal and duals) into the pinned
/// single-level system and verify every row within tolerance. This is the
/// decisive check that the stationarity sign conventions of the assembly
/// agree with the solver's dual conventions.
#[test]
fn direct_lp_duals_satisfy_single_level_rows() {
    let s = setup(3, 3, 48);
    let cfg = BilevelConfig::default();
    let mut sl = build_single_level(&s.reference, &s.agg, &s.prices, &cfg).unwrap();
    sl.pin_kappa(1.0);

    let unit_map = ScalingMap::unit(24).unwrap();
    let envelope =
        aevkit_core::aggregate::apply_scaling(&s.agg, &unit_map, SocMinSource::SocMinSum).unwrap();
    let demand = s.agg.total_demand();
    let direct = solve_unit(
        "aev",
        envelope.bounds(),
        &s.agg.params,
        &demand,
        &s.prices,
        None,
        &ToleranceConfig::default(),
    )
    .unwrap();

    // Assemble the full variable vector of the single-level model.
    let t_total = 48;
    let mut x = vec![0.0; sl.model.num_vars()];
    for role in 0..6 {
        for &v in &sl.layout.kappa[role] {
            x[v.0] = 1.0;
        }
    }
    let env_series: [&[f64]; 6] = [
        &envelope.charge_min,
        &envelope.charge_max,
        &envelope.discharge_min,
        &envelope.discharge_max,
        &envelope.soc_min,
        &envelope.soc_max,
    ];
    for fam in 0..6 {
        for t in 0..t_total {
            x[sl.layout.envelope[fam][t].0] = env_series[fam][t];
        }
    }
    for t in 0..t_total {
        x[sl.layout.xc[t].0] = direct.schedule.charge[t];
        x[sl.layout.xd[t].0] = direct.schedule.discharge[t];
        x[sl.layout.xs[t].0] = direct.schedule.soc[t];
        x[sl.layout.lambda[t].0] = direct.duals.lambda[t];
        for fam in 0..6 {
            x[sl.layout.mu[fam][t].0] = direct.duals.mu[fam][t];
        }
    }

    let rows = sl.model.matrix_rows();
    let mut worst_eq = 0.0_f64;
    let mut worst_ge = 0.0_f64;
    for r in 0..sl.model.num_rows() {
        let id = RowId(r);
        let act = sl.model.row_activity(&rows, r, &x);
        match sl.model.row_sense(id) {
            Sense::Eq => worst_eq = worst_eq.max((act - sl.model.row_rhs(id)).abs()),
            Sense::Ge => worst_ge = worst_ge.max(sl.model.row_rhs(id) - act),
            Sense::Le => worst_ge = worst_ge.max(act - sl.model.row_rhs(id)),
        }
    }
    assert!(
        worst_eq < 1e-6,
        "stationarity/linking/continuity residual {worst_eq}"
    );
    assert!(worst_ge < 1e-6, "feasibility residual {worst_ge}");

    // Dual box bounds must also hold (lambda and mu within the M boxes).
    for v in 0..sl.model.num_vars() {
        let (lo, up) = sl.model.var_bounds(VarId(v));
        assert!(
            x[v] >= lo - 1e-7 && x[v] <= up + 1e-7,
            "variable {} = {} escapes [{lo}, {up}]",
            sl.model.var_name(VarId(v)),
            x[v]
        );
    }

    // Complementarity holds at the direct LP solution.
    for pair in &sl.pairs {
        let mu = x[pair.mu.0];
        let slack = sl.model.row_activity(&rows, pair.slack_row.0, &x);
        assert!(
            mu * slack < 1e-6,
            "pair {:?} t={} product {}",
            pair.family,
            pair.t,
            mu * slack
        );
    }
}

/// With kappa pinned to one, the branch-and-bound solution of the
/// single-level system must reproduce the direct LP dispatch of the unscaled
/// envelope, both in objective and elementwise charge.
#[test]
fn fixed_kappa_equivalence() {
    let s = setup(5, 4, 48);
    let cfg = BilevelConfig {
        mip_gap: 1e-4,
        ..Default::default()
    };
    let mut sl = build_single_level(&s.reference, &s.agg, &s.prices, &cfg).unwrap();
    sl.pin_kappa(1.0);
    let sol = solve_bilevel(&sl).unwrap();
    assert!(sol.has_incumbent);

    let unit_map = ScalingMap::unit(24).unwrap();
    let envelope =
        aevkit_core::aggregate::apply_scaling(&s.agg, &unit_map, SocMinSource::SocMinSum).unwrap();
    let demand = s.agg.total_demand();
    let direct = solve_unit(
        "aev",
        envelope.bounds(),
        &s.agg.params,
        &demand,
        &s.prices,
        None,
        &ToleranceConfig::default(),
    )
    .unwrap();

    let expected_outer = sl.outer_value(&direct.schedule);
    assert!(
        (sol.incumbent - expected_outer).abs() <= 1e-6 * (1.0 + expected_outer.abs()),
        "incumbent {} vs direct-deviation {}",
        sol.incumbent,
        expected_outer
    );
    assert!(
        (sol.schedule.objective - direct.schedule.objective).abs()
            <= 1e-6 * (1.0 + direct.schedule.objective.abs()),
        "inner objective {} vs {}",
        sol.schedule.objective,
        direct.schedule.objective
    );
    for t in 0..48 {
        assert!(
            (sol.schedule.charge[t] - direct.schedule.charge[t]).abs() < 1e-5,
            "xc[{t}] {} vs {}",
            sol.schedule.charge[t],
            direct.schedule.charge[t]
        );
    }
}

/// Fixing the binaries of the reformulated model to a known LP solution's
/// active set must reproduce that LP solution.
#[test]
fn fix_and_solve_reproduces_lp_solution() {
    let s = setup(7, 3, 24);
    let cfg = BilevelConfig::default();
    let mut sl = build_single_level(&s.reference, &s.agg, &s.prices, &cfg).unwrap();
    sl.pin_kappa(1.0);
    let reformed = big_m_reformulate(&sl).unwrap();

    let unit_map = ScalingMap::unit(24).unwrap();
    let envelope =
        aevkit_core::aggregate::apply_scaling(&s.agg, &unit_map, SocMinSource::SocMinSum).unwrap();
    let demand = s.agg.total_demand();
    let direct = solve_unit(
        "aev",
        envelope.bounds(),
        &s.agg.params,
        &demand,
        &s.prices,
        None,
        &ToleranceConfig::default(),
    )
    .unwrap();

    // Active set from the LP solution: z = 1 where the slack is zero.
    let slack_of = |fam: usize, t: usize| -> f64 {
        match fam {
            0 => direct.schedule.charge[t] - envelope.charge_min[t],
            1 => envelope.charge_max[t] - direct.schedule.charge[t],
            2 => direct.schedule.discharge[t] - envelope.discharge_min[t],
            3 => envelope.discharge_max[t] - direct.schedule.discharge[t],
            4 => direct.schedule.soc[t] - envelope.soc_min[t],
            5 => envelope.soc_max[t] - direct.schedule.soc[t],
            _ => unreachable!(),
        }
    };
    let mut model = reformed.model.with_binaries_fixed(&[]);
    for pair in &reformed.pairs {
        let z = pair.z.expect("reformulated");
        let active = slack_of(pair.family as usize, pair.t) < 1e-7;
        model.pin_var(z, if active { 1.0 } else { 0.0 });
    }
    let sol = solve_qp(&model, &ToleranceConfig::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    for t in 0..24 {
        let got = sol.primal[reformed.layout.xc[t].0];
        assert!(
            (got - direct.schedule.charge[t]).abs() < 1e-5,
            "xc[{t}] {got} vs {}",
            direct.schedule.charge[t]
        );
    }
}

/// An artificially tiny dual M must be reported by the validator.
#[test]
fn undersized_m_is_flagged() {
    // A weekly horizon so that charging genuinely happens and the charge
    // upper bound carries positive multipliers somewhere.
    let s = setup(9, 3, 168);
    let mut cfg = BilevelConfig {
        mip_gap: 0.05,
        max_nodes: 200,
        ..Default::default()
    };
    cfg.m_overrides.m_dual[1] = Some(1e-3);
    let sl = build_single_level(&s.reference, &s.agg, &s.prices, &cfg).unwrap();
    let sol = solve_bilevel(&sl).unwrap();
    assert!(sol.has_incumbent);
    let report = validate_solution(&sl, &sol, &s.reference);
    assert!(
        report.m_report.any_binding(),
        "tiny M must trip the binding flag: {:?}",
        report.m_report
    );
}

/// A healthy solve passes validation end to end.
#[test]
fn validation_passes_on_clean_solve() {
    let s = setup(11, 3, 48);
    let cfg = BilevelConfig {
        mip_gap: 0.02,
        ..Default::default()
    };
    let sl = build_single_level(&s.reference, &s.agg, &s.prices, &cfg).unwrap();
    let sol = solve_bilevel(&sl).unwrap();
    assert!(sol.has_incumbent);
    assert!(sol.rel_gap <= 0.02 + 1e-9, "gap {}", sol.rel_gap);
    let report = validate_solution(&sl, &sol, &s.reference);
    assert!(report.ok(), "{report:?}");
    // Stale-schedule detection: perturbing the factors must break the
    // envelope consistency check.
    let mut tampered = sol.clone();
    for v in &mut tampered.scaling.charge_max {
        *v *= 1.1;
    }
    let report2 = validate_solution(&sl, &tampered, &s.reference);
    assert!(!report2.envelope_consistent);
}
