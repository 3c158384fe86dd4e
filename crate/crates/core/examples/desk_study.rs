//! Scratch driver for sizing the desk-scale study: reference, SA, and the
//! bilevel fits across mappings, with timings.

use aevkit_core::aggregate::{
    simple_aggregation, sum_profiles, AggregationParamRule, SaHeuristics,
};
use aevkit_core::bilevel::{build_single_level, solve_bilevel, validate_solution, BilevelConfig};
use aevkit_core::dispatch::{solve_fleet_reference, solve_unit};
use aevkit_core::eval::rmse;
use aevkit_core::grid::TimeGrid;
use aevkit_core::lp::ToleranceConfig;
use aevkit_core::prices::{generate_prices, PriceGenSpec};
use aevkit_core::profiles::{generate_commuter_fleet, FleetGenSpec};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let grid = TimeGrid::new(168, 0).unwrap();
    let fleet = generate_commuter_fleet(42, 20, &grid, &FleetGenSpec::default()).unwrap();
    let prices = generate_prices(42, &grid, &PriceGenSpec::default()).unwrap();
    let (_, reference) =
        solve_fleet_reference(&fleet, &prices, None, None, &ToleranceConfig::default()).unwrap();
    println!(
        "reference built in {:.2}s, total objective {:.4}, max charge {:.4}",
        t0.elapsed().as_secs_f64(),
        reference.total_objective,
        reference.agg_charge.iter().cloned().fold(0.0, f64::max)
    );
    let agg = sum_profiles(&fleet, AggregationParamRule::CapacityWeighted).unwrap();
    let sa_env = simple_aggregation(&agg, &SaHeuristics::default()).unwrap();
    let demand = agg.total_demand();
    let sa = solve_unit(
        "sa",
        sa_env.bounds(),
        &agg.params,
        &demand,
        &prices,
        None,
        &ToleranceConfig::default(),
    )
    .unwrap();
    let sa_rmse = rmse(&sa.schedule.charge, &reference.agg_charge).unwrap();
    println!(
        "SA: rmse_charge {:.6} MW, max charge {:.4} (ref max {:.4})",
        sa_rmse,
        sa.schedule.charge.iter().cloned().fold(0.0, f64::max),
        reference.agg_charge.iter().cloned().fold(0.0, f64::max)
    );

    let threads: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4);
    for n in [24usize, 6, 4, 2, 1] {
        let t1 = Instant::now();
        let cfg = BilevelConfig {
            group_width: n,
            mip_gap: 0.03,
            max_nodes: 20000,
            time_limit_secs: 150.0,
            threads,
            ..Default::default()
        };
        let sl = build_single_level(&reference, &agg, &prices, &cfg).unwrap();
        let sol = solve_bilevel(&sl).unwrap();
        let r = rmse(&sol.schedule.charge, &reference.agg_charge).unwrap();
        let report = validate_solution(&sl, &sol, &reference);
        println!(
            "AEV {n:>2}h: obj {:.6} bound {:.6} gap {:.4} nodes {} time {:.1}s rmse {:.6} ({}x better than SA) valid={} outcome {:?}",
            sol.incumbent,
            sol.best_bound,
            sol.rel_gap,
            sol.nodes,
            t1.elapsed().as_secs_f64(),
            r,
            sa_rmse / r.max(1e-12),
            report.ok(),
            sol.outcome,
        );
    }
}
