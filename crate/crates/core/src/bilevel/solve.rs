//! Complementarity branch-and-bound over the single-level system.
//!
//! Node relaxations are convex QPs: the big-M reformulation with binaries
//! relaxed to [0, 1] (equivalently, the projected inequalities
//! `mu / M_dual + slack / M_primal <= 1` per pair). Branching resolves one
//! violated pair per node: one child pins the multiplier to zero, the other
//! tightens the feasibility row to equality. Every node also yields a cheap
//! primal incumbent by dispatching the inner LP on the node's scaling
//! factors, so good solutions arrive long before the bound closes.

use super::{
    bigm::big_m_reformulate, outer_value, relative_gap, BilevelError, BilevelSolution,
    SingleLevelModel,
};
use crate::aggregate::{apply_scaling, groups_per_week, AevEnvelope, ScalingMap};
use crate::dispatch::{solve_unit, DispatchSchedule, UnitDuals};
use crate::lp::{solve_qp, LinearModel, Sense, SolveStatus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

/// Why the search stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveOutcome {
    GapReached,
    NodeLimit,
    TimeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    MuZero,
    SlackZero,
}

#[derive(Debug, Clone)]
struct Node {
    id: u64,
    bound: f64,
    fixes: Vec<(u32, Branch)>,
}

/// Nodes whose bound already sits within the gap target of the incumbent
/// cannot improve it meaningfully and are closed at their bound.
fn prune_threshold(incumbent: f64, gap: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    incumbent - gap * incumbent.abs().max(1.0)
}

/// Best-first ordering: smaller bound wins, then older node id.
struct HeapEntry(Node);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.0.bound == other.0.bound && self.0.id == other.0.id
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for best-first.
        other
            .0
            .bound
            .total_cmp(&self.0.bound)
            .then_with(|| other.0.id.cmp(&self.0.id))
    }
}

struct Incumbent {
    value: f64,
    scaling: ScalingMap,
    envelope: AevEnvelope,
    schedule: DispatchSchedule,
    duals: UnitDuals,
}

struct NodeResult {
    node: Node,
    status: SolveStatus,
    bound: f64,
    kappa: Vec<f64>,
    /// (pair index, mu value, slack value) for violated pairs.
    worst_pair: Option<(u32, f64, f64)>,
    /// Complementary node: primal point is MPCC-feasible.
    node_candidate: Option<(Vec<f64>, Vec<f64>)>,
}

fn scaling_from_kappa(sl: &SingleLevelModel, kappa: &[f64]) -> ScalingMap {
    let n = sl.layout.group_width;
    let g_week = groups_per_week(n);
    let mut map = ScalingMap {
        group_width: n,
        charge_min: vec![1.0; g_week],
        charge_max: vec![1.0; g_week],
        discharge_min: vec![1.0; g_week],
        discharge_max: vec![1.0; g_week],
        soc_min: vec![1.0; g_week],
        soc_max: vec![1.0; g_week],
    };
    let n_active = sl.layout.active_groups.len();
    for (role, dest) in [
        &mut map.charge_min,
        &mut map.charge_max,
        &mut map.discharge_min,
        &mut map.discharge_max,
        &mut map.soc_min,
        &mut map.soc_max,
    ]
    .into_iter()
    .enumerate()
    {
        for (pos, &g) in sl.layout.active_groups.iter().enumerate() {
            // Clamp away solver-level noise so factors stay in [0, kappa_max].
            dest[g] = kappa[role * n_active + pos].clamp(0.0, sl.cfg.kappa_max);
        }
    }
    map
}

/// Dispatch the inner LP on the envelope induced by a scaling map; returns an
/// MPCC-feasible incumbent candidate when the envelope admits a dispatch.
fn heuristic_incumbent(sl: &SingleLevelModel, scaling: ScalingMap) -> Option<Incumbent> {
    let envelope = apply_scaling(&sl.agg, &scaling, sl.cfg.soc_min_source).ok()?;
    // Crossed bounds make the inner LP trivially infeasible; skip early.
    for t in 0..sl.layout.steps {
        if envelope.charge_min[t] > envelope.charge_max[t]
            || envelope.discharge_min[t] > envelope.discharge_max[t]
            || envelope.soc_min[t] > envelope.soc_max[t]
        {
            return None;
        }
    }
    let demand = sl.agg.total_demand();
    let solve = solve_unit(
        "aev",
        envelope.bounds(),
        &sl.agg.params,
        &demand,
        &sl.prices,
        None,
        &sl.cfg.tol,
    )
    .ok()?;
    let value = outer_value(&sl.cfg, &sl.reference, &solve.schedule);
    Some(Incumbent {
        value,
        scaling,
        envelope,
        schedule: solve.schedule,
        duals: solve.duals,
    })
}

fn node_model(template: &LinearModel, sl: &SingleLevelModel, fixes: &[(u32, Branch)]) -> LinearModel {
    let mut m = template.clone();
    for &(p, br) in fixes {
        let pair = &sl.pairs[p as usize];
        match br {
            Branch::MuZero => m.set_var_bounds(pair.mu, 0.0, 0.0),
            Branch::SlackZero => m.set_row_sense(pair.slack_row, Sense::Eq),
        }
    }
    m
}

fn solve_node(
    template: &LinearModel,
    rows_cache: &[Vec<(usize, f64)>],
    sl: &SingleLevelModel,
    node: Node,
    comp_eta: f64,
) -> NodeResult {
    let model = node_model(template, sl, &node.fixes);
    let sol = match solve_qp(&model, &sl.cfg.tol) {
        Ok(s) => s,
        Err(_) => {
            return NodeResult {
                node,
                status: SolveStatus::IterationLimit,
                bound: f64::NEG_INFINITY,
                kappa: Vec::new(),
                worst_pair: None,
                node_candidate: None,
            }
        }
    };
    if sol.status != SolveStatus::Optimal {
        return NodeResult {
            node,
            status: sol.status,
            bound: f64::INFINITY,
            kappa: Vec::new(),
            worst_pair: None,
            node_candidate: None,
        };
    }

    let n_active = sl.layout.active_groups.len();
    let mut kappa = Vec::with_capacity(6 * n_active);
    for role in 0..6 {
        for &v in &sl.layout.kappa[role] {
            kappa.push(sol.primal[v.0]);
        }
    }

    // Scale-free complementarity violation per pair: distance from the
    // nearer axis, normalized by the pair's M box.
    let mut worst: Option<(u32, f64, f64)> = None;
    let mut worst_score = 0.0;
    let mut worst_product = 0.0;
    for (i, pair) in sl.pairs.iter().enumerate() {
        let mu = sol.primal[pair.mu.0];
        let slack = model.row_activity(rows_cache, pair.slack_row.0, &sol.primal).max(0.0);
        let score = (mu / pair.m_dual).min(slack / pair.m_primal).max(0.0);
        let product = mu * slack;
        if score > worst_score + 1e-15
            || (score > worst_score - 1e-15 && product > worst_product + 1e-15)
        {
            worst_score = score;
            worst_product = product;
            worst = Some((i as u32, mu, slack));
        }
    }

    let node_candidate = if worst_score <= comp_eta {
        // MPCC-feasible within tolerance: keep the primal and dual point.
        let t_total = sl.layout.steps;
        let mut primal_point = Vec::with_capacity(3 * t_total);
        for t in 0..t_total {
            primal_point.push(sol.primal[sl.layout.xc[t].0]);
        }
        for t in 0..t_total {
            primal_point.push(sol.primal[sl.layout.xd[t].0]);
        }
        for t in 0..t_total {
            primal_point.push(sol.primal[sl.layout.xs[t].0]);
        }
        let mut dual_point = Vec::with_capacity(7 * t_total);
        for t in 0..t_total {
            dual_point.push(sol.primal[sl.layout.lambda[t].0]);
        }
        for fam in 0..6 {
            for t in 0..t_total {
                dual_point.push(sol.primal[sl.layout.mu[fam][t].0]);
            }
        }
        Some((primal_point, dual_point))
    } else {
        None
    };

    NodeResult {
        status: sol.status,
        bound: sol.objective.max(node.bound),
        node,
        kappa,
        worst_pair: if worst_score > comp_eta { worst } else { None },
        node_candidate,
    }
}

fn incumbent_from_node(sl: &SingleLevelModel, res: &NodeResult) -> Option<Incumbent> {
    let (primal, dual) = res.node_candidate.as_ref()?;
    let t_total = sl.layout.steps;
    let scaling = scaling_from_kappa(sl, &res.kappa);
    let envelope = apply_scaling(&sl.agg, &scaling, sl.cfg.soc_min_source).ok()?;
    let charge = primal[..t_total].to_vec();
    let discharge = primal[t_total..2 * t_total].to_vec();
    let soc = primal[2 * t_total..].to_vec();
    let objective = sl
        .prices
        .values()
        .iter()
        .zip(charge.iter().zip(&discharge))
        .map(|(p, (c, d))| p * (c - d))
        .sum();
    let schedule = DispatchSchedule {
        owner: format!("aev_n{}", sl.layout.group_width),
        charge,
        discharge,
        soc,
        objective,
    };
    let lambda = dual[..t_total].to_vec();
    let mu = [
        dual[t_total..2 * t_total].to_vec(),
        dual[2 * t_total..3 * t_total].to_vec(),
        dual[3 * t_total..4 * t_total].to_vec(),
        dual[4 * t_total..5 * t_total].to_vec(),
        dual[5 * t_total..6 * t_total].to_vec(),
        dual[6 * t_total..7 * t_total].to_vec(),
    ];
    let value = outer_value(&sl.cfg, &sl.reference, &schedule);
    Some(Incumbent {
        value,
        scaling,
        envelope,
        schedule,
        duals: UnitDuals { lambda, mu },
    })
}

/// Solve by branch-and-bound to the configured gap or limits.
pub fn solve_bilevel(sl: &SingleLevelModel) -> Result<BilevelSolution, BilevelError> {
    let started = Instant::now();
    let reformed;
    let sl = if sl.reformulated {
        sl
    } else {
        reformed = big_m_reformulate(sl)?;
        &reformed
    };
    let cfg = &sl.cfg;
    // Node relaxation template: binaries relaxed to their [0, 1] boxes.
    let template = sl.model.with_binaries_fixed(&[]);
    let rows_cache = template.matrix_rows();
    let comp_eta = 1e-7;

    // Unit scaling always provides a first incumbent on feasible instances.
    let mut incumbent: Option<Incumbent> = heuristic_incumbent(
        sl,
        ScalingMap::unit(sl.layout.group_width).expect("validated width"),
    );

    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    let mut next_id: u64 = 0;
    let mut nodes_done: usize = 0;
    let mut best_closed_bound = f64::INFINITY;
    let mut outcome = SolveOutcome::GapReached;

    heap.push(HeapEntry(Node {
        id: 0,
        bound: f64::NEG_INFINITY,
        fixes: Vec::new(),
    }));
    next_id += 1;

    let inc_value = |inc: &Option<Incumbent>| inc.as_ref().map_or(f64::INFINITY, |i| i.value);

    let mut root_infeasible = false;
    loop {
        let global_bound = heap
            .peek()
            .map_or(best_closed_bound, |e| e.0.bound.min(best_closed_bound));
        if heap.is_empty() || relative_gap(inc_value(&incumbent), global_bound) <= cfg.mip_gap {
            break;
        }
        if nodes_done >= cfg.max_nodes {
            outcome = SolveOutcome::NodeLimit;
            break;
        }
        if started.elapsed().as_secs_f64() > cfg.time_limit_secs {
            outcome = SolveOutcome::TimeLimit;
            break;
        }

        // Deterministic batch: pop the k best nodes, solve in parallel,
        // apply results in pop order.
        let mut batch = Vec::with_capacity(cfg.threads);
        while batch.len() < cfg.threads {
            match heap.pop() {
                Some(HeapEntry(node)) => {
                    // Re-check against the current incumbent; the node's bound
                    // may predate it.
                    if node.bound >= prune_threshold(inc_value(&incumbent), cfg.mip_gap) {
                        best_closed_bound = best_closed_bound.min(node.bound);
                        continue;
                    }
                    batch.push(node);
                }
                None => break,
            }
        }
        if batch.is_empty() {
            continue;
        }

        let results: Vec<NodeResult> = batch
            .into_par_iter()
            .map(|node| solve_node(&template, &rows_cache, sl, node, comp_eta))
            .collect();

        for res in results {
            nodes_done += 1;
            match res.status {
                SolveStatus::Infeasible => {
                    if res.node.id == 0 {
                        root_infeasible = true;
                    }
                    continue;
                }
                SolveStatus::Unbounded | SolveStatus::IterationLimit => {
                    // Treat as unresolved: keep the parent bound so the node
                    // cannot misreport progress, and drop it from the tree.
                    best_closed_bound = best_closed_bound.min(res.node.bound.max(f64::MIN));
                    continue;
                }
                SolveStatus::Optimal => {}
            }

            // Incumbent candidates: the node's own point when complementary,
            // and the inner dispatch at the node's scaling factors.
            if let Some(cand) = incumbent_from_node(sl, &res) {
                if cand.value < inc_value(&incumbent) {
                    incumbent = Some(cand);
                }
            }
            if let Some(cand) = heuristic_incumbent(sl, scaling_from_kappa(sl, &res.kappa)) {
                if cand.value < inc_value(&incumbent) {
                    incumbent = Some(cand);
                }
            }

            let prune_at = prune_threshold(inc_value(&incumbent), cfg.mip_gap);
            if res.node_candidate.is_some() || res.worst_pair.is_none() {
                // Complementary (or no violations left): subtree solved.
                best_closed_bound = best_closed_bound.min(res.bound);
                continue;
            }
            if res.bound >= prune_at {
                best_closed_bound = best_closed_bound.min(res.bound);
                continue;
            }
            let (pair_idx, _, _) = res.worst_pair.expect("checked above");
            for branch in [Branch::SlackZero, Branch::MuZero] {
                let mut fixes = res.node.fixes.clone();
                fixes.push((pair_idx, branch));
                heap.push(HeapEntry(Node {
                    id: next_id,
                    bound: res.bound,
                    fixes,
                }));
                next_id += 1;
            }
        }
    }

    if root_infeasible && incumbent.is_none() {
        return Err(BilevelError::RootInfeasible);
    }

    let global_bound = heap
        .peek()
        .map_or(best_closed_bound, |e| e.0.bound.min(best_closed_bound));
    let wall = started.elapsed().as_secs_f64();
    let t_total = sl.layout.steps;
    let best_bound = if incumbent.is_some() {
        global_bound.min(inc_value(&incumbent)).max(0.0)
    } else {
        global_bound.max(0.0)
    };

    let (has_incumbent, value, scaling, envelope, schedule, duals) = match incumbent {
        Some(inc) => (
            true,
            inc.value,
            inc.scaling,
            inc.envelope,
            inc.schedule,
            inc.duals,
        ),
        None => (
            false,
            f64::INFINITY,
            ScalingMap::unit(sl.layout.group_width).expect("validated width"),
            apply_scaling(
                &sl.agg,
                &ScalingMap::unit(sl.layout.group_width).expect("validated width"),
                cfg.soc_min_source,
            )?,
            DispatchSchedule {
                owner: format!("aev_n{}", sl.layout.group_width),
                charge: vec![0.0; t_total],
                discharge: vec![0.0; t_total],
                soc: vec![0.0; t_total],
                objective: f64::NAN,
            },
            UnitDuals {
                lambda: vec![0.0; t_total],
                mu: Default::default(),
            },
        ),
    };
    let m_report = super::validate::m_activity(sl, &duals, &schedule, &envelope);
    Ok(BilevelSolution {
        schema_version: 1,
        group_width: sl.layout.group_width,
        scaling,
        envelope,
        schedule,
        lambda: duals.lambda,
        mu: duals.mu,
        has_incumbent,
        incumbent: value,
        best_bound,
        rel_gap: relative_gap(value, best_bound),
        nodes: nodes_done,
        wall_time_secs: wall,
        outcome,
        m_report,
    })
}
