//! Single-level recast of the bilevel AEV fitting problem.
//!
//! The outer level picks nonnegative per-group scaling factors on the summed
//! fleet envelopes to minimize squared deviations between the aggregated
//! unit's dispatch and the fleet reference; the inner level is the unit's
//! profit-maximizing dispatch LP. The inner problem is replaced by its KKT
//! system (stationarity, primal feasibility, complementary slackness), the
//! complementarities are reformulated as big-M disjunctions for export, and
//! the internal solver runs a complementarity branch-and-bound whose node
//! relaxations are convex QPs.

mod bigm;
mod build;
mod solve;
mod validate;

pub use bigm::big_m_reformulate;
pub use build::build_single_level;
pub use solve::{solve_bilevel, SolveOutcome};
pub use validate::{validate_solution, MActivityReport, ValidationReport};

use crate::aggregate::{AggregateProfile, AevEnvelope, ScalingMap, SocMinSource};
use crate::dispatch::{DispatchSchedule, FleetReference};
use crate::lp::{LinearModel, RowId, ToleranceConfig, VarId};
use crate::prices::PriceSeries;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BilevelError {
    #[error("bilevel config invalid: {0}")]
    BadConfig(String),
    #[error("reference, aggregate, and prices must share one grid")]
    GridMismatch,
    #[error("root relaxation infeasible; the aggregated envelope cannot host any dispatch")]
    RootInfeasible,
    #[error(transparent)]
    Lp(#[from] crate::lp::LpError),
    #[error(transparent)]
    Aggregate(#[from] crate::aggregate::AggregateError),
    #[error(transparent)]
    Dispatch(#[from] crate::dispatch::DispatchError),
}

/// Deviation norm of the outer objective. The quadratic form is the printed
/// formulation; the L1 variant linearizes deviations with slack variables and
/// makes the exported model a MILP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveNorm {
    #[default]
    L2,
    L1,
}

/// The six bound families, one per complementarity pair per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundFamily {
    ChargeLo = 0,
    ChargeUp = 1,
    DischargeLo = 2,
    DischargeUp = 3,
    SocLo = 4,
    SocUp = 5,
}

impl BoundFamily {
    pub const ALL: [BoundFamily; 6] = [
        BoundFamily::ChargeLo,
        BoundFamily::ChargeUp,
        BoundFamily::DischargeLo,
        BoundFamily::DischargeUp,
        BoundFamily::SocLo,
        BoundFamily::SocUp,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            BoundFamily::ChargeLo => "Cl",
            BoundFamily::ChargeUp => "Cu",
            BoundFamily::DischargeLo => "Dl",
            BoundFamily::DischargeUp => "Du",
            BoundFamily::SocLo => "Sl",
            BoundFamily::SocUp => "Su",
        }
    }
}

/// Optional per-family overrides of the derived big-M values.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MOverrides {
    pub m_dual: [Option<f64>; 6],
    pub m_primal: [Option<f64>; 6],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BilevelConfig {
    /// Deviation weights on charge / discharge / SOC tracking.
    pub weight_charge: f64,
    pub weight_discharge: f64,
    pub weight_soc: f64,
    /// Scaling-factor group width in hours; must divide 24.
    pub group_width: usize,
    /// Upper bound on every scaling factor; also the headroom factor in the
    /// derived primal big-M values.
    pub kappa_max: f64,
    /// Headroom factor in the derived dual big-M values.
    pub m_dual_headroom: f64,
    /// Lower clamp for derived primal big-M values (driving hours have
    /// zero-width envelopes).
    pub m_primal_floor: f64,
    pub m_overrides: MOverrides,
    /// Relative MIP gap target in (0, 1).
    pub mip_gap: f64,
    pub max_nodes: usize,
    pub time_limit_secs: f64,
    pub soc_min_source: SocMinSource,
    pub objective_norm: ObjectiveNorm,
    /// Node batch width for parallel relaxation solves; exploration order is
    /// deterministic for any fixed value.
    pub threads: usize,
    pub tol: ToleranceConfig,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            weight_charge: 1.0,
            weight_discharge: 0.0,
            weight_soc: 0.0,
            group_width: 24,
            kappa_max: 2.0,
            m_dual_headroom: 2.0,
            m_primal_floor: 1e-3,
            m_overrides: MOverrides::default(),
            mip_gap: 0.01,
            max_nodes: 200_000,
            time_limit_secs: 600.0,
            soc_min_source: SocMinSource::SocMinSum,
            objective_norm: ObjectiveNorm::L2,
            threads: 1,
            tol: ToleranceConfig::default(),
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<(), BilevelError> {
        let bad = |msg: &str| Err(BilevelError::BadConfig(msg.to_string()));
        let weights = [self.weight_charge, self.weight_discharge, self.weight_soc];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("deviation weights must be finite and >= 0");
        }
        if weights.iter().all(|w| *w == 0.0) {
            return bad("at least one deviation weight must be positive");
        }
        if self.group_width == 0 || 24 % self.group_width != 0 {
            return bad("group width must divide 24");
        }
        if !(self.kappa_max.is_finite() && self.kappa_max > 0.0) {
            return bad("kappa_max must be positive");
        }
        if !(self.m_dual_headroom > 0.0 && self.m_primal_floor > 0.0) {
            return bad("big-M headroom and floor must be positive");
        }
        for v in self.m_overrides.m_dual.iter().chain(&self.m_overrides.m_primal) {
            if let Some(m) = v {
                if !(m.is_finite() && *m > 0.0) {
                    return bad("big-M overrides must be positive");
                }
            }
        }
        if !(self.mip_gap > 0.0 && self.mip_gap < 1.0) {
            return bad("mip gap must lie in (0, 1)");
        }
        if self.max_nodes == 0 {
            return bad("node limit must be >= 1");
        }
        if self.threads == 0 {
            return bad("threads must be >= 1");
        }
        Ok(())
    }
}

/// One complementarity pair `mu >= 0  perp  slack >= 0` with its derived
/// big-M constants and, after reformulation, its binary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompPair {
    pub family: BoundFamily,
    pub t: usize,
    pub mu: VarId,
    /// The inner-feasibility inequality whose activity is the slack.
    pub slack_row: RowId,
    pub m_dual: f64,
    pub m_primal: f64,
    pub z: Option<VarId>,
}

/// Column/row handles of the assembled single-level system, indexed by
/// semantic role. Families order: charge lo/up, discharge lo/up, SOC lo/up.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlLayout {
    pub steps: usize,
    pub group_width: usize,
    /// Group indices that occur within the horizon; kappa columns align with
    /// this list.
    pub active_groups: Vec<usize>,
    pub kappa: [Vec<VarId>; 6],
    pub envelope: [Vec<VarId>; 6],
    pub xc: Vec<VarId>,
    pub xd: Vec<VarId>,
    pub xs: Vec<VarId>,
    pub lambda: Vec<VarId>,
    pub mu: [Vec<VarId>; 6],
    pub linking: [Vec<RowId>; 6],
    pub feasibility: [Vec<RowId>; 6],
    pub continuity: Vec<RowId>,
    pub stat_charge: Vec<RowId>,
    pub stat_discharge: Vec<RowId>,
    pub stat_soc: Vec<RowId>,
    /// L1 deviation columns per weighted role, when the L1 norm is selected.
    pub l1_dev: Option<Vec<(VarId, VarId)>>,
}

/// The assembled single-level optimization model plus everything needed to
/// branch on its complementarities and to validate solutions.
#[derive(Debug, Clone)]
pub struct SingleLevelModel {
    pub model: LinearModel,
    pub layout: SlLayout,
    pub pairs: Vec<CompPair>,
    pub reformulated: bool,
    pub warnings: Vec<String>,
    pub agg: AggregateProfile,
    pub prices: PriceSeries,
    pub reference: FleetReference,
    pub cfg: BilevelConfig,
}

impl SingleLevelModel {
    /// Pin every scaling factor to a fixed value (the fixed-kappa reduction,
    /// which turns the system into the inner LP's KKT conditions).
    pub fn pin_kappa(&mut self, value: f64) {
        for role in 0..6 {
            for &v in &self.layout.kappa[role] {
                self.model.pin_var(v, value);
            }
        }
    }

    /// The outer deviation objective evaluated at a schedule.
    pub fn outer_value(&self, schedule: &DispatchSchedule) -> f64 {
        outer_value(&self.cfg, &self.reference, schedule)
    }
}

/// Deviation objective between an AEV schedule and the reference.
pub fn outer_value(
    cfg: &BilevelConfig,
    reference: &FleetReference,
    schedule: &DispatchSchedule,
) -> f64 {
    let mut total = 0.0;
    for t in 0..schedule.len() {
        let dc = schedule.charge[t] - reference.agg_charge[t];
        let dd = schedule.discharge[t] - reference.agg_discharge[t];
        let ds = schedule.soc[t] - reference.agg_soc[t];
        total += match cfg.objective_norm {
            ObjectiveNorm::L2 => {
                cfg.weight_charge * dc * dc
                    + cfg.weight_discharge * dd * dd
                    + cfg.weight_soc * ds * ds
            }
            ObjectiveNorm::L1 => {
                cfg.weight_charge * dc.abs()
                    + cfg.weight_discharge * dd.abs()
                    + cfg.weight_soc * ds.abs()
            }
        };
    }
    total
}

/// Result of a bilevel solve: the fitted scaling factors, the aggregated
/// unit's dispatch under them, dual trajectories, and solver statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BilevelSolution {
    pub schema_version: u32,
    pub group_width: usize,
    pub scaling: ScalingMap,
    /// Envelope reconstructed from `scaling` via the shared scaling code
    /// path, so reconstruction equality is exact.
    pub envelope: AevEnvelope,
    pub schedule: DispatchSchedule,
    pub lambda: Vec<f64>,
    pub mu: [Vec<f64>; 6],
    pub has_incumbent: bool,
    pub incumbent: f64,
    pub best_bound: f64,
    pub rel_gap: f64,
    pub nodes: usize,
    pub wall_time_secs: f64,
    pub outcome: SolveOutcome,
    pub m_report: MActivityReport,
}

impl BilevelSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// `(incumbent - bound) / max(1, |incumbent|)`.
pub fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    (incumbent - bound).max(0.0) / incumbent.abs().max(1.0)
}
