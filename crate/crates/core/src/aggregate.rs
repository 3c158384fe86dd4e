//! Fleet envelope aggregation: summed profiles, the virtual-storage baseline,
//! the weekly scaling-factor mapping, and scaling application.

use crate::grid::{TimeGrid, HOURS_PER_WEEK};
use crate::profiles::{EvParams, EvProfile};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("profiles live on different grids")]
    MixedGrids,
    #[error("group width {0} must divide 24")]
    BadGroupWidth(usize),
    #[error("scaling factors invalid: {0}")]
    BadFactors(String),
    #[error("simple-aggregation heuristics invalid: {0}")]
    BadHeuristics(String),
}

/// Summed flexibility of a fleet plus the derived AEV storage parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateProfile {
    pub grid: TimeGrid,
    pub sum_charge_min: Vec<f64>,
    pub sum_charge_max: Vec<f64>,
    pub sum_discharge_min: Vec<f64>,
    pub sum_discharge_max: Vec<f64>,
    pub sum_soc_min: Vec<f64>,
    pub sum_soc_max: Vec<f64>,
    pub sum_demand_drive: Vec<f64>,
    pub sum_demand_thermal: Vec<f64>,
    /// AEV unit parameters; `final_soc_target` is the summed member target.
    pub params: EvParams,
    pub n_members: usize,
    /// How `params` were derived; recorded in every report.
    pub param_rule: AggregationParamRule,
}

impl AggregateProfile {
    pub fn demand(&self, t: usize) -> f64 {
        self.sum_demand_drive[t] + self.sum_demand_thermal[t]
    }

    pub fn total_demand(&self) -> Vec<f64> {
        (0..self.grid.steps()).map(|t| self.demand(t)).collect()
    }
}

/// Rule for deriving the AEV's retention/efficiency parameters from members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum AggregationParamRule {
    /// Mean weighted by battery capacity (largest SOC upper bound).
    CapacityWeighted,
    /// Unweighted mean.
    SimpleMean,
    /// Fixed values supplied by the caller.
    Fixed { rho: f64, eta_c: f64, eta_d: f64 },
}

/// Elementwise sums over the fleet plus parameter derivation.
pub fn sum_profiles(
    fleet: &[EvProfile],
    rule: AggregationParamRule,
) -> Result<AggregateProfile, AggregateError> {
    let first = fleet.first().ok_or(AggregateError::EmptyFleet)?;
    let grid = first.grid;
    if fleet.iter().any(|p| p.grid != grid) {
        return Err(AggregateError::MixedGrids);
    }
    let t_total = grid.steps();
    let mut agg = AggregateProfile {
        grid,
        sum_charge_min: vec![0.0; t_total],
        sum_charge_max: vec![0.0; t_total],
        sum_discharge_min: vec![0.0; t_total],
        sum_discharge_max: vec![0.0; t_total],
        sum_soc_min: vec![0.0; t_total],
        sum_soc_max: vec![0.0; t_total],
        sum_demand_drive: vec![0.0; t_total],
        sum_demand_thermal: vec![0.0; t_total],
        params: EvParams {
            self_discharge: 1.0,
            eff_charge: 1.0,
            eff_discharge: 1.0,
            final_soc_target: 0.0,
        },
        n_members: fleet.len(),
        param_rule: rule,
    };
    for p in fleet {
        for t in 0..t_total {
            agg.sum_charge_min[t] += p.charge_min[t];
            agg.sum_charge_max[t] += p.charge_max[t];
            agg.sum_discharge_min[t] += p.discharge_min[t];
            agg.sum_discharge_max[t] += p.discharge_max[t];
            agg.sum_soc_min[t] += p.soc_min[t];
            agg.sum_soc_max[t] += p.soc_max[t];
            agg.sum_demand_drive[t] += p.demand_drive[t];
            agg.sum_demand_thermal[t] += p.demand_thermal[t];
        }
        agg.params.final_soc_target += p.params.final_soc_target;
    }
    let (rho, eta_c, eta_d) = match rule {
        AggregationParamRule::Fixed { rho, eta_c, eta_d } => (rho, eta_c, eta_d),
        AggregationParamRule::SimpleMean => {
            let n = fleet.len() as f64;
            (
                fleet.iter().map(|p| p.params.self_discharge).sum::<f64>() / n,
                fleet.iter().map(|p| p.params.eff_charge).sum::<f64>() / n,
                fleet.iter().map(|p| p.params.eff_discharge).sum::<f64>() / n,
            )
        }
        AggregationParamRule::CapacityWeighted => {
            let total_cap: f64 = fleet.iter().map(|p| p.capacity()).sum();
            if total_cap <= 0.0 {
                return Err(AggregateError::BadFactors(
                    "capacity-weighted rule needs positive capacities".into(),
                ));
            }
            let w = |f: &dyn Fn(&EvProfile) -> f64| -> f64 {
                fleet.iter().map(|p| p.capacity() * f(p)).sum::<f64>() / total_cap
            };
            (
                w(&|p| p.params.self_discharge),
                w(&|p| p.params.eff_charge),
                w(&|p| p.params.eff_discharge),
            )
        }
    };
    agg.params.self_discharge = rho;
    agg.params.eff_charge = eta_c;
    agg.params.eff_discharge = eta_d;
    Ok(agg)
}

/// Per-step dispatch corridor of the aggregated unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AevEnvelope {
    pub grid: TimeGrid,
    pub charge_min: Vec<f64>,
    pub charge_max: Vec<f64>,
    pub discharge_min: Vec<f64>,
    pub discharge_max: Vec<f64>,
    pub soc_min: Vec<f64>,
    pub soc_max: Vec<f64>,
}

impl AevEnvelope {
    pub fn bounds(&self) -> crate::dispatch::UnitBounds<'_> {
        crate::dispatch::UnitBounds {
            charge_min: &self.charge_min,
            charge_max: &self.charge_max,
            discharge_min: &self.discharge_min,
            discharge_max: &self.discharge_max,
            soc_min: &self.soc_min,
            soc_max: &self.soc_max,
        }
    }
}

/// Constant derating factors of the Simple Aggregation baseline. Unit factors
/// reproduce the plain virtual-storage envelope.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SaHeuristics {
    pub charge_factor: f64,
    pub discharge_factor: f64,
    pub soc_min_factor: f64,
    pub soc_max_factor: f64,
}

impl Default for SaHeuristics {
    fn default() -> Self {
        Self {
            charge_factor: 1.0,
            discharge_factor: 1.0,
            soc_min_factor: 1.0,
            soc_max_factor: 1.0,
        }
    }
}

/// The Simple Aggregation baseline: summed bounds with constant heuristic
/// factors on the upper charge/discharge availabilities and the SOC window.
pub fn simple_aggregation(
    agg: &AggregateProfile,
    heuristics: &SaHeuristics,
) -> Result<AevEnvelope, AggregateError> {
    for (name, f) in [
        ("charge_factor", heuristics.charge_factor),
        ("discharge_factor", heuristics.discharge_factor),
        ("soc_min_factor", heuristics.soc_min_factor),
        ("soc_max_factor", heuristics.soc_max_factor),
    ] {
        if !(f.is_finite() && f >= 0.0) {
            return Err(AggregateError::BadHeuristics(format!("{name} must be >= 0")));
        }
    }
    Ok(AevEnvelope {
        grid: agg.grid,
        charge_min: agg.sum_charge_min.clone(),
        charge_max: agg.sum_charge_max.iter().map(|v| heuristics.charge_factor * v).collect(),
        discharge_min: agg.sum_discharge_min.clone(),
        discharge_max: agg
            .sum_discharge_max
            .iter()
            .map(|v| heuristics.discharge_factor * v)
            .collect(),
        soc_min: agg.sum_soc_min.iter().map(|v| heuristics.soc_min_factor * v).collect(),
        soc_max: agg.sum_soc_max.iter().map(|v| heuristics.soc_max_factor * v).collect(),
    })
}

/// Scaling-factor group of hour `t` for group width `n`: the mapping cycles
/// weekly and groups every `n` hours, so identical factors repeat for each
/// week of the horizon.
pub fn mapping_index(t: usize, n: usize) -> usize {
    debug_assert!(n >= 1 && 24 % n == 0, "group width must divide 24");
    (t % HOURS_PER_WEEK) / n
}

/// Number of groups per weekly cycle for width `n`.
pub fn groups_per_week(n: usize) -> usize {
    HOURS_PER_WEEK / n
}

/// Which summed series the lower-SOC factor multiplies. The formulation as
/// printed scales the summed lower bounds; the case-study variant expresses
/// the lower SOC profile as a fraction of the summed upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SocMinSource {
    #[default]
    SocMinSum,
    SocMaxSum,
}

/// The six per-group factor arrays (length `168 / group_width` each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingMap {
    pub group_width: usize,
    pub charge_min: Vec<f64>,
    pub charge_max: Vec<f64>,
    pub discharge_min: Vec<f64>,
    pub discharge_max: Vec<f64>,
    pub soc_min: Vec<f64>,
    pub soc_max: Vec<f64>,
}

impl ScalingMap {
    pub fn unit(group_width: usize) -> Result<Self, AggregateError> {
        if group_width == 0 || 24 % group_width != 0 {
            return Err(AggregateError::BadGroupWidth(group_width));
        }
        let g = groups_per_week(group_width);
        Ok(Self {
            group_width,
            charge_min: vec![1.0; g],
            charge_max: vec![1.0; g],
            discharge_min: vec![1.0; g],
            discharge_max: vec![1.0; g],
            soc_min: vec![1.0; g],
            soc_max: vec![1.0; g],
        })
    }

    pub fn validate(&self) -> Result<(), AggregateError> {
        if self.group_width == 0 || 24 % self.group_width != 0 {
            return Err(AggregateError::BadGroupWidth(self.group_width));
        }
        let g = groups_per_week(self.group_width);
        for (name, arr) in self.roles() {
            if arr.len() != g {
                return Err(AggregateError::BadFactors(format!(
                    "{name} has {} groups, expected {g}",
                    arr.len()
                )));
            }
            if arr.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(AggregateError::BadFactors(format!(
                    "{name} contains a negative or non-finite factor"
                )));
            }
        }
        Ok(())
    }

    pub fn roles(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("charge_min", &self.charge_min),
            ("charge_max", &self.charge_max),
            ("discharge_min", &self.discharge_min),
            ("discharge_max", &self.discharge_max),
            ("soc_min", &self.soc_min),
            ("soc_max", &self.soc_max),
        ]
    }

    /// Equivalent map at a finer width (`fine` must divide this map's width):
    /// factors replicate across the subdivided groups.
    pub fn refine(&self, fine: usize) -> Result<ScalingMap, AggregateError> {
        if fine == 0 || 24 % fine != 0 || self.group_width % fine != 0 {
            return Err(AggregateError::BadGroupWidth(fine));
        }
        let repeat = self.group_width / fine;
        let expand = |arr: &[f64]| -> Vec<f64> {
            arr.iter().flat_map(|v| std::iter::repeat(*v).take(repeat)).collect()
        };
        Ok(ScalingMap {
            group_width: fine,
            charge_min: expand(&self.charge_min),
            charge_max: expand(&self.charge_max),
            discharge_min: expand(&self.discharge_min),
            discharge_max: expand(&self.discharge_max),
            soc_min: expand(&self.soc_min),
            soc_max: expand(&self.soc_max),
        })
    }
}

/// Multiply each summed bound series by its role's factor at
/// `mapping_index(t, group_width)`.
pub fn apply_scaling(
    agg: &AggregateProfile,
    map: &ScalingMap,
    soc_min_source: SocMinSource,
) -> Result<AevEnvelope, AggregateError> {
    map.validate()?;
    let n = map.group_width;
    let t_total = agg.grid.steps();
    let scale = |arr: &[f64], base: &[f64]| -> Vec<f64> {
        (0..t_total).map(|t| arr[mapping_index(t, n)] * base[t]).collect()
    };
    let soc_min_base: &[f64] = match soc_min_source {
        SocMinSource::SocMinSum => &agg.sum_soc_min,
        SocMinSource::SocMaxSum => &agg.sum_soc_max,
    };
    Ok(AevEnvelope {
        grid: agg.grid,
        charge_min: scale(&map.charge_min, &agg.sum_charge_min),
        charge_max: scale(&map.charge_max, &agg.sum_charge_max),
        discharge_min: scale(&map.discharge_min, &agg.sum_discharge_min),
        discharge_max: scale(&map.discharge_max, &agg.sum_discharge_max),
        soc_min: scale(&map.soc_min, soc_min_base),
        soc_max: scale(&map.soc_max, &agg.sum_soc_max),
    })
}

/// Group indices that actually occur within the horizon.
pub fn active_groups(grid: &TimeGrid, n: usize) -> Vec<usize> {
    let mut seen = vec![false; groups_per_week(n)];
    for t in 0..grid.steps() {
        seen[mapping_index(t, n)] = true;
    }
    (0..seen.len()).filter(|&g| seen[g]).collect()
}

/// Steps per active group; groups covering fewer than two steps violate the
/// identifiability assumption and should be warned about.
pub fn group_step_counts(grid: &TimeGrid, n: usize) -> Vec<usize> {
    let mut counts = vec![0usize; groups_per_week(n)];
    for t in 0..grid.steps() {
        counts[mapping_index(t, n)] += 1;
    }
    counts
}

/// Envelope CSV: `t, charge_min, charge_max, discharge_min, discharge_max,
/// soc_min, soc_max`.
pub fn envelope_to_csv(env: &AevEnvelope) -> String {
    let mut out =
        String::from("t,charge_min,charge_max,discharge_min,discharge_max,soc_min,soc_max\n");
    for t in 0..env.grid.steps() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t,
            env.charge_min[t],
            env.charge_max[t],
            env.discharge_min[t],
            env.discharge_max[t],
            env.soc_min[t],
            env.soc_max[t]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{generate_commuter_fleet, FleetGenSpec};

    fn fleet(n: usize) -> Vec<EvProfile> {
        let grid = TimeGrid::new(168, 0).unwrap();
        generate_commuter_fleet(7, n, &grid, &FleetGenSpec::default()).unwrap()
    }

    #[test]
    fn single_vehicle_sum_is_identity() {
        let f = fleet(1);
        let agg = sum_profiles(&f, AggregationParamRule::CapacityWeighted).unwrap();
        assert_eq!(agg.sum_charge_max, f[0].charge_max);
        assert_eq!(agg.sum_soc_min, f[0].soc_min);
        assert_eq!(agg.params.final_soc_target, f[0].params.final_soc_target);
    }

    #[test]
    fn identical_vehicles_double() {
        let f = fleet(1);
        let two = vec![f[0].clone(), f[0].clone()];
        let agg = sum_profiles(&two, AggregationParamRule::CapacityWeighted).unwrap();
        for t in 0..168 {
            assert_eq!(agg.sum_charge_max[t], 2.0 * f[0].charge_max[t]);
            assert_eq!(agg.sum_demand_drive[t], 2.0 * f[0].demand_drive[t]);
        }
    }

    #[test]
    fn capacity_weighted_efficiency_matches_oracle() {
        let mut f = fleet(3);
        f[0].params.eff_charge = 0.90;
        f[1].params.eff_charge = 0.95;
        f[2].params.eff_charge = 1.00;
        let agg = sum_profiles(&f, AggregationParamRule::CapacityWeighted).unwrap();
        // Independent recomputation of the weighted mean.
        let caps: Vec<f64> = f.iter().map(|p| p.capacity()).collect();
        let expected: f64 = f
            .iter()
            .zip(&caps)
            .map(|(p, c)| c * p.params.eff_charge)
            .sum::<f64>()
            / caps.iter().sum::<f64>();
        assert!((agg.params.eff_charge - expected).abs() < 1e-15);
    }

    #[test]
    fn sa_unit_factors_reproduce_sums() {
        let agg = sum_profiles(&fleet(4), AggregationParamRule::CapacityWeighted).unwrap();
        let env = simple_aggregation(&agg, &SaHeuristics::default()).unwrap();
        assert_eq!(env.charge_max, agg.sum_charge_max);
        assert_eq!(env.soc_min, agg.sum_soc_min);
        let half = simple_aggregation(
            &agg,
            &SaHeuristics {
                charge_factor: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        for t in 0..168 {
            assert_eq!(half.charge_max[t], 0.5 * agg.sum_charge_max[t]);
        }
        assert!(simple_aggregation(
            &agg,
            &SaHeuristics {
                charge_factor: -0.1,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn mapping_examples() {
        assert_eq!(mapping_index(0, 24), 0);
        assert_eq!(mapping_index(167, 24), 6);
        assert_eq!(mapping_index(168, 24), 0);
        assert_eq!(mapping_index(25, 1), 25);
        assert_eq!(mapping_index(25, 2), 12);
    }

    #[test]
    fn unit_scaling_is_identity() {
        let agg = sum_profiles(&fleet(3), AggregationParamRule::CapacityWeighted).unwrap();
        let env = apply_scaling(&agg, &ScalingMap::unit(24).unwrap(), SocMinSource::SocMinSum)
            .unwrap();
        assert_eq!(env.charge_max, agg.sum_charge_max);
        assert_eq!(env.soc_min, agg.sum_soc_min);
    }

    #[test]
    fn per_weekday_group_scales_only_its_day() {
        let agg = sum_profiles(&fleet(2), AggregationParamRule::CapacityWeighted).unwrap();
        let mut map = ScalingMap::unit(24).unwrap();
        map.soc_max[0] = 0.6;
        let env = apply_scaling(&agg, &map, SocMinSource::SocMinSum).unwrap();
        for t in 0..24 {
            assert_eq!(env.soc_max[t], 0.6 * agg.sum_soc_max[t]);
        }
        for t in 24..168 {
            assert_eq!(env.soc_max[t], agg.sum_soc_max[t]);
        }
    }

    #[test]
    fn soc_min_source_switches_base_series() {
        let agg = sum_profiles(&fleet(2), AggregationParamRule::CapacityWeighted).unwrap();
        let mut map = ScalingMap::unit(24).unwrap();
        for g in 0..7 {
            map.soc_min[g] = 0.1;
        }
        let a = apply_scaling(&agg, &map, SocMinSource::SocMinSum).unwrap();
        let b = apply_scaling(&agg, &map, SocMinSource::SocMaxSum).unwrap();
        for t in 0..168 {
            assert_eq!(a.soc_min[t], 0.1 * agg.sum_soc_min[t]);
            assert_eq!(b.soc_min[t], 0.1 * agg.sum_soc_max[t]);
        }
    }

    #[test]
    fn coarse_map_refines_to_equal_envelope() {
        let agg = sum_profiles(&fleet(3), AggregationParamRule::CapacityWeighted).unwrap();
        let mut coarse = ScalingMap::unit(24).unwrap();
        for g in 0..7 {
            coarse.charge_max[g] = 0.5 + 0.05 * g as f64;
            coarse.soc_max[g] = 0.9 - 0.1 * (g % 3) as f64;
        }
        let fine = coarse.refine(6).unwrap();
        let a = apply_scaling(&agg, &coarse, SocMinSource::SocMinSum).unwrap();
        let b = apply_scaling(&agg, &fine, SocMinSource::SocMinSum).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn active_groups_tracks_horizon() {
        let short = TimeGrid::new(30, 0).unwrap();
        assert_eq!(active_groups(&short, 24), vec![0, 1]);
        let counts = group_step_counts(&short, 24);
        assert_eq!(counts[0], 24);
        assert_eq!(counts[1], 6);
        assert_eq!(counts[2], 0);
        let week = TimeGrid::new(168, 0).unwrap();
        assert_eq!(active_groups(&week, 24).len(), 7);
    }
}
