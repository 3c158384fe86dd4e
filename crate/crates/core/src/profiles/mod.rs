//! Per-vehicle demand and flexibility profiles: synthetic commuter fleets,
//! CSV ingestion, uncontrolled charging simulation, and validation.

mod csv_io;
mod gen;
mod uncontrolled;
mod validate;

pub use csv_io::{fleet_params_to_csv, fleet_to_csv, load_profiles_csv, ProfileCsvError};
pub use gen::{generate_commuter_fleet, FleetGenSpec, GenError};
pub use uncontrolled::{uncontrolled_schedule, UncontrolledError};
pub use validate::{validate_profile, ProfileValidation, Violation};

use crate::grid::TimeGrid;
use serde::{Deserialize, Serialize};

/// Storage parameters of one EV battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvParams {
    /// Per-step retention factor; 1.0 means no self-discharge.
    pub self_discharge: f64,
    pub eff_charge: f64,
    pub eff_discharge: f64,
    /// Required stored energy (MWh) immediately after the final step.
    pub final_soc_target: f64,
}

impl EvParams {
    pub fn is_valid(&self) -> bool {
        let ok = |v: f64| v.is_finite() && v > 0.0 && v <= 1.0;
        ok(self.self_discharge)
            && ok(self.eff_charge)
            && ok(self.eff_discharge)
            && self.final_soc_target.is_finite()
            && self.final_soc_target >= 0.0
    }
}

/// One vehicle's time series: driving/thermal demands and the per-step
/// charge/discharge/SOC corridors. Energies in MWh, powers in MWh/h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvProfile {
    pub id: String,
    pub grid: TimeGrid,
    pub params: EvParams,
    pub demand_drive: Vec<f64>,
    pub demand_thermal: Vec<f64>,
    pub charge_min: Vec<f64>,
    pub charge_max: Vec<f64>,
    pub discharge_min: Vec<f64>,
    pub discharge_max: Vec<f64>,
    pub soc_min: Vec<f64>,
    pub soc_max: Vec<f64>,
}

impl EvProfile {
    /// Total demand (driving plus thermal) at step `t`.
    pub fn demand(&self, t: usize) -> f64 {
        self.demand_drive[t] + self.demand_thermal[t]
    }

    /// Largest SOC upper bound, used as the battery capacity proxy.
    pub fn capacity(&self) -> f64 {
        self.soc_max.iter().fold(0.0, |m, v| m.max(*v))
    }

    pub fn series(&self) -> [(&'static str, &[f64]); 8] {
        [
            ("demand_drive", &self.demand_drive),
            ("demand_thermal", &self.demand_thermal),
            ("charge_min", &self.charge_min),
            ("charge_max", &self.charge_max),
            ("discharge_min", &self.discharge_min),
            ("discharge_max", &self.discharge_max),
            ("soc_min", &self.soc_min),
            ("soc_max", &self.soc_max),
        ]
    }
}

/// Plug-in behavior of the uncontrolled fleet simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum UncontrolledMode {
    /// Charge at full available power whenever the SOC is below its cap.
    Direct,
    /// Charge only once the SOC falls below `anxiety_fraction` of the cap,
    /// then keep charging until full.
    LowSoc { anxiety_fraction: f64 },
}

impl UncontrolledMode {
    pub fn is_valid(&self) -> bool {
        match self {
            UncontrolledMode::Direct => true,
            UncontrolledMode::LowSoc { anxiety_fraction } => {
                anxiety_fraction.is_finite() && *anxiety_fraction > 0.0 && *anxiety_fraction <= 1.0
            }
        }
    }
}
