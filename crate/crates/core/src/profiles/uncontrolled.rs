//! Forward simulation of uncontrolled charging behavior.

use super::{EvProfile, UncontrolledMode};
use crate::dispatch::DispatchSchedule;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UncontrolledError {
    #[error("initial SOC {soc} outside [{lo}, {hi}] at step 0")]
    BadInitialSoc { soc: f64, lo: f64, hi: f64 },
    #[error("uncontrolled simulation infeasible at step {step}: {msg}")]
    Infeasible { step: usize, msg: String },
    #[error("invalid mode: anxiety fraction must lie in (0, 1]")]
    BadMode,
}

const REL_EPS: f64 = 1e-9;

/// Simulate plug-in charging behavior over the profile's horizon.
///
/// Direct mode charges at full available power whenever the battery is not
/// full at the start of a step; low-SOC mode waits for the SOC to fall below
/// the anxiety threshold and then charges until full. In both modes charging
/// is forced early enough to keep the SOC above its lower bound and to make
/// the final storage target reachable (greedy deferral never strands the
/// vehicle). Discharge is identically zero.
///
/// `initial_soc` defaults to the step-0 SOC upper bound.
pub fn uncontrolled_schedule(
    profile: &EvProfile,
    mode: &UncontrolledMode,
    initial_soc: Option<f64>,
) -> Result<DispatchSchedule, UncontrolledError> {
    if !mode.is_valid() {
        return Err(UncontrolledError::BadMode);
    }
    let t_total = profile.grid.steps();
    let rho = profile.params.self_discharge;
    let eta_c = profile.params.eff_charge;
    let target = profile.params.final_soc_target;

    let soc0 = initial_soc.unwrap_or(profile.soc_max[0]);
    if soc0 < profile.soc_min[0] - REL_EPS || soc0 > profile.soc_max[0] + REL_EPS {
        return Err(UncontrolledError::BadInitialSoc {
            soc: soc0,
            lo: profile.soc_min[0],
            hi: profile.soc_max[0],
        });
    }

    // Backward sweep: req[t] is the least SOC at the start of step t from
    // which the remaining lower bounds and the terminal target stay reachable
    // when charging at full power. req[T] constrains the implied post-horizon
    // SOC.
    let mut req = vec![0.0_f64; t_total + 1];
    req[t_total] = target;
    for t in (0..t_total).rev() {
        let needed = (req[t + 1] + profile.demand(t) - eta_c * profile.charge_max[t]) / rho;
        req[t] = needed.max(profile.soc_min[t]);
        if req[t] > profile.soc_max[t] + REL_EPS {
            return Err(UncontrolledError::Infeasible {
                step: t,
                msg: format!(
                    "even full charging from step {t} on cannot meet later demand (needs SOC {:.6}, cap {:.6})",
                    req[t], profile.soc_max[t]
                ),
            });
        }
    }
    if soc0 < req[0] - REL_EPS {
        return Err(UncontrolledError::Infeasible {
            step: 0,
            msg: format!("initial SOC {soc0:.6} below the minimum feasible {:.6}", req[0]),
        });
    }

    let mut charge = vec![0.0; t_total];
    let mut soc = vec![0.0; t_total];
    let mut latched = false;
    let mut cur = soc0;
    for t in 0..t_total {
        soc[t] = cur;
        let cap = profile.soc_max[t];
        let eps = REL_EPS * cap.max(1.0);
        let want = match mode {
            UncontrolledMode::Direct => cur < cap - eps,
            UncontrolledMode::LowSoc { anxiety_fraction } => {
                if cur < anxiety_fraction * cap {
                    latched = true;
                } else if cur >= cap - eps {
                    latched = false;
                }
                latched
            }
        };
        // Keep the next step (or the implied terminal) feasible even when the
        // mode itself would not charge yet.
        let forced = ((req[t + 1] + profile.demand(t) - rho * cur) / eta_c).max(0.0);
        let desired = if want { profile.charge_max[t] } else { 0.0 }
            .max(forced)
            .max(profile.charge_min[t]);
        // Never overshoot the next SOC cap; the final step may fill the
        // battery to its own cap.
        let cap_next = if t + 1 < t_total {
            profile.soc_max[t + 1]
        } else {
            profile.soc_max[t]
        };
        let headroom = ((cap_next - rho * cur + profile.demand(t)) / eta_c).max(0.0);
        let x = desired.min(profile.charge_max[t]).min(headroom);
        if x < profile.charge_min[t] - REL_EPS {
            return Err(UncontrolledError::Infeasible {
                step: t,
                msg: "minimum charging duty exceeds the feasible headroom".into(),
            });
        }
        let next = rho * cur - profile.demand(t) + eta_c * x;
        let floor = if t + 1 < t_total {
            profile.soc_min[t + 1]
        } else {
            target
        };
        if next < floor - REL_EPS * floor.max(1.0) {
            return Err(UncontrolledError::Infeasible {
                step: t + 1,
                msg: format!("SOC {next:.6} falls below the requirement {floor:.6}"),
            });
        }
        charge[t] = x;
        cur = next;
    }

    Ok(DispatchSchedule {
        owner: profile.id.clone(),
        charge,
        discharge: vec![0.0; t_total],
        soc,
        objective: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::profiles::EvParams;

    fn profile_t3() -> EvProfile {
        // The worked example: cap 1, full start, demand 0.5 in step 1 (0-based),
        // plugged in throughout.
        EvProfile {
            id: "t3".into(),
            grid: TimeGrid::new(3, 0).unwrap(),
            params: EvParams {
                self_discharge: 1.0,
                eff_charge: 1.0,
                eff_discharge: 1.0,
                final_soc_target: 0.5,
            },
            demand_drive: vec![0.0, 0.5, 0.0],
            demand_thermal: vec![0.0; 3],
            charge_min: vec![0.0; 3],
            charge_max: vec![1.0; 3],
            discharge_min: vec![0.0; 3],
            discharge_max: vec![0.0; 3],
            soc_min: vec![0.0; 3],
            soc_max: vec![1.0; 3],
        }
    }

    #[test]
    fn direct_refills_on_arrival() {
        let s = uncontrolled_schedule(&profile_t3(), &UncontrolledMode::Direct, Some(1.0)).unwrap();
        assert_eq!(s.charge, vec![0.0, 0.0, 0.5]);
        assert_eq!(s.soc, vec![1.0, 1.0, 0.5]);
        assert_eq!(s.discharge, vec![0.0; 3]);
    }

    #[test]
    fn low_soc_waits_above_anxiety() {
        let s = uncontrolled_schedule(
            &profile_t3(),
            &UncontrolledMode::LowSoc {
                anxiety_fraction: 0.3,
            },
            Some(1.0),
        )
        .unwrap();
        assert_eq!(s.charge, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn already_full_zero_demand_stays_idle() {
        let mut p = profile_t3();
        p.demand_drive = vec![0.0; 3];
        p.params.final_soc_target = 0.0;
        let s = uncontrolled_schedule(&p, &UncontrolledMode::Direct, None).unwrap();
        assert_eq!(s.charge, vec![0.0; 3]);
    }

    #[test]
    fn forced_charging_meets_terminal_target() {
        // Low-SOC mode never triggers (SOC stays at 0.8 > 0.3), but the
        // terminal target of 1.0 forces a top-up in the last step.
        let mut p = profile_t3();
        p.demand_drive = vec![0.2, 0.0, 0.0];
        p.params.final_soc_target = 1.0;
        let s = uncontrolled_schedule(
            &p,
            &UncontrolledMode::LowSoc {
                anxiety_fraction: 0.3,
            },
            Some(1.0),
        )
        .unwrap();
        let implied = s.soc[2] + s.charge[2];
        assert!((implied - 1.0).abs() < 1e-9, "implied terminal {implied}");
    }

    #[test]
    fn infeasible_when_unpluggable_demand_drains() {
        let mut p = profile_t3();
        p.charge_max = vec![0.0; 3];
        p.demand_drive = vec![0.6, 0.6, 0.0];
        let err = uncontrolled_schedule(&p, &UncontrolledMode::Direct, Some(1.0)).unwrap_err();
        assert!(matches!(err, UncontrolledError::Infeasible { .. }));
    }
}
