//! Aggregated EV-fleet control.
//!
//! Each ACVG bus hosts a slice of a national plug-in-vehicle fleet,
//! distributed in proportion to the local load. The fleet responds to the
//! average generator speed deviation with a linear power adjustment that
//! saturates once every vehicle charges or discharges at its rated power.
//! Positive ACVG power means the fleet consumes (charges); negative means
//! it feeds the grid.

use crate::case::NetworkCase;
use crate::error::{Error, Result};

/// Saturation breakpoint of the default gain, mHz.
pub const DEFAULT_SATURATION_MHZ: f64 = 100.0;

/// A fleet of controllable vehicles distributed over the ACVG buses.
#[derive(Debug, Clone)]
pub struct AcvgFleet {
    /// Total number of participating vehicles.
    pub n_pev: u64,
    /// Rated charge/discharge power per vehicle, kW.
    pub per_vehicle_kw: f64,
    /// Load-proportional share per ACVG bus; sums to one.
    pub share: Vec<f64>,
    /// Control gain per bus, kW per Hz of average speed deviation.
    pub gain_kw_per_hz: Vec<f64>,
    /// Power limit per bus, kW (n_pev · share · per-vehicle rating).
    pub p_max_kw: Vec<f64>,
}

impl AcvgFleet {
    pub fn n_buses(&self) -> usize {
        self.share.len()
    }

    /// Total controllable power, MW.
    pub fn total_p_max_mw(&self) -> f64 {
        self.p_max_kw.iter().sum::<f64>() / 1000.0
    }

    /// Rescale the gains so saturation occurs at `mhz` millihertz instead of
    /// the default breakpoint. Power limits are unchanged.
    pub fn with_saturation_mhz(mut self, mhz: f64) -> Result<AcvgFleet> {
        if !(mhz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "saturation threshold must be positive, got {mhz} mHz"
            )));
        }
        let hz = mhz / 1000.0;
        for (g, p) in self.gain_kw_per_hz.iter_mut().zip(&self.p_max_kw) {
            *g = p / hz;
        }
        Ok(self)
    }
}

/// Distribute `n_pev` vehicles over the ACVG buses of a case.
///
/// Shares follow the active loads at the ACVG buses. The default gain puts
/// the saturation breakpoint at ±100 mHz: gain = 10 · n_pev · rating · share
/// kW/Hz against a limit of n_pev · rating · share kW.
pub fn build_fleet(case: &NetworkCase, n_pev: u64, per_vehicle_kw: f64) -> Result<AcvgFleet> {
    if case.n_acvg() == 0 {
        return Err(Error::InvalidConfig(
            "case has no ACVG buses to host a fleet".into(),
        ));
    }
    if !(per_vehicle_kw > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "per-vehicle power must be positive, got {per_vehicle_kw} kW"
        )));
    }
    let loads: Vec<f64> = case
        .acvg_buses
        .iter()
        .map(|&b| case.load_at(b).map_or(0.0, |l| l.p_mw))
        .collect();
    let total: f64 = loads.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllLoadsZero);
    }
    let share: Vec<f64> = loads.iter().map(|l| l / total).collect();
    let fleet_kw = n_pev as f64 * per_vehicle_kw;
    let gain_kw_per_hz = share.iter().map(|s| 10.0 * fleet_kw * s).collect();
    let p_max_kw = share.iter().map(|s| fleet_kw * s).collect();
    Ok(AcvgFleet {
        n_pev,
        per_vehicle_kw,
        share,
        gain_kw_per_hz,
        p_max_kw,
    })
}

/// Control output for one evaluation of the law.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    /// Per-bus ACVG power, MW; positive consumes.
    pub p_mw: Vec<f64>,
    /// Whether each bus hit its power limit.
    pub saturated: Vec<bool>,
}

/// Evaluate the saturated linear law for an average deviation in Hz.
pub fn control_power(fleet: &AcvgFleet, delta_omega_hz: f64) -> ControlOutput {
    let m = fleet.n_buses();
    let mut p_mw = vec![0.0; m];
    let mut saturated = vec![false; m];
    for i in 0..m {
        let raw = fleet.gain_kw_per_hz[i] * delta_omega_hz;
        let lim = fleet.p_max_kw[i];
        let clamped = raw.clamp(-lim, lim);
        saturated[i] = lim > 0.0 && raw.abs() >= lim;
        p_mw[i] = clamped / 1000.0;
    }
    ControlOutput { p_mw, saturated }
}

/// Average speed deviation over all machines, converted to Hz.
pub fn average_frequency_deviation(omega_pu: &[f64], frequency_hz: f64) -> f64 {
    if omega_pu.is_empty() {
        return 0.0;
    }
    frequency_hz * omega_pu.iter().sum::<f64>() / omega_pu.len() as f64
}

/// The feedback controller handed to the integrator.
///
/// `delay_s` reserves a hook for reaction-time studies; the default of zero
/// applies the current deviation instantaneously.
#[derive(Debug, Clone)]
pub struct Controller {
    pub fleet: AcvgFleet,
    pub delay_s: f64,
}

impl Controller {
    pub fn new(fleet: AcvgFleet) -> Controller {
        Controller { fleet, delay_s: 0.0 }
    }

    pub fn with_delay(mut self, delay_s: f64) -> Result<Controller> {
        if delay_s < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "controller delay must be non-negative, got {delay_s} s"
            )));
        }
        self.delay_s = delay_s;
        Ok(self)
    }

    /// A controller whose fleet is empty; output is exactly zero.
    pub fn disabled(case: &NetworkCase) -> Controller {
        let m = case.n_acvg();
        Controller {
            fleet: AcvgFleet {
                n_pev: 0,
                per_vehicle_kw: 0.0,
                share: vec![0.0; m],
                gain_kw_per_hz: vec![0.0; m],
                p_max_kw: vec![0.0; m],
            },
            delay_s: 0.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.fleet.n_pev > 0
    }

    /// Per-bus power, MW, for an average deviation in Hz.
    pub fn power_mw(&self, delta_omega_hz: f64) -> ControlOutput {
        control_power(&self.fleet, delta_omega_hz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::load_case;
    use approx::assert_relative_eq;

    fn three_load_case() -> NetworkCase {
        load_case(
            r#"{
            "name": "three-load",
            "mva_base": 100.0,
            "frequency_hz": 60.0,
            "buses": [
                {"id": 1, "base_kv": 345.0},
                {"id": 2, "base_kv": 345.0},
                {"id": 3, "base_kv": 345.0},
                {"id": 4, "base_kv": 345.0}
            ],
            "branches": [
                {"from": 1, "to": 2, "r": 0.0, "x": 0.1},
                {"from": 2, "to": 3, "r": 0.0, "x": 0.1},
                {"from": 3, "to": 4, "r": 0.0, "x": 0.1}
            ],
            "generators": [
                {"bus": 1, "mva_rating": 100.0, "xd_transient": 0.05,
                 "inertia_h": 10.0, "damping": 1.0, "p_mw": 0.0,
                 "v_setpoint": 1.0, "swing": true}
            ],
            "loads": [
                {"bus": 2, "p_mw": 100.0},
                {"bus": 3, "p_mw": 300.0},
                {"bus": 4, "p_mw": 100.0}
            ],
            "acvgs": [2, 3]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn shares_follow_acvg_bus_loads() {
        // Only loads at ACVG buses enter the denominator (bus 4 is excluded).
        let fleet = build_fleet(&three_load_case(), 1000, 10.0).unwrap();
        assert_relative_eq!(fleet.share[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(fleet.share[1], 0.75, epsilon = 1e-15);
        assert_relative_eq!(fleet.share.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_region_and_limits_by_hand() {
        // 1000 vehicles × 10 kW = 10 MW fleet. At Δω = 50 mHz the linear law
        // asks for half the limit: bus shares 0.25/0.75 → 1.25 MW and 3.75 MW.
        let fleet = build_fleet(&three_load_case(), 1000, 10.0).unwrap();
        let out = control_power(&fleet, 0.05);
        assert_relative_eq!(out.p_mw[0], 1.25, epsilon = 1e-12);
        assert_relative_eq!(out.p_mw[1], 3.75, epsilon = 1e-12);
        assert!(!out.saturated[0] && !out.saturated[1]);

        // Beyond ±100 mHz the output pins at the limit.
        let out = control_power(&fleet, -0.25);
        assert_relative_eq!(out.p_mw[0], -2.5, epsilon = 1e-12);
        assert_relative_eq!(out.p_mw[1], -7.5, epsilon = 1e-12);
        assert!(out.saturated[0] && out.saturated[1]);
    }

    #[test]
    fn saturation_breakpoint_is_exact() {
        let fleet = build_fleet(&three_load_case(), 1000, 10.0).unwrap();
        let at = control_power(&fleet, 0.1);
        let just_under = control_power(&fleet, 0.1 - 1e-12);
        assert!(at.saturated.iter().all(|&s| s));
        assert!(just_under.saturated.iter().all(|&s| !s));
        assert_relative_eq!(at.p_mw[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn custom_saturation_threshold() {
        let fleet = build_fleet(&three_load_case(), 1000, 10.0)
            .unwrap()
            .with_saturation_mhz(200.0)
            .unwrap();
        let out = control_power(&fleet, 0.1);
        // Same limits, half the gain: 100 mHz now commands half power.
        assert_relative_eq!(out.p_mw[0], 1.25, epsilon = 1e-12);
        assert!(!out.saturated[0]);
        assert!(control_power(&fleet, 0.2).saturated[0]);
    }

    #[test]
    fn zero_fleet_is_exactly_zero() {
        let fleet = build_fleet(&three_load_case(), 0, 10.0).unwrap();
        let out = control_power(&fleet, 0.4);
        assert!(out.p_mw.iter().all(|&p| p == 0.0));
        assert!(out.saturated.iter().all(|&s| !s));
    }

    #[test]
    fn average_deviation_converts_to_hz() {
        let omega = [0.001, -0.0005, 0.0015];
        let avg = average_frequency_deviation(&omega, 60.0);
        assert_relative_eq!(avg, 60.0 * 0.002 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_loads_at_acvg_buses_rejected() {
        let case = load_case(
            &r#"{
            "name": "mini",
            "mva_base": 100.0,
            "frequency_hz": 60.0,
            "buses": [
                {"id": 1, "base_kv": 345.0},
                {"id": 2, "base_kv": 345.0}
            ],
            "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.1}],
            "generators": [
                {"bus": 1, "mva_rating": 100.0, "xd_transient": 0.05,
                 "inertia_h": 10.0, "damping": 1.0, "p_mw": 0.0,
                 "v_setpoint": 1.0, "swing": true}
            ],
            "loads": [],
            "acvgs": [2]
        }"#
            .to_string(),
        )
        .unwrap();
        assert!(matches!(
            build_fleet(&case, 100, 10.0).unwrap_err(),
            Error::AllLoadsZero
        ));
    }
}
