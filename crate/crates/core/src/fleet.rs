//! Mobile energy storage: parameters, state, and charge/discharge limits.
//!
//! Power sign convention: negative is charging (energy flows into the
//! vehicle), positive is discharging into the microgrid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transport::{Location, NodeId};

/// SOC values this close to a bound are snapped onto it.
pub const SOC_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("invalid MESS parameters: {0}")]
    InvalidParams(String),
    #[error("SOC {soc} left [{min}, {max}]: power was not pre-clipped")]
    SocOutOfBounds { soc: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MessParams {
    pub capacity_kwh: f64,
    pub max_charge_kw: f64,
    pub max_discharge_kw: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub speed_kmh: f64,
    pub home_depot: u32,
    pub initial_soc: f64,
}

impl Default for MessParams {
    fn default() -> Self {
        MessParams {
            capacity_kwh: 1000.0,
            max_charge_kw: 400.0,
            max_discharge_kw: 400.0,
            charge_efficiency: 0.95,
            discharge_efficiency: 0.95,
            soc_min: 0.1,
            soc_max: 0.9,
            speed_kmh: 30.0,
            home_depot: 1,
            initial_soc: 0.5,
        }
    }
}

impl MessParams {
    pub fn validate(&self) -> Result<(), FleetError> {
        let bad = |m: &str| Err(FleetError::InvalidParams(m.to_string()));
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return bad("require 0 <= soc_min < soc_max <= 1");
        }
        if !(self.capacity_kwh > 0.0) {
            return bad("capacity must be positive");
        }
        if !(self.max_charge_kw > 0.0 && self.max_discharge_kw > 0.0) {
            return bad("power ratings must be positive");
        }
        for eta in [self.charge_efficiency, self.discharge_efficiency] {
            if !(eta > 0.0 && eta <= 1.0) {
                return bad("efficiencies must lie in (0, 1]");
            }
        }
        if !(self.speed_kmh > 0.0) {
            return bad("speed must be positive");
        }
        if !(self.soc_min..=self.soc_max).contains(&self.initial_soc) {
            return bad("initial SOC outside bounds");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessState {
    pub location: Location,
    pub destination: NodeId,
    pub soc: f64,
}

/// SOC after exchanging `power_kw` for `dt` hours.
pub fn soc_update(params: &MessParams, soc: f64, power_kw: f64, dt: f64) -> Result<f64, FleetError> {
    let next = if power_kw < 0.0 {
        soc - params.charge_efficiency * power_kw * dt / params.capacity_kwh
    } else {
        soc - power_kw * dt / (params.discharge_efficiency * params.capacity_kwh)
    };
    if next < params.soc_min - SOC_EPS || next > params.soc_max + SOC_EPS {
        return Err(FleetError::SocOutOfBounds {
            soc: next,
            min: params.soc_min,
            max: params.soc_max,
        });
    }
    Ok(next.clamp(params.soc_min, params.soc_max))
}

/// Admissible `(min, max)` exchange power. Zero unless the vehicle stays at a
/// microgrid for the interval; otherwise limited by rating and SOC headroom.
pub fn feasible_power_range(params: &MessParams, soc: f64, at_microgrid: bool, dt: f64) -> (f64, f64) {
    if !at_microgrid {
        return (0.0, 0.0);
    }
    let charge_room = ((params.soc_max - soc) * params.capacity_kwh
        / (params.charge_efficiency * dt))
        .max(0.0);
    let discharge_room =
        ((soc - params.soc_min) * params.capacity_kwh * params.discharge_efficiency / dt).max(0.0);
    (
        -params.max_charge_kw.min(charge_room),
        params.max_discharge_kw.min(discharge_room),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn idle_keeps_soc() {
        let p = MessParams::default();
        assert_eq!(soc_update(&p, 0.37, 0.0, 1.0).unwrap(), 0.37);
    }

    #[test]
    fn charging_branch() {
        let p = MessParams::default();
        let soc = soc_update(&p, 0.5, -100.0, 1.0).unwrap();
        assert!((soc - 0.595).abs() < 1e-12, "{soc}");
    }

    #[test]
    fn discharging_branch() {
        let p = MessParams::default();
        let soc = soc_update(&p, 0.5, 100.0, 1.0).unwrap();
        assert!((soc - (0.5 - 100.0 / 950.0)).abs() < 1e-12);
        assert!((soc - 0.39474).abs() < 1e-5);
    }

    #[test]
    fn out_of_bounds_is_an_error() {
        let p = MessParams::default();
        assert!(matches!(
            soc_update(&p, 0.15, 400.0, 1.0),
            Err(FleetError::SocOutOfBounds { .. })
        ));
    }

    #[test]
    fn range_off_microgrid_is_zero() {
        assert_eq!(feasible_power_range(&MessParams::default(), 0.5, false, 1.0), (0.0, 0.0));
    }

    #[test]
    fn range_full_battery_cannot_charge() {
        let p = MessParams::default();
        let (lo, hi) = feasible_power_range(&p, p.soc_max, true, 1.0);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 400.0);
    }

    #[test]
    fn range_reference_values() {
        let (lo, hi) = feasible_power_range(&MessParams::default(), 0.5, true, 1.0);
        assert_eq!(lo, -400.0);
        assert!((hi - 380.0).abs() < 1e-9);
    }

    #[test]
    fn validation() {
        assert!(MessParams::default().validate().is_ok());
        let mut p = MessParams::default();
        p.soc_min = 0.9;
        assert!(p.validate().is_err());
        let mut p = MessParams::default();
        p.charge_efficiency = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn round_trip_loses_energy() {
        let p = MessParams::default();
        let energy = 50.0;
        let up = soc_update(&p, 0.5, -energy, 1.0).unwrap();
        // Discharge the same stored quantity back out.
        let stored = (up - 0.5) * p.capacity_kwh;
        let back = soc_update(&p, up, energy, 1.0).unwrap();
        assert!(stored < energy);
        assert!(back < 0.5);
    }

    #[test]
    fn many_clipped_draws_stay_in_bounds() {
        use rand::{Rng, SeedableRng};
        let p = MessParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1_000_000 {
            let soc = rng.random_range(p.soc_min..=p.soc_max);
            let dt = rng.random_range(0.1..=2.0);
            let (lo, hi) = feasible_power_range(&p, soc, true, dt);
            let power = rng.random_range(-1000.0..=1000.0_f64).clamp(lo, hi);
            let next = soc_update(&p, soc, power, dt).unwrap();
            assert!((p.soc_min..=p.soc_max).contains(&next));
        }
    }

    proptest! {
        #[test]
        fn clipped_power_keeps_soc_in_bounds(
            soc in 0.1f64..=0.9,
            raw in -2000.0f64..2000.0,
            eta_c in 0.5f64..=1.0,
            eta_d in 0.5f64..=1.0,
        ) {
            let p = MessParams { charge_efficiency: eta_c, discharge_efficiency: eta_d, ..MessParams::default() };
            let (lo, hi) = feasible_power_range(&p, soc, true, 1.0);
            prop_assert!(lo <= 0.0 && hi >= 0.0);
            let next = soc_update(&p, soc, raw.clamp(lo, hi), 1.0).unwrap();
            prop_assert!(next >= p.soc_min && next <= p.soc_max);
        }

        #[test]
        fn round_trip_strictly_lossy(soc in 0.3f64..0.8, kw in 1.0f64..50.0, eta in 0.5f64..0.999) {
            let p = MessParams { charge_efficiency: eta, discharge_efficiency: eta, ..MessParams::default() };
            let up = soc_update(&p, soc, -kw, 1.0).unwrap();
            let down = soc_update(&p, up, kw, 1.0).unwrap();
            prop_assert!(down < soc);
        }
    }
}
