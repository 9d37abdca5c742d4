//! Microgrid resources, load realisation and per-step restoration.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid microgrid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadType {
    Industrial,
    Commercial,
    Residential,
}

impl LoadType {
    /// Customer interruption cost in $/kWh.
    pub fn interruption_cost(self) -> f64 {
        match self {
            LoadType::Industrial => 8.0,
            LoadType::Commercial => 10.0,
            LoadType::Residential => 2.0,
        }
    }

    /// Per-unit 24-hour shape, hour 0 first.
    pub fn default_profile(self) -> [f64; HOURS] {
        match self {
            LoadType::Industrial => [
                0.82, 0.80, 0.80, 0.80, 0.81, 0.83, 0.86, 0.90, 0.93, 0.95, 0.95, 0.94, 0.92, 0.94,
                0.95, 0.95, 0.93, 0.91, 0.88, 0.86, 0.85, 0.84, 0.83, 0.82,
            ],
            LoadType::Commercial => [
                0.32, 0.30, 0.30, 0.30, 0.31, 0.34, 0.42, 0.58, 0.78, 0.92, 0.97, 1.00, 0.98, 0.99,
                1.00, 0.98, 0.94, 0.85, 0.70, 0.58, 0.48, 0.42, 0.37, 0.34,
            ],
            LoadType::Residential => [
                0.45, 0.40, 0.38, 0.37, 0.38, 0.45, 0.62, 0.80, 0.78, 0.65, 0.58, 0.55, 0.55, 0.54,
                0.55, 0.58, 0.66, 0.80, 0.93, 1.00, 0.97, 0.86, 0.70, 0.55,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridParams {
    pub p_max_kw: f64,
    pub q_max_kvar: f64,
    pub e_max_kwh: f64,
    pub e_min_kwh: f64,
    pub power_factor: f64,
    pub interruption_cost: f64,
    pub generation_cost: f64,
    pub load_type: LoadType,
    pub peak_load_kw: f64,
    pub profile: Vec<f64>,
    pub forecast_error_std: f64,
}

impl MicrogridParams {
    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: String| Err(GridError::InvalidParams(m));
        if !(0.0 < self.e_min_kwh && self.e_min_kwh < self.e_max_kwh) {
            return bad(format!(
                "require 0 < e_min ({}) < e_max ({})",
                self.e_min_kwh, self.e_max_kwh
            ));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return bad(format!("power factor {} outside (0, 1]", self.power_factor));
        }
        if self.profile.len() != HOURS {
            return bad(format!("profile has {} values, need {HOURS}", self.profile.len()));
        }
        if self.profile.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("profile values must lie in [0, 1]".into());
        }
        if !(self.forecast_error_std >= 0.0) {
            return bad("forecast error std must be non-negative".into());
        }
        if !(self.p_max_kw >= 0.0 && self.q_max_kvar >= 0.0 && self.peak_load_kw >= 0.0) {
            return bad("capacities must be non-negative".into());
        }
        if !(self.interruption_cost >= 0.0 && self.generation_cost >= 0.0) {
            return bad("costs must be non-negative".into());
        }
        Ok(())
    }

    /// Forecast (noise-free) load at hour `t`.
    pub fn forecast(&self, t: usize) -> f64 {
        self.peak_load_kw * self.profile[t]
    }

    /// tan(acos(pf)): reactive power drawn per unit of restored active power.
    pub fn reactive_ratio(&self) -> f64 {
        self.power_factor.acos().tan()
    }

    /// Largest active load the reactive capability can serve.
    pub fn reactive_cap_kw(&self) -> f64 {
        let ratio = self.reactive_ratio();
        if ratio <= 0.0 {
            f64::INFINITY
        } else {
            self.q_max_kvar / ratio
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridState {
    pub fuel_kwh: f64,
    pub load_kw: f64,
}

/// Realised load at hour `t`: the forecast with a relative Gaussian error,
/// clipped to `[0, peak]`. Always consumes one normal draw.
pub fn sample_load<R: Rng + ?Sized>(params: &MicrogridParams, t: usize, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let error = params.forecast_error_std * z;
    load_with_error(params, t, error)
}

pub fn load_with_error(params: &MicrogridParams, t: usize, error: f64) -> f64 {
    (params.forecast(t) * (1.0 + error)).clamp(0.0, params.peak_load_kw)
}

/// Admissible DG output `(0, max)` given remaining fuel above the reserve.
pub fn dg_feasible_range(params: &MicrogridParams, state: &MicrogridState, dt: f64) -> (f64, f64) {
    let fuel_room = ((state.fuel_kwh - params.e_min_kwh) / dt).max(0.0);
    (0.0, params.p_max_kw.min(fuel_room))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Restoration {
    pub p_restored_kw: f64,
    pub q_restored_kvar: f64,
    pub spill_kw: f64,
    pub q_deficit_kvar: f64,
}

/// Serves as much load as supply, demand and reactive capability allow.
/// Supply beyond that is spilled.
pub fn restore(params: &MicrogridParams, supply_kw: f64, load_kw: f64) -> Restoration {
    let supply = supply_kw.max(0.0);
    let p_r = supply.min(load_kw.max(0.0)).min(params.reactive_cap_kw());
    let q_r = p_r * params.reactive_ratio();
    Restoration {
        p_restored_kw: p_r,
        q_restored_kvar: q_r,
        spill_kw: supply - p_r,
        q_deficit_kvar: (q_r - params.q_max_kvar).max(0.0),
    }
}
