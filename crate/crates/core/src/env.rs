//! The restoration MDP: observation encoding, action decoding, transition
//! dynamics and reward.
//!
//! One step is one interval of `dt` hours. Within a step the order is fixed:
//! move the fleet, project requested powers onto their feasible ranges,
//! balance each microgrid, restore load, then advance SOC, fuel and time and
//! draw the next loads.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{feasible_power_range, soc_update, MessState};
use crate::grid::{dg_feasible_range, restore, sample_load, MicrogridState};
use crate::scenario::Scenario;
use crate::transport::{Location, NetworkError, NodeId};

/// Slack allowed when auditing post-projection quantities (kW, kWh, kVar).
pub const AUDIT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode finished; call reset")]
    EpisodeDone,
    #[error("action has {actual} components, expected {expected}")]
    ActionDimension { expected: usize, actual: usize },
    #[error("destination category {category} out of range ({count} categories)")]
    Category { category: usize, count: usize },
    #[error("non-finite action component {0}")]
    NonFiniteAction(usize),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("state does not match scenario: {0}")]
    State(String),
    #[error("internal dynamics error: {0}")]
    Internal(String),
}

/// Decoded action in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// Destination category per MESS (microgrids by id, then depots).
    pub destinations: Vec<usize>,
    /// Requested exchange power per MESS (kW, discharge positive).
    pub mess_kw: Vec<f64>,
    /// Requested DG output per microgrid (kW).
    pub dg_kw: Vec<f64>,
}

pub fn action_dim(s: &Scenario) -> usize {
    s.fleet.len() * s.destination_count() + s.fleet.len() + s.microgrids.len()
}

pub fn observation_dim(s: &Scenario) -> usize {
    1 + 2 * s.microgrids.len() + s.fleet.len() * (1 + s.destination_count())
}

fn affine(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (raw.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo)
}

/// Maps a raw vector in `[-1, 1]^D` to an [`Action`].
///
/// Layout: destination logits for each MESS, then one power component per
/// MESS, then one DG component per microgrid.
pub fn decode_action(s: &Scenario, raw: &[f64]) -> Result<Action, EnvError> {
    let expected = action_dim(s);
    if raw.len() != expected {
        return Err(EnvError::ActionDimension {
            expected,
            actual: raw.len(),
        });
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(EnvError::NonFiniteAction(i));
    }
    let k = s.destination_count();
    let n = s.fleet.len();
    let destinations = (0..n)
        .map(|w| {
            let logits = &raw[w * k..(w + 1) * k];
            // first index wins ties
            logits
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect();
    let mess_kw = s
        .fleet
        .iter()
        .enumerate()
        .map(|(w, m)| affine(raw[n * k + w], -m.params.max_charge_kw, m.params.max_discharge_kw))
        .collect();
    let dg_kw = s
        .microgrids
        .iter()
        .enumerate()
        .map(|(i, m)| affine(raw[n * k + n + i], 0.0, m.params.p_max_kw))
        .collect();
    Ok(Action {
        destinations,
        mess_kw,
        dg_kw,
    })
}

/// Inverse of [`decode_action`] up to the argmax: one-hot logits and the
/// affine preimage of each power (clamped into `[-1, 1]`).
pub fn encode_action(s: &Scenario, a: &Action) -> Vec<f64> {
    let k = s.destination_count();
    let mut raw = Vec::with_capacity(action_dim(s));
    for &d in &a.destinations {
        raw.extend((0..k).map(|i| if i == d { 1.0 } else { -1.0 }));
    }
    let inv = |v: f64, lo: f64, hi: f64| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 2.0 - 1.0).clamp(-1.0, 1.0)
        } else {
            -1.0
        }
    };
    for (m, &p) in s.fleet.iter().zip(&a.mess_kw) {
        raw.push(inv(p, -m.params.max_charge_kw, m.params.max_discharge_kw));
    }
    for (m, &p) in s.microgrids.iter().zip(&a.dg_kw) {
        raw.push(inv(p, 0.0, m.params.p_max_kw));
    }
    raw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Value of restored load ($).
    pub restoration_value: f64,
    pub gen_cost: f64,
    pub battery_cost: f64,
    pub transport_cost: f64,
    /// Violation magnitude (kWh-equivalent).
    pub penalty: f64,
    /// Scaled scalar reward.
    pub reward: f64,
}

impl RewardBreakdown {
    pub fn objective(&self) -> f64 {
        self.restoration_value - self.gen_cost - self.battery_cost - self.transport_cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Requested MESS power outside its feasible range.
    MessPower,
    /// Requested DG output outside its feasible range.
    DgPower,
    /// Charging exceeded local supply and was scaled back.
    ChargeScaleBack,
    /// Supply that could not be delivered to load.
    Spill,
    /// MESS away from a depot at the end of the horizon.
    ReturnToDepot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// MESS or microgrid index, depending on `kind`.
    pub index: usize,
    /// kW for power violations, km for the depot-return violation.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessStep {
    pub id: u32,
    pub location: Location,
    pub next_location: Location,
    pub destination: NodeId,
    pub category: usize,
    /// Index of the microgrid the MESS stayed at for the whole interval.
    pub stayed_at: Option<usize>,
    /// Stationary at a node (microgrid or depot) for the whole interval.
    pub parked: bool,
    pub requested_kw: f64,
    pub power_kw: f64,
    pub soc: f64,
    pub next_soc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridStep {
    pub id: u32,
    pub requested_dg_kw: f64,
    pub dg_kw: f64,
    pub load_kw: f64,
    pub supply_kw: f64,
    pub restored_kw: f64,
    pub restored_kvar: f64,
    pub spill_kw: f64,
    pub fuel_kwh: f64,
    pub next_fuel_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: usize,
    pub mess: Vec<MessStep>,
    pub microgrids: Vec<MicrogridStep>,
    pub breakdown: RewardBreakdown,
    /// Unrestored load valued at interruption cost ($).
    pub interruption_cost: f64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Everything that evolves during an episode. Together with the scenario it
/// fully determines future dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub t: usize,
    pub fleet: Vec<MessState>,
    pub grid: Vec<MicrogridState>,
    pub rng: ChaCha8Rng,
    pub done: bool,
}

/// Assembles reward components from post-projection quantities.
pub fn reward_terms(s: &Scenario, mess: &[MessStep], mgs: &[MicrogridStep], penalty: f64) -> RewardBreakdown {
    let dt = s.dt;
    let restoration_value = s
        .microgrids
        .iter()
        .zip(mgs)
        .map(|(m, r)| m.params.interruption_cost * r.restored_kw * dt)
        .sum();
    let gen_cost = s
        .microgrids
        .iter()
        .zip(mgs)
        .map(|(m, r)| m.params.generation_cost * r.dg_kw * dt)
        .sum();
    let battery_cost = mess
        .iter()
        .map(|w| s.costs.battery_per_kwh * w.power_kw.abs() * dt)
        .sum();
    let transport_cost = mess
        .iter()
        .map(|w| if w.parked { 0.0 } else { s.costs.transport_per_hour * dt })
        .sum();
    let mut b = RewardBreakdown {
        restoration_value,
        gen_cost,
        battery_cost,
        transport_cost,
        penalty,
        reward: 0.0,
    };
    b.reward = s.reward.objective * b.objective() - s.reward.penalty * penalty;
    b
}

#[derive(Debug, Clone)]
pub struct Environment {
    scenario: Arc<Scenario>,
    state: EnvState,
}

impl Environment {
    pub fn new(scenario: Arc<Scenario>, seed: u64) -> Self {
        let state = Self::initial_state(&scenario, seed);
        Environment { scenario, state }
    }

    fn initial_state(s: &Scenario, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fleet = s
            .fleet
            .iter()
            .map(|m| MessState {
                location: Location::at(m.home),
                destination: m.home,
                soc: m.params.initial_soc,
            })
            .collect();
        let grid = s
            .microgrids
            .iter()
            .map(|m| MicrogridState {
                fuel_kwh: m.params.e_max_kwh,
                load_kw: sample_load(&m.params, 0, &mut rng),
            })
            .collect();
        EnvState {
            t: 0,
            fleet,
            grid,
            rng,
            done: false,
        }
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn set_state(&mut self, state: EnvState) -> Result<(), EnvError> {
        if state.fleet.len() != self.scenario.fleet.len()
            || state.grid.len() != self.scenario.microgrids.len()
        {
            return Err(EnvError::State("fleet or microgrid count differs".into()));
        }
        for m in &state.fleet {
            self.scenario.network.validate_location(&m.location)?;
        }
        self.state = state;
        Ok(())
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        self.state = Self::initial_state(&self.scenario, seed);
        self.observe()
    }

    pub fn t(&self) -> usize {
        self.state.t
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    pub fn observe(&self) -> Observation {
        let s = &self.scenario;
        let mut v = Vec::with_capacity(observation_dim(s));
        v.push(self.state.t as f64 / s.horizon as f64);
        for (m, st) in s.microgrids.iter().zip(&self.state.grid) {
            let p = &m.params;
            v.push(if p.peak_load_kw > 0.0 {
                (st.load_kw / p.peak_load_kw).clamp(0.0, 1.0)
            } else {
                0.0
            });
            v.push(((st.fuel_kwh - p.e_min_kwh) / (p.e_max_kwh - p.e_min_kwh)).clamp(0.0, 1.0));
        }
        let dests = s.destinations();
        let scale = s.network.distance_scale();
        for st in &self.state.fleet {
            v.push(st.soc.clamp(0.0, 1.0));
            for &d in &dests {
                let km = s
                    .network
                    .distance(&st.location, d)
                    .expect("fleet locations are validated");
                v.push((km / scale).clamp(0.0, 1.0));
            }
        }
        Observation(v)
    }

    pub fn step_raw(&mut self, raw: &[f64]) -> Result<StepOutcome, EnvError> {
        let action = decode_action(&self.scenario, raw)?;
        self.step(&action)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        let s = Arc::clone(&self.scenario);
        let dests = s.destinations();
        if action.destinations.len() != s.fleet.len()
            || action.mess_kw.len() != s.fleet.len()
            || action.dg_kw.len() != s.microgrids.len()
        {
            return Err(EnvError::ActionDimension {
                expected: action_dim(&s),
                actual: action.destinations.len() + action.mess_kw.len() + action.dg_kw.len(),
            });
        }
        let dt = s.dt;
        let t = self.state.t;
        let mut violations = Vec::new();

        // Movement and stay indicators.
        let mut mess_steps = Vec::with_capacity(s.fleet.len());
        for (w, (m, st)) in s.fleet.iter().zip(&self.state.fleet).enumerate() {
            let category = action.destinations[w];
            let destination = *dests.get(category).ok_or(EnvError::Category {
                category,
                count: dests.len(),
            })?;
            let next = s
                .network
                .advance(&st.location, destination, m.params.speed_kmh, dt)?;
            let stayed_at = s
                .microgrids
                .iter()
                .position(|mg| s.network.at_microgrid(&st.location, &next, mg.id));
            let parked = matches!((st.location, next), (Location::AtNode { node: a }, Location::AtNode { node: b }) if a == b);

            let requested = action.mess_kw[w];
            let (lo, hi) = feasible_power_range(&m.params, st.soc, stayed_at.is_some(), dt);
            let power = requested.clamp(lo, hi);
            if power != requested {
                violations.push(Violation {
                    kind: ViolationKind::MessPower,
                    index: w,
                    magnitude: (requested - power).abs(),
                });
            }
            mess_steps.push(MessStep {
                id: m.id,
                location: st.location,
                next_location: next,
                destination,
                category,
                stayed_at,
                parked,
                requested_kw: requested,
                power_kw: power,
                soc: st.soc,
                next_soc: st.soc,
            });
        }

        // DG projection and power balance.
        let mut mg_steps = Vec::with_capacity(s.microgrids.len());
        for (i, (mg, st)) in s.microgrids.iter().zip(&self.state.grid).enumerate() {
            let requested = action.dg_kw[i];
            let (lo, hi) = dg_feasible_range(&mg.params, st, dt);
            let dg = requested.clamp(lo, hi);
            if dg != requested {
                violations.push(Violation {
                    kind: ViolationKind::DgPower,
                    index: i,
                    magnitude: (requested - dg).abs(),
                });
            }

            let discharge: f64 = mess_steps
                .iter()
                .filter(|w| w.stayed_at == Some(i) && w.power_kw > 0.0)
                .map(|w| w.power_kw)
                .sum();
            let charge: f64 = mess_steps
                .iter()
                .filter(|w| w.stayed_at == Some(i) && w.power_kw < 0.0)
                .map(|w| -w.power_kw)
                .sum();
            let available = dg + discharge;
            if charge > available {
                let factor = available / charge;
                for (w, ms) in mess_steps.iter_mut().enumerate() {
                    if ms.stayed_at == Some(i) && ms.power_kw < 0.0 {
                        let scaled = ms.power_kw * factor;
                        violations.push(Violation {
                            kind: ViolationKind::ChargeScaleBack,
                            index: w,
                            magnitude: (ms.power_kw - scaled).abs(),
                        });
                        ms.power_kw = scaled;
                    }
                }
            }
            let net_mess: f64 = mess_steps
                .iter()
                .filter(|w| w.stayed_at == Some(i))
                .map(|w| w.power_kw)
                .sum();
            let supply = (dg + net_mess).max(0.0);
            let r = restore(&mg.params, supply, st.load_kw);
            if r.spill_kw > 0.0 {
                violations.push(Violation {
                    kind: ViolationKind::Spill,
                    index: i,
                    magnitude: r.spill_kw,
                });
            }
            mg_steps.push(MicrogridStep {
                id: mg.id,
                requested_dg_kw: requested,
                dg_kw: dg,
                load_kw: st.load_kw,
                supply_kw: supply,
                restored_kw: r.p_restored_kw,
                restored_kvar: r.q_restored_kvar,
                spill_kw: r.spill_kw,
                fuel_kwh: st.fuel_kwh,
                next_fuel_kwh: st.fuel_kwh - dg * dt,
            });
        }

        for (m, ms) in s.fleet.iter().zip(mess_steps.iter_mut()) {
            ms.next_soc = soc_update(&m.params, ms.soc, ms.power_kw, dt)
                .map_err(|e| EnvError::Internal(format!("mess {}: {e}", m.id)))?;
        }

        let last = t + 1 == s.horizon;
        if last && s.return_to_depot {
            for (w, ms) in mess_steps.iter().enumerate() {
                let away = s
                    .depots
                    .iter()
                    .map(|&(_, d)| s.network.distance(&ms.next_location, d))
                    .collect::<Result<Vec<_>, _>>()?
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                if away > 0.0 {
                    violations.push(Violation {
                        kind: ViolationKind::ReturnToDepot,
                        index: w,
                        magnitude: away,
                    });
                }
            }
        }

        let penalty = violations.iter().map(|v| v.magnitude).sum::<f64>() * dt;
        let breakdown = reward_terms(&s, &mess_steps, &mg_steps, penalty);
        let interruption_cost = s
            .microgrids
            .iter()
            .zip(&mg_steps)
            .map(|(m, r)| m.params.interruption_cost * (r.load_kw - r.restored_kw) * dt)
            .sum();

        // Commit.
        for ((st, ms), w) in self.state.fleet.iter_mut().zip(&mess_steps).zip(&action.destinations) {
            st.location = ms.next_location;
            st.destination = dests[*w];
            st.soc = ms.next_soc;
        }
        for (st, r) in self.state.grid.iter_mut().zip(&mg_steps) {
            st.fuel_kwh = r.next_fuel_kwh;
        }
        self.state.t = t + 1;
        self.state.done = last;
        if !last {
            let EnvState { grid, rng, .. } = &mut self.state;
            for (mg, st) in s.microgrids.iter().zip(grid.iter_mut()) {
                st.load_kw = sample_load(&mg.params, t + 1, rng);
            }
        }

        Ok(StepOutcome {
            observation: self.observe(),
            reward: breakdown.reward,
            done: last,
            info: StepInfo {
                t,
                mess: mess_steps,
                microgrids: mg_steps,
                breakdown,
                interruption_cost,
                violations,
            },
        })
    }
}

/// Checks one step's post-projection quantities against the physical
/// constraints. Returns a description of every breach.
pub fn audit_step(s: &Scenario, info: &StepInfo) -> Vec<String> {
    let mut out = Vec::new();
    for (m, w) in s.fleet.iter().zip(&info.mess) {
        let p = &m.params;
        if w.stayed_at.is_none() && w.power_kw != 0.0 {
            out.push(format!("t={} mess {}: {} kW exchanged while not staying at a microgrid", info.t, m.id, w.power_kw));
        }
        if w.power_kw < -p.max_charge_kw - AUDIT_TOL || w.power_kw > p.max_discharge_kw + AUDIT_TOL {
            out.push(format!("t={} mess {}: power {} beyond rating", info.t, m.id, w.power_kw));
        }
        if w.next_soc < p.soc_min - AUDIT_TOL || w.next_soc > p.soc_max + AUDIT_TOL {
            out.push(format!("t={} mess {}: soc {} outside bounds", info.t, m.id, w.next_soc));
        }
        if s.network.validate_location(&w.next_location).is_err() {
            out.push(format!("t={} mess {}: invalid location {:?}", info.t, m.id, w.next_location));
        }
    }
    for (i, (mg, r)) in s.microgrids.iter().zip(&info.microgrids).enumerate() {
        let p = &mg.params;
        if r.restored_kw < -AUDIT_TOL || r.restored_kw > r.load_kw + AUDIT_TOL {
            out.push(format!("t={} mg {}: restored {} outside [0, {}]", info.t, mg.id, r.restored_kw, r.load_kw));
        }
        if r.restored_kvar > p.q_max_kvar + AUDIT_TOL {
            out.push(format!("t={} mg {}: reactive {} above {}", info.t, mg.id, r.restored_kvar, p.q_max_kvar));
        }
        if (r.restored_kvar - r.restored_kw * p.reactive_ratio()).abs() > AUDIT_TOL {
            out.push(format!("t={} mg {}: power factor relation broken", info.t, mg.id));
        }
        if r.dg_kw < -AUDIT_TOL || r.dg_kw > p.p_max_kw + AUDIT_TOL {
            out.push(format!("t={} mg {}: dg {} outside [0, {}]", info.t, mg.id, r.dg_kw, p.p_max_kw));
        }
        if r.next_fuel_kwh < p.e_min_kwh - AUDIT_TOL || r.next_fuel_kwh > p.e_max_kwh + AUDIT_TOL {
            out.push(format!("t={} mg {}: fuel {} outside reserve bounds", info.t, mg.id, r.next_fuel_kwh));
        }
        let mess_net: f64 = info
            .mess
            .iter()
            .filter(|w| w.stayed_at == Some(i))
            .map(|w| w.power_kw)
            .sum();
        if (r.dg_kw + mess_net - r.restored_kw - r.spill_kw).abs() > AUDIT_TOL {
            out.push(format!("t={} mg {}: active power balance broken", info.t, mg.id));
        }
        if r.spill_kw < -AUDIT_TOL {
            out.push(format!("t={} mg {}: negative spill", info.t, mg.id));
        }
    }
    out
}

/// One line of an exported episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    /// Raw network output, when the action came from one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_action: Option<Vec<f64>>,
    /// Decoded action that was applied.
    pub action: Action,
    pub mess: Vec<TraceMess>,
    pub microgrids: Vec<TraceMicrogrid>,
    pub breakdown: RewardBreakdown,
    pub interruption_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMess {
    pub id: u32,
    pub location: Location,
    pub next_location: Location,
    /// Destination category index.
    pub kappa: usize,
    pub destination: NodeId,
    /// Microgrid id the MESS stayed at, if any.
    pub stayed_at: Option<u32>,
    pub power_kw: f64,
    pub soc: f64,
    pub next_soc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMicrogrid {
    pub id: u32,
    pub p_dg_kw: f64,
    pub p_load_kw: f64,
    pub p_restored_kw: f64,
    pub e_dg_kwh: f64,
    pub next_e_dg_kwh: f64,
}

impl TraceRecord {
    pub fn new(s: &Scenario, raw_action: Option<Vec<f64>>, action: Action, info: &StepInfo) -> Self {
        TraceRecord {
            t: info.t,
            raw_action,
            action,
            mess: info
                .mess
                .iter()
                .map(|w| TraceMess {
                    id: w.id,
                    location: w.location,
                    next_location: w.next_location,
                    kappa: w.category,
                    destination: w.destination,
                    stayed_at: w.stayed_at.map(|i| s.microgrids[i].id),
                    power_kw: w.power_kw,
                    soc: w.soc,
                    next_soc: w.next_soc,
                })
                .collect(),
            microgrids: info
                .microgrids
                .iter()
                .map(|r| TraceMicrogrid {
                    id: r.id,
                    p_dg_kw: r.dg_kw,
                    p_load_kw: r.load_kw,
                    p_restored_kw: r.restored_kw,
                    e_dg_kwh: r.fuel_kwh,
                    next_e_dg_kwh: r.next_fuel_kwh,
                })
                .collect(),
            breakdown: info.breakdown,
            interruption_cost: info.interruption_cost,
        }
    }
}
