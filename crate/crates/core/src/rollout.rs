//! Running a policy through whole episodes and summarising the result.

use serde::{Deserialize, Serialize};

use crate::env::{decode_action, Action, EnvError, Environment, StepInfo, TraceRecord};
use crate::td3::Agent;
use crate::transport::Location;

/// What a policy chose for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Raw vector in `[-1, 1]^D`, for policies that work in that space.
    pub raw: Option<Vec<f64>>,
    pub action: Action,
}

pub trait Policy {
    fn decide(&mut self, env: &Environment) -> Result<Decision, EnvError>;
}

/// Greedy (noise-free) actor.
pub struct ActorPolicy<'a>(pub &'a Agent);

impl Policy for ActorPolicy<'_> {
    fn decide(&mut self, env: &Environment) -> Result<Decision, EnvError> {
        let raw = self
            .0
            .greedy(env.observe().as_slice())
            .map_err(|e| EnvError::Internal(e.to_string()))?;
        let action = decode_action(env.scenario(), &raw)?;
        Ok(Decision {
            raw: Some(raw),
            action,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub episode_return: f64,
    pub restoration_value: f64,
    pub gen_cost: f64,
    pub battery_cost: f64,
    pub transport_cost: f64,
    /// Violation magnitude summed over the episode (kWh-equivalent).
    pub penalty: f64,
    pub interruption_cost: f64,
    /// Per microgrid, in scenario order.
    pub restored_kwh: Vec<f64>,
    pub load_kwh: Vec<f64>,
    pub violations: usize,
}

impl EpisodeSummary {
    /// Generation, battery and transport cost plus unserved-load cost ($).
    pub fn total_cost(&self) -> f64 {
        self.gen_cost + self.battery_cost + self.transport_cost + self.interruption_cost
    }

    pub fn restoration_fraction(&self) -> Vec<f64> {
        self.restored_kwh
            .iter()
            .zip(&self.load_kwh)
            .map(|(r, l)| if *l > 0.0 { r / l } else { 0.0 })
            .collect()
    }

    fn absorb(&mut self, info: &StepInfo, reward: f64, dt: f64) {
        let b = &info.breakdown;
        self.episode_return += reward;
        self.restoration_value += b.restoration_value;
        self.gen_cost += b.gen_cost;
        self.battery_cost += b.battery_cost;
        self.transport_cost += b.transport_cost;
        self.penalty += b.penalty;
        self.interruption_cost += info.interruption_cost;
        self.violations += info.violations.len();
        if self.restored_kwh.is_empty() {
            self.restored_kwh = vec![0.0; info.microgrids.len()];
            self.load_kwh = vec![0.0; info.microgrids.len()];
        }
        for (i, m) in info.microgrids.iter().enumerate() {
            self.restored_kwh[i] += m.restored_kw * dt;
            self.load_kwh[i] += m.load_kw * dt;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub summary: EpisodeSummary,
    pub steps: Vec<StepInfo>,
    pub trace: Vec<TraceRecord>,
}

/// Resets `env` with `seed` and runs `policy` to the end of the horizon.
pub fn run_episode(env: &mut Environment, policy: &mut dyn Policy, seed: u64) -> Result<Episode, EnvError> {
    env.reset(seed);
    let scenario = std::sync::Arc::clone(env.scenario());
    let mut summary = EpisodeSummary {
        seed,
        ..EpisodeSummary::default()
    };
    let mut steps = Vec::with_capacity(scenario.horizon);
    let mut trace = Vec::with_capacity(scenario.horizon);
    while !env.is_done() {
        let d = policy.decide(env)?;
        let out = env.step(&d.action)?;
        summary.absorb(&out.info, out.reward, scenario.dt);
        trace.push(TraceRecord::new(&scenario, d.raw, d.action, &out.info));
        steps.push(out.info);
    }
    Ok(Episode {
        summary,
        steps,
        trace,
    })
}

/// Re-applies the actions of a recorded trace and returns the per-step
/// rewards the environment produces.
pub fn replay(env: &mut Environment, seed: u64, trace: &[TraceRecord]) -> Result<Vec<f64>, EnvError> {
    env.reset(seed);
    trace
        .iter()
        .map(|rec| env.step(&rec.action).map(|o| o.reward))
        .collect()
}

/// One leg of a MESS itinerary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TripLeg {
    /// Parked at a node for consecutive steps.
    Stay {
        node: u32,
        microgrid: Option<u32>,
        from_t: usize,
        to_t: usize,
        /// Net energy delivered to the microgrid (kWh, negative when charging).
        energy_kwh: f64,
    },
    Transit {
        from_t: usize,
        to_t: usize,
        from_node: Option<u32>,
        to_node: Option<u32>,
    },
}

/// Collapses a trace into per-MESS stay/transit legs.
pub fn trip_chains(trace: &[TraceRecord], dt: f64) -> Vec<Vec<TripLeg>> {
    let n = trace.first().map(|r| r.mess.len()).unwrap_or(0);
    let mut out = vec![Vec::new(); n];
    for rec in trace {
        for (w, m) in rec.mess.iter().enumerate() {
            let chain: &mut Vec<TripLeg> = &mut out[w];
            let parked = match (m.location, m.next_location) {
                (Location::AtNode { node: a }, Location::AtNode { node: b }) if a == b => Some(a),
                _ => None,
            };
            match (parked, chain.last_mut()) {
                (Some(node), Some(TripLeg::Stay { node: last, to_t, energy_kwh, .. })) if *last == node.0 && *to_t == rec.t => {
                    *to_t = rec.t + 1;
                    *energy_kwh += m.power_kw * dt;
                }
                (Some(node), _) => chain.push(TripLeg::Stay {
                    node: node.0,
                    microgrid: m.stayed_at,
                    from_t: rec.t,
                    to_t: rec.t + 1,
                    energy_kwh: m.power_kw * dt,
                }),
                (None, Some(TripLeg::Transit { to_t, to_node, .. })) if *to_t == rec.t => {
                    *to_t = rec.t + 1;
                    *to_node = m.next_location.node().map(|n| n.0);
                }
                (None, _) => chain.push(TripLeg::Transit {
                    from_t: rec.t,
                    to_t: rec.t + 1,
                    from_node: m.location.node().map(|n| n.0),
                    to_node: m.next_location.node().map(|n| n.0),
                }),
            }
        }
    }
    out
}

/// A charge at one microgrid followed, after travelling, by a discharge at a
/// different one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferCycle {
    pub mess: u32,
    pub charge_microgrid: u32,
    pub charge_t: usize,
    pub discharge_microgrid: u32,
    pub discharge_t: usize,
}

/// Scans a trace for charge → transit → discharge-elsewhere cycles.
pub fn transfer_cycles(trace: &[TraceRecord]) -> Vec<TransferCycle> {
    let n = trace.first().map(|r| r.mess.len()).unwrap_or(0);
    let mut found = Vec::new();
    for w in 0..n {
        // (microgrid, t) of the latest charge, and whether a transit followed it.
        let mut charged: Option<(u32, usize, bool)> = None;
        for rec in trace {
            let m = &rec.mess[w];
            match m.stayed_at {
                Some(mg) if m.power_kw < 0.0 => charged = Some((mg, rec.t, false)),
                Some(mg) if m.power_kw > 0.0 => {
                    if let Some((src, t0, true)) = charged {
                        if src != mg {
                            found.push(TransferCycle {
                                mess: m.id,
                                charge_microgrid: src,
                                charge_t: t0,
                                discharge_microgrid: mg,
                                discharge_t: rec.t,
                            });
                            charged = None;
                        }
                    }
                }
                Some(_) => {}
                None => {
                    if let Some(c) = charged.as_mut() {
                        if m.location != m.next_location {
                            c.2 = true;
                        }
                    }
                }
            }
        }
    }
    found
}
