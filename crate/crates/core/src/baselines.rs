//! Reference policies and an exact solver for small scenarios.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::env::{action_dim, decode_action, Action, EnvError, EnvState, Environment};
use crate::fleet::{feasible_power_range, SOC_EPS};
use crate::grid::dg_feasible_range;
use crate::rollout::{run_episode, Decision, Policy};
use crate::scenario::{OracleConfig, Scenario, ScenarioConfig};
use crate::transport::{Location, TransportNetwork};

/// Uniform raw actions from a seeded stream.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn decide(&mut self, env: &Environment) -> Result<Decision, EnvError> {
        let raw: Vec<f64> = (0..action_dim(env.scenario()))
            .map(|_| self.rng.random_range(-1.0..=1.0))
            .collect();
        let action = decode_action(env.scenario(), &raw)?;
        Ok(Decision {
            raw: Some(raw),
            action,
        })
    }
}

/// Return of one uniformly random episode.
pub fn random_policy(env: &mut Environment, seed: u64) -> Result<f64, EnvError> {
    let mut p = RandomPolicy::new(seed ^ 0x5eed_0000_0000_0000);
    Ok(run_episode(env, &mut p, seed)?.summary.episode_return)
}

/// Category that keeps each MESS where it is, or its current destination
/// when it is not at a destination node.
fn hold_categories(s: &Scenario, state: &EnvState) -> Vec<usize> {
    let dests = s.destinations();
    state
        .fleet
        .iter()
        .map(|m| {
            let here = m.location.node().and_then(|n| dests.iter().position(|&d| d == n));
            here.or_else(|| dests.iter().position(|&d| d == m.destination))
                .unwrap_or(0)
        })
        .collect()
}

/// Does nothing: no movement, no exchange, no generation.
pub struct IdlePolicy;

impl Policy for IdlePolicy {
    fn decide(&mut self, env: &Environment) -> Result<Decision, EnvError> {
        let s = env.scenario();
        Ok(Decision {
            raw: None,
            action: Action {
                destinations: hold_categories(s, env.state()),
                mess_kw: vec![0.0; s.fleet.len()],
                dg_kw: vec![0.0; s.microgrids.len()],
            },
        })
    }
}

/// Myopic heuristic. DG covers local demand up to its feasible maximum;
/// each MESS heads for the microgrid with the largest value of unmet load
/// and discharges there, and refills at the cheapest microgrid when that is
/// worth the round-trip losses.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyPolicy {
    /// Keep every MESS idle and dispatch DG only.
    pub fleet_idle: bool,
}

pub fn greedy_policy(s: &Scenario, state: &EnvState) -> Action {
    greedy_action(s, state, false)
}

fn greedy_action(s: &Scenario, state: &EnvState, fleet_idle: bool) -> Action {
    let dt = s.dt;
    let n_mg = s.microgrids.len();
    let dests = s.destinations();
    let dg_max: Vec<f64> = s
        .microgrids
        .iter()
        .zip(&state.grid)
        .map(|(m, st)| dg_feasible_range(&m.params, st, dt).1)
        .collect();
    let load: Vec<f64> = state.grid.iter().map(|g| g.load_kw).collect();
    let weight: Vec<f64> = s.microgrids.iter().map(|m| m.params.interruption_cost).collect();
    let mut unmet: Vec<f64> = (0..n_mg).map(|i| (load[i] - dg_max[i]).max(0.0)).collect();
    let mut discharge = vec![0.0; n_mg];
    let mut charge = vec![0.0; n_mg];

    let mut destinations = hold_categories(s, state);
    let mut mess_kw = vec![0.0; s.fleet.len()];
    if !fleet_idle {
        // Cheapest microgrid, first on ties.
        let cheap = (0..n_mg).fold(0, |b, i| if weight[i] < weight[b] { i } else { b });
        for (w, (m, st)) in s.fleet.iter().zip(&state.fleet).enumerate() {
            let p = &m.params;
            let here = st.location.node().and_then(|n| s.microgrid_index_at(n));
            let target = (0..n_mg)
                .filter(|&i| unmet[i] > 0.0)
                .fold(None, |b: Option<usize>, i| match b {
                    Some(j) if weight[j] * unmet[j] >= weight[i] * unmet[i] => Some(j),
                    _ => Some(i),
                });
            let Some(target) = target else {
                continue;
            };
            let (lo, hi) = feasible_power_range(p, st.soc, true, dt);
            let empty = st.soc <= p.soc_min + SOC_EPS;
            let full = st.soc >= p.soc_max - SOC_EPS;
            let worth_refill = cheap != target
                && weight[cheap] < p.charge_efficiency * p.discharge_efficiency * weight[target];
            let refilling = worth_refill && !full && (empty || here == Some(cheap));
            if refilling {
                destinations[w] = cheap;
                if here == Some(cheap) {
                    let room = (dg_max[cheap] - charge[cheap]).max(0.0);
                    let kw = (-lo).min(room);
                    mess_kw[w] = -kw;
                    charge[cheap] += kw;
                }
            } else if !empty {
                destinations[w] = target;
                if here == Some(target) {
                    let kw = hi.min(unmet[target]);
                    mess_kw[w] = kw;
                    discharge[target] += kw;
                    unmet[target] -= kw;
                } else {
                    unmet[target] = (unmet[target] - p.max_discharge_kw).max(0.0);
                }
            }
        }
    }
    let dg_kw = (0..n_mg)
        .map(|i| (load[i] - discharge[i] + charge[i]).clamp(0.0, dg_max[i]))
        .collect();
    debug_assert!(destinations.iter().all(|&c| c < dests.len()));
    Action {
        destinations,
        mess_kw,
        dg_kw,
    }
}

impl Policy for GreedyPolicy {
    fn decide(&mut self, env: &Environment) -> Result<Decision, EnvError> {
        Ok(Decision {
            raw: None,
            action: greedy_action(env.scenario(), env.state(), self.fleet_idle),
        })
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("scenario too large for exact solution: {0}")]
    Bounds(String),
    #[error("state space exceeds {0} states")]
    Overflow(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{0}")]
    Config(String),
}

/// A scenario small enough to solve exactly.
#[derive(Debug, Clone)]
pub struct TinyScenario {
    pub scenario: Arc<Scenario>,
    /// Number of DG output levels, evenly spaced over the feasible range.
    pub dg_levels: usize,
    pub max_states: usize,
    /// Steps to plan over; at most the scenario horizon.
    pub horizon: usize,
    /// Episode seed (loads carry no noise, so this only fixes the rng).
    pub seed: u64,
}

pub const TINY_NETWORK: &str = "\
# depot next to microgrid 1; microgrid 2 is a long drive from both
node 0
node 1
node 2
edge 0 1 20
edge 0 2 100
edge 1 2 100
depot 1 0
microgrid 1 1
microgrid 2 2
";

pub const TINY_CONFIG: &str = r#"
[scenario]
name = "tiny"
network = "tiny.net"
horizon = 6

[[microgrid]]
id = 1
p_max_kw = 200
q_max_kvar = 1000
e_max_kwh = 20000
e_min_kwh = 2000
power_factor = 1.0
load_type = "commercial"
peak_load_kw = 600
interruption_cost = 10
forecast_error_std = 0.0
profile = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]

[[microgrid]]
id = 2
p_max_kw = 800
q_max_kvar = 1000
e_max_kwh = 20000
e_min_kwh = 2000
power_factor = 1.0
load_type = "residential"
peak_load_kw = 400
interruption_cost = 2
forecast_error_std = 0.0
profile = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]

[[mess]]
id = 1
home_depot = 1
"#;

impl TinyScenario {
    pub fn new(scenario: Arc<Scenario>, oracle: &OracleConfig) -> Result<Self, OracleError> {
        let bad = |m: String| Err(OracleError::Bounds(m));
        if scenario.network.node_count() > 3 {
            return bad(format!("{} nodes (max 3)", scenario.network.node_count()));
        }
        if !(1..=2).contains(&scenario.microgrids.len()) {
            return bad("need 1 or 2 microgrids".into());
        }
        if scenario.fleet.len() > 1 {
            return bad("at most one MESS".into());
        }
        if scenario.horizon > 6 {
            return bad(format!("horizon {} (max 6)", scenario.horizon));
        }
        if !(1..=5).contains(&oracle.dg_levels) {
            return bad("dg_levels must be 1..=5".into());
        }
        if scenario.microgrids.iter().any(|m| m.params.forecast_error_std != 0.0) {
            return bad("loads must be noise-free".into());
        }
        Ok(TinyScenario {
            horizon: scenario.horizon,
            seed: scenario.seed,
            dg_levels: oracle.dg_levels,
            max_states: oracle.max_states,
            scenario,
        })
    }

    /// The built-in two-microgrid instance.
    pub fn default_tiny() -> Self {
        let cfg = ScenarioConfig::parse(TINY_CONFIG).expect("built-in config parses");
        let net = TransportNetwork::parse(TINY_NETWORK).expect("built-in network parses");
        let s = Scenario::with_network(&cfg, net, Path::new(".")).expect("built-in scenario is valid");
        TinyScenario::new(Arc::new(s), &cfg.oracle).expect("built-in scenario is tiny")
    }

    /// Candidate actions at a state: every destination, MESS power at the
    /// feasible minimum, zero or feasible maximum, and `dg_levels` even DG
    /// levels over `[0, feasible max]`.
    pub fn actions(&self, state: &EnvState) -> Vec<Action> {
        let s = &self.scenario;
        let k = s.destination_count();
        let dg_options: Vec<Vec<f64>> = s
            .microgrids
            .iter()
            .zip(&state.grid)
            .map(|(m, st)| {
                let hi = dg_feasible_range(&m.params, st, s.dt).1;
                if self.dg_levels == 1 {
                    vec![hi]
                } else {
                    (0..self.dg_levels)
                        .map(|l| hi * l as f64 / (self.dg_levels - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut per_mess: Vec<Vec<(usize, f64)>> = Vec::new();
        for (m, st) in s.fleet.iter().zip(&state.fleet) {
            let mut opts = Vec::new();
            for c in 0..k {
                let next = s
                    .network
                    .advance(&st.location, s.destinations()[c], m.params.speed_kmh, s.dt)
                    .expect("validated state");
                let stays = s
                    .microgrids
                    .iter()
                    .any(|mg| s.network.at_microgrid(&st.location, &next, mg.id));
                let (lo, hi) = feasible_power_range(&m.params, st.soc, stays, s.dt);
                let mut levels = vec![0.0];
                if lo < 0.0 {
                    levels.push(lo);
                }
                if hi > 0.0 {
                    levels.push(hi);
                }
                opts.extend(levels.into_iter().map(|p| (c, p)));
            }
            per_mess.push(opts);
        }
        let mut out = Vec::new();
        let mut fleet_choice = vec![0usize; per_mess.len()];
        loop {
            let mut dg_choice = vec![0usize; dg_options.len()];
            loop {
                out.push(Action {
                    destinations: fleet_choice.iter().zip(&per_mess).map(|(&i, o)| o[i].0).collect(),
                    mess_kw: fleet_choice.iter().zip(&per_mess).map(|(&i, o)| o[i].1).collect(),
                    dg_kw: dg_choice.iter().zip(&dg_options).map(|(&i, o)| o[i]).collect(),
                });
                if !odometer(&mut dg_choice, &dg_options.iter().map(Vec::len).collect::<Vec<_>>()) {
                    break;
                }
            }
            if !odometer(&mut fleet_choice, &per_mess.iter().map(Vec::len).collect::<Vec<_>>()) {
                break;
            }
        }
        out
    }
}

/// Advances a mixed-radix counter; false once it wraps.
fn odometer(digits: &mut [usize], radix: &[usize]) -> bool {
    for (d, &r) in digits.iter_mut().zip(radix) {
        *d += 1;
        if *d < r {
            return true;
        }
        *d = 0;
    }
    false
}

fn quantize(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

/// Lattice coordinates of a state. Loads are omitted: without noise they
/// are a function of `t`.
pub fn state_key(state: &EnvState) -> Vec<i64> {
    let mut k = vec![state.t as i64];
    for m in &state.fleet {
        match m.location {
            Location::AtNode { node } => k.extend([0, node.0 as i64]),
            Location::OnEdge {
                from, from_km, to, ..
            } => k.extend([1, from.0 as i64, to.0 as i64, quantize(from_km)]),
        }
        k.push(quantize(m.soc));
    }
    k.extend(state.grid.iter().map(|g| quantize(g.fuel_kwh)));
    k
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Edge {
    reward: f64,
    next: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub states: Vec<EnvState>,
    pub values: Vec<f64>,
    /// Index into `TinyScenario::actions(state)` of the optimal action.
    pub policy: Vec<Option<usize>>,
    pub sweeps: usize,
    pub residual: f64,
    index: HashMap<Vec<i64>, usize>,
    tiny: TinyScenario,
}

impl OracleSolution {
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    /// Optimal return from the initial state.
    pub fn optimal_value(&self) -> f64 {
        self.values[0]
    }

    pub fn value_of(&self, state: &EnvState) -> Option<f64> {
        self.index.get(&state_key(state)).map(|&i| self.values[i])
    }

    pub fn action_for(&self, state: &EnvState) -> Option<Action> {
        let &i = self.index.get(&state_key(state))?;
        let a = self.policy[i]?;
        Some(self.tiny.actions(&self.states[i]).swap_remove(a))
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Entry<'a> {
            key: &'a [i64],
            t: usize,
            value: f64,
        }
        let mut keys: Vec<(&Vec<i64>, &usize)> = self.index.iter().collect();
        keys.sort();
        let entries: Vec<Entry> = keys
            .into_iter()
            .map(|(k, &i)| Entry {
                key: k,
                t: self.states[i].t,
                value: self.values[i],
            })
            .collect();
        serde_json::json!({
            "scenario": self.tiny.scenario.name,
            "horizon": self.tiny.horizon,
            "state_count": self.states.len(),
            "optimal_value": self.optimal_value(),
            "sweeps": self.sweeps,
            "residual": self.residual,
            "states": entries,
        })
    }
}

/// Follows the optimal lattice policy.
pub struct OraclePolicy<'a>(pub &'a OracleSolution);

impl Policy for OraclePolicy<'_> {
    fn decide(&mut self, env: &Environment) -> Result<Decision, EnvError> {
        let action = self
            .0
            .action_for(env.state())
            .ok_or_else(|| EnvError::State("state not in oracle lattice".into()))?;
        Ok(Decision { raw: None, action })
    }
}

/// Enumerates every lattice state reachable from the initial state using
/// the environment's own transition function, then runs Bellman sweeps until
/// the sup-norm change falls below 1e-9.
pub fn value_iteration(tiny: &TinyScenario) -> Result<OracleSolution, OracleError> {
    let mut env = Environment::new(Arc::clone(&tiny.scenario), tiny.seed);
    let root = env.state().clone();
    let mut states = vec![root.clone()];
    let mut index = HashMap::from([(state_key(&root), 0usize)]);
    let mut edges: Vec<Vec<Edge>> = Vec::new();
    let mut cursor = 0;
    while cursor < states.len() {
        let state = states[cursor].clone();
        let mut out = Vec::new();
        if state.t < tiny.horizon {
            for action in tiny.actions(&state) {
                env.set_state(state.clone())?;
                let step = env.step(&action)?;
                let next = if step.done || env.t() >= tiny.horizon {
                    None
                } else {
                    let key = state_key(env.state());
                    let id = match index.get(&key) {
                        Some(&id) => id,
                        None => {
                            if states.len() >= tiny.max_states {
                                return Err(OracleError::Overflow(tiny.max_states));
                            }
                            states.push(env.state().clone());
                            index.insert(key, states.len() - 1);
                            states.len() - 1
                        }
                    };
                    Some(id)
                };
                out.push(Edge {
                    reward: step.reward,
                    next,
                });
            }
        }
        edges.push(out);
        cursor += 1;
    }

    let mut values = vec![0.0; states.len()];
    let mut policy = vec![None; states.len()];
    let mut sweeps = 0;
    let residual = loop {
        sweeps += 1;
        let mut delta: f64 = 0.0;
        let mut fresh = vec![0.0; states.len()];
        for (i, es) in edges.iter().enumerate() {
            let mut best = (None, 0.0);
            for (a, e) in es.iter().enumerate() {
                let q = e.reward + e.next.map_or(0.0, |n| values[n]);
                if best.0.is_none() || q > best.1 {
                    best = (Some(a), q);
                }
            }
            fresh[i] = best.1;
            policy[i] = best.0;
            delta = delta.max((fresh[i] - values[i]).abs());
        }
        values = fresh;
        if delta < 1e-9 {
            break delta;
        }
    };
    Ok(OracleSolution {
        states,
        values,
        policy,
        sweeps,
        residual,
        index,
        tiny: tiny.clone(),
    })
}
