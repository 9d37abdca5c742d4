//! Scenario configuration (TOML) and its validated, resolved form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::MessParams;
use crate::grid::{LoadType, MicrogridParams, HOURS};
use crate::td3::Td3Hyper;
use crate::transport::{NetworkError, NodeId, TransportNetwork};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Syntax(String),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn default_horizon() -> usize {
    HOURS
}
fn default_dt() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    1
}
fn default_generation_cost() -> f64 {
    0.5
}
fn default_forecast_std() -> f64 {
    0.05
}
fn default_power_factor() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    /// Network file, relative to the configuration file.
    pub network: PathBuf,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt_hours: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub return_to_depot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    /// $/kWh exchanged by a MESS.
    pub battery_per_kwh: f64,
    /// $/h while a MESS is not parked.
    pub transport_per_hour: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            battery_per_kwh: 0.2,
            transport_per_hour: 80.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardScales {
    /// Multiplies the dollar objective.
    pub objective: f64,
    /// Multiplies the violation magnitude (kWh).
    pub penalty: f64,
}

impl Default for RewardScales {
    fn default() -> Self {
        RewardScales {
            objective: 1e-4,
            penalty: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridConfig {
    pub id: u32,
    pub p_max_kw: f64,
    pub q_max_kvar: f64,
    pub e_max_kwh: f64,
    pub e_min_kwh: f64,
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
    pub load_type: LoadType,
    pub peak_load_kw: f64,
    /// Defaults to the load type's customer interruption cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interruption_cost: Option<f64>,
    #[serde(default = "default_generation_cost")]
    pub generation_cost: f64,
    #[serde(default = "default_forecast_std")]
    pub forecast_error_std: f64,
    /// 24 per-unit values; defaults to the load type's shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<f64>>,
    /// CSV with `hour,pu` rows, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessConfig {
    pub id: u32,
    #[serde(flatten)]
    pub params: MessParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub episodes: usize,
    /// Validate every this many episodes.
    pub eval_interval: usize,
    pub eval_episodes: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            episodes: 10_000,
            eval_interval: 100,
            eval_episodes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Even DG output levels on [0, P_max].
    pub dg_levels: usize,
    pub max_states: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            dg_levels: 5,
            max_states: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub costs: CostSection,
    #[serde(default)]
    pub reward: RewardScales,
    #[serde(rename = "microgrid")]
    pub microgrids: Vec<MicrogridConfig>,
    #[serde(rename = "mess", default)]
    pub fleet: Vec<MessConfig>,
    #[serde(default)]
    pub td3: Td3Hyper,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone)]
pub struct Microgrid {
    pub id: u32,
    pub node: NodeId,
    pub params: MicrogridParams,
}

#[derive(Debug, Clone)]
pub struct Mess {
    pub id: u32,
    pub home: NodeId,
    pub params: MessParams,
}

/// A validated scenario with every cross-reference resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub network: TransportNetwork,
    /// Ordered by id.
    pub microgrids: Vec<Microgrid>,
    /// `(depot id, node)`, ordered by id.
    pub depots: Vec<(u32, NodeId)>,
    pub fleet: Vec<Mess>,
    pub horizon: usize,
    pub dt: f64,
    pub costs: CostSection,
    pub reward: RewardScales,
    pub return_to_depot: bool,
    pub seed: u64,
}

fn read_profile_csv(path: &Path) -> Result<Vec<f64>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut values = vec![None; HOURS];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("hour") {
            continue;
        }
        let bad = || ConfigError::Invalid(format!("{}:{}: expected `hour,pu`", path.display(), i + 1));
        let (h, v) = line.split_once(',').ok_or_else(bad)?;
        let h: usize = h.trim().parse().map_err(|_| bad())?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        if h >= HOURS {
            return Err(bad());
        }
        values[h] = Some(v);
    }
    values
        .into_iter()
        .enumerate()
        .map(|(h, v)| {
            v.ok_or_else(|| ConfigError::Invalid(format!("{}: hour {h} missing", path.display())))
        })
        .collect()
}

impl Scenario {
    pub fn load(path: &Path) -> Result<(ScenarioConfig, Scenario), ConfigError> {
        let cfg = ScenarioConfig::load(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let scenario = Scenario::from_config(&cfg, base)?;
        Ok((cfg, scenario))
    }

    pub fn from_config(cfg: &ScenarioConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        let network = TransportNetwork::load(&base_dir.join(&cfg.scenario.network))?;
        Self::with_network(cfg, network, base_dir)
    }

    pub fn with_network(
        cfg: &ScenarioConfig,
        network: TransportNetwork,
        base_dir: &Path,
    ) -> Result<Self, ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let s = &cfg.scenario;
        if s.horizon == 0 || s.horizon > HOURS {
            return invalid(format!("horizon {} outside 1..={HOURS}", s.horizon));
        }
        if !(s.dt_hours > 0.0) {
            return invalid("dt_hours must be positive".into());
        }
        if !(cfg.costs.battery_per_kwh >= 0.0 && cfg.costs.transport_per_hour >= 0.0) {
            return invalid("costs must be non-negative".into());
        }
        if !(cfg.reward.objective >= 0.0 && cfg.reward.penalty >= 0.0) {
            return invalid("reward scales must be non-negative".into());
        }
        if network.depots().is_empty() {
            return invalid("network declares no depot".into());
        }
        cfg.td3.validate().map_err(ConfigError::Invalid)?;

        let mut microgrids = Vec::with_capacity(cfg.microgrids.len());
        for mc in &cfg.microgrids {
            let node = network.microgrid_node(mc.id).ok_or_else(|| {
                ConfigError::Invalid(format!("microgrid {} is not placed in the network", mc.id))
            })?;
            if microgrids.iter().any(|m: &Microgrid| m.id == mc.id) {
                return invalid(format!("microgrid {} configured twice", mc.id));
            }
            let profile = match (&mc.profile, &mc.profile_csv) {
                (Some(_), Some(_)) => {
                    return invalid(format!("microgrid {}: give profile or profile_csv, not both", mc.id))
                }
                (Some(p), None) => p.clone(),
                (None, Some(csv)) => read_profile_csv(&base_dir.join(csv))?,
                (None, None) => mc.load_type.default_profile().to_vec(),
            };
            let params = MicrogridParams {
                p_max_kw: mc.p_max_kw,
                q_max_kvar: mc.q_max_kvar,
                e_max_kwh: mc.e_max_kwh,
                e_min_kwh: mc.e_min_kwh,
                power_factor: mc.power_factor,
                interruption_cost: mc
                    .interruption_cost
                    .unwrap_or_else(|| mc.load_type.interruption_cost()),
                generation_cost: mc.generation_cost,
                load_type: mc.load_type,
                peak_load_kw: mc.peak_load_kw,
                profile,
                forecast_error_std: mc.forecast_error_std,
            };
            params
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("microgrid {}: {e}", mc.id)))?;
            microgrids.push(Microgrid {
                id: mc.id,
                node,
                params,
            });
        }
        for &id in network.microgrids().keys() {
            if !microgrids.iter().any(|m| m.id == id) {
                return invalid(format!("network microgrid {id} has no parameter block"));
            }
        }
        if microgrids.is_empty() {
            return invalid("at least one microgrid is required".into());
        }
        microgrids.sort_by_key(|m| m.id);

        let mut fleet = Vec::with_capacity(cfg.fleet.len());
        for mc in &cfg.fleet {
            mc.params
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("mess {}: {e}", mc.id)))?;
            let home = network.depot_node(mc.params.home_depot).ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "mess {}: unknown home depot {}",
                    mc.id, mc.params.home_depot
                ))
            })?;
            if fleet.iter().any(|m: &Mess| m.id == mc.id) {
                return invalid(format!("mess {} configured twice", mc.id));
            }
            fleet.push(Mess {
                id: mc.id,
                home,
                params: mc.params.clone(),
            });
        }
        fleet.sort_by_key(|m| m.id);

        let depots = network.depots().iter().map(|(&id, &n)| (id, n)).collect();
        Ok(Scenario {
            name: s.name.clone(),
            network,
            microgrids,
            depots,
            fleet,
            horizon: s.horizon,
            dt: s.dt_hours,
            costs: cfg.costs.clone(),
            reward: cfg.reward,
            return_to_depot: s.return_to_depot,
            seed: s.seed,
        })
    }

    /// Destination categories: microgrids by id, then depots by id.
    pub fn destinations(&self) -> Vec<NodeId> {
        self.microgrids
            .iter()
            .map(|m| m.node)
            .chain(self.depots.iter().map(|&(_, n)| n))
            .collect()
    }

    pub fn destination_count(&self) -> usize {
        self.microgrids.len() + self.depots.len()
    }

    pub fn microgrid_index_at(&self, node: NodeId) -> Option<usize> {
        self.microgrids.iter().position(|m| m.node == node)
    }

    pub fn is_depot(&self, node: NodeId) -> bool {
        self.depots.iter().any(|&(_, n)| n == node)
    }

    /// Same scenario with every MESS removed.
    pub fn without_fleet(&self) -> Scenario {
        Scenario {
            fleet: Vec::new(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::NetworkBuilder;

    fn net() -> TransportNetwork {
        NetworkBuilder::new()
            .node(1)
            .node(2)
            .node(3)
            .edge(1, 2, 10.0)
            .edge(2, 3, 10.0)
            .microgrid(1, 2)
            .microgrid(2, 3)
            .depot(1, 1)
            .build()
            .unwrap()
    }

    const TEXT: &str = r#"
[scenario]
name = "unit"
network = "net.txt"
horizon = 4

[[microgrid]]
id = 2
p_max_kw = 500
q_max_kvar = 400
e_max_kwh = 5000
e_min_kwh = 500
load_type = "residential"
peak_load_kw = 1000

[[microgrid]]
id = 1
p_max_kw = 1000
q_max_kvar = 800
e_max_kwh = 20000
e_min_kwh = 2000
load_type = "commercial"
peak_load_kw = 3000
forecast_error_std = 0.0

[[mess]]
id = 1
home_depot = 1
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ScenarioConfig::parse(TEXT).unwrap();
        let s = Scenario::with_network(&cfg, net(), Path::new(".")).unwrap();
        assert_eq!(s.microgrids.iter().map(|m| m.id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(s.microgrids[0].params.interruption_cost, 10.0);
        assert_eq!(s.microgrids[1].params.interruption_cost, 2.0);
        assert_eq!(s.microgrids[1].params.forecast_error_std, 0.05);
        assert_eq!(s.fleet[0].params.capacity_kwh, 1000.0);
        assert_eq!(s.fleet[0].home, NodeId(1));
        assert_eq!(s.destinations(), vec![NodeId(2), NodeId(3), NodeId(1)]);
        assert_eq!(s.horizon, 4);
        assert_eq!(s.costs.transport_per_hour, 80.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ScenarioConfig::parse(TEXT).unwrap();
        let again = ScenarioConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_microgrid_rejected() {
        let text = TEXT.replace("id = 2\np_max", "id = 9\np_max");
        let cfg = ScenarioConfig::parse(&text).unwrap();
        let err = Scenario::with_network(&cfg, net(), Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("microgrid 9"), "{err}");
    }

    #[test]
    fn bad_home_depot_rejected() {
        let text = TEXT.replace("home_depot = 1", "home_depot = 4");
        let cfg = ScenarioConfig::parse(&text).unwrap();
        assert!(Scenario::with_network(&cfg, net(), Path::new(".")).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = TEXT.replace("horizon = 4", "horizon = 4\nhorizn = 5");
        assert!(matches!(ScenarioConfig::parse(&text), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn profile_csv_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = String::from("hour,pu\n");
        for h in 0..24 {
            csv.push_str(&format!("{h},{}\n", h as f64 / 24.0));
        }
        std::fs::write(dir.path().join("p.csv"), csv).unwrap();
        let text = TEXT.replace("load_type = \"residential\"", "load_type = \"residential\"\nprofile_csv = \"p.csv\"");
        let cfg = ScenarioConfig::parse(&text).unwrap();
        let s = Scenario::with_network(&cfg, net(), dir.path()).unwrap();
        assert_eq!(s.microgrids[1].params.profile[12], 0.5);
    }
}
