//! Subcommand implementations behind the `messrl` binary.
//!
//! Every command is a plain function returning a serializable report, so the
//! binary only parses flags, prints and maps errors to exit codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use messrl_core::baselines::{
    value_iteration, GreedyPolicy, IdlePolicy, OracleError, OraclePolicy, RandomPolicy, TinyScenario,
};
use messrl_core::env::{action_dim, observation_dim, EnvError, Environment, TraceRecord};
use messrl_core::rollout::{
    run_episode, transfer_cycles, trip_chains, ActorPolicy, EpisodeSummary, Policy, TransferCycle, TripLeg,
};
use messrl_core::scenario::{ConfigError, Scenario, ScenarioConfig};
use messrl_core::td3::{evaluate_episode, train_episode, Agent, ReplayBuffer, Td3Error};

/// Validation episodes use seeds `VALIDATION_SEED_BASE + k`, disjoint from
/// training seeds for any realistic budget.
pub const VALIDATION_SEED_BASE: u64 = 500_000;
/// Default first seed for `evaluate`, `simulate` and the baseline tables.
pub const EVALUATION_SEED_BASE: u64 = 1_000_000;

pub const METRICS_HEADER: [&str; 7] = [
    "episode",
    "return",
    "critic1_loss",
    "critic2_loss",
    "actor_loss",
    "validation_mean",
    "validation_std",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("metrics log: {0}")]
    Csv(#[from] csv::Error),
    #[error("training diverged: {message} (diagnostics in {dump})")]
    Divergence { message: String, dump: PathBuf },
    #[error(transparent)]
    Td3(#[from] Td3Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl CliError {
    /// 1 for configuration and input problems, 2 for numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Divergence { .. } => 2,
            CliError::Td3(Td3Error::Divergence(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Loads a configuration file and resolves its scenario.
pub fn load_config(path: &Path) -> Result<(ScenarioConfig, Arc<Scenario>), CliError> {
    let (cfg, scenario) = Scenario::load(path)?;
    Ok((cfg, Arc::new(scenario)))
}

/// Environment seed for training episode `episode` of a run seeded `seed`.
pub fn training_seed(seed: u64, episode: usize) -> u64 {
    (seed << 32) | episode as u64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Overrides `[training] episodes`.
    pub episodes: Option<usize>,
    /// Overrides the agent seed and the training seed stream.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub critic1_loss: Option<f64>,
    pub critic2_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub validation_mean: Option<f64>,
    pub validation_std: Option<f64>,
}

/// Written next to `last.json` so an interrupted run can pick up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub episodes_done: usize,
    pub seed: u64,
    pub best_validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub episodes: usize,
    pub resumed_from: Option<usize>,
    pub best_validation: Option<f64>,
    pub final_validation: Option<f64>,
    pub out: PathBuf,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut rd = csv::Reader::from_path(path)?;
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn validate(env: &mut Environment, agent: &Agent, n: usize) -> Result<(f64, f64), Td3Error> {
    let returns = (0..n as u64)
        .map(|k| evaluate_episode(env, agent, VALIDATION_SEED_BASE + k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_std(&returns))
}

#[derive(Serialize)]
struct DivergenceDump<'a> {
    episode: usize,
    error: String,
    recent: &'a [MetricsRow],
}

/// Trains TD3 on the configured scenario.
///
/// Layout of `out`: `metrics.csv`, `best.json`, `last.json`, `final.json`
/// and `progress.json`. When `last.json` and `progress.json` exist the run
/// resumes from them; metrics rows past the checkpoint are dropped. The
/// replay buffer is not checkpointed and refills after a resume.
pub fn cmd_train(opts: &TrainOptions) -> Result<TrainReport, CliError> {
    let (cfg, scenario) = load_config(&opts.config)?;
    let mut hyper = cfg.td3.clone();
    let seed = opts.seed.unwrap_or(cfg.scenario.seed);
    hyper.agent_seed = seed;
    hyper.validate().map_err(|m| ConfigError::Invalid(format!("[td3] {m}")))?;
    let budget = opts.episodes.unwrap_or(cfg.training.episodes);
    let interval = cfg.training.eval_interval.max(1);
    let n_val = cfg.training.eval_episodes;

    fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))?;
    let metrics_path = opts.out.join("metrics.csv");
    let progress_path = opts.out.join("progress.json");
    let last_path = opts.out.join("last.json");
    let (od, ad) = (observation_dim(&scenario), action_dim(&scenario));

    let (mut agent, mut rows, mut best, resumed_from) = if last_path.exists() && progress_path.exists() {
        let text = fs::read_to_string(&progress_path).map_err(io_err(&progress_path))?;
        let progress: Progress = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", progress_path.display())))?;
        if progress.seed != seed {
            return Err(CliError::Usage(format!(
                "{} was started with seed {}, not {seed}",
                opts.out.display(),
                progress.seed
            )));
        }
        let mut agent = Agent::load_matching(&last_path, od, ad, &hyper.hidden)?;
        // Schedule knobs may change between sessions; the networks may not.
        agent.hyper = hyper.clone();
        let mut rows = if metrics_path.exists() { read_metrics(&metrics_path)? } else { Vec::new() };
        rows.retain(|r| r.episode <= agent.episodes_done);
        let done = agent.episodes_done;
        (agent, rows, progress.best_validation, Some(done))
    } else {
        (Agent::new(od, ad, hyper.clone()), Vec::new(), None, None)
    };
    write_metrics(&metrics_path, &rows)?;

    let mut env = Environment::new(Arc::clone(&scenario), seed);
    let mut buffer = ReplayBuffer::new(hyper.buffer_capacity);
    let mut log = csv::WriterBuilder::new().has_headers(false).from_writer(
        fs::OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(io_err(&metrics_path))?,
    );

    let mut final_validation = None;
    while agent.episodes_done < budget {
        let episode = agent.episodes_done;
        let step = train_episode(&mut env, &mut agent, &mut buffer, training_seed(seed, episode)).and_then(|r| {
            let n = agent.episodes_done;
            let due = n % interval == 0 || n == budget;
            let val = if due { Some(validate(&mut env, &agent, n_val)?) } else { None };
            Ok((r, val))
        });
        let (report, val) = match step {
            Ok(v) => v,
            Err(Td3Error::Divergence(message)) => {
                let dump = opts.out.join("divergence.json");
                let recent = &rows[rows.len().saturating_sub(20)..];
                let diag = DivergenceDump {
                    episode,
                    error: message.clone(),
                    recent,
                };
                write_json(&dump, &diag)?;
                return Err(CliError::Divergence { message, dump });
            }
            Err(e) => return Err(e.into()),
        };
        let row = MetricsRow {
            episode: agent.episodes_done,
            episode_return: report.episode_return,
            critic1_loss: report.critic1_loss,
            critic2_loss: report.critic2_loss,
            actor_loss: report.actor_loss,
            validation_mean: val.map(|v| v.0),
            validation_std: val.map(|v| v.1),
        };
        log.serialize(&row)?;
        rows.push(row);
        if let Some((m, _)) = val {
            log.flush().map_err(io_err(&metrics_path))?;
            final_validation = Some(m);
            if best.is_none_or(|b| m > b) {
                best = Some(m);
                agent.save(&opts.out.join("best.json"))?;
            }
            agent.save(&last_path)?;
            write_json(
                &progress_path,
                &Progress {
                    episodes_done: agent.episodes_done,
                    seed,
                    best_validation: best,
                },
            )?;
        }
    }
    log.flush().map_err(io_err(&metrics_path))?;
    agent.save(&opts.out.join("final.json"))?;
    agent.save(&last_path)?;
    write_json(
        &progress_path,
        &Progress {
            episodes_done: agent.episodes_done,
            seed,
            best_validation: best,
        },
    )?;
    Ok(TrainReport {
        episodes: agent.episodes_done,
        resumed_from,
        best_validation: best,
        final_validation,
        out: opts.out.clone(),
    })
}

// ---------------------------------------------------------------- policies

/// Where actions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    Checkpoint(PathBuf),
    Random,
    Greedy,
    Idle,
    /// Greedy DG dispatch with every MESS held idle.
    NoMess,
}

impl PolicySource {
    /// A baseline name, or otherwise a checkpoint path.
    pub fn parse(s: &str) -> Self {
        match s {
            "random" => PolicySource::Random,
            "greedy" => PolicySource::Greedy,
            "idle" => PolicySource::Idle,
            "no-mess" | "nomess" => PolicySource::NoMess,
            path => PolicySource::Checkpoint(PathBuf::from(path)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PolicySource::Checkpoint(p) => p.display().to_string(),
            PolicySource::Random => "random".into(),
            PolicySource::Greedy => "greedy".into(),
            PolicySource::Idle => "idle".into(),
            PolicySource::NoMess => "no-mess".into(),
        }
    }
}

/// A policy source resolved against a scenario; checkpoints are loaded once.
pub enum LoadedPolicy {
    Actor(Box<Agent>),
    Random,
    Greedy { fleet_idle: bool },
    Idle,
}

impl LoadedPolicy {
    pub fn load(source: &PolicySource, cfg: &ScenarioConfig, scenario: &Scenario) -> Result<Self, CliError> {
        Ok(match source {
            PolicySource::Checkpoint(path) => LoadedPolicy::Actor(Box::new(Agent::load_matching(
                path,
                observation_dim(scenario),
                action_dim(scenario),
                &cfg.td3.hidden,
            )?)),
            PolicySource::Random => LoadedPolicy::Random,
            PolicySource::Greedy => LoadedPolicy::Greedy { fleet_idle: false },
            PolicySource::NoMess => LoadedPolicy::Greedy { fleet_idle: true },
            PolicySource::Idle => LoadedPolicy::Idle,
        })
    }

    /// One episode on `seed`. Random actions draw from a stream derived from
    /// the seed, so every source is deterministic given the seed.
    pub fn run(&self, env: &mut Environment, seed: u64) -> Result<messrl_core::rollout::Episode, EnvError> {
        let mut random;
        let mut greedy;
        let mut actor;
        let policy: &mut dyn Policy = match self {
            LoadedPolicy::Actor(agent) => {
                actor = ActorPolicy(agent);
                &mut actor
            }
            LoadedPolicy::Random => {
                random = RandomPolicy::new(seed ^ 0x5eed_0000_0000_0000);
                &mut random
            }
            LoadedPolicy::Greedy { fleet_idle } => {
                greedy = GreedyPolicy {
                    fleet_idle: *fleet_idle,
                };
                &mut greedy
            }
            LoadedPolicy::Idle => return run_episode(env, &mut IdlePolicy, seed),
        };
        run_episode(env, policy, seed)
    }
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub generation: f64,
    pub battery: f64,
    pub transport: f64,
    pub interruption: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy: String,
    pub episodes: usize,
    pub first_seed: u64,
    pub mean_return: f64,
    pub std_return: f64,
    /// Mean per-episode costs ($).
    pub costs: CostBreakdown,
    pub mean_restoration_value: f64,
    pub mean_penalty: f64,
    /// Per microgrid id: restored energy over total load energy, pooled
    /// across all episodes.
    pub restoration_fraction: Vec<(u32, f64)>,
    pub returns: Vec<f64>,
}

/// Runs `episodes` noise-free episodes on seeds `seed..seed + episodes`.
pub fn cmd_evaluate(config: &Path, source: &PolicySource, episodes: usize, seed: u64) -> Result<EvaluationReport, CliError> {
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    let (cfg, scenario) = load_config(config)?;
    let policy = LoadedPolicy::load(source, &cfg, &scenario)?;
    let mut env = Environment::new(Arc::clone(&scenario), seed);
    let summaries = (0..episodes as u64)
        .map(|k| policy.run(&mut env, seed + k).map(|e| e.summary))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(&scenario, source.label(), seed, &summaries))
}

pub fn summarize(scenario: &Scenario, policy: String, first_seed: u64, summaries: &[EpisodeSummary]) -> EvaluationReport {
    let n = summaries.len() as f64;
    let returns: Vec<f64> = summaries.iter().map(|s| s.episode_return).collect();
    let (mean_return, std_return) = mean_std(&returns);
    let avg = |f: fn(&EpisodeSummary) -> f64| summaries.iter().map(f).sum::<f64>() / n;
    let mut costs = CostBreakdown {
        generation: avg(|s| s.gen_cost),
        battery: avg(|s| s.battery_cost),
        transport: avg(|s| s.transport_cost),
        interruption: avg(|s| s.interruption_cost),
        total: 0.0,
    };
    costs.total = costs.generation + costs.battery + costs.transport + costs.interruption;
    let restoration_fraction = scenario
        .microgrids
        .iter()
        .enumerate()
        .map(|(i, mg)| {
            let restored: f64 = summaries.iter().map(|s| s.restored_kwh[i]).sum();
            let load: f64 = summaries.iter().map(|s| s.load_kwh[i]).sum();
            (mg.id, if load > 0.0 { restored / load } else { 0.0 })
        })
        .collect();
    EvaluationReport {
        policy,
        episodes: summaries.len(),
        first_seed,
        mean_return,
        std_return,
        costs,
        mean_restoration_value: avg(|s| s.restoration_value),
        mean_penalty: avg(|s| s.penalty),
        restoration_fraction,
        returns,
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripChain {
    pub mess: u32,
    pub legs: Vec<TripLeg>,
}

/// The JSON document written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub dt_hours: f64,
    pub summary: EpisodeSummary,
    pub steps: Vec<TraceRecord>,
    pub trip_chains: Vec<TripChain>,
    pub transfer_cycles: Vec<TransferCycle>,
}

/// Runs one episode and writes its per-step trace to `out`.
pub fn cmd_simulate(config: &Path, source: &PolicySource, seed: u64, out: &Path) -> Result<SimulationTrace, CliError> {
    let (cfg, scenario) = load_config(config)?;
    let policy = LoadedPolicy::load(source, &cfg, &scenario)?;
    let mut env = Environment::new(Arc::clone(&scenario), seed);
    let episode = policy.run(&mut env, seed)?;
    let chains = trip_chains(&episode.trace, scenario.dt)
        .into_iter()
        .zip(&scenario.fleet)
        .map(|(legs, m)| TripChain { mess: m.id, legs })
        .collect();
    let trace = SimulationTrace {
        scenario: scenario.name.clone(),
        policy: source.label(),
        seed,
        dt_hours: scenario.dt,
        summary: episode.summary,
        transfer_cycles: transfer_cycles(&episode.trace),
        steps: episode.trace,
        trip_chains: chains,
    };
    write_json(out, &trace)?;
    Ok(trace)
}

pub fn read_trace(path: &Path) -> Result<SimulationTrace, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- oracle

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGap {
    pub policy: String,
    pub mean_return: f64,
    /// Optimal value minus mean return.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub scenario: String,
    pub state_count: usize,
    pub sweeps: usize,
    pub residual: f64,
    pub optimal_value: f64,
    pub gaps: Vec<PolicyGap>,
}

/// Episodes used to average the random baseline.
pub const ORACLE_RANDOM_EPISODES: usize = 50;

/// Solves a tiny scenario exactly and compares the baselines (and an
/// optional checkpoint) against the optimum. With `out`, the full value
/// table is written as JSON.
pub fn cmd_oracle(config: &Path, checkpoint: Option<&Path>, seed: u64, out: Option<&Path>) -> Result<OracleReport, CliError> {
    let (cfg, scenario) = load_config(config)?;
    let tiny = TinyScenario::new(Arc::clone(&scenario), &cfg.oracle)?;
    let solution = value_iteration(&tiny)?;
    let v_star = solution.optimal_value();
    let mut env = Environment::new(Arc::clone(&scenario), seed);

    let mut gaps = Vec::new();
    let mut push = |policy: &str, returns: Vec<f64>| {
        let (m, _) = mean_std(&returns);
        gaps.push(PolicyGap {
            policy: policy.into(),
            mean_return: m,
            gap: v_star - m,
        });
    };
    let replayed = run_episode(&mut env, &mut OraclePolicy(&solution), seed)?;
    push("oracle", vec![replayed.summary.episode_return]);
    for (name, source) in [("greedy", PolicySource::Greedy), ("no-mess", PolicySource::NoMess)] {
        let p = LoadedPolicy::load(&source, &cfg, &scenario)?;
        push(name, vec![p.run(&mut env, seed)?.summary.episode_return]);
    }
    let random = (0..ORACLE_RANDOM_EPISODES as u64)
        .map(|k| LoadedPolicy::Random.run(&mut env, seed + k).map(|e| e.summary.episode_return))
        .collect::<Result<Vec<_>, _>>()?;
    push("random", random);
    if let Some(path) = checkpoint {
        let p = LoadedPolicy::load(&PolicySource::Checkpoint(path.to_path_buf()), &cfg, &scenario)?;
        push("checkpoint", vec![p.run(&mut env, seed)?.summary.episode_return]);
    }
    if let Some(path) = out {
        write_json(path, &solution.to_json())?;
    }
    Ok(OracleReport {
        scenario: scenario.name.clone(),
        state_count: solution.state_count(),
        sweeps: solution.sweeps,
        residual: solution.residual,
        optimal_value: v_star,
        gaps,
    })
}

/// Writes a human-readable block for a report to `w`.
pub fn print_json<T: Serialize>(w: &mut dyn Write, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    writeln!(w, "{text}")
}
