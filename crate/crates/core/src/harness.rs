//! Seeded multi-run experiments, aggregation and CSV output.
//!
//! # Config file
//!
//! A flat TOML document; unknown keys are rejected. Keys that do not apply to
//! the selected `env` / `agent` are rejected as well.
//!
//! | key | applies to | required |
//! |-----|------------|----------|
//! | `env` | all: `"chain"` or `"grid"` | yes |
//! | `states`, `horizon`, `noise_std`, `step_reward`, `goal_reward` | chain | yes |
//! | `width`, `height`, `horizon` | grid | yes |
//! | `agent` | `"q_learning"`, `"sql"`, `"cbsql"`, `"replay_cbsql"`, `"scripted"` | yes |
//! | `gamma`, `epsilon`, `learning_rate` | all learning agents | yes |
//! | `beta` | sql | yes |
//! | `kappa` | cbsql, replay_cbsql | yes |
//! | `batch_size`, `target_update_freq`, `replay_capacity` | replay_cbsql | yes |
//! | `actions` (array of action indices) | scripted | yes |
//! | `episodes`, `runs`, `base_seed`, `output` | all | yes |
//! | `label` | all | no, defaults to the agent kind |
//! | `counted_state` (`"next"` / `"current"`), `mask_truncation`, `action_selection` (`"epsilon_greedy"` / `"softmax"`), `operator` (`"mellowmax_mean"` / `"log_partition"`), `epsilon_final` + `epsilon_anneal_steps` | learning agents | no |
//!
//! # CSV
//!
//! Records: header `agent,run_id,episode,return`. Summaries: header
//! `agent,trailing_mean,trailing_std`. Reals are written with 6 significant
//! digits (see [`format_sig6`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::agents::{
    run_episode, ActionSelection, Agent, AgentConfig, CountedState, EpsilonAnneal, ReplayAgent,
    ScriptedAgent, TabularAgent, TabularKind,
};
use crate::counts::TemperatureSchedule;
use crate::env::{optimal_return_oracle, ChainSpec, ChainWalkEnv, Environment, GridEnv, GridSpec};
use crate::error::{Error, Result};
use crate::ops::OperatorMode;

/// Environment variable holding the worker count for parallel runs.
pub const WORKERS_ENV: &str = "CBSQL_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Chain(ChainSpec),
    Grid(GridSpec),
}

impl EnvSpec {
    pub fn build(&self, rng: ChaCha8Rng) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::Chain(spec) => Box::new(ChainWalkEnv::with_rng(spec.clone(), rng)?),
            EnvSpec::Grid(spec) => Box::new(GridEnv::new(spec.clone())?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    QLearning,
    Sql,
    Cbsql,
    ReplayCbsql,
    Scripted,
}

impl AgentKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "q_learning" => AgentKind::QLearning,
            "sql" => AgentKind::Sql,
            "cbsql" => AgentKind::Cbsql,
            "replay_cbsql" => AgentKind::ReplayCbsql,
            "scripted" => AgentKind::Scripted,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::QLearning => "q_learning",
            AgentKind::Sql => "sql",
            AgentKind::Cbsql => "cbsql",
            AgentKind::ReplayCbsql => "replay_cbsql",
            AgentKind::Scripted => "scripted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub label: String,
    pub cfg: AgentConfig,
    /// Only used by [`AgentKind::Scripted`].
    pub script: Vec<usize>,
}

impl AgentSpec {
    pub fn new(kind: AgentKind, label: impl Into<String>, cfg: AgentConfig) -> Self {
        AgentSpec {
            kind,
            label: label.into(),
            cfg,
            script: Vec::new(),
        }
    }

    pub fn scripted(label: impl Into<String>, script: Vec<usize>) -> Self {
        AgentSpec {
            kind: AgentKind::Scripted,
            label: label.into(),
            cfg: AgentConfig::tabular(TemperatureSchedule::Constant { beta: 1.0 }),
            script,
        }
    }

    pub fn build(
        &self,
        env: &dyn Environment,
        run_id: u64,
        base_seed: u64,
    ) -> Result<Box<dyn Agent>> {
        let actions = env.action_count();
        let rng = stream_rng(base_seed, run_id, Stream::Agent);
        let tabular = |kind| -> Result<Box<dyn Agent>> {
            Ok(Box::new(TabularAgent::new(
                &self.label,
                kind,
                self.cfg.clone(),
                actions,
                rng.clone(),
            )?))
        };
        match self.kind {
            AgentKind::QLearning => tabular(TabularKind::QLearning),
            AgentKind::Sql => tabular(TabularKind::Sql),
            AgentKind::Cbsql => tabular(TabularKind::Cbsql),
            AgentKind::ReplayCbsql => Ok(Box::new(ReplayAgent::new(
                &self.label,
                self.cfg.clone(),
                actions,
                &env.factor_sizes(),
                rng,
                stream_rng(base_seed, run_id, Stream::Replay),
            )?)),
            AgentKind::Scripted => Ok(Box::new(ScriptedAgent::new(
                &self.label,
                self.script.clone(),
                actions,
            )?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub agent: AgentSpec,
    pub episodes: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub output: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    env: Option<String>,
    states: Option<usize>,
    horizon: Option<usize>,
    noise_std: Option<f64>,
    step_reward: Option<f64>,
    goal_reward: Option<f64>,
    width: Option<usize>,
    height: Option<usize>,

    agent: Option<String>,
    label: Option<String>,
    gamma: Option<f64>,
    epsilon: Option<f64>,
    epsilon_final: Option<f64>,
    epsilon_anneal_steps: Option<u64>,
    learning_rate: Option<f64>,
    beta: Option<f64>,
    kappa: Option<f64>,
    counted_state: Option<String>,
    mask_truncation: Option<bool>,
    action_selection: Option<String>,
    operator: Option<String>,
    batch_size: Option<usize>,
    target_update_freq: Option<u64>,
    replay_capacity: Option<usize>,
    actions: Option<Vec<usize>>,

    episodes: Option<usize>,
    runs: Option<usize>,
    base_seed: Option<u64>,
    output: Option<String>,
}

fn require<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(field, "missing required field"))
}

fn forbid<T>(v: &Option<T>, field: &str, context: &str) -> Result<()> {
    match v {
        Some(_) => Err(Error::config(field, format!("not allowed for {context}"))),
        None => Ok(()),
    }
}

fn positive_count(v: usize, field: &str) -> Result<usize> {
    if v == 0 {
        Err(Error::config(field, "must be positive"))
    } else {
        Ok(v)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // Unknown and missing keys are named inside backticks; for type
            // errors the key is read off the line the error points at.
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .or_else(|| {
                    let start = e.span()?.start;
                    let line_start = text[..start].rfind('\n').map_or(0, |i| i + 1);
                    let line = &text[line_start..];
                    let key = line.split('=').next()?.trim();
                    (!key.is_empty() && !key.contains('\n')).then(|| key.to_string())
                })
                .unwrap_or_else(|| "<document>".into());
            Error::config(field, msg)
        })?;
        Self::from_raw(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let env_kind = require(raw.env.clone(), "env")?;
        let env = match env_kind.as_str() {
            "chain" => {
                forbid(&raw.width, "width", "env = \"chain\"")?;
                forbid(&raw.height, "height", "env = \"chain\"")?;
                let spec = ChainSpec {
                    n_states: require(raw.states, "states")?,
                    horizon: require(raw.horizon, "horizon")?,
                    noise_std: require(raw.noise_std, "noise_std")?,
                    step_reward: require(raw.step_reward, "step_reward")?,
                    goal_reward: require(raw.goal_reward, "goal_reward")?,
                };
                spec.validate()
                    .map_err(|e| Error::config("env", e.to_string()))?;
                EnvSpec::Chain(spec)
            }
            "grid" => {
                for (v, f) in [
                    (&raw.states.map(|_| ()), "states"),
                    (&raw.noise_std.map(|_| ()), "noise_std"),
                    (&raw.step_reward.map(|_| ()), "step_reward"),
                    (&raw.goal_reward.map(|_| ()), "goal_reward"),
                ] {
                    forbid(v, f, "env = \"grid\"")?;
                }
                let spec = GridSpec {
                    width: require(raw.width, "width")?,
                    height: require(raw.height, "height")?,
                    horizon: require(raw.horizon, "horizon")?,
                };
                GridEnv::new(spec.clone()).map_err(|e| Error::config("env", e.to_string()))?;
                EnvSpec::Grid(spec)
            }
            other => {
                return Err(Error::config(
                    "env",
                    format!("unknown environment `{other}`"),
                ))
            }
        };

        let agent_name = require(raw.agent.clone(), "agent")?;
        let kind = AgentKind::parse(&agent_name)
            .ok_or_else(|| Error::config("agent", format!("unknown agent `{agent_name}`")))?;
        let label = raw.label.clone().unwrap_or_else(|| kind.name().to_string());
        let agent = Self::agent_spec(&raw, kind, label)?;

        let episodes = positive_count(require(raw.episodes, "episodes")?, "episodes")?;
        let runs = positive_count(require(raw.runs, "runs")?, "runs")?;
        Ok(ExperimentConfig {
            env,
            agent,
            episodes,
            runs,
            base_seed: require(raw.base_seed, "base_seed")?,
            output: PathBuf::from(require(raw.output, "output")?),
        })
    }

    fn agent_spec(raw: &RawConfig, kind: AgentKind, label: String) -> Result<AgentSpec> {
        let ctx = format!("agent = \"{}\"", kind.name());
        if kind == AgentKind::Scripted {
            forbid(&raw.gamma, "gamma", &ctx)?;
            forbid(&raw.epsilon, "epsilon", &ctx)?;
            forbid(&raw.learning_rate, "learning_rate", &ctx)?;
            forbid(&raw.beta, "beta", &ctx)?;
            forbid(&raw.kappa, "kappa", &ctx)?;
            let script = require(raw.actions.clone(), "actions")?;
            if script.is_empty() {
                return Err(Error::config("actions", "must not be empty"));
            }
            return Ok(AgentSpec::scripted(label, script));
        }
        forbid(&raw.actions, "actions", &ctx)?;
        if kind != AgentKind::Sql {
            forbid(&raw.beta, "beta", &ctx)?;
        }
        if !matches!(kind, AgentKind::Cbsql | AgentKind::ReplayCbsql) {
            forbid(&raw.kappa, "kappa", &ctx)?;
        }
        if kind != AgentKind::ReplayCbsql {
            forbid(&raw.batch_size, "batch_size", &ctx)?;
            forbid(&raw.target_update_freq, "target_update_freq", &ctx)?;
            forbid(&raw.replay_capacity, "replay_capacity", &ctx)?;
        }

        let schedule = match kind {
            AgentKind::Sql => TemperatureSchedule::constant(require(raw.beta, "beta")?)
                .map_err(|e| Error::config("beta", e.to_string()))?,
            AgentKind::Cbsql | AgentKind::ReplayCbsql => {
                TemperatureSchedule::count_based(require(raw.kappa, "kappa")?)
                    .map_err(|e| Error::config("kappa", e.to_string()))?
            }
            // Q-learning never consults beta except for softmax acting.
            _ => TemperatureSchedule::Constant { beta: 1.0 },
        };
        let mut cfg = if kind == AgentKind::ReplayCbsql {
            let mut cfg = AgentConfig::replay(schedule);
            cfg.batch_size = positive_count(require(raw.batch_size, "batch_size")?, "batch_size")?;
            cfg.replay_capacity = positive_count(
                require(raw.replay_capacity, "replay_capacity")?,
                "replay_capacity",
            )?;
            cfg.target_update_freq = require(raw.target_update_freq, "target_update_freq")?;
            if cfg.target_update_freq == 0 {
                return Err(Error::config("target_update_freq", "must be positive"));
            }
            cfg
        } else {
            AgentConfig::tabular(schedule)
        };
        cfg.gamma = require(raw.gamma, "gamma")?;
        cfg.epsilon = require(raw.epsilon, "epsilon")?;
        cfg.learning_rate = require(raw.learning_rate, "learning_rate")?;
        if let Some(c) = &raw.counted_state {
            cfg.counted_state = match c.as_str() {
                "next" => CountedState::Next,
                "current" => CountedState::Current,
                _ => {
                    return Err(Error::config(
                        "counted_state",
                        format!("unknown value `{c}`"),
                    ))
                }
            };
        }
        if let Some(m) = raw.mask_truncation {
            cfg.mask_truncation = m;
        }
        if let Some(a) = &raw.action_selection {
            cfg.action_selection = match a.as_str() {
                "epsilon_greedy" => ActionSelection::EpsilonGreedy,
                "softmax" => ActionSelection::Softmax,
                _ => {
                    return Err(Error::config(
                        "action_selection",
                        format!("unknown value `{a}`"),
                    ))
                }
            };
        }
        if let Some(o) = &raw.operator {
            cfg.mode = match o.as_str() {
                "mellowmax_mean" => OperatorMode::MellowmaxMean,
                "log_partition" => OperatorMode::LogPartition,
                _ => return Err(Error::config("operator", format!("unknown value `{o}`"))),
            };
        }
        match (raw.epsilon_final, raw.epsilon_anneal_steps) {
            (None, None) => {}
            (Some(final_epsilon), Some(steps)) => {
                cfg.epsilon_anneal = Some(EpsilonAnneal {
                    final_epsilon,
                    steps,
                })
            }
            (Some(_), None) => {
                return Err(Error::config(
                    "epsilon_anneal_steps",
                    "required with epsilon_final",
                ))
            }
            (None, Some(_)) => {
                return Err(Error::config(
                    "epsilon_final",
                    "required with epsilon_anneal_steps",
                ))
            }
        }
        cfg.validate()
            .map_err(|e| Error::config("agent", e.to_string()))?;
        Ok(AgentSpec {
            kind,
            label,
            cfg,
            script: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Env = 0,
    Agent = 1,
    Replay = 2,
}

/// Independent random stream for one role in one run.
fn stream_rng(base_seed: u64, run_id: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(run_id * 4 + stream as u64);
    rng
}

/// One episode result.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub agent: String,
    pub run_id: u64,
    pub episode: usize,
    pub episode_return: f64,
}

/// Trains one fresh agent in one fresh environment and returns its episode
/// returns.
pub fn run_single(
    env: &EnvSpec,
    agent: &AgentSpec,
    episodes: usize,
    base_seed: u64,
    run_id: u64,
) -> Result<Vec<f64>> {
    let mut env = env.build(stream_rng(base_seed, run_id, Stream::Env))?;
    let mut agent = agent.build(env.as_ref(), run_id, base_seed)?;
    (0..episodes)
        .map(|_| run_episode(agent.as_mut(), env.as_mut()))
        .collect()
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n| n > 0)
}

/// Runs `runs` independent runs of one agent, in parallel when `workers` is
/// more than one. Output order and values do not depend on `workers`.
pub fn run_many(
    env: &EnvSpec,
    agent: &AgentSpec,
    episodes: usize,
    runs: usize,
    base_seed: u64,
    workers: usize,
) -> Result<Vec<Vec<f64>>> {
    let job = |r: usize| run_single(env, agent, episodes, base_seed, r as u64);
    if workers <= 1 {
        return (0..runs).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..runs).into_par_iter().map(job).collect())
}

fn to_records(label: &str, returns: Vec<Vec<f64>>) -> Vec<RunRecord> {
    returns
        .into_iter()
        .enumerate()
        .flat_map(|(run, rets)| {
            rets.into_iter()
                .enumerate()
                .map(move |(episode, r)| RunRecord {
                    agent: label.to_string(),
                    run_id: run as u64,
                    episode,
                    episode_return: r,
                })
        })
        .collect()
}

/// Runs the configured experiment with the worker count from the
/// environment (serial when unset).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    run_experiment_with_workers(cfg, workers_from_env().unwrap_or(1))
}

pub fn run_experiment_with_workers(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<Vec<RunRecord>> {
    let returns = run_many(
        &cfg.env,
        &cfg.agent,
        cfg.episodes,
        cfg.runs,
        cfg.base_seed,
        workers,
    )?;
    Ok(to_records(&cfg.agent.label, returns))
}

/// `x` with 6 significant digits, like C's `%g`: fixed notation for decimal
/// exponents in `-4..6`, scientific otherwise (`1.23457e8`), trailing zeros
/// removed.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if negative { "-" } else { "" };
    if !(-4..6).contains(&exp) {
        let (head, tail) = digits.split_at(1);
        let tail = tail.trim_end_matches('0');
        return if tail.is_empty() {
            format!("{sign}{head}e{exp}")
        } else {
            format!("{sign}{head}.{tail}e{exp}")
        };
    }
    let (int_part, frac_part) = if exp >= 0 {
        let split = (exp + 1) as usize;
        if split >= digits.len() {
            (
                format!("{digits}{}", "0".repeat(split - digits.len())),
                String::new(),
            )
        } else {
            (digits[..split].to_string(), digits[split..].to_string())
        }
    } else {
        (
            "0".to_string(),
            format!("{}{digits}", "0".repeat((-exp - 1) as usize)),
        )
    };
    let frac_part = frac_part.trim_end_matches('0');
    if frac_part.is_empty() {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part}")
    }
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("agent,run_id,episode,return\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            csv_field(&r.agent),
            r.run_id,
            r.episode,
            format_sig6(r.episode_return)
        )
        .unwrap();
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_text(path, &records_to_csv(records))
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    agent: String,
    run_id: u64,
    episode: usize,
    #[serde(rename = "return")]
    episode_return: f64,
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(file)
}

pub fn parse_records<R: std::io::Read>(reader: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["agent", "run_id", "episode", "return"] {
        return Err(Error::Parse(format!(
            "expected header `agent,run_id,episode,return`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(RunRecord {
                agent: row.agent,
                run_id: row.run_id,
                episode: row.episode,
                episode_return: row.episode_return,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStat {
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub runs: usize,
    pub window: usize,
    pub per_episode: Vec<EpisodeStat>,
    /// Mean over the last `window` episodes of the cross-run means.
    pub trailing_mean: f64,
    /// Population standard deviation across runs of each run's
    /// last-`window` mean.
    pub trailing_std: f64,
}

impl Aggregate {
    /// First episode at which the `ma_window`-episode moving average of the
    /// cross-run means exceeds `threshold`. Only complete windows count.
    pub fn first_episode_above(&self, threshold: f64, ma_window: usize) -> Option<usize> {
        if ma_window == 0 || ma_window > self.per_episode.len() {
            return None;
        }
        let means: Vec<f64> = self.per_episode.iter().map(|s| s.mean).collect();
        means
            .windows(ma_window)
            .position(|w| w.iter().sum::<f64>() / ma_window as f64 > threshold)
            .map(|i| i + ma_window - 1)
    }
}

/// Mean computed as `x0 + mean(x - x0)`, exact for constant input.
fn mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = mean(xs);
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-episode cross-run statistics plus trailing-window summaries.
///
/// All records must share one agent label and form a rectangle: every run
/// has every episode `0..E` exactly once.
pub fn aggregate(records: &[RunRecord], window: usize) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to aggregate".into()));
    }
    if window == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    if records.iter().any(|r| r.agent != records[0].agent) {
        return Err(Error::Shape(
            "records mix several agents; use aggregate_by_agent".into(),
        ));
    }
    let mut by_run: BTreeMap<u64, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in records {
        if by_run
            .entry(r.run_id)
            .or_default()
            .insert(r.episode, r.episode_return)
            .is_some()
        {
            return Err(Error::Shape(format!(
                "duplicate record for run {} episode {}",
                r.run_id, r.episode
            )));
        }
    }
    let episodes = by_run.values().next().map_or(0, BTreeMap::len);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(by_run.len());
    for (run, eps) in &by_run {
        if eps.len() != episodes || eps.keys().copied().ne(0..episodes) {
            return Err(Error::Shape(format!(
                "run {run} does not cover episodes 0..{episodes} exactly"
            )));
        }
        rows.push(eps.values().copied().collect());
    }
    if window > episodes {
        return Err(Error::invalid(format!(
            "window {window} exceeds the {episodes} recorded episodes"
        )));
    }

    let per_episode = (0..episodes)
        .map(|e| {
            let column: Vec<f64> = rows.iter().map(|r| r[e]).collect();
            let (mean, std) = mean_std(&column);
            EpisodeStat { mean, std }
        })
        .collect::<Vec<_>>();
    let tail_means: Vec<f64> = per_episode[episodes - window..]
        .iter()
        .map(|s| s.mean)
        .collect();
    let trailing_mean = mean(&tail_means);
    let run_tails: Vec<f64> = rows.iter().map(|r| mean(&r[episodes - window..])).collect();
    let (_, trailing_std) = mean_std(&run_tails);
    Ok(Aggregate {
        runs: rows.len(),
        window,
        per_episode,
        trailing_mean,
        trailing_std,
    })
}

/// [`aggregate`] per agent label, in order of first appearance.
pub fn aggregate_by_agent(
    records: &[RunRecord],
    window: usize,
) -> Result<Vec<(String, Aggregate)>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to aggregate".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(&r.agent) {
            order.push(r.agent.clone());
        }
        groups.entry(r.agent.clone()).or_default().push(r.clone());
    }
    order
        .into_iter()
        .map(|label| {
            let agg = aggregate(&groups[&label], window)?;
            Ok((label, agg))
        })
        .collect()
}

pub fn summary_to_csv(rows: &[(String, Aggregate)]) -> String {
    let mut out = String::from("agent,trailing_mean,trailing_std\n");
    for (label, agg) in rows {
        writeln!(
            out,
            "{},{},{}",
            csv_field(label),
            format_sig6(agg.trailing_mean),
            format_sig6(agg.trailing_std)
        )
        .unwrap();
    }
    out
}

/// Settings for the chain-walk comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceOptions {
    pub runs: usize,
    pub episodes: usize,
    pub window: usize,
    pub base_seed: u64,
    pub workers: usize,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        ReproduceOptions {
            runs: 1000,
            episodes: 300,
            window: 50,
            base_seed: 1,
            workers: workers_from_env()
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }
}

pub const CBSQL_LABEL: &str = "cbsql";
/// Minimum trailing mean CBSQL must reach.
pub const CBSQL_THRESHOLD: f64 = 0.5;
pub const CONVERGENCE_LEVEL: f64 = 0.4;
pub const CONVERGENCE_MA: usize = 20;

/// The five agents compared on the chain walk: Q-learning, soft Q-learning
/// at `beta` in {10, 100, 1000}, and CBSQL with `kappa = 0.01`. All use
/// `gamma = 0.99`, `epsilon = 0.01` and learning rate 1.
pub fn chainwalk_agents() -> Vec<AgentSpec> {
    let mut agents = vec![AgentSpec::new(
        AgentKind::QLearning,
        "q_learning",
        AgentConfig::tabular(TemperatureSchedule::Constant { beta: 1.0 }),
    )];
    for beta in [10.0, 100.0, 1000.0] {
        agents.push(AgentSpec::new(
            AgentKind::Sql,
            format!("sql_beta{beta}"),
            AgentConfig::tabular(TemperatureSchedule::Constant { beta }),
        ));
    }
    agents.push(AgentSpec::new(
        AgentKind::Cbsql,
        CBSQL_LABEL,
        AgentConfig::tabular(TemperatureSchedule::CountBased { kappa: 0.01 }),
    ));
    agents
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainwalkRow {
    pub label: String,
    pub trailing_mean: f64,
    pub trailing_std: f64,
    pub first_above: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ChainwalkReport {
    pub options: ReproduceOptions,
    pub optimum: f64,
    pub rows: Vec<ChainwalkRow>,
    pub summaries: Vec<(String, Aggregate)>,
    pub records: Vec<RunRecord>,
}

impl ChainwalkReport {
    pub fn row(&self, label: &str) -> Option<&ChainwalkRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// CBSQL beats every baseline's trailing mean and reaches
    /// [`CBSQL_THRESHOLD`].
    pub fn verdict(&self) -> bool {
        let Some(cb) = self.row(CBSQL_LABEL) else {
            return false;
        };
        cb.trailing_mean >= CBSQL_THRESHOLD
            && self
                .rows
                .iter()
                .filter(|r| r.label != CBSQL_LABEL)
                .all(|r| cb.trailing_mean > r.trailing_mean)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "noisy chain walk: {} runs x {} episodes, trailing window {}",
            self.options.runs, self.options.episodes, self.options.window
        )
        .unwrap();
        writeln!(
            out,
            "{:<16} {:>14} {:>14} {:>22}",
            "agent",
            "trailing_mean",
            "trailing_std",
            format!("first MA{CONVERGENCE_MA} > {CONVERGENCE_LEVEL}")
        )
        .unwrap();
        for r in &self.rows {
            let first = r.first_above.map_or("-".to_string(), |e| e.to_string());
            writeln!(
                out,
                "{:<16} {:>14.4} {:>14.4} {:>22}",
                r.label, r.trailing_mean, r.trailing_std, first
            )
            .unwrap();
        }
        writeln!(out, "{:<16} {:>14.4}", "optimum", self.optimum).unwrap();
        writeln!(
            out,
            "verdict: {}",
            if self.verdict() { "PASS" } else { "FAIL" }
        )
        .unwrap();
        out
    }
}

/// Runs every agent of [`chainwalk_agents`] on the noisy chain with shared
/// per-run environment seeds and summarizes the trailing returns.
pub fn reproduce_chainwalk(opts: &ReproduceOptions) -> Result<ChainwalkReport> {
    if opts.window == 0 || opts.window > opts.episodes || opts.runs == 0 {
        return Err(Error::invalid("need runs > 0 and 0 < window <= episodes"));
    }
    let spec = ChainSpec::default();
    let optimum = *optimal_return_oracle(&spec)?.numer() as f64
        / *optimal_return_oracle(&spec)?.denom() as f64;
    let env = EnvSpec::Chain(spec);
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for agent in chainwalk_agents() {
        let returns = run_many(
            &env,
            &agent,
            opts.episodes,
            opts.runs,
            opts.base_seed,
            opts.workers,
        )?;
        let agent_records = to_records(&agent.label, returns);
        let agg = aggregate(&agent_records, opts.window)?;
        rows.push(ChainwalkRow {
            label: agent.label.clone(),
            trailing_mean: agg.trailing_mean,
            trailing_std: agg.trailing_std,
            first_above: agg.first_episode_above(CONVERGENCE_LEVEL, CONVERGENCE_MA),
        });
        summaries.push((agent.label.clone(), agg));
        records.extend(agent_records);
    }
    Ok(ChainwalkReport {
        options: opts.clone(),
        optimum,
        rows,
        summaries,
        records,
    })
}
