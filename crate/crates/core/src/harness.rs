//! Episode loop, seeded batches, aggregation, and report files.
//!
//! An episode tracks the hidden true state next to the planner's belief.
//! Physical failure is judged on the true state; the cumulative collision
//! trace is belief-side: after step `t` it holds `f_0 + ... + f_t`, where
//! `f_i` is the share of previously surviving particles that failed at step
//! `i` (on a Localize, the share that would surface on a hazard). A GPS fix
//! revives the belief, so the sum can pass 1.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, Reinvigoration};
use crate::ccpomcp::{admissible_cost_update, CcSearchParams};
use crate::environment::{builtin_env, Coord, GridMap, MapError, Terminal, BUILTIN_ENVS};
use crate::model::{Action, AgentState, GenerativeModel, ModelError, MotionNoise, Observation, RewardConfig};
use crate::planner::{
    llp_execute_move, llp_replan_after_localize, next_action, HlpStrategy, PlannerError, PlannerState, StrategyKey,
};
use crate::pomcp::{SearchError, SearchParams};
use crate::scalar::Scalar;

/// Overrides the configured worker count when set.
pub const WORKERS_ENV: &str = "SAFENAV_WORKERS";

/// Collision threshold drawn on cumulative-collision plots.
pub const COLLISION_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configuration syntax: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("map: {0}")]
    Map(#[from] MapError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig<F> {
    /// Built-in environment name or the map file as written in the config.
    pub env: String,
    pub map: GridMap,
    pub strategy: HlpStrategy<F>,
    pub rewards: RewardConfig<F>,
    pub noise: MotionNoise<F>,
    pub reinvigoration: Reinvigoration<F>,
    pub n_particles: usize,
    pub seed: u64,
    pub n_runs: usize,
    pub workers: Option<usize>,
    /// Episodes stop as `Timeout` after this many times the path length.
    pub timeout_factor: usize,
}

impl<F: Scalar> RunConfig<F> {
    /// Defaults for `strategy` on a built-in environment.
    pub fn builtin(env: &str, strategy: StrategyKey) -> Result<Self, HarnessError> {
        Self::from_file_config(FileConfig {
            env: env.to_owned(),
            strategy: strategy.to_string(),
            runs: default_runs(),
            timeout_factor: default_timeout_factor(),
            ..FileConfig::default()
        }, Path::new("."))
    }

    /// Loads a TOML configuration. Relative map paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        Self::from_file_config(toml::from_str(text)?, base_dir)
    }

    pub fn from_file_config(fc: FileConfig, base_dir: &Path) -> Result<Self, HarnessError> {
        let key: StrategyKey = fc.strategy.parse()?;
        let map = load_env(&fc.env, base_dir)?;
        let lit = F::lit;

        let mut rewards = match key {
            StrategyKey::Pomcp => RewardConfig::pomcp(),
            _ => RewardConfig::ccpomcp(),
        };
        let r = &fc.rewards;
        set(&mut rewards.goal, r.goal);
        set(&mut rewards.step, r.step);
        set(&mut rewards.local, r.local);
        set(&mut rewards.fail, r.fail);
        rewards.validate()?;

        let mut search = match key {
            StrategyKey::CcPomcp => CcSearchParams::<F>::ccpomcp().base,
            _ => SearchParams::pomcp(),
        };
        let s = &fc.search;
        search.n_sims = s.sims.unwrap_or(search.n_sims);
        search.tree_depth = s.depth.unwrap_or(search.tree_depth);
        search.rollout_depth = s.rollout_depth.unwrap_or(search.rollout_depth);
        set(&mut search.gamma, s.gamma);
        set(&mut search.kappa, s.kappa);
        set(&mut search.rollout_localize_prob, s.rollout_localize_prob);
        search.guard_surfacing = s.guard_surfacing.unwrap_or(search.guard_surfacing);

        let strategy = match key {
            StrategyKey::Static(k) => HlpStrategy::Static { k },
            StrategyKey::Pomcp => HlpStrategy::OnlinePomcp(search),
            StrategyKey::CcPomcp => {
                let mut cc = CcSearchParams::ccpomcp();
                cc.base = search;
                let c = &fc.constraint;
                set(&mut cc.alpha, c.alpha);
                set(&mut cc.c_hat, c.c_hat);
                cc.lambda_max = c.lambda_max.map(lit);
                cc.reset_lambda = c.reset_lambda.unwrap_or(false);
                HlpStrategy::OnlineCcPomcp(cc)
            }
        };
        match &strategy {
            HlpStrategy::OnlinePomcp(p) => p.validate()?,
            HlpStrategy::OnlineCcPomcp(p) => p.validate()?,
            HlpStrategy::Static { .. } => {}
        }

        let mut noise = MotionNoise::default();
        set(&mut noise.intended, fc.motion.intended);
        set(&mut noise.overshoot, fc.motion.overshoot);
        set(&mut noise.undershoot, fc.motion.undershoot);
        noise.validate()?;

        let mut reinvigoration = Reinvigoration::default();
        set(&mut reinvigoration.fraction, fc.belief.reinvigoration_fraction);
        reinvigoration.radius = fc.belief.reinvigoration_radius.unwrap_or(reinvigoration.radius);
        if !(F::zero()..=F::one()).contains(&reinvigoration.fraction) || reinvigoration.radius < 0 {
            return Err(HarnessError::Config("reinvigoration needs fraction in [0, 1] and radius >= 0".into()));
        }

        let n_particles = fc.belief.particles.unwrap_or(1000);
        if n_particles == 0 {
            return Err(HarnessError::Config("belief.particles must be at least 1".into()));
        }
        if fc.runs == 0 {
            return Err(HarnessError::Config("runs must be at least 1".into()));
        }
        if fc.workers == Some(0) {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        if fc.timeout_factor == 0 {
            return Err(HarnessError::Config("timeout_factor must be at least 1".into()));
        }
        Ok(Self {
            env: fc.env,
            map,
            strategy,
            rewards,
            noise,
            reinvigoration,
            n_particles,
            seed: fc.seed,
            n_runs: fc.runs,
            workers: fc.workers,
            timeout_factor: fc.timeout_factor,
        })
    }

    pub fn max_steps(&self) -> usize {
        self.timeout_factor * self.map.path().len()
    }
}

fn set<F: Scalar>(slot: &mut F, v: Option<f64>) {
    if let Some(v) = v {
        *slot = F::lit(v);
    }
}

/// Resolves a built-in name, else reads a map file.
pub fn load_env(env: &str, base_dir: &Path) -> Result<GridMap, HarnessError> {
    if BUILTIN_ENVS.contains(&env) {
        return Ok(builtin_env(env)?);
    }
    let path = base_dir.join(env);
    let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io { path, source })?;
    Ok(text.parse()?)
}

/// On-disk configuration. Every omitted key takes the strategy's default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub env: String,
    pub strategy: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub workers: Option<usize>,
    #[serde(default = "default_timeout_factor")]
    pub timeout_factor: usize,
    #[serde(default)]
    pub rewards: RewardKeys,
    #[serde(default)]
    pub search: SearchKeys,
    #[serde(default)]
    pub constraint: ConstraintKeys,
    #[serde(default)]
    pub belief: BeliefKeys,
    #[serde(default)]
    pub motion: MotionKeys,
}

fn default_runs() -> usize {
    100
}

fn default_timeout_factor() -> usize {
    10
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardKeys {
    pub goal: Option<f64>,
    #[serde(rename = "move")]
    pub step: Option<f64>,
    #[serde(rename = "localize")]
    pub local: Option<f64>,
    pub fail: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchKeys {
    pub sims: Option<usize>,
    pub depth: Option<usize>,
    pub rollout_depth: Option<usize>,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub rollout_localize_prob: Option<f64>,
    pub guard_surfacing: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintKeys {
    pub alpha: Option<f64>,
    pub c_hat: Option<f64>,
    pub lambda_max: Option<f64>,
    pub reset_lambda: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefKeys {
    pub particles: Option<usize>,
    pub reinvigoration_fraction: Option<f64>,
    pub reinvigoration_radius: Option<i32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionKeys {
    pub intended: Option<f64>,
    pub overshoot: Option<f64>,
    pub undershoot: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    ReachedGoal,
    FailedCollision,
    FailedOffMap,
    FailedSurfaced,
    /// Path repair found no way back; counted as a collision-class failure.
    Unreachable,
    Timeout,
}

impl Outcome {
    pub const ALL: [Outcome; 6] = [
        Outcome::ReachedGoal,
        Outcome::FailedCollision,
        Outcome::FailedOffMap,
        Outcome::FailedSurfaced,
        Outcome::Unreachable,
        Outcome::Timeout,
    ];

    pub fn is_physical_failure(self) -> bool {
        matches!(
            self,
            Outcome::FailedCollision | Outcome::FailedOffMap | Outcome::FailedSurfaced | Outcome::Unreachable
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::ReachedGoal => "reached-goal",
            Outcome::FailedCollision => "failed-collision",
            Outcome::FailedOffMap => "failed-off-map",
            Outcome::FailedSurfaced => "failed-surfaced",
            Outcome::Unreachable => "unreachable",
            Outcome::Timeout => "timeout",
        }
    }

    fn from_terminal(t: Terminal) -> Option<Self> {
        match t {
            Terminal::Active => None,
            Terminal::ReachedGoal => Some(Outcome::ReachedGoal),
            Terminal::FailedCollision => Some(Outcome::FailedCollision),
            Terminal::FailedOffMap => Some(Outcome::FailedOffMap),
            Terminal::FailedSurfaced => Some(Outcome::FailedSurfaced),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizeEvent {
    pub step: usize,
    /// `None` outside every declared region.
    pub region: Option<String>,
    pub position: Coord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult<F> {
    pub seed: u64,
    pub outcome: Outcome,
    /// Executed actions `T`.
    pub steps: usize,
    pub executed_actions: Vec<Action>,
    pub localize_events: Vec<LocalizeEvent>,
    pub cumulative_collision_trace: Vec<F>,
    /// Admissible cost budget after each step (CC-POMCP only).
    pub budget_trace: Vec<F>,
    /// Dual variable after each decision (CC-POMCP only).
    pub lambda_trace: Vec<F>,
    pub total_reward: F,
    pub total_cost: F,
    pub final_position: Coord,
}

impl<F: Scalar> RunResult<F> {
    /// Episode-final cumulative collision fraction.
    pub fn cumulative_collision(&self) -> F {
        self.cumulative_collision_trace.last().copied().unwrap_or_else(F::zero)
    }
}

/// Runs one episode of the move/localize loop with its own seeded generator.
pub fn run_episode<F: Scalar>(cfg: &RunConfig<F>, episode_seed: u64) -> Result<RunResult<F>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let map = &cfg.map;
    let (c_hat, gamma) = match &cfg.strategy {
        HlpStrategy::OnlineCcPomcp(p) => (p.c_hat, p.base.gamma),
        _ => (F::infinity(), F::one()),
    };
    let is_cc = matches!(cfg.strategy, HlpStrategy::OnlineCcPomcp(_));
    let mut ps = PlannerState::new(map, cfg.n_particles, c_hat)?;
    let mut truth = AgentState::at(map.start());
    let mut res = RunResult {
        seed: episode_seed,
        outcome: Outcome::Timeout,
        steps: 0,
        executed_actions: Vec::new(),
        localize_events: Vec::new(),
        cumulative_collision_trace: Vec::new(),
        budget_trace: Vec::new(),
        lambda_trace: Vec::new(),
        total_reward: F::zero(),
        total_cost: F::zero(),
        final_position: truth.position,
    };
    let mut collided = F::zero();

    while res.steps < cfg.max_steps() {
        if ps.remaining_path.is_empty() {
            ps.remaining_path.push(map.goal());
        }
        let action = next_action(&cfg.strategy, &mut ps, map, cfg.rewards, cfg.noise, &mut rng)?;
        let (out, fresh_failures) = match action {
            Action::Move => {
                let cmd = llp_execute_move(&mut ps, map)?;
                let model = GenerativeModel::new(map, &ps.remaining_path, cfg.rewards, cfg.noise);
                let out = model.move_with(&truth, cmd, &mut rng);
                let before = ps.belief.active_count();
                let failed = ps.belief.failed_count();
                ps.belief = ps.belief.propagate_command(&model, cmd, &mut rng);
                let died = ps.belief.failed_count() - failed;
                let f = if before == 0 {
                    F::zero()
                } else {
                    F::lit(died as f64) / F::lit(before as f64)
                };
                (out, f)
            }
            Action::Localize => {
                let model = GenerativeModel::new(map, &ps.remaining_path, cfg.rewards, cfg.noise);
                let f = ps.belief.surfacing_risk::<F>(map);
                let out = model.localize(&truth);
                res.localize_events.push(LocalizeEvent {
                    step: res.steps,
                    region: map.region_at(truth.position).map(|r| r.name.clone()),
                    position: truth.position,
                });
                (out, f)
            }
        };
        truth = out.next_state;
        res.steps += 1;
        ps.step_index += 1;
        res.executed_actions.push(action);
        res.total_reward = res.total_reward + out.reward;
        res.total_cost = res.total_cost + out.cost;
        collided = collided + fresh_failures;
        res.cumulative_collision_trace.push(collided);
        if is_cc {
            ps.c_hat_t = admissible_cost_update(ps.c_hat_t, out.cost, gamma);
            res.budget_trace.push(ps.c_hat_t);
            res.lambda_trace.push(ps.lambda);
        }
        if let Some(outcome) = Outcome::from_terminal(truth.terminal) {
            res.outcome = outcome;
            break;
        }
        if let Observation::Gps(fix) = out.observation {
            let (belief, _) =
                ps.belief
                    .update_with_gps(fix, map, &ps.remaining_path, &cfg.reinvigoration, &mut rng)?;
            ps.belief = belief;
            match llp_replan_after_localize(&mut ps, map) {
                Ok(()) => {}
                Err(PlannerError::Unreachable { .. }) => {
                    res.outcome = Outcome::Unreachable;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    res.final_position = truth.position;
    Ok(res)
}

/// Worker threads for a batch: the environment override, else the
/// configured count, else one per core.
pub fn effective_workers(configured: Option<usize>) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(configured)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs episodes with seeds `seed + 0 .. seed + n_runs - 1`, in seed order.
pub fn run_episodes<F: Scalar>(cfg: &RunConfig<F>) -> Result<Vec<RunResult<F>>, HarnessError> {
    let seeds: Vec<u64> = (0..cfg.n_runs as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let workers = effective_workers(cfg.workers);
    if workers <= 1 {
        return seeds.iter().map(|&s| run_episode(cfg, s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| run_episode(cfg, s)).collect())
}

/// Runs a batch and aggregates it.
pub fn run_batch<F: Scalar>(cfg: &RunConfig<F>) -> Result<BatchSummary, HarnessError> {
    let results = run_episodes(cfg)?;
    Ok(summarize(cfg, &results))
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Order-independent: values are sorted before summation.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        sq.sort_by(f64::total_cmp);
        let var = sq.iter().sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Region key for localizations outside every declared region.
pub const UNASSIGNED_REGION: &str = "unassigned";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub strategy: String,
    pub env: String,
    pub n_runs: usize,
    pub seed: u64,
    pub goal_rate: f64,
    /// Any physical failure.
    pub failure_rate: Stat,
    /// One entry per outcome other than reaching the goal.
    pub failure_by_class: BTreeMap<String, Stat>,
    pub localize_per_region: BTreeMap<String, Stat>,
    pub localize_total: Stat,
    /// Episode-final cumulative collision fraction.
    pub cumulative_collision: Stat,
    pub steps: Stat,
    pub total_reward: Stat,
}

pub fn summarize<F: Scalar>(cfg: &RunConfig<F>, results: &[RunResult<F>]) -> BatchSummary {
    let indicator = |pred: &dyn Fn(&RunResult<F>) -> bool| {
        Stat::of(results.iter().map(|r| if pred(r) { 1.0 } else { 0.0 }))
    };
    let mut failure_by_class = BTreeMap::new();
    for o in Outcome::ALL.into_iter().filter(|&o| o != Outcome::ReachedGoal) {
        failure_by_class.insert(o.name().to_owned(), indicator(&|r| r.outcome == o));
    }
    let mut regions: Vec<String> = cfg.map.regions().iter().map(|r| r.name.clone()).collect();
    if results
        .iter()
        .flat_map(|r| &r.localize_events)
        .any(|e| e.region.is_none())
    {
        regions.push(UNASSIGNED_REGION.to_owned());
    }
    let localize_per_region = regions
        .into_iter()
        .map(|name| {
            let stat = Stat::of(results.iter().map(|r| {
                r.localize_events
                    .iter()
                    .filter(|e| e.region.as_deref().unwrap_or(UNASSIGNED_REGION) == name)
                    .count() as f64
            }));
            (name, stat)
        })
        .collect();
    BatchSummary {
        strategy: cfg.strategy.key().to_string(),
        env: cfg.env.clone(),
        n_runs: results.len(),
        seed: cfg.seed,
        goal_rate: indicator(&|r| r.outcome == Outcome::ReachedGoal).mean,
        failure_rate: indicator(&|r| r.outcome.is_physical_failure()),
        failure_by_class,
        localize_per_region,
        localize_total: Stat::of(results.iter().map(|r| r.localize_events.len() as f64)),
        cumulative_collision: Stat::of(results.iter().map(|r| r.cumulative_collision().as_f64())),
        steps: Stat::of(results.iter().map(|r| r.steps as f64)),
        total_reward: Stat::of(results.iter().map(|r| r.total_reward.as_f64())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// JSON report document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub threshold: f64,
    pub batches: Vec<BatchSummary>,
}

impl Report {
    pub fn new(batches: Vec<BatchSummary>) -> Self {
        Self {
            threshold: COLLISION_THRESHOLD,
            batches,
        }
    }

    pub fn read_json(reader: impl Read) -> Result<Self, HarnessError> {
        Ok(serde_json::from_reader(reader)?)
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    strategy: &'a str,
    env: &'a str,
    metric: &'a str,
    region: &'a str,
    mean: f64,
    std: f64,
    n_runs: usize,
    threshold: f64,
}

const CSV_HEADER: [&str; 8] = ["strategy", "env", "metric", "region", "mean", "std", "n_runs", "threshold"];

/// Writes `failure_rate`, one `localize_count` row per region, and
/// `cumulative_collision` per batch (CSV), or the whole report (JSON).
pub fn emit_report(batches: &[BatchSummary], format: ReportFormat, out: impl Write) -> Result<(), HarnessError> {
    match format {
        ReportFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &Report::new(batches.to_vec()))?;
            writeln!(out)?;
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER)?;
            for b in batches {
                let row = |metric, region, s: Stat| CsvRow {
                    strategy: &b.strategy,
                    env: &b.env,
                    metric,
                    region,
                    mean: s.mean,
                    std: s.std,
                    n_runs: b.n_runs,
                    threshold: COLLISION_THRESHOLD,
                };
                w.serialize(row("failure_rate", "", b.failure_rate))?;
                for (region, s) in &b.localize_per_region {
                    w.serialize(row("localize_count", region, *s))?;
                }
                w.serialize(row("cumulative_collision", "", b.cumulative_collision))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
