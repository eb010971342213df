//! Training loop, policy checkpoints, evaluation and the experiment
//! protocols built on top of them.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, Z95};
use crate::env::{EnvConfig, MarketEnv, MarketState, Observation};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::noise::mix_seed;
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::{deterministic_action, ActionScale, AgentConfig, SacAgent, UpdateStats};
use crate::trace::EpisodeTrace;

pub const CHECKPOINT_FORMAT: &str = "gas-storage/policy/1";
pub const STATE_FORMAT: &str = "gas-storage/trainer/1";

const TRAIN_STREAM: u64 = 1;
const AGENT_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const TEST_STREAM: u64 = 4;
const POLICY_STREAM: u64 = 5;

/// Step budget and bookkeeping of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub training_steps: u64,
    pub checkpoint_interval: u64,
    /// Deterministic-policy episodes evaluated at every checkpoint.
    pub eval_episodes: usize,
    pub seed: u64,
    pub tag: String,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            training_steps: 100_000,
            checkpoint_interval: 4_000,
            eval_episodes: 50,
            seed: 0,
            tag: "default".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub run: RunSettings,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        if self.run.training_steps == 0 {
            return Err(Error::config("run.training_steps", "must be positive"));
        }
        if self.run.checkpoint_interval == 0 {
            return Err(Error::config("run.checkpoint_interval", "must be positive"));
        }
        if self.run.eval_episodes == 0 {
            return Err(Error::config("run.eval_episodes", "must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run spec serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.run.seed = seed;
        s
    }

    pub fn scale(&self) -> Result<ActionScale> {
        let (lo, hi) = self.env.market.log_action_bounds();
        ActionScale::new(lo, hi)
    }
}

/// Something that maps observations to log prices.
pub trait Policy: Sync {
    fn action(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<f64>;
}

/// Posts the same log price every month.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    pub log_price: f64,
}

impl Policy for ConstantPolicy {
    fn action(&self, _: &Observation, _: &mut ChaCha8Rng) -> Result<f64> {
        Ok(self.log_price)
    }
}

/// Draws the log price uniformly from `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub lo: f64,
    pub hi: f64,
}

impl Policy for UniformPolicy {
    fn action(&self, _: &Observation, rng: &mut ChaCha8Rng) -> Result<f64> {
        Ok(rng.random_range(self.lo..=self.hi))
    }
}

/// Frozen actor evaluated at the mean of its action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub step: u64,
    pub tag: String,
    pub seed: u64,
    pub config_hash: String,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub scale: ActionScale,
    pub actor: Mlp,
}

impl Policy for PolicyCheckpoint {
    fn action(&self, obs: &Observation, _: &mut ChaCha8Rng) -> Result<f64> {
        deterministic_action(&self.actor, &obs.to_array(), self.scale)
    }
}

impl PolicyCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        check_format(text, CHECKPOINT_FORMAT)?;
        serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The checkpoint's environment with `sigma_s` replaced.
    pub fn env_with_sigma_s(&self, sigma_s: f64) -> EnvConfig {
        let mut env = self.env.clone();
        env.market.sigma_s = sigma_s;
        env
    }
}

fn check_format(text: &str, expected: &str) -> Result<()> {
    #[derive(Deserialize)]
    struct Header {
        format: Option<String>,
    }
    let header: Header = serde_json::from_str(text).map_err(|e| Error::Format(format!("not a JSON object: {e}")))?;
    match header.format.as_deref() {
        Some(f) if f == expected => Ok(()),
        Some(f) => Err(Error::Format(format!(
            "format `{f}` is not supported, expected `{expected}`"
        ))),
        None => Err(Error::Format(format!("missing format tag, expected `{expected}`"))),
    }
}

/// Write through a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Seeds for `n` evaluation episodes derived from `base`.
pub fn evaluation_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| mix_seed(&[base, EVAL_STREAM, i])).collect()
}

/// Seeds for held-out test episodes, disjoint from the evaluation stream.
pub fn test_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| mix_seed(&[base, TEST_STREAM, i])).collect()
}

pub fn run_episode(policy: &dyn Policy, config: &EnvConfig, seed: u64) -> Result<EpisodeTrace> {
    let (mut env, mut obs) = MarketEnv::reset(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, POLICY_STREAM]));
    let mut trace = EpisodeTrace::default();
    while !env.is_done() {
        let out = env.step(policy.action(&obs, &mut rng)?)?;
        obs = out.observation;
        trace.push(&out);
    }
    Ok(trace)
}

/// Mean, standard error and 95% half-width of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std_err: f64,
    pub ci95: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let se = analysis::std_error(samples);
        Some(Self {
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            std_err: se,
            ci95: Z95 * se,
            n: samples.len(),
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }
}

/// Per-episode metrics averaged over evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    /// Sum of rewards over an episode.
    pub reward: MetricSummary,
    pub terminal_bank: MetricSummary,
    /// Mean over months of the squared change in log price.
    pub volatility: MetricSummary,
    /// One minus the fraction of months with a failed delivery.
    pub market_success: MetricSummary,
    /// Closing inventory on the refill check dates; absent when the horizon
    /// contains none.
    pub refill_inventory: Option<MetricSummary>,
    pub price_level: MetricSummary,
}

impl MetricsReport {
    pub fn from_traces(traces: &[EpisodeTrace], initial_log_price: f64) -> Result<Self> {
        if traces.is_empty() || traces.iter().any(|t| t.is_empty()) {
            return Err(Error::Protocol("metrics need at least one non-empty episode".into()));
        }
        let col = |f: &dyn Fn(&EpisodeTrace) -> f64| -> MetricSummary {
            let v: Vec<f64> = traces.iter().map(f).collect();
            MetricSummary::from_samples(&v).expect("non-empty")
        };
        let refill: Vec<f64> = traces.iter().flat_map(|t| t.refill_inventories()).collect();
        Ok(Self {
            episodes: traces.len(),
            reward: col(&|t| t.total_reward()),
            terminal_bank: col(&|t| t.terminal_bank()),
            volatility: col(&|t| t.mean_squared_log_change(initial_log_price)),
            market_success: col(&|t| 1.0 - t.failure_rate()),
            refill_inventory: MetricSummary::from_samples(&refill),
            price_level: col(&|t| t.mean_price()),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub traces: Vec<EpisodeTrace>,
}

/// Run one episode per seed in parallel and aggregate. Results do not
/// depend on the thread count.
pub fn evaluate(policy: &dyn Policy, config: &EnvConfig, seeds: &[u64]) -> Result<Evaluation> {
    let traces = seeds
        .par_iter()
        .map(|&s| run_episode(policy, config, s))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_traces(&traces, config.initial.last_log_price)?;
    Ok(Evaluation { report, traces })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub episodes: u64,
    pub eval_reward: f64,
    pub eval_reward_se: f64,
    pub market_success: f64,
    pub terminal_bank: f64,
    pub volatility: f64,
    pub refill_inventory: Option<f64>,
    pub alpha: f64,
}

pub const LOG_COLUMNS: [&str; 9] = [
    "step",
    "episodes",
    "eval_reward",
    "eval_reward_se",
    "market_success",
    "terminal_bank",
    "volatility",
    "refill_inventory",
    "alpha",
];

pub fn write_log_csv(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LOG_COLUMNS).map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.episodes.to_string(),
            r.eval_reward.to_string(),
            r.eval_reward_se.to_string(),
            r.market_success.to_string(),
            r.terminal_bank.to_string(),
            r.volatility.to_string(),
            r.refill_inventory.map(|v| v.to_string()).unwrap_or_default(),
            r.alpha.to_string(),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub format: String,
    pub spec: RunSpec,
    pub agent: SacAgent,
    pub buffer: ReplayBuffer,
    pub env_state: MarketState,
    pub episode: u64,
    pub step: u64,
    pub log: Vec<LogRow>,
    pub last_stats: Option<UpdateStats>,
}

impl TrainerState {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trainer state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        check_format(text, STATE_FORMAT)?;
        serde_json::from_str(text).map_err(|e| Error::Format(format!("trainer state: {e}")))
    }
}

/// Sequential SAC training on chained episodes.
#[derive(Debug, Clone)]
pub struct Trainer {
    spec: RunSpec,
    agent: SacAgent,
    buffer: ReplayBuffer,
    env: MarketEnv,
    obs: Observation,
    episode: u64,
    step: u64,
    log: Vec<LogRow>,
    last_stats: Option<UpdateStats>,
}

fn episode_seed(run_seed: u64, episode: u64) -> u64 {
    mix_seed(&[run_seed, TRAIN_STREAM, episode])
}

impl Trainer {
    pub fn new(spec: RunSpec) -> Result<Self> {
        spec.validate()?;
        let agent = SacAgent::new(
            spec.agent.clone(),
            spec.env.market.gamma,
            spec.scale()?,
            mix_seed(&[spec.run.seed, AGENT_STREAM]),
        )?;
        let capacity = spec
            .agent
            .buffer_capacity
            .min(spec.run.training_steps as usize)
            .max(spec.agent.batch_size);
        let (env, obs) = MarketEnv::reset(spec.env.clone(), episode_seed(spec.run.seed, 0))?;
        Ok(Self {
            buffer: ReplayBuffer::new(capacity),
            spec,
            agent,
            env,
            obs,
            episode: 0,
            step: 0,
            log: Vec::new(),
            last_stats: None,
        })
    }

    pub fn from_state(state: TrainerState) -> Result<Self> {
        state.spec.validate()?;
        let env = MarketEnv::from_state(state.spec.env.clone(), state.env_state)?;
        Ok(Self {
            obs: env.observation(),
            env,
            spec: state.spec,
            agent: state.agent,
            buffer: state.buffer,
            episode: state.episode,
            step: state.step,
            log: state.log,
            last_stats: state.last_stats,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            format: STATE_FORMAT.into(),
            spec: self.spec.clone(),
            agent: self.agent.clone(),
            buffer: self.buffer.clone(),
            env_state: *self.env.state(),
            episode: self.episode,
            step: self.step,
            log: self.log.clone(),
            last_stats: self.last_stats,
        }
    }

    pub fn spec(&self) -> &RunSpec {
        &self.spec
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Episodes started so far, counting the one in progress.
    pub fn episodes(&self) -> u64 {
        self.episode + 1
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn last_stats(&self) -> Option<UpdateStats> {
        self.last_stats
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.spec.run.training_steps
    }

    pub fn at_checkpoint(&self) -> bool {
        self.step > 0
            && (self.step.is_multiple_of(self.spec.run.checkpoint_interval)
                || self.step == self.spec.run.training_steps)
    }

    /// One environment step followed by the configured number of updates.
    pub fn step(&mut self) -> Result<()> {
        if self.is_finished() {
            return Err(Error::Protocol("training budget already spent".into()));
        }
        let obs = self.obs.to_array();
        let action = if (self.step as usize) < self.spec.agent.warmup_steps {
            self.agent.random_action()
        } else {
            self.agent.explore(&obs)?
        };
        let out = self.env.step(action)?;
        self.buffer.push(Transition {
            obs,
            action: out.log_price,
            reward: out.reward,
            next_obs: out.observation.to_array(),
            done: out.done && self.spec.agent.horizon_is_terminal,
        });
        self.step += 1;
        if self.step as usize >= self.spec.agent.warmup_steps {
            for _ in 0..self.spec.agent.updates_per_step {
                self.last_stats = Some(self.agent.train_step(&self.buffer)?);
            }
        }
        if out.done {
            self.episode += 1;
            let (env, obs) = MarketEnv::reset(self.spec.env.clone(), episode_seed(self.spec.run.seed, self.episode))?;
            self.env = env;
            self.obs = obs;
        } else {
            self.obs = out.observation;
        }
        Ok(())
    }

    pub fn policy(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            step: self.step,
            tag: self.spec.run.tag.clone(),
            seed: self.spec.run.seed,
            config_hash: self.spec.hash(),
            env: self.spec.env.clone(),
            agent: self.spec.agent.clone(),
            scale: self.agent.scale(),
            actor: self.agent.actor.clone(),
        }
    }

    /// Evaluate the current policy, append to the log and return both.
    pub fn checkpoint(&mut self) -> Result<(PolicyCheckpoint, Evaluation)> {
        let policy = self.policy();
        let seeds = evaluation_seeds(self.spec.run.seed, self.spec.run.eval_episodes);
        let eval = evaluate(&policy, &self.spec.env, &seeds)?;
        let r = &eval.report;
        self.log.push(LogRow {
            step: self.step,
            episodes: self.episodes(),
            eval_reward: r.reward.mean,
            eval_reward_se: r.reward.std_err,
            market_success: r.market_success.mean,
            terminal_bank: r.terminal_bank.mean,
            volatility: r.volatility.mean,
            refill_inventory: r.refill_inventory.map(|m| m.mean),
            alpha: self.agent.alpha(),
        });
        Ok((policy, eval))
    }
}

/// Result of a finished training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<PolicyCheckpoint>,
    pub log: Vec<LogRow>,
    pub best: usize,
    pub best_evaluation: Evaluation,
}

impl TrainOutcome {
    pub fn best_checkpoint(&self) -> &PolicyCheckpoint {
        &self.checkpoints[self.best]
    }
}

/// Files written into a run directory.
pub mod layout {
    pub const SPEC: &str = "spec.json";
    pub const STATE: &str = "state.json";
    pub const LOG: &str = "training_log.csv";
    pub const CHECKPOINTS: &str = "checkpoints";
    pub const BEST: &str = "best.json";
    pub const METRICS: &str = "metrics.json";
    pub const TRACES: &str = "traces";
    pub const DIAGNOSTIC: &str = "diagnostic.json";

    pub fn checkpoint_file(step: u64) -> String {
        format!("step_{step:09}.json")
    }

    pub fn trace_file(episode: usize) -> String {
        format!("episode_{episode:03}.csv")
    }
}

pub fn train(spec: RunSpec, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    let trainer = Trainer::new(spec)?;
    if let Some(dir) = run_dir {
        let json = serde_json::to_string_pretty(trainer.spec()).expect("spec serializes");
        write_atomic(&dir.join(layout::SPEC), json.as_bytes())?;
    }
    continue_training(trainer, Vec::new(), run_dir)
}

/// Continue a run from the `state.json` of its directory.
pub fn resume(run_dir: &Path) -> Result<TrainOutcome> {
    let path = run_dir.join(layout::STATE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let trainer = Trainer::from_state(TrainerState::from_json(&text)?)?;
    let mut earlier = Vec::new();
    for row in trainer.log() {
        let p = run_dir
            .join(layout::CHECKPOINTS)
            .join(layout::checkpoint_file(row.step));
        earlier.push(PolicyCheckpoint::load(&p)?);
    }
    continue_training(trainer, earlier, Some(run_dir))
}

/// Drive `trainer` to the end of its budget, checkpointing on the way.
pub fn continue_training(
    mut trainer: Trainer,
    mut checkpoints: Vec<PolicyCheckpoint>,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut last_eval = None;
    while !trainer.is_finished() {
        if let Err(e) = trainer.step() {
            if let (Some(dir), Error::Numeric(_)) = (run_dir, &e) {
                write_diagnostic(dir, &trainer, &e)?;
            }
            return Err(e);
        }
        if trainer.at_checkpoint() {
            let (ckpt, eval) = trainer.checkpoint()?;
            if let Some(dir) = run_dir {
                ckpt.save(&dir.join(layout::CHECKPOINTS).join(layout::checkpoint_file(ckpt.step)))?;
                write_log_csv(trainer.log(), &dir.join(layout::LOG))?;
                write_atomic(&dir.join(layout::STATE), trainer.state().to_json().as_bytes())?;
            }
            checkpoints.push(ckpt);
            last_eval = Some(eval);
        }
    }
    let rewards: Vec<f64> = trainer.log().iter().map(|r| r.eval_reward).collect();
    let best = select_best(&rewards)?;
    let best_evaluation = match last_eval {
        Some(e) if best + 1 == checkpoints.len() => e,
        _ => {
            let seeds = evaluation_seeds(trainer.spec().run.seed, trainer.spec().run.eval_episodes);
            evaluate(&checkpoints[best], &trainer.spec().env, &seeds)?
        }
    };
    if let Some(dir) = run_dir {
        checkpoints[best].save(&dir.join(layout::BEST))?;
        write_evaluation(dir, &best_evaluation)?;
    }
    Ok(TrainOutcome {
        checkpoints,
        log: trainer.log().to_vec(),
        best,
        best_evaluation,
    })
}

/// `metrics.json` plus one CSV per episode under `traces/`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    let json = serde_json::to_string_pretty(&eval.report).expect("report serializes");
    write_atomic(&dir.join(layout::METRICS), json.as_bytes())?;
    for (i, tr) in eval.traces.iter().enumerate() {
        write_atomic(
            &dir.join(layout::TRACES).join(layout::trace_file(i)),
            tr.to_csv_string().as_bytes(),
        )?;
    }
    Ok(())
}

fn write_diagnostic(dir: &Path, trainer: &Trainer, err: &Error) -> Result<()> {
    #[derive(Serialize)]
    struct Diagnostic<'a> {
        error: String,
        step: u64,
        episode: u64,
        log_alpha: f64,
        last_stats: Option<UpdateStats>,
        env_state: &'a MarketState,
        actor_finite: bool,
    }
    let d = Diagnostic {
        error: err.to_string(),
        step: trainer.step,
        episode: trainer.episode,
        log_alpha: trainer.agent.log_alpha(),
        last_stats: trainer.last_stats,
        env_state: trainer.env.state(),
        actor_finite: trainer.agent.actor.all_finite(),
    };
    let json = serde_json::to_string_pretty(&d).expect("diagnostic serializes");
    write_atomic(&dir.join(layout::DIAGNOSTIC), json.as_bytes())
}

/// Index of the highest reward; ties go to the later entry.
pub fn select_best(rewards: &[f64]) -> Result<usize> {
    if rewards.is_empty() {
        return Err(Error::Protocol("no checkpoints to choose from".into()));
    }
    let mut best = 0;
    for (i, &r) in rewards.iter().enumerate() {
        if r >= rewards[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_step: u64,
    pub test_rewards: Vec<f64>,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedProtocolReport {
    pub per_seed: Vec<SeedResult>,
    pub mean: f64,
    pub std_err: f64,
}

impl SeedProtocolReport {
    pub fn from_results(per_seed: Vec<SeedResult>) -> Result<Self> {
        if per_seed.len() < 2 {
            return Err(Error::config("seeds", "the protocol needs at least two training seeds"));
        }
        let means: Vec<f64> = per_seed.iter().map(|s| s.mean_reward).collect();
        Ok(Self {
            mean: means.iter().sum::<f64>() / means.len() as f64,
            std_err: analysis::std_error(&means),
            per_seed,
        })
    }
}

/// Train one run per seed `spec.run.seed + i`, pick each run's best
/// checkpoint and score it on `n_test_runs` held-out episodes.
pub fn seed_protocol(spec: &RunSpec, n_train_seeds: usize, n_test_runs: usize) -> Result<SeedProtocolReport> {
    if n_train_seeds < 2 {
        return Err(Error::config("seeds", "the protocol needs at least two training seeds"));
    }
    if n_test_runs == 0 {
        return Err(Error::config("test_runs", "must be positive"));
    }
    let per_seed = (0..n_train_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let s = spec.with_seed(spec.run.seed + i);
            let outcome = train(s.clone(), None)?;
            let best = outcome.best_checkpoint();
            let eval = evaluate(best, &s.env, &test_seeds(s.run.seed, n_test_runs))?;
            let test_rewards: Vec<f64> = eval.traces.iter().map(|t| t.total_reward()).collect();
            Ok(SeedResult {
                seed: s.run.seed,
                best_step: best.step,
                mean_reward: eval.report.reward.mean,
                test_rewards,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SeedProtocolReport::from_results(per_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma_s: f64,
    pub baseline: MetricsReport,
    pub regulated: MetricsReport,
}

/// Evaluate both frozen policies on identical episode seeds with the supply
/// shock volatility overridden at each grid point.
pub fn sweep_sigma_s(
    baseline: &PolicyCheckpoint,
    regulated: &PolicyCheckpoint,
    grid: &[f64],
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if n_episodes == 0 {
        return Err(Error::config("episodes", "must be positive"));
    }
    let seeds = test_seeds(seed, n_episodes);
    grid.iter()
        .map(|&sigma_s| {
            let b = evaluate(baseline, &baseline.env_with_sigma_s(sigma_s), &seeds)?;
            let r = evaluate(regulated, &regulated.env_with_sigma_s(sigma_s), &seeds)?;
            Ok(SweepPoint {
                sigma_s,
                baseline: b.report,
                regulated: r.report,
            })
        })
        .collect()
}

/// Parse `start:stop:step` (inclusive of `stop` up to rounding) or a
/// comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::config("sigma_s", format!("cannot parse grid `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    match parts.len() {
        1 => text
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect(),
        3 => {
            let v: Vec<f64> = parts
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            let (start, stop, step) = (v[0], v[1], v[2]);
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err(bad());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + step * i as f64).collect())
        }
        _ => Err(bad()),
    }
}
