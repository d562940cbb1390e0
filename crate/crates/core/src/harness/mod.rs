//! Training, evaluation and ablation loops around the models, planner and
//! environments, with their on-disk formats.
//!
//! A run directory holds `config.toml`, `metrics.csv`, `checkpoint.bin`
//! and, when enabled, `episodes.jsonl`.

mod ablation;
mod buffer;
mod config;
mod eval;
mod metrics;
mod train;

pub use ablation::{ablate_prediction, AblationReport, AblationRow};
pub use buffer::{Episode, ReplayBuffer};
pub use config::{RunConfig, SCHEMA};
pub use eval::{evaluate, evaluate_checkpoint, EvalSummary};
pub use metrics::{
    export_trajectories, obs_digest, read_episode_log, read_metrics, EpisodeLog, MetricsRow, MetricsWriter, StepRecord,
};
pub use train::{train, TrainOutcome};

use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint};
use crate::comm::{transmit, CommCache, CommError, LinkModel, MessageSchedule};
use crate::envs::EnvError;
use crate::planner::{plan, ActionDistribution, PlannerConfig, PlannerError};
use crate::worldmodel::{AgentModel, ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("training diverged at step {step}: {detail}; last good state saved to {}", checkpoint.display())]
    Diverged { step: u64, detail: String, checkpoint: PathBuf },
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const EPISODE_LOG_FILE: &str = "episodes.jsonl";

/// Decorrelated sub-seed for stream `tag`.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut x = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// All agents of a run, in planning order.
#[derive(Clone, Debug)]
pub struct Team {
    pub cfg: ModelConfig,
    pub agents: Vec<AgentModel>,
}

impl Team {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, HarnessError> {
        let agents = (0..cfg.n_agents)
            .map(|i| AgentModel::new(i, cfg, derive_seed(seed, 100 + i as u64)))
            .collect::<Result<_, _>>()?;
        Ok(Self { cfg: cfg.clone(), agents })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        let mut c = Checkpoint::new();
        for a in &self.agents {
            a.save_into(&mut c);
        }
        c.insert_scalar("step", step as f64);
        c
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<(), HarnessError> {
        Ok(self.to_checkpoint(step).save(path)?)
    }

    /// Builds a team for `cfg` and fills it from `path`; returns the saved step.
    pub fn load(cfg: &ModelConfig, path: &Path) -> Result<(Self, u64), HarnessError> {
        let ckpt = Checkpoint::load(path)?;
        let mut team = Self::new(cfg, 0)?;
        for a in &mut team.agents {
            a.load_from(&ckpt)?;
        }
        Ok((team, ckpt.scalar("step")? as u64))
    }
}

/// Counters over every predecessor-to-successor message of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CommStats {
    pub sent: usize,
    pub delivered: usize,
    pub cache_hits: usize,
    pub invalidated: usize,
}

/// Links and caches of the message chain; link `i` feeds agent `i`.
pub struct Network {
    links: Vec<LinkModel>,
    caches: Vec<CommCache>,
    use_cache: bool,
    pub stats: CommStats,
}

impl Network {
    pub fn new(n_agents: usize, drop_prob: f64, use_cache: bool, seed: u64) -> Self {
        Self {
            links: (0..n_agents).map(|i| LinkModel::new(drop_prob, derive_seed(seed, 200 + i as u64))).collect(),
            caches: (0..n_agents).map(|_| CommCache::new(n_agents)).collect(),
            use_cache,
            stats: CommStats::default(),
        }
    }

    /// Forgets cached predictions, e.g. at an episode boundary.
    pub fn reset_caches(&mut self) {
        self.caches.iter_mut().for_each(CommCache::clear);
    }

    fn deliver(&mut self, receiver: usize, schedule: &MessageSchedule, step: u64) -> MessageSchedule {
        let expected: Vec<usize> = (0..receiver).collect();
        let (out, outcome) = if self.use_cache {
            transmit(schedule, &mut self.links[receiver], &mut self.caches[receiver], &expected, step)
        } else {
            let mut scratch = CommCache::new(self.caches.len());
            transmit(schedule, &mut self.links[receiver], &mut scratch, &expected, step)
        };
        self.stats.sent += 1;
        self.stats.delivered += usize::from(outcome.delivered);
        self.stats.cache_hits += outcome.cache_hits;
        self.stats.invalidated += outcome.invalidated;
        out
    }
}

/// Joint action chosen by planning agent by agent.
#[derive(Clone, Debug)]
pub struct JointPlan {
    pub actions: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
}

/// Agents plan in index order; each receives its predecessors' predicted
/// trajectories over `net` and appends its own before passing them on.
#[allow(clippy::too_many_arguments)]
pub fn plan_joint(
    team: &Team,
    obs: &[Vec<f64>],
    warm: &mut [Option<ActionDistribution>],
    cfg: &PlannerConfig,
    explore: bool,
    net: &mut Network,
    step: u64,
    rng: &mut impl Rng,
) -> Result<JointPlan, HarnessError> {
    let mut schedule = MessageSchedule::empty(team.cfg.layout(), cfg.horizon);
    let mut actions = Vec::with_capacity(team.n_agents());
    let mut iterations = Vec::with_capacity(team.n_agents());
    for (i, agent) in team.agents.iter().enumerate() {
        let incoming = if i == 0 { schedule } else { net.deliver(i, &schedule, step) };
        let out = plan(agent, &obs[i], &incoming, warm[i].as_ref(), cfg, explore, rng)?;
        schedule = incoming.append_trajectory(i, &out.trajectory.latents, &out.trajectory.actions)?;
        actions.push(out.action);
        iterations.push(out.iterations);
        warm[i] = Some(out.distribution);
    }
    Ok(JointPlan { actions, iterations })
}
