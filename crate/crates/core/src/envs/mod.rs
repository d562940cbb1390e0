//! Toy cooperative environments with a shared scalar reward.

mod corridor;
mod linear;
mod pushbox;

pub use corridor::{CorridorGateConfig, CorridorGateEnv};
pub use linear::{LinearTeamConfig, LinearTeamEnv, OracleRollout};
pub use pushbox::{PushBox2DConfig, PushBox2DEnv};

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("expected {expected} agent actions of width {width}, got {detail}")]
    ActionShape { expected: usize, width: usize, detail: String },
    #[error("action component {value} of agent {agent} outside [-1, 1]")]
    ActionOutOfBounds { agent: usize, value: f64 },
    #[error("invalid environment configuration: {0}")]
    Config(String),
}

/// Outcome of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<Vec<f64>>,
    /// Shared by all agents.
    pub reward: f64,
    pub done: bool,
    /// True when `done` came from the episode limit rather than a terminal state.
    pub truncated: bool,
    pub success: bool,
}

pub trait EnvInterface {
    fn name(&self) -> &'static str;
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn episode_limit(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError>;
    /// Full simulator state, for probes and oracles.
    fn state(&self) -> Vec<f64>;
}

/// Rejects malformed or out-of-range joint actions.
pub(crate) fn check_actions(actions: &[Vec<f64>], n: usize, width: usize) -> Result<(), EnvError> {
    if actions.len() != n || actions.iter().any(|a| a.len() != width) {
        return Err(EnvError::ActionShape {
            expected: n,
            width,
            detail: format!("{:?}", actions.iter().map(Vec::len).collect::<Vec<_>>()),
        });
    }
    for (agent, a) in actions.iter().enumerate() {
        if let Some(&value) = a.iter().find(|v| !(v.abs() <= 1.0 + 1e-9)) {
            return Err(EnvError::ActionOutOfBounds { agent, value });
        }
    }
    Ok(())
}

/// Observation noise and action delay, both off by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvHooks {
    pub obs_noise_std: f64,
    pub action_delay: usize,
}

/// Applies [`EnvHooks`] around any environment.
pub struct Hooked<E> {
    inner: E,
    hooks: EnvHooks,
    rng: ChaCha8Rng,
    pending: VecDeque<Vec<Vec<f64>>>,
}

impl<E: EnvInterface> Hooked<E> {
    pub fn new(inner: E, hooks: EnvHooks) -> Self {
        Self { inner, hooks, rng: ChaCha8Rng::seed_from_u64(0), pending: VecDeque::new() }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn noisy(&mut self, mut obs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        if self.hooks.obs_noise_std > 0.0 {
            let n = Normal::new(0.0, self.hooks.obs_noise_std).expect("finite std");
            obs.iter_mut().flatten().for_each(|v| *v += n.sample(&mut self.rng));
        }
        obs
    }
}

impl<E: EnvInterface> EnvInterface for Hooked<E> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn act_dim(&self) -> usize {
        self.inner.act_dim()
    }
    fn episode_limit(&self) -> usize {
        self.inner.episode_limit()
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0b5e);
        self.pending = std::iter::repeat(vec![vec![0.0; self.act_dim()]; self.n_agents()]).take(self.hooks.action_delay).collect();
        let obs = self.inner.reset(seed);
        self.noisy(obs)
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError> {
        check_actions(actions, self.n_agents(), self.act_dim())?;
        self.pending.push_back(actions.to_vec());
        let applied = self.pending.pop_front().expect("queue holds the current action");
        let mut r = self.inner.step(&applied)?;
        r.obs = self.noisy(std::mem::take(&mut r.obs));
        Ok(r)
    }

    fn state(&self) -> Vec<f64> {
        self.inner.state()
    }
}

/// Environment selection as it appears in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    CorridorGate,
    PushBox2d,
    LinearTeam,
}

impl std::str::FromStr for EnvKind {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s {
            "corridor_gate" => Ok(Self::CorridorGate),
            "push_box2d" => Ok(Self::PushBox2d),
            "linear_team" => Ok(Self::LinearTeam),
            other => Err(EnvError::Config(format!("unknown environment {other:?}"))),
        }
    }
}
