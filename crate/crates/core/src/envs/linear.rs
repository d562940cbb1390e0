//! Coupled linear team: `x^i' = A x^i + B a^i + C a^{i-1} + w`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_actions, EnvError, EnvInterface, StepResult};

/// Scalar-times-identity coefficients per agent state of width `state_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearTeamConfig {
    pub n_agents: usize,
    pub state_dim: usize,
    pub a: f64,
    pub b: f64,
    /// Weight of the predecessor's action; 0 decouples the agents.
    pub coupling: f64,
    pub noise_std: f64,
    /// Quadratic action cost in the shared reward.
    pub action_cost: f64,
    pub episode_limit: usize,
    pub init_range: f64,
}

impl Default for LinearTeamConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            state_dim: 2,
            a: 0.9,
            b: 0.5,
            coupling: 0.8,
            noise_std: 0.05,
            action_cost: 0.01,
            episode_limit: 50,
            init_range: 1.0,
        }
    }
}

pub struct LinearTeamEnv {
    cfg: LinearTeamConfig,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    x: Vec<DVector<f64>>,
    t: usize,
    done: bool,
    ready: bool,
    rng: ChaCha8Rng,
}

/// Noise-free trajectory and return from [`LinearTeamEnv::oracle_rollout`].
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRollout {
    /// `states[k][agent]`, `k = 0..=H`.
    pub states: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<f64>,
    pub total: f64,
}

impl LinearTeamEnv {
    pub fn new(cfg: LinearTeamConfig) -> Result<Self, EnvError> {
        if cfg.n_agents == 0 || cfg.state_dim == 0 || cfg.episode_limit == 0 || cfg.noise_std < 0.0 {
            return Err(EnvError::Config("linear team needs positive sizes and a non-negative noise std".into()));
        }
        let eye = DMatrix::<f64>::identity(cfg.state_dim, cfg.state_dim);
        Ok(Self {
            a: &eye * cfg.a,
            b: &eye * cfg.b,
            c: &eye * cfg.coupling,
            x: vec![DVector::zeros(cfg.state_dim); cfg.n_agents],
            t: 0,
            done: false,
            ready: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            cfg,
        })
    }

    pub fn config(&self) -> &LinearTeamConfig {
        &self.cfg
    }

    /// Noise-free successor of `x` under the joint action.
    pub fn transition(&self, x: &[DVector<f64>], actions: &[Vec<f64>]) -> Vec<DVector<f64>> {
        (0..self.cfg.n_agents)
            .map(|i| {
                let mut next = &self.a * &x[i] + &self.b * DVector::from_column_slice(&actions[i]);
                if i > 0 {
                    next += &self.c * DVector::from_column_slice(&actions[i - 1]);
                }
                next
            })
            .collect()
    }

    fn reward(&self, x: &[DVector<f64>], actions: &[Vec<f64>]) -> f64 {
        let n = self.cfg.n_agents as f64;
        let state: f64 = x.iter().map(|v| v.norm_squared()).sum();
        let act: f64 = actions.iter().flatten().map(|a| a * a).sum();
        -(state + self.cfg.action_cost * act) / n
    }

    /// Exact trajectory from `state` (`state[agent]`) under `joint_actions[k][agent]`.
    pub fn oracle_rollout(&self, state: &[Vec<f64>], joint_actions: &[Vec<Vec<f64>>]) -> OracleRollout {
        let mut x: Vec<DVector<f64>> = state.iter().map(|s| DVector::from_column_slice(s)).collect();
        let mut states = vec![state.to_vec()];
        let mut rewards = Vec::with_capacity(joint_actions.len());
        for acts in joint_actions {
            x = self.transition(&x, acts);
            rewards.push(self.reward(&x, acts));
            states.push(x.iter().map(|v| v.as_slice().to_vec()).collect());
        }
        OracleRollout { total: rewards.iter().sum(), states, rewards }
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        self.x.iter().map(|v| v.as_slice().to_vec()).collect()
    }
}

impl EnvInterface for LinearTeamEnv {
    fn name(&self) -> &'static str {
        "linear_team"
    }
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }
    fn obs_dim(&self) -> usize {
        self.cfg.state_dim
    }
    fn act_dim(&self) -> usize {
        self.cfg.state_dim
    }
    fn episode_limit(&self) -> usize {
        self.cfg.episode_limit
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.cfg.init_range;
        for x in &mut self.x {
            for v in x.iter_mut() {
                *v = self.rng.gen_range(-r..=r);
            }
        }
        self.t = 0;
        self.done = false;
        self.ready = true;
        self.observe()
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError> {
        if !self.ready {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        check_actions(actions, self.cfg.n_agents, self.cfg.state_dim)?;
        let mut next = self.transition(&self.x, actions);
        if self.cfg.noise_std > 0.0 {
            let n = Normal::new(0.0, self.cfg.noise_std).expect("finite std");
            next.iter_mut().flat_map(|v| v.iter_mut()).for_each(|v| *v += n.sample(&mut self.rng));
        }
        self.x = next;
        self.t += 1;
        let reward = self.reward(&self.x, actions);
        self.done = self.t >= self.cfg.episode_limit;
        Ok(StepResult { obs: self.observe(), reward, done: self.done, truncated: self.done, success: false })
    }

    fn state(&self) -> Vec<f64> {
        self.x.iter().flat_map(|v| v.iter().copied()).collect()
    }
}
