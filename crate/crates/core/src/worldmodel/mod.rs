//! Per-agent latent world model: encoder, dynamics, reward head, critic
//! with an EMA target copy, and a squashed-Gaussian actor.
//!
//! Dynamics, reward and critic heads see `[z, a, e]`, the actor sees
//! `[z, e]`, where `e` is the message feature vector built by
//! [`Message::features`]. A decentralized model is built with
//! `use_messages = false` and has no message inputs at all.

mod batch;
mod loss;
mod update;

pub use batch::{
    build_training_messages, AgentPredictions, MaskConfig, MaskPlan, TrainingMessages, TrajectoryBatch, Window,
};
pub use loss::{ActorObjective, Forecast, LossReport, ModelObjective, ModelTargets, StepLoss};
pub use update::sequential_update;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamState, AutodiffError, Checkpoint, Matrix, Mlp, MlpSpec, OutputActivation};
use crate::codec::{self, BinGrid, CodecError, PercentileScaler};
use crate::comm::{CommError, Message, MessageLayout, MessageMode};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("non-finite {what} for agent {agent}: {detail}")]
    NonFinite { agent: usize, what: &'static str, detail: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Architecture of one agent's model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub simplex_dim: usize,
    pub encoder_hidden: usize,
    pub dynamics_hidden: usize,
    pub reward_hidden: usize,
    pub critic_hidden: usize,
    pub actor_hidden: usize,
    pub num_layers: usize,
    pub num_bins: usize,
    /// Bins span `[-bin_range, bin_range]` in symlog space.
    pub bin_range: f64,
    pub message_mode: MessageMode,
    pub use_messages: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl ModelConfig {
    pub fn new(n_agents: usize, obs_dim: usize, action_dim: usize) -> Self {
        Self {
            n_agents,
            obs_dim,
            action_dim,
            latent_dim: 64,
            simplex_dim: 8,
            encoder_hidden: 128,
            dynamics_hidden: 128,
            reward_hidden: 128,
            critic_hidden: 128,
            actor_hidden: 64,
            num_layers: 2,
            num_bins: BinGrid::DEFAULT_BINS,
            bin_range: BinGrid::DEFAULT_RANGE,
            message_mode: MessageMode::Full,
            use_messages: true,
            log_std_min: -5.0,
            log_std_max: 2.0,
        }
    }

    pub fn layout(&self) -> MessageLayout {
        MessageLayout::new(self.n_agents, self.action_dim, self.latent_dim, self.message_mode)
    }

    /// Width of the message features fed to the heads (0 when decentralized).
    pub fn message_dim(&self) -> usize {
        if self.use_messages {
            self.layout().feature_dim()
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_agents == 0 || self.obs_dim == 0 || self.action_dim == 0 {
            return Err(ModelError::Config("agent count and dimensions must be positive".into()));
        }
        if self.simplex_dim == 0 || self.latent_dim % self.simplex_dim != 0 {
            return Err(ModelError::Config(format!(
                "latent dim {} is not divisible by simplex dim {}",
                self.latent_dim, self.simplex_dim
            )));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(ModelError::Config("log_std_min must be below log_std_max".into()));
        }
        BinGrid::new(self.num_bins, -self.bin_range, self.bin_range)?;
        Ok(())
    }

    fn head_specs(&self) -> [MlpSpec; 5] {
        let sem = OutputActivation::SemNorm { group: self.simplex_dim };
        let head_in = self.latent_dim + self.action_dim + self.message_dim();
        let l = self.num_layers;
        [
            MlpSpec::new(self.obs_dim, self.encoder_hidden, l, self.latent_dim, sem),
            MlpSpec::new(head_in, self.dynamics_hidden, l, self.latent_dim, sem),
            MlpSpec::new(head_in, self.reward_hidden, l, self.num_bins, OutputActivation::Linear),
            MlpSpec::new(head_in, self.critic_hidden, l, self.num_bins, OutputActivation::Linear),
            MlpSpec::new(self.latent_dim + self.message_dim(), self.actor_hidden, l, 2 * self.action_dim, OutputActivation::Linear),
        ]
    }

    /// Parameters of all trainable heads (target copy excluded).
    pub fn param_count(&self) -> usize {
        self.head_specs().iter().map(MlpSpec::param_count).sum()
    }

    /// Parameters of the encoder, dynamics and reward heads.
    pub fn world_model_param_count(&self) -> usize {
        self.head_specs()[..3].iter().map(MlpSpec::param_count).sum()
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub dynamics_coef: f64,
    pub reward_coef: f64,
    pub q_coef: f64,
    /// Per-step weight decay over the rollout horizon.
    pub rho: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub encoder_lr_scale: f64,
    /// Target critic update: `target = rate * target + (1 - rate) * live`.
    pub target_rate: f64,
    /// Global gradient-norm clip per update (0 disables).
    pub grad_clip: f64,
    /// Feed encoded observations instead of chained predictions into each rollout step.
    pub teacher_forcing: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            dynamics_coef: 20.0,
            reward_coef: 0.1,
            q_coef: 0.1,
            rho: 0.5,
            entropy_coef: 1e-4,
            gamma: 0.99,
            learning_rate: 5e-4,
            encoder_lr_scale: 0.3,
            target_rate: 0.995,
            grad_clip: 20.0,
            teacher_forcing: false,
        }
    }
}

impl LossConfig {
    /// `rho^h` for `h = 0..horizon`.
    pub fn step_weights(&self, horizon: usize) -> Vec<f64> {
        (0..horizon).map(|h| self.rho.powi(h as i32)).collect()
    }
}

/// Largest action magnitude the actor emits; keeps squashed samples strictly inside the box.
pub const ACTION_LIMIT: f64 = 1.0 - 1e-9;

/// A simplex-normalized latent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState(pub Vec<f64>);

impl LatentState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Inference surface the planner needs from a model.
pub trait PlanningModel {
    fn latent_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn encode(&self, obs: &[f64]) -> Result<Vec<f64>, ModelError>;
    /// Network input derived from a message (empty for models without message inputs).
    fn message_features(&self, message: &Message) -> Result<Vec<f64>, ModelError>;
    /// One latent step for every row; `message` is shared by all rows.
    /// Returns next latents and decoded rewards.
    fn step_batch(&self, z: &Matrix, a: &Matrix, message: &[f64]) -> Result<(Matrix, Vec<f64>), ModelError>;
    /// Decoded critic values for every row.
    fn value_batch(&self, z: &Matrix, a: &Matrix, message: &[f64]) -> Result<Vec<f64>, ModelError>;
    /// Actions for every row; `noise` (rows x action_dim standard normals)
    /// selects a reparameterized sample, `None` the squashed mean.
    fn policy_batch(&self, z: &Matrix, message: &[f64], noise: Option<&Matrix>) -> Result<Matrix, ModelError>;
}

#[derive(Clone, Debug)]
pub(crate) struct Optimizers {
    pub encoder: AdamState,
    pub dynamics: AdamState,
    pub reward: AdamState,
    pub critic: AdamState,
    pub actor: AdamState,
}

/// One agent's heads, target critic, optimizer state and Q scale.
#[derive(Clone, Debug)]
pub struct AgentModel {
    index: usize,
    cfg: ModelConfig,
    grid: BinGrid,
    centers: Arc<Vec<f64>>,
    pub(crate) encoder: Mlp,
    pub(crate) dynamics: Mlp,
    pub(crate) reward: Mlp,
    pub(crate) critic: Mlp,
    pub(crate) target_critic: Mlp,
    pub(crate) actor: Mlp,
    pub(crate) optim: Optimizers,
    pub(crate) scaler: PercentileScaler,
}

impl AgentModel {
    pub fn new(index: usize, cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        if index >= cfg.n_agents {
            return Err(ModelError::Config(format!("agent index {index} out of range for {} agents", cfg.n_agents)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [enc, dyn_, rew, crit, act] = cfg.head_specs();
        let encoder = Mlp::new(&format!("agent{index}.encoder"), enc, &mut rng)?;
        let dynamics = Mlp::new(&format!("agent{index}.dynamics"), dyn_, &mut rng)?;
        let mut reward = Mlp::new(&format!("agent{index}.reward"), rew, &mut rng)?;
        let mut critic = Mlp::new(&format!("agent{index}.critic"), crit, &mut rng)?;
        let actor = Mlp::new(&format!("agent{index}.actor"), act, &mut rng)?;
        reward.zero_output_layer();
        critic.zero_output_layer();
        let mut target_critic = critic.clone();
        target_critic.copy_from(&critic);
        let optim = Optimizers {
            encoder: AdamState::new(encoder.params()),
            dynamics: AdamState::new(dynamics.params()),
            reward: AdamState::new(reward.params()),
            critic: AdamState::new(critic.params()),
            actor: AdamState::new(actor.params()),
        };
        let grid = BinGrid::new(cfg.num_bins, -cfg.bin_range, cfg.bin_range)?;
        let centers = Arc::new(grid.centers().to_vec());
        Ok(Self {
            index,
            cfg: cfg.clone(),
            grid,
            centers,
            encoder,
            dynamics,
            reward,
            critic,
            target_critic,
            actor,
            optim,
            scaler: PercentileScaler::default(),
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub(crate) fn centers(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.centers)
    }

    pub fn q_scale(&self) -> f64 {
        self.scaler.scale
    }

    pub fn scaler_mut(&mut self) -> &mut PercentileScaler {
        &mut self.scaler
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn dynamics(&self) -> &Mlp {
        &self.dynamics
    }

    pub fn reward_head(&self) -> &Mlp {
        &self.reward
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn target_critic(&self) -> &Mlp {
        &self.target_critic
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    /// All heads, mutable, in the order encoder, dynamics, reward, critic, target critic, actor.
    pub fn heads_mut(&mut self) -> [&mut Mlp; 6] {
        [&mut self.encoder, &mut self.dynamics, &mut self.reward, &mut self.critic, &mut self.target_critic, &mut self.actor]
    }

    /// Total trainable parameters (target copy excluded).
    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.dynamics.param_count()
            + self.reward.param_count()
            + self.critic.param_count()
            + self.actor.param_count()
    }

    pub fn sync_target(&mut self) {
        self.target_critic.copy_from(&self.critic);
    }

    pub(crate) fn update_target(&mut self, rate: f64) {
        self.target_critic.ema_from(&self.critic, rate);
    }

    /// Message features this model consumes: the full feature vector, or
    /// nothing for a decentralized model.
    pub fn message_input(&self, message: &Message) -> Result<Vec<f64>, ModelError> {
        if !self.cfg.use_messages {
            return Ok(Vec::new());
        }
        let expected = self.cfg.layout();
        if message.layout() != expected {
            return Err(CommError::LayoutMismatch { expected, actual: message.layout() }.into());
        }
        Ok(message.features())
    }

    pub fn encode_batch(&self, obs: &Matrix) -> Result<Matrix, ModelError> {
        Ok(self.encoder.infer(obs)?)
    }

    pub fn encode_state(&self, obs: &[f64]) -> Result<LatentState, ModelError> {
        Ok(LatentState(self.encoder.forward_vector(obs)?))
    }

    fn check_message(&self, message: &[f64]) -> Result<(), ModelError> {
        if message.len() != self.cfg.message_dim() {
            return Err(CommError::Length { what: "message features", expected: self.cfg.message_dim(), actual: message.len() }.into());
        }
        Ok(())
    }

    /// Decoded scalar for each row of a logits matrix.
    pub(crate) fn decode_rows(&self, logits: &Matrix) -> Vec<f64> {
        (0..logits.rows())
            .map(|r| codec::twohot_decode_logits(logits.row(r), &self.grid).expect("head width matches grid"))
            .collect()
    }

    /// `(z_next, reward_logits)` for a single latent, action and message.
    pub fn predict_step(&self, z: &LatentState, a: &[f64], e: &Message) -> Result<(LatentState, Vec<f64>), ModelError> {
        let feats = self.message_input(e)?;
        let prefix = Matrix::row_vector([z.as_slice(), a].concat());
        let z_next = self.dynamics.infer_shared_suffix(&prefix, &feats)?;
        let logits = self.reward.infer_shared_suffix(&prefix, &feats)?;
        Ok((LatentState(z_next.into_vec()), logits.into_vec()))
    }

    /// Decoded critic value; `use_target` selects the EMA copy.
    pub fn critic_value(&self, z: &LatentState, a: &[f64], e: &Message, use_target: bool) -> Result<f64, ModelError> {
        let feats = self.message_input(e)?;
        let prefix = Matrix::row_vector([z.as_slice(), a].concat());
        let head = if use_target { &self.target_critic } else { &self.critic };
        let logits = head.infer_shared_suffix(&prefix, &feats)?;
        Ok(self.decode_rows(&logits)[0])
    }

    /// Splits raw actor output into `(mean, log_std)` rows with the smooth clamp applied.
    fn actor_head(&self, z: &Matrix, feats: &[f64]) -> Result<(Matrix, Matrix), ModelError> {
        let out = self.actor.infer_shared_suffix(z, feats)?;
        let a = self.cfg.action_dim;
        let mean = out.slice_cols(0, a);
        let (lo, hi) = (self.cfg.log_std_min, self.cfg.log_std_max);
        let log_std = out.slice_cols(a, a).map(|x| lo + 0.5 * (hi - lo) * (x.tanh() + 1.0));
        Ok((mean, log_std))
    }

    /// Squashed Gaussian action and its log-density (tanh correction included).
    /// With `stochastic = false` the action is `tanh(mean)` and the density is
    /// evaluated there.
    pub fn actor_sample(&self, z: &LatentState, e: &Message, stochastic: bool, rng: &mut impl Rng) -> Result<(Vec<f64>, f64), ModelError> {
        let feats = self.message_input(e)?;
        let (mean, log_std) = self.actor_head(&Matrix::row_vector(z.0.clone()), &feats)?;
        let mut action = Vec::with_capacity(self.cfg.action_dim);
        let mut log_prob = 0.0;
        for d in 0..self.cfg.action_dim {
            let eps: f64 = if stochastic { rng.sample(StandardNormal) } else { 0.0 };
            let ls = log_std.get(0, d);
            let u = mean.get(0, d) + ls.exp() * eps;
            action.push(u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT));
            log_prob += -0.5 * eps * eps - ls - 0.5 * (2.0 * std::f64::consts::PI).ln() - crate::autodiff::kernels::log1m_tanh_sq(u);
        }
        Ok((action, log_prob))
    }

    fn prefix(z: &Matrix, a: &Matrix) -> Matrix {
        Matrix::hconcat(&[z, a])
    }

    /// Serializes parameters, target critic, optimizer moments and Q scale under `agent{index}.`.
    pub fn save_into(&self, ckpt: &mut Checkpoint) {
        let p = format!("agent{}", self.index);
        let groups: [(&Mlp, Option<&AdamState>, &str); 6] = [
            (&self.encoder, Some(&self.optim.encoder), "encoder"),
            (&self.dynamics, Some(&self.optim.dynamics), "dynamics"),
            (&self.reward, Some(&self.optim.reward), "reward"),
            (&self.critic, Some(&self.optim.critic), "critic"),
            (&self.target_critic, None, "target_critic"),
            (&self.actor, Some(&self.optim.actor), "actor"),
        ];
        for (mlp, adam, name) in groups {
            for (i, t) in mlp.params().iter().enumerate() {
                ckpt.insert(format!("{p}.{name}.{i}"), t.value.clone());
            }
            if let Some(s) = adam {
                for (i, (m, v)) in s.first_moment.iter().zip(&s.second_moment).enumerate() {
                    ckpt.insert(format!("{p}.{name}.{i}.adam_m"), m.clone());
                    ckpt.insert(format!("{p}.{name}.{i}.adam_v"), v.clone());
                }
                ckpt.insert_scalar(format!("{p}.{name}.adam_step"), s.step_count as f64);
            }
        }
        ckpt.insert_scalar(format!("{p}.q_scale"), self.scaler.scale);
    }

    /// Restores everything written by [`AgentModel::save_into`]; shapes must match this model's config.
    pub fn load_from(&mut self, ckpt: &Checkpoint) -> Result<(), ModelError> {
        let p = format!("agent{}", self.index);
        let Self { encoder, dynamics, reward, critic, target_critic, actor, optim, .. } = self;
        let groups: [(&mut Mlp, Option<&mut AdamState>, &str); 6] = [
            (encoder, Some(&mut optim.encoder), "encoder"),
            (dynamics, Some(&mut optim.dynamics), "dynamics"),
            (reward, Some(&mut optim.reward), "reward"),
            (critic, Some(&mut optim.critic), "critic"),
            (target_critic, None, "target_critic"),
            (actor, Some(&mut optim.actor), "actor"),
        ];
        for (mlp, adam, name) in groups {
            for (i, t) in mlp.params_mut().iter_mut().enumerate() {
                t.value = ckpt.expect(&format!("{p}.{name}.{i}"), t.value.shape())?.clone();
            }
            if let Some(s) = adam {
                for (i, (m, v)) in s.first_moment.iter_mut().zip(s.second_moment.iter_mut()).enumerate() {
                    *m = ckpt.expect(&format!("{p}.{name}.{i}.adam_m"), m.shape())?.clone();
                    *v = ckpt.expect(&format!("{p}.{name}.{i}.adam_v"), v.shape())?.clone();
                }
                s.step_count = ckpt.scalar(&format!("{p}.{name}.adam_step"))? as u64;
            }
        }
        self.scaler.scale = ckpt.scalar(&format!("{p}.q_scale"))?;
        Ok(())
    }
}

impl PlanningModel for AgentModel {
    fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    fn action_dim(&self) -> usize {
        self.cfg.action_dim
    }

    fn encode(&self, obs: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.encoder.forward_vector(obs)?)
    }

    fn message_features(&self, message: &Message) -> Result<Vec<f64>, ModelError> {
        self.message_input(message)
    }

    fn step_batch(&self, z: &Matrix, a: &Matrix, message: &[f64]) -> Result<(Matrix, Vec<f64>), ModelError> {
        self.check_message(message)?;
        let prefix = Self::prefix(z, a);
        let z_next = self.dynamics.infer_shared_suffix(&prefix, message)?;
        let logits = self.reward.infer_shared_suffix(&prefix, message)?;
        Ok((z_next, self.decode_rows(&logits)))
    }

    fn value_batch(&self, z: &Matrix, a: &Matrix, message: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_message(message)?;
        let logits = self.critic.infer_shared_suffix(&Self::prefix(z, a), message)?;
        Ok(self.decode_rows(&logits))
    }

    fn policy_batch(&self, z: &Matrix, message: &[f64], noise: Option<&Matrix>) -> Result<Matrix, ModelError> {
        self.check_message(message)?;
        let (mean, log_std) = self.actor_head(z, message)?;
        let mut out = mean.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let u = match noise {
                Some(n) => mean.data()[i] + log_std.data()[i].exp() * n.data()[i],
                None => mean.data()[i],
            };
            *v = u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT);
        }
        Ok(out)
    }
}
