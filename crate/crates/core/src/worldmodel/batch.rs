//! Training batches and the reconstruction of training-time messages.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::Matrix;
use crate::comm::{Message, MessageLayout};

/// A time-contiguous slice of one episode as stored in the replay buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `obs[k][agent]`, one more entry than `actions`.
    pub obs: Vec<Vec<Vec<f64>>>,
    /// `actions[k][agent]`.
    pub actions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<f64>,
    /// The window ends where the episode terminated (no bootstrap past it).
    pub terminal: bool,
    pub episode: u64,
    pub start: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Stacked training batch for a rollout of `horizon` steps with n-step targets.
///
/// Matrices are `batch x dim`. The n-step sums and bootstrap points are
/// precomputed per rollout step; the bootstrap latents themselves are
/// produced by the live models at update time.
#[derive(Clone, Debug)]
pub struct TrajectoryBatch {
    pub horizon: usize,
    pub n_agents: usize,
    /// `obs[agent][h]` for `h = 0..=horizon`.
    pub obs: Vec<Vec<Matrix>>,
    /// `actions[agent][h]` for `h < horizon`.
    pub actions: Vec<Vec<Matrix>>,
    /// `rewards[h][b]`.
    pub rewards: Vec<Vec<f64>>,
    /// Discounted reward sum of the n-step target at `h`.
    pub returns: Vec<Vec<f64>>,
    /// Discount applied to the bootstrap value; 0 past a terminal state.
    pub boot_discount: Vec<Vec<f64>>,
    /// `boot_obs[agent][h]`: observation at the bootstrap index.
    pub boot_obs: Vec<Vec<Matrix>>,
    /// `boot_actions[agent][h]`: executed action at the bootstrap index (zeros when absent).
    pub boot_actions: Vec<Vec<Matrix>>,
    /// `boot_action_valid[h][b]`: an executed action exists at the bootstrap index.
    pub boot_action_valid: Vec<Vec<bool>>,
}

impl TrajectoryBatch {
    pub fn batch_size(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    /// Builds the batch from windows of at least `horizon` transitions.
    /// Targets use up to `n_step` rewards, truncated at the window end.
    pub fn from_windows(windows: &[Window], horizon: usize, n_step: usize, gamma: f64) -> Result<Self, ModelError> {
        let first = windows.first().ok_or_else(|| ModelError::Config("empty batch".into()))?;
        if horizon == 0 || n_step == 0 {
            return Err(ModelError::Config("horizon and n-step must be positive".into()));
        }
        let n_agents = first.obs[0].len();
        let obs_dim: Vec<usize> = first.obs[0].iter().map(Vec::len).collect();
        let act_dim: Vec<usize> = first.actions[0].iter().map(Vec::len).collect();
        for w in windows {
            if w.len() < horizon || w.obs.len() != w.len() + 1 || w.rewards.len() != w.len() {
                return Err(ModelError::Config(format!(
                    "window of {} transitions is malformed or shorter than horizon {horizon}",
                    w.len()
                )));
            }
        }
        let stack = |dim: usize, f: &dyn Fn(&Window) -> Option<Vec<f64>>| -> Matrix {
            let mut m = Matrix::zeros(windows.len(), dim);
            for (b, w) in windows.iter().enumerate() {
                if let Some(v) = f(w) {
                    m.row_mut(b).copy_from_slice(&v);
                }
            }
            m
        };
        let obs = (0..n_agents)
            .map(|i| (0..=horizon).map(|h| stack(obs_dim[i], &|w| Some(w.obs[h][i].clone()))).collect())
            .collect();
        let actions = (0..n_agents)
            .map(|i| (0..horizon).map(|h| stack(act_dim[i], &|w| Some(w.actions[h][i].clone()))).collect())
            .collect();
        let rewards = (0..horizon).map(|h| windows.iter().map(|w| w.rewards[h]).collect()).collect();

        let boot_index = |w: &Window, h: usize| h + n_step.min(w.len() - h);
        let mut returns = vec![Vec::with_capacity(windows.len()); horizon];
        let mut boot_discount = vec![Vec::with_capacity(windows.len()); horizon];
        let mut boot_action_valid = vec![Vec::with_capacity(windows.len()); horizon];
        for w in windows {
            for h in 0..horizon {
                let k = boot_index(w, h) - h;
                let ret: f64 = (0..k).map(|j| gamma.powi(j as i32) * w.rewards[h + j]).sum();
                returns[h].push(ret);
                let end = h + k == w.len();
                boot_discount[h].push(if end && w.terminal { 0.0 } else { gamma.powi(k as i32) });
                boot_action_valid[h].push(!end);
            }
        }
        let boot_obs = (0..n_agents)
            .map(|i| (0..horizon).map(|h| stack(obs_dim[i], &|w| Some(w.obs[boot_index(w, h)][i].clone()))).collect())
            .collect();
        let boot_actions = (0..n_agents)
            .map(|i| {
                (0..horizon)
                    .map(|h| stack(act_dim[i], &|w| w.actions.get(boot_index(w, h)).map(|a| a[i].clone())))
                    .collect()
            })
            .collect();
        Ok(Self { horizon, n_agents, obs, actions, rewards, returns, boot_discount, boot_obs, boot_actions, boot_action_valid })
    }
}

/// Masking options for training-time messages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub drop_prob: f64,
    pub permute: bool,
}

/// One draw of the training-time masking: the agent order and per-(sample, slot) drops.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub order: Vec<usize>,
    /// `dropped[b][slot]`; applies to every rollout step of sample `b`.
    pub dropped: Vec<Vec<bool>>,
}

impl MaskPlan {
    pub fn identity(n_agents: usize, batch: usize) -> Self {
        Self { order: (0..n_agents).collect(), dropped: vec![vec![false; n_agents]; batch] }
    }

    pub fn sample(n_agents: usize, batch: usize, cfg: &MaskConfig, rng: &mut impl Rng) -> Self {
        let mut order: Vec<usize> = (0..n_agents).collect();
        if cfg.permute {
            order.shuffle(rng);
        }
        let p = cfg.drop_prob.clamp(0.0, 1.0);
        let dropped = (0..batch)
            .map(|_| (0..n_agents).map(|_| p > 0.0 && rng.gen::<f64>() < p).collect())
            .collect();
        Self { order, dropped }
    }

    /// Agents that precede `agent` in the update order.
    pub fn predecessors(&self, agent: usize) -> &[usize] {
        let pos = self.order.iter().position(|&a| a == agent).expect("agent in order");
        &self.order[..pos]
    }
}

/// An agent's predicted latents on a batch, published to its successors.
#[derive(Clone, Debug)]
pub struct AgentPredictions {
    /// Chained rollout latents `z_h`, `h < horizon`.
    pub rollout: Vec<Matrix>,
    /// Encoded bootstrap observations per rollout step.
    pub bootstrap: Vec<Matrix>,
}

/// Message features per rollout step and per bootstrap point, `batch x feature_dim`.
#[derive(Clone, Debug)]
pub struct TrainingMessages {
    pub rollout: Vec<Matrix>,
    pub bootstrap: Vec<Matrix>,
}

impl TrainingMessages {
    /// Zero-width messages for a decentralized model.
    pub fn none(batch: usize, horizon: usize) -> Self {
        Self { rollout: vec![Matrix::zeros(batch, 0); horizon], bootstrap: vec![Matrix::zeros(batch, 0); horizon] }
    }
}

/// Rebuilds the messages `receiver` would have seen from its predecessors'
/// predictions on `batch`, applying the plan's per-slot drops.
pub fn build_training_messages(
    layout: MessageLayout,
    receiver: usize,
    plan: &MaskPlan,
    predictions: &[Option<AgentPredictions>],
    batch: &TrajectoryBatch,
) -> Result<TrainingMessages, ModelError> {
    let bsz = batch.batch_size();
    let preds = plan.predecessors(receiver);
    let build = |h: usize, boot: bool| -> Result<Matrix, ModelError> {
        let mut out = Matrix::zeros(bsz, layout.feature_dim());
        for b in 0..bsz {
            let mut msg = Message::empty(layout);
            for &j in preds {
                if plan.dropped[b][j] || (boot && !batch.boot_action_valid[h][b]) {
                    continue;
                }
                let p = predictions[j].as_ref().ok_or_else(|| {
                    ModelError::Config(format!("agent {j} has not published predictions before agent {receiver}"))
                })?;
                let (z, a) = if boot {
                    (p.bootstrap[h].row(b), batch.boot_actions[j][h].row(b))
                } else {
                    (p.rollout[h].row(b), batch.actions[j][h].row(b))
                };
                msg = msg.append_slot(j, z, a)?;
            }
            out.row_mut(b).copy_from_slice(&msg.features());
        }
        Ok(out)
    };
    let mut rollout = Vec::with_capacity(batch.horizon);
    let mut bootstrap = Vec::with_capacity(batch.horizon);
    for h in 0..batch.horizon {
        rollout.push(build(h, false)?);
        bootstrap.push(build(h, true)?);
    }
    Ok(TrainingMessages { rollout, bootstrap })
}
