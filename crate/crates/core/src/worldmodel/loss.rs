//! World-model and actor objectives on a recorded tape.

use serde::Serialize;

use super::{AgentModel, AgentPredictions, LossConfig, ModelError, TrainingMessages, TrajectoryBatch};
use crate::autodiff::{Matrix, MlpBinding, Tape, Var};
use crate::codec;

/// Unweighted per-step breakdown of the model loss, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepLoss {
    pub dynamics: f64,
    pub reward: f64,
    pub q: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    /// Step-weighted sums of the three model terms (coefficients not applied).
    pub dynamics_loss: f64,
    pub reward_loss: f64,
    pub q_loss: f64,
    /// Weighted total the world-model optimizer minimized.
    pub model_loss: f64,
    pub actor_loss: f64,
    /// Mean of `-log_prob` over the actor's reparameterized samples.
    pub entropy: f64,
    pub q_scale: f64,
    pub grad_norm: f64,
    pub steps: Vec<StepLoss>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.dynamics_loss, self.reward_loss, self.q_loss, self.model_loss, self.actor_loss, self.entropy]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Detached regression targets for one agent's model loss.
#[derive(Clone, Debug)]
pub struct ModelTargets {
    /// Encoded next observations, `latents[h] = E(o_{h+1})`.
    pub latents: Vec<Matrix>,
    /// n-step TD targets per rollout step.
    pub td: Vec<Vec<f64>>,
}

/// Recorded model objective; `bindings` are encoder, dynamics, reward, critic.
pub struct ModelObjective {
    pub loss: Var,
    pub bindings: [MlpBinding; 4],
    pub report: LossReport,
}

pub struct ActorObjective {
    pub loss: Var,
    pub binding: MlpBinding,
    pub actor_loss: f64,
    pub entropy: f64,
    /// Critic values of the sampled actions, all steps and rows.
    pub q_values: Vec<f64>,
}

/// Output of [`AgentModel::forecast`].
#[derive(Clone, Debug)]
pub struct Forecast {
    /// `latents[h]` is the prediction of `z_{h+1}`.
    pub latents: Vec<Matrix>,
    pub rewards: Vec<Vec<f64>>,
}

fn twohot_rows(values: &[f64], grid: &codec::BinGrid) -> Matrix {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| codec::twohot_encode(v, grid)).collect();
    Matrix::from_rows(&rows)
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

impl AgentModel {
    fn own<'a>(&self, per_agent: &'a [Vec<Matrix>]) -> &'a [Matrix] {
        &per_agent[self.index()]
    }

    /// `tanh(mean)` of the actor for row-varying messages.
    pub(crate) fn actor_mean_rows(&self, z: &Matrix, e: &Matrix) -> Result<Matrix, ModelError> {
        let out = self.actor.infer(&Matrix::hconcat(&[z, e]))?;
        Ok(out.slice_cols(0, self.config().action_dim).map(f64::tanh))
    }

    /// Chained latents `z_0 = E(o_0)`, `z_{h+1} = D(z_h, a_h, e_h)` for `h < horizon`,
    /// plus encoded bootstrap observations.
    pub fn predictions(&self, batch: &TrajectoryBatch, msgs: &TrainingMessages) -> Result<AgentPredictions, ModelError> {
        let obs = self.own(&batch.obs);
        let actions = self.own(&batch.actions);
        let mut rollout = Vec::with_capacity(batch.horizon);
        let mut z = self.encoder.infer(&obs[0])?;
        for h in 0..batch.horizon {
            let next = if h + 1 < batch.horizon {
                Some(self.dynamics.infer(&Matrix::hconcat(&[&z, &actions[h], &msgs.rollout[h]]))?)
            } else {
                None
            };
            rollout.push(z);
            match next {
                Some(n) => z = n,
                None => break,
            }
        }
        let bootstrap =
            self.own(&batch.boot_obs).iter().map(|o| self.encoder.infer(o)).collect::<Result<Vec<_>, _>>()?;
        Ok(AgentPredictions { rollout, bootstrap })
    }

    /// Open-loop forecast under the batch actions: predicted latents
    /// `z_1..z_H` and decoded rewards for `h < horizon`.
    pub fn forecast(&self, batch: &TrajectoryBatch, msgs: &TrainingMessages) -> Result<Forecast, ModelError> {
        let actions = self.own(&batch.actions);
        let mut z = self.encoder.infer(&self.own(&batch.obs)[0])?;
        let mut latents = Vec::with_capacity(batch.horizon);
        let mut rewards = Vec::with_capacity(batch.horizon);
        for h in 0..batch.horizon {
            let input = Matrix::hconcat(&[&z, &actions[h], &msgs.rollout[h]]);
            rewards.push(self.decode_rows(&self.reward.infer(&input)?));
            z = self.dynamics.infer(&input)?;
            latents.push(z.clone());
        }
        Ok(Forecast { latents, rewards })
    }

    /// Encoded next-step latents and n-step TD targets from the target critic.
    pub fn compute_targets(&self, batch: &TrajectoryBatch, msgs: &TrainingMessages) -> Result<ModelTargets, ModelError> {
        let obs = self.own(&batch.obs);
        let latents = (1..=batch.horizon).map(|h| self.encoder.infer(&obs[h])).collect::<Result<Vec<_>, _>>()?;
        let mut td = Vec::with_capacity(batch.horizon);
        for h in 0..batch.horizon {
            let zb = self.encoder.infer(&self.own(&batch.boot_obs)[h])?;
            let eb = &msgs.bootstrap[h];
            let ab = self.actor_mean_rows(&zb, eb)?;
            let q = self.decode_rows(&self.target_critic.infer(&Matrix::hconcat(&[&zb, &ab, eb]))?);
            td.push(
                (0..batch.batch_size())
                    .map(|b| batch.returns[h][b] + batch.boot_discount[h][b] * q[b])
                    .collect(),
            );
        }
        Ok(ModelTargets { latents, td })
    }

    /// Records the weighted dynamics, reward and Q regression objective.
    pub fn model_objective(
        &self,
        tape: &mut Tape,
        batch: &TrajectoryBatch,
        msgs: &TrainingMessages,
        targets: &ModelTargets,
        cfg: &LossConfig,
    ) -> Result<ModelObjective, ModelError> {
        let bindings = [self.encoder.bind(tape), self.dynamics.bind(tape), self.reward.bind(tape), self.critic.bind(tape)];
        let [eb, db, rb, cb] = &bindings;
        let obs = self.own(&batch.obs);
        let actions = self.own(&batch.actions);
        let inv_b = 1.0 / batch.batch_size() as f64;
        let weights = cfg.step_weights(batch.horizon);

        let o0 = tape.constant(obs[0].clone());
        let mut z = self.encoder.forward(tape, eb, o0)?;
        let mut total: Option<Var> = None;
        let mut report = LossReport::default();
        for h in 0..batch.horizon {
            if cfg.teacher_forcing && h > 0 {
                let o = tape.constant(obs[h].clone());
                z = self.encoder.forward(tape, eb, o)?;
            }
            let a = tape.constant(actions[h].clone());
            let e = tape.constant(msgs.rollout[h].clone());
            let x = tape.concat(&[z, a, e]);
            let z_next = self.dynamics.forward(tape, db, x)?;
            let r_logits = self.reward.forward(tape, rb, x)?;
            let q_logits = self.critic.forward(tape, cb, x)?;

            let target = tape.constant(targets.latents[h].clone());
            let diff = tape.sub(z_next, target);
            let sq = tape.mul(diff, diff);
            let dyn_sum = tape.sum(sq);
            let r_ce = tape.soft_cross_entropy(r_logits, twohot_rows(&batch.rewards[h], self.grid()));
            let r_sum = tape.sum(r_ce);
            let q_ce = tape.soft_cross_entropy(q_logits, twohot_rows(&targets.td[h], self.grid()));
            let q_sum = tape.sum(q_ce);

            let step = StepLoss {
                dynamics: tape.scalar(dyn_sum) * inv_b,
                reward: tape.scalar(r_sum) * inv_b,
                q: tape.scalar(q_sum) * inv_b,
            };
            report.dynamics_loss += weights[h] * step.dynamics;
            report.reward_loss += weights[h] * step.reward;
            report.q_loss += weights[h] * step.q;
            report.steps.push(step);

            let d = tape.scale(dyn_sum, cfg.dynamics_coef);
            let r = tape.scale(r_sum, cfg.reward_coef);
            let q = tape.scale(q_sum, cfg.q_coef);
            let dr = tape.add(d, r);
            let term = tape.add(dr, q);
            let term = tape.scale(term, weights[h] * inv_b);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
            z = z_next;
        }
        let loss = total.expect("horizon is positive");
        report.model_loss = tape.scalar(loss);
        Ok(ModelObjective { loss, bindings, report })
    }

    /// Value of the model objective without keeping the tape.
    pub fn model_loss(
        &self,
        batch: &TrajectoryBatch,
        msgs: &TrainingMessages,
        targets: &ModelTargets,
        cfg: &LossConfig,
    ) -> Result<LossReport, ModelError> {
        let mut tape = Tape::new();
        Ok(self.model_objective(&mut tape, batch, msgs, targets, cfg)?.report)
    }

    /// Records the entropy-regularized actor objective on detached latents.
    /// `noise[h]` holds the standard normals of the reparameterized samples;
    /// `q_scale` divides the critic term. The critic is frozen.
    pub fn actor_objective(
        &self,
        tape: &mut Tape,
        latents: &[Matrix],
        msgs: &[Matrix],
        noise: &[Matrix],
        q_scale: f64,
        cfg: &LossConfig,
    ) -> Result<ActorObjective, ModelError> {
        let binding = self.actor.bind(tape);
        let critic = self.critic.bind_frozen(tape);
        let ad = self.config().action_dim;
        let (lo, hi) = (self.config().log_std_min, self.config().log_std_max);
        let horizon = latents.len();
        let bsz = latents[0].rows();
        let inv_b = 1.0 / bsz as f64;
        let weights = cfg.step_weights(horizon);
        let mut total: Option<Var> = None;
        let mut q_values = Vec::with_capacity(horizon * bsz);
        let mut entropy = 0.0;
        for h in 0..horizon {
            let z = tape.constant(latents[h].clone());
            let e = tape.constant(msgs[h].clone());
            let x = tape.concat(&[z, e]);
            let out = self.actor.forward(tape, &binding, x)?;
            let mean = tape.slice_cols(out, 0, ad);
            let raw = tape.slice_cols(out, ad, ad);
            let log_std = tape.soft_clamp(raw, lo, hi);
            let std = tape.exp(log_std);
            let eps = tape.constant(noise[h].clone());
            let spread = tape.mul(std, eps);
            let u = tape.add(mean, spread);
            let a = tape.tanh(u);

            let base: Vec<f64> = (0..bsz)
                .map(|b| noise[h].row(b).iter().map(|n| -0.5 * n * n - HALF_LN_2PI).sum())
                .collect();
            let base = tape.constant(Matrix::column(base));
            let ls_sum = tape.row_sum(log_std);
            let jac = tape.log1m_tanh_sq(u);
            let jac_sum = tape.row_sum(jac);
            let lp = tape.sub(base, ls_sum);
            let log_prob = tape.sub(lp, jac_sum);

            let qx = tape.concat(&[z, a, e]);
            let q_logits = self.critic.forward(tape, &critic, qx)?;
            let q = tape.two_hot_decode(q_logits, self.centers());
            q_values.extend_from_slice(tape.value(q).data());
            entropy -= tape.value(log_prob).sum();

            let q_term = tape.scale(q, -1.0 / q_scale);
            let ent_term = tape.scale(log_prob, cfg.entropy_coef);
            let row = tape.add(q_term, ent_term);
            let s = tape.sum(row);
            let term = tape.scale(s, weights[h] * inv_b);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        let loss = total.ok_or_else(|| ModelError::Config("actor objective needs at least one step".into()))?;
        Ok(ActorObjective {
            loss,
            binding,
            actor_loss: tape.scalar(loss),
            entropy: entropy / (horizon * bsz) as f64,
            q_values,
        })
    }
}
