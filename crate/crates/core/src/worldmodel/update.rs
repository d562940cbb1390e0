//! One round of the sequential update over all agents.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    build_training_messages, AgentModel, AgentPredictions, LossConfig, LossReport, MaskConfig, MaskPlan, ModelError,
    TrainingMessages, TrajectoryBatch,
};
use crate::autodiff::{clip_grad_norm, Adam, Matrix, StepOutcome, Tape};

impl AgentModel {
    fn adam(&self, cfg: &LossConfig) -> Adam {
        Adam { learning_rate: cfg.learning_rate, ..Adam::default() }
    }

    /// Messages this agent sees on `batch` under `plan`.
    pub fn training_messages(
        &self,
        plan: &MaskPlan,
        predictions: &[Option<AgentPredictions>],
        batch: &TrajectoryBatch,
    ) -> Result<TrainingMessages, ModelError> {
        if !self.config().use_messages {
            return Ok(TrainingMessages::none(batch.batch_size(), batch.horizon));
        }
        build_training_messages(self.config().layout(), self.index(), plan, predictions, batch)
    }

    /// One optimizer step on the encoder, dynamics, reward and critic heads,
    /// followed by the target-critic EMA.
    pub fn update_world_model(
        &mut self,
        batch: &TrajectoryBatch,
        msgs: &TrainingMessages,
        cfg: &LossConfig,
    ) -> Result<LossReport, ModelError> {
        let targets = self.compute_targets(batch, msgs)?;
        let mut tape = Tape::new();
        let obj = self.model_objective(&mut tape, batch, msgs, &targets, cfg)?;
        let mut report = obj.report;
        if !report.model_loss.is_finite() {
            return Err(ModelError::NonFinite { agent: self.index(), what: "model loss", detail: format!("{report:?}") });
        }
        let grads = tape.backward(obj.loss)?;
        let [eb, db, rb, cb] = &obj.bindings;
        for (mlp, b) in [(&mut self.encoder, eb), (&mut self.dynamics, db), (&mut self.reward, rb), (&mut self.critic, cb)] {
            mlp.zero_grad();
            mlp.accumulate_grads(&grads, b);
        }
        report.grad_norm = clip_grad_norm(
            &mut [
                self.encoder.params_mut(),
                self.dynamics.params_mut(),
                self.reward.params_mut(),
                self.critic.params_mut(),
            ],
            cfg.grad_clip,
        );
        let adam = self.adam(cfg);
        let outcomes = [
            adam.step(self.encoder.params_mut(), &mut self.optim.encoder, cfg.encoder_lr_scale),
            adam.step(self.dynamics.params_mut(), &mut self.optim.dynamics, 1.0),
            adam.step(self.reward.params_mut(), &mut self.optim.reward, 1.0),
            adam.step(self.critic.params_mut(), &mut self.optim.critic, 1.0),
        ];
        if outcomes.contains(&StepOutcome::SkippedNonFinite) {
            log::warn!("agent {}: world-model step skipped on non-finite gradient", self.index());
        }
        self.update_target(cfg.target_rate);
        Ok(report)
    }

    /// One optimizer step on the actor against the frozen critic; returns
    /// `(actor_loss, entropy)` and refreshes the Q scale from the sampled values.
    pub fn update_actor(
        &mut self,
        latents: &[Matrix],
        msgs: &[Matrix],
        cfg: &LossConfig,
        rng: &mut impl Rng,
    ) -> Result<(f64, f64), ModelError> {
        let ad = self.config().action_dim;
        let noise: Vec<Matrix> = latents
            .iter()
            .map(|z| Matrix::from_vec(z.rows(), ad, (0..z.rows() * ad).map(|_| rng.sample(StandardNormal)).collect()))
            .collect();
        let mut tape = Tape::new();
        let obj = self.actor_objective(&mut tape, latents, msgs, &noise, self.q_scale(), cfg)?;
        if !obj.actor_loss.is_finite() {
            return Err(ModelError::NonFinite {
                agent: self.index(),
                what: "actor loss",
                detail: format!("loss {} entropy {}", obj.actor_loss, obj.entropy),
            });
        }
        let grads = tape.backward(obj.loss)?;
        self.actor.zero_grad();
        self.actor.accumulate_grads(&grads, &obj.binding);
        clip_grad_norm(&mut [self.actor.params_mut()], cfg.grad_clip);
        let adam = self.adam(cfg);
        if adam.step(self.actor.params_mut(), &mut self.optim.actor, 1.0) == StepOutcome::SkippedNonFinite {
            log::warn!("agent {}: actor step skipped on non-finite gradient", self.index());
        }
        self.scaler.update(&obj.q_values);
        Ok((obj.actor_loss, obj.entropy))
    }

    /// World-model step, then actor step on the refreshed rollout latents.
    /// Returns the report and the predictions published to successors.
    pub fn update_on_batch(
        &mut self,
        batch: &TrajectoryBatch,
        msgs: &TrainingMessages,
        cfg: &LossConfig,
        rng: &mut impl Rng,
    ) -> Result<(LossReport, AgentPredictions), ModelError> {
        let mut report = self.update_world_model(batch, msgs, cfg)?;
        let preds = self.predictions(batch, msgs)?;
        let (actor_loss, entropy) = self.update_actor(&preds.rollout, &msgs.rollout, cfg, rng)?;
        report.actor_loss = actor_loss;
        report.entropy = entropy;
        report.q_scale = self.q_scale();
        Ok((report, preds))
    }
}

/// Updates every agent once on `batch`, in the (possibly permuted) order
/// drawn from `mask`. Each agent's messages are rebuilt from the predictions
/// its predecessors produced after their own update; messages are constants,
/// so no gradient crosses between agents. Reports are returned by agent index.
pub fn sequential_update(
    agents: &mut [AgentModel],
    batch: &TrajectoryBatch,
    cfg: &LossConfig,
    mask: &MaskConfig,
    rng: &mut impl Rng,
) -> Result<Vec<LossReport>, ModelError> {
    let n = agents.len();
    if batch.n_agents != n {
        return Err(ModelError::Config(format!("batch has {} agents, got {n} models", batch.n_agents)));
    }
    let plan = MaskPlan::sample(n, batch.batch_size(), mask, rng);
    let mut predictions: Vec<Option<AgentPredictions>> = vec![None; n];
    let mut reports: Vec<LossReport> = vec![LossReport::default(); n];
    for &i in &plan.order {
        let msgs = agents[i].training_messages(&plan, &predictions, batch)?;
        let (report, preds) = agents[i].update_on_batch(batch, &msgs, cfg, rng)?;
        reports[i] = report;
        predictions[i] = Some(preds);
    }
    Ok(reports)
}
