//! Finite-difference gradient checks shared by the gradient and acceptance suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use seqmarl::autodiff::{Gradients, Matrix, MlpBinding, Tape};
use seqmarl::worldmodel::{
    AgentModel, LossConfig, MaskPlan, ModelConfig, ModelTargets, TrainingMessages, TrajectoryBatch, Window,
};

pub const FD_STEP: f64 = 1e-5;

/// Elementwise relative error with a small absolute floor for near-zero entries.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn grad_cfg(n: usize) -> ModelConfig {
    ModelConfig {
        latent_dim: 8,
        simplex_dim: 4,
        encoder_hidden: 16,
        dynamics_hidden: 16,
        reward_hidden: 16,
        critic_hidden: 16,
        actor_hidden: 16,
        num_layers: 2,
        num_bins: 11,
        bin_range: 5.0,
        ..ModelConfig::new(n, 3, 2)
    }
}

/// Agent with every head (output layers included) drawn at random.
pub fn random_agent(index: usize, cfg: &ModelConfig, seed: u64) -> AgentModel {
    let mut m = AgentModel::new(index, cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for head in m.heads_mut() {
        for p in head.params_mut() {
            for v in p.value.data_mut() {
                *v = 0.4 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    m
}

pub fn random_batch(n: usize, rows: usize, horizon: usize, seed: u64) -> TrajectoryBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = horizon + 2;
    let windows: Vec<Window> = (0..rows)
        .map(|r| {
            let mut v = |d: usize| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            Window {
                obs: (0..=len).map(|_| (0..n).map(|_| v(3)).collect()).collect(),
                actions: (0..len).map(|_| (0..n).map(|_| v(2)).collect()).collect(),
                rewards: v(len).into_iter().map(|x| 2.0 * x).collect(),
                terminal: r % 2 == 0,
                episode: r as u64,
                start: 0,
            }
        })
        .collect();
    TrajectoryBatch::from_windows(&windows, horizon, 2, 0.9).unwrap()
}

fn binding_grads(grads: &Gradients, b: &MlpBinding, tape: &Tape) -> Vec<Matrix> {
    b.vars()
        .iter()
        .map(|&v| {
            grads.wrt(v).cloned().unwrap_or_else(|| {
                let (r, c) = tape.shape(v);
                Matrix::zeros(r, c)
            })
        })
        .collect()
}

/// Largest relative error between `analytic[k]` (gradients for head
/// `heads[k]`) and central differences of `loss` over every parameter.
fn compare(
    model: &mut AgentModel,
    heads: &[usize],
    analytic: &[Vec<Matrix>],
    loss: impl Fn(&AgentModel) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (k, &hi) in heads.iter().enumerate() {
        for (pi, g) in analytic[k].iter().enumerate() {
            for e in 0..g.len() {
                let orig = model.heads_mut()[hi].params()[pi].value.data()[e];
                model.heads_mut()[hi].params_mut()[pi].value.data_mut()[e] = orig + FD_STEP;
                let up = loss(model);
                model.heads_mut()[hi].params_mut()[pi].value.data_mut()[e] = orig - FD_STEP;
                let down = loss(model);
                model.heads_mut()[hi].params_mut()[pi].value.data_mut()[e] = orig;
                worst = worst.max(rel_err(g.data()[e], (up - down) / (2.0 * FD_STEP)));
            }
        }
    }
    worst
}

/// Agent 1 of a two-agent team, conditioned on agent 0's predictions.
pub struct ModelCase {
    pub model: AgentModel,
    pub batch: TrajectoryBatch,
    pub msgs: TrainingMessages,
    pub targets: ModelTargets,
}

pub fn model_case(seed: u64) -> ModelCase {
    let cfg = grad_cfg(2);
    let first = random_agent(0, &cfg, seed);
    let model = random_agent(1, &cfg, seed + 1);
    let batch = random_batch(2, 4, 3, seed + 2);
    let plan = MaskPlan::identity(2, batch.batch_size());
    let m0 = first.training_messages(&plan, &[None, None], &batch).unwrap();
    let p0 = first.predictions(&batch, &m0).unwrap();
    let msgs = model.training_messages(&plan, &[Some(p0), None], &batch).unwrap();
    let targets = model.compute_targets(&batch, &msgs).unwrap();
    ModelCase { model, batch, msgs, targets }
}

/// Checks the world-model objective with only the selected terms switched on.
pub fn check_model_objective(case: &mut ModelCase, cfg: &LossConfig) -> f64 {
    let mut tape = Tape::new();
    let obj = case.model.model_objective(&mut tape, &case.batch, &case.msgs, &case.targets, cfg).unwrap();
    let grads = tape.backward(obj.loss).unwrap();
    let analytic: Vec<Vec<Matrix>> = obj.bindings.iter().map(|b| binding_grads(&grads, b, &tape)).collect();
    let ModelCase { model, batch, msgs, targets } = case;
    compare(model, &[0, 1, 2, 3], &analytic, |m| m.model_loss(batch, msgs, targets, cfg).unwrap().model_loss)
}

pub fn only(dynamics: f64, reward: f64, q: f64) -> LossConfig {
    LossConfig { dynamics_coef: dynamics, reward_coef: reward, q_coef: q, ..LossConfig::default() }
}

/// Checks the actor objective against the frozen critic with fixed noise.
pub fn check_actor_objective(seed: u64) -> f64 {
    let cfg = grad_cfg(2);
    let mut model = random_agent(1, &cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let (rows, horizon) = (5, 3);
    let mut normal = |r: usize, c: usize| {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
    };
    let latents: Vec<Matrix> = (0..horizon).map(|_| normal(rows, cfg.latent_dim).map(f64::tanh)).collect();
    let msgs: Vec<Matrix> = (0..horizon).map(|_| normal(rows, cfg.message_dim()).map(|x| 0.5 * x)).collect();
    let noise: Vec<Matrix> = (0..horizon).map(|_| normal(rows, cfg.action_dim)).collect();
    let losses = LossConfig { entropy_coef: 0.05, ..LossConfig::default() };
    let q_scale = 1.7;
    let mut tape = Tape::new();
    let obj = model.actor_objective(&mut tape, &latents, &msgs, &noise, q_scale, &losses).unwrap();
    let grads = tape.backward(obj.loss).unwrap();
    let analytic = vec![binding_grads(&grads, &obj.binding, &tape)];
    compare(&mut model, &[5], &analytic, |m| {
        let mut t = Tape::new();
        m.actor_objective(&mut t, &latents, &msgs, &noise, q_scale, &losses).unwrap().actor_loss
    })
}

/// Checks soft cross-entropy with respect to the logits, weighted per row.
pub fn check_soft_cross_entropy(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, bins) = (6, 11);
    let logits = Matrix::from_vec(rows, bins, (0..rows * bins).map(|_| 3.0 * rng.gen_range(-1.0..1.0)).collect());
    let mut target = Matrix::from_vec(rows, bins, (0..rows * bins).map(|_| rng.gen_range(0.0..1.0)).collect());
    for r in 0..rows {
        let s: f64 = target.row(r).iter().sum();
        target.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    let weights: Vec<f64> = (0..rows).map(|r| 1.0 + r as f64).collect();
    let eval = |x: &Matrix| -> (f64, Option<Matrix>) {
        let mut t = Tape::new();
        let v = t.variable(x.clone());
        let ce = t.soft_cross_entropy(v, target.clone());
        let w = t.row_scale(ce, weights.clone());
        let s = t.sum(w);
        let g = t.backward(s).unwrap().wrt(v).cloned();
        (t.scalar(s), g)
    };
    let analytic = eval(&logits).1.unwrap();
    let mut worst = 0.0f64;
    let mut x = logits.clone();
    for e in 0..x.len() {
        let orig = x.data()[e];
        x.data_mut()[e] = orig + FD_STEP;
        let up = eval(&x).0;
        x.data_mut()[e] = orig - FD_STEP;
        let down = eval(&x).0;
        x.data_mut()[e] = orig;
        worst = worst.max(rel_err(analytic.data()[e], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Every check of the suite as `(name, max relative error)`.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let mut case = model_case(11);
    let mut out = vec![
        ("dynamics term", check_model_objective(&mut case, &only(1.0, 0.0, 0.0))),
        ("reward term", check_model_objective(&mut case, &only(0.0, 1.0, 0.0))),
        ("q term", check_model_objective(&mut case, &only(0.0, 0.0, 1.0))),
        ("weighted model objective", check_model_objective(&mut case, &LossConfig::default())),
    ];
    let tf = LossConfig { teacher_forcing: true, ..LossConfig::default() };
    out.push(("teacher-forced model objective", check_model_objective(&mut case, &tf)));
    out.push(("actor objective", check_actor_objective(21)));
    out.push(("soft cross-entropy", check_soft_cross_entropy(31)));
    out
}
