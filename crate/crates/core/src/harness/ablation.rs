//! Forecast accuracy of sequential versus decentralized world models on
//! the coupled linear team, scored against the noise-free oracle.
//!
//! Latent spaces of two separately trained models are not comparable, so
//! the headline dynamics error is measured in state space: per horizon, a
//! ridge probe maps each model's forecast latents to the agent's true state.
//! Probes are fitted on training windows and scored on held-out ones, so the
//! error reflects how much of the future state a forecast actually carries.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{derive_seed, Episode, HarnessError, ReplayBuffer, RunConfig, Team};
use crate::autodiff::Matrix;
use crate::envs::{EnvInterface, EnvKind, LinearTeamEnv, OracleRollout};
use crate::worldmodel::{
    sequential_update, AgentPredictions, Forecast, MaskConfig, MaskPlan, ModelConfig, TrajectoryBatch, Window,
};

const PROBE_RIDGE: f64 = 1e-3;
const PROBE_WINDOWS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub horizon: usize,
    pub sequential_state_mse: f64,
    pub decentralized_state_mse: f64,
    pub sequential_reward_mse: f64,
    pub decentralized_reward_mse: f64,
    /// Squared latent error against the encoded oracle state.
    pub sequential_latent_mse: f64,
    pub decentralized_latent_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub coupling: f64,
    pub rows: Vec<AblationRow>,
    /// Encoder, dynamics and reward parameters per agent.
    pub sequential_params: usize,
    pub decentralized_params: usize,
    /// Probe error on encoded (not forecast) start states, per variant.
    pub sequential_probe_floor: f64,
    pub decentralized_probe_floor: f64,
    pub train_seconds: f64,
}

impl AblationReport {
    /// Sequential over decentralized state error at `horizon`.
    pub fn ratio(&self, horizon: usize) -> f64 {
        let r = &self.rows[horizon - 1];
        r.sequential_state_mse / r.decentralized_state_mse
    }
}

fn collect(env: &mut LinearTeamEnv, steps: usize, seed: u64, rng: &mut impl Rng) -> ReplayBuffer {
    let mut buffer = ReplayBuffer::new(steps.max(1));
    let (n, ad) = (env.n_agents(), env.act_dim());
    let mut collected = 0;
    let mut k = 0;
    while collected < steps {
        let mut ep = Episode::new(env.reset(derive_seed(seed, k)));
        k += 1;
        loop {
            let a: Vec<Vec<f64>> = (0..n).map(|_| (0..ad).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
            let r = env.step(&a).expect("random actions are in range");
            ep.push(a, r.reward, r.obs);
            collected += 1;
            if r.done || collected >= steps {
                break;
            }
        }
        buffer.add(ep);
    }
    buffer
}

/// Widens the dynamics and reward heads of a message-free copy of `seq`
/// until its world-model parameter count is closest to the original.
fn matched_decentralized(seq: &ModelConfig) -> ModelConfig {
    let target = seq.world_model_param_count() as i64;
    let build = |h: usize| ModelConfig { use_messages: false, dynamics_hidden: h, reward_hidden: h, ..seq.clone() };
    (seq.dynamics_hidden..=4 * seq.dynamics_hidden)
        .min_by_key(|&h| (build(h).world_model_param_count() as i64 - target).abs())
        .map(build)
        .expect("non-empty search range")
}

fn train_team(team: &mut Team, data: &ReplayBuffer, cfg: &RunConfig) -> Result<(), HarnessError> {
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 31));
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 32));
    let losses = cfg.losses();
    for _ in 0..cfg.ablation_updates {
        let windows = data
            .sample(cfg.batch_size, cfg.horizon, cfg.horizon + cfg.n_step, &mut sample_rng)
            .ok_or_else(|| HarnessError::Config("ablation data holds no window of the horizon".into()))?;
        let batch = TrajectoryBatch::from_windows(&windows, cfg.horizon, cfg.n_step, cfg.gamma)?;
        sequential_update(&mut team.agents, &batch, &losses, &MaskConfig::default(), &mut update_rng)?;
    }
    Ok(())
}

fn design(z: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(z.rows(), z.cols() + 1, |r, c| if c < z.cols() { z.get(r, c) } else { 1.0 })
}

/// Ridge map `[z, 1] -> y`.
fn ridge(z: &Matrix, y: &[Vec<f64>]) -> DMatrix<f64> {
    let x = design(z);
    let y = DMatrix::from_fn(y.len(), y[0].len(), |r, c| y[r][c]);
    let xt = x.transpose();
    let gram = &xt * &x + DMatrix::<f64>::identity(x.ncols(), x.ncols()) * PROBE_RIDGE;
    let rhs = xt * y;
    gram.cholesky().expect("ridge system is positive definite").solve(&rhs)
}

fn probe_mse(probe: &DMatrix<f64>, z: &Matrix, truth: &[Vec<f64>]) -> f64 {
    let pred = design(z) * probe;
    let mut s = 0.0;
    for (r, t) in truth.iter().enumerate() {
        for (c, v) in t.iter().enumerate() {
            s += (pred[(r, c)] - v).powi(2);
        }
    }
    s / (truth.len() * truth[0].len()) as f64
}

/// Forecasts of every agent on `windows`, with messages chained in index order,
/// next to the oracle rollouts of the same start states and actions.
struct Scored {
    forecasts: Vec<Forecast>,
    oracles: Vec<OracleRollout>,
}

fn forecast_windows(team: &Team, env: &LinearTeamEnv, windows: &[Window], horizon: usize) -> Result<Scored, HarnessError> {
    let n = team.n_agents();
    let batch = TrajectoryBatch::from_windows(windows, horizon, 1, 1.0)?;
    let plan = MaskPlan::identity(n, windows.len());
    let mut published: Vec<Option<AgentPredictions>> = vec![None; n];
    let mut forecasts = Vec::with_capacity(n);
    for (i, agent) in team.agents.iter().enumerate() {
        let msgs = agent.training_messages(&plan, &published, &batch)?;
        forecasts.push(agent.forecast(&batch, &msgs)?);
        published[i] = Some(agent.predictions(&batch, &msgs)?);
    }
    let oracles = windows.iter().map(|w| env.oracle_rollout(&w.obs[0], &w.actions[..horizon])).collect();
    Ok(Scored { forecasts, oracles })
}

fn oracle_states(oracles: &[OracleRollout], k: usize, agent: usize) -> Vec<Vec<f64>> {
    oracles.iter().map(|o| o.states[k][agent].clone()).collect()
}

struct Scores {
    state: Vec<f64>,
    reward: Vec<f64>,
    latent: Vec<f64>,
    probe_floor: f64,
}

/// Probes are fitted per agent and horizon on the training forecasts and
/// scored on the held-out ones.
fn score(team: &Team, env: &LinearTeamEnv, fit: &[Window], eval: &[Window], horizon: usize) -> Result<Scores, HarnessError> {
    let n = team.n_agents() as f64;
    let train = forecast_windows(team, env, fit, horizon)?;
    let test = forecast_windows(team, env, eval, horizon)?;
    let rows = eval.len() as f64;
    let mut s = Scores { state: vec![0.0; horizon], reward: vec![0.0; horizon], latent: vec![0.0; horizon], probe_floor: 0.0 };
    for (i, agent) in team.agents.iter().enumerate() {
        let fit_start = oracle_states(&train.oracles, 0, i);
        let floor = ridge(&agent.encode_batch(&Matrix::from_rows(&fit_start))?, &fit_start);
        let start = oracle_states(&test.oracles, 0, i);
        s.probe_floor += probe_mse(&floor, &agent.encode_batch(&Matrix::from_rows(&start))?, &start) / n;
        for h in 0..horizon {
            let probe = ridge(&train.forecasts[i].latents[h], &oracle_states(&train.oracles, h + 1, i));
            let truth = oracle_states(&test.oracles, h + 1, i);
            let z = &test.forecasts[i].latents[h];
            s.state[h] += probe_mse(&probe, z, &truth) / n;
            let zt = agent.encode_batch(&Matrix::from_rows(&truth))?;
            s.latent[h] += z.data().iter().zip(zt.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / rows / n;
            let rerr = test.forecasts[i].rewards[h].iter().zip(&test.oracles).map(|(p, o)| (p - o.rewards[h]).powi(2));
            s.reward[h] += rerr.sum::<f64>() / rows / n;
        }
    }
    Ok(s)
}

/// Trains a sequential and a parameter-matched decentralized team on the
/// same random-action data and reports forecast errors for `h = 1..=H`.
pub fn ablate_prediction(cfg: &RunConfig) -> Result<AblationReport, HarnessError> {
    cfg.validate()?;
    if cfg.env != EnvKind::LinearTeam {
        return Err(HarnessError::Config("ablate-prediction needs env = linear_team".into()));
    }
    let mut env = LinearTeamEnv::new(cfg.linear_team())?;
    let n = env.n_agents();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 30));
    let data = collect(&mut env, cfg.ablation_steps, derive_seed(cfg.seed, 33), &mut rng);
    let held_out = collect(&mut env, cfg.ablation_eval_windows.max(cfg.horizon) * 2, derive_seed(cfg.seed, 34), &mut rng);
    let eval_windows = held_out
        .sample(cfg.ablation_eval_windows, cfg.horizon, cfg.horizon, &mut rng)
        .ok_or_else(|| HarnessError::Config("held-out data holds no window of the horizon".into()))?;
    let probe_windows = data
        .sample(PROBE_WINDOWS, cfg.horizon, cfg.horizon, &mut rng)
        .ok_or_else(|| HarnessError::Config("ablation data holds no window of the horizon".into()))?;

    let seq_cfg = ModelConfig { use_messages: true, ..cfg.model_config(n, env.obs_dim(), env.act_dim()) };
    let dec_cfg = matched_decentralized(&seq_cfg);
    let started = std::time::Instant::now();
    let mut seq = Team::new(&seq_cfg, cfg.seed)?;
    let mut dec = Team::new(&dec_cfg, cfg.seed)?;
    train_team(&mut seq, &data, cfg)?;
    train_team(&mut dec, &data, cfg)?;
    let train_seconds = started.elapsed().as_secs_f64();

    let s = score(&seq, &env, &probe_windows, &eval_windows, cfg.horizon)?;
    let d = score(&dec, &env, &probe_windows, &eval_windows, cfg.horizon)?;
    let rows = (0..cfg.horizon)
        .map(|h| AblationRow {
            horizon: h + 1,
            sequential_state_mse: s.state[h],
            decentralized_state_mse: d.state[h],
            sequential_reward_mse: s.reward[h],
            decentralized_reward_mse: d.reward[h],
            sequential_latent_mse: s.latent[h],
            decentralized_latent_mse: d.latent[h],
        })
        .collect();
    Ok(AblationReport {
        coupling: cfg.coupling,
        rows,
        sequential_params: seq_cfg.world_model_param_count(),
        decentralized_params: dec_cfg.world_model_param_count(),
        sequential_probe_floor: s.probe_floor,
        decentralized_probe_floor: d.probe_floor,
        train_seconds,
    })
}
