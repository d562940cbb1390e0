//! Alternating collect/update training loop.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    derive_seed, plan_joint, Episode, EpisodeLog, HarnessError, MetricsRow, MetricsWriter, Network, ReplayBuffer,
    RunConfig, StepRecord, Team, CHECKPOINT_FILE, CONFIG_FILE, EPISODE_LOG_FILE, METRICS_FILE,
};
use crate::worldmodel::{sequential_update, LossReport, ModelError, TrajectoryBatch};

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub team: Team,
    pub steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Success flags of every finished episode, in order.
    pub successes: Vec<bool>,
}

#[derive(Clone, Copy, Debug, Default)]
struct LossMeans {
    dynamics: f64,
    reward: f64,
    q: f64,
    actor: f64,
    entropy: f64,
    q_scale: f64,
}

impl LossMeans {
    fn from_reports(reports: &[LossReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mean = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self {
            dynamics: mean(|r| r.dynamics_loss),
            reward: mean(|r| r.reward_loss),
            q: mean(|r| r.q_loss),
            actor: mean(|r| r.actor_loss),
            entropy: mean(|r| r.entropy),
            q_scale: mean(|r| r.q_scale),
        }
    }
}

/// Trains a team from scratch as configured, writing the run directory.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join(CONFIG_FILE), cfg.to_toml_string())?;
    let ckpt_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let metrics_path = cfg.out_dir.join(METRICS_FILE);

    let mut env = cfg.build_env()?;
    let n = env.n_agents();
    let mut team = Team::new(&cfg.model_config(n, env.obs_dim(), env.act_dim()), cfg.seed)?;
    let planner = cfg.planner();
    let losses = cfg.losses();
    let mask = cfg.mask();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut metrics = MetricsWriter::create(&metrics_path)?;
    let mut log = if cfg.log_episodes { Some(EpisodeLog::create(&cfg.out_dir.join(EPISODE_LOG_FILE))?) } else { None };
    let mut act_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));
    let mut net = Network::new(n, 0.0, false, derive_seed(cfg.seed, 4));

    let mut step = 0u64;
    let mut episode = 0u64;
    let mut updates = 0u64;
    let mut updated_through = 0u64;
    let mut latest = LossMeans::default();
    let mut successes = Vec::new();
    let total = cfg.total_steps as u64;
    while step < total {
        let mut obs = env.reset(derive_seed(cfg.seed, 1_000_000 + episode));
        let mut ep = Episode::new(obs.clone());
        let mut warm = vec![None; n];
        let mut ret = 0.0;
        let mut success = false;
        for t in 0.. {
            let start = Instant::now();
            let (actions, iters) = if step < cfg.seed_steps as u64 {
                let a: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..env.act_dim()).map(|_| act_rng.gen_range(-1.0..=1.0)).collect()).collect();
                (a, 0.0)
            } else {
                let p = plan_joint(&team, &obs, &mut warm, &planner, true, &mut net, t, &mut act_rng)?;
                let it = p.iterations.iter().sum::<usize>() as f64 / n as f64;
                (p.actions, it)
            };
            let r = env.step(&actions)?;
            let wall = if cfg.record_wall_time { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            step += 1;
            ret += r.reward;
            success |= r.success;
            let cut = step >= total && !r.done;
            metrics.append(&MetricsRow {
                step,
                episode,
                reward: r.reward,
                episode_return: ret,
                done: r.done || cut,
                success: r.done && r.success,
                dynamics_loss: latest.dynamics,
                reward_loss: latest.reward,
                q_loss: latest.q,
                actor_loss: latest.actor,
                entropy: latest.entropy,
                q_scale: latest.q_scale,
                planner_iterations: iters,
                wall_time_ms: wall,
            })?;
            if let Some(log) = log.as_mut() {
                log.write(&StepRecord::new(episode, t as usize, &obs, &actions, r.reward, r.done || cut))?;
            }
            ep.push(actions, r.reward, r.obs.clone());
            obs = r.obs;
            if r.done || cut {
                ep.terminal = r.done && !r.truncated;
                break;
            }
        }
        buffer.add(ep);
        successes.push(success);
        episode += 1;

        if step >= cfg.seed_steps as u64 {
            let due = if cfg.epochs_per_episode > 0 {
                cfg.epochs_per_episode as u64
            } else {
                ((step - updated_through) as f64 * cfg.updates_per_step).round() as u64
            };
            updated_through = step;
            for _ in 0..due {
                let Some(windows) = buffer.sample(cfg.batch_size, cfg.horizon, cfg.horizon + cfg.n_step, &mut sample_rng)
                else {
                    break;
                };
                let batch = TrajectoryBatch::from_windows(&windows, cfg.horizon, cfg.n_step, cfg.gamma)?;
                match sequential_update(&mut team.agents, &batch, &losses, &mask, &mut update_rng) {
                    Ok(reports) => latest = LossMeans::from_reports(&reports),
                    Err(ModelError::NonFinite { agent, what, detail }) => {
                        team.save(&ckpt_path, step)?;
                        return Err(HarnessError::Diverged {
                            step,
                            detail: format!("agent {agent} {what}: {detail}"),
                            checkpoint: ckpt_path,
                        });
                    }
                    Err(e) => return Err(e.into()),
                }
                updates += 1;
            }
        }
        if cfg.checkpoint_every > 0 && episode % cfg.checkpoint_every as u64 == 0 {
            team.save(&ckpt_path, step)?;
        }
        log::info!("episode {episode} step {step} return {ret:.3} success {success}");
    }
    if let Some(log) = log.as_mut() {
        log.flush()?;
    }
    team.save(&ckpt_path, step)?;
    Ok(TrainOutcome { team, steps: step, episodes: episode, updates, checkpoint: ckpt_path, metrics: metrics_path, successes })
}
