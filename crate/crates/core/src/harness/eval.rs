//! Deterministic-planner evaluation with lossy links.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{derive_seed, plan_joint, CommStats, HarnessError, Network, RunConfig, Team};
use crate::envs::EnvInterface;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub steps: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    /// Planner iterations averaged over agents and steps.
    pub mean_iterations: f64,
    /// Wall time of planning plus stepping, per environment step. Only
    /// comparable between runs with the same thread count and machine load.
    pub mean_step_ms: f64,
    pub drop_prob: f64,
    pub messages_sent: usize,
    pub messages_delivered: usize,
    pub cache_hits: usize,
    pub invalidated_slots: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct EpisodeStats {
    ret: f64,
    success: bool,
    steps: usize,
    iterations: usize,
    seconds: f64,
    comm: CommStats,
}

fn run_episode(team: &Team, cfg: &RunConfig, env: &mut dyn EnvInterface, k: u64) -> Result<EpisodeStats, HarnessError> {
    let n = team.n_agents();
    let planner = cfg.planner();
    let mut net = Network::new(n, cfg.eval_drop_prob, cfg.use_cache, derive_seed(cfg.seed, 7_000_000 + k));
    let mut obs = env.reset(derive_seed(cfg.seed, 9_000_000 + k));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 8_000_000 + k));
    let mut warm = vec![None; n];
    let mut stats = EpisodeStats::default();
    for t in 0.. {
        let start = Instant::now();
        let p = plan_joint(team, &obs, &mut warm, &planner, false, &mut net, t, &mut rng)?;
        let r = env.step(&p.actions)?;
        stats.seconds += start.elapsed().as_secs_f64();
        stats.iterations += p.iterations.iter().sum::<usize>();
        stats.steps += 1;
        stats.ret += r.reward;
        stats.success |= r.success;
        obs = r.obs;
        if r.done {
            break;
        }
    }
    stats.comm = net.stats;
    Ok(stats)
}

/// Episodes `k = first, first + stride, ...` on a private environment.
fn run_share(team: &Team, cfg: &RunConfig, first: usize, stride: usize) -> Result<Vec<(usize, EpisodeStats)>, HarnessError> {
    let mut env = cfg.build_env()?;
    (first..cfg.eval_episodes).step_by(stride).map(|k| Ok((k, run_episode(team, cfg, env.as_mut(), k as u64)?))).collect()
}

/// Runs `cfg.eval_episodes` episodes with `cfg.eval_drop_prob` link drops,
/// spread over `cfg.eval_threads` workers. Every episode derives its start
/// state, planner noise and link drops from `(seed, episode)` alone, so the
/// summary does not depend on the thread count, and runs that differ only
/// in planner or link settings see the same start states.
pub fn evaluate(team: &Team, cfg: &RunConfig) -> Result<EvalSummary, HarnessError> {
    cfg.validate()?;
    let mut summary = EvalSummary { drop_prob: cfg.eval_drop_prob, ..Default::default() };
    if cfg.eval_episodes == 0 {
        return Ok(summary);
    }
    let env = cfg.build_env()?;
    let n = env.n_agents();
    if n != team.n_agents() || env.obs_dim() != team.cfg.obs_dim || env.act_dim() != team.cfg.action_dim {
        return Err(HarnessError::Config(format!(
            "team expects {} agents with obs {} / act {}, environment has {n} with {} / {}",
            team.n_agents(),
            team.cfg.obs_dim,
            team.cfg.action_dim,
            env.obs_dim(),
            env.act_dim()
        )));
    }
    let threads = cfg.eval_threads.min(cfg.eval_episodes);
    let mut episodes: Vec<(usize, EpisodeStats)> = if threads <= 1 {
        run_share(team, cfg, 0, 1)?
    } else {
        std::thread::scope(|s| {
            let workers: Vec<_> = (0..threads).map(|w| s.spawn(move || run_share(team, cfg, w, threads))).collect();
            workers.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect::<Result<Vec<_>, _>>()
        })?
        .into_iter()
        .flatten()
        .collect()
    };
    episodes.sort_by_key(|e| e.0);

    let (mut total_return, mut successes, mut iterations, mut seconds) = (0.0, 0, 0, 0.0);
    for (_, e) in &episodes {
        total_return += e.ret;
        successes += usize::from(e.success);
        iterations += e.iterations;
        seconds += e.seconds;
        summary.steps += e.steps;
        summary.messages_sent += e.comm.sent;
        summary.messages_delivered += e.comm.delivered;
        summary.cache_hits += e.comm.cache_hits;
        summary.invalidated_slots += e.comm.invalidated;
    }
    let count = cfg.eval_episodes as f64;
    summary.episodes = cfg.eval_episodes;
    summary.mean_return = total_return / count;
    summary.success_rate = successes as f64 / count;
    summary.mean_iterations = iterations as f64 / (summary.steps * n) as f64;
    summary.mean_step_ms = seconds * 1e3 / summary.steps as f64;
    Ok(summary)
}

/// Loads `checkpoint` into a team shaped by `cfg` and evaluates it.
pub fn evaluate_checkpoint(checkpoint: &Path, cfg: &RunConfig) -> Result<EvalSummary, HarnessError> {
    let env = cfg.build_env()?;
    let mcfg = cfg.model_config(env.n_agents(), env.obs_dim(), env.act_dim());
    let (team, _) = Team::load(&mcfg, checkpoint)?;
    evaluate(&team, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    fn cfg() -> RunConfig {
        RunConfig {
            env: EnvKind::LinearTeam,
            n_agents: 2,
            episode_limit: 5,
            gaussian_samples: 16,
            actor_samples: 4,
            elites: 4,
            iterations: 3,
            latent_dim: 8,
            simplex_dim: 4,
            hidden_dim: 8,
            actor_hidden: 8,
            num_layers: 1,
            num_bins: 11,
            bin_range: 5.0,
            eval_episodes: 2,
            ..RunConfig::default()
        }
    }

    fn team(c: &RunConfig) -> Team {
        Team::new(&c.model_config(2, 2, 2), 0).unwrap()
    }

    #[test]
    fn zero_episodes_give_an_empty_summary() {
        let c = RunConfig { eval_episodes: 0, ..cfg() };
        let s = evaluate(&team(&c), &c).unwrap();
        assert_eq!(s, EvalSummary::default());
    }

    #[test]
    fn deterministic_and_counts_links() {
        let c = cfg();
        let t = team(&c);
        let a = evaluate(&t, &c).unwrap();
        let b = evaluate(&t, &c).unwrap();
        assert_eq!((a.mean_return, a.steps), (b.mean_return, b.steps));
        assert_eq!(a.steps, 10);
        assert_eq!(a.mean_iterations, 3.0);
        assert_eq!((a.messages_sent, a.messages_delivered), (10, 10));
        let lossy = evaluate(&t, &RunConfig { eval_drop_prob: 1.0, ..c.clone() }).unwrap();
        assert_eq!(lossy.messages_delivered, 0);
        assert_eq!(lossy.cache_hits + lossy.invalidated_slots, 10);
        assert_eq!(lossy.invalidated_slots, 10);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = RunConfig { eval_episodes: 5, eval_drop_prob: 0.5, ..cfg() };
        let t = team(&c);
        let one = evaluate(&t, &c).unwrap();
        let three = evaluate(&t, &RunConfig { eval_threads: 3, ..c.clone() }).unwrap();
        assert_eq!(
            (one.mean_return, one.steps, one.cache_hits, one.messages_delivered),
            (three.mean_return, three.steps, three.cache_hits, three.messages_delivered)
        );
    }

    #[test]
    fn mismatched_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        team(&cfg()).save(&path, 0).unwrap();
        assert!(evaluate_checkpoint(&path, &cfg()).is_ok());
        let wide = RunConfig { hidden_dim: 16, ..cfg() };
        assert!(matches!(evaluate_checkpoint(&path, &wide), Err(HarnessError::Autodiff(_)) | Err(HarnessError::Model(_))));
    }
}
