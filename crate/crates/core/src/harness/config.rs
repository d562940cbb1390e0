//! Flat run configuration, loaded from TOML with per-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::comm::MessageMode;
use crate::envs::{
    CorridorGateConfig, CorridorGateEnv, EnvHooks, EnvInterface, EnvKind, Hooked, LinearTeamConfig, LinearTeamEnv,
    PushBox2DConfig, PushBox2DEnv,
};
use crate::planner::PlannerConfig;
use crate::worldmodel::{LossConfig, MaskConfig, ModelConfig};

/// Every key of a run. Unknown keys are rejected at load time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub n_agents: usize,
    /// 0 keeps the environment's own limit.
    pub episode_limit: usize,
    pub coupling: f64,
    pub process_noise: f64,
    pub obs_noise_std: f64,
    pub action_delay: usize,
    pub seed: u64,
    pub out_dir: PathBuf,

    pub horizon: usize,
    pub iterations: usize,
    pub temperature: f64,
    pub gaussian_samples: usize,
    pub actor_samples: usize,
    pub elites: usize,
    pub gamma: f64,
    pub kl_threshold: f64,
    pub cutoff_ratio: f64,
    pub sigma_init: f64,
    pub sigma_floor: f64,

    pub latent_dim: usize,
    pub simplex_dim: usize,
    pub hidden_dim: usize,
    pub actor_hidden: usize,
    pub num_layers: usize,
    pub num_bins: usize,
    pub bin_range: f64,
    pub message_mode: MessageMode,
    pub use_messages: bool,

    pub total_steps: usize,
    pub seed_steps: usize,
    pub batch_size: usize,
    pub epochs_per_episode: usize,
    pub updates_per_step: f64,
    pub n_step: usize,
    pub buffer_capacity: usize,
    pub dynamics_coef: f64,
    pub reward_coef: f64,
    pub q_coef: f64,
    pub rho: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub encoder_lr_scale: f64,
    pub target_rate: f64,
    pub grad_clip: f64,
    pub teacher_forcing: bool,

    pub drop_prob: f64,
    pub permute: bool,

    pub eval_episodes: usize,
    pub eval_drop_prob: f64,
    pub use_cache: bool,
    /// Worker threads for evaluation episodes.
    pub eval_threads: usize,
    pub checkpoint_every: usize,
    pub log_episodes: bool,
    pub record_wall_time: bool,

    pub ablation_steps: usize,
    pub ablation_updates: usize,
    pub ablation_eval_windows: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PlannerConfig::default();
        let l = LossConfig::default();
        Self {
            env: EnvKind::CorridorGate,
            n_agents: 2,
            episode_limit: 0,
            coupling: 0.8,
            process_noise: 0.05,
            obs_noise_std: 0.0,
            action_delay: 0,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),

            horizon: p.horizon,
            iterations: p.iterations,
            temperature: p.temperature,
            gaussian_samples: p.gaussian_samples,
            actor_samples: p.actor_samples,
            elites: p.elites,
            gamma: p.gamma,
            kl_threshold: p.kl_threshold,
            cutoff_ratio: p.cutoff_ratio,
            sigma_init: p.sigma_init,
            sigma_floor: p.sigma_floor,

            latent_dim: 64,
            simplex_dim: 8,
            hidden_dim: 128,
            actor_hidden: 64,
            num_layers: 2,
            num_bins: 101,
            bin_range: 20.0,
            message_mode: MessageMode::Full,
            use_messages: true,

            total_steps: 100_000,
            seed_steps: 1_000,
            batch_size: 1000,
            epochs_per_episode: 0,
            updates_per_step: 1.0,
            n_step: 20,
            buffer_capacity: 1_000_000,
            dynamics_coef: l.dynamics_coef,
            reward_coef: l.reward_coef,
            q_coef: l.q_coef,
            rho: l.rho,
            entropy_coef: l.entropy_coef,
            learning_rate: l.learning_rate,
            encoder_lr_scale: l.encoder_lr_scale,
            target_rate: l.target_rate,
            grad_clip: l.grad_clip,
            teacher_forcing: l.teacher_forcing,

            drop_prob: 0.0,
            permute: false,

            eval_episodes: 50,
            eval_drop_prob: 0.0,
            use_cache: true,
            eval_threads: 1,
            checkpoint_every: 10,
            log_episodes: false,
            record_wall_time: true,

            ablation_steps: 20_000,
            ablation_updates: 1_500,
            ablation_eval_windows: 2_000,
        }
    }
}

/// Key documentation, in file order. Printed by the `schema` command.
pub const SCHEMA: &[(&str, &str)] = &[
    ("env", "corridor_gate | push_box2d | linear_team"),
    ("n_agents", "team size (push_box2d is fixed at 2)"),
    ("episode_limit", "steps before truncation; 0 keeps the environment default"),
    ("coupling", "linear_team: weight of the predecessor's action"),
    ("process_noise", "linear_team: state noise std"),
    ("obs_noise_std", "observation noise hook"),
    ("action_delay", "action delay hook, in steps"),
    ("seed", "master seed for models, environments and sampling"),
    ("out_dir", "directory for metrics, checkpoints and logs"),
    ("horizon", "planning and training rollout horizon H"),
    ("iterations", "maximum planner iterations K"),
    ("temperature", "elite weighting temperature"),
    ("gaussian_samples", "Gaussian candidates per iteration"),
    ("actor_samples", "actor-rollout candidates per iteration"),
    ("elites", "elite set size"),
    ("gamma", "discount"),
    ("kl_threshold", "stop planning once KL(new || old) falls below this; 0 disables"),
    ("cutoff_ratio", "noise low-pass cutoff f_c / f_s in (0, 0.5); 0 disables"),
    ("sigma_init", "planner std at every environment step"),
    ("sigma_floor", "lower bound on the planner std"),
    ("latent_dim", "latent width d_z"),
    ("simplex_dim", "simplex group size of the latent"),
    ("hidden_dim", "hidden width of encoder, dynamics, reward and critic"),
    ("actor_hidden", "hidden width of the actor"),
    ("num_layers", "hidden blocks per head"),
    ("num_bins", "two-hot bins"),
    ("bin_range", "bins span [-bin_range, bin_range] in symlog space"),
    ("message_mode", "full | action_only"),
    ("use_messages", "false builds decentralized models without message inputs"),
    ("total_steps", "environment steps to train for"),
    ("seed_steps", "initial steps with uniform random actions, no updates"),
    ("batch_size", "windows per update"),
    ("epochs_per_episode", "updates after each episode; 0 derives it from updates_per_step"),
    ("updates_per_step", "updates per collected step when epochs_per_episode is 0"),
    ("n_step", "TD target length"),
    ("buffer_capacity", "replay capacity in transitions"),
    ("dynamics_coef", "dynamics loss weight"),
    ("reward_coef", "reward loss weight"),
    ("q_coef", "critic loss weight"),
    ("rho", "per-step loss decay over the horizon"),
    ("entropy_coef", "actor entropy weight"),
    ("learning_rate", "Adam learning rate"),
    ("encoder_lr_scale", "encoder learning-rate multiplier"),
    ("target_rate", "target critic EMA rate"),
    ("grad_clip", "global gradient-norm clip; 0 disables"),
    ("teacher_forcing", "feed encoded observations into every rollout step"),
    ("drop_prob", "training-time message slot drop probability"),
    ("permute", "shuffle the agent order per update"),
    ("eval_episodes", "episodes per evaluation"),
    ("eval_drop_prob", "link drop probability at evaluation"),
    ("use_cache", "substitute cached predictions for dropped messages"),
    ("eval_threads", "worker threads for evaluation episodes; results do not depend on it"),
    ("checkpoint_every", "episodes between checkpoints; 0 only at the end"),
    ("log_episodes", "write per-step episode logs during training"),
    ("record_wall_time", "write wall time to metrics; false writes 0 for reproducible files"),
    ("ablation_steps", "random-action steps collected by ablate-prediction"),
    ("ablation_updates", "updates per variant in ablate-prediction"),
    ("ablation_eval_windows", "held-out windows scored by ablate-prediction"),
];

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key = value` overrides, typed by the key's current value.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, HarnessError> {
        let mut table = toml::Table::try_from(self).expect("config serializes to a table");
        for (key, raw) in overrides {
            let current = table.get(key).ok_or_else(|| HarnessError::Config(format!("unknown key {key:?}")))?;
            let bad = |what: &str| HarnessError::Config(format!("{key}: expected {what}, got {raw:?}"));
            let value = match current {
                toml::Value::Integer(_) => toml::Value::Integer(raw.parse().map_err(|_| bad("an integer"))?),
                toml::Value::Float(_) => toml::Value::Float(raw.parse().map_err(|_| bad("a number"))?),
                toml::Value::Boolean(_) => toml::Value::Boolean(raw.parse().map_err(|_| bad("true or false"))?),
                _ => toml::Value::String(raw.clone()),
            };
            table.insert(key.clone(), value);
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Human-readable schema: key, type, default and description.
    pub fn schema_text() -> String {
        let table = toml::Table::try_from(Self::default()).expect("config serializes to a table");
        let mut out = String::new();
        for (key, doc) in SCHEMA {
            let v = &table[*key];
            out.push_str(&format!("{key:<22} {:<7} default {:<16} {doc}\n", v.type_str(), v.to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.planner().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.model_config(1, 1, 1).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.n_agents == 0 {
            return bad("n_agents must be positive".into());
        }
        if self.env == EnvKind::PushBox2d && self.n_agents != 2 {
            return bad("push_box2d needs n_agents = 2".into());
        }
        if self.hidden_dim == 0 || self.actor_hidden == 0 || self.batch_size == 0 || self.n_step == 0 {
            return bad("hidden sizes, batch_size and n_step must be positive".into());
        }
        if self.eval_threads == 0 {
            return bad("eval_threads must be at least 1".into());
        }
        if self.buffer_capacity < self.horizon {
            return bad("buffer_capacity must hold at least one horizon".into());
        }
        for (name, p) in [("drop_prob", self.drop_prob), ("eval_drop_prob", self.eval_drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.updates_per_step >= 0.0) || !self.updates_per_step.is_finite() {
            return bad("updates_per_step must be a finite non-negative number".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.target_rate) || !(0.0..=1.0).contains(&self.rho) {
            return bad("need learning_rate > 0, target_rate and rho in [0, 1]".into());
        }
        if self.process_noise < 0.0 || self.obs_noise_std < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        Ok(())
    }

    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            horizon: self.horizon,
            iterations: self.iterations,
            temperature: self.temperature,
            gaussian_samples: self.gaussian_samples,
            actor_samples: self.actor_samples,
            elites: self.elites,
            gamma: self.gamma,
            kl_threshold: self.kl_threshold,
            cutoff_ratio: self.cutoff_ratio,
            sigma_init: self.sigma_init,
            sigma_floor: self.sigma_floor,
        }
    }

    pub fn losses(&self) -> LossConfig {
        LossConfig {
            dynamics_coef: self.dynamics_coef,
            reward_coef: self.reward_coef,
            q_coef: self.q_coef,
            rho: self.rho,
            entropy_coef: self.entropy_coef,
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            encoder_lr_scale: self.encoder_lr_scale,
            target_rate: self.target_rate,
            grad_clip: self.grad_clip,
            teacher_forcing: self.teacher_forcing,
        }
    }

    pub fn mask(&self) -> MaskConfig {
        MaskConfig { drop_prob: self.drop_prob, permute: self.permute }
    }

    pub fn model_config(&self, n_agents: usize, obs_dim: usize, action_dim: usize) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim,
            simplex_dim: self.simplex_dim,
            encoder_hidden: self.hidden_dim,
            dynamics_hidden: self.hidden_dim,
            reward_hidden: self.hidden_dim,
            critic_hidden: self.hidden_dim,
            actor_hidden: self.actor_hidden,
            num_layers: self.num_layers,
            num_bins: self.num_bins,
            bin_range: self.bin_range,
            message_mode: self.message_mode,
            use_messages: self.use_messages,
            ..ModelConfig::new(n_agents, obs_dim, action_dim)
        }
    }

    pub fn linear_team(&self) -> LinearTeamConfig {
        let mut c = LinearTeamConfig { n_agents: self.n_agents, coupling: self.coupling, noise_std: self.process_noise, ..Default::default() };
        if self.episode_limit > 0 {
            c.episode_limit = self.episode_limit;
        }
        c
    }

    pub fn build_env(&self) -> Result<Box<dyn EnvInterface>, HarnessError> {
        let hooks = EnvHooks { obs_noise_std: self.obs_noise_std, action_delay: self.action_delay };
        let limit = |default: usize| if self.episode_limit > 0 { self.episode_limit } else { default };
        Ok(match self.env {
            EnvKind::CorridorGate => {
                let d = CorridorGateConfig::default();
                let c = CorridorGateConfig { n_agents: self.n_agents, episode_limit: limit(d.episode_limit), ..d };
                Box::new(Hooked::new(CorridorGateEnv::new(c)?, hooks))
            }
            EnvKind::PushBox2d => {
                let d = PushBox2DConfig::default();
                let c = PushBox2DConfig { episode_limit: limit(d.episode_limit), ..d };
                Box::new(Hooked::new(PushBox2DEnv::new(c)?, hooks))
            }
            EnvKind::LinearTeam => Box::new(Hooked::new(LinearTeamEnv::new(self.linear_team())?, hooks)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_lists_every_key_once() {
        let table = toml::Table::try_from(RunConfig::default()).unwrap();
        let keys: Vec<&str> = SCHEMA.iter().map(|(k, _)| *k).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), keys.len());
        assert_eq!(table.len(), keys.len());
        assert!(keys.iter().all(|k| table.contains_key(*k)));
        assert!(RunConfig::schema_text().lines().count() == keys.len());
    }

    #[test]
    fn toml_roundtrip_and_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        let partial = RunConfig::from_toml_str("env = \"linear_team\"\nn_agents = 3\n").unwrap();
        assert_eq!(partial.env, EnvKind::LinearTeam);
        assert_eq!(partial.batch_size, 1000);
        assert_eq!(partial.buffer_capacity, 1_000_000);
        assert_eq!(partial.gamma, 0.99);
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("batch_sise = 3\n").is_err());
        assert!(RunConfig::from_toml_str("drop_prob = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("latent_dim = 30\n").is_err());
        assert!(RunConfig::from_toml_str("cutoff_ratio = 0.7\n").is_err());
    }

    #[test]
    fn overrides_are_typed() {
        let cfg = RunConfig::default();
        let o = |k: &str, v: &str| vec![(k.to_string(), v.to_string())];
        assert_eq!(cfg.with_overrides(&o("batch_size", "64")).unwrap().batch_size, 64);
        assert_eq!(cfg.with_overrides(&o("kl_threshold", "0.5")).unwrap().kl_threshold, 0.5);
        assert!(cfg.with_overrides(&o("permute", "true")).unwrap().permute);
        assert_eq!(cfg.with_overrides(&o("env", "push_box2d")).unwrap().env, EnvKind::PushBox2d);
        assert!(cfg.with_overrides(&o("batch_size", "many")).is_err());
        assert!(cfg.with_overrides(&o("nope", "1")).is_err());
        assert!(cfg.with_overrides(&o("env", "maze")).is_err());
    }
}
