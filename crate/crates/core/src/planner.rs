//! Sampling-based planner over a learned latent model: Gaussian and
//! actor-guided candidates, elite reweighting, low-pass noise smoothing
//! and KL-based early stopping.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Matrix;
use crate::comm::MessageSchedule;
use crate::worldmodel::{ModelError, PlanningModel};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("cutoff ratio {0} outside (0, 0.5)")]
    InvalidCutoff(f64),
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("distribution shape {actual:?} does not match {expected:?}")]
    Shape { expected: (usize, usize), actual: (usize, usize) },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub iterations: usize,
    pub temperature: f64,
    pub gaussian_samples: usize,
    pub actor_samples: usize,
    pub elites: usize,
    pub gamma: f64,
    /// Stop once KL(new || old) falls below this; 0 runs every iteration.
    pub kl_threshold: f64,
    /// `f_c / f_s` of the noise filter; 0 disables filtering.
    pub cutoff_ratio: f64,
    pub sigma_init: f64,
    pub sigma_floor: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            iterations: 6,
            temperature: 0.5,
            gaussian_samples: 512,
            actor_samples: 24,
            elites: 64,
            gamma: 0.99,
            kl_threshold: 0.0,
            cutoff_ratio: 0.2,
            sigma_init: 0.5,
            sigma_floor: 0.05,
        }
    }
}

impl PlannerConfig {
    pub fn num_candidates(&self) -> usize {
        self.gaussian_samples + self.actor_samples
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::Config(m.to_string()));
        if self.horizon == 0 || self.iterations == 0 {
            return bad("horizon and iterations must be at least 1");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.elites == 0 || self.elites > self.num_candidates() {
            return bad("elites must be in 1..=gaussian_samples + actor_samples");
        }
        if !(self.sigma_floor > 0.0) || self.sigma_init < self.sigma_floor {
            return bad("need 0 < sigma_floor <= sigma_init");
        }
        if self.kl_threshold < 0.0 || !(0.0..=1.0).contains(&self.gamma) {
            return bad("kl_threshold must be >= 0 and gamma in [0, 1]");
        }
        if self.cutoff_ratio != 0.0 {
            filter_coefficient(self.cutoff_ratio)?;
        }
        Ok(())
    }
}

/// Diagonal Gaussian over an `H x |A|` action sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub mean: Matrix,
    pub std: Matrix,
}

impl ActionDistribution {
    pub fn new(horizon: usize, action_dim: usize, sigma: f64) -> Self {
        Self { mean: Matrix::zeros(horizon, action_dim), std: Matrix::filled(horizon, action_dim, sigma) }
    }

    pub fn horizon(&self) -> usize {
        self.mean.rows()
    }

    pub fn action_dim(&self) -> usize {
        self.mean.cols()
    }

    /// Receding-horizon shift: drop the first step, repeat the last, reset std.
    pub fn warm_start(&self, sigma: f64) -> Self {
        let (h, a) = self.mean.shape();
        let mut mean = Matrix::zeros(h, a);
        for t in 0..h {
            mean.row_mut(t).copy_from_slice(self.mean.row((t + 1).min(h - 1)));
        }
        Self { mean, std: Matrix::filled(h, a, sigma) }
    }
}

/// Which sampler produced a candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Gaussian,
    Actor,
}

/// Candidates stored step-major: `actions[h]` is `N x |A|`.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub actions: Vec<Matrix>,
    pub values: Vec<f64>,
    pub sources: Vec<CandidateSource>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Candidate `k` as an `H x |A|` matrix.
    pub fn candidate(&self, k: usize) -> Matrix {
        Matrix::from_rows(&self.actions.iter().map(|m| m.row(k).to_vec()).collect::<Vec<_>>())
    }
}

/// `beta` of the first-order low-pass recursion.
pub fn filter_coefficient(cutoff_ratio: f64) -> Result<f64, PlannerError> {
    if !(cutoff_ratio > 0.0 && cutoff_ratio < 0.5) {
        return Err(PlannerError::InvalidCutoff(cutoff_ratio));
    }
    // (1 - tan x) / (1 + tan x) written as tan(pi/4 - x), exact at 0.25.
    Ok((std::f64::consts::PI * (0.25 - cutoff_ratio)).tan())
}

/// First-order Butterworth filter along the rows (time) of `x`, per column:
/// `y[t] = (1 - beta) / 2 * (x[t] + x[t-1]) + beta * y[t-1]`, `y[0] = x[0]`.
pub fn lowpass_filter(x: &Matrix, cutoff_ratio: f64) -> Result<Matrix, PlannerError> {
    let beta = filter_coefficient(cutoff_ratio)?;
    let g = 0.5 * (1.0 - beta);
    let mut y = x.clone();
    for t in 1..x.rows() {
        for d in 0..x.cols() {
            let v = g * (x.get(t, d) + x.get(t - 1, d)) + beta * y.get(t - 1, d);
            y.set(t, d, v);
        }
    }
    Ok(y)
}

/// Closed-form `KL(p || q)` summed over every dimension.
pub fn kl_diag_gaussian(p: &ActionDistribution, q: &ActionDistribution) -> f64 {
    assert_eq!(p.mean.shape(), q.mean.shape(), "KL shape mismatch");
    let mut kl = 0.0;
    for i in 0..p.mean.len() {
        let (mp, sp) = (p.mean.data()[i], p.std.data()[i]);
        let (mq, sq) = (q.mean.data()[i], q.std.data()[i]);
        kl += (sq / sp).ln() + (sp * sp + (mp - mq).powi(2)) / (2.0 * sq * sq) - 0.5;
    }
    kl
}

/// Message features per rollout step `0..=H` for `model`.
pub fn schedule_features(model: &impl PlanningModel, schedule: &MessageSchedule, horizon: usize) -> Result<Vec<Vec<f64>>, PlannerError> {
    (0..=horizon).map(|h| Ok(model.message_features(schedule.step(h))?)).collect()
}

/// Draws `N_p` filtered Gaussian sequences around `dist` and `N_a` closed-loop
/// actor rollouts through the model.
pub fn sample_candidates(
    dist: &ActionDistribution,
    model: &impl PlanningModel,
    z0: &[f64],
    features: &[Vec<f64>],
    cfg: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<CandidateSet, PlannerError> {
    let (h_len, ad) = dist.mean.shape();
    let n = cfg.num_candidates();
    let mut actions = vec![Matrix::zeros(n, ad); h_len];
    for k in 0..cfg.gaussian_samples {
        let mut noise = Matrix::from_vec(h_len, ad, (0..h_len * ad).map(|_| rng.sample(StandardNormal)).collect());
        if cfg.cutoff_ratio > 0.0 {
            noise = lowpass_filter(&noise, cfg.cutoff_ratio)?;
        }
        for (h, step) in actions.iter_mut().enumerate() {
            for d in 0..ad {
                let v = dist.mean.get(h, d) + dist.std.get(h, d) * noise.get(h, d);
                step.set(k, d, v.clamp(-1.0, 1.0));
            }
        }
    }
    if cfg.actor_samples > 0 {
        let na = cfg.actor_samples;
        let mut z = Matrix::broadcast_row(z0, na);
        for h in 0..h_len {
            let noise = Matrix::from_vec(na, ad, (0..na * ad).map(|_| rng.sample(StandardNormal)).collect());
            let a = model.policy_batch(&z, &features[h], Some(&noise))?;
            for r in 0..na {
                for d in 0..ad {
                    actions[h].set(cfg.gaussian_samples + r, d, a.get(r, d).clamp(-1.0, 1.0));
                }
            }
            if h + 1 < h_len {
                z = model.step_batch(&z, &a, &features[h])?.0;
            }
        }
    }
    let mut sources = vec![CandidateSource::Gaussian; cfg.gaussian_samples];
    sources.resize(n, CandidateSource::Actor);
    Ok(CandidateSet { actions, values: vec![f64::NAN; n], sources })
}

/// `V = sum_h gamma^h r_h + gamma^H Q(z_H, pi(z_H))` for every candidate.
pub fn evaluate_candidates(
    set: &CandidateSet,
    model: &impl PlanningModel,
    z0: &[f64],
    features: &[Vec<f64>],
    cfg: &PlannerConfig,
) -> Result<Vec<f64>, PlannerError> {
    let h_len = set.actions.len();
    let mut z = Matrix::broadcast_row(z0, set.len());
    let mut values = vec![0.0; set.len()];
    let mut discount = 1.0;
    for h in 0..h_len {
        let (next, rewards) = model.step_batch(&z, &set.actions[h], &features[h])?;
        for (v, r) in values.iter_mut().zip(&rewards) {
            *v += discount * r;
        }
        discount *= cfg.gamma;
        z = next;
    }
    let last = &features[h_len.min(features.len() - 1)];
    let a = model.policy_batch(&z, last, None)?;
    let q = model.value_batch(&z, &a, last)?;
    let mut dropped = 0;
    for (v, qv) in values.iter_mut().zip(&q) {
        *v += discount * qv;
        if !v.is_finite() {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} candidates with non-finite value discarded");
    }
    Ok(values)
}

/// Refits `dist` to the top-`M` candidates with weights `exp(tau (V - V_max))`.
/// Returns the new distribution and the mean value of the elite set.
pub fn update_distribution(dist: &ActionDistribution, set: &CandidateSet, cfg: &PlannerConfig) -> (ActionDistribution, f64) {
    let mut idx: Vec<usize> = (0..set.len()).filter(|&k| set.values[k].is_finite()).collect();
    if idx.is_empty() {
        log::warn!("no finite candidate values; distribution unchanged");
        return (dist.clone(), f64::NAN);
    }
    idx.sort_by(|&a, &b| set.values[b].total_cmp(&set.values[a]).then(a.cmp(&b)));
    idx.truncate(cfg.elites);
    let vmax = set.values[idx[0]];
    let w: Vec<f64> = idx.iter().map(|&k| (cfg.temperature * (set.values[k] - vmax)).exp()).collect();
    let wsum: f64 = w.iter().sum();
    let elite_mean = idx.iter().map(|&k| set.values[k]).sum::<f64>() / idx.len() as f64;
    let (h_len, ad) = dist.mean.shape();
    let mut out = ActionDistribution { mean: Matrix::zeros(h_len, ad), std: Matrix::zeros(h_len, ad) };
    for h in 0..h_len {
        for d in 0..ad {
            let mu: f64 = idx.iter().zip(&w).map(|(&k, wk)| wk * set.actions[h].get(k, d)).sum::<f64>() / wsum;
            let var: f64 =
                idx.iter().zip(&w).map(|(&k, wk)| wk * (set.actions[h].get(k, d) - mu).powi(2)).sum::<f64>() / wsum;
            out.mean.set(h, d, mu.clamp(-1.0, 1.0));
            out.std.set(h, d, var.sqrt().max(cfg.sigma_floor));
        }
    }
    (out, elite_mean)
}

/// Planned latents `z_0..z_H` and actions `a_0..a_H` (the last from the actor),
/// ready to be published as an outgoing message schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedTrajectory {
    pub latents: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct PlanOutput {
    pub action: Vec<f64>,
    pub distribution: ActionDistribution,
    pub trajectory: PredictedTrajectory,
    pub iterations: usize,
    /// Mean elite value after each iteration.
    pub elite_values: Vec<f64>,
    /// `KL(new || old)` after each iteration.
    pub kl_history: Vec<f64>,
}

/// Rolls the mean sequence through the model from `z0`.
pub fn predict_trajectory(
    model: &impl PlanningModel,
    z0: &[f64],
    mean: &Matrix,
    features: &[Vec<f64>],
) -> Result<PredictedTrajectory, PlannerError> {
    let h_len = mean.rows();
    let mut z = Matrix::row_vector(z0.to_vec());
    let mut latents = vec![z0.to_vec()];
    let mut actions = Vec::with_capacity(h_len + 1);
    for h in 0..h_len {
        let a = Matrix::row_vector(mean.row(h).to_vec());
        z = model.step_batch(&z, &a, &features[h])?.0;
        latents.push(z.data().to_vec());
        actions.push(a.into_vec());
    }
    let last = &features[h_len.min(features.len() - 1)];
    actions.push(model.policy_batch(&z, last, None)?.into_vec());
    Ok(PredictedTrajectory { latents, actions })
}

/// One environment step of planning for a single agent. With `explore` the
/// returned action is drawn from the final first-step Gaussian.
pub fn plan(
    model: &impl PlanningModel,
    obs: &[f64],
    messages: &MessageSchedule,
    warm: Option<&ActionDistribution>,
    cfg: &PlannerConfig,
    explore: bool,
    rng: &mut impl Rng,
) -> Result<PlanOutput, PlannerError> {
    let z0 = model.encode(obs)?;
    let features = schedule_features(model, messages, cfg.horizon)?;
    plan_latent(model, &z0, &features, warm, cfg, explore, rng)
}

/// [`plan`] from an already encoded latent and message features.
pub fn plan_latent(
    model: &impl PlanningModel,
    z0: &[f64],
    features: &[Vec<f64>],
    warm: Option<&ActionDistribution>,
    cfg: &PlannerConfig,
    explore: bool,
    rng: &mut impl Rng,
) -> Result<PlanOutput, PlannerError> {
    cfg.validate()?;
    let ad = model.action_dim();
    let expected = (cfg.horizon, ad);
    let mut dist = match warm {
        Some(w) if w.mean.shape() != expected => return Err(PlannerError::Shape { expected, actual: w.mean.shape() }),
        Some(w) => w.warm_start(cfg.sigma_init),
        None => ActionDistribution::new(cfg.horizon, ad, cfg.sigma_init),
    };
    let mut elite_values = Vec::with_capacity(cfg.iterations);
    let mut kl_history = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut set = sample_candidates(&dist, model, z0, features, cfg, rng)?;
        set.values = evaluate_candidates(&set, model, z0, features, cfg)?;
        let (next, elite) = update_distribution(&dist, &set, cfg);
        let kl = kl_diag_gaussian(&next, &dist);
        dist = next;
        elite_values.push(elite);
        kl_history.push(kl);
        if cfg.kl_threshold > 0.0 && kl < cfg.kl_threshold {
            break;
        }
    }
    let mut action = dist.mean.row(0).to_vec();
    if explore {
        for (d, a) in action.iter_mut().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            *a = (*a + dist.std.get(0, d) * eps).clamp(-1.0, 1.0);
        }
    }
    let trajectory = predict_trajectory(model, z0, &dist.mean, features)?;
    Ok(PlanOutput { action, distribution: dist, trajectory, iterations: elite_values.len(), elite_values, kl_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{Message, MessageLayout, MessageMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Latent is carried unchanged; reward depends on the first action dim only.
    struct Quadratic {
        target: f64,
    }

    impl PlanningModel for Quadratic {
        fn latent_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn encode(&self, _obs: &[f64]) -> Result<Vec<f64>, ModelError> {
            Ok(vec![0.0])
        }
        fn message_features(&self, _m: &Message) -> Result<Vec<f64>, ModelError> {
            Ok(Vec::new())
        }
        fn step_batch(&self, z: &Matrix, a: &Matrix, _m: &[f64]) -> Result<(Matrix, Vec<f64>), ModelError> {
            Ok((z.clone(), (0..a.rows()).map(|r| -(a.get(r, 0) - self.target).powi(2)).collect()))
        }
        fn value_batch(&self, z: &Matrix, _a: &Matrix, _m: &[f64]) -> Result<Vec<f64>, ModelError> {
            Ok(vec![0.0; z.rows()])
        }
        fn policy_batch(&self, z: &Matrix, _m: &[f64], noise: Option<&Matrix>) -> Result<Matrix, ModelError> {
            Ok(match noise {
                Some(n) => n.map(|v| (0.5 * v).tanh()),
                None => Matrix::zeros(z.rows(), 1),
            })
        }
    }

    fn schedule(h: usize) -> MessageSchedule {
        MessageSchedule::empty(MessageLayout::new(1, 1, 1, MessageMode::Full), h)
    }

    fn one_d(h: usize) -> PlannerConfig {
        PlannerConfig { horizon: h, ..PlannerConfig::default() }
    }

    #[test]
    fn beta_zero_at_quarter_cutoff_is_moving_average() {
        assert_eq!(filter_coefficient(0.25).unwrap(), 0.0);
        let x = Matrix::column(vec![1.0, 3.0, -1.0, 5.0]);
        let y = lowpass_filter(&x, 0.25).unwrap();
        assert_eq!(y.data()[0], 1.0);
        for t in 1..4 {
            assert!((y.data()[t] - 0.5 * (x.data()[t] + x.data()[t - 1])).abs() < 1e-12);
        }
        assert!(lowpass_filter(&x, 0.5).is_err());
        assert!(lowpass_filter(&x, 0.0).is_err());
    }

    #[test]
    fn filter_has_unity_dc_gain_and_half_power_at_cutoff() {
        let y = lowpass_filter(&Matrix::filled(200, 2, 2.5), 0.2).unwrap();
        assert!((y.get(199, 1) - 2.5).abs() < 1e-9);
        let n = 4000;
        let x = Matrix::column((0..n).map(|t| (2.0 * std::f64::consts::PI * 0.2 * t as f64).sin()).collect());
        let y = lowpass_filter(&x, 0.2).unwrap();
        // five samples per period miss the crest; the RMS of a sampled sine is still A / sqrt(2)
        let rms = (y.data()[n - 1000..].iter().map(|v| v * v).sum::<f64>() / 1000.0).sqrt();
        assert!((rms * 2f64.sqrt() - 1.0 / 2f64.sqrt()).abs() < 0.02 / 2f64.sqrt(), "rms {rms}");
    }

    #[test]
    fn filtered_noise_is_smoother() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_vec(5000, 1, (0..5000).map(|_| rng.sample(StandardNormal)).collect());
        let y = lowpass_filter(&x, 0.2).unwrap();
        let msd = |m: &Matrix| m.data().windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>();
        assert!(msd(&y) < msd(&x));
    }

    #[test]
    fn kl_reference_values() {
        let p = ActionDistribution { mean: Matrix::scalar(1.0), std: Matrix::scalar(1.0) };
        let q = ActionDistribution { mean: Matrix::scalar(0.0), std: Matrix::scalar(1.0) };
        assert_eq!(kl_diag_gaussian(&p, &p), 0.0);
        assert!((kl_diag_gaussian(&p, &q) - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let mut r = || Matrix::from_vec(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let a = ActionDistribution { mean: r(), std: r().map(|v| v.abs() + 0.05) };
            let b = ActionDistribution { mean: r(), std: r().map(|v| v.abs() + 0.05) };
            assert!(kl_diag_gaussian(&a, &b) >= -1e-12);
        }
    }

    #[test]
    fn degenerate_sigma_gives_mean_candidates_within_bounds() {
        let cfg = PlannerConfig { cutoff_ratio: 0.0, actor_samples: 4, ..one_d(2) };
        let mut dist = ActionDistribution::new(2, 1, 1e-12);
        dist.mean.set(0, 0, 0.4);
        dist.mean.set(1, 0, -0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = sample_candidates(&dist, &Quadratic { target: 0.0 }, &[0.0], &vec![vec![]; 3], &cfg, &mut rng).unwrap();
        assert_eq!(set.len(), 516);
        for k in 0..cfg.gaussian_samples {
            let c = set.candidate(k);
            assert!((c.get(0, 0) - 0.4).abs() < 1e-9 && (c.get(1, 0) + 0.7).abs() < 1e-9);
        }
        let wide = ActionDistribution::new(2, 1, 5.0);
        let set = sample_candidates(&wide, &Quadratic { target: 0.0 }, &[0.0], &vec![vec![]; 3], &cfg, &mut rng).unwrap();
        assert!(set.actions.iter().all(|m| m.data().iter().all(|v| v.abs() <= 1.0)));
        assert_eq!(set.sources[515], CandidateSource::Actor);
    }

    #[test]
    fn myopic_value_is_first_reward_and_evaluation_is_pure() {
        let cfg = PlannerConfig { gamma: 0.0, ..one_d(1) };
        let set = CandidateSet {
            actions: vec![Matrix::column(vec![0.1, 0.1, -0.5])],
            values: vec![0.0; 3],
            sources: vec![CandidateSource::Gaussian; 3],
        };
        let v = evaluate_candidates(&set, &Quadratic { target: 0.3 }, &[0.0], &vec![vec![]; 2], &cfg).unwrap();
        assert!((v[2] + 0.64).abs() < 1e-12);
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn elite_weights_and_symmetric_average() {
        let cfg = PlannerConfig { elites: 2, ..one_d(1) };
        let set = CandidateSet {
            actions: vec![Matrix::column(vec![0.2, -0.4, 0.9])],
            values: vec![3.0, 3.0, 1.0],
            sources: vec![CandidateSource::Gaussian; 3],
        };
        let (d, elite) = update_distribution(&ActionDistribution::new(1, 1, 0.5), &set, &cfg);
        assert!((d.mean.get(0, 0) + 0.1).abs() < 1e-12);
        assert!((d.std.get(0, 0) - 0.3).abs() < 1e-12);
        assert_eq!(elite, 3.0);
        let set = CandidateSet { values: vec![f64::NAN; 3], ..set };
        let (d2, _) = update_distribution(&d, &set, &cfg);
        assert_eq!(d2, d);
    }

    #[test]
    fn warm_start_shifts_and_repeats_last() {
        let mut d = ActionDistribution::new(3, 1, 0.1);
        for h in 0..3 {
            d.mean.set(h, 0, h as f64 / 10.0);
        }
        let w = d.warm_start(0.5);
        assert_eq!(w.mean.data(), &[0.1, 0.2, 0.2]);
        assert!(w.std.data().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn quadratic_oracle_and_iteration_counts() {
        let model = Quadratic { target: 0.3 };
        let cfg = one_d(1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = plan(&model, &[0.0], &schedule(1), None, &cfg, false, &mut rng).unwrap();
        assert_eq!(out.iterations, 6);
        assert!((out.action[0] - 0.3).abs() < 0.02, "{:?}", out.action);
        assert_eq!(out.trajectory.latents.len(), 2);
        assert_eq!(out.trajectory.actions.len(), 2);
        let early = PlannerConfig { kl_threshold: 0.5, ..cfg };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out2 = plan(&model, &[0.0], &schedule(1), None, &early, false, &mut rng).unwrap();
        assert!(out2.iterations <= out.iterations);
    }

    #[test]
    fn planning_is_deterministic_per_seed() {
        let model = Quadratic { target: -0.2 };
        let cfg = one_d(3);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            plan(&model, &[0.0], &schedule(3), None, &cfg, true, &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.action, b.action);
        assert_eq!(a.distribution, b.distribution);
    }

    #[test]
    fn elite_value_improves_on_average() {
        let model = Quadratic { target: 0.6 };
        let cfg = PlannerConfig { gaussian_samples: 64, actor_samples: 0, elites: 8, ..one_d(2) };
        let mut sums = vec![0.0; cfg.iterations];
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = plan(&model, &[0.0], &schedule(2), None, &cfg, false, &mut rng).unwrap();
            for (s, v) in sums.iter_mut().zip(&out.elite_values) {
                *s += v;
            }
        }
        for w in sums.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{sums:?}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(PlannerConfig::default().validate().is_ok());
        assert!(PlannerConfig { elites: 600, ..PlannerConfig::default() }.validate().is_err());
        assert!(PlannerConfig { temperature: 0.0, ..PlannerConfig::default() }.validate().is_err());
        assert!(PlannerConfig { cutoff_ratio: 0.7, ..PlannerConfig::default() }.validate().is_err());
    }
}
