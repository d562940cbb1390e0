//! Two agents push a long box towards a target with quasi-static response:
//! box velocity is proportional to the net push beyond friction, and turning
//! follows the torque of the two contact forces. Equal pushes translate, a
//! lone push turns the box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, EnvError, EnvInterface, StepResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushBox2DConfig {
    pub dt: f64,
    /// Newtons at full push.
    pub max_force: f64,
    /// Share of `max_force` available tangentially.
    pub tangential_share: f64,
    /// Force absorbed by ground friction before the box moves.
    pub friction: f64,
    /// Half length of the pushed face; contacts sit at its two ends.
    pub half_length: f64,
    pub translation_gain: f64,
    pub rotation_gain: f64,
    pub target: (f64, f64),
    pub init_angle: f64,
    pub success_radius: f64,
    pub success_angle: f64,
    pub episode_limit: usize,
    pub angle_coef: f64,
    pub time_penalty: f64,
    pub success_bonus: f64,
}

impl Default for PushBox2DConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_force: 1.0,
            tangential_share: 0.3,
            friction: 0.2,
            half_length: 0.5,
            translation_gain: 1.0,
            rotation_gain: 1.5,
            target: (2.0, 0.0),
            init_angle: 0.3,
            success_radius: 0.2,
            success_angle: 0.2,
            episode_limit: 80,
            angle_coef: 0.5,
            time_penalty: 0.01,
            success_bonus: 1.0,
        }
    }
}

pub struct PushBox2DEnv {
    cfg: PushBox2DConfig,
    /// `(x, y, theta)`
    pose: [f64; 3],
    vel: [f64; 3],
    t: usize,
    done: bool,
    ready: bool,
    rng: ChaCha8Rng,
}

impl PushBox2DEnv {
    pub fn new(cfg: PushBox2DConfig) -> Result<Self, EnvError> {
        if !(cfg.dt > 0.0 && cfg.max_force > 0.0 && cfg.half_length > 0.0 && cfg.friction >= 0.0) {
            return Err(EnvError::Config("push box needs positive dt, force and size, non-negative friction".into()));
        }
        Ok(Self { cfg, pose: [0.0; 3], vel: [0.0; 3], t: 0, done: false, ready: false, rng: ChaCha8Rng::seed_from_u64(0) })
    }

    pub fn pose(&self) -> [f64; 3] {
        self.pose
    }

    pub fn set_pose(&mut self, pose: [f64; 3]) {
        self.pose = pose;
        self.vel = [0.0; 3];
        self.t = 0;
        self.done = false;
        self.ready = true;
    }

    /// Box twist `(vx, vy, omega)` produced by the joint action.
    pub fn response(&self, actions: &[Vec<f64>]) -> [f64; 3] {
        let th = self.pose[2];
        let n = [th.cos(), th.sin()];
        let tan = [-th.sin(), th.cos()];
        let mut force = [0.0; 2];
        let mut torque = 0.0;
        for (i, a) in actions.iter().enumerate() {
            let push = a[0].max(0.0) * self.cfg.max_force;
            let side = a[1] * self.cfg.max_force * self.cfg.tangential_share;
            let f = [push * n[0] + side * tan[0], push * n[1] + side * tan[1]];
            let offset = if i == 0 { self.cfg.half_length } else { -self.cfg.half_length };
            let r = [offset * tan[0], offset * tan[1]];
            force[0] += f[0];
            force[1] += f[1];
            torque += r[0] * f[1] - r[1] * f[0];
        }
        let mag = force[0].hypot(force[1]);
        let scale = if mag > self.cfg.friction { (mag - self.cfg.friction) / mag } else { 0.0 };
        let t_eff = torque.signum() * (torque.abs() - self.cfg.friction * self.cfg.half_length).max(0.0);
        [
            self.cfg.translation_gain * scale * force[0],
            self.cfg.translation_gain * scale * force[1],
            self.cfg.rotation_gain * t_eff,
        ]
    }

    fn target_distance(&self) -> f64 {
        (self.pose[0] - self.cfg.target.0).hypot(self.pose[1] - self.cfg.target.1)
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        (0..2)
            .map(|i| {
                let side = if i == 0 { 1.0 } else { -1.0 };
                vec![
                    self.cfg.target.0 - self.pose[0],
                    self.cfg.target.1 - self.pose[1],
                    self.pose[2].cos(),
                    self.pose[2].sin(),
                    side,
                    self.vel[2],
                ]
            })
            .collect()
    }
}

impl EnvInterface for PushBox2DEnv {
    fn name(&self) -> &'static str {
        "push_box2d"
    }
    fn n_agents(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        6
    }
    fn act_dim(&self) -> usize {
        2
    }
    fn episode_limit(&self) -> usize {
        self.cfg.episode_limit
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let a = self.cfg.init_angle;
        let pose = [self.rng.gen_range(-0.2..=0.2), self.rng.gen_range(-0.3..=0.3), self.rng.gen_range(-a..=a)];
        self.set_pose(pose);
        self.observe()
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError> {
        if !self.ready {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        check_actions(actions, 2, 2)?;
        let d0 = self.target_distance();
        let a0 = self.pose[2].abs();
        self.vel = self.response(actions);
        for k in 0..3 {
            self.pose[k] += self.vel[k] * self.cfg.dt;
        }
        self.t += 1;
        let mut reward = (d0 - self.target_distance()) - self.cfg.angle_coef * (self.pose[2].abs() - a0) - self.cfg.time_penalty;
        let success = self.target_distance() < self.cfg.success_radius && self.pose[2].abs() < self.cfg.success_angle;
        if success {
            reward += self.cfg.success_bonus;
        }
        let truncated = !success && self.t >= self.cfg.episode_limit;
        self.done = success || truncated;
        Ok(StepResult { obs: self.observe(), reward, done: self.done, truncated, success })
    }

    fn state(&self) -> Vec<f64> {
        self.pose.iter().chain(&self.vel).copied().collect()
    }
}
