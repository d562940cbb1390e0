//! Planar point-mass agents that must pass through a gate in a wall at `x = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, EnvError, EnvInterface, StepResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorridorGateConfig {
    pub n_agents: usize,
    /// Seconds per step.
    pub dt: f64,
    /// Metres per second at full action.
    pub v_max: f64,
    pub gate_width: f64,
    pub agent_radius: f64,
    pub arena_half_x: f64,
    pub arena_half_y: f64,
    pub start_x: (f64, f64),
    pub start_half_y: f64,
    pub goal_x: f64,
    pub goal_spread_y: f64,
    pub episode_limit: usize,
    pub progress_coef: f64,
    pub collision_penalty: f64,
    pub time_penalty: f64,
    pub success_bonus: f64,
}

impl Default for CorridorGateConfig {
    fn default() -> Self {
        Self {
            n_agents: 2,
            dt: 0.1,
            v_max: 1.0,
            gate_width: 0.5,
            agent_radius: 0.08,
            arena_half_x: 2.0,
            arena_half_y: 1.5,
            start_x: (-1.4, -0.8),
            start_half_y: 0.9,
            goal_x: 0.8,
            goal_spread_y: 0.8,
            episode_limit: 60,
            progress_coef: 5.0,
            collision_penalty: 5.0,
            time_penalty: 0.5,
            success_bonus: 10.0,
        }
    }
}

type Vec2 = [f64; 2];

fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub struct CorridorGateEnv {
    cfg: CorridorGateConfig,
    pos: Vec<Vec2>,
    vel: Vec<Vec2>,
    goals: Vec<Vec2>,
    collided: bool,
    collisions: usize,
    t: usize,
    done: bool,
    ready: bool,
    rng: ChaCha8Rng,
}

impl CorridorGateEnv {
    pub fn new(cfg: CorridorGateConfig) -> Result<Self, EnvError> {
        if !(2..=5).contains(&cfg.n_agents) {
            return Err(EnvError::Config(format!("corridor gate supports 2 to 5 agents, got {}", cfg.n_agents)));
        }
        if !(cfg.gate_width > 2.0 * cfg.agent_radius) || !(cfg.dt > 0.0) || !(cfg.v_max > 0.0) {
            return Err(EnvError::Config("gate must be wider than one agent; dt and v_max positive".into()));
        }
        let n = cfg.n_agents;
        let goals = (0..n)
            .map(|i| {
                let f = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 - 0.5 };
                [cfg.goal_x, f * cfg.goal_spread_y]
            })
            .collect();
        Ok(Self {
            pos: vec![[0.0; 2]; n],
            vel: vec![[0.0; 2]; n],
            goals,
            collided: false,
            collisions: 0,
            t: 0,
            done: false,
            ready: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            cfg,
        })
    }

    pub fn config(&self) -> &CorridorGateConfig {
        &self.cfg
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.pos
    }

    /// Places agents at explicit positions (at rest) and marks the episode live.
    pub fn set_positions(&mut self, pos: &[Vec2]) {
        assert_eq!(pos.len(), self.cfg.n_agents);
        self.pos = pos.to_vec();
        self.vel = vec![[0.0; 2]; pos.len()];
        self.t = 0;
        self.done = false;
        self.collided = false;
        self.ready = true;
    }

    /// Total agent-agent contact events so far.
    pub fn collision_count(&self) -> usize {
        self.collisions
    }

    fn half_opening(&self) -> f64 {
        0.5 * self.cfg.gate_width - self.cfg.agent_radius
    }

    /// Path length to the goal, routed through the gate while still left of the wall.
    fn potential(&self, i: usize) -> f64 {
        let p = self.pos[i];
        let goal = self.goals[i];
        if p[0] < 0.0 {
            let h = self.half_opening();
            let gate = [0.0, p[1].clamp(-h, h)];
            dist(p, gate) + dist(gate, goal)
        } else {
            dist(p, goal)
        }
    }

    fn past_gate(&self, i: usize) -> bool {
        self.pos[i][0] > self.cfg.agent_radius
    }

    /// Moves agent `i` by `v * dt`, stopping x-motion where the path would cross the wall.
    fn advance(&mut self, i: usize, v: Vec2) {
        let p = self.pos[i];
        let mut q = [p[0] + v[0] * self.cfg.dt, p[1] + v[1] * self.cfg.dt];
        let crosses = (p[0] < 0.0) != (q[0] < 0.0);
        if crosses {
            let s = p[0] / (p[0] - q[0]);
            let y = p[1] + s * (q[1] - p[1]);
            if y.abs() > self.half_opening() {
                q[0] = p[0];
            }
        }
        q[0] = q[0].clamp(-self.cfg.arena_half_x, self.cfg.arena_half_x);
        q[1] = q[1].clamp(-self.cfg.arena_half_y, self.cfg.arena_half_y);
        self.vel[i] = [(q[0] - p[0]) / self.cfg.dt, (q[1] - p[1]) / self.cfg.dt];
        self.pos[i] = q;
    }

    fn colliding_pairs(&self) -> usize {
        let n = self.cfg.n_agents;
        let mut count = 0;
        for i in 0..n {
            for j in i + 1..n {
                if dist(self.pos[i], self.pos[j]) < 2.0 * self.cfg.agent_radius {
                    count += 1;
                }
            }
        }
        count
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_agents)
            .map(|i| {
                let [x, y] = self.pos[i];
                let mut o = vec![x, y, self.vel[i][0] / self.cfg.v_max, self.vel[i][1] / self.cfg.v_max];
                o.push(self.goals[i][0] - x);
                o.push(self.goals[i][1] - y);
                for j in (0..self.cfg.n_agents).filter(|&j| j != i) {
                    o.push(self.pos[j][0] - x);
                    o.push(self.pos[j][1] - y);
                }
                o
            })
            .collect()
    }
}

impl EnvInterface for CorridorGateEnv {
    fn name(&self) -> &'static str {
        "corridor_gate"
    }
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }
    fn obs_dim(&self) -> usize {
        6 + 2 * (self.cfg.n_agents - 1)
    }
    fn act_dim(&self) -> usize {
        2
    }
    fn episode_limit(&self) -> usize {
        self.cfg.episode_limit
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.cfg.n_agents;
        let min_gap = 3.0 * self.cfg.agent_radius;
        let mut pos: Vec<Vec2> = Vec::with_capacity(n);
        while pos.len() < n {
            let c = [
                self.rng.gen_range(self.cfg.start_x.0..=self.cfg.start_x.1),
                self.rng.gen_range(-self.cfg.start_half_y..=self.cfg.start_half_y),
            ];
            if pos.iter().all(|&p| dist(p, c) >= min_gap) {
                pos.push(c);
            }
        }
        self.set_positions(&pos);
        self.collisions = 0;
        self.observe()
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult, EnvError> {
        if !self.ready {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        check_actions(actions, self.cfg.n_agents, 2)?;
        let before: Vec<f64> = (0..self.cfg.n_agents).map(|i| self.potential(i)).collect();
        for (i, a) in actions.iter().enumerate() {
            let v = [a[0].clamp(-1.0, 1.0) * self.cfg.v_max, a[1].clamp(-1.0, 1.0) * self.cfg.v_max];
            self.advance(i, v);
        }
        self.t += 1;
        let progress: f64 = (0..self.cfg.n_agents).map(|i| before[i] - self.potential(i)).sum();
        let pairs = self.colliding_pairs();
        if pairs > 0 {
            self.collided = true;
            self.collisions += pairs;
        }
        let mut reward = self.cfg.progress_coef * progress - self.cfg.time_penalty - self.cfg.collision_penalty * pairs as f64;
        let all_past = (0..self.cfg.n_agents).all(|i| self.past_gate(i));
        let success = all_past && !self.collided;
        if success {
            reward += self.cfg.success_bonus;
        }
        let truncated = !all_past && self.t >= self.cfg.episode_limit;
        self.done = all_past || truncated;
        Ok(StepResult { obs: self.observe(), reward, done: self.done, truncated, success })
    }

    fn state(&self) -> Vec<f64> {
        self.pos.iter().chain(&self.vel).flat_map(|p| p.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> CorridorGateEnv {
        CorridorGateEnv::new(CorridorGateConfig::default()).unwrap()
    }

    #[test]
    fn full_x_action_advances_by_dt_vmax() {
        let mut e = env();
        e.set_positions(&[[-1.0, 0.5], [-1.0, -0.5]]);
        let r = e.step(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!((e.positions()[0][0] - (-0.9)).abs() < 1e-12);
        assert_eq!(e.positions()[0][1], 0.5);
        assert_eq!(e.positions()[1], [-1.0, -0.5]);
        assert!((r.obs[0][2] - 1.0).abs() < 1e-12);
        assert_eq!(r.obs.len(), 2);
    }

    #[test]
    fn wall_blocks_outside_gate_and_gate_lets_through() {
        let mut e = env();
        e.set_positions(&[[-0.05, 0.8], [-0.05, 0.0]]);
        e.step(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(e.positions()[0][0], -0.05);
        assert!((e.positions()[1][0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn collisions_symmetric_and_block_success() {
        let mut e = env();
        e.set_positions(&[[0.5, 0.0], [0.6, 0.0]]);
        let r = e.step(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(r.done && !r.success && !r.truncated);
        assert!(r.reward < -0.9);
        let mut e = env();
        e.set_positions(&[[0.6, 0.0], [0.5, 0.0]]);
        let r2 = e.step(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(r.reward, r2.reward);
    }

    #[test]
    fn success_when_all_agents_past_gate() {
        let mut e = env();
        e.set_positions(&[[0.05, 0.1], [0.05, -0.1]]);
        let r = e.step(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(r.done && r.success);
        assert!(e.step(&[vec![0.0; 2], vec![0.0; 2]]).is_err());
    }

    #[test]
    fn reset_is_deterministic_and_truncates() {
        let mut a = env();
        let mut b = env();
        assert_eq!(a.reset(17), b.reset(17));
        assert_ne!(a.reset(18), b.reset(17));
        let mut last = None;
        for _ in 0..a.episode_limit() {
            last = Some(a.step(&[vec![-1.0, 0.0], vec![-1.0, 0.0]]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done && last.truncated && !last.success);
    }
}
