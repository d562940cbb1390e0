//! Episode-structured replay storage.

use std::collections::VecDeque;

use rand::Rng;

use crate::worldmodel::Window;

/// One finished (or truncated) episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// `obs[t][agent]`, one more entry than `actions`.
    pub obs: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<f64>,
    /// Ended in a terminal state; a time-limit cut leaves this false.
    pub terminal: bool,
}

impl Episode {
    pub fn new(first_obs: Vec<Vec<f64>>) -> Self {
        Self { obs: vec![first_obs], actions: Vec::new(), rewards: Vec::new(), terminal: false }
    }

    pub fn push(&mut self, actions: Vec<Vec<f64>>, reward: f64, next_obs: Vec<Vec<f64>>) {
        self.actions.push(actions);
        self.rewards.push(reward);
        self.obs.push(next_obs);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Drops the first transition.
    fn pop_front(&mut self) {
        self.obs.remove(0);
        self.actions.remove(0);
        self.rewards.remove(0);
    }
}

#[derive(Clone, Debug)]
struct Stored {
    id: u64,
    episode: Episode,
    /// Transitions removed from the front to respect capacity.
    offset: usize,
}

/// Holds at most `capacity` transitions; whole oldest episodes are evicted
/// first, and an episode longer than the capacity loses its earliest steps.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Stored>,
    transitions: usize,
    next_id: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, episodes: VecDeque::new(), transitions: 0, next_id: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.transitions
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Adds an episode and returns its id.
    pub fn add(&mut self, mut episode: Episode) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let mut offset = 0;
        while episode.len() > self.capacity {
            episode.pop_front();
            offset += 1;
        }
        while self.transitions + episode.len() > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty while over capacity");
            self.transitions -= old.episode.len();
        }
        self.transitions += episode.len();
        if !episode.is_empty() {
            self.episodes.push_back(Stored { id, episode, offset });
        }
        id
    }

    /// Number of start points that admit a window of at least `min_len` transitions.
    pub fn num_windows(&self, min_len: usize) -> usize {
        self.episodes.iter().map(|s| (s.episode.len() + 1).saturating_sub(min_len.max(1))).sum()
    }

    /// Uniform sample over valid start points. Each window holds
    /// `min(max_len, remaining)` transitions and never leaves its episode.
    /// Returns `None` when no start point admits `min_len` transitions.
    pub fn sample(&self, count: usize, min_len: usize, max_len: usize, rng: &mut impl Rng) -> Option<Vec<Window>> {
        let min_len = min_len.max(1);
        let total = self.num_windows(min_len);
        if total == 0 {
            return None;
        }
        let counts: Vec<usize> = self.episodes.iter().map(|s| (s.episode.len() + 1).saturating_sub(min_len)).collect();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut k = rng.gen_range(0..total);
            let mut e = 0;
            while k >= counts[e] {
                k -= counts[e];
                e += 1;
            }
            out.push(self.window(e, k, max_len.max(min_len)));
        }
        Some(out)
    }

    fn window(&self, e: usize, start: usize, max_len: usize) -> Window {
        let s = &self.episodes[e];
        let ep = &s.episode;
        let end = (start + max_len).min(ep.len());
        Window {
            obs: ep.obs[start..=end].to_vec(),
            actions: ep.actions[start..end].to_vec(),
            rewards: ep.rewards[start..end].to_vec(),
            terminal: ep.terminal && end == ep.len(),
            episode: s.id,
            start: start + s.offset,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar single-agent episode whose values encode `(id, t)`.
    fn episode(id: usize, len: usize, terminal: bool) -> Episode {
        let tag = |t: usize| vec![vec![(id * 1000 + t) as f64]];
        let mut e = Episode::new(tag(0));
        for t in 0..len {
            e.push(tag(t), t as f64, tag(t + 1));
        }
        e.terminal = terminal;
        e
    }

    #[test]
    fn evicts_whole_oldest_episodes() {
        let mut b = ReplayBuffer::new(10);
        b.add(episode(0, 4, true));
        b.add(episode(1, 4, true));
        assert_eq!(b.len(), 8);
        b.add(episode(2, 4, false));
        assert_eq!((b.len(), b.num_episodes()), (8, 2));
        b.add(episode(3, 12, false));
        assert_eq!((b.len(), b.num_episodes()), (10, 1));
    }

    #[test]
    fn windows_truncate_at_episode_end_and_carry_terminal() {
        let mut b = ReplayBuffer::new(100);
        b.add(episode(0, 5, true));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ws = b.sample(200, 3, 4, &mut rng).unwrap();
        for w in &ws {
            assert!(w.len() >= 3 && w.len() <= 4);
            assert_eq!(w.terminal, w.start + w.len() == 5);
            assert_eq!(w.obs.len(), w.len() + 1);
        }
        assert_eq!(b.num_windows(3), 3);
        assert!(b.sample(1, 6, 6, &mut rng).is_none());
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..5 {
            b.add(episode(i, 7 + i, i % 2 == 0));
        }
        let a = b.sample(32, 3, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = b.sample(32, 3, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, c);
    }

    proptest! {
        #[test]
        fn windows_never_cross_episodes(
            lens in proptest::collection::vec(0usize..30, 1..12),
            cap in 5usize..120,
            h in 1usize..5,
            n in 1usize..25,
            seed in 0u64..1000,
        ) {
            let mut b = ReplayBuffer::new(cap);
            for (i, &len) in lens.iter().enumerate() {
                b.add(episode(i, len, i % 3 == 0));
                prop_assert!(b.len() <= cap);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if let Some(ws) = b.sample(16, h, h + n, &mut rng) {
                for w in ws {
                    let id = w.episode as usize;
                    prop_assert!(w.len() >= h && w.len() <= h + n);
                    for (k, o) in w.obs.iter().enumerate() {
                        prop_assert_eq!(o[0][0] as usize, id * 1000 + w.start + k);
                    }
                }
            }
        }
    }
}
