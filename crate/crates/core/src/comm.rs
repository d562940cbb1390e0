//! Sequential message protocol.
//!
//! A [`Message`] is a fixed-length, slot-major vector with one slot per
//! agent and a validity bit per slot. Agent `i` receives the slots of its
//! predecessors, fills its own slot, and forwards the result. During
//! planning every agent passes one message per rollout step (a
//! [`MessageSchedule`]), carrying its predicted latents and planned actions.
//!
//! Wire layout (little-endian):
//!
//! ```text
//! version     u16
//! n_agents    u16
//! action_dim  u16
//! latent_dim  u16
//! mode        u8      0 = Full, 1 = ActionOnly
//! validity    ceil(n_agents / 8) bytes, bit j of byte j / 8 (LSB first)
//! payload     n_agents * slot_len f32, slot-major
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WIRE_VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("slot {0} is already filled")]
    SlotOccupied(usize),
    #[error("slot {slot} out of range for {n_agents} agents")]
    SlotOutOfRange { slot: usize, n_agents: usize },
    #[error("{what}: expected length {expected}, got {actual}")]
    Length { what: &'static str, expected: usize, actual: usize },
    #[error("malformed wire message: {0}")]
    Wire(String),
    #[error("message layout {actual:?} does not match expected {expected:?}")]
    LayoutMismatch { expected: MessageLayout, actual: MessageLayout },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageMode {
    /// Slots carry `(latent, action)`.
    Full,
    /// Slots carry the action only.
    ActionOnly,
}

/// Dimensions that fix every slot offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MessageLayout {
    pub n_agents: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub mode: MessageMode,
}

impl MessageLayout {
    pub fn new(n_agents: usize, action_dim: usize, latent_dim: usize, mode: MessageMode) -> Self {
        assert!(n_agents > 0 && action_dim > 0 && latent_dim > 0, "message dimensions must be positive");
        Self { n_agents, action_dim, latent_dim, mode }
    }

    pub fn slot_len(&self) -> usize {
        match self.mode {
            MessageMode::Full => self.latent_dim + self.action_dim,
            MessageMode::ActionOnly => self.action_dim,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.n_agents * self.slot_len()
    }

    /// Width of the network input derived from a message: payload plus validity bits.
    pub fn feature_dim(&self) -> usize {
        self.payload_len() + self.n_agents
    }

    pub fn slot_offset(&self, slot: usize) -> usize {
        slot * self.slot_len()
    }

    /// Writes `(latent, action)` (or the action alone) into a slot buffer.
    pub fn write_slot(&self, dst: &mut [f32], latent: &[f64], action: &[f64]) {
        debug_assert_eq!(dst.len(), self.slot_len());
        let mut it = dst.iter_mut();
        if self.mode == MessageMode::Full {
            for (&z, d) in latent.iter().zip(it.by_ref()) {
                *d = z as f32;
            }
        }
        for (d, &a) in it.zip(action) {
            *d = a as f32;
        }
    }

    fn bitmap_len(&self) -> usize {
        self.n_agents.div_ceil(8)
    }

    pub fn wire_len(&self) -> usize {
        9 + self.bitmap_len() + 4 * self.payload_len()
    }
}

/// Where a slot's content came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotSource {
    Empty,
    Live,
    /// Substituted from the receiver's cache, `age` environment steps old.
    Cached { age: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    layout: MessageLayout,
    payload: Vec<f32>,
    validity: Vec<bool>,
    sources: Vec<SlotSource>,
}

impl Message {
    /// All slots empty.
    pub fn empty(layout: MessageLayout) -> Self {
        Self {
            layout,
            payload: vec![0.0; layout.payload_len()],
            validity: vec![false; layout.n_agents],
            sources: vec![SlotSource::Empty; layout.n_agents],
        }
    }

    /// Builds a message from raw parts without zeroing invalid slots, as a
    /// message decoded from the wire may carry arbitrary bytes there.
    pub fn from_raw_parts(layout: MessageLayout, payload: Vec<f32>, validity: Vec<bool>) -> Result<Self, CommError> {
        if payload.len() != layout.payload_len() {
            return Err(CommError::Length { what: "payload", expected: layout.payload_len(), actual: payload.len() });
        }
        if validity.len() != layout.n_agents {
            return Err(CommError::Length { what: "validity", expected: layout.n_agents, actual: validity.len() });
        }
        let sources = validity.iter().map(|&v| if v { SlotSource::Live } else { SlotSource::Empty }).collect();
        Ok(Self { layout, payload, validity, sources })
    }

    pub fn layout(&self) -> MessageLayout {
        self.layout
    }

    pub fn payload(&self) -> &[f32] {
        &self.payload
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }

    pub fn sources(&self) -> &[SlotSource] {
        &self.sources
    }

    pub fn is_valid(&self, slot: usize) -> bool {
        self.validity.get(slot).copied().unwrap_or(false)
    }

    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|&&v| v).count()
    }

    pub fn slot(&self, slot: usize) -> &[f32] {
        let off = self.layout.slot_offset(slot);
        &self.payload[off..off + self.layout.slot_len()]
    }

    /// Latent part of a slot (empty in action-only mode).
    pub fn slot_latent(&self, slot: usize) -> &[f32] {
        match self.layout.mode {
            MessageMode::Full => &self.slot(slot)[..self.layout.latent_dim],
            MessageMode::ActionOnly => &[],
        }
    }

    pub fn slot_action(&self, slot: usize) -> &[f32] {
        let s = self.slot(slot);
        &s[s.len() - self.layout.action_dim..]
    }

    fn check_slot(&self, slot: usize) -> Result<(), CommError> {
        if slot >= self.layout.n_agents {
            return Err(CommError::SlotOutOfRange { slot, n_agents: self.layout.n_agents });
        }
        Ok(())
    }

    /// Copy of `self` with `slot` filled by `(latent, action)`.
    pub fn append_slot(&self, slot: usize, latent: &[f64], action: &[f64]) -> Result<Message, CommError> {
        self.check_slot(slot)?;
        if self.validity[slot] {
            return Err(CommError::SlotOccupied(slot));
        }
        if self.layout.mode == MessageMode::Full && latent.len() != self.layout.latent_dim {
            return Err(CommError::Length { what: "latent", expected: self.layout.latent_dim, actual: latent.len() });
        }
        if action.len() != self.layout.action_dim {
            return Err(CommError::Length { what: "action", expected: self.layout.action_dim, actual: action.len() });
        }
        let mut out = self.clone();
        let off = self.layout.slot_offset(slot);
        let len = self.layout.slot_len();
        self.layout.write_slot(&mut out.payload[off..off + len], latent, action);
        out.validity[slot] = true;
        out.sources[slot] = SlotSource::Live;
        Ok(out)
    }

    /// Zeroes a slot's payload and clears its validity bit.
    pub fn invalidate(&mut self, slot: usize) {
        let off = self.layout.slot_offset(slot);
        let len = self.layout.slot_len();
        self.payload[off..off + len].iter_mut().for_each(|v| *v = 0.0);
        self.validity[slot] = false;
        self.sources[slot] = SlotSource::Empty;
    }

    fn set_slot_raw(&mut self, slot: usize, payload: &[f32], source: SlotSource) {
        let off = self.layout.slot_offset(slot);
        self.payload[off..off + payload.len()].copy_from_slice(payload);
        self.validity[slot] = true;
        self.sources[slot] = source;
    }

    /// Network input: payload with invalid slots forced to zero, then one
    /// `0/1` validity entry per slot.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout.feature_dim());
        self.write_features(&mut out);
        out
    }

    pub fn write_features(&self, out: &mut Vec<f64>) {
        let len = self.layout.slot_len();
        for (j, &valid) in self.validity.iter().enumerate() {
            if valid {
                out.extend(self.payload[j * len..(j + 1) * len].iter().map(|&v| v as f64));
            } else {
                out.extend(std::iter::repeat(0.0).take(len));
            }
        }
        out.extend(self.validity.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let l = &self.layout;
        let mut out = Vec::with_capacity(l.wire_len());
        out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
        out.extend_from_slice(&(l.n_agents as u16).to_le_bytes());
        out.extend_from_slice(&(l.action_dim as u16).to_le_bytes());
        out.extend_from_slice(&(l.latent_dim as u16).to_le_bytes());
        out.push(match l.mode {
            MessageMode::Full => 0,
            MessageMode::ActionOnly => 1,
        });
        let mut bitmap = vec![0u8; l.bitmap_len()];
        for (j, &v) in self.validity.iter().enumerate() {
            if v {
                bitmap[j / 8] |= 1 << (j % 8);
            }
        }
        out.extend_from_slice(&bitmap);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CommError> {
        let wire = |m: &str| CommError::Wire(m.to_string());
        if bytes.len() < 9 {
            return Err(wire("truncated header"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
        let version = u16_at(0) as u16;
        if version != WIRE_VERSION {
            return Err(CommError::Wire(format!("unsupported version {version}")));
        }
        let (n, a, z) = (u16_at(2), u16_at(4), u16_at(6));
        let mode = match bytes[8] {
            0 => MessageMode::Full,
            1 => MessageMode::ActionOnly,
            m => return Err(CommError::Wire(format!("unknown mode {m}"))),
        };
        if n == 0 || a == 0 || z == 0 {
            return Err(wire("zero dimension in header"));
        }
        let layout = MessageLayout::new(n, a, z, mode);
        if bytes.len() != layout.wire_len() {
            return Err(CommError::Wire(format!("expected {} bytes, got {}", layout.wire_len(), bytes.len())));
        }
        let bitmap = &bytes[9..9 + layout.bitmap_len()];
        if n % 8 != 0 && bitmap[n / 8] >> (n % 8) != 0 {
            return Err(wire("validity bits set beyond agent count"));
        }
        let validity = (0..n).map(|j| bitmap[j / 8] & (1 << (j % 8)) != 0).collect();
        let payload = bytes[9 + layout.bitmap_len()..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Message::from_raw_parts(layout, payload, validity)
    }
}

/// One message per rollout step `h = 0..=H`.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageSchedule {
    steps: Vec<Message>,
}

impl MessageSchedule {
    pub fn empty(layout: MessageLayout, horizon: usize) -> Self {
        Self { steps: vec![Message::empty(layout); horizon + 1] }
    }

    pub fn from_steps(steps: Vec<Message>) -> Self {
        assert!(!steps.is_empty(), "schedule needs at least one step");
        Self { steps }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn layout(&self) -> MessageLayout {
        self.steps[0].layout()
    }

    /// Message for rollout step `h`; steps past the end repeat the last one.
    pub fn step(&self, h: usize) -> &Message {
        &self.steps[h.min(self.steps.len() - 1)]
    }

    pub fn steps(&self) -> &[Message] {
        &self.steps
    }

    /// Fills `slot` at every step from a predicted trajectory of
    /// `horizon + 1` latents and actions.
    pub fn append_trajectory(&self, slot: usize, latents: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Self, CommError> {
        let n = self.steps.len();
        if latents.len() != n || actions.len() != n {
            return Err(CommError::Length { what: "trajectory", expected: n, actual: latents.len().min(actions.len()) });
        }
        let steps = self
            .steps
            .iter()
            .zip(latents.iter().zip(actions))
            .map(|(m, (z, a))| m.append_slot(slot, z, a))
            .collect::<Result<_, _>>()?;
        Ok(Self { steps })
    }
}

/// Bernoulli link drops, independent across attempts.
#[derive(Clone, Debug)]
pub struct LinkModel {
    drop_prob: f64,
    rng: ChaCha8Rng,
}

impl LinkModel {
    pub fn new(drop_prob: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&drop_prob), "drop probability must lie in [0, 1]");
        Self { drop_prob, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn drop_prob(&self) -> f64 {
        self.drop_prob
    }

    /// `true` when the message gets through.
    pub fn attempt(&mut self) -> bool {
        if self.drop_prob <= 0.0 {
            return true;
        }
        !self.rng.gen_bool(self.drop_prob)
    }
}

#[derive(Clone, Debug)]
struct CachedSlot {
    trajectory: Vec<Vec<f32>>,
    received_at: u64,
}

/// A receiver's record of the last schedule it got from upstream.
#[derive(Clone, Debug)]
pub struct CommCache {
    slots: Vec<Option<CachedSlot>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransmitOutcome {
    pub delivered: bool,
    /// Slots filled from the cache after a drop.
    pub cache_hits: usize,
    /// Slots left invalid after a drop (no usable cache entry).
    pub invalidated: usize,
}

impl CommCache {
    pub fn new(n_agents: usize) -> Self {
        Self { slots: vec![None; n_agents] }
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }

    /// Cached payload for `slot` as it would be substituted at `step`, rollout step `h`.
    pub fn lookup(&self, slot: usize, step: u64, h: usize) -> Option<&[f32]> {
        let c = self.slots.get(slot)?.as_ref()?;
        let age = step.checked_sub(c.received_at)? as usize;
        let last = c.trajectory.len() - 1;
        if age == 0 || age > last {
            return None;
        }
        Some(&c.trajectory[(h + age).min(last)])
    }

    fn store(&mut self, schedule: &MessageSchedule, step: u64) {
        for slot in 0..self.slots.len() {
            if schedule.step(0).is_valid(slot) {
                let trajectory = schedule.steps().iter().map(|m| m.slot(slot).to_vec()).collect();
                self.slots[slot] = Some(CachedSlot { trajectory, received_at: step });
            }
        }
    }
}

/// Delivers `schedule` to the receiver over `link`. On success the
/// receiver's cache is refreshed; on a drop each slot in `expected_slots`
/// is taken from the cache (shifted by its age) or left invalid.
pub fn transmit(
    schedule: &MessageSchedule,
    link: &mut LinkModel,
    cache: &mut CommCache,
    expected_slots: &[usize],
    step: u64,
) -> (MessageSchedule, TransmitOutcome) {
    if link.attempt() {
        cache.store(schedule, step);
        return (schedule.clone(), TransmitOutcome { delivered: true, ..Default::default() });
    }
    let layout = schedule.layout();
    let mut outcome = TransmitOutcome::default();
    let mut steps = vec![Message::empty(layout); schedule.steps().len()];
    for &slot in expected_slots {
        let age = cache.slots[slot].as_ref().map(|c| step.saturating_sub(c.received_at) as usize);
        if cache.lookup(slot, step, 0).is_some() {
            outcome.cache_hits += 1;
            for (h, m) in steps.iter_mut().enumerate() {
                let payload = cache.lookup(slot, step, h).expect("cache entry checked above").to_vec();
                m.set_slot_raw(slot, &payload, SlotSource::Cached { age: age.unwrap_or(0) });
            }
        } else {
            outcome.invalidated += 1;
        }
    }
    (MessageSchedule::from_steps(steps), outcome)
}

/// Independently clears each slot of each message with probability `drop_prob`.
pub fn random_mask(messages: &mut [Message], drop_prob: f64, rng: &mut impl Rng) {
    assert!((0.0..=1.0).contains(&drop_prob), "drop probability must lie in [0, 1]");
    if drop_prob <= 0.0 {
        return;
    }
    for m in messages {
        for slot in 0..m.layout().n_agents {
            if rng.gen_bool(drop_prob) {
                m.invalidate(slot);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> MessageLayout {
        MessageLayout::new(2, 3, 16, MessageMode::Full)
    }

    #[test]
    fn empty_message_dimensions() {
        let m = Message::empty(layout());
        assert_eq!(m.payload().len(), 38);
        assert!(m.validity().iter().all(|v| !v));
        let a = Message::empty(MessageLayout::new(2, 3, 16, MessageMode::ActionOnly));
        assert_eq!(a.payload().len(), 6);
    }

    #[test]
    fn append_roundtrip_and_isolation() {
        let z: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let a = vec![0.5, -0.25, 1.0];
        let m = Message::empty(layout()).append_slot(0, &z, &a).unwrap();
        let got: Vec<f64> = m.slot_latent(0).iter().map(|&v| v as f64).collect();
        assert_eq!(got, z);
        assert_eq!(m.slot_action(0), &[0.5f32, -0.25, 1.0]);
        let before = m.slot(0).to_vec();
        let m2 = m.append_slot(1, &z, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m2.slot(0), &before[..]);
        assert!(m2.validity().iter().all(|&v| v));
        assert_eq!(m2.append_slot(1, &z, &a), Err(CommError::SlotOccupied(1)));
        assert!(matches!(m2.append_slot(2, &z, &a), Err(CommError::SlotOutOfRange { .. })));
    }

    #[test]
    fn features_mask_invalid_slots() {
        let l = layout();
        let mut payload = vec![0.0f32; l.payload_len()];
        payload[20] = 123.0; // inside slot 1, which is invalid
        let raw = Message::from_raw_parts(l, payload, vec![false, false]).unwrap();
        assert_eq!(raw.features(), Message::empty(l).features());
        assert_eq!(raw.features().len(), l.feature_dim());
    }

    #[test]
    fn wire_header_layout() {
        let l = MessageLayout::new(9, 2, 8, MessageMode::ActionOnly);
        let m = Message::empty(l).append_slot(8, &[], &[1.0, -1.0]).unwrap();
        let b = m.to_bytes();
        assert_eq!(b.len(), l.wire_len());
        assert_eq!(&b[..9], &[1, 0, 9, 0, 2, 0, 8, 0, 1]);
        assert_eq!(&b[9..11], &[0, 1]);
        assert_eq!(Message::from_bytes(&b).unwrap().to_bytes(), b);
        let mut bad = b.clone();
        bad[10] |= 0b10;
        assert!(Message::from_bytes(&bad).is_err());
        assert!(Message::from_bytes(&b[..b.len() - 1]).is_err());
    }

    fn schedule(slot: usize, base: f64) -> MessageSchedule {
        let l = MessageLayout::new(3, 1, 8, MessageMode::Full);
        let latents: Vec<Vec<f64>> = (0..4).map(|h| vec![base + h as f64; 8]).collect();
        let actions: Vec<Vec<f64>> = (0..4).map(|h| vec![(h as f64) / 10.0]).collect();
        MessageSchedule::empty(l, 3).append_trajectory(slot, &latents, &actions).unwrap()
    }

    #[test]
    fn lossless_link_is_identity() {
        let s = schedule(0, 1.0);
        let mut link = LinkModel::new(0.0, 1);
        let mut cache = CommCache::new(3);
        let (out, o) = transmit(&s, &mut link, &mut cache, &[0], 0);
        assert_eq!(out, s);
        assert!(o.delivered);
    }

    #[test]
    fn drop_uses_shifted_cache() {
        let mut cache = CommCache::new(3);
        let s0 = schedule(0, 1.0);
        let (_, o) = transmit(&s0, &mut LinkModel::new(0.0, 1), &mut cache, &[0], 10);
        assert!(o.delivered);
        let s1 = schedule(0, 50.0);
        let (out, o) = transmit(&s1, &mut LinkModel::new(1.0, 1), &mut cache, &[0], 11);
        assert!(!o.delivered);
        assert_eq!(o.cache_hits, 1);
        // step 0 of the substitute is step 1 of the cached trajectory
        assert_eq!(out.step(0).slot(0), s0.step(1).slot(0));
        assert_eq!(out.step(2).slot(0), s0.step(3).slot(0));
        assert_eq!(out.step(3).slot(0), s0.step(3).slot(0));
        assert!(out.step(0).is_valid(0));
        assert_eq!(out.step(0).sources()[0], SlotSource::Cached { age: 1 });
    }

    #[test]
    fn drop_without_cache_invalidates() {
        let mut cache = CommCache::new(3);
        let s = schedule(0, 1.0);
        let (out, o) = transmit(&s, &mut LinkModel::new(1.0, 1), &mut cache, &[0], 0);
        assert_eq!(o.invalidated, 1);
        assert!(!out.step(0).is_valid(0));
        assert_eq!(out.step(0).features(), Message::empty(s.layout()).features());
    }

    #[test]
    fn stale_cache_expires() {
        let mut cache = CommCache::new(3);
        transmit(&schedule(0, 1.0), &mut LinkModel::new(0.0, 1), &mut cache, &[0], 0);
        assert!(cache.lookup(0, 3, 0).is_some());
        assert!(cache.lookup(0, 4, 0).is_none());
    }

    #[test]
    fn random_mask_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = schedule(0, 1.0).append_trajectory(1, &vec![vec![0.5; 8]; 4], &vec![vec![0.1]; 4]).unwrap();
        let mut msgs = base.steps().to_vec();
        random_mask(&mut msgs, 0.0, &mut rng);
        assert_eq!(msgs, base.steps());
        random_mask(&mut msgs, 1.0, &mut rng);
        assert!(msgs.iter().all(|m| m.valid_count() == 0 && m.payload().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn random_mask_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = MessageLayout::new(10, 1, 8, MessageMode::ActionOnly);
        let mut full = Message::empty(l);
        for j in 0..10 {
            full = full.append_slot(j, &[], &[0.3]).unwrap();
        }
        let mut msgs = vec![full; 10_000];
        random_mask(&mut msgs, 0.2, &mut rng);
        let dropped: usize = msgs.iter().map(|m| 10 - m.valid_count()).sum();
        let freq = dropped as f64 / 100_000.0;
        assert!((freq - 0.2).abs() < 0.01, "drop frequency {freq}");
    }
}
