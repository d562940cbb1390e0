use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqmarl::autodiff::Matrix;
use seqmarl::codec::{sem_norm, symexp, symlog, twohot_decode_probs, twohot_encode, BinGrid};
use seqmarl::comm::{transmit, CommCache, LinkModel, Message, MessageLayout, MessageMode, MessageSchedule};
use seqmarl::envs::{EnvInterface, LinearTeamConfig, LinearTeamEnv};
use seqmarl::harness::{Episode, ReplayBuffer};
use seqmarl::planner::lowpass_filter;

fn layout() -> impl Strategy<Value = MessageLayout> {
    (1usize..6, 1usize..4, 1usize..12, any::<bool>()).prop_map(|(n, a, z, full)| {
        MessageLayout::new(n, a, z, if full { MessageMode::Full } else { MessageMode::ActionOnly })
    })
}

fn message() -> impl Strategy<Value = Message> {
    layout().prop_flat_map(|l| {
        (prop::collection::vec(-1e4f32..1e4, l.payload_len()), prop::collection::vec(any::<bool>(), l.n_agents))
            .prop_map(move |(p, v)| Message::from_raw_parts(l, p, v).unwrap())
    })
}

proptest! {
    #[test]
    fn twohot_sums_to_one_on_adjacent_bins(r in -1e8f64..1e8) {
        let grid = BinGrid::default();
        let t = twohot_encode(r, &grid);
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let nz: Vec<usize> = (0..t.len()).filter(|&i| t[i] != 0.0).collect();
        prop_assert!(nz.len() == 1 || (nz.len() == 2 && nz[1] == nz[0] + 1));
        let back = twohot_decode_probs(&t, &grid).unwrap();
        prop_assert!((back - r).abs() <= 1e-6 * r.abs().max(1.0));
    }

    #[test]
    fn symlog_inverts(x in -1e6f64..1e6) {
        prop_assert!((symexp(symlog(x)) - x).abs() <= 1e-9 * x.abs().max(1.0));
    }

    #[test]
    fn sem_norm_groups_and_shift(z in prop::collection::vec(-30f64..30.0, 24), c in -100f64..100.0) {
        let s = sem_norm(&z, 8).unwrap();
        for g in s.chunks(8) {
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(g.iter().all(|&v| v >= 0.0));
        }
        let shifted = sem_norm(&z.iter().map(|v| v + c).collect::<Vec<_>>(), 8).unwrap();
        prop_assert!(s.iter().zip(&shifted).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn wire_roundtrip_is_byte_identical(m in message()) {
        let bytes = m.to_bytes();
        prop_assert_eq!(bytes.len(), m.layout().wire_len());
        let back = Message::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.validity(), m.validity());
    }

    #[test]
    fn truncated_or_padded_wire_is_rejected(m in message(), cut in 1usize..8) {
        let bytes = m.to_bytes();
        prop_assert!(Message::from_bytes(&bytes[..bytes.len() - cut.min(bytes.len())]).is_err());
        let mut long = bytes.clone();
        long.extend(std::iter::repeat(0u8).take(cut));
        prop_assert!(Message::from_bytes(&long).is_err());
    }

    #[test]
    fn features_ignore_invalid_payload(m in message(), seed in any::<u64>()) {
        let l = m.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = m.payload().to_vec();
        for j in (0..l.n_agents).filter(|&j| !m.is_valid(j)) {
            let off = l.slot_offset(j);
            for v in &mut p[off..off + l.slot_len()] {
                *v = rand::Rng::gen_range(&mut rng, -1e30f32..1e30);
            }
        }
        let fuzzed = Message::from_raw_parts(l, p, m.validity().to_vec()).unwrap();
        prop_assert_eq!(m.features(), fuzzed.features());
    }

    #[test]
    fn append_touches_only_its_slot(l in layout(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..l.latent_dim).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let a: Vec<f64> = (0..l.action_dim).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let mut m = Message::empty(l);
        for i in 0..l.n_agents {
            let next = m.append_slot(i, &z, &a).unwrap();
            for j in (0..l.n_agents).filter(|&j| j != i) {
                prop_assert_eq!(next.slot(j), m.slot(j));
            }
            prop_assert!(next.append_slot(i, &z, &a).is_err());
            m = next;
        }
        prop_assert_eq!(m.valid_count(), l.n_agents);
    }

    #[test]
    fn lossless_transmit_is_identity(m in message(), t in 0u64..50) {
        let l = m.layout();
        let schedule = MessageSchedule::from_steps(vec![m.clone(); 4]);
        let mut link = LinkModel::new(0.0, 1);
        let mut cache = CommCache::new(l.n_agents);
        let expected: Vec<usize> = (0..l.n_agents).filter(|&j| m.is_valid(j)).collect();
        let (out, outcome) = transmit(&schedule, &mut link, &mut cache, &expected, t);
        prop_assert!(outcome.delivered);
        prop_assert_eq!(out, schedule);
    }

    #[test]
    fn filter_keeps_constants(c in -5f64..5.0, ratio in 0.01f64..0.49) {
        let y = lowpass_filter(&Matrix::filled(300, 2, c), ratio).unwrap();
        prop_assert!(y.data().iter().all(|v| (v - c).abs() < 1e-9));
    }

    #[test]
    fn replay_windows_stay_inside_episodes(lens in prop::collection::vec(1usize..30, 1..12), seed in any::<u64>()) {
        let mut buffer = ReplayBuffer::new(10_000);
        for (e, &len) in lens.iter().enumerate() {
            let mut ep = Episode::new(vec![vec![e as f64, 0.0]]);
            for t in 0..len {
                ep.push(vec![vec![0.0]], t as f64, vec![vec![e as f64, (t + 1) as f64]]);
            }
            ep.terminal = e % 2 == 0;
            buffer.add(ep);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Some(windows) = buffer.sample(64, 3, 8, &mut rng) {
            for w in windows {
                prop_assert!(w.len() >= 3 && w.len() <= 8);
                let e = w.obs[0][0][0];
                prop_assert!(w.obs.iter().all(|o| o[0][0] == e));
                for k in 1..w.obs.len() {
                    prop_assert_eq!(w.obs[k][0][1], w.obs[k - 1][0][1] + 1.0);
                }
            }
        }
    }

    #[test]
    fn linear_team_is_deterministic_and_causal(seed in any::<u64>(), a in prop::collection::vec(-1f64..1.0, 6)) {
        let cfg = LinearTeamConfig { noise_std: 0.0, ..LinearTeamConfig::default() };
        let mut e1 = LinearTeamEnv::new(cfg.clone()).unwrap();
        let mut e2 = LinearTeamEnv::new(cfg).unwrap();
        prop_assert_eq!(e1.reset(seed), e2.reset(seed));
        let joint: Vec<Vec<f64>> = a.chunks(2).map(|c| c.to_vec()).collect();
        let mut later = joint.clone();
        later[2] = vec![0.9, -0.9];
        let r1 = e1.step(&joint).unwrap();
        let r2 = e2.step(&later).unwrap();
        prop_assert_eq!(&r1.obs[0], &r2.obs[0]);
        prop_assert_eq!(&r1.obs[1], &r2.obs[1]);
    }
}
