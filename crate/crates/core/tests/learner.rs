use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taboo_core::learner::*;
use taboo_core::percept::{Observation, OBS_LEN};

fn shape() -> NetShape {
    NetShape { conv_channels: 2, mlp: [6, 6], lstm: 4, ..NetShape::default() }
}

fn trajectory(rng: &mut ChaCha8Rng, len: usize, lstm: usize) -> Trajectory {
    let obs = |rng: &mut ChaCha8Rng| {
        let mut pixels = [0u8; OBS_LEN];
        rng.fill(&mut pixels[..]);
        Observation { pixels }
    };
    Trajectory {
        observations: (0..len).map(|_| obs(rng)).collect(),
        actions: (0..len).map(|_| rng.gen_range(0..8)).collect(),
        behavior_logp: vec![-(8f32.ln()); len],
        rewards: (0..len).map(|_| [0, 4, 1, -20, 15, -35][rng.gen_range(0..6)]).collect(),
        dones: vec![false; len],
        bootstrap: Some(obs(rng)),
        initial_state: LstmState::zeros(lstm),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), updates in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyper = HyperParams::default();
        let mut learner = Learner::new(shape(), &hyper, &mut rng);
        learner.updates = updates;
        let ck = Checkpoint { config_hash: rng.gen(), learner };
        let bytes = encode_checkpoint(&ck);
        prop_assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        prop_assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), CHECKPOINT_VERSION);
        prop_assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
        let mut bad = bytes.clone();
        let i = rng.gen_range(0..bad.len());
        bad[i] ^= 1 << rng.gen_range(0..8);
        prop_assert!(decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn clipped_vtrace_stays_between_values_and_full_correction(seed in any::<u64>(), n in 1usize..40) {
        // with every ratio below one, the clipped targets sit between the
        // value estimates (rho = 0) and the on-policy targets (rho = 1)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let values = vec![0.0; n];
        let discounts = vec![0.9; n];
        let log_rhos: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0..3.0)).collect();
        let zeros = vec![0.0; n];
        let [clipped, full] = [&log_rhos, &zeros].map(|lr| {
            vtrace_targets(VTraceInput { log_rhos: lr, discounts: &discounts, rewards: &rewards, values: &values, bootstrap_value: 0.0 }, 1.0, 1.0)
        });
        for t in 0..n {
            prop_assert!(clipped.vs[t] >= -1e-12 && clipped.vs[t] <= full.vs[t] + 1e-12);
        }
    }

    #[test]
    fn softmax_and_log_softmax_agree(logits in proptest::collection::vec(-40.0f64..40.0, 8)) {
        let p = softmax(&logits);
        let lp = log_softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&lp) {
            prop_assert!((a.ln() - b).abs() < 1e-9 || *a < 1e-300);
        }
        prop_assert!(entropy(&logits) <= 8f64.ln() + 1e-12);
    }
}

#[test]
fn updates_replay_bit_for_bit() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hyper = HyperParams { unroll_length: 4, batch_size: 2, ..HyperParams::default() };
        let mut learner = Learner::new(shape(), &hyper, &mut rng);
        for _ in 0..5 {
            let batch: Vec<Trajectory> = (0..2).map(|_| trajectory(&mut rng, 4, 4)).collect();
            learner.update(&batch, &hyper, None).unwrap();
        }
        encode_checkpoint(&Checkpoint { config_hash: [0; 32], learner })
    };
    assert_eq!(run(), run());
}

#[test]
fn an_update_lowers_the_loss_at_frozen_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut hyper = HyperParams { unroll_length: 5, batch_size: 2, ..HyperParams::default() };
    hyper.rmsprop.learning_rate = 1e-4;
    for _ in 0..10 {
        let mut learner = Learner::new(shape(), &hyper, &mut rng);
        let batch: Vec<Trajectory> = (0..2).map(|_| trajectory(&mut rng, 5, 4)).collect();
        let params = learner.params.cast::<f64>();
        let (_, targets) = compute_loss(&params, &batch, &hyper, None, 0).unwrap();
        let (before, _) = loss_with_targets(&params, &batch, &targets, &hyper, None).unwrap();
        learner.update(&batch, &hyper, None).unwrap();
        let (after, _) = loss_with_targets(&learner.params.cast::<f64>(), &batch, &targets, &hyper, None).unwrap();
        assert!(after < before, "loss {before} -> {after}");
    }
}
