use mipt_core::borndist::{betabinom_prob_p, binom_prob_p, empirical_born};
use mipt_core::dataset::{decode_trajectories, encode_trajectories, pack_bits, translate_record, unpack_bits, DatasetMeta};
use mipt_core::decoder::{pcorr_exact, posterior};
use mipt_core::quan::layers::{layer_norm, softmax_rows};
use mipt_core::quan::{predict, Ablation, Mat, ModelDims, ModelParams};
use mipt_core::rng::stream_rng;
use mipt_core::stats::{spearman, Welford};
use mipt_core::{Gate1Q, Gate2Q, PureState, TaskKind, TrajectoryRecord};
use proptest::prelude::*;

fn record_strategy(l: usize) -> impl Strategy<Value = TrajectoryRecord> {
    prop::collection::vec(0u8..2, 2 * l * l)
        .prop_map(move |bits| TrajectoryRecord::new(l, bits, 0.25, TaskKind::PhaseRecognition, 0, 0).unwrap())
}

fn random_2q(t: &[f64]) -> Gate2Q {
    Gate2Q::kron(&Gate1Q::rx(t[0]), &Gate1Q::rx(t[1]))
        .matmul(&Gate2Q::controlled(&Gate1Q::rx(t[2]), &Gate1Q::rx(t[3])))
        .matmul(&Gate2Q::swap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_preserve_norm(
        n in 2usize..6,
        angles in prop::collection::vec(-3.2f64..3.2, 1..8),
        entries in prop::collection::vec(-3.2f64..3.2, 4),
        qa in 0usize..6,
        qb in 0usize..6,
    ) {
        let (qa, qb) = (qa % n, qb % n);
        prop_assume!(qa != qb);
        let mut psi = PureState::plus(n);
        let g2 = random_2q(&entries);
        for (i, &a) in angles.iter().enumerate() {
            psi.apply_1q(&Gate1Q::rx(a), i % n).unwrap();
            psi.apply_2q(&g2, qa, qb).unwrap();
        }
        prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
        let total: f64 = psi.probabilities().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for q in 0..n {
            let p = psi.prob_one(q).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
            let s = psi.reduced_density_1q(q).unwrap().von_neumann_entropy();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
        }
    }

    #[test]
    fn bit_packing_round_trips(bits in prop::collection::vec(0u8..2, 0..300)) {
        prop_assert_eq!(unpack_bits(&pack_bits(&bits), bits.len()), bits);
    }

    #[test]
    fn trajectory_files_round_trip(records in prop::collection::vec(record_strategy(4), 0..12), seed in any::<u64>()) {
        let meta = DatasetMeta { l: 4, gamma: 0.25, task: TaskKind::PhaseRecognition, label: 0, noise: None, master_seed: seed };
        let mut bytes = Vec::new();
        encode_trajectories(&mut bytes, &meta, &records).unwrap();
        let (m, back) = decode_trajectories(bytes.as_slice()).unwrap();
        prop_assert_eq!(m, meta);
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(&a.bits, &b.bits);
        }
    }

    #[test]
    fn translations_form_a_cyclic_group(r in record_strategy(5), a in 0usize..12, b in 0usize..12) {
        let ab = translate_record(&translate_record(&r, a), b);
        prop_assert_eq!(&ab.bits, &translate_record(&r, a + b).bits);
        prop_assert_eq!(&translate_record(&r, 5).bits, &r.bits);
        let back = translate_record(&translate_record(&r, a), 5 - a % 5);
        prop_assert_eq!(&back.bits, &r.bits);
    }

    #[test]
    fn empirical_born_is_normalized(records in prop::collection::vec(record_strategy(4), 1..20), t in 0usize..8, translate in any::<bool>()) {
        let est = empirical_born(&records, t, translate).unwrap();
        prop_assert!((est.total_probability() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcorr_exact_bounds(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..20)) {
        let sp: f64 = raw.iter().map(|x| x.0).sum();
        let sq: f64 = raw.iter().map(|x| x.1).sum();
        prop_assume!(sp > 1e-6 && sq > 1e-6);
        let p: Vec<f64> = raw.iter().map(|x| x.0 / sp).collect();
        let q: Vec<f64> = raw.iter().map(|x| x.1 / sq).collect();
        let v = pcorr_exact(&p, &q).unwrap();
        prop_assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&v));
        prop_assert!((v - pcorr_exact(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!((pcorr_exact(&p, &p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn posterior_is_a_probability(a in -500.0f64..0.0, b in -500.0f64..0.0) {
        let p = posterior(a, b).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p + posterior(b, a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pmfs_are_normalized(m in 1u64..400, log2_d in 1i32..24) {
        let d = 2f64.powi(log2_d);
        let bin: f64 = (0..=m).map(|k| binom_prob_p(k, m, d).unwrap()).sum::<f64>() / m as f64;
        let bb: f64 = (0..=m).map(|k| betabinom_prob_p(k, m, d).unwrap()).sum::<f64>() / m as f64;
        prop_assert!((bin - 1.0).abs() < 1e-9, "binomial {}", bin);
        prop_assert!((bb - 1.0).abs() < 1e-9, "beta-binomial {}", bb);
    }

    #[test]
    fn softmax_and_layer_norm_rows(values in prop::collection::vec(-50.0f64..50.0, 12)) {
        let x = Mat::from_shape_vec((3, 4), values).unwrap();
        for row in softmax_rows(&x).rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
        let (y, _) = layer_norm(&x, &Mat::ones((1, 4)), &Mat::zeros((1, 4)));
        for row in y.rows() {
            prop_assert!(row.sum().abs() < 1e-9);
        }
    }

    #[test]
    fn welford_merge_matches_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..60), split in 0usize..60) {
        let split = split % xs.len();
        let all: Welford = xs.iter().copied().collect();
        let mut a: Welford = xs[..split].iter().copied().collect();
        let b: Welford = xs[split..].iter().copied().collect();
        a.merge(&b);
        prop_assert_eq!(a.count(), all.count());
        prop_assert!((a.mean() - all.mean()).abs() < 1e-9);
        prop_assert!((a.variance() - all.variance()).abs() < 1e-6 * (1.0 + all.variance()));
    }

    #[test]
    fn spearman_is_bounded(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30)) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Some(r) = spearman(&xs, &ys) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
        if let Some(r) = spearman(&xs, &xs) {
            prop_assert!((r - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn predictions_ignore_set_order(records in prop::collection::vec(record_strategy(4), 1..6), seed in any::<u64>(), rot in 0usize..6) {
        let params = ModelParams::init(ModelDims { l: 4, n_e: 2, d_h: 4 }, &mut stream_rng(seed, 0));
        let mut shuffled = records.clone();
        shuffled.rotate_left(rot % records.len());
        shuffled.reverse();
        for ablation in [Ablation::Full, Ablation::NoInterTraj, Ablation::NoAttention] {
            let a = predict(&params, &records, ablation).unwrap();
            let b = predict(&params, &shuffled, ablation).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
