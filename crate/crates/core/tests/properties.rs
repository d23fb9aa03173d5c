use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use soma::labeler::{decode_frame, tracklet_label, DecodeMode};
use soma::mocap::{Frame, Labeling, MoCapSequence};
use soma::net::{NetConfig, NetParams};
use soma::ot::{augment, sinkhorn_log, Marginals};
use soma::train::{build_gt_assignment, ClassWeights};

fn score_matrix(max_n: usize, max_m: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_n, 1..=max_m).prop_flat_map(|(n, m)| {
        prop::collection::vec(-8.0..8.0f64, n * m).prop_map(move |v| Array2::from_shape_vec((n, m), v).unwrap())
    })
}

fn tiny_net() -> NetConfig {
    NetConfig {
        d_model: 8,
        heads: 2,
        layers: 2,
        feature_width: 8,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinkhorn_meets_marginals(s in score_matrix(12, 10), alpha in -3.0..3.0f64) {
        let (n, m) = s.dim();
        let a = sinkhorn_log(&augment(&s, alpha).unwrap(), 200).unwrap();
        prop_assert!(a.iter().all(|&x| x >= 0.0 && x.is_finite()));
        prop_assert!(Marginals::new(n, m).unwrap().violation(&a) < 1e-6);
    }

    #[test]
    fn decoders_respect_one_label_per_marker(s in score_matrix(10, 8)) {
        let a = sinkhorn_log(&augment(&s, 0.0).unwrap(), 35).unwrap();
        let a = a.slice(ndarray::s![..s.nrows(), ..]).to_owned();
        for mode in [DecodeMode::Greedy, DecodeMode::Exact] {
            let labels = decode_frame(&a, mode).unwrap();
            prop_assert_eq!(labels.len(), s.nrows());
            prop_assert!(labels.is_injective());
        }
    }

    #[test]
    fn gt_rows_and_columns_hold_one_unit(n_markers in 1usize..10, n_ghosts in 0usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut present: Vec<usize> = (0..n_markers).collect();
        present.shuffle(&mut rng);
        present.truncate(n_markers / 2 + 1);
        let mut labels: Vec<Option<usize>> = present.iter().copied().map(Some).collect();
        labels.extend(std::iter::repeat(None).take(n_ghosts));
        labels.shuffle(&mut rng);
        let occluded: Vec<usize> = (0..n_markers).filter(|m| !present.contains(m)).collect();
        let gt = build_gt_assignment(&Labeling(labels.clone()), &occluded, n_markers).unwrap();
        let n = labels.len();
        for i in 0..n {
            prop_assert_eq!(gt.row(i).sum(), 1.0);
        }
        for j in 0..n_markers {
            prop_assert_eq!(gt.column(j).sum(), 1.0);
        }
        prop_assert_eq!(gt[[n, n_markers]], 0.0);
        let w = ClassWeights::from_batch(&[gt], ClassWeights::DEFAULT_CAP).unwrap();
        prop_assert!(w.null >= 1.0 && w.dustbin >= 1.0);
    }

    #[test]
    fn tracklet_relabeling_is_idempotent(seed in 0u64..500, frames in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 5;
        let mut seq_frames = Vec::new();
        let mut per_frame = Vec::new();
        for _ in 0..frames {
            let mut ids: Vec<Option<u64>> = (0..m as u64).map(Some).collect();
            ids.shuffle(&mut rng);
            let labels: Vec<Option<usize>> = (0..m).map(|_| {
                use rand::Rng;
                let k = rng.gen_range(0..=m);
                (k < m).then_some(k)
            }).collect();
            seq_frames.push(Frame::with_tracklets(vec![[0.0; 3]; m], ids).unwrap());
            per_frame.push(Labeling(labels));
        }
        let seq = MoCapSequence::new(seq_frames, 30.0).unwrap();
        let once = tracklet_label(&per_frame, &seq, m).unwrap();
        let twice = tracklet_label(&once.labelings, &seq, m).unwrap();
        prop_assert_eq!(&once.labelings, &twice.labelings);
        for (t, l) in once.labelings.iter().enumerate() {
            prop_assert_eq!(l.is_injective(), !once.inconsistent_frames.contains(&t));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn labels_commute_with_point_permutations(seed in 0u64..10_000, n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = NetParams::init(tiny_net(), 5, seed).unwrap();
        let points: Vec<[f64; 3]> = (0..n).map(|_| {
            use rand::Rng;
            [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0), rng.gen_range(-1.0..1.0)]
        }).collect();
        let frame = Frame::new(points).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let a = soma::train::predict(&params, &frame, DecodeMode::Exact, 35).unwrap();
        let b = soma::train::predict(&params, &frame.reordered(&order), DecodeMode::Exact, 35).unwrap();
        prop_assert_eq!(a.reordered(&order), b);
    }

    #[test]
    fn labels_ignore_translation(seed in 0u64..10_000, dx in -5.0..5.0f64, dz in -5.0..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = NetParams::init(tiny_net(), 4, seed).unwrap();
        let points: Vec<[f64; 3]> = (0..6).map(|_| {
            use rand::Rng;
            [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0), rng.gen_range(-1.0..1.0)]
        }).collect();
        let frame = Frame::new(points).unwrap();
        let a = soma::train::predict(&params, &frame, DecodeMode::Exact, 35).unwrap();
        let b = soma::train::predict(&params, &frame.translated([dx, 0.0, dz]), DecodeMode::Exact, 35).unwrap();
        prop_assert_eq!(a, b);
    }
}
