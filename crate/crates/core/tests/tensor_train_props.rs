mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttpde::tensor_train::{tt_svd, DenseTensor, RankTuple, TensorTrain};

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 2..5)
}

fn relative_distance(a: &DenseTensor, b: &DenseTensor) -> f64 {
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    num / a.frobenius_norm().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn full_rank_tt_svd_reconstructs(shape in shape_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full = DenseTensor::random(shape.clone(), &mut rng).unwrap();
        let tt = tt_svd(&full, &RankTuple::unbounded(shape.len()), 0.0).unwrap();
        prop_assert!(relative_distance(&full, &tt.densify().unwrap()) <= 1e-10);
    }

    #[test]
    fn truncation_error_is_the_tail_energy(shape in shape_strategy(), cap in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full = DenseTensor::random(shape.clone(), &mut rng).unwrap();
        let caps = vec![cap; shape.len() - 1];
        let tt = tt_svd(&full, &RankTuple::new(caps.clone()).unwrap(), 0.0).unwrap();
        let approx = tt.densify().unwrap();
        let err2: f64 = full.data().iter().zip(approx.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let tail = common::sequential_tail_energy(&full, &caps);
        let norm2 = full.frobenius_norm().powi(2);
        prop_assert!((err2 - tail).abs() <= 1e-10 * norm2, "{err2} vs {tail}");
    }

    #[test]
    fn orthogonalization_preserves_the_tensor(shape in shape_strategy(), r in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranks = TensorTrain::feasible_ranks(&shape, &RankTuple::uniform(shape.len(), r).unwrap());
        let tt = TensorTrain::random(&shape, &ranks, &mut rng).unwrap();
        let dense = tt.densify().unwrap();
        for pos in 0..shape.len() {
            let o = tt.orthogonalize(pos).unwrap();
            prop_assert!(relative_distance(&dense, &o.densify().unwrap()) <= 1e-10);
            for k in 0..pos {
                prop_assert!(o.is_left_orthogonal(k, 1e-10));
            }
            for k in pos + 1..shape.len() {
                prop_assert!(o.is_right_orthogonal(k, 1e-10));
            }
        }
    }

    #[test]
    fn norm_and_dot_match_the_dense_tensor(shape in shape_strategy(), r in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranks = TensorTrain::feasible_ranks(&shape, &RankTuple::uniform(shape.len(), r).unwrap());
        let a = TensorTrain::random(&shape, &ranks, &mut rng).unwrap();
        let b = TensorTrain::random(&shape, &ranks, &mut rng).unwrap();
        let (da, db) = (a.densify().unwrap(), b.densify().unwrap());
        let dense_dot: f64 = da.data().iter().zip(db.data()).map(|(x, y)| x * y).sum();
        prop_assert!((a.frobenius_norm() - da.frobenius_norm()).abs() <= 1e-10 * da.frobenius_norm());
        prop_assert!((a.dot(&b).unwrap() - dense_dot).abs() <= 1e-10 * da.frobenius_norm() * db.frobenius_norm());
    }

    #[test]
    fn binary_round_trip_is_exact(shape in shape_strategy(), r in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranks = TensorTrain::feasible_ranks(&shape, &RankTuple::uniform(shape.len(), r).unwrap());
        let tt = TensorTrain::random(&shape, &ranks, &mut rng).unwrap();
        let back = TensorTrain::from_bytes(&tt.to_bytes()).unwrap();
        prop_assert_eq!(back, tt);
    }
}
