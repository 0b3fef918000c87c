mod common;

#[test]
fn unregularized_full_rank_als_is_dense_least_squares() {
    for seed in [1, 2, 3] {
        let dist = common::dense_oracle_distance(500, seed);
        assert!(dist <= 1e-8, "seed {seed}: {dist:e}");
    }
}
