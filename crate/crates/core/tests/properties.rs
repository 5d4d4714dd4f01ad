//! Property tests: ranking invariants, split partitioning, mask sizes.

use proptest::prelude::*;

use cfwgan_core::dataio::{binarize_and_index, split_dataset, Rating, RatingsTable};
use cfwgan_core::evaluation::{ndcg_at_k, precision_at_k, rank_items, recall_at_k};
use cfwgan_core::rng::{self, Stream};
use cfwgan_core::training::sample_masks;

fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 3..40)
}

proptest! {
    /// Multiplying all scores by a positive constant leaves every ranked
    /// list unchanged.
    #[test]
    fn ranking_is_scale_invariant(scores in scores_strategy(), factor in 0.01f64..1000.0, k in 1usize..10) {
        let scaled: Vec<f64> = scores.iter().map(|v| v * factor).collect();
        prop_assert_eq!(rank_items(&scores, &[], k), rank_items(&scaled, &[], k));
    }

    /// Swapping a miss for a hit inside the top-k never decreases any
    /// metric.
    #[test]
    fn metrics_are_monotone_in_hits(n in 6u32..30, k in 1usize..6, seed in 0u64..500) {
        let mut rng = rng::stream(seed, Stream::TestScorer, &[n as u64, k as u64]);
        let mut pool: Vec<u32> = (0..n).collect();
        let test_items = {
            let mut t = rng::sample_without_replacement(&mut pool, 3, &mut rng);
            t.sort_unstable();
            t
        };
        // A list of k misses, then upgrade position 0 to a hit.
        let misses: Vec<u32> = (0..n).filter(|i| test_items.binary_search(i).is_err()).take(k).collect();
        prop_assume!(misses.len() == k);
        let mut upgraded = misses.clone();
        upgraded[0] = test_items[0];
        prop_assert!(precision_at_k(&upgraded, &test_items, k) >= precision_at_k(&misses, &test_items, k));
        prop_assert!(recall_at_k(&upgraded, &test_items, k) >= recall_at_k(&misses, &test_items, k));
        prop_assert!(ndcg_at_k(&upgraded, &test_items, k) >= ndcg_at_k(&misses, &test_items, k));
    }

    /// Excluded items never appear in a ranked list, and the list holds
    /// no duplicates.
    #[test]
    fn ranked_lists_respect_exclusions(scores in scores_strategy(), k in 1usize..25, excl_seed in 0u64..100) {
        let n = scores.len() as u32;
        let mut rng = rng::stream(excl_seed, Stream::TestScorer, &[n as u64]);
        let mut pool: Vec<u32> = (0..n).collect();
        let mut exclude = rng::sample_without_replacement(&mut pool, (n / 3) as usize, &mut rng);
        exclude.sort_unstable();
        let list = rank_items(&scores, &exclude, k);
        for i in &list {
            prop_assert!(exclude.binary_search(i).is_err());
        }
        let mut dedup = list.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), list.len());
        prop_assert!(list.len() <= k);
    }

    /// Per-user split partitions every user's items exactly, and every
    /// user keeps at least one training interaction.
    #[test]
    fn split_partitions_and_preserves(users in 2usize..12, deg in 2usize..30, seed in 0u64..200) {
        let rows: Vec<Rating> = (0..users as u32)
            .flat_map(|u| (0..deg as u32).map(move |j| Rating {
                user: u,
                item: (u * 7 + j) % (deg as u32 + 5),
                rating: 1 + ((u + j) % 5) as u8,
                timestamp: 0,
            }))
            .collect();
        // De-duplicate (user, item) pairs the cheap way.
        let mut seen = std::collections::HashSet::new();
        let rows: Vec<Rating> = rows.into_iter().filter(|r| seen.insert((r.user, r.item))).collect();
        let table = RatingsTable { rows };
        let (matrix, user_ids, item_ids) = binarize_and_index(&table).unwrap();
        prop_assume!((0..matrix.users()).all(|u| matrix.degree(u) >= 2));
        let s = split_dataset(&matrix, user_ids, item_ids, 0.2, 0.2, seed).unwrap();
        let total = s.train.total_interactions() + s.valid.total_interactions() + s.test.total_interactions();
        prop_assert_eq!(total, matrix.total_interactions());
        for u in 0..matrix.users() {
            prop_assert!(s.train.degree(u) >= 1);
            let mut merged: Vec<u32> = s.train.row(u).iter()
                .chain(s.valid.row(u))
                .chain(s.test.row(u))
                .copied().collect();
            merged.sort_unstable();
            prop_assert_eq!(merged.as_slice(), matrix.row(u));
        }
    }

    /// Mask sizes follow the ⌊p·|N|+0.5⌋ rule and stay inside the
    /// negative set.
    #[test]
    fn mask_sampling_respects_sizes(deg in 1usize..15, p_zr in 0.0f64..1.0, p_pm in 0.0f64..1.0, seed in 0u64..300) {
        let n = 20usize;
        let row: Vec<u32> = (0..deg as u32).collect();
        let matrix = cfwgan_core::dataio::InteractionMatrix::new(1, n, vec![row]).unwrap();
        let mut rng = rng::stream(seed, Stream::GeneratorMask, &[0]);
        let mask = sample_masks(&matrix, 0, p_zr, p_pm, &mut rng);
        let negatives = (n - deg) as f64;
        prop_assert_eq!(mask.zr.len(), ((p_zr * negatives) + 0.5).floor() as usize);
        prop_assert_eq!(mask.pm.len(), ((p_pm * negatives) + 0.5).floor() as usize);
        for &i in mask.zr.iter().chain(&mask.pm) {
            prop_assert!(!matrix.contains(0, i));
        }
        // x_u + k_u stays binary.
        let x = matrix.dense_row(0);
        for (a, b) in x.iter().zip(&mask.k_u) {
            let v = a + b;
            prop_assert!(v == 0.0 || v == 1.0);
        }
    }
}
