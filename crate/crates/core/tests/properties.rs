mod common;

use proptest::prelude::*;
use sancl::attention::{masked_pool, reweight};
use sancl::contrastive::{build_pair_sets, cpc_inner_instance, cpc_product_review_modality, InstanceRef, Thresholds};
use sancl::corpus::records::label_from_votes;
use sancl::metrics::{average_precision, ndcg_at};
use sancl::model::ranking_loss;
use sancl::numeric::{Graph, Matrix, ParamStore};
use sancl::probe::{realize_mask, ProbeMask};

/// Sentence lengths and one 0/1 flag per sentence.
fn sentence_mask() -> impl Strategy<Value = ProbeMask> {
    prop::collection::vec((1usize..4, any::<bool>()), 1..4).prop_map(|sents| {
        let mut values = Vec::new();
        let mut bounds = Vec::new();
        for (len, hot) in sents {
            bounds.push((values.len(), values.len() + len));
            values.extend(std::iter::repeat(u8::from(hot)).take(len));
        }
        ProbeMask {
            values,
            sentence_boundaries: bounds,
        }
    })
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i:02}")).collect()
}

fn ranking_case() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (1usize..7).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.25, 0.5, 2.0]), n),
            prop::collection::vec(0u8..5, n),
        )
    })
}

proptest! {
    #[test]
    fn real_mask_takes_exactly_two_values(mask in sentence_mask(), beta in 0.01f64..0.99) {
        let real = realize_mask(&mask, 1.0, beta).unwrap();
        for (&m, &v) in mask.values.iter().zip(&real.values) {
            prop_assert_eq!(v, if m == 1 { 1.0 } else { beta });
        }
    }

    #[test]
    fn reweighting_scales_by_mask_products(mask in sentence_mask(), beta in 0.01f64..0.99, seed in any::<u64>()) {
        let l = mask.len();
        let data: Vec<f64> = (0..l * l).map(|k| ((seed.wrapping_add(k as u64) % 997) as f64 + 1.0) / 997.0).collect();
        let a = Matrix::new(l, l, data).unwrap();
        let real = realize_mask(&mask, 1.0, beta).unwrap();
        let out = reweight(&a, &real).unwrap();
        for i in 0..l {
            for j in 0..l {
                let expected = a.get(i, j) * real.values[i] * real.values[j];
                prop_assert!((out.get(i, j) - expected).abs() <= 1e-15 * expected.abs().max(1.0));
                prop_assert!(out.get(i, j) <= a.get(i, j));
            }
        }
    }

    #[test]
    fn masked_pool_with_all_hot_is_the_mean(rows in 1usize..6, cols in 1usize..4) {
        let h = Matrix::new(rows, cols, (0..rows * cols).map(|k| k as f64 * 0.5).collect()).unwrap();
        let mask = ProbeMask::all_ones(vec![(0, rows)]);
        let pooled = masked_pool(&h, &realize_mask(&mask, 1.0, 0.5).unwrap()).unwrap();
        for c in 0..cols {
            let mean = (0..rows).map(|r| h.get(r, c)).sum::<f64>() / rows as f64;
            prop_assert!((pooled[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_match_brute_force((pred, gold) in ranking_case()) {
        let ids = ids(pred.len());
        match (average_precision(&pred, &gold, &ids, 1), common::reference_ap(&pred, &gold, &ids, 1)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a, b),
        }
        for n in [3, 5] {
            let fast = ndcg_at(&pred, &gold, &ids, n);
            prop_assert!((fast - common::reference_ndcg(&pred, &gold, &ids, n)).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&fast));
        }
    }

    #[test]
    fn ranking_loss_is_non_negative_and_zero_when_separated((pred, gold) in ranking_case(), gamma in 0.1f64..3.0) {
        prop_assert!(ranking_loss(&pred, &gold, gamma) >= 0.0);
        let separated: Vec<f64> = gold.iter().map(|&g| f64::from(g) * (gamma + 1.0)).collect();
        prop_assert_eq!(ranking_loss(&separated, &gold, gamma), 0.0);
    }

    #[test]
    fn contrastive_terms_are_non_negative(
        gold in prop::collection::vec(prop::collection::vec(0u8..5, 2..5), 1..4),
        logits in prop::collection::vec(-3.0f64..3.0, 32),
    ) {
        let sets = build_pair_sets(&gold, Thresholds::default());
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let score = |g: &mut Graph, x: InstanceRef| {
            let k = x.product * 6 + x.review.map_or(5, |r| r);
            Ok(g.constant(Matrix::scalar(logits[k % logits.len()])))
        };
        let (ii, probs) = cpc_inner_instance(&mut g, &sets, score).unwrap();
        let (pr, _) = cpc_product_review_modality(&mut g, &sets, score).unwrap();
        prop_assert!(ii.scalar(&g) >= -1e-12);
        prop_assert!(pr.scalar(&g) >= -1e-12);
        let total: f64 = probs.iter().map(|p| p.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vote_labels_are_monotone_and_bounded(a in 0i64..100_000, b in 0i64..100_000) {
        let (lo, hi) = (a.min(b), a.max(b));
        let (x, y) = (label_from_votes(lo).unwrap(), label_from_votes(hi).unwrap());
        prop_assert!(x <= y && y <= 4);
    }
}
