use proptest::prelude::*;
use sentread_core::backend::MockBackend;
use sentread_core::corpus::Discourse;
use sentread_core::pipeline::transform_metric;
use sentread_core::relevance::{
    attention_aware_relevance, cosine, mean_pool, score_discourse_relevance, window_neighbors, NeighborSimilarity,
    SentenceEmbedding, WindowSpec,
};
use sentread_core::surprisal::{cr_surprisal, nll, nll_surprisal, nll_to_probability, nsp_surprisal};

fn logprobs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..-1e-9, 1..60)
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-6))
}

proptest! {
    #[test]
    fn cr_equals_nll_on_identical_logprobs(lp in logprobs()) {
        prop_assert_eq!(cr_surprisal(&lp).unwrap().bits, nll_surprisal(&lp).unwrap().bits);
    }

    #[test]
    fn cr_is_additive_over_token_splits(lp in logprobs(), cut in 0usize..60) {
        let cut = cut % lp.len() + 1;
        let whole = cr_surprisal(&lp).unwrap().bits;
        let (a, b) = lp.split_at(cut);
        let parts = cr_surprisal(a).unwrap().bits + if b.is_empty() { 0.0 } else { cr_surprisal(b).unwrap().bits };
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
    }

    #[test]
    fn cr_is_invariant_to_token_order(mut lp in logprobs()) {
        let forward = cr_surprisal(&lp).unwrap().bits;
        lp.reverse();
        let backward = cr_surprisal(&lp).unwrap().bits;
        prop_assert!((forward - backward).abs() <= 1e-12 * forward.max(1.0));
    }

    #[test]
    fn nll_probability_round_trip(lp in prop::collection::vec(-3.0f64..-1e-6, 1..10)) {
        let n = nll(&lp).unwrap();
        let p = nll_to_probability(n).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!((-p.ln() - n).abs() <= 1e-12 * n.max(1.0));
    }

    #[test]
    fn nsp_is_decreasing_in_p(a in 1e-9f64..0.999_999, b in 1e-9f64..0.999_999) {
        let (sa, sb) = (nsp_surprisal(a).unwrap().bits, nsp_surprisal(b).unwrap().bits);
        prop_assert!(sa >= 0.0);
        if a < b {
            prop_assert!(sa > sb);
        }
    }

    #[test]
    fn cosine_is_bounded_symmetric_and_scale_free(
        (a, b) in (1usize..48).prop_flat_map(|d| (vector(d), vector(d))),
        scale in 1e-3f64..1e3,
    ) {
        let (ea, eb) = (SentenceEmbedding::new(a.clone()).unwrap(), SentenceEmbedding::new(b).unwrap());
        let c = cosine(&ea, &eb).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(&eb, &ea).unwrap());
        let scaled = SentenceEmbedding::new(a.iter().map(|x| x * scale).collect()).unwrap();
        prop_assert!((cosine(&scaled, &eb).unwrap() - c).abs() <= 1e-12);
        prop_assert!((cosine(&ea, &ea).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn mean_pool_ignores_token_order(rows in (1usize..16).prop_flat_map(|d| prop::collection::vec(vector(d), 1..20))) {
        let forward = mean_pool(&rows).unwrap();
        let mut reversed = rows.clone();
        reversed.reverse();
        let backward = mean_pool(&reversed).unwrap();
        for (x, y) in forward.vector().iter().zip(backward.vector()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn relevance_is_linear_in_similarities(
        sims in prop::collection::vec(-1.0f64..1.0, 3),
        k in -3.0f64..3.0,
    ) {
        let spec = WindowSpec::default();
        let make = |f: f64| -> Vec<NeighborSimilarity> {
            window_neighbors(2, 4, &spec)
                .into_iter()
                .zip(&sims)
                .map(|((offset, _), s)| NeighborSimilarity { offset, similarity: s * f })
                .collect()
        };
        let base = attention_aware_relevance(&make(1.0), &spec).unwrap().value;
        let scaled = attention_aware_relevance(&make(k), &spec).unwrap().value;
        prop_assert!((scaled - k * base).abs() <= 1e-12);
        prop_assert!(base.abs() <= 4.0 / 3.0 + 1e-15);
    }

    #[test]
    fn renormalized_relevance_lies_within_similarity_range(sims in prop::collection::vec(-1.0f64..1.0, 3)) {
        let spec = WindowSpec { renormalize: true, ..WindowSpec::default() };
        let neighbours: Vec<NeighborSimilarity> = window_neighbors(2, 4, &spec)
            .into_iter()
            .zip(&sims)
            .map(|((offset, _), s)| NeighborSimilarity { offset, similarity: *s })
            .collect();
        let v = attention_aware_relevance(&neighbours, &spec).unwrap().value;
        let lo = sims.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn mock_relevance_is_deterministic_and_bounded(seed in any::<u64>(), n in 2usize..6) {
        let sentences: Vec<String> = (0..n).map(|i| format!("word{i} shared token{}", i % 2)).collect();
        let d = Discourse::from_sentences("t", "en", &sentences);
        let backend = MockBackend::new(4, 8, seed).unwrap();
        let a = score_discourse_relevance(&d, &backend, &WindowSpec::default()).unwrap();
        let b = score_discourse_relevance(&d, &backend, &WindowSpec::default()).unwrap();
        prop_assert_eq!(&a, &b);
        for s in a.iter().flatten() {
            prop_assert!(s.value.abs() <= 4.0 / 3.0 + 1e-12);
        }
    }

    #[test]
    fn metric_transform_is_finite_and_monotone(values in prop::collection::vec(-5.0f64..50.0, 2..40)) {
        for name in ["surprisal_cr_bits", "relevance"] {
            let t = transform_metric(name, values.iter().copied()).unwrap();
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let mapped: Vec<f64> = sorted.iter().map(|v| t.apply(*v)).collect();
            prop_assert!(mapped.iter().all(|v| v.is_finite()));
            prop_assert!(mapped.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
