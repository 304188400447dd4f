#![allow(clippy::needless_range_loop)]

mod common;

use cooktf_core::cook::{cook_from_counts, extract_counts, CookMode};
use cooktf_core::eval::{score_wtd, WeightedScoreInputs};
use cooktf_core::model::{Model, TaskMode};
use cooktf_core::rng;
use cooktf_core::scene::{class_frequencies, partition_head_body_tail, Dataset, Split};
use cooktf_core::synth::{generate_synthetic, SyntheticConfig};
use cooktf_core::tfidf::{node_scales, tfidf_forward, NodeFeatureBatch, SmoothingMode, TfIdfParams};
use cooktf_core::train::{supervision_for, train, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn frequencies_match_enumeration(seed in any::<u64>()) {
        let ds = common::random_dataset(&mut common::rng(seed), 10, 6, 6, 3);
        let f = class_frequencies(&ds);
        let v = &ds.vocabulary;
        for c in 0..v.n_objects() {
            let inst: usize = ds.scenes.iter().map(|s| s.objects.iter().filter(|o| o.class_id == c).count()).sum();
            let imgs = ds.scenes.iter().filter(|s| s.objects.iter().any(|o| o.class_id == c)).count();
            prop_assert_eq!(f.object_counts[c], inst as u64);
            prop_assert_eq!(f.object_image_counts[c], imgs as u64);
        }
        for p in 0..v.n_predicates() {
            let inst: usize = ds.scenes.iter().map(|s| s.relations.iter().filter(|r| r.predicate_id == p).count()).sum();
            let imgs = ds.scenes.iter().filter(|s| s.relations.iter().any(|r| r.predicate_id == p)).count();
            prop_assert_eq!(f.predicate_counts[p], inst as u64);
            prop_assert_eq!(f.predicate_image_counts[p], imgs as u64);
        }
    }

    #[test]
    fn partition_covers_observed_predicates_disjointly(seed in any::<u64>(), f1 in 0.05f64..0.6, gap in 0.05f64..0.35) {
        let ds = common::random_dataset(&mut common::rng(seed), 10, 6, 6, 5);
        let f = class_frequencies(&ds);
        let part = partition_head_body_tail(&f, (f1, f1 + gap));
        if f.predicate_counts.iter().all(|&c| c == 0) {
            prop_assert!(part.is_err());
        } else {
            let part = part.unwrap();
            let mut all: Vec<usize> = part.head.iter().chain(&part.body).chain(&part.tail).copied().collect();
            all.sort_unstable();
            let observed: Vec<usize> = (0..f.predicate_counts.len()).filter(|&p| f.predicate_counts[p] > 0).collect();
            prop_assert_eq!(all, observed);
        }
    }

    #[test]
    fn indicator_rows_balance(seed in any::<u64>()) {
        let ds = common::random_dataset(&mut common::rng(seed), 10, 6, 6, 3);
        let counts = extract_counts(&ds).unwrap();
        let m = cook_from_counts(&counts, CookMode::Indicator);
        for i in 0..m.n_classes() {
            for j in 0..m.n_classes() {
                let a = m.values[j][i] * counts.presence[j] as f64;
                let b = m.values[i][j] * counts.presence[i] as f64;
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn tfidf_output_is_a_label_only_multiple_of_input(seed in any::<u64>(), eps in -0.3f64..1.0, gam in -0.3f64..1.0) {
        let mut r = common::rng(seed);
        let b = r.random_range(1..6);
        let labels: Vec<Vec<usize>> = (0..b).map(|_| (0..r.random_range(1..5)).map(|_| r.random_range(0..4)).collect()).collect();
        let feats = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<Vec<f64>>> {
            labels.iter().map(|img| img.iter().map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect()).collect()).collect()
        };
        let p = TfIdfParams::new(eps, gam, SmoothingMode::Code);
        let scales = node_scales(&labels, &p).unwrap();
        for _ in 0..2 {
            let x = NodeFeatureBatch { features: feats(&mut r), labels: labels.clone() };
            let (y, _) = tfidf_forward(&x, &p).unwrap();
            for (bi, img) in x.features.iter().enumerate() {
                for (k, node) in img.iter().enumerate() {
                    for (d, v) in node.iter().enumerate() {
                        prop_assert_eq!(y.features[bi][k][d], scales[bi][k].scale * v);
                    }
                }
            }
        }
    }

    #[test]
    fn loss_is_additive_and_nonnegative(seed in any::<u64>(), mode in 0usize..3) {
        let mode = [TaskMode::PredCls, TaskMode::SgCls, TaskMode::SgGen][mode];
        let ds = generate_synthetic(&SyntheticConfig::longtail_benchmark(4, seed, Split::Train)).unwrap();
        let cook = cook_from_counts(&extract_counts(&ds).unwrap(), CookMode::Indicator);
        let mut c = TrainConfig::desk(mode);
        c.object_dim = 6;
        c.embed_dim = 4;
        let model = Model::new(c.model_config(ds.vocabulary.n_objects(), ds.vocabulary.n_predicates()), seed).unwrap();
        let scenes: Vec<_> = ds.scenes.iter().collect();
        let sup: Vec<_> = scenes
            .iter()
            .enumerate()
            .map(|(i, s)| supervision_for(s, ds.vocabulary.n_predicates(), 2, &mut rng::derive(seed, rng::stream::NEGATIVES, i as u64)))
            .collect();
        let l = model.loss(&scenes, mode, Some(&cook), &sup).unwrap();
        prop_assert!(l.object >= 0.0 && l.relation >= 0.0);
        prop_assert_eq!(l.total, l.object + l.relation);
    }

    #[test]
    fn weighted_score_is_linear_and_symmetric(
        r in 0.0f64..100.0, a in 0.0f64..100.0, b in 0.0f64..100.0, d in -10.0f64..10.0,
    ) {
        let s = |r50, wmap_rel, wmap_phr| score_wtd(WeightedScoreInputs { r50, wmap_rel, wmap_phr });
        prop_assert_eq!(s(r, a, b), s(r, b, a));
        prop_assert!((s(r + d, a, b) - s(r, a, b) - 0.2 * d).abs() < 1e-9);
        prop_assert!((s(r, a + d, b) - s(r, a, b) - 0.4 * d).abs() < 1e-9);
        prop_assert!((s(r, a, b + d) - s(r, a, b) - 0.4 * d).abs() < 1e-9);
    }
}

#[test]
fn ablation_toggles_give_four_distinct_models() {
    let ds: Dataset = generate_synthetic(&SyntheticConfig::longtail_benchmark(30, 8, Split::Train)).unwrap();
    let cook = cook_from_counts(&extract_counts(&ds).unwrap(), CookMode::Indicator);
    let mut models = Vec::new();
    for (use_cook, use_tfidf) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut c = TrainConfig::desk(TaskMode::PredCls);
        c.iterations = 15;
        c.batch_size = 4;
        c.use_cook = use_cook;
        c.use_tfidf = use_tfidf;
        let (m, log) = train(&ds, use_cook.then_some(&cook), c).unwrap();
        assert_eq!(m.config.use_tfidf, use_tfidf);
        if !use_tfidf {
            assert!(log.iter().all(|r| (r.epsilon, r.gamma) == (log[0].epsilon, log[0].gamma)));
        }
        models.push(m.params);
    }
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(models[i], models[j], "configurations {i} and {j} trained identically");
        }
    }
}
