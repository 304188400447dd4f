mod common;

use common::oracle::{random_graph, random_layer, reference_update};
use cooktf_core::cook::CookMatrix;
use cooktf_core::linalg::Matrix;
use cooktf_core::mpnn::{attention, attention_from_logits, node_update, run_blocks, Activation, LayerParams, SceneGraph};
use cooktf_core::tfidf::{SmoothingMode, TfIdfParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.data.iter().zip(&b.data).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn unit_cook_equals_plain_update(seed in any::<u64>(), n in 1usize..7, d in 1usize..5, tanh in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if tanh { Activation::Tanh } else { Activation::Relu };
        let batch: Vec<SceneGraph> = (0..2).map(|_| random_graph(&mut rng, n, d, 4, false)).collect();
        let layer = random_layer(&mut rng, d, act);
        let plain = node_update(&batch, &layer, None).unwrap();
        let ones = node_update(&batch, &layer, Some(&CookMatrix::ones(4))).unwrap();
        for (a, b) in plain.iter().zip(&ones) {
            prop_assert!(max_abs_diff(&a.features, &b.features) <= 1e-12);
        }
    }

    #[test]
    fn update_matches_direct_evaluation(seed in any::<u64>(), n in 1usize..6, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, d, 3, false);
        let layer = random_layer(&mut rng, d, Activation::Tanh);
        let cook = CookMatrix {
            values: (0..3).map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect()).collect(),
            mode: Default::default(),
            observed: vec![true; 3],
        };
        let got = node_update(std::slice::from_ref(&g), &layer, Some(&cook)).unwrap();
        let want = reference_update(&g, &layer, |i, j| cook.values[i][j]);
        prop_assert!(max_abs_diff(&got[0].features, &want) <= 1e-12);
    }

    #[test]
    fn attention_pairs_sum_to_one(seed in any::<u64>(), d in 1usize..6, scale in 0.0f64..60.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (zu, zv, w) = (v(&mut rng), v(&mut rng), v(&mut rng));
        let w: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let a = attention(&zu, &zv, &w).unwrap();
        let b = attention(&zv, &zu, &w).unwrap();
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn stack_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..7, layers in 1usize..4, use_tfidf in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let g = random_graph(&mut rng, n, d, 4, false);
        let ls: Vec<LayerParams> = (0..layers).map(|_| random_layer(&mut rng, d, Activation::Relu)).collect();
        let cook = CookMatrix {
            values: (0..4).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect(),
            mode: Default::default(),
            observed: vec![true; 4],
        };
        let tf = TfIdfParams::new(0.1, 0.2, SmoothingMode::Code);
        let tf = use_tfidf.then_some(&tf);
        // perm[new] = old
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let pg = SceneGraph {
            features: Matrix::from_vec(n, d, perm.iter().flat_map(|&o| g.features.data[o * d..(o + 1) * d].to_vec()).collect()).unwrap(),
            neighbors: perm.iter().map(|&o| { let mut nb: Vec<usize> = g.neighbors[o].iter().map(|&v| inv[v]).collect(); nb.sort_unstable(); nb }).collect(),
            labels: perm.iter().map(|&o| g.labels[o]).collect(),
        };
        let other = random_graph(&mut rng, 3, d, 4, true);
        let (a, _) = run_blocks(&[g.clone(), other.clone()], &ls, tf, Some(&cook)).unwrap();
        let (b, _) = run_blocks(&[pg, other], &ls, tf, Some(&cook)).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..d {
                prop_assert!((a[0].features.data[old * d + k] - b[0].features.data[new * d + k]).abs() <= 1e-12);
            }
        }
        prop_assert!(max_abs_diff(&a[1].features, &b[1].features) <= 1e-12);
    }
}

#[test]
fn attention_is_stable_at_extreme_logits() {
    for (u, v) in [(50.0, -50.0), (-50.0, 50.0), (800.0, -800.0), (1e308, -1e308), (0.0, 0.0)] {
        let a = attention_from_logits(u, v);
        let b = attention_from_logits(v, u);
        assert!(a.is_finite() && b.is_finite());
        assert!((a + b - 1.0).abs() <= 1e-12, "{u} {v}");
    }
    assert_eq!(attention_from_logits(0.0, 0.0), 0.5);
}
