//! Brute-force references shared by the property tests and the acceptance run.

use cooktf_core::eval::{PairProbs, SceneOutput};
use cooktf_core::linalg::Matrix;
use cooktf_core::model::TaskMode;
use cooktf_core::mpnn::{Activation, LayerParams, SceneGraph};
use cooktf_core::scene::{BoundingBox, Dataset, SceneAnnotation};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn normalized(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn jitter(rng: &mut impl Rng, b: &BoundingBox) -> BoundingBox {
    let d = |rng: &mut dyn rand::RngCore| rng.random_range(-0.05..0.05);
    let x0 = (b.x0 + d(rng)).clamp(0.0, 0.98);
    let y0 = (b.y0 + d(rng)).clamp(0.0, 0.98);
    let x1 = (b.x1 + d(rng)).clamp(x0 + 0.01, 1.0);
    let y1 = (b.y1 + d(rng)).clamp(y0 + 0.01, 1.0);
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

pub fn random_output(rng: &mut impl Rng, scene: &SceneAnnotation, n_classes: usize, n_predicates: usize) -> SceneOutput {
    let n = scene.objects.len();
    SceneOutput {
        object_probs: (0..n).map(|_| normalized(rng, n_classes)).collect(),
        input_labels: scene.objects.iter().map(|o| o.observed_class_id).collect(),
        pairs: (0..n)
            .flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o)))
            .map(|(subject, object)| PairProbs {
                subject,
                object,
                probs: normalized(rng, n_predicates),
            })
            .collect(),
        boxes: scene.objects.iter().map(|o| jitter(rng, &o.bbox)).collect(),
    }
}

/// `(score, s, o, p, s_class, o_class)` candidates sorted by rank.
pub fn brute_rank(out: &SceneOutput, mode: TaskMode, gc: bool) -> Vec<(f64, usize, usize, usize, usize, usize)> {
    let class = |u: usize| -> (usize, f64) {
        if mode == TaskMode::PredCls {
            return (out.input_labels[u], 1.0);
        }
        let p = &out.object_probs[u];
        let mut best = 0;
        for c in 1..p.len() {
            if p[c] > p[best] {
                best = c;
            }
        }
        (best, p[best])
    };
    let mut all = Vec::new();
    for pair in &out.pairs {
        let (cs, ps) = class(pair.subject);
        let (co, po) = class(pair.object);
        for p in 0..pair.probs.len() {
            let dominated = (0..pair.probs.len()).any(|q| pair.probs[q] > pair.probs[p] || (pair.probs[q] == pair.probs[p] && q < p));
            if gc && dominated {
                continue;
            }
            all.push((ps * po * pair.probs[p], pair.subject, pair.object, p, cs, co));
        }
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    all
}

/// Hit flags of each GT triplet among the first `k` ranked candidates.
pub fn brute_hits(ranked: &[(f64, usize, usize, usize, usize, usize)], out: &SceneOutput, gt: &SceneAnnotation, k: usize, mode: TaskMode) -> Vec<bool> {
    let mut hit = vec![false; gt.relations.len()];
    for c in ranked.iter().take(k) {
        for (g, r) in gt.relations.iter().enumerate() {
            if hit[g] {
                continue;
            }
            let classes_ok = c.3 == r.predicate_id && c.4 == gt.objects[r.subject_idx].class_id && c.5 == gt.objects[r.object_idx].class_id;
            let place_ok = match mode {
                TaskMode::SgGen => {
                    out.boxes[c.1].iou(&gt.objects[r.subject_idx].bbox) >= 0.5 && out.boxes[c.2].iou(&gt.objects[r.object_idx].bbox) >= 0.5
                }
                _ => (c.1, c.2) == (r.subject_idx, r.object_idx),
            };
            if classes_ok && place_ok {
                hit[g] = true;
                break;
            }
        }
    }
    hit
}

pub fn brute_mean_recall(hits: &[Vec<bool>], gt: &[SceneAnnotation], n_predicates: usize) -> (Option<f64>, Vec<Option<f64>>) {
    let per: Vec<Option<f64>> = (0..n_predicates)
        .map(|p| {
            let mut h = 0;
            let mut t = 0;
            for (hs, g) in hits.iter().zip(gt) {
                for (x, r) in hs.iter().zip(&g.relations) {
                    if r.predicate_id == p {
                        t += 1;
                        h += *x as usize;
                    }
                }
            }
            (t > 0).then(|| h as f64 / t as f64)
        })
        .collect();
    let v: Vec<f64> = per.iter().flatten().copied().collect();
    ((!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64), per)
}

/// Independent tally: presence, pair presence and instances by enumerating
/// every (image, class, class) triple.
pub fn brute_counts(ds: &Dataset) -> (Vec<u64>, Vec<Vec<u64>>, Vec<u64>) {
    let n = ds.vocabulary.n_objects();
    let mut presence = vec![0; n];
    let mut pair = vec![vec![0; n]; n];
    let mut instances = vec![0; n];
    for s in &ds.scenes {
        let has = |c: usize| s.objects.iter().any(|o| o.class_id == c);
        for i in 0..n {
            instances[i] += s.objects.iter().filter(|o| o.class_id == i).count() as u64;
            if has(i) {
                presence[i] += 1;
            }
            for j in 0..n {
                if has(i) && has(j) {
                    pair[i][j] += 1;
                }
            }
        }
    }
    (presence, pair, instances)
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize, n_classes: usize, dense: bool) -> SceneGraph {
    SceneGraph {
        features: Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap(),
        neighbors: (0..n)
            .map(|u| (0..n).filter(|&v| v != u && (dense || rng.random_bool(0.5))).collect())
            .collect(),
        labels: (0..n).map(|_| rng.random_range(0..n_classes)).collect(),
    }
}

pub fn random_layer(rng: &mut ChaCha8Rng, d: usize, activation: Activation) -> LayerParams {
    LayerParams {
        w: Matrix::from_vec(d, d, (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        w_att: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        activation,
    }
}

/// Direct evaluation of `z_u + σ(z_u + Σ_v m_uv α_uv W z_v)`.
pub fn reference_update(g: &SceneGraph, p: &LayerParams, weight: impl Fn(usize, usize) -> f64) -> Matrix {
    let d = p.w_att.len();
    let n = g.features.rows;
    let z = |u: usize| &g.features.data[u * d..(u + 1) * d];
    let logit = |u: usize| z(u).iter().zip(&p.w_att).map(|(a, b)| a * b).sum::<f64>();
    let mut out = Matrix::zeros(n, d);
    for u in 0..n {
        let mut h = z(u).to_vec();
        for &v in &g.neighbors[u] {
            let a = (logit(u)).exp() / ((logit(u)).exp() + (logit(v)).exp());
            for r in 0..d {
                let wz: f64 = (0..d).map(|c| p.w.data[r * d + c] * z(v)[c]).sum();
                h[r] += weight(g.labels[u], g.labels[v]) * a * wz;
            }
        }
        for r in 0..d {
            out.data[u * d + r] = z(u)[r] + p.activation.apply(h[r]);
        }
    }
    out
}
