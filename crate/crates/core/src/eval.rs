//! Triplet ranking, Recall@K, mean Recall@K, the weighted OpenImages score and
//! head/body/tail reports.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::TaskMode;
use crate::scene::{BoundingBox, LongTailPartition, RelationTriplet, SceneAnnotation, TailPart};

pub const DEFAULT_KS: [usize; 3] = [20, 50, 100];
pub const DEFAULT_IOU: f64 = 0.5;

/// Predicate probabilities of one ordered pair, background removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProbs {
    pub subject: usize,
    pub object: usize,
    pub probs: Vec<f64>,
}

/// Everything the ranker needs about one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutput {
    pub object_probs: Vec<Vec<f64>>,
    /// Labels given to the model; used as the predicted classes in PredCls.
    pub input_labels: Vec<usize>,
    pub pairs: Vec<PairProbs>,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletPrediction {
    pub subject_idx: usize,
    pub object_idx: usize,
    pub predicate_id: usize,
    pub score: f64,
    pub subject_class: usize,
    pub object_class: usize,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
}

/// Descending score, then ascending `(subject, object, predicate)`.
pub fn rank_order(a: &TripletPrediction, b: &TripletPrediction) -> core::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.subject_idx.cmp(&b.subject_idx))
        .then(a.object_idx.cmp(&b.object_idx))
        .then(a.predicate_id.cmp(&b.predicate_id))
}

pub fn rank_triplets(output: &SceneOutput, mode: TaskMode, graph_constraint: bool) -> Vec<TripletPrediction> {
    let class_of = |u: usize| -> (usize, f64) {
        match mode {
            TaskMode::PredCls => (output.input_labels[u], 1.0),
            TaskMode::SgCls | TaskMode::SgGen => {
                let p = &output.object_probs[u];
                let c = math::argmax(p);
                (c, p[c])
            }
        }
    };
    let mut out = Vec::new();
    for pair in &output.pairs {
        if pair.probs.is_empty() {
            continue;
        }
        let (cs, ps) = class_of(pair.subject);
        let (co, po) = class_of(pair.object);
        let make = |p: usize| TripletPrediction {
            subject_idx: pair.subject,
            object_idx: pair.object,
            predicate_id: p,
            score: ps * po * pair.probs[p],
            subject_class: cs,
            object_class: co,
            subject_box: output.boxes[pair.subject],
            object_box: output.boxes[pair.object],
        };
        if graph_constraint {
            out.push(make(math::argmax(&pair.probs)));
        } else {
            out.extend((0..pair.probs.len()).map(make));
        }
    }
    out.sort_by(rank_order);
    out
}

/// Whether `pred` recovers `gt` of scene `gt_scene`.
pub fn triplet_matches(pred: &TripletPrediction, gt: &RelationTriplet, gt_scene: &SceneAnnotation, mode: TaskMode, iou_threshold: f64) -> bool {
    let gs = &gt_scene.objects[gt.subject_idx];
    let go = &gt_scene.objects[gt.object_idx];
    if pred.predicate_id != gt.predicate_id || pred.subject_class != gs.class_id || pred.object_class != go.class_id {
        return false;
    }
    match mode {
        TaskMode::PredCls | TaskMode::SgCls => pred.subject_idx == gt.subject_idx && pred.object_idx == gt.object_idx,
        TaskMode::SgGen => pred.subject_box.iou(&gs.bbox) >= iou_threshold && pred.object_box.iou(&go.bbox) >= iou_threshold,
    }
}

/// Rank position (0-based) at which each GT triplet is first matched by the
/// greedy rank-order matcher, `None` if never. Hits at `K` are the entries
/// below `K`.
pub fn match_ranks(predictions: &[TripletPrediction], gt_scene: &SceneAnnotation, mode: TaskMode, iou_threshold: f64) -> Vec<Option<usize>> {
    let mut ranks = vec![None; gt_scene.relations.len()];
    let mut open = gt_scene.relations.len();
    for (r, p) in predictions.iter().enumerate() {
        if open == 0 {
            break;
        }
        if let Some(g) = (0..gt_scene.relations.len())
            .find(|&g| ranks[g].is_none() && triplet_matches(p, &gt_scene.relations[g], gt_scene, mode, iou_threshold))
        {
            ranks[g] = Some(r);
            open -= 1;
        }
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecall {
    pub recall: f64,
    pub hits: Vec<bool>,
    /// The scene has no GT triplets; `recall` is 1 and the scene is left out
    /// of corpus averages.
    pub empty_gt: bool,
}

pub fn recall_at_k(
    predictions: &[TripletPrediction],
    gt_scene: &SceneAnnotation,
    k: usize,
    mode: TaskMode,
    iou_threshold: f64,
) -> Result<SceneRecall> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let top = &predictions[..k.min(predictions.len())];
    let hits: Vec<bool> = match_ranks(top, gt_scene, mode, iou_threshold).iter().map(Option::is_some).collect();
    if hits.is_empty() {
        return Ok(SceneRecall {
            recall: 1.0,
            hits,
            empty_gt: true,
        });
    }
    let recall = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
    Ok(SceneRecall {
        recall,
        hits,
        empty_gt: false,
    })
}

/// Pooled per-predicate recall and its unweighted mean over predicates that
/// have GT. `scenes[i] = (hits, gt relations)`.
pub fn mean_recall_at_k(scenes: &[(&[bool], &[RelationTriplet])], n_predicates: usize) -> Result<(Option<f64>, Vec<Option<f64>>)> {
    let mut hit = vec![0usize; n_predicates];
    let mut total = vec![0usize; n_predicates];
    for (s, (hits, gt)) in scenes.iter().enumerate() {
        if hits.len() != gt.len() {
            return Err(Error::Shape(format!("scene {s}: {} hit flags for {} GT triplets", hits.len(), gt.len())));
        }
        for (h, r) in hits.iter().zip(gt.iter()) {
            if r.predicate_id >= n_predicates {
                return Err(Error::IndexOutOfRange {
                    what: "predicate",
                    index: r.predicate_id,
                    len: n_predicates,
                });
            }
            total[r.predicate_id] += 1;
            hit[r.predicate_id] += *h as usize;
        }
    }
    let per: Vec<Option<f64>> = hit
        .iter()
        .zip(&total)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok((mean, per))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedScoreInputs {
    pub r50: f64,
    pub wmap_rel: f64,
    pub wmap_phr: f64,
}

pub fn score_wtd(inputs: WeightedScoreInputs) -> f64 {
    0.2 * inputs.r50 + 0.4 * (inputs.wmap_rel + inputs.wmap_phr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: TaskMode,
    pub ks: Vec<usize>,
    pub graph_constraint: bool,
    pub iou_threshold: f64,
}

impl EvalConfig {
    pub fn new(mode: TaskMode) -> Self {
        EvalConfig {
            mode,
            ks: DEFAULT_KS.to_vec(),
            graph_constraint: true,
            iou_threshold: DEFAULT_IOU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub task: TaskMode,
    pub ks: Vec<usize>,
    pub graph_constraint: bool,
    /// `K → mean per-scene recall` over scenes with GT.
    pub recall: BTreeMap<usize, Option<f64>>,
    pub mean_recall: BTreeMap<usize, Option<f64>>,
    pub per_predicate: BTreeMap<usize, Vec<Option<f64>>>,
    pub n_scenes_with_gt: usize,
}

/// Corpus metrics for `outputs[i]` against `gt[i]`.
pub fn evaluate(outputs: &[SceneOutput], gt: &[SceneAnnotation], n_predicates: usize, config: &EvalConfig) -> Result<RecallResult> {
    if outputs.len() != gt.len() {
        return Err(Error::Shape(format!("{} scene outputs for {} GT scenes", outputs.len(), gt.len())));
    }
    if config.ks.is_empty() || config.ks.contains(&0) {
        return Err(Error::Config("K values must be a nonempty list of positive integers".into()));
    }
    let ranks: Vec<Vec<Option<usize>>> = outputs
        .iter()
        .zip(gt)
        .map(|(o, g)| {
            let preds = rank_triplets(o, config.mode, config.graph_constraint);
            match_ranks(&preds, g, config.mode, config.iou_threshold)
        })
        .collect();
    evaluate_ranks(&ranks, gt, n_predicates, config)
}

/// Aggregates per-scene match ranks (see [`match_ranks`]).
pub fn evaluate_ranks(ranks: &[Vec<Option<usize>>], gt: &[SceneAnnotation], n_predicates: usize, config: &EvalConfig) -> Result<RecallResult> {
    let mut recall = BTreeMap::new();
    let mut mean_recall = BTreeMap::new();
    let mut per_predicate = BTreeMap::new();
    let with_gt = gt.iter().filter(|g| !g.relations.is_empty()).count();
    for &k in &config.ks {
        let hits: Vec<Vec<bool>> = ranks.iter().map(|r| r.iter().map(|x| x.is_some_and(|x| x < k)).collect()).collect();
        let mut sum = 0.0;
        for h in hits.iter().filter(|h| !h.is_empty()) {
            sum += h.iter().filter(|&&x| x).count() as f64 / h.len() as f64;
        }
        recall.insert(k, (with_gt > 0).then(|| sum / with_gt as f64));
        let pairs: Vec<(&[bool], &[RelationTriplet])> = hits.iter().zip(gt).map(|(h, g)| (h.as_slice(), g.relations.as_slice())).collect();
        let (m, per) = mean_recall_at_k(&pairs, n_predicates)?;
        mean_recall.insert(k, m);
        per_predicate.insert(k, per);
    }
    Ok(RecallResult {
        task: config.mode,
        ks: config.ks.clone(),
        graph_constraint: config.graph_constraint,
        recall,
        mean_recall,
        per_predicate,
        n_scenes_with_gt: with_gt,
    })
}

/// Mean recall of predicates in one partition (those with GT only).
pub fn partition_mean(per_predicate: &[Option<f64>], members: &[usize]) -> Option<f64> {
    let v: Vec<f64> = members.iter().filter_map(|&p| per_predicate.get(p).copied().flatten()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `[head, body, tail]` mean recall per K.
pub type PartitionRecall = BTreeMap<usize, [Option<f64>; 3]>;

pub fn partition_recall(result: &RecallResult, partition: &LongTailPartition) -> Result<PartitionRecall> {
    let mut out = BTreeMap::new();
    for (&k, per) in &result.per_predicate {
        if let Some(&p) = TailPart::ALL.iter().flat_map(|&t| partition.members(t)).find(|&&p| p >= per.len()) {
            return Err(Error::IndexOutOfRange {
                what: "partition predicate",
                index: p,
                len: per.len(),
            });
        }
        out.insert(k, TailPart::ALL.map(|t| partition_mean(per, partition.members(t))));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailReport {
    pub partition: LongTailPartition,
    pub a: PartitionRecall,
    pub b: PartitionRecall,
    /// `b − a` where both are defined.
    pub delta: PartitionRecall,
}

pub fn longtail_report(a: &RecallResult, b: &RecallResult, partition: &LongTailPartition) -> Result<LongTailReport> {
    if a.ks != b.ks || a.task != b.task {
        return Err(Error::Config("results use different tasks or K values".into()));
    }
    let lens = |r: &RecallResult| r.per_predicate.values().next().map_or(0, Vec::len);
    if lens(a) != lens(b) {
        return Err(Error::Vocabulary("results cover different predicate vocabularies".into()));
    }
    let pa = partition_recall(a, partition)?;
    let pb = partition_recall(b, partition)?;
    let delta = pa
        .iter()
        .map(|(k, ra)| {
            let rb = &pb[k];
            let d = core::array::from_fn(|i| match (ra[i], rb[i]) {
                (Some(x), Some(y)) => Some(y - x),
                _ => None,
            });
            (*k, d)
        })
        .collect();
    Ok(LongTailReport {
        partition: partition.clone(),
        a: pa,
        b: pb,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ObjectInstance;

    fn bx() -> BoundingBox {
        BoundingBox::new(0.0, 0.0, 0.5, 0.5).unwrap()
    }

    fn gt_scene(n: usize, rels: &[(usize, usize, usize)]) -> SceneAnnotation {
        SceneAnnotation {
            objects: (0..n)
                .map(|i| ObjectInstance {
                    class_id: i,
                    observed_class_id: i,
                    observed_logits: None,
                    bbox: bx(),
                })
                .collect(),
            relations: rels
                .iter()
                .map(|&(s, o, p)| RelationTriplet {
                    subject_idx: s,
                    object_idx: o,
                    predicate_id: p,
                })
                .collect(),
        }
    }

    fn one_pair(probs: Vec<f64>) -> SceneOutput {
        SceneOutput {
            object_probs: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            input_labels: vec![0, 1],
            pairs: vec![PairProbs {
                subject: 0,
                object: 1,
                probs,
            }],
            boxes: vec![bx(), bx()],
        }
    }

    #[test]
    fn graph_constraint_keeps_top_predicate() {
        let out = one_pair(vec![0.7, 0.3]);
        let gc = rank_triplets(&out, TaskMode::PredCls, true);
        assert_eq!(gc.len(), 1);
        assert_eq!((gc[0].predicate_id, gc[0].score), (0, 0.7));
        let all = rank_triplets(&out, TaskMode::PredCls, false);
        assert_eq!(all.iter().map(|t| (t.predicate_id, t.score)).collect::<Vec<_>>(), [(0, 0.7), (1, 0.3)]);
    }

    #[test]
    fn recall_rank_cutoff() {
        let g = gt_scene(2, &[(0, 1, 2)]);
        let out = one_pair(vec![0.5, 0.3, 0.2]);
        let preds = rank_triplets(&out, TaskMode::PredCls, false);
        assert_eq!(preds[2].predicate_id, 2);
        assert_eq!(recall_at_k(&preds, &g, 50, TaskMode::PredCls, 0.5).unwrap().recall, 1.0);
        assert_eq!(recall_at_k(&preds, &g, 2, TaskMode::PredCls, 0.5).unwrap().recall, 0.0);
        let empty = recall_at_k(&preds, &gt_scene(2, &[]), 5, TaskMode::PredCls, 0.5).unwrap();
        assert!(empty.empty_gt && empty.recall == 1.0);
        assert!(recall_at_k(&preds, &g, 0, TaskMode::PredCls, 0.5).is_err());
    }

    #[test]
    fn each_gt_matched_once() {
        // two identical GT triplets need two predictions
        let mut g = gt_scene(2, &[(0, 1, 0)]);
        g.relations.push(g.relations[0]);
        let preds = rank_triplets(&one_pair(vec![0.9, 0.1]), TaskMode::PredCls, true);
        assert_eq!(recall_at_k(&preds, &g, 10, TaskMode::PredCls, 0.5).unwrap().recall, 0.5);
    }

    #[test]
    fn mean_recall_examples() {
        let gt = &gt_scene(2, &[(0, 1, 0), (1, 0, 1)]).relations;
        let (m, per) = mean_recall_at_k(&[(&[true, false], gt)], 3).unwrap();
        assert_eq!(m, Some(0.5));
        assert_eq!(per, [Some(1.0), Some(0.0), None]);
        let (m, _) = mean_recall_at_k(&[(&[true, true], gt)], 3).unwrap();
        assert_eq!(m, Some(1.0));
        let (m, _) = mean_recall_at_k(&[], 3).unwrap();
        assert_eq!(m, None);
    }

    #[test]
    fn weighted_score() {
        let s = |a, b, c| score_wtd(WeightedScoreInputs { r50: a, wmap_rel: b, wmap_phr: c });
        assert!((s(77.0, 36.6, 37.6) - 45.08).abs() < 1e-9);
        assert!((s(76.8, 34.6, 35.5) - 43.4).abs() < 1e-9);
        assert_eq!(s(0.0, 0.0, 0.0), 0.0);
        assert!((s(100.0, 100.0, 100.0) - 100.0).abs() < 1e-12);
    }
}
