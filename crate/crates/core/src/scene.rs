//! Scene-graph data model: vocabularies, annotated scenes, datasets, and the
//! frequency statistics used to split predicates into head, body and tail.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Object and predicate class names. Indices are positions in the lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocabulary {
    pub object_classes: Vec<String>,
    pub predicate_classes: Vec<String>,
}

impl ClassVocabulary {
    pub fn new(object_classes: Vec<String>, predicate_classes: Vec<String>) -> Result<Self> {
        let v = ClassVocabulary {
            object_classes,
            predicate_classes,
        };
        v.validate()?;
        Ok(v)
    }

    /// Vocabulary with generated names `obj0..`, `pred0..`.
    pub fn numbered(n_objects: usize, n_predicates: usize) -> Self {
        ClassVocabulary {
            object_classes: (0..n_objects).map(|i| format!("obj{i}")).collect(),
            predicate_classes: (0..n_predicates).map(|i| format!("pred{i}")).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, names) in [("objects", &self.object_classes), ("predicates", &self.predicate_classes)] {
            let mut seen = BTreeSet::new();
            for n in names {
                if !seen.insert(n.as_str()) {
                    return Err(Error::validation(None, format!("vocabulary.{field}"), format!("duplicate name `{n}`")));
                }
            }
        }
        Ok(())
    }

    pub fn n_objects(&self) -> usize {
        self.object_classes.len()
    }

    pub fn n_predicates(&self) -> usize {
        self.predicate_classes.len()
    }

    /// Fingerprint of the object-class list (what co-occurrence matrices index).
    pub fn object_fingerprint(&self) -> String {
        names_fingerprint(&self.object_classes)
    }
}

/// Short hex digest identifying an ordered list of class names.
pub fn names_fingerprint(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update((n.len() as u64).to_le_bytes());
        h.update(n.as_bytes());
    }
    hex16(&h.finalize())
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    use core::fmt::Write;
    let mut s = String::with_capacity(16);
    for b in &bytes[..8] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BoundingBox { x0, y0, x1, y1 };
        b.check().map_err(|r| Error::validation(None, "box", r))?;
        Ok(b)
    }

    fn check(&self) -> core::result::Result<(), String> {
        let ok = |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo < hi;
        if !ok(self.x0, self.x1) || !ok(self.y0, self.y1) {
            return Err(format!(
                "[{}, {}, {}, {}] violates 0 <= x0 < x1 <= 1, 0 <= y0 < y1 <= 1",
                self.x0, self.y0, self.x1, self.y1
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let iw = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let ih = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// `(x0, y0, x1, y1, w, h, cx, cy)`
    pub fn encode(&self) -> [f64; 8] {
        let (cx, cy) = self.center();
        [self.x0, self.y0, self.x1, self.y1, self.width(), self.height(), cx, cy]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    /// Ground-truth class.
    pub class_id: usize,
    /// Class reported by the (simulated) detector; may be corrupted.
    pub observed_class_id: usize,
    pub observed_logits: Option<Vec<f64>>,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTriplet {
    pub subject_idx: usize,
    pub object_idx: usize,
    pub predicate_id: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub objects: Vec<ObjectInstance>,
    pub relations: Vec<RelationTriplet>,
}

impl SceneAnnotation {
    /// Checks every scene invariant; `index` is reported in errors.
    pub fn validate(&self, vocab: &ClassVocabulary, index: usize) -> Result<()> {
        let sc = Some(index);
        let n_cls = vocab.n_objects();
        for (i, o) in self.objects.iter().enumerate() {
            if o.class_id >= n_cls {
                return Err(Error::validation(sc, format!("objects[{i}].class"), format!("{} >= {n_cls} classes", o.class_id)));
            }
            if o.observed_class_id >= n_cls {
                return Err(Error::validation(
                    sc,
                    format!("objects[{i}].observed_class"),
                    format!("{} >= {n_cls} classes", o.observed_class_id),
                ));
            }
            if let Some(l) = &o.observed_logits {
                if l.len() != n_cls {
                    return Err(Error::validation(
                        sc,
                        format!("objects[{i}].observed_logits"),
                        format!("length {} != {n_cls}", l.len()),
                    ));
                }
            }
            o.bbox.check().map_err(|r| Error::validation(sc, format!("objects[{i}].box"), r))?;
        }
        let n = self.objects.len();
        let mut seen = BTreeSet::new();
        for (k, r) in self.relations.iter().enumerate() {
            let field = format!("relations[{k}]");
            if r.subject_idx >= n || r.object_idx >= n {
                return Err(Error::validation(
                    sc,
                    field,
                    format!("object index {} out of range for {n} objects", r.subject_idx.max(r.object_idx)),
                ));
            }
            if r.subject_idx == r.object_idx {
                return Err(Error::validation(sc, field, "subject and object are the same object"));
            }
            if r.predicate_id >= vocab.n_predicates() {
                return Err(Error::validation(
                    sc,
                    field,
                    format!("predicate {} >= {} predicates", r.predicate_id, vocab.n_predicates()),
                ));
            }
            if !seen.insert(*r) {
                return Err(Error::validation(sc, field, "duplicate triplet"));
            }
        }
        Ok(())
    }

    pub fn gt_labels(&self) -> Vec<usize> {
        self.objects.iter().map(|o| o.class_id).collect()
    }

    pub fn observed_labels(&self) -> Vec<usize> {
        self.objects.iter().map(|o| o.observed_class_id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub vocabulary: ClassVocabulary,
    pub scenes: Vec<SceneAnnotation>,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset, validating the vocabulary and every scene.
    pub fn new(vocabulary: ClassVocabulary, scenes: Vec<SceneAnnotation>, split: Split) -> Result<Self> {
        let d = Dataset {
            vocabulary,
            scenes,
            split,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.vocabulary.validate()?;
        for (i, s) in self.scenes.iter().enumerate() {
            s.validate(&self.vocabulary, i)?;
        }
        Ok(())
    }

    pub fn n_objects(&self) -> usize {
        self.scenes.iter().map(|s| s.objects.len()).sum()
    }
}

/// Per-class occurrence and image-presence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub object_counts: Vec<u64>,
    pub object_image_counts: Vec<u64>,
    pub predicate_counts: Vec<u64>,
    pub predicate_image_counts: Vec<u64>,
}

impl FrequencyProfile {
    pub fn zeros(n_objects: usize, n_predicates: usize) -> Self {
        FrequencyProfile {
            object_counts: vec![0; n_objects],
            object_image_counts: vec![0; n_objects],
            predicate_counts: vec![0; n_predicates],
            predicate_image_counts: vec![0; n_predicates],
        }
    }

    /// Entrywise sum; used to merge per-shard profiles.
    pub fn merge(&mut self, other: &FrequencyProfile) {
        for (a, b) in [
            (&mut self.object_counts, &other.object_counts),
            (&mut self.object_image_counts, &other.object_image_counts),
            (&mut self.predicate_counts, &other.predicate_counts),
            (&mut self.predicate_image_counts, &other.predicate_image_counts),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn class_frequencies(dataset: &Dataset) -> FrequencyProfile {
    let v = &dataset.vocabulary;
    let mut p = FrequencyProfile::zeros(v.n_objects(), v.n_predicates());
    let mut obj_seen = vec![false; v.n_objects()];
    let mut pred_seen = vec![false; v.n_predicates()];
    for scene in &dataset.scenes {
        obj_seen.iter_mut().for_each(|x| *x = false);
        pred_seen.iter_mut().for_each(|x| *x = false);
        for o in &scene.objects {
            p.object_counts[o.class_id] += 1;
            if !obj_seen[o.class_id] {
                obj_seen[o.class_id] = true;
                p.object_image_counts[o.class_id] += 1;
            }
        }
        for r in &scene.relations {
            p.predicate_counts[r.predicate_id] += 1;
            if !pred_seen[r.predicate_id] {
                pred_seen[r.predicate_id] = true;
                p.predicate_image_counts[r.predicate_id] += 1;
            }
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailPart {
    Head,
    Body,
    Tail,
}

impl TailPart {
    pub const ALL: [TailPart; 3] = [TailPart::Head, TailPart::Body, TailPart::Tail];

    pub fn as_str(&self) -> &'static str {
        match self {
            TailPart::Head => "head",
            TailPart::Body => "body",
            TailPart::Tail => "tail",
        }
    }
}

/// Disjoint head / body / tail predicate sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailPartition {
    pub head: Vec<usize>,
    pub body: Vec<usize>,
    pub tail: Vec<usize>,
    pub boundaries: (f64, f64),
}

impl LongTailPartition {
    pub fn members(&self, part: TailPart) -> &[usize] {
        match part {
            TailPart::Head => &self.head,
            TailPart::Body => &self.body,
            TailPart::Tail => &self.tail,
        }
    }

    pub fn part_of(&self, predicate: usize) -> Option<TailPart> {
        TailPart::ALL.into_iter().find(|&p| self.members(p).contains(&predicate))
    }
}

/// Default cumulative-mass boundaries.
pub const DEFAULT_BOUNDARIES: (f64, f64) = (0.5, 0.85);

/// Splits predicates by descending training count (ties by ascending index).
///
/// Head takes predicates up to and including the one whose cumulative mass
/// first reaches `f1`; body continues up to and including the one reaching
/// `f2`; the rest is tail. Predicates with zero count are left out.
pub fn partition_head_body_tail(profile: &FrequencyProfile, boundaries: (f64, f64)) -> Result<LongTailPartition> {
    let (f1, f2) = boundaries;
    if !(0.0 < f1 && f1 < f2 && f2 < 1.0) {
        return Err(Error::Config(format!("boundaries must satisfy 0 < f1 < f2 < 1, got ({f1}, {f2})")));
    }
    let counts = &profile.predicate_counts;
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config("predicate counts are empty".into()));
    }
    let mut order: Vec<usize> = (0..counts.len()).filter(|&p| counts[p] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    let mut part = LongTailPartition {
        head: Vec::new(),
        body: Vec::new(),
        tail: Vec::new(),
        boundaries,
    };
    let mut cum = 0u64;
    let mut stage = TailPart::Head;
    for p in order {
        cum += counts[p];
        let mass = cum as f64 / total as f64;
        match stage {
            TailPart::Head => {
                part.head.push(p);
                if mass >= f1 {
                    stage = TailPart::Body;
                }
            }
            TailPart::Body => {
                part.body.push(p);
                if mass >= f2 {
                    stage = TailPart::Tail;
                }
            }
            TailPart::Tail => part.tail.push(p),
        }
    }
    Ok(part)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx() -> BoundingBox {
        BoundingBox::new(0.1, 0.1, 0.5, 0.5).unwrap()
    }

    fn obj(c: usize) -> ObjectInstance {
        ObjectInstance {
            class_id: c,
            observed_class_id: c,
            observed_logits: None,
            bbox: bx(),
        }
    }

    fn profile(pred: &[u64]) -> FrequencyProfile {
        FrequencyProfile {
            object_counts: vec![],
            object_image_counts: vec![],
            predicate_counts: pred.to_vec(),
            predicate_image_counts: vec![0; pred.len()],
        }
    }

    #[test]
    fn relation_out_of_range_names_scene() {
        let v = ClassVocabulary::numbered(2, 1);
        let s = SceneAnnotation {
            objects: vec![obj(0), obj(1)],
            relations: vec![RelationTriplet {
                subject_idx: 0,
                object_idx: 5,
                predicate_id: 0,
            }],
        };
        let err = Dataset::new(v, vec![s], Split::Train).unwrap_err();
        match err {
            Error::Validation { scene, field, .. } => {
                assert_eq!(scene, Some(0));
                assert_eq!(field, "relations[0]");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn duplicate_triplet_and_self_loop_rejected() {
        let v = ClassVocabulary::numbered(2, 1);
        let r = RelationTriplet {
            subject_idx: 0,
            object_idx: 1,
            predicate_id: 0,
        };
        let dup = SceneAnnotation {
            objects: vec![obj(0), obj(1)],
            relations: vec![r, r],
        };
        assert!(dup.validate(&v, 3).is_err());
        let selfloop = SceneAnnotation {
            objects: vec![obj(0), obj(1)],
            relations: vec![RelationTriplet {
                subject_idx: 1,
                object_idx: 1,
                predicate_id: 0,
            }],
        };
        assert!(selfloop.validate(&v, 0).is_err());
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BoundingBox::new(0.5, 0.1, 0.5, 0.4).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 1.1).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn duplicate_vocabulary_names_rejected() {
        assert!(ClassVocabulary::new(vec!["a".into(), "a".into()], vec![]).is_err());
    }

    #[test]
    fn iou_basic() {
        let a = BoundingBox::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let b = BoundingBox::new(0.25, 0.0, 0.75, 0.5).unwrap();
        assert!((a.iou(&a) - 1.0).abs() < 1e-15);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn frequencies_of_single_scene() {
        let v = ClassVocabulary::numbered(2, 1);
        let d = Dataset::new(
            v,
            vec![SceneAnnotation {
                objects: vec![obj(0), obj(0), obj(1)],
                relations: vec![],
            }],
            Split::Train,
        )
        .unwrap();
        let p = class_frequencies(&d);
        assert_eq!(p.object_counts, vec![2, 1]);
        assert_eq!(p.object_image_counts, vec![1, 1]);
    }

    #[test]
    fn frequencies_of_empty_dataset() {
        let d = Dataset::new(ClassVocabulary::numbered(3, 2), vec![], Split::Train).unwrap();
        assert_eq!(class_frequencies(&d), FrequencyProfile::zeros(3, 2));
    }

    #[test]
    fn partition_rare_pair_split() {
        let p = partition_head_body_tail(&profile(&[98, 1, 1]), (0.5, 0.9)).unwrap();
        assert_eq!(p.head, vec![0]);
        assert_eq!(p.body, vec![1]);
        assert_eq!(p.tail, vec![2]);
    }

    #[test]
    fn partition_equal_counts_by_index() {
        let p = partition_head_body_tail(&profile(&[5, 5, 5]), (1.0 / 3.0, 2.0 / 3.0)).unwrap();
        assert_eq!((p.head, p.body, p.tail), (vec![0], vec![1], vec![2]));
        let p = partition_head_body_tail(&profile(&[4; 6]), (1.0 / 3.0, 2.0 / 3.0)).unwrap();
        assert_eq!((p.head, p.body, p.tail), (vec![0, 1], vec![2, 3], vec![4, 5]));
    }

    #[test]
    fn partition_single_and_errors() {
        let p = partition_head_body_tail(&profile(&[0, 7, 0]), DEFAULT_BOUNDARIES).unwrap();
        assert_eq!(p.head, vec![1]);
        assert!(p.body.is_empty() && p.tail.is_empty());
        assert!(partition_head_body_tail(&profile(&[0, 0]), DEFAULT_BOUNDARIES).is_err());
        assert!(partition_head_body_tail(&profile(&[1]), (0.6, 0.5)).is_err());
    }

    #[test]
    fn partition_orders_by_count_then_index() {
        let p = partition_head_body_tail(&profile(&[1, 10, 10, 3]), (0.4, 0.9)).unwrap();
        assert_eq!(p.head, vec![1]);
        assert_eq!(p.body, vec![2, 3]);
        assert_eq!(p.tail, vec![0]);
        assert_eq!(p.part_of(3), Some(TailPart::Body));
    }
}
