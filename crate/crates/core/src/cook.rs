//! Co-occurrence knowledge: per-image class presence tallies over a training
//! corpus and the conditional matrix `CooK(j | i)` derived from them.
//!
//! Counts are the persisted, mergeable quantity. The matrix is always
//! re-derivable from them with [`cook_from_counts`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::{hex16, names_fingerprint, Dataset};

/// Number of images sharing one exact set of present classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceSet {
    /// Sorted, distinct class indices.
    pub classes: Vec<usize>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoocCounts {
    pub n_classes: usize,
    /// Images where both `i` and `j` are present; the diagonal equals `presence`.
    pub pair_presence: Vec<Vec<u64>>,
    /// Images where class `i` is present.
    pub presence: Vec<u64>,
    /// Object instances of class `i`.
    pub instances: Vec<u64>,
    pub n_images: u64,
    pub vocab_fingerprint: String,
    pub provenance: Vec<String>,
    /// Histogram of per-image presence sets. Needed to merge through a
    /// many-to-one label mapping without double counting.
    pub presence_sets: Option<Vec<PresenceSet>>,
}

impl CoocCounts {
    pub fn zeros(n_classes: usize, vocab_fingerprint: String) -> Self {
        CoocCounts {
            n_classes,
            pair_presence: vec![vec![0; n_classes]; n_classes],
            presence: vec![0; n_classes],
            instances: vec![0; n_classes],
            n_images: 0,
            vocab_fingerprint,
            provenance: Vec::new(),
            presence_sets: Some(Vec::new()),
        }
    }

    /// Tallies one image given its object classes (with repetition).
    fn add_image(&mut self, classes: &[usize], sets: &mut BTreeMap<Vec<usize>, u64>) {
        let mut present: Vec<usize> = classes.to_vec();
        for &c in classes {
            self.instances[c] += 1;
        }
        present.sort_unstable();
        present.dedup();
        for (a, &i) in present.iter().enumerate() {
            self.presence[i] += 1;
            for &j in &present[a..] {
                self.pair_presence[i][j] += 1;
                if i != j {
                    self.pair_presence[j][i] += 1;
                }
            }
        }
        self.n_images += 1;
        *sets.entry(present).or_insert(0) += 1;
    }

    /// Checks the count invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_classes;
        let shape_ok = self.presence.len() == n
            && self.instances.len() == n
            && self.pair_presence.len() == n
            && self.pair_presence.iter().all(|r| r.len() == n);
        if !shape_ok {
            return Err(Error::Shape(format!("co-occurrence tables are not sized for {n} classes")));
        }
        let bad = |m: String| Err(Error::validation(None, "cooc_counts", m));
        for i in 0..n {
            if self.pair_presence[i][i] != self.presence[i] {
                return bad(format!("pair_presence[{i}][{i}] != presence[{i}]"));
            }
            if self.presence[i] > self.n_images {
                return bad(format!("presence[{i}] exceeds n_images"));
            }
            if self.presence[i] > self.instances[i] {
                return bad(format!("presence[{i}] exceeds instances[{i}]"));
            }
            for j in 0..n {
                let p = self.pair_presence[i][j];
                if p != self.pair_presence[j][i] {
                    return bad(format!("pair_presence not symmetric at ({i}, {j})"));
                }
                if p > self.presence[i].min(self.presence[j]) {
                    return bad(format!("pair_presence[{i}][{j}] exceeds a marginal"));
                }
            }
        }
        if let Some(sets) = &self.presence_sets {
            let total: u64 = sets.iter().map(|s| s.count).sum();
            if total != self.n_images {
                return bad(format!("presence_sets cover {total} images, n_images = {}", self.n_images));
            }
            if sets.iter().any(|s| s.classes.iter().any(|&c| c >= n)) {
                return bad("presence_sets reference an out-of-range class".into());
            }
        }
        Ok(())
    }
}

/// Denominator choice for [`cook_from_counts`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CookMode {
    /// Images containing class `i`: `P(j present | i present)`.
    #[default]
    Indicator,
    /// Object instances of class `i`.
    Instance,
}

impl CookMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CookMode::Indicator => "indicator",
            CookMode::Instance => "instance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CookMatrix {
    /// `values[i][j]` estimates `CooK(c_j | c_i)`.
    pub values: Vec<Vec<f64>>,
    pub mode: CookMode,
    pub observed: Vec<bool>,
}

impl CookMatrix {
    /// Matrix of ones: message weights become neutral.
    pub fn ones(n_classes: usize) -> Self {
        CookMatrix {
            values: vec![vec![1.0; n_classes]; n_classes],
            mode: CookMode::Indicator,
            observed: vec![true; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.values.len()
    }

    /// Checked accessor for `CooK(c_j | c_i)`.
    pub fn lookup(&self, c_i: usize, c_j: usize) -> Result<f64> {
        let n = self.n_classes();
        if c_i >= n {
            return Err(Error::IndexOutOfRange {
                what: "cook row",
                index: c_i,
                len: n,
            });
        }
        if c_j >= n {
            return Err(Error::IndexOutOfRange {
                what: "cook column",
                index: c_j,
                len: n,
            });
        }
        Ok(self.values[c_i][c_j])
    }

    #[inline]
    pub(crate) fn get(&self, c_i: usize, c_j: usize) -> f64 {
        self.values[c_i][c_j]
    }

    /// Content digest over mode and exact value bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.mode.as_str().as_bytes());
        h.update((self.values.len() as u64).to_le_bytes());
        for row in &self.values {
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex16(&h.finalize())
    }
}

/// Single pass over the images. Empty datasets give zero counts.
pub fn extract_counts(dataset: &Dataset) -> Result<CoocCounts> {
    let n = dataset.vocabulary.n_objects();
    let mut counts = CoocCounts::zeros(n, dataset.vocabulary.object_fingerprint());
    let mut sets = BTreeMap::new();
    let mut classes = Vec::new();
    for (k, scene) in dataset.scenes.iter().enumerate() {
        classes.clear();
        for (i, o) in scene.objects.iter().enumerate() {
            if o.class_id >= n {
                return Err(Error::Vocabulary(format!(
                    "scene {k} object {i} has class {} but the vocabulary has {n} classes",
                    o.class_id
                )));
            }
            classes.push(o.class_id);
        }
        counts.add_image(&classes, &mut sets);
    }
    counts.presence_sets = Some(sets_to_vec(sets));
    counts.provenance.push(format!("{}:{}", dataset.split.as_str(), dataset.scenes.len()));
    Ok(counts)
}

fn sets_to_vec(sets: BTreeMap<Vec<usize>, u64>) -> Vec<PresenceSet> {
    sets.into_iter().map(|(classes, count)| PresenceSet { classes, count }).collect()
}

/// Normalizes pair counts by the per-class denominator of `mode`.
///
/// Rows of classes with a zero denominator stay zero and are flagged as
/// unobserved.
pub fn cook_from_counts(counts: &CoocCounts, mode: CookMode) -> CookMatrix {
    let n = counts.n_classes;
    let mut values = vec![vec![0.0; n]; n];
    let mut observed = vec![false; n];
    for i in 0..n {
        let denom = match mode {
            CookMode::Indicator => counts.presence[i],
            CookMode::Instance => counts.instances[i],
        };
        if denom == 0 {
            continue;
        }
        observed[i] = true;
        for j in 0..n {
            values[i][j] = (counts.pair_presence[i][j] as f64 / denom as f64).clamp(0.0, 1.0);
        }
    }
    CookMatrix { values, mode, observed }
}

/// Partial map from a source vocabulary's object classes into a target's.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub source_names: Vec<String>,
    pub target_names: Vec<String>,
    pub map: BTreeMap<usize, usize>,
}

impl LabelMapping {
    pub fn identity(names: &[String]) -> Self {
        LabelMapping {
            source_names: names.to_vec(),
            target_names: names.to_vec(),
            map: (0..names.len()).map(|i| (i, i)).collect(),
        }
    }

    /// Maps source classes to the target class with the same name.
    pub fn by_name(source: &[String], target: &[String]) -> Self {
        let map = source
            .iter()
            .enumerate()
            .filter_map(|(s, n)| target.iter().position(|t| t == n).map(|t| (s, t)))
            .collect();
        LabelMapping {
            source_names: source.to_vec(),
            target_names: target.to_vec(),
            map,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (&s, &t) in &self.map {
            if s >= self.source_names.len() {
                return Err(Error::IndexOutOfRange {
                    what: "mapping source",
                    index: s,
                    len: self.source_names.len(),
                });
            }
            if t >= self.target_names.len() {
                return Err(Error::IndexOutOfRange {
                    what: "mapping target",
                    index: t,
                    len: self.target_names.len(),
                });
            }
        }
        Ok(())
    }

    /// Source classes with no target.
    pub fn unmapped(&self) -> Vec<usize> {
        (0..self.source_names.len()).filter(|s| !self.map.contains_key(s)).collect()
    }

    pub fn is_injective(&self) -> bool {
        let mut targets: Vec<usize> = self.map.values().copied().collect();
        targets.sort_unstable();
        targets.windows(2).all(|w| w[0] != w[1])
    }
}

/// Adds `b`'s counts, relabeled through `mapping`, onto `a`.
///
/// Unmapped source classes are dropped. When several source classes map to
/// one target, an image containing more than one of them is counted once;
/// that needs `b.presence_sets` unless the mapping is injective.
pub fn merge_counts(a: &CoocCounts, b: &CoocCounts, mapping: &LabelMapping) -> Result<CoocCounts> {
    mapping.validate()?;
    if mapping.target_names.len() != a.n_classes {
        return Err(Error::Vocabulary(format!(
            "mapping targets {} classes, base counts have {}",
            mapping.target_names.len(),
            a.n_classes
        )));
    }
    if names_fingerprint(&mapping.target_names) != a.vocab_fingerprint {
        return Err(Error::Vocabulary("mapping target vocabulary does not match the base counts".into()));
    }
    if mapping.source_names.len() != b.n_classes {
        return Err(Error::Vocabulary(format!(
            "mapping has {} source classes, merged counts have {}",
            mapping.source_names.len(),
            b.n_classes
        )));
    }
    if names_fingerprint(&mapping.source_names) != b.vocab_fingerprint {
        return Err(Error::Vocabulary("mapping source vocabulary does not match the merged counts".into()));
    }
    let relabeled = relabel(b, mapping)?;
    Ok(add_counts(a, relabeled, &b.provenance))
}

/// Sums two count sets over the same vocabulary.
pub fn merge_same_vocabulary(a: &CoocCounts, b: &CoocCounts) -> Result<CoocCounts> {
    if a.vocab_fingerprint != b.vocab_fingerprint || a.n_classes != b.n_classes {
        return Err(Error::Vocabulary(format!(
            "counts use vocabularies {} and {}",
            a.vocab_fingerprint, b.vocab_fingerprint
        )));
    }
    a.validate()?;
    b.validate()?;
    Ok(add_counts(a, b.clone(), &b.provenance))
}

fn add_counts(a: &CoocCounts, relabeled: CoocCounts, provenance: &[String]) -> CoocCounts {
    let mut out = a.clone();
    for i in 0..a.n_classes {
        out.presence[i] += relabeled.presence[i];
        out.instances[i] += relabeled.instances[i];
        for j in 0..a.n_classes {
            out.pair_presence[i][j] += relabeled.pair_presence[i][j];
        }
    }
    out.n_images += relabeled.n_images;
    out.provenance.extend(provenance.iter().cloned());
    out.presence_sets = match (&a.presence_sets, relabeled.presence_sets) {
        (Some(sa), Some(sb)) => {
            let mut m: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
            for s in sa.iter().chain(&sb) {
                *m.entry(s.classes.clone()).or_insert(0) += s.count;
            }
            Some(sets_to_vec(m))
        }
        _ => None,
    };
    out
}

/// Expresses `b` in the mapping's target vocabulary.
fn relabel(b: &CoocCounts, mapping: &LabelMapping) -> Result<CoocCounts> {
    let n = mapping.target_names.len();
    let fp = names_fingerprint(&mapping.target_names);
    let mut out = CoocCounts::zeros(n, fp);
    for (&s, &t) in &mapping.map {
        out.instances[t] += b.instances[s];
    }
    out.n_images = b.n_images;

    if let Some(sets) = &b.presence_sets {
        let mut m: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for set in sets {
            let mut present: Vec<usize> = set.classes.iter().filter_map(|c| mapping.map.get(c).copied()).collect();
            present.sort_unstable();
            present.dedup();
            for (k, &i) in present.iter().enumerate() {
                out.presence[i] += set.count;
                for &j in &present[k..] {
                    out.pair_presence[i][j] += set.count;
                    if i != j {
                        out.pair_presence[j][i] += set.count;
                    }
                }
            }
            *m.entry(present).or_insert(0) += set.count;
        }
        out.presence_sets = Some(sets_to_vec(m));
        return Ok(out);
    }

    if !mapping.is_injective() {
        return Err(Error::Config(
            "many-to-one mapping needs per-image presence sets, which these counts do not carry".into(),
        ));
    }
    for (&s, &t) in &mapping.map {
        out.presence[t] = b.presence[s];
        for (&s2, &t2) in &mapping.map {
            out.pair_presence[t][t2] = b.pair_presence[s][s2];
        }
    }
    out.presence_sets = None;
    Ok(out)
}
