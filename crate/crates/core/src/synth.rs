//! Seeded synthetic scene-graph corpora with Zipf-distributed object classes,
//! block-structured co-occurrence and rule-driven predicates.

use alloc::format;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, stream, Rng};
use crate::scene::{BoundingBox, ClassVocabulary, Dataset, ObjectInstance, RelationTriplet, SceneAnnotation, Split};

/// Predicate distribution for ordered pairs whose subject falls in
/// `subject_group` and whose object falls in `object_group`.
///
/// Group `g < cooccurrence_blocks.len()` is the `g`-th block; classes that
/// belong to no block form the extra group `cooccurrence_blocks.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRule {
    pub subject_group: usize,
    pub object_group: usize,
    pub predicate_distribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_scenes: usize,
    pub n_object_classes: usize,
    pub n_predicate_classes: usize,
    /// Inclusive `[min, max]`.
    pub objects_per_scene: (usize, usize),
    /// Class `c` has weight `(c + 1)^-zipf_exponent`.
    pub zipf_exponent: f64,
    /// Groups of object classes that preferentially share scenes. A class
    /// belongs to the first block listing it.
    #[serde(default)]
    pub cooccurrence_blocks: Vec<Vec<usize>>,
    /// Probability that each object after the first is drawn from the
    /// first object's block rather than from the global Zipf law.
    #[serde(default)]
    pub block_cohesion: f64,
    #[serde(default)]
    pub relation_rules: Vec<RelationRule>,
    /// Probability that an ordered pair covered by a rule carries a relation.
    pub relation_density: f64,
    pub label_noise_rate: f64,
    pub seed: u64,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Train
}

/// `(subject group, object group, [(predicate, probability)])` for the
/// benchmark corpus. Predicates 8 and 9 only arise between rare groups.
type Rule = (usize, usize, &'static [(usize, f64)]);

const BENCHMARK_RULES: &[Rule] = &[
    (0, 0, &[(0, 0.6), (1, 0.3), (2, 0.1)]),
    (0, 1, &[(1, 0.5), (3, 0.5)]),
    (1, 0, &[(2, 0.6), (4, 0.4)]),
    (1, 1, &[(3, 0.7), (5, 0.3)]),
    (0, 2, &[(0, 0.5), (6, 0.5)]),
    (2, 0, &[(1, 0.4), (7, 0.6)]),
    (2, 2, &[(6, 0.5), (8, 0.5)]),
    (1, 2, &[(5, 0.6), (9, 0.4)]),
    (3, 3, &[(8, 0.4), (9, 0.6)]),
    (0, 3, &[(2, 0.3), (9, 0.7)]),
    (3, 0, &[(7, 0.5), (4, 0.5)]),
];

impl SyntheticConfig {
    /// Long-tail benchmark corpus: 20 object classes in four co-occurrence
    /// blocks of five, 10 predicates, Zipf exponent 1.2, 3 to 7 objects.
    pub fn longtail_benchmark(n_scenes: usize, seed: u64, split: Split) -> Self {
        let relation_rules = BENCHMARK_RULES
            .iter()
            .map(|&(s, o, dist)| {
                let mut p = alloc::vec![0.0; 10];
                for &(k, w) in dist {
                    p[k] = w;
                }
                RelationRule {
                    subject_group: s,
                    object_group: o,
                    predicate_distribution: p,
                }
            })
            .collect();
        SyntheticConfig {
            n_scenes,
            n_object_classes: 20,
            n_predicate_classes: 10,
            objects_per_scene: (3, 7),
            zipf_exponent: 1.2,
            cooccurrence_blocks: (0..4).map(|b| (5 * b..5 * b + 5).collect()).collect(),
            block_cohesion: 0.7,
            relation_rules,
            relation_density: 0.35,
            label_noise_rate: 0.1,
            seed,
            split,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if self.n_scenes == 0 || self.n_object_classes == 0 || self.n_predicate_classes == 0 {
            return bad("n_scenes, n_object_classes and n_predicate_classes must be positive".into());
        }
        let (lo, hi) = self.objects_per_scene;
        if lo > hi {
            return bad(format!("objects_per_scene range [{lo}, {hi}] is empty"));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and >= 0".into());
        }
        for (name, p) in [
            ("block_cohesion", self.block_cohesion),
            ("relation_density", self.relation_density),
            ("label_noise_rate", self.label_noise_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for (b, block) in self.cooccurrence_blocks.iter().enumerate() {
            if block.is_empty() {
                return bad(format!("cooccurrence_blocks[{b}] is empty"));
            }
            if let Some(&c) = block.iter().find(|&&c| c >= self.n_object_classes) {
                return bad(format!("cooccurrence_blocks[{b}] references class {c} >= {}", self.n_object_classes));
            }
        }
        let n_groups = self.cooccurrence_blocks.len() + 1;
        for (k, r) in self.relation_rules.iter().enumerate() {
            if r.subject_group >= n_groups || r.object_group >= n_groups {
                return bad(format!("relation_rules[{k}] references a group >= {n_groups}"));
            }
            if r.predicate_distribution.len() != self.n_predicate_classes {
                return bad(format!(
                    "relation_rules[{k}] distribution has {} entries, expected {}",
                    r.predicate_distribution.len(),
                    self.n_predicate_classes
                ));
            }
            if r.predicate_distribution.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return bad(format!("relation_rules[{k}] has an entry outside [0, 1]"));
            }
            let s: f64 = r.predicate_distribution.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("relation_rules[{k}] distribution sums to {s}"));
            }
        }
        Ok(())
    }

    /// Group index of each object class.
    pub fn class_groups(&self) -> Vec<usize> {
        let none = self.cooccurrence_blocks.len();
        (0..self.n_object_classes)
            .map(|c| self.cooccurrence_blocks.iter().position(|b| b.contains(&c)).unwrap_or(none))
            .collect()
    }
}

/// Cumulative weights for inverse-CDF sampling.
struct Categorical {
    items: Vec<usize>,
    cdf: Vec<f64>,
}

impl Categorical {
    fn new(items: Vec<usize>, weights: &[f64]) -> Self {
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in weights {
            acc += w;
            cdf.push(acc);
        }
        Categorical { items, cdf }
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let total = *self.cdf.last().unwrap();
        let u = rng.random::<f64>() * total;
        let k = self.cdf.partition_point(|&c| c <= u).min(self.items.len() - 1);
        self.items[k]
    }
}

pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n).map(|c| math::powf((c + 1) as f64, -exponent)).collect()
}

/// Deterministic in `config` (including its seed).
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let weights = zipf_weights(config.n_object_classes, config.zipf_exponent);
    let global = Categorical::new((0..config.n_object_classes).collect(), &weights);
    let groups = config.class_groups();
    let n_blocks = config.cooccurrence_blocks.len();
    let block_samplers: Vec<Categorical> = config
        .cooccurrence_blocks
        .iter()
        .map(|b| {
            let w: Vec<f64> = b.iter().map(|&c| weights[c]).collect();
            Categorical::new(b.clone(), &w)
        })
        .collect();
    let mut rule_table: Vec<Option<Categorical>> = (0..(n_blocks + 1) * (n_blocks + 1)).map(|_| None).collect();
    for r in &config.relation_rules {
        let slot = &mut rule_table[r.subject_group * (n_blocks + 1) + r.object_group];
        if slot.is_none() {
            *slot = Some(Categorical::new((0..config.n_predicate_classes).collect(), &r.predicate_distribution));
        }
    }

    let mut rng = rng::derive(config.seed, stream::SYNTH, 0);
    let (lo, hi) = config.objects_per_scene;
    let mut scenes = Vec::with_capacity(config.n_scenes);
    for _ in 0..config.n_scenes {
        let n_obj = rng.random_range(lo..=hi);
        let mut classes: Vec<usize> = Vec::with_capacity(n_obj);
        for i in 0..n_obj {
            let c = if i > 0 && groups[classes[0]] < n_blocks && rng.random::<f64>() < config.block_cohesion {
                block_samplers[groups[classes[0]]].sample(&mut rng)
            } else {
                global.sample(&mut rng)
            };
            classes.push(c);
        }
        let objects: Vec<ObjectInstance> = classes
            .iter()
            .map(|&c| {
                let bbox = random_box(&mut rng);
                let observed = if config.n_object_classes > 1 && rng.random::<f64>() < config.label_noise_rate {
                    let other = rng.random_range(0..config.n_object_classes - 1);
                    if other >= c {
                        other + 1
                    } else {
                        other
                    }
                } else {
                    c
                };
                ObjectInstance {
                    class_id: c,
                    observed_class_id: observed,
                    observed_logits: None,
                    bbox,
                }
            })
            .collect();
        let mut relations = Vec::new();
        for s in 0..n_obj {
            for o in 0..n_obj {
                if s == o {
                    continue;
                }
                let Some(rule) = &rule_table[groups[classes[s]] * (n_blocks + 1) + groups[classes[o]]] else {
                    continue;
                };
                if rng.random::<f64>() < config.relation_density {
                    relations.push(RelationTriplet {
                        subject_idx: s,
                        object_idx: o,
                        predicate_id: rule.sample(&mut rng),
                    });
                }
            }
        }
        scenes.push(SceneAnnotation { objects, relations });
    }
    Dataset::new(
        ClassVocabulary::numbered(config.n_object_classes, config.n_predicate_classes),
        scenes,
        config.split,
    )
}

fn random_box(rng: &mut Rng) -> BoundingBox {
    let w = rng.random_range(0.05..0.6);
    let h = rng.random_range(0.05..0.6);
    let x0 = rng.random_range(0.0..(1.0 - w));
    let y0 = rng.random_range(0.0..(1.0 - h));
    BoundingBox {
        x0,
        y0,
        x1: x0 + w,
        y1: y0 + h,
    }
}
