//! JSON file formats: datasets, co-occurrence files, label mappings,
//! checkpoints, training logs and evaluation results.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cooktf_core::cook::{cook_from_counts, CookMatrix, CookMode, CoocCounts, LabelMapping, PresenceSet};
use cooktf_core::eval::{partition_recall, RecallResult};
use cooktf_core::model::{Model, TaskMode};
use cooktf_core::scene::{
    BoundingBox, ClassVocabulary, Dataset, LongTailPartition, ObjectInstance, RelationTriplet, SceneAnnotation, Split,
};
use cooktf_core::train::{LogRecord, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

/// Pretty-printed with a trailing newline; output is a pure function of `value`.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values always serialize");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    objects: Vec<String>,
    predicates: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectFile {
    class: usize,
    observed_class: usize,
    #[serde(default)]
    observed_logits: Option<Vec<f64>>,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    objects: Vec<ObjectFile>,
    relations: Vec<[usize; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    vocabulary: VocabFile,
    scenes: Vec<SceneFile>,
    split: Split,
}

impl From<&Dataset> for DatasetFile {
    fn from(d: &Dataset) -> Self {
        DatasetFile {
            vocabulary: VocabFile {
                objects: d.vocabulary.object_classes.clone(),
                predicates: d.vocabulary.predicate_classes.clone(),
            },
            scenes: d
                .scenes
                .iter()
                .map(|s| SceneFile {
                    objects: s
                        .objects
                        .iter()
                        .map(|o| ObjectFile {
                            class: o.class_id,
                            observed_class: o.observed_class_id,
                            observed_logits: o.observed_logits.clone(),
                            bbox: [o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1],
                        })
                        .collect(),
                    relations: s.relations.iter().map(|r| [r.subject_idx, r.object_idx, r.predicate_id]).collect(),
                })
                .collect(),
            split: d.split,
        }
    }
}

pub fn dataset_to_json(dataset: &Dataset) -> String {
    let mut s = serde_json::to_string_pretty(&DatasetFile::from(dataset)).expect("datasets always serialize");
    s.push('\n');
    s
}

pub fn dataset_from_json(text: &[u8], path: &Path) -> Result<Dataset> {
    let f: DatasetFile = serde_json::from_slice(text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let vocabulary = ClassVocabulary {
        object_classes: f.vocabulary.objects,
        predicate_classes: f.vocabulary.predicates,
    };
    let scenes = f
        .scenes
        .into_iter()
        .map(|s| SceneAnnotation {
            objects: s
                .objects
                .into_iter()
                .map(|o| ObjectInstance {
                    class_id: o.class,
                    observed_class_id: o.observed_class,
                    observed_logits: o.observed_logits,
                    bbox: BoundingBox {
                        x0: o.bbox[0],
                        y0: o.bbox[1],
                        x1: o.bbox[2],
                        y1: o.bbox[3],
                    },
                })
                .collect(),
            relations: s
                .relations
                .into_iter()
                .map(|[s, o, p]| RelationTriplet {
                    subject_idx: s,
                    object_idx: o,
                    predicate_id: p,
                })
                .collect(),
        })
        .collect();
    Ok(Dataset::new(vocabulary, scenes, f.split)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_json(&read_bytes(path)?, path)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    write_bytes(path, dataset_to_json(dataset).as_bytes())
}

/// Counts plus the normalized matrix derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct CookFile {
    pub counts: CoocCounts,
    pub matrix: CookMatrix,
}

impl CookFile {
    pub fn from_counts(counts: CoocCounts, mode: CookMode) -> Self {
        let matrix = cook_from_counts(&counts, mode);
        CookFile { counts, matrix }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CookJson {
    vocab_fingerprint: String,
    n_images: u64,
    presence: Vec<u64>,
    instances: Vec<u64>,
    pair_presence: Vec<Vec<u64>>,
    mode: CookMode,
    values: Vec<Vec<f64>>,
    provenance: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    presence_sets: Option<Vec<PresenceSet>>,
}

pub fn save_cook(cook: &CookFile, path: &Path) -> Result<()> {
    let c = &cook.counts;
    write_json(
        path,
        &CookJson {
            vocab_fingerprint: c.vocab_fingerprint.clone(),
            n_images: c.n_images,
            presence: c.presence.clone(),
            instances: c.instances.clone(),
            pair_presence: c.pair_presence.clone(),
            mode: cook.matrix.mode,
            values: cook.matrix.values.clone(),
            provenance: c.provenance.clone(),
            presence_sets: c.presence_sets.clone(),
        },
    )
}

/// Loads and cross-checks a co-occurrence file. When `expected_vocab` is
/// given, the stored fingerprint must equal it.
pub fn load_cook(path: &Path, expected_vocab: Option<&str>) -> Result<CookFile> {
    let j: CookJson = read_json(path)?;
    if let Some(v) = expected_vocab {
        if v != j.vocab_fingerprint {
            return Err(Error::schema(
                path,
                format!("vocabulary fingerprint {} does not match expected {v}", j.vocab_fingerprint),
            ));
        }
    }
    let counts = CoocCounts {
        n_classes: j.presence.len(),
        pair_presence: j.pair_presence,
        presence: j.presence,
        instances: j.instances,
        n_images: j.n_images,
        vocab_fingerprint: j.vocab_fingerprint,
        provenance: j.provenance,
        presence_sets: j.presence_sets,
    };
    counts.validate().map_err(|e| Error::schema(path, e.to_string()))?;
    let file = CookFile::from_counts(counts, j.mode);
    let n = file.counts.n_classes;
    if j.values.len() != n || j.values.iter().any(|r| r.len() != n) {
        return Err(Error::schema(path, format!("values must be a {n}x{n} matrix")));
    }
    for (i, (stored, derived)) in j.values.iter().zip(&file.matrix.values).enumerate() {
        if let Some(k) = (0..n).find(|&k| (stored[k] - derived[k]).abs() > 1e-12) {
            return Err(Error::schema(
                path,
                format!("values[{i}][{k}] = {} disagrees with the stored counts ({})", stored[k], derived[k]),
            ));
        }
    }
    Ok(file)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingJson {
    source_vocab: Vec<String>,
    target_vocab: Vec<String>,
    map: BTreeMap<usize, usize>,
}

pub fn load_mapping(path: &Path) -> Result<LabelMapping> {
    let j: MappingJson = read_json(path)?;
    let m = LabelMapping {
        source_names: j.source_vocab,
        target_names: j.target_vocab,
        map: j.map,
    };
    m.validate()?;
    Ok(m)
}

pub fn save_mapping(mapping: &LabelMapping, path: &Path) -> Result<()> {
    write_json(
        path,
        &MappingJson {
            source_vocab: mapping.source_names.clone(),
            target_vocab: mapping.target_names.clone(),
            map: mapping.map.clone(),
        },
    )
}

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub crate_version: String,
    pub config: TrainConfig,
    /// Updates applied so far.
    pub step: usize,
    pub vocab_fingerprint: String,
    /// Fingerprint of the co-occurrence matrix used in training, if any.
    pub cook_fingerprint: Option<String>,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, model: Model, step: usize, vocab: &ClassVocabulary, cook: Option<&CookMatrix>) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            cook_fingerprint: cook.filter(|_| config.use_cook).map(CookMatrix::fingerprint),
            config,
            step,
            vocab_fingerprint: vocab.object_fingerprint(),
            model,
        }
    }

    /// The matrix to use with this checkpoint; errors when it differs from
    /// the one used in training.
    pub fn resolve_cook<'a>(&self, cook: Option<&'a CookMatrix>) -> Result<Option<&'a CookMatrix>> {
        match (&self.cook_fingerprint, cook) {
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::Usage(
                "checkpoint was trained with a co-occurrence matrix; pass it with --cook".into(),
            )),
            (Some(want), Some(m)) => {
                let got = m.fingerprint();
                if &got != want {
                    return Err(Error::Core(cooktf_core::Error::Vocabulary(format!(
                        "co-occurrence matrix fingerprint {got} differs from the training matrix {want}"
                    ))));
                }
                Ok(Some(m))
            }
        }
    }

    pub fn check_vocabulary(&self, vocab: &ClassVocabulary) -> Result<()> {
        let got = vocab.object_fingerprint();
        if got != self.vocab_fingerprint {
            return Err(Error::Core(cooktf_core::Error::Vocabulary(format!(
                "dataset vocabulary {got} differs from the checkpoint's {}",
                self.vocab_fingerprint
            ))));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_json(path, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let v: serde_json::Value = read_json(path)?;
    match v.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(s) if s == CHECKPOINT_SCHEMA as u64 => {}
        Some(s) => return Err(Error::schema(path, format!("unsupported checkpoint schema version {s}"))),
        None => return Err(Error::schema(path, "missing schema_version")),
    }
    serde_json::from_value(v).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn log_to_jsonl(log: &[LogRecord]) -> String {
    let mut s = String::new();
    for r in log {
        s.push_str(&serde_json::to_string(r).expect("log records always serialize"));
        s.push('\n');
    }
    s
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = read_bytes(path)?;
    text.split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| {
            serde_json::from_slice(l).map_err(|source| Error::Parse {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRecall {
    pub head: Option<f64>,
    pub body: Option<f64>,
    pub tail: Option<f64>,
}

impl From<[Option<f64>; 3]> for PartRecall {
    fn from(v: [Option<f64>; 3]) -> Self {
        PartRecall {
            head: v[0],
            body: v[1],
            tail: v[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub boundaries: (f64, f64),
    pub head: Vec<usize>,
    pub body: Vec<usize>,
    pub tail: Vec<usize>,
    /// `K →` mean recall per partition.
    pub mean_recall: BTreeMap<usize, PartRecall>,
}

impl PartitionReport {
    pub fn new(result: &RecallResult, partition: &LongTailPartition) -> Result<Self> {
        let pr = partition_recall(result, partition)?;
        Ok(PartitionReport {
            boundaries: partition.boundaries,
            head: partition.head.clone(),
            body: partition.body.clone(),
            tail: partition.tail.clone(),
            mean_recall: pr.into_iter().map(|(k, v)| (k, v.into())).collect(),
        })
    }

    pub fn partition(&self) -> LongTailPartition {
        LongTailPartition {
            head: self.head.clone(),
            body: self.body.clone(),
            tail: self.tail.clone(),
            boundaries: self.boundaries,
        }
    }
}

/// Evaluation results as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub task: TaskMode,
    #[serde(rename = "K")]
    pub ks: Vec<usize>,
    pub graph_constraint: bool,
    pub recall: BTreeMap<usize, Option<f64>>,
    pub mean_recall: BTreeMap<usize, Option<f64>>,
    /// `K →` recall of each predicate (`null` when it has no GT).
    pub per_predicate: BTreeMap<usize, Vec<Option<f64>>>,
    pub predicates: Vec<String>,
    pub n_scenes: usize,
    pub n_scenes_with_gt: usize,
    pub partition_report: Option<PartitionReport>,
}

impl ResultsFile {
    pub fn new(result: &RecallResult, vocab: &ClassVocabulary, n_scenes: usize, partition: Option<&LongTailPartition>) -> Result<Self> {
        Ok(ResultsFile {
            task: result.task,
            ks: result.ks.clone(),
            graph_constraint: result.graph_constraint,
            recall: result.recall.clone(),
            mean_recall: result.mean_recall.clone(),
            per_predicate: result.per_predicate.clone(),
            predicates: vocab.predicate_classes.clone(),
            n_scenes,
            n_scenes_with_gt: result.n_scenes_with_gt,
            partition_report: partition.map(|p| PartitionReport::new(result, p)).transpose()?,
        })
    }

    pub fn to_result(&self) -> RecallResult {
        RecallResult {
            task: self.task,
            ks: self.ks.clone(),
            graph_constraint: self.graph_constraint,
            recall: self.recall.clone(),
            mean_recall: self.mean_recall.clone(),
            per_predicate: self.per_predicate.clone(),
            n_scenes_with_gt: self.n_scenes_with_gt,
        }
    }
}

/// `out` when given, else `default_name` inside `$COOKTF_OUT_DIR` (or the
/// working directory).
pub fn output_path(out: Option<&Path>, default_name: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("COOKTF_OUT_DIR").map_or_else(|| PathBuf::from(default_name), |d| Path::new(&d).join(default_name)),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}
