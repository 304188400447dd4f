//! Train/evaluate recipes shared by the command line and the test suites.

use std::collections::BTreeMap;

use cooktf_core::cook::{cook_from_counts, extract_counts, CookMatrix, CookMode};
use cooktf_core::eval::{evaluate, partition_recall, EvalConfig, RecallResult, SceneOutput};
use cooktf_core::gradcheck::{gradient_check, GradCheckReport};
use cooktf_core::model::{Model, PairTarget, TaskMode};
use cooktf_core::rng;
use cooktf_core::scene::{
    class_frequencies, partition_head_body_tail, Dataset, LongTailPartition, SceneAnnotation, Split, TailPart,
    DEFAULT_BOUNDARIES,
};
use cooktf_core::synth::{generate_synthetic, RelationRule, SyntheticConfig};
use cooktf_core::tfidf::TfMode;
use cooktf_core::train::{supervision_for, train, LogRecord, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Runs `f` on a pool of `jobs` threads, or inline when `jobs <= 1`.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Predicts every scene in batches of `batch_size`, the batch size the model
/// was trained with. Batches are independent, so the result does not depend
/// on the number of worker threads.
pub fn predict_dataset(
    model: &Model,
    dataset: &Dataset,
    mode: TaskMode,
    cook: Option<&CookMatrix>,
    batch_size: usize,
    jobs: usize,
) -> Result<Vec<SceneOutput>> {
    if batch_size == 0 {
        return Err(Error::Usage("batch size must be positive".into()));
    }
    let refs: Vec<&SceneAnnotation> = dataset.scenes.iter().collect();
    let chunks: Vec<&[&SceneAnnotation]> = refs.chunks(batch_size).collect();
    let run = |c: &&[&SceneAnnotation]| model.predict(c, mode, cook);
    let parts: Vec<cooktf_core::Result<Vec<SceneOutput>>> = if jobs <= 1 {
        chunks.iter().map(run).collect()
    } else {
        with_jobs(jobs, || chunks.par_iter().map(run).collect())?
    };
    let mut out = Vec::with_capacity(refs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate_model(
    model: &Model,
    dataset: &Dataset,
    cook: Option<&CookMatrix>,
    eval: &EvalConfig,
    batch_size: usize,
    jobs: usize,
) -> Result<RecallResult> {
    let outputs = predict_dataset(model, dataset, eval.mode, cook, batch_size, jobs)?;
    Ok(evaluate(&outputs, &dataset.scenes, dataset.vocabulary.n_predicates(), eval)?)
}

pub fn frequency_partition(train: &Dataset, boundaries: (f64, f64)) -> Result<LongTailPartition> {
    Ok(partition_head_body_tail(&class_frequencies(train), boundaries)?)
}

/// Training followed by evaluation on `test` with the training batch size.
pub struct RunOutcome {
    pub model: Model,
    pub log: Vec<LogRecord>,
    pub result: RecallResult,
}

pub fn train_and_evaluate(
    train_set: &Dataset,
    test_set: &Dataset,
    cook: Option<&CookMatrix>,
    config: &TrainConfig,
    eval: &EvalConfig,
    jobs: usize,
) -> Result<RunOutcome> {
    let cook = cook.filter(|_| config.use_cook);
    let (model, log) = train(train_set, cook, config.clone())?;
    let result = evaluate_model(&model, test_set, cook, eval, config.batch_size, jobs)?;
    Ok(RunOutcome { model, log, result })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub recall: BTreeMap<usize, Option<f64>>,
    pub mean_recall: BTreeMap<usize, Option<f64>>,
    pub final_loss: Option<f64>,
}

/// One model per batch size, all other settings shared.
pub fn sweep_batch(
    train_set: &Dataset,
    test_set: &Dataset,
    cook: Option<&CookMatrix>,
    config: &TrainConfig,
    eval: &EvalConfig,
    batch_sizes: &[usize],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if batch_sizes.is_empty() {
        return Err(Error::Usage("at least one batch size is required".into()));
    }
    batch_sizes
        .iter()
        .map(|&b| {
            let mut c = config.clone();
            c.batch_size = b;
            let run = train_and_evaluate(train_set, test_set, cook, &c, eval, jobs)?;
            Ok(SweepRow {
                batch_size: b,
                recall: run.result.recall,
                mean_recall: run.result.mean_recall,
                final_loss: run.log.last().map(|r| r.l),
            })
        })
        .collect()
}

/// Settings for the fixed-seed long-tail comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetup {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub train_corpus_seed: u64,
    pub test_corpus_seed: u64,
    pub seeds: Vec<u64>,
    /// Shared by every arm; the arms differ only in the three toggles.
    pub train: TrainConfig,
    pub cook_mode: CookMode,
    pub k: usize,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        let mut train = TrainConfig::desk(TaskMode::PredCls);
        train.n_layers = 1;
        train.batch_size = 24;
        train.tf_mode = TfMode::Count;
        ExperimentSetup {
            train_scenes: 2000,
            test_scenes: 400,
            train_corpus_seed: 2024,
            test_corpus_seed: 2025,
            seeds: vec![1, 2, 3],
            train,
            cook_mode: CookMode::Indicator,
            k: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// CooK and TF-l-IDF off.
    Baseline,
    /// CooK and learnable TF-l-IDF.
    Full,
    /// CooK and TF-l-IDF with ε, γ held at their initial values.
    Frozen,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Baseline, Arm::Full, Arm::Frozen];

    pub fn apply(self, config: &mut TrainConfig) {
        let on = self != Arm::Baseline;
        config.use_cook = on;
        config.use_tfidf = on;
        config.tfidf_learnable = self == Arm::Full;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub tail_mean_recall: Option<f64>,
    pub mean_recall: Option<f64>,
    pub recall: Option<f64>,
    pub partition_recall: [Option<f64>; 3],
    pub epsilon: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub setup: ExperimentSetup,
    pub partition: LongTailPartition,
    pub runs: Vec<ArmRun>,
    /// Seeds where the full model's tail mR beats the baseline's.
    pub tail_wins: usize,
    pub mean_tail: BTreeMap<Arm, f64>,
    pub mean_mr: BTreeMap<Arm, f64>,
    /// Full beats baseline on tail mR in a majority of seeds and on average.
    pub longtail_direction: bool,
    /// Learnable ε, γ reach at least the frozen model's mean mR.
    pub ablation_direction: bool,
}

impl ExperimentReport {
    pub fn run(&self, arm: Arm, seed: u64) -> Option<&ArmRun> {
        self.runs.iter().find(|r| r.arm == arm && r.seed == seed)
    }
}

/// Trains and evaluates every `(arm, seed)` combination. Runs are
/// independent and spread over `jobs` threads; each run is single-threaded,
/// so the report does not depend on `jobs`.
pub fn longtail_experiment(setup: &ExperimentSetup, jobs: usize) -> Result<ExperimentReport> {
    if setup.seeds.is_empty() {
        return Err(Error::Usage("the experiment needs at least one seed".into()));
    }
    let train_set = generate_synthetic(&SyntheticConfig::longtail_benchmark(
        setup.train_scenes,
        setup.train_corpus_seed,
        Split::Train,
    ))?;
    let test_set = generate_synthetic(&SyntheticConfig::longtail_benchmark(
        setup.test_scenes,
        setup.test_corpus_seed,
        Split::Test,
    ))?;
    let cook = cook_from_counts(&extract_counts(&train_set)?, setup.cook_mode);
    let partition = frequency_partition(&train_set, DEFAULT_BOUNDARIES)?;
    let mut eval = EvalConfig::new(setup.train.task_mode);
    eval.ks = vec![setup.k];

    let jobs_list: Vec<(Arm, u64)> = Arm::ALL.iter().flat_map(|&a| setup.seeds.iter().map(move |&s| (a, s))).collect();
    let one = |&(arm, seed): &(Arm, u64)| -> Result<ArmRun> {
        let mut c = setup.train.clone();
        c.seed = seed;
        arm.apply(&mut c);
        let run = train_and_evaluate(&train_set, &test_set, Some(&cook), &c, &eval, 1)?;
        let pr = partition_recall(&run.result, &partition)?[&setup.k];
        Ok(ArmRun {
            arm,
            seed,
            tail_mean_recall: pr[TailPart::Tail as usize],
            mean_recall: run.result.mean_recall[&setup.k],
            recall: run.result.recall[&setup.k],
            partition_recall: pr,
            epsilon: run.model.params.tfidf.epsilon,
            gamma: run.model.params.tfidf.gamma,
        })
    };
    let runs: Vec<Result<ArmRun>> = if jobs <= 1 {
        jobs_list.iter().map(one).collect()
    } else {
        with_jobs(jobs, || jobs_list.par_iter().map(one).collect())?
    };
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let mean = |arm: Arm, f: fn(&ArmRun) -> Option<f64>| -> f64 {
        let v: Vec<f64> = runs.iter().filter(|r| r.arm == arm).map(|r| f(r).unwrap_or(0.0)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mean_tail: BTreeMap<Arm, f64> = Arm::ALL.iter().map(|&a| (a, mean(a, |r| r.tail_mean_recall))).collect();
    let mean_mr: BTreeMap<Arm, f64> = Arm::ALL.iter().map(|&a| (a, mean(a, |r| r.mean_recall))).collect();
    let tail_of = |arm: Arm, seed: u64| runs.iter().find(|r| r.arm == arm && r.seed == seed).and_then(|r| r.tail_mean_recall);
    let tail_wins = setup
        .seeds
        .iter()
        .filter(|&&s| match (tail_of(Arm::Full, s), tail_of(Arm::Baseline, s)) {
            (Some(f), Some(b)) => f > b,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    let longtail_direction = 2 * tail_wins > setup.seeds.len() && mean_tail[&Arm::Full] > mean_tail[&Arm::Baseline];
    let ablation_direction = mean_mr[&Arm::Full] >= mean_mr[&Arm::Frozen];
    Ok(ExperimentReport {
        setup: setup.clone(),
        partition,
        runs,
        tail_wins,
        mean_tail,
        mean_mr,
        longtail_direction,
        ablation_direction,
    })
}

/// Two small synthetic scenes with ground truth plus background pairs.
pub fn gradcheck_fixture(n_object_classes: usize, n_predicates: usize, seed: u64) -> Result<(Dataset, Vec<Vec<PairTarget>>)> {
    let uniform = vec![1.0 / n_predicates as f64; n_predicates];
    let config = SyntheticConfig {
        n_scenes: 2,
        n_object_classes,
        n_predicate_classes: n_predicates,
        objects_per_scene: (3, 4),
        zipf_exponent: 0.5,
        cooccurrence_blocks: Vec::new(),
        block_cohesion: 0.0,
        relation_rules: vec![RelationRule {
            subject_group: 0,
            object_group: 0,
            predicate_distribution: uniform,
        }],
        relation_density: 0.5,
        label_noise_rate: 0.3,
        seed,
        split: Split::Train,
    };
    let dataset = generate_synthetic(&config)?;
    let supervision = dataset
        .scenes
        .iter()
        .enumerate()
        .map(|(i, s)| supervision_for(s, n_predicates, 1, &mut rng::derive(seed, rng::stream::NEGATIVES, i as u64)))
        .collect();
    Ok((dataset, supervision))
}

/// Gradient check of a freshly initialized model on [`gradcheck_fixture`].
pub fn gradcheck_run(config: &TrainConfig, tolerance: f64) -> Result<GradCheckReport> {
    config.validate()?;
    let (n_obj, n_pred) = (5, 3);
    let (dataset, supervision) = gradcheck_fixture(n_obj, n_pred, config.seed)?;
    let cook = cook_from_counts(&extract_counts(&dataset)?, CookMode::Indicator);
    let model = Model::new(config.model_config(n_obj, n_pred), config.seed)?;
    let scenes: Vec<&SceneAnnotation> = dataset.scenes.iter().collect();
    Ok(gradient_check(
        &model,
        &scenes,
        config.task_mode,
        config.use_cook.then_some(&cook),
        &supervision,
        tolerance,
    )?)
}
