//! Command-line definitions and subcommand drivers.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cooktf_core::cook::{extract_counts, merge_counts, merge_same_vocabulary, CookMode};
use cooktf_core::eval::{longtail_report, EvalConfig};
use cooktf_core::model::TaskMode;
use cooktf_core::mpnn::{Activation, Topology};
use cooktf_core::scene::Split;
use cooktf_core::synth::{generate_synthetic, SyntheticConfig};
use cooktf_core::tfidf::{SmoothingMode, TfMode};
use cooktf_core::train::{Trainer, TrainConfig};
use log::info;
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::io::{self, Checkpoint, CookFile, ResultsFile};
use crate::manifest::{manifest_path_for, Manifest};
use crate::pipeline::{self, ExperimentSetup};
use crate::plot;

#[derive(Debug, Parser)]
#[command(name = "cooktf", version, about = "Co-occurrence knowledge and TF-l-IDF scene graph experiments")]
pub struct Cli {
    /// Scene-level worker threads for prediction and independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic long-tail dataset.
    GenSynth(GenSynthArgs),
    /// Count class co-occurrence over a dataset and normalize it.
    ExtractCook(ExtractCookArgs),
    /// Merge two co-occurrence files at count level through a label mapping.
    MergeCook(MergeCookArgs),
    /// Train a model and write a checkpoint and a JSONL log.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a results file.
    Eval(EvalArgs),
    /// Train and evaluate one model per batch size.
    SweepBatch(SweepArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Per-partition mean-recall deltas between two results files.
    Longtail(LongtailArgs),
    /// Fixed-seed baseline / CooK + TF-l-IDF / frozen ε, γ comparison.
    Experiment(ExperimentArgs),
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',').map(|x| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}"))).collect()
}

fn parse_topology(s: &str) -> std::result::Result<Topology, String> {
    match s.split_once(':') {
        None if s.eq_ignore_ascii_case("complete") => Ok(Topology::Complete),
        Some((name, k)) if name.eq_ignore_ascii_case("k_nearest") => {
            k.trim().parse().map(Topology::KNearest).map_err(|e| format!("{k:?}: {e}"))
        }
        _ => Err("expected complete or k_nearest:K".into()),
    }
}

fn parse_boundaries(s: &str) -> std::result::Result<(f64, f64), String> {
    match parse_list::<f64>(s)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err("expected two comma-separated fractions".into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small model, short schedule.
    Desk,
    /// Full-size benchmark schedule.
    Paper,
}

/// Training settings: preset, then `--config` file keys, then flags.
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    /// JSON object overriding any training setting by name.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// predcls, sgcls or sggen.
    #[arg(long, value_parser = parse_serde::<TaskMode>)]
    pub mode: Option<TaskMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub object_dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Background pairs per ground-truth relation.
    #[arg(long)]
    pub negatives: Option<usize>,
    /// relu or tanh.
    #[arg(long, value_parser = parse_serde::<Activation>)]
    pub activation: Option<Activation>,
    /// complete, or k_nearest:K for the K nearest boxes by center.
    #[arg(long, value_parser = parse_topology)]
    pub topology: Option<Topology>,
    /// code (denominator n_c + 1 + γ) or paper (n_c + γ).
    #[arg(long, value_parser = parse_serde::<SmoothingMode>)]
    pub smoothing: Option<SmoothingMode>,
    /// ratio (n_cb / n_b) or count (n_cb).
    #[arg(long, value_parser = parse_serde::<TfMode>)]
    pub tf: Option<TfMode>,
    /// Plain attention messages without co-occurrence scaling.
    #[arg(long)]
    pub no_cook: bool,
    /// Skip the TF-l-IDF layer.
    #[arg(long)]
    pub no_tfidf: bool,
    /// Keep ε and γ at their initial values.
    #[arg(long)]
    pub freeze_idf: bool,
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mode = self.mode.unwrap_or_default();
        let base = match self.preset {
            Preset::Desk => TrainConfig::desk(mode),
            Preset::Paper => TrainConfig::paper(mode),
        };
        let mut c = match &self.config {
            None => base,
            Some(path) => {
                let mut v = serde_json::to_value(&base).expect("configs always serialize");
                let patch: serde_json::Value = io::read_json(path)?;
                let Some(obj) = patch.as_object() else {
                    return Err(Error::schema(path, "training config must be a JSON object"));
                };
                for (k, val) in obj {
                    if v.get(k).is_none() {
                        return Err(Error::schema(path, format!("unknown training setting {k:?}")));
                    }
                    v[k] = val.clone();
                }
                serde_json::from_value(v).map_err(|source| Error::Parse {
                    path: path.clone(),
                    source,
                })?
            }
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(if let Some(x) = self.$flag { c.$field = x; })*};
        }
        set!(mode => task_mode, seed => seed, lr => learning_rate, weight_decay => weight_decay,
            iterations => iterations, batch_size => batch_size, layers => n_layers, object_dim => object_dim,
            embed_dim => embed_dim, warmup_steps => warmup_steps, negatives => negatives_per_positive,
            activation => activation, topology => topology, smoothing => smoothing_mode, tf => tf_mode);
        if self.no_cook {
            c.use_cook = false;
        }
        if self.no_tfidf {
            c.use_tfidf = false;
        }
        if self.freeze_idf {
            c.tfidf_learnable = false;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Generator settings (JSON); defaults to the long-tail benchmark corpus.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_scenes: Option<usize>,
    /// train, val or test.
    #[arg(long, value_parser = parse_serde::<Split>)]
    pub split: Option<Split>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractCookArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// indicator (images) or instance (object counts).
    #[arg(long = "mode", value_parser = parse_serde::<CookMode>, default_value = "indicator")]
    pub cook_mode: CookMode,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MergeCookArgs {
    /// Base file; the result uses its vocabulary.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Label mapping from b's classes to a's. Without it, both files must
    /// share one vocabulary and classes map to themselves.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Normalization of the merged counts; defaults to a's.
    #[arg(long = "mode", value_parser = parse_serde::<CookMode>)]
    pub cook_mode: Option<CookMode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub cook: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory for checkpoint.json, log.jsonl and manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalFlags {
    /// Task to evaluate; defaults to the training task.
    #[arg(long, value_parser = parse_serde::<TaskMode>)]
    pub task: Option<TaskMode>,
    #[arg(long = "K", value_delimiter = ',', default_value = "20,50,100")]
    pub ks: Vec<usize>,
    /// Keep only the top predicate per ordered pair.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub graph_constraint: bool,
    #[arg(long, default_value_t = cooktf_core::eval::DEFAULT_IOU)]
    pub iou: f64,
}

impl EvalFlags {
    fn config(&self, default_task: TaskMode) -> EvalConfig {
        EvalConfig {
            mode: self.task.unwrap_or(default_task),
            ks: self.ks.clone(),
            graph_constraint: self.graph_constraint,
            iou_threshold: self.iou,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Required when the checkpoint was trained with co-occurrence scaling.
    #[arg(long)]
    pub cook: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Training dataset whose predicate frequencies define head/body/tail.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long, value_parser = parse_boundaries, default_value = "0.5,0.85")]
    pub boundaries: (f64, f64),
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub cook: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,12")]
    pub batch_sizes: Vec<usize>,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Output directory for sweep.json, sweep.svg and manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long, default_value_t = cooktf_core::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LongtailArgs {
    /// Reference results file.
    #[arg(long)]
    pub a: PathBuf,
    /// Compared results file; deltas are b − a.
    #[arg(long)]
    pub b: PathBuf,
    /// Training dataset defining the partition; defaults to the one stored in a.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long, value_parser = parse_boundaries, default_value = "0.5,0.85")]
    pub boundaries: (f64, f64),
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write an SVG bar chart of the deltas.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub train_scenes: Option<usize>,
    #[arg(long)]
    pub test_scenes: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn args_vec() -> Vec<String> {
    std::env::args().skip(1).collect()
}

fn load_cook_opt(path: Option<&Path>, vocab: Option<&str>, manifest: &mut Manifest) -> Result<Option<CookFile>> {
    path.map(|p| {
        manifest.input(p)?;
        io::load_cook(p, vocab)
    })
    .transpose()
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let jobs = cli.jobs;
    match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::ExtractCook(a) => extract_cook(a),
        Command::MergeCook(a) => merge_cook(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a, jobs),
        Command::SweepBatch(a) => sweep(a, jobs),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Longtail(a) => longtail(a),
        Command::Experiment(a) => experiment(a, jobs),
    }
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => io::read_json(p)?,
        None => SyntheticConfig::longtail_benchmark(2000, 2024, Split::Train),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(n) = a.n_scenes {
        config.n_scenes = n;
    }
    if let Some(s) = a.split {
        config.split = s;
    }
    config.validate()?;
    let out = io::output_path(a.out.as_deref(), "dataset.json");
    let mut m = Manifest::new("gen-synth", args_vec()).config(&config).seeds([config.seed]);
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    let dataset = generate_synthetic(&config)?;
    io::save_dataset(&dataset, &out)?;
    let echo = out.with_extension("config.json");
    io::write_json(&echo, &config)?;
    m.output(&out)?;
    m.output(&echo)?;
    m.write(&manifest_path_for(&out))?;
    println!("wrote {} scenes to {}", dataset.scenes.len(), out.display());
    Ok(())
}

fn extract_cook(a: ExtractCookArgs) -> Result<()> {
    let mut m = Manifest::new("extract-cook", args_vec()).config(&a.cook_mode);
    m.input(&a.dataset)?;
    let dataset = io::load_dataset(&a.dataset)?;
    let mut counts = extract_counts(&dataset)?;
    counts.provenance = vec![format!("{} ({})", a.dataset.display(), io::sha256_file(&a.dataset)?)];
    let file = CookFile::from_counts(counts, a.cook_mode);
    let out = io::output_path(a.out.as_deref(), "cook.json");
    io::save_cook(&file, &out)?;
    m.output(&out)?;
    m.write(&manifest_path_for(&out))?;
    let unobserved = file.matrix.observed.iter().filter(|&&o| !o).count();
    println!(
        "wrote {}x{} {} matrix from {} images to {} ({unobserved} unobserved classes)",
        file.counts.n_classes,
        file.counts.n_classes,
        a.cook_mode.as_str(),
        file.counts.n_images,
        out.display()
    );
    Ok(())
}

fn merge_cook(a: MergeCookArgs) -> Result<()> {
    let mut m = Manifest::new("merge-cook", args_vec());
    m.input(&a.a)?;
    m.input(&a.b)?;
    let base = io::load_cook(&a.a, None)?;
    let other = io::load_cook(&a.b, None)?;
    let mode = a.cook_mode.unwrap_or(base.matrix.mode);
    let (merged, unmapped) = match &a.mapping {
        Some(p) => {
            m.input(p)?;
            let mp = io::load_mapping(p)?;
            let check = |names: &[String], counts: &cooktf_core::cook::CoocCounts, side: &str| {
                let fp = cooktf_core::scene::names_fingerprint(names);
                if fp != counts.vocab_fingerprint {
                    return Err(Error::Core(cooktf_core::Error::Vocabulary(format!(
                        "mapping {side} vocabulary {fp} does not match the co-occurrence file's {}",
                        counts.vocab_fingerprint
                    ))));
                }
                Ok(())
            };
            check(&mp.source_names, &other.counts, "source")?;
            check(&mp.target_names, &base.counts, "target")?;
            let unmapped: Vec<String> = mp.unmapped().into_iter().map(|s| mp.source_names[s].clone()).collect();
            (merge_counts(&base.counts, &other.counts, &mp)?, unmapped)
        }
        None => {
            if base.counts.vocab_fingerprint != other.counts.vocab_fingerprint {
                return Err(Error::Usage(
                    "files use different vocabularies; pass --mapping to relate them".into(),
                ));
            }
            (merge_same_vocabulary(&base.counts, &other.counts)?, Vec::new())
        }
    };
    let file = CookFile::from_counts(merged, mode);
    let out = io::output_path(a.out.as_deref(), "cook_merged.json");
    io::save_cook(&file, &out)?;
    let summary = serde_json::json!({
        "mode": mode,
        "n_images": file.counts.n_images,
        "unmapped_source_classes": unmapped,
    });
    m.config = summary.clone();
    m.output(&out)?;
    m.write(&manifest_path_for(&out))?;
    println!("wrote merged matrix over {} images to {}", file.counts.n_images, out.display());
    if !unmapped.is_empty() {
        println!("unmapped source classes: {}", summary["unmapped_source_classes"]);
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = a.flags.resolve()?;
    let mut m = Manifest::new("train", args_vec()).config(&config).seeds([config.seed]);
    m.input(&a.dataset)?;
    if let Some(p) = &a.flags.config {
        m.input(p)?;
    }
    let dataset = io::load_dataset(&a.dataset)?;
    let vocab_fp = dataset.vocabulary.object_fingerprint();
    let cook = load_cook_opt(a.cook.as_deref(), Some(&vocab_fp), &mut m)?;
    if config.use_cook && cook.is_none() {
        return Err(Error::Usage("co-occurrence scaling is on; pass --cook or --no-cook".into()));
    }
    let matrix = cook.as_ref().map(|c| &c.matrix).filter(|_| config.use_cook);
    let mut trainer = Trainer::new(&dataset, matrix, config.clone())?;
    let every = (config.iterations / 20).max(1);
    let log = trainer.run(|r| {
        if r.step % every == 0 {
            info!("step {} lr {:.5} L {:.4} (obj {:.4}, rel {:.4})", r.step, r.lr, r.l, r.l_obj, r.l_rel);
        }
    })?;
    let dir = io::output_path(a.out.as_deref(), "run");
    let ckpt_path = dir.join("checkpoint.json");
    let log_path = dir.join("log.jsonl");
    let step = trainer.step;
    let ckpt = Checkpoint::new(config, trainer.model, step, &dataset.vocabulary, matrix);
    io::save_checkpoint(&ckpt, &ckpt_path)?;
    io::write_text(&log_path, &io::log_to_jsonl(&log))?;
    m.output(&ckpt_path)?;
    m.output(&log_path)?;
    m.write(&dir.join("manifest.json"))?;
    match log.last() {
        Some(r) => println!("trained {step} steps, final loss {:.4}; checkpoint {}", r.l, ckpt_path.display()),
        None => println!("no training steps requested; checkpoint {}", ckpt_path.display()),
    }
    Ok(())
}

fn eval(a: EvalArgs, jobs: usize) -> Result<()> {
    let mut m = Manifest::new("eval", args_vec());
    m.input(&a.checkpoint)?;
    m.input(&a.dataset)?;
    let ckpt = io::load_checkpoint(&a.checkpoint)?;
    let dataset = io::load_dataset(&a.dataset)?;
    ckpt.check_vocabulary(&dataset.vocabulary)?;
    let cook = load_cook_opt(a.cook.as_deref(), Some(&ckpt.vocab_fingerprint), &mut m)?;
    let matrix = ckpt.resolve_cook(cook.as_ref().map(|c| &c.matrix))?;
    let cfg = a.eval.config(ckpt.config.task_mode);
    m.config = serde_json::json!({ "eval": cfg, "batch_size": ckpt.config.batch_size, "boundaries": a.boundaries });
    let partition = match &a.partition {
        Some(p) => {
            m.input(p)?;
            let train = io::load_dataset(p)?;
            if train.vocabulary != dataset.vocabulary {
                return Err(Error::Core(cooktf_core::Error::Vocabulary(
                    "partition dataset vocabulary differs from the evaluation dataset".into(),
                )));
            }
            Some(pipeline::frequency_partition(&train, a.boundaries)?)
        }
        None => None,
    };
    let result = pipeline::evaluate_model(&ckpt.model, &dataset, matrix, &cfg, ckpt.config.batch_size, jobs)?;
    let file = ResultsFile::new(&result, &dataset.vocabulary, dataset.scenes.len(), partition.as_ref())?;
    let out = io::output_path(a.out.as_deref(), "results.json");
    io::write_json(&out, &file)?;
    m.output(&out)?;
    m.write(&manifest_path_for(&out))?;
    for k in &file.ks {
        println!("{} R@{k} {} mR@{k} {}", cfg.mode.as_str(), fmt_opt(file.recall[k]), fmt_opt(file.mean_recall[k]));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn sweep(a: SweepArgs, jobs: usize) -> Result<()> {
    let config = a.flags.resolve()?;
    let mut m = Manifest::new("sweep-batch", args_vec()).seeds([config.seed]);
    m.input(&a.dataset)?;
    m.input(&a.test)?;
    let train_set = io::load_dataset(&a.dataset)?;
    let test_set = io::load_dataset(&a.test)?;
    if train_set.vocabulary != test_set.vocabulary {
        return Err(Error::Core(cooktf_core::Error::Vocabulary(
            "training and test datasets use different vocabularies".into(),
        )));
    }
    let cook = load_cook_opt(a.cook.as_deref(), Some(&train_set.vocabulary.object_fingerprint()), &mut m)?;
    if config.use_cook && cook.is_none() {
        return Err(Error::Usage("co-occurrence scaling is on; pass --cook or --no-cook".into()));
    }
    let cfg = a.eval.config(config.task_mode);
    m.config = serde_json::json!({ "train": config, "eval": cfg, "batch_sizes": a.batch_sizes });
    let rows = pipeline::sweep_batch(&train_set, &test_set, cook.as_ref().map(|c| &c.matrix), &config, &cfg, &a.batch_sizes, jobs)?;
    let dir = io::output_path(a.out.as_deref(), "sweep");
    let table = dir.join("sweep.json");
    let svg = dir.join("sweep.svg");
    io::write_json(&table, &rows)?;
    io::write_text(&svg, &plot::sweep_svg(&rows))?;
    m.output(&table)?;
    m.output(&svg)?;
    m.write(&dir.join("manifest.json"))?;
    for r in &rows {
        let cells: Vec<String> = r.mean_recall.iter().map(|(k, v)| format!("mR@{k} {}", fmt_opt(*v))).collect();
        println!("B={:<3} {}", r.batch_size, cells.join("  "));
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut flags = a.flags.clone();
    flags.embed_dim = flags.embed_dim.or(Some(3));
    flags.object_dim = flags.object_dim.or(Some(4));
    let config = flags.resolve()?;
    let report = pipeline::gradcheck_run(&config, a.tolerance)?;
    let out = io::output_path(a.out.as_deref(), "gradcheck.json");
    io::write_json(&out, &report)?;
    let mut m = Manifest::new("gradcheck", args_vec()).config(&config).seeds([config.seed]);
    m.output(&out)?;
    m.write(&manifest_path_for(&out))?;
    for g in &report.groups {
        let status = if g.passed { "ok" } else { "FAIL" };
        if g.frozen {
            println!("{status:4} {:<12} frozen, max |grad| {:.3e}", g.name, g.max_abs_gradient);
        } else {
            println!("{status:4} {:<12} rel {:.3e} abs {:.3e}", g.name, g.max_rel_error, g.max_abs_error);
        }
    }
    if !report.passed {
        return Err(Error::Core(cooktf_core::Error::NonFinite(
            "gradient check failed (see report)".into(),
        )));
    }
    Ok(())
}

fn longtail(a: LongtailArgs) -> Result<()> {
    let mut m = Manifest::new("longtail", args_vec());
    m.input(&a.a)?;
    m.input(&a.b)?;
    let ra: ResultsFile = io::read_json(&a.a)?;
    let rb: ResultsFile = io::read_json(&a.b)?;
    if ra.predicates != rb.predicates {
        return Err(Error::Core(cooktf_core::Error::Vocabulary(
            "results files use different predicate vocabularies".into(),
        )));
    }
    let partition = match (&a.partition, &ra.partition_report) {
        (Some(p), _) => {
            m.input(p)?;
            pipeline::frequency_partition(&io::load_dataset(p)?, a.boundaries)?
        }
        (None, Some(r)) => r.partition(),
        (None, None) => {
            return Err(Error::Usage(
                "results file a has no partition; pass --partition <training dataset>".into(),
            ))
        }
    };
    let report = longtail_report(&ra.to_result(), &rb.to_result(), &partition)?;
    let out = io::output_path(a.out.as_deref(), "longtail.json");
    io::write_json(&out, &report)?;
    m.output(&out)?;
    if let Some(p) = &a.plot {
        io::write_text(p, &plot::longtail_svg(&report))?;
        m.output(p)?;
    }
    m.write(&manifest_path_for(&out))?;
    for (k, d) in &report.delta {
        println!("mR@{k} delta head {} body {} tail {}", fmt_opt(d[0]), fmt_opt(d[1]), fmt_opt(d[2]));
    }
    Ok(())
}

fn experiment(a: ExperimentArgs, jobs: usize) -> Result<()> {
    let mut setup = ExperimentSetup {
        seeds: a.seeds.clone(),
        ..ExperimentSetup::default()
    };
    if let Some(n) = a.iterations {
        setup.train.iterations = n;
    }
    if let Some(n) = a.train_scenes {
        setup.train_scenes = n;
    }
    if let Some(n) = a.test_scenes {
        setup.test_scenes = n;
    }
    let report = pipeline::longtail_experiment(&setup, jobs)?;
    let dir = io::output_path(a.out.as_deref(), "experiment");
    let path = dir.join("experiment.json");
    io::write_json(&path, &report)?;
    let mut m = Manifest::new("experiment", args_vec()).config(&setup).seeds(setup.seeds.iter().copied());
    m.output(&path)?;
    m.write(&dir.join("manifest.json"))?;
    for r in &report.runs {
        println!(
            "seed {} {:<8?} tail mR@{k} {} mR@{k} {}",
            r.seed,
            r.arm,
            fmt_opt(r.tail_mean_recall),
            fmt_opt(r.mean_recall),
            k = setup.k
        );
    }
    println!(
        "tail wins {}/{}; longtail direction {}; ablation direction {}",
        report.tail_wins,
        setup.seeds.len(),
        report.longtail_direction,
        report.ablation_direction
    );
    Ok(())
}
