//! End-to-end acceptance run: one PASS/FAIL line per criterion.
#![allow(clippy::needless_range_loop)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use common::oracle;
use cooktf::cli::{self, Cli};
use cooktf::pipeline::{gradcheck_run, longtail_experiment, sweep_batch, Arm, ExperimentSetup};
use cooktf_core::cook::{cook_from_counts, extract_counts, CookMatrix, CookMode};
use cooktf_core::eval::{evaluate, mean_recall_at_k, rank_triplets, recall_at_k, score_wtd, EvalConfig, SceneOutput, WeightedScoreInputs};
use cooktf_core::model::TaskMode;
use cooktf_core::mpnn::{attention, attention_from_logits, node_update, Activation};
use cooktf_core::scene::{RelationTriplet, SceneAnnotation, Split};
use cooktf_core::synth::{generate_synthetic, SyntheticConfig};
use cooktf_core::tfidf::{classic_tfidf, node_scales, SmoothingMode, TfIdfParams, TfMode};
use cooktf_core::train::TrainConfig;
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn cook_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut count_mismatches = 0;
    for seed in 0..100 {
        let ds = common::random_dataset(&mut common::rng(seed), 10, 6, 6, 3);
        let (presence, pair, instances) = oracle::brute_counts(&ds);
        let counts = extract_counts(&ds).unwrap();
        if counts.presence != presence || counts.pair_presence != pair || counts.instances != instances {
            count_mismatches += 1;
        }
        for (mode, denom) in [(CookMode::Indicator, &presence), (CookMode::Instance, &instances)] {
            let m = cook_from_counts(&counts, mode);
            for i in 0..presence.len() {
                for j in 0..presence.len() {
                    let want = if denom[i] == 0 { 0.0 } else { pair[i][j] as f64 / denom[i] as f64 };
                    worst = worst.max((m.values[i][j] - want).abs());
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        count_mismatches == 0 && worst <= 1e-12 && t < Duration::from_secs(5),
        format!("100 corpora, {count_mismatches} count mismatches, max matrix error {worst:.1e}, {:.2}s", t.as_secs_f64()),
    )
}

fn weighted_score() -> Outcome {
    let full = score_wtd(WeightedScoreInputs { r50: 77.0, wmap_rel: 36.6, wmap_phr: 37.6 });
    let het = score_wtd(WeightedScoreInputs { r50: 76.8, wmap_rel: 34.6, wmap_phr: 35.5 });
    outcome(
        (full - 45.08).abs() < 1e-9 && (full - 45.1).abs() <= 0.15 && (het - 43.3).abs() <= 0.15,
        format!("{full:.2} vs 45.1, {het:.2} vs 43.3"),
    )
}

fn unit_cook() -> Outcome {
    let mut rng = common::rng(3);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let n = rng.random_range(1..7);
        let d = rng.random_range(1..5);
        let act = if i % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let batch: Vec<_> = (0..2).map(|_| oracle::random_graph(&mut rng, n, d, 4, false)).collect();
        let layer = oracle::random_layer(&mut rng, d, act);
        let plain = node_update(&batch, &layer, None).unwrap();
        let ones = node_update(&batch, &layer, Some(&CookMatrix::ones(4))).unwrap();
        for (a, b) in plain.iter().zip(&ones) {
            worst = worst.max(max_abs(&a.features.data, &b.features.data));
        }
        let direct = oracle::reference_update(&batch[0], &layer, |_, _| 1.0);
        worst = worst.max(max_abs(&plain[0].features.data, &direct.data));
    }
    outcome(worst <= 1e-12, format!("50 fixtures, max abs difference {worst:.1e}"))
}

fn attention_pairs() -> Outcome {
    let mut rng = common::rng(4);
    let mut worst = 0.0f64;
    let mut finite = true;
    for i in 0..1000 {
        let (a, b) = if i % 4 == 0 {
            // Extreme logits straight into the stable form.
            let u: f64 = if i % 8 == 0 { 50.0 } else { rng.random_range(-50.0..50.0) };
            (attention_from_logits(u, -u), attention_from_logits(-u, u))
        } else {
            let d = rng.random_range(1..8);
            let scale = rng.random_range(0.0..60.0);
            let v = |rng: &mut rand_chacha::ChaCha8Rng, s: f64| -> Vec<f64> { (0..d).map(|_| s * rng.random_range(-1.0..1.0)).collect() };
            let (zu, zv, w) = (v(&mut rng, 1.0), v(&mut rng, 1.0), v(&mut rng, scale));
            (attention(&zu, &zv, &w).unwrap(), attention(&zv, &zu, &w).unwrap())
        };
        finite &= a.is_finite() && b.is_finite();
        worst = worst.max((a + b - 1.0).abs());
    }
    outcome(finite && worst <= 1e-12, format!("1000 pairs, max |a_uv + a_vu - 1| {worst:.1e}"))
}

fn gradient_soundness() -> Outcome {
    let start = Instant::now();
    let mut config = TrainConfig::desk(TaskMode::PredCls);
    config.embed_dim = 3;
    config.object_dim = 4;
    let report = gradcheck_run(&config, 1e-4).unwrap();
    let t = start.elapsed();
    let worst = report.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    let probed = report.groups.iter().all(|g| !g.frozen);
    let names: Vec<&str> = report.groups.iter().map(|g| g.name.as_str()).collect();
    outcome(
        probed && worst < 1e-4 && t < Duration::from_secs(60),
        format!("{} groups [{}], max relative error {worst:.1e}, {:.2}s", names.len(), names.join(", "), t.as_secs_f64()),
    )
}

fn tfidf_reduction() -> Outcome {
    let mut rng = common::rng(6);
    let mut mismatches = 0;
    let mut nodes = 0;
    for _ in 0..200 {
        let b = rng.random_range(1..8);
        let labels: Vec<Vec<usize>> = (0..b)
            .map(|_| (0..rng.random_range(1..7)).map(|_| rng.random_range(0..5)).collect())
            .collect();
        let eps = rng.random_range(-0.4..2.0);
        let gam = rng.random_range(-0.9..2.0);
        let paper = node_scales(&labels, &TfIdfParams::new(0.0, 0.0, SmoothingMode::Paper)).unwrap();
        let code = node_scales(&labels, &TfIdfParams::new(eps, gam, SmoothingMode::Code)).unwrap();
        let mut count_params = TfIdfParams::new(eps, gam, SmoothingMode::Code);
        count_params.tf_mode = TfMode::Count;
        let count = node_scales(&labels, &count_params).unwrap();
        for (i, img) in labels.iter().enumerate() {
            for (k, &c) in img.iter().enumerate() {
                nodes += 1;
                let n_cb = img.iter().filter(|&&x| x == c).count();
                let n_c = labels.iter().filter(|l| l.contains(&c)).count();
                let idf = ((b as f64 + eps) / (n_c as f64 + 1.0 + gam)).ln();
                let classic = classic_tfidf(n_cb, img.len(), b, n_c).unwrap();
                let direct = (n_cb as f64 / img.len() as f64) * (b as f64 / n_c as f64).ln();
                if paper[i][k].scale != classic
                    || classic != direct
                    || code[i][k].scale != (n_cb as f64 / img.len() as f64) * idf
                    || count[i][k].scale != n_cb as f64 * idf
                {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("200 batches, {nodes} nodes, {mismatches} mismatches"))
}

fn metric_oracle() -> Outcome {
    const N_CLASSES: usize = 4;
    const N_PRED: usize = 3;
    let mut rng = common::rng(7);
    let scenes: Vec<SceneAnnotation> = (0..200)
        .map(|_| {
            let n = rng.random_range(0..=5);
            common::random_scene(&mut rng, n, N_CLASSES, N_PRED, 0.3)
        })
        .collect();
    let outputs: Vec<SceneOutput> = scenes.iter().map(|s| oracle::random_output(&mut rng, s, N_CLASSES, N_PRED)).collect();
    let mut mismatches = 0;
    let mut checks = 0;
    for mode in [TaskMode::PredCls, TaskMode::SgCls, TaskMode::SgGen] {
        for gc in [true, false] {
            for k in [1, 5, 20, 50] {
                let mut all_hits = Vec::new();
                for (out, gt) in outputs.iter().zip(&scenes) {
                    let ranked = rank_triplets(out, mode, gc);
                    let brute = oracle::brute_rank(out, mode, gc);
                    let same_rank = ranked.len() == brute.len()
                        && ranked
                            .iter()
                            .zip(&brute)
                            .all(|(r, b)| (r.score, r.subject_idx, r.object_idx, r.predicate_id, r.subject_class, r.object_class) == *b);
                    let hits = oracle::brute_hits(&brute, out, gt, k, mode);
                    let rec = recall_at_k(&ranked, gt, k, mode, 0.5).unwrap();
                    checks += 2;
                    mismatches += !same_rank as usize + (rec.hits != hits) as usize;
                    all_hits.push(hits);
                }
                let pairs: Vec<(&[bool], &[RelationTriplet])> =
                    all_hits.iter().zip(&scenes).map(|(h, g)| (h.as_slice(), g.relations.as_slice())).collect();
                let want = oracle::brute_mean_recall(&all_hits, &scenes, N_PRED);
                let mut cfg = EvalConfig::new(mode);
                cfg.graph_constraint = gc;
                cfg.ks = vec![k];
                let res = evaluate(&outputs, &scenes, N_PRED, &cfg).unwrap();
                checks += 2;
                mismatches += (mean_recall_at_k(&pairs, N_PRED).unwrap() != want) as usize;
                mismatches += (res.mean_recall[&k] != want.0) as usize;
            }
        }
    }
    outcome(mismatches == 0, format!("200 scenes, 3 tasks x 2 constraints x 4 K, {checks} checks, {mismatches} mismatches"))
}

fn fmt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn longtail() -> (Outcome, Outcome) {
    let start = Instant::now();
    let setup = ExperimentSetup::default();
    let r = longtail_experiment(&setup, 1).unwrap();
    let t = start.elapsed();
    let per_seed: Vec<String> = setup
        .seeds
        .iter()
        .map(|&s| {
            let b = r.run(Arm::Baseline, s).unwrap().tail_mean_recall;
            let f = r.run(Arm::Full, s).unwrap().tail_mean_recall;
            format!("seed {s}: {} vs {}", fmt(f), fmt(b))
        })
        .collect();
    let c8 = outcome(
        r.longtail_direction && t < Duration::from_secs(15 * 60),
        format!(
            "tail mR@{} full vs baseline [{}], wins {}/{}, mean {:.4} vs {:.4}, {:.0}s",
            setup.k,
            per_seed.join("; "),
            r.tail_wins,
            setup.seeds.len(),
            r.mean_tail[&Arm::Full],
            r.mean_tail[&Arm::Baseline],
            t.as_secs_f64()
        ),
    );
    let c9 = outcome(
        r.ablation_direction,
        format!("mean mR@{} learnable {:.6} vs frozen {:.6}", setup.k, r.mean_mr[&Arm::Full], r.mean_mr[&Arm::Frozen]),
    );
    (c8, c9)
}

fn run_cli(dir: &Path, args: &[&str]) {
    let mut argv = vec!["cooktf", "--jobs", "1"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(&argv).unwrap();
    std::env::set_current_dir(dir).unwrap();
    cli::run(cli).unwrap();
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let files = ["train.json", "test.json", "cook.json", "run/checkpoint.json", "run/log.jsonl", "results.json"];
    for name in ["a", "b"] {
        let d = root.path().join(name);
        std::fs::create_dir_all(&d).unwrap();
        run_cli(&d, &["gen-synth", "--n-scenes", "200", "--seed", "11", "--out", "train.json"]);
        run_cli(&d, &["gen-synth", "--n-scenes", "60", "--seed", "12", "--split", "test", "--out", "test.json"]);
        run_cli(&d, &["extract-cook", "--dataset", "train.json", "--out", "cook.json"]);
        run_cli(&d, &["train", "--dataset", "train.json", "--cook", "cook.json", "--iterations", "150", "--out", "run"]);
        run_cli(
            &d,
            &["eval", "--checkpoint", "run/checkpoint.json", "--dataset", "test.json", "--cook", "cook.json", "--partition", "train.json", "--out", "results.json"],
        );
    }
    std::env::set_current_dir(root.path()).unwrap();
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(Path::new("a").join(f)).unwrap() != std::fs::read(Path::new("b").join(f)).unwrap())
        .collect();
    std::env::set_current_dir(env!("CARGO_MANIFEST_DIR")).unwrap();
    outcome(
        differing.is_empty(),
        format!("{} files compared across two serial runs, differing: {:?}", files.len(), differing),
    )
}

fn sweep() -> Outcome {
    let train = generate_synthetic(&SyntheticConfig::longtail_benchmark(2000, 2024, Split::Train)).unwrap();
    let test = generate_synthetic(&SyntheticConfig::longtail_benchmark(400, 2025, Split::Test)).unwrap();
    let cook = cook_from_counts(&extract_counts(&train).unwrap(), CookMode::Indicator);
    let mut config = TrainConfig::desk(TaskMode::PredCls);
    config.iterations = 500;
    let sizes = [2, 4, 8, 12];
    let rows = sweep_batch(&train, &test, Some(&cook), &config, &EvalConfig::new(TaskMode::PredCls), &sizes, 1).unwrap();
    let complete = rows.len() == sizes.len()
        && rows.iter().zip(sizes).all(|(r, b)| r.batch_size == b && r.mean_recall.values().all(|v| v.is_some()));
    let cells: Vec<String> = rows
        .iter()
        .map(|r| {
            let mr: Vec<String> = r.mean_recall.iter().map(|(k, v)| format!("mR@{k} {}", fmt(*v))).collect();
            format!("B={} {}", r.batch_size, mr.join(" "))
        })
        .collect();
    outcome(complete, cells.join(" | "))
}

fn main() {
    let (c8, c9) = longtail();
    let results = [
        ("1 co-occurrence oracle", cook_oracle(), true),
        ("2 weighted score", weighted_score(), true),
        ("3 unit co-occurrence equivalence", unit_cook(), true),
        ("4 attention complementarity", attention_pairs(), true),
        ("5 gradient soundness", gradient_soundness(), true),
        ("6 TF-IDF reduction", tfidf_reduction(), true),
        ("7 metric oracle", metric_oracle(), true),
        ("8 long-tail direction", c8, true),
        ("9 ablation direction (reported)", c9, false),
        ("10 determinism", determinism(), true),
        ("11 batch-size sweep", sweep(), true),
    ];
    let mut failed = 0;
    for (name, o, required) in &results {
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed && *required {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} required acceptance criteria failed");
        std::process::exit(1);
    }
}
