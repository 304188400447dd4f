//! Deterministic minibatch SGD with weight decay and a warmup/multi-step
//! learning-rate schedule.
//!
//! Every random choice is derived from `(seed, position)`, so a run resumed
//! from a checkpoint at step `k` continues exactly as an uninterrupted run.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cook::CookMatrix;
use crate::error::{Error, Result};
use crate::model::{LossBreakdown, Model, ModelConfig, ModelParams, PairTarget, TaskMode};
use crate::mpnn::{Activation, Topology};
use crate::rng::{self, stream};
use crate::scene::{Dataset, SceneAnnotation, Split};
use crate::tfidf::{SmoothingMode, TfMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub n_layers: usize,
    pub object_dim: usize,
    pub embed_dim: usize,
    pub warmup_steps: usize,
    /// Learning-rate multiplier at step 0; rises linearly to 1 at `warmup_steps`.
    pub warmup_factor: f64,
    /// Decay points as fractions of `iterations`.
    pub milestones: Vec<f64>,
    pub decay_factor: f64,
    pub seed: u64,
    pub task_mode: TaskMode,
    pub use_cook: bool,
    pub use_tfidf: bool,
    pub tfidf_learnable: bool,
    /// Background pairs sampled per ground-truth relation.
    pub negatives_per_positive: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub smoothing_mode: SmoothingMode,
    #[serde(default)]
    pub tf_mode: TfMode,
}

impl TrainConfig {
    /// Full-size benchmark settings.
    pub fn paper(mode: TaskMode) -> Self {
        TrainConfig {
            learning_rate: 0.008,
            weight_decay: 5e-5,
            iterations: 49_500,
            batch_size: if mode == TaskMode::PredCls { 12 } else { 9 },
            n_layers: 4,
            object_dim: 128,
            embed_dim: 128,
            warmup_steps: 500,
            warmup_factor: 0.1,
            milestones: alloc::vec![0.6, 0.85],
            decay_factor: 0.1,
            seed: 1,
            task_mode: mode,
            use_cook: true,
            use_tfidf: true,
            tfidf_learnable: true,
            negatives_per_positive: 3,
            activation: Activation::Relu,
            topology: Topology::Complete,
            smoothing_mode: SmoothingMode::Code,
            tf_mode: TfMode::Ratio,
        }
    }

    /// Small model and short schedule for CPU experiments on synthetic data.
    pub fn desk(mode: TaskMode) -> Self {
        TrainConfig {
            learning_rate: 0.05,
            iterations: 1500,
            n_layers: 2,
            object_dim: 32,
            embed_dim: 16,
            warmup_steps: 50,
            ..Self::paper(mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and >= 0");
        }
        if self.batch_size == 0 || self.n_layers == 0 || self.object_dim == 0 || self.embed_dim == 0 {
            return bad("batch_size, n_layers, object_dim and embed_dim must be positive");
        }
        if !(self.warmup_factor > 0.0 && self.warmup_factor <= 1.0) {
            return bad("warmup_factor must lie in (0, 1]");
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) || self.milestones.windows(2).any(|w| w[0] > w[1]) {
            return bad("milestones must be nondecreasing fractions in [0, 1]");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return bad("decay_factor must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, n_object_classes: usize, n_predicates: usize) -> ModelConfig {
        ModelConfig {
            n_object_classes,
            n_predicates,
            embed_dim: self.embed_dim,
            hidden_dim: self.object_dim,
            n_layers: self.n_layers,
            activation: self.activation,
            topology: self.topology,
            use_tfidf: self.use_tfidf,
            tfidf_learnable: self.tfidf_learnable,
            smoothing_mode: self.smoothing_mode,
            tf_mode: self.tf_mode,
        }
    }

    pub fn milestone_steps(&self) -> Vec<usize> {
        self.milestones.iter().map(|f| (f * self.iterations as f64) as usize).collect()
    }

    /// Learning rate used for the update at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = if step < self.warmup_steps {
            let a = step as f64 / self.warmup_steps as f64;
            self.warmup_factor * (1.0 - a) + a
        } else {
            1.0
        };
        let passed = self.milestone_steps().iter().filter(|&&m| step >= m).count();
        let mut decay = 1.0;
        for _ in 0..passed {
            decay *= self.decay_factor;
        }
        self.learning_rate * warm * decay
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub lr: f64,
    #[serde(rename = "L_obj")]
    pub l_obj: f64,
    #[serde(rename = "L_rel")]
    pub l_rel: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

/// `p -= lr · (g + wd · p)` for every group; TF-l-IDF parameters are left
/// alone when they are frozen or unused, and projected back into their
/// domain otherwise.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lr: f64, weight_decay: f64, update_tfidf: bool) {
    let g_groups = grads.groups();
    for (pg, gg) in params.groups_mut().into_iter().zip(g_groups) {
        if !update_tfidf && (pg.name == "epsilon" || pg.name == "gamma") {
            continue;
        }
        for (ps, gs) in pg.slices.into_iter().zip(gg.slices) {
            for (p, g) in ps.iter_mut().zip(gs) {
                *p -= lr * (g + weight_decay * *p);
            }
        }
    }
    if update_tfidf {
        params.tfidf.project();
    }
}

/// Ground-truth pairs plus up to `ratio × |GT|` background pairs drawn
/// without replacement from the remaining ordered pairs.
pub fn supervision_for(scene: &SceneAnnotation, background: usize, ratio: usize, rng: &mut rng::Rng) -> Vec<PairTarget> {
    let mut out: Vec<PairTarget> =
        scene.relations.iter().map(|r| (r.subject_idx, r.object_idx, r.predicate_id)).collect();
    let taken: BTreeSet<(usize, usize)> = scene.relations.iter().map(|r| (r.subject_idx, r.object_idx)).collect();
    let n = scene.objects.len();
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
        .filter(|p| !taken.contains(p))
        .collect();
    let k = (ratio * scene.relations.len()).min(candidates.len());
    let (chosen, _) = candidates.partial_shuffle(rng, k);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    out.extend(chosen.into_iter().map(|(u, v)| (u, v, background)));
    out
}

pub struct Trainer<'a> {
    dataset: &'a Dataset,
    cook: Option<&'a CookMatrix>,
    config: TrainConfig,
    pub model: Model,
    pub step: usize,
    /// Scenes with at least one object.
    usable: Vec<usize>,
    order: Option<(usize, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, cook: Option<&'a CookMatrix>, config: TrainConfig) -> Result<Self> {
        let mc = config.model_config(dataset.vocabulary.n_objects(), dataset.vocabulary.n_predicates());
        let model = Model::new(mc, config.seed)?;
        Self::resume(dataset, cook, config, model, 0)
    }

    /// Continues from `model` as it stood after `step` updates.
    pub fn resume(dataset: &'a Dataset, cook: Option<&'a CookMatrix>, config: TrainConfig, model: Model, step: usize) -> Result<Self> {
        config.validate()?;
        if dataset.split != Split::Train {
            return Err(Error::Config(format!("training needs a train split, got {}", dataset.split.as_str())));
        }
        let cook = match (config.use_cook, cook) {
            (true, None) => return Err(Error::Config("use_cook is set but no co-occurrence matrix was given".into())),
            (true, Some(m)) => {
                if m.n_classes() != dataset.vocabulary.n_objects() {
                    return Err(Error::Vocabulary(format!(
                        "co-occurrence matrix has {} classes, dataset has {}",
                        m.n_classes(),
                        dataset.vocabulary.n_objects()
                    )));
                }
                Some(m)
            }
            (false, _) => None,
        };
        if model.config != config.model_config(dataset.vocabulary.n_objects(), dataset.vocabulary.n_predicates()) {
            return Err(Error::Config("model architecture does not match the training config".into()));
        }
        let usable: Vec<usize> = (0..dataset.scenes.len()).filter(|&i| !dataset.scenes[i].objects.is_empty()).collect();
        if usable.is_empty() {
            return Err(Error::Config("dataset has no scene with objects".into()));
        }
        Ok(Trainer {
            dataset,
            cook,
            config,
            model,
            step,
            usable,
            order: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn scene_at(&mut self, position: usize) -> usize {
        let n = self.usable.len();
        let epoch = position / n;
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm = self.usable.clone();
            perm.shuffle(&mut rng::derive(self.config.seed, stream::EPOCH_ORDER, epoch as u64));
            self.order = Some((epoch, perm));
        }
        self.order.as_ref().unwrap().1[position % n]
    }

    /// Scene indices and supervision used for the update at `step`.
    pub fn batch_at(&mut self, step: usize) -> (Vec<usize>, Vec<Vec<PairTarget>>) {
        let b = self.config.batch_size;
        let background = self.model.config.background();
        let mut idx = Vec::with_capacity(b);
        let mut sup = Vec::with_capacity(b);
        for i in 0..b {
            let pos = step * b + i;
            let s = self.scene_at(pos);
            let mut r = rng::derive(self.config.seed, stream::NEGATIVES, pos as u64);
            sup.push(supervision_for(&self.dataset.scenes[s], background, self.config.negatives_per_positive, &mut r));
            idx.push(s);
        }
        (idx, sup)
    }

    /// Loss of the batch at the current step under the current parameters.
    pub fn batch_loss(&mut self) -> Result<LossBreakdown> {
        let (idx, sup) = self.batch_at(self.step);
        let scenes: Vec<&SceneAnnotation> = idx.iter().map(|&i| &self.dataset.scenes[i]).collect();
        self.model.loss(&scenes, self.config.task_mode, self.cook, &sup)
    }

    pub fn train_step(&mut self) -> Result<LogRecord> {
        let (idx, sup) = self.batch_at(self.step);
        let scenes: Vec<&SceneAnnotation> = idx.iter().map(|&i| &self.dataset.scenes[i]).collect();
        let (loss, grads) = self.model.loss_and_grad(&scenes, self.config.task_mode, self.cook, &sup)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("gradient at step {}", self.step)));
        }
        let lr = self.config.lr_at(self.step);
        let update_tfidf = self.config.use_tfidf && self.config.tfidf_learnable;
        sgd_step(&mut self.model.params, &grads, lr, self.config.weight_decay, update_tfidf);
        if !self.model.params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after step {}", self.step)));
        }
        let rec = LogRecord {
            step: self.step,
            lr,
            l_obj: loss.object,
            l_rel: loss.relation,
            l: loss.total,
            epsilon: self.model.params.tfidf.epsilon,
            gamma: self.model.params.tfidf.gamma,
        };
        self.step += 1;
        Ok(rec)
    }

    /// Steps until `config.iterations` updates have been applied.
    pub fn run(&mut self, mut on_step: impl FnMut(&LogRecord)) -> Result<Vec<LogRecord>> {
        let mut log = Vec::with_capacity(self.config.iterations.saturating_sub(self.step));
        while self.step < self.config.iterations {
            let rec = self.train_step()?;
            on_step(&rec);
            log.push(rec);
        }
        Ok(log)
    }
}

pub fn train(dataset: &Dataset, cook: Option<&CookMatrix>, config: TrainConfig) -> Result<(Model, Vec<LogRecord>)> {
    let mut t = Trainer::new(dataset, cook, config)?;
    let log = t.run(|_| {})?;
    Ok((t.model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BoundingBox, ObjectInstance, RelationTriplet};

    fn scene(n: usize, rels: &[(usize, usize, usize)]) -> SceneAnnotation {
        SceneAnnotation {
            objects: (0..n)
                .map(|i| ObjectInstance {
                    class_id: i % 3,
                    observed_class_id: i % 3,
                    observed_logits: None,
                    bbox: BoundingBox::new(0.1, 0.1, 0.5, 0.5).unwrap(),
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

    #[test]
    fn schedule_shape() {
        let mut c = TrainConfig::paper(TaskMode::PredCls);
        c.iterations = 1000;
        c.warmup_steps = 100;
        assert!((c.lr_at(0) - 0.008 * 0.1).abs() < 1e-15);
        assert!((c.lr_at(50) - 0.008 * 0.55).abs() < 1e-15);
        assert_eq!(c.lr_at(100), 0.008);
        assert!((c.lr_at(600) - 0.0008).abs() < 1e-15);
        assert!((c.lr_at(850) - 0.00008).abs() < 1e-15);
        assert_eq!(c.milestone_steps(), [600, 850]);
    }

    #[test]
    fn paper_preset_values() {
        let p = TrainConfig::paper(TaskMode::PredCls);
        assert_eq!((p.learning_rate, p.weight_decay, p.batch_size, p.n_layers, p.object_dim), (0.008, 5e-5, 12, 4, 128));
        assert_eq!(TrainConfig::paper(TaskMode::SgCls).batch_size, 9);
        assert_eq!(TrainConfig::paper(TaskMode::SgGen).batch_size, 9);
    }

    #[test]
    fn negatives_avoid_gt_pairs() {
        let s = scene(4, &[(0, 1, 0), (2, 3, 1)]);
        let mut r = rng::derive(1, stream::NEGATIVES, 0);
        let sup = supervision_for(&s, 5, 3, &mut r);
        assert_eq!(sup.len(), 2 + 6);
        let negs: BTreeSet<_> = sup[2..].iter().map(|&(u, v, t)| {
            assert_eq!(t, 5);
            (u, v)
        }).collect();
        assert_eq!(negs.len(), 6);
        assert!(!negs.contains(&(0, 1)) && !negs.contains(&(2, 3)));
        // 2 objects, one relation: only one candidate left
        let s = scene(2, &[(0, 1, 0)]);
        assert_eq!(supervision_for(&s, 5, 3, &mut r), [(0, 1, 0), (1, 0, 5)]);
        assert_eq!(supervision_for(&scene(3, &[]), 5, 3, &mut r), []);
    }

    #[test]
    fn weight_decay_step_closed_form() {
        let cfg = TrainConfig::desk(TaskMode::PredCls).model_config(3, 2);
        let mut p = ModelParams::init(&cfg, 3).unwrap();
        let g = p.zeros_like();
        let before = p.clone();
        sgd_step(&mut p, &g, 0.5, 0.1, true);
        assert!((p.obj_w.data[0] - before.obj_w.data[0] * 0.95).abs() < 1e-15);
        let mut q = before.clone();
        sgd_step(&mut q, &g, 0.5, 0.1, false);
        assert_eq!(q.tfidf, before.tfidf);
    }
}
