//! The full scene-graph model: class embedding plus box encoding projected to
//! node features, `L` message-passing blocks, and linear object and relation
//! classifiers trained with a joint cross-entropy loss.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cook::CookMatrix;
use crate::error::{Error, Result};
use crate::eval::{PairProbs, SceneOutput};
use crate::linalg::Matrix;
use crate::math;
use crate::mpnn::{build_neighbors, run_blocks, run_blocks_backward, Activation, BlocksTape, LayerParams, SceneGraph, Topology};
use crate::rng::{self, stream, Rng};
use crate::scene::SceneAnnotation;
use crate::tfidf::{SmoothingMode, TfIdfParams, TfMode};

/// Length of the box encoding appended to the class embedding.
pub const BOX_FEATURES: usize = 8;

/// Evaluation protocol. Decides which labels drive the embedding, the
/// co-occurrence lookup and TF-l-IDF counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Ground-truth boxes and labels.
    #[default]
    PredCls,
    /// Ground-truth boxes; labels come from the detector stand-in.
    SgCls,
    /// Detector output only; triplets must also match boxes.
    SgGen,
}

impl TaskMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskMode::PredCls => "predcls",
            TaskMode::SgCls => "sgcls",
            TaskMode::SgGen => "sggen",
        }
    }

    /// Labels the model sees for each object of `scene`.
    pub fn input_labels(&self, scene: &SceneAnnotation) -> Vec<usize> {
        match self {
            TaskMode::PredCls => scene.gt_labels(),
            TaskMode::SgCls | TaskMode::SgGen => scene
                .objects
                .iter()
                .map(|o| o.observed_logits.as_deref().map_or(o.observed_class_id, math::argmax))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_object_classes: usize,
    /// Vocabulary predicates; the relation head has one extra background output.
    pub n_predicates: usize,
    pub embed_dim: usize,
    /// Node feature dimension `d`.
    pub hidden_dim: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub topology: Topology,
    pub use_tfidf: bool,
    pub tfidf_learnable: bool,
    #[serde(default)]
    pub smoothing_mode: SmoothingMode,
    #[serde(default)]
    pub tf_mode: TfMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_object_classes == 0 || self.n_predicates == 0 {
            return Err(Error::Config("model needs at least one object class and one predicate".into()));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.n_layers == 0 {
            return Err(Error::Config("embed_dim, hidden_dim and n_layers must be positive".into()));
        }
        Ok(())
    }

    pub fn background(&self) -> usize {
        self.n_predicates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `n_object_classes × embed_dim`
    pub embedding: Matrix,
    /// `hidden_dim × (embed_dim + 8)`
    pub proj_w: Matrix,
    pub proj_b: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub tfidf: TfIdfParams,
    /// `(n_predicates + 1) × 2·hidden_dim`
    pub rel_w: Matrix,
    pub rel_b: Vec<f64>,
    /// `n_object_classes × hidden_dim`
    pub obj_w: Matrix,
    pub obj_b: Vec<f64>,
}

fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let a = math::sqrt(6.0 / (rows + cols) as f64);
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_range(-a..a)).collect(),
    }
}

/// Named view of one parameter group (several slices in visiting order).
pub struct Group<'a> {
    pub name: String,
    pub slices: Vec<&'a [f64]>,
}

pub struct GroupMut<'a> {
    pub name: String,
    pub slices: Vec<&'a mut [f64]>,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derive(seed, stream::INIT, 0);
        let (c, e, d, p) = (config.n_object_classes, config.embed_dim, config.hidden_dim, config.n_predicates + 1);
        let embedding = xavier(&mut rng, c, e);
        let proj_w = xavier(&mut rng, d, e + BOX_FEATURES);
        let layers = (0..config.n_layers)
            .map(|_| {
                let w = xavier(&mut rng, d, d);
                let b = 1.0 / math::sqrt(d as f64);
                LayerParams {
                    w,
                    w_att: (0..d).map(|_| rng.random_range(-b..b)).collect(),
                    activation: config.activation,
                }
            })
            .collect();
        let mut tfidf = TfIdfParams::init(&mut rng, config.smoothing_mode, config.tfidf_learnable);
        tfidf.tf_mode = config.tf_mode;
        let rel_w = xavier(&mut rng, p, 2 * d);
        let obj_w = xavier(&mut rng, c, d);
        Ok(ModelParams {
            embedding,
            proj_w,
            proj_b: vec![0.0; d],
            layers,
            tfidf,
            rel_w,
            rel_b: vec![0.0; p],
            obj_w,
            obj_b: vec![0.0; c],
        })
    }

    /// Same shapes, all zeros (a gradient buffer).
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        ModelParams {
            embedding: z(&self.embedding),
            proj_w: z(&self.proj_w),
            proj_b: vec![0.0; self.proj_b.len()],
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w: z(&l.w),
                    w_att: vec![0.0; l.w_att.len()],
                    activation: l.activation,
                })
                .collect(),
            tfidf: TfIdfParams {
                epsilon: 0.0,
                gamma: 0.0,
                ..self.tfidf.clone()
            },
            rel_w: z(&self.rel_w),
            rel_b: vec![0.0; self.rel_b.len()],
            obj_w: z(&self.obj_w),
            obj_b: vec![0.0; self.obj_b.len()],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.proj_w.rows
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols
    }

    /// Parameter groups in a fixed order: embedding, projection, each
    /// layer's `W` and `W_att`, epsilon, gamma, `W_rel`, `W_obj`.
    pub fn groups(&self) -> Vec<Group<'_>> {
        let mut g = vec![
            Group {
                name: "embedding".into(),
                slices: vec![&self.embedding.data[..]],
            },
            Group {
                name: "projection".into(),
                slices: vec![&self.proj_w.data[..], &self.proj_b[..]],
            },
        ];
        for (i, l) in self.layers.iter().enumerate() {
            g.push(Group {
                name: format!("layer{i}.W"),
                slices: vec![&l.w.data[..]],
            });
            g.push(Group {
                name: format!("layer{i}.W_att"),
                slices: vec![&l.w_att[..]],
            });
        }
        g.push(Group {
            name: "epsilon".into(),
            slices: vec![core::slice::from_ref(&self.tfidf.epsilon)],
        });
        g.push(Group {
            name: "gamma".into(),
            slices: vec![core::slice::from_ref(&self.tfidf.gamma)],
        });
        g.push(Group {
            name: "W_rel".into(),
            slices: vec![&self.rel_w.data[..], &self.rel_b[..]],
        });
        g.push(Group {
            name: "W_obj".into(),
            slices: vec![&self.obj_w.data[..], &self.obj_b[..]],
        });
        g
    }

    pub fn groups_mut(&mut self) -> Vec<GroupMut<'_>> {
        let mut g = vec![
            GroupMut {
                name: "embedding".into(),
                slices: vec![&mut self.embedding.data[..]],
            },
            GroupMut {
                name: "projection".into(),
                slices: vec![&mut self.proj_w.data[..], &mut self.proj_b[..]],
            },
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            g.push(GroupMut {
                name: format!("layer{i}.W"),
                slices: vec![&mut l.w.data[..]],
            });
            g.push(GroupMut {
                name: format!("layer{i}.W_att"),
                slices: vec![&mut l.w_att[..]],
            });
        }
        g.push(GroupMut {
            name: "epsilon".into(),
            slices: vec![core::slice::from_mut(&mut self.tfidf.epsilon)],
        });
        g.push(GroupMut {
            name: "gamma".into(),
            slices: vec![core::slice::from_mut(&mut self.tfidf.gamma)],
        });
        g.push(GroupMut {
            name: "W_rel".into(),
            slices: vec![&mut self.rel_w.data[..], &mut self.rel_b[..]],
        });
        g.push(GroupMut {
            name: "W_obj".into(),
            slices: vec![&mut self.obj_w.data[..], &mut self.obj_b[..]],
        });
        g
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.slices.iter().all(|s| s.iter().all(|v| v.is_finite())))
    }
}

/// `W_rel · [z_u; z_v] + b`
pub fn relation_logits(z_u: &[f64], z_v: &[f64], rel_w: &Matrix, rel_b: &[f64]) -> Result<Vec<f64>> {
    let d = z_u.len();
    if z_v.len() != d || rel_w.cols != 2 * d || rel_b.len() != rel_w.rows {
        return Err(Error::Shape(format!(
            "relation head {}x{} (bias {}) applied to features of length {} and {}",
            rel_w.rows,
            rel_w.cols,
            rel_b.len(),
            d,
            z_v.len()
        )));
    }
    Ok((0..rel_w.rows)
        .map(|r| {
            let row = rel_w.row(r);
            rel_b[r] + math::dot(&row[..d], z_u) + math::dot(&row[d..], z_v)
        })
        .collect())
}

/// Softmax over relation logits.
pub fn predict_relations(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("relation logits".into()));
    }
    Ok(math::softmax(logits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub object: f64,
    pub relation: f64,
    pub total: f64,
}

/// Loss values and gradients with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss {
    pub loss: LossBreakdown,
    pub d_object_logits: Vec<Vec<f64>>,
    pub d_relation_logits: Vec<Vec<f64>>,
}

fn cross_entropy(logits: &[f64], target: usize, weight: f64, grad: &mut [f64]) -> f64 {
    let lse = math::log_sum_exp(logits);
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = weight * math::exp(l - lse);
    }
    grad[target] -= weight;
    lse - logits[target]
}

/// Mean object cross-entropy plus mean relation cross-entropy; an empty
/// relation set contributes zero.
pub fn joint_loss(
    object_logits: &[Vec<f64>],
    object_targets: &[usize],
    relation_logits: &[Vec<f64>],
    relation_targets: &[usize],
) -> Result<JointLoss> {
    if object_logits.is_empty() {
        return Err(Error::Shape("joint loss needs at least one node".into()));
    }
    if object_logits.len() != object_targets.len() || relation_logits.len() != relation_targets.len() {
        return Err(Error::Shape("logits and targets differ in length".into()));
    }
    let check = |logits: &[Vec<f64>], targets: &[usize], what: &'static str| -> Result<()> {
        for (l, &t) in logits.iter().zip(targets) {
            if t >= l.len() {
                return Err(Error::IndexOutOfRange {
                    what,
                    index: t,
                    len: l.len(),
                });
            }
        }
        Ok(())
    };
    check(object_logits, object_targets, "object target")?;
    check(relation_logits, relation_targets, "relation target")?;

    let wo = 1.0 / object_logits.len() as f64;
    let mut d_obj: Vec<Vec<f64>> = object_logits.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut l_obj = 0.0;
    for ((l, &t), g) in object_logits.iter().zip(object_targets).zip(&mut d_obj) {
        l_obj += wo * cross_entropy(l, t, wo, g);
    }
    let mut d_rel: Vec<Vec<f64>> = relation_logits.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut l_rel = 0.0;
    if !relation_logits.is_empty() {
        let wr = 1.0 / relation_logits.len() as f64;
        for ((l, &t), g) in relation_logits.iter().zip(relation_targets).zip(&mut d_rel) {
            l_rel += wr * cross_entropy(l, t, wr, g);
        }
    }
    Ok(JointLoss {
        loss: LossBreakdown {
            object: l_obj,
            relation: l_rel,
            total: l_obj + l_rel,
        },
        d_object_logits: d_obj,
        d_relation_logits: d_rel,
    })
}

/// One supervised ordered pair: `(subject, object, target)` where the target
/// may be the background class.
pub type PairTarget = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Intermediate values kept between forward and backward.
pub struct ForwardTape {
    inputs: Vec<Matrix>,
    labels: Vec<Vec<usize>>,
    blocks: BlocksTape,
    final_features: Vec<Matrix>,
    pairs: Vec<Vec<(usize, usize)>>,
}

pub struct ForwardOutput {
    /// `[scene]`: `n_objects × n_object_classes`
    pub object_logits: Vec<Matrix>,
    /// `[scene]`: one row of `n_predicates + 1` logits per requested pair.
    pub relation_logits: Vec<Matrix>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Model { config, params })
    }

    fn check_inputs(&self, scenes: &[&SceneAnnotation], cook: Option<&CookMatrix>) -> Result<()> {
        let c = self.config.n_object_classes;
        if let Some(m) = cook {
            if m.n_classes() != c {
                return Err(Error::Vocabulary(format!(
                    "co-occurrence matrix has {} classes, model has {c}",
                    m.n_classes()
                )));
            }
        }
        for (k, s) in scenes.iter().enumerate() {
            for o in &s.objects {
                if o.class_id >= c || o.observed_class_id >= c {
                    return Err(Error::Vocabulary(format!("scene {k} has an object class outside the model's {c}")));
                }
            }
        }
        Ok(())
    }

    /// Runs the network on a batch. `pairs[s]` lists the ordered pairs of
    /// scene `s` that need relation logits.
    pub fn forward(
        &self,
        scenes: &[&SceneAnnotation],
        mode: TaskMode,
        cook: Option<&CookMatrix>,
        pairs: &[Vec<(usize, usize)>],
    ) -> Result<(ForwardOutput, ForwardTape)> {
        self.check_inputs(scenes, cook)?;
        if pairs.len() != scenes.len() {
            return Err(Error::Shape("one pair list per scene is required".into()));
        }
        let p = &self.params;
        let e = p.embed_dim();
        let mut inputs = Vec::with_capacity(scenes.len());
        let mut labels = Vec::with_capacity(scenes.len());
        let mut graphs = Vec::with_capacity(scenes.len());
        for s in scenes {
            let lbl = mode.input_labels(s);
            let n = s.objects.len();
            let mut x = Matrix::zeros(n, e + BOX_FEATURES);
            for (u, o) in s.objects.iter().enumerate() {
                let row = x.row_mut(u);
                row[..e].copy_from_slice(p.embedding.row(lbl[u]));
                row[e..].copy_from_slice(&o.bbox.encode());
            }
            let z0 = x.mul_transpose(&p.proj_w);
            let mut z0 = z0;
            for u in 0..n {
                for (v, b) in z0.row_mut(u).iter_mut().zip(&p.proj_b) {
                    *v += b;
                }
            }
            let boxes: Vec<_> = s.objects.iter().map(|o| o.bbox).collect();
            graphs.push(SceneGraph {
                features: z0,
                neighbors: build_neighbors(&boxes, self.config.topology),
                labels: lbl.clone(),
            });
            inputs.push(x);
            labels.push(lbl);
        }
        let tfidf = self.config.use_tfidf.then_some(&p.tfidf);
        let (out, blocks) = run_blocks(&graphs, &p.layers, tfidf, cook)?;
        let final_features: Vec<Matrix> = out.into_iter().map(|g| g.features).collect();

        let d = p.hidden_dim();
        let mut object_logits = Vec::with_capacity(scenes.len());
        let mut rel_logits = Vec::with_capacity(scenes.len());
        for (z, prs) in final_features.iter().zip(pairs) {
            let mut ol = z.mul_transpose(&p.obj_w);
            for u in 0..ol.rows {
                for (v, b) in ol.row_mut(u).iter_mut().zip(&p.obj_b) {
                    *v += b;
                }
            }
            object_logits.push(ol);
            let mut rl = Matrix::zeros(prs.len(), p.rel_w.rows);
            for (k, &(u, v)) in prs.iter().enumerate() {
                if u >= z.rows || v >= z.rows || u == v {
                    return Err(Error::Shape(format!("pair ({u}, {v}) is not an ordered pair of distinct objects")));
                }
                let l = relation_logits(&z.row(u)[..d], &z.row(v)[..d], &p.rel_w, &p.rel_b)?;
                rl.row_mut(k).copy_from_slice(&l);
            }
            rel_logits.push(rl);
        }
        let finite = object_logits.iter().chain(&rel_logits).all(Matrix::is_finite);
        if !finite {
            return Err(Error::NonFinite("model logits".into()));
        }
        Ok((
            ForwardOutput {
                object_logits,
                relation_logits: rel_logits,
            },
            ForwardTape {
                inputs,
                labels,
                blocks,
                final_features,
                pairs: pairs.to_vec(),
            },
        ))
    }

    /// Backpropagates logit gradients to every parameter group.
    pub fn backward(&self, tape: &ForwardTape, d_object: &[Matrix], d_relation: &[Matrix]) -> Result<ModelParams> {
        let p = &self.params;
        let d = p.hidden_dim();
        let e = p.embed_dim();
        let mut grads = p.zeros_like();
        let mut g_final = Vec::with_capacity(tape.final_features.len());
        for (s, z) in tape.final_features.iter().enumerate() {
            let mut gz = Matrix::zeros(z.rows, d);
            let go = &d_object[s];
            for u in 0..z.rows {
                let g = go.row(u);
                grads.obj_w.add_outer(g, z.row(u), 1.0);
                for (b, x) in grads.obj_b.iter_mut().zip(g) {
                    *b += x;
                }
                p.obj_w.matvec_t_acc(g, gz.row_mut(u));
            }
            let gr = &d_relation[s];
            let mut concat = vec![0.0; 2 * d];
            let mut g_concat = vec![0.0; 2 * d];
            for (k, &(u, v)) in tape.pairs[s].iter().enumerate() {
                let g = gr.row(k);
                concat[..d].copy_from_slice(z.row(u));
                concat[d..].copy_from_slice(z.row(v));
                grads.rel_w.add_outer(g, &concat, 1.0);
                for (b, x) in grads.rel_b.iter_mut().zip(g) {
                    *b += x;
                }
                g_concat.iter_mut().for_each(|x| *x = 0.0);
                p.rel_w.matvec_t_acc(g, &mut g_concat);
                for (a, b) in gz.row_mut(u).iter_mut().zip(&g_concat[..d]) {
                    *a += b;
                }
                for (a, b) in gz.row_mut(v).iter_mut().zip(&g_concat[d..]) {
                    *a += b;
                }
            }
            g_final.push(gz);
        }
        let bg = run_blocks_backward(&tape.blocks, &p.layers, g_final)?;
        for (gl, lg) in grads.layers.iter_mut().zip(bg.layers) {
            gl.w = lg.w;
            gl.w_att = lg.w_att;
        }
        if self.config.use_tfidf && p.tfidf.learnable {
            grads.tfidf.epsilon = bg.epsilon;
            grads.tfidf.gamma = bg.gamma;
        }
        let mut gx = vec![0.0; e + BOX_FEATURES];
        for ((x, g0), lbl) in tape.inputs.iter().zip(&bg.inputs).zip(&tape.labels) {
            for u in 0..x.rows {
                let g = g0.row(u);
                grads.proj_w.add_outer(g, x.row(u), 1.0);
                for (b, v) in grads.proj_b.iter_mut().zip(g) {
                    *b += v;
                }
                gx.iter_mut().for_each(|v| *v = 0.0);
                p.proj_w.matvec_t_acc(g, &mut gx);
                for (ge, v) in grads.embedding.row_mut(lbl[u]).iter_mut().zip(&gx[..e]) {
                    *ge += v;
                }
            }
        }
        Ok(grads)
    }

    fn run_loss(
        &self,
        scenes: &[&SceneAnnotation],
        mode: TaskMode,
        cook: Option<&CookMatrix>,
        supervision: &[Vec<PairTarget>],
    ) -> Result<(JointLoss, ForwardTape, Vec<usize>, Vec<usize>)> {
        if supervision.len() != scenes.len() {
            return Err(Error::Shape("one supervision list per scene is required".into()));
        }
        let pairs: Vec<Vec<(usize, usize)>> =
            supervision.iter().map(|s| s.iter().map(|&(u, v, _)| (u, v)).collect()).collect();
        let (out, tape) = self.forward(scenes, mode, cook, &pairs)?;
        let mut obj_logits = Vec::new();
        let mut obj_targets = Vec::new();
        let mut rel_logits = Vec::new();
        let mut rel_targets = Vec::new();
        let mut obj_counts = Vec::with_capacity(scenes.len());
        let mut rel_counts = Vec::with_capacity(scenes.len());
        for ((s, ol), (sup, rl)) in scenes.iter().zip(&out.object_logits).zip(supervision.iter().zip(&out.relation_logits)) {
            for (u, o) in s.objects.iter().enumerate() {
                obj_logits.push(ol.row(u).to_vec());
                obj_targets.push(o.class_id);
            }
            for (k, &(_, _, t)) in sup.iter().enumerate() {
                rel_logits.push(rl.row(k).to_vec());
                rel_targets.push(t);
            }
            obj_counts.push(s.objects.len());
            rel_counts.push(sup.len());
        }
        let jl = joint_loss(&obj_logits, &obj_targets, &rel_logits, &rel_targets)?;
        Ok((jl, tape, obj_counts, rel_counts))
    }

    /// Joint loss of a supervised batch.
    pub fn loss(
        &self,
        scenes: &[&SceneAnnotation],
        mode: TaskMode,
        cook: Option<&CookMatrix>,
        supervision: &[Vec<PairTarget>],
    ) -> Result<LossBreakdown> {
        Ok(self.run_loss(scenes, mode, cook, supervision)?.0.loss)
    }

    /// Joint loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        scenes: &[&SceneAnnotation],
        mode: TaskMode,
        cook: Option<&CookMatrix>,
        supervision: &[Vec<PairTarget>],
    ) -> Result<(LossBreakdown, ModelParams)> {
        let (jl, tape, obj_counts, rel_counts) = self.run_loss(scenes, mode, cook, supervision)?;
        let c = self.config.n_object_classes;
        let pr = self.params.rel_w.rows;
        let mut d_obj = Vec::with_capacity(scenes.len());
        let mut d_rel = Vec::with_capacity(scenes.len());
        let (mut oi, mut ri) = (0, 0);
        for (&no, &nr) in obj_counts.iter().zip(&rel_counts) {
            let mut m = Matrix::zeros(no, c);
            for u in 0..no {
                m.row_mut(u).copy_from_slice(&jl.d_object_logits[oi + u]);
            }
            oi += no;
            let mut r = Matrix::zeros(nr, pr);
            for k in 0..nr {
                r.row_mut(k).copy_from_slice(&jl.d_relation_logits[ri + k]);
            }
            ri += nr;
            d_obj.push(m);
            d_rel.push(r);
        }
        let grads = self.backward(&tape, &d_obj, &d_rel)?;
        Ok((jl.loss, grads))
    }

    /// Class and predicate probabilities for every ordered pair of each scene.
    /// The background output is dropped after the softmax.
    pub fn predict(&self, scenes: &[&SceneAnnotation], mode: TaskMode, cook: Option<&CookMatrix>) -> Result<Vec<SceneOutput>> {
        let pairs: Vec<Vec<(usize, usize)>> = scenes
            .iter()
            .map(|s| {
                let n = s.objects.len();
                (0..n).flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v))).collect()
            })
            .collect();
        let (out, _) = self.forward(scenes, mode, cook, &pairs)?;
        let n_pred = self.config.n_predicates;
        let mut outputs = Vec::with_capacity(scenes.len());
        for ((s, prs), (ol, rl)) in scenes.iter().zip(&pairs).zip(out.object_logits.iter().zip(&out.relation_logits)) {
            let object_probs = (0..ol.rows).map(|u| math::softmax(ol.row(u))).collect();
            let mut rel = Vec::with_capacity(prs.len());
            for (k, &(u, v)) in prs.iter().enumerate() {
                let mut probs = predict_relations(rl.row(k))?;
                probs.truncate(n_pred);
                rel.push(PairProbs {
                    subject: u,
                    object: v,
                    probs,
                });
            }
            outputs.push(SceneOutput {
                object_probs,
                input_labels: mode.input_labels(s),
                pairs: rel,
                boxes: s.objects.iter().map(|o| o.bbox).collect(),
            });
        }
        Ok(outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_relation_head_gives_zero_logits() {
        let w = Matrix::zeros(3, 4);
        assert_eq!(relation_logits(&[1.0, 2.0], &[3.0, 4.0], &w, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(relation_logits(&[1.0], &[3.0, 4.0], &w, &[0.0; 3]).is_err());
    }

    #[test]
    fn relation_logits_are_directed() {
        let w = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 2.0], vec![0.5, -1.0, 3.0, 0.0]]).unwrap();
        let b = [0.1, -0.2];
        let uv = relation_logits(&[1.0, 2.0], &[3.0, 4.0], &w, &b).unwrap();
        let vu = relation_logits(&[3.0, 4.0], &[1.0, 2.0], &w, &b).unwrap();
        let want = [0.1 + 1.0 + 8.0, -0.2 + 0.5 - 2.0 + 9.0];
        assert!((uv[0] - want[0]).abs() < 1e-12 && (uv[1] - want[1]).abs() < 1e-12);
        assert_ne!(uv, vu);
    }

    #[test]
    fn softmax_cases() {
        let p = predict_relations(&[0.0; 4]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let a = predict_relations(&[0.3, -1.0, 2.0]).unwrap();
        let b = predict_relations(&[100.3, 99.0, 102.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(predict_relations(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn joint_loss_cases() {
        let uniform = joint_loss(&[vec![0.0; 5]], &[2], &[vec![0.0; 3]], &[1]).unwrap();
        assert!((uniform.loss.object - 5f64.ln()).abs() < 1e-12);
        assert!((uniform.loss.relation - 3f64.ln()).abs() < 1e-12);
        let perfect = joint_loss(&[vec![0.0, 60.0]], &[1], &[vec![70.0, 0.0]], &[0]).unwrap();
        assert!(perfect.loss.total < 1e-20);
        let empty = joint_loss(&[vec![1.0, 0.0]], &[0], &[], &[]).unwrap();
        assert_eq!(empty.loss.relation, 0.0);
        assert!(joint_loss(&[vec![1.0, 0.0]], &[2], &[], &[]).is_err());
        assert!(joint_loss(&[], &[], &[], &[]).is_err());
    }

    #[test]
    fn two_node_one_relation_loss_by_hand() {
        // objects: logits (1, 0) target 0, logits (0, 2) target 1
        // relation: logits (0, ln 3) target 1
        let jl = joint_loss(
            &[vec![1.0, 0.0], vec![0.0, 2.0]],
            &[0, 1],
            &[vec![0.0, 3f64.ln()]],
            &[1],
        )
        .unwrap();
        let o1 = (1f64.exp() + 1.0).ln() - 1.0;
        let o2 = (1.0 + 2f64.exp()).ln() - 2.0;
        let r = (4.0f64 / 3.0).ln();
        assert!((jl.loss.object - (o1 + o2) / 2.0).abs() < 1e-12);
        assert!((jl.loss.relation - r).abs() < 1e-12);
        assert!((jl.loss.total - ((o1 + o2) / 2.0 + r)).abs() < 1e-12);
    }

    #[test]
    fn group_order() {
        let cfg = ModelConfig {
            n_object_classes: 3,
            n_predicates: 2,
            embed_dim: 2,
            hidden_dim: 3,
            n_layers: 2,
            activation: Activation::Relu,
            topology: Topology::Complete,
            use_tfidf: true,
            tfidf_learnable: true,
            smoothing_mode: SmoothingMode::Code,
            tf_mode: TfMode::Ratio,
        };
        let p = ModelParams::init(&cfg, 0).unwrap();
        let names: Vec<String> = p.groups().into_iter().map(|g| g.name).collect();
        assert_eq!(
            names,
            ["embedding", "projection", "layer0.W", "layer0.W_att", "layer1.W", "layer1.W_att", "epsilon", "gamma", "W_rel", "W_obj"]
        );
        assert_eq!(p.rel_w.rows, 3);
        assert_eq!(p.proj_w.cols, 2 + BOX_FEATURES);
    }
}
