//! Learnable TF-l-IDF node reweighting.
//!
//! Every node of class `c` in image `b` of a batch of `B` images is scaled by
//!
//! ```text
//! s = (n_cb / n_b) · log((B + ε) / (n_c + γ))        paper smoothing
//! s = (n_cb / n_b) · log((B + ε) / (n_c + 1 + γ))    code smoothing
//! ```
//!
//! where `n_cb` counts class `c` in image `b`, `n_b` counts all nodes of image
//! `b` and `n_c` counts the batch images containing `c`. The scale depends only
//! on labels and `(ε, γ)`, never on feature values.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingMode {
    /// Denominator `n_c + γ`.
    Paper,
    /// Denominator `n_c + 1 + γ`.
    #[default]
    Code,
}

/// Term-frequency factor of the per-node scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TfMode {
    /// `n_cb / n_b`
    #[default]
    Ratio,
    /// Raw `n_cb`.
    Count,
}

/// Smallest value [`TfIdfParams::project`] lets `B + ε` and the l-IDF
/// denominator take for any batch.
pub const DOMAIN_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfParams {
    pub epsilon: f64,
    pub gamma: f64,
    /// When false, `ε` and `γ` receive exactly zero gradient.
    pub learnable: bool,
    pub smoothing_mode: SmoothingMode,
    /// Clamp negative scales to zero.
    #[serde(default)]
    pub clamp_negative: bool,
    #[serde(default)]
    pub tf_mode: TfMode,
}

impl TfIdfParams {
    pub fn new(epsilon: f64, gamma: f64, smoothing_mode: SmoothingMode) -> Self {
        TfIdfParams {
            epsilon,
            gamma,
            learnable: true,
            smoothing_mode,
            clamp_negative: false,
            tf_mode: TfMode::Ratio,
        }
    }

    /// `ε, γ ~ 0.01 · N(0, 1)`.
    pub fn init(rng: &mut crate::rng::Rng, smoothing_mode: SmoothingMode, learnable: bool) -> Self {
        use rand::Rng as _;
        let n: f64 = rng.sample(rand_distr::StandardNormal);
        let m: f64 = rng.sample(rand_distr::StandardNormal);
        TfIdfParams {
            epsilon: 0.01 * n,
            gamma: 0.01 * m,
            learnable,
            smoothing_mode,
            clamp_negative: false,
            tf_mode: TfMode::Ratio,
        }
    }

    /// Moves `ε` and `γ` to the nearest point where `B + ε` and the
    /// denominator are at least [`DOMAIN_MARGIN`] for every `B ≥ 1`, `n_c ≥ 1`.
    pub fn project(&mut self) {
        let offset = match self.smoothing_mode {
            SmoothingMode::Paper => 1.0,
            SmoothingMode::Code => 2.0,
        };
        self.epsilon = self.epsilon.max(DOMAIN_MARGIN - 1.0);
        self.gamma = self.gamma.max(DOMAIN_MARGIN - offset);
    }

    fn denominator(&self, n_c: usize) -> f64 {
        match self.smoothing_mode {
            SmoothingMode::Paper => n_c as f64 + self.gamma,
            SmoothingMode::Code => n_c as f64 + 1.0 + self.gamma,
        }
    }
}

/// Term frequency `n_cb / n_b`.
pub fn tf(n_cb: usize, n_b: usize) -> Result<f64> {
    if n_b == 0 {
        return Err(Error::Domain {
            param: "n_b",
            reason: "image has no nodes".into(),
        });
    }
    if n_cb > n_b {
        return Err(Error::Domain {
            param: "n_cb",
            reason: format!("{n_cb} > n_b = {n_b}"),
        });
    }
    Ok(n_cb as f64 / n_b as f64)
}

fn idf_parts(batch_size: usize, n_c: usize, params: &TfIdfParams) -> Result<(f64, f64)> {
    let num = batch_size as f64 + params.epsilon;
    let den = params.denominator(n_c);
    if num.is_nan() || num <= 0.0 {
        return Err(Error::Domain {
            param: "epsilon",
            reason: format!("B + epsilon = {num} must be positive"),
        });
    }
    if den.is_nan() || den <= 0.0 {
        return Err(Error::Domain {
            param: "gamma",
            reason: format!("denominator {den} must be positive (n_c = {n_c})"),
        });
    }
    Ok((num, den))
}

/// Learnable inverse image frequency; strictly decreasing in `n_c`.
pub fn l_idf(batch_size: usize, n_c: usize, params: &TfIdfParams) -> Result<f64> {
    let (num, den) = idf_parts(batch_size, n_c, params)?;
    Ok(math::ln(num / den))
}

/// Textbook `(n_td / n_d) · log(N / n_t)`.
pub fn classic_tfidf(n_td: usize, n_d: usize, n_docs: usize, n_t: usize) -> Result<f64> {
    if n_t == 0 {
        return Err(Error::Domain {
            param: "n_t",
            reason: "term occurs in no document".into(),
        });
    }
    if n_docs == 0 {
        return Err(Error::Domain {
            param: "N",
            reason: "no documents".into(),
        });
    }
    Ok(tf(n_td, n_d)? * math::ln(n_docs as f64 / n_t as f64))
}

/// Label counts of one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchLabelStats {
    pub batch_size: usize,
    /// `n_b` per image.
    pub image_totals: Vec<usize>,
    /// `n_cb` per image, keyed by class.
    pub image_class_counts: Vec<BTreeMap<usize, usize>>,
    /// `n_c`: images containing each class.
    pub class_image_counts: BTreeMap<usize, usize>,
}

impl BatchLabelStats {
    pub fn n_cb(&self, image: usize, class: usize) -> usize {
        self.image_class_counts[image].get(&class).copied().unwrap_or(0)
    }

    pub fn n_c(&self, class: usize) -> usize {
        self.class_image_counts.get(&class).copied().unwrap_or(0)
    }
}

/// Counts labels per image and per batch.
pub fn compute_stats<L: AsRef<[usize]>>(labels: &[L]) -> Result<BatchLabelStats> {
    if labels.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut image_class_counts = Vec::with_capacity(labels.len());
    let mut class_image_counts = BTreeMap::new();
    for img in labels {
        let mut m = BTreeMap::new();
        for &c in img.as_ref() {
            *m.entry(c).or_insert(0usize) += 1;
        }
        for &c in m.keys() {
            *class_image_counts.entry(c).or_insert(0usize) += 1;
        }
        image_class_counts.push(m);
    }
    Ok(BatchLabelStats {
        batch_size: labels.len(),
        image_totals: labels.iter().map(|l| l.as_ref().len()).collect(),
        image_class_counts,
        class_image_counts,
    })
}

/// Scale of one node and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeScale {
    pub scale: f64,
    pub d_epsilon: f64,
    pub d_gamma: f64,
}

/// Per-node scales for a labelled batch.
pub fn node_scales<L: AsRef<[usize]>>(labels: &[L], params: &TfIdfParams) -> Result<Vec<Vec<NodeScale>>> {
    let stats = compute_stats(labels)?;
    let mut out = Vec::with_capacity(labels.len());
    let mut dead_images = 0usize;
    for (b, img) in labels.iter().enumerate() {
        let img = img.as_ref();
        let mut row = Vec::with_capacity(img.len());
        for (node, &c) in img.iter().enumerate() {
            let tf = match params.tf_mode {
                TfMode::Ratio => tf(stats.n_cb(b, c), stats.image_totals[b])?,
                TfMode::Count => stats.n_cb(b, c) as f64,
            };
            let (num, den) = idf_parts(stats.batch_size, stats.n_c(c), params).map_err(|e| match e {
                Error::Domain { param, reason } => Error::Domain {
                    param,
                    reason: format!("{reason} at image {b} node {node} (class {c})"),
                },
                e => e,
            })?;
            let idf = math::ln(num / den);
            let mut ns = NodeScale {
                scale: tf * idf,
                d_epsilon: tf / num,
                d_gamma: -tf / den,
            };
            if params.clamp_negative && ns.scale < 0.0 {
                ns = NodeScale {
                    scale: 0.0,
                    d_epsilon: 0.0,
                    d_gamma: 0.0,
                };
            }
            if !params.learnable {
                ns.d_epsilon = 0.0;
                ns.d_gamma = 0.0;
            }
            row.push(ns);
        }
        if !row.is_empty() && row.iter().all(|s| s.scale == 0.0) {
            dead_images += 1;
        }
        out.push(row);
    }
    if dead_images > 0 {
        log::warn!("TF-l-IDF zeroed every node feature in {dead_images} of {} batch images", labels.len());
    }
    Ok(out)
}

/// Node features of a batch, grouped by image, with the labels used for counting.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureBatch {
    pub features: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<Vec<usize>>,
}

impl NodeFeatureBatch {
    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() {
            return Err(Error::Shape("features and labels disagree on the number of images".into()));
        }
        let mut dim = None;
        for (b, (f, l)) in self.features.iter().zip(&self.labels).enumerate() {
            if f.len() != l.len() {
                return Err(Error::Shape(format!("image {b}: {} feature rows, {} labels", f.len(), l.len())));
            }
            for row in f {
                match dim {
                    None => dim = Some(row.len()),
                    Some(d) if d != row.len() => {
                        return Err(Error::Shape(format!("image {b}: feature length {} != {d}", row.len())))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Saved state for [`tfidf_backward`].
#[derive(Debug, Clone)]
pub struct TfIdfRecord {
    pub scales: Vec<Vec<NodeScale>>,
    pub inputs: NodeFeatureBatch,
}

pub fn tfidf_forward(batch: &NodeFeatureBatch, params: &TfIdfParams) -> Result<(NodeFeatureBatch, TfIdfRecord)> {
    batch.validate()?;
    let scales = node_scales(&batch.labels, params)?;
    let features = batch
        .features
        .iter()
        .zip(&scales)
        .map(|(img, sc)| img.iter().zip(sc).map(|(x, s)| x.iter().map(|v| s.scale * v).collect()).collect())
        .collect();
    Ok((
        NodeFeatureBatch {
            features,
            labels: batch.labels.clone(),
        },
        TfIdfRecord {
            scales,
            inputs: batch.clone(),
        },
    ))
}

/// Gradients of the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfGrads {
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub epsilon: f64,
    pub gamma: f64,
}

pub fn tfidf_backward(record: &TfIdfRecord, upstream: &[Vec<Vec<f64>>]) -> Result<TfIdfGrads> {
    let x = &record.inputs.features;
    if upstream.len() != x.len() || upstream.iter().zip(x).any(|(g, f)| g.len() != f.len()) {
        return Err(Error::Shape("upstream gradient does not match the forward batch".into()));
    }
    let mut grads = TfIdfGrads {
        inputs: Vec::with_capacity(x.len()),
        epsilon: 0.0,
        gamma: 0.0,
    };
    for ((g_img, x_img), s_img) in upstream.iter().zip(x).zip(&record.scales) {
        let mut gi = Vec::with_capacity(g_img.len());
        for ((g, xv), s) in g_img.iter().zip(x_img).zip(s_img) {
            if g.len() != xv.len() {
                return Err(Error::Shape("upstream row length differs from the feature length".into()));
            }
            let gx = math::dot(g, xv);
            grads.epsilon += gx * s.d_epsilon;
            grads.gamma += gx * s.d_gamma;
            gi.push(g.iter().map(|v| s.scale * v).collect());
        }
        grads.inputs.push(gi);
    }
    Ok(grads)
}
