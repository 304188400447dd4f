//! Attention message passing with optional co-occurrence weighting,
//! interleaved with the TF-l-IDF layer.
//!
//! One layer updates every node synchronously from the pre-update snapshot:
//!
//! ```text
//! z_u' = z_u + σ(z_u + Σ_{v ∈ N(u)} m_uv · α_uv · W z_v)
//! α_uv = exp(⟨w_att, z_u⟩) / (exp(⟨w_att, z_u⟩) + exp(⟨w_att, z_v⟩))
//! ```
//!
//! with `m_uv = CooK(c_v | c_u)` when a co-occurrence matrix is supplied and
//! `m_uv = 1` otherwise. A block is one layer followed by the per-node
//! TF-l-IDF scale.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cook::CookMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::scene::BoundingBox;
use crate::tfidf::{node_scales, NodeScale, TfIdfParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => math::tanh(x),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `d × d` message transform.
    pub w: Matrix,
    /// Attention functional producing one logit per node.
    pub w_att: Vec<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn dim(&self) -> usize {
        self.w_att.len()
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        if self.w.rows != d || self.w.cols != d {
            return Err(Error::Shape(format!("W is {}x{}, attention vector has length {d}", self.w.rows, self.w.cols)));
        }
        Ok(())
    }
}

/// `α_uv` from the two attention logits, as a logistic of their difference.
#[inline]
pub fn attention_from_logits(a_u: f64, a_v: f64) -> f64 {
    math::sigmoid(a_u - a_v)
}

pub fn attention(z_u: &[f64], z_v: &[f64], w_att: &[f64]) -> Result<f64> {
    if z_u.len() != w_att.len() || z_v.len() != w_att.len() {
        return Err(Error::Shape(format!(
            "attention inputs of length {} and {} with a functional of length {}",
            z_u.len(),
            z_v.len(),
            w_att.len()
        )));
    }
    if z_u.iter().chain(z_v).chain(w_att).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention input".into()));
    }
    Ok(attention_from_logits(math::dot(w_att, z_u), math::dot(w_att, z_v)))
}

/// Neighborhood rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Every other object in the scene.
    #[default]
    Complete,
    /// The `k` nearest objects by box-center distance (ties by index).
    KNearest(usize),
}

pub fn build_neighbors(boxes: &[BoundingBox], topology: Topology) -> Vec<Vec<usize>> {
    let n = boxes.len();
    match topology {
        Topology::Complete => (0..n).map(|u| (0..n).filter(|&v| v != u).collect()).collect(),
        Topology::KNearest(k) => (0..n)
            .map(|u| {
                let (cx, cy) = boxes[u].center();
                let mut others: Vec<(f64, usize)> = (0..n)
                    .filter(|&v| v != u)
                    .map(|v| {
                        let (x, y) = boxes[v].center();
                        ((x - cx) * (x - cx) + (y - cy) * (y - cy), v)
                    })
                    .collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut nb: Vec<usize> = others.into_iter().take(k).map(|(_, v)| v).collect();
                nb.sort_unstable();
                nb
            })
            .collect(),
    }
}

/// One scene's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    /// `n_objects × d`
    pub features: Matrix,
    /// `N(u)`; never contains `u`.
    pub neighbors: Vec<Vec<usize>>,
    /// Class used for co-occurrence lookup and TF-l-IDF counting.
    pub labels: Vec<usize>,
}

impl SceneGraph {
    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows;
        if self.neighbors.len() != n || self.labels.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows, {} neighbor lists, {} labels",
                self.neighbors.len(),
                self.labels.len()
            )));
        }
        for (u, nb) in self.neighbors.iter().enumerate() {
            for &v in nb {
                if v >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "neighbor",
                        index: v,
                        len: n,
                    });
                }
                if v == u {
                    return Err(Error::Shape(format!("node {u} lists itself as a neighbor")));
                }
            }
        }
        if !self.features.is_finite() {
            return Err(Error::NonFinite("node features".into()));
        }
        Ok(())
    }
}

pub type GraphBatch = Vec<SceneGraph>;

/// Saved activations of one layer on one scene.
#[derive(Debug, Clone)]
pub struct LayerTape {
    input: Matrix,
    /// `V = Z Wᵀ`: row `v` is `W z_v`.
    messages: Matrix,
    alpha: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    pre_act: Matrix,
    act: Matrix,
}

fn cook_weights(scene: &SceneGraph, cook: Option<&CookMatrix>) -> Result<Vec<Vec<f64>>> {
    match cook {
        None => Ok(scene.neighbors.iter().map(|nb| vec![1.0; nb.len()]).collect()),
        Some(c) => {
            let n = c.n_classes();
            if let Some(&bad) = scene.labels.iter().find(|&&l| l >= n) {
                return Err(Error::Vocabulary(format!("label {bad} has no row in a {n}-class co-occurrence matrix")));
            }
            Ok(scene
                .neighbors
                .iter()
                .enumerate()
                .map(|(u, nb)| nb.iter().map(|&v| c.get(scene.labels[u], scene.labels[v])).collect())
                .collect())
        }
    }
}

fn layer_forward(scene: &SceneGraph, params: &LayerParams, cook: Option<&CookMatrix>) -> Result<(Matrix, LayerTape)> {
    params.check()?;
    let z = &scene.features;
    let d = params.dim();
    if z.cols != d {
        return Err(Error::Shape(format!("features have dimension {}, layer expects {d}", z.cols)));
    }
    let n = z.rows;
    let weights = cook_weights(scene, cook)?;
    let logits: Vec<f64> = (0..n).map(|u| math::dot(&params.w_att, z.row(u))).collect();
    let messages = z.mul_transpose(&params.w);
    let mut pre_act = z.clone();
    let mut alpha = Vec::with_capacity(n);
    for u in 0..n {
        let nb = &scene.neighbors[u];
        let mut a_row = Vec::with_capacity(nb.len());
        for (k, &v) in nb.iter().enumerate() {
            let a = attention_from_logits(logits[u], logits[v]);
            a_row.push(a);
            let coef = weights[u][k] * a;
            if coef != 0.0 {
                for (h, &m) in pre_act.row_mut(u).iter_mut().zip(messages.row(v)) {
                    *h += coef * m;
                }
            }
        }
        alpha.push(a_row);
    }
    let mut act = pre_act.clone();
    act.data.iter_mut().for_each(|x| *x = params.activation.apply(*x));
    let mut out = z.clone();
    for (o, a) in out.data.iter_mut().zip(&act.data) {
        *o += a;
    }
    Ok((
        out,
        LayerTape {
            input: z.clone(),
            messages,
            alpha,
            weights,
            pre_act,
            act,
        },
    ))
}

/// Gradient accumulator for one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w: Matrix,
    pub w_att: Vec<f64>,
}

impl LayerGrads {
    pub fn zeros(d: usize) -> Self {
        LayerGrads {
            w: Matrix::zeros(d, d),
            w_att: vec![0.0; d],
        }
    }
}

/// Returns the input gradient; parameter gradients accumulate into `grads`.
fn layer_backward(
    tape: &LayerTape,
    neighbors: &[Vec<usize>],
    params: &LayerParams,
    g_out: &Matrix,
    grads: &mut LayerGrads,
) -> Matrix {
    let n = tape.input.rows;
    let d = params.dim();
    let mut g_h = Matrix::zeros(n, d);
    for i in 0..n * d {
        g_h.data[i] = g_out.data[i] * params.activation.derivative(tape.pre_act.data[i], tape.act.data[i]);
    }
    let mut g_z = g_out.clone();
    for (g, h) in g_z.data.iter_mut().zip(&g_h.data) {
        *g += h;
    }
    let mut g_msg = Matrix::zeros(n, d);
    let mut g_logit = vec![0.0; n];
    for u in 0..n {
        let gh = g_h.row(u);
        for (k, &v) in neighbors[u].iter().enumerate() {
            let m = tape.weights[u][k];
            if m == 0.0 {
                continue;
            }
            let a = tape.alpha[u][k];
            let coef = m * a;
            for (gm, &x) in g_msg.row_mut(v).iter_mut().zip(gh) {
                *gm += coef * x;
            }
            let g_alpha = m * math::dot(gh, tape.messages.row(v));
            let g_diff = g_alpha * a * (1.0 - a);
            g_logit[u] += g_diff;
            g_logit[v] -= g_diff;
        }
    }
    for v in 0..n {
        let gm = g_msg.row(v);
        grads.w.add_outer(gm, tape.input.row(v), 1.0);
        params.w.matvec_t_acc(gm, g_z.row_mut(v));
    }
    for u in 0..n {
        let gl = g_logit[u];
        if gl == 0.0 {
            continue;
        }
        for ((ga, gz), (&x, &w)) in grads
            .w_att
            .iter_mut()
            .zip(g_z.row_mut(u).iter_mut())
            .zip(tape.input.row(u).iter().zip(&params.w_att))
        {
            *ga += gl * x;
            *gz += gl * w;
        }
    }
    g_z
}

/// One message-passing layer over every scene of a batch.
pub fn node_update(batch: &[SceneGraph], params: &LayerParams, cook: Option<&CookMatrix>) -> Result<GraphBatch> {
    batch
        .iter()
        .map(|s| {
            s.validate()?;
            let (features, _) = layer_forward(s, params, cook)?;
            Ok(SceneGraph {
                features,
                neighbors: s.neighbors.clone(),
                labels: s.labels.clone(),
            })
        })
        .collect()
}

/// Activations of a full block stack, kept for [`run_blocks_backward`].
#[derive(Debug, Clone)]
pub struct BlocksTape {
    neighbors: Vec<Vec<Vec<usize>>>,
    /// `[block][scene]`
    layers: Vec<Vec<LayerTape>>,
    /// Layer outputs before scaling, `[block][scene]`.
    pre_scale: Vec<Vec<Matrix>>,
    scales: Option<Vec<Vec<NodeScale>>>,
}

impl BlocksTape {
    pub fn scales(&self) -> Option<&[Vec<NodeScale>]> {
        self.scales.as_deref()
    }
}

/// `L` blocks of (message passing, TF-l-IDF). `tfidf = None` bypasses the
/// reweighting; `cook = None` uses unit message weights.
pub fn run_blocks(
    batch: &[SceneGraph],
    layers: &[LayerParams],
    tfidf: Option<&TfIdfParams>,
    cook: Option<&CookMatrix>,
) -> Result<(GraphBatch, BlocksTape)> {
    if layers.is_empty() {
        return Err(Error::Config("at least one message-passing block is required".into()));
    }
    for s in batch {
        s.validate()?;
    }
    let scales = match tfidf {
        Some(p) if !batch.is_empty() => {
            let labels: Vec<&[usize]> = batch.iter().map(|s| s.labels.as_slice()).collect();
            Some(node_scales(&labels, p)?)
        }
        _ => None,
    };
    let mut current: Vec<Matrix> = batch.iter().map(|s| s.features.clone()).collect();
    let mut tape = BlocksTape {
        neighbors: batch.iter().map(|s| s.neighbors.clone()).collect(),
        layers: Vec::with_capacity(layers.len()),
        pre_scale: Vec::with_capacity(layers.len()),
        scales,
    };
    for params in layers {
        let mut block_tapes = Vec::with_capacity(batch.len());
        let mut block_pre = Vec::with_capacity(batch.len());
        let mut next = Vec::with_capacity(batch.len());
        for (b, s) in batch.iter().enumerate() {
            let graph = SceneGraph {
                features: core::mem::replace(&mut current[b], Matrix::zeros(0, 0)),
                neighbors: s.neighbors.clone(),
                labels: s.labels.clone(),
            };
            let (y, lt) = layer_forward(&graph, params, cook)?;
            let mut out = y.clone();
            if let Some(sc) = &tape.scales {
                for (u, ns) in sc[b].iter().enumerate() {
                    out.row_mut(u).iter_mut().for_each(|x| *x *= ns.scale);
                }
            }
            block_tapes.push(lt);
            block_pre.push(y);
            next.push(out);
        }
        tape.layers.push(block_tapes);
        tape.pre_scale.push(block_pre);
        current = next;
    }
    let out = batch
        .iter()
        .zip(current)
        .map(|(s, features)| SceneGraph {
            features,
            neighbors: s.neighbors.clone(),
            labels: s.labels.clone(),
        })
        .collect();
    Ok((out, tape))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlocksGrads {
    pub inputs: Vec<Matrix>,
    pub layers: Vec<LayerGrads>,
    pub epsilon: f64,
    pub gamma: f64,
}

pub fn run_blocks_backward(tape: &BlocksTape, layers: &[LayerParams], g_out: Vec<Matrix>) -> Result<BlocksGrads> {
    if layers.len() != tape.layers.len() {
        return Err(Error::Shape("layer count differs from the forward pass".into()));
    }
    if g_out.len() != tape.neighbors.len() {
        return Err(Error::Shape("gradient batch size differs from the forward pass".into()));
    }
    let mut grads = BlocksGrads {
        inputs: Vec::new(),
        layers: layers.iter().map(|l| LayerGrads::zeros(l.dim())).collect(),
        epsilon: 0.0,
        gamma: 0.0,
    };
    let mut g = g_out;
    for l in (0..layers.len()).rev() {
        for (b, gb) in g.iter_mut().enumerate() {
            if gb.rows != tape.pre_scale[l][b].rows || gb.cols != tape.pre_scale[l][b].cols {
                return Err(Error::Shape(format!("gradient for scene {b} has the wrong shape")));
            }
            if let Some(sc) = &tape.scales {
                let y = &tape.pre_scale[l][b];
                for (u, ns) in sc[b].iter().enumerate() {
                    let gy = math::dot(gb.row(u), y.row(u));
                    grads.epsilon += gy * ns.d_epsilon;
                    grads.gamma += gy * ns.d_gamma;
                    gb.row_mut(u).iter_mut().for_each(|x| *x *= ns.scale);
                }
            }
            *gb = layer_backward(&tape.layers[l][b], &tape.neighbors[b], &layers[l], gb, &mut grads.layers[l]);
        }
    }
    grads.inputs = g;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: &[Vec<f64>], w_att: &[f64]) -> LayerParams {
        LayerParams {
            w: Matrix::from_rows(w).unwrap(),
            w_att: w_att.to_vec(),
            activation: Activation::Relu,
        }
    }

    fn pair_graph(z: &[Vec<f64>], labels: &[usize]) -> SceneGraph {
        SceneGraph {
            features: Matrix::from_rows(z).unwrap(),
            neighbors: (0..z.len()).map(|u| (0..z.len()).filter(|&v| v != u).collect()).collect(),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn attention_examples() {
        let w = [1.0, -0.5];
        assert_eq!(attention(&[0.3, 0.2], &[0.3, 0.2], &w).unwrap(), 0.5);
        let a = attention(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((a - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(attention(&[1.0], &[1.0, 2.0], &w).is_err());
        assert!(attention(&[f64::NAN, 0.0], &[1.0, 2.0], &w).is_err());
    }

    #[test]
    fn hand_evaluated_two_node_update() {
        // z0 = (1, 0), z1 = (0, 2); W = [[1, 2], [0, 1]]; w_att = (1, 0)
        let p = layer(&[vec![1.0, 2.0], vec![0.0, 1.0]], &[1.0, 0.0]);
        let g = pair_graph(&[vec![1.0, 0.0], vec![0.0, 2.0]], &[0, 1]);
        let mut cook = CookMatrix::ones(2);
        cook.values[0][1] = 0.5;
        cook.values[1][0] = 0.25;
        let out = node_update(&[g], &p, Some(&cook)).unwrap();
        let e = core::f64::consts::E;
        let a01 = e / (e + 1.0);
        let a10 = 1.0 / (e + 1.0);
        // W z1 = (4, 2); W z0 = (1, 0)
        let h0 = [1.0 + 0.5 * a01 * 4.0, 0.5 * a01 * 2.0];
        let h1 = [0.25 * a10 * 1.0, 2.0];
        let want = [[1.0 + h0[0], h0[1]], [h1[0], 2.0 + h1[1]]];
        for u in 0..2 {
            for k in 0..2 {
                assert!((out[0].features.get(u, k) - want[u][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_zero_node_stays_zero() {
        let p = layer(&[vec![1.0, 2.0], vec![3.0, 1.0]], &[1.0, 1.0]);
        let g = SceneGraph {
            features: Matrix::zeros(1, 2),
            neighbors: vec![vec![]],
            labels: vec![0],
        };
        let out = node_update(&[g], &p, None).unwrap();
        assert_eq!(out[0].features.data, vec![0.0, 0.0]);
    }

    #[test]
    fn self_loops_rejected() {
        let p = layer(&[vec![1.0]], &[1.0]);
        let g = SceneGraph {
            features: Matrix::zeros(1, 1),
            neighbors: vec![vec![0]],
            labels: vec![0],
        };
        assert!(node_update(&[g], &p, None).is_err());
    }

    #[test]
    fn cook_vocabulary_mismatch() {
        let p = layer(&[vec![1.0]], &[1.0]);
        let g = pair_graph(&[vec![1.0], vec![2.0]], &[0, 3]);
        assert!(matches!(node_update(&[g], &p, Some(&CookMatrix::ones(2))), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn zero_cook_suppresses_messages() {
        let p = layer(&[vec![1.0, 2.0], vec![3.0, 1.0]], &[0.3, -1.0]);
        let g = pair_graph(&[vec![1.0, -2.0], vec![0.5, 2.0]], &[0, 1]);
        let zero = CookMatrix {
            values: vec![vec![0.0; 2]; 2],
            mode: crate::cook::CookMode::Indicator,
            observed: vec![true; 2],
        };
        let out = node_update(std::slice::from_ref(&g), &p, Some(&zero)).unwrap();
        for i in 0..4 {
            let z = g.features.data[i];
            assert_eq!(out[0].features.data[i], z + z.max(0.0));
        }
    }

    #[test]
    fn knn_topology() {
        let b = |x: f64| BoundingBox::new(x, 0.0, x + 0.1, 0.1).unwrap();
        let nb = build_neighbors(&[b(0.0), b(0.2), b(0.5), b(0.9)], Topology::KNearest(1));
        assert_eq!(nb, vec![vec![1], vec![0], vec![1], vec![2]]);
        let full = build_neighbors(&[b(0.0), b(0.2), b(0.5)], Topology::Complete);
        assert_eq!(full[1], vec![0, 2]);
    }

    #[test]
    fn empty_layer_stack_rejected() {
        let g = pair_graph(&[vec![1.0], vec![2.0]], &[0, 1]);
        assert!(run_blocks(&[g], &[], None, None).is_err());
    }
}
