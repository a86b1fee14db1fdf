//! Seeded random graphs over the whole op set, for gradient checking.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check_gradients_with, GradCheckOptions, Graph, NodeId, ParamSet, Tensor};
use crate::error::Result;
use crate::rng::rng;

pub struct GraphCase {
    pub graph: Graph,
    pub params: ParamSet,
    pub inputs: Vec<(String, Tensor)>,
    pub loss: NodeId,
}

impl GraphCase {
    /// Names of the ops present in the graph.
    pub fn op_names(&self) -> BTreeSet<&'static str> {
        self.graph.ops().iter().map(|o| o.name()).collect()
    }

    /// Max relative gradient error over parameters and non-target inputs.
    pub fn check(&mut self, epsilon: f64) -> Result<f64> {
        let inputs: Vec<(&str, Tensor)> = self.inputs.iter().map(|(k, t)| (k.as_str(), t.clone())).collect();
        let opts = GradCheckOptions {
            epsilon,
            include_inputs: true,
            ..Default::default()
        };
        check_gradients_with(&mut self.graph, &self.params, &inputs, self.loss, &opts)
    }
}

struct Builder {
    g: Graph,
    params: ParamSet,
    inputs: Vec<(String, Tensor)>,
    r: ChaCha8Rng,
    batch: usize,
}

impl Builder {
    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| self.r.random_range(lo..hi)).collect())
    }

    fn param(&mut self, shape: &[usize]) -> NodeId {
        let name = format!("p{}", self.params.len());
        let t = self.uniform(shape, -0.8, 0.8);
        self.params.insert(name.clone(), t);
        self.g.param(&name)
    }

    fn input(&mut self, t: Tensor) -> NodeId {
        let name = format!("in{}", self.inputs.len());
        self.inputs.push((name.clone(), t));
        self.g.input(&name)
    }

    fn activation(&mut self, x: NodeId) -> NodeId {
        match self.r.random_range(0..3) {
            0 => self.g.relu(x),
            1 => self.g.sigmoid(x),
            _ => self.g.softplus(x),
        }
    }

    /// `[B, c, l]` -> conv + activation + optional pool; returns the new extents.
    fn conv_block(&mut self, x: NodeId, c: usize, l: usize) -> (NodeId, usize, usize) {
        let out_c = self.r.random_range(1..=3);
        let k = self.r.random_range(1..=3.min(l));
        let stride = self.r.random_range(1..=2);
        let w = self.param(&[out_c, c, k]);
        let b = self.param(&[out_c]);
        let mut h = self.g.conv1d(x, w, b, stride);
        let mut len = (l - k) / stride + 1;
        h = self.activation(h);
        if len >= 2 && self.r.random_bool(0.7) {
            let width = self.r.random_range(1..=2.min(len));
            let s = self.r.random_range(1..=2);
            h = if self.r.random_bool(0.5) {
                self.g.maxpool(h, width, s)
            } else {
                self.g.avgpool(h, width, s)
            };
            len = (len - width) / s + 1;
        }
        (h, out_c, len)
    }
}

/// A random graph drawn from `seed`: one or two conv blocks on a
/// `[B, C, L]` input, a temporal-mean or flatten/reshape head, dense layers
/// and a sum of one to three losses.
pub fn random_graph_case(seed: u64) -> GraphCase {
    let mut b = Builder {
        g: Graph::new(),
        params: ParamSet::new(),
        inputs: Vec::new(),
        r: rng(seed, 0xF022),
        batch: 0,
    };
    b.batch = b.r.random_range(1..=3);
    let batch = b.batch;
    let c = b.r.random_range(1..=3);
    let l = b.r.random_range(6..=14);
    let x_t = b.uniform(&[batch, c, l], -1.5, 1.5);
    let x = b.input(x_t);

    let (mut h, mut hc, mut hl) = b.conv_block(x, c, l);
    if hl >= 3 && b.r.random_bool(0.5) {
        (h, hc, hl) = b.conv_block(h, hc, hl);
    }
    if b.r.random_bool(0.3) {
        h = b.g.dropout(h, 0.5);
    }
    // residual-style branch on the conv features
    if b.r.random_bool(0.4) {
        let other = b.activation(h);
        let factor = b.r.random_range(-1.0..1.0);
        let s = b.g.scale(other, factor);
        h = b.g.add(h, s);
    }
    let (mut f, mut width) = if b.r.random_bool(0.4) {
        (b.g.temporal_mean(h), hc)
    } else {
        let flat = b.g.flatten(h);
        let n = hc * hl;
        if b.r.random_bool(0.5) {
            let re = b.g.reshape(flat, vec![1, n]);
            let back = b.g.reshape(re, vec![n]);
            (back, n)
        } else {
            (flat, n)
        }
    };
    if b.r.random_bool(0.5) {
        let hidden = b.r.random_range(2..=6);
        let w = b.param(&[hidden, width]);
        let bias = b.param(&[hidden]);
        let a = b.g.affine(f, w, bias);
        f = b.activation(a);
        width = hidden;
    }
    let classes = b.r.random_range(2..=4);
    let w = b.param(&[classes, width]);
    let bias = b.param(&[classes]);
    let logits = b.g.affine(f, w, bias);

    let mut losses = Vec::new();
    let kinds = b.r.random_range(1u32..8);
    if kinds & 1 != 0 {
        let p = b.g.softmax(logits);
        let t: Vec<f64> = (0..batch).map(|_| b.r.random_range(0..classes) as f64).collect();
        let t = b.input(Tensor::new(vec![batch], t));
        losses.push(b.g.cross_entropy(p, t));
    }
    if kinds & 2 != 0 {
        let p = b.g.sigmoid(logits);
        let t = b.uniform(&[batch, classes], 0.0, 1.0);
        let t = b.input(t);
        losses.push(b.g.bce(p, t));
    }
    if kinds & 4 != 0 {
        let reference = b.uniform(&[batch, classes], -1.0, 1.0);
        let reference = b.input(reference);
        losses.push(b.g.l2_distance(logits, reference));
    }
    let mut loss = losses[0];
    for &extra in &losses[1..] {
        let factor = b.r.random_range(0.1..2.0);
        let s = b.g.scale(extra, factor);
        loss = b.g.add(loss, s);
    }
    GraphCase {
        graph: b.g,
        params: b.params,
        inputs: b.inputs,
        loss,
    }
}
