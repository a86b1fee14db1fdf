//! Define-then-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in topological order (every node only references
//! earlier nodes), so the graph is acyclic by construction. Parameters are
//! referenced by name and bound from a [`ParamSet`] at forward time; inputs
//! are bound by name per evaluation. All tensors carry a leading batch axis
//! except losses, which reduce to shape `[1]`.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvDims};
use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Lower clamp for probabilities inside log losses. Chosen so that
/// `1 / p` stays finite and the sigmoid/softmax chain rule recovers `p - y`.
const PROB_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input(String),
    Parameter(String),
    /// `x [B, in] · weightᵀ [in, out] + bias [out]`
    Affine { x: NodeId, weight: NodeId, bias: NodeId },
    /// Valid (unpadded) 1-D convolution of `[B, C, L]` with `[F, C, K]` weights.
    Conv1d { x: NodeId, weight: NodeId, bias: NodeId, stride: usize },
    MaxPool { x: NodeId, width: usize, stride: usize },
    AvgPool { x: NodeId, width: usize, stride: usize },
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    /// Softmax over the last axis.
    Softmax(NodeId),
    /// Inverted dropout; identity outside training mode.
    Dropout { x: NodeId, rate: f64 },
    Flatten(NodeId),
    /// Reshape the per-sample extents, keeping the batch axis.
    Reshape { x: NodeId, shape: Vec<usize> },
    /// Mean over the last axis: `[B, C, L] -> [B, C]`.
    TemporalMean(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Euclidean norm of `a - b` over all entries.
    L2Distance(NodeId, NodeId),
    /// Mean negative log-likelihood of class indices `targets [B]` under `probs [B, K]`.
    CrossEntropy { probs: NodeId, targets: NodeId },
    /// Mean binary cross-entropy of `probs` against `targets` in `[0, 1]`.
    Bce { probs: NodeId, targets: NodeId },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Parameter(_) => "parameter",
            Op::Affine { .. } => "affine",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool { .. } => "maxpool",
            Op::AvgPool { .. } => "avgpool",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Softmax(_) => "softmax",
            Op::Dropout { .. } => "dropout",
            Op::Flatten(_) => "flatten",
            Op::Reshape { .. } => "reshape",
            Op::TemporalMean(_) => "temporal-mean",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::L2Distance(..) => "l2-distance",
            Op::CrossEntropy { .. } => "cross-entropy-loss",
            Op::Bce { .. } => "bce-loss",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) | Op::Parameter(_) => vec![],
            Op::Affine { x, weight, bias } | Op::Conv1d { x, weight, bias, .. } => {
                vec![x, weight, bias]
            }
            Op::MaxPool { x, .. }
            | Op::AvgPool { x, .. }
            | Op::Dropout { x, .. }
            | Op::Reshape { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Softplus(x)
            | Op::Softmax(x)
            | Op::Flatten(x)
            | Op::TemporalMean(x)
            | Op::Scale(x, _) => vec![x],
            Op::Add(a, b) | Op::L2Distance(a, b) => vec![a, b],
            Op::CrossEntropy { probs, targets } | Op::Bce { probs, targets } => {
                vec![probs, targets]
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Argmax(Vec<usize>),
    Mask(Vec<f64>),
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    ops: Vec<Op>,
    inputs: IndexMap<String, NodeId>,
    outputs: IndexMap<String, NodeId>,
    training: bool,
    dropout_seed: u64,
    input_grads: bool,
    values: Vec<Option<Tensor>>,
    aux: Vec<Aux>,
    grads: Vec<Option<Tensor>>,
    evaluated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            input_grads: true,
            ..Default::default()
        }
    }

    fn push(&mut self, op: Op) -> NodeId {
        debug_assert!(op.inputs().iter().all(|&i| i < self.ops.len()));
        self.ops.push(op);
        self.evaluated = false;
        self.ops.len() - 1
    }

    /// Declares (or returns the existing) named input node.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(Op::Input(name.to_string()));
        self.inputs.insert(name.to_string(), id);
        id
    }

    pub fn param(&mut self, name: &str) -> NodeId {
        self.push(Op::Parameter(name.to_string()))
    }

    pub fn affine(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::Affine { x, weight, bias })
    }

    pub fn conv1d(&mut self, x: NodeId, weight: NodeId, bias: NodeId, stride: usize) -> NodeId {
        self.push(Op::Conv1d { x, weight, bias, stride })
    }

    pub fn maxpool(&mut self, x: NodeId, width: usize, stride: usize) -> NodeId {
        self.push(Op::MaxPool { x, width, stride })
    }

    pub fn avgpool(&mut self, x: NodeId, width: usize, stride: usize) -> NodeId {
        self.push(Op::AvgPool { x, width, stride })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softplus(x))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softmax(x))
    }

    pub fn dropout(&mut self, x: NodeId, rate: f64) -> NodeId {
        self.push(Op::Dropout { x, rate })
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Flatten(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        self.push(Op::Reshape { x, shape })
    }

    pub fn temporal_mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::TemporalMean(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(x, factor))
    }

    pub fn l2_distance(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::L2Distance(a, b))
    }

    pub fn cross_entropy(&mut self, probs: NodeId, targets: NodeId) -> NodeId {
        self.push(Op::CrossEntropy { probs, targets })
    }

    pub fn bce(&mut self, probs: NodeId, targets: NodeId) -> NodeId {
        self.push(Op::Bce { probs, targets })
    }

    /// Registers a named output.
    pub fn mark_output(&mut self, name: &str, node: NodeId) {
        self.outputs.insert(name.to_string(), node);
    }

    pub fn output_node(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Names of parameters referenced by the graph, in first-use order.
    pub fn param_names(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for op in &self.ops {
            if let Op::Parameter(name) = op {
                if !seen.contains(&name.as_str()) {
                    seen.push(name.as_str());
                }
            }
        }
        seen
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.keys().map(String::as_str)
    }

    /// True when the named input is only consumed as a loss target.
    pub fn is_target_input(&self, name: &str) -> bool {
        let Some(&id) = self.inputs.get(name) else { return false };
        let mut used = false;
        for op in &self.ops {
            match *op {
                Op::CrossEntropy { probs, targets } | Op::Bce { probs, targets } => {
                    if probs == id {
                        return false;
                    }
                    used |= targets == id;
                }
                ref other if other.inputs().contains(&id) => return false,
                _ => {}
            }
        }
        used
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_dropout_seed(&mut self, seed: u64) {
        self.dropout_seed = seed;
    }

    /// Whether backward computes gradients for input nodes. On by default;
    /// training loops turn it off to skip the data gradient.
    pub fn set_input_grads(&mut self, enabled: bool) {
        self.input_grads = enabled;
    }

    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.values.get(node).and_then(Option::as_ref)
    }

    pub fn output(&self, name: &str) -> Option<&Tensor> {
        self.output_node(name).and_then(|n| self.value(n))
    }

    /// Gradient of the last backward pass at `node`.
    pub fn grad(&self, node: NodeId) -> Option<&Tensor> {
        self.grads.get(node).and_then(Option::as_ref)
    }

    pub fn input_grad(&self, name: &str) -> Option<&Tensor> {
        self.inputs.get(name).and_then(|&n| self.grad(n))
    }

    /// Evaluates every node.
    pub fn forward(&mut self, params: &ParamSet, inputs: Vec<(&str, Tensor)>) -> Result<()> {
        self.evaluated = false;
        self.grads.clear();
        let mut bound: HashMap<&str, Tensor> = inputs.into_iter().collect();
        let n = self.ops.len();
        let mut values: Vec<Option<Tensor>> = Vec::with_capacity(n);
        let mut aux = Vec::with_capacity(n);
        for id in 0..n {
            let (value, extra) = self.eval_node(id, &values, params, &mut bound)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    node: id,
                    op: self.ops[id].name(),
                });
            }
            values.push(Some(value));
            aux.push(extra);
        }
        self.values = values;
        self.aux = aux;
        self.evaluated = true;
        Ok(())
    }

    /// Convenience: forward then return the named outputs.
    pub fn eval(
        &mut self,
        params: &ParamSet,
        inputs: Vec<(&str, Tensor)>,
    ) -> Result<IndexMap<String, Tensor>> {
        self.forward(params, inputs)?;
        Ok(self
            .outputs
            .iter()
            .map(|(k, &v)| (k.clone(), self.values[v].clone().expect("evaluated")))
            .collect())
    }

    fn mismatch(&self, id: NodeId, detail: String) -> Error {
        Error::ShapeMismatch {
            node: id,
            op: self.ops[id].name(),
            detail,
        }
    }

    fn eval_node(
        &self,
        id: NodeId,
        values: &[Option<Tensor>],
        params: &ParamSet,
        bound: &mut HashMap<&str, Tensor>,
    ) -> Result<(Tensor, Aux)> {
        let v = |n: NodeId| values[n].as_ref().expect("topological order");
        let out = match &self.ops[id] {
            Op::Input(name) => bound
                .remove(name.as_str())
                .ok_or_else(|| Error::UnboundInput(name.clone()))?,
            Op::Parameter(name) => params
                .get(name)
                .cloned()
                .ok_or_else(|| Error::MissingParameter(name.clone()))?,
            &Op::Affine { x, weight, bias } => {
                let (x, w, b) = (v(x), v(weight), v(bias));
                if x.shape().len() != 2 || w.shape().len() != 2 || b.shape().len() != 1 {
                    return Err(self.mismatch(
                        id,
                        format!("expected x [B,in], w [out,in], b [out]; got {:?} {:?} {:?}", x.shape(), w.shape(), b.shape()),
                    ));
                }
                let (batch, inp) = (x.shape()[0], x.shape()[1]);
                let out = w.shape()[0];
                if w.shape()[1] != inp || b.shape()[0] != out {
                    return Err(self.mismatch(
                        id,
                        format!("x {:?} incompatible with w {:?} / b {:?}", x.shape(), w.shape(), b.shape()),
                    ));
                }
                let y = kernels::affine_forward(x.data(), w.data(), b.data(), batch, inp, out);
                Tensor::new(vec![batch, out], y)
            }
            &Op::Conv1d { x, weight, bias, stride } => {
                let (x, w, b) = (v(x), v(weight), v(bias));
                let dims = self.conv_dims(id, x, w, b, stride)?;
                let y = kernels::conv1d_forward(x.data(), w.data(), b.data(), dims);
                Tensor::new(vec![dims.batch, dims.filters, dims.out_len()], y)
            }
            &Op::MaxPool { x, width, stride } => {
                let x = v(x);
                let (rows, len, mut shape) = self.pool_dims(id, x, width, stride)?;
                let (y, arg) = kernels::maxpool_forward(x.data(), rows, len, width, stride);
                *shape.last_mut().unwrap() = (len - width) / stride + 1;
                return Ok((Tensor::new(shape, y), Aux::Argmax(arg)));
            }
            &Op::AvgPool { x, width, stride } => {
                let x = v(x);
                let (rows, len, mut shape) = self.pool_dims(id, x, width, stride)?;
                let y = kernels::avgpool_forward(x.data(), rows, len, width, stride);
                *shape.last_mut().unwrap() = (len - width) / stride + 1;
                Tensor::new(shape, y)
            }
            &Op::Relu(x) => map(v(x), |a| a.max(0.0)),
            &Op::Sigmoid(x) => map(v(x), sigmoid),
            &Op::Softplus(x) => map(v(x), softplus),
            &Op::Softmax(x) => {
                let x = v(x);
                let k = *x.shape().last().unwrap_or(&1);
                let mut y = x.data().to_vec();
                for row in y.chunks_mut(k) {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for a in row.iter_mut() {
                        *a = (*a - m).exp();
                        s += *a;
                    }
                    for a in row.iter_mut() {
                        *a /= s;
                    }
                }
                Tensor::new(x.shape().to_vec(), y)
            }
            &Op::Dropout { x, rate } => {
                let x = v(x);
                if !self.training || rate == 0.0 {
                    x.clone()
                } else {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(self.mismatch(id, format!("dropout rate {rate} outside [0,1)")));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        self.dropout_seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    );
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    let y = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                    return Ok((Tensor::new(x.shape().to_vec(), y), Aux::Mask(mask)));
                }
            }
            &Op::Flatten(x) => {
                let x = v(x);
                let b = x.batch();
                let rest = x.len() / b.max(1);
                x.clone().reshaped(vec![b, rest])
            }
            Op::Reshape { x, shape } => {
                let x = v(*x);
                let b = x.batch();
                if shape.iter().product::<usize>() * b != x.len() {
                    return Err(self.mismatch(id, format!("cannot reshape {:?} to [{b}, {shape:?}]", x.shape())));
                }
                let mut full = vec![b];
                full.extend_from_slice(shape);
                x.clone().reshaped(full)
            }
            &Op::TemporalMean(x) => {
                let x = v(x);
                if x.shape().len() < 2 {
                    return Err(self.mismatch(id, format!("need rank >= 2, got {:?}", x.shape())));
                }
                let len = *x.shape().last().unwrap();
                let inv = 1.0 / len as f64;
                let y = x.data().chunks(len).map(|r| r.iter().sum::<f64>() * inv).collect();
                Tensor::new(x.shape()[..x.shape().len() - 1].to_vec(), y)
            }
            &Op::Add(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.shape() != b.shape() {
                    return Err(self.mismatch(id, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let y = a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect();
                Tensor::new(a.shape().to_vec(), y)
            }
            &Op::Scale(x, c) => map(v(x), |a| c * a),
            &Op::L2Distance(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.len() != b.len() {
                    return Err(self.mismatch(id, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let s: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum();
                Tensor::scalar(s.sqrt())
            }
            &Op::CrossEntropy { probs, targets } => {
                let (p, t) = (v(probs), v(targets));
                let k = self.check_ce(id, p, t)?;
                let batch = t.len();
                let mut loss = 0.0;
                for (b, &c) in t.data().iter().enumerate() {
                    loss -= p.data()[b * k + c as usize].max(PROB_FLOOR).ln();
                }
                Tensor::scalar(loss / batch as f64)
            }
            &Op::Bce { probs, targets } => {
                let (p, t) = (v(probs), v(targets));
                if p.len() != t.len() || p.is_empty() {
                    return Err(self.mismatch(id, format!("probs {:?} vs targets {:?}", p.shape(), t.shape())));
                }
                let mut loss = 0.0;
                for (&pi, &ti) in p.data().iter().zip(t.data()) {
                    if ti > 0.0 {
                        loss -= ti * pi.max(PROB_FLOOR).ln();
                    }
                    if ti < 1.0 {
                        loss -= (1.0 - ti) * (1.0 - pi).max(PROB_FLOOR).ln();
                    }
                }
                Tensor::scalar(loss / p.len() as f64)
            }
        };
        Ok((out, Aux::None))
    }

    fn conv_dims(&self, id: NodeId, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<ConvDims> {
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 3 || ws.len() != 3 || b.shape() != [ws[0]] || xs[1] != ws[1] || xs[2] < ws[2] || stride == 0 {
            return Err(self.mismatch(
                id,
                format!("x {:?}, w {:?}, b {:?}, stride {stride}", xs, ws, b.shape()),
            ));
        }
        Ok(ConvDims {
            batch: xs[0],
            channels: xs[1],
            length: xs[2],
            filters: ws[0],
            width: ws[2],
            stride,
        })
    }

    fn pool_dims(&self, id: NodeId, x: &Tensor, width: usize, stride: usize) -> Result<(usize, usize, Vec<usize>)> {
        let shape = x.shape().to_vec();
        let len = *shape.last().unwrap_or(&0);
        if shape.len() < 2 || width == 0 || stride == 0 || len < width {
            return Err(self.mismatch(id, format!("pool width {width} stride {stride} on {shape:?}")));
        }
        Ok((x.len() / len, len, shape))
    }

    fn check_ce(&self, id: NodeId, p: &Tensor, t: &Tensor) -> Result<usize> {
        if p.shape().len() != 2 || t.len() != p.shape()[0] || t.is_empty() {
            return Err(self.mismatch(id, format!("probs {:?} vs targets {:?}", p.shape(), t.shape())));
        }
        let k = p.shape()[1];
        if t.data().iter().any(|&c| c < 0.0 || c.fract() != 0.0 || c as usize >= k) {
            return Err(self.mismatch(id, format!("targets must be class indices in 0..{k}")));
        }
        Ok(k)
    }

    fn needs_grad(&self) -> Vec<bool> {
        let mut needs = vec![false; self.ops.len()];
        for (id, op) in self.ops.iter().enumerate() {
            needs[id] = match op {
                Op::Parameter(_) => true,
                Op::Input(_) => self.input_grads,
                other => other.inputs().iter().any(|&i| needs[i]),
            };
        }
        needs
    }

    /// Back-propagates from the scalar `loss` node. Every node receives a
    /// gradient tensor; nodes the loss does not depend on get zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let lv = self.values[loss].as_ref().expect("evaluated");
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss {
                node: loss,
                shape: lv.shape().to_vec(),
            });
        }
        let needs = self.needs_grad();
        let mut grads: Vec<Tensor> = self
            .values
            .iter()
            .map(|v| Tensor::zeros(v.as_ref().expect("evaluated").shape()))
            .collect();
        grads[loss].data_mut()[0] = 1.0;

        for id in (0..=loss).rev() {
            if !needs[id] {
                continue;
            }
            let g = std::mem::replace(&mut grads[id], Tensor::zeros(&[]));
            self.backprop_node(id, &g, &needs, &mut grads);
            grads[id] = g;
        }
        self.grads = grads.into_iter().map(Some).collect();
        Ok(())
    }

    fn backprop_node(&self, id: NodeId, g: &Tensor, needs: &[bool], grads: &mut [Tensor]) {
        let val = |n: NodeId| self.values[n].as_ref().expect("evaluated");
        let gd = g.data();
        match &self.ops[id] {
            Op::Input(_) | Op::Parameter(_) => {}
            &Op::Affine { x, weight, bias } => {
                let (xv, wv) = (val(x), val(weight));
                let (batch, inp, out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                let [gx, gw, gb] = grads_mut3(grads, x, weight, bias);
                kernels::affine_backward(
                    xv.data(),
                    wv.data(),
                    gd,
                    batch,
                    inp,
                    out,
                    needs[x].then(|| gx.data_mut()),
                    needs[weight].then(|| gw.data_mut()),
                    needs[bias].then(|| gb.data_mut()),
                );
            }
            &Op::Conv1d { x, weight, bias, stride } => {
                let (xv, wv) = (val(x), val(weight));
                let dims = ConvDims {
                    batch: xv.shape()[0],
                    channels: xv.shape()[1],
                    length: xv.shape()[2],
                    filters: wv.shape()[0],
                    width: wv.shape()[2],
                    stride,
                };
                let [gx, gw, gb] = grads_mut3(grads, x, weight, bias);
                kernels::conv1d_backward(
                    xv.data(),
                    wv.data(),
                    gd,
                    dims,
                    needs[x].then(|| gx.data_mut()),
                    needs[weight].then(|| gw.data_mut()),
                    needs[bias].then(|| gb.data_mut()),
                );
            }
            &Op::MaxPool { x, .. } => {
                if let Aux::Argmax(arg) = &self.aux[id] {
                    let gx = grads[x].data_mut();
                    for (&i, &gi) in arg.iter().zip(gd) {
                        gx[i] += gi;
                    }
                }
            }
            &Op::AvgPool { x, width, stride } => {
                let xv = val(x);
                let len = *xv.shape().last().unwrap();
                kernels::avgpool_backward(gd, grads[x].data_mut(), xv.len() / len, len, width, stride);
            }
            &Op::Relu(x) => {
                let xv = val(x);
                for ((gx, &a), &gi) in grads[x].data_mut().iter_mut().zip(xv.data()).zip(gd) {
                    if a > 0.0 {
                        *gx += gi;
                    }
                }
            }
            &Op::Sigmoid(x) => {
                let y = val(id);
                for ((gx, &s), &gi) in grads[x].data_mut().iter_mut().zip(y.data()).zip(gd) {
                    *gx += gi * s * (1.0 - s);
                }
            }
            &Op::Softplus(x) => {
                let xv = val(x);
                for ((gx, &a), &gi) in grads[x].data_mut().iter_mut().zip(xv.data()).zip(gd) {
                    *gx += gi * sigmoid(a);
                }
            }
            &Op::Softmax(x) => {
                let y = val(id);
                let k = *y.shape().last().unwrap();
                let gx = grads[x].data_mut();
                for ((yr, gr), gxr) in y.data().chunks(k).zip(gd.chunks(k)).zip(gx.chunks_mut(k)) {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        gxr[j] += yr[j] * (gr[j] - s);
                    }
                }
            }
            &Op::Dropout { x, .. } => match &self.aux[id] {
                Aux::Mask(mask) => {
                    for ((gx, &m), &gi) in grads[x].data_mut().iter_mut().zip(mask).zip(gd) {
                        *gx += gi * m;
                    }
                }
                _ => grads[x].add_assign_data(gd),
            },
            &Op::Flatten(x) | &Op::Reshape { x, .. } => grads[x].add_assign_data(gd),
            &Op::TemporalMean(x) => {
                let len = *val(x).shape().last().unwrap();
                let inv = 1.0 / len as f64;
                for (row, &gi) in grads[x].data_mut().chunks_mut(len).zip(gd) {
                    for a in row {
                        *a += gi * inv;
                    }
                }
            }
            &Op::Add(a, b) => {
                grads[a].add_assign_data(gd);
                grads[b].add_assign_data(gd);
            }
            &Op::Scale(x, c) => {
                for (gx, &gi) in grads[x].data_mut().iter_mut().zip(gd) {
                    *gx += c * gi;
                }
            }
            &Op::L2Distance(a, b) => {
                let d = val(id).item();
                if d > 0.0 {
                    let (av, bv) = (val(a).data().to_vec(), val(b).data().to_vec());
                    let f = gd[0] / d;
                    for (i, (p, q)) in av.iter().zip(&bv).enumerate() {
                        grads[a].data_mut()[i] += f * (p - q);
                        grads[b].data_mut()[i] -= f * (p - q);
                    }
                }
            }
            &Op::CrossEntropy { probs, targets } => {
                let (p, t) = (val(probs), val(targets));
                let k = p.shape()[1];
                let batch = t.len() as f64;
                let gp = grads[probs].data_mut();
                for (b, &c) in t.data().iter().enumerate() {
                    let i = b * k + c as usize;
                    gp[i] -= gd[0] / (batch * p.data()[i].max(PROB_FLOOR));
                }
            }
            &Op::Bce { probs, targets } => {
                let (p, t) = (val(probs), val(targets));
                let n = p.len() as f64;
                let gp = grads[probs].data_mut();
                for ((gpi, &pi), &ti) in gp.iter_mut().zip(p.data()).zip(t.data()) {
                    let mut d = 0.0;
                    if ti > 0.0 {
                        d -= ti / pi.max(PROB_FLOOR);
                    }
                    if ti < 1.0 {
                        d += (1.0 - ti) / (1.0 - pi).max(PROB_FLOOR);
                    }
                    *gpi += gd[0] * d / n;
                }
            }
        }
    }

    /// Gradients of every parameter after `backward`, summed over repeated uses.
    pub fn param_grads(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (id, op) in self.ops.iter().enumerate() {
            if let Op::Parameter(name) = op {
                let Some(g) = self.grad(id) else { continue };
                match out.get_mut(name) {
                    Some(acc) => acc.add_assign(g),
                    None => out.insert(name.clone(), g.clone()),
                }
            }
        }
        out
    }
}

impl Tensor {
    fn add_assign_data(&mut self, other: &[f64]) {
        for (a, b) in self.data_mut().iter_mut().zip(other) {
            *a += b;
        }
    }
}

fn grads_mut3(grads: &mut [Tensor], a: NodeId, b: NodeId, c: NodeId) -> [&mut Tensor; 3] {
    grads
        .get_disjoint_mut([a, b, c])
        .expect("affine/conv operands must be distinct nodes")
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&a| f(a)).collect())
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(a: f64) -> f64 {
    if a > 30.0 {
        a + (-a).exp()
    } else {
        a.max(0.0) + (-a.abs()).exp().ln_1p()
    }
}
