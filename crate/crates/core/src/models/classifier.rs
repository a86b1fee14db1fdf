use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::kaiming_uniform;
use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::data::{batch_tensor, HmMatrix, NUM_BINS, NUM_HMS};
use crate::error::{Error, Result};
use crate::rng::rng;

/// Rows per forward pass when scoring many inputs.
pub(crate) const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Original,
    Avgpool,
    Strided,
    Linear,
}

impl ArchKind {
    pub const ALL: [ArchKind; 4] = [ArchKind::Original, ArchKind::Avgpool, ArchKind::Strided, ArchKind::Linear];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Original => "original",
            ArchKind::Avgpool => "avgpool",
            ArchKind::Strided => "strided",
            ArchKind::Linear => "linear",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" | "maxpool" => Ok(ArchKind::Original),
            "avgpool" | "averagepool" => Ok(ArchKind::Avgpool),
            "strided" => Ok(ArchKind::Strided),
            "linear" => Ok(ArchKind::Linear),
            other => Err(Error::config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Fan-in scaled uniform weights, zero biases. The linear architecture
    /// starts from all zeros under this scheme.
    Kaiming,
    /// Everything zero.
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub conv_filters: usize,
    pub kernel_width: usize,
    pub pool_width: usize,
    pub pool_stride: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub strided_kernel_width: usize,
    pub strided_stride: usize,
    pub init: InitScheme,
}

impl ArchSpec {
    pub fn new(kind: ArchKind) -> Self {
        ArchSpec {
            kind,
            conv_filters: 50,
            kernel_width: 10,
            pool_width: 5,
            pool_stride: 5,
            hidden: vec![625, 125],
            dropout: 0.5,
            strided_kernel_width: 10,
            strided_stride: 11,
            init: InitScheme::Kaiming,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.kind == ArchKind::Linear {
            return Ok(());
        }
        let positive = [
            self.conv_filters,
            self.kernel_width,
            self.pool_width,
            self.pool_stride,
            self.strided_kernel_width,
            self.strided_stride,
        ];
        if positive.contains(&0) || self.hidden.contains(&0) {
            return Err(Error::config("architecture extents must be positive"));
        }
        if self.conv_out_len() == 0 {
            return Err(Error::config("convolution/pooling leaves no temporal outputs"));
        }
        Ok(())
    }

    /// Temporal length after the convolution/pooling stage.
    pub fn conv_out_len(&self) -> usize {
        let out = |len: usize, w: usize, s: usize| if len >= w { (len - w) / s + 1 } else { 0 };
        match self.kind {
            ArchKind::Original | ArchKind::Avgpool => {
                out(out(NUM_BINS, self.kernel_width, 1), self.pool_width, self.pool_stride)
            }
            ArchKind::Strided => out(NUM_BINS, self.strided_kernel_width, self.strided_stride),
            ArchKind::Linear => 0,
        }
    }

    /// Width of the flattened feature vector feeding the dense stack.
    pub fn flat_features(&self) -> usize {
        match self.kind {
            ArchKind::Linear => NUM_HMS,
            _ => self.conv_filters * self.conv_out_len(),
        }
    }

    /// Parameter names and shapes in creation order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        if self.kind == ArchKind::Linear {
            v.push(("out.weight".into(), vec![2, NUM_HMS]));
            v.push(("out.bias".into(), vec![2]));
            return v;
        }
        let k = if self.kind == ArchKind::Strided {
            self.strided_kernel_width
        } else {
            self.kernel_width
        };
        v.push(("conv.weight".into(), vec![self.conv_filters, NUM_HMS, k]));
        v.push(("conv.bias".into(), vec![self.conv_filters]));
        let mut width = self.flat_features();
        for (i, &h) in self.hidden.iter().enumerate() {
            v.push((format!("fc{}.weight", i + 1), vec![h, width]));
            v.push((format!("fc{}.bias", i + 1), vec![h]));
            width = h;
        }
        v.push(("out.weight".into(), vec![2, width]));
        v.push(("out.bias".into(), vec![2]));
        v
    }

    /// Appends the network to `g`, reading `x` (`[B, 5, 100]`) and returning
    /// the `[B, 2]` softmax node `[p_neg, p_pos]`. Parameter names get `prefix`.
    pub fn append(&self, g: &mut Graph, x: NodeId, prefix: &str) -> NodeId {
        let p = |g: &mut Graph, name: &str| g.param(&format!("{prefix}{name}"));
        let mut h = match self.kind {
            ArchKind::Linear => g.temporal_mean(x),
            kind => {
                let (w, b) = (p(g, "conv.weight"), p(g, "conv.bias"));
                let stride = if kind == ArchKind::Strided { self.strided_stride } else { 1 };
                let c = g.conv1d(x, w, b, stride);
                let mut h = g.relu(c);
                match kind {
                    ArchKind::Original => h = g.maxpool(h, self.pool_width, self.pool_stride),
                    ArchKind::Avgpool => h = g.avgpool(h, self.pool_width, self.pool_stride),
                    _ => {}
                }
                let d = g.dropout(h, self.dropout);
                let mut h = g.flatten(d);
                for i in 1..=self.hidden.len() {
                    let (w, b) = (p(g, &format!("fc{i}.weight")), p(g, &format!("fc{i}.bias")));
                    let a = g.affine(h, w, b);
                    h = g.relu(a);
                }
                h
            }
        };
        let (w, b) = (p(g, "out.weight"), p(g, "out.bias"));
        h = g.affine(h, w, b);
        g.softmax(h)
    }
}

/// A classifier: its architecture, parameters and the seed they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub arch: ArchSpec,
    pub params: ParamSet,
    pub seed: u64,
}

pub fn build_classifier(arch: &ArchSpec, seed: u64) -> Result<Classifier> {
    arch.validate()?;
    let mut r = rng(seed, 0x1417);
    let mut params = ParamSet::new();
    for (name, shape) in arch.param_shapes() {
        let t = if name.ends_with(".bias") || arch.init == InitScheme::Zeros || arch.kind == ArchKind::Linear {
            Tensor::zeros(&shape)
        } else {
            let fan_in = shape[1..].iter().product();
            kaiming_uniform(&mut r, &shape, fan_in)
        };
        params.insert(name, t);
    }
    Ok(Classifier {
        arch: arch.clone(),
        params,
        seed,
    })
}

impl Classifier {
    pub fn count_parameters(&self) -> usize {
        self.params.num_entries()
    }

    /// Inference graph with input `x` and output `probs`; dropout inactive.
    pub fn graph(&self) -> Graph {
        let mut g = Graph::new();
        let x = g.input("x");
        let probs = self.arch.append(&mut g, x, "");
        g.mark_output("probs", probs);
        g.set_input_grads(false);
        g
    }

    /// `[p_neg, p_pos]` for one matrix.
    pub fn predict_proba(&self, x: &HmMatrix) -> Result<[f64; 2]> {
        Ok(self.predict_batch(std::slice::from_ref(x))?[0])
    }

    /// `[p_neg, p_pos]` per input, in input order.
    pub fn predict_batch(&self, xs: &[HmMatrix]) -> Result<Vec<[f64; 2]>> {
        self.predict_refs(xs.iter())
    }

    pub fn predict_refs<'a>(&self, xs: impl IntoIterator<Item = &'a HmMatrix>) -> Result<Vec<[f64; 2]>> {
        let mut g = self.graph();
        let xs: Vec<&HmMatrix> = xs.into_iter().collect();
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(EVAL_CHUNK) {
            out.extend(probs_of(&mut g, &self.params, batch_tensor(chunk.iter().copied()))?);
        }
        Ok(out)
    }

    /// Scores a raw `[B, 5, 100]` tensor (used by visualization probes,
    /// which may leave the non-negative range).
    pub fn predict_tensor(&self, x: Tensor) -> Result<Vec<[f64; 2]>> {
        let mut g = self.graph();
        probs_of(&mut g, &self.params, x)
    }
}

pub(crate) fn probs_of(g: &mut Graph, params: &ParamSet, x: Tensor) -> Result<Vec<[f64; 2]>> {
    g.forward(params, vec![("x", x)])?;
    let p = g.output("probs").expect("classifier graph has probs");
    Ok(p.data().chunks(2).map(|r| [r[0], r[1]]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent per-layer count: conv weights+bias, then each dense layer.
    fn count_oracle(filters: usize, k: usize, temporal: usize, hidden: &[usize]) -> usize {
        let mut total = filters * NUM_HMS * k + filters;
        let mut width = filters * temporal;
        for &h in hidden {
            total += width * h + h;
            width = h;
        }
        total + width * 2 + 2
    }

    #[test]
    fn parameter_counts() {
        let count = |k| build_classifier(&ArchSpec::new(k), 0).unwrap().count_parameters();
        assert_eq!(count(ArchKind::Linear), 12);
        // 91 conv outputs, pooled 5/5 -> 18 steps
        assert_eq!(count_oracle(50, 10, 18, &[625, 125]), 644_177);
        assert_eq!(count(ArchKind::Original), 644_177);
        assert_eq!(count(ArchKind::Avgpool), 644_177);
        // stride 11 over 100 bins -> 9 steps
        assert_eq!(count_oracle(50, 10, 9, &[625, 125]), 362_927);
        assert_eq!(count(ArchKind::Strided), 362_927);
    }

    #[test]
    fn zero_input_gives_half_half() {
        let m = build_classifier(&ArchSpec::new(ArchKind::Original), 3).unwrap();
        assert_eq!(m.predict_proba(&HmMatrix::zeros()).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn zero_init_is_uniform_everywhere() {
        let mut arch = ArchSpec::new(ArchKind::Avgpool);
        arch.init = InitScheme::Zeros;
        let m = build_classifier(&arch, 3).unwrap();
        let x = HmMatrix::from_vec((0..500).map(|i| (i % 7) as f64).collect()).unwrap();
        assert_eq!(m.predict_proba(&x).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_classifier(&ArchSpec::new(ArchKind::Strided), 42).unwrap();
        let b = build_classifier(&ArchSpec::new(ArchKind::Strided), 42).unwrap();
        let c = build_classifier(&ArchSpec::new(ArchKind::Strided), 43).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!("resnet".parse::<ArchKind>().is_err());
        assert_eq!("avgpool".parse::<ArchKind>().unwrap(), ArchKind::Avgpool);
    }

    #[test]
    fn linear_depends_only_on_row_means() {
        let mut m = build_classifier(&ArchSpec::new(ArchKind::Linear), 0).unwrap();
        m.params.insert("out.weight", Tensor::new(vec![2, 5], vec![0.1, -0.3, 0.2, 0.5, -0.4, -0.2, 0.4, 0.1, -0.5, 0.3]));
        m.params.insert("out.bias", Tensor::new(vec![2], vec![0.05, -0.05]));
        let a = HmMatrix::from_vec((0..500).map(|i| (i % 10) as f64).collect()).unwrap();
        // same row means, different temporal arrangement
        let b = HmMatrix::from_vec((0..500).map(|i| (9 - i % 10) as f64).collect()).unwrap();
        let (pa, pb) = (m.predict_proba(&a).unwrap(), m.predict_proba(&b).unwrap());
        assert!((pa[1] - pb[1]).abs() < 1e-12);
    }

    #[test]
    fn batch_preserves_order() {
        let m = build_classifier(&ArchSpec::new(ArchKind::Strided), 5).unwrap();
        let xs: Vec<HmMatrix> = (0..300)
            .map(|k| HmMatrix::from_vec((0..500).map(|i| ((i * k) % 13) as f64 * 0.1).collect()).unwrap())
            .collect();
        let batch = m.predict_batch(&xs).unwrap();
        assert_eq!(batch.len(), 300);
        for i in [0, 17, 256, 299] {
            assert_eq!(batch[i], m.predict_proba(&xs[i]).unwrap());
            assert!((batch[i][0] + batch[i][1] - 1.0).abs() < 1e-9);
        }
    }
}
