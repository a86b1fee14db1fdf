use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kaiming_uniform;
use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::data::{batch_tensor, HmMatrix, NUM_BINS, NUM_HMS};
use crate::error::{Error, Result};
use crate::rng::rng;

use super::classifier::EVAL_CHUNK;

const SIGNAL_LEN: usize = NUM_HMS * NUM_BINS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanSpec {
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
}

impl Default for GanSpec {
    fn default() -> Self {
        GanSpec {
            latent_dim: 64,
            generator_hidden: vec![128, 256],
            discriminator_hidden: vec![256, 64],
        }
    }
}

impl GanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.generator_hidden.contains(&0) || self.discriminator_hidden.contains(&0) {
            return Err(Error::config("GAN layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn generator_shapes(&self) -> Vec<(String, Vec<usize>)> {
        dense_shapes(self.latent_dim, &self.generator_hidden, SIGNAL_LEN)
    }

    pub fn discriminator_shapes(&self) -> Vec<(String, Vec<usize>)> {
        dense_shapes(SIGNAL_LEN, &self.discriminator_hidden, 1)
    }
}

fn dense_shapes(input: usize, hidden: &[usize], output: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    let mut width = input;
    for (i, &h) in hidden.iter().enumerate() {
        v.push((format!("fc{}.weight", i + 1), vec![h, width]));
        v.push((format!("fc{}.bias", i + 1), vec![h]));
        width = h;
    }
    v.push(("out.weight".into(), vec![output, width]));
    v.push(("out.bias".into(), vec![output]));
    v
}

fn init_dense(shapes: Vec<(String, Vec<usize>)>, r: &mut ChaCha8Rng) -> ParamSet {
    shapes
        .into_iter()
        .map(|(name, shape)| {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let fan_in = shape[1];
                kaiming_uniform(r, &shape, fan_in)
            };
            (name, t)
        })
        .collect()
}

/// Dense relu stack; returns the pre-activation of the output layer.
fn append_dense(g: &mut Graph, mut h: NodeId, layers: usize, prefix: &str) -> NodeId {
    for i in 1..=layers {
        let w = g.param(&format!("{prefix}fc{i}.weight"));
        let b = g.param(&format!("{prefix}fc{i}.bias"));
        let a = g.affine(h, w, b);
        h = g.relu(a);
    }
    let w = g.param(&format!("{prefix}out.weight"));
    let b = g.param(&format!("{prefix}out.bias"));
    g.affine(h, w, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub spec: GanSpec,
    pub params: ParamSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub spec: GanSpec,
    pub params: ParamSet,
}

pub fn build_gan(spec: &GanSpec, seed: u64) -> Result<(Generator, Discriminator)> {
    spec.validate()?;
    let mut gr = rng(seed, 0x6E4E);
    let mut dr = rng(seed, 0xD15C);
    Ok((
        Generator {
            spec: spec.clone(),
            params: init_dense(spec.generator_shapes(), &mut gr),
        },
        Discriminator {
            spec: spec.clone(),
            params: init_dense(spec.discriminator_shapes(), &mut dr),
        },
    ))
}

impl Generator {
    /// `z` (`[B, latent]`) to a non-negative `[B, 5, 100]` node.
    pub fn append(&self, g: &mut Graph, z: NodeId, prefix: &str) -> NodeId {
        let a = append_dense(g, z, self.spec.generator_hidden.len(), prefix);
        let s = g.softplus(a);
        g.reshape(s, vec![NUM_HMS, NUM_BINS])
    }

    /// Standard normal latent batch.
    pub fn latent(&self, n: usize, r: &mut ChaCha8Rng) -> Tensor {
        let d = self.spec.latent_dim;
        Tensor::new(vec![n, d], (0..n * d).map(|_| r.sample(StandardNormal)).collect())
    }

    pub fn graph(&self) -> Graph {
        let mut g = Graph::new();
        let z = g.input("z");
        let x = self.append(&mut g, z, "");
        g.mark_output("x", x);
        g.set_input_grads(false);
        g
    }

    /// Maps a latent batch to a `[B, 5, 100]` tensor.
    pub fn generate(&self, z: Tensor) -> Result<Tensor> {
        let mut g = self.graph();
        let mut out = g.eval(&self.params, vec![("z", z)])?;
        Ok(out.swap_remove("x").expect("generator output"))
    }

    /// `n` samples from the latent stream seeded by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<HmMatrix>> {
        let mut r = rng(seed, 0x5A3B);
        let mut out = Vec::with_capacity(n);
        let mut left = n;
        while left > 0 {
            let m = left.min(EVAL_CHUNK);
            out.extend(split_matrices(self.generate(self.latent(m, &mut r))?));
            left -= m;
        }
        Ok(out)
    }
}

pub(crate) fn split_matrices(t: Tensor) -> Vec<HmMatrix> {
    t.into_data()
        .chunks(SIGNAL_LEN)
        .map(|c| HmMatrix::from_vec_unchecked(c.to_vec()))
        .collect()
}

impl Discriminator {
    /// `x` (`[B, 5, 100]`) to a `[B, 1]` realness probability.
    pub fn append(&self, g: &mut Graph, x: NodeId, prefix: &str) -> NodeId {
        let f = g.flatten(x);
        let a = append_dense(g, f, self.spec.discriminator_hidden.len(), prefix);
        g.sigmoid(a)
    }

    /// Probability that each input is real.
    pub fn score(&self, xs: &[HmMatrix]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.input("x");
        let d = self.append(&mut g, x, "");
        g.mark_output("d", d);
        g.set_input_grads(false);
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(EVAL_CHUNK) {
            let res = g.eval(&self.params, vec![("x", batch_tensor(chunk))])?;
            out.extend_from_slice(res["d"].data());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_latent_is_deterministic_and_non_negative() {
        let (gen, _) = build_gan(&GanSpec::default(), 1).unwrap();
        let z = Tensor::zeros(&[1, 64]);
        let a = gen.generate(z.clone()).unwrap();
        let b = gen.generate(z).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[1, 5, 100]);
        assert!(a.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn thousand_samples_non_negative() {
        let (gen, _) = build_gan(&GanSpec::default(), 2).unwrap();
        let xs = gen.sample(1000, 9).unwrap();
        assert_eq!(xs.len(), 1000);
        assert!(xs.iter().all(|x| x.data().iter().all(|&v| v >= 0.0)));
        assert_eq!(xs, gen.sample(1000, 9).unwrap());
    }

    #[test]
    fn discriminator_is_strictly_inside_unit_interval() {
        let (_, disc) = build_gan(&GanSpec::default(), 3).unwrap();
        let xs = vec![
            HmMatrix::zeros(),
            HmMatrix::from_vec(vec![3.0; 500]).unwrap(),
            HmMatrix::from_vec((0..500).map(|i| (i % 17) as f64).collect()).unwrap(),
        ];
        for d in disc.score(&xs).unwrap() {
            assert!(d > 0.0 && d < 1.0, "{d}");
        }
    }

    #[test]
    fn zero_layer_rejected() {
        let spec = GanSpec { generator_hidden: vec![0], ..Default::default() };
        assert!(build_gan(&spec, 0).is_err());
    }
}
