use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::{Label, NUM_BINS, NUM_HMS};
use crate::error::{Error, Result};
use crate::models::{Classifier, Discriminator, Generator};
use crate::rng::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum InitMode {
    /// Entries drawn from `U(0, high)`.
    RandomUniform { high: f64 },
    /// Start from one generator sample, which also serves as the reference
    /// input of the deviation term.
    GeneratorHotStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub target: Label,
    /// Weight of the discriminator realism term.
    pub lambda: f64,
    /// Weight of the Euclidean deviation from the starting input.
    pub phi: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub init: InitMode,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            target: Label::Positive,
            lambda: 1.0,
            phi: 0.1,
            step_size: 0.05,
            iterations: 200,
            init: InitMode::GeneratorHotStart,
        }
    }
}

impl LossSpec {
    pub fn validate(&self, has_discriminator: bool, has_generator: bool) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda) || !ok(self.phi) {
            return Err(Error::config("lambda and phi must be finite and non-negative"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config("step size must be positive"));
        }
        if self.lambda > 0.0 && !has_discriminator {
            return Err(Error::config("lambda > 0 needs a discriminator"));
        }
        let hot = self.init == InitMode::GeneratorHotStart;
        if self.phi > 0.0 && !hot {
            return Err(Error::config("phi > 0 needs a generator hot start"));
        }
        if hot && !has_generator {
            return Err(Error::config("hot start needs a generator"));
        }
        if let InitMode::RandomUniform { high } = self.init {
            if !(high.is_finite() && high > 0.0) {
                return Err(Error::config("uniform init bound must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub classifier_loss: f64,
    pub discriminator_loss: f64,
    pub deviation_loss: f64,
    pub total: f64,
    pub target_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    /// Best iterate, `[1, 5, 100]`; entries may leave the non-negative range.
    pub best: Tensor,
    pub best_iteration: usize,
    /// Starting input.
    pub initial: Tensor,
    pub trajectory: Vec<TrajectoryPoint>,
}

impl OptimizeResult {
    pub fn best_point(&self) -> &TrajectoryPoint {
        &self.trajectory[self.best_iteration]
    }

    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("iteration,classifier_loss,discriminator_loss,deviation_loss,total,target_prob\n");
        for p in &self.trajectory {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                p.iteration, p.classifier_loss, p.discriminator_loss, p.deviation_loss, p.total, p.target_prob
            );
        }
        s
    }
}

/// Gradient descent on the input with a fixed step, keeping the iterate
/// with the lowest total loss. Iteration 0 is the initialization.
pub fn optimize_input(
    classifier: &Classifier,
    discriminator: Option<&Discriminator>,
    generator: Option<&Generator>,
    spec: &LossSpec,
    seed: u64,
) -> Result<OptimizeResult> {
    spec.validate(discriminator.is_some(), generator.is_some())?;
    let mut r = rng(seed, 0x0971);
    let initial = match spec.init {
        InitMode::RandomUniform { high } => Tensor::new(
            vec![1, NUM_HMS, NUM_BINS],
            (0..NUM_HMS * NUM_BINS).map(|_| r.random_range(0.0..high)).collect(),
        ),
        InitMode::GeneratorHotStart => {
            let gen = generator.expect("validated");
            gen.generate(gen.latent(1, &mut r))?
        }
    };

    let mut g = Graph::new();
    let x = g.input("x");
    let probs = classifier.arch.append(&mut g, x, "c.");
    let t = g.input("target");
    let ce = g.cross_entropy(probs, t);
    let mut total = ce;
    let mut params = classifier.params.prefixed("c.");
    let d_term = match discriminator.filter(|_| spec.lambda > 0.0) {
        Some(d) => {
            let score = d.append(&mut g, x, "d.");
            let ones = g.input("ones");
            let l = g.bce(score, ones);
            let s = g.scale(l, spec.lambda);
            total = g.add(total, s);
            params.extend(d.params.prefixed("d."));
            Some(l)
        }
        None => None,
    };
    let dev_term = if spec.phi > 0.0 {
        let x1 = g.input("reference");
        let l = g.l2_distance(x, x1);
        let s = g.scale(l, spec.phi);
        total = g.add(total, s);
        Some(l)
    } else {
        None
    };

    let class = spec.target.class_index();
    let mut cur = initial.clone();
    let mut best = (f64::INFINITY, 0usize, initial.clone());
    let mut trajectory = Vec::with_capacity(spec.iterations + 1);
    for it in 0..=spec.iterations {
        let mut inputs = vec![("x", cur.clone()), ("target", Tensor::new(vec![1], vec![class as f64]))];
        if d_term.is_some() {
            inputs.push(("ones", Tensor::new(vec![1, 1], vec![1.0])));
        }
        if dev_term.is_some() {
            inputs.push(("reference", initial.clone()));
        }
        g.forward(&params, inputs)?;
        let val = |n: usize| g.value(n).expect("evaluated").item();
        let point = TrajectoryPoint {
            iteration: it,
            classifier_loss: val(ce),
            discriminator_loss: d_term.map_or(0.0, val),
            deviation_loss: dev_term.map_or(0.0, val),
            total: val(total),
            target_prob: g.value(probs).expect("evaluated").data()[class],
        };
        if point.total < best.0 {
            best = (point.total, it, cur.clone());
        }
        trajectory.push(point);
        if it == spec.iterations {
            break;
        }
        g.backward(total)?;
        let grad = g.input_grad("x").expect("input gradient");
        for (v, d) in cur.data_mut().iter_mut().zip(grad.data()) {
            *v -= spec.step_size * d;
        }
    }
    Ok(OptimizeResult {
        best: best.2,
        best_iteration: best.1,
        initial,
        trajectory,
    })
}
