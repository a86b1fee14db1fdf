//! Central finite-difference gradient checking.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, ParamSet, Tensor};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check at most this many randomly chosen entries per parameter tensor
    /// (every entry when `None`).
    pub max_entries_per_param: Option<usize>,
    /// Also check gradients with respect to the bound inputs (loss targets
    /// excluded).
    pub include_inputs: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            max_entries_per_param: None,
            include_inputs: false,
            seed: 0,
        }
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Max relative error between analytic and central-difference gradients over
/// every parameter entry. Dropout must be inactive (training mode off).
pub fn check_gradients(
    graph: &mut Graph,
    params: &ParamSet,
    inputs: &[(&str, Tensor)],
    loss: NodeId,
    epsilon: f64,
) -> Result<f64> {
    check_gradients_with(
        graph,
        params,
        inputs,
        loss,
        &GradCheckOptions {
            epsilon,
            ..Default::default()
        },
    )
}

pub fn check_gradients_with(
    graph: &mut Graph,
    params: &ParamSet,
    inputs: &[(&str, Tensor)],
    loss: NodeId,
    opts: &GradCheckOptions,
) -> Result<f64> {
    graph.forward(params, bind(inputs))?;
    graph.backward(loss)?;
    let analytic = graph.param_grads();
    let input_grads: Vec<Tensor> = if opts.include_inputs {
        inputs
            .iter()
            .map(|(k, t)| {
                if graph.is_target_input(k) {
                    Tensor::zeros(&[0])
                } else {
                    graph.input_grad(k).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()))
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eps = opts.epsilon;
    let mut worst = 0.0f64;
    let probe = |graph: &mut Graph, params: &ParamSet, inputs: Vec<(&str, Tensor)>| -> Result<f64> {
        graph.forward(params, inputs)?;
        Ok(graph.value(loss).expect("evaluated").item())
    };

    let mut perturbed = params.clone();
    for (name, tensor) in params.iter() {
        let Some(g) = analytic.get(name) else { continue };
        for i in pick(tensor.len(), opts.max_entries_per_param, &mut rng) {
            let orig = tensor.data()[i];
            perturbed.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = probe(graph, &perturbed, bind(inputs))?;
            perturbed.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = probe(graph, &perturbed, bind(inputs))?;
            perturbed.get_mut(name).unwrap().data_mut()[i] = orig;
            worst = worst.max(rel_error(g.data()[i], (up - down) / (2.0 * eps)));
        }
    }

    for (slot, grad) in input_grads.iter().enumerate() {
        for i in pick(grad.len(), opts.max_entries_per_param, &mut rng) {
            let mut shifted = bind(inputs);
            shifted[slot].1.data_mut()[i] += eps;
            let up = probe(graph, params, shifted)?;
            let mut shifted = bind(inputs);
            shifted[slot].1.data_mut()[i] -= eps;
            let down = probe(graph, params, shifted)?;
            worst = worst.max(rel_error(grad.data()[i], (up - down) / (2.0 * eps)));
        }
    }

    // Leave the graph holding the unperturbed evaluation.
    graph.forward(params, bind(inputs))?;
    graph.backward(loss)?;
    Ok(worst)
}

fn bind<'a>(inputs: &[(&'a str, Tensor)]) -> Vec<(&'a str, Tensor)> {
    inputs.iter().map(|(k, t)| (*k, t.clone())).collect()
}

fn pick(len: usize, cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match cap {
        Some(c) if c < len => {
            let mut v = index::sample(rng, len, c).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}
