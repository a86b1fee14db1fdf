use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{HmMatrix, Label};
use crate::error::{Error, Result};
use crate::models::{split_matrices, Classifier, Generator};
use crate::rng::rng;

/// Samples per generated batch. Batch `b` always draws its latents from
/// the stream `(seed, b)`, so sample `i` is the same regardless of how
/// batches are scheduled.
pub const MC_BATCH: usize = 256;

/// Batches scored per parallel round.
const ROUND: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SelectionMode {
    /// The `k` most class-probable samples.
    TopK,
    /// The first `k` samples, in generation order, above `threshold`.
    Threshold { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    /// Number of samples to generate.
    pub n: usize,
    pub k: usize,
    pub mode: SelectionMode,
    pub class: Label,
}

impl SelectionSpec {
    pub fn top_k(n: usize, k: usize, class: Label) -> Self {
        SelectionSpec {
            n,
            k,
            mode: SelectionMode::TopK,
            class,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::config(format!("need 1 <= k <= n (k = {}, n = {})", self.k, self.n)));
        }
        if let SelectionMode::Threshold { threshold } = self.mode {
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(Error::config("threshold must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    /// Position in the generated stream.
    pub index: usize,
    /// Probability of the selection class.
    pub prob: f64,
    pub x: HmMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub class: Label,
    /// Top-k: highest probability first (ties by index). Threshold: in
    /// generation order.
    pub samples: Vec<Selected>,
    pub generated: usize,
    /// Threshold mode ran out of samples before finding `k`.
    pub exhausted: bool,
}

impl Selection {
    pub fn matrices(&self) -> Vec<HmMatrix> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }
}

/// Batch `b` of the generated stream (`len` samples).
pub fn generate_batch(generator: &Generator, seed: u64, b: usize, len: usize) -> Result<Vec<HmMatrix>> {
    let mut r = rng(seed, 0x3C_0000_0000 + b as u64);
    Ok(split_matrices(generator.generate(generator.latent(len, &mut r))?))
}

/// Min-heap order: the "worst" kept sample sits on top.
struct Ranked(Selected);

impl PartialEq for Ranked {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Ranked {
    /// Greater = worse: lower probability, then later index.
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.prob.total_cmp(&self.0.prob).then(self.0.index.cmp(&o.0.index))
    }
}

/// Generates `spec.n` samples in batches, scores them with `classifier`
/// and keeps the selection without holding the whole stream in memory.
pub fn mc_sample_select(
    generator: &Generator,
    classifier: &Classifier,
    spec: &SelectionSpec,
    seed: u64,
) -> Result<Selection> {
    let mut v = mc_sample_select_many(generator, classifier, std::slice::from_ref(spec), seed)?;
    Ok(v.remove(0))
}

struct Pending {
    heap: BinaryHeap<Ranked>,
    found: Vec<Selected>,
    generated: usize,
    done: bool,
}

/// Several selections over one generated stream (every spec must share
/// `n`). Each result equals what [`mc_sample_select`] returns for that spec.
pub fn mc_sample_select_many(
    generator: &Generator,
    classifier: &Classifier,
    specs: &[SelectionSpec],
    seed: u64,
) -> Result<Vec<Selection>> {
    let Some(n) = specs.first().map(|s| s.n) else { return Ok(Vec::new()) };
    for spec in specs {
        spec.validate()?;
        if spec.n != n {
            return Err(Error::config("selections sharing a stream need the same n"));
        }
    }
    let mut state: Vec<Pending> = specs
        .iter()
        .map(|s| Pending {
            heap: BinaryHeap::with_capacity(s.k + 1),
            found: Vec::new(),
            generated: 0,
            done: false,
        })
        .collect();
    let batches = n.div_ceil(MC_BATCH);

    'rounds: for start in (0..batches).step_by(ROUND) {
        let end = (start + ROUND).min(batches);
        let scored: Vec<Result<(Vec<HmMatrix>, Vec<[f64; 2]>)>> = (start..end)
            .into_par_iter()
            .map(|b| {
                let len = MC_BATCH.min(n - b * MC_BATCH);
                let xs = generate_batch(generator, seed, b, len)?;
                let probs = classifier.predict_batch(&xs)?;
                Ok((xs, probs))
            })
            .collect();
        for (b, batch) in (start..end).zip(scored) {
            let (xs, probs) = batch?;
            for (j, (x, p)) in xs.into_iter().zip(probs).enumerate() {
                let index = b * MC_BATCH + j;
                for (spec, st) in specs.iter().zip(state.iter_mut()) {
                    if st.done {
                        continue;
                    }
                    st.generated = index + 1;
                    let prob = p[spec.class.class_index()];
                    match spec.mode {
                        SelectionMode::TopK => {
                            // indices only grow, so an equal probability never displaces
                            let admit = st.heap.len() < spec.k || st.heap.peek().is_some_and(|w| prob > w.0.prob);
                            if admit {
                                st.heap.push(Ranked(Selected { index, prob, x: x.clone() }));
                                if st.heap.len() > spec.k {
                                    st.heap.pop();
                                }
                            }
                        }
                        SelectionMode::Threshold { threshold } => {
                            if prob > threshold {
                                st.found.push(Selected { index, prob, x: x.clone() });
                                st.done = st.found.len() == spec.k;
                            }
                        }
                    }
                }
                if state.iter().all(|s| s.done) {
                    break 'rounds;
                }
            }
        }
    }

    Ok(specs
        .iter()
        .zip(state)
        .map(|(spec, st)| {
            let (samples, exhausted) = match spec.mode {
                SelectionMode::TopK => (st.heap.into_sorted_vec().into_iter().map(|r| r.0).collect(), false),
                SelectionMode::Threshold { .. } => {
                    let short = st.found.len() < spec.k;
                    (st.found, short)
                }
            };
            Selection {
                class: spec.class,
                samples,
                generated: st.generated,
                exhausted,
            }
        })
        .collect())
}
