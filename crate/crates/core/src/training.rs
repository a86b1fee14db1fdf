//! Classifier and GAN training loops.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{apply_update, Graph, OptimizerConfig, OptimizerState, ParamSet, Tensor};
use crate::data::{batch_tensor, CellCorpus, GeneSample, HmMatrix, Label, Split};
use crate::error::{Error, Result};
use crate::metrics::auroc_of_probs;
use crate::models::{build_classifier, build_gan, ArchSpec, Classifier, Discriminator, GanSpec, Generator};
use crate::rng::{derive_seed, rng};

pub use crate::checkpoint::{load_checkpoint, save_checkpoint};

/// Samples per gradient chunk. Batches are cut into chunks of this size and
/// the chunk gradients are summed in order, so results do not depend on
/// the number of worker threads.
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides the architecture's dropout rate when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::adam(1e-3),
            batch_size: 64,
            epochs: 30,
            dropout: None,
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epochs must be positive"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub selected_epoch: Option<usize>,
    pub warnings: Vec<String>,
}

impl TrainHistory {
    pub fn best_val_auroc(&self) -> Option<f64> {
        let e = self.selected_epoch?;
        self.epochs.iter().find(|r| r.epoch == e).map(|r| r.val_auroc)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_auroc\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_auroc);
        }
        s
    }
}

/// Training graph: `x`, integer class `y`, mean cross-entropy loss.
fn loss_graph(arch: &ArchSpec) -> (Graph, usize) {
    let mut g = Graph::new();
    let x = g.input("x");
    let probs = arch.append(&mut g, x, "");
    let y = g.input("y");
    let loss = g.cross_entropy(probs, y);
    g.set_input_grads(false);
    g.set_training(true);
    (g, loss)
}

/// Mean loss and summed gradients of one batch, reduced over fixed chunks.
fn batch_gradients(
    arch: &ArchSpec,
    params: &ParamSet,
    batch: &[&GeneSample],
    dropout_seed: u64,
) -> Result<(f64, ParamSet)> {
    let n = batch.len() as f64;
    let parts: Vec<Result<(f64, ParamSet)>> = batch
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let (mut g, loss) = loss_graph(arch);
            g.set_dropout_seed(derive_seed(dropout_seed, ci as u64));
            let x = batch_tensor(chunk.iter().map(|s| &s.x));
            let y = Tensor::new(
                vec![chunk.len()],
                chunk.iter().map(|s| s.label.class_index() as f64).collect(),
            );
            g.forward(params, vec![("x", x), ("y", y)])?;
            g.backward(loss)?;
            let w = chunk.len() as f64 / n;
            let l = g.value(loss).expect("evaluated").item() * w;
            let mut grads = g.param_grads();
            for (_, t) in grads.iter_mut() {
                t.scale_assign(w);
            }
            Ok((l, grads))
        })
        .collect();
    let mut total = 0.0;
    let mut sum: Option<ParamSet> = None;
    for p in parts {
        let (l, g) = p?;
        total += l;
        match &mut sum {
            None => sum = Some(g),
            Some(s) => s.add_scaled(&g, 1.0),
        }
    }
    Ok((total, sum.unwrap_or_default()))
}

fn pooled<'a>(corpora: &[&'a CellCorpus], split: Split) -> Vec<&'a GeneSample> {
    corpora.iter().flat_map(|c| c.split(split).iter()).collect()
}

/// AUROC of `model` on `samples`.
pub fn evaluate_auroc(model: &Classifier, samples: &[&GeneSample]) -> Result<f64> {
    let probs = model.predict_refs(samples.iter().map(|s| &s.x))?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    auroc_of_probs(&probs, &labels)
}

/// AUROC on one split of one corpus.
pub fn split_auroc(model: &Classifier, corpus: &CellCorpus, split: Split) -> Result<f64> {
    let samples: Vec<&GeneSample> = corpus.split(split).iter().collect();
    evaluate_auroc(model, &samples)
}

/// Trains on the pooled train splits of `corpora` and keeps the parameters
/// from the epoch with the highest pooled validation AUROC.
pub fn train_classifier(corpora: &[&CellCorpus], arch: &ArchSpec, cfg: &TrainConfig) -> Result<(Classifier, TrainHistory)> {
    cfg.validate()?;
    let mut arch = arch.clone();
    if let Some(d) = cfg.dropout {
        arch.dropout = d;
    }
    let train = pooled(corpora, Split::Train);
    let val = pooled(corpora, Split::Validation);
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }

    let mut model = build_classifier(&arch, cfg.seed)?;
    let mut state = OptimizerState::new(cfg.optimizer);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ParamSet)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng(cfg.seed, 0xE9_0000 + epoch as u64));
        let mut epoch_loss = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&GeneSample> = idx.iter().map(|&i| train[i]).collect();
            let seed = derive_seed(cfg.seed, ((epoch as u64) << 32) | step as u64);
            let (loss, grads) = match batch_gradients(&arch, &model.params, &batch, seed) {
                Ok(r) => r,
                Err(Error::NonFinite { .. }) => return Err(diverged(epoch, history)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(epoch, history));
            }
            epoch_loss += loss * batch.len() as f64;
            match apply_update(&mut model.params, &grads, &mut state) {
                Err(Error::NanGradient(_)) => return Err(diverged(epoch, history)),
                r => r?,
            }
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_auroc = match evaluate_auroc(&model, &val) {
            Err(Error::NonFinite { .. }) => return Err(diverged(epoch, history)),
            r => r?,
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_auroc,
        });
        if best.as_ref().map_or(true, |(b, _)| val_auroc > *b) {
            best = Some((val_auroc, model.params.clone()));
            history.selected_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    if let Some((_, p)) = best {
        model.params = p;
    }
    Ok((model, history))
}

fn diverged(epoch: usize, history: TrainHistory) -> Error {
    Error::Diverged {
        epoch,
        history: Box::new(history),
    }
}

/// Outcome of one best-of-k candidate run.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub seed: u64,
    pub val_auroc: f64,
}

/// Trains `k` runs with seeds `seed..seed+k` and returns the one with the
/// highest validation AUROC (lowest seed on ties) plus every run's score.
pub fn select_best_of_k(
    corpora: &[&CellCorpus],
    arch: &ArchSpec,
    k: usize,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainHistory, Vec<Candidate>)> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let runs: Vec<Result<(Classifier, TrainHistory)>> = (0..k as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = TrainConfig {
                seed: cfg.seed + i,
                ..cfg.clone()
            };
            train_classifier(corpora, arch, &cfg)
        })
        .collect();
    let mut best: Option<(Classifier, TrainHistory)> = None;
    let mut candidates = Vec::with_capacity(k);
    for (i, r) in runs.into_iter().enumerate() {
        let (m, h) = r?;
        let score = h.best_val_auroc().unwrap_or(f64::NEG_INFINITY);
        candidates.push(Candidate {
            seed: cfg.seed + i as u64,
            val_auroc: score,
        });
        let better = best
            .as_ref()
            .map_or(true, |(_, bh)| score > bh.best_val_auroc().unwrap_or(f64::NEG_INFINITY));
        if better {
            best = Some((m, h));
        }
    }
    let (m, h) = best.expect("k >= 1");
    Ok((m, h, candidates))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        let mut optimizer = OptimizerConfig::adam(1e-3);
        optimizer.beta1 = 0.5;
        GanTrainConfig {
            optimizer,
            batch_size: 64,
            epochs: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub epochs: Vec<GanEpochRecord>,
    pub warnings: Vec<String>,
}

impl GanHistory {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("epoch,d_loss,g_loss\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.d_loss, r.g_loss);
        }
        s
    }
}

/// Probe size and variance floor for mode-collapse detection.
const COLLAPSE_PROBE: usize = 256;
const COLLAPSE_VARIANCE: f64 = 1e-6;

/// Mean over entries of the across-sample variance.
pub fn sample_variance(xs: &[HmMatrix]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let len = xs[0].data().len();
    let mut total = 0.0;
    for j in 0..len {
        let mean = xs.iter().map(|x| x.data()[j]).sum::<f64>() / n;
        total += xs.iter().map(|x| (x.data()[j] - mean).powi(2)).sum::<f64>() / n;
    }
    total / len as f64
}

fn constant(shape: Vec<usize>, v: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, vec![v; n])
}

/// Alternating discriminator/generator updates with the non-saturating
/// generator loss `-log D(G(z))`.
pub fn train_gan(real: &[HmMatrix], spec: &GanSpec, cfg: &GanTrainConfig) -> Result<(Generator, Discriminator, GanHistory)> {
    cfg.optimizer.validate()?;
    if real.is_empty() {
        return Err(Error::Empty("GAN training set"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::config("batch size and epochs must be positive"));
    }
    let (mut gen, mut disc) = build_gan(spec, cfg.seed)?;

    let mut dg = Graph::new();
    let (xr, xf) = (dg.input("real"), dg.input("fake"));
    let (dr, df) = (disc.append(&mut dg, xr, ""), disc.append(&mut dg, xf, ""));
    let (tr, tf) = (dg.input("ones"), dg.input("zeros"));
    let (lr, lf) = (dg.bce(dr, tr), dg.bce(df, tf));
    let d_loss = dg.add(lr, lf);
    dg.set_input_grads(false);

    let mut gg = Graph::new();
    let z = gg.input("z");
    let fake = gen.append(&mut gg, z, "g.");
    let score = disc.append(&mut gg, fake, "d.");
    let ones = gg.input("ones");
    let g_loss = gg.bce(score, ones);
    gg.set_input_grads(false);

    let mut d_state = OptimizerState::new(cfg.optimizer);
    let mut g_state = OptimizerState::new(cfg.optimizer);
    let mut history = GanHistory::default();
    let mut order: Vec<usize> = (0..real.len()).collect();
    let mut latent_rng = rng(cfg.seed, 0x1A7E);
    let probe = gen.latent(COLLAPSE_PROBE, &mut rng(cfg.seed, 0x9B0B));

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng(cfg.seed, 0x6A_0000 + epoch as u64));
        let (mut d_sum, mut g_sum, mut steps) = (0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let b = idx.len();
            let real_batch = batch_tensor(idx.iter().map(|&i| &real[i]));
            let fake_batch = gen.generate(gen.latent(b, &mut latent_rng))?;
            dg.forward(
                &disc.params,
                vec![
                    ("real", real_batch),
                    ("fake", fake_batch),
                    ("ones", constant(vec![b, 1], 1.0)),
                    ("zeros", constant(vec![b, 1], 0.0)),
                ],
            )?;
            dg.backward(d_loss)?;
            d_sum += dg.value(d_loss).expect("evaluated").item();
            apply_update(&mut disc.params, &dg.param_grads(), &mut d_state)?;

            let mut joint = gen.params.prefixed("g.");
            joint.extend(disc.params.prefixed("d."));
            gg.forward(
                &joint,
                vec![("z", gen.latent(b, &mut latent_rng)), ("ones", constant(vec![b, 1], 1.0))],
            )?;
            gg.backward(g_loss)?;
            g_sum += gg.value(g_loss).expect("evaluated").item();
            apply_update(&mut gen.params, &gg.param_grads().strip_prefix("g."), &mut g_state)?;
            steps += 1;
        }
        history.epochs.push(GanEpochRecord {
            epoch,
            d_loss: d_sum / steps as f64,
            g_loss: g_sum / steps as f64,
        });
        let probe_out = crate::models::split_matrices(gen.generate(probe.clone())?);
        let var = sample_variance(&probe_out);
        if var < COLLAPSE_VARIANCE {
            history
                .warnings
                .push(format!("epoch {epoch}: possible mode collapse (probe variance {var:e})"));
        }
    }
    Ok((gen, disc, history))
}

/// Fraction of correct real/fake calls at the 0.5 threshold.
pub fn discriminator_accuracy(disc: &Discriminator, real: &[HmMatrix], fake: &[HmMatrix]) -> Result<f64> {
    let r = disc.score(real)?;
    let f = disc.score(fake)?;
    let correct = r.iter().filter(|&&p| p > 0.5).count() + f.iter().filter(|&&p| p < 0.5).count();
    Ok(correct as f64 / (r.len() + f.len()) as f64)
}
