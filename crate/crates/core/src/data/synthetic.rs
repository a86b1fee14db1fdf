//! Planted-rule synthetic corpora.
//!
//! Every gene gets a per-HM signal level and a noisy binned profile that is
//! shared by all cells. Each cell then rescales the levels by
//! `exp(scale * z)` and perturbs the expression noise by `scale * z'`, so
//! with scale 0 all cells are identical and inter-cell expression
//! correlation falls as the scale grows. Expression is
//! `s = w · temporal_mean(x) + noise`, RPKM is `exp(s)`, and labels come
//! from [`binarize_expression`] on that RPKM, i.e. `s` above the per-cell
//! median.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    binarize_expression, split_genes, CellCorpus, GeneSample, HmMatrix, Provenance, Split, NUM_BINS, NUM_HMS,
};
use crate::error::{Error, Result};
use crate::rng::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub cells: usize,
    pub genes_per_cell: usize,
    /// Planted expression weights in HM row order. Positive rows act as
    /// promoter/activating marks, negative rows as repressors.
    pub planted_weights: [f64; NUM_HMS],
    /// Standard deviation of the expression noise term.
    pub noise_scale: f64,
    /// Per-cell perturbation scale applied to every cell.
    pub perturbation: f64,
    /// Optional per-cell override of `perturbation` (length = `cells`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_perturbations: Option<Vec<f64>>,
    /// Log-space standard deviation of per-gene HM levels.
    pub level_sigma: f64,
    /// Log-space standard deviation of per-bin multiplicative noise.
    pub bin_noise: f64,
    pub split_ratios: [f64; 3],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            cells: 3,
            genes_per_cell: 2000,
            planted_weights: [-1.0, 0.8, 0.8, 1.0, -1.0],
            noise_scale: 0.35,
            perturbation: 0.15,
            cell_perturbations: None,
            level_sigma: 0.6,
            bin_noise: 0.5,
            split_ratios: [1.0 / 3.0; 3],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(Error::config("need at least one cell"));
        }
        if self.genes_per_cell < 30 {
            return Err(Error::config("genes per cell must be at least 30"));
        }
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !nonneg(self.noise_scale) || !nonneg(self.level_sigma) || !nonneg(self.bin_noise) {
            return Err(Error::config("noise scales must be non-negative"));
        }
        let scales = self.cell_scales();
        if scales.len() != self.cells || !scales.iter().all(|&s| nonneg(s)) {
            return Err(Error::config("cell perturbations must be non-negative, one per cell"));
        }
        if self.planted_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::config("planted weights must be finite"));
        }
        Ok(())
    }

    pub fn cell_scales(&self) -> Vec<f64> {
        self.cell_perturbations
            .clone()
            .unwrap_or_else(|| vec![self.perturbation; self.cells])
    }

    pub fn cell_id(i: usize) -> String {
        format!("C{}", i + 1)
    }

    /// Rows with positive planted weight.
    pub fn promoter_rows(&self) -> Vec<usize> {
        (0..NUM_HMS).filter(|&h| self.planted_weights[h] > 0.0).collect()
    }

    /// Rows with negative planted weight.
    pub fn repressor_rows(&self) -> Vec<usize> {
        (0..NUM_HMS).filter(|&h| self.planted_weights[h] < 0.0).collect()
    }
}

/// Mean-one positional profile of each HM around the TSS (bin 50).
fn profiles() -> [[f64; NUM_BINS]; NUM_HMS] {
    let gauss = |b: f64, mu: f64, sd: f64| (-(b - mu) * (b - mu) / (2.0 * sd * sd)).exp();
    let mut p = [[0.0; NUM_BINS]; NUM_HMS];
    for b in 0..NUM_BINS {
        let x = b as f64;
        p[0][b] = 1.0;
        p[1][b] = 0.2 + (x - 50.0).max(0.0) / 50.0;
        p[2][b] = 0.3 + gauss(x, 35.0, 8.0) + gauss(x, 65.0, 8.0);
        p[3][b] = 0.1 + gauss(x, 50.0, 5.0);
        p[4][b] = 1.0;
    }
    for row in &mut p {
        let mean = row.iter().sum::<f64>() / NUM_BINS as f64;
        for v in row.iter_mut() {
            *v /= mean;
        }
    }
    p
}

struct BaseGene {
    levels: [f64; NUM_HMS],
    shape_noise: Vec<f64>,
    expr_noise: f64,
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<Vec<CellCorpus>> {
    spec.validate()?;
    let n = spec.genes_per_cell;
    let prof = profiles();
    let mut base_rng = rng(seed, 0xBA5E);
    let half_var = spec.bin_noise * spec.bin_noise / 2.0;
    let base: Vec<BaseGene> = (0..n)
        .map(|_| {
            let mut levels = [0.0; NUM_HMS];
            for l in &mut levels {
                *l = (spec.level_sigma * base_rng.sample::<f64, _>(StandardNormal)).exp();
            }
            let shape_noise = (0..NUM_HMS * NUM_BINS)
                .map(|_| (spec.bin_noise * base_rng.sample::<f64, _>(StandardNormal) - half_var).exp())
                .collect();
            let expr_noise = base_rng.sample::<f64, _>(StandardNormal);
            BaseGene {
                levels,
                shape_noise,
                expr_noise,
            }
        })
        .collect();

    let gene_ids: Vec<String> = (0..n).map(|i| format!("G{:05}", i + 1)).collect();
    let splits = split_genes(&gene_ids, spec.split_ratios, seed)?;

    let mut out = Vec::with_capacity(spec.cells);
    for (ci, scale) in spec.cell_scales().into_iter().enumerate() {
        let mut cell_rng = rng(seed, 0xCE11 + ci as u64);
        let mut xs = Vec::with_capacity(n);
        let mut score = Vec::with_capacity(n);
        for g in &base {
            let mut factors = [1.0; NUM_HMS];
            for f in &mut factors {
                *f = (scale * cell_rng.sample::<f64, _>(StandardNormal)).exp();
            }
            let jitter: f64 = cell_rng.sample(StandardNormal);
            let mut x = HmMatrix::zeros();
            for h in 0..NUM_HMS {
                let level = g.levels[h] * factors[h];
                for b in 0..NUM_BINS {
                    x.set(h, b, level * prof[h][b] * g.shape_noise[h * NUM_BINS + b]);
                }
            }
            let means = x.temporal_mean();
            let s: f64 = spec.planted_weights.iter().zip(means).map(|(w, m)| w * m).sum::<f64>()
                + spec.noise_scale * (g.expr_noise + scale * jitter);
            score.push(s);
            xs.push(x);
        }
        let rpkm: Vec<f64> = score.iter().map(|s| s.exp()).collect();
        let labels = binarize_expression(&rpkm)?;
        let mut corpus = CellCorpus {
            cell_id: SyntheticSpec::cell_id(ci),
            train: vec![],
            validation: vec![],
            test: vec![],
            provenance: Provenance::Synthetic,
        };
        for (i, x) in xs.into_iter().enumerate() {
            let sample = GeneSample {
                gene_id: gene_ids[i].clone(),
                x,
                label: labels[i],
                rpkm: Some(rpkm[i]),
            };
            match splits[i] {
                Split::Train => corpus.train.push(sample),
                Split::Validation => corpus.validation.push(sample),
                Split::Test => corpus.test.push(sample),
            }
        }
        out.push(corpus);
    }
    Ok(out)
}
