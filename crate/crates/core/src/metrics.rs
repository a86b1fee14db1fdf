//! AUROC, RPKM correlation matrices and classifier summaries.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HmMatrix, Label, RpkmTable, NUM_BINS, NUM_HMS};
use crate::error::{Error, Result};
use crate::models::Classifier;

/// Area under the ROC curve, ties counted as half.
///
/// Rank method: with mid-ranks doubled so every quantity stays an integer,
/// `2U = sum(2·rank of positives) - P(P+1)`. The result is `2U / 2PN`,
/// which equals the pairwise count bit for bit.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::config(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::config("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l == Label::Positive).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1, doubled mid-rank = i + j + 2
        let mid2 = (i + j + 2) as u128;
        let p = order[i..=j].iter().filter(|&&k| labels[k] == Label::Positive).count() as u128;
        rank_sum2 += mid2 * p;
        i = j + 1;
    }
    let u2 = rank_sum2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// AUROC from `[p_neg, p_pos]` pairs, scoring by `p_pos`.
pub fn auroc_of_probs(probs: &[[f64; 2]], labels: &[Label]) -> Result<f64> {
    let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    auroc(&scores, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    /// Correlate `ln(1 + rpkm)` rather than raw RPKM.
    pub log_transform: bool,
    /// Min-max normalize the whole matrix to `[0, 1]`.
    pub normalize: bool,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        CorrelationOptions {
            log_transform: true,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub cells: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub normalized: bool,
    /// Cells whose expression vector had zero variance; their
    /// off-diagonal correlations were set to 0 before normalization.
    pub degenerate: Vec<String>,
}

impl CorrelationMatrix {
    pub fn index_of(&self, cell: &str) -> Option<usize> {
        self.cells.iter().position(|c| c == cell)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.values[self.index_of(a)?][self.index_of(b)?])
    }

    /// Min-max rescale of every entry jointly. A constant matrix maps to all 1s.
    pub fn normalized(&self) -> CorrelationMatrix {
        let flat = self.values.iter().flatten();
        let lo = flat.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = flat.copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let values = self
            .values
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| if range > 0.0 { (v - lo) / range } else { 1.0 })
                    .collect()
            })
            .collect();
        CorrelationMatrix {
            cells: self.cells.clone(),
            values,
            normalized: true,
            degenerate: self.degenerate.clone(),
        }
    }

    /// Square CSV with a `cell` corner and cell ids on both axes.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("cell");
        for c in &self.cells {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.cells.iter().zip(&self.values) {
            s.push_str(c);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Pearson correlation between the cells of `table`, restricted to `genes`
/// when given.
pub fn correlation_matrix(
    table: &RpkmTable,
    genes: Option<&HashSet<String>>,
    opts: CorrelationOptions,
) -> Result<CorrelationMatrix> {
    let rows: Vec<&Vec<f64>> = table
        .genes
        .iter()
        .zip(&table.values)
        .filter(|(g, _)| genes.map_or(true, |set| set.contains(*g)))
        .map(|(_, r)| r)
        .collect();
    let c = table.cells.len();
    if rows.len() < 2 {
        return Err(Error::config("correlation needs at least 2 genes"));
    }
    if c < 2 {
        return Err(Error::config("correlation needs at least 2 cells"));
    }
    let columns: Vec<Vec<f64>> = (0..c)
        .map(|j| {
            rows.iter()
                .map(|r| if opts.log_transform { r[j].ln_1p() } else { r[j] })
                .collect()
        })
        .collect();
    let centered: Vec<(Vec<f64>, f64)> = columns
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let d: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let ss = d.iter().map(|v| v * v).sum::<f64>();
            (d, ss)
        })
        .collect();
    let degenerate: Vec<String> = (0..c)
        .filter(|&j| centered[j].1 == 0.0)
        .map(|j| table.cells[j].clone())
        .collect();
    let mut values = vec![vec![0.0; c]; c];
    for i in 0..c {
        values[i][i] = 1.0;
        for j in i + 1..c {
            let ((a, ssa), (b, ssb)) = (&centered[i], &centered[j]);
            let r = if *ssa == 0.0 || *ssb == 0.0 {
                0.0
            } else {
                // sqrt(ss * ss) == ss exactly, so identical cells give exactly 1
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (dot / (ssa * ssb).sqrt()).clamp(-1.0, 1.0)
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    let m = CorrelationMatrix {
        cells: table.cells.clone(),
        values,
        normalized: false,
        degenerate,
    };
    Ok(if opts.normalize { m.normalized() } else { m })
}

/// Mean `(p_pos, p_neg)` of a classifier over `xs`.
pub fn mean_class_prob<'a>(model: &Classifier, xs: impl IntoIterator<Item = &'a HmMatrix>) -> Result<(f64, f64)> {
    let probs = model.predict_refs(xs)?;
    if probs.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n = probs.len() as f64;
    let pos = probs.iter().map(|p| p[1]).sum::<f64>() / n;
    let neg = probs.iter().map(|p| p[0]).sum::<f64>() / n;
    Ok((pos, neg))
}

/// `n` inputs with entries drawn from `U(0, high)`, the random baseline
/// for class-probability comparisons.
pub fn uniform_random_inputs(n: usize, high: f64, seed: u64) -> Result<Vec<HmMatrix>> {
    if !(high.is_finite() && high > 0.0) {
        return Err(Error::config("uniform bound must be positive"));
    }
    let mut r = crate::rng::rng(seed, 0x0AD0);
    Ok((0..n)
        .map(|_| HmMatrix::from_vec_unchecked((0..NUM_HMS * NUM_BINS).map(|_| r.random_range(0.0..high)).collect()))
        .collect())
}
