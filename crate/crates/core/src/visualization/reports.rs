use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{GeneSample, HmMatrix, Label, HM_NAMES, NUM_HMS};
use crate::error::{Error, Result};
use crate::models::{ArchKind, Classifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationProfile {
    /// Per-HM mean signal divided by the largest entry.
    pub values: [f64; NUM_HMS],
    /// Every sample was all zeros; `values` is left at zero.
    pub degenerate: bool,
}

impl ActivationProfile {
    pub fn mean_of_rows(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&h| self.values[h]).sum::<f64>() / rows.len().max(1) as f64
    }
}

pub fn activation_profile(samples: &[HmMatrix]) -> Result<ActivationProfile> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let mut means = [0.0; NUM_HMS];
    for x in samples {
        for (m, v) in means.iter_mut().zip(x.temporal_mean()) {
            *m += v;
        }
    }
    let max = means.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(ActivationProfile {
            values: [0.0; NUM_HMS],
            degenerate: true,
        });
    }
    Ok(ActivationProfile {
        values: means.map(|m| m / max),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub hm: usize,
    pub class: Label,
    pub weight: f64,
}

/// Weights and biases of the linear architecture, labeled by HM and class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub weights: Vec<WeightEntry>,
    /// `(class, bias)` for −1 then +1.
    pub biases: [(Label, f64); 2],
}

const CLASSES: [Label; 2] = [Label::Negative, Label::Positive];

fn class_str(l: Label) -> &'static str {
    match l {
        Label::Negative => "-1",
        Label::Positive => "+1",
    }
}

impl WeightReport {
    pub fn weight(&self, hm: usize, class: Label) -> f64 {
        self.weights
            .iter()
            .find(|e| e.hm == hm && e.class == class)
            .map_or(0.0, |e| e.weight)
    }

    /// HM rows whose weight toward `class` is positive.
    pub fn positive_rows(&self, class: Label) -> Vec<usize> {
        (0..NUM_HMS).filter(|&h| self.weight(h, class) > 0.0).collect()
    }

    /// `term,class,weight` rows: one per HM and class, then the two biases.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("term,class,weight\n");
        for e in &self.weights {
            let _ = writeln!(s, "{},{},{}", HM_NAMES[e.hm], class_str(e.class), e.weight);
        }
        for (c, b) in self.biases {
            let _ = writeln!(s, "bias,{},{b}", class_str(c));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<WeightReport> {
        let err = |line: usize, m: &str| Error::Parse {
            path: "weight report".into(),
            line,
            message: m.into(),
        };
        let mut weights = Vec::new();
        let mut biases = [(Label::Negative, 0.0), (Label::Positive, 0.0)];
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(err(i + 1, "expected 3 fields"));
            }
            let class = match f[1] {
                "-1" => Label::Negative,
                "+1" => Label::Positive,
                _ => return Err(err(i + 1, "class must be -1 or +1")),
            };
            let w: f64 = f[2].parse().map_err(|_| err(i + 1, "bad number"))?;
            if f[0] == "bias" {
                biases[class.class_index()].1 = w;
            } else {
                let hm = HM_NAMES
                    .iter()
                    .position(|n| *n == f[0])
                    .ok_or_else(|| err(i + 1, "unknown HM"))?;
                weights.push(WeightEntry { hm, class, weight: w });
            }
        }
        Ok(WeightReport { weights, biases })
    }
}

pub fn export_linear_weights(model: &Classifier) -> Result<WeightReport> {
    if model.arch.kind != ArchKind::Linear {
        return Err(Error::config(format!(
            "weight reports need the linear architecture, not {}",
            model.arch.kind
        )));
    }
    let w = model.params.get("out.weight").ok_or_else(|| Error::MissingParameter("out.weight".into()))?;
    let b = model.params.get("out.bias").ok_or_else(|| Error::MissingParameter("out.bias".into()))?;
    let mut weights = Vec::with_capacity(2 * NUM_HMS);
    for hm in 0..NUM_HMS {
        for class in CLASSES {
            weights.push(WeightEntry {
                hm,
                class,
                weight: w.data()[class.class_index() * NUM_HMS + hm],
            });
        }
    }
    Ok(WeightReport {
        weights,
        biases: [(Label::Negative, b.data()[0]), (Label::Positive, b.data()[1])],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean of `p_pos(A) - p_pos(B)`; `None` for an empty bin.
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

impl BinStat {
    pub fn csv(stats: &[BinStat]) -> String {
        let mut s = String::from("bin,lower,upper,count,mean_diff,var_diff,empty\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for (i, b) in stats.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{}",
                b.lower,
                b.upper,
                b.count,
                opt(b.mean),
                opt(b.variance),
                b.count == 0
            );
        }
        s
    }
}

/// Buckets genes by `ln(1 + rpkm)` rescaled to `[0, 1]` into `bins`
/// equal-width bins and summarizes the prediction difference per bin.
pub fn rpkm_binned_diff(a: &Classifier, b: &Classifier, samples: &[&GeneSample], bins: usize) -> Result<Vec<BinStat>> {
    if bins == 0 {
        return Err(Error::config("need at least one bin"));
    }
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let level: Vec<f64> = samples
        .iter()
        .map(|s| {
            s.rpkm
                .map(f64::ln_1p)
                .ok_or_else(|| Error::config(format!("gene {} has no rpkm", s.gene_id)))
        })
        .collect::<Result<_>>()?;
    let lo = level.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = level.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pa = a.predict_refs(samples.iter().map(|s| &s.x))?;
    let pb = b.predict_refs(samples.iter().map(|s| &s.x))?;

    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for (i, l) in level.iter().enumerate() {
        let u = if hi > lo { (l - lo) / (hi - lo) } else { 0.0 };
        let k = ((u * bins as f64) as usize).min(bins - 1);
        groups[k].push(pa[i][1] - pb[i][1]);
    }
    Ok(groups
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let n = d.len();
            let (mean, variance) = if n == 0 {
                (None, None)
            } else {
                let m = d.iter().sum::<f64>() / n as f64;
                let v = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
                (Some(m), Some(v))
            };
            BinStat {
                lower: k as f64 / bins as f64,
                upper: (k + 1) as f64 / bins as f64,
                count: n,
                mean,
                variance,
            }
        })
        .collect())
}
