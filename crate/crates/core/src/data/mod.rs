//! Gene samples, cell corpora and their file formats.

mod binning;
mod collection;
mod csv;
mod expression;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use binning::{bin_reads, Strand, BIN_WIDTH, WINDOW_HALF_WIDTH};
pub use collection::{Collection, RPKM_FILE, SPLITS_FILE};
pub use csv::{
    parse_deepchrome_csv, parse_deepchrome_str, read_rpkm_table, write_corpus_csv, write_corpus_string,
    write_rpkm_table, RpkmTable,
};
pub use expression::binarize_expression;
pub use split::{split_genes, SplitCounts};
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};

pub const NUM_HMS: usize = 5;
pub const NUM_BINS: usize = 100;

/// Row order of every [`HmMatrix`].
pub const HM_NAMES: [&str; NUM_HMS] = ["H3K27me3", "H3K36me3", "H3K4me1", "H3K4me3", "H3K9me3"];

/// 5×100 binned histone-modification signal around one TSS.
#[derive(Debug, Clone, PartialEq)]
pub struct HmMatrix {
    data: Vec<f64>,
}

impl HmMatrix {
    pub fn zeros() -> Self {
        HmMatrix {
            data: vec![0.0; NUM_HMS * NUM_BINS],
        }
    }

    /// Row-major values; rejects wrong lengths, negatives and non-finite entries.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != NUM_HMS * NUM_BINS {
            return Err(Error::config(format!(
                "HM matrix needs {} values, got {}",
                NUM_HMS * NUM_BINS,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::config(format!("HM matrix entry {v} is negative or non-finite")));
        }
        Ok(HmMatrix { data })
    }

    /// Unchecked constructor for probes that may leave the non-negative orthant.
    pub fn from_vec_unchecked(data: Vec<f64>) -> Self {
        assert_eq!(data.len(), NUM_HMS * NUM_BINS);
        HmMatrix { data }
    }

    pub fn get(&self, hm: usize, bin: usize) -> f64 {
        self.data[hm * NUM_BINS + bin]
    }

    pub fn set(&mut self, hm: usize, bin: usize, v: f64) {
        self.data[hm * NUM_BINS + bin] = v;
    }

    pub fn row(&self, hm: usize) -> &[f64] {
        &self.data[hm * NUM_BINS..(hm + 1) * NUM_BINS]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Per-HM mean over bins.
    pub fn temporal_mean(&self) -> [f64; NUM_HMS] {
        let mut out = [0.0; NUM_HMS];
        for (h, o) in out.iter_mut().enumerate() {
            *o = self.row(h).iter().sum::<f64>() / NUM_BINS as f64;
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> HmMatrix {
        HmMatrix {
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Stacks matrices into a `[n, 5, 100]` tensor.
pub fn batch_tensor<'a>(xs: impl IntoIterator<Item = &'a HmMatrix>) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for x in xs {
        data.extend_from_slice(&x.data);
        n += 1;
    }
    Tensor::new(vec![n, NUM_HMS, NUM_BINS], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "-1")]
    Negative,
    #[serde(rename = "+1")]
    Positive,
}

impl Label {
    pub fn from_sign(v: i64) -> Option<Label> {
        match v {
            -1 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }

    /// Softmax output slot: 0 for −1, 1 for +1.
    pub fn class_index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneSample {
    pub gene_id: String,
    pub x: HmMatrix,
    pub label: Label,
    pub rpkm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "validation" | "valid" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    RealFormat,
    Synthetic,
}

/// One cell type's labeled samples, split three ways.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCorpus {
    pub cell_id: String,
    pub train: Vec<GeneSample>,
    pub validation: Vec<GeneSample>,
    pub test: Vec<GeneSample>,
    pub provenance: Provenance,
}

impl CellCorpus {
    pub fn split(&self, split: Split) -> &[GeneSample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// All samples in train, validation, test order.
    pub fn all(&self) -> impl Iterator<Item = &GeneSample> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
