//! Cross-cell experiment grid: plan construction, execution, Test-on-Rest
//! and result aggregation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CellCorpus, Collection, Split};
use crate::error::{Error, Result};
use crate::metrics::{correlation_matrix, CorrelationMatrix, CorrelationOptions};
use crate::models::{ArchSpec, Classifier};
use crate::rng::{derive_seed, fnv1a, rng};
use crate::training::{split_auroc, train_classifier, TrainConfig};

pub const HIGHLY_THRESHOLD: f64 = 0.75;
pub const SOMEWHAT_THRESHOLD: f64 = 0.5;
pub const RANDOM_SUBSET: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Deepchrome,
    All,
    Highly,
    Somewhat,
    Random,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Deepchrome,
        Category::All,
        Category::Highly,
        Category::Somewhat,
        Category::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Deepchrome => "deepchrome",
            Category::All => "all",
            Category::Highly => "highly",
            Category::Somewhat => "somewhat",
            Category::Random => "random",
        }
    }

    pub fn threshold(self) -> Option<f64> {
        match self {
            Category::Highly => Some(HIGHLY_THRESHOLD),
            Category::Somewhat => Some(SOMEWHAT_THRESHOLD),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown category `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanStatus {
    Runnable,
    Blank,
}

impl PlanStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanStatus::Runnable => "runnable",
            PlanStatus::Blank => "blank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub target: String,
    pub category: Category,
    pub inclusive: bool,
    pub training_cells: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_seed: Option<u64>,
    pub status: PlanStatus,
}

impl ExperimentPlan {
    /// Row label: `deepchrome` or `<category>-<inclusive|exclusive>`.
    pub fn experiment(&self) -> String {
        experiment_name(self.category, self.inclusive)
    }
}

pub fn experiment_name(category: Category, inclusive: bool) -> String {
    match category {
        Category::Deepchrome => "deepchrome".into(),
        c => format!("{c}-{}", if inclusive { "inclusive" } else { "exclusive" }),
    }
}

pub fn build_experiment_plan(
    cells: &[String],
    corr: &CorrelationMatrix,
    target: &str,
    category: Category,
    inclusive: bool,
    seed: u64,
) -> Result<ExperimentPlan> {
    if !cells.iter().any(|c| c == target) {
        return Err(Error::config(format!("target `{target}` is not among the cells")));
    }
    if !corr.normalized {
        return Err(Error::config("plans need a normalized correlation matrix"));
    }
    if let Some(missing) = cells.iter().find(|c| corr.index_of(c).is_none()) {
        return Err(Error::config(format!("correlation matrix lacks cell `{missing}`")));
    }
    let others: Vec<&String> = cells.iter().filter(|c| *c != target).collect();
    let with_target = |mut v: Vec<String>, include: bool| {
        if include {
            v.insert(0, target.to_string());
        }
        v
    };
    let mut random_seed = None;
    let (inclusive, cells_used) = match category {
        Category::Deepchrome => (true, vec![target.to_string()]),
        Category::All => (inclusive, with_target(others.iter().map(|c| c.to_string()).collect(), inclusive)),
        Category::Highly | Category::Somewhat => {
            let thr = category.threshold().expect("threshold category");
            let picked = others
                .iter()
                .filter(|c| corr.get(c, target).expect("checked") > thr)
                .map(|c| c.to_string())
                .collect();
            (inclusive, with_target(picked, inclusive))
        }
        Category::Random => {
            if others.len() < RANDOM_SUBSET {
                return Err(Error::config(format!(
                    "random category needs at least {RANDOM_SUBSET} non-target cells, have {}",
                    others.len()
                )));
            }
            let s = derive_seed(seed, fnv1a(target.as_bytes()));
            random_seed = Some(s);
            let take = if inclusive { RANDOM_SUBSET - 1 } else { RANDOM_SUBSET };
            let mut idx = index::sample(&mut rng(s, 0), others.len(), take).into_vec();
            idx.sort_unstable();
            (inclusive, with_target(idx.into_iter().map(|i| others[i].clone()).collect(), inclusive))
        }
    };
    let status = if cells_used.is_empty() {
        PlanStatus::Blank
    } else {
        PlanStatus::Runnable
    };
    Ok(ExperimentPlan {
        target: target.to_string(),
        category,
        inclusive,
        training_cells: cells_used,
        threshold: category.threshold(),
        random_seed,
        status,
    })
}

/// Every plan of the grid, target-major. `random` is skipped when there
/// are too few cells for it.
pub fn build_grid(cells: &[String], corr: &CorrelationMatrix, categories: &[Category], seed: u64) -> Result<Vec<ExperimentPlan>> {
    let mut plans = Vec::new();
    for target in cells {
        for &cat in categories {
            if cat == Category::Random && cells.len() <= RANDOM_SUBSET {
                continue;
            }
            let modes: &[bool] = if cat == Category::Deepchrome { &[true] } else { &[true, false] };
            for &inclusive in modes {
                plans.push(build_experiment_plan(cells, corr, target, cat, inclusive, seed)?);
            }
        }
    }
    Ok(plans)
}

/// Normalized correlation over one split's genes.
pub fn split_correlation(coll: &Collection, split: Split, opts: CorrelationOptions) -> Result<CorrelationMatrix> {
    let table = coll.rpkm_table()?;
    let genes: HashSet<String> = coll
        .gene_splits()
        .into_iter()
        .filter(|(_, s)| *s == split)
        .map(|(g, _)| g)
        .collect();
    correlation_matrix(&table, Some(&genes), opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub experiment: String,
    pub cell: String,
    /// Absent for blank plans.
    pub auroc: Option<f64>,
    pub status: PlanStatus,
}

fn corpus_of<'a>(corpora: &'a [CellCorpus], cell: &str) -> Result<&'a CellCorpus> {
    corpora
        .iter()
        .find(|c| c.cell_id == cell)
        .ok_or_else(|| Error::MissingCorpus(cell.to_string()))
}

/// Trains on the plan's pooled cells and scores the target's test split.
pub fn run_plan(plan: &ExperimentPlan, corpora: &[CellCorpus], arch: &ArchSpec, cfg: &TrainConfig) -> Result<ResultEntry> {
    let target = corpus_of(corpora, &plan.target)?;
    let auroc = match plan.status {
        PlanStatus::Blank => None,
        PlanStatus::Runnable => {
            let train: Vec<&CellCorpus> = plan
                .training_cells
                .iter()
                .map(|c| corpus_of(corpora, c))
                .collect::<Result<_>>()?;
            let (model, _) = train_classifier(&train, arch, cfg)?;
            Some(split_auroc(&model, target, Split::Test)?)
        }
    };
    Ok(ResultEntry {
        experiment: plan.experiment(),
        cell: plan.target.clone(),
        auroc,
        status: plan.status,
    })
}

/// Runs every plan (in parallel) and returns entries in plan order.
pub fn run_grid(plans: &[ExperimentPlan], corpora: &[CellCorpus], arch: &ArchSpec, cfg: &TrainConfig) -> Result<Vec<ResultEntry>> {
    plans
        .par_iter()
        .map(|p| run_plan(p, corpora, arch, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

pub fn results_csv(entries: &[ResultEntry]) -> String {
    let mut s = String::from("experiment,cell,auroc,status\n");
    for e in entries {
        let a = e.auroc.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(s, "{},{},{a},{}", e.experiment, e.cell, e.status.as_str());
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferPoint {
    pub correlation: f64,
    pub delta_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub train: String,
    pub test: String,
    pub point: TransferPoint,
}

/// For every ordered pair `train != test`: the AUROC of the train cell's
/// model on the test cell minus the test cell's own model, paired with
/// their normalized correlation.
pub fn test_on_rest(
    models: &[(String, Classifier)],
    corpora: &[CellCorpus],
    corr: &CorrelationMatrix,
) -> Result<Vec<TransferRecord>> {
    let own: HashMap<&str, f64> = models
        .par_iter()
        .map(|(cell, m)| Ok((cell.as_str(), split_auroc(m, corpus_of(corpora, cell)?, Split::Test)?)))
        .collect::<Result<_>>()?;
    let pairs: Vec<(&str, &Classifier, &str)> = models
        .iter()
        .flat_map(|(a, m)| {
            models
                .iter()
                .filter(move |(b, _)| b != a)
                .map(move |(b, _)| (a.as_str(), m, b.as_str()))
        })
        .collect();
    pairs
        .par_iter()
        .map(|&(a, m, b)| {
            let cross = split_auroc(m, corpus_of(corpora, b)?, Split::Test)?;
            let c = corr
                .get(a, b)
                .ok_or_else(|| Error::config(format!("no correlation for {a}/{b}")))?;
            Ok(TransferRecord {
                train: a.to_string(),
                test: b.to_string(),
                point: TransferPoint {
                    correlation: c,
                    delta_auroc: cross - own[b],
                },
            })
        })
        .collect()
}

pub fn transfer_csv(records: &[TransferRecord]) -> String {
    let mut s = String::from("train,test,correlation,delta_auroc\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.train, r.test, r.point.correlation, r.point.delta_auroc);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendlineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson r; `None` when y has zero variance.
    pub r: Option<f64>,
    pub points: usize,
}

/// Ordinary least squares of `delta_auroc` on `correlation`.
pub fn fit_trendline(points: &[TransferPoint]) -> Result<TrendlineFit> {
    if points.len() < 2 {
        return Err(Error::config("trendline needs at least 2 points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.correlation).sum::<f64>() / n;
    let my = points.iter().map(|p| p.delta_auroc).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.correlation - mx, p.delta_auroc - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let (slope, intercept) = if let [a, b] = points {
        // exact line through the two points
        let s = (b.delta_auroc - a.delta_auroc) / (b.correlation - a.correlation);
        (s, a.delta_auroc - s * a.correlation)
    } else {
        let s = sxy / sxx;
        (s, my - s * mx)
    };
    let constant_y = points.iter().all(|p| p.delta_auroc == points[0].delta_auroc);
    let r = (!constant_y && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    Ok(TrendlineFit {
        slope,
        intercept,
        r,
        points: points.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    pub experiments: Vec<String>,
    pub cells: Vec<String>,
    /// `raw[experiment][cell]`; `None` marks a blank.
    pub raw: Vec<Vec<Option<f64>>>,
    /// Per-cell-column min-max rescaling of `raw`.
    pub display: Vec<Vec<Option<f64>>>,
}

pub fn aggregate_heatmap(entries: &[ResultEntry]) -> HeatmapMatrix {
    let mut experiments: Vec<String> = Vec::new();
    let mut cells: Vec<String> = Vec::new();
    for e in entries {
        if !experiments.contains(&e.experiment) {
            experiments.push(e.experiment.clone());
        }
        if !cells.contains(&e.cell) {
            cells.push(e.cell.clone());
        }
    }
    let mut raw = vec![vec![None; cells.len()]; experiments.len()];
    for e in entries {
        let i = experiments.iter().position(|x| *x == e.experiment).expect("collected");
        let j = cells.iter().position(|x| *x == e.cell).expect("collected");
        raw[i][j] = e.auroc;
    }
    let mut display = raw.clone();
    for j in 0..cells.len() {
        let col: Vec<f64> = raw.iter().filter_map(|r| r[j]).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for row in display.iter_mut() {
            row[j] = row[j].map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 1.0 });
        }
    }
    HeatmapMatrix {
        experiments,
        cells,
        raw,
        display,
    }
}

impl HeatmapMatrix {
    fn grid_csv(&self, values: &[Vec<Option<f64>>]) -> String {
        let mut s = String::from("experiment");
        for c in &self.cells {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (e, row) in self.experiments.iter().zip(values) {
            s.push_str(e);
            for v in row {
                s.push(',');
                if let Some(v) = v {
                    let _ = write!(s, "{v}");
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn raw_csv(&self) -> String {
        self.grid_csv(&self.raw)
    }

    pub fn display_csv(&self) -> String {
        self.grid_csv(&self.display)
    }

    /// Mean of the present raw values in one experiment row.
    pub fn row_mean(&self, experiment: &str) -> Option<f64> {
        let i = self.experiments.iter().position(|e| e == experiment)?;
        let v: Vec<f64> = self.raw[i].iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("C{i}")).collect()
    }

    fn corr_with(cells: &[String], f: impl Fn(usize, usize) -> f64) -> CorrelationMatrix {
        let n = cells.len();
        CorrelationMatrix {
            cells: cells.to_vec(),
            values: (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { f(i, j) }).collect()).collect(),
            normalized: true,
            degenerate: vec![],
        }
    }

    #[test]
    fn deepchrome_trains_on_target_only() {
        let c = cells(3);
        let m = corr_with(&c, |_, _| 0.2);
        let p = build_experiment_plan(&c, &m, "C2", Category::Deepchrome, false, 0).unwrap();
        assert_eq!(p.training_cells, vec!["C2".to_string()]);
        assert_eq!(p.status, PlanStatus::Runnable);
        assert_eq!(p.experiment(), "deepchrome");
    }

    #[test]
    fn no_highly_correlated_cell_blanks_exclusive_plan() {
        let c = cells(4);
        let m = corr_with(&c, |_, _| 0.6);
        let ex = build_experiment_plan(&c, &m, "C1", Category::Highly, false, 0).unwrap();
        assert_eq!(ex.status, PlanStatus::Blank);
        assert!(ex.training_cells.is_empty());
        let some = build_experiment_plan(&c, &m, "C1", Category::Somewhat, false, 0).unwrap();
        assert_eq!(some.training_cells, vec!["C2", "C3", "C4"]);
    }

    #[test]
    fn inclusive_plans_contain_target_exclusive_never() {
        let c = cells(12);
        let m = corr_with(&c, |i, j| if (i + j) % 3 == 0 { 0.9 } else { 0.55 });
        for cat in Category::ALL {
            for target in &c {
                let inc = build_experiment_plan(&c, &m, target, cat, true, 5).unwrap();
                if inc.status == PlanStatus::Runnable {
                    assert!(inc.training_cells.contains(target));
                }
                let ex = build_experiment_plan(&c, &m, target, cat, false, 5).unwrap();
                if cat != Category::Deepchrome {
                    assert!(!ex.training_cells.contains(target));
                }
            }
        }
    }

    #[test]
    fn random_plans_have_ten_cells_and_are_reproducible() {
        let c = cells(15);
        let m = corr_with(&c, |_, _| 0.3);
        let a = build_experiment_plan(&c, &m, "C3", Category::Random, false, 9).unwrap();
        let b = build_experiment_plan(&c, &m, "C3", Category::Random, false, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.training_cells.len(), 10);
        let inc = build_experiment_plan(&c, &m, "C3", Category::Random, true, 9).unwrap();
        assert_eq!(inc.training_cells.len(), 10);
        let other = build_experiment_plan(&c, &m, "C4", Category::Random, false, 9).unwrap();
        assert_ne!(a.random_seed, other.random_seed);
        let few = cells(10);
        let m = corr_with(&few, |_, _| 0.3);
        assert!(build_experiment_plan(&few, &m, "C1", Category::Random, false, 0).is_err());
    }

    #[test]
    fn unnormalized_matrix_rejected() {
        let c = cells(3);
        let mut m = corr_with(&c, |_, _| 0.3);
        m.normalized = false;
        assert!(build_experiment_plan(&c, &m, "C1", Category::All, true, 0).is_err());
    }

    #[test]
    fn grid_skips_random_on_small_collections() {
        let c = cells(4);
        let m = corr_with(&c, |_, _| 0.8);
        let plans = build_grid(&c, &m, &Category::ALL, 0).unwrap();
        // deepchrome + 3 categories x 2 modes, per target
        assert_eq!(plans.len(), 4 * 7);
    }

    fn pts(v: &[(f64, f64)]) -> Vec<TransferPoint> {
        v.iter()
            .map(|&(x, y)| TransferPoint {
                correlation: x,
                delta_auroc: y,
            })
            .collect()
    }

    #[test]
    fn trendline_examples() {
        let f = fit_trendline(&pts(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0), (3.0, 7.0)])).unwrap();
        assert_eq!((f.slope, f.intercept, f.r), (2.0, 1.0, Some(1.0)));
        let flat = fit_trendline(&pts(&[(0.0, 0.4), (1.0, 0.4), (2.0, 0.4)])).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert_eq!(flat.r, None);
        let f = fit_trendline(&pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 1.0)])).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-15);
        assert!((f.intercept - 1.0 / 6.0).abs() < 1e-15);
        assert!((f.r.unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(matches!(fit_trendline(&pts(&[(1.0, 0.0), (1.0, 2.0)])), Err(Error::ZeroVariance)));
    }

    proptest::proptest! {
        #[test]
        fn two_point_fit_is_closed_form(x1 in -5.0f64..5.0, y1 in -5.0f64..5.0, dx in 0.01f64..5.0, y2 in -5.0f64..5.0) {
            let x2 = x1 + dx;
            let f = fit_trendline(&pts(&[(x1, y1), (x2, y2)])).unwrap();
            let slope = (y2 - y1) / (x2 - x1);
            proptest::prop_assert_eq!(f.slope, slope);
            proptest::prop_assert_eq!(f.intercept, y1 - slope * x1);
        }
    }

    fn entry(e: &str, c: &str, a: Option<f64>) -> ResultEntry {
        ResultEntry {
            experiment: e.into(),
            cell: c.into(),
            auroc: a,
            status: if a.is_some() { PlanStatus::Runnable } else { PlanStatus::Blank },
        }
    }

    #[test]
    fn single_experiment_heatmap_displays_ones() {
        let h = aggregate_heatmap(&[entry("deepchrome", "C1", Some(0.7)), entry("deepchrome", "C2", Some(0.9))]);
        assert_eq!(h.display, vec![vec![Some(1.0), Some(1.0)]]);
        assert_eq!(h.raw, vec![vec![Some(0.7), Some(0.9)]]);
    }

    #[test]
    fn blanks_survive_both_copies() {
        let h = aggregate_heatmap(&[
            entry("deepchrome", "C1", Some(0.8)),
            entry("highly-exclusive", "C1", None),
            entry("all-inclusive", "C1", Some(0.9)),
        ]);
        assert_eq!(h.raw[1][0], None);
        assert_eq!(h.display[1][0], None);
        assert_eq!(h.display[0][0], Some(0.0));
        assert_eq!(h.display[2][0], Some(1.0));
        assert_eq!(h.raw_csv(), "experiment,C1\ndeepchrome,0.8\nhighly-exclusive,\nall-inclusive,0.9\n");
        assert_eq!(
            results_csv(&[entry("highly-exclusive", "C1", None)]),
            "experiment,cell,auroc,status\nhighly-exclusive,C1,,blank\n"
        );
    }
}
