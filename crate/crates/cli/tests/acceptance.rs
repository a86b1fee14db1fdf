//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{anyhow, ensure, Context, Result};
use rand::Rng;

use hmexp_core::autodiff::fuzz::random_graph_case;
use hmexp_core::autodiff::{check_gradients_with, GradCheckOptions, Graph, Tensor};
use hmexp_core::checkpoint::Checkpoint;
use hmexp_core::crosscell::{
    build_experiment_plan, fit_trendline, run_grid, split_correlation, test_on_rest, Category, TransferPoint,
};
use hmexp_core::data::{
    generate_synthetic_corpus, parse_deepchrome_str, write_corpus_string, CellCorpus, Collection, GeneSample,
    HmMatrix, Label, Split, SyntheticSpec,
};
use hmexp_core::metrics::{auroc, mean_class_prob, uniform_random_inputs, CorrelationOptions};
use hmexp_core::models::{build_classifier, ArchKind, ArchSpec, Classifier, Discriminator, GanSpec, Generator};
use hmexp_core::rng::rng;
use hmexp_core::training::{split_auroc, train_classifier, train_gan, GanTrainConfig, TrainConfig};
use hmexp_core::visualization::{activation_profile, mc_sample_select_many, SelectionSpec};

const FIXTURE_SEED: u64 = 11;
const ARCHS: [ArchKind; 4] = [ArchKind::Original, ArchKind::Avgpool, ArchKind::Strided, ArchKind::Linear];

struct Ctx {
    spec: SyntheticSpec,
    corpora: Vec<CellCorpus>,
    /// Per-architecture models, one per cell.
    models: BTreeMap<ArchKind, Vec<Classifier>>,
    gan: Option<(Generator, Discriminator)>,
}

impl Ctx {
    fn model(&self, kind: ArchKind, cell: usize) -> Result<&Classifier> {
        self.models
            .get(&kind)
            .and_then(|v| v.get(cell))
            .ok_or_else(|| anyhow!("prerequisite failed: no trained {kind} model"))
    }
}

fn short_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        seed,
        ..Default::default()
    }
}

// 1. gradient fidelity
fn c1(_: &mut Ctx) -> Result<String> {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut case = random_graph_case(seed);
        let err = case.check(1e-6)?;
        ensure!(err < 1e-4, "random graph {seed}: relative error {err:e}");
        worst = worst.max(err);
    }

    let arch = ArchSpec::new(ArchKind::Original);
    let model = build_classifier(&arch, 3)?;
    let mut g = Graph::new();
    let x = g.input("x");
    let probs = arch.append(&mut g, x, "");
    let t = g.input("t");
    let loss = g.cross_entropy(probs, t);
    g.set_training(false);
    let mut r = rng(5, 0);
    let xs = Tensor::new(vec![2, 5, 100], (0..1000).map(|_| r.random_range(0.0..3.0)).collect());
    let inputs = [("x", xs), ("t", Tensor::new(vec![2], vec![0.0, 1.0]))];
    let opts = GradCheckOptions {
        epsilon: 1e-6,
        max_entries_per_param: Some(60),
        include_inputs: true,
        seed: 9,
    };
    let full = check_gradients_with(&mut g, &model.params, &inputs, loss, &opts)?;
    ensure!(full < 1e-4, "original architecture: relative error {full:e}");
    Ok(format!("100 random graphs max err {worst:.1e}; original arch err {full:.1e}"))
}

// 2. parameter accounting
fn c2(_: &mut Ctx) -> Result<String> {
    let count = |k| -> Result<usize> { Ok(build_classifier(&ArchSpec::new(k), 0)?.count_parameters()) };
    let dense = |i: usize, o: usize| i * o + o;
    let conv = 50 * 5 * 10 + 50;
    // conv 91 wide, pooled 5/5 to 18; strided conv (100-10)/11+1 = 9 wide
    let original_oracle = conv + dense(50 * 18, 625) + dense(625, 125) + dense(125, 2);
    let strided_oracle = conv + dense(50 * 9, 625) + dense(625, 125) + dense(125, 2);
    let (lin, orig, avg, strided) = (
        count(ArchKind::Linear)?,
        count(ArchKind::Original)?,
        count(ArchKind::Avgpool)?,
        count(ArchKind::Strided)?,
    );
    ensure!(lin == 12, "linear has {lin}");
    ensure!(orig == original_oracle && orig == 644_177, "original has {orig}, oracle {original_oracle}");
    ensure!(avg == orig, "avgpool has {avg}");
    ensure!((orig as f64 - 645_000.0).abs() / 645_000.0 < 0.005, "original far from 645k");
    ensure!(strided == strided_oracle, "strided has {strided}, oracle {strided_oracle}");
    ensure!((strided as f64 - 360_000.0).abs() <= 0.05 * 360_000.0, "strided {strided} outside 360k ± 5%");
    Ok(format!("linear {lin}, original {orig}, strided {strided}"))
}

fn pairwise_auroc(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut num, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != Label::Positive {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == Label::Negative {
                pairs += 1;
                num += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
    }
    num as f64 / (2 * pairs) as f64
}

// 3. AUROC oracle equivalence
fn c3(_: &mut Ctx) -> Result<String> {
    let mut r = rng(3, 3);
    let mut tied = 0;
    for case in 0..1000 {
        let n = r.random_range(2..=50);
        let levels = r.random_range(1..=12);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / 4.0).collect();
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if r.random_bool(0.5) { Label::Positive } else { Label::Negative })
            .collect();
        labels[0] = Label::Positive;
        labels[1] = Label::Negative;
        let fast = auroc(&scores, &labels)?;
        let slow = pairwise_auroc(&scores, &labels);
        ensure!(fast == slow, "instance {case}: rank {fast} vs pairwise {slow}");
        if levels < n {
            tied += 1;
        }
    }
    Ok(format!("1000 instances equal ({tied} with forced ties)"))
}

// 4. architecture comparison on the planted corpus
fn c4(ctx: &mut Ctx) -> Result<String> {
    let mut means = Vec::new();
    let mut detail = Vec::new();
    for kind in ARCHS {
        let arch = ArchSpec::new(kind);
        let mut models = Vec::new();
        let mut scores = Vec::new();
        for (i, c) in ctx.corpora.iter().enumerate() {
            let (m, _) = train_classifier(&[c], &arch, &short_train(100 + i as u64))?;
            scores.push(split_auroc(&m, c, Split::Test)?);
            models.push(m);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        ctx.models.insert(kind, models);
        detail.push(format!("{kind} {mean:.3}"));
        ensure!(mean >= 0.90, "{kind}: mean test AUROC {mean:.4} (per cell {scores:?})");
        means.push(mean);
    }
    let spread = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) - means.iter().copied().fold(f64::INFINITY, f64::min);
    ensure!(spread <= 0.05, "architectures differ by {spread:.4}");
    Ok(format!("{}; spread {spread:.3}", detail.join(", ")))
}

// 5. class probabilities of real, generated and random inputs
fn c5(ctx: &mut Ctx) -> Result<String> {
    let real_train: Vec<HmMatrix> = ctx
        .corpora
        .iter()
        .flat_map(|c| c.train.iter().map(|g| g.x.clone()))
        .collect();
    let cfg = GanTrainConfig {
        seed: 1,
        ..Default::default()
    };
    let (gen, disc, _) = train_gan(&real_train, &GanSpec::default(), &cfg)?;
    let clf = ctx.model(ArchKind::Original, 0)?;
    let held_out: Vec<&HmMatrix> = ctx.corpora[0].test.iter().map(|g| &g.x).collect();
    let n = held_out.len();
    let high = held_out.iter().flat_map(|x| x.data()).copied().fold(0.0, f64::max);
    let (real, _) = mean_class_prob(clf, held_out.iter().copied())?;
    let (fake, _) = mean_class_prob(clf, &gen.sample(n, 2)?)?;
    let (noise, _) = mean_class_prob(clf, &uniform_random_inputs(n, high, 2)?)?;
    ctx.gan = Some((gen, disc));
    ensure!((fake - real).abs() <= 0.05, "GAN {fake:.4} vs real {real:.4}");
    ensure!((noise - real).abs() >= 0.05, "random {noise:.4} vs real {real:.4}");
    Ok(format!("mean p_pos real {real:.3} / GAN {fake:.3} / random {noise:.3}"))
}

// 6. Monte Carlo class profiles
fn c6(ctx: &mut Ctx) -> Result<String> {
    let clf = ctx.model(ArchKind::Original, 0)?;
    let (gen, _) = ctx.gan.as_ref().ok_or_else(|| anyhow!("prerequisite failed: no GAN"))?;
    let specs = [
        SelectionSpec::top_k(100_000, 100, Label::Positive),
        SelectionSpec::top_k(100_000, 100, Label::Negative),
    ];
    let sels = mc_sample_select_many(gen, clf, &specs, 6)?;
    let (prom, rep) = (ctx.spec.promoter_rows(), ctx.spec.repressor_rows());
    let mut detail = Vec::new();
    for sel in &sels {
        ensure!(sel.samples.len() == 100, "selected {}", sel.samples.len());
        let p = activation_profile(&sel.matrices())?;
        let (a, b) = (p.mean_of_rows(&prom), p.mean_of_rows(&rep));
        match sel.class {
            Label::Positive => ensure!(a > b, "+1: promoter {a:.3} <= repressor {b:.3}"),
            Label::Negative => ensure!(b > a, "-1: repressor {b:.3} <= promoter {a:.3}"),
        }
        detail.push(format!("{:?} promoter {a:.3} repressor {b:.3}", sel.class));
    }
    Ok(detail.join("; "))
}

// 7. cross-cell pooling and transfer on a 4-cell fixture
fn c7(_: &mut Ctx) -> Result<String> {
    let spec = SyntheticSpec {
        cells: 4,
        ..Default::default()
    };
    let coll = Collection::new(generate_synthetic_corpus(&spec, 23)?);
    let corr = split_correlation(&coll, Split::Train, CorrelationOptions::default())?;
    let cells = coll.cell_ids();
    let arch = ArchSpec::new(ArchKind::Original);
    let cfg = TrainConfig {
        epochs: 6,
        seed: 7,
        ..Default::default()
    };
    let mut plans = Vec::new();
    for t in &cells {
        plans.push(build_experiment_plan(&cells, &corr, t, Category::Deepchrome, true, 7)?);
        plans.push(build_experiment_plan(&cells, &corr, t, Category::All, true, 7)?);
    }
    let results = run_grid(&plans, &coll.corpora, &arch, &cfg)?;
    let mean_of = |exp: &str| -> Result<f64> {
        let v: Vec<f64> = results.iter().filter(|e| e.experiment == exp).filter_map(|e| e.auroc).collect();
        ensure!(v.len() == 4, "{exp}: {} results", v.len());
        Ok(v.iter().sum::<f64>() / 4.0)
    };
    let (base, pooled) = (mean_of("deepchrome")?, mean_of("all-inclusive")?);
    ensure!(pooled >= base - 0.02, "all-inclusive {pooled:.4} < deepchrome {base:.4} - 0.02");

    let models: Vec<(String, Classifier)> = coll
        .corpora
        .iter()
        .map(|c| Ok((c.cell_id.clone(), train_classifier(&[c], &arch, &cfg)?.0)))
        .collect::<Result<_>>()?;
    let records = test_on_rest(&models, &coll.corpora, &corr)?;
    ensure!(records.len() == 12, "{} transfer pairs", records.len());
    let points: Vec<TransferPoint> = records.iter().map(|r| r.point).collect();
    let fit = fit_trendline(&points)?;
    let r = fit.r.unwrap_or(0.0);
    ensure!(r.abs() < 0.3, "trendline r = {r:.3} (slope {:.4})", fit.slope);
    Ok(format!(
        "deepchrome {base:.3}, all-inclusive {pooled:.3}; trendline slope {:.4}, r {r:.3}",
        fit.slope
    ))
}

// 8. linear weights follow the planted rule
fn c8(ctx: &mut Ctx) -> Result<String> {
    let (prom, rep) = (ctx.spec.promoter_rows(), ctx.spec.repressor_rows());
    let mut margin = f64::INFINITY;
    for cell in 0..ctx.corpora.len() {
        let report = hmexp_core::visualization::export_linear_weights(ctx.model(ArchKind::Linear, cell)?)?;
        for &p in &prom {
            for &q in &rep {
                let (wp, wq) = (report.weight(p, Label::Positive), report.weight(q, Label::Positive));
                ensure!(wp > wq, "cell {cell}: w(row {p}) {wp:.4} <= w(row {q}) {wq:.4}");
                margin = margin.min(wp - wq);
            }
        }
    }
    Ok(format!("all 3 cells, smallest promoter-repressor margin {margin:.4}"))
}

fn hmexp(args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_hmexp")).args(args).output()?;
    ensure!(
        out.status.success(),
        "hmexp {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn dir_contents(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut m = BTreeMap::new();
    for e in std::fs::read_dir(dir)? {
        let e = e?;
        m.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path())?);
    }
    Ok(m)
}

// 9. byte-identical CLI reruns
fn c9(_: &mut Ctx) -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let p = |s: &str| -> String { tmp.path().join(s).display().to_string() };
    let data = p("a/synth");
    let (clf, gan) = (p("a/train/checkpoint.json"), p("a/train-gan/gan.json"));
    let fit = ["--epochs", "2", "--arch", "linear"];
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("synth", vec!["--cells", "3", "--genes", "90"]),
        ("train", [&["--data", &data, "--cell", "C1,C2"][..], &fit].concat()),
        (
            "train-gan",
            vec!["--data", &data, "--cell", "C1", "--epochs", "2", "--latent-dim", "8", "--generator-hidden", "16", "--discriminator-hidden", "16"],
        ),
        ("visualize-opt", vec!["--classifier", &clf, "--gan", &gan, "--iterations", "15"]),
        ("visualize-mc", vec!["--classifier", &clf, "--gan", &gan, "--n", "3000", "--k", "20"]),
        ("cross-cell", [&["--data", &data][..], &fit].concat()),
        ("test-on-rest", [&["--data", &data][..], &fit].concat()),
        ("metrics", vec!["--data", &data, "--classifier", &clf, "--cell", "C2", "--gan", &gan]),
        ("weights-report", vec!["--classifier", &clf]),
        ("rpkm-diff", vec!["--data", &data, "--cell", "C3", "--a", &clf, "--b", &clf, "--bins", "5"]),
    ];
    let mut files = 0;
    for (cmd, args) in &runs {
        let mut dirs: Vec<PathBuf> = Vec::new();
        for (run, workers) in [("a", None), ("b", None), ("c", Some("1"))] {
            let out = tmp.path().join(run).join(cmd);
            let mut argv = vec!["--out", out.to_str().unwrap(), "--seed", "4"];
            if let Some(w) = workers {
                argv.extend(["--workers", w]);
            }
            argv.push(cmd);
            argv.extend(args.iter().copied());
            hmexp(&argv).with_context(|| format!("run {run}"))?;
            dirs.push(out);
        }
        let first = dir_contents(&dirs[0])?;
        ensure!(first.contains_key("manifest.json"), "{cmd}: no manifest");
        for other in &dirs[1..] {
            let o = dir_contents(other)?;
            ensure!(o.keys().eq(first.keys()), "{cmd}: file sets differ");
            for (name, bytes) in &first {
                ensure!(&o[name] == bytes, "{cmd}: {name} differs between runs");
            }
        }
        files += first.len();
    }
    Ok(format!("10 subcommands x 3 runs, {files} files identical"))
}

fn same_samples(a: &[GeneSample], b: &[GeneSample], with_rpkm: bool) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.gene_id == y.gene_id && x.x == y.x && x.label == y.label && (!with_rpkm || x.rpkm == y.rpkm)
        })
}

// 10. round trips
fn c10(ctx: &mut Ctx) -> Result<String> {
    for c in &ctx.corpora {
        let all: Vec<GeneSample> = c.all().cloned().collect();
        let text = write_corpus_string(&all);
        let parsed = parse_deepchrome_str(&text, &c.cell_id)?;
        ensure!(same_samples(&parsed, &all, false), "{}: parse differs", c.cell_id);
        ensure!(write_corpus_string(&parsed) == text, "{}: reserialization differs", c.cell_id);
    }
    let tmp = tempfile::tempdir()?;
    let coll = Collection::new(ctx.corpora.clone());
    coll.save(tmp.path())?;
    let back = Collection::load(tmp.path())?;
    for (a, b) in coll.corpora.iter().zip(&back.corpora) {
        for s in Split::ALL {
            ensure!(same_samples(a.split(s), b.split(s), true), "{} {:?} changed", a.cell_id, s);
        }
    }

    let mut checked = 0;
    let mut ckpts: Vec<Checkpoint> = ctx
        .models
        .values()
        .filter_map(|v| v.first())
        .map(Checkpoint::from_classifier)
        .collect();
    if let Some((g, d)) = &ctx.gan {
        ckpts.push(Checkpoint::from_gan(g, d, 1));
    }
    ensure!(ckpts.len() == 5, "prerequisite failed: {} of 5 trained models", ckpts.len());
    for (i, ck) in ckpts.iter().enumerate() {
        let path = tmp.path().join(format!("ck{i}.json"));
        ck.save(&path)?;
        let loaded = Checkpoint::load(&path)?;
        ensure!(&loaded == ck, "checkpoint {i} changed");
        let again = tmp.path().join(format!("ck{i}b.json"));
        loaded.save(&again)?;
        ensure!(std::fs::read(&path)? == std::fs::read(&again)?, "checkpoint {i} bytes changed");
        checked += 1;
    }
    Ok(format!("3 corpora, 1 collection, {checked} checkpoints"))
}

type Criterion = fn(&mut Ctx) -> Result<String>;

fn main() {
    let spec = SyntheticSpec::default();
    let corpora = generate_synthetic_corpus(&spec, FIXTURE_SEED).expect("fixture");
    let mut ctx = Ctx {
        spec,
        corpora,
        models: BTreeMap::new(),
        gan: None,
    };
    let criteria: [(&str, Criterion, Option<u64>); 10] = [
        ("gradient fidelity", c1, Some(120)),
        ("parameter accounting", c2, Some(1)),
        ("AUROC oracle equivalence", c3, Some(30)),
        ("architecture comparison", c4, Some(600)),
        ("GAN class probabilities", c5, Some(600)),
        ("Monte Carlo profiles", c6, Some(120)),
        ("cross-cell pooling and transfer", c7, Some(900)),
        ("linear weights", c8, Some(1)),
        ("CLI determinism", c9, None),
        ("round-trip integrity", c10, None),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut ctx)))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(anyhow!("panic: {msg}"))
            })
            .and_then(|detail| match limit {
                Some(s) if start.elapsed() > Duration::from_secs(s) => {
                    Err(anyhow!("took {:.1}s, limit {s}s ({detail})", start.elapsed().as_secs_f64()))
                }
                _ => Ok(detail),
            });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL  {:>2} {name}: {e:#} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
