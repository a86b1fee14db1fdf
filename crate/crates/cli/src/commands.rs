use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::json;

use hmexp_core::checkpoint::Checkpoint;
use hmexp_core::crosscell::{
    aggregate_heatmap, build_grid, fit_trendline, results_csv, run_grid, split_correlation, test_on_rest,
    transfer_csv, Category, TransferPoint, RANDOM_SUBSET,
};
use hmexp_core::data::{
    generate_synthetic_corpus, CellCorpus, Collection, GeneSample, HmMatrix, Label, Split, SyntheticSpec,
    HM_NAMES, NUM_BINS, NUM_HMS,
};
use hmexp_core::error::Error;
use hmexp_core::metrics::{correlation_matrix, mean_class_prob, uniform_random_inputs, CorrelationOptions};
use hmexp_core::models::{ArchSpec, Classifier, Discriminator, GanSpec, Generator};
use hmexp_core::training::{
    evaluate_auroc, select_best_of_k, split_auroc, train_classifier, train_gan, GanTrainConfig, TrainHistory,
};
use hmexp_core::visualization::{
    activation_profile, export_linear_weights, mc_sample_select_many, optimize_input, rpkm_binned_diff, BinStat,
    InitMode, LossSpec, SelectionMode, SelectionSpec,
};

use crate::args::*;
use crate::output::Output;
use crate::UsageError;

pub fn run(cli: &Cli) -> Result<()> {
    let out = Output::new(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let seed = cli.seed;
    match &cli.command {
        Command::Synth(a) => synth(a, seed, out),
        Command::Train(a) => train(a, seed, out),
        Command::TrainGan(a) => train_gan_cmd(a, seed, out),
        Command::VisualizeOpt(a) => visualize_opt(a, seed, out),
        Command::VisualizeMc(a) => visualize_mc(a, seed, out),
        Command::CrossCell(a) => cross_cell(a, seed, out),
        Command::TestOnRest(a) => test_on_rest_cmd(a, seed, out),
        Command::Metrics(a) => metrics(a, seed, out),
        Command::WeightsReport(a) => weights_report(a, seed, out),
        Command::RpkmDiff(a) => rpkm_diff(a, seed, out),
    }
}

fn require(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(UsageError(format!("input not found: {}", path.display())).into());
    }
    Ok(path.display().to_string())
}

fn load_data(path: &Path) -> Result<Collection> {
    require(path)?;
    Collection::load(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn pick<'a>(coll: &'a Collection, names: &[String]) -> Result<Vec<&'a CellCorpus>> {
    names
        .iter()
        .map(|n| {
            coll.get(n)
                .ok_or_else(|| UsageError(format!("unknown cell `{n}` (have {})", coll.cell_ids().join(", "))).into())
        })
        .collect()
}

fn load_classifier(path: &Path) -> Result<Classifier> {
    require(path)?;
    let c = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(c.into_classifier()?)
}

fn load_gan(path: &Path) -> Result<(Generator, Discriminator)> {
    require(path)?;
    let c = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(c.into_gan()?)
}

fn correlation_options(raw: bool) -> CorrelationOptions {
    CorrelationOptions {
        log_transform: !raw,
        normalize: true,
    }
}

fn class_str(l: Label) -> &'static str {
    match l {
        Label::Positive => "+1",
        Label::Negative => "-1",
    }
}

fn synth(a: &SynthArgs, seed: u64, mut out: Output) -> Result<()> {
    let mut spec = SyntheticSpec {
        cells: a.cells,
        genes_per_cell: a.genes,
        cell_perturbations: a.cell_perturbations.clone(),
        ..Default::default()
    };
    if let Some(p) = a.perturbation {
        spec.perturbation = p;
    }
    if let Some(n) = a.noise {
        spec.noise_scale = n;
    }
    let coll = Collection::new(generate_synthetic_corpus(&spec, seed)?);
    coll.save(out.dir())?;
    for c in coll.cell_ids() {
        out.record(format!("{c}.csv"));
    }
    out.record(hmexp_core::data::RPKM_FILE);
    out.record(hmexp_core::data::SPLITS_FILE);
    out.finish("synth", seed, vec![], json!({ "synthetic": spec }))
}

fn write_history(out: &mut Output, h: &TrainHistory) -> Result<()> {
    out.text("history.csv", &h.to_csv_string())?;
    for w in &h.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn train(a: &TrainArgs, seed: u64, mut out: Output) -> Result<()> {
    let input = require(&a.data)?;
    let coll = load_data(&a.data)?;
    let corpora = pick(&coll, &a.cell)?;
    let arch = ArchSpec::new(a.fit.arch.into());
    let cfg = a.fit.train_config(seed);
    let run = if a.best_of > 1 {
        select_best_of_k(&corpora, &arch, a.best_of, &cfg).map(|(m, h, c)| (m, h, Some(c)))
    } else {
        train_classifier(&corpora, &arch, &cfg).map(|(m, h)| (m, h, None))
    };
    let (model, history, candidates) = match run {
        Ok(r) => r,
        Err(Error::Diverged { epoch, history }) => {
            write_history(&mut out, &history)?;
            anyhow::bail!("training diverged at epoch {epoch}; partial history in {}", out.path("history.csv").display());
        }
        Err(e) => return Err(e.into()),
    };
    out.checkpoint("checkpoint.json", &Checkpoint::from_classifier(&model))?;
    write_history(&mut out, &history)?;
    let mut eval = String::from("cell,split,auroc\n");
    for c in &corpora {
        for split in [Split::Validation, Split::Test] {
            let v = split_auroc(&model, c, split)?;
            let _ = writeln!(eval, "{},{},{v}", c.cell_id, split.as_str());
        }
    }
    out.text("evaluation.csv", &eval)?;
    if let Some(cands) = candidates {
        let mut s = String::from("seed,val_auroc\n");
        for c in cands {
            let _ = writeln!(s, "{},{}", c.seed, c.val_auroc);
        }
        out.text("candidates.csv", &s)?;
    }
    out.json(
        "summary.json",
        &json!({
            "selected_epoch": history.selected_epoch,
            "best_val_auroc": history.best_val_auroc(),
            "warnings": history.warnings,
        }),
    )?;
    let config = json!({ "cells": a.cell, "arch": arch, "train": cfg, "best_of": a.best_of });
    out.finish("train", seed, vec![input], config)
}

fn train_gan_cmd(a: &TrainGanArgs, seed: u64, mut out: Output) -> Result<()> {
    let input = require(&a.data)?;
    let coll = load_data(&a.data)?;
    let split: Split = a.split.into();
    let real: Vec<HmMatrix> = pick(&coll, &a.cell)?
        .iter()
        .flat_map(|c| c.split(split).iter().map(|g| g.x.clone()))
        .collect();
    let spec = GanSpec {
        latent_dim: a.latent_dim,
        generator_hidden: a.generator_hidden.clone(),
        discriminator_hidden: a.discriminator_hidden.clone(),
    };
    let mut cfg = GanTrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed,
        ..Default::default()
    };
    cfg.optimizer.learning_rate = a.lr;
    cfg.optimizer.beta1 = a.beta1;
    let (g, d, history) = train_gan(&real, &spec, &cfg)?;
    for w in &history.warnings {
        eprintln!("warning: {w}");
    }
    out.checkpoint("gan.json", &Checkpoint::from_gan(&g, &d, seed))?;
    out.text("gan_history.csv", &history.to_csv_string())?;
    out.json("summary.json", &json!({ "real_samples": real.len(), "warnings": history.warnings }))?;
    let config = json!({ "cells": a.cell, "split": split.as_str(), "gan": spec, "train": cfg });
    out.finish("train-gan", seed, vec![input], config)
}

fn matrix_csv(data: &[f64]) -> String {
    let mut s = String::from("hm,bin,value\n");
    for h in 0..NUM_HMS {
        for b in 0..NUM_BINS {
            let _ = writeln!(s, "{},{b},{}", HM_NAMES[h], data[h * NUM_BINS + b]);
        }
    }
    s
}

fn visualize_opt(a: &VisualizeOptArgs, seed: u64, mut out: Output) -> Result<()> {
    let mut inputs = vec![require(&a.classifier)?];
    let clf = load_classifier(&a.classifier)?;
    let gan = match &a.gan {
        Some(p) => {
            inputs.push(require(p)?);
            Some(load_gan(p)?)
        }
        None => None,
    };
    let spec = LossSpec {
        target: a.class.into(),
        lambda: a.lambda,
        phi: a.phi,
        step_size: a.step,
        iterations: a.iterations,
        init: match a.init {
            InitArg::Hot => InitMode::GeneratorHotStart,
            InitArg::Uniform => InitMode::RandomUniform { high: a.uniform_high },
        },
    };
    let r = optimize_input(
        &clf,
        gan.as_ref().map(|(_, d)| d),
        gan.as_ref().map(|(g, _)| g),
        &spec,
        seed,
    )?;
    out.text("trajectory.csv", &r.trajectory_csv())?;
    out.text("optimized.csv", &matrix_csv(r.best.data()))?;
    out.text("initial.csv", &matrix_csv(r.initial.data()))?;
    out.json(
        "summary.json",
        &json!({ "best_iteration": r.best_iteration, "best": r.best_point() }),
    )?;
    out.finish("visualize-opt", seed, inputs, json!({ "loss": spec }))
}

fn visualize_mc(a: &VisualizeMcArgs, seed: u64, mut out: Output) -> Result<()> {
    let inputs = vec![require(&a.classifier)?, require(&a.gan)?];
    let clf = load_classifier(&a.classifier)?;
    let (g, _) = load_gan(&a.gan)?;
    let mode = match a.mode {
        ModeArg::TopK => SelectionMode::TopK,
        ModeArg::Threshold => SelectionMode::Threshold { threshold: a.threshold },
    };
    let mut profile = String::from("class,hm,activation\n");
    let mut picks = String::from("class,rank,index,prob\n");
    let mut summary = Vec::new();
    let specs: Vec<SelectionSpec> = [Label::Positive, Label::Negative]
        .into_iter()
        .map(|class| SelectionSpec {
            n: a.n,
            k: a.k,
            mode,
            class,
        })
        .collect();
    for sel in mc_sample_select_many(&g, &clf, &specs, seed)? {
        let class = sel.class;
        let (values, degenerate) = if sel.samples.is_empty() {
            ([0.0; NUM_HMS], true)
        } else {
            let p = activation_profile(&sel.matrices())?;
            (p.values, p.degenerate)
        };
        let c = class_str(class);
        for (h, v) in values.iter().enumerate() {
            let _ = writeln!(profile, "{c},{},{v}", HM_NAMES[h]);
        }
        for (rank, s) in sel.samples.iter().enumerate() {
            let _ = writeln!(picks, "{c},{rank},{},{}", s.index, s.prob);
        }
        if sel.exhausted {
            eprintln!("warning: class {c}: only {} of {} samples passed the threshold", sel.samples.len(), a.k);
        }
        summary.push(json!({
            "class": class,
            "generated": sel.generated,
            "selected": sel.samples.len(),
            "exhausted": sel.exhausted,
            "degenerate_profile": degenerate,
        }));
    }
    out.text("profile.csv", &profile)?;
    out.text("selections.csv", &picks)?;
    out.json("summary.json", &summary)?;
    out.finish("visualize-mc", seed, inputs, json!({ "selection": specs }))
}

fn cross_cell(a: &CrossCellArgs, seed: u64, mut out: Output) -> Result<()> {
    let input = require(&a.data)?;
    let coll = load_data(&a.data)?;
    let opts = correlation_options(a.raw_correlation);
    let corr = split_correlation(&coll, Split::Train, opts)?;
    let cells = coll.cell_ids();
    let categories: Vec<Category> = a.categories.iter().map(|&c| c.into()).collect();
    if categories.contains(&Category::Random) && cells.len() <= RANDOM_SUBSET {
        eprintln!(
            "note: skipping the random category ({} cells; it needs more than {RANDOM_SUBSET})",
            cells.len()
        );
    }
    let plans = build_grid(&cells, &corr, &categories, seed)?;
    let arch = ArchSpec::new(a.fit.arch.into());
    let cfg = a.fit.train_config(seed);
    let entries = run_grid(&plans, &coll.corpora, &arch, &cfg)?;
    let heat = aggregate_heatmap(&entries);
    out.text("correlation.csv", &corr.to_csv_string())?;
    out.json("plans.json", &plans)?;
    out.text("results.csv", &results_csv(&entries))?;
    out.text("heatmap_raw.csv", &heat.raw_csv())?;
    out.text("heatmap_display.csv", &heat.display_csv())?;
    let config = json!({
        "categories": categories,
        "correlation": opts,
        "correlation_split": Split::Train.as_str(),
        "arch": arch,
        "train": cfg,
    });
    out.finish("cross-cell", seed, vec![input], config)
}

fn test_on_rest_cmd(a: &TestOnRestArgs, seed: u64, mut out: Output) -> Result<()> {
    let input = require(&a.data)?;
    let coll = load_data(&a.data)?;
    let opts = correlation_options(a.raw_correlation);
    let corr = split_correlation(&coll, Split::Train, opts)?;
    let arch = ArchSpec::new(a.fit.arch.into());
    let cfg = a.fit.train_config(seed);
    let models: Vec<(String, Classifier)> = coll
        .corpora
        .par_iter()
        .map(|c| train_classifier(&[c], &arch, &cfg).map(|(m, _)| (c.cell_id.clone(), m)))
        .collect::<Result<_, _>>()?;
    let records = test_on_rest(&models, &coll.corpora, &corr)?;
    let points: Vec<TransferPoint> = records.iter().map(|r| r.point).collect();
    let trend = match fit_trendline(&points) {
        Ok(f) => json!({ "fit": f }),
        Err(Error::ZeroVariance) => json!({ "fit": null, "reason": "all pairs share one correlation" }),
        Err(e) => return Err(e.into()),
    };
    let mut own = String::from("cell,auroc\n");
    for ((cell, m), c) in models.iter().zip(&coll.corpora) {
        let _ = writeln!(own, "{cell},{}", split_auroc(m, c, Split::Test)?);
    }
    out.text("correlation.csv", &corr.to_csv_string())?;
    out.text("own.csv", &own)?;
    out.text("transfer.csv", &transfer_csv(&records))?;
    out.json("trendline.json", &trend)?;
    let config = json!({
        "correlation": opts,
        "correlation_split": Split::Train.as_str(),
        "arch": arch,
        "train": cfg,
    });
    out.finish("test-on-rest", seed, vec![input], config)
}

fn metrics(a: &MetricsArgs, seed: u64, mut out: Output) -> Result<()> {
    let mut inputs = vec![require(&a.data)?];
    let coll = load_data(&a.data)?;
    let table = coll.rpkm_table()?;
    let opts = correlation_options(a.raw_correlation);
    let raw = correlation_matrix(&table, None, CorrelationOptions { normalize: false, ..opts })?;
    out.text("correlation_raw.csv", &raw.to_csv_string())?;
    for split in Split::ALL {
        let m = split_correlation(&coll, split, opts)?;
        out.text(&format!("correlation_{}.csv", split.as_str()), &m.to_csv_string())?;
    }
    let split: Split = a.split.into();

    if let (Some(path), Some(cell)) = (&a.classifier, &a.cell) {
        inputs.push(require(path)?);
        let clf = load_classifier(path)?;
        let corpus = pick(&coll, std::slice::from_ref(cell))?[0];
        let samples: Vec<&GeneSample> = corpus.split(split).iter().collect();
        let auroc = evaluate_auroc(&clf, &samples)?;
        out.text(
            "auroc.csv",
            &format!("cell,split,n,auroc\n{cell},{},{},{auroc}\n", split.as_str(), samples.len()),
        )?;
        if let Some(gp) = &a.gan {
            inputs.push(require(gp)?);
            let (g, _) = load_gan(gp)?;
            let real: Vec<&HmMatrix> = samples.iter().map(|s| &s.x).collect();
            let n = real.len();
            let high = real.iter().flat_map(|x| x.data()).copied().fold(0.0, f64::max);
            let fake = g.sample(n, seed)?;
            let noise = uniform_random_inputs(n, high, seed)?;
            let mut s = String::from("source,n,mean_p_pos,mean_p_neg\n");
            for (name, (pos, neg)) in [
                ("real", mean_class_prob(&clf, real.iter().copied())?),
                ("gan", mean_class_prob(&clf, &fake)?),
                ("random", mean_class_prob(&clf, &noise)?),
            ] {
                let _ = writeln!(s, "{name},{n},{pos},{neg}");
            }
            out.text("class_probs.csv", &s)?;
        }
    }
    let config = json!({
        "correlation": opts,
        "cell": a.cell,
        "split": split.as_str(),
        "random_inputs": "uniform on [0, max real entry)",
    });
    out.finish("metrics", seed, inputs, config)
}

fn weights_report(a: &WeightsReportArgs, seed: u64, mut out: Output) -> Result<()> {
    let input = require(&a.classifier)?;
    let clf = load_classifier(&a.classifier)?;
    let report = export_linear_weights(&clf)?;
    out.text("weights.csv", &report.to_csv_string())?;
    out.finish("weights-report", seed, vec![input], json!({}))
}

fn rpkm_diff(a: &RpkmDiffArgs, seed: u64, mut out: Output) -> Result<()> {
    let inputs = vec![require(&a.data)?, require(&a.a)?, require(&a.b)?];
    let coll = load_data(&a.data)?;
    let corpus = pick(&coll, std::slice::from_ref(&a.cell))?[0];
    let split: Split = a.split.into();
    let samples: Vec<&GeneSample> = corpus.split(split).iter().collect();
    let (ma, mb) = (load_classifier(&a.a)?, load_classifier(&a.b)?);
    let stats = rpkm_binned_diff(&ma, &mb, &samples, a.bins)?;
    out.text("rpkm_diff.csv", &BinStat::csv(&stats))?;
    let config = json!({ "cell": a.cell, "split": split.as_str(), "bins": a.bins });
    out.finish("rpkm-diff", seed, inputs, config)
}
