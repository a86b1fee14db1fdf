use hmexp_core::autodiff::OptimizerConfig;
use hmexp_core::data::{generate_synthetic_corpus, CellCorpus, GeneSample, HmMatrix, Label, SyntheticSpec};
use hmexp_core::models::{build_classifier, build_gan, ArchKind, ArchSpec, Classifier, GanSpec, Generator, InitScheme};
use hmexp_core::training::{train_classifier, TrainConfig};
use hmexp_core::visualization::*;

fn corpus() -> CellCorpus {
    let spec = SyntheticSpec {
        cells: 1,
        genes_per_cell: 1200,
        ..Default::default()
    };
    generate_synthetic_corpus(&spec, 21).unwrap().remove(0)
}

fn trained_linear(c: &CellCorpus) -> Classifier {
    let cfg = TrainConfig {
        optimizer: OptimizerConfig::adam(0.05),
        batch_size: 32,
        epochs: 20,
        seed: 4,
        ..Default::default()
    };
    train_classifier(&[c], &ArchSpec::new(ArchKind::Linear), &cfg).unwrap().0
}

fn small_gan(seed: u64) -> Generator {
    let spec = GanSpec {
        latent_dim: 8,
        generator_hidden: vec![16],
        discriminator_hidden: vec![16],
    };
    build_gan(&spec, seed).unwrap().0
}

fn constant_half() -> Classifier {
    let mut arch = ArchSpec::new(ArchKind::Linear);
    arch.init = InitScheme::Zeros;
    build_classifier(&arch, 0).unwrap()
}

#[test]
fn profile_of_ones_is_flat() {
    let p = activation_profile(&[HmMatrix::from_vec(vec![1.0; 500]).unwrap()]).unwrap();
    assert_eq!(p.values, [1.0; 5]);
    assert!(!p.degenerate);
}

#[test]
fn profile_picks_out_single_row() {
    let mut x = HmMatrix::zeros();
    for b in 0..100 {
        x.set(2, b, (b % 3) as f64);
    }
    let p = activation_profile(&[x.clone(), x]).unwrap();
    assert_eq!(p.values, [0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn profile_is_scale_invariant() {
    let xs: Vec<HmMatrix> = (0..4)
        .map(|k| HmMatrix::from_vec((0..500).map(|i| ((i * (k + 1)) % 7) as f64).collect()).unwrap())
        .collect();
    let scaled: Vec<HmMatrix> = xs.iter().map(|x| x.scaled(10.0)).collect();
    let (a, b) = (activation_profile(&xs).unwrap(), activation_profile(&scaled).unwrap());
    for (u, v) in a.values.iter().zip(b.values) {
        assert!((u - v).abs() < 1e-12);
    }
    assert_eq!(a.values.iter().copied().fold(0.0, f64::max), 1.0);
}

#[test]
fn zero_samples_give_degenerate_profile() {
    let p = activation_profile(&[HmMatrix::zeros()]).unwrap();
    assert!(p.degenerate);
    assert_eq!(p.values, [0.0; 5]);
    assert!(activation_profile(&[]).is_err());
}

#[test]
fn zero_init_linear_report_is_all_zero() {
    let m = build_classifier(&ArchSpec::new(ArchKind::Linear), 0).unwrap();
    let r = export_linear_weights(&m).unwrap();
    assert_eq!(r.weights.len(), 10);
    assert!(r.weights.iter().all(|e| e.weight == 0.0));
    assert_eq!(r.biases[0].1, 0.0);
    assert_eq!(r.biases[1].1, 0.0);
}

#[test]
fn non_linear_report_rejected() {
    let m = build_classifier(&ArchSpec::new(ArchKind::Strided), 0).unwrap();
    assert!(export_linear_weights(&m).is_err());
}

#[test]
fn trained_report_orders_promoters_over_repressors_and_round_trips() {
    let c = corpus();
    let m = trained_linear(&c);
    let r = export_linear_weights(&m).unwrap();
    let spec = SyntheticSpec::default();
    for p in spec.promoter_rows() {
        for q in spec.repressor_rows() {
            assert!(r.weight(p, Label::Positive) > r.weight(q, Label::Positive));
        }
    }
    assert_eq!(WeightReport::parse_csv(&r.to_csv_string()).unwrap(), r);
}

#[test]
fn binned_diff_of_identical_models_is_zero() {
    let c = corpus();
    let m = trained_linear(&c);
    let samples: Vec<&GeneSample> = c.test.iter().collect();
    let stats = rpkm_binned_diff(&m, &m, &samples, 20).unwrap();
    assert_eq!(stats.len(), 20);
    assert_eq!(stats.iter().map(|b| b.count).sum::<usize>(), samples.len());
    for b in &stats {
        if let Some(mean) = b.mean {
            assert_eq!(mean, 0.0);
        }
    }
}

#[test]
fn binned_diff_against_constant_half() {
    let c = corpus();
    let a = trained_linear(&c);
    let half = constant_half();
    let samples: Vec<&GeneSample> = c.test.iter().collect();
    let stats = rpkm_binned_diff(&a, &half, &samples, 10).unwrap();
    let probs = a.predict_refs(samples.iter().map(|s| &s.x)).unwrap();
    // recompute bin membership independently
    let lv: Vec<f64> = samples.iter().map(|s| s.rpkm.unwrap().ln_1p()).collect();
    let (lo, hi) = lv.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    for (k, b) in stats.iter().enumerate() {
        let members: Vec<f64> = lv
            .iter()
            .zip(&probs)
            .filter(|(v, _)| (((*v - lo) / (hi - lo) * 10.0) as usize).min(9) == k)
            .map(|(_, p)| p[1])
            .collect();
        assert_eq!(members.len(), b.count);
        if let Some(mean) = b.mean {
            let expect = members.iter().sum::<f64>() / members.len() as f64 - 0.5;
            assert!((mean - expect).abs() < 1e-12);
        }
    }
    assert!(BinStat::csv(&stats).starts_with("bin,lower,upper,count,mean_diff,var_diff,empty\n0,0,0.1,"));
}

#[test]
fn zero_iterations_return_initialization() {
    let m = constant_half();
    let spec = LossSpec {
        iterations: 0,
        lambda: 0.0,
        phi: 0.0,
        init: InitMode::RandomUniform { high: 2.0 },
        ..Default::default()
    };
    let r = optimize_input(&m, None, None, &spec, 3).unwrap();
    assert_eq!(r.best, r.initial);
    assert_eq!(r.trajectory.len(), 1);
}

#[test]
fn unconstrained_optimization_saturates_classifier() {
    let c = corpus();
    let m = trained_linear(&c);
    for target in [Label::Positive, Label::Negative] {
        let spec = LossSpec {
            target,
            lambda: 0.0,
            phi: 0.0,
            step_size: 5.0,
            iterations: 300,
            init: InitMode::RandomUniform { high: 2.0 },
        };
        let r = optimize_input(&m, None, None, &spec, 5).unwrap();
        assert!(r.best_point().target_prob > 0.99, "{:?}", r.best_point());
        assert!(r.best_point().total <= r.trajectory[0].total);
    }
}

#[test]
fn huge_deviation_weight_keeps_reference() {
    let c = corpus();
    let m = trained_linear(&c);
    let gen = small_gan(1);
    let spec = LossSpec {
        lambda: 0.0,
        phi: 1e9,
        iterations: 20,
        ..Default::default()
    };
    let r = optimize_input(&m, None, Some(&gen), &spec, 2).unwrap();
    assert_eq!(r.best, r.initial);
}

#[test]
fn discriminator_term_requires_discriminator() {
    let m = constant_half();
    let gen = small_gan(1);
    let spec = LossSpec::default();
    assert!(optimize_input(&m, None, Some(&gen), &spec, 0).is_err());
    let spec = LossSpec {
        lambda: 0.0,
        phi: 0.5,
        init: InitMode::RandomUniform { high: 1.0 },
        ..Default::default()
    };
    assert!(optimize_input(&m, None, None, &spec, 0).is_err());
}

#[test]
fn full_gan_loss_is_non_increasing_at_best() {
    let c = corpus();
    let m = trained_linear(&c);
    let spec = GanSpec {
        latent_dim: 8,
        generator_hidden: vec![16],
        discriminator_hidden: vec![16],
    };
    let (gen, disc) = build_gan(&spec, 3).unwrap();
    let r = optimize_input(&m, Some(&disc), Some(&gen), &LossSpec::default(), 4).unwrap();
    assert!(r.best_point().total <= r.trajectory[0].total);
    assert!(r.trajectory.iter().all(|p| p.discriminator_loss > 0.0 && p.deviation_loss >= 0.0));
    assert!(r.trajectory_csv().lines().count() == r.trajectory.len() + 1);
}

#[test]
fn selecting_everything_returns_whole_stream() {
    let c = corpus();
    let m = trained_linear(&c);
    let gen = small_gan(5);
    let sel = mc_sample_select(&gen, &m, &SelectionSpec::top_k(1000, 1000, Label::Positive), 9).unwrap();
    let mut idx: Vec<usize> = sel.samples.iter().map(|s| s.index).collect();
    idx.sort_unstable();
    assert_eq!(idx, (0..1000).collect::<Vec<_>>());
}

#[test]
fn top_k_matches_full_materialization() {
    let c = corpus();
    let m = trained_linear(&c);
    let gen = small_gan(6);
    let n = 3000;
    let sel = mc_sample_select(&gen, &m, &SelectionSpec::top_k(n, 50, Label::Negative), 11).unwrap();
    // oracle: generate every batch, score, sort by (prob desc, index asc)
    let mut all = Vec::new();
    for b in 0..n.div_ceil(MC_BATCH) {
        let len = MC_BATCH.min(n - b * MC_BATCH);
        let xs = generate_batch(&gen, 11, b, len).unwrap();
        let p = m.predict_batch(&xs).unwrap();
        all.extend(p.iter().enumerate().map(|(j, p)| (b * MC_BATCH + j, p[0])));
    }
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let expect: Vec<usize> = all[..50].iter().map(|a| a.0).collect();
    let got: Vec<usize> = sel.samples.iter().map(|s| s.index).collect();
    assert_eq!(got, expect);
    let worst_kept = sel.samples.last().unwrap().prob;
    assert!(all[50..].iter().all(|a| a.1 <= worst_kept));
}

#[test]
fn threshold_mode_takes_first_hits_in_order() {
    let c = corpus();
    let m = trained_linear(&c);
    let gen = small_gan(7);
    let spec = SelectionSpec {
        n: 2000,
        k: 10,
        mode: SelectionMode::Threshold { threshold: 0.5 },
        class: Label::Positive,
    };
    let sel = mc_sample_select(&gen, &m, &spec, 2).unwrap();
    let idx: Vec<usize> = sel.samples.iter().map(|s| s.index).collect();
    assert!(idx.windows(2).all(|w| w[0] < w[1]));
    assert!(sel.samples.iter().all(|s| s.prob > 0.5));
    if !sel.exhausted {
        assert_eq!(sel.samples.len(), 10);
        assert_eq!(sel.generated, idx[9] + 1);
    }
    let strict = SelectionSpec {
        mode: SelectionMode::Threshold { threshold: 0.999_999_999 },
        ..spec
    };
    let none = mc_sample_select(&gen, &constant_half(), &strict, 2).unwrap();
    assert!(none.exhausted && none.samples.is_empty());
    assert_eq!(none.generated, 2000);
}

#[test]
fn selection_is_deterministic() {
    let c = corpus();
    let m = trained_linear(&c);
    let gen = small_gan(8);
    let spec = SelectionSpec::top_k(1500, 20, Label::Positive);
    assert_eq!(
        mc_sample_select(&gen, &m, &spec, 4).unwrap(),
        mc_sample_select(&gen, &m, &spec, 4).unwrap()
    );
}
