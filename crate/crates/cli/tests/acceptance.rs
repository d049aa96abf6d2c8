//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Criteria 7 to 11 share one fixture per seed: the default toy dataset, a toy
//! model trained with the default recipe, a top-down prune at ε = 0.01 with two
//! patches per step, and a short full fine-tune of the pruned model.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use patchslim::costmodel::{instrumented_mac_count, schedule_cost};
use patchslim::dynamic::{
    dynamic_forward_with, evaluate_dynamic, predictor_rank_correlation, train_predictors,
    PredictorTrainOptions,
};
use patchslim::model::reference::dense_model_reference;
use patchslim::model::{
    model_forward, ForwardTrace, MaskSchedule, ModelConfig, ModelParams, PatchMask,
};
use patchslim::pruner::{
    prune_topdown, single_layer_schedule, uniform_keep_for_cost, uniform_schedule_with_keep,
    PruneOutcome, PrunerConfig,
};
use patchslim::scoring::{
    layer_similarity_profile, significance_exact_oracle, significance_per_sample,
    significance_scores, ScorerKind, TupleAggregation,
};
use patchslim::training::{
    evaluate, finetune_full, gen_toy_dataset, param_gradients, train_model, Batch, LossSpec,
    ToyDatasetSpec, TrainOptions,
};
use patchslim::{Matrix, Rng};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TEST_SAMPLES: usize = 1000;
const EPSILON: f64 = 0.01;
const GRANULARITY: usize = 2;
const FINETUNE_EPOCHS: usize = 2;
const CALIBRATION: usize = 256;
/// Held-out samples used for rank correlation.
const RANK_SAMPLES: usize = 200;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed.as_secs_f64() < limit_secs as f64
}

fn random_nested(n: usize, layers: usize, rng: &mut Rng) -> MaskSchedule {
    let mut masks = Vec::with_capacity(layers);
    let mut prev = PatchMask::all(n);
    for _ in 0..layers {
        let mut m = prev.clone();
        for i in 1..n {
            if m.get(i) && rng.uniform() < 0.3 {
                m.set(i, false);
            }
        }
        masks.push(m.clone());
        prev = m;
    }
    MaskSchedule::new(masks, n).unwrap()
}

fn small_config(patches: usize, dim: usize, heads: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        layers,
        patches,
        dim,
        heads,
        hidden_dim: 2 * dim,
        use_layernorm: true,
        token_dim: 5,
        num_classes: 4,
    }
}

fn raw(cfg: &ModelConfig, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(cfg.patches - 1, cfg.token_dim, |_, _| rng.normal())
}

fn mask_equivalence() -> Verdict {
    let started = Instant::now();
    let cfg = small_config(8, 8, 2, 3);
    let mut rng = Rng::new(101);
    let mut worst: f64 = 0.0;
    let mut inactive_clean = true;
    for _ in 0..100 {
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let s = random_nested(cfg.patches, cfg.layers, &mut rng);
        let x = raw(&cfg, &mut rng);
        let fast = model_forward(&x, &params, Some(&s)).unwrap();
        let dense = dense_model_reference(&x, &params, &s).unwrap();
        for l in 1..=cfg.layers {
            let m = s.mask(l);
            for r in 0..cfg.patches {
                for c in 0..cfg.dim {
                    if m.get(r) {
                        worst = worst.max((fast.features[l].get(r, c) - dense[l].get(r, c)).abs());
                    } else {
                        inactive_clean &= fast.features[l].get(r, c) == 0.0;
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    verdict(
        worst <= 1e-10 && inactive_clean && within(elapsed, 10),
        format!("max abs diff {worst:.3e} (tol 1e-10), inactive rows zero {inactive_clean}, {elapsed:.2?} (limit 10s)"),
    )
}

fn all_ones_identity() -> Verdict {
    let cfg = ModelConfig::toy();
    let mut rng = Rng::new(102);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let x = raw(&cfg, &mut rng);
        let full = model_forward(&x, &params, None).unwrap();
        let ones = MaskSchedule::all_ones(cfg.layers, cfg.patches);
        let masked = model_forward(&x, &params, Some(&ones)).unwrap();
        for (a, b) in full.features.iter().zip(&masked.features) {
            worst = worst.max(a.max_abs_diff(b).unwrap());
        }
        worst = worst.max(full.logits.max_abs_diff(&masked.logits).unwrap());
    }
    verdict(
        worst <= 1e-12,
        format!("max abs diff {worst:.3e} (tol 1e-12)"),
    )
}

/// Worst relative error of analytic gradients against central differences.
fn gradient_worst(
    params: &ModelParams,
    loss: &dyn Fn(&ModelParams) -> f64,
    grads: &ModelParams,
) -> f64 {
    const STEP: f64 = 1e-5;
    // Gradients below this magnitude are compared absolutely; central differences carry ~1e-10 noise.
    const FLOOR: f64 = 1e-6;
    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(_, m)| m.data().to_vec())
        .collect();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (t, g) in analytic.iter().enumerate() {
        for (i, &gi) in g.iter().enumerate() {
            let original = probe.tensors()[t].1.data()[i];
            probe.tensors_mut()[t].1.data_mut()[i] = original + STEP;
            let plus = loss(&probe);
            probe.tensors_mut()[t].1.data_mut()[i] = original - STEP;
            let minus = loss(&probe);
            probe.tensors_mut()[t].1.data_mut()[i] = original;
            let fd = (plus - minus) / (2.0 * STEP);
            worst = worst.max((gi - fd).abs() / gi.abs().max(fd.abs()).max(FLOOR));
        }
    }
    worst
}

fn gradient_check() -> Verdict {
    let started = Instant::now();
    let cfg = ModelConfig::toy();
    let mut rng = Rng::new(103);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let reference = ModelParams::init(&cfg, &mut rng).unwrap();
    // One input keeps the sweep over every toy parameter well inside the time limit.
    let inputs = vec![raw(&cfg, &mut rng)];
    let labels = vec![7];
    let batch = Batch::new(inputs, labels, cfg.num_classes).unwrap();
    let mut keep = PatchMask::all(cfg.patches);
    (1..cfg.patches)
        .filter(|i| i % 3 == 0)
        .for_each(|i| keep.set(i, false));
    let mut deep = keep.clone();
    (1..cfg.patches)
        .filter(|i| i % 2 == 0)
        .for_each(|i| deep.set(i, false));
    let mut masks = vec![keep; 2];
    masks.extend(vec![deep; cfg.layers - 2]);
    let schedule = MaskSchedule::new(masks, cfg.patches).unwrap();
    let targets: Vec<Matrix> = batch
        .inputs
        .iter()
        .map(|x| model_forward(x, &reference, None).unwrap().features[2].clone())
        .collect();
    let reconstruction = LossSpec::Reconstruction {
        layer: 2,
        targets: &targets,
        normalizer: 3.0,
    };
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, spec) in [
        ("cross-entropy", &LossSpec::CrossEntropy),
        ("reconstruction", &reconstruction),
    ] {
        for s in [None, Some(&schedule)] {
            let out = param_gradients(&params, &batch, s, spec).unwrap();
            let loss = |p: &ModelParams| param_gradients(p, &batch, s, spec).unwrap().loss;
            let w = gradient_worst(&params, &loss, &out.grads);
            worst = worst.max(w);
            parts.push(format!(
                "{name}{} {w:.1e}",
                if s.is_some() { " masked" } else { "" }
            ));
        }
    }
    let elapsed = started.elapsed();
    verdict(
        worst <= 1e-4 && within(elapsed, 60),
        format!(
            "worst relative error {worst:.2e} (tol 1e-4) [{}], {elapsed:.2?} (limit 60s)",
            parts.join(", ")
        ),
    )
}

fn traces(
    cfg: &ModelConfig,
    params: &ModelParams,
    s: &MaskSchedule,
    count: usize,
    rng: &mut Rng,
) -> Vec<ForwardTrace> {
    (0..count)
        .map(|_| model_forward(&raw(cfg, rng), params, Some(s)).unwrap())
        .collect()
}

fn score_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = Rng::new(104);
    let cfg = small_config(8, 4, 2, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let s = random_nested(cfg.patches, cfg.layers, &mut rng);
        let tr = traces(&cfg, &params, &s, 3, &mut rng);
        for t in 1..cfg.layers {
            let deeper = &s.masks()[t..];
            let fast = significance_scores(&tr, deeper, t).unwrap();
            let oracle =
                significance_exact_oracle(&tr, deeper, t, TupleAggregation::Collapsed).unwrap();
            for (a, b) in fast.values.iter().zip(&oracle.values) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let cfg1 = small_config(6, 4, 1, 4);
    let mut literal_exact = true;
    for _ in 0..5 {
        let params = ModelParams::init(&cfg1, &mut rng).unwrap();
        let s = random_nested(cfg1.patches, cfg1.layers, &mut rng);
        let tr = traces(&cfg1, &params, &s, 2, &mut rng);
        for t in 1..cfg1.layers {
            let deeper = &s.masks()[t..];
            let fast = significance_scores(&tr, deeper, t).unwrap();
            let literal =
                significance_exact_oracle(&tr, deeper, t, TupleAggregation::Literal).unwrap();
            literal_exact &= fast.values == literal.values;
        }
    }
    let elapsed = started.elapsed();
    verdict(
        worst <= 1e-10 && literal_exact && within(elapsed, 30),
        format!("collapsed max diff {worst:.3e} (tol 1e-10) over 20 models, H=1 literal exact {literal_exact}, {elapsed:.2?} (limit 30s)"),
    )
}

fn rank_one_and_scaling() -> Verdict {
    let mut rng = Rng::new(105);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n, m) = (1 + rng.below(12), 1 + rng.below(12));
        let a = Matrix::from_fn(n, 1, |_, _| rng.normal());
        let b = Matrix::from_fn(m, 1, |_, _| rng.normal());
        let outer = Matrix::from_fn(n, m, |i, j| a.get(i, 0) * b.get(j, 0));
        let rhs = a.frobenius_sq() * b.frobenius_sq();
        worst = worst.max((outer.frobenius_sq() - rhs).abs() / rhs.max(1.0));
    }
    let cfg = small_config(8, 4, 2, 3);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let s = random_nested(cfg.patches, cfg.layers, &mut rng);
    let tr = traces(&cfg, &params, &s, 3, &mut rng);
    let mut invariant = true;
    for t in 1..cfg.layers {
        let deeper = &s.masks()[t..];
        let base = significance_scores(&tr, deeper, t).unwrap().ranking();
        for c in [1e-3, 0.5, 7.0, 1e3] {
            let scaled: Vec<ForwardTrace> = tr
                .iter()
                .map(|x| {
                    let mut x = x.clone();
                    x.features[t - 1].scale_in_place(c);
                    x
                })
                .collect();
            invariant &= significance_scores(&scaled, deeper, t).unwrap().ranking() == base;
        }
    }
    verdict(
        worst <= 1e-12 && invariant,
        format!("rank-1 relative error {worst:.3e} (tol 1e-12), argsort invariant under scaling {invariant}"),
    )
}

fn vit(dim: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        layers: 12,
        patches: 197,
        dim,
        heads,
        hidden_dim: 4 * dim,
        use_layernorm: true,
        token_dim: 768,
        num_classes: 1000,
    }
}

fn cost_model() -> Verdict {
    let started = Instant::now();
    let ti = schedule_cost(&vit(192, 3), &MaskSchedule::all_ones(12, 197))
        .unwrap()
        .total_macs as f64;
    let s = schedule_cost(&vit(384, 6), &MaskSchedule::all_ones(12, 197))
        .unwrap()
        .total_macs as f64;
    let ti_ok = (ti / 1.3e9 - 1.0).abs() <= 0.10;
    let s_ok = (s / 4.6e9 - 1.0).abs() <= 0.05;
    let cfg = ModelConfig::toy();
    let mut rng = Rng::new(106);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let ones = MaskSchedule::all_ones(cfg.layers, cfg.patches);
    let counted = instrumented_mac_count(&params, &ones, &raw(&cfg, &mut rng)).unwrap();
    let analytic: Vec<u64> = schedule_cost(&cfg, &ones)
        .unwrap()
        .layers
        .iter()
        .map(|l| l.msa_macs + l.mlp_macs)
        .collect();
    let exact = counted == analytic;
    let elapsed = started.elapsed();
    verdict(
        ti_ok && s_ok && exact && within(elapsed, 1),
        format!(
            "DeiT-Ti {:.3} G vs 1.3 G (±10%), DeiT-S {:.3} G vs 4.6 G (±5%), instrumented = analytic {exact}, {elapsed:.2?} (limit 1s)",
            ti / 1e9,
            s / 1e9
        ),
    )
}

/// Everything criteria 7 to 11 measure on one seed.
struct SeedRun {
    seed: u64,
    train_accuracy: f64,
    test_accuracy: f64,
    prune: PruneOutcome,
    prune_time: Duration,
    pipeline_time: Duration,
    finetuned_accuracy: f64,
    uniform_keep: usize,
    uniform_accuracy: f64,
    ablation: Vec<(usize, f64, f64)>,
    similarity: Vec<f64>,
    rank_correlation: Vec<f64>,
    static_accuracy: f64,
    dynamic_accuracy: f64,
    /// Dynamic selection driven by the true per-input scores instead of the predictors.
    true_score_accuracy: f64,
}

/// Accuracy of dynamic selection when each layer ranks patches by the exact
/// per-input significance the predictors are trained to imitate.
fn true_score_accuracy(params: &ModelParams, schedule: &MaskSchedule, data: &Batch) -> f64 {
    let n = params.config.patches;
    let budgets = schedule.kept_counts();
    let hits = data
        .inputs
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| {
            let forward = dynamic_forward_with(x, params, &budgets, |l, _| {
                let deeper = &schedule.masks()[l..];
                let mut masks = vec![PatchMask::all(n); l];
                masks.extend_from_slice(deeper);
                let trace = model_forward(x, params, Some(&MaskSchedule::new(masks, n)?))?;
                significance_per_sample(&trace, deeper, l)
            })
            .unwrap();
            forward.trace.predicted_class() == y
        })
        .count();
    hits as f64 / data.len() as f64
}

fn run_seed(seed: u64) -> SeedRun {
    let spec = ToyDatasetSpec::default();
    let train: Batch = gen_toy_dataset(&spec, seed).unwrap();
    let test: Batch = gen_toy_dataset(
        &ToyDatasetSpec {
            sample_count: TEST_SAMPLES,
            ..spec.clone()
        },
        seed + 1000,
    )
    .unwrap();
    let cfg = ModelConfig::toy();

    let started = Instant::now();
    let (params, _) = train_model(&cfg, &train, &TrainOptions::default(), seed).unwrap();
    let mut pruner = PrunerConfig::new(EPSILON, seed);
    pruner.granularity = GRANULARITY;
    pruner.calibration_size = CALIBRATION;
    let prune_started = Instant::now();
    let prune = prune_topdown(&params, &train, &pruner).unwrap();
    let prune_time = prune_started.elapsed();
    let finetune = TrainOptions {
        epochs: FINETUNE_EPOCHS,
        ..Default::default()
    };
    let (tuned, _) =
        finetune_full(&prune.params, &prune.schedule, &train, &finetune, seed).unwrap();
    let pipeline_time = started.elapsed();

    let train_accuracy = evaluate(&params, &train, None).unwrap().accuracy;
    let test_accuracy = evaluate(&params, &test, None).unwrap().accuracy;
    let finetuned_accuracy = evaluate(&tuned, &test, Some(&prune.schedule))
        .unwrap()
        .accuracy;

    let calibration = train.subset(&(0..CALIBRATION).collect::<Vec<_>>());
    let uniform_keep = uniform_keep_for_cost(&cfg, prune.report.macs_after).unwrap();
    let uniform = uniform_schedule_with_keep(
        &params,
        &calibration,
        uniform_keep,
        ScorerKind::Significance,
        seed,
    )
    .unwrap();
    let (uniform_tuned, _) = finetune_full(&params, &uniform, &train, &finetune, seed).unwrap();
    let uniform_accuracy = evaluate(&uniform_tuned, &test, Some(&uniform))
        .unwrap()
        .accuracy;

    let half = cfg.patches.div_ceil(2);
    let ablation = (1..=cfg.layers)
        .map(|t| {
            let acc = |scorer| {
                let s =
                    single_layer_schedule(&params, &calibration, t, half, scorer, seed).unwrap();
                evaluate(&params, &test, Some(&s)).unwrap().accuracy
            };
            (t, acc(ScorerKind::Significance), acc(ScorerKind::Random))
        })
        .collect();

    let sample = test.subset(&(0..RANK_SAMPLES).collect::<Vec<_>>());
    let sample_traces: Vec<ForwardTrace> = sample
        .inputs
        .iter()
        .map(|x| model_forward(x, &params, None).unwrap())
        .collect();
    let similarity = layer_similarity_profile(&sample_traces).unwrap();

    let predictors = train_predictors(
        &params,
        &prune.schedule,
        &train,
        &PredictorTrainOptions::default(),
        seed,
    )
    .unwrap();
    let rank_correlation =
        predictor_rank_correlation(&params, &prune.schedule, &predictors, &sample).unwrap();
    let budgets = prune.schedule.kept_counts();
    let dynamic_accuracy = evaluate_dynamic(&params, &predictors, &budgets, &test)
        .unwrap()
        .accuracy;
    let static_accuracy = evaluate(&params, &test, Some(&prune.schedule))
        .unwrap()
        .accuracy;
    let true_score_accuracy = true_score_accuracy(&params, &prune.schedule, &test);

    let run = SeedRun {
        seed,
        train_accuracy,
        test_accuracy,
        prune,
        prune_time,
        pipeline_time,
        finetuned_accuracy,
        uniform_keep,
        uniform_accuracy,
        ablation,
        similarity,
        rank_correlation,
        static_accuracy,
        dynamic_accuracy,
        true_score_accuracy,
    };
    println!(
        "  seed {}: train {:.4} test {:.4} kept {:?} reduction {:.1}% finetuned {:.4} uniform(keep {}) {:.4} static {:.4} dynamic {:.4} (true scores {:.4}) rho {:?} pipeline {:.1?}",
        run.seed,
        run.train_accuracy,
        run.test_accuracy,
        run.prune.report.kept_counts,
        run.prune.report.reduction_percent,
        run.finetuned_accuracy,
        run.uniform_keep,
        run.uniform_accuracy,
        run.static_accuracy,
        run.dynamic_accuracy,
        run.true_score_accuracy,
        run.rank_correlation,
        run.pipeline_time,
    );
    run
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn algorithm_contract(runs: &[SeedRun]) -> Verdict {
    let mut problems = Vec::new();
    for run in runs {
        let s = &run.prune.schedule;
        let masks = s.masks();
        let nested = masks.windows(2).all(|w| w[1].is_subset_of(&w[0]));
        let class_kept = masks.iter().all(|m| m.get(0));
        let counts = s.kept_counts();
        let monotone = counts.windows(2).all(|w| w[1] <= w[0]);
        let exits = run.prune.report.layers.iter().all(|l| {
            (l.budget_met && l.error <= EPSILON) || (!l.budget_met && masks[l.layer - 1].is_all())
        });
        if !(nested && class_kept && monotone && exits) {
            problems.push(format!(
                "seed {}: nested {nested} class {class_kept} monotone {monotone} exits {exits}",
                run.seed
            ));
        }
        if !within(run.prune_time, 600) {
            problems.push(format!(
                "seed {}: prune took {:.1?}",
                run.seed, run.prune_time
            ));
        }
    }
    let slowest = runs.iter().map(|r| r.prune_time).max().unwrap_or_default();
    verdict(
        problems.is_empty(),
        format!(
            "{} seeds checked, slowest prune {slowest:.1?} (limit 10min){}",
            runs.len(),
            join_problems(&problems)
        ),
    )
}

fn join_problems(problems: &[String]) -> String {
    if problems.is_empty() {
        String::new()
    } else {
        format!("; {}", problems.join("; "))
    }
}

fn end_to_end(runs: &[SeedRun]) -> Verdict {
    let min_train = runs
        .iter()
        .map(|r| r.train_accuracy)
        .fold(f64::INFINITY, f64::min);
    let min_reduction = runs
        .iter()
        .map(|r| r.prune.report.reduction_percent)
        .fold(f64::INFINITY, f64::min);
    let drop = 100.0 * mean(runs.iter().map(|r| r.test_accuracy - r.finetuned_accuracy));
    let total: Duration = runs.iter().map(|r| r.pipeline_time).sum();
    verdict(
        min_train >= 0.95 && min_reduction >= 30.0 && drop <= 2.0 && within(total, 1200),
        format!(
            "min train accuracy {:.2}% (need 95), min MAC reduction {min_reduction:.1}% (need 30), mean held-out drop {drop:.2} points (limit 2), train+prune+finetune over 5 seeds {total:.1?} (limit 20min)",
            100.0 * min_train
        ),
    )
}

fn ablations(runs: &[SeedRun]) -> Verdict {
    let layers = ModelConfig::toy().layers;
    let middle = layers / 2;
    let (shallow, deep) = (1, layers - 1);
    let at = |r: &SeedRun, t: usize| r.ablation.iter().find(|a| a.0 == t).copied().unwrap();
    let gap = 100.0 * mean(runs.iter().map(|r| at(r, middle).1 - at(r, middle).2));
    let learned = 100.0 * mean(runs.iter().map(|r| r.finetuned_accuracy));
    let uniform = 100.0 * mean(runs.iter().map(|r| r.uniform_accuracy));
    // Redundancy is read off random selection so the scorer does not mask it.
    let hurt = |t| 100.0 * mean(runs.iter().map(|r| r.test_accuracy - at(r, t).2));
    let (hurt_shallow, hurt_deep) = (hurt(shallow), hurt(deep));
    let per_layer: Vec<String> = (1..=layers)
        .map(|t| {
            format!(
                "layer {t}: significance {:.2} random {:.2}",
                100.0 * mean(runs.iter().map(|r| at(r, t).1)),
                100.0 * mean(runs.iter().map(|r| at(r, t).2))
            )
        })
        .collect();
    println!(
        "  single-layer 50% ablation means: {}",
        per_layer.join(", ")
    );
    let a = gap >= 2.0;
    let b = learned >= uniform;
    let c = hurt_deep < hurt_shallow;
    verdict(
        a && b && c,
        format!(
            "(a) significance - random at middle layer {middle}: {gap:.2} points (need 2) {}; (b) learned {learned:.2} vs uniform {uniform:.2} post-fine-tune {}; (c) random 50% drop at layer {deep} {hurt_deep:.2} vs layer {shallow} {hurt_shallow:.2} points {}",
            ok(a),
            ok(b),
            ok(c)
        ),
    )
}

fn ok(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "FAILED"
    }
}

fn similarity_trend(runs: &[SeedRun]) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for run in runs {
        let p = &run.similarity;
        let third = p.len().div_ceil(3);
        let first = mean(p[..third].iter().copied());
        let last = mean(p[p.len() - third..].iter().copied());
        pass &= last >= first;
        parts.push(format!(
            "seed {}: first third {first:.3} last third {last:.3}",
            run.seed
        ));
    }
    verdict(pass, parts.join(", "))
}

fn dynamic_variant(runs: &[SeedRun]) -> Verdict {
    let rho = mean(
        runs.iter()
            .map(|r| mean(r.rank_correlation.iter().copied())),
    );
    let dynamic = 100.0 * mean(runs.iter().map(|r| r.dynamic_accuracy));
    let stat = 100.0 * mean(runs.iter().map(|r| r.static_accuracy));
    let truth = 100.0 * mean(runs.iter().map(|r| r.true_score_accuracy));
    verdict(
        rho >= 0.6 && dynamic >= stat - 0.5,
        format!("mean Spearman {rho:.3} (need 0.6), dynamic {dynamic:.2} vs static {stat:.2} at identical budgets (allowance 0.5 points); selection by true per-input scores {truth:.2}"),
    )
}

fn cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_patchslim"))
        .current_dir(dir)
        .env_remove("PATCHSLIM_THREADS")
        .args(args)
        .args(["--threads", "1", "--log-level", "error"])
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn pipeline(dir: &Path) -> bool {
    let steps: [&[&str]; 11] = [
        &[
            "gen-data",
            "--seed",
            "7",
            "--samples",
            "256",
            "--out",
            "train.json",
        ],
        &[
            "gen-data",
            "--seed",
            "8",
            "--samples",
            "128",
            "--out",
            "test.json",
        ],
        &[
            "train",
            "--data",
            "train.json",
            "--seed",
            "3",
            "--epochs",
            "2",
            "--layers",
            "3",
            "--dim",
            "16",
            "--heads",
            "2",
            "--hidden-dim",
            "32",
            "--out",
            "model.json",
            "--log",
            "train_log.json",
        ],
        &[
            "prune",
            "--model",
            "model.json",
            "--data",
            "train.json",
            "--seed",
            "4",
            "--granularity",
            "4",
            "--calibration",
            "32",
            "--block-epochs",
            "1",
            "--finetune-epochs",
            "1",
            "--out-masks",
            "masks.json",
            "--out-model",
            "pruned.json",
            "--report",
            "prune.json",
        ],
        &[
            "prune",
            "--model",
            "model.json",
            "--data",
            "train.json",
            "--seed",
            "4",
            "--uniform-rate",
            "0.5",
            "--calibration",
            "32",
            "--out-masks",
            "uniform.json",
        ],
        &[
            "eval",
            "--model",
            "pruned.json",
            "--data",
            "test.json",
            "--masks",
            "masks.json",
            "--seed",
            "5",
            "--out",
            "eval.json",
        ],
        &[
            "similarity",
            "--model",
            "model.json",
            "--data",
            "test.json",
            "--seed",
            "5",
            "--samples",
            "32",
            "--out",
            "similarity.csv",
        ],
        &[
            "score",
            "--model",
            "model.json",
            "--data",
            "test.json",
            "--scorer",
            "random",
            "--seed",
            "5",
            "--samples",
            "16",
            "--out",
            "scores.csv",
        ],
        &[
            "flops",
            "--model",
            "model.json",
            "--masks",
            "masks.json",
            "--seed",
            "5",
            "--out",
            "flops.json",
            "--csv",
            "flops.csv",
        ],
        &[
            "train-predictors",
            "--model",
            "model.json",
            "--data",
            "train.json",
            "--masks",
            "masks.json",
            "--seed",
            "6",
            "--epochs",
            "2",
            "--samples",
            "32",
            "--out",
            "predictors.json",
        ],
        &[
            "eval-dynamic",
            "--model",
            "model.json",
            "--data",
            "test.json",
            "--predictors",
            "predictors.json",
            "--masks",
            "masks.json",
            "--seed",
            "6",
            "--out",
            "dynamic.json",
        ],
    ];
    steps.iter().all(|args| cli(dir, args))
}

fn reproducibility() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if !(pipeline(a.path()) && pipeline(b.path())) {
        return verdict(false, "pipeline command failed".into());
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| std::fs::read(a.path().join(n)).ok() != std::fs::read(b.path().join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    verdict(
        differing.is_empty(),
        format!(
            "{} output files compared across two single-thread runs{}",
            names.len(),
            join_problems(&differing)
        ),
    )
}

fn main() {
    let mut all_pass = true;
    let mut report = |n: usize, name: &str, v: Verdict| {
        all_pass &= v.pass;
        println!(
            "criterion {n:>2} {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    };
    report(1, "mask equivalence", mask_equivalence());
    report(2, "all-ones identity", all_ones_identity());
    report(3, "gradient check", gradient_check());
    report(4, "score oracle", score_oracle());
    report(
        5,
        "rank-1 identity and ranking invariance",
        rank_one_and_scaling(),
    );
    report(6, "cost model", cost_model());
    println!("  training the shared toy fixture for seeds {SEEDS:?}");
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    report(7, "top-down search contract", algorithm_contract(&runs));
    report(8, "end-to-end quality", end_to_end(&runs));
    report(9, "ablation orderings", ablations(&runs));
    report(10, "similarity trend", similarity_trend(&runs));
    report(11, "dynamic variant", dynamic_variant(&runs));
    report(12, "reproducibility", reproducibility());
    if !all_pass {
        std::process::exit(1);
    }
}
