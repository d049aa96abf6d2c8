use std::fs::File;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use patchslim::costmodel::{block_cost, schedule_cost};
use patchslim::dynamic::{
    evaluate_dynamic, predictor_rank_correlation, train_predictors, PredictorSet,
    PredictorTrainOptions, TargetTransform,
};
use patchslim::io::{
    load_dataset, load_masks, load_model, load_predictors, report_document, save_dataset,
    save_masks, save_model, save_predictors, write_atomic, write_json, Provenance,
};
use patchslim::model::{
    model_forward, ForwardTrace, MaskSchedule, ModelConfig, ModelParams, PatchMask,
};
use patchslim::pruner::{prune_topdown, uniform_mask_schedule, PrunerConfig};
use patchslim::scoring::{
    attn_norm_scores, layer_similarity_profile, random_scores, significance_scores, ScorerKind,
};
use patchslim::training::{
    evaluate, finetune_full, gen_toy_dataset, load_image_grid_csv, Batch, BlockFinetuneOptions,
    OptimizerConfig, OptimizerKind, ToyDatasetSpec, TrainOptions,
};
use patchslim::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::error::{CliError, CliResult};

pub fn dispatch(command: &Command) -> CliResult<()> {
    let provenance = Provenance::new(
        command.seed(),
        serde_json::to_value(command).map_err(patchslim::Error::from)?,
    );
    let started = Instant::now();
    match command {
        Command::GenData(a) => gen_data(a, &provenance),
        Command::Train(a) => train(a, &provenance),
        Command::Eval(a) => eval(a, &provenance),
        Command::Similarity(a) => similarity(a),
        Command::Score(a) => score(a),
        Command::Prune(a) => prune(a, &provenance),
        Command::Flops(a) => flops(a, &provenance),
        Command::TrainPredictors(a) => fit_predictors(a, &provenance),
        Command::EvalDynamic(a) => eval_dynamic(a, &provenance),
    }?;
    info!("{} finished in {:.2?}", command.name(), started.elapsed());
    Ok(())
}

fn usage<T>(r: patchslim::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

fn require_input(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn require_output(path: &Path) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "output directory {} does not exist",
            dir.display()
        )));
    }
    if path.is_dir() {
        return Err(CliError::Usage(format!(
            "output path {} is a directory",
            path.display()
        )));
    }
    Ok(())
}

fn inputs<'a>(paths: impl IntoIterator<Item = Option<&'a Path>>) -> CliResult<()> {
    paths.into_iter().flatten().try_for_each(require_input)
}

fn outputs<'a>(paths: impl IntoIterator<Item = Option<&'a Path>>) -> CliResult<()> {
    paths.into_iter().flatten().try_for_each(require_output)
}

fn check_data(params: &ModelParams, data: &Batch) -> CliResult<()> {
    let cfg = &params.config;
    let expected = (cfg.patches - 1, cfg.token_dim);
    if data.sample_shape() != Some(expected) || data.num_classes != cfg.num_classes {
        return Err(patchslim::Error::Config(format!(
            "dataset samples are {:?} with {} classes; model expects {expected:?} with {}",
            data.sample_shape(),
            data.num_classes,
            cfg.num_classes
        ))
        .into());
    }
    Ok(())
}

fn check_schedule(config: &ModelConfig, schedule: &MaskSchedule) -> CliResult<()> {
    if schedule.layers() != config.layers {
        return Err(patchslim::Error::InvalidMask(format!(
            "mask file has {} layers, model has {}",
            schedule.layers(),
            config.layers
        ))
        .into());
    }
    schedule.validate(config.patches)?;
    Ok(())
}

fn load_schedule(path: Option<&Path>, config: &ModelConfig) -> CliResult<Option<MaskSchedule>> {
    path.map(|p| {
        let s = load_masks(p)?;
        check_schedule(config, &s)?;
        Ok(s)
    })
    .transpose()
}

fn emit<S: Serialize>(
    out: Option<&Path>,
    kind: &str,
    body: &S,
    provenance: &Provenance,
) -> CliResult<()> {
    let doc = report_document(kind, body, provenance)?;
    match out {
        Some(path) => write_json(path, &doc)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&doc).map_err(patchslim::Error::from)?
        ),
    }
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn forward_all(
    params: &ModelParams,
    data: &Batch,
    schedule: Option<&MaskSchedule>,
) -> CliResult<Vec<ForwardTrace>> {
    Ok(data
        .inputs
        .par_iter()
        .map(|x| model_forward(x, params, schedule))
        .collect::<patchslim::Result<_>>()?)
}

fn scorer_kind(c: ScorerChoice) -> ScorerKind {
    match c {
        ScorerChoice::Significance => ScorerKind::Significance,
        ScorerChoice::Random => ScorerKind::Random,
        ScorerChoice::AttnNorm => ScorerKind::AttnNorm,
    }
}

fn gen_data(a: &GenDataArgs, provenance: &Provenance) -> CliResult<()> {
    outputs([Some(a.out.as_path())])?;
    if let Some(csv) = &a.csv {
        require_input(csv)?;
        let missing = |name: &str| CliError::Usage(format!("--csv needs --{name}"));
        let height = a.height.ok_or_else(|| missing("height"))?;
        let width = a.width.ok_or_else(|| missing("width"))?;
        let patch = a.patch.ok_or_else(|| missing("patch"))?;
        let classes = a.classes.ok_or_else(|| missing("classes"))?;
        let file = File::open(csv).map_err(patchslim::Error::from)?;
        let batch: Batch = load_image_grid_csv(file, height, width, patch, classes)?;
        save_dataset(&a.out, &batch, None, provenance)?;
        info!("converted {} images into {}", batch.len(), a.out.display());
        return Ok(());
    }
    let mut spec = if a.spec == "default" {
        ToyDatasetSpec::default()
    } else {
        let path = Path::new(&a.spec);
        require_input(path)?;
        let text = std::fs::read_to_string(path).map_err(patchslim::Error::from)?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Usage(format!("dataset spec {} is invalid: {e}", path.display()))
        })?
    };
    if let Some(n) = a.samples {
        spec.sample_count = n;
    }
    usage(spec.validate())?;
    let batch: Batch = gen_toy_dataset(&spec, a.seed)?;
    save_dataset(&a.out, &batch, Some(&spec), provenance)?;
    info!("wrote {} samples to {}", batch.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs, provenance: &Provenance) -> CliResult<()> {
    inputs([Some(a.data.as_path())])?;
    outputs([Some(a.out.as_path()), a.log.as_deref()])?;
    if a.epochs > 0 && a.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be positive".into()));
    }
    let data: Batch = load_dataset(&a.data)?;
    let (tokens, token_dim) = data
        .sample_shape()
        .ok_or(patchslim::Error::Empty("dataset"))?;
    let config = ModelConfig {
        layers: a.layers,
        patches: tokens + 1,
        dim: a.dim,
        heads: a.heads,
        hidden_dim: a.hidden_dim,
        use_layernorm: !a.no_layernorm,
        token_dim,
        num_classes: data.num_classes,
    };
    usage(config.validate())?;
    let optimizer = match a.optimizer {
        OptimizerChoice::Sgd => OptimizerConfig {
            kind: OptimizerKind::Sgd {
                momentum: a.momentum,
            },
            learning_rate: a.lr,
            ..OptimizerConfig::default()
        },
        OptimizerChoice::Adam => OptimizerConfig::adam(a.lr),
    };
    let options = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        optimizer,
    };
    let (params, log) = patchslim::training::train_model(&config, &data, &options, a.seed)?;
    if let Some(last) = log.epochs.last() {
        info!(
            "final epoch: loss {:.4}, train accuracy {:.4}",
            last.loss, last.accuracy
        );
    }
    save_model(&a.out, &params, provenance)?;
    if let Some(path) = &a.log {
        emit(Some(path), "train_log", &log, provenance)?;
    }
    Ok(())
}

fn parse_budgets(
    text: Option<&str>,
    schedule: Option<&MaskSchedule>,
    config: &ModelConfig,
) -> CliResult<Vec<usize>> {
    let budgets = match (text, schedule) {
        (Some(t), _) => t
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("budget {v:?} is not a count")))
            })
            .collect::<CliResult<Vec<_>>>()?,
        (None, Some(s)) => s.kept_counts(),
        (None, None) => {
            return Err(CliError::Usage(
                "dynamic evaluation needs --budgets or --masks".into(),
            ))
        }
    };
    if budgets.len() != config.layers {
        return Err(CliError::Usage(format!(
            "{} budgets given for {} layers",
            budgets.len(),
            config.layers
        )));
    }
    if budgets.iter().any(|&b| b == 0 || b > config.patches) {
        return Err(CliError::Usage(format!(
            "budgets must lie in 1..={}",
            config.patches
        )));
    }
    if budgets.windows(2).any(|w| w[1] > w[0]) {
        return Err(CliError::Usage(
            "budgets must be non-increasing with depth".into(),
        ));
    }
    Ok(budgets)
}

/// MACs of a run whose per-layer kept counts are `kept`.
fn kept_macs(config: &ModelConfig, kept: &[usize]) -> CliResult<u64> {
    let mut prev = config.patches;
    let mut total = 0;
    for &k in kept {
        total += block_cost(config.patches, config.dim, config.hidden_dim, prev, k)?.total();
        prev = k;
    }
    Ok(total)
}

fn dynamic_report(
    params: &ModelParams,
    data: &Batch,
    predictors: &PredictorSet,
    budgets: &[usize],
    schedule: Option<&MaskSchedule>,
) -> CliResult<Value> {
    let cfg = &params.config;
    let evaluation = evaluate_dynamic(params, predictors, budgets, data)?;
    if evaluation.clamped_inputs > 0 {
        warn!(
            "{} inputs had budgets clamped to their incoming kept count",
            evaluation.clamped_inputs
        );
    }
    let baseline = kept_macs(cfg, &vec![cfg.patches; cfg.layers])?;
    let macs = kept_macs(cfg, budgets)?;
    let mut body = json!({
        "mode": "dynamic",
        "budgets": budgets,
        "accuracy": evaluation.accuracy,
        "samples": evaluation.samples,
        "mean_kept": evaluation.mean_kept,
        "clamped_inputs": evaluation.clamped_inputs,
        "macs": macs,
        "baseline_macs": baseline,
        "reduction_percent": (1.0 - macs as f64 / baseline as f64) * 100.0,
    });
    if let Some(s) = schedule {
        let rho = predictor_rank_correlation(params, s, predictors, data)?;
        let mean = rho.iter().sum::<f64>() / rho.len().max(1) as f64;
        body["rank_correlation"] = json!(rho);
        body["mean_rank_correlation"] = json!(mean);
        body["static_accuracy"] = json!(evaluate(params, data, Some(s))?.accuracy);
    }
    Ok(body)
}

fn eval(a: &EvalArgs, provenance: &Provenance) -> CliResult<()> {
    inputs([
        Some(a.model.as_path()),
        Some(a.data.as_path()),
        a.masks.as_deref(),
        a.dynamic.predictors.as_deref(),
    ])?;
    outputs([a.out.as_deref()])?;
    if !a.dynamic.dynamic && (a.dynamic.predictors.is_some() || a.dynamic.budgets.is_some()) {
        return Err(CliError::Usage(
            "--predictors and --budgets only apply with --dynamic".into(),
        ));
    }
    let params: ModelParams = load_model(&a.model)?;
    let data: Batch = load_dataset(&a.data)?;
    check_data(&params, &data)?;
    let schedule = load_schedule(a.masks.as_deref(), &params.config)?;
    if a.dynamic.dynamic {
        let path = a
            .dynamic
            .predictors
            .as_deref()
            .expect("clap requires --predictors");
        let predictors: PredictorSet = load_predictors(path)?;
        let budgets = parse_budgets(
            a.dynamic.budgets.as_deref(),
            schedule.as_ref(),
            &params.config,
        )?;
        let body = dynamic_report(&params, &data, &predictors, &budgets, schedule.as_ref())?;
        info!(
            "dynamic accuracy {:.4}",
            body["accuracy"].as_f64().unwrap_or(f64::NAN)
        );
        return emit(a.out.as_deref(), "evaluation", &body, provenance);
    }
    let ev = evaluate(&params, &data, schedule.as_ref())?;
    let full = MaskSchedule::all_ones(params.config.layers, params.config.patches);
    let cost = schedule_cost(&params.config, schedule.as_ref().unwrap_or(&full))?;
    info!("accuracy {:.4} over {} samples", ev.accuracy, ev.samples);
    let body = json!({
        "mode": "static",
        "accuracy": ev.accuracy,
        "loss": ev.loss,
        "samples": ev.samples,
        "kept_counts": schedule.as_ref().unwrap_or(&full).kept_counts(),
        "macs": cost.total_macs,
        "baseline_macs": cost.baseline_total_macs,
        "reduction_percent": cost.reduction_percent,
    });
    emit(a.out.as_deref(), "evaluation", &body, provenance)
}

fn similarity(a: &SimilarityArgs) -> CliResult<()> {
    inputs([Some(a.model.as_path()), Some(a.data.as_path())])?;
    outputs([Some(a.out.as_path())])?;
    let params: ModelParams = load_model(&a.model)?;
    let data: Batch = load_dataset(&a.data)?;
    check_data(&params, &data)?;
    let sample = data.sample(a.samples, &mut Rng::new(a.seed));
    let traces = forward_all(&params, &sample, None)?;
    let profile = layer_similarity_profile(&traces)?;
    let rows = profile
        .iter()
        .enumerate()
        .map(|(l, c)| vec![l.to_string(), c.to_string()])
        .collect();
    write_csv(&a.out, &["layer", "mean_cosine"], rows)
}

/// Masks `[all; t]` followed by the schedule's masks for layers `t+1..L`.
fn partial(schedule: &MaskSchedule, t: usize) -> CliResult<MaskSchedule> {
    let n = schedule.masks()[0].len();
    let mut masks = vec![PatchMask::all(n); t];
    masks.extend_from_slice(&schedule.masks()[t..]);
    Ok(MaskSchedule::new(masks, n)?)
}

fn score(a: &ScoreArgs) -> CliResult<()> {
    inputs([
        Some(a.model.as_path()),
        Some(a.data.as_path()),
        a.masks.as_deref(),
    ])?;
    outputs([Some(a.out.as_path())])?;
    let params: ModelParams = load_model(&a.model)?;
    let cfg = params.config.clone();
    let last = match a.scorer {
        ScorerChoice::Significance => cfg.layers - 1,
        _ => cfg.layers,
    };
    let layers: Vec<usize> = match a.layer {
        Some(t) if t == 0 || t > last => {
            return Err(CliError::Usage(format!(
                "--layer {t} outside 1..={last} for the {} scorer",
                scorer_kind(a.scorer).as_str()
            )))
        }
        Some(t) => vec![t],
        None => (1..=last).collect(),
    };
    let data: Batch = load_dataset(&a.data)?;
    check_data(&params, &data)?;
    let schedule = match load_schedule(a.masks.as_deref(), &cfg)? {
        Some(s) => s,
        None => {
            let mut masks = vec![PatchMask::all(cfg.patches); cfg.layers];
            masks[cfg.layers - 1] = PatchMask::class_only(cfg.patches);
            MaskSchedule::new(masks, cfg.patches)?
        }
    };
    let sample = data.sample(a.samples, &mut Rng::new(a.seed));
    let mut rows = Vec::new();
    for t in layers {
        let scores = match a.scorer {
            ScorerChoice::Random => {
                let mut s = random_scores(cfg.patches, a.seed.wrapping_add(t as u64));
                s.layer = t;
                s
            }
            ScorerChoice::Significance => {
                let traces = forward_all(&params, &sample, Some(&partial(&schedule, t)?))?;
                significance_scores(&traces, &schedule.masks()[t..], t)?
            }
            ScorerChoice::AttnNorm => {
                let traces = forward_all(&params, &sample, Some(&partial(&schedule, t)?))?;
                attn_norm_scores(&traces, t)?
            }
        };
        let ranks = scores.ranks();
        for (i, v) in scores.values.iter().enumerate() {
            rows.push(vec![
                t.to_string(),
                i.to_string(),
                v.to_string(),
                (ranks[i] + 1).to_string(),
            ]);
        }
    }
    write_csv(&a.out, &["layer", "patch_index", "score", "rank"], rows)
}

fn prune(a: &PruneArgs, provenance: &Provenance) -> CliResult<()> {
    inputs([Some(a.model.as_path()), Some(a.data.as_path())])?;
    outputs([
        Some(a.out_masks.as_path()),
        a.out_model.as_deref(),
        a.report.as_deref(),
    ])?;
    let mut config = PrunerConfig::new(a.epsilon, a.seed);
    config.granularity = a.granularity;
    config.calibration_size = a.calibration;
    config.scorer = scorer_kind(a.scorer);
    config.normalize_error = !a.no_normalize;
    config.block_finetune = BlockFinetuneOptions {
        epochs: a.block_epochs,
        batch_size: a.block_batch_size,
        optimizer: OptimizerConfig::adam(a.block_lr),
    };
    usage(config.validate())?;
    if let Some(rate) = a.uniform_rate {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(CliError::Usage(format!(
                "--uniform-rate {rate} must lie strictly between 0 and 1"
            )));
        }
    }
    let params: ModelParams = load_model(&a.model)?;
    let data: Batch = load_dataset(&a.data)?;
    check_data(&params, &data)?;

    let (schedule, mut tuned, mut body) = match a.uniform_rate {
        Some(rate) => {
            let calibration = data.sample(a.calibration, &mut Rng::new(a.seed));
            let schedule =
                uniform_mask_schedule(&params, &calibration, rate, config.scorer, a.seed)?;
            let body = json!({ "method": "uniform", "rate": rate });
            (schedule, params.clone(), body)
        }
        None => {
            let mut outcome = prune_topdown(&params, &data, &config)?;
            if let Some(t) = outcome.report.wall_time_seconds.take() {
                info!("mask search took {t:.2} s");
            }
            let body = json!({ "method": "top_down", "search": outcome.report });
            (outcome.schedule, outcome.params, body)
        }
    };
    if a.finetune_epochs > 0 {
        let options = TrainOptions {
            epochs: a.finetune_epochs,
            optimizer: OptimizerConfig {
                learning_rate: a.finetune_lr,
                ..OptimizerConfig::default()
            },
            ..TrainOptions::default()
        };
        tuned = finetune_full(&tuned, &schedule, &data, &options, a.seed)?.0;
    }
    let cost = schedule_cost(&params.config, &schedule)?;
    info!(
        "kept counts {:?}, MAC reduction {:.1}%",
        schedule.kept_counts(),
        cost.reduction_percent
    );
    body["kept_counts"] = json!(schedule.kept_counts());
    body["cost"] = serde_json::to_value(&cost).map_err(patchslim::Error::from)?;
    save_masks(&a.out_masks, &schedule, provenance)?;
    if let Some(path) = &a.out_model {
        save_model(path, &tuned, provenance)?;
    }
    if let Some(path) = &a.report {
        emit(Some(path), "prune_report", &body, provenance)?;
    }
    Ok(())
}

fn preset(p: Preset) -> ModelConfig {
    let deit = |dim, heads| ModelConfig {
        layers: 12,
        patches: 197,
        dim,
        heads,
        hidden_dim: 4 * dim,
        use_layernorm: true,
        token_dim: 16 * 16 * 3,
        num_classes: 1000,
    };
    match p {
        Preset::DeitTi => deit(192, 3),
        Preset::DeitS => deit(384, 6),
        Preset::Toy => ModelConfig::toy(),
    }
}

fn flops(a: &FlopsArgs, provenance: &Provenance) -> CliResult<()> {
    inputs([a.model.as_deref(), a.masks.as_deref()])?;
    outputs([Some(a.out.as_path()), Some(a.csv.as_path())])?;
    let config = match (&a.model, a.preset) {
        (Some(path), _) => load_model::<f64>(path)?.config,
        (None, Some(p)) => preset(p),
        (None, None) => return Err(CliError::Usage("flops needs --model or --preset".into())),
    };
    let schedule = load_schedule(a.masks.as_deref(), &config)?
        .unwrap_or_else(|| MaskSchedule::all_ones(config.layers, config.patches));
    let cost = schedule_cost(&config, &schedule)?;
    let rows = cost
        .layers
        .iter()
        .map(|l| {
            vec![
                l.layer.to_string(),
                l.kept_in.to_string(),
                l.kept_out.to_string(),
                l.msa_macs.to_string(),
                l.mlp_macs.to_string(),
                (l.msa_macs + l.mlp_macs).to_string(),
                l.gathered_macs.to_string(),
            ]
        })
        .collect();
    info!(
        "{} MACs ({:.1}% below the unpruned {})",
        cost.total_macs, cost.reduction_percent, cost.baseline_total_macs
    );
    emit(
        Some(&a.out),
        "cost_report",
        &json!({ "architecture": config, "cost": cost }),
        provenance,
    )?;
    write_csv(
        &a.csv,
        &[
            "layer",
            "kept_in",
            "kept_out",
            "msa_macs",
            "mlp_macs",
            "total_macs",
            "gathered_macs",
        ],
        rows,
    )
}

fn fit_predictors(a: &TrainPredictorsArgs, provenance: &Provenance) -> CliResult<()> {
    inputs([
        Some(a.model.as_path()),
        Some(a.data.as_path()),
        Some(a.masks.as_path()),
    ])?;
    outputs([Some(a.out.as_path())])?;
    let params: ModelParams = load_model(&a.model)?;
    if let Some(g) = a.group {
        if g == 0 || params.config.dim % g != 0 {
            return Err(CliError::Usage(format!(
                "--group {g} does not divide the embedding width {}",
                params.config.dim
            )));
        }
    }
    let data: Batch = load_dataset(&a.data)?;
    check_data(&params, &data)?;
    let schedule = load_schedule(Some(&a.masks), &params.config)?.expect("path given");
    let options = PredictorTrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        samples: a.samples,
        group: a.group,
        target: match a.target {
            TargetChoice::Log1p => TargetTransform::Log1p,
            TargetChoice::MeanNormalized => TargetTransform::MeanNormalized,
            TargetChoice::Log1pMeanNormalized => TargetTransform::Log1pMeanNormalized,
            TargetChoice::Rank => TargetTransform::Rank,
        },
    };
    let set = train_predictors(&params, &schedule, &data, &options, a.seed)?;
    save_predictors(&a.out, &set, provenance)?;
    info!(
        "trained {} predictors into {}",
        set.predictors.len(),
        a.out.display()
    );
    Ok(())
}

fn eval_dynamic(a: &EvalDynamicArgs, provenance: &Provenance) -> CliResult<()> {
    inputs([
        Some(a.model.as_path()),
        Some(a.data.as_path()),
        Some(a.predictors.as_path()),
        a.masks.as_deref(),
    ])?;
    outputs([a.out.as_deref()])?;
    let params: ModelParams = load_model(&a.model)?;
    let data: Batch = load_dataset(&a.data)?;
    check_data(&params, &data)?;
    let schedule = load_schedule(a.masks.as_deref(), &params.config)?;
    let predictors: PredictorSet = load_predictors(&a.predictors)?;
    let budgets = parse_budgets(a.budgets.as_deref(), schedule.as_ref(), &params.config)?;
    let body = dynamic_report(&params, &data, &predictors, &budgets, schedule.as_ref())?;
    info!(
        "dynamic accuracy {:.4}",
        body["accuracy"].as_f64().unwrap_or(f64::NAN)
    );
    emit(a.out.as_deref(), "evaluation", &body, provenance)
}
