//! The five pipeline commands.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Instant;

use anyhow::{anyhow, Context};
use icl_consistency::corpus::{
    load_dataset, parse_dataset, sample_evaluation_set, training_pool, write_dataset,
};
use icl_consistency::design::{Level, CALIBRATION};
use icl_consistency::metrics::{
    accuracy_by_setup, kappa_report, mask_invalid, model_consistency, prediction_diversity,
    template_consistency, MetricsError,
};
use icl_consistency::model::{
    backend_from_uri, content_free_scores, predict, Backend, BackendMode, LabelScores, PredictedLabel,
};
use icl_consistency::sampler::{Pools, PromptGenerator, PromptValidator, Violation};
use icl_consistency::stats::{interaction_report, main_effects, rank_templates as rank, TemplateScore};
use icl_consistency::template::{find_template, load_templates};
use icl_consistency::{
    Corpus, DataRecord, EvalTable, FactorSet, InstructionTemplate, PromptInstance, Setup, SetupId,
    Split, Task,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::report;
use crate::store::{
    compact_predictions, read_prompts, AtomicJsonl, Counts, Manifest, PredictionLog, PredictionRecord,
    CONFIG_COPY, EVAL_SET, FACTORS, PREDICTIONS, PROBE, PROMPTS, REPORTS,
};

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Everything built from the config before any prompt is rendered.
pub struct Inputs {
    pub validation: Corpus,
    pub eval_set: Vec<DataRecord>,
    pub generator: PromptGenerator,
}

impl Inputs {
    pub fn factors(&self) -> &FactorSet {
        &self.generator.factors
    }
}

pub fn load_inputs(cfg: &LoadedConfig) -> CliResult<Inputs> {
    let c = &cfg.config;
    let validation =
        load_dataset(&cfg.resolve(&c.datasets.validation), c.task, Split::Validation).map_err(config_err)?;
    let eval_set = sample_evaluation_set(&validation, c.n_eval, c.seed).map_err(config_err)?;
    let train = load_dataset(&cfg.resolve(&c.datasets.train), c.task, Split::Train).map_err(config_err)?;
    let target = training_pool(Arc::new(train), None).map_err(config_err)?;
    let cross_task = match &c.datasets.cross_task_train {
        Some(path) => {
            let qqp = load_dataset(&cfg.resolve(path), Task::Qqp, Split::Train).map_err(config_err)?;
            Some(training_pool(Arc::new(qqp), None).map_err(config_err)?)
        }
        None => None,
    };
    let templates = load_templates(cfg.template_dir().as_deref()).map_err(config_err)?;
    let targets = cfg.target_templates();
    for id in targets.high.iter().chain(&targets.low) {
        if find_template(&templates, c.task, *id).is_none() {
            return Err(CliError::Config(format!("target template {id} not found for task {}", c.task)));
        }
    }
    let generator = PromptGenerator::new(
        cfg.factor_set()?,
        Pools { target, cross_task },
        templates,
        targets,
        c.seed,
    );
    Ok(Inputs {
        validation,
        eval_set,
        generator,
    })
}

/// Setups this model run is responsible for under `model_annotations`.
pub fn active_setups(cfg: &LoadedConfig, factors: &FactorSet) -> Vec<Setup> {
    factors
        .enumerate()
        .into_iter()
        .filter(|s| {
            cfg.config.model_annotations.iter().all(|(name, &present)| {
                match factors.level(s, name) {
                    Level::Irrelevant => true,
                    level => level.is_present() == present,
                }
            })
        })
        .collect()
}

fn check_manifest(cfg: &LoadedConfig, out: &Path) -> CliResult<Manifest> {
    let manifest = Manifest::load(out)?
        .ok_or_else(|| anyhow!("no manifest in {}; run `harness generate` first", out.display()))?;
    if manifest.config_hash != cfg.hash {
        return Err(CliError::Config(format!(
            "{} was generated from a different config; run `harness generate` again",
            out.display()
        )));
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateSummary {
    pub setups: usize,
    pub prompts: usize,
}

pub fn generate(cfg: &LoadedConfig) -> CliResult<GenerateSummary> {
    let started = Instant::now();
    let out = cfg.output_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let inputs = load_inputs(cfg)?;
    let factors = inputs.factors();
    let setups = factors.enumerate();

    let previous = Manifest::load(&out)?;
    if previous.as_ref().is_some_and(|m| m.config_hash != cfg.hash) {
        // Predictions and reports of another config would silently mix in.
        for stale in [PREDICTIONS, REPORTS] {
            let p = out.join(stale);
            if p.is_dir() {
                fs::remove_dir_all(&p)?;
            } else if p.exists() {
                fs::remove_file(&p)?;
            }
        }
    }

    let mut writer = AtomicJsonl::create(&out.join(PROMPTS))?;
    for setup in &setups {
        let prompts = render_setup(&inputs.generator, setup, &inputs.eval_set)?;
        for p in &prompts {
            writer.push(p)?;
        }
    }
    let prompts = writer.finish()?;

    crate::store::write_atomic(&out.join(FACTORS), &serde_json::to_vec_pretty(factors).map_err(anyhow::Error::from)?)?;
    crate::store::write_atomic(&out.join(CONFIG_COPY), cfg.raw.as_bytes())?;
    let eval_corpus = Corpus {
        records: inputs.eval_set.clone(),
        ..inputs.validation.clone()
    };
    let mut eval_bytes = Vec::new();
    write_dataset(&eval_corpus, &mut eval_bytes).map_err(anyhow::Error::from)?;
    crate::store::write_atomic(&out.join(EVAL_SET), &eval_bytes)?;

    let mut manifest = Manifest {
        config_hash: cfg.hash.clone(),
        task: cfg.config.task.to_string(),
        counts: Counts {
            setups: setups.len(),
            prompts,
            ..Counts::default()
        },
        ..Manifest::default()
    };
    manifest
        .timings
        .insert("generate".into(), started.elapsed().as_secs_f64());
    manifest.save(&out)?;
    Ok(GenerateSummary {
        setups: setups.len(),
        prompts,
    })
}

fn render_setup(
    generator: &PromptGenerator,
    setup: &Setup,
    eval_set: &[DataRecord],
) -> CliResult<Vec<PromptInstance>> {
    let id = setup.id();
    eval_set
        .par_iter()
        .map(|r| {
            generator
                .prompt(setup, r)
                .map_err(|e| CliError::Runtime(anyhow!("setup {id}, data {}: {e}", r.data_id)))
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Stop after this many new predictions (a deliberate interruption).
    pub max_prompts: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub prompts: usize,
    pub skipped: usize,
    pub attempted: usize,
    pub answered: usize,
    pub unanswered: usize,
}

/// How calibration applies to a batch of prompts.
struct CalibrationPlan<'a> {
    inputs: &'a [String],
    /// Compute content-free scores at all.
    enabled: bool,
    /// Use calibrated labels for every setup, rather than only where the
    /// calibration annotation factor is present.
    everywhere: bool,
    factors: Option<&'a FactorSet>,
}

impl CalibrationPlan<'_> {
    fn use_calibrated(&self, setup_id: &SetupId) -> bool {
        if self.everywhere {
            return true;
        }
        match self.factors {
            Some(fs) if fs.position(CALIBRATION).is_some() => fs
                .decode(setup_id)
                .is_ok_and(|s| fs.is_present(&s, CALIBRATION)),
            _ => false,
        }
    }
}

type Records = BTreeMap<(SetupId, String), PredictionRecord>;

/// Scores `prompts` into the log at `log_path`, skipping keys already answered
/// when resuming. Returns the compacted records.
#[allow(clippy::too_many_arguments)]
fn execute(
    prompts: &[PromptInstance],
    backend: &dyn Backend,
    templates: &[InstructionTemplate],
    task: Task,
    calibration: &CalibrationPlan<'_>,
    parallelism: usize,
    log_path: &Path,
    options: &RunOptions,
) -> CliResult<(RunSummary, Records)> {
    let existing = if options.resume {
        crate::store::load_predictions(log_path)?
    } else {
        BTreeMap::new()
    };
    let mut log = PredictionLog::open(log_path, !options.resume)?;

    // The first prompt of each setup fixes the in-context shape used for
    // content-free scoring, independent of what a resumed run still needs.
    let mut shapes: BTreeMap<&SetupId, &PromptInstance> = BTreeMap::new();
    for p in prompts {
        shapes.entry(&p.setup_id).or_insert(p);
    }
    let mut pending: Vec<&PromptInstance> = prompts
        .iter()
        .filter(|p| !existing.get(&p.key()).is_some_and(PredictionRecord::is_answered))
        .collect();
    let skipped = prompts.len() - pending.len();
    if let Some(limit) = options.max_prompts {
        pending.truncate(limit);
    }

    let template_of = |p: &PromptInstance| {
        find_template(templates, task, p.target_template_id)
            .ok_or_else(|| format!("unknown target template {}", p.target_template_id))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(anyhow::Error::from)?;

    let cf: HashMap<&SetupId, Result<LabelScores, String>> =
        if calibration.enabled && backend.mode() == BackendMode::Scoring {
            let needed: BTreeSet<&SetupId> = pending.iter().map(|p| &p.setup_id).collect();
            pool.install(|| {
                needed
                    .into_par_iter()
                    .map(|id| {
                        let shape = shapes[id];
                        let scores = template_of(shape).and_then(|t| {
                            content_free_scores(backend, shape, t, calibration.inputs)
                                .map_err(|e| format!("content-free scoring failed: {e}"))
                        });
                        (id, scores)
                    })
                    .collect()
            })
        } else {
            HashMap::new()
        };

    let answer = |p: &PromptInstance| -> PredictionRecord {
        let unanswered = |error: String| PredictionRecord::Unanswered {
            setup_id: p.setup_id.clone(),
            data_id: p.data_id.clone(),
            error,
        };
        let template = match template_of(p) {
            Ok(t) => t,
            Err(e) => return unanswered(e),
        };
        let cf_scores = match cf.get(&p.setup_id) {
            Some(Ok(s)) => Some(s),
            Some(Err(e)) => return unanswered(e.clone()),
            None => None,
        };
        match predict(backend, p, template, cf_scores, calibration.use_calibrated(&p.setup_id)) {
            Ok(prediction) => PredictionRecord::Answered(prediction),
            Err(e) => unanswered(e.to_string()),
        }
    };

    let (tx, rx) = mpsc::sync_channel::<PredictionRecord>(1024);
    let mut summary = RunSummary {
        prompts: prompts.len(),
        skipped,
        attempted: pending.len(),
        ..RunSummary::default()
    };
    thread::scope(|scope| -> CliResult<()> {
        let pending = &pending;
        let answer = &answer;
        let pool = &pool;
        scope.spawn(move || {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, p| {
                    // The receiver only hangs up after a write failure.
                    let _ = tx.send(answer(p));
                })
            })
        });
        for record in rx {
            log.append(&record)?;
            if record.is_answered() {
                summary.answered += 1;
            } else {
                summary.unanswered += 1;
            }
        }
        Ok(())
    })?;
    drop(log);
    let records = compact_predictions(log_path)?;
    Ok((summary, records))
}

fn make_backend(cfg: &LoadedConfig) -> CliResult<Box<dyn Backend>> {
    let uri = &cfg.config.backend;
    let http = (uri.starts_with("http://") || uri.starts_with("https://")).then(|| cfg.http_options());
    backend_from_uri(uri, http).map_err(config_err)
}

pub fn run(cfg: &LoadedConfig, options: &RunOptions) -> CliResult<RunSummary> {
    let started = Instant::now();
    let out = cfg.output_dir();
    let mut manifest = check_manifest(cfg, &out)?;
    let backend = make_backend(cfg)?;
    let templates = load_templates(cfg.template_dir().as_deref()).map_err(config_err)?;
    let factors = cfg.factor_set()?;
    let active: BTreeSet<SetupId> = active_setups(cfg, &factors).iter().map(Setup::id).collect();

    let prompts_path = out.join(PROMPTS);
    if !prompts_path.exists() {
        return Err(anyhow!("{} not found; run `harness generate` first", prompts_path.display()).into());
    }
    let mut prompts = read_prompts(&prompts_path)?;
    prompts.retain(|p| active.contains(&p.setup_id));

    let calibration = CalibrationPlan {
        inputs: &cfg.config.content_free_inputs,
        enabled: cfg.config.calibration || factors.position(CALIBRATION).is_some(),
        everywhere: cfg.config.calibration,
        factors: Some(&factors),
    };
    let (mut summary, records) = execute(
        &prompts,
        backend.as_ref(),
        &templates,
        cfg.config.task,
        &calibration,
        cfg.config.parallelism,
        &out.join(PREDICTIONS),
        options,
    )?;
    let answered = prompts
        .iter()
        .filter(|p| records.get(&p.key()).is_some_and(PredictionRecord::is_answered))
        .count();
    summary.unanswered = prompts.len() - answered;
    manifest.counts.completed = answered;
    manifest.counts.unanswered = summary.unanswered;
    manifest
        .timings
        .insert("run".into(), started.elapsed().as_secs_f64());
    manifest.save(&out)?;
    if summary.unanswered > 0 && options.max_prompts.is_none() {
        let first = records
            .values()
            .find_map(|r| match r {
                PredictionRecord::Unanswered { error, .. } => Some(error.clone()),
                _ => None,
            })
            .unwrap_or_default();
        return Err(anyhow!(
            "{} prompts unanswered (first error: {first}); rerun with --resume",
            summary.unanswered
        )
        .into());
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreSummary {
    pub setups: usize,
    pub data_points: usize,
    pub missing: usize,
    pub masked: usize,
    pub kappa_avg: f64,
    pub c_pi: f64,
    pub mean_accuracy: f64,
    pub single_label_bias: bool,
}

pub const BIAS_WARNING: &str = "predictions are biased toward predicting a single label";

pub fn score(cfg: &LoadedConfig, allow_partial: bool) -> CliResult<ScoreSummary> {
    let started = Instant::now();
    let out = cfg.output_dir();
    let mut manifest = check_manifest(cfg, &out)?;
    let factors = cfg.factor_set()?;
    let setups: Vec<SetupId> = active_setups(cfg, &factors).iter().map(Setup::id).collect();
    let eval_path = out.join(EVAL_SET);
    let eval = parse_dataset(
        std::io::BufReader::new(fs::File::open(&eval_path).with_context(|| format!("opening {}", eval_path.display()))?),
        cfg.config.task,
        Split::Validation,
    )
    .map_err(anyhow::Error::from)?;
    let gold: BTreeMap<String, usize> = eval.records.iter().map(|r| (r.data_id.clone(), r.gold)).collect();

    let pred_path = out.join(PREDICTIONS);
    let records = if pred_path.exists() {
        compact_predictions(&pred_path)?
    } else {
        BTreeMap::new()
    };
    let predictions: HashMap<(SetupId, String), PredictedLabel> = records
        .into_iter()
        .filter_map(|(k, r)| match r {
            PredictionRecord::Answered(p) => Some((k, p.label)),
            PredictionRecord::Unanswered { .. } => None,
        })
        .collect();

    let label_count = cfg.config.task.label_count();
    let build = if allow_partial { EvalTable::new_partial } else { EvalTable::new };
    let table = build(setups.clone(), gold.clone(), label_count, &predictions).map_err(|e| match e {
        MetricsError::MissingCells(cells) => CliError::Runtime(anyhow!(
            "{} predictions missing, e.g. {}; run `harness run --resume` or score with --allow-partial",
            cells.len(),
            cells
                .iter()
                .take(10)
                .map(|(s, d)| format!("({s}, {d})"))
                .collect::<Vec<_>>()
                .join(", ")
        )),
        other => CliError::Runtime(other.into()),
    })?;
    let missing = setups
        .iter()
        .flat_map(|s| gold.keys().map(move |d| (s.clone(), d.clone())))
        .filter(|k| !predictions.contains_key(k))
        .count();

    let reports = out.join(REPORTS);
    fs::create_dir_all(&reports)?;
    let accuracy = accuracy_by_setup(&table);
    let mask = mask_invalid(&table);
    let kappa = kappa_report(&table, &factors, cfg.config.kappa_mode).map_err(anyhow::Error::from)?;
    let consistency = if setups.len() >= 2 {
        Some(model_consistency(&table).map_err(anyhow::Error::from)?)
    } else {
        None
    };
    let diversity = prediction_diversity(&table);
    let acc_map: BTreeMap<SetupId, f64> = accuracy.clone();
    let effects = main_effects(&acc_map, &factors).map_err(anyhow::Error::from)?;
    let interactions =
        interaction_report(&acc_map, &factors, cfg.config.alpha, cfg.config.bonferroni).map_err(anyhow::Error::from)?;

    report::write_accuracy(&reports.join("accuracy.csv"), &table, &factors, &accuracy)?;
    report::write_kappa(&reports, &kappa)?;
    if let Some(c) = &consistency {
        report::write_json(&reports.join("consistency.json"), c)?;
    }
    report::write_diversity(&reports.join("diversity.json"), &diversity)?;
    report::write_main_effects(&reports, &effects)?;
    report::write_interactions(&reports.join("interactions.csv"), &interactions)?;
    report::write_json(
        &reports.join("mask.json"),
        &serde_json::json!({
            "masked": mask.count,
            "missing": missing,
            "total": mask.total,
            "cells": mask.masked,
        }),
    )?;

    let mean_accuracy = if accuracy.is_empty() {
        0.0
    } else {
        accuracy.values().sum::<f64>() / accuracy.len() as f64
    };
    let summary = ScoreSummary {
        setups: setups.len(),
        data_points: gold.len(),
        missing,
        masked: mask.count - missing,
        kappa_avg: kappa.kappa_avg,
        c_pi: consistency.as_ref().map_or(f64::NAN, |c| c.c_pi),
        mean_accuracy,
        single_label_bias: diversity.single_label_bias,
    };
    report::write_json(&reports.join("summary.json"), &report::SummaryJson::from(&summary))?;

    manifest.counts.masked = summary.masked;
    manifest
        .timings
        .insert("score".into(), started.elapsed().as_secs_f64());
    manifest.save(&out)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankSummary {
    pub setup_id: SetupId,
    pub ranking: icl_consistency::stats::TemplateRanking,
}

/// Setup ID used in probe files: the probed setup plus the forced template.
pub fn probe_setup_id(setup: &SetupId, template_id: u32) -> SetupId {
    SetupId(format!("{setup}#t{template_id:02}"))
}

pub fn rank_templates(cfg: &LoadedConfig, options: &RunOptions) -> CliResult<RankSummary> {
    let inputs = load_inputs(cfg)?;
    let c = &cfg.config;
    let factors = inputs.factors();
    let setup = match &c.probe.setup {
        Some(id) => factors.decode(&SetupId(id.clone())).map_err(config_err)?,
        None => factors
            .enumerate()
            .into_iter()
            .next()
            .ok_or_else(|| CliError::Config("factor set has no setups".into()))?,
    };
    let template_ids: Vec<u32> = match &c.probe.templates {
        Some(ids) => {
            for id in ids {
                if find_template(&inputs.generator.templates, c.task, *id).is_none() {
                    return Err(CliError::Config(format!("probe template {id} not found for task {}", c.task)));
                }
            }
            ids.clone()
        }
        None => inputs
            .generator
            .templates
            .iter()
            .filter(|t| t.task == c.task)
            .map(|t| t.template_id)
            .collect(),
    };
    if template_ids.len() < 4 {
        return Err(anyhow!(icl_consistency::stats::StatsError::TooFewTemplates(template_ids.len())).into());
    }
    let eval_set = match c.probe.n_eval {
        Some(n) => sample_evaluation_set(&inputs.validation, n, c.seed).map_err(config_err)?,
        None => inputs.eval_set.clone(),
    };

    let out = cfg.output_dir().join(PROBE);
    fs::create_dir_all(&out)?;
    let setup_id = setup.id();
    let mut prompts = Vec::with_capacity(template_ids.len() * eval_set.len());
    for &id in &template_ids {
        let generator = inputs.generator.clone().with_target_template(id);
        for mut p in render_setup(&generator, &setup, &eval_set)? {
            p.setup_id = probe_setup_id(&setup_id, id);
            prompts.push(p);
        }
    }
    prompts.sort_by_key(PromptInstance::key);
    let mut writer = AtomicJsonl::create(&out.join(PROMPTS))?;
    for p in &prompts {
        writer.push(p)?;
    }
    writer.finish()?;

    let backend = make_backend(cfg)?;
    let calibration = CalibrationPlan {
        inputs: &c.content_free_inputs,
        enabled: c.calibration,
        everywhere: c.calibration,
        factors: None,
    };
    let (_, records) = execute(
        &prompts,
        backend.as_ref(),
        &inputs.generator.templates,
        c.task,
        &calibration,
        c.parallelism,
        &out.join(PREDICTIONS),
        options,
    )?;

    let mut by_template: BTreeMap<u32, Vec<Option<usize>>> = BTreeMap::new();
    let mut accuracy: BTreeMap<u32, f64> = BTreeMap::new();
    for &id in &template_ids {
        let key_setup = probe_setup_id(&setup_id, id);
        let mut preds = Vec::with_capacity(eval_set.len());
        let mut correct = 0;
        for r in &eval_set {
            let label = match records.get(&(key_setup.clone(), r.data_id.clone())) {
                Some(PredictionRecord::Answered(p)) => p.label.index(),
                Some(PredictionRecord::Unanswered { error, .. }) => {
                    return Err(anyhow!(
                        "probe prompt ({key_setup}, {}) unanswered: {error}; rerun with --resume",
                        r.data_id
                    )
                    .into())
                }
                None if options.max_prompts.is_some() => None,
                None => return Err(anyhow!("probe prompt ({key_setup}, {}) has no prediction", r.data_id).into()),
            };
            correct += usize::from(label == Some(r.gold));
            preds.push(label);
        }
        accuracy.insert(id, if eval_set.is_empty() { 0.0 } else { correct as f64 / eval_set.len() as f64 });
        by_template.insert(id, preds);
    }

    let label_count = c.task.label_count();
    let mut scores = Vec::with_capacity(template_ids.len());
    for &id in &template_ids {
        let t = find_template(&inputs.generator.templates, c.task, id).expect("checked above");
        let c_lambda = template_consistency(&by_template, id, label_count, c.template_consistency)
            .map_err(anyhow::Error::from)?;
        scores.push(TemplateScore {
            template_id: id,
            name: t.name.clone(),
            accuracy: accuracy[&id],
            c_lambda,
        });
    }
    let ranking = rank(&scores).map_err(anyhow::Error::from)?;
    report::write_ranking(&out, &ranking, &scores)?;
    Ok(RankSummary { setup_id, ranking })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub prompts: usize,
    pub violations: Vec<Violation>,
}

pub fn validate(cfg: &LoadedConfig) -> CliResult<ValidationReport> {
    let out = cfg.output_dir();
    let path = out.join(PROMPTS);
    validate_file(cfg, &path)
}

/// Checks every prompt in `path` against constraints re-derived from its setup ID.
pub fn validate_file(cfg: &LoadedConfig, path: &Path) -> CliResult<ValidationReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let inputs = load_inputs(cfg)?;
    let validator = PromptValidator::new(&inputs.generator, &inputs.eval_set);

    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    type Checked = (Option<(SetupId, String)>, Vec<Violation>);
    let checked: Vec<Checked> = lines
        .par_iter()
        .map(|(i, line)| match serde_json::from_str::<PromptInstance>(line) {
            Ok(p) => (Some(p.key()), validator.validate(&p)),
            Err(e) => (
                None,
                vec![Violation {
                    setup_id: SetupId(String::from("?")),
                    data_id: format!("line {}", i + 1),
                    message: format!("malformed prompt record: {e}"),
                }],
            ),
        })
        .collect();

    let mut seen = BTreeSet::new();
    let mut violations = Vec::new();
    for (key, found) in checked {
        if let Some(key) = key {
            if !seen.insert(key.clone()) {
                violations.push(Violation {
                    setup_id: key.0,
                    data_id: key.1,
                    message: "duplicate prompt key".into(),
                });
            }
        }
        violations.extend(found);
    }
    let report = ValidationReport {
        prompts: lines.len(),
        violations,
    };
    if out_dir_exists(cfg) {
        report::write_json(&cfg.output_dir().join("validation.json"), &report)?;
    }
    Ok(report)
}

fn out_dir_exists(cfg: &LoadedConfig) -> bool {
    cfg.output_dir().is_dir()
}
