//! The five pipeline stages. Each stage derives a cache key from the
//! config subsections it depends on (plus the tool version), skips
//! work when its recorded outputs still match their digests, verifies
//! its upstream stages the same way, and records every file it writes
//! in the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use robustmon_core::apsim::{generate_corpus, CorpusMeta, Trace};
use robustmon_core::metrics::{
    clean_eval, emit_report, robustness_report_from, tolerance_block, CleanEval, PerturbationTag,
    RobustnessReport, ScoredBlock, ToleranceParams,
};
use robustmon_core::monitors::{
    build_dataset, load_checkpoint, ryu_like, save_checkpoint, Dataset, EpochRow, Monitor,
    RuleMonitor, WindowSample,
};
use robustmon_core::perturb::{
    fgsm_blackbox, fgsm_whitebox, gaussian_perturb, FgsmSpec, GaussianSpec, PerturbKind,
    PerturbedBatch, SubstituteSpec,
};
use robustmon_core::rules::{RuleEngine, RuleTable};

use crate::check::acceptance_snapshot;
use crate::config::{ExperimentConfig, ModelPlan};
use crate::manifest::{value_digest, RunManifest};
use crate::{pipeline, CliError};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Resolved invocation: config plus the effective output directory
/// and force flag after CLI overrides.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, out: Option<PathBuf>, force: bool) -> Ctx {
        let out = out.unwrap_or_else(|| cfg.out_dir.clone());
        Ctx { cfg, out, force }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: &'static str,
    /// False when the stage was up to date and skipped.
    pub ran: bool,
    pub wall_ms: u64,
    pub summary: String,
}

impl StageOutcome {
    fn fresh(stage: &'static str) -> StageOutcome {
        StageOutcome { stage, ran: false, wall_ms: 0, summary: "up to date".into() }
    }
}

/// Substitute-attack provenance recorded alongside the perturbed sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxMeta {
    pub epsilon: f64,
    pub agreement: f64,
    pub queries_used: usize,
}

fn key_simulate(cfg: &ExperimentConfig) -> String {
    value_digest(&("simulate", TOOL_VERSION, &cfg.corpus))
}

fn key_train(cfg: &ExperimentConfig) -> String {
    value_digest(&("train", TOOL_VERSION, &cfg.corpus, &cfg.features, &cfg.labels, &cfg.training))
}

fn key_attack(cfg: &ExperimentConfig) -> String {
    value_digest(&(
        "attack",
        TOOL_VERSION,
        &cfg.corpus,
        &cfg.features,
        &cfg.labels,
        &cfg.training,
        &cfg.attack,
    ))
}

fn key_evaluate(cfg: &ExperimentConfig) -> String {
    value_digest(&(
        "evaluate",
        TOOL_VERSION,
        &cfg.corpus,
        &cfg.features,
        &cfg.labels,
        &cfg.training,
        &cfg.attack,
        &cfg.evaluation,
    ))
}

fn key_acceptance(cfg: &ExperimentConfig) -> String {
    value_digest(&("acceptance", TOOL_VERSION, key_evaluate(cfg)))
}

fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Pipeline {
            message: format!("{}: {e}", parent.display()),
        })?;
    }
    std::fs::write(path, body).map_err(|e| CliError::Pipeline {
        message: format!("{}: {e}", path.display()),
    })
}

fn require_fresh(ctx: &Ctx, manifest: &RunManifest, stage: &'static str, key: &str) -> Result<(), CliError> {
    if manifest.stage_fresh(&ctx.out, stage, key) {
        Ok(())
    } else {
        Err(CliError::MissingUpstream { stage: stage.into() })
    }
}

fn finish(
    ctx: &Ctx,
    manifest: &mut RunManifest,
    stage: &'static str,
    key: &str,
    started: Instant,
    outputs: &[PathBuf],
    summary: String,
) -> Result<StageOutcome, CliError> {
    let wall_ms = started.elapsed().as_millis() as u64;
    manifest.record_stage(&ctx.out, stage, key, wall_ms, outputs)?;
    manifest.config_digest = value_digest(&ctx.cfg);
    manifest.tool_version = TOOL_VERSION.into();
    manifest.save(&ctx.out)?;
    Ok(StageOutcome { stage, ran: true, wall_ms, summary })
}

fn trace_rel(trace_id: &str) -> String {
    format!("corpus/traces/{trace_id}.csv")
}

fn model_rel(name: &str) -> String {
    format!("models/{name}.json")
}

fn curve_rel(name: &str) -> String {
    format!("models/curves/{name}.csv")
}

fn gaussian_rel(sigma: f64) -> String {
    format!("attacks/gaussian_{}.csv", ryu_like(sigma))
}

fn whitebox_rel(model: &str, epsilon: f64) -> String {
    format!("attacks/{model}/fgsm_whitebox_{}.csv", ryu_like(epsilon))
}

fn blackbox_rel(model: &str, epsilon: f64) -> String {
    format!("attacks/{model}/fgsm_blackbox_{}.csv", ryu_like(epsilon))
}

pub const BLACKBOX_META_REL: &str = "attacks/blackbox_meta.json";
pub const CLEAN_SCORES_REL: &str = "reports/clean_scores.json";
pub const REPORTS_REL: &str = "reports/reports.json";
pub const ACCEPTANCE_REL: &str = "acceptance.json";

fn load_corpus(ctx: &Ctx) -> Result<(Vec<Trace>, CorpusMeta), CliError> {
    let meta_path = ctx.path("corpus/meta.json");
    let body = std::fs::read_to_string(&meta_path).map_err(|e| CliError::Pipeline {
        message: format!("{}: {e}", meta_path.display()),
    })?;
    let meta: CorpusMeta = serde_json::from_str(&body).map_err(|e| CliError::Pipeline {
        message: format!("{}: {e}", meta_path.display()),
    })?;
    let mut traces = Vec::with_capacity(meta.profile_ids.len() * meta.episodes_per_profile as usize);
    for pid in &meta.profile_ids {
        for ep in 0..meta.episodes_per_profile {
            let path = ctx.path(&trace_rel(&format!("{pid}_ep{ep:03}")));
            let body = std::fs::read_to_string(&path).map_err(|e| CliError::Pipeline {
                message: format!("{}: {e}", path.display()),
            })?;
            traces.push(Trace::from_csv_str(pid, ep, &body).map_err(pipeline)?);
        }
    }
    Ok((traces, meta))
}

/// Every n-th test window: the clean evaluation set that attacks
/// perturb and evaluation scores.
fn eval_samples(dataset: &Dataset, stride: usize) -> Result<Vec<WindowSample>, CliError> {
    let samples: Vec<WindowSample> = dataset.test.iter().step_by(stride).cloned().collect();
    if samples.is_empty() {
        return Err(CliError::Pipeline {
            message: format!("test split is empty at test_stride {stride}"),
        });
    }
    Ok(samples)
}

/// The scoring universe: only traces in the test split. Monitors emit
/// no predictions on train/val traces, so scoring against the full
/// corpus would count every hazard there as a miss.
fn test_traces(traces: Vec<Trace>, dataset: &Dataset) -> Vec<Trace> {
    let ids: std::collections::HashSet<&str> =
        dataset.test.iter().map(|s| s.trace_id.as_str()).collect();
    traces.into_iter().filter(|t| ids.contains(t.trace_id().as_str())).collect()
}

pub fn cmd_simulate(ctx: &Ctx) -> Result<StageOutcome, CliError> {
    let key = key_simulate(&ctx.cfg);
    let mut manifest = RunManifest::load_or_default(&ctx.out);
    if !ctx.force && manifest.stage_fresh(&ctx.out, "simulate", &key) {
        return Ok(StageOutcome::fresh("simulate"));
    }
    let started = Instant::now();
    eprintln!("[simulate] generating corpus");
    let (traces, meta) = generate_corpus(&ctx.cfg.corpus_config()).map_err(pipeline)?;

    let mut outputs = Vec::with_capacity(traces.len() + 1);
    let meta_path = ctx.path("corpus/meta.json");
    write_text(&meta_path, &(serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n"))?;
    outputs.push(meta_path);
    for tr in &traces {
        let path = ctx.path(&trace_rel(&tr.trace_id()));
        write_text(&path, &tr.to_csv_string())?;
        outputs.push(path);
    }
    let summary = format!(
        "{} traces x {} steps, unsafe fraction {:.3}",
        meta.trace_count, meta.horizon, meta.unsafe_fraction
    );
    finish(ctx, &mut manifest, "simulate", &key, started, &outputs, summary)
}

pub fn cmd_train(ctx: &Ctx) -> Result<StageOutcome, CliError> {
    let mut manifest = RunManifest::load_or_default(&ctx.out);
    require_fresh(ctx, &manifest, "simulate", &key_simulate(&ctx.cfg))?;
    let key = key_train(&ctx.cfg);
    if !ctx.force && manifest.stage_fresh(&ctx.out, "train", &key) {
        return Ok(StageOutcome::fresh("train"));
    }
    let started = Instant::now();
    let (traces, _meta) = load_corpus(ctx)?;
    let engine = RuleEngine::new(RuleTable::default_table());
    let dataset = build_dataset(
        &traces,
        &ctx.cfg.feature_spec(),
        ctx.cfg.labels.horizon,
        &engine,
        ctx.cfg.loop_config().bgt,
    )
    .map_err(pipeline)?;

    let ds_dir = ctx.path("dataset");
    dataset.save(&ds_dir).map_err(pipeline)?;
    let mut outputs: Vec<PathBuf> =
        ["manifest.json", "train.csv", "val.csv", "test.csv"].iter().map(|f| ds_dir.join(f)).collect();

    for plan in ctx.cfg.model_plans() {
        eprintln!("[train] {}", plan.name);
        let settings = plan.settings(&ctx.cfg);
        let (model, curve) = robustmon_core::monitors::train_monitor(&dataset, &settings, &plan.name)
            .map_err(pipeline)?;
        let model_path = ctx.path(&model_rel(&plan.name));
        if let Some(parent) = model_path.parent() {
            std::fs::create_dir_all(parent).map_err(pipeline)?;
        }
        save_checkpoint(&model, &model_path).map_err(pipeline)?;
        outputs.push(model_path);
        let curve_path = ctx.path(&curve_rel(&plan.name));
        write_text(&curve_path, &curve_csv(&curve))?;
        outputs.push(curve_path);
    }
    let summary = format!(
        "{} monitors on {}/{}/{} train/val/test windows",
        ctx.cfg.model_plans().len(),
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len()
    );
    finish(ctx, &mut manifest, "train", &key, started, &outputs, summary)
}

fn curve_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,mean_loss,val_f1\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.epoch, ryu_like(r.mean_loss), ryu_like(r.val_f1)));
    }
    out
}

pub fn cmd_attack(ctx: &Ctx) -> Result<StageOutcome, CliError> {
    let mut manifest = RunManifest::load_or_default(&ctx.out);
    require_fresh(ctx, &manifest, "train", &key_train(&ctx.cfg))?;
    let key = key_attack(&ctx.cfg);
    if !ctx.force && manifest.stage_fresh(&ctx.out, "attack", &key) {
        return Ok(StageOutcome::fresh("attack"));
    }
    let started = Instant::now();
    let dataset = Dataset::load(&ctx.path("dataset")).map_err(pipeline)?;
    let spec = dataset.spec.clone();
    let eval = eval_samples(&dataset, ctx.cfg.attack.test_stride)?;
    let mut outputs = Vec::new();

    // Sensor noise is model-independent: one perturbed set per scale,
    // shared by every monitor at evaluation time.
    for (i, &sigma) in ctx.cfg.attack.gaussian_sigmas.iter().enumerate() {
        let gspec = GaussianSpec::new(sigma, ctx.cfg.attack.gaussian_seed + i as u64);
        let samples = gaussian_perturb(&eval, &gspec).map_err(pipeline)?;
        let batch =
            PerturbedBatch { kind: PerturbKind::Gaussian, magnitude: sigma, seed: gspec.seed, samples };
        let path = ctx.path(&gaussian_rel(sigma));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(pipeline)?;
        }
        batch.save(&spec, &path).map_err(pipeline)?;
        outputs.push(path);
    }

    let plans = ctx.cfg.model_plans();
    let per_model: Vec<Result<(Vec<PathBuf>, Option<(String, BlackboxMeta)>), CliError>> = plans
        .par_iter()
        .map(|plan| attack_one_model(ctx, plan, &dataset, &eval))
        .collect();

    let mut blackbox_meta: BTreeMap<String, BlackboxMeta> = BTreeMap::new();
    for result in per_model {
        let (paths, meta) = result?;
        outputs.extend(paths);
        if let Some((name, m)) = meta {
            blackbox_meta.insert(name, m);
        }
    }
    let meta_path = ctx.path(BLACKBOX_META_REL);
    write_text(
        &meta_path,
        &(serde_json::to_string_pretty(&blackbox_meta).expect("meta serializes") + "\n"),
    )?;
    outputs.push(meta_path);

    let summary = format!(
        "{} perturbed sets over {} eval windows",
        outputs.len() - 1,
        eval.len()
    );
    finish(ctx, &mut manifest, "attack", &key, started, &outputs, summary)
}

fn attack_one_model(
    ctx: &Ctx,
    plan: &ModelPlan,
    dataset: &Dataset,
    eval: &[WindowSample],
) -> Result<(Vec<PathBuf>, Option<(String, BlackboxMeta)>), CliError> {
    eprintln!("[attack] {}", plan.name);
    let model = load_checkpoint(&ctx.path(&model_rel(&plan.name))).map_err(pipeline)?;
    let monitor = Monitor::Neural(model);
    let spec = dataset.spec.clone();
    let mut paths = Vec::new();

    for &eps in &ctx.cfg.attack.fgsm_epsilons {
        let (samples, _deltas) = fgsm_whitebox(&monitor, eval, &FgsmSpec::new(eps)).map_err(pipeline)?;
        let batch =
            PerturbedBatch { kind: PerturbKind::FgsmWhitebox, magnitude: eps, seed: 0, samples };
        let path = ctx.path(&whitebox_rel(&plan.name, eps));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(pipeline)?;
        }
        batch.save(&spec, &path).map_err(pipeline)?;
        paths.push(path);
    }

    // Substitute attacks target the baselines only: the black-box
    // question is whether a query-only adversary matches white-box
    // damage on an undefended monitor, and substitute training
    // dominates attack wall-clock.
    let mut meta = None;
    if plan.is_baseline() {
        let bb = &ctx.cfg.attack.blackbox;
        let query_ds = Dataset {
            spec: spec.clone(),
            horizon: dataset.horizon,
            stats: dataset.stats.clone(),
            train: dataset.train.iter().step_by(bb.query_stride).cloned().collect(),
            val: dataset.val.iter().step_by(bb.query_stride).cloned().collect(),
            test: eval.to_vec(),
        };
        let mut sspec = SubstituteSpec::new(bb.query_budget, bb.epsilon, bb.seed);
        sspec.epochs = bb.substitute_epochs;
        sspec.batch_size = ctx.cfg.training.batch_size;
        sspec.learning_rate = ctx.cfg.training.learning_rate;
        let Monitor::Neural(target) = &monitor else { unreachable!("plans are neural") };
        let outcome =
            fgsm_blackbox(&|s| target.predict_batch(s), &query_ds, &sspec).map_err(pipeline)?;
        let batch = PerturbedBatch {
            kind: PerturbKind::FgsmBlackbox,
            magnitude: bb.epsilon,
            seed: bb.seed,
            samples: outcome.perturbed,
        };
        let path = ctx.path(&blackbox_rel(&plan.name, bb.epsilon));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(pipeline)?;
        }
        batch.save(&spec, &path).map_err(pipeline)?;
        paths.push(path);
        meta = Some((
            plan.name.clone(),
            BlackboxMeta {
                epsilon: bb.epsilon,
                agreement: outcome.agreement,
                queries_used: outcome.queries_used,
            },
        ));
    }
    Ok((paths, meta))
}

pub fn cmd_evaluate(ctx: &Ctx) -> Result<StageOutcome, CliError> {
    let mut manifest = RunManifest::load_or_default(&ctx.out);
    require_fresh(ctx, &manifest, "train", &key_train(&ctx.cfg))?;
    require_fresh(ctx, &manifest, "attack", &key_attack(&ctx.cfg))?;
    let key = key_evaluate(&ctx.cfg);
    if !ctx.force && manifest.stage_fresh(&ctx.out, "evaluate", &key) {
        return Ok(StageOutcome::fresh("evaluate"));
    }
    let started = Instant::now();
    let (corpus, _meta) = load_corpus(ctx)?;
    let dataset = Dataset::load(&ctx.path("dataset")).map_err(pipeline)?;
    let traces = test_traces(corpus, &dataset);
    let eval = eval_samples(&dataset, ctx.cfg.attack.test_stride)?;
    let params = ToleranceParams { delta: ctx.cfg.evaluation.delta };

    let plans = ctx.cfg.model_plans();
    let monitors: Vec<Monitor> = plans
        .iter()
        .map(|p| load_checkpoint(&ctx.path(&model_rel(&p.name))).map(Monitor::Neural).map_err(pipeline))
        .collect::<Result<_, _>>()?;

    // One clean pass per monitor, reused across every perturbation.
    eprintln!("[evaluate] clean predictions for {} monitors", monitors.len());
    let cleans: Vec<CleanEval> = monitors
        .par_iter()
        .map(|m| clean_eval(m, &eval, &traces, &params).map_err(pipeline))
        .collect::<Result<_, _>>()?;

    let rule = Monitor::Rule(RuleMonitor::new(
        dataset.spec.clone(),
        dataset.stats.clone(),
        ctx.cfg.loop_config().bgt,
    ));
    let rule_block = tolerance_block(&rule, &eval, &traces, &params).map_err(pipeline)?;

    let mut clean_scores: BTreeMap<String, ScoredBlock> = BTreeMap::new();
    clean_scores.insert(rule.name().to_string(), rule_block);
    for (plan, c) in plans.iter().zip(&cleans) {
        clean_scores.insert(plan.name.clone(), c.block);
    }

    let mut reports: Vec<RobustnessReport> = Vec::new();

    // Gaussian: load each shared batch once, score every monitor.
    for &sigma in &ctx.cfg.attack.gaussian_sigmas {
        let batch = PerturbedBatch::load(&dataset.spec, &ctx.path(&gaussian_rel(sigma)))
            .map_err(pipeline)?;
        let tag = batch_tag(&batch);
        let batch_reports: Vec<RobustnessReport> = monitors
            .par_iter()
            .zip(cleans.par_iter())
            .map(|(m, c)| {
                robustness_report_from(m, &eval, c, &batch.samples, tag.clone(), &traces, &params)
                    .map_err(pipeline)
            })
            .collect::<Result<_, _>>()?;
        reports.extend(batch_reports);
    }

    // White-box FGSM: per-model perturbed sets.
    let wb: Vec<Vec<RobustnessReport>> = plans
        .par_iter()
        .zip(monitors.par_iter().zip(cleans.par_iter()))
        .map(|(plan, (m, c))| {
            let mut out = Vec::new();
            for &eps in &ctx.cfg.attack.fgsm_epsilons {
                let batch =
                    PerturbedBatch::load(&dataset.spec, &ctx.path(&whitebox_rel(&plan.name, eps)))
                        .map_err(pipeline)?;
                let tag = batch_tag(&batch);
                out.push(
                    robustness_report_from(m, &eval, c, &batch.samples, tag, &traces, &params)
                        .map_err(pipeline)?,
                );
            }
            Ok::<_, CliError>(out)
        })
        .collect::<Result<_, _>>()?;
    reports.extend(wb.into_iter().flatten());

    // Black-box FGSM: baselines only, matching the attack stage.
    let bb_eps = ctx.cfg.attack.blackbox.epsilon;
    let bb: Vec<Option<RobustnessReport>> = plans
        .par_iter()
        .zip(monitors.par_iter().zip(cleans.par_iter()))
        .map(|(plan, (m, c))| {
            if !plan.is_baseline() {
                return Ok(None);
            }
            let batch =
                PerturbedBatch::load(&dataset.spec, &ctx.path(&blackbox_rel(&plan.name, bb_eps)))
                    .map_err(pipeline)?;
            let tag = batch_tag(&batch);
            robustness_report_from(m, &eval, c, &batch.samples, tag, &traces, &params)
                .map(Some)
                .map_err(pipeline)
        })
        .collect::<Result<_, _>>()?;
    reports.extend(bb.into_iter().flatten());

    let reports_dir = ctx.path("reports");
    std::fs::create_dir_all(&reports_dir).map_err(pipeline)?;
    let clean_path = ctx.path(CLEAN_SCORES_REL);
    write_text(
        &clean_path,
        &(serde_json::to_string_pretty(&clean_scores).expect("scores serialize") + "\n"),
    )?;
    let mut outputs = vec![clean_path];
    outputs.extend(emit_report(&reports, &reports_dir).map_err(pipeline)?);

    let summary = format!("{} robustness reports, {} monitors", reports.len(), clean_scores.len());
    finish(ctx, &mut manifest, "evaluate", &key, started, &outputs, summary)
}

fn batch_tag(batch: &PerturbedBatch) -> PerturbationTag {
    PerturbationTag {
        kind: batch.kind.name().to_string(),
        magnitude: batch.magnitude,
        seed: batch.seed,
    }
}

/// Runs all stages in order, then computes the acceptance snapshot
/// and writes `acceptance.json`. Criteria failures do not error here;
/// the caller decides whether they are fatal (`reproduce --check`).
pub fn cmd_reproduce(
    ctx: &Ctx,
) -> Result<(Vec<StageOutcome>, crate::check::AcceptanceSummary), CliError> {
    let outcomes = vec![cmd_simulate(ctx)?, cmd_train(ctx)?, cmd_attack(ctx)?, cmd_evaluate(ctx)?];

    let started = Instant::now();
    let summary = acceptance_snapshot(&ctx.cfg, &ctx.out)?;
    let path = ctx.path(ACCEPTANCE_REL);
    write_text(&path, &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))?;
    let mut manifest = RunManifest::load_or_default(&ctx.out);
    let key = key_acceptance(&ctx.cfg);
    manifest.record_stage(
        &ctx.out,
        "acceptance",
        &key,
        started.elapsed().as_millis() as u64,
        &[path],
    )?;
    manifest.save(&ctx.out)?;

    Ok((outcomes, summary))
}
