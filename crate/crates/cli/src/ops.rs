//! Subcommand implementations. Each command prints exactly one JSON object
//! to standard output; narration and progress go to standard error. All
//! side effects land under the resolved output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use scc_core::assay::LadderParams;
use scc_core::battery::agent::run_agent_battery;
use scc_core::battery::dual::{load_benchmark_tasks, run_dual_battery};
use scc_core::battery::BatteryError;
use scc_core::gateway::Gateway;
use scc_core::ladder::{
    dense_sweep, run_ladder, BundleSource, CapacityEstimate, CountingSource, LadderError,
    RunContext,
};
use scc_core::nested::NestedSource;
use scc_core::report::{
    audit_breakdown, capacity_value, correlate_capacity, emit_reports, load_run, RunManifest,
    RunStore, ESTIMATE_FILE, SUMMARY_FILE, TRACE_FILE,
};
use scc_core::stats::{
    guessing_batch_stats, single_trial_pass_rate, validate_ladder_config, GuessBound,
};
use serde::Serialize;

use crate::config::{self, AssayChoice, ResolvedRun};
use crate::{Failure, ReportArgs, RunArgs, VerifyArgs};

/// Copy of the fully-resolved configuration, written into every run
/// directory next to the data it produced.
pub const RESOLVED_FILE: &str = "resolved_config.json";

pub fn cmd_run(args: &RunArgs, deterministic: bool) -> Result<(), Failure> {
    let file = config::load_file_config(args.config.as_deref()).map_err(Failure::config)?;
    let default_label = if deterministic { "sim" } else { "run" };
    let resolved =
        config::resolve(file, &args.overrides(), default_label).map_err(Failure::config)?;

    if deterministic && resolved.oracle.is_none() {
        return Err(Failure::config(anyhow!(
            "simulate needs an oracle; pass --oracle or add an [oracle] table to the config"
        )));
    }
    if args.resume && !matches!(resolved.assay, AssayChoice::Count | AssayChoice::Nested) {
        return Err(Failure::config(anyhow!("--resume applies only to ladder runs")));
    }

    resolved.params.validate().map_err(|e| Failure::config(anyhow!(e)))?;
    if matches!(resolved.assay, AssayChoice::Count | AssayChoice::Nested) {
        // The guessing gate runs before any query is spent on a doomed config.
        validate_ladder_config(&resolved.params).map_err(|e| Failure::config(anyhow!(e)))?;
    }

    let gateway = resolved.gateway().map_err(Failure::config)?;

    if resolved.oracle.is_none() {
        let report = gateway.preflight();
        if report.auth_missing {
            let var = resolved
                .endpoint
                .as_ref()
                .map(|e| e.auth_env_var.clone())
                .unwrap_or_default();
            return Err(Failure::preflight(anyhow!(
                "auth environment variable {var} is not set; export it and retry"
            )));
        }
        if !report.passed() {
            return Err(Failure::preflight(anyhow!(
                "preflight failed: {} of {} probes answered exactly, {} transport failures",
                report.parsed_exact,
                report.probes,
                report.transport_failures
            )));
        }
        eprintln!("preflight ok: {}/{} probes answered exactly", report.parsed_exact, report.probes);
    }

    let ctx = if deterministic {
        RunContext::deterministic(&resolved.label, &resolved.model, resolved.params.seed)
    } else {
        RunContext::wall_clock(&resolved.label, &resolved.model, resolved.params.seed)
    };
    let dir = resolved.out_root.join(&ctx.run_id);

    match resolved.assay {
        AssayChoice::Count | AssayChoice::Nested => {
            run_ladder_assay(args.resume, &resolved, &gateway, ctx, &dir)
        }
        AssayChoice::Sweep => run_sweep(&resolved, &gateway, ctx, &dir),
        AssayChoice::Dual => run_dual(&resolved, &gateway, ctx, &dir),
        AssayChoice::Agent => run_agent(&resolved, &gateway, ctx, &dir),
    }
}

fn ladder_failure(e: LadderError) -> Failure {
    match e {
        LadderError::Params(_) | LadderError::Config(_) => Failure::config(anyhow!(e)),
        other => Failure::from(anyhow!(other)),
    }
}

fn battery_failure(e: BatteryError) -> Failure {
    match e {
        BatteryError::Aborted => Failure::from(anyhow!(e)),
        other => Failure::config(anyhow!(other)),
    }
}

fn capacity_display(est: &CapacityEstimate, params: &LadderParams) -> String {
    if est.below_minimum {
        format!("<{}", params.base_length)
    } else if est.censored {
        format!(">{}", params.max_length)
    } else {
        est.capacity.to_string()
    }
}

fn write_resolved(dir: &Path, run: &ResolvedRun) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::from(anyhow!("creating {}: {e}", dir.display())))?;
    let body = serde_json::to_string_pretty(run).map_err(|e| Failure::from(anyhow!(e)))?;
    let path = dir.join(RESOLVED_FILE);
    std::fs::write(&path, body + "\n")
        .map_err(|e| Failure::from(anyhow!("writing {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Failure::from(anyhow!(e)))?;
    std::fs::write(path, body + "\n")
        .map_err(|e| Failure::from(anyhow!("writing {}: {e}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(|e| Failure::from(anyhow!(e)))?);
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| Failure::from(anyhow!("writing {}: {e}", path.display())))
}

fn print_summary(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn run_ladder_assay(
    resume: bool,
    run: &ResolvedRun,
    gateway: &Gateway,
    ctx: RunContext,
    dir: &Path,
) -> Result<(), Failure> {
    let source: Box<dyn BundleSource> = match run.assay {
        AssayChoice::Nested => Box::new(NestedSource::new(run.params.seed)),
        _ => Box::new(CountingSource { motif: run.motif() }),
    };
    let (mut store, done, ctx) = if resume {
        let (store, done) =
            RunStore::resume(dir).map_err(|e| Failure::config(anyhow!("resuming: {e}")))?;
        let m = store.manifest();
        if m.params != run.params || m.assay != run.assay.assay_kind() {
            return Err(Failure::config(anyhow!(
                "run at {} was recorded with different parameters; refusing to resume",
                dir.display()
            )));
        }
        eprintln!("resuming {} with {} finished tiers", m.context.run_id, done.len());
        let ctx = m.context.clone();
        (store, done, ctx)
    } else {
        let manifest = RunManifest {
            context: ctx.clone(),
            assay: run.assay.assay_kind(),
            motif_label: source.motif_label(),
            params: run.params.clone(),
        };
        let store = RunStore::create(dir, manifest).map_err(|e| Failure::from(anyhow!(e)))?;
        (store, Vec::new(), ctx)
    };
    write_resolved(dir, run)?;

    let estimate = run_ladder(gateway, source.as_ref(), &run.params, &ctx, &mut store, &done)
        .map_err(ladder_failure)?;
    store.finish(&estimate).map_err(|e| Failure::from(anyhow!(e)))?;

    eprintln!(
        "capacity {} (window [{}, {}]) after {} tiers, {} tokens",
        capacity_display(&estimate, &run.params),
        estimate.stable_lower.map_or_else(|| "-".to_string(), |v| v.to_string()),
        estimate.unstable_upper,
        estimate.tiers.len(),
        estimate.total_tokens
    );
    print_summary(&serde_json::json!({
        "run_id": ctx.run_id,
        "model": ctx.model_id,
        "assay": run.assay.name(),
        "dir": dir,
        "capacity": estimate.capacity,
        "capacity_display": capacity_display(&estimate, &run.params),
        "stable_lower": estimate.stable_lower,
        "unstable_upper": estimate.unstable_upper,
        "below_minimum": estimate.below_minimum,
        "censored": estimate.censored,
        "tiers": estimate.tiers.len(),
        "total_tokens": estimate.total_tokens,
    }));
    Ok(())
}

fn run_sweep(
    run: &ResolvedRun,
    gateway: &Gateway,
    ctx: RunContext,
    dir: &Path,
) -> Result<(), Failure> {
    let source = CountingSource { motif: run.motif() };
    let manifest = RunManifest {
        context: ctx.clone(),
        assay: run.assay.assay_kind(),
        motif_label: source.motif_label(),
        params: run.params.clone(),
    };
    let mut store = RunStore::create(dir, manifest).map_err(|e| Failure::from(anyhow!(e)))?;
    write_resolved(dir, run)?;

    let result = dense_sweep(gateway, &source, &ctx, &mut store, run.sweep_from, run.sweep_to)
        .map_err(ladder_failure)?;
    drop(store);
    write_json(&dir.join("sweep.json"), &result)?;

    eprintln!(
        "swept [{}, {}]: first error {}",
        run.sweep_from,
        run.sweep_to,
        result.first_error.map_or_else(|| "none".to_string(), |v| v.to_string())
    );
    print_summary(&serde_json::json!({
        "run_id": ctx.run_id,
        "model": ctx.model_id,
        "assay": "sweep",
        "dir": dir,
        "from": run.sweep_from,
        "to": run.sweep_to,
        "checked": result.checked,
        "first_error": result.first_error,
        "error_count": result.errors.len(),
    }));
    Ok(())
}

fn run_dual(
    run: &ResolvedRun,
    gateway: &Gateway,
    ctx: RunContext,
    dir: &Path,
) -> Result<(), Failure> {
    let tasks = load_benchmark_tasks(&run.dual_tasks_file).map_err(battery_failure)?;
    let (outcomes, report) =
        run_dual_battery(gateway, &run.dual, &tasks, &ctx).map_err(battery_failure)?;
    write_resolved(dir, run)?;
    write_jsonl(&dir.join("dual_outcomes.jsonl"), &outcomes)?;
    write_json(&dir.join("dual_report.json"), &report)?;

    let conditions: Vec<serde_json::Value> = report
        .conditions
        .iter()
        .map(|c| {
            serde_json::json!({
                "condition": c.condition.as_str(),
                "trials": c.trials,
                "mean_normalized_count_error": c.mean_normalized_count_error,
                "count_exact_rate": c.count_exact_rate,
                "answer_accuracy": c.answer_accuracy,
            })
        })
        .collect();
    eprintln!("dual battery done: {} trials", outcomes.len());
    print_summary(&serde_json::json!({
        "run_id": ctx.run_id,
        "model": ctx.model_id,
        "assay": "dual",
        "dir": dir,
        "trials": outcomes.len(),
        "conditions": conditions,
    }));
    Ok(())
}

fn run_agent(
    run: &ResolvedRun,
    gateway: &Gateway,
    ctx: RunContext,
    dir: &Path,
) -> Result<(), Failure> {
    let (outcomes, report) =
        run_agent_battery(gateway, &run.agent, &ctx).map_err(battery_failure)?;
    write_resolved(dir, run)?;
    write_jsonl(&dir.join("agent_outcomes.jsonl"), &outcomes)?;
    write_json(&dir.join("agent_report.json"), &report)?;

    let conditions: Vec<serde_json::Value> = report
        .conditions
        .iter()
        .map(|c| {
            serde_json::json!({
                "condition": c.condition.as_str(),
                "trials": c.trials,
                "parse_rate": c.parse_rate,
                "strict_rate": c.strict_rate,
                "exact_rate": c.exact_rate,
                "agent_rate": c.agent_rate,
                "last_full_success": c.last_full_success,
                "first_all_fail": c.first_all_fail,
            })
        })
        .collect();
    eprintln!("agent battery done: {} trials", outcomes.len());
    print_summary(&serde_json::json!({
        "run_id": ctx.run_id,
        "model": ctx.model_id,
        "assay": "agent",
        "dir": dir,
        "trials": outcomes.len(),
        "conditions": conditions,
    }));
    Ok(())
}

pub fn cmd_verify_bounds(args: &VerifyArgs) -> Result<(), Failure> {
    let file = config::load_file_config(args.config.as_deref()).map_err(Failure::config)?;
    let lad = file.ladder.unwrap_or_default();
    let d = LadderParams::default();
    let alpha = args.alpha.or(lad.jitter).unwrap_or(d.jitter);
    let trials = args.trials.or(lad.trials_per_tier).unwrap_or(d.trials_per_tier);
    let threshold = args.threshold.or(lad.stability_threshold).unwrap_or(d.stability_threshold);
    let seed = args.seed.or(lad.seed).unwrap_or(d.seed);

    let bound = GuessBound::for_alpha(alpha).map_err(|e| Failure::config(anyhow!(e)))?;
    let analytic_z = bound.z_score(trials, threshold);
    let analytic_fp = bound.false_positive_rate(trials, threshold);
    let single = single_trial_pass_rate(alpha, threshold);
    let mc = guessing_batch_stats(alpha, trials, threshold, args.batches, seed)
        .map_err(|e| Failure::config(anyhow!(e)))?;
    let accepted = validate_ladder_config(&LadderParams {
        jitter: alpha,
        trials_per_tier: trials,
        stability_threshold: threshold,
        ..LadderParams::default()
    })
    .is_ok();

    eprintln!(
        "guessing floor: alpha {alpha:.3}, {trials} trials/tier, threshold {threshold:.4} \
         ({} batches, seed {seed})",
        args.batches
    );
    eprintln!("{:<24} {:>12} {:>12}", "", "analytic", "monte carlo");
    eprintln!("{:<24} {:>12.6} {:>12.6}", "mean per-trial error", bound.expected_mape, mc.mape_mean);
    eprintln!("{:<24} {:>12.6} {:>12.6}", "error stddev", bound.mape_stddev, mc.mape_stddev);
    eprintln!("{:<24} {:>12.4} {:>12.4}", "z-score", analytic_z, mc.z_score);
    eprintln!("{:<24} {:>12.6} {:>12.6}", "batch pass rate", analytic_fp, mc.batch_pass_rate);
    eprintln!("{:<24} {:>12.6}", "single-trial pass rate", single);
    eprintln!("config verdict: {}", if accepted { "accepted" } else { "rejected (guessable)" });

    print_summary(&serde_json::json!({
        "alpha": alpha,
        "trials_per_tier": trials,
        "threshold": threshold,
        "batches": args.batches,
        "seed": seed,
        "optimal_guess_factor": bound.optimal_guess_factor,
        "analytic": {
            "mape_mean": bound.expected_mape,
            "mape_stddev": bound.mape_stddev,
            "z_score": analytic_z,
            "batch_pass_rate": analytic_fp,
            "single_trial_pass_rate": single,
        },
        "monte_carlo": {
            "mape_mean": mc.mape_mean,
            "mape_stddev": mc.mape_stddev,
            "z_score": mc.z_score,
            "batch_pass_rate": mc.batch_pass_rate,
        },
        "config_accepted": accepted,
    }));
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), Failure> {
    if let Some(scores) = &args.scores_file {
        return correlation_report(&args.out, scores);
    }
    let run_ref = args.run.as_deref().ok_or_else(|| {
        Failure::config(anyhow!(
            "give a run directory (or an id under --out), or --scores-file for cross-run \
             correlation"
        ))
    })?;
    let dir = locate_run(&args.out, run_ref);
    let loaded =
        load_run(&dir).map_err(|e| Failure::from(anyhow!("loading {}: {e}", dir.display())))?;

    let mut regenerated: Vec<&str> = Vec::new();
    if let Some(est) = &loaded.estimate {
        emit_reports(&dir, &loaded.manifest, est).map_err(|e| Failure::from(anyhow!(e)))?;
        regenerated.push(SUMMARY_FILE);
        regenerated.push(TRACE_FILE);
    }
    let mut audit = serde_json::Map::new();
    for (category, count) in audit_breakdown(&loaded.trials) {
        audit.insert(category.as_str().to_string(), count.into());
    }

    eprintln!(
        "{}: {} trials, {} tiers{}",
        loaded.manifest.context.run_id,
        loaded.trials.len(),
        loaded.tiers.len(),
        if regenerated.is_empty() { " (no estimate yet)" } else { "" }
    );
    print_summary(&serde_json::json!({
        "run_id": loaded.manifest.context.run_id,
        "model": loaded.manifest.context.model_id,
        "assay": loaded.manifest.assay,
        "dir": dir,
        "trials": loaded.trials.len(),
        "tiers": loaded.tiers.len(),
        "estimate": loaded.estimate.as_ref().map(|e| {
            serde_json::json!({
                "capacity": e.capacity,
                "capacity_display": capacity_display(e, &loaded.manifest.params),
                "stable_lower": e.stable_lower,
                "unstable_upper": e.unstable_upper,
                "below_minimum": e.below_minimum,
                "censored": e.censored,
            })
        }),
        "audit": audit,
        "regenerated": regenerated,
    }));
    Ok(())
}

fn locate_run(out_root: &Path, run_ref: &str) -> PathBuf {
    let direct = PathBuf::from(run_ref);
    if direct.is_dir() {
        direct
    } else {
        out_root.join(run_ref)
    }
}

#[derive(Debug, serde::Deserialize)]
struct ScoreRow {
    model: String,
    score: f64,
}

fn read_scores(path: &Path) -> Result<BTreeMap<String, f64>, Failure> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Failure::config(anyhow!("opening {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| Failure::config(anyhow!("reading {}: {e}", path.display())))?;
        out.insert(row.model, row.score);
    }
    Ok(out)
}

/// Joins every finished run under the output root with an external score
/// sheet by model id and reports rank and log-linear correlation.
fn correlation_report(out_root: &Path, scores_path: &Path) -> Result<(), Failure> {
    let scores = read_scores(scores_path)?;
    let entries = std::fs::read_dir(out_root)
        .map_err(|e| Failure::from(anyhow!("reading {}: {e}", out_root.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(ESTIMATE_FILE).exists())
        .collect();
    dirs.sort();

    let mut rows: Vec<(String, u64, f64)> = Vec::new();
    for dir in dirs {
        let loaded = match load_run(&dir) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("skipping {}: {e}", dir.display());
                continue;
            }
        };
        let Some(est) = loaded.estimate else { continue };
        let model = loaded.manifest.context.model_id;
        if let Some(&score) = scores.get(&model) {
            rows.push((model, capacity_value(&est), score));
        }
    }
    let pairs: Vec<(u64, f64)> = rows.iter().map(|&(_, c, s)| (c, s)).collect();
    let corr = correlate_capacity(&pairs).map_err(|e| Failure::from(anyhow!(e)))?;

    eprintln!(
        "{} runs matched scores: pearson(log) {:.4}, spearman {:.4}",
        corr.n, corr.pearson_log, corr.spearman
    );
    print_summary(&serde_json::json!({
        "runs": corr.n,
        "pearson_log": corr.pearson_log,
        "spearman": corr.spearman,
        "rows": rows
            .iter()
            .map(|(model, capacity, score)| {
                serde_json::json!({"model": model, "capacity": capacity, "score": score})
            })
            .collect::<Vec<_>>(),
    }));
    Ok(())
}
