//! Acceptance gate for the whole harness: ten end-to-end checks, each
//! printing exactly one PASS or FAIL line, with every tolerance pinned in
//! code next to the check that uses it.
//!
//! Run `cargo test -p scc-cli --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::Value;

use scc_core::assay::{LadderParams, Motif};
use scc_core::battery::agent::{
    expand_allocation, score_agent_outcomes, AgentBatteryReport, AgentCondition,
    ConditionAllocation,
};
use scc_core::battery::dual::{
    load_benchmark_tasks, run_dual_battery, smooth_curve, DualCondition, DualConfig,
    DualConditionReport, GradedDualOracle,
};
use scc_core::gateway::{FinishReason, Gateway, ModelEndpoint};
use scc_core::ladder::{run_ladder, width_limit, CountingSource, NullSink, RunContext};
use scc_core::nested::{negatives_for, render_records, token_pool, NestedSaturatingOracle, NestedSource};
use scc_core::oracle::{Attractor, AttractorOracle, OptimalGuesser, OracleConfig, RenderStyle};
use scc_core::parse::{analyze, AuditCategory};

fn report(number: u32, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("acceptance criterion {number:02} PASS: {detail}"),
        Err(detail) => {
            println!("acceptance criterion {number:02} FAIL: {detail}");
            panic!("criterion {number:02} failed: {detail}");
        }
    }
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    repo_root().join("data/fixtures").join(name)
}

/// Runs the CLI binary and parses the single JSON object it prints.
fn scc(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_scc"))
        .args(args)
        .current_dir(repo_root())
        .output()
        .map_err(|e| format!("spawning scc: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "scc {args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    serde_json::from_slice(&out.stdout)
        .map_err(|e| format!("scc {args:?} stdout was not JSON: {e}"))
}

fn f64_at<'v>(v: &'v Value, path: &[&str]) -> Result<f64, String> {
    let mut cur = v;
    for key in path {
        cur = cur.get(key).ok_or_else(|| format!("missing field {}", path.join(".")))?;
    }
    cur.as_f64().ok_or_else(|| format!("field {} is not a number", path.join(".")))
}

fn within(actual: f64, expected: f64, tol: f64, what: &str) -> Result<(), String> {
    if (actual - expected).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {actual:.6}, want {expected} within {tol}"))
    }
}

// ---------------------------------------------------------------------------
// 1. Guessing-bound statistics for the production tier shape.

#[test]
fn criterion_01_batch_guessing_bound() {
    const MEAN: f64 = 0.1010;
    const MEAN_TOL: f64 = 0.0010;
    const STDDEV: f64 = 0.0586;
    const STDDEV_TOL: f64 = 0.0020;
    const Z: f64 = -3.48;
    const Z_TOL: f64 = 0.03;
    const PASS_RATE_CEILING: f64 = 0.001;
    const TIME_BUDGET: Duration = Duration::from_secs(60);

    report(1, (|| {
        let start = Instant::now();
        let v = scc(&[
            "verify-bounds",
            "--alpha", "0.2",
            "--trials", "16",
            "--threshold", "0.05",
            "--batches", "1000000",
            "--seed", "7",
        ])?;
        let elapsed = start.elapsed();

        let mean = f64_at(&v, &["monte_carlo", "mape_mean"])?;
        let stddev = f64_at(&v, &["monte_carlo", "mape_stddev"])?;
        let z = f64_at(&v, &["monte_carlo", "z_score"])?;
        let pass_rate = f64_at(&v, &["monte_carlo", "batch_pass_rate"])?;
        within(mean, MEAN, MEAN_TOL, "per-trial error mean")?;
        within(stddev, STDDEV, STDDEV_TOL, "per-trial error stddev")?;
        within(z, Z, Z_TOL, "batch z-score")?;
        if pass_rate > PASS_RATE_CEILING {
            return Err(format!("batch pass rate {pass_rate} above {PASS_RATE_CEILING}"));
        }
        // The closed-form route must land in the same window as the
        // simulation it validates.
        within(f64_at(&v, &["analytic", "mape_mean"])?, MEAN, MEAN_TOL, "analytic mean")?;
        within(f64_at(&v, &["analytic", "z_score"])?, Z, Z_TOL, "analytic z-score")?;
        if elapsed > TIME_BUDGET {
            return Err(format!("took {elapsed:?}, budget {TIME_BUDGET:?}"));
        }
        Ok(format!(
            "1e6 batches: mean {mean:.4}, stddev {stddev:.4}, z {z:.4}, \
             pass rate {pass_rate:.5} <= {PASS_RATE_CEILING}, in {elapsed:.2?}"
        ))
    })());
}

// ---------------------------------------------------------------------------
// 2. The single-trial tier shape leaks to blind guessing.

#[test]
fn criterion_02_single_trial_leak() {
    const RATE: f64 = 0.246;
    const RATE_TOL: f64 = 0.005;

    report(2, (|| {
        let v = scc(&[
            "verify-bounds",
            "--alpha", "0.2",
            "--trials", "1",
            "--threshold", "0.05",
            "--batches", "1000000",
            "--seed", "11",
        ])?;
        let analytic = f64_at(&v, &["analytic", "single_trial_pass_rate"])?;
        let empirical = f64_at(&v, &["monte_carlo", "batch_pass_rate"])?;
        within(analytic, RATE, RATE_TOL, "closed-form single-trial pass rate")?;
        within(empirical, RATE, RATE_TOL, "simulated single-trial pass rate")?;
        // A tier shape this leaky must be refused by the config gate.
        if v["config_accepted"].as_bool() != Some(false) {
            return Err("config gate accepted a single-trial tier".into());
        }
        Ok(format!(
            "guesser passes a 1-trial tier {empirical:.4} of the time \
             (closed form {analytic:.4}); config gate rejects it"
        ))
    })());
}

// ---------------------------------------------------------------------------
// 3. The ladder recovers bounded-counter capacities across the search range.

#[test]
fn criterion_03_ladder_recovery() {
    const ORACLES: u64 = 100;
    const MIN_HITS: u32 = 95;
    const CAPACITY_RANGE: (f64, f64) = (40.0, 16_000.0);
    const TIME_BUDGET: Duration = Duration::from_secs(120);

    report(3, (|| {
        let start = Instant::now();
        let mut cap_rng = ChaCha8Rng::seed_from_u64(20_260_818);
        let (lo_ln, hi_ln) = (CAPACITY_RANGE.0.ln(), CAPACITY_RANGE.1.ln());
        let source = CountingSource { motif: Motif::baseline() };
        let mut hits = 0u32;
        let mut misses = Vec::new();
        for i in 0..ORACLES {
            let capacity = cap_rng.random_range(lo_ln..hi_ln).exp().round() as u64;
            // Collapse lands far from every plausible count, so any trial
            // drawn past the capacity reveals itself.
            let config = OracleConfig {
                true_capacity: capacity,
                drift_band: 0,
                attractors: vec![
                    Attractor { value: 17, weight: 0.5 },
                    Attractor { value: 9_999_999, weight: 0.5 },
                ],
                collapse_style: RenderStyle::Plain,
            };
            let oracle = AttractorOracle::new(config, 1_000 + i)
                .map_err(|e| format!("oracle {i}: {e}"))?;
            let gateway =
                Gateway::new(ModelEndpoint::synthetic("bounded-counter"), Some(Arc::new(oracle)))
                    .map_err(|e| format!("gateway {i}: {e}"))?;
            let params = LadderParams { seed: 3_000 + i, ..LadderParams::default() };
            let ctx = RunContext::deterministic("recovery", "bounded-counter", params.seed);
            let est = run_ladder(&gateway, &source, &params, &ctx, &mut NullSink, &[])
                .map_err(|e| format!("ladder {i}: {e}"))?;
            let low = est.stable_lower.unwrap_or(0);
            // Targets stretch to 1.2x the tier center, so a tier can fail
            // on draws above its center; the sound window for the true
            // capacity runs from the stable floor to 1.2x the first
            // unstable center.
            let window_hi = (1.2 * est.unstable_upper as f64).ceil() as u64;
            let window_ok = low <= capacity && capacity <= window_hi;
            let width_ok = est.unstable_upper - low
                <= width_limit(low, params.refine_step_fraction);
            if window_ok && width_ok && !est.below_minimum && !est.censored {
                hits += 1;
            } else {
                misses.push(format!(
                    "oracle {i}: capacity {capacity}, bracket [{low}, {}]",
                    est.unstable_upper
                ));
            }
        }
        let elapsed = start.elapsed();
        if hits < MIN_HITS {
            return Err(format!("{hits}/{ORACLES} recovered; misses: {}", misses.join("; ")));
        }
        if elapsed > TIME_BUDGET {
            return Err(format!("took {elapsed:?}, budget {TIME_BUDGET:?}"));
        }
        Ok(format!(
            "{hits}/{ORACLES} capacities in [40, 16000] bracketed at final \
             width <= max(1, 0.1 * floor), in {elapsed:.2?}"
        ))
    })());
}

// ---------------------------------------------------------------------------
// 4. The error-minimizing blind guesser is rejected at the first tier.

#[test]
fn criterion_04_adversary_rejection() {
    const RUNS: u64 = 1000;
    const MIN_REJECTED: u32 = 999;

    report(4, (|| {
        let oracle = OptimalGuesser::new(0.2).map_err(|e| e.to_string())?;
        let gateway =
            Gateway::new(ModelEndpoint::synthetic("optimal-guesser"), Some(Arc::new(oracle)))
                .map_err(|e| e.to_string())?;
        let source = CountingSource { motif: Motif::baseline() };
        let mut rejected = 0u32;
        for seed in 0..RUNS {
            let params = LadderParams { seed, ..LadderParams::default() };
            let ctx = RunContext::deterministic("guesser", "optimal-guesser", seed);
            let est = run_ladder(&gateway, &source, &params, &ctx, &mut NullSink, &[])
                .map_err(|e| format!("seed {seed}: {e}"))?;
            if est.below_minimum && est.capacity == 0 {
                rejected += 1;
            }
        }
        if rejected < MIN_REJECTED {
            return Err(format!("only {rejected}/{RUNS} runs ended below minimum"));
        }
        Ok(format!("{rejected}/{RUNS} guesser ladders rejected below the first tier"))
    })());
}

// ---------------------------------------------------------------------------
// 5. Below-minimum semantics for a capacity-26 counter.

#[test]
fn criterion_05_below_minimum_semantics() {
    const EXPECTED_FIRST_ERROR: u64 = 27;

    report(5, (|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = dir.path().to_str().ok_or("tempdir path not UTF-8")?.to_owned();

        let sweep = scc(&[
            "simulate",
            "--oracle", "attractor:26",
            "--assay", "sweep",
            "--sweep-from", "1",
            "--sweep-to", "40",
            "--seed", "5",
            "--label", "sweep26",
            "--out", &out,
        ])?;
        let first_error = sweep["first_error"].as_u64();
        if first_error != Some(EXPECTED_FIRST_ERROR) {
            return Err(format!("sweep first error {first_error:?}, want {EXPECTED_FIRST_ERROR}"));
        }
        if sweep["checked"].as_u64() != Some(40) {
            return Err(format!("sweep checked {:?} of 40 targets", sweep["checked"]));
        }

        let ladder = scc(&[
            "simulate",
            "--oracle", "attractor:26",
            "--assay", "count",
            "--seed", "5",
            "--label", "ladder26",
            "--out", &out,
        ])?;
        if ladder["below_minimum"].as_bool() != Some(true) {
            return Err("ladder did not flag below_minimum".into());
        }
        if ladder["capacity"].as_u64() != Some(0) {
            return Err(format!("aggregate capacity {:?}, want 0", ladder["capacity"]));
        }
        if ladder["capacity_display"].as_str() != Some("<32") {
            return Err(format!("display {:?}, want \"<32\"", ladder["capacity_display"]));
        }
        Ok(format!(
            "capacity-26 counter: first sweep error at {EXPECTED_FIRST_ERROR}, \
             ladder reports \"<32\" and aggregates as 0"
        ))
    })());
}

// ---------------------------------------------------------------------------
// 6. Parser and audit concordance over the recorded reply corpus.

#[derive(Debug, Deserialize)]
struct AuditCase {
    label: String,
    text: String,
    finish_reason: FinishReason,
    expected_parsed: Option<i64>,
    expected_category: AuditCategory,
}

#[test]
fn criterion_06_audit_concordance() {
    report(6, (|| {
        let path = fixture("parse_audit_cases.json");
        let raw = std::fs::read_to_string(&path)
            .map_err(|e| format!("reading {}: {e}", path.display()))?;
        let cases: Vec<AuditCase> =
            serde_json::from_str(&raw).map_err(|e| format!("fixture parse: {e}"))?;
        if cases.len() < 14 {
            return Err(format!("corpus shrank to {} cases", cases.len()));
        }
        let motif = Motif::baseline();
        let mut agreed = 0usize;
        let mut disagreements = Vec::new();
        for case in &cases {
            let out = analyze(&case.text, case.finish_reason, &motif);
            if out.parsed == case.expected_parsed && out.audit_category == case.expected_category
            {
                agreed += 1;
            } else {
                disagreements.push(format!(
                    "{}: parsed {:?} want {:?}, category {:?} want {:?}",
                    case.label, out.parsed, case.expected_parsed, out.audit_category,
                    case.expected_category
                ));
            }
        }
        if !disagreements.is_empty() {
            return Err(disagreements.join("; "));
        }

        // Anchor values the corpus must keep pinning.
        let anchor = |label: &str| {
            cases
                .iter()
                .find(|c| c.label == label)
                .ok_or_else(|| format!("corpus lost its {label} case"))
        };
        let steps = anchor("steps_brief")?;
        let out = analyze(&steps.text, steps.finish_reason, &motif);
        if out.parsed != Some(25) || out.audit_category != AuditCategory::StepByStep {
            return Err(format!("step-by-step anchor: {:?} {:?}", out.parsed, out.audit_category));
        }
        let stray = anchor("stray_currency")?;
        let out = analyze(&stray.text, stray.finish_reason, &motif);
        if out.parsed != Some(500) || out.audit_category != AuditCategory::StrayPunctuation {
            return Err(format!("\"500$\" anchor: {:?} {:?}", out.parsed, out.audit_category));
        }
        let blank = anchor("blank_spaces")?;
        let out = analyze(&blank.text, blank.finish_reason, &motif);
        if out.parsed.is_some() || out.audit_category != AuditCategory::BlankWhitespace {
            return Err(format!("blank anchor: {:?} {:?}", out.parsed, out.audit_category));
        }
        let echo = anchor("echo_sequence")?;
        let out = analyze(&echo.text, echo.finish_reason, &motif);
        if out.audit_category != AuditCategory::PromptEcho {
            return Err(format!("echo anchor: {:?}", out.audit_category));
        }
        Ok(format!("{agreed}/{} recorded replies parsed and categorized as recorded", cases.len()))
    })());
}

// ---------------------------------------------------------------------------
// 7. Nested key-path assay integrity and capacity recovery.

#[test]
fn criterion_07_nested_assay_integrity() {
    const PROMPTS: u64 = 10_000;
    const TARGET_RANGE: (u64, u64) = (1, 2000);
    const NESTED_CAPACITY: u64 = 416;
    // The tier centered exactly at the oracle's capacity sits on the
    // stability threshold, so which side it lands on is a draw; this seed
    // recovers the canonical [416, 448] bracket.
    const NESTED_SEED: u64 = 3;
    const EXPECTED_BRACKET: (u64, u64) = (416, 448);

    report(7, (|| {
        let pool = token_pool(7);
        let mut master = ChaCha8Rng::seed_from_u64(41_000);
        for i in 0..PROMPTS {
            let target = master.random_range(TARGET_RANGE.0..=TARGET_RANGE.1);
            let mut prompt_rng = ChaCha8Rng::seed_from_u64(50_000 + i);
            let text = render_records(&pool, target, &mut prompt_rng);
            let counted = scc_core::nested::reference_match_count(&text);
            if counted != target {
                return Err(format!(
                    "prompt {i}: validator counted {counted}, generator wrote {target}"
                ));
            }
            // Independent recomputation of the distractor count.
            let expected_negatives = ((target as f64 / 2.0).ceil() as u64 + 2).max(2);
            if negatives_for(target) != expected_negatives {
                return Err(format!(
                    "target {target}: negatives {} want {expected_negatives}",
                    negatives_for(target)
                ));
            }
        }

        let oracle = NestedSaturatingOracle { true_capacity: NESTED_CAPACITY };
        let gateway =
            Gateway::new(ModelEndpoint::synthetic("nested-counter"), Some(Arc::new(oracle)))
                .map_err(|e| e.to_string())?;
        let source = NestedSource::new(NESTED_SEED);
        let params = LadderParams { seed: NESTED_SEED, ..LadderParams::default() };
        let ctx = RunContext::deterministic("nested", "nested-counter", params.seed);
        let est = run_ladder(&gateway, &source, &params, &ctx, &mut NullSink, &[])
            .map_err(|e| e.to_string())?;
        let bracket = (est.stable_lower.unwrap_or(0), est.unstable_upper);
        if bracket != EXPECTED_BRACKET {
            return Err(format!("bracket {bracket:?}, want {EXPECTED_BRACKET:?}"));
        }
        Ok(format!(
            "{PROMPTS} prompts validated exactly; capacity-{NESTED_CAPACITY} \
             oracle recovered as [{}, {}]",
            bracket.0, bracket.1
        ))
    })());
}

// ---------------------------------------------------------------------------
// 8. Dual-task interference ordering and curve smoothing.

#[test]
fn criterion_08_dual_task_scoring() {
    const CAPS: (u64, u64, u64) = (200, 90, 25);
    const SMOOTH_TOL: f64 = 1e-12;

    report(8, (|| {
        let oracle = GradedDualOracle {
            plain_capacity: CAPS.0,
            control_capacity: CAPS.1,
            benchmark_capacity: CAPS.2,
        };
        let gateway = Gateway::new(ModelEndpoint::synthetic("graded-dual"), Some(Arc::new(oracle)))
            .map_err(|e| e.to_string())?;
        let tasks = load_benchmark_tasks(&fixture("benchmark_tasks.jsonl"))
            .map_err(|e| e.to_string())?;
        let config = DualConfig::default();
        let ctx = RunContext::deterministic("dual", "graded-dual", config.seed);
        let (_, dual_report) =
            run_dual_battery(&gateway, &config, &tasks, &ctx).map_err(|e| e.to_string())?;

        let get = |c: DualCondition| -> Result<&DualConditionReport, String> {
            dual_report.condition(c).ok_or_else(|| format!("missing condition {c:?}"))
        };
        let plain = get(DualCondition::PlainCount)?;
        let filler = get(DualCondition::IrrelevantFiller)?;
        let secondary = get(DualCondition::SecondaryCount)?;
        let benchmark = get(DualCondition::Benchmark)?;

        if plain.mean_normalized_count_error > 1e-12 {
            return Err(format!(
                "unloaded counting should be exact, error {}",
                plain.mean_normalized_count_error
            ));
        }
        let floor = |r: &DualConditionReport| {
            r.curve
                .iter()
                .flat_map(|p| [p.normalized_error, p.smoothed_error])
                .fold(f64::INFINITY, f64::min)
        };
        let ceiling = |r: &DualConditionReport| {
            r.curve
                .iter()
                .flat_map(|p| [p.normalized_error, p.smoothed_error])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let bench_floor = floor(benchmark);
        for (name, control) in [("filler", filler), ("secondary-count", secondary)] {
            let top = ceiling(control);
            if bench_floor <= top {
                return Err(format!(
                    "benchmark floor {bench_floor:.4} does not dominate {name} ceiling {top:.4}"
                ));
            }
        }

        // The reported smoothing must agree with a brute-force recount of
        // the truncated five-point window average.
        for cond in [plain, filler, secondary, benchmark] {
            let raw: Vec<f64> = cond.curve.iter().map(|p| p.normalized_error).collect();
            let n = raw.len();
            let brute: Vec<f64> = (0..n)
                .map(|i| {
                    let lo = i.saturating_sub(2);
                    let hi = (i + 2).min(n - 1);
                    raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
                })
                .collect();
            let reported: Vec<f64> = cond.curve.iter().map(|p| p.smoothed_error).collect();
            let library = smooth_curve(&raw);
            for i in 0..n {
                if (reported[i] - brute[i]).abs() > SMOOTH_TOL
                    || (library[i] - brute[i]).abs() > SMOOTH_TOL
                {
                    return Err(format!(
                        "{:?} point {i}: smoothed {} vs brute force {}",
                        cond.condition, reported[i], brute[i]
                    ));
                }
            }
        }
        Ok(format!(
            "benchmark error floor {bench_floor:.4} dominates both controls; \
             smoothing matches the brute-force 5-point average"
        ))
    })());
}

// ---------------------------------------------------------------------------
// 9. Agent-battery scoring reproduces the recorded rates.

#[test]
fn criterion_09_agent_scoring() {
    const TOL: f64 = 5e-4;

    report(9, (|| {
        let path = fixture("agent_outcomes.json");
        let raw = std::fs::read_to_string(&path)
            .map_err(|e| format!("reading {}: {e}", path.display()))?;
        let allocations: Vec<ConditionAllocation> =
            serde_json::from_str(&raw).map_err(|e| format!("fixture parse: {e}"))?;

        let score = |model: &str| -> Result<AgentBatteryReport, String> {
            let mut outcomes = Vec::new();
            for alloc in allocations.iter().filter(|a| a.model == model) {
                outcomes.extend(expand_allocation(alloc).map_err(|e| e.to_string())?);
            }
            if outcomes.is_empty() {
                return Err(format!("no fixture rows for {model}"));
            }
            Ok(score_agent_outcomes(&outcomes))
        };
        let model_a = score("model-a")?;
        let model_b = score("model-b")?;
        let rate = |r: &AgentBatteryReport, c: AgentCondition| -> Result<(f64, f64, Option<f64>), String> {
            let cond = r.condition(c).ok_or_else(|| format!("missing {c:?}"))?;
            Ok((cond.parse_rate, cond.exact_rate, cond.agent_rate))
        };
        let checks: [(&str, f64, f64); 9] = [
            ("a count_insert exact", rate(&model_a, AgentCondition::CountInsert)?.1, 0.158),
            ("a copy_externalize exact", rate(&model_a, AgentCondition::CopyExternalize)?.1, 0.150),
            ("a copy_then_agent exact", rate(&model_a, AgentCondition::CopyThenAgent)?.1, 0.167),
            ("b count_insert exact", rate(&model_b, AgentCondition::CountInsert)?.1, 0.350),
            ("b count_insert agent", rate(&model_b, AgentCondition::CountInsert)?.2.unwrap_or(-1.0), 0.975),
            ("b copy_externalize exact", rate(&model_b, AgentCondition::CopyExternalize)?.1, 0.250),
            ("b copy_then_agent parse", rate(&model_b, AgentCondition::CopyThenAgent)?.0, 0.142),
            ("b copy_then_agent agent", rate(&model_b, AgentCondition::CopyThenAgent)?.2.unwrap_or(-1.0), 0.125),
            ("b count_insert strict", model_b.condition(AgentCondition::CountInsert).unwrap().strict_rate, 0.000),
        ];
        for (what, actual, expected) in checks {
            within(actual, expected, TOL, what)?;
        }
        Ok("9 recorded rates reproduced to 3 decimals across both models".into())
    })());
}

// ---------------------------------------------------------------------------
// 10. Bytewise determinism across gateway parallelism.

#[test]
fn criterion_10_determinism() {
    report(10, (|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut run_dirs = Vec::new();
        for (slot, parallelism) in [("p1", "1"), ("p15", "15")] {
            let out_root = dir.path().join(slot);
            let out = out_root.to_str().ok_or("tempdir path not UTF-8")?.to_owned();
            let v = scc(&[
                "simulate",
                "--oracle", "saturating:500",
                "--assay", "count",
                "--seed", "99",
                "--max-length", "2000",
                "--label", "det",
                "--out", &out,
                "--parallelism", parallelism,
            ])?;
            let run_dir = v["dir"].as_str().ok_or("run dir missing from output")?;
            run_dirs.push(PathBuf::from(run_dir));
        }
        let read = |dir: &Path, name: &str| -> Result<Vec<u8>, String> {
            std::fs::read(dir.join(name))
                .map_err(|e| format!("reading {}/{name}: {e}", dir.display()))
        };
        let mut compared = Vec::new();
        for name in ["trials.jsonl", "trace.svg", "tiers.jsonl", "estimate.json"] {
            let a = read(&run_dirs[0], name)?;
            let b = read(&run_dirs[1], name)?;
            if a != b {
                return Err(format!("{name} differs between parallelism 1 and 15"));
            }
            compared.push(format!("{name} ({} bytes)", a.len()));
        }
        Ok(format!(
            "parallelism 1 and 15 byte-identical: {}",
            compared.join(", ")
        ))
    })());
}
