//! Expands the recorded agent-battery count tables into trial outcomes and
//! pins the aggregate rates and degradation thresholds they reproduce.

use std::path::PathBuf;

use scc_core::battery::agent::{
    expand_allocation, score_agent_outcomes, AgentBatteryReport, AgentCondition,
    ConditionAllocation,
};

fn load_allocations() -> Vec<ConditionAllocation> {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fixtures/agent_outcomes.json");
    let raw = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&raw).expect("agent outcome fixture must be valid JSON")
}

fn score_model(model: &str) -> AgentBatteryReport {
    let mut outcomes = Vec::new();
    for alloc in load_allocations().iter().filter(|a| a.model == model) {
        outcomes.extend(expand_allocation(alloc).expect("fixture rows must be self-consistent"));
    }
    assert!(!outcomes.is_empty(), "no fixture rows for {model}");
    score_agent_outcomes(&outcomes)
}

fn rate(report: &AgentBatteryReport, c: AgentCondition) -> &scc_core::battery::agent::AgentConditionReport {
    report.condition(c).unwrap_or_else(|| panic!("missing condition {c:?}"))
}

const TOL: f64 = 5e-4;

fn close(actual: f64, expected: f64, what: &str) {
    assert!(
        (actual - expected).abs() < TOL,
        "{what}: got {actual:.6}, want {expected:.3}"
    );
}

#[test]
fn every_count_table_expands_cleanly() {
    let allocations = load_allocations();
    assert_eq!(allocations.len(), 8, "two models, four conditions each");
    for alloc in &allocations {
        let outcomes = expand_allocation(alloc).unwrap_or_else(|e| {
            panic!("{} {:?}: {e}", alloc.model, alloc.condition)
        });
        let expected: u32 = alloc.rows.iter().map(|r| r.trials).sum();
        assert_eq!(outcomes.len() as u32, expected);
    }
}

#[test]
fn model_a_rates_match_the_recorded_battery() {
    let report = score_model("model-a");

    let base = rate(&report, AgentCondition::Baseline);
    close(base.parse_rate, 1.0, "baseline parse");
    close(base.strict_rate, 1.0, "baseline strict");
    close(base.exact_rate, 1.0, "baseline exact");
    close(base.agent_rate.unwrap(), 1.0, "baseline agent");

    let count = rate(&report, AgentCondition::CountInsert);
    assert_eq!(count.trials, 120);
    close(count.exact_rate, 0.158, "count_insert exact");
    close(count.agent_rate.unwrap(), 1.0, "count_insert agent");
    assert_eq!(count.last_full_success, Some(109));
    assert_eq!(count.first_all_fail, Some(245));

    let copy = rate(&report, AgentCondition::CopyExternalize);
    assert_eq!(copy.trials, 20);
    close(copy.exact_rate, 0.150, "copy_externalize exact");
    assert!(copy.agent_rate.is_none(), "copy-only trials carry no procedure");

    let both = rate(&report, AgentCondition::CopyThenAgent);
    assert_eq!(both.trials, 120);
    close(both.exact_rate, 0.167, "copy_then_agent exact");
    close(both.agent_rate.unwrap(), 1.0, "copy_then_agent agent");
    assert_eq!(both.last_full_success, Some(159));
    assert_eq!(both.first_all_fail, Some(245));
}

#[test]
fn model_b_rates_match_the_recorded_battery() {
    let report = score_model("model-b");

    let base = rate(&report, AgentCondition::Baseline);
    close(base.parse_rate, 1.0, "baseline parse");
    close(base.strict_rate, 0.0, "baseline strict");
    close(base.exact_rate, 1.0, "baseline exact");

    let count = rate(&report, AgentCondition::CountInsert);
    assert_eq!(count.trials, 120);
    close(count.exact_rate, 0.350, "count_insert exact");
    close(count.agent_rate.unwrap(), 0.975, "count_insert agent");
    close(count.strict_rate, 0.0, "count_insert strict");
    assert_eq!(count.last_full_success, Some(354));
    assert_eq!(count.first_all_fail, Some(391));

    let copy = rate(&report, AgentCondition::CopyExternalize);
    close(copy.exact_rate, 0.250, "copy_externalize exact");

    let both = rate(&report, AgentCondition::CopyThenAgent);
    assert_eq!(both.trials, 120);
    close(both.parse_rate, 0.142, "copy_then_agent parse");
    close(both.exact_rate, 0.142, "copy_then_agent exact");
    close(both.agent_rate.unwrap(), 0.125, "copy_then_agent agent");
    assert_eq!(both.last_full_success, Some(91));
    assert_eq!(both.first_all_fail, Some(196));

    // The collapse is not monotone: one trial at level 251 still lands the
    // copy and the procedure after every trial at 196 through 245 failed.
    let recovery = both
        .per_level
        .iter()
        .find(|l| l.level == 251)
        .expect("level 251 missing from copy_then_agent");
    assert_eq!(recovery.exact, 1);
}

#[test]
fn inconsistent_count_tables_are_rejected() {
    let mut alloc = load_allocations().remove(1);
    assert_eq!(alloc.condition, AgentCondition::CountInsert);
    alloc.rows[0].exact = alloc.rows[0].parsed + 1;
    let err = expand_allocation(&alloc).unwrap_err();
    assert!(err.to_string().contains("exact exceeds parsed"), "{err}");
}
