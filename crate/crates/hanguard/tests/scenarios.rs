//! Every builtin scenario must pass its own assessment, and the
//! deterministic engine must reproduce results bit-for-bit.

use hanguard::sim::scenario::DEFAULT_SEED;
use hanguard::sim::{builtin, run_scenario};

fn run(name: &str) -> hanguard::sim::ScenarioOutcome {
    let scenario = builtin::builtin(name).expect("builtin scenario");
    run_scenario(&scenario).expect("scenario runs")
}

#[test]
fn all_builtin_scenarios_pass_their_assessments() {
    for name in ["S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8", "S9", "S10"] {
        let outcome = run(name);
        assert!(
            outcome.passed(),
            "{name} failed:\n{}",
            outcome.failures.join("\n")
        );
    }
}

#[test]
fn vanilla_mode_passes_where_defined() {
    // S1 branches on mode; S5/S6/S8/S10 assess identically either way.
    for name in ["S1", "S5", "S6", "S8", "S10"] {
        let mut scenario = builtin::builtin(name).expect("builtin scenario");
        scenario.params.vanilla = true;
        let outcome = run_scenario(&scenario).expect("scenario runs");
        assert!(
            outcome.passed(),
            "{name} (vanilla) failed:\n{}",
            outcome.failures.join("\n")
        );
    }
}

#[test]
fn same_seed_reproduces_the_exact_report() {
    for name in ["S1", "S5", "S10"] {
        let scenario = builtin::builtin(name).expect("builtin scenario");
        let a = run_scenario(&scenario).expect("first run");
        let b = run_scenario(&scenario).expect("second run");
        assert_eq!(a.report, b.report, "{name} not reproducible");
        assert_eq!(a.report.to_csv(), b.report.to_csv());
    }
}

#[test]
fn different_seeds_change_sampled_latencies() {
    let mut scenario = builtin::builtin("S5").expect("builtin scenario");
    scenario.trials = 2;
    scenario.params.poll_ms = Some(10);
    let a = run_scenario(&scenario).expect("seeded run");
    scenario.seed = DEFAULT_SEED + 1;
    let b = run_scenario(&scenario).expect("reseeded run");
    assert_ne!(
        a.report.ints("decision_latency_us"),
        b.report.ints("decision_latency_us")
    );
}

#[test]
fn unknown_scenario_name_is_an_error() {
    let mut scenario = builtin::builtin("S1").expect("builtin scenario");
    scenario.name = "S99".to_string();
    assert!(run_scenario(&scenario).is_err());
}
