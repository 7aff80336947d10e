//! Deterministic discrete-event simulation of a Hanguard deployment:
//! phones, monitors, one router-resident controller, and scripted
//! traffic. Same scenario + seed ⇒ byte-identical results.

pub mod builtin;
pub mod link;
pub mod metrics;
pub mod scenario;
mod world;

pub use world::{
    Counters, FlowScript, FlowSummary, Injection, MonitorPlan, MonitorSummary, PhonePlan,
    SimError, TrialPlan, TrialResult, run_trial,
};

use metrics::MetricsReport;
use scenario::{Scenario, ScenarioError};

/// Everything one scenario run produces: the per-trial metric rows, the
/// assessment failures (empty = expectations hold), and — when traces
/// are enabled — each trial's controller event log.
#[derive(Debug)]
pub struct ScenarioOutcome {
    pub report: MetricsReport,
    pub failures: Vec<String>,
    pub traces: Vec<crate::eventlog::EventLog>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every trial of a scenario, extracts its metrics, and assesses
/// them against the scenario's expectations.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutcome, SimError> {
    if builtin::builtin(&scenario.name).is_none() {
        return Err(ScenarioError::Unknown(scenario.name.clone()).into());
    }
    let policy = scenario.topology.build_policy()?;
    let mut report = MetricsReport::new(&scenario.name);
    let mut traces = Vec::new();
    for trial in 0..builtin::trial_count(scenario) {
        let plan = builtin::build_plan(scenario, &policy, trial);
        let result = run_trial(&policy, &plan, &scenario.params, scenario.seed, trial)?;
        builtin::extract(scenario, trial, &result, &mut report);
        if scenario.params.trace {
            traces.push(result.controller_log.clone());
        }
    }
    let failures = builtin::assess(scenario, &report);
    Ok(ScenarioOutcome { report, failures, traces })
}
