//! `hanguard` — policy administration, scenario execution, socket-table
//! decoding, and metric summaries. Exit codes: 0 success, 1
//! validation/assertion failure, 2 usage error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hanguard::eventlog::EventLog;
use hanguard::mac::Mac;
use hanguard::policy::{parse_policy, parse_update, render_policy, Policy};
use hanguard::procfs;
use hanguard::sim::scenario::{parse_scenario_file, parse_topology, Scenario};
use hanguard::sim::{builtin, run_scenario};

#[derive(Parser)]
#[command(name = "hanguard", version, about = "Flow-level access control for home networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Naive,
    Smarter,
}

#[derive(Subcommand)]
enum Command {
    /// Build a fresh policy from a topology file and write it out
    PolicyInit {
        /// Topology description (phone/device/app/bind records)
        topology: PathBuf,
        /// Where the rendered policy goes
        #[arg(long)]
        policy: PathBuf,
    },
    /// Print a policy file in canonical text form
    PolicyShow {
        #[arg(long)]
        policy: PathBuf,
    },
    /// Grant an app a category on a device
    PolicyBind {
        app: String,
        device: String,
        category: String,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Apply a policy delta file as a named actor
    PolicyUpdate {
        /// Delta file (add-domain/extend-domain/… records)
        delta: PathBuf,
        /// MAC of the phone submitting the update
        #[arg(long)]
        actor: String,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Run a builtin scenario or every section of a scenario file
    Run {
        /// Builtin name (S1..S10) or a scenario file path
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics (and trace) CSVs
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Trials per parameter configuration
        #[arg(long)]
        trials: Option<u32>,
        /// Pin the Monitor polling interval
        #[arg(long)]
        poll_ms: Option<u64>,
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Disable enforcement (baseline router)
        #[arg(long)]
        vanilla: bool,
        /// Override any simulation parameter
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Summarize metrics CSVs per scenario and metric
    Report {
        files: Vec<PathBuf>,
    },
    /// Decode a socket-table text file into (local, remote, state, uid) rows
    ProcfsParse {
        file: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_policy(path: &Path) -> Result<Policy, String> {
    parse_policy(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse_mac(text: &str) -> Result<Mac, String> {
    text.parse().map_err(|_| format!("invalid MAC address {text:?}"))
}

fn run(command: Command) -> Result<ExitCode, String> {
    match command {
        Command::PolicyInit { topology, policy } => {
            let parsed = parse_topology(&read(&topology)?).map_err(|e| e.to_string())?;
            let built = parsed.build_policy().map_err(|e| e.to_string())?;
            write(&policy, &render_policy(&built))?;
            println!(
                "policy v{} written to {} ({} phones, {} devices, {} apps)",
                built.version,
                policy.display(),
                built.phones.len(),
                built.devices.len(),
                built.apps.len(),
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::PolicyShow { policy } => {
            print!("{}", render_policy(&load_policy(&policy)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::PolicyBind { app, device, category, policy } => {
            let current = load_policy(&policy)?;
            let device = parse_mac(&device)?;
            let next = current
                .bind_app_device(&app, device, &category)
                .map_err(|e| e.to_string())?;
            write(&policy, &render_policy(&next))?;
            println!("bound {app} -> {device} [{category}], policy now v{}", next.version);
            Ok(ExitCode::SUCCESS)
        }
        Command::PolicyUpdate { delta, actor, policy } => {
            let current = load_policy(&policy)?;
            let actor = parse_mac(&actor)?;
            let update = parse_update(&read(&delta)?).map_err(|e| e.to_string())?;
            let mut log = EventLog::default();
            match current.apply_update(&update, actor) {
                Ok(next) => {
                    write(&policy, &render_policy(&next))?;
                    println!("update applied, policy now v{}", next.version);
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    log.notify_admin(0, "update_rejected", format!("actor={actor} {e}"));
                    eprint!("{}", log.to_csv());
                    eprintln!("error: {e}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Run { scenario, seed, out, trials, poll_ms, strategy, vanilla, set } => {
            let mut scenarios = resolve_scenarios(&scenario)?;
            for s in &mut scenarios {
                for kv in &set {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| format!("--set expects key=value, got {kv:?}"))?;
                    s.params.set(k, v).map_err(|e| e.to_string())?;
                }
                if let Some(seed) = seed {
                    s.seed = seed;
                }
                if let Some(trials) = trials {
                    s.trials = trials;
                }
                if let Some(ms) = poll_ms {
                    s.params.poll_ms = Some(ms);
                }
                match strategy {
                    Some(Strategy::Naive) => {
                        s.params.strategy = hanguard::monitor::PollStrategy::Naive
                    }
                    Some(Strategy::Smarter) => {
                        s.params.strategy = hanguard::monitor::PollStrategy::Smarter
                    }
                    None => {}
                }
                if vanilla {
                    s.params.vanilla = true;
                }
            }
            run_and_report(&scenarios, &out)
        }
        Command::Report { files } => {
            if files.is_empty() {
                return Err("report needs at least one metrics CSV".into());
            }
            let mut texts = Vec::new();
            for file in &files {
                let text = read(file)?;
                // Trace CSVs land next to the metrics files; a glob may
                // pick them up, so they are skipped rather than fatal.
                if text.lines().next() == Some("time_us,entity,event,detail") {
                    eprintln!("skipping trace file {}", file.display());
                    continue;
                }
                texts.push(text);
            }
            if texts.is_empty() {
                return Err("no metrics CSVs among the given files".into());
            }
            print!("{}", summarize(&texts)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::ProcfsParse { file } => {
            let text = read(&file)?;
            let mut rows = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() || procfs::is_header(line) {
                    continue;
                }
                let parsed = procfs::parse_line(line)
                    .map_err(|e| format!("{}:{}: {e}", file.display(), idx + 1))?;
                rows.push(parsed);
            }
            println!("{:<26} {:<26} {:<12} {}", "local", "remote", "state", "uid");
            for row in rows {
                println!(
                    "{:<26} {:<26} {:<12} {}",
                    row.local.to_string(),
                    row.remote.to_string(),
                    format!("{:?}", row.state),
                    row.uid
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// A builtin name runs as-is; anything else is read as a scenario file,
/// which may hold several sections.
fn resolve_scenarios(arg: &str) -> Result<Vec<Scenario>, String> {
    if let Some(scenario) = builtin::builtin(arg) {
        return Ok(vec![scenario]);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(format!(
            "{arg:?} is neither a builtin scenario (S1..S10) nor a scenario file"
        ));
    }
    parse_scenario_file(&read(path)?).map_err(|e| e.to_string())
}

fn run_and_report(scenarios: &[Scenario], out: &Path) -> Result<ExitCode, String> {
    fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let mut used_names: Vec<String> = Vec::new();
    let mut first_failure: Option<(String, String)> = None;
    for scenario in scenarios {
        let outcome = run_scenario(scenario).map_err(|e| e.to_string())?;
        // A file may run the same scenario twice (e.g. with and without
        // enforcement); suffix repeats so nothing is overwritten.
        let copies = used_names.iter().filter(|n| **n == scenario.name).count();
        used_names.push(scenario.name.clone());
        let stem = if copies == 0 {
            scenario.name.clone()
        } else {
            format!("{}_{}", scenario.name, copies + 1)
        };
        let metrics_path = out.join(format!("{stem}.csv"));
        write(&metrics_path, &outcome.report.to_csv())?;
        for (trial, log) in outcome.traces.iter().enumerate() {
            let mut text = String::from("time_us,entity,event,detail\n");
            // EventLog::to_csv carries the same columns under its own
            // header; re-emit under the trace contract's names.
            text.push_str(log.to_csv().splitn(2, '\n').nth(1).unwrap_or(""));
            write(&out.join(format!("{stem}_trace_t{trial}.csv")), &text)?;
        }
        if outcome.passed() {
            println!(
                "ok {stem}: {} trials, metrics in {}",
                outcome.report.trials(),
                metrics_path.display()
            );
        } else {
            println!("FAIL {stem}: {} assertion(s) violated", outcome.failures.len());
            for failure in &outcome.failures {
                println!("  {failure}");
            }
            if first_failure.is_none() {
                first_failure = Some((stem, outcome.failures[0].clone()));
            }
        }
    }
    if let Some((name, failure)) = first_failure {
        eprintln!("error: {name}: {failure}");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

/// Per-(scenario, metric) count/mean/min/max across one or more metrics
/// CSVs; non-numeric metrics only count.
fn summarize(texts: &[String]) -> Result<String, String> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for text in texts {
        let mut lines = text.lines();
        match lines.next() {
            Some("scenario,trial,metric,value") => {}
            other => return Err(format!("not a metrics CSV (header {other:?})")),
        }
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.splitn(4, ',').collect();
            if cols.len() != 4 {
                return Err(format!("metrics CSV line {}: expected 4 columns", idx + 2));
            }
            groups
                .entry((cols[0].to_string(), cols[2].to_string()))
                .or_default()
                .push(cols[3].to_string());
        }
    }
    let mut out = String::new();
    writeln!(out, "{:<10} {:<34} {:>5} {:>12} {:>12} {:>12}", "scenario", "metric", "n", "mean", "min", "max")
        .expect("string write");
    for ((scenario, metric), values) in groups {
        let numeric: Option<Vec<f64>> =
            values.iter().map(|v| v.parse::<f64>().ok()).collect();
        match numeric {
            Some(nums) => {
                let mean = nums.iter().sum::<f64>() / nums.len() as f64;
                let min = nums.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = nums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                writeln!(
                    out,
                    "{scenario:<10} {metric:<34} {:>5} {mean:>12.1} {min:>12} {max:>12}",
                    nums.len()
                )
                .expect("string write");
            }
            None => {
                writeln!(
                    out,
                    "{scenario:<10} {metric:<34} {:>5} {:>12} {:>12} {:>12}",
                    values.len(),
                    "-",
                    "-",
                    "-"
                )
                .expect("string write");
            }
        }
    }
    Ok(out)
}
