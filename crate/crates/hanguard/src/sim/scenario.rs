//! Scenario definitions: topology, tunable parameters, and the
//! `key=value` scenario file format.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::mac::Mac;
use crate::monitor::PollStrategy;
use crate::policy::{
    credential_hash, AppRecord, DeviceRecord, PhoneRecord, Policy, PolicyUpdate, Subnet,
};

use super::link::LinkModel;

/// How an app's traffic reaches the Monitor: not at all, through the
/// socket-table poller, or through the per-app tunnel proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Management {
    Unmanaged,
    Procfs,
    Tunnel,
}

/// Everything a trial can tune. Defaults reproduce the reference
/// experiments; each field is reachable as `--set key=value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimParams {
    pub data_base_us: u64,
    pub data_jitter_us: u64,
    pub control_base_us: u64,
    pub control_jitter_us: u64,
    pub lan_base_us: u64,
    pub lan_jitter_us: u64,
    pub tunnel_hop_us: u64,
    pub parse_cost_us_per_line: u64,
    /// Forces a single polling interval even in multi-interval benchmarks.
    pub poll_ms: Option<u64>,
    pub strategy: PollStrategy,
    pub vanilla: bool,
    pub udp_idle_ms: u64,
    pub flow_lifetime_ms: u64,
    pub rate_threshold: u32,
    pub rate_window_s: u64,
    pub penalty_s: u64,
    pub pfdc_capacity: usize,
    pub per_phone_limit: usize,
    /// Long-lived uninteresting sockets present in every phone's tables;
    /// they are what a naive poller pays for on idle polls.
    pub background_flows: u32,
    pub trace: bool,
}

impl Default for SimParams {
    fn default() -> SimParams {
        SimParams {
            data_base_us: 1000,
            data_jitter_us: 300,
            control_base_us: 900,
            control_jitter_us: 300,
            lan_base_us: 400,
            lan_jitter_us: 100,
            tunnel_hop_us: 500,
            parse_cost_us_per_line: 0,
            poll_ms: None,
            strategy: PollStrategy::Smarter,
            vanilla: false,
            udp_idle_ms: 2000,
            flow_lifetime_ms: 40,
            rate_threshold: 100,
            rate_window_s: 10,
            penalty_s: 300,
            pfdc_capacity: 1024,
            per_phone_limit: 64,
            background_flows: 6,
            trace: false,
        }
    }
}

pub const PARAM_KEYS: &[&str] = &[
    "data_base_us",
    "data_jitter_us",
    "control_base_us",
    "control_jitter_us",
    "lan_base_us",
    "lan_jitter_us",
    "tunnel_hop_us",
    "parse_cost_us_per_line",
    "poll_ms",
    "strategy",
    "vanilla",
    "udp_idle_ms",
    "flow_lifetime_ms",
    "rate_threshold",
    "rate_window_s",
    "penalty_s",
    "pfdc_capacity",
    "per_phone_limit",
    "background_flows",
    "trace",
];

impl SimParams {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ScenarioError> {
            value.parse().map_err(|_| ScenarioError::BadParam {
                key: key.to_string(),
                msg: format!("cannot parse {value:?}"),
            })
        }
        match key {
            "data_base_us" => self.data_base_us = num(key, value)?,
            "data_jitter_us" => self.data_jitter_us = num(key, value)?,
            "control_base_us" => self.control_base_us = num(key, value)?,
            "control_jitter_us" => self.control_jitter_us = num(key, value)?,
            "lan_base_us" => self.lan_base_us = num(key, value)?,
            "lan_jitter_us" => self.lan_jitter_us = num(key, value)?,
            "tunnel_hop_us" => self.tunnel_hop_us = num(key, value)?,
            "parse_cost_us_per_line" => self.parse_cost_us_per_line = num(key, value)?,
            "poll_ms" => self.poll_ms = Some(num(key, value)?),
            "strategy" => {
                self.strategy = match value {
                    "naive" => PollStrategy::Naive,
                    "smarter" => PollStrategy::Smarter,
                    other => {
                        return Err(ScenarioError::BadParam {
                            key: key.to_string(),
                            msg: format!("expected naive|smarter, got {other:?}"),
                        })
                    }
                }
            }
            "vanilla" => self.vanilla = num::<bool>(key, value)?,
            "udp_idle_ms" => self.udp_idle_ms = num(key, value)?,
            "flow_lifetime_ms" => self.flow_lifetime_ms = num(key, value)?,
            "rate_threshold" => self.rate_threshold = num(key, value)?,
            "rate_window_s" => self.rate_window_s = num(key, value)?,
            "penalty_s" => self.penalty_s = num(key, value)?,
            "pfdc_capacity" => self.pfdc_capacity = num(key, value)?,
            "per_phone_limit" => self.per_phone_limit = num(key, value)?,
            "background_flows" => self.background_flows = num(key, value)?,
            "trace" => self.trace = num::<bool>(key, value)?,
            unknown => {
                return Err(ScenarioError::BadParam {
                    key: unknown.to_string(),
                    msg: format!("unknown parameter; known keys: {}", PARAM_KEYS.join(", ")),
                })
            }
        }
        Ok(())
    }

    pub fn data_link(&self) -> LinkModel {
        LinkModel::new(self.data_base_us, self.data_jitter_us)
    }

    pub fn control_link(&self) -> LinkModel {
        LinkModel::new(self.control_base_us, self.control_jitter_us)
    }

    pub fn lan_link(&self) -> LinkModel {
        LinkModel::new(self.lan_base_us, self.lan_jitter_us)
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            pfdc_capacity: self.pfdc_capacity,
            per_phone_limit: self.per_phone_limit,
            rate_window_us: self.rate_window_s * 1_000_000,
            rate_threshold: self.rate_threshold,
            penalty_duration_us: self.penalty_s * 1_000_000,
            vanilla: self.vanilla,
            persist_path: None,
        }
    }
}

/// The home network a scenario runs on.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    pub phones: Vec<PhoneRecord>,
    pub devices: Vec<DeviceRecord>,
    pub apps: Vec<AppRecord>,
    /// (app id, device mac, category) setup-phase bindings.
    pub bindings: Vec<(String, Mac, String)>,
    /// Deltas the admin applies after setup (e.g. carving a restricted
    /// domain out of Home).
    pub post_updates: Vec<PolicyUpdate>,
}

impl Topology {
    /// Builds the active policy; collects every unresolved reference or
    /// structural violation instead of stopping at the first.
    pub fn build_policy(&self) -> Result<Policy, ScenarioError> {
        let mut problems = Vec::new();
        let mut policy = Policy::default_policy(
            self.phones.clone(),
            self.devices.clone(),
            self.apps.clone(),
        )
        .map_err(|e| ScenarioError::Validation(vec![e.to_string()]))?;
        for (app, device, category) in &self.bindings {
            match policy.bind_app_device(app, *device, category) {
                Ok(next) => policy = next,
                Err(e) => problems.push(format!("binding {app}->{device}: {e}")),
            }
        }
        let admin = self
            .phones
            .iter()
            .find(|p| p.is_mcn)
            .map(|p| p.mac)
            .expect("default_policy enforces one MCN");
        for update in &self.post_updates {
            match policy.apply_update(update, admin) {
                Ok(next) => policy = next,
                Err(e) => problems.push(format!("post-setup update: {e}")),
            }
        }
        if problems.is_empty() {
            Ok(policy)
        } else {
            Err(ScenarioError::Validation(problems))
        }
    }
}

/// Key=value access for one topology/scenario line, consuming keys so
/// leftovers can be reported.
struct Fields<'a> {
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn new(line: usize, tokens: impl Iterator<Item = &'a str>) -> Result<Fields<'a>, ScenarioError> {
        let mut map = BTreeMap::new();
        for token in tokens {
            let (k, v) = token.split_once('=').ok_or(ScenarioError::File {
                line,
                msg: format!("expected key=value, got {token:?}"),
            })?;
            if map.insert(k, v).is_some() {
                return Err(ScenarioError::File { line, msg: format!("duplicate key {k:?}") });
            }
        }
        Ok(Fields { line, map })
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.map.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<&'a str, ScenarioError> {
        self.take(key).ok_or(ScenarioError::File {
            line: self.line,
            msg: format!("missing required key {key}="),
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ScenarioError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| ScenarioError::File {
            line: self.line,
            msg: format!("cannot parse {key}={raw:?}"),
        })
    }

    fn parse_opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| ScenarioError::File {
                line: self.line,
                msg: format!("cannot parse {key}={raw:?}"),
            }),
        }
    }

    fn finish(self) -> Result<(), ScenarioError> {
        if let Some(k) = self.map.keys().next() {
            return Err(ScenarioError::File {
                line: self.line,
                msg: format!("unexpected key {k:?}"),
            });
        }
        Ok(())
    }
}

fn parse_sig(fields: &mut Fields, key: &str) -> Result<Option<[u8; 32]>, ScenarioError> {
    let Some(raw) = fields.take(key) else { return Ok(None) };
    let bytes = hex::decode(raw).map_err(|_| ScenarioError::File {
        line: fields.line,
        msg: format!("{key}= must be hex, got {raw:?}"),
    })?;
    bytes.try_into().map(Some).map_err(|_| ScenarioError::File {
        line: fields.line,
        msg: format!("{key}= must be 32 bytes (64 hex digits)"),
    })
}

/// Parses a topology file. One record per line:
///
/// ```text
/// phone  mac=.. ip=.. user=..  [password=.. cert=.. role=.. mcn=true]
/// device mac=.. ip=..          [type=.. protected=true categories=a,b]
/// app    id=..                 [sig=<64 hex digits>]
/// bind   app=.. device=<mac> category=..
/// ```
///
/// Omitted passwords hash as empty; an omitted app signature defaults
/// to the digest of the app id.
pub fn parse_topology(text: &str) -> Result<Topology, ScenarioError> {
    let mut topology = Topology::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let verb = tokens.next().expect("non-empty line");
        let mut fields = Fields::new(line_no, tokens)?;
        match verb {
            "phone" => {
                let mac: Mac = fields.parse("mac")?;
                let ip: Ipv4Addr = fields.parse("ip")?;
                let user = fields.require("user")?.to_string();
                let password = fields.take("password").unwrap_or("");
                let cert_id = fields
                    .take("cert")
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("cert-{user}"));
                let role = fields.take("role").unwrap_or("").to_string();
                let is_mcn = fields.parse_opt("mcn")?.unwrap_or(false);
                topology.phones.push(PhoneRecord {
                    mac,
                    reserved_ip: ip,
                    role,
                    credential_hash: credential_hash(&user, password),
                    user,
                    cert_id,
                    is_mcn,
                });
            }
            "device" => {
                let mac: Mac = fields.parse("mac")?;
                let ip: Ipv4Addr = fields.parse("ip")?;
                let device_type = fields.take("type").unwrap_or("").to_string();
                let protected = fields.parse_opt("protected")?.unwrap_or(false);
                let categories: BTreeSet<String> = fields
                    .take("categories")
                    .map(|list| list.split(',').map(str::to_string).collect())
                    .unwrap_or_default();
                topology.devices.push(DeviceRecord {
                    mac,
                    ip,
                    device_type,
                    categories,
                    protected,
                    subnet: if protected { Subnet::Iot } else { Subnet::Phones },
                });
            }
            "app" => {
                let app_id = fields.require("id")?.to_string();
                let signature = parse_sig(&mut fields, "sig")?.unwrap_or_else(|| {
                    use sha2::{Digest, Sha256};
                    Sha256::digest(app_id.as_bytes()).into()
                });
                topology.apps.push(AppRecord {
                    app_id,
                    signature,
                    categories: BTreeSet::new(),
                });
            }
            "bind" => {
                let app = fields.require("app")?.to_string();
                let device: Mac = fields.parse("device")?;
                let category = fields.require("category")?.to_string();
                topology.bindings.push((app, device, category));
            }
            other => {
                return Err(ScenarioError::File {
                    line: line_no,
                    msg: format!("unknown record type {other:?}"),
                })
            }
        }
        fields.finish()?;
    }
    Ok(topology)
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    /// Trials per parameter configuration (the latency/detection
    /// benchmarks run this many trials per polling interval).
    pub trials: u32,
    pub seed: u64,
    pub params: SimParams,
}

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}; builtin scenarios: S1..S10")]
    Unknown(String),
    #[error("scenario file line {line}: {msg}")]
    File { line: usize, msg: String },
    #[error("parameter {key}: {msg}")]
    BadParam { key: String, msg: String },
    #[error("scenario does not validate: {}", .0.join("; "))]
    Validation(Vec<String>),
}

/// Parses a scenario file: one `scenario name=<builtin>` line opens a
/// section (with optional `trials=`/`seed=`), followed by `set
/// key=value` lines adjusting parameters. `#` starts a comment.
pub fn parse_scenario_file(text: &str) -> Result<Vec<Scenario>, ScenarioError> {
    let mut out: Vec<Scenario> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let verb = tokens.next().expect("non-empty line");
        let pairs: Result<Vec<(&str, &str)>, ScenarioError> = tokens
            .map(|t| {
                t.split_once('=').ok_or(ScenarioError::File {
                    line: line_no,
                    msg: format!("expected key=value, got {t:?}"),
                })
            })
            .collect();
        let pairs = pairs?;
        match verb {
            "scenario" => {
                let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
                for (k, v) in pairs {
                    if !["name", "trials", "seed"].contains(&k) {
                        return Err(ScenarioError::File {
                            line: line_no,
                            msg: format!("unexpected key {k:?} on scenario line"),
                        });
                    }
                    if fields.insert(k, v).is_some() {
                        return Err(ScenarioError::File {
                            line: line_no,
                            msg: format!("duplicate key {k:?}"),
                        });
                    }
                }
                let name = fields.get("name").ok_or(ScenarioError::File {
                    line: line_no,
                    msg: "scenario line needs name=".into(),
                })?;
                let mut scenario = super::builtin::builtin(name)
                    .ok_or_else(|| ScenarioError::Unknown(name.to_string()))?;
                if let Some(t) = fields.get("trials") {
                    scenario.trials = t.parse().map_err(|_| ScenarioError::File {
                        line: line_no,
                        msg: format!("bad trials value {t:?}"),
                    })?;
                }
                if let Some(s) = fields.get("seed") {
                    scenario.seed = s.parse().map_err(|_| ScenarioError::File {
                        line: line_no,
                        msg: format!("bad seed value {s:?}"),
                    })?;
                }
                out.push(scenario);
            }
            "set" => {
                let scenario = out.last_mut().ok_or(ScenarioError::File {
                    line: line_no,
                    msg: "set before any scenario line".into(),
                })?;
                if pairs.len() != 1 {
                    return Err(ScenarioError::File {
                        line: line_no,
                        msg: "set takes exactly one key=value".into(),
                    });
                }
                scenario.params.set(pairs[0].0, pairs[0].1)?;
            }
            other => {
                return Err(ScenarioError::File {
                    line: line_no,
                    msg: format!("unknown directive {other:?}"),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(ScenarioError::File { line: 0, msg: "no scenario sections found".into() });
    }
    Ok(out)
}
