//! Phone-side Monitor.
//!
//! A Monitor watches a situation source — polling the four socket-table
//! files, or sitting inside a per-app tunnel — attributes new flows to
//! apps, evaluates them against its local policy replica, and pushes
//! per-flow permits to the router. It also keeps the replica in sync:
//! a master node (MCN) originates updates, every node pulls the current
//! policy after a partition heals.
//!
//! Decisions are per flow, never per packet: a flow enters
//! `known_flows` exactly when its Validate message is emitted, and
//! leaves it with the matching Invalidate.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::mac::Mac;
use crate::packet::Packet;
use crate::policy::{parse_policy, AccessDecision, Policy};
use crate::procfs::{is_header, parse_line, ProcFile, ProcFileKind, ProcFiles, SockState};
use crate::proto::{ControlMessage, Flag, FlowId, MsgType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PollStrategy {
    /// Parse every file every poll.
    Naive,
    /// Skip files whose mtime has not moved since the previous poll.
    Smarter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SituationSource {
    ProcfsPoll { interval_ms: u64, strategy: PollStrategy },
    TunnelProxy { managed_apps: BTreeSet<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Mcn,
    Scn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowEvent {
    Opened,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowObservation {
    pub flow: FlowId,
    pub app_id: String,
    pub app_sig: [u8; 32],
    pub event: FlowEvent,
    pub observed_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlertReason {
    PhoneLevelDenied,
    AppLevelDenied,
    IdentityMismatch,
    AttributionFailed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alert {
    pub at_us: u64,
    pub flow: FlowId,
    pub app_id: String,
    pub reason: AlertReason,
}

/// Cumulative polling bookkeeping, exported as metrics.
#[derive(Debug, Clone, Default)]
pub struct PollStats {
    pub lines_parsed: u64,
    pub polls: u64,
    /// Gaps between consecutive poll starts (µs).
    pub actual_intervals_us: Vec<u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MonitorError {
    #[error("only the MCN may push policy updates")]
    NotMcn,
    #[error("router unreachable")]
    RouterUnreachable,
    #[error("update rejected: {0}")]
    UpdateRejected(String),
    #[error("policy transfer unreadable: {0}")]
    PolicyTransfer(String),
}

/// Outcome of a post-reconnect synchronization attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncAction {
    UpToDate,
    /// Caught up from an older replica. `invalidations` are the permits
    /// the new policy withdrew; the caller must deliver them.
    Synced { from: u64, to: u64, invalidations: Vec<ControlMessage> },
    Unreachable,
}

/// The Monitor's view of the router for request/response exchanges
/// (version query, policy fetch, update push). Flow decisions do not go
/// through this — they travel as scheduled control-channel deliveries.
/// `None` means the router is unreachable right now.
pub trait RouterLink {
    fn version_query(&mut self, msg: &ControlMessage) -> Option<u64>;
    fn request_policy(&mut self, msg: &ControlMessage) -> Option<Result<Vec<u8>, String>>;
    fn push_update(&mut self, msg: &ControlMessage) -> Option<Result<u64, String>>;
}

#[derive(Debug, Clone)]
struct KnownFlow {
    app_id: String,
    app_sig: [u8; 32],
    last_seen_us: u64,
}

pub struct Monitor {
    phone_mac: Mac,
    credential_hash: [u8; 32],
    node: NodeKind,
    source: SituationSource,
    udp_idle_timeout_ms: u64,
    replica: Policy,
    /// uid → (app_id, signature): the package table.
    installed_apps: BTreeMap<u32, (String, [u8; 32])>,
    known_flows: BTreeMap<FlowId, KnownFlow>,
    /// Per file: mtime at last look and the interesting flows (with
    /// their uid) present at last parse.
    poll_seen: BTreeMap<&'static str, (u64, BTreeMap<FlowId, u32>)>,
    last_poll_start_us: Option<u64>,
    pub poll_stats: PollStats,
    alerts: Vec<Alert>,
}

pub const DEFAULT_UDP_IDLE_TIMEOUT_MS: u64 = 2000;

impl Monitor {
    pub fn new(
        phone_mac: Mac,
        credential_hash: [u8; 32],
        node: NodeKind,
        source: SituationSource,
        replica: Policy,
    ) -> Monitor {
        Monitor {
            phone_mac,
            credential_hash,
            node,
            source,
            udp_idle_timeout_ms: DEFAULT_UDP_IDLE_TIMEOUT_MS,
            replica,
            installed_apps: BTreeMap::new(),
            known_flows: BTreeMap::new(),
            poll_seen: BTreeMap::new(),
            last_poll_start_us: None,
            poll_stats: PollStats::default(),
            alerts: Vec::new(),
        }
    }

    pub fn with_udp_idle_timeout(mut self, ms: u64) -> Monitor {
        self.udp_idle_timeout_ms = ms;
        self
    }

    pub fn phone_mac(&self) -> Mac {
        self.phone_mac
    }

    pub fn node(&self) -> NodeKind {
        self.node
    }

    pub fn source(&self) -> &SituationSource {
        &self.source
    }

    pub fn replica_version(&self) -> u64 {
        self.replica.version
    }

    pub fn replica(&self) -> &Policy {
        &self.replica
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn known_flow_count(&self) -> usize {
        self.known_flows.len()
    }

    pub fn install_app(&mut self, uid: u32, app_id: impl Into<String>, app_sig: [u8; 32]) {
        self.installed_apps.insert(uid, (app_id.into(), app_sig));
    }

    pub fn poll_interval_ms(&self) -> Option<u64> {
        match self.source {
            SituationSource::ProcfsPoll { interval_ms, .. } => Some(interval_ms),
            SituationSource::TunnelProxy { .. } => None,
        }
    }

    fn message(&self, msg_type: MsgType, flow: FlowId, app_id: &str, app_sig: [u8; 32], flag: Flag) -> ControlMessage {
        ControlMessage {
            msg_type,
            credential_hash: self.credential_hash,
            phone_mac: self.phone_mac,
            flow,
            app_id: app_id.to_string(),
            app_sig,
            policy_version: self.replica.version,
            flag,
            body: Vec::new(),
        }
    }

    fn null_flow() -> FlowId {
        FlowId::v4([0, 0, 0, 0].into(), 0, [0, 0, 0, 0].into(), 0, crate::proto::Protocol::Tcp)
    }

    /// A flow is interesting when its destination is a protected device
    /// in the replica.
    fn is_interesting(&self, flow: &FlowId) -> bool {
        flow.dst_v4()
            .and_then(|ip| self.replica.device_by_ip(ip))
            .is_some_and(|d| d.protected)
    }

    fn attribution(&self, uid: u32) -> (String, [u8; 32]) {
        match self.installed_apps.get(&uid) {
            Some((id, sig)) => (id.clone(), *sig),
            // No package owns this uid; synthesize an identity that can
            // never verify so the failure is visible downstream.
            None => (format!("uid-{uid}"), [0; 32]),
        }
    }

    fn note_activity(&mut self, flow: &FlowId, now_us: u64) {
        if let Some(known) = self.known_flows.get_mut(flow) {
            if known.last_seen_us < now_us {
                known.last_seen_us = now_us;
            }
        }
    }

    /// One polling pass over the four socket tables. Emits Opened for
    /// interesting flows that newly appeared in ESTABLISHED state and
    /// Closed for tracked flows that vanished or moved to a FIN-side
    /// state. Under the Smarter strategy a file whose mtime has not
    /// moved is skipped without parsing: unchanged mtime means unchanged
    /// content, so its previously-seen flows are refreshed as-is.
    pub fn poll_once(&mut self, files: &ProcFiles, now_us: u64) -> Vec<FlowObservation> {
        let strategy = match self.source {
            SituationSource::ProcfsPoll { strategy, .. } => strategy,
            SituationSource::TunnelProxy { .. } => return Vec::new(),
        };
        if let Some(prev) = self.last_poll_start_us {
            self.poll_stats.actual_intervals_us.push(now_us - prev);
        }
        self.last_poll_start_us = Some(now_us);
        self.poll_stats.polls += 1;

        let mut observations = Vec::new();
        for kind in ProcFileKind::ALL {
            let file = files.get(kind);
            let seen = self.poll_seen.entry(kind.name()).or_default();
            if strategy == PollStrategy::Smarter && seen.0 == file.mtime_us() && self.poll_stats.polls > 1 {
                let flows: Vec<FlowId> = seen.1.keys().copied().collect();
                for flow in flows {
                    self.note_activity(&flow, now_us);
                }
                continue;
            }
            observations.extend(self.parse_file(kind, file, now_us));
        }
        observations
    }

    fn parse_file(&mut self, kind: ProcFileKind, file: &ProcFile, now_us: u64) -> Vec<FlowObservation> {
        let protocol = kind.protocol();
        let mut established: BTreeMap<FlowId, u32> = BTreeMap::new();
        let mut closing: BTreeMap<FlowId, u32> = BTreeMap::new();
        for line in file.text().lines() {
            if is_header(line) {
                continue;
            }
            self.poll_stats.lines_parsed += 1;
            let Ok(parsed) = parse_line(line) else {
                continue; // malformed line: skip, never abort the poll
            };
            let flow = parsed.flow_id(protocol);
            if !self.is_interesting(&flow) {
                continue;
            }
            if parsed.state == SockState::Established {
                established.insert(flow, parsed.uid);
            } else if parsed.state.is_closing() {
                closing.insert(flow, parsed.uid);
            }
        }

        let prev = self
            .poll_seen
            .insert(kind.name(), (file.mtime_us(), established.clone()))
            .map(|(_, flows)| flows)
            .unwrap_or_default();

        let mut observations = Vec::new();
        for (flow, uid) in &established {
            if prev.contains_key(flow) {
                self.note_activity(flow, now_us);
            } else {
                let (app_id, app_sig) = self.attribution(*uid);
                observations.push(FlowObservation {
                    flow: *flow,
                    app_id,
                    app_sig,
                    event: FlowEvent::Opened,
                    observed_at: now_us,
                });
            }
        }
        // Closed: tracked flows that vanished or turned up in a FIN state.
        for (flow, uid) in &prev {
            if established.contains_key(flow) {
                continue;
            }
            let uid = closing.get(flow).copied().unwrap_or(*uid);
            let (app_id, app_sig) = self.attribution(uid);
            observations.push(FlowObservation {
                flow: *flow,
                app_id,
                app_sig,
                event: FlowEvent::Closed,
                observed_at: now_us,
            });
        }
        observations
    }

    /// The per-flow decision. Emits a Validate permit iff the
    /// destination is a protected device in the replica, the phone-level
    /// check passes for this phone's role, the app and device share a
    /// category, and the app's identity verifies. Anything else is
    /// silence — plus a local alert when the flow was interesting.
    pub fn evaluate_flow(&mut self, obs: &FlowObservation) -> Option<ControlMessage> {
        debug_assert_eq!(obs.event, FlowEvent::Opened);
        if self.known_flows.contains_key(&obs.flow) {
            return None; // already validated; decisions are per flow
        }
        let device = obs
            .flow
            .dst_v4()
            .and_then(|ip| self.replica.device_by_ip(ip))?;
        if !device.protected {
            return None;
        }
        let device_mac = device.mac;
        let role = self.replica.effective_role(self.phone_mac).to_string();

        let alert = |reason| Alert {
            at_us: obs.observed_at,
            flow: obs.flow,
            app_id: obs.app_id.clone(),
            reason,
        };
        if !self.replica.te_check(&role, device_mac).unwrap_or(false) {
            self.alerts.push(alert(AlertReason::PhoneLevelDenied));
            return None;
        }
        if !self.replica.mcs_check(&obs.app_id, device_mac).unwrap_or(false) {
            let reason = if self.replica.apps.contains_key(&obs.app_id) {
                AlertReason::AppLevelDenied
            } else {
                AlertReason::AttributionFailed
            };
            self.alerts.push(alert(reason));
            return None;
        }
        if !verify_app_identity(&obs.app_id, &obs.app_sig, &self.replica) {
            self.alerts.push(alert(AlertReason::IdentityMismatch));
            return None;
        }

        self.known_flows.insert(
            obs.flow,
            KnownFlow {
                app_id: obs.app_id.clone(),
                app_sig: obs.app_sig,
                last_seen_us: obs.observed_at,
            },
        );
        Some(self.message(MsgType::FlowDecision, obs.flow, &obs.app_id, obs.app_sig, Flag::Validate))
    }

    /// Invalidates validated flows that ended: Closed observations for
    /// TCP (and UDP sockets that vanished), plus UDP flows idle for the
    /// configured timeout.
    pub fn detect_termination(
        &mut self,
        observations: &[FlowObservation],
        now_us: u64,
    ) -> Vec<ControlMessage> {
        let mut out = Vec::new();
        for obs in observations.iter().filter(|o| o.event == FlowEvent::Closed) {
            if let Some(known) = self.known_flows.remove(&obs.flow) {
                out.push(self.message(
                    MsgType::FlowDecision,
                    obs.flow,
                    &known.app_id,
                    known.app_sig,
                    Flag::Invalidate,
                ));
            }
        }
        let timeout_us = self.udp_idle_timeout_ms * 1000;
        let idle: Vec<FlowId> = self
            .known_flows
            .iter()
            .filter(|(flow, known)| {
                flow.protocol == crate::proto::Protocol::Udp
                    && now_us.saturating_sub(known.last_seen_us) >= timeout_us
            })
            .map(|(flow, _)| *flow)
            .collect();
        for flow in idle {
            let known = self.known_flows.remove(&flow).expect("collected above");
            out.push(self.message(
                MsgType::FlowDecision,
                flow,
                &known.app_id,
                known.app_sig,
                Flag::Invalidate,
            ));
        }
        out
    }

    /// Full polling step: observe, evaluate opens, invalidate closes.
    pub fn process_poll(&mut self, files: &ProcFiles, now_us: u64) -> Vec<ControlMessage> {
        let observations = self.poll_once(files, now_us);
        let mut msgs = Vec::new();
        for obs in observations.iter().filter(|o| o.event == FlowEvent::Opened) {
            msgs.extend(self.evaluate_flow(obs));
        }
        msgs.extend(self.detect_termination(&observations, now_us));
        msgs
    }

    /// Tunnel-side packet hook. The packet itself is always forwarded
    /// unchanged (the caller adds the tunnel-hop latency); the first
    /// packet of a new flow is what triggers evaluation. Must only see
    /// managed apps' traffic.
    pub fn proxy_packet(&mut self, app_id: &str, packet: &Packet, now_us: u64) -> Option<ControlMessage> {
        let SituationSource::TunnelProxy { managed_apps } = &self.source else {
            return None;
        };
        debug_assert!(managed_apps.contains(app_id), "unmanaged traffic must stay outside the tunnel");
        self.note_activity(&packet.flow, now_us);
        if self.known_flows.contains_key(&packet.flow) {
            return None;
        }
        let app_sig = self
            .replica
            .apps
            .get(app_id)
            .map(|a| a.signature)
            .unwrap_or([0; 32]);
        let obs = FlowObservation {
            flow: packet.flow,
            app_id: app_id.to_string(),
            app_sig,
            event: FlowEvent::Opened,
            observed_at: now_us,
        };
        // Repeated denied flows should alert once, not per packet.
        if self
            .alerts
            .iter()
            .any(|a| a.flow == packet.flow && a.app_id == app_id)
        {
            return None;
        }
        self.evaluate_flow(&obs)
    }

    /// Installs a new replica atomically and re-evaluates every
    /// validated flow under it: flows the new policy no longer allows
    /// are invalidated (with a local alert); flows whose destination
    /// left the policy or lost protection are simply dropped from
    /// tracking.
    pub fn install_policy(&mut self, policy: Policy, now_us: u64) -> Vec<ControlMessage> {
        self.replica = policy;
        let mut invalidate = Vec::new();
        let flows: Vec<FlowId> = self.known_flows.keys().copied().collect();
        for flow in flows {
            let device = flow.dst_v4().and_then(|ip| self.replica.device_by_ip(ip));
            let keep = match device {
                None => Some(false), // destination gone: forget quietly
                Some(d) if !d.protected => Some(false),
                Some(d) => {
                    let app_id = self.known_flows[&flow].app_id.clone();
                    match self.replica.authorize(self.phone_mac, &app_id, d.mac) {
                        Ok(AccessDecision::Allow) => None, // still fine
                        _ => {
                            self.alerts.push(Alert {
                                at_us: now_us,
                                flow,
                                app_id,
                                reason: AlertReason::PhoneLevelDenied,
                            });
                            Some(true)
                        }
                    }
                }
            };
            match keep {
                None => {}
                Some(send_invalidate) => {
                    let known = self.known_flows.remove(&flow).expect("listed above");
                    if send_invalidate {
                        invalidate.push(self.message(
                            MsgType::FlowDecision,
                            flow,
                            &known.app_id,
                            known.app_sig,
                            Flag::Invalidate,
                        ));
                    }
                }
            }
        }
        invalidate
    }

    /// Reconnect handler: ask the router its version and pull the
    /// policy when ours is older.
    pub fn on_network_change(
        &mut self,
        link: &mut dyn RouterLink,
        now_us: u64,
    ) -> Result<SyncAction, MonitorError> {
        let query = self.message(MsgType::VersionQuery, Self::null_flow(), "", [0; 32], Flag::Validate);
        let Some(router_version) = link.version_query(&query) else {
            return Ok(SyncAction::Unreachable);
        };
        if router_version <= self.replica.version {
            return Ok(SyncAction::UpToDate);
        }
        let from = self.replica.version;
        let request = self.message(MsgType::VersionQuery, Self::null_flow(), "", [0; 32], Flag::Validate);
        let Some(reply) = link.request_policy(&request) else {
            return Ok(SyncAction::Unreachable);
        };
        let body = reply.map_err(MonitorError::PolicyTransfer)?;
        let text = String::from_utf8(body)
            .map_err(|_| MonitorError::PolicyTransfer("policy text is not UTF-8".into()))?;
        let policy = parse_policy(&text).map_err(|e| MonitorError::PolicyTransfer(e.to_string()))?;
        let to = policy.version;
        let invalidations = self.install_policy(policy, now_us);
        Ok(SyncAction::Synced { from, to, invalidations })
    }

    /// MCN-only: push an update to the router. On Ack the same delta is
    /// applied to the local replica (write-through); the router's
    /// acknowledged version must match, otherwise fall back to a pull.
    pub fn mcn_push_update(
        &mut self,
        update: &crate::policy::PolicyUpdate,
        link: &mut dyn RouterLink,
        now_us: u64,
    ) -> Result<(u64, Vec<ControlMessage>), MonitorError> {
        if self.node != NodeKind::Mcn {
            return Err(MonitorError::NotMcn);
        }
        let mut msg = self.message(MsgType::PolicyUpdate, Self::null_flow(), "", [0; 32], Flag::Validate);
        msg.body = crate::policy::render_update(update).into_bytes();
        let Some(reply) = link.push_update(&msg) else {
            return Err(MonitorError::RouterUnreachable);
        };
        let acked = reply.map_err(MonitorError::UpdateRejected)?;
        let invalidations = match self.replica.apply_update(update, self.phone_mac) {
            Ok(next) if next.version == acked => self.install_policy(next, now_us),
            _ => {
                // Replica diverged; converge by pulling.
                match self.on_network_change(link, now_us)? {
                    SyncAction::Synced { invalidations, .. } => invalidations,
                    _ => Vec::new(),
                }
            }
        };
        Ok((acked, invalidations))
    }
}

/// True iff the app is registered and its signature matches — the
/// repackaged-app defense.
pub fn verify_app_identity(app_id: &str, app_sig: &[u8; 32], policy: &Policy) -> bool {
    policy
        .apps
        .get(app_id)
        .is_some_and(|app| &app.signature == app_sig)
}
