//! The discrete-event engine for one trial.
//!
//! A single binary heap drives everything; events run in (time, seq)
//! order with seq assigned at scheduling time, so equal-time events
//! replay in exactly the order they were scheduled. All randomness
//! flows through [`DrawSource`], making a trial a pure function of
//! (plan, params, seed, trial index).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::controller::{Controller, DecisionOutcome, DropReason, ForwardReason, Verdict};
use crate::eventlog::EventLog;
use crate::mac::Mac;
use crate::monitor::{Monitor, NodeKind, RouterLink, SituationSource, SyncAction};
use crate::packet::Packet;
use crate::policy::{parse_policy, Policy, PolicyUpdate};
use crate::procfs::{ProcFileKind, ProcFiles, SockEntry, SockState};
use crate::proto::{decode, encode, ControlMessage, Flag, FlowId, MsgType, Protocol};

use super::link::DrawSource;
use super::scenario::{Management, SimParams};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("trial {trial} violated invariant: {msg}")]
    Invariant { trial: u32, msg: String },
    #[error("plan references unknown phone {0}")]
    UnknownPhone(Mac),
    #[error(transparent)]
    Scenario(#[from] super::scenario::ScenarioError),
}

/// One scripted flow: who opens it, how it is monitored, and the
/// packet cadence.
#[derive(Debug, Clone)]
pub struct FlowScript {
    pub label: String,
    pub phone: Mac,
    /// Source MAC stamped on the wire when it differs from `phone`
    /// (spoofing scenarios).
    pub src_mac_override: Option<Mac>,
    pub uid: u32,
    pub app_id: String,
    pub flow: FlowId,
    pub dst_mac: Mac,
    pub management: Management,
    pub open_at_us: u64,
    pub first_data_delay_us: u64,
    pub data_packets: u32,
    pub data_gap_us: u64,
    /// Socket lifetime; `None` keeps the flow open to the end.
    pub lifetime_us: Option<u64>,
    pub expect_reply: bool,
}

impl FlowScript {
    pub fn new(label: &str, phone: Mac, uid: u32, app_id: &str, flow: FlowId, dst_mac: Mac) -> FlowScript {
        FlowScript {
            label: label.to_string(),
            phone,
            src_mac_override: None,
            uid,
            app_id: app_id.to_string(),
            flow,
            dst_mac,
            management: Management::Procfs,
            open_at_us: 0,
            first_data_delay_us: 0,
            data_packets: 0,
            data_gap_us: 0,
            lifetime_us: None,
            expect_reply: false,
        }
    }
}

/// A phone present in the trial. Phones without a monitor (guests,
/// plain hosts) still get socket tables — nobody reads them.
#[derive(Debug, Clone)]
pub struct PhonePlan {
    pub mac: Mac,
    pub cert: String,
    pub monitor: Option<MonitorPlan>,
}

#[derive(Debug, Clone)]
pub struct MonitorPlan {
    pub node: NodeKind,
    pub source: SituationSource,
    /// Installed packages: (uid, app id, signature as installed).
    pub apps: Vec<(u32, String, [u8; 32])>,
}

/// Scripted one-shot occurrences outside the flow cadence.
#[derive(Debug, Clone)]
pub enum Injection {
    /// A pre-built control frame sent over `channel_mac`'s channel
    /// (the channel certificate is looked up from that phone).
    RawFrame { msg: ControlMessage, channel_mac: Mac },
    Partition { phone: Mac, connected: bool },
    McnUpdate { phone: Mac, update: PolicyUpdate },
    NetworkChange { phone: Mac },
    WanInbound { packet: Packet, label: String },
    DeviceOutbound { packet: Packet, label: String },
    /// Records the set of cached flows not owned by `exclude_owner`.
    PfdcSnapshot { tag: String, exclude_owner: Option<Mac> },
}

#[derive(Debug, Clone)]
pub struct TrialPlan {
    pub phones: Vec<PhonePlan>,
    pub flows: Vec<FlowScript>,
    pub injections: Vec<(u64, Injection)>,
    pub end_at_us: u64,
}

// ---------------------------------------------------------------- events

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Request,
    Reply,
}

#[derive(Debug, Clone)]
struct ArrivalMeta {
    flow: Option<usize>,
    pkt: u32,
    direction: Direction,
    sent_at: u64,
    label: String,
}

#[derive(Debug, Clone)]
enum FlowAction {
    Open(usize),
    Data { flow: usize, pkt: u32 },
    Close(usize),
}

#[derive(Debug, Clone)]
enum Timer {
    Drain,
    ReplyAtPhone { flow: usize, pkt: u32, sent_at: u64 },
    PolicyInstall { phone: Mac, text: String },
    Inject(usize),
}

#[derive(Debug, Clone)]
enum Event {
    FlowAction(FlowAction),
    PacketArrival { packet: Packet, meta: ArrivalMeta },
    ControlDelivery { frame: Vec<u8>, cert: String },
    PollTick { phone: Mac },
    TimerFire(Timer),
}

struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Scheduled) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Scheduled) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Scheduled) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

// ------------------------------------------------------------- run state

struct PhoneSim {
    cert: String,
    connected: bool,
    monitor: Option<Monitor>,
    files: ProcFiles,
    tcp_entries: BTreeMap<FlowId, SockEntry>,
    udp_entries: BTreeMap<FlowId, SockEntry>,
    poll_interval_us: u64,
    prev_lines_parsed: u64,
}

struct FlowRun {
    script: FlowScript,
    closed: bool,
    first_data_arrival: Option<u64>,
    decision_stored: Option<u64>,
    detected_at: Option<u64>,
    valid_seen: bool,
    one_time_cost_violation: bool,
    verdicts: BTreeMap<&'static str, u64>,
    rtts: BTreeMap<u32, u64>,
    sent: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub injected: u64,
    pub forwarded: u64,
    pub dropped: u64,
    /// Authentication failures on the decision path, keyed by reason.
    pub decision_rejects: BTreeMap<String, u64>,
    /// Drain outcomes, keyed by `DecisionOutcome` name.
    pub outcomes: BTreeMap<String, u64>,
    pub update_rejections: u64,
    /// Control messages lost to a partition.
    pub control_lost: u64,
    /// PFDC lookups attributable to packets for non-protected MACs.
    pub unprotected_dst_pfdc_lookups: u64,
}

#[derive(Debug, Clone)]
pub struct FlowSummary {
    pub label: String,
    pub flow: FlowId,
    pub first_data_arrival: Option<u64>,
    pub decision_stored: Option<u64>,
    pub detected_at: Option<u64>,
    pub verdicts: BTreeMap<&'static str, u64>,
    pub rtts: BTreeMap<u32, u64>,
    pub sent: u32,
}

impl FlowSummary {
    /// Signed stored-minus-first-arrival; absent unless both happened.
    pub fn decision_latency_us(&self) -> Option<i64> {
        Some(self.decision_stored? as i64 - self.first_data_arrival? as i64)
    }

    pub fn verdict_count(&self, label: &'static str) -> u64 {
        self.verdicts.get(label).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct MonitorSummary {
    pub lines_parsed: u64,
    pub polls: u64,
    pub mean_actual_interval_us: Option<u64>,
    pub alerts: usize,
    pub identity_alerts: usize,
    pub replica_version: u64,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub flows: Vec<FlowSummary>,
    pub counters: Counters,
    pub label_verdicts: BTreeMap<(String, &'static str), u64>,
    pub controller_log: EventLog,
    pub controller_version: u64,
    pub monitors: BTreeMap<Mac, MonitorSummary>,
    pub snapshots: BTreeMap<String, BTreeSet<FlowId>>,
    pub pfdc_final: BTreeSet<FlowId>,
    pub pfdc_owned: BTreeMap<Mac, usize>,
    pub penalized_until: BTreeMap<Mac, u64>,
    pub rate_limited_at: Vec<u64>,
    pub syncs: Vec<(Mac, String)>,
}

impl TrialResult {
    pub fn flow(&self, label: &str) -> Option<&FlowSummary> {
        self.flows.iter().find(|f| f.label == label)
    }

    pub fn label_count(&self, label: &str, verdict: &'static str) -> u64 {
        self.label_verdicts.get(&(label.to_string(), verdict)).copied().unwrap_or(0)
    }
}

struct World {
    now: u64,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Scheduled>>,
    draws: DrawSource,
    cfg: SimParams,
    controller: Controller,
    phones: BTreeMap<Mac, PhoneSim>,
    ctl_counter: BTreeMap<Mac, u64>,
    flows: Vec<FlowRun>,
    flow_index: BTreeMap<FlowId, usize>,
    injections: Vec<Injection>,
    end_at_us: u64,
    counters: Counters,
    label_verdicts: BTreeMap<(String, &'static str), u64>,
    snapshots: BTreeMap<String, BTreeSet<FlowId>>,
    rate_limited_at: Vec<u64>,
    syncs: Vec<(Mac, String)>,
}

pub fn run_trial(
    policy: &Policy,
    plan: &TrialPlan,
    cfg: &SimParams,
    seed: u64,
    trial: u32,
) -> Result<TrialResult, SimError> {
    let mut phones = BTreeMap::new();
    for pp in &plan.phones {
        let monitor = match &pp.monitor {
            None => None,
            Some(mp) => {
                let rec = policy.phones.get(&pp.mac).ok_or(SimError::UnknownPhone(pp.mac))?;
                let mut m = Monitor::new(pp.mac, rec.credential_hash, mp.node, mp.source.clone(), policy.clone())
                    .with_udp_idle_timeout(cfg.udp_idle_ms);
                for (uid, app, sig) in &mp.apps {
                    m.install_app(*uid, app.clone(), *sig);
                }
                Some(m)
            }
        };
        let poll_interval_us = monitor
            .as_ref()
            .and_then(|m| m.poll_interval_ms())
            .unwrap_or(0)
            * 1000;
        phones.insert(
            pp.mac,
            PhoneSim {
                cert: pp.cert.clone(),
                connected: true,
                monitor,
                files: ProcFiles::new(0),
                tcp_entries: BTreeMap::new(),
                udp_entries: BTreeMap::new(),
                poll_interval_us,
                prev_lines_parsed: 0,
            },
        );
    }

    let mut world = World {
        now: 0,
        next_seq: 0,
        heap: BinaryHeap::new(),
        draws: DrawSource::new(seed, trial),
        cfg: cfg.clone(),
        controller: Controller::new(policy.clone(), cfg.controller_config()),
        phones,
        ctl_counter: BTreeMap::new(),
        flows: Vec::new(),
        flow_index: BTreeMap::new(),
        injections: plan.injections.iter().map(|(_, i)| i.clone()).collect(),
        end_at_us: plan.end_at_us,
        counters: Counters::default(),
        label_verdicts: BTreeMap::new(),
        snapshots: BTreeMap::new(),
        rate_limited_at: Vec::new(),
        syncs: Vec::new(),
    };

    for (idx, script) in plan.flows.iter().enumerate() {
        world.flow_index.insert(script.flow, idx);
        world.flows.push(FlowRun {
            script: script.clone(),
            closed: false,
            first_data_arrival: None,
            decision_stored: None,
            detected_at: None,
            valid_seen: false,
            one_time_cost_violation: false,
            verdicts: BTreeMap::new(),
            rtts: BTreeMap::new(),
            sent: 0,
        });
        world.schedule(script.open_at_us, Event::FlowAction(FlowAction::Open(idx)));
        let first = script.open_at_us + script.first_data_delay_us;
        for pkt in 0..script.data_packets {
            world.schedule(
                first + u64::from(pkt) * script.data_gap_us,
                Event::FlowAction(FlowAction::Data { flow: idx, pkt }),
            );
        }
        if let Some(lifetime) = script.lifetime_us {
            world.schedule(script.open_at_us + lifetime, Event::FlowAction(FlowAction::Close(idx)));
        }
    }
    for (i, (at, _)) in plan.injections.iter().enumerate() {
        world.schedule(*at, Event::TimerFire(Timer::Inject(i)));
    }
    let ticking: Vec<Mac> = world
        .phones
        .iter()
        .filter(|(_, p)| p.monitor.is_some() && p.poll_interval_us > 0)
        .map(|(mac, _)| *mac)
        .collect();
    for mac in ticking {
        world.schedule(0, Event::PollTick { phone: mac });
    }

    while let Some(Reverse(entry)) = world.heap.pop() {
        world.now = entry.at;
        world.handle(entry.event);
    }

    world.finish(trial)
}

impl World {
    fn schedule(&mut self, at: u64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Scheduled { at, seq, event }));
    }

    fn ctl_delay(&mut self, mac: Mac) -> u64 {
        let counter = self.ctl_counter.entry(mac).or_insert(0);
        let index = *counter;
        *counter += 1;
        self.cfg
            .control_link()
            .delay(&self.draws, &format!("ctl:{mac}"), index)
    }

    /// Queues one monitor-emitted control message, honoring partitions.
    fn send_control(&mut self, from: Mac, msg: &ControlMessage) {
        if let Some(idx) = self.flow_index.get(&msg.flow).copied() {
            if msg.msg_type == MsgType::FlowDecision && msg.flag == Flag::Validate {
                let run = &mut self.flows[idx];
                if run.detected_at.is_none() {
                    run.detected_at = Some(self.now);
                }
            }
        }
        let connected = self.phones.get(&from).map(|p| p.connected).unwrap_or(true);
        if !connected {
            self.counters.control_lost += 1;
            return;
        }
        let cert = self.phones.get(&from).map(|p| p.cert.clone()).unwrap_or_default();
        let frame = encode(msg).expect("monitor messages are well-formed");
        let delay = self.ctl_delay(from);
        self.schedule(self.now + delay, Event::ControlDelivery { frame, cert });
    }

    fn rebuild_files(&mut self, phone: Mac, protocol: Protocol) {
        let now = self.now;
        let p = self.phones.get_mut(&phone).expect("flows reference known phones");
        let (kind, entries) = match protocol {
            Protocol::Tcp => (ProcFileKind::Tcp6, &p.tcp_entries),
            Protocol::Udp => (ProcFileKind::Udp6, &p.udp_entries),
        };
        let list: Vec<SockEntry> = entries.values().copied().collect();
        p.files
            .get_mut(kind)
            .set_entries(list, now)
            .expect("scripted flows render cleanly");
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::FlowAction(action) => self.handle_flow_action(action),
            Event::PacketArrival { packet, meta } => self.handle_arrival(packet, meta),
            Event::ControlDelivery { frame, cert } => self.handle_control(frame, cert),
            Event::PollTick { phone } => self.handle_poll(phone),
            Event::TimerFire(timer) => self.handle_timer(timer),
        }
    }

    fn handle_flow_action(&mut self, action: FlowAction) {
        match action {
            FlowAction::Open(idx) => {
                let script = self.flows[idx].script.clone();
                if script.management != Management::Tunnel {
                    if let Some(p) = self.phones.get_mut(&script.phone) {
                        let entry = SockEntry {
                            flow: script.flow,
                            uid: script.uid,
                            state: SockState::Established,
                        };
                        match script.flow.protocol {
                            Protocol::Tcp => p.tcp_entries.insert(script.flow, entry),
                            Protocol::Udp => p.udp_entries.insert(script.flow, entry),
                        };
                        self.rebuild_files(script.phone, script.flow.protocol);
                    }
                }
            }
            FlowAction::Close(idx) => {
                self.flows[idx].closed = true;
                let script = self.flows[idx].script.clone();
                if script.management != Management::Tunnel {
                    if let Some(p) = self.phones.get_mut(&script.phone) {
                        match script.flow.protocol {
                            Protocol::Tcp => p.tcp_entries.remove(&script.flow),
                            Protocol::Udp => p.udp_entries.remove(&script.flow),
                        };
                        self.rebuild_files(script.phone, script.flow.protocol);
                    }
                }
            }
            FlowAction::Data { flow: idx, pkt } => {
                if self.flows[idx].closed {
                    return;
                }
                let script = self.flows[idx].script.clone();
                let src_mac = script.src_mac_override.unwrap_or(script.phone);
                let packet = Packet::new(script.flow, src_mac, script.dst_mac);
                let mut extra = 0;
                if script.management == Management::Tunnel {
                    let decision = self
                        .phones
                        .get_mut(&script.phone)
                        .and_then(|p| p.monitor.as_mut())
                        .and_then(|m| m.proxy_packet(&script.app_id, &packet, self.now));
                    if let Some(msg) = decision {
                        self.send_control(script.phone, &msg);
                    }
                    extra = self.cfg.tunnel_hop_us;
                }
                self.flows[idx].sent += 1;
                let delay = self.cfg.data_link().delay(&self.draws, "up", u64::from(pkt));
                let meta = ArrivalMeta {
                    flow: Some(idx),
                    pkt,
                    direction: Direction::Request,
                    sent_at: self.now,
                    label: script.label.clone(),
                };
                self.schedule(self.now + extra + delay, Event::PacketArrival { packet, meta });
            }
        }
    }

    fn count_verdict(&mut self, label: &str, verdict: Verdict) {
        *self
            .label_verdicts
            .entry((label.to_string(), verdict.label()))
            .or_insert(0) += 1;
        if verdict.is_forward() {
            self.counters.forwarded += 1;
        } else {
            self.counters.dropped += 1;
        }
    }

    fn handle_arrival(&mut self, packet: Packet, meta: ArrivalMeta) {
        self.counters.injected += 1;
        let protected_dst = self
            .controller
            .policy()
            .devices
            .get(&packet.dst_mac)
            .is_some_and(|d| d.protected);
        let lookups_before = self.controller.pfdc().lookup_count();
        let verdict = self.controller.enforce(&packet, self.now);
        if !protected_dst {
            self.counters.unprotected_dst_pfdc_lookups +=
                self.controller.pfdc().lookup_count() - lookups_before;
        }

        match meta.direction {
            Direction::Request => {
                self.count_verdict(&meta.label, verdict);
                if let Some(idx) = meta.flow {
                    let run = &mut self.flows[idx];
                    if run.first_data_arrival.is_none() {
                        run.first_data_arrival = Some(self.now);
                    }
                    *run.verdicts.entry(verdict.label()).or_insert(0) += 1;
                    match verdict {
                        Verdict::Forward(ForwardReason::Valid) => run.valid_seen = true,
                        Verdict::Drop(DropReason::NoDecision) if run.valid_seen => {
                            run.one_time_cost_violation = true;
                        }
                        _ => {}
                    }
                    if verdict.is_forward() && run.script.expect_reply {
                        let reply = packet.reply();
                        let lan = self.cfg.lan_link();
                        let delay = lan.delay(&self.draws, "lan_dn", u64::from(meta.pkt))
                            + lan.delay(&self.draws, "lan_up", u64::from(meta.pkt));
                        let reply_meta = ArrivalMeta {
                            direction: Direction::Reply,
                            label: format!("{}:reply", meta.label),
                            ..meta
                        };
                        self.schedule(
                            self.now + delay,
                            Event::PacketArrival { packet: reply, meta: reply_meta },
                        );
                    }
                }
            }
            Direction::Reply => {
                self.count_verdict(&meta.label, verdict);
                if verdict.is_forward() {
                    if let Some(idx) = meta.flow {
                        let tunnel_hop = if self.flows[idx].script.management == Management::Tunnel
                        {
                            self.cfg.tunnel_hop_us
                        } else {
                            0
                        };
                        let delay =
                            self.cfg.data_link().delay(&self.draws, "down", u64::from(meta.pkt));
                        self.schedule(
                            self.now + delay + tunnel_hop,
                            Event::TimerFire(Timer::ReplyAtPhone {
                                flow: idx,
                                pkt: meta.pkt,
                                sent_at: meta.sent_at,
                            }),
                        );
                    }
                }
            }
        }
    }

    fn handle_control(&mut self, frame: Vec<u8>, cert: String) {
        match decode(&frame) {
            Ok(msg) if msg.msg_type == MsgType::PolicyUpdate => {
                match self.controller.policy_update_service(&msg, &cert, self.now) {
                    Ok((_version, body)) => {
                        let text = String::from_utf8(body).expect("policies render as UTF-8");
                        let targets: Vec<Mac> = self
                            .phones
                            .iter()
                            .filter(|(mac, p)| {
                                **mac != msg.phone_mac && p.connected && p.monitor.is_some()
                            })
                            .map(|(mac, _)| *mac)
                            .collect();
                        for mac in targets {
                            let delay = self.ctl_delay(mac);
                            self.schedule(
                                self.now + delay,
                                Event::TimerFire(Timer::PolicyInstall {
                                    phone: mac,
                                    text: text.clone(),
                                }),
                            );
                        }
                    }
                    Err(_) => self.counters.update_rejections += 1,
                }
            }
            _ => match self.controller.receive_decision(&frame, &cert, self.now) {
                Ok(()) => self.schedule(self.now, Event::TimerFire(Timer::Drain)),
                Err(e) => {
                    let reason = match e {
                        crate::controller::DecisionError::Rejected(r) => format!("{r:?}"),
                        other => format!("{other}"),
                    };
                    *self.counters.decision_rejects.entry(reason).or_insert(0) += 1;
                }
            },
        }
    }

    fn handle_poll(&mut self, phone: Mac) {
        let now = self.now;
        let Some(p) = self.phones.get_mut(&phone) else { return };
        let Some(monitor) = p.monitor.as_mut() else { return };
        let msgs = monitor.process_poll(&p.files, now);
        let lines = monitor.poll_stats.lines_parsed;
        let work = (lines - p.prev_lines_parsed) * self.cfg.parse_cost_us_per_line;
        p.prev_lines_parsed = lines;
        let interval = p.poll_interval_us;
        for msg in msgs {
            self.send_control(phone, &msg);
        }
        // Overrun: a poll that outlasts its interval pushes the next
        // one back instead of bursting to catch up.
        let next = now + interval.max(work);
        if next <= self.end_at_us {
            self.schedule(next, Event::PollTick { phone });
        }
    }

    fn handle_timer(&mut self, timer: Timer) {
        match timer {
            Timer::Drain => {
                let applied = self.controller.drain_decisions(self.now);
                for a in applied {
                    *self
                        .counters
                        .outcomes
                        .entry(format!("{:?}", a.outcome))
                        .or_insert(0) += 1;
                    match a.outcome {
                        DecisionOutcome::Stored => {
                            if let Some(idx) = self.flow_index.get(&a.flow).copied() {
                                let run = &mut self.flows[idx];
                                if run.decision_stored.is_none() {
                                    run.decision_stored = Some(a.at_us);
                                }
                            }
                        }
                        DecisionOutcome::Removed => {
                            if let Some(idx) = self.flow_index.get(&a.flow).copied() {
                                // Invalidation resets the one-time-cost
                                // expectation for this flow.
                                self.flows[idx].valid_seen = false;
                            }
                        }
                        DecisionOutcome::RateLimited => self.rate_limited_at.push(a.at_us),
                        _ => {}
                    }
                }
            }
            Timer::ReplyAtPhone { flow, pkt, sent_at } => {
                self.flows[flow].rtts.insert(pkt, self.now - sent_at);
            }
            Timer::PolicyInstall { phone, text } => {
                let now = self.now;
                let Some(p) = self.phones.get_mut(&phone) else { return };
                let Some(monitor) = p.monitor.as_mut() else { return };
                let Ok(policy) = parse_policy(&text) else { return };
                let invalidations = monitor.install_policy(policy, now);
                for msg in invalidations {
                    self.send_control(phone, &msg);
                }
            }
            Timer::Inject(i) => self.handle_injection(self.injections[i].clone()),
        }
    }

    fn handle_injection(&mut self, injection: Injection) {
        match injection {
            Injection::RawFrame { msg, channel_mac } => {
                let cert = self
                    .phones
                    .get(&channel_mac)
                    .map(|p| p.cert.clone())
                    .unwrap_or_else(|| format!("cert-{channel_mac}"));
                let frame = encode(&msg).expect("scripted frames are well-formed");
                let delay = self.ctl_delay(channel_mac);
                self.schedule(self.now + delay, Event::ControlDelivery { frame, cert });
            }
            Injection::Partition { phone, connected } => {
                if let Some(p) = self.phones.get_mut(&phone) {
                    p.connected = connected;
                }
            }
            Injection::McnUpdate { phone, update } => {
                let now = self.now;
                let pushed = {
                    let connected = self.phones.get(&phone).map(|p| p.connected).unwrap_or(false);
                    let cert = self.phones.get(&phone).map(|p| p.cert.clone()).unwrap_or_default();
                    let Some(p) = self.phones.get_mut(&phone) else { return };
                    let Some(monitor) = p.monitor.as_mut() else { return };
                    let mut link = WorldLink {
                        controller: &mut self.controller,
                        connected,
                        cert,
                        now_us: now,
                    };
                    monitor.mcn_push_update(&update, &mut link, now)
                };
                match pushed {
                    Ok((_version, invalidations)) => {
                        for msg in invalidations {
                            self.send_control(phone, &msg);
                        }
                        let text = self.controller.policy_text();
                        let targets: Vec<Mac> = self
                            .phones
                            .iter()
                            .filter(|(mac, p)| **mac != phone && p.connected && p.monitor.is_some())
                            .map(|(mac, _)| *mac)
                            .collect();
                        for mac in targets {
                            let delay = self.ctl_delay(mac);
                            self.schedule(
                                self.now + delay,
                                Event::TimerFire(Timer::PolicyInstall {
                                    phone: mac,
                                    text: text.clone(),
                                }),
                            );
                        }
                    }
                    Err(_) => self.counters.update_rejections += 1,
                }
            }
            Injection::NetworkChange { phone } => {
                let now = self.now;
                let outcome = {
                    let connected = self.phones.get(&phone).map(|p| p.connected).unwrap_or(false);
                    let cert = self.phones.get(&phone).map(|p| p.cert.clone()).unwrap_or_default();
                    let Some(p) = self.phones.get_mut(&phone) else { return };
                    let Some(monitor) = p.monitor.as_mut() else { return };
                    let mut link = WorldLink {
                        controller: &mut self.controller,
                        connected,
                        cert,
                        now_us: now,
                    };
                    monitor.on_network_change(&mut link, now)
                };
                match outcome {
                    Ok(SyncAction::Synced { from, to, invalidations }) => {
                        self.syncs.push((phone, format!("synced {from}->{to}")));
                        for msg in invalidations {
                            self.send_control(phone, &msg);
                        }
                    }
                    Ok(SyncAction::UpToDate) => self.syncs.push((phone, "up_to_date".into())),
                    Ok(SyncAction::Unreachable) => self.syncs.push((phone, "unreachable".into())),
                    Err(e) => self.syncs.push((phone, format!("error: {e}"))),
                }
            }
            Injection::WanInbound { packet, label } => {
                self.counters.injected += 1;
                let verdict = self.controller.nat_filter(&packet, self.now);
                self.count_verdict(&label, verdict);
            }
            Injection::DeviceOutbound { packet, label } => {
                self.counters.injected += 1;
                let verdict = self.controller.enforce(&packet, self.now);
                self.count_verdict(&label, verdict);
                if verdict.is_forward() {
                    self.controller.nat_outbound(&packet);
                }
            }
            Injection::PfdcSnapshot { tag, exclude_owner } => {
                let set: BTreeSet<FlowId> = self
                    .controller
                    .pfdc()
                    .entries()
                    .filter(|e| exclude_owner != Some(e.owner_phone))
                    .map(|e| e.flow)
                    .collect();
                self.snapshots.insert(tag, set);
            }
        }
    }

    fn finish(mut self, trial: u32) -> Result<TrialResult, SimError> {
        if self.counters.injected != self.counters.forwarded + self.counters.dropped {
            return Err(SimError::Invariant {
                trial,
                msg: format!(
                    "conservation: injected {} != forwarded {} + dropped {}",
                    self.counters.injected, self.counters.forwarded, self.counters.dropped
                ),
            });
        }
        for run in &self.flows {
            if run.one_time_cost_violation {
                return Err(SimError::Invariant {
                    trial,
                    msg: format!(
                        "one-time cost: flow {} dropped NoDecision after Forward(Valid)",
                        run.script.label
                    ),
                });
            }
        }

        let flows = self
            .flows
            .iter()
            .map(|run| FlowSummary {
                label: run.script.label.clone(),
                flow: run.script.flow,
                first_data_arrival: run.first_data_arrival,
                decision_stored: run.decision_stored,
                detected_at: run.detected_at,
                verdicts: run.verdicts.clone(),
                rtts: run.rtts.clone(),
                sent: run.sent,
            })
            .collect();

        let mut monitors = BTreeMap::new();
        for (mac, p) in &self.phones {
            let Some(m) = &p.monitor else { continue };
            let stats = &m.poll_stats;
            let mean = if stats.actual_intervals_us.is_empty() {
                None
            } else {
                Some(stats.actual_intervals_us.iter().sum::<u64>() / stats.actual_intervals_us.len() as u64)
            };
            monitors.insert(
                *mac,
                MonitorSummary {
                    lines_parsed: stats.lines_parsed,
                    polls: stats.polls,
                    mean_actual_interval_us: mean,
                    alerts: m.alerts().len(),
                    identity_alerts: m
                        .alerts()
                        .iter()
                        .filter(|a| a.reason == crate::monitor::AlertReason::IdentityMismatch)
                        .count(),
                    replica_version: m.replica_version(),
                },
            );
        }

        let pfdc_final: BTreeSet<FlowId> =
            self.controller.pfdc().entries().map(|e| e.flow).collect();
        let mut pfdc_owned: BTreeMap<Mac, usize> = BTreeMap::new();
        for e in self.controller.pfdc().entries() {
            *pfdc_owned.entry(e.owner_phone).or_insert(0) += 1;
        }
        let penalized_until: BTreeMap<Mac, u64> = self
            .phones
            .keys()
            .filter_map(|mac| Some((*mac, self.controller.penalty_box().penalized_until(*mac)?)))
            .collect();
        let controller_version = self.controller.version();
        let controller_log = self.controller.take_log();

        Ok(TrialResult {
            flows,
            counters: self.counters,
            label_verdicts: self.label_verdicts,
            controller_log,
            controller_version,
            monitors,
            snapshots: self.snapshots,
            pfdc_final,
            pfdc_owned,
            penalized_until,
            rate_limited_at: self.rate_limited_at,
            syncs: self.syncs,
        })
    }
}

/// Synchronous request/response view of the router, honoring the
/// phone's partition state. Flow decisions never travel through this.
struct WorldLink<'a> {
    controller: &'a mut Controller,
    connected: bool,
    cert: String,
    now_us: u64,
}

impl RouterLink for WorldLink<'_> {
    fn version_query(&mut self, _msg: &ControlMessage) -> Option<u64> {
        self.connected.then(|| self.controller.version())
    }

    fn request_policy(&mut self, _msg: &ControlMessage) -> Option<Result<Vec<u8>, String>> {
        self.connected
            .then(|| Ok(self.controller.policy_text().into_bytes()))
    }

    fn push_update(&mut self, msg: &ControlMessage) -> Option<Result<u64, String>> {
        if !self.connected {
            return None;
        }
        Some(
            self.controller
                .policy_update_service(msg, &self.cert, self.now_us)
                .map(|(v, _)| v)
                .map_err(|e| e.to_string()),
        )
    }
}
