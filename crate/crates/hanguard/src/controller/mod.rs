//! Router-side Controller: decision intake, the per-flow cache, and the
//! packet enforcement pipeline.
//!
//! Enforcement order is fixed and observable through verdict reasons:
//! (1) penalty box, then source-address validation, (2) the
//! interesting-flow triage on the destination MAC — non-protected
//! destinations forward with zero cache consultation, (3) the
//! phone-level (TE) check, (4) the app-level check against the cache.
//!
//! Decision intake mirrors the kernel-notification split: the control
//! channel authenticates and enqueues; `drain_decisions` — scheduled by
//! the embedding as its own event — applies queued decisions in arrival
//! order. A Validate from a phone whose role cannot reach the target
//! device is rejected at that point (a compromised phone can forge
//! message contents, but not its role), and accepted inserts feed the
//! rate limiter that backs the flood penalty.

mod nat;
mod penalty;
mod pfdc;

pub use nat::NatTable;
pub use penalty::{PenaltyBox, RateLimiter};
pub use pfdc::{Pfdc, PfdcEntry};

use std::collections::VecDeque;
use std::path::PathBuf;

use thiserror::Error;

use crate::eventlog::EventLog;
use crate::mac::Mac;
use crate::packet::Packet;
use crate::policy::{parse_update, render_policy, Policy, UpdateRejected};
use crate::proto::{authenticate, decode, AuthResult, CodecError, ControlMessage, Flag, MsgType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForwardReason {
    NotInteresting,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    NoDecision,
    PhoneLevelDeny,
    Penalized,
    SpoofSuspected,
    NatBlocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Forward(ForwardReason),
    Drop(DropReason),
}

impl Verdict {
    pub fn is_forward(&self) -> bool {
        matches!(self, Verdict::Forward(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Forward(ForwardReason::NotInteresting) => "forward_not_interesting",
            Verdict::Forward(ForwardReason::Valid) => "forward_valid",
            Verdict::Drop(DropReason::NoDecision) => "drop_no_decision",
            Verdict::Drop(DropReason::PhoneLevelDeny) => "drop_phone_level",
            Verdict::Drop(DropReason::Penalized) => "drop_penalized",
            Verdict::Drop(DropReason::SpoofSuspected) => "drop_spoof",
            Verdict::Drop(DropReason::NatBlocked) => "drop_nat",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecisionError {
    #[error("malformed frame: {0}")]
    Malformed(CodecError),
    #[error("authentication failed: {0:?}")]
    Rejected(AuthResult),
    #[error("unexpected message type {0:?} on the decision path")]
    WrongType(MsgType),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UpdateServiceError {
    #[error("authentication failed: {0:?}")]
    Rejected(AuthResult),
    #[error("update body unreadable: {0}")]
    BadBody(String),
    #[error("{0}")]
    PolicyRejected(UpdateRejected),
    #[error("persistence failed: {0}")]
    Persistence(String),
}

/// What happened to one queued decision when the worker applied it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionOutcome {
    Stored,
    Removed,
    RemovedAbsent,
    RejectedUnknownDevice,
    RejectedPhoneLevel,
    RejectedOwnerMismatch,
    DroppedPenalized,
    RateLimited,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppliedDecision {
    pub flow: crate::proto::FlowId,
    pub flag: Flag,
    pub owner: Mac,
    pub outcome: DecisionOutcome,
    pub at_us: u64,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub pfdc_capacity: usize,
    pub per_phone_limit: usize,
    pub rate_window_us: u64,
    pub rate_threshold: u32,
    pub penalty_duration_us: u64,
    /// Baseline mode: the enforcement pipeline forwards everything.
    pub vanilla: bool,
    /// Where the policy text is persisted on accepted updates; `None`
    /// keeps the policy in memory only.
    pub persist_path: Option<PathBuf>,
}

impl Default for ControllerConfig {
    fn default() -> ControllerConfig {
        ControllerConfig {
            pfdc_capacity: 1024,
            per_phone_limit: 64,
            rate_window_us: 10_000_000,
            rate_threshold: 100,
            penalty_duration_us: 300_000_000,
            vanilla: false,
            persist_path: None,
        }
    }
}

pub struct Controller {
    policy: Policy,
    config: ControllerConfig,
    pfdc: Pfdc,
    queue: VecDeque<(ControlMessage, u64)>,
    rate: RateLimiter,
    penalty: PenaltyBox,
    nat: NatTable,
    log: EventLog,
}

impl Controller {
    pub fn new(policy: Policy, config: ControllerConfig) -> Controller {
        Controller {
            pfdc: Pfdc::new(config.pfdc_capacity, config.per_phone_limit),
            rate: RateLimiter::new(config.rate_window_us, config.rate_threshold),
            penalty: PenaltyBox::new(),
            nat: NatTable::new(),
            log: EventLog::new(),
            queue: VecDeque::new(),
            policy,
            config,
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn version(&self) -> u64 {
        self.policy.version
    }

    pub fn pfdc(&self) -> &Pfdc {
        &self.pfdc
    }

    pub fn penalty_box(&self) -> &PenaltyBox {
        &self.penalty
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn take_log(&mut self) -> EventLog {
        std::mem::take(&mut self.log)
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_vanilla(&self) -> bool {
        self.config.vanilla
    }

    /// Control-channel intake: decode, authenticate, enqueue. The queue
    /// is drained by [`Controller::drain_decisions`]; rejected frames
    /// never reach it and raise an admin notification.
    pub fn receive_decision(
        &mut self,
        frame: &[u8],
        channel_cert: &str,
        now_us: u64,
    ) -> Result<(), DecisionError> {
        let msg = match decode(frame) {
            Ok(msg) => msg,
            Err(e) => {
                self.log.notify_admin(now_us, "decision_malformed", e.to_string());
                return Err(DecisionError::Malformed(e));
            }
        };
        if msg.msg_type != MsgType::FlowDecision {
            self.log
                .notify_admin(now_us, "decision_wrong_type", format!("{:?}", msg.msg_type));
            return Err(DecisionError::WrongType(msg.msg_type));
        }
        match authenticate(&msg, channel_cert, &self.policy) {
            AuthResult::Ok => {
                self.queue.push_back((msg, now_us));
                Ok(())
            }
            failure => {
                self.log.notify_admin(
                    now_us,
                    "decision_rejected",
                    format!("{failure:?} phone={} flow={}", msg.phone_mac, msg.flow),
                );
                Err(DecisionError::Rejected(failure))
            }
        }
    }

    /// The decision worker: applies every queued decision in arrival
    /// order. Validate inserts must target a device the sender's role
    /// can reach; Invalidate must come from the entry's owner.
    pub fn drain_decisions(&mut self, now_us: u64) -> Vec<AppliedDecision> {
        let mut applied = Vec::new();
        while let Some((msg, _received_at)) = self.queue.pop_front() {
            let outcome = self.apply_decision(&msg, now_us);
            applied.push(AppliedDecision {
                flow: msg.flow,
                flag: msg.flag,
                owner: msg.phone_mac,
                outcome,
                at_us: now_us,
            });
        }
        applied
    }

    fn apply_decision(&mut self, msg: &ControlMessage, now_us: u64) -> DecisionOutcome {
        if self.penalty.is_penalized(msg.phone_mac, now_us) {
            return DecisionOutcome::DroppedPenalized;
        }
        match msg.flag {
            Flag::Validate => {
                let Some(device_mac) = msg
                    .flow
                    .dst_v4()
                    .and_then(|ip| self.policy.device_by_ip(ip))
                    .map(|d| d.mac)
                else {
                    self.log.notify_admin(
                        now_us,
                        "decision_unknown_device",
                        format!("phone={} flow={}", msg.phone_mac, msg.flow),
                    );
                    return DecisionOutcome::RejectedUnknownDevice;
                };
                let role = self.policy.effective_role(msg.phone_mac);
                if !self.policy.te_check(role, device_mac).unwrap_or(false) {
                    self.log.notify_admin(
                        now_us,
                        "decision_phone_level_reject",
                        format!("phone={} flow={}", msg.phone_mac, msg.flow),
                    );
                    return DecisionOutcome::RejectedPhoneLevel;
                }
                if self.rate.record_insert(msg.phone_mac, now_us) {
                    let until = now_us + self.config.penalty_duration_us;
                    self.penalty.penalize(msg.phone_mac, until);
                    self.log.notify_admin(
                        now_us,
                        "rate_penalty",
                        format!("phone={} until_us={until}", msg.phone_mac),
                    );
                    return DecisionOutcome::RateLimited;
                }
                let evicted = self.pfdc.insert(PfdcEntry {
                    flow: msg.flow,
                    flag: Flag::Validate,
                    requesting_app: msg.app_id.clone(),
                    last_seen_us: now_us,
                    owner_phone: msg.phone_mac,
                });
                for flow in evicted {
                    self.log.record(now_us, "controller", "pfdc_evict", flow.to_string());
                }
                DecisionOutcome::Stored
            }
            Flag::Invalidate => match self.pfdc.lookup(&msg.flow).map(|e| e.owner_phone) {
                None => DecisionOutcome::RemovedAbsent,
                Some(owner) if owner != msg.phone_mac => {
                    self.log.notify_admin(
                        now_us,
                        "decision_owner_mismatch",
                        format!("phone={} flow={}", msg.phone_mac, msg.flow),
                    );
                    DecisionOutcome::RejectedOwnerMismatch
                }
                Some(_) => {
                    self.pfdc.remove(&msg.flow);
                    DecisionOutcome::Removed
                }
            },
        }
    }

    /// Source-address validation: a claimed (MAC, IP) pair must agree
    /// with the policy's reservations in both directions.
    pub fn spoof_check(&self, src_mac: Mac, src_ip: std::net::Ipv4Addr) -> bool {
        if let Some(phone) = self.policy.phones.get(&src_mac) {
            if phone.reserved_ip != src_ip {
                return false;
            }
        }
        if let Some(device) = self.policy.devices.get(&src_mac) {
            if device.ip != src_ip {
                return false;
            }
        }
        let ip_owner_mac = self
            .policy
            .phones
            .values()
            .find(|p| p.reserved_ip == src_ip)
            .map(|p| p.mac)
            .or_else(|| self.policy.devices.values().find(|d| d.ip == src_ip).map(|d| d.mac));
        match ip_owner_mac {
            Some(mac) => mac == src_mac,
            None => true,
        }
    }

    /// The per-packet pipeline. See the module docs for the check
    /// order; in vanilla mode every packet forwards untouched.
    pub fn enforce(&mut self, packet: &Packet, now_us: u64) -> Verdict {
        if self.config.vanilla {
            return Verdict::Forward(ForwardReason::NotInteresting);
        }
        // (1) penalty box: all packets from a penalized phone drop.
        if self.penalty.is_penalized(packet.src_mac, now_us) {
            return Verdict::Drop(DropReason::Penalized);
        }
        // Source-address validation (reserved IP/MAC agreement).
        if let Some(src_ip) = packet.flow.src_v4() {
            if !self.spoof_check(packet.src_mac, src_ip) {
                self.log.notify_admin(
                    now_us,
                    "spoof_detected",
                    format!("mac={} ip={}", packet.src_mac, src_ip),
                );
                return Verdict::Drop(DropReason::SpoofSuspected);
            }
        }
        // (2) interesting-flow triage on the destination MAC. Flows to
        // anything but a protected device forward with no cache work.
        let Some(device) = self.policy.devices.get(&packet.dst_mac).filter(|d| d.protected) else {
            return Verdict::Forward(ForwardReason::NotInteresting);
        };
        let device_mac = device.mac;
        // (3) phone-level check on the sender's role.
        let role = self.policy.effective_role(packet.src_mac);
        if !self.policy.te_check(role, device_mac).unwrap_or(false) {
            return Verdict::Drop(DropReason::PhoneLevelDeny);
        }
        // (4) app-level check: the cached per-flow decision.
        match self.pfdc.lookup(&packet.flow) {
            Some(entry) if entry.flag == Flag::Validate => {
                self.pfdc.touch(&packet.flow, now_us);
                Verdict::Forward(ForwardReason::Valid)
            }
            _ => Verdict::Drop(DropReason::NoDecision),
        }
    }

    /// WAN-side gate: outbound flows open pinholes, inbound flows must
    /// match one exactly.
    pub fn nat_outbound(&mut self, packet: &Packet) {
        self.nat.record_outbound(&packet.flow);
    }

    pub fn nat_filter(&mut self, inbound: &Packet, now_us: u64) -> Verdict {
        if self.nat.admits_inbound(&inbound.flow) {
            Verdict::Forward(ForwardReason::NotInteresting)
        } else {
            self.log.record(now_us, "controller", "nat_blocked", inbound.flow.to_string());
            Verdict::Drop(DropReason::NatBlocked)
        }
    }

    /// Handles a PolicyUpdate message: authenticate, apply, persist,
    /// answer with the new version and the serialized policy for
    /// pushing to reachable Monitors. Any failure leaves the active
    /// policy untouched and notifies the admin.
    pub fn policy_update_service(
        &mut self,
        msg: &ControlMessage,
        channel_cert: &str,
        now_us: u64,
    ) -> Result<(u64, Vec<u8>), UpdateServiceError> {
        let auth = authenticate(msg, channel_cert, &self.policy);
        if auth != AuthResult::Ok {
            self.log.notify_admin(
                now_us,
                "update_rejected",
                format!("{auth:?} phone={}", msg.phone_mac),
            );
            return Err(UpdateServiceError::Rejected(auth));
        }
        let text = std::str::from_utf8(&msg.body)
            .map_err(|_| UpdateServiceError::BadBody("not UTF-8".into()))?;
        let update = parse_update(text).map_err(|e| UpdateServiceError::BadBody(e.to_string()))?;
        let next = match self.policy.apply_update(&update, msg.phone_mac) {
            Ok(next) => next,
            Err(e) => {
                self.log.notify_admin(
                    now_us,
                    "update_rejected",
                    format!("{e} phone={}", msg.phone_mac),
                );
                return Err(UpdateServiceError::PolicyRejected(e));
            }
        };
        let rendered = render_policy(&next);
        self.persist(&rendered)
            .map_err(UpdateServiceError::Persistence)?;
        self.policy = next;
        self.log.record(
            now_us,
            "controller",
            "policy_updated",
            format!("version={}", self.policy.version),
        );
        Ok((self.policy.version, rendered.into_bytes()))
    }

    /// Write-through persistence: temp file in the same directory, then
    /// rename. No configured path means in-memory operation.
    fn persist(&self, text: &str) -> Result<(), String> {
        let Some(path) = &self.config.persist_path else {
            return Ok(());
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| e.to_string())?;
        std::fs::rename(&tmp, path).map_err(|e| e.to_string())
    }

    pub fn policy_text(&self) -> String {
        render_policy(&self.policy)
    }

    pub fn notify_admin(&mut self, now_us: u64, event: &str, detail: impl Into<String>) {
        self.log.notify_admin(now_us, event, detail);
    }
}
