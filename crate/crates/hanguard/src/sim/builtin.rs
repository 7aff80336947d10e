//! The builtin scenario corpus.
//!
//! Ten named scenarios cover the threat cases and benchmarks: S1
//! unauthorized app, S2 repackaged app, S3 guest phone, S4 compromised
//! phone (forged rules, policy tamper, cache flood), S5 decision
//! latency, S6 detection accuracy, S7 stale-version replay after a
//! partition, S8 remote adversary vs NAT, S9 spoofing, S10
//! managed/unmanaged overhead. Each has a plan builder, a metric
//! extractor, and an assessment that turns expectations into failure
//! strings.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use crate::mac::Mac;
use crate::monitor::{NodeKind, SituationSource};
use crate::packet::Packet;
use crate::policy::{
    credential_hash, AppRecord, DeviceRecord, PhoneRecord, Policy, PolicyChange, PolicyUpdate,
    Subnet,
};
use crate::proto::{ControlMessage, Flag, FlowId, MsgType, Protocol};

use super::link::DrawSource;
use super::metrics::MetricsReport;
use super::scenario::{Management, Scenario, SimParams, Topology, DEFAULT_SEED};
use super::world::{
    FlowScript, Injection, MonitorPlan, PhonePlan, TrialPlan, TrialResult,
};

const PHONE_A1: Mac = Mac([0x0a, 0, 0, 0, 0, 0xa1]); // admin / MCN
const PHONE_B1: Mac = Mac([0x0a, 0, 0, 0, 0, 0xb1]); // household member
const PHONE_B2: Mac = Mac([0x0a, 0, 0, 0, 0, 0xb2]); // tunnel-managed phone
const PHONE_G1: Mac = Mac([0x0a, 0, 0, 0, 0, 0xc1]); // registered guest
const PHONE_UNKNOWN: Mac = Mac([0x0a, 0, 0, 0, 0, 0xe1]); // never registered

const DEV_SWITCH: Mac = Mac([0x0d, 0, 0, 0, 0, 0x01]);
const DEV_PLUG: Mac = Mac([0x0d, 0, 0, 0, 0, 0x02]);
const DEV_BULB: Mac = Mac([0x0d, 0, 0, 0, 0, 0x03]);
const DEV_MOTION: Mac = Mac([0x0d, 0, 0, 0, 0, 0x04]);
const DEV_CAMERA: Mac = Mac([0x0d, 0, 0, 0, 0, 0x05]);
const DEV_LAPTOP: Mac = Mac([0x0d, 0, 0, 0, 0, 0x63]);
const WAN_GATEWAY: Mac = Mac([0xee, 0, 0, 0, 0, 0x01]);

const IP_A1: Ipv4Addr = Ipv4Addr::new(192, 168, 1, 10);
const IP_B1: Ipv4Addr = Ipv4Addr::new(192, 168, 1, 11);
const IP_G1: Ipv4Addr = Ipv4Addr::new(192, 168, 1, 12);
const IP_B2: Ipv4Addr = Ipv4Addr::new(192, 168, 1, 13);
const IP_SWITCH: Ipv4Addr = Ipv4Addr::new(192, 168, 2, 1);
const IP_PLUG: Ipv4Addr = Ipv4Addr::new(192, 168, 2, 2);
const IP_BULB: Ipv4Addr = Ipv4Addr::new(192, 168, 2, 3);
const IP_MOTION: Ipv4Addr = Ipv4Addr::new(192, 168, 2, 4);
const IP_CAMERA: Ipv4Addr = Ipv4Addr::new(192, 168, 2, 5);
const IP_LAPTOP: Ipv4Addr = Ipv4Addr::new(192, 168, 1, 99);
const IP_REMOTE_A: Ipv4Addr = Ipv4Addr::new(203, 0, 113, 7);
const IP_REMOTE_B: Ipv4Addr = Ipv4Addr::new(198, 51, 100, 9);

/// Three actuators and one sensor, all protected.
const PROTECTED: [(Mac, Ipv4Addr); 4] = [
    (DEV_SWITCH, IP_SWITCH),
    (DEV_PLUG, IP_PLUG),
    (DEV_BULB, IP_BULB),
    (DEV_MOTION, IP_MOTION),
];

pub const OFFICIAL_APP: &str = "com.vendor.homehub";
pub const OFFICIAL_SIG: [u8; 32] = [0x11; 32];
pub const ATTACKER_APP: &str = "com.adware.flashlight";
const ATTACKER_SIG: [u8; 32] = [0x22; 32];
const REPACKAGED_SIG: [u8; 32] = [0x33; 32];
const UID_OFFICIAL: u32 = 10_001;
const UID_ATTACKER: u32 = 10_002;
const UID_REPACKAGED: u32 = 10_003;
const CATEGORY: &str = "home_auto";

const LATENCY_INTERVALS_MS: [u64; 3] = [10, 30, 100];
const DETECTION_INTERVALS_MS: [u64; 4] = [10, 30, 100, 150];

fn phone(mac: Mac, ip: Ipv4Addr, user: &str, role: &str, cert: &str, is_mcn: bool) -> PhoneRecord {
    PhoneRecord {
        mac,
        reserved_ip: ip,
        role: role.to_string(),
        user: user.to_string(),
        credential_hash: credential_hash(user, &format!("{user}-pw")),
        cert_id: cert.to_string(),
        is_mcn,
    }
}

fn device(mac: Mac, ip: Ipv4Addr, device_type: &str, protected: bool) -> DeviceRecord {
    DeviceRecord {
        mac,
        ip,
        device_type: device_type.to_string(),
        categories: BTreeSet::new(),
        protected,
        subnet: if protected { Subnet::Iot } else { Subnet::Phones },
    }
}

fn base_topology() -> Topology {
    Topology {
        phones: vec![
            phone(PHONE_A1, IP_A1, "alice", "", "cert-a1", true),
            phone(PHONE_B1, IP_B1, "bob", "", "cert-b1", false),
        ],
        devices: vec![
            device(DEV_SWITCH, IP_SWITCH, "switch_t", true),
            device(DEV_PLUG, IP_PLUG, "plug_t", true),
            device(DEV_BULB, IP_BULB, "bulb_t", true),
            device(DEV_MOTION, IP_MOTION, "motion_t", true),
            device(DEV_LAPTOP, IP_LAPTOP, "laptop_t", false),
        ],
        apps: vec![
            AppRecord {
                app_id: OFFICIAL_APP.to_string(),
                signature: OFFICIAL_SIG,
                categories: BTreeSet::new(),
            },
            AppRecord {
                app_id: ATTACKER_APP.to_string(),
                signature: ATTACKER_SIG,
                categories: BTreeSet::new(),
            },
        ],
        bindings: PROTECTED
            .iter()
            .map(|(mac, _)| (OFFICIAL_APP.to_string(), *mac, CATEGORY.to_string()))
            .collect(),
        post_updates: Vec::new(),
    }
}

pub fn builtin(name: &str) -> Option<Scenario> {
    let mut scenario = Scenario {
        name: name.to_string(),
        topology: base_topology(),
        trials: 3,
        seed: DEFAULT_SEED,
        params: SimParams::default(),
    };
    match name {
        "S1" | "S2" | "S7" | "S8" | "S9" => {}
        "S3" => {
            scenario
                .topology
                .phones
                .push(phone(PHONE_G1, IP_G1, "gina", "Guest", "cert-g1", false));
        }
        "S4" => {
            scenario
                .topology
                .devices
                .push(device(DEV_CAMERA, IP_CAMERA, "camera_t", true));
            // Carve cameras out of the Home domain: household members
            // lose phone-level access, the admin (domain wildcard)
            // keeps it.
            scenario.topology.post_updates.push(PolicyUpdate {
                changes: vec![
                    PolicyChange::AddDomain {
                        name: "cameras_d".to_string(),
                        types: ["camera_t".to_string()].into(),
                    },
                    PolicyChange::RemoveType {
                        domain: "Home".to_string(),
                        device_type: "camera_t".to_string(),
                    },
                ],
            });
        }
        "S5" | "S6" => scenario.trials = 10,
        "S10" => {
            scenario
                .topology
                .phones
                .push(phone(PHONE_B2, IP_B2, "beth", "", "cert-b2", false));
        }
        _ => return None,
    }
    Some(scenario)
}

/// Total trials to run: the two benchmarks sweep their interval grid
/// unless `poll_ms` pins a single configuration.
pub fn trial_count(scenario: &Scenario) -> u32 {
    let configs = match (scenario.name.as_str(), scenario.params.poll_ms) {
        ("S5", None) => LATENCY_INTERVALS_MS.len() as u32,
        ("S6", None) => DETECTION_INTERVALS_MS.len() as u32,
        _ => 1,
    };
    configs * scenario.trials.max(1)
}

/// The polling interval trial `trial` runs at. Benchmarks map the
/// global trial index onto their interval grid; everything else polls
/// every 10 ms unless overridden.
pub fn poll_interval_ms(scenario: &Scenario, trial: u32) -> u64 {
    if let Some(ms) = scenario.params.poll_ms {
        return ms;
    }
    let per = scenario.trials.max(1);
    match scenario.name.as_str() {
        "S5" => LATENCY_INTERVALS_MS[((trial / per) as usize) % LATENCY_INTERVALS_MS.len()],
        "S6" => DETECTION_INTERVALS_MS[((trial / per) as usize) % DETECTION_INTERVALS_MS.len()],
        _ => 10,
    }
}

fn poll_source(scenario: &Scenario, trial: u32) -> SituationSource {
    SituationSource::ProcfsPoll {
        interval_ms: poll_interval_ms(scenario, trial),
        strategy: scenario.params.strategy,
    }
}

/// A1 (admin, MCN) with the official app; B1 with both the official
/// and the attacker-controlled app installed.
fn standard_phones(scenario: &Scenario, trial: u32) -> Vec<PhonePlan> {
    vec![
        PhonePlan {
            mac: PHONE_A1,
            cert: "cert-a1".to_string(),
            monitor: Some(MonitorPlan {
                node: NodeKind::Mcn,
                source: poll_source(scenario, trial),
                apps: vec![(UID_OFFICIAL, OFFICIAL_APP.to_string(), OFFICIAL_SIG)],
            }),
        },
        PhonePlan {
            mac: PHONE_B1,
            cert: "cert-b1".to_string(),
            monitor: Some(MonitorPlan {
                node: NodeKind::Scn,
                source: poll_source(scenario, trial),
                apps: vec![
                    (UID_OFFICIAL, OFFICIAL_APP.to_string(), OFFICIAL_SIG),
                    (UID_ATTACKER, ATTACKER_APP.to_string(), ATTACKER_SIG),
                ],
            }),
        },
    ]
}

fn tcp_flow(src: Ipv4Addr, sport: u16, dst: Ipv4Addr) -> FlowId {
    FlowId::v4(src, sport, dst, 80, Protocol::Tcp)
}

fn decision_msg(policy: &Policy, phone: Mac, flow: FlowId, flag: Flag) -> ControlMessage {
    let cred = policy.phones.get(&phone).map(|p| p.credential_hash).unwrap_or([0x5a; 32]);
    ControlMessage {
        msg_type: MsgType::FlowDecision,
        credential_hash: cred,
        phone_mac: phone,
        flow,
        app_id: OFFICIAL_APP.to_string(),
        app_sig: OFFICIAL_SIG,
        policy_version: policy.version,
        flag,
        body: Vec::new(),
    }
}

fn null_flow() -> FlowId {
    FlowId::v4(Ipv4Addr::UNSPECIFIED, 0, Ipv4Addr::UNSPECIFIED, 0, Protocol::Tcp)
}

pub fn build_plan(scenario: &Scenario, policy: &Policy, trial: u32) -> TrialPlan {
    match scenario.name.as_str() {
        "S1" => plan_s1(scenario, trial),
        "S2" => plan_s2(scenario, trial),
        "S3" => plan_s3(scenario, policy, trial),
        "S4" => plan_s4(scenario, policy, trial),
        "S5" => plan_s5(scenario, trial),
        "S6" => plan_s6(scenario, trial),
        "S7" => plan_s7(scenario, policy, trial),
        "S8" => plan_s8(scenario, trial),
        "S9" => plan_s9(scenario, trial),
        "S10" => plan_s10(scenario, trial),
        other => unreachable!("unknown builtin scenario {other:?} passed validation"),
    }
}

fn plan_s1(scenario: &Scenario, trial: u32) -> TrialPlan {
    let mut flows = Vec::new();
    for (i, (mac, ip)) in PROTECTED.iter().enumerate() {
        flows.push(FlowScript {
            open_at_us: 200_000,
            first_data_delay_us: 100_000,
            data_packets: 3,
            data_gap_us: 50_000,
            ..FlowScript::new(
                &format!("official_{i}"),
                PHONE_B1,
                UID_OFFICIAL,
                OFFICIAL_APP,
                tcp_flow(IP_B1, 40_001 + i as u16, *ip),
                *mac,
            )
        });
        flows.push(FlowScript {
            open_at_us: 200_000,
            first_data_delay_us: 100_000,
            data_packets: 3,
            data_gap_us: 50_000,
            ..FlowScript::new(
                &format!("attacker_{i}"),
                PHONE_B1,
                UID_ATTACKER,
                ATTACKER_APP,
                tcp_flow(IP_B1, 41_001 + i as u16, *ip),
                *mac,
            )
        });
    }
    TrialPlan {
        phones: standard_phones(scenario, trial),
        flows,
        injections: Vec::new(),
        end_at_us: 600_000,
    }
}

fn plan_s2(scenario: &Scenario, trial: u32) -> TrialPlan {
    let mut phones = standard_phones(scenario, trial);
    // The repackaged app carries the official package id under a
    // different signing key.
    phones[1]
        .monitor
        .as_mut()
        .expect("B1 runs a monitor")
        .apps
        .push((UID_REPACKAGED, OFFICIAL_APP.to_string(), REPACKAGED_SIG));
    let cadence = |label: &str, uid, sport, dst_ip, dst_mac| FlowScript {
        open_at_us: 200_000,
        first_data_delay_us: 100_000,
        data_packets: 3,
        data_gap_us: 50_000,
        ..FlowScript::new(label, PHONE_B1, uid, OFFICIAL_APP, tcp_flow(IP_B1, sport, dst_ip), dst_mac)
    };
    TrialPlan {
        phones,
        flows: vec![
            cadence("repackaged_0", UID_REPACKAGED, 42_001, IP_SWITCH, DEV_SWITCH),
            cadence("repackaged_1", UID_REPACKAGED, 42_002, IP_PLUG, DEV_PLUG),
            cadence("official_0", UID_OFFICIAL, 43_001, IP_BULB, DEV_BULB),
        ],
        injections: Vec::new(),
        end_at_us: 600_000,
    }
}

fn plan_s3(scenario: &Scenario, policy: &Policy, trial: u32) -> TrialPlan {
    let mut phones = standard_phones(scenario, trial);
    // The guest's phone has no Monitor app.
    phones.push(PhonePlan { mac: PHONE_G1, cert: "cert-g1".to_string(), monitor: None });
    let burst = |label: &str, phone, src_ip, sport, dst_ip, dst_mac| FlowScript {
        open_at_us: 100_000,
        first_data_delay_us: 50_000,
        data_packets: 2,
        data_gap_us: 50_000,
        ..FlowScript::new(label, phone, 0, "", FlowId::v4(src_ip, sport, dst_ip, 80, Protocol::Tcp), dst_mac)
    };
    let unknown_flow = tcp_flow(Ipv4Addr::new(192, 168, 1, 77), 44_003, IP_PLUG);
    TrialPlan {
        phones,
        flows: vec![
            burst("guest_0", PHONE_G1, IP_G1, 44_001, IP_SWITCH, DEV_SWITCH),
            burst("guest_1", PHONE_G1, IP_G1, 44_002, IP_MOTION, DEV_MOTION),
            burst("unknown_0", PHONE_UNKNOWN, Ipv4Addr::new(192, 168, 1, 77), 44_003, IP_PLUG, DEV_PLUG),
            burst("guest_web", PHONE_G1, IP_G1, 44_004, IP_LAPTOP, DEV_LAPTOP),
        ],
        injections: vec![(
            300_000,
            Injection::RawFrame {
                msg: decision_msg(policy, PHONE_UNKNOWN, unknown_flow, Flag::Validate),
                channel_mac: PHONE_UNKNOWN,
            },
        )],
        end_at_us: 500_000,
    }
}

fn plan_s4(scenario: &Scenario, policy: &Policy, trial: u32) -> TrialPlan {
    let flows = vec![
        // The admin's own long-lived flow: its cache entry must survive
        // the flood untouched, and still forward after the penalty.
        FlowScript {
            open_at_us: 100_000,
            first_data_delay_us: 50_000,
            data_packets: 2,
            data_gap_us: 1_150_000, // second packet lands after the flood
            ..FlowScript::new(
                "benign",
                PHONE_A1,
                UID_OFFICIAL,
                OFFICIAL_APP,
                tcp_flow(IP_A1, 45_000, IP_SWITCH),
                DEV_SWITCH,
            )
        },
        // Once penalized, even the compromised phone's legitimate
        // traffic drops.
        FlowScript {
            open_at_us: 1_050_000,
            first_data_delay_us: 50_000,
            data_packets: 2,
            data_gap_us: 50_000,
            ..FlowScript::new(
                "after_penalty",
                PHONE_B1,
                UID_OFFICIAL,
                OFFICIAL_APP,
                tcp_flow(IP_B1, 45_100, IP_SWITCH),
                DEV_SWITCH,
            )
        },
    ];

    let mut injections: Vec<(u64, Injection)> = vec![
        (
            300_000,
            Injection::PfdcSnapshot {
                tag: "benign_pre".to_string(),
                exclude_owner: Some(PHONE_B1),
            },
        ),
        // Forged rule: a Validate for a device outside B1's role.
        (
            400_000,
            Injection::RawFrame {
                msg: decision_msg(policy, PHONE_B1, tcp_flow(IP_B1, 45_200, IP_CAMERA), Flag::Validate),
                channel_mac: PHONE_B1,
            },
        ),
        // Policy tamper: B1 tries to put cameras back into Home.
        (
            500_000,
            Injection::RawFrame {
                msg: {
                    let update = PolicyUpdate {
                        changes: vec![PolicyChange::ExtendDomain {
                            domain: "Home".to_string(),
                            types: ["camera_t".to_string()].into(),
                        }],
                    };
                    let mut msg = decision_msg(policy, PHONE_B1, null_flow(), Flag::Validate);
                    msg.msg_type = MsgType::PolicyUpdate;
                    msg.app_id = String::new();
                    msg.app_sig = [0; 32];
                    msg.body = crate::policy::render_update(&update).into_bytes();
                    msg
                },
                channel_mac: PHONE_B1,
            },
        ),
        (
            1_200_000,
            Injection::PfdcSnapshot {
                tag: "benign_post".to_string(),
                exclude_owner: Some(PHONE_B1),
            },
        ),
    ];
    // The flood: threshold+1 well-formed Validates for distinct flows
    // the phone is allowed to open.
    for k in 0..=u64::from(scenario.params.rate_threshold) {
        injections.push((
            1_000_000 + k * 100,
            Injection::RawFrame {
                msg: decision_msg(
                    policy,
                    PHONE_B1,
                    tcp_flow(IP_B1, 50_000 + k as u16, IP_SWITCH),
                    Flag::Validate,
                ),
                channel_mac: PHONE_B1,
            },
        ));
    }

    TrialPlan {
        phones: standard_phones(scenario, trial),
        flows,
        injections,
        end_at_us: 1_500_000,
    }
}

fn plan_s5(scenario: &Scenario, trial: u32) -> TrialPlan {
    let interval_us = poll_interval_ms(scenario, trial) * 1000;
    let mut flows: Vec<FlowScript> = (0..scenario.params.background_flows)
        .map(|i| {
            FlowScript::new(
                &format!("bg_{i}"),
                PHONE_B1,
                UID_OFFICIAL,
                OFFICIAL_APP,
                tcp_flow(IP_B1, 30_000 + i as u16, IP_LAPTOP),
                DEV_LAPTOP,
            )
        })
        .collect();
    // Tick-aligned open: the poll at 3·I observes the flow the moment
    // it exists, so the measured latency is one control draw minus one
    // data draw — independent of the interval itself.
    flows.push(FlowScript {
        open_at_us: 3 * interval_us,
        first_data_delay_us: 0,
        data_packets: 3,
        data_gap_us: 5_000,
        ..FlowScript::new(
            "measured",
            PHONE_B1,
            UID_OFFICIAL,
            OFFICIAL_APP,
            tcp_flow(IP_B1, 46_000, IP_SWITCH),
            DEV_SWITCH,
        )
    });
    TrialPlan {
        phones: standard_phones(scenario, trial),
        flows,
        injections: Vec::new(),
        end_at_us: 3 * interval_us + 30_000,
    }
}

fn plan_s6(scenario: &Scenario, trial: u32) -> TrialPlan {
    let interval_us = poll_interval_ms(scenario, trial) * 1000;
    let lifetime_us = scenario.params.flow_lifetime_ms * 1000;
    let draws = DrawSource::new(scenario.seed, trial);
    let offset_tcp = draws.uniform("open_tcp", 0) % interval_us;
    let offset_udp = draws.uniform("open_udp", 0) % interval_us;
    let short = |label: &str, sport, dst_ip, dst_mac, protocol, open_at| FlowScript {
        open_at_us: open_at,
        lifetime_us: Some(lifetime_us),
        ..FlowScript::new(
            label,
            PHONE_B1,
            UID_OFFICIAL,
            OFFICIAL_APP,
            FlowId::v4(IP_B1, sport, dst_ip, 5000, protocol),
            dst_mac,
        )
    };
    TrialPlan {
        phones: standard_phones(scenario, trial),
        flows: vec![
            short("short_tcp", 42_000, IP_SWITCH, DEV_SWITCH, Protocol::Tcp, offset_tcp),
            short("short_udp", 42_001, IP_PLUG, DEV_PLUG, Protocol::Udp, offset_udp),
        ],
        injections: Vec::new(),
        end_at_us: 400_000,
    }
}

fn plan_s7(scenario: &Scenario, policy: &Policy, trial: u32) -> TrialPlan {
    let burst = |label: &str, sport, dst_ip, dst_mac, open_at| FlowScript {
        open_at_us: open_at,
        first_data_delay_us: 50_000,
        data_packets: 2,
        data_gap_us: 10_000,
        ..FlowScript::new(label, PHONE_B1, UID_OFFICIAL, OFFICIAL_APP, tcp_flow(IP_B1, sport, dst_ip), dst_mac)
    };
    let update = PolicyUpdate {
        changes: vec![PolicyChange::AddDomain {
            name: "media_d".to_string(),
            types: ["bulb_t".to_string()].into(),
        }],
    };
    // The replayed frame carries the pre-update version: exactly what a
    // recorder captured before the partition.
    let stale = decision_msg(policy, PHONE_B1, tcp_flow(IP_B1, 47_002, IP_PLUG), Flag::Validate);
    TrialPlan {
        phones: standard_phones(scenario, trial),
        flows: vec![
            burst("pre", 47_000, IP_SWITCH, DEV_SWITCH, 100_000),
            burst("post", 47_001, IP_PLUG, DEV_PLUG, 800_000),
        ],
        injections: vec![
            (300_000, Injection::Partition { phone: PHONE_B1, connected: false }),
            (400_000, Injection::McnUpdate { phone: PHONE_A1, update }),
            (600_000, Injection::Partition { phone: PHONE_B1, connected: true }),
            (650_000, Injection::RawFrame { msg: stale, channel_mac: PHONE_B1 }),
            (700_000, Injection::NetworkChange { phone: PHONE_B1 }),
        ],
        end_at_us: 1_000_000,
    }
}

fn plan_s8(scenario: &Scenario, trial: u32) -> TrialPlan {
    let out_flow = FlowId::v4(IP_SWITCH, 40_000, IP_REMOTE_A, 443, Protocol::Tcp);
    let echo = FlowId::v4(IP_REMOTE_A, 443, IP_SWITCH, 40_000, Protocol::Tcp);
    let wrong_port = FlowId::v4(IP_REMOTE_A, 444, IP_SWITCH, 40_000, Protocol::Tcp);
    let cold = FlowId::v4(IP_REMOTE_B, 443, IP_PLUG, 40_001, Protocol::Tcp);
    TrialPlan {
        phones: standard_phones(scenario, trial),
        flows: Vec::new(),
        injections: vec![
            (
                100_000,
                Injection::DeviceOutbound {
                    packet: Packet::new(out_flow, DEV_SWITCH, WAN_GATEWAY),
                    label: "dev_out".to_string(),
                },
            ),
            (
                200_000,
                Injection::WanInbound {
                    packet: Packet::new(echo, WAN_GATEWAY, DEV_SWITCH),
                    label: "wan_echo".to_string(),
                },
            ),
            (
                250_000,
                Injection::WanInbound {
                    packet: Packet::new(wrong_port, WAN_GATEWAY, DEV_SWITCH),
                    label: "wan_wrong_port".to_string(),
                },
            ),
            (
                300_000,
                Injection::WanInbound {
                    packet: Packet::new(cold, WAN_GATEWAY, DEV_PLUG),
                    label: "wan_cold".to_string(),
                },
            ),
        ],
        end_at_us: 400_000,
    }
}

fn plan_s9(scenario: &Scenario, trial: u32) -> TrialPlan {
    TrialPlan {
        phones: standard_phones(scenario, trial),
        flows: vec![
            FlowScript {
                open_at_us: 100_000,
                first_data_delay_us: 100_000,
                data_packets: 2,
                data_gap_us: 50_000,
                ..FlowScript::new(
                    "consistent",
                    PHONE_B1,
                    UID_OFFICIAL,
                    OFFICIAL_APP,
                    tcp_flow(IP_B1, 48_000, IP_SWITCH),
                    DEV_SWITCH,
                )
            },
            // Unknown MAC claiming B1's reserved address.
            FlowScript {
                open_at_us: 150_000,
                first_data_delay_us: 50_000,
                data_packets: 2,
                data_gap_us: 50_000,
                ..FlowScript::new(
                    "spoof_ip",
                    PHONE_UNKNOWN,
                    0,
                    "",
                    tcp_flow(IP_B1, 48_100, IP_SWITCH),
                    DEV_SWITCH,
                )
            },
            // B1's MAC claiming an unreserved address.
            FlowScript {
                open_at_us: 150_000,
                first_data_delay_us: 50_000,
                data_packets: 2,
                data_gap_us: 50_000,
                src_mac_override: Some(PHONE_B1),
                ..FlowScript::new(
                    "spoof_mac",
                    PHONE_UNKNOWN,
                    0,
                    "",
                    tcp_flow(Ipv4Addr::new(192, 168, 1, 77), 48_200, IP_SWITCH),
                    DEV_SWITCH,
                )
            },
            // Unknown MAC on an unreserved address: plain guest traffic.
            FlowScript {
                open_at_us: 150_000,
                first_data_delay_us: 50_000,
                data_packets: 1,
                ..FlowScript::new(
                    "unregistered_ok",
                    PHONE_UNKNOWN,
                    0,
                    "",
                    tcp_flow(Ipv4Addr::new(192, 168, 1, 88), 48_300, IP_LAPTOP),
                    DEV_LAPTOP,
                )
            },
        ],
        injections: Vec::new(),
        end_at_us: 500_000,
    }
}

fn plan_s10(scenario: &Scenario, trial: u32) -> TrialPlan {
    let mut phones = standard_phones(scenario, trial);
    phones.push(PhonePlan {
        mac: PHONE_B2,
        cert: "cert-b2".to_string(),
        monitor: Some(MonitorPlan {
            node: NodeKind::Scn,
            source: SituationSource::TunnelProxy {
                managed_apps: [OFFICIAL_APP.to_string()].into(),
            },
            apps: vec![(UID_OFFICIAL, OFFICIAL_APP.to_string(), OFFICIAL_SIG)],
        }),
    });
    // Nine round trips each; packet 0 warms the caches and is excluded
    // from the metrics. The three flows draw the same per-packet jitter
    // indices, so any latency difference is structural, not noise.
    let echo = |label: &str, phone, src_ip, sport, dst_ip, dst_mac, management| FlowScript {
        management,
        first_data_delay_us: 100_000,
        data_packets: 9,
        data_gap_us: 100_000,
        expect_reply: true,
        ..FlowScript::new(label, phone, UID_OFFICIAL, OFFICIAL_APP, tcp_flow(src_ip, sport, dst_ip), dst_mac)
    };
    TrialPlan {
        phones,
        flows: vec![
            echo("unmanaged", PHONE_B1, IP_B1, 49_000, IP_LAPTOP, DEV_LAPTOP, Management::Unmanaged),
            echo("procfs", PHONE_B1, IP_B1, 49_001, IP_SWITCH, DEV_SWITCH, Management::Procfs),
            echo("tunnel", PHONE_B2, IP_B2, 49_002, IP_PLUG, DEV_PLUG, Management::Tunnel),
        ],
        injections: Vec::new(),
        end_at_us: 1_200_000,
    }
}

// -------------------------------------------------------------- metrics

fn label_sum(result: &TrialResult, prefix: &str, verdict: &str) -> u64 {
    result
        .label_verdicts
        .iter()
        .filter(|((label, v), _)| label.starts_with(prefix) && *v == verdict)
        .map(|(_, n)| n)
        .sum()
}

fn forward_total(result: &TrialResult, prefix: &str) -> u64 {
    result
        .label_verdicts
        .iter()
        .filter(|((label, v), _)| label.starts_with(prefix) && v.starts_with("forward"))
        .map(|(_, n)| n)
        .sum()
}

fn drop_total(result: &TrialResult, prefix: &str) -> u64 {
    result
        .label_verdicts
        .iter()
        .filter(|((label, v), _)| label.starts_with(prefix) && v.starts_with("drop"))
        .map(|(_, n)| n)
        .sum()
}

fn outcome_count(result: &TrialResult, outcome: &str) -> u64 {
    result.counters.outcomes.get(outcome).copied().unwrap_or(0)
}

pub fn extract(scenario: &Scenario, trial: u32, result: &TrialResult, report: &mut MetricsReport) {
    let push = |report: &mut MetricsReport, metric: &str, value: u64| {
        report.push(trial, metric, value);
    };
    match scenario.name.as_str() {
        "S1" => {
            push(report, "official_forward_valid", label_sum(result, "official", "forward_valid"));
            push(report, "official_forward_total", forward_total(result, "official"));
            push(report, "official_drop_total", drop_total(result, "official"));
            push(report, "attacker_forward_total", forward_total(result, "attacker"));
            push(report, "attacker_drop_no_decision", label_sum(result, "attacker", "drop_no_decision"));
            push(report, "monitor_alerts", result.monitors[&PHONE_B1].alerts as u64);
        }
        "S2" => {
            push(report, "repackaged_forward_total", forward_total(result, "repackaged"));
            push(report, "repackaged_drop_no_decision", label_sum(result, "repackaged", "drop_no_decision"));
            push(report, "official_forward_valid", label_sum(result, "official", "forward_valid"));
            push(report, "identity_alerts", result.monitors[&PHONE_B1].identity_alerts as u64);
        }
        "S3" => {
            push(report, "guest_drop_phone_level", label_sum(result, "guest_0", "drop_phone_level")
                + label_sum(result, "guest_1", "drop_phone_level"));
            push(report, "unknown_drop_phone_level", label_sum(result, "unknown_0", "drop_phone_level"));
            push(report, "guest_web_forward", forward_total(result, "guest_web"));
            push(
                report,
                "reject_unknown_phone",
                result.counters.decision_rejects.get("UnknownPhone").copied().unwrap_or(0),
            );
            push(
                report,
                "admin_notifications",
                result.controller_log.admin_notifications().count() as u64,
            );
        }
        "S4" => {
            let pre = result.snapshots.get("benign_pre");
            let post = result.snapshots.get("benign_post");
            push(report, "benign_pre_size", pre.map(|s| s.len() as u64).unwrap_or(0));
            push(report, "benign_intact", u64::from(pre.is_some() && pre == post));
            push(report, "forged_phone_level_rejections", outcome_count(result, "RejectedPhoneLevel"));
            push(report, "tamper_rejections", result.counters.update_rejections);
            push(report, "stored_decisions", outcome_count(result, "Stored"));
            push(report, "rate_limited_count", result.rate_limited_at.len() as u64);
            let span = match (result.rate_limited_at.first(), result.penalized_until.get(&PHONE_B1)) {
                (Some(at), Some(until)) => until - at,
                _ => 0,
            };
            push(report, "penalty_span_us", span);
            push(report, "after_penalty_drop_penalized", label_sum(result, "after_penalty", "drop_penalized"));
            push(report, "dropped_penalized_decisions", outcome_count(result, "DroppedPenalized"));
            push(report, "benign_forward_valid", label_sum(result, "benign", "forward_valid"));
            push(
                report,
                "admin_notifications",
                result.controller_log.admin_notifications().count() as u64,
            );
        }
        "S5" => {
            push(report, "poll_interval_ms", poll_interval_ms(scenario, trial));
            if let Some(latency) = result.flow("measured").and_then(|f| f.decision_latency_us()) {
                report.push(trial, "decision_latency_us", latency);
            }
            let m = &result.monitors[&PHONE_B1];
            push(report, "lines_parsed", m.lines_parsed);
            push(report, "polls", m.polls);
            push(report, "mean_actual_poll_interval_us", m.mean_actual_interval_us.unwrap_or(0));
        }
        "S6" => {
            push(report, "poll_interval_ms", poll_interval_ms(scenario, trial));
            let interval_us = poll_interval_ms(scenario, trial) * 1000;
            let draws = DrawSource::new(scenario.seed, trial);
            push(report, "open_offset_us_tcp", draws.uniform("open_tcp", 0) % interval_us);
            push(report, "open_offset_us_udp", draws.uniform("open_udp", 0) % interval_us);
            let detected = |label: &str| {
                u64::from(result.flow(label).is_some_and(|f| f.detected_at.is_some()))
            };
            push(report, "detected_tcp", detected("short_tcp"));
            push(report, "detected_udp", detected("short_udp"));
        }
        "S7" => {
            push(report, "pre_forward_valid", label_sum(result, "pre", "forward_valid"));
            push(
                report,
                "stale_rejections",
                result.counters.decision_rejects.get("StaleVersion").copied().unwrap_or(0),
            );
            push(report, "router_version", result.controller_version);
            push(report, "monitor_version", result.monitors[&PHONE_B1].replica_version);
            let synced = result
                .syncs
                .iter()
                .any(|(mac, what)| *mac == PHONE_B1 && what.starts_with("synced"));
            push(report, "synced", u64::from(synced));
            push(report, "post_forward_valid", label_sum(result, "post", "forward_valid"));
        }
        "S8" => {
            push(report, "dev_out_forward", forward_total(result, "dev_out"));
            push(report, "wan_admitted", forward_total(result, "wan_echo"));
            push(report, "wan_blocked", label_sum(result, "wan_", "drop_nat"));
        }
        "S9" => {
            push(report, "spoof_drops", label_sum(result, "spoof_", "drop_spoof"));
            push(report, "spoof_notifications", result.controller_log.count("spoof_detected") as u64);
            push(report, "consistent_forward_valid", label_sum(result, "consistent", "forward_valid"));
            push(report, "unregistered_forward", forward_total(result, "unregistered_ok"));
        }
        "S10" => {
            for label in ["unmanaged", "procfs", "tunnel"] {
                if let Some(flow) = result.flow(label) {
                    for (pkt, rtt) in flow.rtts.iter().filter(|(pkt, _)| **pkt >= 1) {
                        push(report, &format!("rtt_us_{label}_p{pkt}"), *rtt);
                    }
                }
            }
            push(
                report,
                "unprotected_dst_pfdc_lookups",
                result.counters.unprotected_dst_pfdc_lookups,
            );
        }
        other => unreachable!("unknown builtin scenario {other:?} passed validation"),
    }
}

// ----------------------------------------------------------- assessment

fn expect(report: &MetricsReport, trial: u32, metric: &str, want: i64, failures: &mut Vec<String>) {
    match report.int(trial, metric) {
        Some(got) if got == want => {}
        Some(got) => failures.push(format!("trial {trial}: {metric} = {got}, want {want}")),
        None => failures.push(format!("trial {trial}: {metric} missing")),
    }
}

/// Turns the report into failure strings; empty means the scenario's
/// expectations all hold.
pub fn assess(scenario: &Scenario, report: &MetricsReport) -> Vec<String> {
    let mut failures = Vec::new();
    let trials = trial_count(scenario);
    let vanilla = scenario.params.vanilla;
    match scenario.name.as_str() {
        "S1" => {
            for t in 0..trials {
                if vanilla {
                    expect(report, t, "official_forward_total", 12, &mut failures);
                    expect(report, t, "attacker_forward_total", 12, &mut failures);
                    expect(report, t, "attacker_drop_no_decision", 0, &mut failures);
                } else {
                    expect(report, t, "official_forward_valid", 12, &mut failures);
                    expect(report, t, "official_drop_total", 0, &mut failures);
                    expect(report, t, "attacker_forward_total", 0, &mut failures);
                    expect(report, t, "attacker_drop_no_decision", 12, &mut failures);
                    expect(report, t, "monitor_alerts", 4, &mut failures);
                }
            }
        }
        "S2" if !vanilla => {
            for t in 0..trials {
                expect(report, t, "repackaged_forward_total", 0, &mut failures);
                expect(report, t, "repackaged_drop_no_decision", 6, &mut failures);
                expect(report, t, "official_forward_valid", 3, &mut failures);
                expect(report, t, "identity_alerts", 2, &mut failures);
            }
        }
        "S3" if !vanilla => {
            for t in 0..trials {
                expect(report, t, "guest_drop_phone_level", 4, &mut failures);
                expect(report, t, "unknown_drop_phone_level", 2, &mut failures);
                expect(report, t, "guest_web_forward", 2, &mut failures);
                expect(report, t, "reject_unknown_phone", 1, &mut failures);
            }
        }
        "S4" if !vanilla => {
            let penalty_us = scenario.params.penalty_s as i64 * 1_000_000;
            let threshold = i64::from(scenario.params.rate_threshold);
            for t in 0..trials {
                expect(report, t, "benign_intact", 1, &mut failures);
                expect(report, t, "benign_pre_size", 1, &mut failures);
                expect(report, t, "forged_phone_level_rejections", 1, &mut failures);
                expect(report, t, "tamper_rejections", 1, &mut failures);
                // threshold flood inserts land; the threshold+1st trips
                // the limiter; the benign entry is the +1.
                expect(report, t, "stored_decisions", threshold + 1, &mut failures);
                expect(report, t, "rate_limited_count", 1, &mut failures);
                expect(report, t, "penalty_span_us", penalty_us, &mut failures);
                expect(report, t, "after_penalty_drop_penalized", 2, &mut failures);
                expect(report, t, "dropped_penalized_decisions", 1, &mut failures);
                expect(report, t, "benign_forward_valid", 2, &mut failures);
            }
        }
        "S5" => {
            let mut groups: std::collections::BTreeMap<i64, Vec<i64>> = Default::default();
            for t in 0..trials {
                let Some(interval) = report.int(t, "poll_interval_ms") else {
                    failures.push(format!("trial {t}: poll_interval_ms missing"));
                    continue;
                };
                match report.int(t, "decision_latency_us") {
                    Some(latency) => groups.entry(interval).or_default().push(latency),
                    None => failures.push(format!("trial {t}: decision_latency_us missing")),
                }
            }
            let mut means: Vec<(i64, f64)> = Vec::new();
            for (interval, samples) in &groups {
                if !samples.iter().any(|&l| l < 0) {
                    failures.push(format!("interval {interval} ms: no negative latency sample"));
                }
                means.push((*interval, samples.iter().sum::<i64>() as f64 / samples.len() as f64));
            }
            let half_width = scenario.params.data_jitter_us as f64;
            for (i, (int_a, mean_a)) in means.iter().enumerate() {
                for (int_b, mean_b) in &means[i + 1..] {
                    if (mean_a - mean_b).abs() >= half_width {
                        failures.push(format!(
                            "latency means for {int_a} ms and {int_b} ms differ by {:.1} us (≥ {half_width})",
                            (mean_a - mean_b).abs()
                        ));
                    }
                }
            }
        }
        "S6" => {
            let lifetime_us = (scenario.params.flow_lifetime_ms * 1000) as i64;
            for t in 0..trials {
                let Some(interval_ms) = report.int(t, "poll_interval_ms") else {
                    failures.push(format!("trial {t}: poll_interval_ms missing"));
                    continue;
                };
                let interval_us = interval_ms * 1000;
                for proto in ["tcp", "udp"] {
                    let offset = report.int(t, &format!("open_offset_us_{proto}"));
                    let detected = report.int(t, &format!("detected_{proto}"));
                    let (Some(offset), Some(detected)) = (offset, detected) else {
                        failures.push(format!("trial {t}: {proto} rows missing"));
                        continue;
                    };
                    // First tick at or after the open; detection iff it
                    // lands before the close.
                    let next_tick = (offset + interval_us - 1) / interval_us * interval_us;
                    let oracle = i64::from(next_tick < offset + lifetime_us);
                    if detected != oracle {
                        failures.push(format!(
                            "trial {t}: {proto} detected={detected} but offset {offset} with interval {interval_us} implies {oracle}"
                        ));
                    }
                    if interval_ms == 10 && detected != 1 {
                        failures.push(format!("trial {t}: {proto} missed at 10 ms polling"));
                    }
                }
            }
        }
        "S7" if !vanilla => {
            for t in 0..trials {
                expect(report, t, "pre_forward_valid", 2, &mut failures);
                expect(report, t, "stale_rejections", 1, &mut failures);
                expect(report, t, "synced", 1, &mut failures);
                expect(report, t, "post_forward_valid", 2, &mut failures);
                match (report.int(t, "router_version"), report.int(t, "monitor_version")) {
                    (Some(r), Some(m)) if r == m => {}
                    (r, m) => failures.push(format!(
                        "trial {t}: monitor version {m:?} != router version {r:?} after sync"
                    )),
                }
            }
        }
        "S8" => {
            for t in 0..trials {
                expect(report, t, "dev_out_forward", 1, &mut failures);
                expect(report, t, "wan_admitted", 1, &mut failures);
                expect(report, t, "wan_blocked", 2, &mut failures);
            }
        }
        "S9" if !vanilla => {
            for t in 0..trials {
                expect(report, t, "spoof_drops", 4, &mut failures);
                expect(report, t, "spoof_notifications", 4, &mut failures);
                expect(report, t, "consistent_forward_valid", 2, &mut failures);
                expect(report, t, "unregistered_forward", 1, &mut failures);
            }
        }
        "S10" => {
            let hop = scenario.params.tunnel_hop_us as i64;
            for t in 0..trials {
                expect(report, t, "unprotected_dst_pfdc_lookups", 0, &mut failures);
                for pkt in 1..=8 {
                    let unmanaged = report.int(t, &format!("rtt_us_unmanaged_p{pkt}"));
                    let procfs = report.int(t, &format!("rtt_us_procfs_p{pkt}"));
                    let tunnel = report.int(t, &format!("rtt_us_tunnel_p{pkt}"));
                    let (Some(u), Some(p), Some(tn)) = (unmanaged, procfs, tunnel) else {
                        failures.push(format!("trial {t}: rtt rows for packet {pkt} missing"));
                        continue;
                    };
                    if p != u {
                        failures.push(format!(
                            "trial {t} packet {pkt}: procfs rtt {p} != unmanaged rtt {u}"
                        ));
                    }
                    if tn != u + 2 * hop {
                        failures.push(format!(
                            "trial {t} packet {pkt}: tunnel rtt {tn} != unmanaged {u} + 2×{hop}"
                        ));
                    }
                }
            }
        }
        // Scenarios whose expectations only hold with enforcement on.
        "S2" | "S3" | "S4" | "S7" | "S9" => {}
        other => unreachable!("unknown builtin scenario {other:?} passed validation"),
    }
    failures
}
