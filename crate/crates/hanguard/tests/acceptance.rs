//! Release gate. Each test below checks one shipping requirement end to
//! end and prints a `PASS <requirement>` / `FAIL <requirement>` line
//! (visible with `cargo test --test acceptance -- --nocapture`). Any
//! unmet requirement panics, so a green run of this target is the
//! sign-off.

mod common;

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, Ipv6Addr};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{build_policy, PolicySpec, CATS, ROLES, TYPES};
use hanguard::controller::{Controller, DecisionError};
use hanguard::mac::Mac;
use hanguard::monitor::{Monitor, NodeKind, PollStrategy, SituationSource};
use hanguard::policy::AccessDecision;
use hanguard::procfs::{is_header, parse_line, ProcFileKind, ProcFiles, SockEntry, SockState};
use hanguard::proto::{
    decode, encode, AuthResult, ControlMessage, Flag, FlowId, MsgType, Protocol,
};
use hanguard::sim::{builtin, run_scenario, run_trial};

fn gate(requirement: &str, failures: Vec<String>) {
    if failures.is_empty() {
        println!("PASS {requirement}");
    } else {
        println!("FAIL {requirement}");
        for f in &failures {
            println!("  - {f}");
        }
        panic!("{requirement}: {} unmet check(s)", failures.len());
    }
}

macro_rules! check {
    ($fails:expr, $cond:expr, $($msg:tt)+) => {
        if !$cond {
            $fails.push(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------- enforcement

#[test]
fn gate_01_unauthorized_flows_blocked_authorized_untouched() {
    let mut fails = Vec::new();
    let enforced_sc = builtin::builtin("S1").expect("S1 exists");
    let enforced = run_scenario(&enforced_sc).expect("S1 runs");
    let mut baseline_sc = builtin::builtin("S1").expect("S1 exists");
    baseline_sc.params.vanilla = true;
    let baseline = run_scenario(&baseline_sc).expect("S1 baseline runs");

    for t in 0..builtin::trial_count(&enforced_sc) {
        for (metric, want) in [
            ("official_forward_valid", 12),
            ("official_drop_total", 0),
            ("attacker_forward_total", 0),
            ("attacker_drop_no_decision", 12),
        ] {
            let got = enforced.report.int(t, metric);
            check!(fails, got == Some(want), "enforced trial {t}: {metric} = {got:?}, want {want}");
        }
        for (metric, want) in [
            ("official_forward_total", 12),
            ("attacker_forward_total", 12),
            ("attacker_drop_no_decision", 0),
        ] {
            let got = baseline.report.int(t, metric);
            check!(fails, got == Some(want), "baseline trial {t}: {metric} = {got:?}, want {want}");
        }
    }
    gate("adware packets all dropped under enforcement, all pass the stock router", fails);
}

// ------------------------------------------------------------ detection

#[test]
fn gate_02_short_flow_detection_matches_tick_oracle() {
    let mut fails = Vec::new();

    // 10 ms polling must catch every 40 ms flow, TCP and UDP alike.
    let mut fast = builtin::builtin("S6").expect("S6 exists");
    fast.params.poll_ms = Some(10);
    let fast_out = run_scenario(&fast).expect("S6 at 10 ms runs");
    for t in 0..builtin::trial_count(&fast) {
        for proto in ["tcp", "udp"] {
            let got = fast_out.report.int(t, &format!("detected_{proto}"));
            check!(fails, got == Some(1), "10 ms trial {t}: short {proto} flow missed");
        }
    }

    // Stock benchmark: detection equals the tick oracle at every interval.
    let bench = builtin::builtin("S6").expect("S6 exists");
    let bench_out = run_scenario(&bench).expect("S6 runs");
    let lifetime_us = (bench.params.flow_lifetime_ms * 1000) as i64;
    let mut per_interval: BTreeMap<i64, u32> = BTreeMap::new();
    for t in 0..builtin::trial_count(&bench) {
        let Some(interval_ms) = bench_out.report.int(t, "poll_interval_ms") else {
            fails.push(format!("trial {t}: poll_interval_ms missing"));
            continue;
        };
        *per_interval.entry(interval_ms).or_default() += 1;
        let interval_us = interval_ms * 1000;
        for proto in ["tcp", "udp"] {
            let offset = bench_out.report.int(t, &format!("open_offset_us_{proto}"));
            let detected = bench_out.report.int(t, &format!("detected_{proto}"));
            let (Some(offset), Some(detected)) = (offset, detected) else {
                fails.push(format!("trial {t}: {proto} rows missing"));
                continue;
            };
            let next_tick = (offset + interval_us - 1) / interval_us * interval_us;
            let oracle = i64::from(next_tick < offset + lifetime_us);
            check!(
                fails,
                detected == oracle,
                "trial {t}: {proto} detected={detected}, oracle says {oracle} \
                 (offset {offset} us, interval {interval_us} us)"
            );
        }
    }
    let want_grid = BTreeMap::from([(10, 10), (30, 10), (100, 10), (150, 10)]);
    check!(fails, per_interval == want_grid, "interval grid {per_interval:?}, want {want_grid:?}");

    // Deterministic phase sweep: slide the open across a full interval
    // and require agreement with the oracle at every offset.
    for (interval_ms, life_us) in [(10u64, 4_000u64), (30, 40_000)] {
        let mut sc = builtin::builtin("S6").expect("S6 exists");
        sc.params.poll_ms = Some(interval_ms);
        let interval_us = interval_ms * 1000;
        let policy = sc.topology.build_policy().expect("S6 policy builds");
        let step = interval_us / 7;
        let mut offset = 0;
        while offset < interval_us {
            let mut plan = builtin::build_plan(&sc, &policy, 0);
            for flow in &mut plan.flows {
                flow.open_at_us = offset;
                flow.lifetime_us = Some(life_us);
            }
            let result =
                run_trial(&policy, &plan, &sc.params, sc.seed, 0).expect("sweep trial runs");
            let next_tick = (offset + interval_us - 1) / interval_us * interval_us;
            let want = next_tick < offset + life_us;
            for label in ["short_tcp", "short_udp"] {
                let got = result.flow(label).is_some_and(|f| f.detected_at.is_some());
                check!(
                    fails,
                    got == want,
                    "sweep {interval_ms} ms, offset {offset} us: {label} detected={got}, want {want}"
                );
            }
            offset += step;
        }
    }
    gate("short-flow detection is exactly the poll-tick oracle", fails);
}

// -------------------------------------------------------------- latency

#[test]
fn gate_03_decision_latency_independent_of_interval() {
    let mut fails = Vec::new();
    let sc = builtin::builtin("S5").expect("S5 exists");
    let out = run_scenario(&sc).expect("S5 runs");
    let p = &sc.params;
    // Tick-aligned opens race the permit against the first packet, so a
    // sample is one control draw minus one data draw.
    let lo = (p.control_base_us - p.control_jitter_us) as i64
        - (p.data_base_us + p.data_jitter_us) as i64;
    let hi = (p.control_base_us + p.control_jitter_us) as i64
        - (p.data_base_us - p.data_jitter_us) as i64;

    let mut groups: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
    for t in 0..builtin::trial_count(&sc) {
        let interval = out.report.int(t, "poll_interval_ms");
        let latency = out.report.int(t, "decision_latency_us");
        let (Some(interval), Some(latency)) = (interval, latency) else {
            fails.push(format!("trial {t}: latency rows missing"));
            continue;
        };
        check!(fails, (lo..=hi).contains(&latency), "trial {t}: latency {latency} us outside [{lo}, {hi}]");
        let cadence = out.report.int(t, "mean_actual_poll_interval_us");
        check!(
            fails,
            cadence == Some(interval * 1000),
            "trial {t}: poll cadence {cadence:?} us, want exactly {} us",
            interval * 1000
        );
        groups.entry(interval).or_default().push(latency);
    }
    let intervals: Vec<i64> = groups.keys().copied().collect();
    check!(fails, intervals == vec![10, 30, 100], "interval set {intervals:?}, want [10, 30, 100]");

    let mut means: Vec<(i64, f64)> = Vec::new();
    for (interval, samples) in &groups {
        check!(fails, samples.len() == 10, "interval {interval} ms: {} samples, want 10", samples.len());
        check!(
            fails,
            samples.iter().any(|&l| l < 0),
            "interval {interval} ms: permit never beat the first packet"
        );
        means.push((*interval, samples.iter().sum::<i64>() as f64 / samples.len() as f64));
    }
    for (i, (int_a, mean_a)) in means.iter().enumerate() {
        for (int_b, mean_b) in &means[i + 1..] {
            check!(
                fails,
                (mean_a - mean_b).abs() < p.data_jitter_us as f64,
                "latency means at {int_a} ms and {int_b} ms differ by {:.1} us",
                (mean_a - mean_b).abs()
            );
        }
    }
    gate("decision latency does not grow with the polling interval", fails);
}

// -------------------------------------------------------------- polling

/// Replays one socket-table trace against a monitor: 101 polls at 10 ms
/// with a single table change at poll 50. Returns per-poll parsed-line
/// deltas and every decision the monitor emitted.
fn replay_trace(strategy: PollStrategy) -> (Vec<u64>, Vec<ControlMessage>, u64) {
    let sc = builtin::builtin("S1").expect("S1 exists");
    let policy = sc.topology.build_policy().expect("S1 policy builds");
    let phone = policy.phones.values().find(|p| !p.is_mcn).expect("a user phone").clone();
    let laptop = policy.devices.values().find(|d| !d.protected).expect("unprotected host").clone();
    let gadget = policy.devices.values().find(|d| d.protected).expect("protected device").clone();

    let mut monitor = Monitor::new(
        phone.mac,
        phone.credential_hash,
        NodeKind::Scn,
        SituationSource::ProcfsPoll { interval_ms: 10, strategy },
        policy.clone(),
    );
    monitor.install_app(10001, builtin::OFFICIAL_APP, builtin::OFFICIAL_SIG);

    let row = |dst: Ipv4Addr, dst_port: u16, sport: u16| SockEntry {
        flow: FlowId::v4(phone.reserved_ip, sport, dst, dst_port, Protocol::Tcp),
        uid: 10001,
        state: SockState::Established,
    };
    let mut table: Vec<SockEntry> =
        (0u16..6).map(|i| row(laptop.ip, 443, 35_000 + i)).collect();

    let mut files = ProcFiles::new(0);
    files.get_mut(ProcFileKind::Tcp).set_entries(table.clone(), 0).expect("table renders");

    let mut deltas = Vec::new();
    let mut msgs = Vec::new();
    let mut prev = 0;
    for k in 0..=100u64 {
        let now = k * 10_000;
        if k == 50 {
            table.push(row(gadget.ip, 80, 36_000));
            files.get_mut(ProcFileKind::Tcp).set_entries(table.clone(), now).expect("table renders");
        }
        msgs.extend(monitor.process_poll(&files, now));
        deltas.push(monitor.poll_stats.lines_parsed - prev);
        prev = monitor.poll_stats.lines_parsed;
    }
    (deltas, msgs, monitor.poll_stats.polls)
}

#[test]
fn gate_04_change_aware_polling_skips_idle_tables() {
    let mut fails = Vec::new();
    let (naive_deltas, naive_msgs, naive_polls) = replay_trace(PollStrategy::Naive);
    let (smart_deltas, smart_msgs, smart_polls) = replay_trace(PollStrategy::Smarter);

    check!(fails, naive_polls == 101 && smart_polls == 101, "poll counts {naive_polls}/{smart_polls}, want 101 each");
    for (k, delta) in naive_deltas.iter().enumerate() {
        let table_lines = if k < 50 { 6 } else { 7 };
        check!(fails, *delta == table_lines, "naive poll {k}: parsed {delta} lines, want {table_lines}");
    }
    for (k, delta) in smart_deltas.iter().enumerate() {
        let want = match k {
            0 => 6,
            50 => 7,
            _ => 0,
        };
        check!(fails, *delta == want, "smarter poll {k}: parsed {delta} lines, want {want} (idle polls must be free)");
    }
    let naive_total: u64 = naive_deltas.iter().sum();
    let smart_total: u64 = smart_deltas.iter().sum();
    check!(
        fails,
        smart_total > 0 && naive_total >= 10 * smart_total,
        "parsed lines: naive {naive_total} vs smarter {smart_total}, saving below 10x"
    );
    check!(
        fails,
        naive_msgs == smart_msgs && naive_msgs.len() == 1,
        "strategies must emit identical decisions: naive {} msgs, smarter {}",
        naive_msgs.len(),
        smart_msgs.len()
    );
    gate("mtime-aware polling parses 0 lines on idle polls at >=10x total saving", fails);
}

// ------------------------------------------------------------ bypass paths

#[test]
fn gate_05_unmanaged_traffic_completely_untouched() {
    let mut fails = Vec::new();
    let enforced_sc = builtin::builtin("S10").expect("S10 exists");
    let enforced = run_scenario(&enforced_sc).expect("S10 runs");
    let mut baseline_sc = builtin::builtin("S10").expect("S10 exists");
    baseline_sc.params.vanilla = true;
    let baseline = run_scenario(&baseline_sc).expect("S10 baseline runs");

    for pkt in 1..=8 {
        let metric = format!("rtt_us_unmanaged_p{pkt}");
        let rows = |r: &hanguard::sim::metrics::MetricsReport| -> Vec<(u32, String)> {
            r.values(&metric).into_iter().map(|(t, v)| (t, v.to_string())).collect()
        };
        let a = rows(&enforced.report);
        let b = rows(&baseline.report);
        check!(fails, !a.is_empty(), "{metric}: no samples");
        check!(fails, a == b, "{metric}: enforced {a:?} != baseline {b:?}");
    }
    for (mode, out) in [("enforced", &enforced), ("baseline", &baseline)] {
        let lookups = out.report.ints("unprotected_dst_pfdc_lookups");
        check!(fails, lookups.len() == 3, "{mode}: {} lookup rows, want one per trial", lookups.len());
        for (t, v) in lookups {
            check!(fails, v == 0, "{mode} trial {t}: {v} cache lookups for unprotected destinations");
        }
    }
    gate("unmanaged flows: RTTs identical to the stock router, zero cache work", fails);
}

#[test]
fn gate_06_attribution_overhead_accounting() {
    let mut fails = Vec::new();
    let sc = builtin::builtin("S10").expect("S10 exists");
    let out = run_scenario(&sc).expect("S10 runs");
    let hop = sc.params.tunnel_hop_us as i64;
    for t in 0..builtin::trial_count(&sc) {
        for pkt in 1..=8 {
            let unmanaged = out.report.int(t, &format!("rtt_us_unmanaged_p{pkt}"));
            let procfs = out.report.int(t, &format!("rtt_us_procfs_p{pkt}"));
            let tunnel = out.report.int(t, &format!("rtt_us_tunnel_p{pkt}"));
            let (Some(u), Some(p), Some(tn)) = (unmanaged, procfs, tunnel) else {
                fails.push(format!("trial {t} packet {pkt}: rtt rows missing"));
                continue;
            };
            check!(fails, p == u, "trial {t} packet {pkt}: procfs attribution cost {} us, want 0", p - u);
            check!(
                fails,
                tn == u + 2 * hop,
                "trial {t} packet {pkt}: tunnel rtt {tn} us, want {} (unmanaged + 2 proxy hops)",
                u + 2 * hop
            );
        }
    }
    gate("procfs attribution adds zero RTT; tunnel adds exactly two proxy hops", fails);
}

// ----------------------------------------------------------- containment

#[test]
fn gate_07_decision_flood_contained() {
    let mut fails = Vec::new();
    let sc = builtin::builtin("S4").expect("S4 exists");
    let out = run_scenario(&sc).expect("S4 runs");
    let threshold = i64::from(sc.params.rate_threshold);
    let penalty_us = sc.params.penalty_s as i64 * 1_000_000;
    for t in 0..builtin::trial_count(&sc) {
        for (metric, want) in [
            ("stored_decisions", threshold + 1),
            ("rate_limited_count", 1),
            ("penalty_span_us", penalty_us),
            ("dropped_penalized_decisions", 1),
            ("after_penalty_drop_penalized", 2),
            ("benign_pre_size", 1),
            ("benign_intact", 1),
            ("benign_forward_valid", 2),
            ("forged_phone_level_rejections", 1),
            ("tamper_rejections", 1),
        ] {
            let got = out.report.int(t, metric);
            check!(fails, got == Some(want), "trial {t}: {metric} = {got:?}, want {want}");
        }
    }
    gate("a flooding phone is penalized for the full window; other phones unaffected", fails);
}

// ---------------------------------------------------- wire and parsers

fn random_message(rng: &mut ChaCha8Rng) -> ControlMessage {
    const KINDS: [MsgType; 5] = [
        MsgType::FlowDecision,
        MsgType::PolicyUpdate,
        MsgType::PolicyPush,
        MsgType::Ack,
        MsgType::VersionQuery,
    ];
    const APP_CHARS: &[u8] =
        b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-";
    fn addr(rng: &mut ChaCha8Rng) -> Ipv6Addr {
        if rng.gen_bool(0.5) {
            Ipv4Addr::from(rng.gen::<[u8; 4]>()).to_ipv6_mapped()
        } else {
            Ipv6Addr::from(rng.gen::<[u8; 16]>())
        }
    }
    let msg_type = KINDS[rng.gen_range(0..KINDS.len())];
    let mut credential_hash = [0u8; 32];
    rng.fill(&mut credential_hash);
    let mut app_sig = [0u8; 32];
    rng.fill(&mut app_sig);
    let app_id: String = (0..rng.gen_range(0..=48))
        .map(|_| APP_CHARS[rng.gen_range(0..APP_CHARS.len())] as char)
        .collect();
    let body: Vec<u8> = if msg_type.carries_body() {
        (0..rng.gen_range(0..300)).map(|_| rng.gen()).collect()
    } else {
        Vec::new()
    };
    ControlMessage {
        msg_type,
        credential_hash,
        phone_mac: Mac(rng.gen::<[u8; 6]>()),
        flow: FlowId {
            src_ip: addr(rng),
            src_port: rng.gen(),
            dst_ip: addr(rng),
            dst_port: rng.gen(),
            protocol: if rng.gen_bool(0.5) { Protocol::Tcp } else { Protocol::Udp },
        },
        app_id,
        app_sig,
        policy_version: rng.gen(),
        flag: if rng.gen_bool(0.5) { Flag::Validate } else { Flag::Invalidate },
        body,
    }
}

fn random_spec(rng: &mut ChaCha8Rng) -> PolicySpec {
    let count = |rng: &mut ChaCha8Rng, max: usize| rng.gen_range(0..=max);
    PolicySpec {
        phone_roles: (0..count(rng, 2)).map(|_| rng.gen_range(0..ROLES.len())).collect(),
        devices: (0..rng.gen_range(1..=4))
            .map(|_| (rng.gen_range(0..TYPES.len()), rng.gen_bool(0.5)))
            .collect(),
        apps: rng.gen_range(1..=3),
        binds: (0..count(rng, 6))
            .map(|_| (rng.gen_range(0..8), rng.gen_range(0..8), rng.gen_range(0..CATS.len())))
            .collect(),
        carves: (0..count(rng, 2)).map(|_| rng.gen_range(0..8)).collect(),
        role_changes: (0..count(rng, 2))
            .map(|_| (rng.gen_range(0..8), rng.gen_range(0..ROLES.len())))
            .collect(),
    }
}

#[test]
fn gate_08_wire_format_parsers_and_access_checks() {
    let mut fails = Vec::new();

    // Pinned decision frame decodes, field for field, and re-encodes
    // byte-identically.
    let frame = hex::decode(include_str!("data/flow_decision.hex").trim()).expect("hex fixture");
    match decode(&frame) {
        Ok(msg) => {
            check!(
                fails,
                msg.msg_type == MsgType::FlowDecision && msg.flag == Flag::Validate,
                "pinned frame: type {:?} flag {:?}",
                msg.msg_type,
                msg.flag
            );
            check!(fails, msg.app_id == "com.belkin.wemoandroid", "pinned frame: app {:?}", msg.app_id);
            let want_flow = FlowId::v4(
                Ipv4Addr::new(192, 168, 1, 189),
                8080,
                Ipv4Addr::new(192, 168, 1, 32),
                80,
                Protocol::Tcp,
            );
            check!(fails, msg.flow == want_flow, "pinned frame: flow {}", msg.flow);
            check!(
                fails,
                encode(&msg).expect("re-encodes") == frame,
                "pinned frame: re-encode is not byte-identical"
            );
        }
        Err(e) => fails.push(format!("pinned frame does not decode: {e}")),
    }

    // Pinned socket table: the IPv4-mapped hex strings appear verbatim
    // and the rows decode to the right endpoints.
    let tcp6 = include_str!("data/proc_net_tcp6.txt");
    check!(
        fails,
        tcp6.contains("0000000000000000FFFF0000BD01A8C0:1F90"),
        "mapped local-endpoint literal missing from the tcp6 fixture"
    );
    check!(
        fails,
        tcp6.contains("0000000000000000FFFF00002001A8C0:0050"),
        "mapped remote-endpoint literal missing from the tcp6 fixture"
    );
    match tcp6.lines().find(|l| !is_header(l)).map(parse_line) {
        Some(Ok(p)) => {
            check!(
                fails,
                p.local.to_string() == "192.168.1.189:8080" && p.remote.to_string() == "192.168.1.32:80",
                "fixture row 0 endpoints {} -> {}",
                p.local,
                p.remote
            );
            check!(
                fails,
                p.state == SockState::Established && p.uid == 10234,
                "fixture row 0: state {:?} uid {}",
                p.state,
                p.uid
            );
        }
        other => fails.push(format!("tcp6 fixture row 0 unusable: {other:?}")),
    }

    // Ten thousand seeded round trips over every message shape.
    let mut rng = ChaCha8Rng::seed_from_u64(0x57a7e);
    for i in 0..10_000 {
        let msg = random_message(&mut rng);
        let frame = match encode(&msg) {
            Ok(f) => f,
            Err(e) => {
                fails.push(format!("round trip {i}: encode failed: {e}"));
                break;
            }
        };
        if frame.len() != 4 + 118 + msg.app_id.len() + msg.body.len() {
            fails.push(format!("round trip {i}: frame length {}", frame.len()));
            break;
        }
        if decode(&frame).as_ref() != Ok(&msg) {
            fails.push(format!("round trip {i}: decode is not the inverse of encode"));
            break;
        }
    }

    // A permit carrying yesterday's policy version is rejected before
    // it can touch the cache; the current version is accepted.
    let sc = builtin::builtin("S1").expect("S1 exists");
    let policy = sc.topology.build_policy().expect("S1 policy builds");
    let phone = policy.phones.values().find(|p| !p.is_mcn).expect("a user phone").clone();
    let gadget = policy.devices.values().find(|d| d.protected).expect("protected device").clone();
    let mut controller = Controller::new(policy.clone(), sc.params.controller_config());
    let fresh = ControlMessage {
        msg_type: MsgType::FlowDecision,
        credential_hash: phone.credential_hash,
        phone_mac: phone.mac,
        flow: FlowId::v4(phone.reserved_ip, 40_100, gadget.ip, 80, Protocol::Tcp),
        app_id: builtin::OFFICIAL_APP.to_string(),
        app_sig: builtin::OFFICIAL_SIG,
        policy_version: policy.version,
        flag: Flag::Validate,
        body: Vec::new(),
    };
    let ok = controller.receive_decision(&encode(&fresh).expect("encodes"), &phone.cert_id, 0);
    check!(fails, ok.is_ok(), "current-version permit rejected: {ok:?}");
    check!(fails, controller.queue_len() == 1, "current-version permit not queued");
    let mut stale = fresh.clone();
    stale.policy_version -= 1;
    let err = controller.receive_decision(&encode(&stale).expect("encodes"), &phone.cert_id, 0);
    check!(
        fails,
        err == Err(DecisionError::Rejected(AuthResult::StaleVersion)),
        "stale-version permit: {err:?}, want StaleVersion rejection"
    );
    check!(fails, controller.queue_len() == 1, "stale-version permit reached the queue");

    // A thousand seeded policies: the final verdict is always the
    // phone-level check first, then the app-level check.
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce55);
    let mut triples = 0u64;
    for i in 0..1_000 {
        let spec = random_spec(&mut rng);
        let (policy, accepted) = build_policy(&spec);
        check!(
            fails,
            policy.version == 1 + accepted,
            "policy {i}: version {} after {accepted} accepted changes",
            policy.version
        );
        let phones: Vec<Mac> = policy.phones.keys().copied().collect();
        let devices: Vec<Mac> = policy.devices.keys().copied().collect();
        let apps: Vec<String> = policy.apps.keys().cloned().collect();
        for &phone in &phones {
            let role = policy.role_of_phone(phone).expect("registered");
            for &dev in &devices {
                let te = policy.te_check(role, dev).expect("known role and device");
                let mut phone_denies = 0;
                for app in &apps {
                    let mcs = policy.mcs_check(app, dev).expect("known app and device");
                    let got = policy.authorize(phone, app, dev).expect("known triple");
                    let want = if !te {
                        AccessDecision::DenyPhoneLevel
                    } else if !mcs {
                        AccessDecision::DenyAppLevel
                    } else {
                        AccessDecision::Allow
                    };
                    if got != want {
                        fails.push(format!(
                            "policy {i}: authorize({phone}, {app}, {dev}) = {got:?}, want {want:?} (te={te}, mcs={mcs})"
                        ));
                    }
                    if got == AccessDecision::DenyPhoneLevel {
                        phone_denies += 1;
                    }
                    triples += 1;
                }
                if phone_denies != 0 && phone_denies != apps.len() {
                    fails.push(format!("policy {i}: phone-level verdict depends on the app"));
                }
                if role == "Admin" && phone_denies != 0 {
                    fails.push(format!("policy {i}: admin phone-level denied"));
                }
                if role == "Guest" && phone_denies != apps.len() {
                    fails.push(format!("policy {i}: guest not phone-level denied"));
                }
            }
        }
        if fails.len() > 20 {
            break;
        }
    }
    check!(fails, triples >= 1_000, "only {triples} authorization triples exercised");

    gate("wire codec, fixtures, stale-version guard, and two-level authorization hold", fails);
}

// ----------------------------------------------------------------- sync

#[test]
fn gate_09_offline_replicas_resync() {
    let mut fails = Vec::new();
    let sc = builtin::builtin("S7").expect("S7 exists");
    let out = run_scenario(&sc).expect("S7 runs");
    for t in 0..builtin::trial_count(&sc) {
        for (metric, want) in [
            ("pre_forward_valid", 2),
            ("stale_rejections", 1),
            ("synced", 1),
            ("post_forward_valid", 2),
        ] {
            let got = out.report.int(t, metric);
            check!(fails, got == Some(want), "trial {t}: {metric} = {got:?}, want {want}");
        }
        let router = out.report.int(t, "router_version");
        let monitor = out.report.int(t, "monitor_version");
        check!(
            fails,
            router.is_some() && router == monitor,
            "trial {t}: monitor replica at {monitor:?}, router at {router:?}"
        );
    }
    gate("a reconnecting monitor rejects stale permits and converges on the router version", fails);
}
