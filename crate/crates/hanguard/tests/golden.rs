//! Frozen wire and socket-table vectors. The expected bytes in
//! tests/data were produced by an independent generator, not by this
//! codebase; these tests pin the implementation to them.

use std::net::Ipv4Addr;

use hanguard::mac::Mac;
use hanguard::procfs::{parse_line, render_line, ProcFileKind, SockState};
use hanguard::proto::{decode, encode, Flag, FlowId, MsgType, Protocol};

const FLOW_DECISION_HEX: &str = include_str!("data/flow_decision.hex");
const TCP6_TABLE: &str = include_str!("data/proc_net_tcp6.txt");
const TCP4_TABLE: &str = include_str!("data/proc_net_tcp.txt");

fn golden_frame() -> Vec<u8> {
    hex::decode(FLOW_DECISION_HEX.trim()).expect("golden file is hex")
}

#[test]
fn flow_decision_frame_decodes_to_expected_fields() {
    let frame = golden_frame();
    assert_eq!(frame.len(), 4 + 140, "4-byte length prefix + 140-byte payload");
    assert_eq!(&frame[..4], &[0, 0, 0, 0x8C], "payload length 140 big-endian");

    let msg = decode(&frame).expect("golden frame decodes");
    assert_eq!(msg.msg_type, MsgType::FlowDecision);
    let cred: Vec<u8> = (0x00..0x20).collect();
    assert_eq!(msg.credential_hash.as_slice(), cred.as_slice());
    assert_eq!(msg.phone_mac, Mac([0xAA, 0xBB, 0xCC, 0xDD, 0xEE, 0x01]));
    assert_eq!(
        msg.flow,
        FlowId::v4(
            Ipv4Addr::new(192, 168, 1, 189),
            8080,
            Ipv4Addr::new(192, 168, 1, 32),
            80,
            Protocol::Tcp,
        )
    );
    assert_eq!(msg.app_id, "com.belkin.wemoandroid");
    let sig: Vec<u8> = (0xA0..0xC0).collect();
    assert_eq!(msg.app_sig.as_slice(), sig.as_slice());
    assert_eq!(msg.policy_version, 1);
    assert_eq!(msg.flag, Flag::Validate);
    assert!(msg.body.is_empty());
}

#[test]
fn flow_decision_frame_reencodes_byte_identically() {
    let frame = golden_frame();
    let msg = decode(&frame).expect("golden frame decodes");
    assert_eq!(encode(&msg).expect("re-encodes"), frame);
}

#[test]
fn tcp6_table_carries_the_verbatim_mapped_strings() {
    let worked = TCP6_TABLE.lines().nth(1).expect("first data line");
    assert!(worked.contains("0000000000000000FFFF0000BD01A8C0:1F90"), "{worked}");
    assert!(worked.contains("0000000000000000FFFF00002001A8C0:0050"), "{worked}");
}

#[test]
fn tcp6_table_decodes_every_row() {
    let rows: Vec<_> = TCP6_TABLE
        .lines()
        .skip(1)
        .map(|l| parse_line(l).expect("golden line parses"))
        .collect();
    assert_eq!(rows.len(), 3);

    assert_eq!(rows[0].local.to_string(), "192.168.1.189:8080");
    assert_eq!(rows[0].remote.to_string(), "192.168.1.32:80");
    assert_eq!(rows[0].state, SockState::Established);
    assert!(!rows[0].state.is_closing());
    assert_eq!(rows[0].uid, 10234);

    assert_eq!(rows[1].local.to_string(), "192.168.1.189:41668");
    assert_eq!(rows[1].remote.to_string(), "192.168.1.254:443");
    assert_eq!(rows[1].state, SockState::TimeWait);
    assert!(rows[1].state.is_closing());
    assert_eq!(rows[1].uid, 10077);

    // Native v6 rows survive the per-word byte reversal too.
    assert_eq!(rows[2].local.to_string(), "2001:db8::123:4567:89ab:cdef:8888");
    assert_eq!(rows[2].remote.to_string(), "fe80::1:5353");
    assert_eq!(rows[2].uid, 10501);
}

#[test]
fn tcp4_table_decodes_every_row() {
    let rows: Vec<_> = TCP4_TABLE
        .lines()
        .skip(1)
        .map(|l| parse_line(l).expect("golden line parses"))
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].local.to_string(), "192.168.1.189:8080");
    assert_eq!(rows[0].remote.to_string(), "192.168.1.32:80");
    assert_eq!(rows[1].local.to_string(), "10.0.0.5:68");
    assert_eq!(rows[1].remote.to_string(), "10.0.0.1:67");
    assert_eq!(rows[1].state, SockState::Close);
    assert_eq!(rows[1].uid, 1000);
}

#[test]
fn renderer_reproduces_the_verbatim_mapped_fields() {
    let flow = FlowId::v4(
        Ipv4Addr::new(192, 168, 1, 189),
        8080,
        Ipv4Addr::new(192, 168, 1, 32),
        80,
        Protocol::Tcp,
    );
    let line = render_line(ProcFileKind::Tcp6, 0, &flow, 10234, SockState::Established)
        .expect("renders");
    assert!(line.contains("0000000000000000FFFF0000BD01A8C0:1F90"), "{line}");
    assert!(line.contains("0000000000000000FFFF00002001A8C0:0050"), "{line}");

    let v4line = render_line(ProcFileKind::Tcp, 0, &flow, 10234, SockState::Established)
        .expect("renders");
    assert!(v4line.contains("BD01A8C0:1F90"), "{v4line}");
    assert!(v4line.contains("2001A8C0:0050"), "{v4line}");
}
