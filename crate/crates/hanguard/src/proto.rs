//! Control-channel wire codec and message authentication.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! u32 payload_len
//! payload:
//!   msg_type(1) credential_hash(32) phone_mac(6)
//!   src_ip(16) src_port(2) dst_ip(16) dst_port(2) protocol(1)
//!   app_id_len(1) app_id(n) app_sig(32) policy_version(8) flag(1)
//!   [body — PolicyUpdate/PolicyPush only]
//! ```
//!
//! IPv4 endpoints are always carried in IPv4-mapped form
//! (`::ffff:a.b.c.d`) so the flow identifier has constant width.
//! Decoding rejects trailing bytes: the frame length must account for
//! every byte, and only update/push messages may carry a body.

use std::net::{Ipv4Addr, Ipv6Addr};

use thiserror::Error;

use crate::mac::Mac;
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Tcp = 6,
    Udp = 17,
}

impl Protocol {
    pub fn from_byte(b: u8) -> Option<Protocol> {
        match b {
            6 => Some(Protocol::Tcp),
            17 => Some(Protocol::Udp),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        }
    }
}

/// Flow 5-tuple. Derived ordering is lexicographic over the fields in
/// declaration order; the cache's eviction tie-break relies on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId {
    pub src_ip: Ipv6Addr,
    pub src_port: u16,
    pub dst_ip: Ipv6Addr,
    pub dst_port: u16,
    pub protocol: Protocol,
}

impl FlowId {
    pub fn v4(
        src: Ipv4Addr,
        src_port: u16,
        dst: Ipv4Addr,
        dst_port: u16,
        protocol: Protocol,
    ) -> FlowId {
        FlowId {
            src_ip: src.to_ipv6_mapped(),
            src_port,
            dst_ip: dst.to_ipv6_mapped(),
            dst_port,
            protocol,
        }
    }

    pub fn src_v4(&self) -> Option<Ipv4Addr> {
        self.src_ip.to_ipv4_mapped()
    }

    pub fn dst_v4(&self) -> Option<Ipv4Addr> {
        self.dst_ip.to_ipv4_mapped()
    }
}

impl std::fmt::Display for FlowId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fn side(ip: &Ipv6Addr, port: u16) -> String {
            match ip.to_ipv4_mapped() {
                Some(v4) => format!("{v4}:{port}"),
                None => format!("[{ip}]:{port}"),
            }
        }
        write!(
            f,
            "{} {}->{}",
            self.protocol.as_str(),
            side(&self.src_ip, self.src_port),
            side(&self.dst_ip, self.dst_port)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    FlowDecision = 1,
    PolicyUpdate = 2,
    PolicyPush = 3,
    Ack = 4,
    VersionQuery = 5,
}

impl MsgType {
    fn from_byte(b: u8) -> Option<MsgType> {
        match b {
            1 => Some(MsgType::FlowDecision),
            2 => Some(MsgType::PolicyUpdate),
            3 => Some(MsgType::PolicyPush),
            4 => Some(MsgType::Ack),
            5 => Some(MsgType::VersionQuery),
            _ => None,
        }
    }

    /// Only policy transfers carry a variable body after the flag byte.
    pub fn carries_body(&self) -> bool {
        matches!(self, MsgType::PolicyUpdate | MsgType::PolicyPush)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flag {
    Invalidate = 0,
    Validate = 1,
}

impl Flag {
    fn from_byte(b: u8) -> Option<Flag> {
        match b {
            0 => Some(Flag::Invalidate),
            1 => Some(Flag::Validate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlMessage {
    pub msg_type: MsgType,
    pub credential_hash: [u8; 32],
    pub phone_mac: Mac,
    pub flow: FlowId,
    pub app_id: String,
    pub app_sig: [u8; 32],
    pub policy_version: u64,
    pub flag: Flag,
    /// Serialized policy or update text; empty unless `carries_body`.
    pub body: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("app_id length {0} exceeds 255 bytes")]
    AppIdTooLong(usize),
    #[error("{0:?} messages cannot carry a body")]
    UnexpectedBody(MsgType),
    #[error("malformed frame at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

fn malformed(offset: usize, reason: impl Into<String>) -> CodecError {
    CodecError::Malformed { offset, reason: reason.into() }
}

pub fn encode(msg: &ControlMessage) -> Result<Vec<u8>, CodecError> {
    if msg.app_id.len() > 255 {
        return Err(CodecError::AppIdTooLong(msg.app_id.len()));
    }
    if !msg.body.is_empty() && !msg.msg_type.carries_body() {
        return Err(CodecError::UnexpectedBody(msg.msg_type));
    }
    let mut payload = Vec::with_capacity(118 + msg.app_id.len() + msg.body.len());
    payload.push(msg.msg_type as u8);
    payload.extend_from_slice(&msg.credential_hash);
    payload.extend_from_slice(msg.phone_mac.as_bytes());
    payload.extend_from_slice(&msg.flow.src_ip.octets());
    payload.extend_from_slice(&msg.flow.src_port.to_be_bytes());
    payload.extend_from_slice(&msg.flow.dst_ip.octets());
    payload.extend_from_slice(&msg.flow.dst_port.to_be_bytes());
    payload.push(msg.flow.protocol as u8);
    payload.push(msg.app_id.len() as u8);
    payload.extend_from_slice(msg.app_id.as_bytes());
    payload.extend_from_slice(&msg.app_sig);
    payload.extend_from_slice(&msg.policy_version.to_be_bytes());
    payload.push(msg.flag as u8);
    payload.extend_from_slice(&msg.body);

    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(malformed(self.buf.len(), format!("truncated {what}")));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CodecError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn addr(&mut self, what: &str) -> Result<Ipv6Addr, CodecError> {
        let octets: [u8; 16] = self.take(16, what)?.try_into().unwrap();
        Ok(Ipv6Addr::from(octets))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ControlMessage, CodecError> {
    if bytes.len() < 4 {
        return Err(malformed(bytes.len(), "truncated length prefix"));
    }
    let payload_len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if bytes.len() < 4 + payload_len {
        return Err(malformed(bytes.len(), "truncated payload"));
    }
    if bytes.len() > 4 + payload_len {
        return Err(malformed(4 + payload_len, "trailing data after frame"));
    }

    let mut r = Reader { buf: bytes, pos: 4 };
    let type_pos = r.pos;
    let type_byte = r.u8("message type")?;
    let msg_type = MsgType::from_byte(type_byte)
        .ok_or_else(|| malformed(type_pos, format!("unknown message type {type_byte}")))?;
    let credential_hash: [u8; 32] = r.take(32, "credential hash")?.try_into().unwrap();
    let phone_mac = Mac::new(r.take(6, "phone mac")?.try_into().unwrap());
    let src_ip = r.addr("source address")?;
    let src_port = r.u16("source port")?;
    let dst_ip = r.addr("destination address")?;
    let dst_port = r.u16("destination port")?;
    let proto_pos = r.pos;
    let proto_byte = r.u8("protocol")?;
    let protocol = Protocol::from_byte(proto_byte)
        .ok_or_else(|| malformed(proto_pos, format!("unknown protocol {proto_byte}")))?;
    let app_id_len = r.u8("app_id length")? as usize;
    let app_id_pos = r.pos;
    let app_id = std::str::from_utf8(r.take(app_id_len, "app_id")?)
        .map_err(|_| malformed(app_id_pos, "app_id is not UTF-8"))?
        .to_string();
    let app_sig: [u8; 32] = r.take(32, "app signature")?.try_into().unwrap();
    let policy_version = r.u64("policy version")?;
    let flag_pos = r.pos;
    let flag_byte = r.u8("flag")?;
    let flag = Flag::from_byte(flag_byte)
        .ok_or_else(|| malformed(flag_pos, format!("unknown flag {flag_byte}")))?;

    let body = bytes[r.pos..].to_vec();
    if !body.is_empty() && !msg_type.carries_body() {
        return Err(malformed(r.pos, "trailing data after message"));
    }

    Ok(ControlMessage {
        msg_type,
        credential_hash,
        phone_mac,
        flow: FlowId { src_ip, src_port, dst_ip, dst_port, protocol },
        app_id,
        app_sig,
        policy_version,
        flag,
        body,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthResult {
    Ok,
    UnknownPhone,
    BadCredentials,
    CertMismatch,
    StaleVersion,
}

/// Checks run in declaration order and report the first failure: phone
/// registration, credential hash, channel certificate, policy version.
/// VersionQuery is exempt from the version check — its whole purpose is
/// to discover a version skew after a partition heals.
pub fn authenticate(msg: &ControlMessage, channel_cert: &str, policy: &Policy) -> AuthResult {
    let Some(phone) = policy.phones.get(&msg.phone_mac) else {
        return AuthResult::UnknownPhone;
    };
    if msg.credential_hash != phone.credential_hash {
        return AuthResult::BadCredentials;
    }
    if channel_cert != phone.cert_id {
        return AuthResult::CertMismatch;
    }
    if msg.msg_type != MsgType::VersionQuery && msg.policy_version != policy.version {
        return AuthResult::StaleVersion;
    }
    AuthResult::Ok
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_flow() -> FlowId {
        FlowId::v4(
            Ipv4Addr::new(192, 168, 1, 189),
            8080,
            Ipv4Addr::new(192, 168, 1, 32),
            80,
            Protocol::Tcp,
        )
    }

    pub(crate) fn sample_message() -> ControlMessage {
        let mut credential_hash = [0u8; 32];
        for (i, b) in credential_hash.iter_mut().enumerate() {
            *b = i as u8;
        }
        let mut app_sig = [0u8; 32];
        for (i, b) in app_sig.iter_mut().enumerate() {
            *b = 0xA0 + i as u8;
        }
        ControlMessage {
            msg_type: MsgType::FlowDecision,
            credential_hash,
            phone_mac: Mac([0xAA, 0xBB, 0xCC, 0xDD, 0xEE, 0x01]),
            flow: sample_flow(),
            app_id: "com.belkin.wemoandroid".into(),
            app_sig,
            policy_version: 1,
            flag: Flag::Validate,
            body: Vec::new(),
        }
    }

    #[test]
    fn round_trip_identity() {
        let msg = sample_message();
        let frame = encode(&msg).unwrap();
        assert_eq!(decode(&frame).unwrap(), msg);
    }

    #[test]
    fn payload_length_follows_layout() {
        // Fixed fields sum to 118; app_id is the only variable part.
        for len in [1usize, 7, 255] {
            let mut msg = sample_message();
            msg.app_id = "a".repeat(len);
            let frame = encode(&msg).unwrap();
            assert_eq!(frame.len(), 4 + 118 + len);
            let declared = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
            assert_eq!(declared, 118 + len);
        }
        let mut msg = sample_message();
        msg.app_id = "a".repeat(256);
        assert_eq!(encode(&msg).unwrap_err(), CodecError::AppIdTooLong(256));
    }

    #[test]
    fn trailing_and_truncated_frames_rejected() {
        let msg = sample_message();
        let mut frame = encode(&msg).unwrap();
        frame.push(0);
        assert!(matches!(decode(&frame), Err(CodecError::Malformed { .. })));
        let frame = encode(&msg).unwrap();
        assert!(matches!(decode(&frame[..frame.len() - 1]), Err(CodecError::Malformed { .. })));
        assert!(matches!(decode(&[0u8; 10]), Err(CodecError::Malformed { .. })));
    }

    #[test]
    fn body_only_on_policy_transfers() {
        let mut msg = sample_message();
        msg.body = b"policy version=2\n".to_vec();
        assert!(matches!(encode(&msg), Err(CodecError::UnexpectedBody(MsgType::FlowDecision))));
        msg.msg_type = MsgType::PolicyPush;
        let frame = encode(&msg).unwrap();
        assert_eq!(decode(&frame).unwrap(), msg);

        // Splicing a body into a FlowDecision frame must not decode.
        let mut spliced = encode(&sample_message()).unwrap();
        spliced.extend_from_slice(b"x");
        let fixed = (spliced.len() - 4) as u32;
        spliced[..4].copy_from_slice(&fixed.to_be_bytes());
        assert!(matches!(decode(&spliced), Err(CodecError::Malformed { .. })));
    }

    #[test]
    fn bad_enum_bytes_report_offset() {
        let msg = sample_message();
        let mut frame = encode(&msg).unwrap();
        frame[4] = 99; // message type byte
        match decode(&frame) {
            Err(CodecError::Malformed { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected malformed, got {other:?}"),
        }
        let mut frame = encode(&msg).unwrap();
        let proto_off = 4 + 1 + 32 + 6 + 16 + 2 + 16 + 2;
        frame[proto_off] = 3;
        match decode(&frame) {
            Err(CodecError::Malformed { offset, .. }) => assert_eq!(offset, proto_off),
            other => panic!("expected malformed, got {other:?}"),
        }
    }

    #[test]
    fn authentication_check_order() {
        use crate::policy::testutil::{app, device, phone};
        use crate::policy::Policy;

        let policy = Policy::default_policy(
            vec![phone(0x99, true)],
            vec![device(0x01, "switch_t")],
            vec![app("com.belkin.wemoandroid")],
        )
        .unwrap();
        let registered = policy.phones.values().next().unwrap();

        let mut msg = sample_message();
        msg.phone_mac = registered.mac;
        msg.credential_hash = registered.credential_hash;
        msg.policy_version = policy.version;
        assert_eq!(authenticate(&msg, &registered.cert_id, &policy), AuthResult::Ok);

        let mut unknown = msg.clone();
        unknown.phone_mac = Mac([0; 6]);
        assert_eq!(authenticate(&unknown, &registered.cert_id, &policy), AuthResult::UnknownPhone);

        let mut bad_cred = msg.clone();
        bad_cred.credential_hash = [9; 32];
        assert_eq!(
            authenticate(&bad_cred, &registered.cert_id, &policy),
            AuthResult::BadCredentials
        );

        assert_eq!(authenticate(&msg, "someone-else", &policy), AuthResult::CertMismatch);

        let mut stale = msg.clone();
        stale.policy_version = policy.version - 1;
        assert_eq!(authenticate(&stale, &registered.cert_id, &policy), AuthResult::StaleVersion);

        let mut query = stale;
        query.msg_type = MsgType::VersionQuery;
        assert_eq!(authenticate(&query, &registered.cert_id, &policy), AuthResult::Ok);
    }
}
