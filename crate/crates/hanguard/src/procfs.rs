//! Model of the `proc/net/{tcp,tcp6,udp,udp6}` socket-table text subset
//! used for flow attribution.
//!
//! Linux prints addresses as raw 32-bit words in `%08X`, which on
//! little-endian hardware reverses the bytes within each word:
//! `BD01A8C0` is 192.168.1.189. Ports are plain big-endian hex. IPv4
//! sockets held through dual-stack v6 sockets appear in the `*6` files
//! in IPv4-mapped form, recognizable by the fixed 24-digit prefix
//! `0000000000000000FFFF0000`.
//!
//! `ProcFile` is the simulated kernel's side: it owns the rendered text
//! and bumps the virtual mtime exactly when the content changes, which
//! is what makes mtime-based poll skipping sound.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use thiserror::Error;

use crate::proto::{FlowId, Protocol};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProcfsError {
    #[error("column {col}: {msg}")]
    Column { col: usize, msg: String },
    #[error("bad hex address {0:?}")]
    BadHex(String),
    #[error("address is not IPv4-mapped")]
    NotMapped,
    #[error("flow {flow} does not fit file {file}")]
    WrongFile { flow: String, file: &'static str },
}

fn col_err(col: usize, msg: impl Into<String>) -> ProcfsError {
    ProcfsError::Column { col, msg: msg.into() }
}

/// Decodes one 8-digit word: bytes reversed into network order.
pub fn hex_to_ipv4(hex8: &str) -> Result<Ipv4Addr, ProcfsError> {
    if hex8.len() != 8 || !hex8.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ProcfsError::BadHex(hex8.to_string()));
    }
    let bytes = hex::decode(hex8).map_err(|_| ProcfsError::BadHex(hex8.to_string()))?;
    Ok(Ipv4Addr::new(bytes[3], bytes[2], bytes[1], bytes[0]))
}

const MAPPED_PREFIX: &str = "0000000000000000FFFF0000";

/// Succeeds only on the fixed mapped prefix; anything else is native v6
/// and the caller decodes it as such.
pub fn mapped6_to_ipv4(hex32: &str) -> Result<Ipv4Addr, ProcfsError> {
    if hex32.len() != 32 || !hex32.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ProcfsError::BadHex(hex32.to_string()));
    }
    if !hex32[..24].eq_ignore_ascii_case(MAPPED_PREFIX) {
        return Err(ProcfsError::NotMapped);
    }
    hex_to_ipv4(&hex32[24..])
}

fn hex_to_ipv6(hex32: &str) -> Result<Ipv6Addr, ProcfsError> {
    if hex32.len() != 32 || !hex32.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ProcfsError::BadHex(hex32.to_string()));
    }
    let raw = hex::decode(hex32).map_err(|_| ProcfsError::BadHex(hex32.to_string()))?;
    let mut bytes = [0u8; 16];
    for (word, chunk) in raw.chunks(4).enumerate() {
        for (i, b) in chunk.iter().rev().enumerate() {
            bytes[word * 4 + i] = *b;
        }
    }
    Ok(Ipv6Addr::from(bytes))
}

fn ipv4_to_hex(ip: Ipv4Addr) -> String {
    let o = ip.octets();
    format!("{:02X}{:02X}{:02X}{:02X}", o[3], o[2], o[1], o[0])
}

/// Linux socket states as printed in the `st` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SockState {
    Established = 0x01,
    SynSent = 0x02,
    SynRecv = 0x03,
    FinWait1 = 0x04,
    FinWait2 = 0x05,
    TimeWait = 0x06,
    Close = 0x07,
    CloseWait = 0x08,
    LastAck = 0x09,
    Listen = 0x0A,
    Closing = 0x0B,
}

impl SockState {
    pub fn from_code(code: u8) -> Option<SockState> {
        use SockState::*;
        Some(match code {
            0x01 => Established,
            0x02 => SynSent,
            0x03 => SynRecv,
            0x04 => FinWait1,
            0x05 => FinWait2,
            0x06 => TimeWait,
            0x07 => Close,
            0x08 => CloseWait,
            0x09 => LastAck,
            0x0A => Listen,
            0x0B => Closing,
            _ => return None,
        })
    }

    /// States that mean the flow is over or ending (FIN exchanged,
    /// timed wait, closed).
    pub fn is_closing(&self) -> bool {
        use SockState::*;
        matches!(self, FinWait1 | FinWait2 | TimeWait | Close | CloseWait | LastAck | Closing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedLine {
    pub slot: u32,
    pub local: Endpoint,
    pub remote: Endpoint,
    pub state: SockState,
    pub uid: u32,
}

impl ParsedLine {
    /// Builds the flow 5-tuple; the protocol comes from which file the
    /// line was read from.
    pub fn flow_id(&self, protocol: Protocol) -> FlowId {
        fn widen(ip: IpAddr) -> Ipv6Addr {
            match ip {
                IpAddr::V4(v4) => v4.to_ipv6_mapped(),
                IpAddr::V6(v6) => v6,
            }
        }
        FlowId {
            src_ip: widen(self.local.ip),
            src_port: self.local.port,
            dst_ip: widen(self.remote.ip),
            dst_port: self.remote.port,
            protocol,
        }
    }
}

/// True for the column-caption line every socket table starts with.
pub fn is_header(line: &str) -> bool {
    line.trim_start().starts_with("sl ")
}

fn parse_endpoint(col: usize, text: &str) -> Result<Endpoint, ProcfsError> {
    let (addr_hex, port_hex) = text
        .split_once(':')
        .ok_or_else(|| col_err(col, format!("expected addr:port, got {text:?}")))?;
    if port_hex.len() != 4 {
        return Err(col_err(col, format!("port field must be 4 hex digits, got {port_hex:?}")));
    }
    let port = u16::from_str_radix(port_hex, 16)
        .map_err(|_| col_err(col, format!("bad port hex {port_hex:?}")))?;
    let ip = match addr_hex.len() {
        8 => IpAddr::V4(hex_to_ipv4(addr_hex).map_err(|e| col_err(col, e.to_string()))?),
        32 => match mapped6_to_ipv4(addr_hex) {
            Ok(v4) => IpAddr::V4(v4),
            Err(ProcfsError::NotMapped) => {
                IpAddr::V6(hex_to_ipv6(addr_hex).map_err(|e| col_err(col, e.to_string()))?)
            }
            Err(e) => return Err(col_err(col, e.to_string())),
        },
        n => return Err(col_err(col, format!("address field must be 8 or 32 hex digits, got {n}"))),
    };
    Ok(Endpoint { ip, port })
}

pub fn parse_line(line: &str) -> Result<ParsedLine, ProcfsError> {
    let cols: Vec<&str> = line.split_whitespace().collect();
    if cols.len() < 8 {
        return Err(col_err(cols.len(), format!("expected ≥8 columns, got {}", cols.len())));
    }
    let slot_text = cols[0]
        .strip_suffix(':')
        .ok_or_else(|| col_err(0, format!("slot must end with ':', got {:?}", cols[0])))?;
    let slot = slot_text
        .parse()
        .map_err(|_| col_err(0, format!("bad slot {slot_text:?}")))?;
    let local = parse_endpoint(1, cols[1])?;
    let remote = parse_endpoint(2, cols[2])?;
    if cols[3].len() != 2 {
        return Err(col_err(3, format!("state must be 2 hex digits, got {:?}", cols[3])));
    }
    let code = u8::from_str_radix(cols[3], 16)
        .map_err(|_| col_err(3, format!("bad state hex {:?}", cols[3])))?;
    let state = SockState::from_code(code)
        .ok_or_else(|| col_err(3, format!("unknown socket state {code:#04x}")))?;
    let uid = cols[7]
        .parse()
        .map_err(|_| col_err(7, format!("bad uid {:?}", cols[7])))?;
    Ok(ParsedLine { slot, local, remote, state, uid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProcFileKind {
    Tcp,
    Tcp6,
    Udp,
    Udp6,
}

impl ProcFileKind {
    pub const ALL: [ProcFileKind; 4] =
        [ProcFileKind::Tcp, ProcFileKind::Tcp6, ProcFileKind::Udp, ProcFileKind::Udp6];

    pub fn name(&self) -> &'static str {
        match self {
            ProcFileKind::Tcp => "tcp",
            ProcFileKind::Tcp6 => "tcp6",
            ProcFileKind::Udp => "udp",
            ProcFileKind::Udp6 => "udp6",
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            ProcFileKind::Tcp | ProcFileKind::Tcp6 => Protocol::Tcp,
            ProcFileKind::Udp | ProcFileKind::Udp6 => Protocol::Udp,
        }
    }

    pub fn is_v6(&self) -> bool {
        matches!(self, ProcFileKind::Tcp6 | ProcFileKind::Udp6)
    }

    fn header(&self) -> &'static str {
        if self.is_v6() {
            "  sl  local_address                         remote_address                        st tx_queue rx_queue tr tm->when retrnsmt   uid  timeout inode"
        } else {
            "  sl  local_address rem_address   st tx_queue rx_queue tr tm->when retrnsmt   uid  timeout inode"
        }
    }
}

fn render_endpoint(kind: ProcFileKind, ip: Ipv6Addr, port: u16) -> Result<String, ProcfsError> {
    let v4 = ip.to_ipv4_mapped();
    let addr = if kind.is_v6() {
        match v4 {
            Some(v4) => format!("{MAPPED_PREFIX}{}", ipv4_to_hex(v4)),
            // Native v6: reverse bytes within each 32-bit word.
            None => {
                let bytes = ip.octets();
                let mut out = String::with_capacity(32);
                for word in bytes.chunks(4) {
                    for b in word.iter().rev() {
                        out.push_str(&format!("{b:02X}"));
                    }
                }
                out
            }
        }
    } else {
        let v4 = v4.ok_or(ProcfsError::NotMapped)?;
        ipv4_to_hex(v4)
    };
    Ok(format!("{addr}:{port:04X}"))
}

/// Renders one socket-table line; columns beyond the modeled subset are
/// constant filler so real-world parsers still tokenize it.
pub fn render_line(
    kind: ProcFileKind,
    slot: u32,
    flow: &FlowId,
    uid: u32,
    state: SockState,
) -> Result<String, ProcfsError> {
    if flow.protocol != kind.protocol() {
        return Err(ProcfsError::WrongFile { flow: flow.to_string(), file: kind.name() });
    }
    let local = render_endpoint(kind, flow.src_ip, flow.src_port).map_err(|_| {
        ProcfsError::WrongFile { flow: flow.to_string(), file: kind.name() }
    })?;
    let remote = render_endpoint(kind, flow.dst_ip, flow.dst_port).map_err(|_| {
        ProcfsError::WrongFile { flow: flow.to_string(), file: kind.name() }
    })?;
    Ok(format!(
        "{slot:4}: {local} {remote} {:02X} 00000000:00000000 00:00000000 00000000 {uid:5} 0 0 1 0000000000000000 100 0 0 10 -1",
        state as u8
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SockEntry {
    pub flow: FlowId,
    pub uid: u32,
    pub state: SockState,
}

/// One simulated socket-table file. Single writer (the simulated phone
/// kernel); readers see `text` and `mtime_us`.
#[derive(Debug, Clone)]
pub struct ProcFile {
    pub kind: ProcFileKind,
    entries: Vec<SockEntry>,
    text: String,
    mtime_us: u64,
}

impl ProcFile {
    pub fn new(kind: ProcFileKind, now_us: u64) -> ProcFile {
        ProcFile {
            kind,
            entries: Vec::new(),
            text: format!("{}\n", kind.header()),
            mtime_us: now_us,
        }
    }

    pub fn mtime_us(&self) -> u64 {
        self.mtime_us
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn entries(&self) -> &[SockEntry] {
        &self.entries
    }

    pub fn data_line_count(&self) -> usize {
        self.entries.len()
    }

    /// Replaces the table content; mtime moves iff the rendered text
    /// differs from what was there before.
    pub fn set_entries(&mut self, entries: Vec<SockEntry>, now_us: u64) -> Result<(), ProcfsError> {
        let mut text = String::from(self.kind.header());
        text.push('\n');
        for (slot, entry) in entries.iter().enumerate() {
            text.push_str(&render_line(self.kind, slot as u32, &entry.flow, entry.uid, entry.state)?);
            text.push('\n');
        }
        if text != self.text {
            self.text = text;
            self.entries = entries;
            self.mtime_us = now_us;
        }
        Ok(())
    }
}

/// The four socket tables of one simulated phone.
#[derive(Debug, Clone)]
pub struct ProcFiles {
    files: [ProcFile; 4],
}

impl ProcFiles {
    pub fn new(now_us: u64) -> ProcFiles {
        ProcFiles { files: ProcFileKind::ALL.map(|kind| ProcFile::new(kind, now_us)) }
    }

    fn index(kind: ProcFileKind) -> usize {
        ProcFileKind::ALL.iter().position(|k| *k == kind).expect("all kinds listed")
    }

    pub fn get(&self, kind: ProcFileKind) -> &ProcFile {
        &self.files[Self::index(kind)]
    }

    pub fn get_mut(&mut self, kind: ProcFileKind) -> &mut ProcFile {
        &mut self.files[Self::index(kind)]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProcFile> {
        self.files.iter()
    }

    pub fn total_data_lines(&self) -> usize {
        self.files.iter().map(|f| f.data_line_count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn little_endian_word_decoding() {
        assert_eq!(hex_to_ipv4("BD01A8C0").unwrap(), Ipv4Addr::new(192, 168, 1, 189));
        assert_eq!(hex_to_ipv4("2001A8C0").unwrap(), Ipv4Addr::new(192, 168, 1, 32));
        assert_eq!(hex_to_ipv4("00000000").unwrap(), Ipv4Addr::new(0, 0, 0, 0));
        assert!(matches!(hex_to_ipv4("XYZ"), Err(ProcfsError::BadHex(_))));
    }

    #[test]
    fn mapped_prefix_decoding() {
        assert_eq!(
            mapped6_to_ipv4("0000000000000000FFFF0000BD01A8C0").unwrap(),
            Ipv4Addr::new(192, 168, 1, 189)
        );
        assert_eq!(
            mapped6_to_ipv4("0000000000000000FFFF00002001A8C0").unwrap(),
            Ipv4Addr::new(192, 168, 1, 32)
        );
        assert_eq!(
            mapped6_to_ipv4("00000000000000000000000000000001"),
            Err(ProcfsError::NotMapped)
        );
    }

    #[test]
    fn parse_line_extracts_ports_and_state() {
        let line = "   0: BD01A8C0:1F90 2001A8C0:0050 01 00000000:00000000 00:00000000 00000000  1000 0 12345 1 0000000000000000 100 0 0 10 -1";
        let parsed = parse_line(line).unwrap();
        assert_eq!(parsed.local.port, 8080);
        assert_eq!(parsed.local.ip, IpAddr::V4(Ipv4Addr::new(192, 168, 1, 189)));
        assert_eq!(parsed.remote.port, 80);
        assert_eq!(parsed.state, SockState::Established);
        assert_eq!(parsed.uid, 1000);
        assert_eq!(parsed.slot, 0);
    }

    #[test]
    fn parse_line_decodes_mapped_v6() {
        let line = "   3: 0000000000000000FFFF0000BD01A8C0:1F90 0000000000000000FFFF00002001A8C0:0050 01 00000000:00000000 00:00000000 00000000  1000 0 1 1 0 100 0 0 10 -1";
        let parsed = parse_line(line).unwrap();
        assert_eq!(parsed.local.ip, IpAddr::V4(Ipv4Addr::new(192, 168, 1, 189)));
        assert_eq!(parsed.remote.ip, IpAddr::V4(Ipv4Addr::new(192, 168, 1, 32)));
    }

    #[test]
    fn header_and_malformed_lines_error_with_column() {
        let kind = ProcFileKind::Tcp;
        assert!(is_header(kind.header()));
        assert!(parse_line(kind.header()).is_err());
        match parse_line("  0: BD01A8C0:1F9 2001A8C0:0050 01 0:0 0:0 0 1000") {
            Err(ProcfsError::Column { col: 1, .. }) => {}
            other => panic!("expected column-1 error, got {other:?}"),
        }
        match parse_line("  0: BD01A8C0:1F90 2001A8C0:0050 ZZ 0:0 0:0 0 1000") {
            Err(ProcfsError::Column { col: 3, .. }) => {}
            other => panic!("expected column-3 error, got {other:?}"),
        }
    }

    #[test]
    fn render_reproduces_worked_hex() {
        let flow = FlowId::v4(
            Ipv4Addr::new(192, 168, 1, 189),
            8080,
            Ipv4Addr::new(192, 168, 1, 32),
            80,
            Protocol::Tcp,
        );
        let v4_line = render_line(ProcFileKind::Tcp, 0, &flow, 1000, SockState::Established).unwrap();
        assert!(v4_line.contains("BD01A8C0:1F90"), "{v4_line}");
        let v6_line = render_line(ProcFileKind::Tcp6, 0, &flow, 1000, SockState::Established).unwrap();
        assert!(v6_line.contains("0000000000000000FFFF0000BD01A8C0:1F90"), "{v6_line}");
        assert!(v6_line.contains("0000000000000000FFFF00002001A8C0:0050"), "{v6_line}");
        // Round trip through the parser.
        for line in [&v4_line, &v6_line] {
            let parsed = parse_line(line).unwrap();
            assert_eq!(parsed.flow_id(Protocol::Tcp), flow);
            assert_eq!(parsed.uid, 1000);
        }
        // Wrong-protocol or non-mapped flows refuse to render.
        assert!(render_line(ProcFileKind::Udp, 0, &flow, 1000, SockState::Established).is_err());
    }

    #[test]
    fn procfile_mtime_moves_only_on_change() {
        let flow = FlowId::v4(
            Ipv4Addr::new(192, 168, 1, 189),
            8080,
            Ipv4Addr::new(192, 168, 1, 32),
            80,
            Protocol::Tcp,
        );
        let entry = SockEntry { flow, uid: 1000, state: SockState::Established };
        let mut file = ProcFile::new(ProcFileKind::Tcp, 0);
        file.set_entries(vec![entry], 100).unwrap();
        assert_eq!(file.mtime_us(), 100);
        // Same content at a later time: mtime must not move.
        file.set_entries(vec![entry], 200).unwrap();
        assert_eq!(file.mtime_us(), 100);
        // State change is content change.
        file.set_entries(vec![SockEntry { state: SockState::TimeWait, ..entry }], 300).unwrap();
        assert_eq!(file.mtime_us(), 300);
        file.set_entries(vec![], 400).unwrap();
        assert_eq!(file.mtime_us(), 400);
        assert_eq!(file.data_line_count(), 0);
    }

    #[test]
    fn native_v6_round_trip() {
        let flow = FlowId {
            src_ip: "fe80::1234:5678:9abc:def0".parse().unwrap(),
            src_port: 5353,
            dst_ip: "2001:db8::42".parse().unwrap(),
            dst_port: 443,
            protocol: Protocol::Tcp,
        };
        let line = render_line(ProcFileKind::Tcp6, 7, &flow, 10099, SockState::Established).unwrap();
        let parsed = parse_line(&line).unwrap();
        assert_eq!(parsed.flow_id(Protocol::Tcp), flow);
        assert_eq!(parsed.slot, 7);
    }
}
