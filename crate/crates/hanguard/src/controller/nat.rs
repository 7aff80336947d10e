//! Port-restricted cone NAT gate for WAN-side traffic.
//!
//! Outbound traffic registers (local, remote) endpoint pairs; an
//! inbound packet is admitted only when the exact remote ip:port has
//! been contacted by that exact local ip:port before, protocol
//! included. Same remote host on a different port stays out.

use std::collections::BTreeSet;
use std::net::Ipv6Addr;

use crate::proto::{FlowId, Protocol};

type Pair = (Ipv6Addr, u16, Ipv6Addr, u16, Protocol);

#[derive(Debug, Clone, Default)]
pub struct NatTable {
    pairs: BTreeSet<Pair>,
}

impl NatTable {
    pub fn new() -> NatTable {
        NatTable::default()
    }

    /// Observes an outbound flow (local source, remote destination).
    pub fn record_outbound(&mut self, flow: &FlowId) {
        self.pairs
            .insert((flow.src_ip, flow.src_port, flow.dst_ip, flow.dst_port, flow.protocol));
    }

    /// Checks an inbound flow (remote source, local destination).
    pub fn admits_inbound(&self, flow: &FlowId) -> bool {
        self.pairs
            .contains(&(flow.dst_ip, flow.dst_port, flow.src_ip, flow.src_port, flow.protocol))
    }
}
