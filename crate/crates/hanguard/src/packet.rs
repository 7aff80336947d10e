//! The modeled data-plane unit.
//!
//! Enforcement never looks at payloads, so a packet is just its flow
//! 5-tuple plus the link-layer addresses the router sees.

use crate::mac::Mac;
use crate::proto::FlowId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub flow: FlowId,
    pub src_mac: Mac,
    pub dst_mac: Mac,
}

impl Packet {
    pub fn new(flow: FlowId, src_mac: Mac, dst_mac: Mac) -> Packet {
        Packet { flow, src_mac, dst_mac }
    }

    /// The reply direction: endpoints and link addresses swapped.
    pub fn reply(&self) -> Packet {
        Packet {
            flow: FlowId {
                src_ip: self.flow.dst_ip,
                src_port: self.flow.dst_port,
                dst_ip: self.flow.src_ip,
                dst_port: self.flow.src_port,
                protocol: self.flow.protocol,
            },
            src_mac: self.dst_mac,
            dst_mac: self.src_mac,
        }
    }
}
