//! Hanguard: flow-level access control for home networks.
//!
//! Phones run a Monitor that attributes outgoing flows to apps and
//! pushes per-flow permits over a control channel; the router's
//! Controller caches those permits and forwards or drops data-plane
//! packets accordingly. A deterministic discrete-event simulator wires
//! both sides together for the scenario and benchmark suite.

pub mod controller;
pub mod eventlog;
pub mod mac;
pub mod monitor;
pub mod packet;
pub mod policy;
pub mod procfs;
pub mod proto;
pub mod sim;
