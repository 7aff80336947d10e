//! Policy-generation helpers shared by the randomized and acceptance
//! suites: a compact spec of phones/devices/apps/mutations and the
//! builder that materializes it while checking version arithmetic.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use hanguard::mac::Mac;
use hanguard::policy::{
    credential_hash, AppRecord, DeviceRecord, PhoneRecord, Policy, PolicyChange, PolicyUpdate,
    Subnet,
};

pub const TYPES: [&str; 5] = ["switch_t", "plug_t", "bulb_t", "camera_t", "lock_t"];
pub const CATS: [&str; 4] = ["home_auto", "media", "security", "climate"];
pub const ROLES: [&str; 3] = ["Admin", "HANUser", "Guest"];

#[derive(Debug, Clone)]
pub struct PolicySpec {
    /// Extra phones beyond the always-present MCN, as indexes into ROLES.
    pub phone_roles: Vec<usize>,
    /// (index into TYPES, protected) per device.
    pub devices: Vec<(usize, bool)>,
    pub apps: usize,
    /// (app pick, device pick, index into CATS) bind attempts.
    pub binds: Vec<(usize, usize, usize)>,
    /// Device picks whose type gets carved out of Home.
    pub carves: Vec<usize>,
    /// (phone pick, index into ROLES) reassignments.
    pub role_changes: Vec<(usize, usize)>,
}

pub fn phone_mac(i: u8) -> Mac {
    Mac([0x0a, 0, 0, 0, 0, i])
}

pub fn device_mac(i: u8) -> Mac {
    Mac([0x0d, 0, 0, 0, 0, i + 1])
}

/// Materializes the spec, counting every accepted mutation so version
/// arithmetic can be checked.
pub fn build_policy(spec: &PolicySpec) -> (Policy, u64) {
    let mut phones = vec![PhoneRecord {
        mac: phone_mac(0),
        reserved_ip: Ipv4Addr::new(192, 168, 1, 10),
        role: String::new(),
        user: "u0".into(),
        credential_hash: credential_hash("u0", "pw"),
        cert_id: "cert-0".into(),
        is_mcn: true,
    }];
    for (i, role) in spec.phone_roles.iter().enumerate() {
        phones.push(PhoneRecord {
            mac: phone_mac(i as u8 + 1),
            reserved_ip: Ipv4Addr::new(192, 168, 1, 11 + i as u8),
            role: ROLES[*role].to_string(),
            user: format!("u{}", i + 1),
            credential_hash: credential_hash(&format!("u{}", i + 1), "pw"),
            cert_id: format!("cert-{}", i + 1),
            is_mcn: false,
        });
    }
    let devices: Vec<DeviceRecord> = spec
        .devices
        .iter()
        .enumerate()
        .map(|(i, (ty, protected))| DeviceRecord {
            mac: device_mac(i as u8),
            ip: Ipv4Addr::new(192, 168, 2, i as u8 + 1),
            device_type: TYPES[*ty].to_string(),
            categories: BTreeSet::new(),
            protected: *protected,
            subnet: if *protected { Subnet::Iot } else { Subnet::Phones },
        })
        .collect();
    let apps: Vec<AppRecord> = (0..spec.apps)
        .map(|i| AppRecord {
            app_id: format!("app{i}"),
            signature: [i as u8; 32],
            categories: BTreeSet::new(),
        })
        .collect();

    let mut policy = Policy::default_policy(phones, devices, apps).expect("spec topologies build");
    let mut accepted = 0u64;
    for (app, dev, cat) in &spec.binds {
        let app_id = format!("app{}", app % spec.apps);
        let dev = device_mac((dev % spec.devices.len()) as u8);
        if let Ok(next) = policy.bind_app_device(&app_id, dev, CATS[*cat]) {
            assert_eq!(next.version, policy.version + 1, "bind bumps version by one");
            policy = next;
            accepted += 1;
        }
    }
    let mut carved = BTreeSet::new();
    for pick in &spec.carves {
        let ty = TYPES[spec.devices[pick % spec.devices.len()].0].to_string();
        if !carved.insert(ty.clone()) {
            continue;
        }
        let update = PolicyUpdate {
            changes: vec![
                PolicyChange::AddDomain {
                    name: format!("carve_{ty}"),
                    types: [ty.clone()].into(),
                },
                PolicyChange::RemoveType { domain: "Home".into(), device_type: ty },
            ],
        };
        if let Ok(next) = policy.apply_update(&update, phone_mac(0)) {
            assert_eq!(next.version, policy.version + 1, "update bumps version by one");
            policy = next;
            accepted += 1;
        }
    }
    for (phone, role) in &spec.role_changes {
        if spec.phone_roles.is_empty() {
            break;
        }
        let mac = phone_mac((phone % spec.phone_roles.len()) as u8 + 1);
        let update = PolicyUpdate {
            changes: vec![PolicyChange::SetPhoneRole { phone: mac, role: ROLES[*role].to_string() }],
        };
        if let Ok(next) = policy.apply_update(&update, phone_mac(0)) {
            assert_eq!(next.version, policy.version + 1, "update bumps version by one");
            policy = next;
            accepted += 1;
        }
    }
    (policy, accepted)
}
