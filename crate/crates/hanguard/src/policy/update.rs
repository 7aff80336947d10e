//! Policy update deltas.
//!
//! An update is an ordered list of changes applied transactionally:
//! either every change lands and the version bumps by exactly one, or
//! the policy is returned untouched with a rejection reason. Only a
//! phone holding the Admin role (the MCN always does) may apply one.
//!
//! Mutating changes (`extend-domain`, `remove-type`, `set-phone-role`,
//! `bind`, `unbind`) require their target to exist when they apply, in
//! order; additive changes reject duplicates. Cross-references are
//! checked once more on the final state via `Policy::validate`, so a
//! delta may add a role and the domain it names in either order.

use std::collections::BTreeSet;

use thiserror::Error;

use super::text::{Fields, PolicyTextError};
use super::{
    AppRecord, DeviceRecord, DomainDef, DomainSet, PhoneRecord, Policy, Role, ROLE_ADMIN,
};
use crate::mac::Mac;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyChange {
    AddRole { name: String, domains: DomainSet },
    AddDomain { name: String, types: BTreeSet<String> },
    ExtendDomain { domain: String, types: BTreeSet<String> },
    RemoveType { domain: String, device_type: String },
    SetPhoneRole { phone: Mac, role: String },
    RegisterPhone(PhoneRecord),
    RegisterDevice(DeviceRecord),
    RegisterApp(AppRecord),
    Bind { app_id: String, device_mac: Mac, category: String },
    Unbind { app_id: String, device_mac: Mac, category: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyUpdate {
    pub changes: Vec<PolicyChange>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UpdateRejected {
    #[error("unauthorized actor {0}")]
    RejectedUnauthorized(Mac),
    #[error("invalid update: {0}")]
    RejectedInvalid(String),
}

impl Policy {
    /// Applies `update` as `actor_phone`. The actor must be a registered
    /// phone holding the Admin role or flagged MCN; anything else is an
    /// unauthorized attempt (the caller is expected to notify the admin).
    pub fn apply_update(
        &self,
        update: &PolicyUpdate,
        actor_phone: Mac,
    ) -> Result<Policy, UpdateRejected> {
        let authorized = self
            .phones
            .get(&actor_phone)
            .is_some_and(|p| p.is_mcn || p.role == ROLE_ADMIN);
        if !authorized {
            return Err(UpdateRejected::RejectedUnauthorized(actor_phone));
        }

        let mut next = self.clone();
        for change in &update.changes {
            apply_change(&mut next, change).map_err(UpdateRejected::RejectedInvalid)?;
        }
        next.version = self.version + 1;
        let violations = next.validate();
        if let Some(v) = violations.first() {
            return Err(UpdateRejected::RejectedInvalid(v.to_string()));
        }
        Ok(next)
    }
}

fn apply_change(policy: &mut Policy, change: &PolicyChange) -> Result<(), String> {
    match change {
        PolicyChange::AddRole { name, domains } => {
            if policy.roles.contains_key(name) {
                return Err(format!("role {name:?} already exists"));
            }
            policy.roles.insert(
                name.clone(),
                Role { name: name.clone(), accessible_domains: domains.clone() },
            );
        }
        PolicyChange::AddDomain { name, types } => {
            if policy.domains.contains_key(name) {
                return Err(format!("domain {name:?} already exists"));
            }
            policy
                .domains
                .insert(name.clone(), DomainDef { name: name.clone(), types: types.clone() });
        }
        PolicyChange::ExtendDomain { domain, types } => {
            let def = policy
                .domains
                .get_mut(domain)
                .ok_or_else(|| format!("unknown domain {domain:?}"))?;
            def.types.extend(types.iter().cloned());
        }
        PolicyChange::RemoveType { domain, device_type } => {
            let def = policy
                .domains
                .get_mut(domain)
                .ok_or_else(|| format!("unknown domain {domain:?}"))?;
            if !def.types.remove(device_type) {
                return Err(format!("type {device_type:?} not in domain {domain:?}"));
            }
        }
        PolicyChange::SetPhoneRole { phone, role } => {
            if !policy.roles.contains_key(role) {
                return Err(format!("unknown role {role:?}"));
            }
            let rec = policy
                .phones
                .get_mut(phone)
                .ok_or_else(|| format!("unknown phone {phone}"))?;
            rec.role = role.clone();
        }
        PolicyChange::RegisterPhone(phone) => {
            if policy.phones.contains_key(&phone.mac) {
                return Err(format!("phone {} already registered", phone.mac));
            }
            policy.phones.insert(phone.mac, phone.clone());
        }
        PolicyChange::RegisterDevice(dev) => {
            if policy.devices.contains_key(&dev.mac) {
                return Err(format!("device {} already registered", dev.mac));
            }
            policy.devices.insert(dev.mac, dev.clone());
        }
        PolicyChange::RegisterApp(app) => {
            if policy.apps.contains_key(&app.app_id) {
                return Err(format!("app {:?} already registered", app.app_id));
            }
            policy.apps.insert(app.app_id.clone(), app.clone());
        }
        PolicyChange::Bind { app_id, device_mac, category } => {
            if !policy.devices.contains_key(device_mac) {
                return Err(format!("unknown device {device_mac}"));
            }
            let app = policy
                .apps
                .get_mut(app_id)
                .ok_or_else(|| format!("unknown app {app_id:?}"))?;
            app.categories.insert(category.clone());
            policy
                .devices
                .get_mut(device_mac)
                .expect("checked above")
                .categories
                .insert(category.clone());
        }
        PolicyChange::Unbind { app_id, device_mac, category } => {
            if !policy.devices.contains_key(device_mac) {
                return Err(format!("unknown device {device_mac}"));
            }
            let app = policy
                .apps
                .get_mut(app_id)
                .ok_or_else(|| format!("unknown app {app_id:?}"))?;
            app.categories.remove(category);
            policy
                .devices
                .get_mut(device_mac)
                .expect("checked above")
                .categories
                .remove(category);
        }
    }
    Ok(())
}

/// Update delta text: one change per line, same token rules as the
/// policy format (`#` comments, `key=value`, comma lists).
pub fn parse_update(text: &str) -> Result<PolicyUpdate, PolicyTextError> {
    let mut changes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let rest = &tokens[1..];
        let change = match tokens[0] {
            "add-role" => {
                let f = Fields::parse(line_no, rest, &["name", "domains"])?;
                let domains = if f.get("domains")? == "*" {
                    DomainSet::All
                } else {
                    DomainSet::Named(f.list("domains")?)
                };
                PolicyChange::AddRole { name: f.get("name")?.to_string(), domains }
            }
            "add-domain" => {
                let f = Fields::parse(line_no, rest, &["name", "types"])?;
                PolicyChange::AddDomain {
                    name: f.get("name")?.to_string(),
                    types: f.list("types")?,
                }
            }
            "extend-domain" => {
                let f = Fields::parse(line_no, rest, &["name", "types"])?;
                PolicyChange::ExtendDomain {
                    domain: f.get("name")?.to_string(),
                    types: f.list("types")?,
                }
            }
            "remove-type" => {
                let f = Fields::parse(line_no, rest, &["domain", "type"])?;
                PolicyChange::RemoveType {
                    domain: f.get("domain")?.to_string(),
                    device_type: f.get("type")?.to_string(),
                }
            }
            "set-phone-role" => {
                let f = Fields::parse(line_no, rest, &["mac", "role"])?;
                PolicyChange::SetPhoneRole {
                    phone: f.mac("mac")?,
                    role: f.get("role")?.to_string(),
                }
            }
            "register-phone" => {
                let f = Fields::parse(
                    line_no,
                    rest,
                    &["mac", "ip", "role", "user", "cred", "cert", "mcn"],
                )?;
                PolicyChange::RegisterPhone(PhoneRecord {
                    mac: f.mac("mac")?,
                    reserved_ip: f.ipv4("ip")?,
                    role: f.get("role")?.to_string(),
                    user: f.get("user")?.to_string(),
                    credential_hash: f.digest32("cred")?,
                    cert_id: f.get("cert")?.to_string(),
                    is_mcn: f.bool("mcn")?,
                })
            }
            "register-device" => {
                let f = Fields::parse(
                    line_no,
                    rest,
                    &["mac", "ip", "type", "categories", "protected", "subnet"],
                )?;
                PolicyChange::RegisterDevice(DeviceRecord {
                    mac: f.mac("mac")?,
                    ip: f.ipv4("ip")?,
                    device_type: f.get("type")?.to_string(),
                    categories: f.list("categories")?,
                    protected: f.bool("protected")?,
                    subnet: f.subnet("subnet")?,
                })
            }
            "register-app" => {
                let f = Fields::parse(line_no, rest, &["id", "sig", "categories"])?;
                PolicyChange::RegisterApp(AppRecord {
                    app_id: f.get("id")?.to_string(),
                    signature: f.digest32("sig")?,
                    categories: f.list("categories")?,
                })
            }
            "bind" | "unbind" => {
                let f = Fields::parse(line_no, rest, &["app", "device", "category"])?;
                let app_id = f.get("app")?.to_string();
                let device_mac = f.mac("device")?;
                let category = f.get("category")?.to_string();
                if tokens[0] == "bind" {
                    PolicyChange::Bind { app_id, device_mac, category }
                } else {
                    PolicyChange::Unbind { app_id, device_mac, category }
                }
            }
            other => {
                return Err(PolicyTextError {
                    line: line_no,
                    msg: format!("unknown change kind {other:?}"),
                })
            }
        };
        changes.push(change);
    }
    Ok(PolicyUpdate { changes })
}

pub fn render_update(update: &PolicyUpdate) -> String {
    fn join(set: &BTreeSet<String>) -> String {
        set.iter().cloned().collect::<Vec<_>>().join(",")
    }
    let mut out = String::new();
    for change in &update.changes {
        let line = match change {
            PolicyChange::AddRole { name, domains } => {
                let d = match domains {
                    DomainSet::All => "*".to_string(),
                    DomainSet::Named(set) => join(set),
                };
                format!("add-role name={name} domains={d}")
            }
            PolicyChange::AddDomain { name, types } => {
                format!("add-domain name={name} types={}", join(types))
            }
            PolicyChange::ExtendDomain { domain, types } => {
                format!("extend-domain name={domain} types={}", join(types))
            }
            PolicyChange::RemoveType { domain, device_type } => {
                format!("remove-type domain={domain} type={device_type}")
            }
            PolicyChange::SetPhoneRole { phone, role } => {
                format!("set-phone-role mac={phone} role={role}")
            }
            PolicyChange::RegisterPhone(p) => format!(
                "register-phone mac={} ip={} role={} user={} cred={} cert={} mcn={}",
                p.mac,
                p.reserved_ip,
                p.role,
                p.user,
                hex::encode(p.credential_hash),
                p.cert_id,
                p.is_mcn
            ),
            PolicyChange::RegisterDevice(d) => format!(
                "register-device mac={} ip={} type={} categories={} protected={} subnet={}",
                d.mac,
                d.ip,
                d.device_type,
                join(&d.categories),
                d.protected,
                d.subnet.as_str()
            ),
            PolicyChange::RegisterApp(a) => format!(
                "register-app id={} sig={} categories={}",
                a.app_id,
                hex::encode(a.signature),
                join(&a.categories)
            ),
            PolicyChange::Bind { app_id, device_mac, category } => {
                format!("bind app={app_id} device={device_mac} category={category}")
            }
            PolicyChange::Unbind { app_id, device_mac, category } => {
                format!("unbind app={app_id} device={device_mac} category={category}")
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}
