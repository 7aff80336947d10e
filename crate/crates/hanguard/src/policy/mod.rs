//! Role-based access control model with type enforcement and
//! multi-category security.
//!
//! Phones carry roles, roles reach domains, domains group device types;
//! a flow passes the phone-level (TE) check when the phone's role reaches
//! a domain containing the target device's type. The app-level (MCS)
//! check then requires the requesting app and the device to share at
//! least one category tag. MCS runs after TE and can only further
//! restrict: a TE deny is never recovered by matching categories.
//!
//! Policies are immutable values; every accepted change produces a new
//! `Policy` with the version bumped by one. The single writer is the
//! router's policy update service; replicas share read-only copies.

mod text;
mod update;

pub use text::{parse_policy, render_policy, PolicyTextError};
pub use update::{parse_update, render_update, PolicyChange, PolicyUpdate, UpdateRejected};

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mac::Mac;

pub const ROLE_ADMIN: &str = "Admin";
pub const ROLE_HAN_USER: &str = "HANUser";
pub const ROLE_GUEST: &str = "Guest";
pub const DOMAIN_HOME: &str = "Home";
pub const DOMAIN_UNPROTECTED: &str = "Unprotected";

/// Domains reachable by a role: either everything (the admin wildcard,
/// which automatically covers domains created later) or an explicit set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainSet {
    All,
    Named(BTreeSet<String>),
}

impl DomainSet {
    pub fn named<I: IntoIterator<Item = S>, S: Into<String>>(domains: I) -> Self {
        DomainSet::Named(domains.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, domain: &str) -> bool {
        match self {
            DomainSet::All => true,
            DomainSet::Named(set) => set.contains(domain),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Role {
    pub name: String,
    pub accessible_domains: DomainSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainDef {
    pub name: String,
    pub types: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subnet {
    Phones,
    Iot,
}

impl Subnet {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subnet::Phones => "phones",
            Subnet::Iot => "iot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceRecord {
    pub mac: Mac,
    pub ip: Ipv4Addr,
    pub device_type: String,
    pub categories: BTreeSet<String>,
    pub protected: bool,
    pub subnet: Subnet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneRecord {
    pub mac: Mac,
    pub reserved_ip: Ipv4Addr,
    pub role: String,
    pub user: String,
    pub credential_hash: [u8; 32],
    pub cert_id: String,
    pub is_mcn: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppRecord {
    pub app_id: String,
    pub signature: [u8; 32],
    pub categories: BTreeSet<String>,
}

/// SHA-256 over the ASCII string "username:password".
pub fn credential_hash(user: &str, password: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(user.as_bytes());
    h.update(b":");
    h.update(password.as_bytes());
    h.finalize().into()
}

/// Outcome of the two-level access check. The phone-level (TE) verdict
/// is computed first; categories are consulted only if it passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessDecision {
    Allow,
    DenyPhoneLevel,
    DenyAppLevel,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("unknown device {0}")]
    UnknownDevice(Mac),
    #[error("unknown phone {0}")]
    UnknownPhone(Mac),
    #[error("unknown app {0:?}")]
    UnknownApp(String),
    #[error("{0}")]
    Config(String),
}

/// A named policy invariant violation; `subject` identifies the record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub version: u64,
    pub roles: BTreeMap<String, Role>,
    pub domains: BTreeMap<String, DomainDef>,
    pub devices: BTreeMap<Mac, DeviceRecord>,
    pub phones: BTreeMap<Mac, PhoneRecord>,
    pub apps: BTreeMap<String, AppRecord>,
}

impl Policy {
    /// Builds the automatic setup-phase policy: Admin reaches every
    /// domain, HANUser reaches "Home" (which collects every registered
    /// device's type), Guest reaches only "Unprotected". The MCN phone
    /// is given the Admin role; other phones default to HANUser. Devices
    /// without a type get a fresh `<mac>_t` name; protected devices land
    /// on the iot subnet.
    pub fn default_policy(
        phones: Vec<PhoneRecord>,
        devices: Vec<DeviceRecord>,
        apps: Vec<AppRecord>,
    ) -> Result<Policy, PolicyError> {
        let mcn_count = phones.iter().filter(|p| p.is_mcn).count();
        if mcn_count != 1 {
            return Err(PolicyError::Config(format!(
                "exactly one MCN phone required, found {mcn_count}"
            )));
        }

        let mut roles = BTreeMap::new();
        roles.insert(
            ROLE_ADMIN.to_string(),
            Role { name: ROLE_ADMIN.to_string(), accessible_domains: DomainSet::All },
        );
        roles.insert(
            ROLE_HAN_USER.to_string(),
            Role {
                name: ROLE_HAN_USER.to_string(),
                accessible_domains: DomainSet::named([DOMAIN_HOME]),
            },
        );
        roles.insert(
            ROLE_GUEST.to_string(),
            Role {
                name: ROLE_GUEST.to_string(),
                accessible_domains: DomainSet::named([DOMAIN_UNPROTECTED]),
            },
        );

        let mut device_map = BTreeMap::new();
        let mut home_types = BTreeSet::new();
        for mut dev in devices {
            if dev.device_type.is_empty() {
                dev.device_type = format!("{}_t", dev.mac.dashed());
            }
            if dev.protected {
                dev.subnet = Subnet::Iot;
            }
            home_types.insert(dev.device_type.clone());
            if device_map.insert(dev.mac, dev).is_some() {
                return Err(PolicyError::Config("duplicate device MAC".into()));
            }
        }

        let mut domains = BTreeMap::new();
        domains.insert(
            DOMAIN_HOME.to_string(),
            DomainDef { name: DOMAIN_HOME.to_string(), types: home_types },
        );
        domains.insert(
            DOMAIN_UNPROTECTED.to_string(),
            DomainDef { name: DOMAIN_UNPROTECTED.to_string(), types: BTreeSet::new() },
        );

        let mut phone_map = BTreeMap::new();
        for mut phone in phones {
            if phone.is_mcn {
                phone.role = ROLE_ADMIN.to_string();
            } else if phone.role.is_empty() {
                phone.role = ROLE_HAN_USER.to_string();
            }
            if !roles.contains_key(&phone.role) {
                return Err(PolicyError::UnknownRole(phone.role));
            }
            if device_map.contains_key(&phone.mac) {
                return Err(PolicyError::Config(format!(
                    "MAC {} registered as both phone and device",
                    phone.mac
                )));
            }
            if phone_map.insert(phone.mac, phone).is_some() {
                return Err(PolicyError::Config("duplicate phone MAC".into()));
            }
        }

        let mut app_map = BTreeMap::new();
        for app in apps {
            if app_map.insert(app.app_id.clone(), app).is_some() {
                return Err(PolicyError::Config("duplicate app id".into()));
            }
        }

        let policy = Policy {
            version: 1,
            roles,
            domains,
            devices: device_map,
            phones: phone_map,
            apps: app_map,
        };
        let violations = policy.validate();
        if !violations.is_empty() {
            return Err(PolicyError::Config(format!(
                "generated policy invalid: {}",
                violations[0]
            )));
        }
        Ok(policy)
    }

    pub fn role_of_phone(&self, mac: Mac) -> Option<&str> {
        self.phones.get(&mac).map(|p| p.role.as_str())
    }

    /// Role used for a source MAC: registered phones keep their assigned
    /// role, everything unregistered is folded into Guest.
    pub fn effective_role(&self, mac: Mac) -> &str {
        self.role_of_phone(mac).unwrap_or(ROLE_GUEST)
    }

    pub fn device_by_ip(&self, ip: Ipv4Addr) -> Option<&DeviceRecord> {
        self.devices.values().find(|d| d.ip == ip)
    }

    /// Type-enforcement check: does some domain reachable by the role
    /// contain the device's type?
    pub fn te_check(&self, role_name: &str, device_mac: Mac) -> Result<bool, PolicyError> {
        let role = self
            .roles
            .get(role_name)
            .ok_or_else(|| PolicyError::UnknownRole(role_name.to_string()))?;
        let device = self
            .devices
            .get(&device_mac)
            .ok_or(PolicyError::UnknownDevice(device_mac))?;
        Ok(match &role.accessible_domains {
            DomainSet::All => true,
            DomainSet::Named(names) => names.iter().any(|name| {
                self.domains
                    .get(name)
                    .is_some_and(|d| d.types.contains(&device.device_type))
            }),
        })
    }

    /// Multi-category check: the app and the device must share at least
    /// one category tag.
    pub fn mcs_check(&self, app_id: &str, device_mac: Mac) -> Result<bool, PolicyError> {
        let app = self
            .apps
            .get(app_id)
            .ok_or_else(|| PolicyError::UnknownApp(app_id.to_string()))?;
        let device = self
            .devices
            .get(&device_mac)
            .ok_or(PolicyError::UnknownDevice(device_mac))?;
        Ok(app.categories.intersection(&device.categories).next().is_some())
    }

    /// Two-level decision, TE first. MCS can only further restrict.
    pub fn authorize(
        &self,
        phone_mac: Mac,
        app_id: &str,
        device_mac: Mac,
    ) -> Result<AccessDecision, PolicyError> {
        let phone = self
            .phones
            .get(&phone_mac)
            .ok_or(PolicyError::UnknownPhone(phone_mac))?;
        if !self.te_check(&phone.role, device_mac)? {
            return Ok(AccessDecision::DenyPhoneLevel);
        }
        if !self.mcs_check(app_id, device_mac)? {
            return Ok(AccessDecision::DenyAppLevel);
        }
        Ok(AccessDecision::Allow)
    }

    /// Setup-phase app/device binding: tags both records with the
    /// category and bumps the version.
    pub fn bind_app_device(
        &self,
        app_id: &str,
        device_mac: Mac,
        category: &str,
    ) -> Result<Policy, PolicyError> {
        if !self.apps.contains_key(app_id) {
            return Err(PolicyError::UnknownApp(app_id.to_string()));
        }
        if !self.devices.contains_key(&device_mac) {
            return Err(PolicyError::UnknownDevice(device_mac));
        }
        let mut next = self.clone();
        next.apps
            .get_mut(app_id)
            .unwrap()
            .categories
            .insert(category.to_string());
        next.devices
            .get_mut(&device_mac)
            .unwrap()
            .categories
            .insert(category.to_string());
        next.version += 1;
        Ok(next)
    }

    /// Checks every structural invariant and returns one violation per
    /// offending record. Empty output means the policy is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mcn: Vec<_> = self.phones.values().filter(|p| p.is_mcn).collect();
        if mcn.len() != 1 {
            out.push(Violation {
                subject: "phones".into(),
                message: if mcn.len() > 1 {
                    format!("duplicate MCN ({} phones flagged)", mcn.len())
                } else {
                    "no MCN phone".into()
                },
            });
        }
        for role in self.roles.values() {
            if role.name.is_empty() {
                out.push(Violation {
                    subject: "role".into(),
                    message: "empty role name".into(),
                });
            }
            if let DomainSet::Named(names) = &role.accessible_domains {
                for name in names {
                    match self.domains.get(name) {
                        None => out.push(Violation {
                            subject: format!("role {}", role.name),
                            message: format!("references missing domain {name:?}"),
                        }),
                        Some(d) if d.types.is_empty() && name != DOMAIN_UNPROTECTED => {
                            out.push(Violation {
                                subject: format!("domain {name}"),
                                message: format!(
                                    "empty type set but referenced by role {}",
                                    role.name
                                ),
                            })
                        }
                        _ => {}
                    }
                }
            }
        }
        let mut reserved_ips: BTreeMap<Ipv4Addr, Mac> = BTreeMap::new();
        for phone in self.phones.values() {
            if !self.roles.contains_key(&phone.role) {
                out.push(Violation {
                    subject: format!("phone {}", phone.mac),
                    message: format!("unknown role {:?}", phone.role),
                });
            }
            if let Some(prev) = reserved_ips.insert(phone.reserved_ip, phone.mac) {
                out.push(Violation {
                    subject: format!("phone {}", phone.mac),
                    message: format!("reserved IP {} already held by {prev}", phone.reserved_ip),
                });
            }
            if self.devices.contains_key(&phone.mac) {
                out.push(Violation {
                    subject: format!("phone {}", phone.mac),
                    message: "MAC also registered as a device".into(),
                });
            }
        }
        for dev in self.devices.values() {
            let reachable = self
                .domains
                .values()
                .any(|d| d.types.contains(&dev.device_type));
            if !reachable {
                out.push(Violation {
                    subject: format!("device {}", dev.mac),
                    message: format!(
                        "type {:?} not in any domain; unreachable by non-Admin roles",
                        dev.device_type
                    ),
                });
            }
            if dev.protected && dev.subnet != Subnet::Iot {
                out.push(Violation {
                    subject: format!("device {}", dev.mac),
                    message: "protected device outside the iot subnet".into(),
                });
            }
        }
        out
    }
}

/// Record constructors shared by tests across the crate.
#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub(crate) fn mac(last: u8) -> Mac {
        Mac([0xAA, 0xBB, 0xCC, 0xDD, 0xEE, last])
    }

    pub(crate) fn phone(last: u8, mcn: bool) -> PhoneRecord {
        PhoneRecord {
            mac: mac(last),
            reserved_ip: Ipv4Addr::new(192, 168, 1, last),
            role: String::new(),
            user: format!("user{last}"),
            credential_hash: credential_hash(&format!("user{last}"), "pw"),
            cert_id: format!("cert{last}"),
            is_mcn: mcn,
        }
    }

    pub(crate) fn device(last: u8, ty: &str) -> DeviceRecord {
        DeviceRecord {
            mac: mac(last),
            ip: Ipv4Addr::new(192, 168, 2, last),
            device_type: ty.to_string(),
            categories: BTreeSet::new(),
            protected: true,
            subnet: Subnet::Iot,
        }
    }

    pub(crate) fn app(id: &str) -> AppRecord {
        let mut sig = [0u8; 32];
        sig[..id.len().min(32)].copy_from_slice(&id.as_bytes()[..id.len().min(32)]);
        AppRecord { app_id: id.to_string(), signature: sig, categories: BTreeSet::new() }
    }
}
