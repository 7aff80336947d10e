//! Canonical line-oriented policy text format.
//!
//! One record per line, `#` starts a comment, blank lines ignored.
//! `role` and `domain` lines carry the name as a bare token; all other
//! fields are `key=value` tokens. Lists are comma-separated; the role
//! wildcard is `domains=*`. Unknown record kinds and unknown keys are
//! rejected with the offending line number.
//!
//! `parse_policy` and `render_policy` are mutual inverses on valid
//! policies; maps render in key order, so rendering is canonical.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use thiserror::Error;

use super::{
    AppRecord, DeviceRecord, DomainDef, DomainSet, PhoneRecord, Policy, Role, Subnet,
};
use crate::mac::Mac;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct PolicyTextError {
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> PolicyTextError {
    PolicyTextError { line, msg: msg.into() }
}

/// `key=value` tokens with duplicate detection; `expected` is the exact
/// key set a record kind allows.
pub(crate) struct Fields<'a> {
    line: usize,
    values: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    pub(crate) fn parse(
        line: usize,
        tokens: &[&'a str],
        expected: &[&str],
    ) -> Result<Fields<'a>, PolicyTextError> {
        let mut values = BTreeMap::new();
        for tok in tokens {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected key=value, got {tok:?}")))?;
            if !expected.contains(&key) {
                return Err(err(line, format!("unknown key {key:?}")));
            }
            if values.insert(key, value).is_some() {
                return Err(err(line, format!("duplicate key {key:?}")));
            }
        }
        Ok(Fields { line, values })
    }

    pub(crate) fn get(&self, key: &str) -> Result<&'a str, PolicyTextError> {
        self.values
            .get(key)
            .copied()
            .ok_or_else(|| err(self.line, format!("missing key {key:?}")))
    }

    pub(crate) fn mac(&self, key: &str) -> Result<Mac, PolicyTextError> {
        self.get(key)?
            .parse()
            .map_err(|e| err(self.line, format!("{key}: {e}")))
    }

    pub(crate) fn ipv4(&self, key: &str) -> Result<Ipv4Addr, PolicyTextError> {
        self.get(key)?
            .parse()
            .map_err(|_| err(self.line, format!("{key}: invalid IPv4 address")))
    }

    pub(crate) fn bool(&self, key: &str) -> Result<bool, PolicyTextError> {
        match self.get(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(err(self.line, format!("{key}: expected true/false, got {other:?}"))),
        }
    }

    pub(crate) fn digest32(&self, key: &str) -> Result<[u8; 32], PolicyTextError> {
        let text = self.get(key)?;
        if text.len() != 64 {
            return Err(err(self.line, format!("{key}: expected 64 hex chars, got {}", text.len())));
        }
        let bytes = hex::decode(text).map_err(|_| err(self.line, format!("{key}: invalid hex")))?;
        Ok(bytes.try_into().expect("length checked"))
    }

    pub(crate) fn list(&self, key: &str) -> Result<BTreeSet<String>, PolicyTextError> {
        let text = self.get(key)?;
        if text.is_empty() {
            return Ok(BTreeSet::new());
        }
        let mut out = BTreeSet::new();
        for item in text.split(',') {
            if item.is_empty() {
                return Err(err(self.line, format!("{key}: empty list item")));
            }
            out.insert(item.to_string());
        }
        Ok(out)
    }

    pub(crate) fn subnet(&self, key: &str) -> Result<Subnet, PolicyTextError> {
        match self.get(key)? {
            "phones" => Ok(Subnet::Phones),
            "iot" => Ok(Subnet::Iot),
            other => Err(err(self.line, format!("{key}: expected phones/iot, got {other:?}"))),
        }
    }
}

fn join(set: &BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(",")
}

pub fn parse_policy(text: &str) -> Result<Policy, PolicyTextError> {
    let mut version: Option<u64> = None;
    let mut roles = BTreeMap::new();
    let mut domains = BTreeMap::new();
    let mut devices = BTreeMap::new();
    let mut phones = BTreeMap::new();
    let mut apps = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "policy" => {
                let f = Fields::parse(line_no, &tokens[1..], &["version"])?;
                let v = f
                    .get("version")?
                    .parse()
                    .map_err(|_| err(line_no, "version: expected unsigned integer"))?;
                if version.replace(v).is_some() {
                    return Err(err(line_no, "duplicate policy line"));
                }
            }
            "role" => {
                if tokens.len() < 2 || tokens[1].contains('=') {
                    return Err(err(line_no, "role: expected `role <name> domains=...`"));
                }
                let name = tokens[1].to_string();
                let f = Fields::parse(line_no, &tokens[2..], &["domains"])?;
                let accessible_domains = if f.get("domains")? == "*" {
                    DomainSet::All
                } else {
                    DomainSet::Named(f.list("domains")?)
                };
                let role = Role { name: name.clone(), accessible_domains };
                if roles.insert(name, role).is_some() {
                    return Err(err(line_no, "duplicate role"));
                }
            }
            "domain" => {
                if tokens.len() < 2 || tokens[1].contains('=') {
                    return Err(err(line_no, "domain: expected `domain <name> types=...`"));
                }
                let name = tokens[1].to_string();
                let f = Fields::parse(line_no, &tokens[2..], &["types"])?;
                let def = DomainDef { name: name.clone(), types: f.list("types")? };
                if domains.insert(name, def).is_some() {
                    return Err(err(line_no, "duplicate domain"));
                }
            }
            "device" => {
                let f = Fields::parse(
                    line_no,
                    &tokens[1..],
                    &["mac", "ip", "type", "categories", "protected", "subnet"],
                )?;
                let dev = DeviceRecord {
                    mac: f.mac("mac")?,
                    ip: f.ipv4("ip")?,
                    device_type: f.get("type")?.to_string(),
                    categories: f.list("categories")?,
                    protected: f.bool("protected")?,
                    subnet: f.subnet("subnet")?,
                };
                if devices.insert(dev.mac, dev).is_some() {
                    return Err(err(line_no, "duplicate device mac"));
                }
            }
            "phone" => {
                let f = Fields::parse(
                    line_no,
                    &tokens[1..],
                    &["mac", "ip", "role", "user", "cred", "cert", "mcn"],
                )?;
                let phone = PhoneRecord {
                    mac: f.mac("mac")?,
                    reserved_ip: f.ipv4("ip")?,
                    role: f.get("role")?.to_string(),
                    user: f.get("user")?.to_string(),
                    credential_hash: f.digest32("cred")?,
                    cert_id: f.get("cert")?.to_string(),
                    is_mcn: f.bool("mcn")?,
                };
                if phones.insert(phone.mac, phone).is_some() {
                    return Err(err(line_no, "duplicate phone mac"));
                }
            }
            "app" => {
                let f = Fields::parse(line_no, &tokens[1..], &["id", "sig", "categories"])?;
                let app = AppRecord {
                    app_id: f.get("id")?.to_string(),
                    signature: f.digest32("sig")?,
                    categories: f.list("categories")?,
                };
                if apps.insert(app.app_id.clone(), app).is_some() {
                    return Err(err(line_no, "duplicate app id"));
                }
            }
            other => return Err(err(line_no, format!("unknown record kind {other:?}"))),
        }
    }

    let version = version.ok_or_else(|| err(text.lines().count() + 1, "missing policy line"))?;
    Ok(Policy { version, roles, domains, devices, phones, apps })
}

pub fn render_policy(policy: &Policy) -> String {
    let mut out = String::new();
    out.push_str(&format!("policy version={}\n", policy.version));
    for role in policy.roles.values() {
        let domains = match &role.accessible_domains {
            DomainSet::All => "*".to_string(),
            DomainSet::Named(set) => join(set),
        };
        out.push_str(&format!("role {} domains={}\n", role.name, domains));
    }
    for domain in policy.domains.values() {
        out.push_str(&format!("domain {} types={}\n", domain.name, join(&domain.types)));
    }
    for dev in policy.devices.values() {
        out.push_str(&format!(
            "device mac={} ip={} type={} categories={} protected={} subnet={}\n",
            dev.mac,
            dev.ip,
            dev.device_type,
            join(&dev.categories),
            dev.protected,
            dev.subnet.as_str()
        ));
    }
    for phone in policy.phones.values() {
        out.push_str(&format!(
            "phone mac={} ip={} role={} user={} cred={} cert={} mcn={}\n",
            phone.mac,
            phone.reserved_ip,
            phone.role,
            phone.user,
            hex::encode(phone.credential_hash),
            phone.cert_id,
            phone.is_mcn
        ));
    }
    for app in policy.apps.values() {
        out.push_str(&format!(
            "app id={} sig={} categories={}\n",
            app.app_id,
            hex::encode(app.signature),
            join(&app.categories)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::credential_hash;

    const SAMPLE: &str = "\
# demo network
policy version=1
role Admin domains=*
role Guest domains=Unprotected
role HANUser domains=Home
domain Home types=babyMonitor_t,switch_t
domain Unprotected types=
device mac=AA:BB:CC:DD:EE:01 ip=192.168.2.1 type=switch_t categories=wemo protected=true subnet=iot
phone mac=AA:BB:CC:DD:EE:99 ip=192.168.1.5 role=HANUser user=alice cred=AHASH cert=c1 mcn=true
app id=com.belkin.wemoandroid sig=SHASH categories=wemo
";

    fn sample_text() -> String {
        SAMPLE
            .replace("AHASH", &hex::encode(credential_hash("alice", "pw")))
            .replace("SHASH", &hex::encode([0xA0u8; 32]))
    }

    #[test]
    fn parse_then_render_is_canonical_fixed_point() {
        let p = parse_policy(&sample_text()).unwrap();
        assert_eq!(p.version, 1);
        assert_eq!(p.roles.len(), 3);
        assert!(p.domains["Unprotected"].types.is_empty());
        assert_eq!(p.devices.len(), 1);
        let rendered = render_policy(&p);
        let reparsed = parse_policy(&rendered).unwrap();
        assert_eq!(p, reparsed);
        assert_eq!(rendered, render_policy(&reparsed));
    }

    #[test]
    fn unknown_key_reports_line_number() {
        let text = sample_text().replace("user=alice", "login=alice");
        let e = parse_policy(&text).unwrap_err();
        assert_eq!(e.line, 9);
        assert!(e.msg.contains("login"), "{e}");
    }

    #[test]
    fn unknown_record_kind_rejected() {
        let e = parse_policy("policy version=1\ngateway mac=AA:BB:CC:DD:EE:01\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.msg.contains("gateway"));
    }

    #[test]
    fn wildcard_and_short_cred_errors() {
        let p = parse_policy(&sample_text()).unwrap();
        assert_eq!(p.roles["Admin"].accessible_domains, DomainSet::All);
        let bad = sample_text().replace(&hex::encode(credential_hash("alice", "pw")), "abcd");
        let e = parse_policy(&bad).unwrap_err();
        assert!(e.msg.contains("64 hex"));
    }

    #[test]
    fn missing_policy_line_and_duplicates() {
        assert!(parse_policy("role Admin domains=*\n").is_err());
        let dup = format!("{}device mac=AA:BB:CC:DD:EE:01 ip=192.168.2.9 type=x_t categories= protected=false subnet=iot\n", sample_text());
        let e = parse_policy(&dup).unwrap_err();
        assert!(e.msg.contains("duplicate device"));
    }
}
