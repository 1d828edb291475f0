//! SNORT-style rule model, printer, and parser.
//!
//! The grammar subset, one rule per line (`#` comments and blank lines
//! ignored):
//!
//! ```text
//! alert (tcp|udp) any any -> (<ipv4>|any) (<port>|any) ( key:value; ... )
//! ```
//!
//! with keys `msg` (quoted), `pcre` (quoted `/.../i`), `sid`, `rev`.
//! `msg`, `sid`, and `rev` are required; `pcre` is optional. Rendered
//! text re-parses to an equal rule.

use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;

use super::signature::{compile_pattern, SignatureEntry};
use super::IdsError;

/// First sid allocated to generated rules.
pub const BASE_SID: u32 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleProtocol {
    Tcp,
    Udp,
}

impl fmt::Display for RuleProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleProtocol::Tcp => write!(f, "tcp"),
            RuleProtocol::Udp => write!(f, "udp"),
        }
    }
}

/// One alert rule in the supported subset. Source is always `any any`,
/// direction is always `->`; `None` destination fields render as `any`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnortRule {
    pub protocol: RuleProtocol,
    pub dest_ip: Option<Ipv4Addr>,
    pub dest_port: Option<u16>,
    pub msg: String,
    pub pcre: Option<String>,
    pub sid: u32,
    pub rev: u32,
}

impl SnortRule {
    pub fn render(&self) -> String {
        let ip = self.dest_ip.map_or("any".to_string(), |ip| ip.to_string());
        let port = self.dest_port.map_or("any".to_string(), |p| p.to_string());
        let mut options = format!("msg:\"{}\"; ", self.msg);
        if let Some(pcre) = &self.pcre {
            options.push_str(&format!("pcre:\"/{pcre}/i\"; "));
        }
        options.push_str(&format!("sid:{}; rev:{};", self.sid, self.rev));
        format!("alert {} any any -> {ip} {port} ({options})", self.protocol)
    }
}

/// Rules plus sid-to-signature-entry provenance (present when the set
/// was generated from a database; parsed files have no provenance).
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    pub rules: Vec<SnortRule>,
    pub provenance: std::collections::BTreeMap<u32, String>,
}

impl RuleSet {
    pub fn from_rules(rules: Vec<SnortRule>) -> Self {
        RuleSet { rules, provenance: Default::default() }
    }

    pub fn render(&self) -> String {
        render_rules(&self.rules)
    }
}

/// An IP watch rule: alert on TCP traffic touching `ip`.
pub fn emit_ip_rule(entry: &SignatureEntry, ip: Ipv4Addr, sid: u32) -> SnortRule {
    debug_assert!(entry.ip_addresses.contains(&ip));
    SnortRule {
        protocol: RuleProtocol::Tcp,
        dest_ip: Some(ip),
        dest_port: None,
        msg: entry.msg(),
        pcre: None,
        sid,
        rev: 1,
    }
}

/// A DNS watch rule: alert on UDP port-53 queries whose name matches
/// `pattern` (case-insensitive).
pub fn emit_dns_rule(
    entry: &SignatureEntry,
    pattern: &str,
    sid: u32,
) -> Result<SnortRule, IdsError> {
    debug_assert!(entry.domain_patterns.iter().any(|p| p == pattern));
    compile_pattern(&entry.id, pattern)?;
    Ok(SnortRule {
        protocol: RuleProtocol::Udp,
        dest_ip: None,
        dest_port: Some(53),
        msg: entry.msg(),
        pcre: Some(pattern.to_string()),
        sid,
        rev: 1,
    })
}

/// Expands a signature database into rules: per entry, one rule per IP
/// then one per pattern, sids allocated from [`BASE_SID`] in order.
pub fn generate_rules(db: &[SignatureEntry]) -> Result<RuleSet, IdsError> {
    let mut set = RuleSet::default();
    let mut sid = BASE_SID;
    for entry in db {
        for &ip in &entry.ip_addresses {
            set.rules.push(emit_ip_rule(entry, ip, sid));
            set.provenance.insert(sid, entry.id.clone());
            sid += 1;
        }
        for pattern in &entry.domain_patterns {
            set.rules.push(emit_dns_rule(entry, pattern, sid)?);
            set.provenance.insert(sid, entry.id.clone());
            sid += 1;
        }
    }
    Ok(set)
}

/// Renders rules one per line with a trailing newline.
pub fn render_rules(rules: &[SnortRule]) -> String {
    let mut out = String::new();
    for rule in rules {
        out.push_str(&rule.render());
        out.push('\n');
    }
    out
}

/// Parses a rule file in the supported grammar subset.
pub fn parse_rules(path: &Path) -> Result<Vec<SnortRule>, IdsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| IdsError::Io { path: path.display().to_string(), source: e })?;
    parse_rules_str(&text)
}

/// Parses rule text; `#` comments and blank lines are ignored.
pub fn parse_rules_str(text: &str) -> Result<Vec<SnortRule>, IdsError> {
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        rules.push(parse_rule_line(line, idx + 1)?);
    }
    Ok(rules)
}

fn syntax(line: usize, detail: impl Into<String>) -> IdsError {
    IdsError::RuleSyntaxError { line, detail: detail.into() }
}

fn parse_rule_line(line: &str, line_no: usize) -> Result<SnortRule, IdsError> {
    let open = line.find('(').ok_or_else(|| syntax(line_no, "missing '(' options block"))?;
    let close = line.rfind(')').ok_or_else(|| syntax(line_no, "missing closing ')'"))?;
    if close < open {
        return Err(syntax(line_no, "malformed options block"));
    }
    let header: Vec<&str> = line[..open].split_whitespace().collect();
    if header.len() != 7 {
        return Err(syntax(
            line_no,
            format!("header must have 7 fields (action proto src sport -> dst dport), found {}", header.len()),
        ));
    }
    if header[0] != "alert" {
        return Err(syntax(line_no, format!("unsupported action '{}' (only 'alert')", header[0])));
    }
    let protocol = match header[1] {
        "tcp" => RuleProtocol::Tcp,
        "udp" => RuleProtocol::Udp,
        other => return Err(syntax(line_no, format!("unsupported protocol '{other}'"))),
    };
    if header[2] != "any" || header[3] != "any" {
        return Err(syntax(line_no, "source must be 'any any'"));
    }
    if header[4] != "->" {
        return Err(syntax(line_no, format!("direction must be '->', found '{}'", header[4])));
    }
    let dest_ip = match header[5] {
        "any" => None,
        ip => Some(
            ip.parse::<Ipv4Addr>()
                .map_err(|_| syntax(line_no, format!("bad destination IP '{ip}'")))?,
        ),
    };
    let dest_port = match header[6] {
        "any" => None,
        p => Some(
            p.parse::<u16>()
                .map_err(|_| syntax(line_no, format!("bad destination port '{p}'")))?,
        ),
    };

    let mut msg = None;
    let mut pcre = None;
    let mut sid = None;
    let mut rev = None;
    for (key, value) in scan_options(&line[open + 1..close], line_no)? {
        match key.as_str() {
            "msg" => {
                let v = unquote(&value)
                    .ok_or_else(|| syntax(line_no, "msg value must be quoted"))?;
                if msg.replace(v).is_some() {
                    return Err(syntax(line_no, "duplicate msg"));
                }
            }
            "pcre" => {
                let v = unquote(&value)
                    .ok_or_else(|| syntax(line_no, "pcre value must be quoted"))?;
                let inner = v
                    .strip_prefix('/')
                    .and_then(|s| s.strip_suffix("/i"))
                    .ok_or_else(|| syntax(line_no, "pcre must look like \"/pattern/i\""))?;
                regex::RegexBuilder::new(inner)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| syntax(line_no, format!("invalid pcre: {e}")))?;
                if pcre.replace(inner.to_string()).is_some() {
                    return Err(syntax(line_no, "duplicate pcre"));
                }
            }
            "sid" => {
                let v: u32 = value
                    .parse()
                    .map_err(|_| syntax(line_no, format!("bad sid '{value}'")))?;
                if sid.replace(v).is_some() {
                    return Err(syntax(line_no, "duplicate sid"));
                }
            }
            "rev" => {
                let v: u32 = value
                    .parse()
                    .map_err(|_| syntax(line_no, format!("bad rev '{value}'")))?;
                if rev.replace(v).is_some() {
                    return Err(syntax(line_no, "duplicate rev"));
                }
            }
            other => return Err(syntax(line_no, format!("unsupported option '{other}'"))),
        }
    }
    Ok(SnortRule {
        protocol,
        dest_ip,
        dest_port,
        msg: msg.ok_or_else(|| syntax(line_no, "missing msg"))?,
        pcre,
        sid: sid.ok_or_else(|| syntax(line_no, "missing sid"))?,
        rev: rev.ok_or_else(|| syntax(line_no, "missing rev"))?,
    })
}

/// Splits `key:value; key:value; ...`, honouring quoted values.
fn scan_options(text: &str, line_no: usize) -> Result<Vec<(String, String)>, IdsError> {
    let mut options = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let colon = rest
            .find(':')
            .ok_or_else(|| syntax(line_no, format!("expected 'key:value;' near '{rest}'")))?;
        let key = rest[..colon].trim().to_string();
        rest = &rest[colon + 1..];
        let value_end = if rest.trim_start().starts_with('"') {
            let open = rest.find('"').unwrap();
            let close = rest[open + 1..]
                .find('"')
                .map(|i| open + 1 + i)
                .ok_or_else(|| syntax(line_no, "unterminated quote"))?;
            rest[close..]
                .find(';')
                .map(|i| close + i)
                .ok_or_else(|| syntax(line_no, "missing ';' after option"))?
        } else {
            rest.find(';').ok_or_else(|| syntax(line_no, "missing ';' after option"))?
        };
        let value = rest[..value_end].trim().to_string();
        options.push((key, value));
        rest = rest[value_end + 1..].trim_start();
    }
    Ok(options)
}

fn unquote(value: &str) -> Option<String> {
    value.strip_prefix('"')?.strip_suffix('"').map(str::to_string)
}
