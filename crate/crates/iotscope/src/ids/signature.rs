//! Curated signature entries: a device action keyed to the server IPs
//! it talks to and/or the DNS names it resolves.

use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IdsError;
use crate::dataset::CategoryLabel;

/// One curated behaviour signature. At least one of `ip_addresses` /
/// `domain_patterns` must be nonempty; patterns are case-insensitive
/// regexes over the queried DNS name (no backreferences or lookaround,
/// matching stays linear-time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureEntry {
    pub id: String,
    pub category: CategoryLabel,
    pub action: String,
    #[serde(default)]
    pub ip_addresses: Vec<Ipv4Addr>,
    #[serde(default)]
    pub domain_patterns: Vec<String>,
    #[serde(default)]
    pub notes: String,
}

impl SignatureEntry {
    /// The alert message rendered into this entry's rules.
    pub fn msg(&self) -> String {
        format!("{}/{}", self.category.name(), self.action)
    }
}

pub(super) fn compile_pattern(entry_id: &str, pattern: &str) -> Result<regex::Regex, IdsError> {
    regex::RegexBuilder::new(pattern)
        .case_insensitive(true)
        .build()
        .map_err(|e| IdsError::InvalidRegex {
            entry: entry_id.to_string(),
            pattern: pattern.to_string(),
            detail: e.to_string(),
        })
}

fn validate(entries: &[SignatureEntry]) -> Result<(), IdsError> {
    let mut seen = std::collections::BTreeSet::new();
    for entry in entries {
        if entry.id.is_empty() {
            return Err(IdsError::ParseError("entry with empty id".into()));
        }
        if !seen.insert(&entry.id) {
            return Err(IdsError::ParseError(format!("duplicate entry id '{}'", entry.id)));
        }
        if entry.ip_addresses.is_empty() && entry.domain_patterns.is_empty() {
            return Err(IdsError::ParseError(format!(
                "entry '{}' has neither IP addresses nor domain patterns",
                entry.id
            )));
        }
        for pattern in &entry.domain_patterns {
            compile_pattern(&entry.id, pattern)?;
        }
    }
    Ok(())
}

/// Parses and validates a signature database from JSON text.
pub fn load_signature_db_str(json: &str) -> Result<Vec<SignatureEntry>, IdsError> {
    let entries: Vec<SignatureEntry> =
        serde_json::from_str(json).map_err(|e| IdsError::ParseError(e.to_string()))?;
    validate(&entries)?;
    Ok(entries)
}

/// Loads a signature database file.
pub fn load_signature_db(path: &Path) -> Result<Vec<SignatureEntry>, IdsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| IdsError::Io { path: path.display().to_string(), source: e })?;
    load_signature_db_str(&text)
}

/// The example database shipped with the crate. Addresses use the
/// 203.0.113.0/24 documentation range and example domains; operators
/// are expected to replace them with observed vendor endpoints.
pub fn example_db_json() -> &'static str {
    include_str!("../../data/example_signatures.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list_loads() {
        assert!(load_signature_db_str("[]").unwrap().is_empty());
    }

    #[test]
    fn entry_without_targets_is_rejected() {
        let json = r#"[{"id":"x","category":"Hub","action":"a"}]"#;
        assert!(matches!(load_signature_db_str(json), Err(IdsError::ParseError(_))));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let json = r#"[
            {"id":"x","category":"Hub","action":"a","ip_addresses":["203.0.113.1"]},
            {"id":"x","category":"Hub","action":"b","ip_addresses":["203.0.113.2"]}
        ]"#;
        assert!(matches!(load_signature_db_str(json), Err(IdsError::ParseError(_))));
    }

    #[test]
    fn bad_regex_is_rejected() {
        let json = r#"[{"id":"x","category":"Hub","action":"a","domain_patterns":["[a-"]}]"#;
        assert!(matches!(load_signature_db_str(json), Err(IdsError::InvalidRegex { .. })));
    }

    #[test]
    fn shipped_db_loads_with_expected_pairs() {
        let db = load_signature_db_str(example_db_json()).unwrap();
        assert!(db
            .iter()
            .any(|e| e.category == CategoryLabel::Hub && e.action == "accessing news content"));
        assert!(db.iter().any(|e| e.category == CategoryLabel::StreamingDevices
            && e.action == "Streaming cable television"));
        // Every shipped address stays inside the documentation range.
        for e in &db {
            for ip in &e.ip_addresses {
                assert_eq!(ip.octets()[..3], [203, 0, 113], "{ip}");
            }
        }
    }
}
