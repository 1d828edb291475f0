//! Signature database, SNORT-style rule generation/parsing, and packet
//! matching for device-action detection.

mod dns;
mod matcher;
mod rules;
mod signature;

pub use dns::parse_dns_qname;
pub use matcher::{dns_frequency_report, match_rules, Alert, DnsReportRow};
pub use rules::{
    emit_dns_rule, emit_ip_rule, generate_rules, parse_rules, parse_rules_str, render_rules,
    RuleProtocol, RuleSet, SnortRule, BASE_SID,
};
pub use signature::{
    example_db_json, load_signature_db, load_signature_db_str, SignatureEntry,
};

#[derive(Debug, thiserror::Error)]
pub enum IdsError {
    #[error("signature database: {0}")]
    ParseError(String),

    #[error("entry '{entry}': invalid regex '{pattern}': {detail}")]
    InvalidRegex { entry: String, pattern: String, detail: String },

    #[error("line {line}: {detail}")]
    RuleSyntaxError { line: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
