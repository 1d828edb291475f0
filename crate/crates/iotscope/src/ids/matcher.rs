//! Rule matching over decoded packets.
//!
//! An IP constraint matches traffic from or to the address, regardless
//! of the rendered `->` direction; a port constraint likewise matches
//! either endpoint. A pcre constraint matches the decoded DNS query
//! name case-insensitively. At most one alert fires per (rule, packet);
//! alerts are ordered by timestamp, then sid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use chrono::DateTime;

use super::rules::{RuleSet, SnortRule};
use super::{parse_dns_qname, IdsError};
use crate::flowmeter::{PacketRecord, Protocol};
use crate::ids::rules::RuleProtocol;

/// One fired alert, tied to exactly one rule and one packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alert {
    pub timestamp_us: i64,
    pub sid: u32,
    pub msg: String,
    pub protocol: Protocol,
    pub src: (Ipv4Addr, u16),
    pub dst: (Ipv4Addr, u16),
    /// Signature entry id, when the rule set carries provenance.
    pub matched_entry_id: Option<String>,
}

impl Alert {
    /// `[<ISO-8601>] [sid:<sid>] <msg> {<PROTO>} <src> -> <dst>`
    pub fn log_line(&self) -> String {
        let ts = DateTime::from_timestamp_micros(self.timestamp_us)
            .map(|t| t.format("%Y-%m-%dT%H:%M:%S%.6fZ").to_string())
            .unwrap_or_else(|| format!("@{}us", self.timestamp_us));
        format!(
            "[{ts}] [sid:{}] {} {{{}}} {}:{} -> {}:{}",
            self.sid,
            self.msg,
            self.protocol,
            self.src.0,
            self.src.1,
            self.dst.0,
            self.dst.1
        )
    }
}

impl fmt::Display for Alert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.log_line())
    }
}

struct PreparedRule<'a> {
    rule: &'a SnortRule,
    pattern: Option<regex::Regex>,
}

fn prepare(rules: &RuleSet) -> Result<Vec<PreparedRule<'_>>, IdsError> {
    rules
        .rules
        .iter()
        .map(|rule| {
            let pattern = match &rule.pcre {
                Some(p) => Some(
                    regex::RegexBuilder::new(p)
                        .case_insensitive(true)
                        .build()
                        .map_err(|e| IdsError::InvalidRegex {
                            entry: format!("sid:{}", rule.sid),
                            pattern: p.clone(),
                            detail: e.to_string(),
                        })?,
                ),
                None => None,
            };
            Ok(PreparedRule { rule, pattern })
        })
        .collect()
}

fn rule_matches(prepared: &PreparedRule<'_>, packet: &PacketRecord, qname: &Option<String>) -> bool {
    let rule = prepared.rule;
    let proto_ok = matches!(
        (rule.protocol, packet.protocol),
        (RuleProtocol::Tcp, Protocol::Tcp) | (RuleProtocol::Udp, Protocol::Udp)
    );
    if !proto_ok {
        return false;
    }
    if let Some(ip) = rule.dest_ip {
        if packet.src_ip != ip && packet.dst_ip != ip {
            return false;
        }
    }
    if let Some(port) = rule.dest_port {
        if packet.src_port != port && packet.dst_port != port {
            return false;
        }
    }
    if let Some(pattern) = &prepared.pattern {
        match qname {
            Some(name) => pattern.is_match(name),
            None => false,
        }
    } else {
        true
    }
}

/// Runs every rule over every packet.
pub fn match_rules(packets: &[PacketRecord], rules: &RuleSet) -> Result<Vec<Alert>, IdsError> {
    let prepared = prepare(rules)?;
    let mut alerts = Vec::new();
    for packet in packets {
        let qname = if packet.protocol == Protocol::Udp
            && (packet.src_port == 53 || packet.dst_port == 53)
        {
            parse_dns_qname(&packet.l4_payload)
        } else {
            None
        };
        for p in &prepared {
            if rule_matches(p, packet, &qname) {
                alerts.push(Alert {
                    timestamp_us: packet.timestamp_us,
                    sid: p.rule.sid,
                    msg: p.rule.msg.clone(),
                    protocol: packet.protocol,
                    src: (packet.src_ip, packet.src_port),
                    dst: (packet.dst_ip, packet.dst_port),
                    matched_entry_id: rules.provenance.get(&p.rule.sid).cloned(),
                });
            }
        }
    }
    alerts.sort_by_key(|a| (a.timestamp_us, a.sid));
    Ok(alerts)
}

/// One row of the DNS frequency report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsReportRow {
    pub qname: String,
    pub queries: u64,
    pub distinct_sources: u64,
}

/// Aggregates decoded query names over all UDP port-53 packets, sorted
/// by query count descending, then name.
pub fn dns_frequency_report(packets: &[PacketRecord]) -> Vec<DnsReportRow> {
    let mut counts: BTreeMap<String, (u64, BTreeSet<Ipv4Addr>)> = BTreeMap::new();
    for packet in packets {
        if packet.protocol != Protocol::Udp
            || (packet.src_port != 53 && packet.dst_port != 53)
        {
            continue;
        }
        if let Some(name) = parse_dns_qname(&packet.l4_payload) {
            let slot = counts.entry(name).or_default();
            slot.0 += 1;
            slot.1.insert(packet.src_ip);
        }
    }
    let mut rows: Vec<DnsReportRow> = counts
        .into_iter()
        .map(|(qname, (queries, sources))| DnsReportRow {
            qname,
            queries,
            distinct_sources: sources.len() as u64,
        })
        .collect();
    rows.sort_by(|a, b| b.queries.cmp(&a.queries).then(a.qname.cmp(&b.qname)));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CategoryLabel;
    use crate::flowmeter::TcpFlags;
    use crate::ids::rules::{emit_ip_rule, generate_rules};
    use crate::ids::SignatureEntry;

    fn tcp_packet(ts: i64, src: [u8; 4], dst: [u8; 4]) -> PacketRecord {
        PacketRecord {
            timestamp_us: ts,
            src_ip: src.into(),
            dst_ip: dst.into(),
            src_port: 40000,
            dst_port: 443,
            protocol: Protocol::Tcp,
            ip_total_len: 40,
            header_len: 40,
            payload_len: 0,
            tcp_flags: TcpFlags(TcpFlags::ACK),
            tcp_window: 1000,
            l4_payload: Vec::new(),
        }
    }

    fn dns_packet(ts: i64, src: [u8; 4], qname_wire: &[u8]) -> PacketRecord {
        let mut payload = vec![0x00, 0x01, 0x01, 0x00, 0x00, 0x01, 0, 0, 0, 0, 0, 0];
        payload.extend_from_slice(qname_wire);
        payload.extend_from_slice(&[0, 1, 0, 1]);
        PacketRecord {
            timestamp_us: ts,
            src_ip: src.into(),
            dst_ip: [10, 0, 0, 53].into(),
            src_port: 50000,
            dst_port: 53,
            protocol: Protocol::Udp,
            ip_total_len: (20 + 8 + payload.len()) as u32,
            header_len: 28,
            payload_len: payload.len() as u32,
            tcp_flags: TcpFlags::EMPTY,
            tcp_window: 0,
            l4_payload: payload,
        }
    }

    const NEWS_QNAME: &[u8] = &[
        0x04, b'n', b'e', b'w', b's', 0x07, b'e', b'x', b'a', b'm', b'p', b'l', b'e', 0x03,
        b'c', b'o', b'm', 0x00,
    ];

    fn news_entry() -> SignatureEntry {
        SignatureEntry {
            id: "hub-news".into(),
            category: CategoryLabel::Hub,
            action: "accessing news content".into(),
            ip_addresses: vec![Ipv4Addr::new(203, 0, 113, 5)],
            domain_patterns: vec![r"news\.example\.com".into()],
            notes: String::new(),
        }
    }

    #[test]
    fn ip_rule_fires_once_per_matching_packet() {
        let entry = news_entry();
        let rule = emit_ip_rule(&entry, Ipv4Addr::new(203, 0, 113, 5), 1_000_001);
        let set = RuleSet::from_rules(vec![rule]);
        let packets = vec![
            tcp_packet(0, [10, 0, 0, 1], [203, 0, 113, 5]),
            tcp_packet(10, [10, 0, 0, 1], [203, 0, 113, 99]),
        ];
        let alerts = match_rules(&packets, &set).unwrap();
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].sid, 1_000_001);
        assert_eq!(alerts[0].matched_entry_id, None); // no provenance on bare sets
    }

    #[test]
    fn either_direction_matches_the_ip() {
        let entry = news_entry();
        let set = generate_rules(&[entry]).unwrap();
        let reply = tcp_packet(5, [203, 0, 113, 5], [10, 0, 0, 1]);
        let alerts = match_rules(&[reply], &set).unwrap();
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].matched_entry_id.as_deref(), Some("hub-news"));
    }

    #[test]
    fn dns_rule_fires_on_matching_query() {
        let set = generate_rules(&[news_entry()]).unwrap();
        let packets = vec![dns_packet(42, [10, 0, 0, 7], NEWS_QNAME)];
        let alerts = match_rules(&packets, &set).unwrap();
        assert_eq!(alerts.len(), 1);
        assert!(alerts[0].msg.contains("accessing news content"));
        assert_eq!(alerts[0].protocol, Protocol::Udp);
    }

    #[test]
    fn unrelated_traffic_fires_nothing() {
        let set = generate_rules(&[news_entry()]).unwrap();
        let other_qname: &[u8] =
            &[0x05, b'o', b't', b'h', b'e', b'r', 0x03, b'n', b'e', b't', 0x00];
        let packets = vec![
            tcp_packet(0, [10, 0, 0, 1], [198, 51, 100, 20]),
            dns_packet(10, [10, 0, 0, 1], other_qname),
        ];
        assert!(match_rules(&packets, &set).unwrap().is_empty());
    }

    #[test]
    fn alerts_sort_by_time_then_sid() {
        let entry = news_entry();
        let set = generate_rules(&[entry]).unwrap(); // sids: ip=1000000, dns=1000001
        let packets = vec![
            dns_packet(100, [10, 0, 0, 7], NEWS_QNAME),
            tcp_packet(100, [10, 0, 0, 1], [203, 0, 113, 5]),
            tcp_packet(50, [10, 0, 0, 1], [203, 0, 113, 5]),
        ];
        let alerts = match_rules(&packets, &set).unwrap();
        let keys: Vec<(i64, u32)> = alerts.iter().map(|a| (a.timestamp_us, a.sid)).collect();
        assert_eq!(keys, vec![(50, 1_000_000), (100, 1_000_000), (100, 1_000_001)]);
    }

    #[test]
    fn log_line_format() {
        let alert = Alert {
            timestamp_us: 1_704_067_200_123_456,
            sid: 1_000_001,
            msg: "Hub/accessing news content".into(),
            protocol: Protocol::Tcp,
            src: (Ipv4Addr::new(10, 0, 0, 1), 40000),
            dst: (Ipv4Addr::new(203, 0, 113, 5), 443),
            matched_entry_id: None,
        };
        assert_eq!(
            alert.log_line(),
            "[2024-01-01T00:00:00.123456Z] [sid:1000001] Hub/accessing news content {TCP} 10.0.0.1:40000 -> 203.0.113.5:443"
        );
    }

    #[test]
    fn frequency_report_counts_and_sorts() {
        let a: &[u8] = &[0x01, b'a', 0x07, b'e', b'x', b'a', b'm', b'p', b'l', b'e', 0x00];
        let b: &[u8] = &[0x01, b'b', 0x07, b'e', b'x', b'a', b'm', b'p', b'l', b'e', 0x00];
        let packets = vec![
            dns_packet(0, [10, 0, 0, 1], a),
            dns_packet(1, [10, 0, 0, 2], a),
            dns_packet(2, [10, 0, 0, 1], a),
            dns_packet(3, [10, 0, 0, 1], b),
        ];
        let rows = dns_frequency_report(&packets);
        assert_eq!(
            rows,
            vec![
                DnsReportRow { qname: "a.example".into(), queries: 3, distinct_sources: 2 },
                DnsReportRow { qname: "b.example".into(), queries: 1, distinct_sources: 1 },
            ]
        );
    }

    #[test]
    fn no_dns_traffic_empty_report() {
        let packets = vec![tcp_packet(0, [10, 0, 0, 1], [10, 0, 0, 2])];
        assert!(dns_frequency_report(&packets).is_empty());
    }
}
