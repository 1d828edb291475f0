//! Minimal DNS question decoding: just enough to read the first QNAME
//! of a query, defensively.

/// Maximum total wire length of a domain name (length octets included).
const MAX_NAME_WIRE_LEN: usize = 255;

/// Decodes the first question name of a DNS query payload.
///
/// Returns the lowercased, dot-joined name when the payload is a query
/// (QR bit 0) with QDCOUNT >= 1 and a well-formed first QNAME. Anything
/// else — responses, compression pointers inside the question, labels
/// over 63 bytes, names over 255 wire bytes, out-of-bounds lengths,
/// non-printable label bytes — yields `None`.
pub fn parse_dns_qname(udp_payload: &[u8]) -> Option<String> {
    if udp_payload.len() < 12 {
        return None;
    }
    let flags = u16::from_be_bytes([udp_payload[2], udp_payload[3]]);
    if flags & 0x8000 != 0 {
        return None; // response
    }
    let qdcount = u16::from_be_bytes([udp_payload[4], udp_payload[5]]);
    if qdcount == 0 {
        return None;
    }

    let mut at = 12usize;
    let mut wire_len = 0usize;
    let mut name = String::new();
    loop {
        let len = *udp_payload.get(at)? as usize;
        if len == 0 {
            break;
        }
        if len & 0xC0 != 0 {
            // Compression pointer or reserved bits; not allowed in the
            // question we decode.
            return None;
        }
        wire_len += 1 + len;
        if wire_len + 1 > MAX_NAME_WIRE_LEN {
            return None;
        }
        let label = udp_payload.get(at + 1..at + 1 + len)?;
        if !name.is_empty() {
            name.push('.');
        }
        for &b in label {
            // Printable ASCII only; a dot inside a label would make the
            // joined form ambiguous.
            if !(0x21..=0x7E).contains(&b) || b == b'.' {
                return None;
            }
            name.push(b.to_ascii_lowercase() as char);
        }
        at += 1 + len;
    }
    if name.is_empty() {
        None
    } else {
        Some(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A DNS query header (QR=0, RD=1, QDCOUNT=1) followed by `qname`.
    pub(crate) fn query_payload(qname_wire: &[u8]) -> Vec<u8> {
        let mut p = vec![0x12, 0x34, 0x01, 0x00, 0x00, 0x01, 0, 0, 0, 0, 0, 0];
        p.extend_from_slice(qname_wire);
        p.extend_from_slice(&[0, 1, 0, 1]); // QTYPE A, QCLASS IN
        p
    }

    const NEWS_QNAME: &[u8] = &[
        0x04, 0x6e, 0x65, 0x77, 0x73, 0x07, 0x65, 0x78, 0x61, 0x6d, 0x70, 0x6c, 0x65, 0x03,
        0x63, 0x6f, 0x6d, 0x00,
    ];

    #[test]
    fn decodes_label_sequence() {
        let payload = query_payload(NEWS_QNAME);
        assert_eq!(parse_dns_qname(&payload).as_deref(), Some("news.example.com"));
    }

    #[test]
    fn empty_payload_is_absent() {
        assert_eq!(parse_dns_qname(&[]), None);
    }

    #[test]
    fn responses_are_absent() {
        let mut payload = query_payload(NEWS_QNAME);
        payload[2] = 0x81; // QR=1
        assert_eq!(parse_dns_qname(&payload), None);
    }

    #[test]
    fn uppercase_is_folded() {
        let mut qname = NEWS_QNAME.to_vec();
        qname[1] = b'N';
        let payload = query_payload(&qname);
        assert_eq!(parse_dns_qname(&payload).as_deref(), Some("news.example.com"));
    }

    #[test]
    fn compression_pointer_is_rejected() {
        let payload = query_payload(&[0xC0, 0x0C]);
        assert_eq!(parse_dns_qname(&payload), None);
    }

    #[test]
    fn zero_qdcount_is_rejected() {
        let mut payload = query_payload(NEWS_QNAME);
        payload[5] = 0;
        assert_eq!(parse_dns_qname(&payload), None);
    }

    #[test]
    fn truncated_label_is_rejected() {
        let payload = query_payload(&[0x09, b'a', b'b']); // claims 9, has 2 + footer
        assert_eq!(parse_dns_qname(&payload), None);
    }

    #[test]
    fn overlong_names_are_rejected() {
        // 5 labels of 63 bytes = 320 wire bytes > 255.
        let mut qname = Vec::new();
        for _ in 0..5 {
            qname.push(63);
            qname.extend(std::iter::repeat_n(b'a', 63));
        }
        qname.push(0);
        assert_eq!(parse_dns_qname(&query_payload(&qname)), None);
    }

    #[test]
    fn fuzzing_never_panics_or_emits_empty_labels() {
        let mut rng = crate::rng::SplitMix64::new(0xD15EA5E);
        for _ in 0..5000 {
            let len = rng.next_below(64) as usize;
            let payload: Vec<u8> = (0..len).map(|_| rng.next_below(256) as u8).collect();
            if let Some(name) = parse_dns_qname(&payload) {
                assert!(!name.is_empty());
                assert!(!name.split('.').any(|l| l.is_empty()));
            }
        }
    }
}
