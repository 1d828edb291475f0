//! Classic libpcap file reading and writing.
//!
//! Only the classic (non-ng) capture format is handled: magic
//! `0xA1B2C3D4` (microsecond timestamps) or `0xA1B23C4D` (nanosecond
//! timestamps), either byte order, link type 1 (Ethernet). Nanosecond
//! timestamps are truncated to microseconds on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use super::packet::{PacketRecord, Protocol, TcpFlags};
use super::FlowError;

const MAGIC_US: u32 = 0xA1B2_C3D4;
const MAGIC_NS: u32 = 0xA1B2_3C4D;
const LINKTYPE_ETHERNET: u32 = 1;

const ETHERTYPE_IPV4: u16 = 0x0800;
const IPPROTO_TCP: u8 = 6;
const IPPROTO_UDP: u8 = 17;

/// Decoded packets plus the count of frames that were skipped
/// (non-IPv4, trailing IP fragments, or undecodable).
#[derive(Debug, Clone)]
pub struct PcapContents {
    pub packets: Vec<PacketRecord>,
    pub skipped: u64,
}

/// Reads an entire capture file, decoding Ethernet/IPv4 frames.
///
/// Frames that are not IPv4-over-Ethernet, IP fragments other than the
/// first, and frames too short to decode are skipped and counted.
pub fn read_pcap(path: &Path) -> Result<PcapContents, FlowError> {
    let file = File::open(path).map_err(|e| FlowError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut reader = BufReader::new(file);
    let mut data = Vec::new();
    reader.read_to_end(&mut data).map_err(|e| FlowError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_pcap(&data)
}

/// Parses a capture from an in-memory byte buffer.
pub fn parse_pcap(data: &[u8]) -> Result<PcapContents, FlowError> {
    if data.len() < 24 {
        return Err(FlowError::MalformedPcap("truncated global header".into()));
    }
    let raw_magic = u32::from_le_bytes(data[0..4].try_into().unwrap());
    // The magic doubles as a byte-order mark: a swapped match means the
    // file was written big-endian.
    let (big_endian, nanos) = match raw_magic {
        MAGIC_US => (false, false),
        MAGIC_NS => (false, true),
        m if m.swap_bytes() == MAGIC_US => (true, false),
        m if m.swap_bytes() == MAGIC_NS => (true, true),
        m => return Err(FlowError::MalformedPcap(format!("bad magic 0x{m:08X}"))),
    };
    let read_u32 = |bytes: &[u8]| -> u32 {
        let arr: [u8; 4] = bytes.try_into().unwrap();
        if big_endian {
            u32::from_be_bytes(arr)
        } else {
            u32::from_le_bytes(arr)
        }
    };
    let linktype = read_u32(&data[20..24]);
    if linktype != LINKTYPE_ETHERNET {
        return Err(FlowError::UnsupportedLinkType(linktype));
    }

    let mut packets = Vec::new();
    let mut skipped = 0u64;
    let mut off = 24usize;
    while off < data.len() {
        if data.len() - off < 16 {
            return Err(FlowError::MalformedPcap(format!(
                "truncated record header at offset {off}"
            )));
        }
        let ts_sec = read_u32(&data[off..off + 4]) as i64;
        let ts_frac = read_u32(&data[off + 4..off + 8]) as i64;
        let incl_len = read_u32(&data[off + 8..off + 12]) as usize;
        off += 16;
        if data.len() - off < incl_len {
            return Err(FlowError::MalformedPcap(format!(
                "record at offset {} declares {} bytes but only {} remain",
                off - 16,
                incl_len,
                data.len() - off
            )));
        }
        let frame = &data[off..off + incl_len];
        off += incl_len;
        let timestamp_us = if nanos {
            ts_sec * 1_000_000 + ts_frac / 1000
        } else {
            ts_sec * 1_000_000 + ts_frac
        };
        match decode_frame(timestamp_us, frame) {
            Some(p) => packets.push(p),
            None => skipped += 1,
        }
    }
    Ok(PcapContents { packets, skipped })
}

/// Decodes one Ethernet frame to a `PacketRecord`, or `None` if the
/// frame is out of scope (non-IPv4, trailing fragment, truncated).
fn decode_frame(timestamp_us: i64, frame: &[u8]) -> Option<PacketRecord> {
    if frame.len() < 14 {
        return None;
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    if ethertype != ETHERTYPE_IPV4 {
        return None;
    }
    let ip = &frame[14..];
    if ip.len() < 20 {
        return None;
    }
    let version = ip[0] >> 4;
    let ihl = ((ip[0] & 0x0F) as usize) * 4;
    if version != 4 || ihl < 20 || ip.len() < ihl {
        return None;
    }
    let ip_total_len = u16::from_be_bytes([ip[2], ip[3]]) as u32;
    if (ip_total_len as usize) < ihl {
        return None;
    }
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    if frag & 0x1FFF != 0 {
        // Fragment with nonzero offset: only the first fragment carries
        // the transport header.
        return None;
    }
    let proto_byte = ip[9];
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let l4 = &ip[ihl..];

    let (protocol, src_port, dst_port, transport_len, tcp_flags, tcp_window, l4_payload) =
        match proto_byte {
            IPPROTO_TCP => {
                if l4.len() < 20 {
                    return None;
                }
                let src_port = u16::from_be_bytes([l4[0], l4[1]]);
                let dst_port = u16::from_be_bytes([l4[2], l4[3]]);
                let data_offset = ((l4[12] >> 4) as usize) * 4;
                if data_offset < 20 {
                    return None;
                }
                let flags = TcpFlags(l4[13]);
                let window = u16::from_be_bytes([l4[14], l4[15]]);
                (Protocol::Tcp, src_port, dst_port, data_offset, flags, window, Vec::new())
            }
            IPPROTO_UDP => {
                if l4.len() < 8 {
                    return None;
                }
                let src_port = u16::from_be_bytes([l4[0], l4[1]]);
                let dst_port = u16::from_be_bytes([l4[2], l4[3]]);
                let payload = l4[8..].to_vec();
                (Protocol::Udp, src_port, dst_port, 8, TcpFlags::EMPTY, 0, payload)
            }
            _ => (Protocol::Other, 0, 0, 0, TcpFlags::EMPTY, 0, Vec::new()),
        };

    let header_len = (ihl + transport_len) as u32;
    let payload_len = ip_total_len.saturating_sub(header_len);
    Some(PacketRecord {
        timestamp_us,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        protocol,
        ip_total_len,
        header_len,
        payload_len,
        tcp_flags,
        tcp_window,
        l4_payload,
    })
}

/// Streaming writer for classic pcap files (little-endian, microsecond
/// timestamps, Ethernet link type).
pub struct PcapWriter<W: Write> {
    out: W,
}

impl PcapWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, FlowError> {
        let file = File::create(path).map_err(|e| FlowError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::new(BufWriter::new(file))
    }
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W) -> Result<Self, FlowError> {
        let mut header = Vec::with_capacity(24);
        header.extend_from_slice(&MAGIC_US.to_le_bytes());
        header.extend_from_slice(&2u16.to_le_bytes()); // version major
        header.extend_from_slice(&4u16.to_le_bytes()); // version minor
        header.extend_from_slice(&0i32.to_le_bytes()); // thiszone
        header.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
        header.extend_from_slice(&65535u32.to_le_bytes()); // snaplen
        header.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        out.write_all(&header).map_err(FlowError::from_io)?;
        Ok(Self { out })
    }

    /// Appends one frame, captured in full (incl_len == orig_len).
    pub fn write_frame(&mut self, timestamp_us: i64, frame: &[u8]) -> Result<(), FlowError> {
        let ts_sec = (timestamp_us / 1_000_000) as u32;
        let ts_usec = (timestamp_us % 1_000_000) as u32;
        let len = frame.len() as u32;
        self.out
            .write_all(&ts_sec.to_le_bytes())
            .and_then(|_| self.out.write_all(&ts_usec.to_le_bytes()))
            .and_then(|_| self.out.write_all(&len.to_le_bytes()))
            .and_then(|_| self.out.write_all(&len.to_le_bytes()))
            .and_then(|_| self.out.write_all(frame))
            .map_err(FlowError::from_io)
    }

    pub fn finish(mut self) -> Result<(), FlowError> {
        self.out.flush().map_err(FlowError::from_io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn global_header() -> Vec<u8> {
        let mut h = Vec::new();
        h.extend_from_slice(&MAGIC_US.to_le_bytes());
        h.extend_from_slice(&2u16.to_le_bytes());
        h.extend_from_slice(&4u16.to_le_bytes());
        h.extend_from_slice(&0i32.to_le_bytes());
        h.extend_from_slice(&0u32.to_le_bytes());
        h.extend_from_slice(&65535u32.to_le_bytes());
        h.extend_from_slice(&1u32.to_le_bytes());
        h
    }

    fn record(ts_sec: u32, ts_usec: u32, frame: &[u8]) -> Vec<u8> {
        let mut r = Vec::new();
        r.extend_from_slice(&ts_sec.to_le_bytes());
        r.extend_from_slice(&ts_usec.to_le_bytes());
        r.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        r.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        r.extend_from_slice(frame);
        r
    }

    /// Ethernet/IPv4/TCP frame built field by field.
    pub(crate) fn tcp_frame(
        src: [u8; 4],
        dst: [u8; 4],
        sport: u16,
        dport: u16,
        flags: u8,
        window: u16,
        payload: &[u8],
    ) -> Vec<u8> {
        let mut f = Vec::new();
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]); // dst mac
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]); // src mac
        f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
        let total = 20 + 20 + payload.len() as u16;
        f.push(0x45); // v4, ihl 5
        f.push(0);
        f.extend_from_slice(&total.to_be_bytes());
        f.extend_from_slice(&[0, 0, 0, 0]); // id, flags+frag
        f.push(64); // ttl
        f.push(IPPROTO_TCP);
        f.extend_from_slice(&[0, 0]); // checksum
        f.extend_from_slice(&src);
        f.extend_from_slice(&dst);
        f.extend_from_slice(&sport.to_be_bytes());
        f.extend_from_slice(&dport.to_be_bytes());
        f.extend_from_slice(&[0, 0, 0, 1]); // seq
        f.extend_from_slice(&[0, 0, 0, 0]); // ack
        f.push(0x50); // data offset 5
        f.push(flags);
        f.extend_from_slice(&window.to_be_bytes());
        f.extend_from_slice(&[0, 0, 0, 0]); // checksum, urgent
        f.extend_from_slice(payload);
        f
    }

    fn arp_frame() -> Vec<u8> {
        let mut f = Vec::new();
        f.extend_from_slice(&[0xFF; 6]);
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x03]);
        f.extend_from_slice(&0x0806u16.to_be_bytes());
        f.extend_from_slice(&[0u8; 28]);
        f
    }

    #[test]
    fn empty_pcap_yields_empty_sequence() {
        let out = parse_pcap(&global_header()).unwrap();
        assert!(out.packets.is_empty());
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn arp_frame_is_skipped_and_counted() {
        let mut data = global_header();
        data.extend(record(0, 0, &arp_frame()));
        data.extend(record(
            0,
            10,
            &tcp_frame([10, 0, 0, 1], [10, 0, 0, 2], 1234, 80, TcpFlags::SYN, 1000, &[]),
        ));
        let out = parse_pcap(&data).unwrap();
        assert_eq!(out.packets.len(), 1);
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn handshake_fields_decode_exactly() {
        // SYN, SYN|ACK, ACK at 0us, 100us, 200us.
        let a = [10, 0, 0, 1];
        let b = [203, 0, 113, 5];
        let mut data = global_header();
        data.extend(record(0, 0, &tcp_frame(a, b, 40000, 443, TcpFlags::SYN, 64240, &[])));
        data.extend(record(
            0,
            100,
            &tcp_frame(b, a, 443, 40000, TcpFlags::SYN | TcpFlags::ACK, 28960, &[]),
        ));
        data.extend(record(0, 200, &tcp_frame(a, b, 40000, 443, TcpFlags::ACK, 64240, &[])));
        let out = parse_pcap(&data).unwrap();
        assert_eq!(out.skipped, 0);
        assert_eq!(out.packets.len(), 3);

        let p0 = &out.packets[0];
        assert_eq!(p0.timestamp_us, 0);
        assert_eq!(p0.src_ip, Ipv4Addr::new(10, 0, 0, 1));
        assert_eq!(p0.dst_ip, Ipv4Addr::new(203, 0, 113, 5));
        assert_eq!((p0.src_port, p0.dst_port), (40000, 443));
        assert_eq!(p0.protocol, Protocol::Tcp);
        assert_eq!(p0.ip_total_len, 40);
        assert_eq!(p0.header_len, 40);
        assert_eq!(p0.payload_len, 0);
        assert_eq!(p0.tcp_flags, TcpFlags(TcpFlags::SYN));
        assert_eq!(p0.tcp_window, 64240);

        assert_eq!(out.packets[1].tcp_flags, TcpFlags(TcpFlags::SYN | TcpFlags::ACK));
        assert_eq!(out.packets[1].timestamp_us, 100);
        assert_eq!(out.packets[2].tcp_flags, TcpFlags(TcpFlags::ACK));
        assert_eq!(out.packets[2].timestamp_us, 200);
    }

    #[test]
    fn bad_magic_is_malformed() {
        let mut data = global_header();
        data[0] = 0x00;
        assert!(matches!(parse_pcap(&data), Err(FlowError::MalformedPcap(_))));
    }

    #[test]
    fn truncated_global_header_is_malformed() {
        let data = global_header();
        assert!(matches!(parse_pcap(&data[..20]), Err(FlowError::MalformedPcap(_))));
    }

    #[test]
    fn non_ethernet_link_type_is_rejected() {
        let mut data = global_header();
        data[20] = 101; // LINKTYPE_RAW
        assert!(matches!(parse_pcap(&data), Err(FlowError::UnsupportedLinkType(101))));
    }

    #[test]
    fn truncated_record_is_malformed() {
        let mut data = global_header();
        data.extend(record(0, 0, &arp_frame()));
        data.truncate(data.len() - 3);
        assert!(matches!(parse_pcap(&data), Err(FlowError::MalformedPcap(_))));
    }

    #[test]
    fn big_endian_and_nanosecond_variants() {
        // Big-endian microseconds.
        let mut be = Vec::new();
        be.extend_from_slice(&MAGIC_US.to_be_bytes());
        be.extend_from_slice(&2u16.to_be_bytes());
        be.extend_from_slice(&4u16.to_be_bytes());
        be.extend_from_slice(&0i32.to_be_bytes());
        be.extend_from_slice(&0u32.to_be_bytes());
        be.extend_from_slice(&65535u32.to_be_bytes());
        be.extend_from_slice(&1u32.to_be_bytes());
        let frame = tcp_frame([10, 0, 0, 1], [10, 0, 0, 2], 1, 2, TcpFlags::ACK, 10, &[]);
        be.extend_from_slice(&7u32.to_be_bytes());
        be.extend_from_slice(&5u32.to_be_bytes());
        be.extend_from_slice(&(frame.len() as u32).to_be_bytes());
        be.extend_from_slice(&(frame.len() as u32).to_be_bytes());
        be.extend_from_slice(&frame);
        let out = parse_pcap(&be).unwrap();
        assert_eq!(out.packets[0].timestamp_us, 7_000_005);

        // Little-endian nanoseconds truncate to microseconds.
        let mut ns = global_header();
        ns[0..4].copy_from_slice(&MAGIC_NS.to_le_bytes());
        ns.extend(record(7, 5999, &frame));
        let out = parse_pcap(&ns).unwrap();
        assert_eq!(out.packets[0].timestamp_us, 7_000_005);
    }

    #[test]
    fn trailing_fragment_is_skipped() {
        let mut frame = tcp_frame([10, 0, 0, 1], [10, 0, 0, 2], 1, 2, 0, 0, &[]);
        // Set fragment offset within the IP header (byte 14+6..14+8).
        frame[20] = 0x00;
        frame[21] = 0x08; // offset 8 (in 8-byte units)
        let mut data = global_header();
        data.extend(record(0, 0, &frame));
        let out = parse_pcap(&data).unwrap();
        assert!(out.packets.is_empty());
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn writer_output_reads_back() {
        let mut buf = Vec::new();
        {
            let mut w = PcapWriter::new(&mut buf).unwrap();
            let frame = tcp_frame([10, 0, 0, 1], [10, 0, 0, 2], 5, 6, TcpFlags::SYN, 100, b"xy");
            w.write_frame(1_234_567, &frame).unwrap();
            w.finish().unwrap();
        }
        let out = parse_pcap(&buf).unwrap();
        assert_eq!(out.packets.len(), 1);
        assert_eq!(out.packets[0].timestamp_us, 1_234_567);
        assert_eq!(out.packets[0].payload_len, 2);
    }
}
