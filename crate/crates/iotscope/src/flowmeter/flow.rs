use std::collections::HashMap;
use std::net::Ipv4Addr;

use super::packet::{PacketRecord, Protocol, TcpFlags};

/// One endpoint of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

/// Canonical bidirectional flow key: the two endpoints ordered
/// lexicographically by (ip, port), so both directions of a session map
/// to the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlowKey {
    pub lo: Endpoint,
    pub hi: Endpoint,
    pub protocol: Protocol,
}

impl FlowKey {
    pub fn from_packet(p: &PacketRecord) -> Self {
        let a = Endpoint { ip: p.src_ip, port: p.src_port };
        let b = Endpoint { ip: p.dst_ip, port: p.dst_port };
        if a <= b {
            FlowKey { lo: a, hi: b, protocol: p.protocol }
        } else {
            FlowKey { lo: b, hi: a, protocol: p.protocol }
        }
    }
}

/// Why a flow was closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Fin,
    Rst,
    IdleTimeout,
    EndOfCapture,
}

/// Per-packet data retained for feature computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowPacket {
    pub timestamp_us: i64,
    pub ip_total_len: u32,
    pub header_len: u32,
    pub tcp_flags: TcpFlags,
    pub tcp_window: u16,
}

impl FlowPacket {
    fn from_record(p: &PacketRecord) -> Self {
        FlowPacket {
            timestamp_us: p.timestamp_us,
            ip_total_len: p.ip_total_len,
            header_len: p.header_len,
            tcp_flags: p.tcp_flags,
            tcp_window: p.tcp_window,
        }
    }
}

/// An assembled bidirectional flow. The forward direction is the
/// direction of the first observed packet (`initiator`).
#[derive(Debug, Clone)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub initiator: Endpoint,
    pub first_ts_us: i64,
    pub last_ts_us: i64,
    pub fwd_packets: Vec<FlowPacket>,
    pub bwd_packets: Vec<FlowPacket>,
    pub terminated_by: Termination,
}

struct FlowBuilder {
    flow: FlowRecord,
    seq: u64,
    fin_fwd: bool,
    fin_bwd: bool,
}

impl FlowBuilder {
    fn new(p: &PacketRecord, seq: u64) -> Self {
        let mut b = FlowBuilder {
            flow: FlowRecord {
                key: FlowKey::from_packet(p),
                initiator: Endpoint { ip: p.src_ip, port: p.src_port },
                first_ts_us: p.timestamp_us,
                last_ts_us: p.timestamp_us,
                fwd_packets: Vec::new(),
                bwd_packets: Vec::new(),
                terminated_by: Termination::EndOfCapture,
            },
            seq,
            fin_fwd: false,
            fin_bwd: false,
        };
        b.push(p);
        b
    }

    fn push(&mut self, p: &PacketRecord) {
        let forward =
            (p.src_ip, p.src_port) == (self.flow.initiator.ip, self.flow.initiator.port);
        let fp = FlowPacket::from_record(p);
        if forward {
            self.flow.fwd_packets.push(fp);
        } else {
            self.flow.bwd_packets.push(fp);
        }
        self.flow.last_ts_us = self.flow.last_ts_us.max(p.timestamp_us);
        if p.tcp_flags.fin() {
            if forward {
                self.fin_fwd = true;
            } else {
                self.fin_bwd = true;
            }
        }
    }

    /// Termination signal produced by the packet just pushed, if any.
    /// RST closes immediately; FIN closes once both directions have sent
    /// one.
    fn close_signal(&self, p: &PacketRecord) -> Option<Termination> {
        if p.tcp_flags.rst() {
            Some(Termination::Rst)
        } else if self.fin_fwd && self.fin_bwd {
            Some(Termination::Fin)
        } else {
            None
        }
    }

    fn finish(mut self, reason: Termination) -> (u64, FlowRecord) {
        self.flow.terminated_by = reason;
        (self.seq, self.flow)
    }
}

/// Groups packets into bidirectional flows.
///
/// Packets are processed in timestamp order (a stable sort is applied
/// if the input is out of order). A packet arriving more than
/// `idle_timeout_s` after the last packet of its flow closes that flow
/// and starts a new one. Remaining flows are flushed at end of capture.
/// The result is ordered by (first timestamp, arrival order).
pub fn assemble_flows(packets: &[PacketRecord], idle_timeout_s: f64) -> Vec<FlowRecord> {
    assert!(idle_timeout_s > 0.0, "idle_timeout_s must be positive");
    let idle_timeout_us = (idle_timeout_s * 1e6) as i64;

    let mut ordered: Vec<&PacketRecord> = packets.iter().collect();
    if !ordered.windows(2).all(|w| w[0].timestamp_us <= w[1].timestamp_us) {
        ordered.sort_by_key(|p| p.timestamp_us);
    }

    let mut active: HashMap<FlowKey, FlowBuilder> = HashMap::new();
    let mut done: Vec<(u64, FlowRecord)> = Vec::new();
    let mut seq = 0u64;

    for p in ordered {
        let key = FlowKey::from_packet(p);
        let builder = match active.remove(&key) {
            Some(b) if p.timestamp_us - b.flow.last_ts_us > idle_timeout_us => {
                done.push(b.finish(Termination::IdleTimeout));
                seq += 1;
                FlowBuilder::new(p, seq)
            }
            Some(mut b) => {
                b.push(p);
                b
            }
            None => {
                seq += 1;
                FlowBuilder::new(p, seq)
            }
        };
        match builder.close_signal(p) {
            Some(reason) => done.push(builder.finish(reason)),
            None => {
                active.insert(key, builder);
            }
        }
    }

    for (_, b) in active.drain() {
        done.push(b.finish(Termination::EndOfCapture));
    }
    done.sort_by_key(|(seq, f)| (f.first_ts_us, *seq));
    done.into_iter().map(|(_, f)| f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn udp_packet(
        ts: i64,
        src: [u8; 4],
        sport: u16,
        dst: [u8; 4],
        dport: u16,
    ) -> PacketRecord {
        PacketRecord {
            timestamp_us: ts,
            src_ip: src.into(),
            dst_ip: dst.into(),
            src_port: sport,
            dst_port: dport,
            protocol: Protocol::Udp,
            ip_total_len: 100,
            header_len: 28,
            payload_len: 72,
            tcp_flags: TcpFlags::EMPTY,
            tcp_window: 0,
            l4_payload: Vec::new(),
        }
    }

    fn tcp_packet(
        ts: i64,
        src: [u8; 4],
        sport: u16,
        dst: [u8; 4],
        dport: u16,
        flags: u8,
    ) -> PacketRecord {
        PacketRecord {
            timestamp_us: ts,
            src_ip: src.into(),
            dst_ip: dst.into(),
            src_port: sport,
            dst_port: dport,
            protocol: Protocol::Tcp,
            ip_total_len: 40,
            header_len: 40,
            payload_len: 0,
            tcp_flags: TcpFlags(flags),
            tcp_window: 1000,
            l4_payload: Vec::new(),
        }
    }

    #[test]
    fn key_is_symmetric() {
        let p = udp_packet(0, [10, 0, 0, 1], 1000, [10, 0, 0, 2], 53);
        let q = udp_packet(1, [10, 0, 0, 2], 53, [10, 0, 0, 1], 1000);
        assert_eq!(FlowKey::from_packet(&p), FlowKey::from_packet(&q));
    }

    #[test]
    fn empty_input_empty_output() {
        assert!(assemble_flows(&[], 120.0).is_empty());
    }

    #[test]
    fn bidirectional_pair_joins_one_flow() {
        let a = udp_packet(0, [10, 0, 0, 1], 1000, [10, 0, 0, 2], 53);
        let b = udp_packet(1000, [10, 0, 0, 2], 53, [10, 0, 0, 1], 1000);
        let flows = assemble_flows(&[a, b], 120.0);
        assert_eq!(flows.len(), 1);
        let f = &flows[0];
        assert_eq!(f.fwd_packets.len(), 1);
        assert_eq!(f.bwd_packets.len(), 1);
        assert_eq!(f.initiator, Endpoint { ip: [10, 0, 0, 1].into(), port: 1000 });
    }

    #[test]
    fn idle_timeout_splits_flows() {
        let a = tcp_packet(0, [10, 0, 0, 1], 1000, [10, 0, 0, 2], 80, TcpFlags::ACK);
        let b = tcp_packet(200_000_000, [10, 0, 0, 1], 1000, [10, 0, 0, 2], 80, TcpFlags::ACK);
        let flows = assemble_flows(&[a, b], 120.0);
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[0].fwd_packets.len(), 1);
        assert_eq!(flows[1].fwd_packets.len(), 1);
        assert_eq!(flows[0].terminated_by, Termination::IdleTimeout);
        assert_eq!(flows[1].terminated_by, Termination::EndOfCapture);
    }

    #[test]
    fn rst_terminates_immediately() {
        let a = tcp_packet(0, [10, 0, 0, 1], 1000, [10, 0, 0, 2], 80, TcpFlags::SYN);
        let b = tcp_packet(10, [10, 0, 0, 2], 80, [10, 0, 0, 1], 1000, TcpFlags::RST);
        let c = tcp_packet(20, [10, 0, 0, 1], 1000, [10, 0, 0, 2], 80, TcpFlags::ACK);
        let flows = assemble_flows(&[a, b, c], 120.0);
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[0].terminated_by, Termination::Rst);
        assert_eq!(flows[1].terminated_by, Termination::EndOfCapture);
    }

    #[test]
    fn fin_requires_both_directions() {
        let a = tcp_packet(0, [10, 0, 0, 1], 1000, [10, 0, 0, 2], 80, TcpFlags::FIN | TcpFlags::ACK);
        let b = tcp_packet(10, [10, 0, 0, 2], 80, [10, 0, 0, 1], 1000, TcpFlags::ACK);
        let c = tcp_packet(20, [10, 0, 0, 2], 80, [10, 0, 0, 1], 1000, TcpFlags::FIN | TcpFlags::ACK);
        let flows = assemble_flows(&[a.clone(), b.clone()], 120.0);
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].terminated_by, Termination::EndOfCapture);

        let flows = assemble_flows(&[a, b, c], 120.0);
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].terminated_by, Termination::Fin);
    }

    #[test]
    fn unsorted_input_is_stably_sorted() {
        let a = udp_packet(5000, [10, 0, 0, 1], 1000, [10, 0, 0, 2], 53);
        let b = udp_packet(0, [10, 0, 0, 2], 53, [10, 0, 0, 1], 1000);
        let flows = assemble_flows(&[a, b], 120.0);
        assert_eq!(flows.len(), 1);
        // The earliest packet defines the initiator.
        assert_eq!(flows[0].initiator.port, 53);
    }
}
