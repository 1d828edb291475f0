use std::fmt;
use std::net::Ipv4Addr;

/// Transport protocol of a decoded packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Tcp,
    Udp,
    Other,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Tcp => write!(f, "TCP"),
            Protocol::Udp => write!(f, "UDP"),
            Protocol::Other => write!(f, "OTHER"),
        }
    }
}

/// TCP flag bits, in standard wire order (FIN is bit 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;
    pub const ECE: u8 = 0x40;
    pub const CWR: u8 = 0x80;

    pub const EMPTY: TcpFlags = TcpFlags(0);

    pub fn has(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    pub fn syn(self) -> bool {
        self.has(Self::SYN)
    }
    pub fn ack(self) -> bool {
        self.has(Self::ACK)
    }
    pub fn fin(self) -> bool {
        self.has(Self::FIN)
    }
    pub fn rst(self) -> bool {
        self.has(Self::RST)
    }
    pub fn psh(self) -> bool {
        self.has(Self::PSH)
    }
    pub fn urg(self) -> bool {
        self.has(Self::URG)
    }
}

/// One decoded Ethernet/IPv4 packet.
///
/// `ip_total_len` is the IP total length (header plus payload);
/// `header_len` is the IP header plus the transport header, so
/// `payload_len = ip_total_len - header_len`. The transport payload
/// bytes are retained only for UDP packets (DNS matching needs them).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub timestamp_us: i64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub ip_total_len: u32,
    pub header_len: u32,
    pub payload_len: u32,
    pub tcp_flags: TcpFlags,
    pub tcp_window: u16,
    pub l4_payload: Vec<u8>,
}

impl PacketRecord {
    pub fn src(&self) -> (Ipv4Addr, u16) {
        (self.src_ip, self.src_port)
    }

    pub fn dst(&self) -> (Ipv4Addr, u16) {
        (self.dst_ip, self.dst_port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_bits_match_wire_layout() {
        let f = TcpFlags(TcpFlags::SYN | TcpFlags::ACK);
        assert!(f.syn() && f.ack());
        assert!(!f.fin() && !f.rst() && !f.psh() && !f.urg());
        assert_eq!(TcpFlags(0x12), f);
    }
}
