//! Capture decoding, flow assembly, and flow feature extraction.

mod features;
mod flow;
mod packet;
mod pcap;

pub use features::{col, compute_features, extract, FeatureVector, FEATURE_NAMES, NUM_FEATURES};
pub use flow::{assemble_flows, Endpoint, FlowKey, FlowPacket, FlowRecord, Termination};
pub use packet::{PacketRecord, Protocol, TcpFlags};
pub use pcap::{parse_pcap, read_pcap, PcapContents, PcapWriter};

use serde::{Deserialize, Serialize};

/// Flow assembly and feature timeouts, all overridable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    /// A gap above this closes a flow and starts a new one.
    pub idle_timeout_s: f64,
    /// A gap above this separates active periods (the gap is idle time).
    pub activity_timeout_s: f64,
    /// A gap above this starts a new subflow.
    pub subflow_gap_s: f64,
    /// A gap above this breaks a bulk run.
    pub bulk_gap_s: f64,
    /// Minimum consecutive same-direction packets forming a bulk.
    pub bulk_min_packets: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            idle_timeout_s: 120.0,
            activity_timeout_s: 5.0,
            subflow_gap_s: 1.0,
            bulk_gap_s: 1.0,
            bulk_min_packets: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("malformed pcap: {0}")]
    MalformedPcap(String),

    #[error("unsupported link type {0} (only Ethernet is handled)")]
    UnsupportedLinkType(u32),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FlowError {
    fn from_io(e: std::io::Error) -> Self {
        FlowError::Io { path: String::new(), source: e }
    }
}
