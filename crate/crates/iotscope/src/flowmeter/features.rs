//! Per-flow feature computation.
//!
//! The canonical schema is the 63 columns of [`FEATURE_NAMES`], in that
//! order. Definitions, pinned so that independent implementations agree
//! bit-for-bit where possible:
//!
//! * All durations are seconds; each microsecond difference is divided
//!   by 1e6 individually before aggregation.
//! * Packet length features use the IP total length (header included).
//! * Every standard deviation is the population deviation; the deviation
//!   of fewer than two values is 0, and statistics over an empty set
//!   (min/max/mean/std) are all 0.
//! * Every rate or ratio with a zero denominator is 0, never NaN.
//! * The merged packet sequence interleaves both directions ordered by
//!   timestamp, forward packets before backward packets at equal
//!   timestamps.
//! * Active/idle: a gap in the merged sequence strictly greater than the
//!   activity timeout is an idle period (its duration is the gap); the
//!   maximal spans between idle gaps are the active periods.
//! * Subflows: the flow splits at merged-sequence gaps strictly greater
//!   than the subflow gap; subflow features divide direction totals by
//!   the resulting segment count.
//! * Bulks: maximal runs of same-direction packets in the merged
//!   sequence, further split at gaps strictly greater than the bulk gap;
//!   runs of at least `bulk_min_packets` packets count as bulks. Bulk
//!   features average bytes, packets, and byte rate over a direction's
//!   bulks (a zero-duration bulk has rate 0).

use super::flow::{assemble_flows, FlowRecord};
use super::packet::TcpFlags;
use super::pcap::read_pcap;
use super::{FlowConfig, FlowError};
use std::path::Path;

pub const NUM_FEATURES: usize = 63;

/// Canonical column names, in CSV order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "flow_duration",
    "flow_bytes_per_s",
    "flow_packets_per_s",
    "flow_iat_mean",
    "flow_iat_std",
    "flow_iat_max",
    "flow_iat_min",
    "fwd_packet_count",
    "bwd_packet_count",
    "fwd_bytes_total",
    "bwd_bytes_total",
    "fwd_packets_per_s",
    "bwd_packets_per_s",
    "fwd_pkt_len_max",
    "fwd_pkt_len_min",
    "fwd_pkt_len_mean",
    "fwd_pkt_len_std",
    "bwd_pkt_len_max",
    "bwd_pkt_len_min",
    "bwd_pkt_len_mean",
    "bwd_pkt_len_std",
    "pkt_len_min",
    "pkt_len_max",
    "pkt_len_mean",
    "pkt_len_std",
    "pkt_len_variance",
    "fwd_header_len",
    "bwd_header_len",
    "fwd_iat_mean",
    "fwd_iat_std",
    "fwd_iat_max",
    "fwd_iat_min",
    "bwd_iat_mean",
    "bwd_iat_std",
    "bwd_iat_max",
    "bwd_iat_min",
    "syn_count",
    "ack_count",
    "fin_count",
    "rst_count",
    "psh_count",
    "urg_count",
    "fwd_bytes_bulk_avg",
    "fwd_packets_bulk_avg",
    "fwd_bulk_rate_avg",
    "bwd_bytes_bulk_avg",
    "bwd_packets_bulk_avg",
    "bwd_bulk_rate_avg",
    "subflow_fwd_packets",
    "subflow_fwd_bytes",
    "subflow_bwd_packets",
    "subflow_bwd_bytes",
    "init_fwd_win_bytes",
    "init_bwd_win_bytes",
    "active_mean",
    "active_std",
    "active_max",
    "active_min",
    "idle_mean",
    "idle_std",
    "idle_max",
    "idle_min",
    "down_up_ratio",
];

/// Column indices into [`FeatureVector`], named for test and caller use.
pub mod col {
    pub const FLOW_DURATION: usize = 0;
    pub const FLOW_BYTES_PER_S: usize = 1;
    pub const FLOW_PACKETS_PER_S: usize = 2;
    pub const FLOW_IAT_MEAN: usize = 3;
    pub const FLOW_IAT_STD: usize = 4;
    pub const FLOW_IAT_MAX: usize = 5;
    pub const FLOW_IAT_MIN: usize = 6;
    pub const FWD_PACKET_COUNT: usize = 7;
    pub const BWD_PACKET_COUNT: usize = 8;
    pub const FWD_BYTES_TOTAL: usize = 9;
    pub const BWD_BYTES_TOTAL: usize = 10;
    pub const FWD_PACKETS_PER_S: usize = 11;
    pub const BWD_PACKETS_PER_S: usize = 12;
    pub const FWD_PKT_LEN_MAX: usize = 13;
    pub const FWD_PKT_LEN_MIN: usize = 14;
    pub const FWD_PKT_LEN_MEAN: usize = 15;
    pub const FWD_PKT_LEN_STD: usize = 16;
    pub const BWD_PKT_LEN_MAX: usize = 17;
    pub const BWD_PKT_LEN_MIN: usize = 18;
    pub const BWD_PKT_LEN_MEAN: usize = 19;
    pub const BWD_PKT_LEN_STD: usize = 20;
    pub const PKT_LEN_MIN: usize = 21;
    pub const PKT_LEN_MAX: usize = 22;
    pub const PKT_LEN_MEAN: usize = 23;
    pub const PKT_LEN_STD: usize = 24;
    pub const PKT_LEN_VARIANCE: usize = 25;
    pub const FWD_HEADER_LEN: usize = 26;
    pub const BWD_HEADER_LEN: usize = 27;
    pub const FWD_IAT_MEAN: usize = 28;
    pub const FWD_IAT_STD: usize = 29;
    pub const FWD_IAT_MAX: usize = 30;
    pub const FWD_IAT_MIN: usize = 31;
    pub const BWD_IAT_MEAN: usize = 32;
    pub const BWD_IAT_STD: usize = 33;
    pub const BWD_IAT_MAX: usize = 34;
    pub const BWD_IAT_MIN: usize = 35;
    pub const SYN_COUNT: usize = 36;
    pub const ACK_COUNT: usize = 37;
    pub const FIN_COUNT: usize = 38;
    pub const RST_COUNT: usize = 39;
    pub const PSH_COUNT: usize = 40;
    pub const URG_COUNT: usize = 41;
    pub const FWD_BYTES_BULK_AVG: usize = 42;
    pub const FWD_PACKETS_BULK_AVG: usize = 43;
    pub const FWD_BULK_RATE_AVG: usize = 44;
    pub const BWD_BYTES_BULK_AVG: usize = 45;
    pub const BWD_PACKETS_BULK_AVG: usize = 46;
    pub const BWD_BULK_RATE_AVG: usize = 47;
    pub const SUBFLOW_FWD_PACKETS: usize = 48;
    pub const SUBFLOW_FWD_BYTES: usize = 49;
    pub const SUBFLOW_BWD_PACKETS: usize = 50;
    pub const SUBFLOW_BWD_BYTES: usize = 51;
    pub const INIT_FWD_WIN_BYTES: usize = 52;
    pub const INIT_BWD_WIN_BYTES: usize = 53;
    pub const ACTIVE_MEAN: usize = 54;
    pub const ACTIVE_STD: usize = 55;
    pub const ACTIVE_MAX: usize = 56;
    pub const ACTIVE_MIN: usize = 57;
    pub const IDLE_MEAN: usize = 58;
    pub const IDLE_STD: usize = 59;
    pub const IDLE_MAX: usize = 60;
    pub const IDLE_MIN: usize = 61;
    pub const DOWN_UP_RATIO: usize = 62;
}

/// The 63 features of one flow, in canonical column order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Clone, Copy)]
struct MergedPacket {
    ts_us: i64,
    len: f64,
    forward: bool,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population variance; 0 for fewer than two values.
fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

fn min(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn max(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Inter-arrival times in seconds for a timestamp sequence.
fn iats(ts: &[i64]) -> Vec<f64> {
    ts.windows(2).map(|w| (w[1] - w[0]) as f64 / 1e6).collect()
}

fn stats4(xs: &[f64]) -> (f64, f64, f64, f64) {
    (mean(xs), variance(xs).sqrt(), max(xs), min(xs))
}

/// Computes the 63 canonical features of one flow.
pub fn compute_features(flow: &FlowRecord, cfg: &FlowConfig) -> FeatureVector {
    let merged = merge_directions(flow);
    let mut f = [0.0f64; NUM_FEATURES];

    let first_ts = merged.first().map(|p| p.ts_us).unwrap_or(0);
    let last_ts = merged.last().map(|p| p.ts_us).unwrap_or(0);
    let duration_s = (last_ts - first_ts) as f64 / 1e6;

    let fwd_lens: Vec<f64> = flow.fwd_packets.iter().map(|p| p.ip_total_len as f64).collect();
    let bwd_lens: Vec<f64> = flow.bwd_packets.iter().map(|p| p.ip_total_len as f64).collect();
    let all_lens: Vec<f64> = merged.iter().map(|p| p.len).collect();
    let fwd_bytes: f64 = fwd_lens.iter().sum();
    let bwd_bytes: f64 = bwd_lens.iter().sum();
    let total_packets = merged.len() as f64;

    f[col::FLOW_DURATION] = duration_s;
    if duration_s > 0.0 {
        f[col::FLOW_BYTES_PER_S] = (fwd_bytes + bwd_bytes) / duration_s;
        f[col::FLOW_PACKETS_PER_S] = total_packets / duration_s;
        f[col::FWD_PACKETS_PER_S] = fwd_lens.len() as f64 / duration_s;
        f[col::BWD_PACKETS_PER_S] = bwd_lens.len() as f64 / duration_s;
    }

    let flow_ts: Vec<i64> = merged.iter().map(|p| p.ts_us).collect();
    let flow_iat = iats(&flow_ts);
    let (m, s, mx, mn) = stats4(&flow_iat);
    f[col::FLOW_IAT_MEAN] = m;
    f[col::FLOW_IAT_STD] = s;
    f[col::FLOW_IAT_MAX] = mx;
    f[col::FLOW_IAT_MIN] = mn;

    f[col::FWD_PACKET_COUNT] = fwd_lens.len() as f64;
    f[col::BWD_PACKET_COUNT] = bwd_lens.len() as f64;
    f[col::FWD_BYTES_TOTAL] = fwd_bytes;
    f[col::BWD_BYTES_TOTAL] = bwd_bytes;

    let (m, s, mx, mn) = stats4(&fwd_lens);
    f[col::FWD_PKT_LEN_MAX] = mx;
    f[col::FWD_PKT_LEN_MIN] = mn;
    f[col::FWD_PKT_LEN_MEAN] = m;
    f[col::FWD_PKT_LEN_STD] = s;
    let (m, s, mx, mn) = stats4(&bwd_lens);
    f[col::BWD_PKT_LEN_MAX] = mx;
    f[col::BWD_PKT_LEN_MIN] = mn;
    f[col::BWD_PKT_LEN_MEAN] = m;
    f[col::BWD_PKT_LEN_STD] = s;

    let var = variance(&all_lens);
    f[col::PKT_LEN_MIN] = min(&all_lens);
    f[col::PKT_LEN_MAX] = max(&all_lens);
    f[col::PKT_LEN_MEAN] = mean(&all_lens);
    f[col::PKT_LEN_STD] = var.sqrt();
    f[col::PKT_LEN_VARIANCE] = var;

    f[col::FWD_HEADER_LEN] = flow.fwd_packets.iter().map(|p| p.header_len as f64).sum();
    f[col::BWD_HEADER_LEN] = flow.bwd_packets.iter().map(|p| p.header_len as f64).sum();

    let fwd_ts: Vec<i64> = flow.fwd_packets.iter().map(|p| p.timestamp_us).collect();
    let bwd_ts: Vec<i64> = flow.bwd_packets.iter().map(|p| p.timestamp_us).collect();
    let (m, s, mx, mn) = stats4(&iats(&fwd_ts));
    f[col::FWD_IAT_MEAN] = m;
    f[col::FWD_IAT_STD] = s;
    f[col::FWD_IAT_MAX] = mx;
    f[col::FWD_IAT_MIN] = mn;
    let (m, s, mx, mn) = stats4(&iats(&bwd_ts));
    f[col::BWD_IAT_MEAN] = m;
    f[col::BWD_IAT_STD] = s;
    f[col::BWD_IAT_MAX] = mx;
    f[col::BWD_IAT_MIN] = mn;

    let all_flags = flow.fwd_packets.iter().chain(flow.bwd_packets.iter()).map(|p| p.tcp_flags);
    for flags in all_flags {
        if flags.syn() {
            f[col::SYN_COUNT] += 1.0;
        }
        if flags.ack() {
            f[col::ACK_COUNT] += 1.0;
        }
        if flags.fin() {
            f[col::FIN_COUNT] += 1.0;
        }
        if flags.rst() {
            f[col::RST_COUNT] += 1.0;
        }
        if flags.psh() {
            f[col::PSH_COUNT] += 1.0;
        }
        if flags.urg() {
            f[col::URG_COUNT] += 1.0;
        }
    }

    let (fwd_bulks, bwd_bulks) = bulk_segments(&merged, cfg.bulk_gap_s, cfg.bulk_min_packets);
    let (b, p, r) = bulk_averages(&fwd_bulks);
    f[col::FWD_BYTES_BULK_AVG] = b;
    f[col::FWD_PACKETS_BULK_AVG] = p;
    f[col::FWD_BULK_RATE_AVG] = r;
    let (b, p, r) = bulk_averages(&bwd_bulks);
    f[col::BWD_BYTES_BULK_AVG] = b;
    f[col::BWD_PACKETS_BULK_AVG] = p;
    f[col::BWD_BULK_RATE_AVG] = r;

    let subflow_count = 1 + flow_iat.iter().filter(|g| **g > cfg.subflow_gap_s).count();
    let sf = subflow_count as f64;
    f[col::SUBFLOW_FWD_PACKETS] = fwd_lens.len() as f64 / sf;
    f[col::SUBFLOW_FWD_BYTES] = fwd_bytes / sf;
    f[col::SUBFLOW_BWD_PACKETS] = bwd_lens.len() as f64 / sf;
    f[col::SUBFLOW_BWD_BYTES] = bwd_bytes / sf;

    f[col::INIT_FWD_WIN_BYTES] =
        flow.fwd_packets.first().map(|p| p.tcp_window as f64).unwrap_or(0.0);
    f[col::INIT_BWD_WIN_BYTES] =
        flow.bwd_packets.first().map(|p| p.tcp_window as f64).unwrap_or(0.0);

    let (active, idle) = active_idle_periods(&flow_ts, cfg.activity_timeout_s);
    let (m, s, mx, mn) = stats4(&active);
    f[col::ACTIVE_MEAN] = m;
    f[col::ACTIVE_STD] = s;
    f[col::ACTIVE_MAX] = mx;
    f[col::ACTIVE_MIN] = mn;
    let (m, s, mx, mn) = stats4(&idle);
    f[col::IDLE_MEAN] = m;
    f[col::IDLE_STD] = s;
    f[col::IDLE_MAX] = mx;
    f[col::IDLE_MIN] = mn;

    if !fwd_lens.is_empty() {
        f[col::DOWN_UP_RATIO] = bwd_lens.len() as f64 / fwd_lens.len() as f64;
    }

    FeatureVector(f)
}

/// Merges the two direction lists by timestamp, forward first on ties.
fn merge_directions(flow: &FlowRecord) -> Vec<MergedPacket> {
    let mut merged = Vec::with_capacity(flow.fwd_packets.len() + flow.bwd_packets.len());
    let (mut i, mut j) = (0, 0);
    while i < flow.fwd_packets.len() || j < flow.bwd_packets.len() {
        let take_fwd = match (flow.fwd_packets.get(i), flow.bwd_packets.get(j)) {
            (Some(fp), Some(bp)) => fp.timestamp_us <= bp.timestamp_us,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if take_fwd {
            let p = &flow.fwd_packets[i];
            merged.push(MergedPacket {
                ts_us: p.timestamp_us,
                len: p.ip_total_len as f64,
                forward: true,
            });
            i += 1;
        } else {
            let p = &flow.bwd_packets[j];
            merged.push(MergedPacket {
                ts_us: p.timestamp_us,
                len: p.ip_total_len as f64,
                forward: false,
            });
            j += 1;
        }
    }
    merged
}

struct BulkSegment {
    packets: usize,
    bytes: f64,
    duration_s: f64,
}

/// Splits the merged sequence into same-direction runs, breaking runs at
/// gaps above the bulk gap, and keeps those of at least `min_packets`.
fn bulk_segments(
    merged: &[MergedPacket],
    bulk_gap_s: f64,
    min_packets: usize,
) -> (Vec<BulkSegment>, Vec<BulkSegment>) {
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    let mut start = 0usize;
    for i in 1..=merged.len() {
        let break_here = i == merged.len()
            || merged[i].forward != merged[i - 1].forward
            || (merged[i].ts_us - merged[i - 1].ts_us) as f64 / 1e6 > bulk_gap_s;
        if break_here {
            let seg = &merged[start..i];
            if seg.len() >= min_packets {
                let out = BulkSegment {
                    packets: seg.len(),
                    bytes: seg.iter().map(|p| p.len).sum(),
                    duration_s: (seg[seg.len() - 1].ts_us - seg[0].ts_us) as f64 / 1e6,
                };
                if seg[0].forward {
                    fwd.push(out);
                } else {
                    bwd.push(out);
                }
            }
            start = i;
        }
    }
    (fwd, bwd)
}

fn bulk_averages(bulks: &[BulkSegment]) -> (f64, f64, f64) {
    if bulks.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = bulks.len() as f64;
    let bytes = bulks.iter().map(|b| b.bytes).sum::<f64>() / n;
    let packets = bulks.iter().map(|b| b.packets as f64).sum::<f64>() / n;
    let rate = bulks
        .iter()
        .map(|b| if b.duration_s > 0.0 { b.bytes / b.duration_s } else { 0.0 })
        .sum::<f64>()
        / n;
    (bytes, packets, rate)
}

/// Active span durations and idle gap durations, both in seconds.
fn active_idle_periods(ts: &[i64], activity_timeout_s: f64) -> (Vec<f64>, Vec<f64>) {
    if ts.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut active = Vec::new();
    let mut idle = Vec::new();
    let mut span_start = ts[0];
    let mut span_last = ts[0];
    for &t in &ts[1..] {
        let gap_s = (t - span_last) as f64 / 1e6;
        if gap_s > activity_timeout_s {
            active.push((span_last - span_start) as f64 / 1e6);
            idle.push(gap_s);
            span_start = t;
        }
        span_last = t;
    }
    active.push((span_last - span_start) as f64 / 1e6);
    (active, idle)
}

/// Full extraction pipeline: read a capture, assemble flows, compute
/// features. Flows are returned in flow order (first timestamp, then
/// arrival).
pub fn extract(path: &Path, cfg: &FlowConfig) -> Result<Vec<FeatureVector>, FlowError> {
    let contents = read_pcap(path)?;
    let flows = assemble_flows(&contents.packets, cfg.idle_timeout_s);
    Ok(flows.iter().map(|f| compute_features(f, cfg)).collect())
}
