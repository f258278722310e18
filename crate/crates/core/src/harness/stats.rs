//! Latency aggregation and paired-run deltas.

use serde::{Deserialize, Serialize};

use crate::noc::fabric::PacketRecord;

use super::engine::TICKS_PER_CYCLE;

/// One delivered interposer packet. Latencies are in chiplet ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub packet: u64,
    pub queuing: u64,
    pub in_network: u64,
    pub total: u64,
    pub hops: u32,
}

impl LatencySample {
    pub fn from_record(r: &PacketRecord) -> Option<Self> {
        if !r.interposer || r.blocked {
            return None;
        }
        Some(LatencySample {
            packet: r.id.0,
            queuing: r.queuing()?,
            in_network: r.in_network()?,
            total: r.total()?,
            hops: r.hops,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: u64,
    pub p95: u64,
    pub p99: u64,
    pub max: u64,
}

/// Nearest-rank percentiles of `values`.
pub fn percentiles(values: &mut [u64]) -> Percentiles {
    if values.is_empty() {
        return Percentiles::default();
    }
    values.sort_unstable();
    let rank = |p: f64| {
        let k = ((p / 100.0) * values.len() as f64).ceil() as usize;
        values[k.clamp(1, values.len()) - 1]
    };
    Percentiles {
        p50: rank(50.0),
        p95: rank(95.0),
        p99: rank(99.0),
        max: *values.last().expect("non-empty"),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub packets: u64,
    pub sum_queuing: u64,
    pub sum_in_network: u64,
    pub sum_total: u64,
    pub sum_hops: u64,
    /// Means in interposer cycles.
    pub mean_queuing: f64,
    pub mean_in_network: f64,
    pub mean_total: f64,
    pub mean_hops: f64,
    /// Percentiles in chiplet ticks.
    pub queuing: Percentiles,
    pub in_network: Percentiles,
    pub total: Percentiles,
}

fn mean(sum: u64, n: u64, scale: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64 / scale
    }
}

pub fn aggregate(samples: &[LatencySample]) -> Aggregates {
    let n = samples.len() as u64;
    let sum = |f: fn(&LatencySample) -> u64| samples.iter().map(f).sum::<u64>();
    let (q, i, t, h) = (
        sum(|s| s.queuing),
        sum(|s| s.in_network),
        sum(|s| s.total),
        sum(|s| s.hops as u64),
    );
    let pct = |f: fn(&LatencySample) -> u64| percentiles(&mut samples.iter().map(f).collect::<Vec<_>>());
    let scale = TICKS_PER_CYCLE as f64;
    Aggregates {
        packets: n,
        sum_queuing: q,
        sum_in_network: i,
        sum_total: t,
        sum_hops: h,
        mean_queuing: mean(q, n, scale),
        mean_in_network: mean(i, n, scale),
        mean_total: mean(t, n, scale),
        mean_hops: mean(h, n, 1.0),
        queuing: pct(|s| s.queuing),
        in_network: pct(|s| s.in_network),
        total: pct(|s| s.total),
    }
}

/// Samples for every delivered interposer packet, and their aggregates.
pub fn collect_latency(records: &[PacketRecord]) -> (Vec<LatencySample>, Aggregates) {
    let samples: Vec<LatencySample> = records.iter().filter_map(LatencySample::from_record).collect();
    let agg = aggregate(&samples);
    (samples, agg)
}

/// Percentage change from `off` to `on`; `None` when the baseline is zero.
pub fn percent_change(off: f64, on: f64) -> Option<f64> {
    (off != 0.0).then(|| (on - off) / off * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub queuing_pct: Option<f64>,
    pub in_network_pct: Option<f64>,
    pub total_pct: Option<f64>,
    pub hops_pct: Option<f64>,
}

impl Deltas {
    pub fn between(off: &Aggregates, on: &Aggregates) -> Self {
        Deltas {
            queuing_pct: percent_change(off.mean_queuing, on.mean_queuing),
            in_network_pct: percent_change(off.mean_in_network, on.mean_in_network),
            total_pct: percent_change(off.mean_total, on.mean_total),
            hops_pct: percent_change(off.mean_hops, on.mean_hops),
        }
    }
}

pub fn sign(v: Option<f64>) -> char {
    match v {
        Some(x) if x > 0.0 => '+',
        Some(x) if x < 0.0 => '-',
        _ => '0',
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(queuing: u64, in_network: u64, hops: u32) -> LatencySample {
        LatencySample {
            packet: 0,
            queuing,
            in_network,
            total: queuing + in_network,
            hops,
        }
    }

    #[test]
    fn empty_run_gives_empty_aggregates() {
        let a = aggregate(&[]);
        assert_eq!(a.packets, 0);
        assert_eq!(a.mean_total, 0.0);
        assert_eq!(a.total, Percentiles::default());
    }

    #[test]
    fn three_packets_by_hand() {
        let a = aggregate(&[s(4, 8, 1), s(8, 16, 2), s(12, 36, 3)]);
        assert_eq!(a.mean_queuing, 2.0);
        assert_eq!(a.mean_in_network, 5.0);
        assert_eq!(a.mean_total, 7.0);
        assert_eq!(a.mean_hops, 2.0);
        assert_eq!(a.total.p50, 24);
        assert_eq!(a.total.max, 48);
    }

    #[test]
    fn deltas_and_signs() {
        let off = aggregate(&[s(4, 8, 2)]);
        let on = aggregate(&[s(8, 4, 1)]);
        let d = Deltas::between(&off, &on);
        assert_eq!(d.queuing_pct, Some(100.0));
        assert_eq!(d.in_network_pct, Some(-50.0));
        assert_eq!((sign(d.queuing_pct), sign(d.in_network_pct), sign(d.total_pct)), ('+', '-', '0'));
        assert_eq!(percent_change(0.0, 3.0), None);
    }

    proptest! {
        #[test]
        fn aggregates_recompute_from_samples(v in prop::collection::vec((0u64..10_000, 0u64..10_000, 0u32..10), 0..200)) {
            let samples: Vec<_> = v.iter().map(|&(q, i, h)| s(q, i, h)).collect();
            let a = aggregate(&samples);
            prop_assert_eq!(a.sum_queuing + a.sum_in_network, a.sum_total);
            prop_assert_eq!(a.packets as usize, samples.len());
            let p = a.total;
            prop_assert!(p.p50 <= p.p95 && p.p95 <= p.p99 && p.p99 <= p.max);
        }
    }
}
