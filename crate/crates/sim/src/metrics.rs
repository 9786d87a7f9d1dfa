//! Run metrics: integer-unit aggregation so every platform prints the
//! same CSV bytes.

use acp_core::doc::Value;

/// Observations nodes surface to the collector as side notes of handling
/// an event.
#[derive(Debug, Clone)]
pub enum Note {
    /// A top-level plan reached Complete; the doc is its outcome report.
    PlanCompleted {
        plan_id: u64,
        doc: Value,
    },
    /// A top-level plan failed (retries exhausted or unservable).
    PlanFailed {
        plan_id: u64,
        doc: Value,
    },
    /// Envelope overhead of one sent message, in millionths.
    Overhead {
        micros: u64,
    },
    /// One finished DHT lookup and its round count.
    LookupDone {
        hops: u32,
    },
    /// One settled negotiation, probe to settlement, requester-side.
    NegotiationSettled {
        e2e_ms: u64,
    },
    GateDrop,
    TamperReject,
    ReplayReject,
    PoiReject,
    StoreReject,
    LedgerAppend {
        ok: bool,
    },
    /// Violations observed in one terminal session.
    SessionViolations {
        count: u32,
    },
}

#[derive(Debug, Default, Clone)]
pub struct MetricsCollector {
    pub latencies_ms: Vec<u64>,
    pub overhead_micros: Vec<u64>,
    pub lookup_hops: Vec<u32>,
    pub negotiation_ms: Vec<u64>,
    pub sent: u64,
    pub delivered: u64,
    pub dropped_link: u64,
    pub dropped_down: u64,
    pub plans_started: u64,
    pub plans_completed: u64,
    pub plans_failed: u64,
    pub gate_drops: u64,
    pub tamper_rejects: u64,
    pub replay_rejects: u64,
    pub poi_rejects: u64,
    pub store_rejects: u64,
    pub ledger_appends: u64,
    pub ledger_rejects: u64,
    pub session_violations: u64,
}

impl MetricsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, note: &Note) {
        match note {
            Note::PlanCompleted { .. } => self.plans_completed += 1,
            Note::PlanFailed { .. } => self.plans_failed += 1,
            Note::Overhead { micros } => self.overhead_micros.push(*micros),
            Note::LookupDone { hops } => self.lookup_hops.push(*hops),
            Note::NegotiationSettled { e2e_ms } => self.negotiation_ms.push(*e2e_ms),
            Note::GateDrop => self.gate_drops += 1,
            Note::TamperReject => self.tamper_rejects += 1,
            Note::ReplayReject => self.replay_rejects += 1,
            Note::PoiReject => self.poi_rejects += 1,
            Note::StoreReject => self.store_rejects += 1,
            Note::LedgerAppend { ok: true } => self.ledger_appends += 1,
            Note::LedgerAppend { ok: false } => self.ledger_rejects += 1,
            Note::SessionViolations { count } => self.session_violations += u64::from(*count),
        }
    }

    pub fn record_delivery(&mut self, latency_ms: u64) {
        self.delivered += 1;
        self.latencies_ms.push(latency_ms);
    }

    pub fn finish(&self, n_agents: u64, seed: u64) -> RunMetrics {
        RunMetrics {
            n_agents,
            seed,
            mean_latency_milli: mean_milli_u64(&self.latencies_ms),
            p95_latency_ms: percentile_95(&self.latencies_ms),
            task_success_micros: (self.plans_completed * 1_000_000)
                .checked_div(self.plans_started)
                .unwrap_or(0),
            mean_overhead_micros: mean_u64(&self.overhead_micros),
            dht_mean_hops_milli: mean_milli_u32(&self.lookup_hops),
            p95_hops: percentile_95(
                &self
                    .lookup_hops
                    .iter()
                    .map(|&h| u64::from(h))
                    .collect::<Vec<_>>(),
            ),
            mean_negotiation_milli: mean_milli_u64(&self.negotiation_ms),
            messages_delivered: self.delivered,
            messages_dropped: self.dropped_link + self.dropped_down,
            plans_started: self.plans_started,
            plans_completed: self.plans_completed,
        }
    }
}

fn mean_milli_u64(samples: &[u64]) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    samples.iter().sum::<u64>() * 1_000 / samples.len() as u64
}

fn mean_milli_u32(samples: &[u32]) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    samples.iter().map(|&s| u64::from(s)).sum::<u64>() * 1_000 / samples.len() as u64
}

fn mean_u64(samples: &[u64]) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    samples.iter().sum::<u64>() / samples.len() as u64
}

/// Nearest-rank 95th percentile over a copy of the samples.
fn percentile_95(samples: &[u64]) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = (sorted.len() * 95).div_ceil(100);
    sorted[rank.saturating_sub(1)]
}

/// Aggregated results of one run. Fixed-point fields keep CSV output
/// bit-stable; accessor methods give f64 views for analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMetrics {
    pub n_agents: u64,
    pub seed: u64,
    pub mean_latency_milli: u64,
    pub p95_latency_ms: u64,
    pub task_success_micros: u64,
    pub mean_overhead_micros: u64,
    pub dht_mean_hops_milli: u64,
    pub p95_hops: u64,
    pub mean_negotiation_milli: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    pub plans_started: u64,
    pub plans_completed: u64,
}

pub const METRICS_CSV_HEADER: &str = "n_agents,seed,mean_latency_ms,p95_latency_ms,\
task_success_rate,mean_overhead,dht_mean_hops,mean_negotiation_ms,messages_delivered,\
messages_dropped";

impl RunMetrics {
    pub fn task_success_rate(&self) -> f64 {
        self.task_success_micros as f64 / 1e6
    }

    pub fn mean_overhead(&self) -> f64 {
        self.mean_overhead_micros as f64 / 1e6
    }

    pub fn dht_mean_hops(&self) -> f64 {
        self.dht_mean_hops_milli as f64 / 1e3
    }

    pub fn mean_negotiation_ms(&self) -> f64 {
        self.mean_negotiation_milli as f64 / 1e3
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:x},{},{},{},{},{},{},{},{}",
            self.n_agents,
            self.seed,
            fmt_milli(self.mean_latency_milli),
            self.p95_latency_ms,
            fmt_micros(self.task_success_micros),
            fmt_micros(self.mean_overhead_micros),
            fmt_milli(self.dht_mean_hops_milli),
            fmt_milli(self.mean_negotiation_milli),
            self.messages_delivered,
            self.messages_dropped,
        )
    }
}

pub fn fmt_milli(v: u64) -> String {
    format!("{}.{:03}", v / 1_000, v % 1_000)
}

pub fn fmt_micros(v: u64) -> String {
    format!("{}.{:06}", v / 1_000_000, v % 1_000_000)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_nearest_rank() {
        let samples: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile_95(&samples), 95);
        assert_eq!(percentile_95(&[7]), 7);
        assert_eq!(percentile_95(&[]), 0);
    }

    #[test]
    fn csv_row_is_fixed_point() {
        let mut c = MetricsCollector::new();
        c.record_delivery(10);
        c.record_delivery(11);
        c.plans_started = 4;
        c.plans_completed = 3;
        c.apply(&Note::Overhead { micros: 110_000 });
        c.apply(&Note::LookupDone { hops: 2 });
        let m = c.finish(8, 0xab);
        let row = m.csv_row();
        assert_eq!(row, "8,ab,10.500,11,0.750000,0.110000,2.000,0.000,2,0");
    }

    #[test]
    fn empty_run_is_all_zeroes() {
        let m = MetricsCollector::new().finish(0, 1);
        assert_eq!(m.csv_row(), "0,1,0.000,0,0.000000,0.000000,0.000,0.000,0,0");
    }
}
