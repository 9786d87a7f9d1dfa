//! Discovery scaling sweeps: generated networks of N provider agents,
//! seeded lookup workloads, and the `c * log2(N)` fit over mean hop
//! counts.

use crate::metrics::fmt_milli;
use crate::run::{run, SimError};
use crate::scenario::Scenario;

pub const SWEEP_CSV_HEADER: &str = "n_agents,seed,mean_hops,p95_hops,c_fit,r2_fit";

/// How many distinct capabilities the generated providers spread over.
pub const SWEEP_CAPABILITIES: u64 = 8;

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n_agents: u64,
    pub seed: u64,
    pub mean_hops_milli: u64,
    pub p95_hops: u64,
    pub c_fit_milli: u64,
    pub r2_fit_milli: u64,
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:x},{},{},{},{}",
            self.n_agents,
            self.seed,
            fmt_milli(self.mean_hops_milli),
            self.p95_hops,
            fmt_milli(self.c_fit_milli),
            fmt_milli(self.r2_fit_milli),
        )
    }
}

/// Builds the N-agent discovery scenario for one (count, seed) cell:
/// providers named after the seed (so each seed gets a fresh topology)
/// plus `lookups` capability queries spread over the run.
pub fn scale_scenario(template: &Scenario, n: u64, seed: u64, lookups: u64) -> Scenario {
    let mut scenario = template.clone();
    scenario.agents.clear();
    scenario.plans.clear();
    scenario.lookups.clear();
    scenario.events.clear();
    for i in 0..n {
        scenario.agents.push(crate::scenario::AgentSpec {
            name: format!("p{seed:x}_{i}"),
            behavior: crate::scenario::BehaviorSpec::Provider {
                capabilities: vec![format!("cap_{}", i % SWEEP_CAPABILITIES)],
            },
            segment: format!("lan-{}", i % 4),
            exec_ms: 10,
            cost: acp_core::doc::Decimal::new(1, 2).expect("0.01"),
            cost_floor: acp_core::doc::Decimal::zero(),
            max_latency_ms: Some(1_000),
            data_residency: None,
            endpoint: format!("sim://p{seed:x}_{i}"),
            delegates_to: None,
            trust_score: acp_core::doc::Decimal::new(5, 1).expect("0.5"),
            interaction_count: 0,
            capacity: 0,
        });
    }
    // publication traffic settles well before the first lookup
    let start = 2_000u64;
    let step = 25u64;
    for j in 0..lookups {
        scenario.lookups.push(crate::scenario::LookupSpec {
            at: start + j * step,
            agent: format!("p{seed:x}_{}", (j * 7 + 3) % n),
            capability: format!("cap_{}", (j * 5 + 1) % SWEEP_CAPABILITIES),
        });
    }
    scenario.horizon_ms = scenario.horizon_ms.max(start + lookups * step + 10_000);
    scenario
}

/// Runs the grid and fits mean hops against `c * log2(N)` per seed.
pub fn sweep(
    template: &Scenario,
    agent_counts: &[u64],
    seeds: &[u64],
    lookups_per_run: u64,
) -> Result<Vec<SweepRow>, SimError> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut per_n: Vec<(u64, u64, u64)> = Vec::new(); // (n, mean_milli, p95)
        for &n in agent_counts {
            let scenario = scale_scenario(template, n, seed, lookups_per_run);
            let output = run(&scenario, seed)?;
            per_n.push((
                n,
                output.metrics.dht_mean_hops_milli,
                output.metrics.p95_hops,
            ));
        }
        let points: Vec<(f64, f64)> = per_n
            .iter()
            .map(|(n, mean_milli, _)| ((*n as f64).log2(), *mean_milli as f64 / 1e3))
            .collect();
        let (c, r2) = fit_log_model(&points);
        for (n, mean_milli, p95) in per_n {
            rows.push(SweepRow {
                n_agents: n,
                seed,
                mean_hops_milli: mean_milli,
                p95_hops: p95,
                c_fit_milli: (c * 1e3).round().max(0.0) as u64,
                r2_fit_milli: (r2 * 1e3).round().max(0.0) as u64,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

/// Least squares through the origin for `y = c * x`, with the coefficient
/// of determination against that model.
pub fn fit_log_model(points: &[(f64, f64)]) -> (f64, f64) {
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let c = sxy / sxx;
    let mean_y: f64 = points.iter().map(|(_, y)| y).sum::<f64>() / points.len() as f64;
    let ss_res: f64 = points.iter().map(|(x, y)| (y - c * x).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    (c, r2)
}

/// Template with sensible defaults for sweeps, used when the operator
/// does not supply one.
pub fn default_template() -> Scenario {
    Scenario::parse(
        br#"{
            "horizon_ms": 30000,
            "profile": "acp",
            "link": {"base_latency_ms": 5, "jitter_ms": 0, "drop_probability": 0.0},
            "trust_anchors": [],
            "agents": []
        }"#,
    )
    .expect("static template parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_exact_log_model() {
        let points: Vec<(f64, f64)> = [16u64, 64, 256]
            .iter()
            .map(|&n| ((n as f64).log2(), 0.5 * (n as f64).log2()))
            .collect();
        let (c, r2) = fit_log_model(&points);
        assert!((c - 0.5).abs() < 1e-9);
        assert!((r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scaled_scenario_has_n_agents_and_lookups() {
        let template = default_template();
        let s = scale_scenario(&template, 16, 1, 20);
        assert_eq!(s.agents.len(), 16);
        assert_eq!(s.lookups.len(), 20);
        // distinct seeds give distinct agent identities (fresh topology)
        let s2 = scale_scenario(&template, 16, 2, 20);
        assert_ne!(s.agents[0].name, s2.agents[0].name);
    }
}
