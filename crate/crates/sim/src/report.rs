//! Canonical outcome documents: per-plan reports, per-session
//! transcripts, and the run summary. All byte-stable for golden tests.

use acp_core::doc::{object, Value};
use acp_core::negotiation::{Direction, NegotiationSession};
use acp_core::orchestration::PlanStatus;

use crate::metrics::{fmt_micros, fmt_milli, RunMetrics};
use crate::node::PlanRun;

pub fn plan_doc(run: &PlanRun, now: u64) -> Value {
    let status = match run.plan.status {
        PlanStatus::Complete => "complete",
        PlanStatus::Failed => "failed",
        PlanStatus::Active => "unresolved",
    };
    let subtasks: Vec<Value> = run
        .plan
        .subtasks
        .iter()
        .map(|s| {
            let mut pairs = vec![
                ("attempts", Value::from(u64::from(s.failed_attempts) + 1)),
                ("capability", Value::text(&s.intent.capability)),
                ("poi_depth", Value::from(u64::from(s.poi_depth))),
                ("status", Value::text(s.status.name())),
            ];
            if let Some(provider) = s.assigned {
                pairs.push(("provider", Value::text(provider.to_string())));
            }
            object(pairs).expect("distinct keys")
        })
        .collect();
    let coalition: Vec<Value> = run
        .plan
        .coalition()
        .iter()
        .map(|d| Value::text(d.to_string()))
        .collect();
    object([
        ("coalition", Value::Seq(coalition)),
        (
            "elapsed_ms",
            Value::from(now.saturating_sub(run.started_at)),
        ),
        ("label", Value::text(&run.label)),
        ("requester", Value::text(run.requester.to_string())),
        ("status", Value::text(status)),
        ("subtasks", Value::Seq(subtasks)),
    ])
    .expect("distinct keys")
}

pub fn transcript_doc(session: &NegotiationSession) -> Value {
    let entries: Vec<Value> = session
        .transcript()
        .iter()
        .map(|t| {
            object([
                (
                    "dir",
                    Value::text(match t.direction {
                        Direction::In => "in",
                        Direction::Out => "out",
                    }),
                ),
                ("digest", Value::text(hex::encode(t.digest))),
                ("msg", Value::text(t.msg_type.name())),
            ])
            .expect("distinct keys")
        })
        .collect();
    object([
        ("entries", Value::Seq(entries)),
        ("final_state", Value::text(session.state().name())),
        ("peer", Value::text(session.peer.to_string())),
        (
            "role",
            Value::text(match session.role {
                acp_core::negotiation::Role::Requester => "requester",
                acp_core::negotiation::Role::Provider => "provider",
            }),
        ),
        ("session_id", Value::text(hex::encode(session.session_id))),
        ("violations", Value::from(u64::from(session.violations()))),
    ])
    .expect("distinct keys")
}

pub fn summary_doc(
    metrics: &RunMetrics,
    trace_hash: &[u8; 32],
    expectation_failures: &[String],
) -> Value {
    object([
        (
            "expectation_failures",
            Value::Seq(expectation_failures.iter().map(Value::text).collect()),
        ),
        (
            "metrics",
            object([
                (
                    "dht_mean_hops",
                    Value::text(fmt_milli(metrics.dht_mean_hops_milli)),
                ),
                (
                    "mean_latency_ms",
                    Value::text(fmt_milli(metrics.mean_latency_milli)),
                ),
                (
                    "mean_negotiation_ms",
                    Value::text(fmt_milli(metrics.mean_negotiation_milli)),
                ),
                (
                    "mean_overhead",
                    Value::text(fmt_micros(metrics.mean_overhead_micros)),
                ),
                (
                    "messages_delivered",
                    Value::from(metrics.messages_delivered),
                ),
                ("messages_dropped", Value::from(metrics.messages_dropped)),
                ("n_agents", Value::from(metrics.n_agents)),
                ("p95_latency_ms", Value::from(metrics.p95_latency_ms)),
                ("plans_completed", Value::from(metrics.plans_completed)),
                ("plans_started", Value::from(metrics.plans_started)),
                (
                    "task_success_rate",
                    Value::text(fmt_micros(metrics.task_success_micros)),
                ),
            ])
            .expect("distinct keys"),
        ),
        ("trace_hash", Value::text(hex::encode(trace_hash))),
    ])
    .expect("distinct keys")
}
