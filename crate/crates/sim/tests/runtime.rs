//! End-to-end runtime tests over small scenarios: the hand-counted
//! message chart, determinism, failure injection, and the ledger flow.

use acp_sim::run;
use acp_sim::scenario::Scenario;

fn two_agent_scenario(exec_ms: u64) -> Scenario {
    let text = format!(
        r#"{{
        "horizon_ms": 60000,
        "profile": "acp",
        "link": {{"base_latency_ms": 10, "jitter_ms": 0, "drop_probability": 0.0}},
        "trust_anchors": ["user-main"],
        "agents": [
            {{"name": "buyer", "behavior": "requester"}},
            {{"name": "seller", "behavior": "provider:market_analysis",
              "exec_ms": {exec_ms}, "max_latency_ms": 2000}}
        ],
        "plans": [
            {{"at": 1000, "requester": "buyer", "user": "user-main", "label": "happy",
             "subtasks": [{{"capability": "market_analysis", "max_latency_ms": 2000}}]}}
        ],
        "expect": {{"plans_complete": true}}
    }}"#
    );
    Scenario::parse(text.as_bytes()).unwrap()
}

/// Hand-drawn sequence chart for the full-protocol happy path with
/// 10 ms links, no jitter, and instant execution. One-way legs from the
/// probe decision to settlement:
///
///   t+00 requester -> provider   CHALLENGE          (pre-probe liveness)
///   t+10 provider  -> requester  CHALLENGE_RESPONSE
///   t+20 requester -> provider   PROBE              (gated: dropped)
///   t+30 provider  -> requester  CHALLENGE          (gate challenges back)
///   t+40 requester -> provider   RESPONSE + PROBE   (FIFO keeps the order)
///   t+50 provider  -> requester  BID
///   t+60 requester -> provider   COMMIT
///   t+70 provider  executes (0 ms), sends RESULT
///   t+80 requester settles
///
/// Eight legs at 10 ms each: settlement exactly 80 ms after the probe
/// decision.
#[test]
fn happy_path_settles_in_eight_legs() {
    let scenario = two_agent_scenario(0);
    let output = run(&scenario, 0x5eed).unwrap();

    assert_eq!(output.metrics.plans_started, 1);
    assert_eq!(
        output.metrics.plans_completed, 1,
        "reports: {:?}",
        output.reports
    );
    assert!(
        output.expectations_met(),
        "{:?}",
        output.expectation_failures
    );
    assert_eq!(
        output.metrics.mean_negotiation_milli,
        80_000,
        "expected exactly 80 ms probe-to-settlement, got {}",
        output.metrics.mean_negotiation_milli as f64 / 1e3
    );
}

#[test]
fn same_seed_reproduces_byte_identical_outputs() {
    let scenario = two_agent_scenario(40);
    let a = run(&scenario, 7).unwrap();
    let b = run(&scenario, 7).unwrap();
    assert_eq!(a.trace_hash, b.trace_hash);
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.transcripts, b.transcripts);

    let c = run(&scenario, 8).unwrap();
    assert_ne!(
        a.trace_hash, c.trace_hash,
        "different seeds, different traces"
    );
}

#[test]
fn empty_scenario_terminates_immediately() {
    let scenario =
        Scenario::parse(br#"{"horizon_ms": 1000, "agents": [], "trust_anchors": []}"#).unwrap();
    let output = run(&scenario, 1).unwrap();
    assert_eq!(output.metrics.messages_delivered, 0);
    assert_eq!(output.metrics.plans_started, 0);
    assert!(output.reports.is_empty());
}

#[test]
fn transcripts_agree_between_requester_and_provider() {
    let scenario = two_agent_scenario(40);
    let output = run(&scenario, 3).unwrap();
    // two transcripts (one per side) with the same digest multiset
    let negotiation: Vec<_> = output
        .transcripts
        .iter()
        .filter(|t| !t.get("entries").unwrap().as_seq().unwrap().is_empty())
        .collect();
    assert_eq!(negotiation.len(), 2, "{:#?}", output.transcripts);
    let digests = |t: &acp_core::doc::Value| {
        let mut d: Vec<String> = t
            .get("entries")
            .unwrap()
            .as_seq()
            .unwrap()
            .iter()
            .map(|e| e.get_text("digest").unwrap().to_string())
            .collect();
        d.sort();
        d
    };
    assert_eq!(digests(negotiation[0]), digests(negotiation[1]));
    assert_eq!(negotiation[0].get_u64("violations"), Some(0));
    assert_eq!(negotiation[1].get_u64("violations"), Some(0));
}

fn failover_scenario() -> Scenario {
    Scenario::parse(
        br#"{
        "horizon_ms": 120000,
        "profile": "acp",
        "link": {"base_latency_ms": 10, "jitter_ms": 0, "drop_probability": 0.0},
        "trust_anchors": ["user-main"],
        "agents": [
            {"name": "hub", "behavior": "registry"},
            {"name": "buyer", "behavior": "requester"},
            {"name": "flaky", "behavior": "provider:market_analysis",
             "exec_ms": 5000, "max_latency_ms": 20000, "trust_score": 0.9},
            {"name": "backup", "behavior": "provider:market_analysis",
             "exec_ms": 500, "max_latency_ms": 20000, "trust_score": 0.6}
        ],
        "plans": [
            {"at": 1000, "requester": "buyer", "user": "user-main", "label": "resilient",
             "max_retries": 2,
             "subtasks": [{"capability": "market_analysis", "max_latency_ms": 20000}]}
        ],
        "events": [{"at": 2000, "agent": "flaky", "kind": "down"}],
        "expect": {"plans_complete": true, "ledger_verified": true}
    }"#,
    )
    .unwrap()
}

/// Kill the executing provider mid-task: the requester times out at the
/// SLA deadline, excludes the dead provider, renegotiates with the
/// alternative, and the plan still completes.
#[test]
fn provider_failure_triggers_renegotiation() {
    let scenario = failover_scenario();
    let output = run(&scenario, 42).unwrap();
    assert!(
        output.expectations_met(),
        "{:?}",
        output.expectation_failures
    );
    assert_eq!(output.metrics.plans_completed, 1);

    let report = &output.reports[0];
    assert_eq!(report.get_text("status"), Some("complete"));
    let subtask = &report.get("subtasks").unwrap().as_seq().unwrap()[0];
    assert_eq!(subtask.get_u64("attempts"), Some(2), "{report:?}");

    // the ledger holds the zero score for the dead provider and the good
    // score for the backup
    let ledger = output.ledger.as_ref().unwrap();
    assert!(ledger.verify_chain());
    assert_eq!(ledger.len(), 2, "{:?}", ledger.entries());
}

/// Both providers alive: the idle one is never contacted, and downing an
/// idle bystander leaves the run's outcome untouched.
#[test]
fn downing_a_bystander_changes_nothing_material() {
    let mut scenario = failover_scenario();
    scenario.events.clear();
    let baseline = run(&scenario, 9).unwrap();
    assert_eq!(baseline.metrics.plans_completed, 1);

    // bystander goes down late, far from the action
    let mut with_outage = failover_scenario();
    with_outage.events.clear();
    with_outage.inject_failure("flaky", 100_000).unwrap();
    let outage = run(&with_outage, 9).unwrap();
    assert_eq!(outage.metrics.plans_completed, 1);
    assert_eq!(
        baseline.reports[0].get_text("status"),
        outage.reports[0].get_text("status")
    );
}

/// Negotiation latency stays flat as the swarm grows: with 512 agents on
/// 10 ms links, mean probe-to-settlement time stays under 100 simulated
/// ms because discovery cost is paid outside the session.
#[test]
fn mean_negotiation_under_100ms_at_512_agents() {
    let mut agents = String::new();
    for i in 0..506 {
        agents.push_str(&format!(
            r#"{{"name": "p{i}", "behavior": "provider:cap_{}", "exec_ms": 0,
               "max_latency_ms": 2000, "segment": "lan-{}"}},"#,
            i % 8,
            i % 4
        ));
    }
    let text = format!(
        r#"{{
        "horizon_ms": 60000,
        "profile": "acp",
        "link": {{"base_latency_ms": 10, "jitter_ms": 0, "drop_probability": 0.0}},
        "trust_anchors": ["user-main"],
        "agents": [
            {agents}
            {{"name": "r0", "behavior": "requester"}},
            {{"name": "r1", "behavior": "requester"}},
            {{"name": "r2", "behavior": "requester"}},
            {{"name": "r3", "behavior": "requester"}},
            {{"name": "r4", "behavior": "requester"}},
            {{"name": "r5", "behavior": "requester"}}
        ],
        "load": {{"count": 24, "window_ms": 6000, "start_at": 3000,
                 "capability": "cap_3", "max_latency_ms": 2000,
                 "user": "user-main",
                 "requesters": ["r0", "r1", "r2", "r3", "r4", "r5"]}}
    }}"#
    );
    let scenario = Scenario::parse(text.as_bytes()).unwrap();
    assert_eq!(scenario.agents.len(), 512);
    let output = run(&scenario, 0x512).unwrap();
    assert_eq!(output.metrics.plans_started, 24);
    assert_eq!(
        output.metrics.plans_completed, 24,
        "{:?}",
        output.reports[0]
    );
    assert!(
        output.metrics.mean_negotiation_milli < 100_000,
        "mean negotiation {} ms at 512 agents",
        output.metrics.mean_negotiation_milli as f64 / 1e3
    );
}

/// Ratings reach the registry ledger under every profile, including the
/// verbose baseline whose gate challenges every message.
#[test]
fn ledger_entry_lands_under_all_profiles() {
    for profile in ["acp", "local", "verbose"] {
        let text = format!(
            r#"{{
            "horizon_ms": 60000,
            "profile": "{profile}",
            "link": {{"base_latency_ms": 10, "jitter_ms": 0, "drop_probability": 0.0}},
            "trust_anchors": ["user-main"],
            "agents": [
                {{"name": "hub", "behavior": "registry"}},
                {{"name": "buyer", "behavior": "requester"}},
                {{"name": "seller", "behavior": "provider:market_analysis",
                  "exec_ms": 50, "max_latency_ms": 2000}}
            ],
            "plans": [
                {{"at": 1000, "requester": "buyer", "user": "user-main", "label": "rated",
                 "subtasks": [{{"capability": "market_analysis", "max_latency_ms": 2000}}]}}
            ],
            "expect": {{"plans_complete": true, "ledger_verified": true}}
        }}"#
        );
        let scenario = Scenario::parse(text.as_bytes()).unwrap();
        let output = run(&scenario, 17).unwrap();
        assert!(
            output.expectations_met(),
            "{profile}: {:?}",
            output.expectation_failures
        );
        let ledger = output.ledger.as_ref().unwrap();
        assert_eq!(ledger.len(), 1, "{profile}: rating must reach the ledger");
        assert!(ledger.verify_chain());
    }
}

/// An agent that comes back up answers new probes again.
#[test]
fn agent_up_after_down_serves_again() {
    let text = r#"{
        "horizon_ms": 120000,
        "profile": "acp",
        "link": {"base_latency_ms": 10, "jitter_ms": 0, "drop_probability": 0.0},
        "trust_anchors": ["user-main"],
        "agents": [
            {"name": "buyer", "behavior": "requester"},
            {"name": "solo", "behavior": "provider:market_analysis",
             "exec_ms": 100, "max_latency_ms": 10000}
        ],
        "plans": [
            {"at": 30000, "requester": "buyer", "user": "user-main", "label": "after-restart",
             "subtasks": [{"capability": "market_analysis"}]}
        ],
        "events": [
            {"at": 1000, "agent": "solo", "kind": "down"},
            {"at": 20000, "agent": "solo", "kind": "up"}
        ],
        "expect": {"plans_complete": true}
    }"#;
    let scenario = Scenario::parse(text.as_bytes()).unwrap();
    let output = run(&scenario, 11).unwrap();
    assert!(
        output.expectations_met(),
        "{:?}",
        output.expectation_failures
    );
}
