//! The simulation engine: builds the network from a scenario, executes
//! the event loop, and collects metrics, reports, transcripts, and the
//! ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use acp_core::doc::Value;
use acp_core::identity::{Did, KeyPair, VerifyingKey};
use acp_core::negotiation::PricingPolicy;
use acp_core::orchestration::{build_poi, ProofOfIntent, Subtask, TaskPlan};
use acp_core::reputation::Ledger;
use acp_core::rng::SplitMix64;
use acp_core::semantic::{intent_digest, AgentCard, ConstraintSet, Intent, IntentAction};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::event::{Command, EventKind, EventQueue, SimEvent};
use crate::link::LinkOutcome;
use crate::metrics::{MetricsCollector, Note, RunMetrics, METRICS_CSV_HEADER};
use crate::node::{NodeConfig, NodeRuntime, Outbox};
use crate::scenario::{BehaviorSpec, PlanSpec, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Everything a run produces. Byte-identical across runs of the same
/// (scenario, seed).
#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// One outcome document per injected plan, in injection order.
    pub reports: Vec<Value>,
    /// One document per session transcript, across all nodes.
    pub transcripts: Vec<Value>,
    /// SHA-256 over the executed event trace.
    pub trace_hash: [u8; 32],
    pub ledger: Option<Ledger>,
    /// Union of every card stored in the DHT, newest per DID.
    pub registry_cards: Vec<(Did, Value)>,
    pub expectation_failures: Vec<String>,
    pub summary: Value,
}

impl RunOutput {
    pub fn metrics_csv(&self) -> String {
        format!("{METRICS_CSV_HEADER}\n{}\n", self.metrics.csv_row())
    }

    pub fn expectations_met(&self) -> bool {
        self.expectation_failures.is_empty()
    }
}

fn agent_keypair(name: &str) -> KeyPair {
    let digest = Sha256::digest(format!("acp-sim-agent:{name}"));
    KeyPair::from_seed(&digest).expect("32-byte seed")
}

fn user_keypair(name: &str) -> KeyPair {
    let digest = Sha256::digest(format!("acp-sim-user:{name}"));
    KeyPair::from_seed(&digest).expect("32-byte seed")
}

fn name_label(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

struct PlanInjection {
    spec: PlanSpec,
    requester: Did,
    root_chain: Vec<ProofOfIntent>,
}

/// Executes one scenario under one seed.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunOutput, SimError> {
    let root_rng = SplitMix64::new(seed);

    // identities
    let mut directory: BTreeMap<Did, VerifyingKey> = BTreeMap::new();
    let mut name_to_did: BTreeMap<String, Did> = BTreeMap::new();
    let mut user_keys: BTreeMap<String, KeyPair> = BTreeMap::new();
    for agent in &scenario.agents {
        let kp = agent_keypair(&agent.name);
        directory.insert(kp.did(), kp.public_key());
        name_to_did.insert(agent.name.clone(), kp.did());
    }
    let mut anchors: BTreeSet<Did> = BTreeSet::new();
    for user in &scenario.trust_anchors {
        let kp = user_keypair(user);
        directory.insert(kp.did(), kp.public_key());
        anchors.insert(kp.did());
        user_keys.insert(user.clone(), kp);
    }
    let directory = Arc::new(directory);

    let registry_did = scenario
        .agents
        .iter()
        .find(|a| a.behavior == BehaviorSpec::Registry)
        .map(|a| name_to_did[&a.name]);

    // nodes
    let mut nodes: BTreeMap<Did, NodeRuntime> = BTreeMap::new();
    for agent in &scenario.agents {
        let kp = agent_keypair(&agent.name);
        let card = AgentCard {
            identity: kp.did(),
            public_key: kp.public_key(),
            capabilities: agent.behavior.card_capabilities(),
            constraints: ConstraintSet {
                max_latency_ms: agent.max_latency_ms,
                max_cost: None,
                data_residency: agent.data_residency.clone(),
            },
            trust_score: agent.trust_score,
            interaction_count: agent.interaction_count,
            interface: agent.endpoint.clone(),
        };
        let segment_peers: Vec<Did> = scenario
            .agents
            .iter()
            .filter(|other| other.segment == agent.segment && other.name != agent.name)
            .map(|other| name_to_did[&other.name])
            .collect();
        let cfg = NodeConfig {
            name: agent.name.clone(),
            keypair: kp.clone(),
            card,
            behavior: agent.behavior.clone(),
            segment: agent.segment.clone(),
            segment_peers,
            exec_ms: agent.exec_ms,
            pricing: PricingPolicy {
                cost_floor: agent.cost_floor,
                default_cost: agent.cost,
                estimated_completion_ms: agent.exec_ms,
                retry_policy: Default::default(),
            },
            delegates_to: agent.delegates_to.clone(),
            capacity: agent.capacity,
            profile: scenario.profile,
            registry: registry_did,
            trust_anchors: anchors.clone(),
            directory: Arc::clone(&directory),
            dht_round_timeout_ms: scenario.dht_round_timeout_ms,
            rng_seed: root_rng.derive(name_label(&agent.name)).next_u64(),
        };
        nodes.insert(kp.did(), NodeRuntime::new(cfg));
    }

    // every node knows every other at bootstrap, subject to bucket caps
    let dids: Vec<Did> = nodes.keys().copied().collect();
    for node in nodes.values_mut() {
        for did in &dids {
            if *did != node.did {
                node.bootstrap_peer(*did);
            }
        }
    }

    // plan injections: the scenario's user signs the root intent link
    let mut plan_injections: Vec<PlanInjection> = Vec::new();
    for spec in &scenario.plans {
        let requester = name_to_did[&spec.requester];
        let user_kp = &user_keys[&spec.user];
        let root_intent = Intent::new(
            IntentAction::Delegate,
            spec.capability.clone(),
            acp_core::doc::object([("label", Value::text(&spec.label))]).expect("distinct keys"),
            ConstraintSet::default(),
        )
        .expect("scenario-validated intent");
        let root_link = build_poi(user_kp, intent_digest(&root_intent), requester, None)
            .expect("root link has depth zero");
        plan_injections.push(PlanInjection {
            spec: spec.clone(),
            requester,
            root_chain: vec![root_link],
        });
    }

    // event schedule
    let mut queue = EventQueue::new();
    for (plan_id, injection) in plan_injections.iter().enumerate() {
        queue.schedule(
            injection.spec.at,
            EventKind::Inject(Command::StartPlan {
                plan_id: plan_id as u64,
            }),
        );
    }
    for lookup in &scenario.lookups {
        queue.schedule(
            lookup.at,
            EventKind::Inject(Command::Lookup {
                agent: name_to_did[&lookup.agent],
                capability: lookup.capability.clone(),
            }),
        );
    }
    for event in &scenario.events {
        match event {
            crate::scenario::AgentEvent::Down { at, agent } => {
                queue.schedule(*at, EventKind::AgentDown(name_to_did[agent]))
            }
            crate::scenario::AgentEvent::Up { at, agent } => {
                queue.schedule(*at, EventKind::AgentUp(name_to_did[agent]))
            }
        }
    }

    // run state
    let mut link_rng = root_rng.derive(0x6c696e6b); // "link"
    let mut metrics = MetricsCollector::new();
    let mut trace = Sha256::new();
    let mut down: BTreeSet<Did> = BTreeSet::new();
    let mut fifo: BTreeMap<(Did, Did), u64> = BTreeMap::new();
    let mut plan_docs: BTreeMap<u64, (bool, Value)> = BTreeMap::new();
    let mut clock: u64 = 0;

    // registration happens at t=0, before any scheduled event
    {
        let mut outbox = Outbox::default();
        for did in &dids {
            nodes
                .get_mut(did)
                .expect("node exists")
                .register(0, &mut outbox);
        }
        dispatch_outbox(
            outbox,
            0,
            scenario,
            &mut link_rng,
            &mut fifo,
            &mut queue,
            &mut metrics,
            &mut plan_docs,
        );
    }

    let mut beyond_horizon: Vec<SimEvent> = Vec::new();
    while let Some(SimEvent { at, seq, kind }) = queue.pop() {
        if at > scenario.horizon_ms {
            beyond_horizon.push(SimEvent { at, seq, kind });
            break;
        }
        // causality: nothing executes before the event that scheduled it
        assert!(
            at >= clock,
            "event at {at} scheduled in the past of {clock}"
        );
        clock = at;
        let mut outbox = Outbox::default();
        match kind {
            EventKind::Deliver { envelope, to } => {
                trace.update([1u8]);
                trace.update(at.to_be_bytes());
                trace.update(seq.to_be_bytes());
                trace.update(envelope.digest());
                trace.update(to.digest());
                if down.contains(&to) {
                    metrics.dropped_down += 1;
                } else {
                    metrics.record_delivery(at.saturating_sub(envelope.sent_at));
                    if let Some(node) = nodes.get_mut(&to) {
                        node.handle_envelope(&envelope, at, &mut outbox);
                    }
                }
            }
            EventKind::TimerFire { agent, timer_id } => {
                trace.update([2u8]);
                trace.update(at.to_be_bytes());
                trace.update(seq.to_be_bytes());
                trace.update(agent.digest());
                trace.update(timer_id.to_be_bytes());
                if !down.contains(&agent) {
                    if let Some(node) = nodes.get_mut(&agent) {
                        node.handle_timer(timer_id, at, &mut outbox);
                    }
                }
            }
            EventKind::AgentDown(did) => {
                trace.update([3u8]);
                trace.update(at.to_be_bytes());
                trace.update(did.digest());
                down.insert(did);
            }
            EventKind::AgentUp(did) => {
                trace.update([4u8]);
                trace.update(at.to_be_bytes());
                trace.update(did.digest());
                if down.remove(&did) {
                    if let Some(node) = nodes.get_mut(&did) {
                        node.on_restart();
                    }
                }
            }
            EventKind::Inject(Command::StartPlan { plan_id }) => {
                trace.update([5u8]);
                trace.update(at.to_be_bytes());
                trace.update(plan_id.to_be_bytes());
                let injection = &plan_injections[plan_id as usize];
                metrics.plans_started += 1;
                if !down.contains(&injection.requester) {
                    if let Some(node) = nodes.get_mut(&injection.requester) {
                        let plan = build_task_plan(&injection.spec);
                        node.start_plan(
                            plan_id,
                            injection.spec.label.clone(),
                            injection.root_chain.clone(),
                            plan,
                            at,
                            &mut outbox,
                        );
                    }
                }
            }
            EventKind::Inject(Command::Lookup { agent, capability }) => {
                trace.update([6u8]);
                trace.update(at.to_be_bytes());
                trace.update(agent.digest());
                trace.update(capability.as_bytes());
                if !down.contains(&agent) {
                    if let Some(node) = nodes.get_mut(&agent) {
                        node.start_measure_lookup(&capability, at, &mut outbox);
                    }
                }
            }
        }
        dispatch_outbox(
            outbox,
            at,
            scenario,
            &mut link_rng,
            &mut fifo,
            &mut queue,
            &mut metrics,
            &mut plan_docs,
        );
    }

    // conservation: every sent envelope is delivered, dropped by the
    // link, dropped at a downed agent, or still in flight at the horizon
    while let Some(event) = queue.pop() {
        beyond_horizon.push(event);
    }
    let in_flight = beyond_horizon
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Deliver { .. }))
        .count() as u64;
    assert_eq!(
        metrics.sent,
        metrics.delivered + metrics.dropped_link + metrics.dropped_down + in_flight,
        "message accounting does not reconcile"
    );

    // wrap-up: plans that never concluded count as failures
    let horizon = scenario.horizon_ms.max(clock);
    for did in &dids {
        let node = nodes.get_mut(did).expect("node exists");
        for (plan_id, doc) in node.unresolved_plan_docs(horizon) {
            metrics.plans_failed += 1;
            plan_docs.entry(plan_id).or_insert((false, doc));
        }
    }
    // plans whose requester never even started them (e.g. down at
    // injection) are failures too
    for plan_id in 0..plan_injections.len() as u64 {
        if !plan_docs.contains_key(&plan_id) {
            metrics.plans_failed += 1;
        }
    }

    let mut transcripts: Vec<Value> = Vec::new();
    let mut registry_cards: BTreeMap<Did, (u64, Value)> = BTreeMap::new();
    for did in &dids {
        let node = &nodes[did];
        transcripts.extend(node.session_transcripts());
        for record in node.stored_records() {
            let slot = registry_cards
                .entry(record.card.identity)
                .or_insert((record.stored_at, record.card.to_doc()));
            if record.stored_at > slot.0 {
                *slot = (record.stored_at, record.card.to_doc());
            }
        }
    }

    let ledger = registry_did
        .and_then(|did| nodes.get(&did))
        .and_then(|node| node.ledger().cloned());

    let reports: Vec<Value> = (0..plan_injections.len() as u64)
        .map(|id| {
            plan_docs
                .get(&id)
                .map(|(_, doc)| doc.clone())
                .unwrap_or_else(|| {
                    // the requester lost the plan (e.g. rebooted): report it
                    // as unresolved
                    acp_core::doc::object([
                        ("coalition", Value::Seq(vec![])),
                        ("elapsed_ms", Value::from(0u64)),
                        (
                            "label",
                            Value::text(&plan_injections[id as usize].spec.label),
                        ),
                        (
                            "requester",
                            Value::text(plan_injections[id as usize].requester.to_string()),
                        ),
                        ("status", Value::text("unresolved")),
                        ("subtasks", Value::Seq(vec![])),
                    ])
                    .expect("distinct keys")
                })
        })
        .collect();

    let metrics = metrics.finish(scenario.agents.len() as u64, seed);
    let trace_hash: [u8; 32] = trace.finalize().into();
    let expectation_failures = evaluate_expectations(scenario, &metrics, &reports, &ledger);
    let summary = crate::report::summary_doc(&metrics, &trace_hash, &expectation_failures);

    Ok(RunOutput {
        metrics,
        reports,
        transcripts,
        trace_hash,
        ledger,
        registry_cards: registry_cards
            .into_iter()
            .map(|(did, (_, doc))| (did, doc))
            .collect(),
        expectation_failures,
        summary,
    })
}

fn build_task_plan(spec: &PlanSpec) -> TaskPlan {
    let root_intent = Intent::new(
        IntentAction::Delegate,
        spec.capability.clone(),
        acp_core::doc::object([("label", Value::text(&spec.label))]).expect("distinct keys"),
        ConstraintSet::default(),
    )
    .expect("scenario-validated intent");
    let subtasks = spec
        .subtasks
        .iter()
        .map(|s| Subtask::new(s.intent.clone(), s.expected_result_digest))
        .collect();
    TaskPlan::new(root_intent, subtasks, spec.max_retries, spec.renegotiate)
}

#[allow(clippy::too_many_arguments)]
fn dispatch_outbox(
    outbox: Outbox,
    now: u64,
    scenario: &Scenario,
    link_rng: &mut SplitMix64,
    fifo: &mut BTreeMap<(Did, Did), u64>,
    queue: &mut EventQueue,
    metrics: &mut MetricsCollector,
    plan_docs: &mut BTreeMap<u64, (bool, Value)>,
) {
    for envelope in outbox.envelopes {
        metrics.sent += 1;
        let to = envelope.recipient;
        let from = envelope.sender;
        match scenario.link.sample(now, link_rng) {
            LinkOutcome::Dropped => metrics.dropped_link += 1,
            LinkOutcome::DeliverAt(raw_at) => {
                let slot = fifo.entry((from, to)).or_insert(0);
                let at = raw_at.max(*slot);
                *slot = at;
                queue.schedule(at, EventKind::Deliver { envelope, to });
            }
        }
    }
    for (agent, at, timer_id) in outbox.timers {
        queue.schedule(at, EventKind::TimerFire { agent, timer_id });
    }
    for note in outbox.notes {
        match &note {
            Note::PlanCompleted { plan_id, doc } => {
                plan_docs.insert(*plan_id, (true, doc.clone()));
            }
            Note::PlanFailed { plan_id, doc } => {
                plan_docs.insert(*plan_id, (false, doc.clone()));
            }
            _ => {}
        }
        metrics.apply(&note);
    }
}

fn evaluate_expectations(
    scenario: &Scenario,
    metrics: &RunMetrics,
    reports: &[Value],
    ledger: &Option<Ledger>,
) -> Vec<String> {
    let mut failures = Vec::new();
    let expect = &scenario.expect;
    if expect.plans_complete == Some(true) {
        let incomplete = reports
            .iter()
            .filter(|r| r.get_text("status") != Some("complete"))
            .count();
        if incomplete > 0 {
            failures.push(format!("{incomplete} plan(s) did not complete"));
        }
    }
    if let Some(min) = expect.min_success_rate_micros {
        if metrics.task_success_micros < min {
            failures.push(format!(
                "task success rate {} below the declared minimum {}",
                crate::metrics::fmt_micros(metrics.task_success_micros),
                crate::metrics::fmt_micros(min)
            ));
        }
    }
    if let Some(max_elapsed) = expect.max_plan_elapsed_ms {
        for report in reports {
            if report.get_text("status") == Some("complete") {
                let elapsed = report.get_u64("elapsed_ms").unwrap_or(u64::MAX);
                if elapsed > max_elapsed {
                    failures.push(format!(
                        "plan {} took {elapsed} ms, over the {max_elapsed} ms bound",
                        report.get_text("label").unwrap_or("?")
                    ));
                }
            }
        }
    }
    if let Some(min_coalition) = expect.min_coalition {
        for report in reports {
            if report.get_text("status") == Some("complete") {
                let size = report
                    .get("coalition")
                    .and_then(Value::as_seq)
                    .map(|s| s.len() as u64)
                    .unwrap_or(0);
                if size < min_coalition {
                    failures.push(format!(
                        "plan {} coalition of {size} providers, below {min_coalition}",
                        report.get_text("label").unwrap_or("?")
                    ));
                }
            }
        }
    }
    if expect.ledger_verified == Some(true) {
        match ledger {
            Some(ledger) if ledger.verify_chain() && !ledger.is_empty() => {}
            Some(ledger) if ledger.is_empty() => {
                failures.push("ledger is empty".to_string());
            }
            Some(_) => failures.push("ledger chain does not verify".to_string()),
            None => failures.push("no registry ledger in this run".to_string()),
        }
    }
    failures
}
