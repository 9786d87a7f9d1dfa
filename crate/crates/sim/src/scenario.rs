//! Scenario files: a canonical document (leniently parsed, so files may
//! be pretty-printed) declaring the agents, link model, injected plans
//! and failures, and the run's declared expectations.

use acp_core::doc::{self, Decimal, Value};
use acp_core::semantic::{validate_capability, ConstraintSet, Intent, IntentAction};
use thiserror::Error;

use crate::link::LinkModel;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid scenario{}: {reason}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
pub struct ScenarioError {
    pub line: Option<u32>,
    pub reason: String,
}

impl ScenarioError {
    fn new(reason: impl Into<String>) -> Self {
        ScenarioError {
            line: None,
            reason: reason.into(),
        }
    }
}

fn field_err(field: &str, what: &str) -> ScenarioError {
    ScenarioError::new(format!("field `{field}` {what}"))
}

/// Which protocol variant the whole network runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Full stack: signed envelopes, challenge gate with per-pair caching.
    Acp,
    /// Trusted-perimeter baseline: unsigned envelopes, no gate.
    LocalTrusted,
    /// Chatty baseline: unsigned envelopes, re-authentication before every
    /// message, padded to a 12% header overhead.
    Verbose,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Acp => "acp",
            Profile::LocalTrusted => "local",
            Profile::Verbose => "verbose",
        }
    }

    pub fn from_name(name: &str) -> Option<Profile> {
        match name {
            "acp" => Some(Profile::Acp),
            "local" => Some(Profile::LocalTrusted),
            "verbose" => Some(Profile::Verbose),
            _ => None,
        }
    }

    /// Envelopes carry real signatures.
    pub fn signed(self) -> bool {
        matches!(self, Profile::Acp)
    }

    /// Negotiation traffic requires a completed challenge-response.
    pub fn gated(self) -> bool {
        matches!(self, Profile::Acp | Profile::Verbose)
    }

    /// A passed challenge stays valid for the rest of the run.
    pub fn caches_auth(self) -> bool {
        matches!(self, Profile::Acp)
    }

    /// Target header overhead the profile pads messages up to.
    pub fn pad_overhead_micros(self) -> Option<u64> {
        match self {
            Profile::Verbose => Some(120_000),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BehaviorSpec {
    Provider { capabilities: Vec<String> },
    Requester,
    Registry,
    Idle,
}

impl BehaviorSpec {
    pub fn parse(text: &str) -> Result<BehaviorSpec, ScenarioError> {
        if let Some(caps) = text.strip_prefix("provider:") {
            let capabilities: Vec<String> = caps.split(',').map(str::to_string).collect();
            if capabilities.is_empty() || capabilities.iter().any(|c| c.is_empty()) {
                return Err(ScenarioError::new(format!(
                    "bad provider behavior `{text}`"
                )));
            }
            for cap in &capabilities {
                validate_capability(cap)
                    .map_err(|_| ScenarioError::new(format!("bad capability `{cap}`")))?;
            }
            return Ok(BehaviorSpec::Provider { capabilities });
        }
        match text {
            "requester" => Ok(BehaviorSpec::Requester),
            "registry" => Ok(BehaviorSpec::Registry),
            "idle" => Ok(BehaviorSpec::Idle),
            other => Err(ScenarioError::new(format!("unknown behavior `{other}`"))),
        }
    }

    pub fn render(&self) -> String {
        match self {
            BehaviorSpec::Provider { capabilities } => {
                format!("provider:{}", capabilities.join(","))
            }
            BehaviorSpec::Requester => "requester".into(),
            BehaviorSpec::Registry => "registry".into(),
            BehaviorSpec::Idle => "idle".into(),
        }
    }

    /// What the agent's card advertises. Every card needs at least one
    /// capability, so the service roles advertise synthetic ones.
    pub fn card_capabilities(&self) -> Vec<String> {
        match self {
            BehaviorSpec::Provider { capabilities } => capabilities.clone(),
            BehaviorSpec::Requester => vec!["task_orchestration".into()],
            BehaviorSpec::Registry => vec!["registry_service".into()],
            BehaviorSpec::Idle => vec!["idle_observer".into()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub name: String,
    pub behavior: BehaviorSpec,
    pub segment: String,
    pub exec_ms: u64,
    pub cost: Decimal,
    pub cost_floor: Decimal,
    pub max_latency_ms: Option<u64>,
    pub data_residency: Option<String>,
    pub endpoint: String,
    /// When set on a provider, every accepted task is re-delegated to a
    /// provider of this capability instead of executed locally.
    pub delegates_to: Option<String>,
    /// Trust snapshot published on the card at registration.
    pub trust_score: Decimal,
    pub interaction_count: u64,
    /// Concurrent engagements a provider takes on; 0 means unlimited.
    /// Busy providers decline further probes.
    pub capacity: u64,
}

#[derive(Debug, Clone)]
pub struct SubtaskSpec {
    pub intent: Intent,
    pub expected_result_digest: Option<[u8; 32]>,
}

#[derive(Debug, Clone)]
pub struct PlanSpec {
    pub at: u64,
    pub label: String,
    pub requester: String,
    pub user: String,
    pub capability: String,
    pub max_retries: u32,
    pub renegotiate: bool,
    pub subtasks: Vec<SubtaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentEvent {
    Down { at: u64, agent: String },
    Up { at: u64, agent: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupSpec {
    pub at: u64,
    pub agent: String,
    pub capability: String,
}

/// Declared pass/fail conditions, checked after the run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expectations {
    pub plans_complete: Option<bool>,
    pub min_success_rate_micros: Option<u64>,
    pub max_plan_elapsed_ms: Option<u64>,
    pub min_coalition: Option<u64>,
    pub ledger_verified: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub horizon_ms: u64,
    pub profile: Profile,
    pub link: LinkModel,
    pub trust_anchors: Vec<String>,
    pub agents: Vec<AgentSpec>,
    pub plans: Vec<PlanSpec>,
    pub lookups: Vec<LookupSpec>,
    pub events: Vec<AgentEvent>,
    pub expect: Expectations,
    pub dht_round_timeout_ms: u64,
}

impl Scenario {
    pub fn parse(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
        let value = doc::decode_lenient(bytes).map_err(|e| match e {
            doc::DocError::Parse { line, reason, .. } => ScenarioError {
                line: Some(line),
                reason: reason.to_string(),
            },
            other => ScenarioError::new(other.to_string()),
        })?;
        Scenario::from_doc(&value)
    }

    pub fn from_doc(value: &Value) -> Result<Scenario, ScenarioError> {
        let map = value
            .as_map()
            .ok_or_else(|| ScenarioError::new("scenario must be a document"))?;
        for key in map.keys() {
            if !matches!(
                key.as_str(),
                "horizon_ms"
                    | "profile"
                    | "link"
                    | "trust_anchors"
                    | "agents"
                    | "plans"
                    | "load"
                    | "lookups"
                    | "events"
                    | "expect"
                    | "dht_round_timeout_ms"
            ) {
                return Err(ScenarioError::new(format!("unknown field `{key}`")));
            }
        }

        let horizon_ms = value
            .get_u64("horizon_ms")
            .ok_or_else(|| field_err("horizon_ms", "must be a nonnegative integer"))?;

        let profile = match value.get_text("profile") {
            None => Profile::Acp,
            Some(p) => Profile::from_name(p)
                .ok_or_else(|| field_err("profile", "must be acp|local|verbose"))?,
        };

        let link = parse_link(value.get("link"))?;

        let trust_anchors = match value.get("trust_anchors") {
            None => Vec::new(),
            Some(v) => v
                .as_seq()
                .ok_or_else(|| field_err("trust_anchors", "must be a list"))?
                .iter()
                .map(|a| {
                    a.as_text()
                        .map(str::to_string)
                        .ok_or_else(|| field_err("trust_anchors", "must list user names"))
                })
                .collect::<Result<_, _>>()?,
        };

        let agents = value
            .get("agents")
            .and_then(Value::as_seq)
            .ok_or_else(|| field_err("agents", "must be a list"))?
            .iter()
            .map(parse_agent)
            .collect::<Result<Vec<_>, _>>()?;

        let mut plans: Vec<PlanSpec> = match value.get("plans") {
            None => Vec::new(),
            Some(v) => v
                .as_seq()
                .ok_or_else(|| field_err("plans", "must be a list"))?
                .iter()
                .enumerate()
                .map(|(i, p)| parse_plan(p, i))
                .collect::<Result<_, _>>()?,
        };

        if let Some(load) = value.get("load") {
            plans.extend(expand_load(load, plans.len())?);
        }

        let lookups = match value.get("lookups") {
            None => Vec::new(),
            Some(v) => v
                .as_seq()
                .ok_or_else(|| field_err("lookups", "must be a list"))?
                .iter()
                .map(|l| {
                    Ok(LookupSpec {
                        at: l
                            .get_u64("at")
                            .ok_or_else(|| field_err("lookups.at", "required"))?,
                        agent: l
                            .get_text("agent")
                            .ok_or_else(|| field_err("lookups.agent", "required"))?
                            .to_string(),
                        capability: l
                            .get_text("capability")
                            .ok_or_else(|| field_err("lookups.capability", "required"))?
                            .to_string(),
                    })
                })
                .collect::<Result<_, _>>()?,
        };

        let events = match value.get("events") {
            None => Vec::new(),
            Some(v) => v
                .as_seq()
                .ok_or_else(|| field_err("events", "must be a list"))?
                .iter()
                .map(parse_event)
                .collect::<Result<_, _>>()?,
        };

        let expect = parse_expect(value.get("expect"))?;

        let dht_round_timeout_ms = value
            .get_u64("dht_round_timeout_ms")
            .unwrap_or(link.round_trip_bound_ms() * 2 + 10);

        let scenario = Scenario {
            horizon_ms,
            profile,
            link,
            trust_anchors,
            agents,
            plans,
            lookups,
            events,
            expect,
            dht_round_timeout_ms,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let mut names = std::collections::BTreeSet::new();
        for agent in &self.agents {
            if agent.name.is_empty() {
                return Err(ScenarioError::new("agent name must be nonempty"));
            }
            if !names.insert(agent.name.as_str()) {
                return Err(ScenarioError::new(format!(
                    "duplicate agent name `{}`",
                    agent.name
                )));
            }
            if agent.delegates_to.is_some()
                && !matches!(agent.behavior, BehaviorSpec::Provider { .. })
            {
                return Err(ScenarioError::new(format!(
                    "agent `{}` delegates but is not a provider",
                    agent.name
                )));
            }
        }
        let registries = self
            .agents
            .iter()
            .filter(|a| a.behavior == BehaviorSpec::Registry)
            .count();
        if registries > 1 {
            return Err(ScenarioError::new("at most one registry agent"));
        }
        for plan in &self.plans {
            let requester = self
                .agents
                .iter()
                .find(|a| a.name == plan.requester)
                .ok_or_else(|| {
                    ScenarioError::new(format!("plan requester `{}` unknown", plan.requester))
                })?;
            if requester.behavior != BehaviorSpec::Requester {
                return Err(ScenarioError::new(format!(
                    "plan requester `{}` must have the requester behavior",
                    plan.requester
                )));
            }
            if !self.trust_anchors.contains(&plan.user) {
                return Err(ScenarioError::new(format!(
                    "plan user `{}` is not a trust anchor",
                    plan.user
                )));
            }
            if plan.subtasks.is_empty() {
                return Err(ScenarioError::new(format!(
                    "plan `{}` has no subtasks",
                    plan.label
                )));
            }
        }
        for lookup in &self.lookups {
            if !names.contains(lookup.agent.as_str()) {
                return Err(ScenarioError::new(format!(
                    "lookup agent `{}` unknown",
                    lookup.agent
                )));
            }
        }
        for event in &self.events {
            let (AgentEvent::Down { agent, at } | AgentEvent::Up { agent, at }) = event;
            if !names.contains(agent.as_str()) {
                return Err(ScenarioError::new(format!("event agent `{agent}` unknown")));
            }
            if *at > self.horizon_ms {
                return Err(ScenarioError::new(format!(
                    "event at {at} is beyond the horizon"
                )));
            }
        }
        Ok(())
    }

    /// Schedules an outage for an agent; the scheduled time must lie
    /// within the horizon and the DID must be known.
    pub fn inject_failure(&mut self, agent: &str, at: u64) -> Result<(), ScenarioError> {
        if !self.agents.iter().any(|a| a.name == agent) {
            return Err(ScenarioError::new(format!("unknown agent `{agent}`")));
        }
        if at > self.horizon_ms {
            return Err(ScenarioError::new(format!(
                "failure at {at} is beyond the horizon"
            )));
        }
        self.events.push(AgentEvent::Down {
            at,
            agent: agent.to_string(),
        });
        Ok(())
    }
}

fn parse_link(value: Option<&Value>) -> Result<LinkModel, ScenarioError> {
    let Some(value) = value else {
        return Ok(LinkModel::default());
    };
    let drop_micros = match value.get("drop_probability") {
        None => 0,
        Some(v) => {
            let d = v
                .as_decimal()
                .ok_or_else(|| field_err("link.drop_probability", "must be a decimal"))?;
            let micros = d.micros();
            if !(0..1_000_000).contains(&micros) {
                return Err(field_err("link.drop_probability", "must be in [0, 1)"));
            }
            micros as u64
        }
    };
    Ok(LinkModel {
        base_latency_ms: value.get_u64("base_latency_ms").unwrap_or(10),
        jitter_ms: value.get_u64("jitter_ms").unwrap_or(0),
        drop_micros,
    })
}

fn parse_agent(value: &Value) -> Result<AgentSpec, ScenarioError> {
    let name = value
        .get_text("name")
        .ok_or_else(|| field_err("agents.name", "required"))?
        .to_string();
    let behavior = BehaviorSpec::parse(
        value
            .get_text("behavior")
            .ok_or_else(|| field_err("agents.behavior", "required"))?,
    )?;
    let cost = match value.get("cost") {
        None => Decimal::new(2, 2).expect("0.02"),
        Some(v) => v
            .as_decimal()
            .ok_or_else(|| field_err("agents.cost", "must be a decimal"))?,
    };
    let cost_floor = match value.get("cost_floor") {
        None => Decimal::zero(),
        Some(v) => v
            .as_decimal()
            .ok_or_else(|| field_err("agents.cost_floor", "must be a decimal"))?,
    };
    let delegates_to = match value.get("delegates_to") {
        None => None,
        Some(v) => {
            let cap = v
                .as_text()
                .ok_or_else(|| field_err("agents.delegates_to", "must be a capability"))?;
            validate_capability(cap)
                .map_err(|_| field_err("agents.delegates_to", "must be a capability"))?;
            Some(cap.to_string())
        }
    };
    let trust_score = match value.get("trust_score") {
        None => Decimal::new(5, 1).expect("0.5"),
        Some(v) => {
            let d = v
                .as_decimal()
                .ok_or_else(|| field_err("agents.trust_score", "must be a decimal"))?;
            if d < Decimal::zero() || d > Decimal::from_int(1) {
                return Err(field_err("agents.trust_score", "must be in [0, 1]"));
            }
            d
        }
    };
    Ok(AgentSpec {
        endpoint: value
            .get_text("endpoint")
            .map(str::to_string)
            .unwrap_or_else(|| format!("sim://{name}")),
        segment: value.get_text("segment").unwrap_or("lan-0").to_string(),
        exec_ms: value.get_u64("exec_ms").unwrap_or(50),
        max_latency_ms: value.get_u64("max_latency_ms"),
        data_residency: value.get_text("data_residency").map(str::to_string),
        interaction_count: value.get_u64("interactions").unwrap_or(0),
        capacity: value.get_u64("capacity").unwrap_or(0),
        name,
        behavior,
        cost,
        cost_floor,
        delegates_to,
        trust_score,
    })
}

fn parse_intentish(value: &Value, default_action: IntentAction) -> Result<Intent, ScenarioError> {
    let action = match value.get_text("action") {
        None => default_action,
        Some(a) => IntentAction::from_name(a).map_err(|e| ScenarioError::new(e.to_string()))?,
    };
    let capability = value
        .get_text("capability")
        .ok_or_else(|| field_err("capability", "required"))?;
    let parameters = value
        .get("parameters")
        .cloned()
        .unwrap_or_else(Value::empty_map);
    let constraints = ConstraintSet {
        max_latency_ms: value.get_u64("max_latency_ms"),
        max_cost: match value.get("max_cost") {
            None => None,
            Some(v) => Some(
                v.as_decimal()
                    .ok_or_else(|| field_err("max_cost", "must be a decimal"))?,
            ),
        },
        data_residency: value.get_text("data_residency").map(str::to_string),
    };
    Intent::new(action, capability, parameters, constraints)
        .map_err(|e| ScenarioError::new(e.to_string()))
}

fn parse_plan(value: &Value, index: usize) -> Result<PlanSpec, ScenarioError> {
    let subtasks = value
        .get("subtasks")
        .and_then(Value::as_seq)
        .ok_or_else(|| field_err("plans.subtasks", "must be a list"))?
        .iter()
        .map(|s| {
            let intent = parse_intentish(s, IntentAction::Execute)?;
            let expected_result_digest = match s.get_text("expected_result_digest") {
                None => None,
                Some(h) => Some(
                    hex::decode(h)
                        .ok()
                        .and_then(|b| <[u8; 32]>::try_from(b).ok())
                        .ok_or_else(|| {
                            field_err("expected_result_digest", "must be 32-byte hex")
                        })?,
                ),
            };
            Ok(SubtaskSpec {
                intent,
                expected_result_digest,
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;

    Ok(PlanSpec {
        at: value
            .get_u64("at")
            .ok_or_else(|| field_err("plans.at", "required"))?,
        label: value
            .get_text("label")
            .map(str::to_string)
            .unwrap_or_else(|| format!("plan-{index}")),
        requester: value
            .get_text("requester")
            .ok_or_else(|| field_err("plans.requester", "required"))?
            .to_string(),
        user: value
            .get_text("user")
            .ok_or_else(|| field_err("plans.user", "required"))?
            .to_string(),
        capability: value
            .get_text("capability")
            .unwrap_or("task_orchestration")
            .to_string(),
        max_retries: u32::try_from(value.get_u64("max_retries").unwrap_or(1))
            .map_err(|_| field_err("plans.max_retries", "out of range"))?,
        renegotiate: value
            .get("renegotiate")
            .and_then(Value::as_bool)
            .unwrap_or(true),
        subtasks,
    })
}

/// The high-load block: `count` single-subtask plans spread evenly over
/// `window_ms`, round-robin over the listed requesters.
fn expand_load(value: &Value, label_offset: usize) -> Result<Vec<PlanSpec>, ScenarioError> {
    let count = value
        .get_u64("count")
        .ok_or_else(|| field_err("load.count", "required"))?;
    let window_ms = value
        .get_u64("window_ms")
        .ok_or_else(|| field_err("load.window_ms", "required"))?;
    let start_at = value.get_u64("start_at").unwrap_or(1_000);
    let user = value
        .get_text("user")
        .ok_or_else(|| field_err("load.user", "required"))?
        .to_string();
    let requesters: Vec<String> = value
        .get("requesters")
        .and_then(Value::as_seq)
        .ok_or_else(|| field_err("load.requesters", "must be a list"))?
        .iter()
        .map(|r| {
            r.as_text()
                .map(str::to_string)
                .ok_or_else(|| field_err("load.requesters", "must list agent names"))
        })
        .collect::<Result<_, _>>()?;
    if requesters.is_empty() || count == 0 {
        return Err(field_err("load", "needs requesters and a positive count"));
    }
    let intent_template = parse_intentish(value, IntentAction::Execute)?;
    let max_retries = u32::try_from(value.get_u64("max_retries").unwrap_or(2))
        .map_err(|_| field_err("load.max_retries", "out of range"))?;
    let renegotiate = value
        .get("renegotiate")
        .and_then(Value::as_bool)
        .unwrap_or(true);

    let step = window_ms / count;
    Ok((0..count)
        .map(|i| PlanSpec {
            at: start_at + i * step,
            label: format!("load-{}", label_offset + i as usize),
            requester: requesters[i as usize % requesters.len()].clone(),
            user: user.clone(),
            capability: "task_orchestration".into(),
            max_retries,
            renegotiate,
            subtasks: vec![SubtaskSpec {
                intent: intent_template.clone(),
                expected_result_digest: None,
            }],
        })
        .collect())
}

fn parse_event(value: &Value) -> Result<AgentEvent, ScenarioError> {
    let at = value
        .get_u64("at")
        .ok_or_else(|| field_err("events.at", "required"))?;
    let agent = value
        .get_text("agent")
        .ok_or_else(|| field_err("events.agent", "required"))?
        .to_string();
    match value.get_text("kind") {
        Some("down") => Ok(AgentEvent::Down { at, agent }),
        Some("up") => Ok(AgentEvent::Up { at, agent }),
        _ => Err(field_err("events.kind", "must be down|up")),
    }
}

fn parse_expect(value: Option<&Value>) -> Result<Expectations, ScenarioError> {
    let Some(value) = value else {
        return Ok(Expectations::default());
    };
    Ok(Expectations {
        plans_complete: value.get("plans_complete").and_then(Value::as_bool),
        min_success_rate_micros: match value.get("min_success_rate") {
            None => None,
            Some(v) => {
                let d = v
                    .as_decimal()
                    .ok_or_else(|| field_err("expect.min_success_rate", "must be a decimal"))?;
                Some(d.micros().clamp(0, 1_000_000) as u64)
            }
        },
        max_plan_elapsed_ms: value.get_u64("max_plan_elapsed_ms"),
        min_coalition: value.get_u64("min_coalition"),
        ledger_verified: value.get("ledger_verified").and_then(Value::as_bool),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"{
        "horizon_ms": 60000,
        "profile": "acp",
        "link": {"base_latency_ms": 10, "jitter_ms": 0, "drop_probability": 0.0},
        "trust_anchors": ["user-main"],
        "agents": [
            {"name": "hub", "behavior": "registry"},
            {"name": "buyer", "behavior": "requester"},
            {"name": "seller", "behavior": "provider:market_analysis", "exec_ms": 100}
        ],
        "plans": [
            {"at": 1000, "requester": "buyer", "user": "user-main",
             "subtasks": [{"capability": "market_analysis", "max_latency_ms": 2000}]}
        ],
        "events": [{"at": 5000, "agent": "seller", "kind": "down"}]
    }"#;

    #[test]
    fn parses_a_basic_scenario() {
        let s = Scenario::parse(BASIC.as_bytes()).unwrap();
        assert_eq!(s.agents.len(), 3);
        assert_eq!(s.plans.len(), 1);
        assert_eq!(s.plans[0].label, "plan-0");
        assert_eq!(s.profile, Profile::Acp);
        assert_eq!(s.link.base_latency_ms, 10);
        assert_eq!(
            s.events[0],
            AgentEvent::Down {
                at: 5000,
                agent: "seller".into()
            }
        );
    }

    #[test]
    fn unknown_event_agent_is_invalid() {
        let text = BASIC.replace("\"agent\": \"seller\"", "\"agent\": \"nobody\"");
        let err = Scenario::parse(text.as_bytes()).unwrap_err();
        assert!(err.reason.contains("nobody"), "{err}");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let err = Scenario::parse(b"{\n  \"horizon_ms\": ?\n}").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn plan_user_must_be_anchor() {
        let text = BASIC.replace("\"user\": \"user-main\"", "\"user\": \"stranger\"");
        assert!(Scenario::parse(text.as_bytes()).is_err());
    }

    #[test]
    fn load_block_expands_to_plans() {
        let text = r#"{
            "horizon_ms": 20000,
            "trust_anchors": ["u"],
            "agents": [
                {"name": "r1", "behavior": "requester"},
                {"name": "r2", "behavior": "requester"},
                {"name": "p", "behavior": "provider:compute_task"}
            ],
            "load": {"count": 10, "window_ms": 5000, "start_at": 1000,
                     "capability": "compute_task", "user": "u",
                     "requesters": ["r1", "r2"]}
        }"#;
        let s = Scenario::parse(text.as_bytes()).unwrap();
        assert_eq!(s.plans.len(), 10);
        assert_eq!(s.plans[0].at, 1000);
        assert_eq!(s.plans[9].at, 1000 + 9 * 500);
        assert_eq!(s.plans[0].requester, "r1");
        assert_eq!(s.plans[1].requester, "r2");
    }

    #[test]
    fn inject_failure_validates_agent_and_horizon() {
        let mut s = Scenario::parse(BASIC.as_bytes()).unwrap();
        s.inject_failure("seller", 2_000).unwrap();
        assert!(s.inject_failure("ghost", 2_000).is_err());
        assert!(s.inject_failure("seller", 90_000).is_err());
    }

    #[test]
    fn behavior_parsing() {
        assert_eq!(
            BehaviorSpec::parse("provider:a,b").unwrap(),
            BehaviorSpec::Provider {
                capabilities: vec!["a".into(), "b".into()]
            }
        );
        assert!(BehaviorSpec::parse("provider:").is_err());
        assert!(BehaviorSpec::parse("wizard").is_err());
        assert_eq!(BehaviorSpec::parse("idle").unwrap(), BehaviorSpec::Idle);
    }
}
