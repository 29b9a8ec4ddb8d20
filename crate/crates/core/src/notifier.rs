//! Trigger queue and delivery pipeline.
//!
//! Modules enqueue [`TriggerRequest`]s. [`TriggerQueue::dispatch_due`] gates each due request
//! through the FBM quadrant rule, renders an instructor-signed message and hands it to the
//! configured channels. Deferred requests are retried once a day later and then dropped.

use std::collections::{BTreeMap, BTreeSet};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{HabitCategory, StudentId, Timestamp};
use crate::fbm::{select_trigger_type, FbmParams, TriggerDecision, TriggerType};
use crate::hook::TriggerSource;

const BUILTIN_TEMPLATES: &str = include_str!("../catalog/templates.json");

/// Appears in every rendered message.
pub const ATTRIBUTION_TOKEN: &str = "your instructor";

/// Words no template may contain: negative framing, plus anything hinting at pairing roles.
pub const FORBIDDEN_WORDS: &[&str] = &[
    "fail", "failed", "failure", "lazy", "bad", "poor", "poorly", "behind", "missed", "never", "don't",
    "shouldn't", "can't", "won't", "disappoint", "disappointed", "worst", "weak", "struggling", "higher",
    "lower",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NotifierError {
    #[error("trigger due at {due_at} is not in the future (now {now})")]
    PastDue { due_at: Timestamp, now: Timestamp },
    #[error("template catalog: {0}")]
    Templates(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerPurpose {
    SessionStart,
    CheckOut,
    ReadingList,
    PostClassNotes,
    PlaceSuggestion,
    InviteFriends,
    PairPrompt,
}

impl TriggerPurpose {
    pub const ALL: [TriggerPurpose; 7] = [
        Self::SessionStart,
        Self::CheckOut,
        Self::ReadingList,
        Self::PostClassNotes,
        Self::PlaceSuggestion,
        Self::InviteFriends,
        Self::PairPrompt,
    ];

    pub fn category(self) -> HabitCategory {
        match self {
            Self::SessionStart | Self::CheckOut | Self::PlaceSuggestion => HabitCategory::Scheduling,
            Self::ReadingList | Self::PostClassNotes => HabitCategory::Preparation,
            Self::InviteFriends | Self::PairPrompt => HabitCategory::GroupStudy,
        }
    }

    /// Pure reminders carry no new content and can be thinned once the habit is internal.
    pub fn is_reminder(self) -> bool {
        matches!(self, Self::SessionStart | Self::CheckOut | Self::ReadingList | Self::PostClassNotes)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SessionStart => "session_start",
            Self::CheckOut => "check_out",
            Self::ReadingList => "reading_list",
            Self::PostClassNotes => "post_class_notes",
            Self::PlaceSuggestion => "place_suggestion",
            Self::InviteFriends => "invite_friends",
            Self::PairPrompt => "pair_prompt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRequest {
    pub student_id: StudentId,
    pub category: HabitCategory,
    pub purpose: TriggerPurpose,
    pub due_at: Timestamp,
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
}

impl TriggerRequest {
    pub fn new(student_id: StudentId, purpose: TriggerPurpose, due_at: Timestamp) -> Self {
        Self { student_id, category: purpose.category(), purpose, due_at, payload: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.payload.insert(key.to_string(), value.into());
        self
    }

    fn key(&self) -> String {
        format!("{}|{}|{}", self.student_id, self.purpose.as_str(), self.due_at.timestamp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    InAppFeed,
    WebhookStub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub delivery_id: String,
    pub request: TriggerRequest,
    pub decision: TriggerDecision,
    pub message: String,
    pub channel: Channel,
    pub delivered_at: Timestamp,
}

impl Delivery {
    pub fn trigger_type(&self) -> TriggerType {
        self.decision.trigger_type().expect("deliveries are only made for fired triggers")
    }

    pub fn webhook_payload(&self) -> WebhookPayload {
        WebhookPayload {
            student_id: self.request.student_id.clone(),
            purpose: self.request.purpose,
            message: self.message.clone(),
            trigger_type: self.trigger_type(),
            delivered_at: self.delivered_at,
        }
    }
}

/// Body POSTed to the webhook channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebhookPayload {
    pub student_id: StudentId,
    pub purpose: TriggerPurpose,
    pub message: String,
    pub trigger_type: TriggerType,
    pub delivered_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageTemplate {
    pub purpose: TriggerPurpose,
    pub trigger_type: TriggerType,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateCatalog {
    pub instructor: String,
    pub templates: Vec<MessageTemplate>,
}

impl Default for TemplateCatalog {
    fn default() -> Self {
        Self::from_json(BUILTIN_TEMPLATES).expect("builtin templates are valid")
    }
}

/// Forbidden words found in `text`, matched on whole words, case-insensitively.
pub fn forbidden_words_in(text: &str) -> Vec<&'static str> {
    let lower = text.to_lowercase();
    let words: BTreeSet<&str> = lower
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .collect();
    FORBIDDEN_WORDS.iter().copied().filter(|w| words.contains(w)).collect()
}

impl TemplateCatalog {
    pub fn from_json(json: &str) -> Result<Self, NotifierError> {
        let catalog: TemplateCatalog =
            serde_json::from_str(json).map_err(|e| NotifierError::Templates(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    /// Every (purpose, trigger type) pair needs exactly one template and none may use
    /// forbidden words.
    pub fn validate(&self) -> Result<(), NotifierError> {
        if self.instructor.trim().is_empty() {
            return Err(NotifierError::Templates("instructor name is empty".into()));
        }
        for purpose in TriggerPurpose::ALL {
            for tt in [TriggerType::Signal, TriggerType::Spark, TriggerType::Facilitator] {
                let n = self.templates.iter().filter(|t| t.purpose == purpose && t.trigger_type == tt).count();
                if n != 1 {
                    return Err(NotifierError::Templates(format!(
                        "{} templates for {}/{tt:?}, expected 1",
                        n,
                        purpose.as_str()
                    )));
                }
            }
        }
        for t in &self.templates {
            let bad = forbidden_words_in(&t.text);
            if !bad.is_empty() {
                return Err(NotifierError::Templates(format!(
                    "template {}/{:?} uses {:?}",
                    t.purpose.as_str(),
                    t.trigger_type,
                    bad
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self, request: &TriggerRequest, trigger_type: TriggerType) -> String {
        let template = self
            .templates
            .iter()
            .find(|t| t.purpose == request.purpose && t.trigger_type == trigger_type)
            .expect("validated catalog covers every purpose and type");
        format!("{}\n- {}, {}", fill(&template.text, &request.payload), self.instructor, ATTRIBUTION_TOKEN)
    }
}

/// Replaces `{key}` placeholders from `vars`; unknown keys become empty.
pub fn fill(template: &str, vars: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        match rest[open..].find('}') {
            Some(close) => {
                let key = &rest[open + 1..open + close];
                if let Some(v) = vars.get(key) {
                    out.push_str(v);
                }
                rest = &rest[open + close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NotifierParams {
    /// When false every due trigger fires as a Signal (baseline for comparisons).
    pub gate_enabled: bool,
    pub defer_hours: i64,
    pub max_deferrals: u32,
    pub max_attempts: u32,
    pub backoff_minutes: i64,
    pub channels: Vec<Channel>,
}

impl Default for NotifierParams {
    fn default() -> Self {
        Self {
            gate_enabled: true,
            defer_hours: 24,
            max_deferrals: 1,
            max_attempts: 3,
            backoff_minutes: 1,
            channels: vec![Channel::InAppFeed],
        }
    }
}

/// What the gate needs to know about a student at dispatch time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateInput {
    pub motivation: f64,
    pub ability: f64,
    pub source: TriggerSource,
}

pub trait GateContext {
    fn gate_input(&self, student: &StudentId, category: HabitCategory) -> GateInput;
}

pub trait DeliverySink {
    fn deliver(&mut self, delivery: &Delivery) -> Result<(), ChannelError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QueueEntry {
    request: TriggerRequest,
    next_due: Timestamp,
    deferrals: u32,
    attempts: u32,
    #[serde(default)]
    decision: Option<TriggerDecision>,
    #[serde(default)]
    delivered: BTreeSet<Channel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Deferred,
    Dropped,
    SkippedInternal,
    Retried,
    DeadLettered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub at: Timestamp,
    pub student_id: StudentId,
    pub purpose: TriggerPurpose,
    pub due_at: Timestamp,
    pub outcome: AuditOutcome,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueued {
    Accepted,
    Duplicate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriggerQueue {
    /// Keyed by zero-padded due time then request key, so iteration is in due order.
    pending: BTreeMap<String, QueueEntry>,
    seen: BTreeSet<String>,
    reminder_counts: BTreeMap<String, u32>,
    deliveries: Vec<Delivery>,
    audit: Vec<AuditRecord>,
    dead_letter: Vec<TriggerRequest>,
    next_delivery: u64,
}

fn slot(entry: &QueueEntry) -> String {
    format!("{:020}|{}", entry.next_due.timestamp(), entry.request.key())
}

impl TriggerQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts a future request; repeated (student, purpose, due_at) keys are ignored.
    pub fn enqueue(&mut self, request: TriggerRequest, now: Timestamp) -> Result<Enqueued, NotifierError> {
        if request.due_at <= now {
            return Err(NotifierError::PastDue { due_at: request.due_at, now });
        }
        if !self.seen.insert(request.key()) {
            return Ok(Enqueued::Duplicate);
        }
        let entry = QueueEntry {
            next_due: request.due_at,
            request,
            deferrals: 0,
            attempts: 0,
            decision: None,
            delivered: BTreeSet::new(),
        };
        self.pending.insert(slot(&entry), entry);
        Ok(Enqueued::Accepted)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn pending(&self) -> impl Iterator<Item = (&TriggerRequest, Timestamp)> {
        self.pending.values().map(|e| (&e.request, e.next_due))
    }

    pub fn next_due(&self) -> Option<Timestamp> {
        self.pending.values().next().map(|e| e.next_due)
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn dead_letter(&self) -> &[TriggerRequest] {
        &self.dead_letter
    }

    fn audit_entry(&mut self, entry: &QueueEntry, now: Timestamp, outcome: AuditOutcome, detail: String) {
        self.audit.push(AuditRecord {
            at: now,
            student_id: entry.request.student_id.clone(),
            purpose: entry.request.purpose,
            due_at: entry.request.due_at,
            outcome,
            detail,
        });
    }

    fn decide(entry: &QueueEntry, fbm: &FbmParams, params: &NotifierParams, gate: &dyn GateContext) -> (TriggerDecision, GateInput) {
        let input = gate.gate_input(&entry.request.student_id, entry.request.category);
        if !params.gate_enabled {
            return (TriggerDecision::fire(TriggerType::Signal), input);
        }
        let m = input.motivation.clamp(0.0, 1.0);
        let a = input.ability.clamp(0.0, 1.0);
        let decision = select_trigger_type(m, a, fbm.motivation_threshold, fbm.ability_threshold)
            .expect("inputs clamped to the unit interval");
        (decision, input)
    }

    /// Processes every request due at or before `now` and returns the new deliveries.
    pub fn dispatch_due(
        &mut self,
        now: Timestamp,
        fbm: &FbmParams,
        params: &NotifierParams,
        templates: &TemplateCatalog,
        gate: &dyn GateContext,
        sink: &mut dyn DeliverySink,
    ) -> Vec<Delivery> {
        let due: Vec<String> =
            self.pending.iter().take_while(|(_, e)| e.next_due <= now).map(|(k, _)| k.clone()).collect();
        let mut out = Vec::new();
        for key in due {
            let mut entry = self.pending.remove(&key).expect("key collected above");
            let decision = match entry.decision {
                Some(d) => d,
                None => {
                    let (decision, input) = Self::decide(&entry, fbm, params, gate);
                    let Some(trigger_type) = decision.trigger_type() else {
                        if entry.deferrals < params.max_deferrals {
                            entry.deferrals += 1;
                            entry.next_due = now + Duration::hours(params.defer_hours);
                            self.audit_entry(&entry, now, AuditOutcome::Deferred, String::new());
                            self.pending.insert(slot(&entry), entry);
                        } else {
                            self.audit_entry(&entry, now, AuditOutcome::Dropped, "deferred twice".into());
                        }
                        continue;
                    };
                    if input.source == TriggerSource::Internal
                        && entry.request.purpose.is_reminder()
                        && trigger_type == TriggerType::Signal
                    {
                        let counter = format!("{}|{}", entry.request.student_id, entry.request.purpose.as_str());
                        let n = self.reminder_counts.entry(counter).or_insert(0);
                        *n += 1;
                        if *n % 2 == 0 {
                            self.audit_entry(&entry, now, AuditOutcome::SkippedInternal, String::new());
                            continue;
                        }
                    }
                    entry.decision = Some(decision);
                    decision
                }
            };
            let message = templates.render(&entry.request, decision.trigger_type().expect("fired"));
            let mut failure = None;
            for &channel in &params.channels {
                if entry.delivered.contains(&channel) {
                    continue;
                }
                let delivery = Delivery {
                    delivery_id: format!("dlv-{:07}", self.next_delivery + 1),
                    request: entry.request.clone(),
                    decision,
                    message: message.clone(),
                    channel,
                    delivered_at: now,
                };
                match sink.deliver(&delivery) {
                    Ok(()) => {
                        self.next_delivery += 1;
                        entry.delivered.insert(channel);
                        self.deliveries.push(delivery.clone());
                        out.push(delivery);
                    }
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            if let Some(ChannelError(reason)) = failure {
                entry.attempts += 1;
                if entry.attempts >= params.max_attempts {
                    self.audit_entry(&entry, now, AuditOutcome::DeadLettered, reason);
                    self.dead_letter.push(entry.request);
                } else {
                    entry.next_due = now + Duration::minutes(params.backoff_minutes << (entry.attempts - 1));
                    self.audit_entry(&entry, now, AuditOutcome::Retried, reason);
                    self.pending.insert(slot(&entry), entry);
                }
            }
        }
        out
    }

    /// Drops pending requests matching `pred`, e.g. for a cancelled class meeting.
    pub fn cancel_where(&mut self, pred: impl Fn(&TriggerRequest) -> bool) -> usize {
        let before = self.pending.len();
        self.pending.retain(|_, e| !pred(&e.request));
        before - self.pending.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    struct FixedGate(GateInput);
    impl GateContext for FixedGate {
        fn gate_input(&self, _: &StudentId, _: HabitCategory) -> GateInput {
            self.0
        }
    }

    #[derive(Default)]
    struct Sink {
        got: Vec<Delivery>,
        fail_times: usize,
    }
    impl DeliverySink for Sink {
        fn deliver(&mut self, d: &Delivery) -> Result<(), ChannelError> {
            if self.fail_times > 0 {
                self.fail_times -= 1;
                return Err(ChannelError("unreachable".into()));
            }
            self.got.push(d.clone());
            Ok(())
        }
    }

    fn t0() -> Timestamp {
        Utc.with_ymd_and_hms(2026, 3, 2, 17, 0, 0).unwrap()
    }

    fn gate(m: f64, a: f64) -> FixedGate {
        FixedGate(GateInput { motivation: m, ability: a, source: TriggerSource::External })
    }

    fn req(purpose: TriggerPurpose, due: Timestamp) -> TriggerRequest {
        TriggerRequest::new(StudentId::new("s1").unwrap(), purpose, due).with("class", "Web Programming")
    }

    fn run(q: &mut TriggerQueue, now: Timestamp, g: &FixedGate, sink: &mut Sink) -> Vec<Delivery> {
        q.dispatch_due(now, &FbmParams::default(), &NotifierParams::default(), &TemplateCatalog::default(), g, sink)
    }

    #[test]
    fn enqueue_rules() {
        let mut q = TriggerQueue::new();
        let start = t0() + Duration::hours(1);
        let r = req(TriggerPurpose::SessionStart, start - Duration::minutes(10));
        assert_eq!(q.enqueue(r.clone(), t0()), Ok(Enqueued::Accepted));
        assert_eq!(q.enqueue(r, t0()), Ok(Enqueued::Duplicate));
        assert_eq!(q.pending_len(), 1);
        assert!(matches!(
            q.enqueue(req(TriggerPurpose::CheckOut, t0() - Duration::minutes(1)), t0()),
            Err(NotifierError::PastDue { .. })
        ));
    }

    #[test]
    fn fires_signal_and_is_idempotent() {
        let mut q = TriggerQueue::new();
        q.enqueue(req(TriggerPurpose::SessionStart, t0() + Duration::minutes(5)), t0()).unwrap();
        let mut sink = Sink::default();
        let now = t0() + Duration::minutes(5);
        let out = run(&mut q, now, &gate(0.8, 0.9), &mut sink);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].decision, TriggerDecision::fire(TriggerType::Signal));
        assert!(out[0].message.contains(ATTRIBUTION_TOKEN));
        assert!(out[0].message.contains("Web Programming"));
        assert!(run(&mut q, now, &gate(0.8, 0.9), &mut sink).is_empty());
        assert_eq!(sink.got.len(), 1);
    }

    #[test]
    fn defer_then_drop() {
        let mut q = TriggerQueue::new();
        let due = t0() + Duration::minutes(5);
        q.enqueue(req(TriggerPurpose::ReadingList, due), t0()).unwrap();
        let mut sink = Sink::default();
        let low = gate(0.2, 0.2);
        assert!(run(&mut q, due, &low, &mut sink).is_empty());
        assert_eq!(q.next_due(), Some(due + Duration::hours(24)));
        assert_eq!(q.audit()[0].outcome, AuditOutcome::Deferred);
        assert!(run(&mut q, due + Duration::hours(24), &low, &mut sink).is_empty());
        assert_eq!(q.pending_len(), 0);
        assert_eq!(q.audit()[1].outcome, AuditOutcome::Dropped);
        assert!(sink.got.is_empty());
    }

    #[test]
    fn quadrant_picks_template() {
        let mut q = TriggerQueue::new();
        let due = t0() + Duration::minutes(5);
        q.enqueue(req(TriggerPurpose::SessionStart, due).with("session_id", "sess-9"), t0()).unwrap();
        let mut sink = Sink::default();
        let out = run(&mut q, due, &gate(0.9, 0.1), &mut sink);
        assert_eq!(out[0].trigger_type(), TriggerType::Facilitator);
        assert!(out[0].message.contains("[[checkin:sess-9]]"));
    }

    #[test]
    fn internal_source_skips_alternate_signal_reminders() {
        let mut q = TriggerQueue::new();
        for i in 1..=4 {
            q.enqueue(req(TriggerPurpose::SessionStart, t0() + Duration::days(i)), t0()).unwrap();
        }
        let g = FixedGate(GateInput { motivation: 0.9, ability: 0.9, source: TriggerSource::Internal });
        let mut sink = Sink::default();
        run(&mut q, t0() + Duration::days(5), &g, &mut sink);
        assert_eq!(sink.got.len(), 2);
        assert_eq!(q.audit().iter().filter(|a| a.outcome == AuditOutcome::SkippedInternal).count(), 2);
    }

    #[test]
    fn channel_failures_retry_then_dead_letter() {
        let mut q = TriggerQueue::new();
        let due = t0() + Duration::minutes(1);
        q.enqueue(req(TriggerPurpose::CheckOut, due), t0()).unwrap();
        let g = gate(0.9, 0.9);
        let mut sink = Sink { fail_times: 1, ..Default::default() };
        assert!(run(&mut q, due, &g, &mut sink).is_empty());
        assert_eq!(q.next_due(), Some(due + Duration::minutes(1)));
        assert_eq!(run(&mut q, due + Duration::minutes(1), &g, &mut sink).len(), 1);

        let mut q = TriggerQueue::new();
        q.enqueue(req(TriggerPurpose::CheckOut, due), t0()).unwrap();
        let mut sink = Sink { fail_times: 10, ..Default::default() };
        let mut now = due;
        for _ in 0..3 {
            run(&mut q, now, &g, &mut sink);
            now += Duration::hours(1);
        }
        assert_eq!(q.dead_letter().len(), 1);
        assert_eq!(q.pending_len(), 0);
        assert!(q.deliveries().is_empty());
    }

    #[test]
    fn gate_disabled_always_fires() {
        let mut q = TriggerQueue::new();
        let due = t0() + Duration::minutes(1);
        q.enqueue(req(TriggerPurpose::CheckOut, due), t0()).unwrap();
        let params = NotifierParams { gate_enabled: false, ..Default::default() };
        let mut sink = Sink::default();
        let out = q.dispatch_due(due, &FbmParams::default(), &params, &TemplateCatalog::default(), &gate(0.0, 0.0), &mut sink);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn catalog_lint() {
        let catalog = TemplateCatalog::default();
        for t in &catalog.templates {
            assert!(forbidden_words_in(&t.text).is_empty(), "{}", t.text);
        }
        let mut bad = catalog.clone();
        bad.templates[0].text = "You missed your session.".into();
        assert!(bad.validate().is_err());
        let mut incomplete = catalog;
        incomplete.templates.pop();
        assert!(incomplete.validate().is_err());
    }

    #[test]
    fn every_rendering_is_attributed() {
        let catalog = TemplateCatalog::default();
        for purpose in TriggerPurpose::ALL {
            for tt in [TriggerType::Signal, TriggerType::Spark, TriggerType::Facilitator] {
                let msg = catalog.render(&req(purpose, t0()), tt);
                assert!(msg.ends_with(&format!("{}, {}", catalog.instructor, ATTRIBUTION_TOKEN)));
                assert!(!msg.contains('{'));
            }
        }
    }

    #[test]
    fn fill_placeholders() {
        let vars = BTreeMap::from([("a".to_string(), "x".to_string())]);
        assert_eq!(fill("{a}-{b}-{", &vars), "x--{");
    }

    #[test]
    fn webhook_payload_shape() {
        let mut q = TriggerQueue::new();
        let due = t0() + Duration::minutes(1);
        q.enqueue(req(TriggerPurpose::CheckOut, due), t0()).unwrap();
        let mut sink = Sink::default();
        let d = &run(&mut q, due, &gate(0.9, 0.9), &mut sink)[0];
        let v = serde_json::to_value(d.webhook_payload()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["delivered_at", "message", "purpose", "student_id", "trigger_type"]);
    }
}
