//! The study-habit engine: one in-memory document store holding every student's state,
//! driven by explicit timestamps so the same calls replay identically.
//!
//! Callers serialize access; every mutating method takes `&mut self`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use chrono::Duration;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig, SCHEMA_VERSION};
use crate::domain::{
    parse_tz, ClassId, DomainError, HabitCategory, SessionId, StudentId, TimeBlock, Timestamp, WakingWindow,
    WeekTag, WeekTimetable,
};
use crate::fbm::{AbilityEstimator, HalvingCompletionRate, MotivationEstimator, StreakAbility, TriggerDecision, TriggerType};
use crate::group::{
    pair_for_explanation, should_invite_friends, suggest_helpers, ClassSnapshot, Endorsement, GroupBook, GroupError,
    GroupRating, HelperOutcome, PairView, Pairing, StudyGroup, StudyPair,
};
use crate::hook::{
    draw_reward, CycleLogEntry, HookBook, HookCycle, HookError, HookEvent, HookPhase, RewardInstance, RewardKind,
    TriggerSource,
};
use crate::notifier::{
    fill, AuditOutcome, Channel, ChannelError, Delivery, DeliverySink, Enqueued, GateContext, GateInput,
    NotifierError, TemplateCatalog, TriggerPurpose, TriggerQueue, TriggerRequest, WebhookPayload,
};
use crate::performance::{
    rank_habit_targets, score_all, select_target_category, CategoryProgress, LikertResponseSet, ModelCatalog,
    ModelError, ModelKind, PerformanceScores, TargetGain,
};
use crate::preparation::{
    generate_checklist, schedule_post_class_prompt, schedule_pre_class_reminder, tick as tick_item, Checklist,
    MaterialsManifest, PrepError, SummaryNote, TickOutcome,
};
use crate::scheduler::{
    adapt_session_count, adherence_report, propose_relocation, suggest_place, suggest_sessions, AdherenceReport,
    Place, PlaceCatalog, Preference, SessionError, SessionState, SlotSuggestion, StudySession, SuggestRequest,
    SuggestionOutcome,
};
use crate::ttm::{IngestReport, TestAttempt, TtmError, TtmStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("{entity} {id} not found")]
    NotFound { entity: &'static str, id: String },
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Validation(String),
    #[error("wizard step out of order: {0}")]
    WizardOrder(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    Precondition(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotFound { .. } => "not_found",
            Self::Conflict(_) => "conflict",
            Self::Validation(_) => "validation",
            Self::WizardOrder(_) => "wizard_order",
            Self::Forbidden(_) => "forbidden",
            Self::Precondition(_) => "precondition",
        }
    }

    fn not_found(entity: &'static str, id: impl ToString) -> Self {
        Self::NotFound { entity, id: id.to_string() }
    }
}

impl From<DomainError> for EngineError {
    fn from(e: DomainError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<SessionError> for EngineError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::RatingOutOfRange { .. } => Self::Validation(e.to_string()),
            _ => Self::Conflict(e.to_string()),
        }
    }
}

impl From<PrepError> for EngineError {
    fn from(e: PrepError) -> Self {
        match e {
            PrepError::UnknownItem(id) => Self::not_found("checklist item", id),
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<GroupError> for EngineError {
    fn from(e: GroupError) -> Self {
        match e {
            GroupError::UnknownGroup(id) => Self::not_found("study group", id),
            GroupError::NotMember { .. } => Self::Forbidden(e.to_string()),
            GroupError::NoQualifyingRating(_) | GroupError::NoScore(_) | GroupError::NoPairing(_) => {
                Self::Precondition(e.to_string())
            }
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<ConfigError> for EngineError {
    fn from(e: ConfigError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<TtmError> for EngineError {
    fn from(e: TtmError) -> Self {
        Self::Precondition(e.to_string())
    }
}

pub type EngineResult<T> = Result<T, EngineError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WizardProgress {
    pub timetable_set: bool,
    pub preference_set: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student_id: StudentId,
    pub display_name: String,
    pub timezone: String,
    pub classes: Vec<ClassId>,
    /// Whether classmates may see this student's free time and invite them.
    pub share_schedule: bool,
    pub responses: LikertResponseSet,
    pub preference: Option<Preference>,
    pub wizard: WizardProgress,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewStudent {
    pub student_id: StudentId,
    #[serde(default)]
    pub display_name: String,
    #[serde(default)]
    pub timezone: Option<String>,
    #[serde(default)]
    pub classes: Vec<ClassId>,
    #[serde(default)]
    pub share_schedule: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimetableInput {
    pub blocks: Vec<TimeBlock>,
    #[serde(default)]
    pub waking_windows: Option<[WakingWindow; 7]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedKind {
    Notification,
    Reward,
}

/// One entry of the in-app notification feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedItem {
    pub item_id: String,
    pub student_id: StudentId,
    pub kind: FeedKind,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<TriggerPurpose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_type: Option<TriggerType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_kind: Option<RewardKind>,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StudentState {
    timetable: Option<WeekTimetable>,
    study_blocks: Vec<TimeBlock>,
    rejected: Vec<TimeBlock>,
    rolled: BTreeSet<WeekTag>,
    last_place_week: Option<WeekTag>,
    invited_weeks: BTreeSet<WeekTag>,
    relocations: Vec<SlotSuggestion>,
}

/// Everything persisted in a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub schema_version: u32,
    pub config: EngineConfig,
    students: BTreeMap<StudentId, StudentRecord>,
    student_state: BTreeMap<StudentId, StudentState>,
    sessions: BTreeMap<SessionId, StudySession>,
    next_session: u64,
    hooks: HookBook,
    /// Cycle id to the session whose reminder opened it.
    cycle_sessions: BTreeMap<String, SessionId>,
    queue: TriggerQueue,
    feed: BTreeMap<StudentId, Vec<FeedItem>>,
    next_feed: u64,
    outbox: Vec<WebhookPayload>,
    manifests: BTreeMap<String, MaterialsManifest>,
    checklists: BTreeMap<String, Checklist>,
    notes: Vec<SummaryNote>,
    ttm: TtmStore,
    groups: GroupBook,
    pairs: Vec<StudyPair>,
    next_pairing: u64,
    rng_draws: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub deliveries: Vec<Delivery>,
    pub notified: Vec<SessionId>,
    pub missed: Vec<SessionId>,
    pub abandoned_cycles: Vec<String>,
    pub sessions_created: Vec<SessionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckoutResult {
    pub session: StudySession,
    pub reward: Option<RewardInstance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relocation: Option<SlotSuggestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<Place>,
    pub adherence: AdherenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: HabitCategory,
    pub completed_cycles: u32,
    pub streak: u32,
    pub trigger_source: TriggerSource,
    pub motivation: f64,
    pub ability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentMetrics {
    pub student_id: StudentId,
    pub adherence: AdherenceReport,
    pub sessions_scheduled: u32,
    pub categories: Vec<CategoryMetrics>,
    pub endorsements: u32,
    pub scores: PerformanceScores,
    pub relocation_suggestions: Vec<SlotSuggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceView {
    pub student_id: StudentId,
    pub scores: PerformanceScores,
    pub focus: HabitCategory,
    pub targets: BTreeMap<ModelKind, Vec<TargetGain>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentReport {
    pub student: StudentRecord,
    pub metrics: StudentMetrics,
    pub performance: PerformanceView,
    pub sessions: Vec<StudySession>,
    pub open_cycles: Vec<HookCycle>,
    pub feed_items: usize,
}

/// Student-facing view of a study group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupView {
    pub group: StudyGroup,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairView>,
}

/// Summary of a pairing batch; roles never leave the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingSummary {
    pub class_id: ClassId,
    pub topic: String,
    pub pairs: Vec<StudyPair>,
    pub unpaired: Vec<StudentId>,
    pub group_ids: Vec<String>,
}

/// Line of the append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventRecord {
    Cycle(CycleLogEntry),
    Delivery(Delivery),
}

struct Gate<'a> {
    hooks: &'a HookBook,
    config: &'a EngineConfig,
}

impl GateContext for Gate<'_> {
    fn gate_input(&self, student: &StudentId, category: HabitCategory) -> GateInput {
        let outcomes = self.hooks.outcomes(student, category);
        let motivation =
            HalvingCompletionRate { prior: self.config.fbm.motivation_prior, window: 10 }.estimate(&outcomes);
        let ability =
            StreakAbility { base: self.config.fbm.ability_base }.estimate(category, self.hooks.streak(student, category));
        let source = self.hooks.trigger_source(student, category, self.config.hook.internal_after);
        GateInput { motivation, ability, source }
    }
}

struct Sink<'a> {
    feed: &'a mut BTreeMap<StudentId, Vec<FeedItem>>,
    next_feed: &'a mut u64,
    outbox: &'a mut Vec<WebhookPayload>,
}

impl DeliverySink for Sink<'_> {
    fn deliver(&mut self, d: &Delivery) -> Result<(), ChannelError> {
        match d.channel {
            Channel::InAppFeed => {
                *self.next_feed += 1;
                self.feed.entry(d.request.student_id.clone()).or_default().push(FeedItem {
                    item_id: format!("fd-{:07}", self.next_feed),
                    student_id: d.request.student_id.clone(),
                    kind: FeedKind::Notification,
                    message: d.message.clone(),
                    purpose: Some(d.request.purpose),
                    trigger_type: d.decision.trigger_type(),
                    reward_kind: None,
                    created_at: d.delivered_at,
                });
            }
            Channel::WebhookStub => self.outbox.push(d.webhook_payload()),
        }
        Ok(())
    }
}

fn manifest_key(class: &ClassId, week: WeekTag) -> String {
    format!("{class}|{week}")
}

fn checklist_key(student: &StudentId, class: &ClassId, week: WeekTag) -> String {
    format!("{student}|{class}|{week}")
}

const DAY_NAMES: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

fn slot_label(block: &TimeBlock) -> String {
    format!("{} {:02}:{:02}", DAY_NAMES[block.day as usize], block.start_min / 60, block.start_min % 60)
}

pub struct Engine {
    state: EngineState,
    models: ModelCatalog,
    templates: TemplateCatalog,
    places: PlaceCatalog,
}

impl Engine {
    pub fn new(config: EngineConfig) -> EngineResult<Self> {
        Self::with_catalogs(config, TemplateCatalog::default(), PlaceCatalog::default())
    }

    pub fn with_catalogs(config: EngineConfig, templates: TemplateCatalog, places: PlaceCatalog) -> EngineResult<Self> {
        config.validate()?;
        templates.validate().map_err(|e| EngineError::Validation(e.to_string()))?;
        let hooks = HookBook::new(Duration::minutes(config.hook.ttl_minutes));
        Ok(Self {
            state: EngineState {
                schema_version: SCHEMA_VERSION,
                config,
                students: BTreeMap::new(),
                student_state: BTreeMap::new(),
                sessions: BTreeMap::new(),
                next_session: 0,
                hooks,
                cycle_sessions: BTreeMap::new(),
                queue: TriggerQueue::new(),
                feed: BTreeMap::new(),
                next_feed: 0,
                outbox: Vec::new(),
                manifests: BTreeMap::new(),
                checklists: BTreeMap::new(),
                notes: Vec::new(),
                ttm: TtmStore::new(),
                groups: GroupBook::new(),
                pairs: Vec::new(),
                next_pairing: 0,
                rng_draws: 0,
            },
            models: ModelCatalog::builtin(),
            templates,
            places,
        })
    }

    pub fn from_state(state: EngineState) -> EngineResult<Self> {
        if state.schema_version != SCHEMA_VERSION {
            return Err(EngineError::Validation(format!("unsupported snapshot schema_version {}", state.schema_version)));
        }
        state.config.validate()?;
        Ok(Self { state, models: ModelCatalog::builtin(), templates: TemplateCatalog::default(), places: PlaceCatalog::default() })
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.state.config
    }

    pub fn models(&self) -> &ModelCatalog {
        &self.models
    }

    fn rng(&mut self) -> ChaCha8Rng {
        self.state.rng_draws += 1;
        ChaCha8Rng::seed_from_u64(self.state.config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ self.state.rng_draws)
    }

    // ---- students -------------------------------------------------------------------

    pub fn create_student(&mut self, new: NewStudent, now: Timestamp) -> EngineResult<StudentRecord> {
        if self.state.students.contains_key(&new.student_id) {
            return Err(EngineError::Conflict(format!("student {} already exists", new.student_id)));
        }
        let timezone = new.timezone.unwrap_or_else(|| self.state.config.default_timezone.clone());
        parse_tz(&timezone)?;
        let mut classes = new.classes;
        classes.sort();
        classes.dedup();
        let record = StudentRecord {
            display_name: if new.display_name.is_empty() { new.student_id.to_string() } else { new.display_name },
            student_id: new.student_id.clone(),
            timezone,
            classes,
            share_schedule: new.share_schedule,
            responses: LikertResponseSet::new(),
            preference: None,
            wizard: WizardProgress::default(),
            created_at: now,
        };
        self.state.students.insert(new.student_id.clone(), record.clone());
        self.state.student_state.insert(new.student_id, StudentState::default());
        Ok(record)
    }

    pub fn student(&self, id: &StudentId) -> EngineResult<&StudentRecord> {
        self.state.students.get(id).ok_or_else(|| EngineError::not_found("student", id))
    }

    pub fn students(&self) -> impl Iterator<Item = &StudentRecord> {
        self.state.students.values()
    }

    fn student_mut(&mut self, id: &StudentId) -> EngineResult<&mut StudentRecord> {
        self.state.students.get_mut(id).ok_or_else(|| EngineError::not_found("student", id))
    }

    fn sstate(&self, id: &StudentId) -> &StudentState {
        self.state.student_state.get(id).expect("state exists for every student")
    }

    fn sstate_mut(&mut self, id: &StudentId) -> &mut StudentState {
        self.state.student_state.get_mut(id).expect("state exists for every student")
    }

    pub fn set_share_schedule(&mut self, id: &StudentId, share: bool) -> EngineResult<()> {
        self.student_mut(id)?.share_schedule = share;
        Ok(())
    }

    pub fn timetable(&self, id: &StudentId) -> EngineResult<Option<&WeekTimetable>> {
        self.student(id)?;
        Ok(self.sstate(id).timetable.as_ref())
    }

    pub fn study_blocks(&self, id: &StudentId) -> EngineResult<&[TimeBlock]> {
        self.student(id)?;
        Ok(&self.sstate(id).study_blocks)
    }

    // ---- wizard -----------------------------------------------------------------------

    /// Wizard steps one and two: classes plus other commitments.
    pub fn set_timetable(&mut self, id: &StudentId, input: TimetableInput) -> EngineResult<WeekTimetable> {
        self.student(id)?;
        if input.blocks.iter().any(|b| !b.is_commitment()) {
            return Err(EngineError::Validation("timetable blocks must be commitments, not study sessions".into()));
        }
        let mut tt = WeekTimetable::new(id.clone(), input.blocks)?;
        if let Some(windows) = input.waking_windows {
            tt = tt.with_windows(windows)?;
        }
        let classes: BTreeSet<ClassId> = tt.blocks.iter().filter_map(|b| b.class_id.clone()).collect();
        let record = self.student_mut(id)?;
        let mut all: BTreeSet<ClassId> = record.classes.iter().cloned().collect();
        all.extend(classes);
        record.classes = all.into_iter().collect();
        record.wizard.timetable_set = true;
        let st = self.sstate_mut(id);
        st.study_blocks.retain(|s| !tt.blocks.iter().any(|b| b.overlaps(s)));
        st.timetable = Some(tt.clone());
        Ok(tt)
    }

    /// Wizard step three.
    pub fn set_preference(&mut self, id: &StudentId, preference: Preference) -> EngineResult<()> {
        let record = self.student_mut(id)?;
        if !record.wizard.timetable_set {
            return Err(EngineError::WizardOrder("enter the timetable before choosing a preference".into()));
        }
        record.preference = Some(preference);
        record.wizard.preference_set = true;
        Ok(())
    }

    fn wizard_ready(&self, id: &StudentId) -> EngineResult<(WeekTimetable, Preference)> {
        let record = self.student(id)?;
        if !record.wizard.timetable_set {
            return Err(EngineError::WizardOrder("timetable has not been entered".into()));
        }
        let Some(preference) = record.preference.filter(|_| record.wizard.preference_set) else {
            return Err(EngineError::WizardOrder("early/late preference has not been chosen".into()));
        };
        Ok((self.sstate(id).timetable.clone().expect("timetable_set implies timetable"), preference))
    }

    /// Classes still owed a weekly session: one each to begin with, plus one more for
    /// classes whose test results sit below the adaptation threshold.
    fn classes_needing_sessions(&self, id: &StudentId) -> Vec<ClassId> {
        let record = &self.state.students[id];
        let st = self.sstate(id);
        let p = &self.state.config.scheduler;
        let mut out = Vec::new();
        for class in &record.classes {
            let held = st.study_blocks.iter().filter(|b| b.class_id.as_ref() == Some(class)).count() as u32;
            if held == 0 {
                out.push(class.clone());
                continue;
            }
            let mean = self.student_class_mean(id, class);
            if let Some(mean) = mean {
                if adapt_session_count(mean, held, p.adapt_threshold, p.max_sessions_per_class) > 0 {
                    out.push(class.clone());
                }
            }
        }
        out
    }

    fn student_class_mean(&self, id: &StudentId, class: &ClassId) -> Option<f64> {
        let scores: Vec<f64> =
            self.state.ttm.topics(class).iter().filter_map(|t| self.state.ttm.topic_score(id, class, t).ok()).collect();
        (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// Wizard step four.
    pub fn suggestions(&self, id: &StudentId) -> EngineResult<Vec<SuggestionOutcome>> {
        let (tt, preference) = self.wizard_ready(id)?;
        let st = self.sstate(id);
        let classes = self.classes_needing_sessions(id);
        let request = SuggestRequest { classes: &classes, preference, reserved: &st.study_blocks, rejected: &st.rejected };
        Ok(suggest_sessions(&tt, request, &self.state.config.scheduler))
    }

    pub fn reject_suggestion(&mut self, id: &StudentId, block: TimeBlock) -> EngineResult<Vec<SuggestionOutcome>> {
        self.wizard_ready(id)?;
        if block.class_id.is_none() {
            return Err(EngineError::Validation("rejected block must name its class".into()));
        }
        let st = self.sstate_mut(id);
        if !st.rejected.contains(&block) {
            st.rejected.push(block);
        }
        self.suggestions(id)
    }

    /// Commits the student to a weekly study block.
    pub fn accept_session(&mut self, id: &StudentId, block: TimeBlock, now: Timestamp) -> EngineResult<TimeBlock> {
        let (tt, _) = self.wizard_ready(id)?;
        let block = TimeBlock::study(
            block.day,
            block.start_min,
            block.end_min,
            block.class_id.clone().ok_or_else(|| EngineError::Validation("study block must name its class".into()))?,
        )?;
        let class = block.class_id.clone().expect("set above");
        if !self.state.students[id].classes.contains(&class) {
            return Err(EngineError::Validation(format!("{id} is not enrolled in {class}")));
        }
        let window = tt.waking_windows[block.day as usize].interval();
        if !window.contains(&block.interval()) {
            return Err(EngineError::Validation("study block lies outside the waking window".into()));
        }
        if tt.blocks.iter().any(|b| b.overlaps(&block)) {
            return Err(EngineError::Conflict("study block overlaps a commitment".into()));
        }
        if self.sstate(id).study_blocks.iter().any(|b| b.overlaps(&block)) {
            return Err(EngineError::Conflict("study block overlaps another study session".into()));
        }
        let st = self.sstate_mut(id);
        st.study_blocks.push(block.clone());
        st.study_blocks.sort_by_key(|b| (b.day, b.start_min));
        st.relocations.retain(|r| r.class_id != class);
        let weeks: Vec<WeekTag> = st.rolled.iter().copied().collect();
        for week in weeks {
            self.materialize(id, &block, week, now);
        }
        Ok(block)
    }

    /// Drops a weekly study block; future sessions already created for it stay as they are.
    pub fn release_session(&mut self, id: &StudentId, block: &TimeBlock) -> EngineResult<()> {
        self.student(id)?;
        let st = self.sstate_mut(id);
        let before = st.study_blocks.len();
        st.study_blocks.retain(|b| !(b.day == block.day && b.start_min == block.start_min && b.class_id == block.class_id));
        if st.study_blocks.len() == before {
            return Err(EngineError::not_found("study block", slot_label(block)));
        }
        Ok(())
    }

    // ---- weekly roll --------------------------------------------------------------------

    fn enqueue(&mut self, request: TriggerRequest, now: Timestamp) {
        match self.state.queue.enqueue(request, now) {
            Ok(Enqueued::Accepted | Enqueued::Duplicate) => {}
            Err(NotifierError::PastDue { due_at, .. }) => {
                tracing::debug!(%due_at, "trigger already past due, not queued");
            }
            Err(e) => tracing::warn!(error = %e, "trigger rejected"),
        }
    }

    fn materialize(&mut self, id: &StudentId, block: &TimeBlock, week: WeekTag, now: Timestamp) -> Option<SessionId> {
        let tz = self.state.students[id].timezone.clone();
        let exists = self.state.sessions.values().any(|s| {
            &s.student_id == id && s.week == week && s.block.day == block.day && s.block.start_min == block.start_min
        });
        if exists {
            return None;
        }
        self.state.next_session += 1;
        let sid = SessionId::new(format!("ses-{:06}", self.state.next_session)).expect("non-empty");
        let session = StudySession::new(sid.clone(), id.clone(), block.clone(), week, &tz).ok()?;
        if session.starts_at <= now {
            self.state.next_session -= 1;
            return None;
        }
        let p = &self.state.config.scheduler;
        let lead = Duration::minutes(p.reminder_lead_minutes as i64);
        let streak = self.state.hooks.streak(id, HabitCategory::Scheduling);
        let class = session.class_id.to_string();
        let start = TriggerRequest::new(id.clone(), TriggerPurpose::SessionStart, session.starts_at - lead)
            .with("class", class.clone())
            .with("time", slot_label(block))
            .with("session_id", sid.to_string())
            .with("streak", streak.to_string());
        let checkout = TriggerRequest::new(id.clone(), TriggerPurpose::CheckOut, session.ends_at)
            .with("class", class)
            .with("session_id", sid.to_string())
            .with("streak", streak.to_string());
        self.state.sessions.insert(sid.clone(), session);
        self.enqueue(start, now);
        self.enqueue(checkout, now);
        Some(sid)
    }

    fn roll_week(&mut self, id: &StudentId, week: WeekTag, now: Timestamp) -> Vec<SessionId> {
        if !self.sstate_mut(id).rolled.insert(week) {
            return Vec::new();
        }
        let blocks = self.sstate(id).study_blocks.clone();
        let created = blocks.iter().filter_map(|b| self.materialize(id, b, week, now)).collect();
        let Some(tt) = self.sstate(id).timetable.clone() else { return created };
        let tz = self.state.students[id].timezone.clone();
        let prep = self.state.config.preparation;
        let streak = self.state.hooks.streak(id, HabitCategory::Preparation).to_string();
        for meeting in tt.blocks.iter().filter(|b| b.class_id.is_some() && b.kind == crate::domain::BlockKind::Class) {
            let class = meeting.class_id.clone().expect("filtered");
            let cancelled = self.state.manifests.get(&manifest_key(&class, week)).is_some_and(|m| m.cancelled);
            let reminders = [
                schedule_pre_class_reminder(id, meeting, week, &tz, Duration::minutes(prep.pre_class_lead_minutes), cancelled),
                schedule_post_class_prompt(id, meeting, week, &tz, Duration::minutes(prep.post_class_delay_minutes), cancelled),
            ];
            for r in reminders.into_iter().flatten().flatten() {
                self.enqueue(r.with("streak", streak.clone()), now);
            }
        }
        created
    }

    fn ready_students(&self) -> Vec<StudentId> {
        self.state
            .students
            .values()
            .filter(|r| r.wizard.timetable_set && r.wizard.preference_set)
            .map(|r| r.student_id.clone())
            .collect()
    }

    /// Advances the engine to `now`: rolls weeks, opens check-in, marks missed sessions,
    /// expires stale cycles and dispatches due triggers.
    pub fn tick(&mut self, now: Timestamp) -> TickReport {
        let mut report = TickReport::default();
        for id in self.ready_students() {
            let tz = self.state.students[&id].timezone.clone();
            let week = WeekTag::containing(now, &tz).expect("timezone validated on creation");
            report.sessions_created.extend(self.roll_week(&id, week, now));
            let next = week.next();
            if now >= next.start(&tz).expect("valid tz") - Duration::days(1) {
                report.sessions_created.extend(self.roll_week(&id, next, now));
            }
        }

        let sp = self.state.config.scheduler;
        let lead = Duration::minutes(sp.reminder_lead_minutes as i64);
        let grace = Duration::minutes(sp.grace_minutes as i64);
        let mut missed = Vec::new();
        for s in self.state.sessions.values_mut() {
            if s.state == SessionState::Scheduled && now >= s.starts_at - lead && s.notify(now).is_ok() {
                report.notified.push(s.session_id.clone());
            }
            if matches!(s.state, SessionState::Scheduled | SessionState::Notified) && now > s.miss_deadline(grace) {
                s.mark_missed(now, grace).expect("deadline passed");
                missed.push((s.session_id.clone(), s.student_id.clone()));
            }
        }
        for (sid, student) in missed {
            let linked = self
                .state
                .hooks
                .open_cycle(&student, HabitCategory::Scheduling)
                .is_some_and(|c| self.state.cycle_sessions.get(&c.cycle_id) == Some(&sid));
            if linked {
                if let Some(cid) = self.state.hooks.abandon(&student, HabitCategory::Scheduling, now) {
                    report.abandoned_cycles.push(cid);
                }
            }
            let key = sid.to_string();
            self.state.queue.cancel_where(|r| {
                r.purpose == TriggerPurpose::CheckOut && r.payload.get("session_id") == Some(&key)
            });
            report.missed.push(sid);
        }
        report.abandoned_cycles.extend(self.state.hooks.expire_stale(now));

        let st = &mut self.state;
        let gate = Gate { hooks: &st.hooks, config: &st.config };
        let mut sink = Sink { feed: &mut st.feed, next_feed: &mut st.next_feed, outbox: &mut st.outbox };
        let deliveries =
            st.queue.dispatch_due(now, &st.config.fbm, &st.config.notifier, &self.templates, &gate, &mut sink);
        let primary = st.config.notifier.channels[0];
        for d in deliveries.iter().filter(|d| d.channel == primary) {
            self.on_delivery(d, now);
        }
        report.deliveries = deliveries;
        report
    }

    fn on_delivery(&mut self, d: &Delivery, now: Timestamp) {
        if d.request.purpose == TriggerPurpose::CheckOut {
            return;
        }
        let student = &d.request.student_id;
        let category = d.request.category;
        if self.state.hooks.open_cycle(student, category).is_some() {
            return;
        }
        let source = self.state.hooks.trigger_source(student, category, self.state.config.hook.internal_after);
        match self.state.hooks.open(student, category, d.decision, source, now) {
            Ok(cycle) => {
                let cid = cycle.cycle_id.clone();
                if let Some(sid) = d.request.payload.get("session_id").and_then(|s| SessionId::new(s.clone()).ok()) {
                    self.state.cycle_sessions.insert(cid, sid);
                }
            }
            Err(e) => tracing::warn!(error = %e, "could not open hook cycle"),
        }
    }

    /// Earliest instant after `now` at which [`Engine::tick`] has work to do.
    pub fn next_wakeup(&self, now: Timestamp) -> Option<Timestamp> {
        let sp = &self.state.config.scheduler;
        let lead = Duration::minutes(sp.reminder_lead_minutes as i64);
        let grace = Duration::minutes(sp.grace_minutes as i64);
        let mut best: Option<Timestamp> = None;
        let mut consider = |t: Timestamp| {
            if t > now && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        };
        if let Some(t) = self.state.queue.next_due() {
            consider(t.max(now + Duration::seconds(1)));
        }
        for s in self.state.sessions.values() {
            match s.state {
                SessionState::Scheduled => {
                    consider(s.starts_at - lead);
                    consider(s.miss_deadline(grace) + Duration::seconds(1));
                }
                SessionState::Notified => consider(s.miss_deadline(grace) + Duration::seconds(1)),
                _ => {}
            }
        }
        for id in self.ready_students() {
            let tz = &self.state.students[&id].timezone;
            let week = WeekTag::containing(now, tz).expect("valid tz");
            consider(week.next().start(tz).expect("valid tz") - Duration::days(1));
            consider(week.next().start(tz).expect("valid tz"));
        }
        let ttl = self.state.hooks.ttl();
        for c in self.state.hooks.open_cycles() {
            consider(c.last_progress() + ttl + Duration::seconds(1));
        }
        best
    }

    // ---- hook helpers -----------------------------------------------------------------

    fn ensure_cycle(&mut self, student: &StudentId, category: HabitCategory, now: Timestamp) -> bool {
        if self.state.hooks.open_cycle(student, category).is_some() {
            return true;
        }
        // Acting without a delivered trigger: the cue came from the student.
        let source = self.state.hooks.trigger_source(student, category, self.state.config.hook.internal_after);
        self.state.hooks.open(student, category, TriggerDecision::fire(TriggerType::Signal), source, now).is_ok()
    }

    fn phase(&self, student: &StudentId, category: HabitCategory) -> Option<HookPhase> {
        self.state.hooks.open_cycle(student, category).map(|c| c.phase)
    }

    fn advance(&mut self, student: &StudentId, category: HabitCategory, event: HookEvent, now: Timestamp) {
        if let Err(e) = self.state.hooks.advance(student, category, event, now) {
            if !matches!(e, HookError::Abandoned(_) | HookError::NoOpenCycle { .. }) {
                tracing::warn!(error = %e, "hook advance rejected");
            }
        }
    }

    fn hook_action(&mut self, student: &StudentId, category: HabitCategory, now: Timestamp) {
        if self.ensure_cycle(student, category, now) && self.phase(student, category) == Some(HookPhase::Triggered) {
            self.advance(student, category, HookEvent::ActionCompleted, now);
        }
    }

    fn hook_reward(&mut self, student: &StudentId, category: HabitCategory, reward: Option<RewardInstance>, now: Timestamp) {
        if self.phase(student, category) == Some(HookPhase::Acted) {
            self.advance(student, category, HookEvent::RewardDelivered { reward }, now);
        }
    }

    fn hook_invest(&mut self, student: &StudentId, category: HabitCategory, now: Timestamp) {
        if self.phase(student, category) == Some(HookPhase::Rewarded) {
            self.advance(student, category, HookEvent::InvestmentRecorded, now);
        }
    }

    fn variable_reward(&mut self, student: &StudentId, category: HabitCategory, now: Timestamp) -> Option<RewardInstance> {
        let mut rng = self.rng();
        let mut reward = draw_reward(&self.state.config.rewards, &mut rng, now).expect("catalog validated");
        if let Some(r) = reward.as_mut() {
            let streak = self.state.hooks.streak(student, category) + 1;
            r.payload = fill(&r.payload, &BTreeMap::from([("streak".to_string(), streak.to_string())]));
        }
        reward
    }

    fn push_reward(&mut self, student: &StudentId, reward: &RewardInstance) {
        self.state.next_feed += 1;
        let item = FeedItem {
            item_id: format!("fd-{:07}", self.state.next_feed),
            student_id: student.clone(),
            kind: FeedKind::Reward,
            message: reward.payload.clone(),
            purpose: None,
            trigger_type: None,
            reward_kind: Some(reward.kind),
            created_at: reward.delivered_at,
        };
        self.state.feed.entry(student.clone()).or_default().push(item);
    }

    // ---- sessions -----------------------------------------------------------------------

    pub fn session(&self, sid: &SessionId) -> EngineResult<&StudySession> {
        self.state.sessions.get(sid).ok_or_else(|| EngineError::not_found("session", sid))
    }

    pub fn sessions_of(&self, id: &StudentId) -> Vec<&StudySession> {
        self.state.sessions.values().filter(|s| &s.student_id == id).collect()
    }

    pub fn all_sessions(&self) -> impl Iterator<Item = &StudySession> {
        self.state.sessions.values()
    }

    pub fn check_in(&mut self, sid: &SessionId, now: Timestamp) -> EngineResult<StudySession> {
        let grace = Duration::minutes(self.state.config.scheduler.grace_minutes as i64);
        let lead = Duration::minutes(self.state.config.scheduler.reminder_lead_minutes as i64);
        let session = self.state.sessions.get_mut(sid).ok_or_else(|| EngineError::not_found("session", sid))?;
        if session.state == SessionState::Scheduled && now >= session.starts_at - lead.max(grace) {
            session.notify(now)?;
        }
        session.check_in(now, grace)?;
        Ok(session.clone())
    }

    pub fn check_out(&mut self, sid: &SessionId, effectiveness: u8, environment: u8, now: Timestamp) -> EngineResult<CheckoutResult> {
        for (name, v) in [("effectiveness", effectiveness), ("environment", environment)] {
            if !(1..=5).contains(&v) {
                return Err(EngineError::Validation(format!("{name} must be 1..=5, got {v}")));
            }
        }
        let session = self.state.sessions.get_mut(sid).ok_or_else(|| EngineError::not_found("session", sid))?;
        session.check_out(effectiveness, environment, now)?;
        let session = session.clone();
        let student = session.student_id.clone();
        let key = sid.to_string();
        self.state.queue.cancel_where(|r| r.purpose == TriggerPurpose::CheckOut && r.payload.get("session_id") == Some(&key));

        let cat = HabitCategory::Scheduling;
        self.hook_action(&student, cat, now);
        let reward = self.variable_reward(&student, cat, now);
        if let Some(r) = &reward {
            self.push_reward(&student, r);
        }
        self.hook_reward(&student, cat, reward.clone(), now);
        self.hook_invest(&student, cat, now);

        let (tt, preference) = self.wizard_ready(&student)?;
        let sp = self.state.config.scheduler;
        let mut history: Vec<StudySession> = self
            .sessions_of(&student)
            .into_iter()
            .filter(|s| s.class_id == session.class_id && s.block.day == session.block.day && s.block.start_min == session.block.start_min)
            .filter(|s| s.state == SessionState::CheckedOut)
            .cloned()
            .collect();
        history.sort_by_key(|s| s.starts_at);
        let relocation = propose_relocation(&history, &tt, preference, &sp, &self.sstate(&student).study_blocks);
        if let Some(r) = &relocation {
            let st = self.sstate_mut(&student);
            st.relocations.retain(|x| x.class_id != r.class_id);
            st.relocations.push(r.clone());
        }

        let mut env: Vec<(Timestamp, u8)> = self
            .sessions_of(&student)
            .iter()
            .filter_map(|s| Some((s.checked_out_at?, s.environment?)))
            .collect();
        env.sort();
        let env: Vec<u8> = env.into_iter().map(|(_, e)| e).collect();
        let week = session.week;
        let last = self.sstate(&student).last_place_week;
        let mut rng = self.rng();
        let place = suggest_place(&env, &self.places, &mut rng, last, week, &sp).cloned();
        if let Some(p) = &place {
            self.sstate_mut(&student).last_place_week = Some(week);
            let req = TriggerRequest::new(student.clone(), TriggerPurpose::PlaceSuggestion, now + Duration::minutes(1))
                .with("place", p.name.clone());
            self.enqueue(req, now);
        }

        let mine: Vec<StudySession> = self.sessions_of(&student).into_iter().cloned().collect();
        if !self.sstate(&student).invited_weeks.contains(&week) && should_invite_friends(&mine, week, &self.state.config.group) {
            self.sstate_mut(&student).invited_weeks.insert(week);
            let req = TriggerRequest::new(student.clone(), TriggerPurpose::InviteFriends, now + Duration::minutes(1))
                .with("class", session.class_id.to_string());
            self.enqueue(req, now);
        }

        let adherence = adherence_report(self.sessions_of(&student), &self.state.config.preparation.bands);
        Ok(CheckoutResult { session, reward, relocation, place, adherence })
    }

    // ---- preparation ------------------------------------------------------------------

    pub fn put_materials(&mut self, manifest: MaterialsManifest) -> EngineResult<()> {
        let key = manifest_key(&manifest.class_id, manifest.week);
        if manifest.cancelled {
            let (class, week) = (manifest.class_id.to_string(), manifest.week.to_string());
            self.state.queue.cancel_where(|r| {
                matches!(r.purpose, TriggerPurpose::ReadingList | TriggerPurpose::PostClassNotes)
                    && r.payload.get("class") == Some(&class)
                    && r.payload.get("week") == Some(&week)
            });
            let prefix = format!("|{class}|{week}");
            self.state.checklists.retain(|k, _| !k.ends_with(&prefix));
        }
        self.state.manifests.insert(key, manifest);
        Ok(())
    }

    pub fn materials(&self, class: &ClassId, week: WeekTag) -> Option<&MaterialsManifest> {
        self.state.manifests.get(&manifest_key(class, week))
    }

    fn ensure_checklist(&mut self, id: &StudentId, class: &ClassId, week: WeekTag) -> Option<String> {
        let key = checklist_key(id, class, week);
        if self.state.checklists.contains_key(&key) {
            return Some(key);
        }
        let meets = self.sstate(id).timetable.as_ref().is_some_and(|tt| !tt.meetings(class).is_empty());
        let manifest = self.state.manifests.get(&manifest_key(class, week));
        let checklist = generate_checklist(class, week, meets, manifest, &self.state.config.preparation.bands)?;
        self.state.checklists.insert(key.clone(), checklist);
        Some(key)
    }

    /// Checklists for every enrolled class meeting in `week`.
    pub fn checklists(&mut self, id: &StudentId, week: WeekTag) -> EngineResult<Vec<Checklist>> {
        let classes = self.student(id)?.classes.clone();
        let keys: Vec<String> = classes.iter().filter_map(|c| self.ensure_checklist(id, c, week)).collect();
        Ok(keys.iter().map(|k| self.state.checklists[k].clone()).collect())
    }

    pub fn tick_checklist_item(&mut self, id: &StudentId, item_id: &str, now: Timestamp) -> EngineResult<TickOutcome> {
        self.student(id)?;
        let mut parts = item_id.rsplitn(3, '.');
        let (_, week, class) = (parts.next(), parts.next(), parts.next());
        let (Some(week), Some(class)) = (week.and_then(|w| w.parse::<WeekTag>().ok()), class) else {
            return Err(EngineError::not_found("checklist item", item_id));
        };
        let class = ClassId::new(class).map_err(|_| EngineError::not_found("checklist item", item_id))?;
        let key = self.ensure_checklist(id, &class, week).ok_or_else(|| EngineError::not_found("checklist item", item_id))?;
        let bands = self.state.config.preparation.bands;
        let checklist = self.state.checklists.get_mut(&key).expect("ensured");
        let outcome = tick_item(checklist, item_id, now, &bands)?;
        if outcome.already_ticked {
            tracing::warn!(item_id, "checklist item ticked twice");
            return Ok(outcome);
        }
        let complete = checklist.is_complete();
        let cat = HabitCategory::Preparation;
        self.hook_action(id, cat, now);
        for r in &outcome.rewards {
            self.push_reward(id, r);
        }
        if let Some(r) = outcome.rewards.last() {
            self.hook_reward(id, cat, Some(r.clone()), now);
        }
        if complete {
            self.hook_invest(id, cat, now);
        }
        Ok(outcome)
    }

    /// Stores a post-class summary note; the note is the preparation cycle's investment.
    pub fn add_note(&mut self, id: &StudentId, class: ClassId, week: WeekTag, text: String, now: Timestamp) -> EngineResult<SummaryNote> {
        let record = self.student(id)?;
        if !record.classes.contains(&class) {
            return Err(EngineError::Validation(format!("{id} is not enrolled in {class}")));
        }
        let note = SummaryNote::new(id.clone(), class, week, text, now)?;
        self.state.notes.push(note.clone());
        let cat = HabitCategory::Preparation;
        self.hook_action(id, cat, now);
        if self.phase(id, cat) == Some(HookPhase::Acted) {
            let reward = self.variable_reward(id, cat, now);
            if let Some(r) = &reward {
                self.push_reward(id, r);
            }
            self.hook_reward(id, cat, reward, now);
        }
        self.hook_invest(id, cat, now);
        Ok(note)
    }

    pub fn notes_of(&self, id: &StudentId) -> Vec<&SummaryNote> {
        self.state.notes.iter().filter(|n| &n.student_id == id).collect()
    }

    // ---- group study --------------------------------------------------------------------

    fn class_snapshot(&self, class: &ClassId, topic: &str) -> ClassSnapshot {
        let scores = self.state.ttm.roster_scores(class, topic);
        let mut snap = ClassSnapshot { endorsements: self.state.groups.endorsement_counts(), ..Default::default() };
        for (id, score) in scores {
            let Some(record) = self.state.students.get(&id) else { continue };
            if !record.classes.contains(class) {
                continue;
            }
            if record.share_schedule {
                snap.opted_in.insert(id.clone());
            }
            if let Some(tt) = &self.sstate(&id).timetable {
                let mut tt = tt.clone();
                tt.blocks.extend(self.sstate(&id).study_blocks.iter().map(|b| {
                    TimeBlock::new(b.day, b.start_min, b.end_min, crate::domain::BlockKind::Other, None).expect("valid")
                }));
                snap.free.insert(id.clone(), crate::scheduler::free_intervals(&tt));
            }
            snap.scores.insert(id, score);
        }
        snap
    }

    /// Helper suggestions for each requested class. Without a topic, the requester's
    /// weakest topic with results is used.
    pub fn partner_suggestions(&self, id: &StudentId, class: Option<&ClassId>, topic: Option<&str>) -> EngineResult<Vec<(ClassId, String, HelperOutcome)>> {
        let record = self.student(id)?;
        let classes: Vec<ClassId> = match class {
            Some(c) if record.classes.contains(c) => vec![c.clone()],
            Some(c) => return Err(EngineError::Validation(format!("{id} is not enrolled in {c}"))),
            None => record.classes.clone(),
        };
        let mut out = Vec::new();
        for c in classes {
            let topic = match topic {
                Some(t) => Some(t.to_string()),
                None => self
                    .state
                    .ttm
                    .topics(&c)
                    .into_iter()
                    .filter_map(|t| self.state.ttm.topic_score(id, &c, &t).ok().map(|s| (s, t)))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .map(|(_, t)| t),
            };
            let Some(topic) = topic else { continue };
            let snap = self.class_snapshot(&c, &topic);
            if !snap.scores.contains_key(id) {
                continue;
            }
            out.push((c.clone(), topic.clone(), suggest_helpers(id, &snap, &self.state.config.group)?));
        }
        Ok(out)
    }

    pub fn create_group(&mut self, creator: &StudentId, class: ClassId, topic: String, members: Vec<StudentId>, now: Timestamp) -> EngineResult<StudyGroup> {
        if !self.student(creator)?.classes.contains(&class) {
            return Err(EngineError::Validation(format!("{creator} is not enrolled in {class}")));
        }
        for m in &members {
            let r = self.student(m)?;
            if !r.classes.contains(&class) {
                return Err(EngineError::Validation(format!("{m} is not enrolled in {class}")));
            }
            if m != creator && !r.share_schedule {
                return Err(EngineError::Forbidden(format!("{m} has not opted in to study invitations")));
            }
        }
        let mut all = members;
        all.push(creator.clone());
        let group = self.state.groups.create(class, topic, all, now)?.clone();
        self.hook_action(creator, HabitCategory::GroupStudy, now);
        Ok(group)
    }

    pub fn group_view(&self, group_id: &str, viewer: Option<&StudentId>) -> EngineResult<GroupView> {
        let group = self.state.groups.group(group_id).ok_or_else(|| EngineError::not_found("study group", group_id))?.clone();
        let pair = viewer.and_then(|v| {
            self.state
                .pairs
                .iter()
                .find(|p| p.class_id == group.class_id && p.topic == group.topic && p.members[..] == group.members[..])
                .and_then(|p| p.view_for(v))
        });
        Ok(GroupView { group, pair })
    }

    pub fn groups_of(&self, id: &StudentId) -> Vec<StudyGroup> {
        self.state.groups.groups().filter(|g| g.members.contains(id)).cloned().collect()
    }

    /// Stores the rater's ratings; rating is the group cycle's social investment.
    pub fn rate_group(&mut self, group_id: &str, rater: &StudentId, ratings: &BTreeMap<StudentId, u8>, now: Timestamp) -> EngineResult<Vec<GroupRating>> {
        self.student(rater)?;
        let stored = self.state.groups.rate(group_id, rater, ratings, now)?;
        let cat = HabitCategory::GroupStudy;
        self.hook_action(rater, cat, now);
        if self.phase(rater, cat) == Some(HookPhase::Acted) {
            let reward = self.variable_reward(rater, cat, now);
            if let Some(r) = &reward {
                self.push_reward(rater, r);
            }
            self.hook_reward(rater, cat, reward, now);
        }
        self.hook_invest(rater, cat, now);
        Ok(stored)
    }

    /// Endorses `to` as helpful; the endorsement reaches `to` as a reward.
    pub fn endorse(&mut self, group_id: &str, from: &StudentId, to: &StudentId, now: Timestamp) -> EngineResult<(Endorsement, bool)> {
        self.student(from)?;
        self.student(to)?;
        let params = self.state.config.group;
        let (e, created) = self.state.groups.endorse(group_id, from, to, now, &params)?;
        if created {
            let reward = RewardInstance {
                kind: RewardKind::Endorsement,
                payload: format!("{} endorsed you as helpful!", self.state.students[from].display_name),
                delivered_at: now,
            };
            self.push_reward(to, &reward);
            self.hook_reward(to, HabitCategory::GroupStudy, Some(reward), now);
        }
        Ok((e, created))
    }

    pub fn endorsements_for(&self, id: &StudentId) -> Vec<Endorsement> {
        self.state.groups.endorsements_for(id).cloned().collect()
    }

    /// Pairs the class roster for peer explanation and prompts every paired student.
    pub fn pair(&mut self, class: &ClassId, topic: &str, now: Timestamp) -> EngineResult<PairingSummary> {
        let roster: BTreeMap<StudentId, f64> = self
            .state
            .ttm
            .roster_scores(class, topic)
            .into_iter()
            .filter(|(id, _)| self.state.students.get(id).is_some_and(|r| r.classes.contains(class)))
            .collect();
        self.state.next_pairing += 1;
        let prefix = format!("pair-{:05}", self.state.next_pairing);
        let Pairing { pairs, unpaired, .. } = pair_for_explanation(class, topic, &roster, &prefix)?;
        let mut group_ids = Vec::new();
        for pair in &pairs {
            let group = self.state.groups.create(class.clone(), topic, pair.members.to_vec(), now)?.clone();
            group_ids.push(group.group_id.clone());
            for member in &pair.members {
                let req = TriggerRequest::new(member.clone(), TriggerPurpose::PairPrompt, now + Duration::minutes(1))
                    .with("class", class.to_string())
                    .with("topic", topic)
                    .with("group_id", group.group_id.clone());
                self.enqueue(req, now);
            }
        }
        self.state.pairs.extend(pairs.iter().cloned());
        Ok(PairingSummary { class_id: class.clone(), topic: topic.to_string(), pairs, unpaired, group_ids })
    }

    pub fn pairs_of(&self, id: &StudentId) -> Vec<PairView> {
        self.state.pairs.iter().filter_map(|p| p.view_for(id)).collect()
    }

    // ---- feed, ttm, performance -------------------------------------------------------------

    pub fn feed(&self, id: &StudentId) -> EngineResult<&[FeedItem]> {
        self.student(id)?;
        Ok(self.state.feed.get(id).map(Vec::as_slice).unwrap_or(&[]))
    }

    pub fn outbox(&self) -> &[WebhookPayload] {
        &self.state.outbox
    }

    pub fn queue(&self) -> &TriggerQueue {
        &self.state.queue
    }

    pub fn hooks(&self) -> &HookBook {
        &self.state.hooks
    }

    pub fn ingest_ttm(&mut self, batch: Vec<TestAttempt>) -> IngestReport {
        self.state.ttm.ingest(batch)
    }

    pub fn ingest_ttm_jsonl(&mut self, text: &str) -> IngestReport {
        self.state.ttm.ingest_jsonl(text)
    }

    pub fn ttm(&self) -> &TtmStore {
        &self.state.ttm
    }

    pub fn set_responses(&mut self, id: &StudentId, responses: LikertResponseSet) -> EngineResult<LikertResponseSet> {
        responses.validate()?;
        let known: BTreeSet<&str> = self.models.items().map(|i| i.item_id.as_str()).collect();
        if let Some((unknown, _)) = responses.iter().find(|(k, _)| !known.contains(k)) {
            return Err(EngineError::Validation(format!("unknown item {unknown}")));
        }
        let record = self.student_mut(id)?;
        record.responses.merge(&responses);
        Ok(record.responses.clone())
    }

    pub fn performance(&self, id: &StudentId) -> EngineResult<PerformanceView> {
        let record = self.student(id)?;
        let scores = score_all(&self.models, &record.responses);
        let progress = self.state.hooks.progress(id);
        let focus = select_target_category(&self.models, &record.responses, &progress, self.state.config.hook.scheduling_prerequisite);
        let targets = ModelKind::ALL
            .iter()
            .filter_map(|&k| rank_habit_targets(&record.responses, self.models.model(k)).ok().map(|t| (k, t)))
            .collect();
        Ok(PerformanceView { student_id: id.clone(), scores, focus, targets })
    }

    pub fn metrics(&self, id: &StudentId) -> EngineResult<StudentMetrics> {
        let record = self.student(id)?;
        let sessions = self.sessions_of(id);
        let gate = Gate { hooks: &self.state.hooks, config: &self.state.config };
        let progress: CategoryProgress = self.state.hooks.progress(id);
        let categories = HabitCategory::ALL
            .iter()
            .map(|&c| {
                let g = gate.gate_input(id, c);
                CategoryMetrics {
                    category: c,
                    completed_cycles: progress.get(c),
                    streak: self.state.hooks.streak(id, c),
                    trigger_source: g.source,
                    motivation: g.motivation,
                    ability: g.ability,
                }
            })
            .collect();
        Ok(StudentMetrics {
            student_id: id.clone(),
            adherence: adherence_report(sessions.iter().copied(), &self.state.config.preparation.bands),
            sessions_scheduled: sessions.len() as u32,
            categories,
            endorsements: self.state.groups.endorsements_for(id).count() as u32,
            scores: score_all(&self.models, &record.responses),
            relocation_suggestions: self.sstate(id).relocations.clone(),
        })
    }

    pub fn report(&self, id: &StudentId) -> EngineResult<StudentReport> {
        let student = self.student(id)?.clone();
        let mut sessions: Vec<StudySession> = self.sessions_of(id).into_iter().cloned().collect();
        sessions.sort_by_key(|s| s.starts_at);
        Ok(StudentReport {
            metrics: self.metrics(id)?,
            performance: self.performance(id)?,
            sessions,
            open_cycles: HabitCategory::ALL.iter().filter_map(|&c| self.state.hooks.open_cycle(id, c).cloned()).collect(),
            feed_items: self.feed(id)?.len(),
            student,
        })
    }

    /// Deferred triggers per student, from the dispatch audit trail.
    pub fn deferred_count(&self, id: &StudentId) -> usize {
        self.state.queue.audit().iter().filter(|a| &a.student_id == id && a.outcome == AuditOutcome::Deferred).count()
    }

    // ---- persistence --------------------------------------------------------------------

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(&self.state).expect("state serializes")
    }

    pub fn from_snapshot_json(json: &str) -> EngineResult<Self> {
        let state: EngineState = serde_json::from_str(json).map_err(|e| EngineError::Validation(format!("snapshot: {e}")))?;
        Self::from_state(state)
    }

    /// Every cycle event and delivery so far, oldest first within each stream.
    pub fn event_log(&self) -> Vec<EventRecord> {
        let mut out: Vec<EventRecord> = self.state.hooks.log().iter().cloned().map(EventRecord::Cycle).collect();
        out.extend(self.state.queue.deliveries().iter().cloned().map(EventRecord::Delivery));
        out
    }

    /// Writes the event log as one JSON document per line.
    pub fn write_event_log(&self, mut out: impl Write) -> std::io::Result<()> {
        for record in self.event_log() {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Replaces the snapshot at `path` atomically.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(self.snapshot_json().as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn load(path: &Path) -> EngineResult<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| EngineError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_snapshot_json(&json)
    }

    /// Events recorded after the first `cycles` cycle events and `deliveries` deliveries.
    pub fn events_since(&self, cycles: usize, deliveries: usize) -> Vec<EventRecord> {
        let log = self.state.hooks.log();
        let sent = self.state.queue.deliveries();
        let mut out: Vec<EventRecord> = log[cycles.min(log.len())..].iter().cloned().map(EventRecord::Cycle).collect();
        out.extend(sent[deliveries.min(sent.len())..].iter().cloned().map(EventRecord::Delivery));
        out
    }

    pub fn event_counts(&self) -> (usize, usize) {
        (self.state.hooks.log().len(), self.state.queue.deliveries().len())
    }
}
