//! Synthetic students driving the engine through its public API.
//!
//! Every behavioural draw comes from a stream keyed by (run seed, profile noise seed,
//! event instant, event kind), so two runs that differ only in a profile parameter see
//! the same random numbers at the same events.

use std::collections::BTreeMap;

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::domain::{ClassId, HabitCategory, SessionId, StudentId, TimeBlock, Timestamp, WeekTag};
use crate::engine::{Engine, EngineError, NewStudent, TimetableInput};
use crate::hook::TriggerSource;
use crate::notifier::{AuditOutcome, Delivery, TriggerPurpose};
use crate::preparation::{Material, MaterialKind, MaterialsManifest};
use crate::scheduler::{Preference, SessionState};
use crate::ttm::mock_attempts;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("weeks must be at least 1")]
    NoWeeks,
    #[error("profile {index}: {reason}")]
    BadProfile { index: usize, reason: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentProfile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_id: Option<StudentId>,
    pub motivation_base: f64,
    pub ability_base: f64,
    /// Logistic slope; the configured default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responsiveness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
}

impl StudentProfile {
    pub fn new(motivation_base: f64, ability_base: f64) -> Self {
        Self { student_id: None, motivation_base, ability_base, responsiveness: None, noise_seed: None }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.motivation_base) || !(0.0..=1.0).contains(&self.ability_base) {
            return Err("motivation_base and ability_base must lie in [0, 1]".into());
        }
        if self.responsiveness.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
            return Err("responsiveness must be positive".into());
        }
        Ok(())
    }
}

/// Logistic act probability `1 / (1 + exp(-beta * (m * a - tau)))`.
pub fn act_probability(motivation: f64, ability: f64, tau: f64, beta: f64) -> f64 {
    1.0 / (1.0 + (-beta * (motivation * ability - tau)).exp())
}

/// Whether the student acts on a cue, with motivation and ability jittered by `noise`.
pub fn respond_to_cue(profile: &StudentProfile, tau: f64, beta: f64, noise: f64, rng: &mut impl Rng) -> bool {
    let jitter = |rng: &mut dyn rand::RngCore| if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
    let m = (profile.motivation_base + jitter(rng)).clamp(0.0, 1.0);
    let a = (profile.ability_base + jitter(rng)).clamp(0.0, 1.0);
    let beta = profile.responsiveness.unwrap_or(beta);
    rng.random::<f64>() < act_probability(m, a, tau, beta)
}

/// Whether the student acts on a delivered trigger.
pub fn respond(profile: &StudentProfile, delivery: &Delivery, tau: f64, beta: f64, noise: f64, rng: &mut impl Rng) -> bool {
    debug_assert!(delivery.decision.is_fire());
    respond_to_cue(profile, tau, beta, noise, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub student_id: StudentId,
    pub motivation_base: f64,
    pub ability_base: f64,
    pub weeks: u32,
    pub cycles_completed: BTreeMap<HabitCategory, u32>,
    pub scheduled: u32,
    pub checked_out: u32,
    pub missed: u32,
    pub still_open: u32,
    /// Checked-out share of resolved sessions; zero before any resolve.
    pub adherence_rate: f64,
    pub triggers_delivered: u32,
    pub triggers_deferred: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub weeks: u32,
    pub gate_enabled: bool,
    pub students: Vec<SimMetrics>,
}

impl SimReport {
    pub fn mean_adherence(&self) -> f64 {
        if self.students.is_empty() {
            return 0.0;
        }
        self.students.iter().map(|s| s.adherence_rate).sum::<f64>() / self.students.len() as f64
    }

    pub fn total_deferred(&self) -> u32 {
        self.students.iter().map(|s| s.triggers_deferred).sum()
    }
}

/// Deterministic grid of profiles covering the motivation and ability range.
pub fn default_profiles(n: usize, seed: u64) -> Vec<StudentProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D);
    (0..n)
        .map(|i| StudentProfile {
            student_id: None,
            motivation_base: (rng.random_range(0.1..0.95f64) * 100.0).round() / 100.0,
            ability_base: (rng.random_range(0.3..0.95f64) * 100.0).round() / 100.0,
            responsiveness: None,
            noise_seed: Some(i as u64),
        })
        .collect()
}

const CLASSES: [(&str, [(u8, u16, u16); 2]); 3] = [
    ("cs101", [(0, 9 * 60, 10 * 60 + 30), (2, 9 * 60, 10 * 60 + 30)]),
    ("ma201", [(1, 11 * 60, 12 * 60 + 30), (3, 11 * 60, 12 * 60 + 30)]),
    ("ph110", [(4, 14 * 60, 16 * 60), (0, 13 * 60, 14 * 60)]),
];

/// Sunday noon before the first simulated week.
pub fn semester_start() -> Timestamp {
    Utc.with_ymd_and_hms(2026, 1, 4, 12, 0, 0).unwrap()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn event_rng(seed: u64, noise_seed: u64, at: Timestamp, kind: u64) -> ChaCha8Rng {
    let key = splitmix(seed) ^ splitmix(noise_seed.wrapping_add(0x1000)) ^ splitmix(at.timestamp() as u64 ^ (kind << 56));
    ChaCha8Rng::seed_from_u64(splitmix(key))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    CheckIn(SessionId),
    CheckOut(SessionId),
    TickChecklist { student: usize, class: ClassId, week: WeekTag },
    Note { student: usize, class: ClassId, week: WeekTag },
    RateGroup { student: usize, group_id: String },
    Pair { week_no: u32 },
}

struct Run<'a> {
    engine: Engine,
    profiles: &'a [StudentProfile],
    ids: Vec<StudentId>,
    index: BTreeMap<StudentId, usize>,
    seed: u64,
    agenda: BTreeMap<Timestamp, Vec<Action>>,
}

impl Run<'_> {
    fn cue(&self, student: usize, at: Timestamp, kind: u64) -> bool {
        let p = &self.profiles[student];
        let c = self.engine.config();
        let mut rng = event_rng(self.seed, p.noise_seed.unwrap_or(student as u64), at, kind);
        respond_to_cue(p, c.fbm.tau, c.sim.beta, c.sim.noise, &mut rng)
    }

    fn rating(&self, student: usize, at: Timestamp, kind: u64, base: f64) -> u8 {
        let p = &self.profiles[student];
        let mut rng = event_rng(self.seed, p.noise_seed.unwrap_or(student as u64), at, kind);
        (1.0 + 4.0 * base + rng.random_range(-0.5..0.5)).round().clamp(1.0, 5.0) as u8
    }

    fn plan(&mut self, at: Timestamp, action: Action) {
        self.agenda.entry(at).or_default().push(action);
    }

    fn on_notified(&mut self, sid: &SessionId, deliveries: &[Delivery], internal_after: u32) {
        let session = self.engine.session(sid).expect("notified session exists").clone();
        let student = self.index[&session.student_id];
        let key = sid.to_string();
        let cued = deliveries.iter().any(|d| {
            d.request.purpose == TriggerPurpose::SessionStart && d.request.payload.get("session_id") == Some(&key)
        });
        let internal = self.engine.hooks().trigger_source(&session.student_id, HabitCategory::Scheduling, internal_after)
            == TriggerSource::Internal;
        // Without a trigger there is no behaviour unless the cue is already internal.
        if !(cued || internal) || !self.cue(student, session.starts_at, 1) {
            return;
        }
        let mut rng = event_rng(self.seed, student as u64, session.starts_at, 2);
        let offset = Duration::minutes(rng.random_range(0..=5));
        self.plan(session.starts_at + offset, Action::CheckIn(sid.clone()));
        self.plan(session.ends_at, Action::CheckOut(sid.clone()));
    }

    fn on_delivery(&mut self, d: &Delivery, now: Timestamp) {
        let Some(&student) = self.index.get(&d.request.student_id) else { return };
        let payload = &d.request.payload;
        let class_week = || {
            Some((ClassId::new(payload.get("class")?.clone()).ok()?, payload.get("week")?.parse::<WeekTag>().ok()?))
        };
        match d.request.purpose {
            TriggerPurpose::ReadingList => {
                if let Some((class, week)) = class_week() {
                    if self.cue(student, now, 3) {
                        self.plan(now + Duration::hours(2), Action::TickChecklist { student, class, week });
                    }
                }
            }
            TriggerPurpose::PostClassNotes => {
                if let Some((class, week)) = class_week() {
                    if self.cue(student, now, 4) {
                        self.plan(now + Duration::minutes(30), Action::Note { student, class, week });
                    }
                }
            }
            TriggerPurpose::PairPrompt => {
                if let Some(group_id) = payload.get("group_id") {
                    if self.cue(student, now, 5) {
                        self.plan(now + Duration::days(1), Action::RateGroup { student, group_id: group_id.clone() });
                    }
                }
            }
            _ => {}
        }
    }

    fn act(&mut self, at: Timestamp, action: Action) -> Result<(), EngineError> {
        match action {
            Action::CheckIn(sid) => {
                if self.engine.session(&sid)?.state == SessionState::Notified {
                    self.engine.check_in(&sid, at)?;
                }
            }
            Action::CheckOut(sid) => {
                let session = self.engine.session(&sid)?.clone();
                if session.state == SessionState::CheckedIn {
                    let s = self.index[&session.student_id];
                    let p = &self.profiles[s];
                    let eff = self.rating(s, at, 6, p.motivation_base);
                    let env = self.rating(s, at, 7, p.ability_base);
                    self.engine.check_out(&sid, eff, env, at)?;
                }
            }
            Action::TickChecklist { student, class, week } => {
                let id = self.ids[student].clone();
                let lists = self.engine.checklists(&id, week)?;
                for item in lists.iter().filter(|c| c.class_id == class).flat_map(|c| &c.items) {
                    if item.required && item.ticked_at.is_none() {
                        self.engine.tick_checklist_item(&id, &item.item_id, at)?;
                    }
                }
            }
            Action::Note { student, class, week } => {
                let text = format!("Key ideas from {class} this week.");
                self.engine.add_note(&self.ids[student].clone(), class, week, text, at)?;
            }
            Action::RateGroup { student, group_id } => {
                let id = self.ids[student].clone();
                let group = self.engine.group_view(&group_id, Some(&id))?.group;
                let rating = self.rating(student, at, 8, self.profiles[student].motivation_base);
                let ratings: BTreeMap<StudentId, u8> =
                    group.members.iter().filter(|m| **m != id).map(|m| (m.clone(), rating)).collect();
                self.engine.rate_group(&group_id, &id, &ratings, at)?;
                if rating >= self.engine.config().group.endorse_min_rating {
                    for partner in ratings.keys() {
                        self.engine.endorse(&group_id, &id, partner, at)?;
                    }
                }
            }
            Action::Pair { week_no } => {
                for (class, _) in CLASSES {
                    let topic = format!("unit-{week_no:02}");
                    match self.engine.pair(&ClassId::new(class).expect("non-empty"), &topic, at) {
                        Ok(_) | Err(EngineError::Precondition(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        Ok(())
    }
}

fn onboard(engine: &mut Engine, id: &StudentId, index: usize, now: Timestamp) -> Result<(), EngineError> {
    let enrolled = [CLASSES[index % 3], CLASSES[(index + 1) % 3]];
    let classes: Vec<ClassId> = enrolled.iter().map(|(c, _)| ClassId::new(*c).expect("non-empty")).collect();
    engine.create_student(
        NewStudent {
            student_id: id.clone(),
            display_name: format!("Student {}", index + 1),
            timezone: None,
            classes: classes.clone(),
            share_schedule: index % 4 != 3,
        },
        now,
    )?;
    let mut blocks = Vec::new();
    for (class, (_, meetings)) in classes.iter().zip(enrolled) {
        for (day, start, end) in meetings {
            blocks.push(TimeBlock::class(day, start, end, class.clone())?);
        }
    }
    let job_day = (index % 5) as u8 + 1;
    blocks.push(TimeBlock::new(job_day.min(6), 17 * 60, 20 * 60, crate::domain::BlockKind::Work, None)?);
    engine.set_timetable(id, TimetableInput { blocks, waking_windows: None })?;
    engine.set_preference(id, if index % 2 == 0 { Preference::Early } else { Preference::Late })?;
    for outcome in engine.suggestions(id)? {
        if let Some(s) = outcome.suggestion() {
            engine.accept_session(id, s.block.clone(), now)?;
        }
    }
    Ok(())
}

pub fn default_student_id(index: usize) -> StudentId {
    StudentId::new(format!("stu-{:03}", index + 1)).expect("non-empty")
}

/// Onboards `ids` through the wizard, publishes `weeks` of class materials starting
/// the week after `start`, and loads mock test results for every class.
pub fn populate(engine: &mut Engine, ids: &[StudentId], weeks: u32, seed: u64, start: Timestamp) -> Result<(), EngineError> {
    for (i, id) in ids.iter().enumerate() {
        onboard(engine, id, i, start)?;
    }
    let first_week = WeekTag::containing(start + Duration::days(1), "UTC").expect("UTC");
    let topics: Vec<String> = (1..=weeks.max(1)).map(|w| format!("unit-{w:02}")).collect();
    let topic_refs: Vec<&str> = topics.iter().map(String::as_str).collect();
    let mut week = first_week;
    for _ in 0..weeks {
        for (class, _) in CLASSES {
            let class = ClassId::new(class).expect("non-empty");
            let materials = vec![
                Material::new(MaterialKind::LectureNotes, format!("{class} lecture notes")),
                Material::new(MaterialKind::Textbook, format!("{class} reading")),
            ];
            engine.put_materials(MaterialsManifest::new(class, week, materials))?;
        }
        week = week.next();
    }
    for (ci, (class, _)) in CLASSES.iter().enumerate() {
        let class = ClassId::new(*class).expect("non-empty");
        let roster: Vec<StudentId> = ids
            .iter()
            .filter(|id| engine.student(id).is_ok_and(|r| r.classes.contains(&class)))
            .cloned()
            .collect();
        let attempts = mock_attempts(&roster, &class, &topic_refs, 2, start - Duration::days(1), splitmix(seed ^ ci as u64));
        engine.ingest_ttm(attempts);
    }
    Ok(())
}

/// Runs `profiles` through `weeks` simulated weeks of the full engine.
pub fn simulate(profiles: &[StudentProfile], weeks: u32, seed: u64, mut config: EngineConfig) -> Result<SimReport, SimError> {
    if weeks == 0 {
        return Err(SimError::NoWeeks);
    }
    for (index, p) in profiles.iter().enumerate() {
        p.validate().map_err(|reason| SimError::BadProfile { index, reason })?;
    }
    config.seed = seed;
    let gate_enabled = config.notifier.gate_enabled;
    let internal_after = config.hook.internal_after;
    let mut engine = Engine::new(config)?;
    let start = semester_start();
    let first_week = WeekTag::containing(start + Duration::days(1), "UTC").expect("UTC");
    let ids: Vec<StudentId> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| p.student_id.clone().unwrap_or_else(|| default_student_id(i)))
        .collect();
    populate(&mut engine, &ids, weeks, seed, start)?;

    let index = ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
    let mut run = Run { engine, profiles, ids, index, seed, agenda: BTreeMap::new() };
    for week_no in 5..=weeks {
        let monday = first_week.start("UTC").expect("UTC") + Duration::weeks(week_no as i64 - 1);
        run.plan(monday + Duration::hours(12), Action::Pair { week_no });
    }

    let horizon = first_week.start("UTC").expect("UTC") + Duration::weeks(weeks as i64) - Duration::seconds(1);
    let mut now = start;
    loop {
        let report = run.engine.tick(now);
        for sid in &report.notified {
            run.on_notified(sid, &report.deliveries, internal_after);
        }
        let primary = run.engine.config().notifier.channels[0];
        for d in report.deliveries.iter().filter(|d| d.channel == primary) {
            run.on_delivery(d, now);
        }
        if let Some(actions) = run.agenda.remove(&now) {
            for action in actions {
                if let Err(e) = run.act(now, action) {
                    tracing::warn!(error = %e, "simulated action rejected");
                }
            }
        }
        let next_agenda = run.agenda.keys().next().copied();
        let next = match (run.engine.next_wakeup(now), next_agenda) {
            (Some(a), Some(b)) => a.min(b),
            (a, b) => match a.or(b) {
                Some(t) => t,
                None => break,
            },
        };
        if next > horizon {
            break;
        }
        now = next;
    }

    let end_week = first_week.start("UTC").expect("UTC") + Duration::weeks(weeks as i64);
    let engine = &run.engine;
    let mut students = Vec::new();
    for (i, id) in run.ids.iter().enumerate() {
        let sessions: Vec<_> =
            engine.sessions_of(id).into_iter().filter(|s| s.starts_at < end_week && s.week >= first_week).collect();
        let count = |f: &dyn Fn(SessionState) -> bool| sessions.iter().filter(|s| f(s.state)).count() as u32;
        let checked_out = count(&|s| s == SessionState::CheckedOut);
        let missed = count(&|s| s == SessionState::Missed);
        let progress = engine.hooks().progress(id);
        let primary = engine.config().notifier.channels[0];
        students.push(SimMetrics {
            student_id: id.clone(),
            motivation_base: profiles[i].motivation_base,
            ability_base: profiles[i].ability_base,
            weeks,
            cycles_completed: HabitCategory::ALL.iter().map(|&c| (c, progress.get(c))).collect(),
            scheduled: sessions.len() as u32,
            checked_out,
            missed,
            still_open: count(&|s| !s.is_terminal()),
            adherence_rate: if checked_out + missed == 0 { 0.0 } else { checked_out as f64 / (checked_out + missed) as f64 },
            triggers_delivered: engine
                .queue()
                .deliveries()
                .iter()
                .filter(|d| &d.request.student_id == id && d.channel == primary)
                .count() as u32,
            triggers_deferred: engine
                .queue()
                .audit()
                .iter()
                .filter(|a| &a.student_id == id && a.outcome == AuditOutcome::Deferred)
                .count() as u32,
        });
    }
    Ok(SimReport { seed, weeks, gate_enabled, students })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_reference_points() {
        assert!((act_probability(0.5, 0.5, 0.25, 10.0) - 0.5).abs() < 1e-12);
        let by_hand = 1.0 / (1.0 + (-7.5f64).exp());
        assert!((act_probability(1.0, 1.0, 0.25, 10.0) - by_hand).abs() < 1e-12);
        assert!((act_probability(1.0, 1.0, 0.25, 10.0) - 0.99945).abs() < 1e-5);
        assert!((act_probability(0.0, 0.7, 0.25, 10.0) - 0.0759).abs() < 1e-4);
    }

    #[test]
    fn one_week_schedules_one_session_per_class() {
        let r = simulate(&[StudentProfile::new(0.6, 0.6)], 1, 3, EngineConfig::default()).unwrap();
        let s = &r.students[0];
        assert_eq!(s.scheduled, 2);
        assert_eq!(s.scheduled, s.checked_out + s.missed + s.still_open);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(simulate(&[], 0, 1, EngineConfig::default()).unwrap_err(), SimError::NoWeeks);
        let bad = StudentProfile::new(1.5, 0.5);
        assert!(matches!(simulate(&[bad], 1, 1, EngineConfig::default()), Err(SimError::BadProfile { .. })));
    }
}
