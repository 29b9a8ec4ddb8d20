//! Weekly study scheduling: free-time search, session suggestions, the session lifecycle,
//! adherence tracking, relocation of poorly rated slots and study-place suggestions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    BandThresholds, ClassId, Interval, ProgressBand, SessionId, StudentId, TimeBlock, Timestamp, WeekTag,
    WeekTimetable,
};
use chrono::Duration;

const BUILTIN_PLACES: &str = include_str!("../catalog/places.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("cannot {action} a session in state {state:?}")]
    IllegalTransition { state: SessionState, action: &'static str },
    #[error("check-in is only open from {opens} to {closes}")]
    OutsideCheckInWindow { opens: Timestamp, closes: Timestamp },
    #[error("session cannot be marked missed before {0}")]
    GraceNotElapsed(Timestamp),
    #[error("{name} rating {value} outside 1..=5")]
    RatingOutOfRange { name: &'static str, value: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Early,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerParams {
    pub session_minutes: u16,
    pub grace_minutes: u16,
    pub snap_minutes: u16,
    pub early_window: Interval,
    pub late_window: Interval,
    /// Class TTM mean below which an extra weekly session is suggested.
    pub adapt_threshold: f64,
    pub max_sessions_per_class: u32,
    /// Effectiveness at or below this counts as a poor session.
    pub relocation_rating: u8,
    pub relocation_run: usize,
    /// Environment at or below this counts as a poor place.
    pub place_rating: u8,
    pub place_run: usize,
    /// Minutes before a session that the start reminder is due.
    pub reminder_lead_minutes: u16,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            session_minutes: 60,
            grace_minutes: 30,
            snap_minutes: 30,
            early_window: Interval::new(8 * 60, 12 * 60),
            late_window: Interval::new(18 * 60, 23 * 60),
            adapt_threshold: 60.0,
            max_sessions_per_class: 3,
            relocation_rating: 2,
            relocation_run: 2,
            place_rating: 2,
            place_run: 3,
            reminder_lead_minutes: 10,
        }
    }
}

impl SchedulerParams {
    pub fn preferred_window(&self, pref: Preference) -> Interval {
        match pref {
            Preference::Early => self.early_window,
            Preference::Late => self.late_window,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.session_minutes == 0 || self.snap_minutes == 0 {
            return Err("session and snap durations must be positive".into());
        }
        for w in [self.early_window, self.late_window] {
            if w.start >= w.end || w.end > 1440 {
                return Err(format!("preferred window {}-{} is invalid", w.start, w.end));
            }
        }
        if self.max_sessions_per_class == 0 || self.relocation_run == 0 || self.place_run == 0 {
            return Err("caps and run lengths must be positive".into());
        }
        Ok(())
    }
}

/// Subtracts `busy` from `window`, returning maximal sorted gaps.
fn complement(window: Interval, busy: impl IntoIterator<Item = Interval>) -> Vec<Interval> {
    let mut busy: Vec<Interval> = busy.into_iter().filter_map(|b| b.intersection(&window)).collect();
    busy.sort();
    let mut free = Vec::new();
    let mut cursor = window.start;
    for b in busy {
        if b.start > cursor {
            free.push(Interval::new(cursor, b.start));
        }
        cursor = cursor.max(b.end);
    }
    if cursor < window.end {
        free.push(Interval::new(cursor, window.end));
    }
    free
}

/// Maximal free intervals per day: the waking window minus every non-study block.
pub fn free_intervals(timetable: &WeekTimetable) -> [Vec<Interval>; 7] {
    std::array::from_fn(|day| {
        let window = timetable.waking_windows[day].interval();
        complement(window, timetable.commitments_on(day as u8).map(TimeBlock::interval))
    })
}

/// Total minutes two students are both free across the week.
pub fn overlap_minutes(a: &[Vec<Interval>; 7], b: &[Vec<Interval>; 7]) -> u32 {
    let mut total = 0u32;
    for day in 0..7 {
        for x in &a[day] {
            for y in &b[day] {
                if let Some(i) = x.intersection(y) {
                    total += i.len() as u32;
                }
            }
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSuggestion {
    pub class_id: ClassId,
    pub block: TimeBlock,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SuggestionOutcome {
    Suggested(SlotSuggestion),
    Unschedulable { class_id: ClassId },
}

impl SuggestionOutcome {
    pub fn suggestion(&self) -> Option<&SlotSuggestion> {
        match self {
            Self::Suggested(s) => Some(s),
            Self::Unschedulable { .. } => None,
        }
    }

    pub fn class_id(&self) -> &ClassId {
        match self {
            Self::Suggested(s) => &s.class_id,
            Self::Unschedulable { class_id } => class_id,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuggestRequest<'a> {
    pub classes: &'a [ClassId],
    pub preference: Preference,
    /// Extra busy blocks, such as study slots the student already holds.
    pub reserved: &'a [TimeBlock],
    /// Study blocks the student has declined; never proposed again.
    pub rejected: &'a [TimeBlock],
}

/// Day a class is anchored to: its first meeting, or Monday if it has none.
fn home_day(timetable: &WeekTimetable, class_id: &ClassId) -> u8 {
    timetable.meetings(class_id).first().map(|b| b.day).unwrap_or(0)
}

/// Every feasible study slot for `class_id`, best first.
///
/// Order: days starting at the class's own weekday, then within a day the slots inside the
/// preferred window before the rest, each group by start time.
pub fn ranked_candidates(
    timetable: &WeekTimetable,
    class_id: &ClassId,
    preference: Preference,
    params: &SchedulerParams,
    busy: &[TimeBlock],
) -> Vec<SlotSuggestion> {
    let free = free_intervals(timetable);
    let home = home_day(timetable, class_id);
    let preferred = params.preferred_window(preference);
    let snap = params.snap_minutes;
    let duration = params.session_minutes;
    let mut out = Vec::new();
    for offset in 0..7u8 {
        let day = (home + offset) % 7;
        let window = timetable.waking_windows[day as usize].interval();
        let open: Vec<Interval> = free[day as usize]
            .iter()
            .flat_map(|f| complement(*f, busy.iter().filter(|b| b.day == day).map(TimeBlock::interval)))
            .collect();
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        let mut start = window.start.div_ceil(snap) * snap;
        while start + duration <= window.end {
            let slot = Interval::new(start, start + duration);
            if open.iter().any(|f| f.contains(&slot)) {
                if preferred.contains(&slot) {
                    inside.push(slot);
                } else {
                    outside.push(slot);
                }
            }
            start += snap;
        }
        let day_score = 1.0 / (1.0 + offset as f64);
        for (slots, weight) in [(inside, 1.0), (outside, 0.5)] {
            for slot in slots {
                out.push(SlotSuggestion {
                    class_id: class_id.clone(),
                    block: TimeBlock::study(day, slot.start, slot.end, class_id.clone())
                        .expect("candidate lies within one day"),
                    score: weight * day_score,
                });
            }
        }
    }
    out
}

/// One suggestion per class, placed greedily in the order given.
pub fn suggest_sessions(
    timetable: &WeekTimetable,
    request: SuggestRequest<'_>,
    params: &SchedulerParams,
) -> Vec<SuggestionOutcome> {
    let mut busy: Vec<TimeBlock> = request.reserved.to_vec();
    let mut out = Vec::with_capacity(request.classes.len());
    for class_id in request.classes {
        let pick = ranked_candidates(timetable, class_id, request.preference, params, &busy)
            .into_iter()
            .find(|c| !request.rejected.iter().any(|r| r.class_id.as_ref() == Some(class_id) && r.day == c.block.day && r.start_min == c.block.start_min));
        match pick {
            Some(s) => {
                busy.push(s.block.clone());
                out.push(SuggestionOutcome::Suggested(s));
            }
            None => out.push(SuggestionOutcome::Unschedulable { class_id: class_id.clone() }),
        }
    }
    out
}

/// Returns 1 when another weekly session should be suggested for a class.
pub fn adapt_session_count(class_mean: f64, current_count: u32, threshold: f64, cap: u32) -> u32 {
    u32::from(class_mean < threshold && current_count < cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Scheduled,
    Notified,
    CheckedIn,
    CheckedOut,
    Missed,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::CheckedOut | Self::Missed)
    }
}

fn rating(name: &'static str, value: u8) -> Result<u8, SessionError> {
    if (1..=5).contains(&value) {
        Ok(value)
    } else {
        Err(SessionError::RatingOutOfRange { name, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySession {
    pub session_id: SessionId,
    pub student_id: StudentId,
    pub class_id: ClassId,
    pub block: TimeBlock,
    pub week: WeekTag,
    pub starts_at: Timestamp,
    pub ends_at: Timestamp,
    pub state: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notified_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checked_in_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checked_out_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missed_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effectiveness: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<u8>,
}

impl StudySession {
    pub fn new(
        session_id: SessionId,
        student_id: StudentId,
        block: TimeBlock,
        week: WeekTag,
        tz: &str,
    ) -> Result<Self, crate::domain::DomainError> {
        let class_id = block
            .class_id
            .clone()
            .ok_or_else(|| crate::domain::DomainError::InvalidBlock("study block without class".into()))?;
        let starts_at = week.instant(block.day, block.start_min, tz)?;
        let ends_at = week.instant(block.day, block.end_min.min(1439), tz)?
            + Duration::minutes(i64::from(block.end_min == 1440));
        Ok(Self {
            session_id,
            student_id,
            class_id,
            block,
            week,
            starts_at,
            ends_at,
            state: SessionState::Scheduled,
            notified_at: None,
            checked_in_at: None,
            checked_out_at: None,
            missed_at: None,
            effectiveness: None,
            environment: None,
        })
    }

    fn illegal(&self, action: &'static str) -> SessionError {
        SessionError::IllegalTransition { state: self.state, action }
    }

    pub fn notify(&mut self, now: Timestamp) -> Result<(), SessionError> {
        if self.state != SessionState::Scheduled {
            return Err(self.illegal("notify"));
        }
        self.state = SessionState::Notified;
        self.notified_at = Some(now);
        Ok(())
    }

    pub fn check_in(&mut self, now: Timestamp, grace: Duration) -> Result<(), SessionError> {
        if self.state != SessionState::Notified {
            return Err(self.illegal("check in"));
        }
        let opens = self.starts_at - grace;
        if now < opens || now > self.ends_at {
            return Err(SessionError::OutsideCheckInWindow { opens, closes: self.ends_at });
        }
        self.state = SessionState::CheckedIn;
        self.checked_in_at = Some(now);
        Ok(())
    }

    pub fn check_out(&mut self, effectiveness: u8, environment: u8, now: Timestamp) -> Result<(), SessionError> {
        if self.state != SessionState::CheckedIn {
            return Err(self.illegal("check out"));
        }
        let effectiveness = rating("effectiveness", effectiveness)?;
        let environment = rating("environment", environment)?;
        self.state = SessionState::CheckedOut;
        self.checked_out_at = Some(now);
        self.effectiveness = Some(effectiveness);
        self.environment = Some(environment);
        Ok(())
    }

    pub fn mark_missed(&mut self, now: Timestamp, grace: Duration) -> Result<(), SessionError> {
        if !matches!(self.state, SessionState::Scheduled | SessionState::Notified) {
            return Err(self.illegal("mark missed"));
        }
        let deadline = self.starts_at + grace;
        if now <= deadline {
            return Err(SessionError::GraceNotElapsed(deadline));
        }
        self.state = SessionState::Missed;
        self.missed_at = Some(now);
        Ok(())
    }

    pub fn miss_deadline(&self, grace: Duration) -> Timestamp {
        self.starts_at + grace
    }
}

/// CheckedOut / (CheckedOut + Missed); `None` until a session has resolved.
pub fn adherence<'a>(sessions: impl IntoIterator<Item = &'a StudySession>) -> Option<f64> {
    let (mut done, mut missed) = (0u32, 0u32);
    for s in sessions {
        match s.state {
            SessionState::CheckedOut => done += 1,
            SessionState::Missed => missed += 1,
            _ => {}
        }
    }
    let total = done + missed;
    (total > 0).then(|| done as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdherenceReport {
    pub checked_out: u32,
    pub missed: u32,
    pub rate: Option<f64>,
    pub band: Option<ProgressBand>,
}

pub fn adherence_report<'a>(
    sessions: impl IntoIterator<Item = &'a StudySession>,
    bands: &BandThresholds,
) -> AdherenceReport {
    let sessions: Vec<&StudySession> = sessions.into_iter().collect();
    let checked_out = sessions.iter().filter(|s| s.state == SessionState::CheckedOut).count() as u32;
    let missed = sessions.iter().filter(|s| s.state == SessionState::Missed).count() as u32;
    let rate = adherence(sessions.iter().copied());
    AdherenceReport { checked_out, missed, rate, band: rate.map(|r| bands.band(r)) }
}

/// Proposes moving a slot whose latest completed sessions were all rated poorly.
///
/// `history` holds the sessions of one slot in chronological order. The replacement is the
/// first candidate after the current slot in the suggestion ordering that does not overlap it.
pub fn propose_relocation(
    history: &[StudySession],
    timetable: &WeekTimetable,
    preference: Preference,
    params: &SchedulerParams,
    reserved: &[TimeBlock],
) -> Option<SlotSuggestion> {
    let ratings: Vec<u8> = history.iter().filter_map(|s| s.effectiveness).collect();
    if ratings.len() < params.relocation_run {
        return None;
    }
    if !ratings[ratings.len() - params.relocation_run..].iter().all(|&r| r <= params.relocation_rating) {
        return None;
    }
    let current = &history.last()?.block;
    let busy: Vec<TimeBlock> = reserved.iter().filter(|b| *b != current).cloned().collect();
    let candidates = ranked_candidates(timetable, &history.last()?.class_id, preference, params, &busy);
    let from = candidates
        .iter()
        .position(|c| c.block.day == current.day && c.block.start_min == current.start_min)
        .map(|i| i + 1)
        .unwrap_or(0);
    candidates.into_iter().skip(from).find(|c| !c.block.overlaps(current))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Place {
    pub name: String,
    pub descriptor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlaceCatalog(pub Vec<Place>);

impl Default for PlaceCatalog {
    fn default() -> Self {
        serde_json::from_str(BUILTIN_PLACES).expect("builtin place catalog is valid")
    }
}

impl PlaceCatalog {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Suggests a random study place after a run of poor environment ratings, at most once per week.
pub fn suggest_place<'a, R: Rng + ?Sized>(
    environment_history: &[u8],
    catalog: &'a PlaceCatalog,
    rng: &mut R,
    last_suggested: Option<WeekTag>,
    current_week: WeekTag,
    params: &SchedulerParams,
) -> Option<&'a Place> {
    if catalog.is_empty() || last_suggested == Some(current_week) {
        return None;
    }
    let run = params.place_run;
    if environment_history.len() < run {
        return None;
    }
    if !environment_history[environment_history.len() - run..].iter().all(|&r| r <= params.place_rating) {
        return None;
    }
    Some(&catalog.0[rng.random_range(0..catalog.0.len())])
}
