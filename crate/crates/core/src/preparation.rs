//! Weekly reading checklists, pre-class reminders and post-class summary-note prompts.

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BandThresholds, ClassId, DomainError, ProgressBand, StudentId, TimeBlock, Timestamp, WeekTag};
use crate::hook::{RewardInstance, RewardKind};
use crate::notifier::{TriggerPurpose, TriggerRequest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrepError {
    #[error("no checklist item {0}")]
    UnknownItem(String),
    #[error("summary note is empty")]
    EmptyNote,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialKind {
    LectureNotes,
    TutorialNotes,
    Textbook,
    SharedLink,
    PersonalNotesPrev,
    OwnArticle,
}

impl MaterialKind {
    pub fn is_required(self) -> bool {
        self != Self::OwnArticle
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Material {
    pub kind: MaterialKind,
    #[serde(default)]
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl Material {
    pub fn new(kind: MaterialKind, title: impl Into<String>) -> Self {
        Self { kind, title: title.into(), url: None }
    }

    pub fn link(title: impl Into<String>, url: impl Into<String>) -> Self {
        Self { kind: MaterialKind::SharedLink, title: title.into(), url: Some(url.into()) }
    }
}

/// Instructor-provided list of what is available for one class in one week.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterialsManifest {
    pub class_id: ClassId,
    pub week: WeekTag,
    #[serde(default)]
    pub cancelled: bool,
    #[serde(default)]
    pub materials: Vec<Material>,
    /// Topics covered this week, used to label pairing and test results.
    #[serde(default)]
    pub topics: Vec<String>,
}

impl MaterialsManifest {
    pub fn new(class_id: ClassId, week: WeekTag, materials: Vec<Material>) -> Self {
        Self { class_id, week, cancelled: false, materials, topics: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub item_id: String,
    pub class_id: ClassId,
    pub week: WeekTag,
    pub kind: MaterialKind,
    pub required: bool,
    #[serde(default)]
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default)]
    pub ticked_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checklist {
    pub class_id: ClassId,
    pub week: WeekTag,
    pub items: Vec<ChecklistItem>,
    /// Ticked required items over all required items; 0 when nothing is required.
    pub progress: f64,
    pub band: ProgressBand,
    pub sparse: bool,
}

impl Checklist {
    pub fn required_counts(&self) -> (usize, usize) {
        let required = self.items.iter().filter(|i| i.required);
        let total = required.clone().count();
        (required.filter(|i| i.ticked_at.is_some()).count(), total)
    }

    fn recompute(&mut self, bands: &BandThresholds) {
        let (ticked, total) = self.required_counts();
        self.progress = if total == 0 { 0.0 } else { ticked as f64 / total as f64 };
        self.band = bands.band(self.progress);
    }

    pub fn item(&self, item_id: &str) -> Option<&ChecklistItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn is_complete(&self) -> bool {
        let (ticked, total) = self.required_counts();
        total > 0 && ticked == total
    }
}

/// Builds the checklist for a class meeting. Required kinds appear once each except shared
/// links, which expand per link; one optional own-article item is always appended.
/// Returns `None` when the class does not meet that week or the meeting is cancelled.
pub fn generate_checklist(
    class_id: &ClassId,
    week: WeekTag,
    meets_this_week: bool,
    manifest: Option<&MaterialsManifest>,
    bands: &BandThresholds,
) -> Option<Checklist> {
    if !meets_this_week || manifest.is_some_and(|m| m.cancelled) {
        return None;
    }
    let mut picked: Vec<&Material> = Vec::new();
    for m in manifest.map(|m| m.materials.as_slice()).unwrap_or_default() {
        if !m.kind.is_required() {
            continue;
        }
        if m.kind == MaterialKind::SharedLink || !picked.iter().any(|p| p.kind == m.kind) {
            picked.push(m);
        }
    }
    picked.sort_by_key(|m| m.kind);
    let own = Material::new(MaterialKind::OwnArticle, "Find an article on this week's topic that interests you");
    let sparse = picked.is_empty();
    let items = picked
        .into_iter()
        .chain(std::iter::once(&own))
        .enumerate()
        .map(|(i, m)| ChecklistItem {
            item_id: format!("{class_id}.{week}.{}", i + 1),
            class_id: class_id.clone(),
            week,
            kind: m.kind,
            required: m.kind.is_required(),
            title: m.title.clone(),
            url: m.url.clone(),
            ticked_at: None,
        })
        .collect();
    let mut checklist =
        Checklist { class_id: class_id.clone(), week, items, progress: 0.0, band: ProgressBand::Red, sparse };
    checklist.recompute(bands);
    Some(checklist)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickOutcome {
    pub item_id: String,
    pub already_ticked: bool,
    pub progress: f64,
    pub band_before: ProgressBand,
    pub band: ProgressBand,
    pub rewards: Vec<RewardInstance>,
}

pub const COMPLETION_MESSAGE: &str = "Checklist complete! You're all set for class.";

/// Ticks an item. Ticking twice is a no-op reported through `already_ticked`.
pub fn tick(
    checklist: &mut Checklist,
    item_id: &str,
    now: Timestamp,
    bands: &BandThresholds,
) -> Result<TickOutcome, PrepError> {
    let band_before = checklist.band;
    let was_complete = checklist.is_complete();
    let item = checklist
        .items
        .iter_mut()
        .find(|i| i.item_id == item_id)
        .ok_or_else(|| PrepError::UnknownItem(item_id.to_string()))?;
    let already_ticked = item.ticked_at.is_some();
    let mut rewards = Vec::new();
    if !already_ticked {
        item.ticked_at = Some(now);
        checklist.recompute(bands);
        if checklist.band != band_before {
            rewards.push(RewardInstance {
                kind: RewardKind::ProgressColorChange,
                payload: format!("Your checklist bar turned {}.", band_name(checklist.band)),
                delivered_at: now,
            });
        }
        if !was_complete && checklist.is_complete() {
            rewards.push(RewardInstance {
                kind: RewardKind::PraiseMessage,
                payload: COMPLETION_MESSAGE.to_string(),
                delivered_at: now,
            });
        }
    }
    Ok(TickOutcome {
        item_id: item_id.to_string(),
        already_ticked,
        progress: checklist.progress,
        band_before,
        band: checklist.band,
        rewards,
    })
}

fn band_name(band: ProgressBand) -> &'static str {
    match band {
        ProgressBand::Red => "red",
        ProgressBand::Amber => "amber",
        ProgressBand::Green => "green",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepParams {
    pub pre_class_lead_minutes: i64,
    pub post_class_delay_minutes: i64,
    pub bands: BandThresholds,
}

impl Default for PrepParams {
    fn default() -> Self {
        Self { pre_class_lead_minutes: 48 * 60, post_class_delay_minutes: 15, bands: BandThresholds::default() }
    }
}

fn meeting_payload(req: TriggerRequest, block: &TimeBlock, week: WeekTag) -> TriggerRequest {
    let class = block.class_id.as_ref().map(|c| c.to_string()).unwrap_or_default();
    req.with("class", class).with("week", week.to_string())
}

/// Reading-list reminder `lead` before the class starts, never earlier than the week start.
pub fn schedule_pre_class_reminder(
    student: &StudentId,
    block: &TimeBlock,
    week: WeekTag,
    tz: &str,
    lead: Duration,
    cancelled: bool,
) -> Result<Option<TriggerRequest>, PrepError> {
    if cancelled {
        return Ok(None);
    }
    let starts = week.instant(block.day, block.start_min, tz)?;
    let due = (starts - lead).max(week.start(tz)?);
    let req = TriggerRequest::new(student.clone(), TriggerPurpose::ReadingList, due);
    Ok(Some(meeting_payload(req, block, week)))
}

/// Summary-note prompt `delay` after the class ends.
pub fn schedule_post_class_prompt(
    student: &StudentId,
    block: &TimeBlock,
    week: WeekTag,
    tz: &str,
    delay: Duration,
    cancelled: bool,
) -> Result<Option<TriggerRequest>, PrepError> {
    if cancelled {
        return Ok(None);
    }
    let ends = week.instant(block.day, 0, tz)? + Duration::minutes(block.end_min as i64);
    let req = TriggerRequest::new(student.clone(), TriggerPurpose::PostClassNotes, ends + delay);
    Ok(Some(meeting_payload(req, block, week)))
}

/// Opaque summary text stored as the investment step of a preparation cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryNote {
    pub student_id: StudentId,
    pub class_id: ClassId,
    pub week: WeekTag,
    pub text: String,
    pub written_at: Timestamp,
}

impl SummaryNote {
    /// Accepts any text with at least one non-whitespace character.
    pub fn new(
        student_id: StudentId,
        class_id: ClassId,
        week: WeekTag,
        text: impl Into<String>,
        written_at: Timestamp,
    ) -> Result<Self, PrepError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PrepError::EmptyNote);
        }
        Ok(Self { student_id, class_id, week, text, written_at })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeZone, Utc};
    use proptest::prelude::*;

    const TZ: &str = "Australia/Melbourne";

    fn class() -> ClassId {
        ClassId::new("web101").unwrap()
    }

    fn week() -> WeekTag {
        WeekTag(NaiveDate::from_ymd_opt(2026, 3, 2).unwrap())
    }

    fn now() -> Timestamp {
        Utc.with_ymd_and_hms(2026, 3, 2, 1, 0, 0).unwrap()
    }

    fn full_manifest() -> MaterialsManifest {
        MaterialsManifest::new(
            class(),
            week(),
            vec![
                Material::new(MaterialKind::LectureNotes, "Lecture 3"),
                Material::new(MaterialKind::TutorialNotes, "Tutorial 3"),
                Material::new(MaterialKind::Textbook, "Chapter 3"),
                Material::link("HTTP basics", "https://example.org/http"),
                Material::link("REST intro", "https://example.org/rest"),
                Material::new(MaterialKind::PersonalNotesPrev, "Your week 2 notes"),
            ],
        )
    }

    fn gen(m: &MaterialsManifest) -> Checklist {
        generate_checklist(&class(), week(), true, Some(m), &BandThresholds::default()).unwrap()
    }

    #[test]
    fn manifest_expands_links() {
        let c = gen(&full_manifest());
        assert_eq!(c.items.iter().filter(|i| i.required).count(), 6);
        assert_eq!(c.items.iter().filter(|i| !i.required).count(), 1);
        assert_eq!(c.items.last().unwrap().kind, MaterialKind::OwnArticle);
        assert!(!c.sparse);
    }

    #[test]
    fn empty_and_missing_meetings() {
        let c = gen(&MaterialsManifest::new(class(), week(), vec![]));
        assert_eq!(c.items.len(), 1);
        assert!(c.sparse);
        assert_eq!(c.progress, 0.0);
        let b = BandThresholds::default();
        assert!(generate_checklist(&class(), week(), false, Some(&full_manifest()), &b).is_none());
        let mut cancelled = full_manifest();
        cancelled.cancelled = true;
        assert!(generate_checklist(&class(), week(), true, Some(&cancelled), &b).is_none());
    }

    #[test]
    fn tick_walks_the_bands() {
        let b = BandThresholds::default();
        let mut c = gen(&full_manifest());
        let ids: Vec<String> = c.items.iter().map(|i| i.item_id.clone()).collect();
        let own = ids.last().unwrap().clone();
        let o = tick(&mut c, &own, now(), &b).unwrap();
        assert_eq!(o.progress, 0.0);
        assert!(o.rewards.is_empty());

        let mut kinds = Vec::new();
        for id in &ids[..6] {
            let o = tick(&mut c, id, now(), &b).unwrap();
            kinds.push((o.band, o.rewards.iter().map(|r| r.kind).collect::<Vec<_>>()));
        }
        // 1/6 red, 2/6 red, 3/6 amber, 4/6 amber (0.666..), 5/6 green, 6/6 green.
        assert_eq!(kinds[1].0, ProgressBand::Red);
        assert_eq!(kinds[2], (ProgressBand::Amber, vec![RewardKind::ProgressColorChange]));
        assert_eq!(kinds[3], (ProgressBand::Amber, vec![]));
        assert_eq!(kinds[4], (ProgressBand::Green, vec![RewardKind::ProgressColorChange]));
        assert_eq!(kinds[5], (ProgressBand::Green, vec![RewardKind::PraiseMessage]));
        assert_eq!(c.progress, 1.0);

        let again = tick(&mut c, &ids[0], now(), &b).unwrap();
        assert!(again.already_ticked);
        assert!(again.rewards.is_empty());
        assert!(matches!(tick(&mut c, "nope", now(), &b), Err(PrepError::UnknownItem(_))));
    }

    #[test]
    fn three_of_six_is_amber() {
        let b = BandThresholds::default();
        let mut c = gen(&full_manifest());
        let ids: Vec<String> = c.items.iter().take(3).map(|i| i.item_id.clone()).collect();
        for id in ids {
            tick(&mut c, &id, now(), &b).unwrap();
        }
        assert_eq!(c.progress, 0.5);
        assert_eq!(c.band, ProgressBand::Amber);
    }

    #[test]
    fn reminder_times() {
        let s = StudentId::new("s1").unwrap();
        let lead = Duration::hours(48);
        let local = |day: u8, hour: u16| week().instant(day, hour * 60, TZ).unwrap();
        // Wednesday 14:00 class: reminder Monday 14:00.
        let wed = TimeBlock::class(2, 840, 960, class()).unwrap();
        let r = schedule_pre_class_reminder(&s, &wed, week(), TZ, lead, false).unwrap().unwrap();
        assert_eq!(r.due_at, local(0, 14));
        assert_eq!(r.purpose, TriggerPurpose::ReadingList);
        // Tuesday 14:00 and Monday 09:00 both clamp to the week start.
        let tue = TimeBlock::class(1, 840, 960, class()).unwrap();
        let r = schedule_pre_class_reminder(&s, &tue, week(), TZ, lead, false).unwrap().unwrap();
        assert_eq!(r.due_at, week().start(TZ).unwrap());
        let mon = TimeBlock::class(0, 540, 600, class()).unwrap();
        let r = schedule_pre_class_reminder(&s, &mon, week(), TZ, lead, false).unwrap().unwrap();
        assert_eq!(r.due_at, week().start(TZ).unwrap());
        assert!(schedule_pre_class_reminder(&s, &mon, week(), TZ, lead, true).unwrap().is_none());

        let p = schedule_post_class_prompt(&s, &wed, week(), TZ, Duration::minutes(15), false).unwrap().unwrap();
        assert_eq!(p.due_at, local(2, 16) + Duration::minutes(15));
        let late = TimeBlock::class(2, 1320, 1440, class()).unwrap();
        let p = schedule_post_class_prompt(&s, &late, week(), TZ, Duration::minutes(15), false).unwrap().unwrap();
        assert_eq!(p.due_at, week().instant(3, 15, TZ).unwrap());
    }

    #[test]
    fn notes_need_content() {
        let s = StudentId::new("s1").unwrap();
        assert!(SummaryNote::new(s.clone(), class(), week(), "x", now()).is_ok());
        assert_eq!(SummaryNote::new(s, class(), week(), "  \n", now()), Err(PrepError::EmptyNote));
    }

    #[test]
    fn manifest_json_round_trip() {
        let m = full_manifest();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains(r#""kind":"shared_link""#));
        assert_eq!(serde_json::from_str::<MaterialsManifest>(&json).unwrap(), m);
    }

    proptest! {
        #[test]
        fn progress_is_monotone_and_bounded(
            kinds in proptest::collection::vec(0usize..6, 0..12),
            order in proptest::collection::vec(0usize..20, 0..40),
        ) {
            let all = [
                MaterialKind::LectureNotes, MaterialKind::TutorialNotes, MaterialKind::Textbook,
                MaterialKind::SharedLink, MaterialKind::PersonalNotesPrev, MaterialKind::OwnArticle,
            ];
            let materials = kinds.iter().map(|&k| Material::new(all[k], "m")).collect();
            let b = BandThresholds::default();
            let mut c = gen(&MaterialsManifest::new(class(), week(), materials));
            let mut last = c.progress;
            for i in order {
                let id = c.items[i % c.items.len()].item_id.clone();
                tick(&mut c, &id, now(), &b).unwrap();
                prop_assert!(c.progress >= last);
                prop_assert!((0.0..=1.0).contains(&c.progress));
                let (ticked, total) = c.required_counts();
                let expected = if total == 0 { 0.0 } else { ticked as f64 / total as f64 };
                prop_assert_eq!(c.progress, expected);
                last = c.progress;
            }
        }
    }
}
