//! Helper suggestions, peer-explanation pairing, group session ratings and endorsements.
//!
//! Pairing records which member scored above the class median, but that knowledge stays
//! inside this module: [`StudyPair`] never serializes it and members are stored in id order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClassId, Interval, StudentId, Timestamp, WeekTag};
use crate::scheduler::{overlap_minutes, SessionState, StudySession};

/// Substrings that would reveal pairing roles if they reached a student.
pub const ROLE_TOKENS: &[&str] = &["higher", "lower", "hidden_role", "role"];

/// Role tokens present in `payload`, matched case-insensitively.
pub fn role_tokens_in(payload: &str) -> Vec<&'static str> {
    let lower = payload.to_lowercase();
    ROLE_TOKENS.iter().copied().filter(|t| lower.contains(t)).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("requester {0} has no topic score")]
    NoScore(StudentId),
    #[error("pairing needs at least two scored students, got {0}")]
    NoPairing(usize),
    #[error("score {0} outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("no study group {0}")]
    UnknownGroup(String),
    #[error("{student} is not a member of {group}")]
    NotMember { student: StudentId, group: String },
    #[error("rating {0} outside 1..=5")]
    RatingOutOfRange(u8),
    #[error("students cannot rate or endorse themselves")]
    SelfTarget,
    #[error("a group needs at least two distinct members")]
    TooFewMembers,
    #[error("endorsing requires a rating of at least {0} for this session")]
    NoQualifyingRating(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupParams {
    pub helper_percentile: f64,
    pub min_overlap_minutes: u32,
    pub endorse_min_rating: u8,
    pub invite_min_sessions: u32,
    pub invite_min_effectiveness: u8,
    pub invite_window_weeks: i64,
}

impl Default for GroupParams {
    fn default() -> Self {
        Self {
            helper_percentile: 0.75,
            min_overlap_minutes: 60,
            endorse_min_rating: 4,
            invite_min_sessions: 3,
            invite_min_effectiveness: 4,
            invite_window_weeks: 4,
        }
    }
}

/// Nearest-rank percentile: the value at 1-based index ⌈q·n⌉ of the ascending sort.
pub fn nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

/// Middle value, or the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelperCandidate {
    pub student_id: StudentId,
    pub endorsements: u32,
    pub overlap_minutes: u32,
    #[serde(skip)]
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HelperOutcome {
    Candidates { candidates: Vec<HelperCandidate> },
    /// The requester already scores at or above the class median.
    NotWeak,
}

impl HelperOutcome {
    pub fn candidates(&self) -> &[HelperCandidate] {
        match self {
            Self::Candidates { candidates } => candidates,
            Self::NotWeak => &[],
        }
    }
}

/// Everything helper suggestion needs about one class and topic.
#[derive(Debug, Clone, Default)]
pub struct ClassSnapshot {
    pub scores: BTreeMap<StudentId, f64>,
    pub free: BTreeMap<StudentId, [Vec<Interval>; 7]>,
    pub opted_in: BTreeSet<StudentId>,
    pub endorsements: BTreeMap<StudentId, u32>,
}

/// Classmates scoring at least the helper percentile who share enough free time with the
/// requester, ranked by score, then endorsements, then id.
pub fn suggest_helpers(
    requester: &StudentId,
    class: &ClassSnapshot,
    params: &GroupParams,
) -> Result<HelperOutcome, GroupError> {
    let own = *class.scores.get(requester).ok_or_else(|| GroupError::NoScore(requester.clone()))?;
    let all: Vec<f64> = class.scores.values().copied().collect();
    if own >= median(&all).expect("requester is scored") {
        return Ok(HelperOutcome::NotWeak);
    }
    let cutoff = nearest_rank(&all, params.helper_percentile).expect("requester is scored");
    let empty: [Vec<Interval>; 7] = Default::default();
    let mine = class.free.get(requester).unwrap_or(&empty);
    let mut candidates: Vec<HelperCandidate> = class
        .scores
        .iter()
        .filter(|(id, score)| *id != requester && **score >= cutoff && class.opted_in.contains(*id))
        .filter_map(|(id, &score)| {
            let overlap = overlap_minutes(mine, class.free.get(id)?);
            (overlap >= params.min_overlap_minutes).then(|| HelperCandidate {
                student_id: id.clone(),
                endorsements: class.endorsements.get(id).copied().unwrap_or(0),
                overlap_minutes: overlap,
                score,
            })
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.endorsements.cmp(&a.endorsements))
            .then(a.student_id.cmp(&b.student_id))
    });
    Ok(HelperOutcome::Candidates { candidates })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct HiddenRoles {
    above: StudentId,
    at_or_below: StudentId,
}

pub const PAIR_PROMPT: &str =
    "Take turns explaining this topic's key ideas to your partner, then ask each other one question.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPair {
    pub pair_id: String,
    pub class_id: ClassId,
    pub topic: String,
    /// Sorted by id so position carries no information.
    pub members: [StudentId; 2],
    pub prompt: String,
    #[serde(skip)]
    roles: Option<HiddenRoles>,
}

impl StudyPair {
    pub fn contains(&self, student: &StudentId) -> bool {
        self.members.contains(student)
    }

    pub fn partner_of(&self, student: &StudentId) -> Option<&StudentId> {
        match &self.members {
            [a, b] if a == student => Some(b),
            [a, b] if b == student => Some(a),
            _ => None,
        }
    }

    /// Member who scored above the median at pairing time, for internal checks only.
    pub fn internal_above_median(&self) -> Option<&StudentId> {
        self.roles.as_ref().map(|r| &r.above)
    }

    pub fn internal_at_or_below_median(&self) -> Option<&StudentId> {
        self.roles.as_ref().map(|r| &r.at_or_below)
    }

    /// What one member sees: partner and prompt, identical wording for both.
    pub fn view_for(&self, student: &StudentId) -> Option<PairView> {
        Some(PairView {
            pair_id: self.pair_id.clone(),
            class_id: self.class_id.clone(),
            topic: self.topic.clone(),
            partner: self.partner_of(student)?.clone(),
            prompt: self.prompt.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: String,
    pub class_id: ClassId,
    pub topic: String,
    pub partner: StudentId,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub pairs: Vec<StudyPair>,
    /// Students left over: the median-most one for an odd roster, more when scores tie.
    pub unpaired: Vec<StudentId>,
    pub median: f64,
}

/// Splits the roster at the median (strictly above vs at or below) and pairs the strongest
/// of the upper half with the weakest of the lower half, second with second-weakest, and so on.
pub fn pair_for_explanation(
    class_id: &ClassId,
    topic: &str,
    roster: &BTreeMap<StudentId, f64>,
    pair_id_prefix: &str,
) -> Result<Pairing, GroupError> {
    if roster.len() < 2 {
        return Err(GroupError::NoPairing(roster.len()));
    }
    if let Some(bad) = roster.values().find(|s| !(0.0..=100.0).contains(*s)) {
        return Err(GroupError::ScoreOutOfRange(*bad));
    }
    let all: Vec<f64> = roster.values().copied().collect();
    let med = median(&all).expect("roster is non-empty");
    let mut ranked: Vec<(&StudentId, f64)> = roster.iter().map(|(id, s)| (id, *s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let (upper, lower): (Vec<_>, Vec<_>) = ranked.into_iter().partition(|(_, s)| *s > med);
    let mut pairs = Vec::new();
    for (i, (above, _)) in upper.iter().enumerate() {
        let (below, _) = lower[lower.len() - 1 - i];
        let mut members = [(*above).clone(), below.clone()];
        members.sort();
        pairs.push(StudyPair {
            pair_id: format!("{pair_id_prefix}-{}", i + 1),
            class_id: class_id.clone(),
            topic: topic.to_string(),
            members,
            prompt: PAIR_PROMPT.to_string(),
            roles: Some(HiddenRoles { above: (*above).clone(), at_or_below: below.clone() }),
        });
    }
    let unpaired = lower[..lower.len() - upper.len()].iter().map(|(id, _)| (*id).clone()).collect();
    Ok(Pairing { pairs, unpaired, median: med })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyGroup {
    pub group_id: String,
    pub class_id: ClassId,
    #[serde(default)]
    pub topic: String,
    pub members: Vec<StudentId>,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRating {
    pub group_id: String,
    pub rater: StudentId,
    pub ratee: StudentId,
    pub rating: u8,
    pub rated_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endorsement {
    pub from_student: StudentId,
    pub to_student: StudentId,
    pub group_id: String,
    pub tag: String,
    pub endorsed_at: Timestamp,
}

pub const ENDORSEMENT_TAG: &str = "helpful";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupBook {
    groups: BTreeMap<String, StudyGroup>,
    /// Latest rating per (group, rater, ratee).
    ratings: BTreeMap<String, GroupRating>,
    endorsements: BTreeMap<String, Endorsement>,
    next_id: u64,
}

fn triple(group: &str, a: &StudentId, b: &StudentId) -> String {
    format!("{group}\u{1f}{a}\u{1f}{b}")
}

impl GroupBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(
        &mut self,
        class_id: ClassId,
        topic: impl Into<String>,
        members: Vec<StudentId>,
        now: Timestamp,
    ) -> Result<&StudyGroup, GroupError> {
        let set: BTreeSet<StudentId> = members.into_iter().collect();
        if set.len() < 2 {
            return Err(GroupError::TooFewMembers);
        }
        self.next_id += 1;
        let group_id = format!("grp-{:06}", self.next_id);
        let group = StudyGroup {
            group_id: group_id.clone(),
            class_id,
            topic: topic.into(),
            members: set.into_iter().collect(),
            created_at: now,
        };
        self.groups.insert(group_id.clone(), group);
        Ok(&self.groups[&group_id])
    }

    pub fn group(&self, group_id: &str) -> Option<&StudyGroup> {
        self.groups.get(group_id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &StudyGroup> {
        self.groups.values()
    }

    fn member_group(&self, group_id: &str, student: &StudentId) -> Result<&StudyGroup, GroupError> {
        let group = self.groups.get(group_id).ok_or_else(|| GroupError::UnknownGroup(group_id.to_string()))?;
        if !group.members.contains(student) {
            return Err(GroupError::NotMember { student: student.clone(), group: group_id.to_string() });
        }
        Ok(group)
    }

    /// Stores the rater's ratings of fellow members, replacing earlier ones for the same session.
    pub fn rate(
        &mut self,
        group_id: &str,
        rater: &StudentId,
        ratings: &BTreeMap<StudentId, u8>,
        now: Timestamp,
    ) -> Result<Vec<GroupRating>, GroupError> {
        self.member_group(group_id, rater)?;
        for (ratee, &rating) in ratings {
            if ratee == rater {
                return Err(GroupError::SelfTarget);
            }
            self.member_group(group_id, ratee)?;
            if !(1..=5).contains(&rating) {
                return Err(GroupError::RatingOutOfRange(rating));
            }
        }
        let stored: Vec<GroupRating> = ratings
            .iter()
            .map(|(ratee, &rating)| GroupRating {
                group_id: group_id.to_string(),
                rater: rater.clone(),
                ratee: ratee.clone(),
                rating,
                rated_at: now,
            })
            .collect();
        for r in &stored {
            self.ratings.insert(triple(group_id, &r.rater, &r.ratee), r.clone());
        }
        Ok(stored)
    }

    pub fn rating(&self, group_id: &str, rater: &StudentId, ratee: &StudentId) -> Option<&GroupRating> {
        self.ratings.get(&triple(group_id, rater, ratee))
    }

    /// Ratings received by `student`, for the motivation estimator.
    pub fn ratings_of<'a>(&'a self, student: &'a StudentId) -> impl Iterator<Item = &'a GroupRating> + 'a {
        self.ratings.values().filter(move |r| &r.ratee == student)
    }

    /// Records a "helpful" endorsement. The boolean is false when it already existed.
    pub fn endorse(
        &mut self,
        group_id: &str,
        from: &StudentId,
        to: &StudentId,
        now: Timestamp,
        params: &GroupParams,
    ) -> Result<(Endorsement, bool), GroupError> {
        if from == to {
            return Err(GroupError::SelfTarget);
        }
        self.member_group(group_id, from)?;
        self.member_group(group_id, to)?;
        let key = triple(group_id, from, to);
        if let Some(existing) = self.endorsements.get(&key) {
            return Ok((existing.clone(), false));
        }
        let qualifies = self.rating(group_id, from, to).is_some_and(|r| r.rating >= params.endorse_min_rating);
        if !qualifies {
            return Err(GroupError::NoQualifyingRating(params.endorse_min_rating));
        }
        let e = Endorsement {
            from_student: from.clone(),
            to_student: to.clone(),
            group_id: group_id.to_string(),
            tag: ENDORSEMENT_TAG.to_string(),
            endorsed_at: now,
        };
        self.endorsements.insert(key, e.clone());
        Ok((e, true))
    }

    pub fn endorsements_for<'a>(&'a self, student: &'a StudentId) -> impl Iterator<Item = &'a Endorsement> + 'a {
        self.endorsements.values().filter(move |e| &e.to_student == student)
    }

    pub fn endorsement_counts(&self) -> BTreeMap<StudentId, u32> {
        let mut counts = BTreeMap::new();
        for e in self.endorsements.values() {
            *counts.entry(e.to_student.clone()).or_insert(0) += 1;
        }
        counts
    }
}

/// True after enough effective solo sessions in the trailing window, which prompts an
/// invitation to study with classmates.
pub fn should_invite_friends(sessions: &[StudySession], current: WeekTag, params: &GroupParams) -> bool {
    let effective = sessions
        .iter()
        .filter(|s| s.state == SessionState::CheckedOut)
        .filter(|s| s.effectiveness.is_some_and(|e| e >= params.invite_min_effectiveness))
        .filter(|s| (0..params.invite_window_weeks).contains(&current.weeks_since(s.week)))
        .count();
    effective as u32 >= params.invite_min_sessions
}
