//! Academic-performance regression models and habit-target selection.
//!
//! Each model is an affine function of 1..7 Likert answers. Coefficients, intercepts and
//! item prompts are shipped as a versioned JSON catalog (`catalog/models.json`).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::HabitCategory;

pub const LIKERT_MIN: i64 = 1;
pub const LIKERT_MAX: i64 = 7;

const BUILTIN_CATALOG: &str = include_str!("../catalog/models.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("missing response for item `{0}`")]
    IncompleteResponse(String),
    #[error("response for `{item}` is {value}, expected {LIKERT_MIN}..={LIKERT_MAX}")]
    OutOfRange { item: String, value: i64 },
    #[error("raw evaluation needs {expected} values, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("invalid model catalog: {0}")]
    InvalidCatalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SelfPerceived,
    Objective,
    ChangeOverTime,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [Self::SelfPerceived, Self::Objective, Self::ChangeOverTime];
}

/// Which engine category (if any) works on an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemCategory {
    Scheduling,
    Preparation,
    GroupStudy,
    Untargeted,
}

impl ItemCategory {
    pub fn target(self) -> Option<HabitCategory> {
        match self {
            Self::Scheduling => Some(HabitCategory::Scheduling),
            Self::Preparation => Some(HabitCategory::Preparation),
            Self::GroupStudy => Some(HabitCategory::GroupStudy),
            Self::Untargeted => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HabitItem {
    pub item_id: String,
    /// 1-based position within the model.
    pub index: usize,
    pub prompt: String,
    pub coefficient: f64,
    /// Significance stars as published; metadata only.
    pub significance: String,
    /// Number (1..=6) of the targeted habit this item measures, if targeted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_habit: Option<u8>,
    pub category: ItemCategory,
}

impl HabitItem {
    /// The Likert value at which the item contributes most to the score.
    pub fn best_value(&self) -> i64 {
        if self.coefficient > 0.0 {
            LIKERT_MAX
        } else {
            LIKERT_MIN
        }
    }

    /// Score headroom left on this item given the current answer.
    pub fn marginal_gain(&self, value: i64) -> f64 {
        if self.coefficient > 0.0 {
            self.coefficient * (LIKERT_MAX - value) as f64
        } else {
            self.coefficient.abs() * (value - LIKERT_MIN) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub kind: ModelKind,
    pub outcome: String,
    pub intercept: f64,
    pub items: Vec<HabitItem>,
}

impl RegressionModel {
    /// Evaluates the model on values given in item order, without range checks.
    pub fn evaluate_raw(&self, values: &[f64]) -> Result<f64, ModelError> {
        if values.len() != self.items.len() {
            return Err(ModelError::ArityMismatch { expected: self.items.len(), got: values.len() });
        }
        Ok(self.items.iter().zip(values).map(|(item, x)| item.coefficient * x).sum::<f64>() + self.intercept)
    }

    fn values_for(&self, responses: &LikertResponseSet) -> Result<Vec<i64>, ModelError> {
        self.items
            .iter()
            .map(|item| {
                let value = responses
                    .get(&item.item_id)
                    .ok_or_else(|| ModelError::IncompleteResponse(item.item_id.clone()))?;
                if !(LIKERT_MIN..=LIKERT_MAX).contains(&value) {
                    return Err(ModelError::OutOfRange { item: item.item_id.clone(), value });
                }
                Ok(value)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCatalog {
    pub version: String,
    pub models: Vec<RegressionModel>,
}

impl ModelCatalog {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_CATALOG).expect("builtin model catalog is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let catalog: ModelCatalog =
            serde_json::from_str(json).map_err(|e| ModelError::InvalidCatalog(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidCatalog(msg));
        let mut ids = BTreeSet::new();
        for kind in ModelKind::ALL {
            if self.models.iter().filter(|m| m.kind == kind).count() != 1 {
                return bad(format!("expected exactly one {kind:?} model"));
            }
        }
        for model in &self.models {
            for (pos, item) in model.items.iter().enumerate() {
                if item.index != pos + 1 {
                    return bad(format!("{} has index {} at position {}", item.item_id, item.index, pos + 1));
                }
                if item.coefficient == 0.0 || !item.coefficient.is_finite() {
                    return bad(format!("{} has a zero or non-finite coefficient", item.item_id));
                }
                if !ids.insert(item.item_id.clone()) {
                    return bad(format!("duplicate item id {}", item.item_id));
                }
                if item.target_habit.is_some() != item.category.target().is_some() {
                    return bad(format!("{} target habit and category disagree", item.item_id));
                }
            }
        }
        Ok(())
    }

    pub fn model(&self, kind: ModelKind) -> &RegressionModel {
        self.models.iter().find(|m| m.kind == kind).expect("validated catalog has every model")
    }

    pub fn items(&self) -> impl Iterator<Item = &HabitItem> {
        self.models.iter().flat_map(|m| m.items.iter())
    }
}

/// A student's Likert answers keyed by item id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LikertResponseSet(BTreeMap<String, i64>);

impl LikertResponseSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, item_id: impl Into<String>, value: i64) -> Self {
        self.0.insert(item_id.into(), value);
        self
    }

    pub fn insert(&mut self, item_id: impl Into<String>, value: i64) {
        self.0.insert(item_id.into(), value);
    }

    pub fn get(&self, item_id: &str) -> Option<i64> {
        self.0.get(item_id).copied()
    }

    /// Rejects any value outside 1..=7.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (item, &value) in &self.0 {
            if !(LIKERT_MIN..=LIKERT_MAX).contains(&value) {
                return Err(ModelError::OutOfRange { item: item.clone(), value });
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn merge(&mut self, other: &LikertResponseSet) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), *v);
        }
    }

    /// Builds a response set for `model` from values in item order.
    pub fn for_model(model: &RegressionModel, values: &[i64]) -> Self {
        Self(model.items.iter().zip(values).map(|(i, v)| (i.item_id.clone(), *v)).collect())
    }
}

pub fn score(model: &RegressionModel, responses: &LikertResponseSet) -> Result<f64, ModelError> {
    let values: Vec<f64> = model.values_for(responses)?.into_iter().map(|v| v as f64).collect();
    model.evaluate_raw(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGain {
    pub item_id: String,
    pub marginal_gain: f64,
}

/// Items of `model` ordered by how much score headroom they leave, largest first.
pub fn rank_habit_targets(
    responses: &LikertResponseSet,
    model: &RegressionModel,
) -> Result<Vec<TargetGain>, ModelError> {
    let values = model.values_for(responses)?;
    let mut gains: Vec<TargetGain> = model
        .items
        .iter()
        .zip(values)
        .map(|(item, value)| TargetGain { item_id: item.item_id.clone(), marginal_gain: item.marginal_gain(value) })
        .collect();
    gains.sort_by(|a, b| {
        b.marginal_gain.total_cmp(&a.marginal_gain).then_with(|| a.item_id.cmp(&b.item_id))
    });
    Ok(gains)
}

/// Completed Hook cycles per category.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryProgress {
    pub scheduling: u32,
    pub preparation: u32,
    pub group_study: u32,
}

impl CategoryProgress {
    pub fn get(&self, category: HabitCategory) -> u32 {
        match category {
            HabitCategory::Scheduling => self.scheduling,
            HabitCategory::Preparation => self.preparation,
            HabitCategory::GroupStudy => self.group_study,
        }
    }

    pub fn increment(&mut self, category: HabitCategory) {
        match category {
            HabitCategory::Scheduling => self.scheduling += 1,
            HabitCategory::Preparation => self.preparation += 1,
            HabitCategory::GroupStudy => self.group_study += 1,
        }
    }
}

/// Picks the habit category to work on next.
///
/// Scheduling is worked on until `scheduling_prerequisite` scheduling cycles are complete.
/// Afterwards the category of the targeted item with the largest marginal gain wins, with
/// ties resolved Scheduling, then Preparation, then GroupStudy. Items without a valid
/// answer are skipped. With no positive gain the engine stays on Scheduling.
pub fn select_target_category(
    catalog: &ModelCatalog,
    responses: &LikertResponseSet,
    progress: &CategoryProgress,
    scheduling_prerequisite: u32,
) -> HabitCategory {
    if progress.scheduling < scheduling_prerequisite {
        return HabitCategory::Scheduling;
    }
    let mut best: Option<(f64, HabitCategory)> = None;
    for item in catalog.items() {
        let Some(category) = item.category.target() else { continue };
        let Some(value) = responses.get(&item.item_id) else { continue };
        if !(LIKERT_MIN..=LIKERT_MAX).contains(&value) {
            continue;
        }
        let gain = item.marginal_gain(value);
        if gain <= 0.0 {
            continue;
        }
        best = match best {
            Some((g, c)) if g > gain || (g == gain && c <= category) => Some((g, c)),
            _ => Some((gain, category)),
        };
    }
    best.map(|(_, c)| c).unwrap_or(HabitCategory::Scheduling)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceScores {
    pub self_perceived: Option<f64>,
    pub objective: Option<f64>,
    pub change_over_time: Option<f64>,
}

/// Scores every model that has a complete answer set.
pub fn score_all(catalog: &ModelCatalog, responses: &LikertResponseSet) -> PerformanceScores {
    let s = |kind| score(catalog.model(kind), responses).ok();
    PerformanceScores {
        self_perceived: s(ModelKind::SelfPerceived),
        objective: s(ModelKind::Objective),
        change_over_time: s(ModelKind::ChangeOverTime),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Coefficients typed in directly from the published table, independent of the JSON catalog.
    pub(crate) fn oracle(kind: ModelKind, x: &[f64]) -> f64 {
        let (coef, intercept): (&[f64], f64) = match kind {
            ModelKind::SelfPerceived => (&[0.18, -0.21, -0.28], 4.39),
            ModelKind::Objective => (&[0.24, 0.30, -0.19, -0.19, 0.14], 2.16),
            ModelKind::ChangeOverTime => (&[0.23, 0.27, 0.18, -0.30, -0.25, 0.30], 2.75),
        };
        assert_eq!(coef.len(), x.len());
        let mut acc = intercept;
        for i in 0..coef.len() {
            acc += coef[i] * x[i];
        }
        acc
    }

    fn catalog() -> ModelCatalog {
        ModelCatalog::builtin()
    }

    #[test]
    fn intercepts_on_zero_vectors() {
        let c = catalog();
        assert_eq!(c.model(ModelKind::SelfPerceived).evaluate_raw(&[0.0; 3]).unwrap(), 4.39);
        assert_eq!(c.model(ModelKind::Objective).evaluate_raw(&[0.0; 5]).unwrap(), 2.16);
        assert_eq!(c.model(ModelKind::ChangeOverTime).evaluate_raw(&[0.0; 6]).unwrap(), 2.75);
    }

    #[test]
    fn item_counts_match_table() {
        let c = catalog();
        assert_eq!(c.model(ModelKind::SelfPerceived).items.len(), 3);
        assert_eq!(c.model(ModelKind::Objective).items.len(), 5);
        assert_eq!(c.model(ModelKind::ChangeOverTime).items.len(), 6);
    }

    #[test]
    fn worked_scores() {
        let c = catalog();
        let sp = c.model(ModelKind::SelfPerceived);
        let r = LikertResponseSet::for_model(sp, &[7, 1, 1]);
        assert!((score(sp, &r).unwrap() - 5.16).abs() < 1e-12);
        let cot = c.model(ModelKind::ChangeOverTime);
        let r = LikertResponseSet::for_model(cot, &[4; 6]);
        assert!((score(cot, &r).unwrap() - 4.47).abs() < 1e-12);
    }

    #[test]
    fn score_errors() {
        let c = catalog();
        let sp = c.model(ModelKind::SelfPerceived);
        let partial = LikertResponseSet::new().with("sp_x1", 3).with("sp_x2", 3);
        assert_eq!(score(sp, &partial), Err(ModelError::IncompleteResponse("sp_x3".into())));
        let bad = LikertResponseSet::for_model(sp, &[3, 8, 3]);
        assert_eq!(score(sp, &bad), Err(ModelError::OutOfRange { item: "sp_x2".into(), value: 8 }));
        assert!(matches!(sp.evaluate_raw(&[1.0]), Err(ModelError::ArityMismatch { .. })));
    }

    #[test]
    fn ranking_examples() {
        let c = catalog();
        let sp = c.model(ModelKind::SelfPerceived);
        let ranked = rank_habit_targets(&LikertResponseSet::for_model(sp, &[4, 4, 4]), sp).unwrap();
        let ids: Vec<&str> = ranked.iter().map(|g| g.item_id.as_str()).collect();
        assert_eq!(ids, ["sp_x3", "sp_x2", "sp_x1"]);
        for (g, expected) in ranked.iter().zip([0.84, 0.63, 0.54]) {
            assert!((g.marginal_gain - expected).abs() < 1e-12);
        }

        let ranked = rank_habit_targets(&LikertResponseSet::for_model(sp, &[7, 4, 4]), sp).unwrap();
        assert_eq!(ranked.last().unwrap().item_id, "sp_x1");
        assert_eq!(ranked.last().unwrap().marginal_gain, 0.0);

        let best = rank_habit_targets(&LikertResponseSet::for_model(sp, &[7, 1, 1]), sp).unwrap();
        assert!(best.iter().all(|g| g.marginal_gain == 0.0));
        let ids: Vec<&str> = best.iter().map(|g| g.item_id.as_str()).collect();
        assert_eq!(ids, ["sp_x1", "sp_x2", "sp_x3"]);
    }

    fn all_best(c: &ModelCatalog) -> LikertResponseSet {
        let mut r = LikertResponseSet::new();
        for item in c.items() {
            r.insert(item.item_id.clone(), item.best_value());
        }
        r
    }

    #[test]
    fn target_category_selection() {
        let c = catalog();
        let mut r = all_best(&c);
        assert_eq!(
            select_target_category(&c, &r, &CategoryProgress::default(), 4),
            HabitCategory::Scheduling
        );
        let done = CategoryProgress { scheduling: 4, ..Default::default() };
        assert_eq!(select_target_category(&c, &r, &done, 4), HabitCategory::Scheduling);

        // "set aside time to discuss material" left at 1 gives the largest gain (0.27 * 6).
        r.insert("cot_x2", 1);
        assert_eq!(select_target_category(&c, &r, &done, 4), HabitCategory::GroupStudy);
        let early = CategoryProgress { scheduling: 3, ..Default::default() };
        assert_eq!(select_target_category(&c, &r, &early, 4), HabitCategory::Scheduling);

        // Untargeted items never drive selection.
        let mut r = all_best(&c);
        r.insert("cot_x4", 7);
        assert_eq!(select_target_category(&c, &r, &done, 4), HabitCategory::Scheduling);
    }

    #[test]
    fn preparation_wins_exact_tie_with_group_study() {
        let mut c = catalog();
        // Force equal coefficients on one Preparation and one GroupStudy item.
        for m in &mut c.models {
            for i in &mut m.items {
                if i.item_id == "obj_x5" || i.item_id == "cot_x2" {
                    i.coefficient = 0.2;
                }
            }
        }
        let mut r = all_best(&c);
        r.insert("obj_x5", 1);
        r.insert("cot_x2", 1);
        let done = CategoryProgress { scheduling: 4, ..Default::default() };
        assert_eq!(select_target_category(&c, &r, &done, 4), HabitCategory::Preparation);
    }

    #[test]
    fn targeted_habits_split_two_two_two() {
        let c = catalog();
        let mut by_category: BTreeMap<HabitCategory, BTreeSet<u8>> = BTreeMap::new();
        for item in c.items() {
            if let (Some(cat), Some(h)) = (item.category.target(), item.target_habit) {
                by_category.entry(cat).or_default().insert(h);
            }
        }
        assert_eq!(by_category[&HabitCategory::Scheduling], BTreeSet::from([1, 2]));
        assert_eq!(by_category[&HabitCategory::Preparation], BTreeSet::from([3, 4]));
        assert_eq!(by_category[&HabitCategory::GroupStudy], BTreeSet::from([5, 6]));
        assert_eq!(c.items().filter(|i| i.category == ItemCategory::Untargeted).count(), 7);
    }

    #[test]
    fn catalog_validation_rejects_zero_coefficient() {
        let mut c = catalog();
        c.models[0].items[0].coefficient = 0.0;
        assert!(c.validate().is_err());
    }

    fn responses(kind: ModelKind) -> impl Strategy<Value = Vec<i64>> {
        let n = match kind {
            ModelKind::SelfPerceived => 3,
            ModelKind::Objective => 5,
            ModelKind::ChangeOverTime => 6,
        };
        proptest::collection::vec(1i64..=7, n)
    }

    proptest! {
        #[test]
        fn score_matches_oracle(k in 0usize..3, seed in any::<u64>()) {
            let kind = ModelKind::ALL[k];
            let c = catalog();
            let model = c.model(kind);
            let mut rng = seed;
            let values: Vec<i64> = (0..model.items.len()).map(|_| {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                1 + ((rng >> 33) % 7) as i64
            }).collect();
            let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let got = score(model, &LikertResponseSet::for_model(model, &values)).unwrap();
            prop_assert!((got - oracle(kind, &xs)).abs() < 1e-9);
        }

        #[test]
        fn score_is_affine(a in responses(ModelKind::Objective), b in responses(ModelKind::Objective)) {
            let c = catalog();
            let m = c.model(ModelKind::Objective);
            let sa = score(m, &LikertResponseSet::for_model(m, &a)).unwrap();
            let sb = score(m, &LikertResponseSet::for_model(m, &b)).unwrap();
            let diff: f64 = m.items.iter().zip(a.iter().zip(&b)).map(|(i, (x, y))| i.coefficient * (x - y) as f64).sum();
            prop_assert!((sa - sb - diff).abs() < 1e-9);
        }

        #[test]
        fn gains_nonnegative_and_zero_only_at_extreme(values in responses(ModelKind::ChangeOverTime)) {
            let c = catalog();
            let m = c.model(ModelKind::ChangeOverTime);
            let ranked = rank_habit_targets(&LikertResponseSet::for_model(m, &values), m).unwrap();
            for g in &ranked {
                let item = m.items.iter().find(|i| i.item_id == g.item_id).unwrap();
                let v = values[item.index - 1];
                prop_assert!(g.marginal_gain >= 0.0);
                prop_assert_eq!(g.marginal_gain == 0.0, v == item.best_value());
            }
            for w in ranked.windows(2) {
                prop_assert!(w[0].marginal_gain >= w[1].marginal_gain);
            }
        }
    }
}
