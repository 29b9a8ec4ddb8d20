//! Motivation/ability gate deciding whether a trigger fires and in which form.
//!
//! None of the constants here are empirical. The activation threshold is a hyperbola
//! `m * a >= tau` and trigger types follow the quadrant each axis falls in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::HabitCategory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FbmError {
    #[error("{name} = {value} outside {range}")]
    OutOfRange { name: &'static str, value: f64, range: &'static str },
    #[error("activation threshold {tau} exceeds quadrant corner {corner}")]
    InconsistentThresholds { tau: f64, corner: f64 },
}

fn unit(name: &'static str, value: f64) -> Result<f64, FbmError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(FbmError::OutOfRange { name, value, range: "[0, 1]" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerType {
    /// Plain reminder.
    Signal,
    /// Motivation boost.
    Spark,
    /// Difficulty reduction.
    Facilitator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TriggerDecision {
    Fire { trigger_type: TriggerType },
    Defer,
}

impl TriggerDecision {
    pub fn fire(trigger_type: TriggerType) -> Self {
        Self::Fire { trigger_type }
    }

    pub fn is_fire(&self) -> bool {
        matches!(self, Self::Fire { .. })
    }

    pub fn trigger_type(&self) -> Option<TriggerType> {
        match self {
            Self::Fire { trigger_type } => Some(*trigger_type),
            Self::Defer => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorContext {
    pub motivation: f64,
    pub ability: f64,
    pub category: HabitCategory,
}

impl BehaviorContext {
    pub fn new(motivation: f64, ability: f64, category: HabitCategory) -> Result<Self, FbmError> {
        Ok(Self { motivation: unit("motivation", motivation)?, ability: unit("ability", ability)?, category })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbilityBase {
    pub scheduling: f64,
    pub preparation: f64,
    pub group_study: f64,
}

impl Default for AbilityBase {
    fn default() -> Self {
        Self { scheduling: 0.8, preparation: 0.6, group_study: 0.4 }
    }
}

impl AbilityBase {
    pub fn get(&self, category: HabitCategory) -> f64 {
        match category {
            HabitCategory::Scheduling => self.scheduling,
            HabitCategory::Preparation => self.preparation,
            HabitCategory::GroupStudy => self.group_study,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbmParams {
    /// Activation threshold on `motivation * ability`.
    pub tau: f64,
    pub motivation_threshold: f64,
    pub ability_threshold: f64,
    pub ability_base: AbilityBase,
    /// Motivation assumed before any cycle history exists.
    pub motivation_prior: f64,
}

impl Default for FbmParams {
    fn default() -> Self {
        Self {
            tau: 0.25,
            motivation_threshold: 0.5,
            ability_threshold: 0.5,
            ability_base: AbilityBase::default(),
            motivation_prior: 0.5,
        }
    }
}

impl FbmParams {
    pub fn validate(&self) -> Result<(), FbmError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(FbmError::OutOfRange { name: "tau", value: self.tau, range: "(0, 1)" });
        }
        unit("motivation_threshold", self.motivation_threshold)?;
        unit("ability_threshold", self.ability_threshold)?;
        unit("motivation_prior", self.motivation_prior)?;
        for c in HabitCategory::ALL {
            unit("ability_base", self.ability_base.get(c))?;
        }
        let corner = self.motivation_threshold * self.ability_threshold;
        if self.tau > corner {
            return Err(FbmError::InconsistentThresholds { tau: self.tau, corner });
        }
        Ok(())
    }

    pub fn decide(&self, ctx: &BehaviorContext) -> Result<TriggerDecision, FbmError> {
        select_trigger_type(ctx.motivation, ctx.ability, self.motivation_threshold, self.ability_threshold)
    }
}

/// True iff `motivation * ability >= tau`.
pub fn activation(motivation: f64, ability: f64, tau: f64) -> Result<bool, FbmError> {
    unit("motivation", motivation)?;
    unit("ability", ability)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(FbmError::OutOfRange { name: "tau", value: tau, range: "(0, 1)" });
    }
    Ok(motivation * ability >= tau)
}

pub fn select_trigger_type(
    motivation: f64,
    ability: f64,
    motivation_threshold: f64,
    ability_threshold: f64,
) -> Result<TriggerDecision, FbmError> {
    unit("motivation", motivation)?;
    unit("ability", ability)?;
    let high_m = motivation >= motivation_threshold;
    let high_a = ability >= ability_threshold;
    Ok(match (high_m, high_a) {
        (true, true) => TriggerDecision::fire(TriggerType::Signal),
        (true, false) => TriggerDecision::fire(TriggerType::Facilitator),
        (false, true) => TriggerDecision::fire(TriggerType::Spark),
        (false, false) => TriggerDecision::Defer,
    })
}

/// Estimates motivation from completion history, oldest first.
pub trait MotivationEstimator {
    fn estimate(&self, completed: &[bool]) -> f64;
}

/// Estimates ability for a category given the current completion streak.
pub trait AbilityEstimator {
    fn estimate(&self, category: HabitCategory, streak: u32) -> f64;
}

/// Completion rate over the last ten cycles, each older cycle weighted half the next.
#[derive(Debug, Clone, Copy)]
pub struct HalvingCompletionRate {
    pub prior: f64,
    pub window: usize,
}

impl Default for HalvingCompletionRate {
    fn default() -> Self {
        Self { prior: 0.5, window: 10 }
    }
}

impl MotivationEstimator for HalvingCompletionRate {
    fn estimate(&self, completed: &[bool]) -> f64 {
        if completed.is_empty() {
            return self.prior;
        }
        let mut weight = 1.0;
        let mut total = 0.0;
        let mut hit = 0.0;
        for &done in completed.iter().rev().take(self.window) {
            total += weight;
            if done {
                hit += weight;
            }
            weight *= 0.5;
        }
        hit / total
    }
}

pub fn estimate_motivation(completed: &[bool]) -> f64 {
    HalvingCompletionRate::default().estimate(completed)
}

/// Category base ability raised by 0.02 per streak step, at most +0.2, capped at 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct StreakAbility {
    pub base: AbilityBase,
}

impl AbilityEstimator for StreakAbility {
    fn estimate(&self, category: HabitCategory, streak: u32) -> f64 {
        let bonus = (0.02 * streak as f64).min(0.2);
        (self.base.get(category) + bonus).min(1.0)
    }
}

pub fn estimate_ability(category: HabitCategory, streak: u32) -> f64 {
    StreakAbility::default().estimate(category, streak)
}
