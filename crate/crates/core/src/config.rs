//! Engine configuration: every tunable threshold in one validated JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fbm::FbmParams;
use crate::group::GroupParams;
use crate::hook::RewardCatalog;
use crate::notifier::NotifierParams;
use crate::preparation::PrepParams;
use crate::scheduler::SchedulerParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HookParams {
    /// A cycle with no progress for this long is abandoned.
    pub ttl_minutes: i64,
    /// Consecutive completions after which triggers count as internal.
    pub internal_after: u32,
    /// Completed scheduling cycles required before other categories are targeted.
    pub scheduling_prerequisite: u32,
}

impl Default for HookParams {
    fn default() -> Self {
        Self { ttl_minutes: 7 * 24 * 60, internal_after: 5, scheduling_prerequisite: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub beta: f64,
    pub noise: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { beta: 10.0, noise: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub schema_version: u32,
    /// Root of every random stream in the engine.
    pub seed: u64,
    pub default_timezone: String,
    pub fbm: FbmParams,
    pub hook: HookParams,
    pub rewards: RewardCatalog,
    pub scheduler: SchedulerParams,
    pub notifier: NotifierParams,
    pub preparation: PrepParams,
    pub group: GroupParams,
    pub sim: SimParams,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            default_timezone: "UTC".into(),
            fbm: FbmParams::default(),
            hook: HookParams::default(),
            rewards: RewardCatalog::default(),
            scheduler: SchedulerParams::default(),
            notifier: NotifierParams::default(),
            preparation: PrepParams::default(),
            group: GroupParams::default(),
            sim: SimParams::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl EngineConfig {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let config: EngineConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(self.schema_version));
        }
        crate::domain::parse_tz(&self.default_timezone).map_err(|e| invalid(e.to_string()))?;
        self.fbm.validate().map_err(|e| invalid(e.to_string()))?;
        self.rewards.validate().map_err(|e| invalid(e.to_string()))?;
        self.scheduler.validate().map_err(invalid)?;
        if self.hook.ttl_minutes <= 0 {
            return Err(invalid("hook ttl must be positive"));
        }
        if self.hook.internal_after == 0 {
            return Err(invalid("internal_after must be positive"));
        }
        let n = &self.notifier;
        if n.defer_hours <= 0 || n.max_attempts == 0 || n.backoff_minutes <= 0 || n.channels.is_empty() {
            return Err(invalid("notifier durations, attempts and channels must be positive"));
        }
        let p = &self.preparation;
        if !p.bands.is_valid() {
            return Err(invalid("progress bands must satisfy 0 < amber < green <= 1"));
        }
        if p.pre_class_lead_minutes < 0 || p.post_class_delay_minutes < 0 {
            return Err(invalid("preparation lead and delay must be non-negative"));
        }
        let g = &self.group;
        if !(g.helper_percentile > 0.0 && g.helper_percentile <= 1.0) {
            return Err(invalid("helper_percentile must be in (0, 1]"));
        }
        if !(1..=5).contains(&g.endorse_min_rating) || !(1..=5).contains(&g.invite_min_effectiveness) {
            return Err(invalid("rating gates must be in 1..=5"));
        }
        if g.invite_window_weeks <= 0 {
            return Err(invalid("invite window must be positive"));
        }
        if !(self.sim.beta > 0.0) || !(0.0..=0.5).contains(&self.sim.noise) {
            return Err(invalid("sim beta must be positive and noise in [0, 0.5]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = EngineConfig::default();
        c.validate().unwrap();
        let json = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(EngineConfig::from_json(&json).unwrap(), c);
        assert_eq!(EngineConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn rejects_inconsistent_tau() {
        let err = EngineConfig::from_json(r#"{"fbm": {"tau": 0.3}}"#).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
        assert!(EngineConfig::from_json(r#"{"fbm": {"tau": 0.2, "motivation_threshold": 0.3}}"#).is_err());
        assert!(EngineConfig::from_json(r#"{"fbm": {"tau": 0.2}}"#).is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            r#"{"schema_version": 9}"#,
            r#"{"rewards": {"entries": [], "delivery_probability": 0.5}}"#,
            r#"{"rewards": {"entries": [{"kind": "streak_badge", "weight": 1, "templates": []}], "delivery_probability": 1.5}}"#,
            r#"{"preparation": {"bands": {"amber": 0.7, "green": 0.6}}}"#,
            r#"{"default_timezone": "Mars/Olympus"}"#,
            r#"{"notifier": {"channels": []}}"#,
        ] {
            assert!(EngineConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"seed": 7}"#).unwrap();
        assert_eq!(EngineConfig::load(&path).unwrap().seed, 7);
    }
}
