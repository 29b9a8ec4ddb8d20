//! Study-habit engine: questionnaire-based performance models, behaviour-model trigger
//! gating, habit-loop cycles, weekly scheduling, class preparation, group study and a
//! synthetic-student simulator.

pub mod config;
pub mod domain;
pub mod engine;
pub mod fbm;
pub mod group;
pub mod hook;
pub mod notifier;
pub mod performance;
pub mod preparation;
pub mod scheduler;
pub mod sim;
pub mod ttm;

pub use config::EngineConfig;
pub use domain::{ClassId, HabitCategory, SessionId, StudentId, TimeBlock, Timestamp, WeekTag, WeekTimetable};
pub use engine::{Engine, EngineError, EngineResult};
