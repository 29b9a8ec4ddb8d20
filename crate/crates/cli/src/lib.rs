//! Service binding for the study-habit engine: snapshot store and HTTP API.

pub mod api;
pub mod store;
