//! HTTP service for live chat with a model and blind A/B judgment studies.

pub mod app;
pub mod chat;
pub mod config;
pub mod error;
pub mod study;

pub use app::{router, serve, AppState};
pub use config::ServiceConfig;
pub use error::ApiError;
