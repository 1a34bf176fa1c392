//! Gateway and command-line front end for the vagent engine.

pub mod app;
pub mod cli;
pub mod config;
pub mod server;

pub use app::{ApiError, App, SCHEMA_VERSION};
pub use config::AppConfig;
