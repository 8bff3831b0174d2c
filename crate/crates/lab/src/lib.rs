//! Batch runner for the issl-core laboratory: scenario configs, output
//! files with manifests, and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod scenarios;
