//! Experiment driver: configuration, the named pipelines and their CSV
//! outputs.

pub mod commands;
pub mod config;
pub mod output;
pub mod pipelines;
