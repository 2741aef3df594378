//! Command-line front end and HTTP service for the coreference workbench.

pub mod commands;
pub mod config;
pub mod http;
