//! Command-line tools and HTTP service for the tinydet pipeline, plus the
//! run store that records what every command produced.

pub mod cli;
pub mod commands;
pub mod error;
pub mod media;
pub mod pipeline;
pub mod runs;
pub mod service;
pub mod settings;
