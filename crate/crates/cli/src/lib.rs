//! Configuration and HTTP service behind the `thinkfirst` binary.

pub mod config;
pub mod service;
