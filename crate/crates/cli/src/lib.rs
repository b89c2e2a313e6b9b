//! Configuration, parallel execution, CSV output and plotting for
//! glinbandit experiments.

pub mod app;
pub mod config;
pub mod output;
pub mod plot;
pub mod runner;
pub mod suites;
