//! Command-line front end: run configurations, data generation, experiment
//! dispatch and report aggregation.

pub mod config;
pub mod data;
pub mod report;
pub mod run;
