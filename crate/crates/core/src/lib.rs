pub mod aggregate;
pub mod answer;
pub mod cli;
pub mod config;
pub mod extraction;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod reasoning;
