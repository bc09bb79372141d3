//! Deterministic discrete-event simulation of a multi-site grid driving
//! the brokers, stores, optimizers and catalogue end to end.

mod engine;
mod generator;
mod scenario;

pub use engine::{run_simulation, MonitorSpan, SimError, SimOptions, SimReport};
pub use generator::{generate_scenario, GenParams};
pub use scenario::{
    CeConfig, FaultEntry, FileSeed, FtdConfig, Scenario, ScenarioError, SeConfig, SiteConfig,
    WorkloadEntry,
};
