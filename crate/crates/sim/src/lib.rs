//! Discrete-event simulation of the retail CBDC protocol.
//!
//! A [`Harness`] owns every actor from `cbdc-core`, a simulated network for
//! the spend path, and the scripted events of a [`ScenarioConfig`]. Runs are
//! fully determined by the scenario seed; [`RunReport`] is the canonical
//! summary and includes the result of every audit.

pub mod audit;
pub mod config;
pub mod harness;
pub mod network;
pub mod report;

mod random;

pub use audit::AuditResult;
pub use config::{Action, ConfigError, FaultKind, FaultSpec, ScenarioConfig, ScriptEvent};
pub use harness::{ActionError, Harness, PaymentReceipt, PaymentStatus};
pub use report::RunReport;

/// Runs `config` to completion and reports.
pub fn run_scenario(config: ScenarioConfig) -> Result<RunReport, ConfigError> {
    let mut h = Harness::new(config)?;
    h.run_to_end();
    Ok(RunReport::from_harness(&h))
}
