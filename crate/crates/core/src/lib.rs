//! Deterministic discrete-event simulator of block propagation over a
//! regional peer-to-peer network.
//!
//! Nodes mine blocks with exponentially distributed success times, announce
//! them with INV, fetch them with GETDATA and follow the longest chain. The
//! simulator reports the median time for a block to reach half the network
//! and the fork rate, overall and for node subgroups, and supports a relay
//! overlay and pluggable neighbor-selection policies.

pub mod engine;
pub mod error;
pub mod metrics;
pub mod mining;
pub mod protocol;
pub mod runner;
pub mod scenario;
pub mod strategy;
pub mod topology;

pub use engine::{Engine, SimTime};
pub use error::{ConfigError, EngineError, RunError, ScenarioError};
pub use metrics::RunReport;
pub use protocol::{BlockId, NodeId, Simulation};
pub use runner::{build, run, sweep, RunOptions};
pub use scenario::{load_scenario, Scenario};
