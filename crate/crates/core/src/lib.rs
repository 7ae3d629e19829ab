//! Discrete-event simulator of bursty web client/server traffic carried by
//! TCP over ATM ABR virtual circuits, with explicit-rate feedback computed
//! at the switches.
//!
//! The scenario is a two-switch path whose middle link is the bottleneck:
//! many low-duty-cycle web connections share it, each riding one VC pair.
//! Runs are fully deterministic for a given seed and configuration.

pub mod abr;
pub mod engine;
pub mod erica;
pub mod fabric;
pub mod metrics;
pub mod scenario;
pub mod selftest;
pub mod sim;
pub mod tcp;
pub mod www;

pub use engine::{EventHandle, RngStream, SimTime, Simulator};
pub use fabric::{Cell, CellBody, FrameInfo, LinkId, PortId, RmInfo, VcId};
pub use metrics::{compute_efficiency, MetricsCollector, RunMetrics};
pub use scenario::{ConfigError, ScenarioConfig};
pub use sim::{run_scenario, RunOptions, Simulation};
