//! Cross-lab co-simulation orchestration for smart grid experiments.
//!
//! A scenario file describes labs, components, ports and links. It is
//! [parsed](scenario::parse_scenario), [validated](scenario::validate) and
//! [compiled](plan::compile) into one execution plan per lab. The
//! [kernel](kernel::Kernel) then steps every component in a deterministic
//! order while the [bus] emulates channel latency, jitter, loss and
//! bandwidth in simulated time. Labs in different processes are coupled by
//! the [federation] layer, which keeps traces identical to a single-process
//! run.
//!
//! See the `examples/` directory for one runnable program per feature.

pub mod bus;
pub mod cli;
pub mod components;
pub mod federation;
pub mod kernel;
pub mod plan;
pub mod scenario;
pub mod time;

pub use kernel::{Kernel, Trace, TraceRecord};
pub use plan::{compile, CompiledScenario, ExecutionPlan};
pub use scenario::{parse_scenario, validate, ScenarioModel};
pub use time::{Micros, TimeBound};
