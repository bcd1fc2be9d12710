use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::time::{Micros, TimeBound};

pub type Params = Map<String, Value>;

/// When a federate wants to be stepped next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextStep {
    At(Micros),
    Done,
}

impl From<TimeBound> for NextStep {
    fn from(t: TimeBound) -> Self {
        match t {
            TimeBound::At(t) => NextStep::At(t),
            TimeBound::Inf => NextStep::Done,
        }
    }
}

impl From<NextStep> for TimeBound {
    fn from(n: NextStep) -> Self {
        match n {
            NextStep::At(t) => TimeBound::At(t),
            NextStep::Done => TimeBound::Inf,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutput {
    pub outputs: Vec<(String, f64)>,
    /// Ignored for Continuous components, which always step again one
    /// `step_us` later.
    pub next: Option<NextStep>,
}

impl StepOutput {
    pub fn new(next: NextStep) -> Self {
        StepOutput { outputs: Vec::new(), next: Some(next) }
    }

    pub fn with(mut self, port: impl Into<String>, value: f64) -> Self {
        self.outputs.push((port.into(), value));
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    ComponentFailure,
    OperatorAbort,
    PeerDisconnect,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Completed => "completed",
            StopReason::ComponentFailure => "component_failure",
            StopReason::OperatorAbort => "operator_abort",
            StopReason::PeerDisconnect => "peer_disconnect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [StopReason::Completed, StopReason::ComponentFailure, StopReason::OperatorAbort, StopReason::PeerDisconnect]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ModelError(pub String);

impl ModelError {
    pub fn new(msg: impl Into<String>) -> Self {
        ModelError(msg.into())
    }
}

/// The stepping contract every simulated component implements.
///
/// The kernel calls `init` once at time zero, then `step` at the times the
/// federate asks for, then `stop` exactly once.
pub trait Federate: Send {
    fn init(&mut self, t0: Micros, params: &Params) -> Result<NextStep, ModelError>;

    /// `inputs` holds at most one value per in-port: the latest delivery.
    fn step(&mut self, t: Micros, inputs: &[(String, f64)]) -> Result<StepOutput, ModelError>;

    fn stop(&mut self, _reason: StopReason) {}
}

type Factory = Box<dyn Fn() -> Box<dyn Federate> + Send + Sync>;

/// Model name to constructor.
#[derive(Default)]
pub struct ModelRegistry {
    factories: BTreeMap<String, Factory>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        ModelRegistry::default()
    }

    pub fn register<F, M>(&mut self, name: impl Into<String>, factory: F) -> &mut Self
    where
        F: Fn() -> M + Send + Sync + 'static,
        M: Federate + 'static,
    {
        self.factories.insert(name.into(), Box::new(move || Box::new(factory())));
        self
    }

    pub fn create(&self, name: &str) -> Option<Box<dyn Federate>> {
        self.factories.get(name).map(|f| f())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}
