//! The machine-readable experiment model.
//!
//! A scenario document is a strict JSON object with the top-level keys `id`,
//! `labs`, `components`, `links` and `run`. Unknown keys are rejected. Links
//! without a `channel` get the ideal channel (no latency, jitter, loss or
//! bandwidth limit).

mod validate;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::time::Micros;

pub use validate::{validate, Violation, ViolationCode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioModel {
    pub id: String,
    pub labs: Vec<LabDecl>,
    pub components: Vec<ComponentDecl>,
    pub links: Vec<LinkDecl>,
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabDecl {
    pub id: String,
    /// `host:port` of the lab's federation listener.
    pub endpoint: String,
    #[serde(default)]
    pub description: String,
}

impl LabDecl {
    /// Splits the endpoint into host and port, rejecting port 0.
    pub fn host_port(&self) -> Option<(&str, u16)> {
        parse_endpoint(&self.endpoint)
    }
}

pub(crate) fn parse_endpoint(endpoint: &str) -> Option<(&str, u16)> {
    let (host, port) = endpoint.rsplit_once(':')?;
    if host.is_empty() || port.is_empty() || !port.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let port: u16 = port.parse().ok()?;
    (port != 0).then_some((host, port))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    DiscreteEvent,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SgamLayer {
    Component,
    Communication,
    Information,
    Function,
    Business,
}

impl SgamLayer {
    pub const ALL: [SgamLayer; 5] = [
        SgamLayer::Component,
        SgamLayer::Communication,
        SgamLayer::Information,
        SgamLayer::Function,
        SgamLayer::Business,
    ];
}

/// A simulation model name plus its free-form parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDecl {
    pub id: String,
    pub lab: String,
    pub kind: ComponentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_us: Option<Micros>,
    pub model: ModelSpec,
    #[serde(default)]
    pub ports: Vec<PortDecl>,
    pub protocol: String,
    pub sgam_layer: SgamLayer,
}

impl ComponentDecl {
    pub fn port(&self, name: &str) -> Option<&PortDecl> {
        self.ports.iter().find(|p| p.name == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    In,
    Out,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortDecl {
    pub name: String,
    pub direction: Direction,
    pub quantity: String,
    pub unit: String,
}

/// A `(component, port)` pair.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRef {
    pub component: String,
    pub port: String,
}

impl PortRef {
    pub fn new(component: impl Into<String>, port: impl Into<String>) -> Self {
        PortRef { component: component.into(), port: port.into() }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.component, self.port)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDecl {
    pub from: PortRef,
    pub to: PortRef,
    #[serde(default)]
    pub channel: ChannelModel,
}

/// Link-level impairments, applied in simulated time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub latency_us: Micros,
    pub jitter_us: Micros,
    pub loss_prob: f64,
    /// Bytes per second; 0 means unlimited.
    #[serde(rename = "bandwidth_Bps")]
    pub bandwidth_bps: u64,
    pub reorder_allowed: bool,
    pub seed: u64,
}

impl ChannelModel {
    pub fn ideal() -> Self {
        ChannelModel::default()
    }

    /// True when no envelope can cross this channel in zero simulated time.
    ///
    /// Jitter can cancel latency entirely, but any bandwidth limit adds at
    /// least one microsecond of serialization for a non-empty payload.
    pub fn has_positive_min_delay(&self) -> bool {
        self.latency_us > self.jitter_us || self.bandwidth_bps > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub duration_us: Micros,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rt_factor: Option<f64>,
    pub experiment_id: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("SyntaxError at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("SchemaError at {path}: {message}")]
    Schema { path: String, message: String },
}

impl ParseError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ParseError::Schema { path: path.into(), message: message.into() }
    }
}

/// Parses and resolves a scenario document.
///
/// Beyond the JSON schema this enforces the `step_us` presence rule and that
/// every component names a declared lab. All other invariants are left to
/// [`validate`], so that a structurally sound document with e.g. duplicate
/// ids still parses.
pub fn parse_scenario(text: &str) -> Result<ScenarioModel, ParseError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let model: ScenarioModel = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        classify(inner, path)
    })?;
    de.end().map_err(|err| classify(err, ".".into()))?;

    let labs: BTreeSet<&str> = model.labs.iter().map(|l| l.id.as_str()).collect();
    for (i, c) in model.components.iter().enumerate() {
        if !labs.contains(c.lab.as_str()) {
            return Err(ParseError::schema(format!("components[{i}].lab"), format!("undeclared lab {:?}", c.lab)));
        }
        match (c.kind, c.step_us) {
            (ComponentKind::Continuous, None) => {
                return Err(ParseError::schema(
                    format!("components[{i}].step_us"),
                    "required for Continuous components",
                ))
            }
            (ComponentKind::DiscreteEvent, Some(_)) => {
                return Err(ParseError::schema(
                    format!("components[{i}].step_us"),
                    "only allowed for Continuous components",
                ))
            }
            _ => {}
        }
    }
    Ok(model)
}

fn classify(err: serde_json::Error, path: String) -> ParseError {
    use serde_json::error::Category;
    match err.classify() {
        Category::Syntax | Category::Eof | Category::Io => {
            ParseError::Syntax { line: err.line(), column: err.column(), message: err.to_string() }
        }
        Category::Data => ParseError::Schema { path, message: err.to_string() },
    }
}

/// Renders a scenario as pretty-printed JSON with all defaults explicit.
pub fn serialize_scenario(model: &ScenarioModel) -> String {
    serde_json::to_string_pretty(model).expect("scenario models always serialize")
}

/// Restricts a model to one SGAM layer.
///
/// Keeps the labs unchanged, the components tagged with `layer` and the links
/// whose both endpoints survive.
pub fn layer_view(model: &ScenarioModel, layer: SgamLayer) -> ScenarioModel {
    let components: Vec<ComponentDecl> = model.components.iter().filter(|c| c.sgam_layer == layer).cloned().collect();
    let kept: BTreeSet<&str> = components.iter().map(|c| c.id.as_str()).collect();
    let links = model
        .links
        .iter()
        .filter(|l| kept.contains(l.from.component.as_str()) && kept.contains(l.to.component.as_str()))
        .cloned()
        .collect();
    ScenarioModel { id: model.id.clone(), labs: model.labs.clone(), components, links, run: model.run.clone() }
}
