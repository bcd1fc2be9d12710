//! Compilation of a scenario into per-lab execution plans.
//!
//! Every link becomes exactly one [`Route`], numbered in declaration order.
//! Routes inside a lab are local; a route crossing labs is listed as egress in
//! the source lab's plan and as ingress in the destination lab's plan, under
//! the same id. Adapters are inserted wherever the endpoints disagree on
//! protocol or unit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::bus::{unit_factor, AdapterSpec, RouteId};
use crate::scenario::{validate, ChannelModel, ComponentKind, PortRef, ScenarioModel, Violation};
use crate::time::Micros;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Launch {
    pub component: String,
    pub model: String,
    pub params: Map<String, Value>,
    pub kind: ComponentKind,
    pub step_us: Option<Micros>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub route_id: RouteId,
    pub from: PortRef,
    pub to: PortRef,
    pub channel: ChannelModel,
    pub adapter: Option<AdapterSpec>,
    /// Quantity and unit of the source port, before adaptation.
    pub quantity: String,
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionPlan {
    pub lab: String,
    pub launches: Vec<Launch>,
    pub local_routes: Vec<Route>,
    pub egress_routes: Vec<Route>,
    pub ingress_routes: Vec<Route>,
    pub master: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub lab: String,
    pub endpoint: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederationTopology {
    pub master: String,
    pub members: Vec<Member>,
    pub experiment_id: String,
}

impl FederationTopology {
    pub fn endpoint(&self, lab: &str) -> Option<&str> {
        self.members.iter().find(|m| m.lab == lab).map(|m| m.endpoint.as_str())
    }
}

/// Result of [`compile`]: one plan per lab, keyed and ordered by lab id.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledScenario {
    pub plans: BTreeMap<String, ExecutionPlan>,
    pub topology: FederationTopology,
}

impl CompiledScenario {
    /// The lab that owns `component`.
    pub fn lab_of(&self, component: &str) -> Option<&str> {
        self.plans.values().find(|p| p.launches.iter().any(|l| l.component == component)).map(|p| p.lab.as_str())
    }

    /// Plans in lab-id order, serialized as a pretty JSON array.
    pub fn plans_json(&self) -> String {
        let plans: Vec<&ExecutionPlan> = self.plans.values().collect();
        serde_json::to_string_pretty(&plans).expect("plans always serialize")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("NoAdapter: cannot bridge {from_protocol}/{from_unit} to {to_protocol}/{to_unit}")]
pub struct NoAdapter {
    pub from_protocol: String,
    pub from_unit: String,
    pub to_protocol: String,
    pub to_unit: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("route {route_id}: {source}")]
    NoAdapter { route_id: RouteId, source: NoAdapter },
    #[error("scenario is invalid ({} violations)", .0.len())]
    Invalid(Vec<Violation>),
}

/// Registered protocol bridges: `(from_protocol, to_protocol)` to a quantity
/// rename map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdapterRegistry {
    renames: BTreeMap<(String, String), BTreeMap<String, String>>,
}

impl AdapterRegistry {
    pub fn empty() -> Self {
        AdapterRegistry::default()
    }

    /// The built-in bridges between the toy protocols used by the reference
    /// models.
    pub fn builtin() -> Self {
        let mut reg = AdapterRegistry::empty();
        reg.register_bidirectional(
            "smb-json",
            "mosaik-json",
            [("active-power", "P"), ("reactive-power", "Q"), ("voltage-magnitude", "Vm"), ("irradiance", "G")],
        );
        reg
    }

    pub fn register(
        &mut self,
        from_protocol: &str,
        to_protocol: &str,
        rename: impl IntoIterator<Item = (impl Into<String>, impl Into<String>)>,
    ) {
        let map = rename.into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        self.renames.insert((from_protocol.to_string(), to_protocol.to_string()), map);
    }

    pub fn register_bidirectional(
        &mut self,
        a: &str,
        b: &str,
        rename: impl IntoIterator<Item = (&'static str, &'static str)> + Clone,
    ) {
        self.register(a, b, rename.clone());
        self.register(b, a, rename.into_iter().map(|(x, y)| (y, x)));
    }

    pub fn lookup(&self, from_protocol: &str, to_protocol: &str) -> Option<&BTreeMap<String, String>> {
        self.renames.get(&(from_protocol.to_string(), to_protocol.to_string()))
    }
}

/// Chooses the adapter bridging two port endpoints.
///
/// A single adapter covers one mismatch; endpoints that differ in both
/// protocol and unit are not bridgeable.
pub fn select_adapter(
    registry: &AdapterRegistry,
    from_protocol: &str,
    from_unit: &str,
    to_protocol: &str,
    to_unit: &str,
) -> Result<AdapterSpec, NoAdapter> {
    let fail = || NoAdapter {
        from_protocol: from_protocol.to_string(),
        from_unit: from_unit.to_string(),
        to_protocol: to_protocol.to_string(),
        to_unit: to_unit.to_string(),
    };
    match (from_protocol == to_protocol, from_unit == to_unit) {
        (true, true) => Ok(AdapterSpec::Identity),
        (true, false) => unit_factor(from_unit, to_unit)
            .map(|factor| AdapterSpec::UnitScale {
                factor,
                from_unit: from_unit.to_string(),
                to_unit: to_unit.to_string(),
            })
            .ok_or_else(fail),
        (false, true) => registry
            .lookup(from_protocol, to_protocol)
            .map(|rename| AdapterSpec::KeyRename { rename: rename.clone() })
            .ok_or_else(fail),
        (false, false) => Err(fail()),
    }
}

/// The coordinating lab: the smallest lab id, compared byte-wise.
pub fn assign_master(model: &ScenarioModel) -> &str {
    model.labs.iter().map(|l| l.id.as_str()).min().expect("scenario has at least one lab")
}

pub fn compile(model: &ScenarioModel) -> Result<CompiledScenario, CompileError> {
    compile_with(model, &AdapterRegistry::builtin())
}

pub fn compile_with(model: &ScenarioModel, registry: &AdapterRegistry) -> Result<CompiledScenario, CompileError> {
    let violations = validate(model);
    if !violations.is_empty() {
        return Err(CompileError::Invalid(violations));
    }
    let master = assign_master(model).to_string();

    let mut plans: BTreeMap<String, ExecutionPlan> = model
        .labs
        .iter()
        .map(|lab| {
            (
                lab.id.clone(),
                ExecutionPlan {
                    lab: lab.id.clone(),
                    launches: Vec::new(),
                    local_routes: Vec::new(),
                    egress_routes: Vec::new(),
                    ingress_routes: Vec::new(),
                    master: lab.id == master,
                },
            )
        })
        .collect();

    for c in &model.components {
        plans.get_mut(&c.lab).expect("validated: lab exists").launches.push(Launch {
            component: c.id.clone(),
            model: c.model.name.clone(),
            params: c.model.params.clone(),
            kind: c.kind,
            step_us: c.step_us,
        });
    }

    let component = |id: &str| model.components.iter().find(|c| c.id == id).expect("validated: endpoint exists");

    for (i, link) in model.links.iter().enumerate() {
        let route_id = RouteId::try_from(i).expect("fewer than 2^32 links");
        let src = component(&link.from.component);
        let dst = component(&link.to.component);
        let src_port = src.port(&link.from.port).expect("validated");
        let dst_port = dst.port(&link.to.port).expect("validated");
        let adapter = select_adapter(registry, &src.protocol, &src_port.unit, &dst.protocol, &dst_port.unit)
            .map_err(|source| CompileError::NoAdapter { route_id, source })?;
        let route = Route {
            route_id,
            from: link.from.clone(),
            to: link.to.clone(),
            channel: link.channel.clone(),
            adapter: (adapter != AdapterSpec::Identity).then_some(adapter),
            quantity: src_port.quantity.clone(),
            unit: src_port.unit.clone(),
        };
        if src.lab == dst.lab {
            plans.get_mut(&src.lab).unwrap().local_routes.push(route);
        } else {
            plans.get_mut(&src.lab).unwrap().egress_routes.push(route.clone());
            plans.get_mut(&dst.lab).unwrap().ingress_routes.push(route);
        }
    }

    let topology = FederationTopology {
        master,
        members: model.labs.iter().map(|l| Member { lab: l.id.clone(), endpoint: l.endpoint.clone() }).collect(),
        experiment_id: model.run.experiment_id.clone(),
    };
    Ok(CompiledScenario { plans, topology })
}
