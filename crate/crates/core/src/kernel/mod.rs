//! Coordinated execution.
//!
//! The kernel owns every component of one or more labs and advances a single
//! simulated clock. The next component to step is the one with the smallest
//! next-step time, ties broken by `(lab id, component id)`. Envelopes are
//! delivered when their receiver steps at or after their delivery time; if
//! several arrive for one in-port, the latest wins.
//!
//! Across labs the kernel runs under time grants: it only steps components
//! whose next-step time is within the grant, and hands envelopes for other
//! labs to the federation layer through its outbox.

mod federate;
mod trace;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bus::{self, adapt, ChannelState, Envelope, RouteId, RouteOutcome};
use crate::plan::{ExecutionPlan, Route};
use crate::scenario::{ComponentKind, RunConfig};
use crate::time::{Micros, TimeBound};

pub use federate::{Federate, ModelError, ModelRegistry, NextStep, Params, StepOutput, StopReason};
pub use trace::{normalize, read_jsonl, records_to_jsonl, RecordKind, RunOutcome, Trace, TraceRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("UnknownModel: component {component:?} names unregistered model {model:?}")]
    UnknownModel { component: String, model: String },
    #[error("InitFailure: component {component:?}: {message}")]
    InitFailure { component: String, message: String },
    #[error("StepFailure: component {component:?} at t={t_us}: {message}")]
    StepFailure { component: String, t_us: Micros, message: String },
    #[error("CausalityViolation: {0}")]
    CausalityViolation(String),
    #[error("GrantViolation: {component:?} would step at {t_us} beyond grant {grant}")]
    GrantViolation { component: String, t_us: Micros, grant: Micros },
    #[error("grant regressed from {previous} to {requested}")]
    GrantRegression { previous: Micros, requested: Micros },
    #[error("envelope on unknown ingress route {0}")]
    UnknownRoute(RouteId),
    #[error("kernel already stopped")]
    Stopped,
}

/// Upper bound on how far a lab may advance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimeGrant {
    pub granted_until_us: Micros,
}

/// Lower bound on the timestamp of any future activity across the federation.
///
/// The minimum of all labs' next local step times and the earliest pending
/// inter-lab delivery. When everything is at infinity nothing can happen any
/// more and the grant is the end of the run.
pub fn lbts(
    local_minima: impl IntoIterator<Item = TimeBound>,
    pending_inter_lab_min: TimeBound,
    duration_us: Micros,
) -> TimeGrant {
    let bound = local_minima.into_iter().fold(pending_inter_lab_min, TimeBound::min);
    TimeGrant { granted_until_us: bound.finite().unwrap_or(duration_us) }
}

/// Chooses the lab that runs next and how far it may go.
///
/// The lab holding the smallest `(next local step, lab id)` runs. It may go
/// up to, but not past, the next `(time, lab)` position of any other lab, so
/// that steps across the federation happen in exactly the same global order
/// as in a single process. Returns `None` when no lab has work left.
pub fn next_grant(labs: &[(&str, TimeBound)], duration_us: Micros) -> Option<(usize, TimeGrant)> {
    let active = labs
        .iter()
        .enumerate()
        .filter_map(|(i, (lab, t))| t.finite().filter(|&t| t <= duration_us).map(|t| (t, *lab, i)));
    let (t_sel, lab_sel, sel) = active.clone().min()?;
    let others = active.filter(|&(_, _, i)| i != sel).min();
    let until = match others {
        None => duration_us,
        Some((t, lab, _)) if lab < lab_sel => t - 1,
        Some((t, _, _)) => t,
    };
    debug_assert!(until >= t_sel);
    Some((sel, TimeGrant { granted_until_us: until.min(duration_us) }))
}

struct Pending {
    port: String,
    value: f64,
    t_send: Micros,
}

struct Slot {
    id: String,
    kind: ComponentKind,
    step_us: Option<Micros>,
    federate: Box<dyn Federate>,
    next: TimeBound,
    /// Route indices leaving this component, in route-id order.
    outgoing: Vec<usize>,
    pending: BTreeMap<(Micros, RouteId, u64), Pending>,
}

enum Target {
    Local(usize),
    Remote,
}

struct RouteRuntime {
    route: Route,
    state: ChannelState,
    next_seq: u64,
    target: Target,
}

struct Pacer {
    start: Instant,
    rt_factor: f64,
}

impl Pacer {
    fn wait_for(&self, t: Micros) {
        let target = self.start + Duration::from_secs_f64(t as f64 / 1e6 / self.rt_factor);
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
        }
    }
}

pub struct Kernel {
    experiment_id: String,
    duration_us: Micros,
    slots: Vec<Slot>,
    by_id: BTreeMap<String, usize>,
    routes: Vec<RouteRuntime>,
    ingress: BTreeMap<RouteId, (usize, String)>,
    t_global: Micros,
    grant: Option<Micros>,
    records: Vec<TraceRecord>,
    outbox: Vec<Envelope>,
    outcome: Option<RunOutcome>,
    pacer: Option<Pacer>,
}

impl Kernel {
    /// Instantiates and initializes every component launched by `plans`.
    ///
    /// Passing all plans of a scenario gives a single-process run in which
    /// cross-lab routes are delivered locally.
    pub fn start<'a>(
        plans: impl IntoIterator<Item = &'a ExecutionPlan>,
        registry: &ModelRegistry,
        run: &RunConfig,
    ) -> Result<Kernel, KernelError> {
        let plans: Vec<&ExecutionPlan> = plans.into_iter().collect();

        let mut launches: Vec<(&str, &crate::plan::Launch)> =
            plans.iter().flat_map(|p| p.launches.iter().map(move |l| (p.lab.as_str(), l))).collect();
        launches.sort_by(|a, b| (a.0, a.1.component.as_str()).cmp(&(b.0, b.1.component.as_str())));

        let mut slots = Vec::with_capacity(launches.len());
        for (_, launch) in &launches {
            let federate = registry.create(&launch.model).ok_or_else(|| KernelError::UnknownModel {
                component: launch.component.clone(),
                model: launch.model.clone(),
            })?;
            slots.push(Slot {
                id: launch.component.clone(),
                kind: launch.kind,
                step_us: launch.step_us,
                federate,
                next: TimeBound::Inf,
                outgoing: Vec::new(),
                pending: BTreeMap::new(),
            });
        }
        let by_id: BTreeMap<String, usize> = slots.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();

        let mut routes: Vec<RouteRuntime> = Vec::new();
        let mut ingress = BTreeMap::new();
        for plan in &plans {
            for route in plan.local_routes.iter().chain(&plan.egress_routes) {
                let target = match by_id.get(&route.to.component) {
                    Some(&i) => Target::Local(i),
                    None => Target::Remote,
                };
                routes.push(RouteRuntime {
                    route: route.clone(),
                    state: ChannelState::new(route.channel.seed ^ run.seed, route.route_id),
                    next_seq: 0,
                    target,
                });
            }
            for route in &plan.ingress_routes {
                if by_id.contains_key(&route.from.component) {
                    continue;
                }
                if let Some(&i) = by_id.get(&route.to.component) {
                    ingress.insert(route.route_id, (i, route.to.port.clone()));
                }
            }
        }
        routes.sort_by_key(|r| r.route.route_id);
        for (ri, r) in routes.iter().enumerate() {
            if let Some(&i) = by_id.get(&r.route.from.component) {
                slots[i].outgoing.push(ri);
            }
        }

        let mut kernel = Kernel {
            experiment_id: run.experiment_id.clone(),
            duration_us: run.duration_us,
            slots,
            by_id,
            routes,
            ingress,
            t_global: 0,
            grant: None,
            records: Vec::new(),
            outbox: Vec::new(),
            outcome: None,
            pacer: None,
        };

        for (i, (_, launch)) in launches.iter().enumerate() {
            let slot = &mut kernel.slots[i];
            match slot.federate.init(0, &launch.params) {
                Ok(next) => {
                    slot.next = match slot.kind {
                        ComponentKind::Continuous => TimeBound::At(slot.step_us.unwrap_or(1)),
                        ComponentKind::DiscreteEvent => next.into(),
                    };
                }
                Err(e) => {
                    for s in &mut kernel.slots[..i] {
                        s.federate.stop(StopReason::ComponentFailure);
                    }
                    return Err(KernelError::InitFailure { component: launch.component.clone(), message: e.0 });
                }
            }
        }
        if let Some(rt) = run.rt_factor {
            kernel.pacer = Some(Pacer { start: Instant::now(), rt_factor: rt });
        }
        Ok(kernel)
    }

    pub fn experiment_id(&self) -> &str {
        &self.experiment_id
    }

    pub fn duration_us(&self) -> Micros {
        self.duration_us
    }

    pub fn t_global_us(&self) -> Micros {
        self.t_global
    }

    pub fn next_step_of(&self, component: &str) -> Option<TimeBound> {
        self.by_id.get(component).map(|&i| self.slots[i].next)
    }

    /// Next-step time per component, in `(lab, id)` order.
    pub fn next_steps(&self) -> Vec<(&str, TimeBound)> {
        self.slots.iter().map(|s| (s.id.as_str(), s.next)).collect()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn is_stopped(&self) -> bool {
        self.outcome.is_some()
    }

    /// The component due next, or `None` when every component is done.
    pub fn next_component(&self) -> Option<&str> {
        self.next_slot().map(|i| self.slots[i].id.as_str())
    }

    fn next_slot(&self) -> Option<usize> {
        // slots are sorted by (lab, id), so the first minimum wins ties
        let mut best: Option<(Micros, usize)> = None;
        for (i, s) in self.slots.iter().enumerate() {
            if let TimeBound::At(t) = s.next {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// Earliest next step within the run horizon, or infinity.
    pub fn local_min(&self) -> TimeBound {
        match self.next_slot().map(|i| self.slots[i].next) {
            Some(TimeBound::At(t)) if t <= self.duration_us => TimeBound::At(t),
            _ => TimeBound::Inf,
        }
    }

    pub fn grant(&self) -> Option<Micros> {
        self.grant
    }

    /// Raises the time grant. Grants never move backwards.
    pub fn set_grant(&mut self, grant: TimeGrant) -> Result<(), KernelError> {
        if let Some(previous) = self.grant {
            if grant.granted_until_us < previous {
                return Err(KernelError::GrantRegression { previous, requested: grant.granted_until_us });
            }
        }
        self.grant = Some(grant.granted_until_us);
        Ok(())
    }

    /// Steps `component`, which must be the one due next.
    pub fn advance(&mut self, component: &str) -> Result<(), KernelError> {
        if self.outcome.is_some() {
            return Err(KernelError::Stopped);
        }
        let c = *self
            .by_id
            .get(component)
            .ok_or_else(|| KernelError::CausalityViolation(format!("unknown component {component:?}")))?;
        if self.next_slot() != Some(c) {
            return Err(KernelError::CausalityViolation(format!("{component:?} stepped out of order")));
        }
        self.advance_slot(c)
    }

    fn advance_slot(&mut self, c: usize) -> Result<(), KernelError> {
        let TimeBound::At(t) = self.slots[c].next else {
            unreachable!("next_slot only yields scheduled components");
        };
        if let Some(grant) = self.grant {
            if t > grant {
                return Err(KernelError::GrantViolation { component: self.slots[c].id.clone(), t_us: t, grant });
            }
        }
        if t < self.t_global {
            return Err(KernelError::CausalityViolation(format!(
                "clock would move back from {} to {t}",
                self.t_global
            )));
        }
        if let Some(p) = &self.pacer {
            p.wait_for(t);
        }
        self.t_global = t;

        let slot = &mut self.slots[c];
        let due: Vec<((Micros, RouteId, u64), Pending)> = {
            let later = slot.pending.split_off(&(t + 1, 0, 0));
            std::mem::replace(&mut slot.pending, later).into_iter().collect()
        };
        let mut inputs: Vec<(String, f64)> = Vec::new();
        for ((t_deliver, route_id, seq), p) in due {
            self.records.push(TraceRecord {
                t_us: t_deliver,
                kind: RecordKind::Deliver,
                component: slot.id.clone(),
                port: Some(p.port.clone()),
                value: Some(p.value),
                route_id: Some(route_id),
                seq: Some(seq),
                reason: None,
                t_send_us: Some(p.t_send),
            });
            match inputs.iter_mut().find(|(port, _)| *port == p.port) {
                Some(entry) => entry.1 = p.value,
                None => inputs.push((p.port, p.value)),
            }
        }
        self.records.push(TraceRecord::step(t, &slot.id));

        let result = slot.federate.step(t, &inputs).map_err(|e| KernelError::StepFailure {
            component: slot.id.clone(),
            t_us: t,
            message: e.0,
        })?;

        slot.next = match slot.kind {
            ComponentKind::Continuous => TimeBound::At(t + slot.step_us.unwrap_or(1)),
            ComponentKind::DiscreteEvent => match result.next {
                Some(NextStep::At(n)) if n > t => TimeBound::At(n),
                Some(NextStep::Done) => TimeBound::Inf,
                other => {
                    return Err(KernelError::StepFailure {
                        component: slot.id.clone(),
                        t_us: t,
                        message: format!("next step {other:?} is not after {t}"),
                    })
                }
            },
        };
        if let Some((port, v)) = result.outputs.iter().find(|(_, v)| !v.is_finite()) {
            return Err(KernelError::StepFailure {
                component: slot.id.clone(),
                t_us: t,
                message: format!("non-finite output {v} on port {port:?}"),
            });
        }

        let outgoing = slot.outgoing.clone();
        for ri in outgoing {
            let from_port = &self.routes[ri].route.from.port;
            let Some(&(_, value)) = result.outputs.iter().rev().find(|(p, _)| p == from_port) else {
                continue;
            };
            self.send(ri, t, value, c)?;
        }
        Ok(())
    }

    fn send(&mut self, ri: usize, t: Micros, value: f64, sender: usize) -> Result<(), KernelError> {
        let rt = &mut self.routes[ri];
        let route = &rt.route;
        let (value, unit) = match &route.adapter {
            Some(spec) => adapt(value, &route.unit, spec).map_err(|e| KernelError::StepFailure {
                component: self.slots[sender].id.clone(),
                t_us: t,
                message: e.to_string(),
            })?,
            None => (value, route.unit.clone()),
        };
        let quantity = match &route.adapter {
            Some(spec) => spec.rename_quantity(&route.quantity),
            None => route.quantity.clone(),
        };
        let mut envelope = Envelope {
            route_id: route.route_id,
            seq: rt.next_seq,
            t_send_us: t,
            t_deliver_us: t,
            quantity,
            unit,
            value,
            experiment_id: self.experiment_id.clone(),
        };
        rt.next_seq += 1;
        let RouteOutcome::Delivered(t_deliver) = bus::route(&envelope, &route.channel, &mut rt.state) else {
            return Ok(());
        };
        if t_deliver < self.t_global {
            return Err(KernelError::CausalityViolation(format!(
                "route {} computed delivery {t_deliver} before {}",
                route.route_id, self.t_global
            )));
        }
        envelope.t_deliver_us = t_deliver;
        match rt.target {
            Target::Local(dest) => {
                let port = route.to.port.clone();
                self.slots[dest].pending.insert(
                    (t_deliver, envelope.route_id, envelope.seq),
                    Pending { port, value: envelope.value, t_send: t },
                );
            }
            Target::Remote => self.outbox.push(envelope),
        }
        Ok(())
    }

    /// Accepts an envelope that crossed from another lab.
    pub fn accept_ingress(&mut self, envelope: Envelope) -> Result<(), KernelError> {
        let (dest, port) =
            self.ingress.get(&envelope.route_id).cloned().ok_or(KernelError::UnknownRoute(envelope.route_id))?;
        if envelope.t_deliver_us < envelope.t_send_us || envelope.t_deliver_us < self.t_global {
            return Err(KernelError::CausalityViolation(format!(
                "ingress on route {} delivers at {} (sent {}, local clock {})",
                envelope.route_id, envelope.t_deliver_us, envelope.t_send_us, self.t_global
            )));
        }
        self.slots[dest].pending.insert(
            (envelope.t_deliver_us, envelope.route_id, envelope.seq),
            Pending { port, value: envelope.value, t_send: envelope.t_send_us },
        );
        Ok(())
    }

    /// Envelopes produced for other labs since the last call.
    pub fn take_outbox(&mut self) -> Vec<Envelope> {
        std::mem::take(&mut self.outbox)
    }

    /// Steps every component due at or before `limit`, also bounded by the
    /// run duration and the current grant.
    pub fn run_until(&mut self, limit: Micros) -> Result<(), KernelError> {
        let limit = limit.min(self.duration_us).min(self.grant.unwrap_or(Micros::MAX));
        while let Some(c) = self.next_slot() {
            match self.slots[c].next {
                TimeBound::At(t) if t <= limit => self.advance_slot(c)?,
                _ => break,
            }
        }
        Ok(())
    }

    /// Delivers `stop` to every component exactly once.
    pub fn stop_all(&mut self, reason: StopReason, t_us: Micros, failure: Option<String>) {
        if self.outcome.is_some() {
            return;
        }
        for slot in &mut self.slots {
            slot.federate.stop(reason);
            self.records.push(TraceRecord::stop(t_us, &slot.id, reason));
        }
        self.outcome = Some(RunOutcome { reason, final_t_us: t_us, failure });
    }

    /// Stops the run because of `err`, using the matching stop reason.
    pub fn abort(&mut self, err: &KernelError) {
        let reason = match err {
            KernelError::StepFailure { .. } | KernelError::InitFailure { .. } => StopReason::ComponentFailure,
            _ => StopReason::OperatorAbort,
        };
        self.stop_all(reason, self.t_global, Some(err.to_string()));
    }

    /// Runs a self-contained kernel to the end of its horizon.
    pub fn run_to_completion(mut self) -> Trace {
        match self.run_until(self.duration_us) {
            Ok(()) => self.stop_all(StopReason::Completed, self.duration_us, None),
            Err(e) => self.abort(&e),
        }
        self.finish()
    }

    /// Consumes the kernel, returning its trace. Stops it first if needed.
    pub fn finish(mut self) -> Trace {
        if self.outcome.is_none() {
            self.stop_all(StopReason::OperatorAbort, self.t_global, None);
        }
        Trace {
            experiment_id: self.experiment_id,
            records: self.records,
            outcome: self.outcome.expect("stopped above"),
        }
    }
}
