//! Master and member loops.
//!
//! The master holds one link per member lab. Members report their next local
//! step time in TAR frames; the master picks the lab that runs next and grants
//! it a window with a TAG frame. Only one lab runs at a time, so the steps of
//! all labs happen in the same order as in a single-process run. Envelopes for
//! another lab travel as MSG frames through the master, which forwards them
//! before it grants time to their destination.

use std::collections::BTreeMap;
use std::time::Duration;

use super::demux::Inbound;
use super::frame::{Body, Frame, FrameType};
use super::session::ExperimentLink;
use super::FederationError;
use crate::bus::{Envelope, RouteId};
use crate::kernel::{lbts, next_grant, Kernel, KernelError, StopReason, Trace};
use crate::plan::{CompiledScenario, ExecutionPlan};
use crate::time::{Micros, TimeBound};

/// How long a STOP waits for its ACK.
pub const ACK_TIMEOUT: Duration = Duration::from_secs(5);
/// How long the master waits for a member to acknowledge its plan.
pub const PLAN_TIMEOUT: Duration = Duration::from_secs(10);

/// Destination lab of every cross-lab route.
pub fn route_destinations(compiled: &CompiledScenario) -> BTreeMap<RouteId, String> {
    compiled.plans.values().flat_map(|p| p.ingress_routes.iter().map(move |r| (r.route_id, p.lab.clone()))).collect()
}

fn stop_reason(text: &str) -> StopReason {
    StopReason::parse(text).unwrap_or(StopReason::OperatorAbort)
}

fn stop_time(kernel: &Kernel, reason: StopReason) -> Micros {
    match reason {
        StopReason::Completed => kernel.duration_us(),
        _ => kernel.t_global_us(),
    }
}

/// Sends STOP to every link and waits up to [`ACK_TIMEOUT`] for each ACK.
///
/// Returns the labs that did not acknowledge. Every link ends up Stopped.
pub fn stop_broadcast(links: &mut BTreeMap<String, ExperimentLink>, reason: &str) -> Vec<String> {
    let mut sent = Vec::new();
    for (lab, link) in links.iter_mut() {
        if let Ok(seq) = link.send(Body::Stop { reason: reason.to_string() }) {
            sent.push((lab.clone(), seq));
        }
    }
    let mut silent: Vec<String> = links.keys().filter(|lab| !sent.iter().any(|(l, _)| l == *lab)).cloned().collect();
    for (lab, seq) in sent {
        let link = links.get_mut(&lab).expect("sent on this link");
        let deadline = std::time::Instant::now() + ACK_TIMEOUT;
        let acked = loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match link.recv_timeout(left) {
                Some(Inbound::Frame(Frame { body: Body::Ack { of_type: FrameType::Stop, of_seq }, .. }))
                    if of_seq == seq =>
                {
                    break true
                }
                Some(Inbound::Frame(_)) => continue,
                Some(Inbound::Disconnected) | None => break false,
            }
        };
        if !acked {
            silent.push(lab);
        }
    }
    for link in links.values_mut() {
        link.mark_stopped();
    }
    silent.sort();
    silent
}

struct Master<'a> {
    kernel: Kernel,
    lab: &'a str,
    links: BTreeMap<String, ExperimentLink>,
    destinations: BTreeMap<RouteId, String>,
    /// `(local_min, pending_min)` per lab from its last TAR.
    reports: BTreeMap<String, (TimeBound, TimeBound)>,
    rounds: u64,
}

/// Why a federated run ended early.
enum Abort {
    Local(KernelError),
    Remote { lab: String, reason: StopReason },
    Lost(String),
}

impl Master<'_> {
    fn forward(&mut self, envelope: Envelope) -> Result<(), Abort> {
        let dest = self
            .destinations
            .get(&envelope.route_id)
            .cloned()
            .ok_or(Abort::Local(KernelError::UnknownRoute(envelope.route_id)))?;
        if dest == self.lab {
            return self.kernel.accept_ingress(envelope).map_err(Abort::Local);
        }
        let link = self.links.get_mut(&dest).ok_or(Abort::Lost(dest.clone()))?;
        link.send(Body::Msg(envelope)).map_err(|_| Abort::Lost(dest))?;
        Ok(())
    }

    fn flush_local(&mut self) -> Result<(), Abort> {
        for env in self.kernel.take_outbox() {
            self.forward(env)?;
        }
        Ok(())
    }

    /// Handles frames from `lab` until its TAR arrives.
    fn await_tar(&mut self, lab: &str) -> Result<(), Abort> {
        loop {
            let inbound = self.links.get_mut(lab).expect("member link").recv();
            let frame = match inbound {
                Inbound::Frame(f) => f,
                Inbound::Disconnected => return Err(Abort::Lost(lab.to_string())),
            };
            match frame.body {
                Body::Msg(env) => self.forward(env)?,
                Body::Tar { lab_id, local_min_us, pending_min_us } if lab_id == lab => {
                    self.reports.insert(lab_id, (local_min_us, pending_min_us));
                    return Ok(());
                }
                Body::Stop { reason } => {
                    let link = self.links.get_mut(lab).expect("member link");
                    let _ = link.send(Body::Ack { of_type: FrameType::Stop, of_seq: frame.frame_seq });
                    link.mark_stopped();
                    return Err(Abort::Remote { lab: lab.to_string(), reason: stop_reason(&reason) });
                }
                other => {
                    return Err(Abort::Local(KernelError::CausalityViolation(format!(
                        "unexpected {:?} from {lab}",
                        other.frame_type()
                    ))))
                }
            }
        }
    }

    fn send_plans(&mut self, compiled: &CompiledScenario) -> Result<(), Abort> {
        let mut waiting = Vec::new();
        for (lab, link) in self.links.iter_mut() {
            let plan = compiled.plans.get(lab).ok_or(Abort::Lost(lab.clone()))?;
            let seq = link.send(Body::Plan(Box::new(plan.clone()))).map_err(|_| Abort::Lost(lab.clone()))?;
            waiting.push((lab.clone(), seq));
        }
        for (lab, seq) in waiting {
            let link = self.links.get_mut(&lab).expect("member link");
            match link.recv_timeout(PLAN_TIMEOUT) {
                Some(Inbound::Frame(Frame { body: Body::Ack { of_type: FrameType::Plan, of_seq }, .. }))
                    if of_seq == seq => {}
                Some(Inbound::Frame(Frame { body: Body::Stop { reason }, frame_seq, .. })) => {
                    let _ = link.send(Body::Ack { of_type: FrameType::Stop, of_seq: frame_seq });
                    link.mark_stopped();
                    return Err(Abort::Remote { lab, reason: stop_reason(&reason) });
                }
                _ => return Err(Abort::Lost(lab)),
            }
        }
        Ok(())
    }

    fn run(&mut self, compiled: &CompiledScenario) -> Result<(), Abort> {
        self.send_plans(compiled)?;
        let mut awaiting: Vec<String> = self.links.keys().cloned().collect();
        let duration = self.kernel.duration_us();
        loop {
            for lab in std::mem::take(&mut awaiting) {
                self.await_tar(&lab)?;
            }
            self.flush_local()?;
            self.reports.insert(self.lab.to_string(), (self.kernel.local_min(), TimeBound::Inf));

            let labs: Vec<(&str, TimeBound)> = self.reports.iter().map(|(l, r)| (l.as_str(), r.0)).collect();
            let floor = lbts(
                self.reports.values().map(|r| r.0),
                self.reports.values().map(|r| r.1).fold(TimeBound::Inf, TimeBound::min),
                duration,
            );
            let Some((i, grant)) = next_grant(&labs, duration) else {
                return Ok(());
            };
            debug_assert!(grant >= floor || floor.granted_until_us == duration);
            let selected = labs[i].0.to_string();
            self.rounds += 1;
            if selected == self.lab {
                self.kernel.set_grant(grant).map_err(Abort::Local)?;
                self.kernel.run_until(grant.granted_until_us).map_err(Abort::Local)?;
                self.flush_local()?;
            } else {
                let link = self.links.get_mut(&selected).expect("member link");
                link.send(Body::Tag { granted_until_us: grant.granted_until_us })
                    .map_err(|_| Abort::Lost(selected.clone()))?;
                awaiting.push(selected);
            }
        }
    }
}

/// Runs the master side of one experiment.
///
/// `links` holds a Ready link per member lab, keyed by lab id. Returns this
/// lab's trace and the number of grant rounds.
pub fn run_master(
    kernel: Kernel,
    compiled: &CompiledScenario,
    lab: &str,
    links: BTreeMap<String, ExperimentLink>,
) -> (Trace, u64) {
    let mut m =
        Master { kernel, lab, links, destinations: route_destinations(compiled), reports: BTreeMap::new(), rounds: 0 };
    match m.run(compiled) {
        Ok(()) => {
            stop_broadcast(&mut m.links, StopReason::Completed.as_str());
            let t = m.kernel.duration_us();
            m.kernel.stop_all(StopReason::Completed, t, None);
        }
        Err(Abort::Local(e)) => {
            let reason = match e {
                KernelError::StepFailure { .. } => StopReason::ComponentFailure,
                _ => StopReason::OperatorAbort,
            };
            stop_broadcast(&mut m.links, reason.as_str());
            m.kernel.abort(&e);
        }
        Err(Abort::Remote { lab, reason }) => {
            m.links.remove(&lab);
            stop_broadcast(&mut m.links, reason.as_str());
            let t = stop_time(&m.kernel, reason);
            m.kernel.stop_all(reason, t, Some(format!("lab {lab} stopped: {reason}")));
        }
        Err(Abort::Lost(lab)) => {
            m.links.remove(&lab);
            stop_broadcast(&mut m.links, StopReason::PeerDisconnect.as_str());
            let t = m.kernel.t_global_us();
            m.kernel.stop_all(StopReason::PeerDisconnect, t, Some(format!("lost connection to lab {lab}")));
        }
    }
    (m.kernel.finish(), m.rounds)
}

fn send_tar(kernel: &mut Kernel, link: &mut ExperimentLink, lab: &str) -> Result<(), FederationError> {
    let outbox = kernel.take_outbox();
    let pending = outbox.iter().map(|e| TimeBound::At(e.t_deliver_us)).fold(TimeBound::Inf, TimeBound::min);
    for env in outbox {
        link.send(Body::Msg(env))?;
    }
    link.send(Body::Tar { lab_id: lab.to_string(), local_min_us: kernel.local_min(), pending_min_us: pending })?;
    Ok(())
}

/// Runs a member lab of one experiment over a Ready link to the master.
pub fn run_member(mut kernel: Kernel, plan: &ExecutionPlan, mut link: ExperimentLink) -> Trace {
    let lab = plan.lab.clone();
    let lost = |kernel: &mut Kernel| {
        let t = kernel.t_global_us();
        kernel.stop_all(StopReason::PeerDisconnect, t, Some("lost connection to master".into()));
    };
    let mut planned = false;
    loop {
        let frame = match link.recv() {
            Inbound::Frame(f) => f,
            Inbound::Disconnected => {
                lost(&mut kernel);
                break;
            }
        };
        let result = match frame.body {
            Body::Plan(p) => {
                if *p != *plan {
                    let _ = link.send(Body::Stop { reason: StopReason::OperatorAbort.as_str().into() });
                    kernel.stop_all(
                        StopReason::OperatorAbort,
                        0,
                        Some("plan from master differs from local compilation".into()),
                    );
                    break;
                }
                planned = true;
                link.send(Body::Ack { of_type: FrameType::Plan, of_seq: frame.frame_seq })
                    .and_then(|_| send_tar(&mut kernel, &mut link, &lab))
            }
            Body::Msg(env) if planned => match kernel.accept_ingress(env) {
                Ok(()) => Ok(()),
                Err(e) => Err(FederationError::Kernel(e)),
            },
            Body::Tag { granted_until_us } if planned => {
                let step = kernel
                    .set_grant(crate::kernel::TimeGrant { granted_until_us })
                    .and_then(|_| kernel.run_until(granted_until_us));
                match step {
                    Ok(()) => send_tar(&mut kernel, &mut link, &lab),
                    Err(e) => Err(FederationError::Kernel(e)),
                }
            }
            Body::Stop { reason } => {
                let reason = stop_reason(&reason);
                let t = stop_time(&kernel, reason);
                kernel.stop_all(
                    reason,
                    t,
                    (reason != StopReason::Completed).then(|| format!("stopped by master: {reason}")),
                );
                let _ = link.send(Body::Ack { of_type: FrameType::Stop, of_seq: frame.frame_seq });
                link.mark_stopped();
                break;
            }
            other => Err(FederationError::Protocol(format!("unexpected {:?}", other.frame_type()))),
        };
        match result {
            Ok(()) => {}
            Err(FederationError::Kernel(e)) => {
                let reason = match e {
                    KernelError::StepFailure { .. } => StopReason::ComponentFailure,
                    _ => StopReason::OperatorAbort,
                };
                kernel.abort(&e);
                if let Ok(seq) = link.send(Body::Stop { reason: reason.as_str().into() }) {
                    wait_for_ack(&mut link, seq);
                }
                break;
            }
            Err(FederationError::PeerDisconnect) => {
                lost(&mut kernel);
                break;
            }
            Err(e) => {
                let t = kernel.t_global_us();
                kernel.stop_all(StopReason::OperatorAbort, t, Some(e.to_string()));
                let _ = link.send(Body::Stop { reason: StopReason::OperatorAbort.as_str().into() });
                break;
            }
        }
    }
    link.mark_stopped();
    kernel.finish()
}

fn wait_for_ack(link: &mut ExperimentLink, seq: u64) {
    let deadline = std::time::Instant::now() + ACK_TIMEOUT;
    loop {
        let left = deadline.saturating_duration_since(std::time::Instant::now());
        match link.recv_timeout(left) {
            Some(Inbound::Frame(Frame { body: Body::Ack { of_type: FrameType::Stop, of_seq }, .. }))
                if of_seq == seq =>
            {
                return
            }
            Some(Inbound::Frame(_)) => {}
            Some(Inbound::Disconnected) | None => return,
        }
    }
}
