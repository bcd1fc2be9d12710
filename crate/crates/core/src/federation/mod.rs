//! Coupling of lab coordinator processes.
//!
//! Labs talk over TCP in a star around the master lab. Frames are tagged
//! with an experiment id so that several experiments can share one
//! connection without seeing each other's traffic.

mod coordinator;
mod demux;
mod frame;
mod session;

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::kernel::{Kernel, KernelError, ModelRegistry, StopReason, Trace};
use crate::plan::CompiledScenario;
use crate::scenario::RunConfig;

pub use coordinator::{route_destinations, run_master, run_member, stop_broadcast, ACK_TIMEOUT, PLAN_TIMEOUT};
pub use demux::{Demux, Dispatch, Inbound};
pub use frame::{
    decode_frame, encode_frame, frame_json, parse_frame_json, read_frame, Body, Frame, FrameError, FrameType,
    MAX_FRAME_BYTES, PROTO_VERSION,
};
pub use session::{ExperimentLink, LinkState, Session};

pub const DEFAULT_PORT: u16 = 7841;
pub const BIND_ENV: &str = "GRIDWEAVE_BIND";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("VersionMismatch: local {local}, remote {remote}")]
    VersionMismatch { local: u32, remote: u32 },
    #[error("DuplicateExperiment: {0}")]
    DuplicateExperiment(String),
    #[error("UnknownExperiment: {0}")]
    UnknownExperiment(String),
    #[error("{0:?} frame before handshake")]
    NotReady(FrameType),
    #[error("connect failed: {0}")]
    Connect(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("peer disconnected")]
    PeerDisconnect,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("unknown lab {0:?}")]
    UnknownLab(String),
}

/// Connection settings for [`run_lab`].
#[derive(Clone, Debug)]
pub struct LabOptions {
    /// Listen address of the master. Defaults to the lab's endpoint.
    pub bind: Option<String>,
    /// How long the master waits for all members, and each member for a
    /// HELLO.
    pub connect_timeout: Duration,
    pub connect_attempts: u32,
    pub connect_backoff: Duration,
}

impl Default for LabOptions {
    fn default() -> Self {
        LabOptions {
            bind: None,
            connect_timeout: Duration::from_secs(10),
            connect_attempts: 3,
            connect_backoff: Duration::from_secs(1),
        }
    }
}

impl LabOptions {
    /// Defaults, with the bind address taken from `GRIDWEAVE_BIND` if set.
    pub fn from_env() -> Self {
        LabOptions { bind: std::env::var(BIND_ENV).ok().filter(|s| !s.is_empty()), ..LabOptions::default() }
    }
}

/// Listen address for a master: an explicit bind address (a bare host gets
/// the default port) or else the lab's endpoint.
pub fn bind_address(bind: Option<&str>, endpoint: &str) -> String {
    match bind {
        Some(b) if b.rsplit_once(':').is_some_and(|(_, p)| p.parse::<u16>().is_ok()) && !b.ends_with(']') => {
            b.to_string()
        }
        Some(b) => format!("{b}:{DEFAULT_PORT}"),
        None => endpoint.to_string(),
    }
}

/// Result of one lab's part in a run.
#[derive(Debug)]
pub struct LabRun {
    pub trace: Trace,
    /// Grant rounds the master issued (0 on members).
    pub rounds: u64,
}

/// Runs one lab of a compiled scenario as its own coordinator process.
///
/// The master listens and waits for every other lab; members connect to
/// the master. If the federation cannot be formed the local components are
/// stopped with `peer_disconnect`.
pub fn run_lab(
    compiled: &CompiledScenario,
    lab: &str,
    registry: &ModelRegistry,
    run: &RunConfig,
    opts: &LabOptions,
) -> Result<LabRun, FederationError> {
    let plan = compiled.plans.get(lab).ok_or_else(|| FederationError::UnknownLab(lab.to_string()))?;
    let kernel = Kernel::start([plan], registry, run)?;
    let topology = &compiled.topology;
    let experiment = &run.experiment_id;

    if plan.master {
        let members: Vec<&str> = topology.members.iter().map(|m| m.lab.as_str()).filter(|l| *l != lab).collect();
        if members.is_empty() {
            return Ok(LabRun { trace: kernel.run_to_completion(), rounds: 0 });
        }
        let endpoint = topology.endpoint(lab).unwrap_or_default();
        let addr = bind_address(opts.bind.as_deref(), endpoint);
        let listener = TcpListener::bind(&addr).map_err(|e| FederationError::Connect(format!("bind {addr}: {e}")))?;
        let deadline = Instant::now() + opts.connect_timeout;
        let mut links = BTreeMap::new();
        while links.len() < members.len() {
            let joined = Session::accept(&listener, deadline).and_then(|session| {
                let mut link = session.register(experiment)?;
                let left = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1));
                let peer = link.handshake(lab, left)?;
                Ok((peer, link))
            });
            match joined {
                Ok((peer, link)) if members.contains(&peer.as_str()) && !links.contains_key(&peer) => {
                    links.insert(peer, link);
                }
                Ok((_, link)) => link.session().close(),
                Err(FederationError::Timeout(_)) => {
                    stop_broadcast(&mut links, StopReason::PeerDisconnect.as_str());
                    return Ok(LabRun { trace: abandoned(kernel, "members did not connect in time"), rounds: 0 });
                }
                Err(_) => {}
            }
        }
        let (trace, rounds) = run_master(kernel, compiled, lab, links);
        Ok(LabRun { trace, rounds })
    } else {
        let master = topology.endpoint(&topology.master).unwrap_or_default();
        let joined = Session::connect(master, opts.connect_attempts, opts.connect_backoff, opts.connect_timeout)
            .and_then(|session| {
                let mut link = session.register(experiment)?;
                link.handshake(lab, opts.connect_timeout)?;
                Ok(link)
            });
        match joined {
            Ok(link) => Ok(LabRun { trace: run_member(kernel, plan, link), rounds: 0 }),
            Err(e) => Ok(LabRun { trace: abandoned(kernel, &e.to_string()), rounds: 0 }),
        }
    }
}

fn abandoned(mut kernel: Kernel, why: &str) -> Trace {
    kernel.stop_all(StopReason::PeerDisconnect, 0, Some(why.to_string()));
    kernel.finish()
}
