use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc::{channel, Receiver, Sender};

use super::frame::{Frame, FrameType};
use super::FederationError;

/// What an experiment sees from its session.
#[derive(Clone, Debug, PartialEq)]
pub enum Inbound {
    Frame(Frame),
    Disconnected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dispatch {
    Delivered,
    /// A HELLO for an experiment this side has not registered yet.
    Buffered,
    /// For an experiment that has finished on this side.
    Discarded,
    UnknownExperiment,
}

/// Early HELLOs kept per session.
const EARLY_LIMIT: usize = 64;

/// Routes incoming frames to the experiment they belong to.
///
/// Every registered experiment gets its own ordered queue, so frames of one
/// experiment are never seen by another.
#[derive(Default)]
pub struct Demux {
    queues: BTreeMap<String, Sender<Inbound>>,
    finished: BTreeSet<String>,
    early: Vec<Frame>,
    closed: bool,
}

impl Demux {
    pub fn new() -> Self {
        Demux::default()
    }

    pub fn register(&mut self, experiment_id: &str) -> Result<Receiver<Inbound>, FederationError> {
        if self.queues.contains_key(experiment_id) {
            return Err(FederationError::DuplicateExperiment(experiment_id.to_string()));
        }
        let (tx, rx) = channel();
        let (mine, rest): (Vec<Frame>, Vec<Frame>) =
            std::mem::take(&mut self.early).into_iter().partition(|f| f.experiment_id == experiment_id);
        self.early = rest;
        for f in mine {
            let _ = tx.send(Inbound::Frame(f));
        }
        if self.closed {
            let _ = tx.send(Inbound::Disconnected);
        }
        self.finished.remove(experiment_id);
        self.queues.insert(experiment_id.to_string(), tx);
        Ok(rx)
    }

    pub fn unregister(&mut self, experiment_id: &str) {
        if self.queues.remove(experiment_id).is_some() {
            self.finished.insert(experiment_id.to_string());
        }
    }

    pub fn is_registered(&self, experiment_id: &str) -> bool {
        self.queues.contains_key(experiment_id)
    }

    pub fn dispatch(&mut self, frame: Frame) -> Dispatch {
        if let Some(tx) = self.queues.get(&frame.experiment_id) {
            // a closed receiver means the experiment already finished
            let _ = tx.send(Inbound::Frame(frame));
            return Dispatch::Delivered;
        }
        if self.finished.contains(&frame.experiment_id) {
            return Dispatch::Discarded;
        }
        if frame.frame_type() == FrameType::Hello && self.early.len() < EARLY_LIMIT {
            self.early.push(frame);
            return Dispatch::Buffered;
        }
        Dispatch::UnknownExperiment
    }

    /// Tells every experiment that the transport is gone.
    pub fn close(&mut self) {
        self.closed = true;
        for tx in self.queues.values() {
            let _ = tx.send(Inbound::Disconnected);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::frame::Body;
    use super::*;

    fn msg(exp: &str, seq: u64) -> Frame {
        Frame { experiment_id: exp.into(), frame_seq: seq, body: Body::Tag { granted_until_us: seq } }
    }

    fn drain(rx: &Receiver<Inbound>) -> Vec<u64> {
        rx.try_iter()
            .map(|i| match i {
                Inbound::Frame(f) => f.frame_seq,
                Inbound::Disconnected => u64::MAX,
            })
            .collect()
    }

    #[test]
    fn keyed_dispatch_and_isolation() {
        let mut d = Demux::new();
        let a = d.register("exp-a").unwrap();
        let b = d.register("exp-b").unwrap();
        assert_eq!(d.dispatch(msg("exp-a", 0)), Dispatch::Delivered);
        assert_eq!(d.dispatch(msg("exp-c", 1)), Dispatch::UnknownExperiment);
        assert_eq!(d.dispatch(msg("exp-b", 2)), Dispatch::Delivered);
        assert_eq!(d.dispatch(msg("exp-a", 3)), Dispatch::Delivered);
        assert_eq!(drain(&a), [0, 3]);
        assert_eq!(drain(&b), [2]);
    }

    #[test]
    fn finished_experiments_are_quiet() {
        let mut d = Demux::new();
        let a = d.register("a").unwrap();
        drop(a);
        d.unregister("a");
        assert_eq!(d.dispatch(msg("a", 0)), Dispatch::Discarded);
        assert_eq!(d.dispatch(msg("b", 0)), Dispatch::UnknownExperiment);
    }

    #[test]
    fn duplicate_registration() {
        let mut d = Demux::new();
        let _a = d.register("exp-a").unwrap();
        assert_eq!(d.register("exp-a").err(), Some(FederationError::DuplicateExperiment("exp-a".into())));
    }

    #[test]
    fn early_hello_is_replayed_on_register() {
        let mut d = Demux::new();
        let hello = Frame {
            experiment_id: "late".into(),
            frame_seq: 4,
            body: Body::Hello { lab_id: "x".into(), proto_version: 1 },
        };
        assert_eq!(d.dispatch(hello), Dispatch::Buffered);
        let rx = d.register("late").unwrap();
        assert_eq!(drain(&rx), [4]);
    }

    #[test]
    fn close_reaches_current_and_future_experiments() {
        let mut d = Demux::new();
        let a = d.register("a").unwrap();
        d.close();
        let b = d.register("b").unwrap();
        assert_eq!(drain(&a), [u64::MAX]);
        assert_eq!(drain(&b), [u64::MAX]);
    }
}
