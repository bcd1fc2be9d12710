use std::io::Write;
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex, Weak};
use std::time::{Duration, Instant};

use super::demux::{Demux, Dispatch, Inbound};
use super::frame::{encode_frame, read_frame, Body, Frame, FrameType, PROTO_VERSION};
use super::FederationError;

struct Writer {
    stream: TcpStream,
    next_seq: u64,
}

struct Inner {
    writer: Mutex<Writer>,
    demux: Mutex<Demux>,
    control: TcpStream,
}

impl Inner {
    fn send(&self, experiment_id: &str, body: Body) -> Result<u64, FederationError> {
        let mut w = self.writer.lock().expect("writer lock");
        let frame = Frame { experiment_id: experiment_id.to_string(), frame_seq: w.next_seq, body };
        let bytes = encode_frame(&frame)?;
        w.stream.write_all(&bytes).map_err(|_| FederationError::PeerDisconnect)?;
        w.next_seq += 1;
        Ok(frame.frame_seq)
    }
}

impl Drop for Inner {
    fn drop(&mut self) {
        let _ = self.control.shutdown(Shutdown::Both);
    }
}

/// One transport connection between two lab coordinators. Any number of
/// experiments can share it.
#[derive(Clone)]
pub struct Session {
    inner: Arc<Inner>,
}

impl Session {
    /// Wraps a connected stream and starts its reader thread.
    pub fn from_stream(stream: TcpStream) -> Result<Session, FederationError> {
        let io = |e: std::io::Error| FederationError::Connect(e.to_string());
        stream.set_nodelay(true).map_err(io)?;
        let reader = stream.try_clone().map_err(io)?;
        let control = stream.try_clone().map_err(io)?;
        let inner = Arc::new(Inner {
            writer: Mutex::new(Writer { stream, next_seq: 0 }),
            demux: Mutex::new(Demux::new()),
            control,
        });
        let weak = Arc::downgrade(&inner);
        std::thread::Builder::new()
            .name("gridweave-session".into())
            .spawn(move || read_loop(reader, weak))
            .map_err(io)?;
        Ok(Session { inner })
    }

    /// Connects to `addr`, trying `attempts` times `backoff` apart.
    pub fn connect(
        addr: &str,
        attempts: u32,
        backoff: Duration,
        timeout: Duration,
    ) -> Result<Session, FederationError> {
        let mut last = String::from("no attempt made");
        for attempt in 0..attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(backoff);
            }
            let addrs = match addr.to_socket_addrs() {
                Ok(a) => a.collect::<Vec<_>>(),
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            for a in addrs {
                match TcpStream::connect_timeout(&a, timeout) {
                    Ok(stream) => return Session::from_stream(stream),
                    Err(e) => last = e.to_string(),
                }
            }
        }
        Err(FederationError::Connect(format!("{addr}: {last}")))
    }

    /// Accepts one connection, giving up at `deadline`.
    pub fn accept(listener: &TcpListener, deadline: Instant) -> Result<Session, FederationError> {
        let io = |e: std::io::Error| FederationError::Connect(e.to_string());
        listener.set_nonblocking(true).map_err(io)?;
        loop {
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false).map_err(io)?;
                    return Session::from_stream(stream);
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(FederationError::Timeout("no peer connected".into()));
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(io(e)),
            }
        }
    }

    /// Registers an experiment on this session.
    pub fn register(&self, experiment_id: &str) -> Result<ExperimentLink, FederationError> {
        let rx = self.inner.demux.lock().expect("demux lock").register(experiment_id)?;
        Ok(ExperimentLink {
            session: self.clone(),
            experiment_id: experiment_id.to_string(),
            rx,
            state: LinkState::New,
            peer_lab: None,
        })
    }

    /// Sends a raw frame body. Assigns the next frame sequence number.
    pub fn send(&self, experiment_id: &str, body: Body) -> Result<u64, FederationError> {
        self.inner.send(experiment_id, body)
    }

    /// Closes the transport. Experiments on both ends see a disconnect.
    pub fn close(&self) {
        let _ = self.inner.control.shutdown(Shutdown::Both);
    }
}

fn read_loop(mut stream: TcpStream, inner: Weak<Inner>) {
    while let Ok(Some(frame)) = read_frame(&mut stream) {
        let Some(inner) = inner.upgrade() else { return };
        let ty = frame.frame_type();
        let exp = frame.experiment_id.clone();
        let outcome = inner.demux.lock().expect("demux lock").dispatch(frame);
        if outcome == Dispatch::UnknownExperiment && ty != FrameType::Stop {
            let _ = inner.send(&exp, Body::Stop { reason: "unknown_experiment".into() });
        }
    }
    if let Some(inner) = inner.upgrade() {
        inner.demux.lock().expect("demux lock").close();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkState {
    New,
    Ready,
    Stopped,
}

/// One experiment's view of a session.
pub struct ExperimentLink {
    session: Session,
    experiment_id: String,
    rx: Receiver<Inbound>,
    state: LinkState,
    peer_lab: Option<String>,
}

impl ExperimentLink {
    pub fn experiment_id(&self) -> &str {
        &self.experiment_id
    }

    pub fn state(&self) -> LinkState {
        self.state
    }

    pub fn peer_lab(&self) -> Option<&str> {
        self.peer_lab.as_deref()
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Exchanges HELLO frames. Returns the peer's lab id.
    pub fn handshake(&mut self, my_lab: &str, timeout: Duration) -> Result<String, FederationError> {
        self.handshake_as(my_lab, PROTO_VERSION, timeout)
    }

    /// Like [`handshake`](Self::handshake) but announcing `proto_version`.
    pub fn handshake_as(
        &mut self,
        my_lab: &str,
        proto_version: u32,
        timeout: Duration,
    ) -> Result<String, FederationError> {
        if self.state != LinkState::New {
            return Err(FederationError::Protocol(format!("handshake in state {:?}", self.state)));
        }
        self.session.send(&self.experiment_id, Body::Hello { lab_id: my_lab.to_string(), proto_version })?;
        match self.recv_timeout(timeout) {
            Some(Inbound::Frame(Frame { body: Body::Hello { lab_id, proto_version: remote }, .. })) => {
                if remote != PROTO_VERSION || proto_version != PROTO_VERSION {
                    self.state = LinkState::Stopped;
                    self.session.close();
                    return Err(FederationError::VersionMismatch { local: proto_version, remote });
                }
                self.state = LinkState::Ready;
                self.peer_lab = Some(lab_id.clone());
                Ok(lab_id)
            }
            Some(Inbound::Frame(f)) => {
                Err(FederationError::Protocol(format!("expected HELLO, got {:?}", f.frame_type())))
            }
            Some(Inbound::Disconnected) => Err(FederationError::PeerDisconnect),
            None => Err(FederationError::Timeout("no HELLO from peer".into())),
        }
    }

    pub fn send(&mut self, body: Body) -> Result<u64, FederationError> {
        let ty = body.frame_type();
        if matches!(ty, FrameType::Msg | FrameType::Tar | FrameType::Tag) && self.state != LinkState::Ready {
            return Err(FederationError::NotReady(ty));
        }
        self.session.send(&self.experiment_id, body)
    }

    pub fn recv(&mut self) -> Inbound {
        self.rx.recv().unwrap_or(Inbound::Disconnected)
    }

    /// `None` on timeout.
    pub fn recv_timeout(&mut self, timeout: Duration) -> Option<Inbound> {
        match self.rx.recv_timeout(timeout) {
            Ok(i) => Some(i),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => Some(Inbound::Disconnected),
        }
    }

    pub fn mark_stopped(&mut self) {
        self.state = LinkState::Stopped;
    }
}

impl Drop for ExperimentLink {
    fn drop(&mut self) {
        if let Ok(mut d) = self.session.inner.demux.lock() {
            d.unregister(&self.experiment_id);
        }
    }
}
