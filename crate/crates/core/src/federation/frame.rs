//! Length-prefixed JSON frames.
//!
//! A frame on the wire is a 4-byte big-endian length followed by that many
//! bytes of compact JSON `{"type", "experiment_id", "frame_seq", "body"}`.

use std::io::{self, Read};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bus::Envelope;
use crate::plan::ExecutionPlan;
use crate::time::{Micros, TimeBound};

pub const PROTO_VERSION: u32 = 1;
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FrameType {
    Hello,
    Plan,
    Tar,
    Tag,
    Msg,
    Stop,
    Ack,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Hello { lab_id: String, proto_version: u32 },
    Plan(Box<ExecutionPlan>),
    Tar { lab_id: String, local_min_us: TimeBound, pending_min_us: TimeBound },
    Tag { granted_until_us: Micros },
    Msg(Envelope),
    Stop { reason: String },
    Ack { of_type: FrameType, of_seq: u64 },
}

impl Body {
    pub fn frame_type(&self) -> FrameType {
        match self {
            Body::Hello { .. } => FrameType::Hello,
            Body::Plan(_) => FrameType::Plan,
            Body::Tar { .. } => FrameType::Tar,
            Body::Tag { .. } => FrameType::Tag,
            Body::Msg(_) => FrameType::Msg,
            Body::Stop { .. } => FrameType::Stop,
            Body::Ack { .. } => FrameType::Ack,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub experiment_id: String,
    pub frame_seq: u64,
    pub body: Body,
}

impl Frame {
    pub fn frame_type(&self) -> FrameType {
        self.body.frame_type()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("FrameTooLarge: {0} bytes")]
    FrameTooLarge(usize),
    #[error("Truncated: stream ended inside a frame")]
    Truncated,
    #[error("BadLength: prefix {0}")]
    BadLength(u32),
    #[error("BadFrame: {0}")]
    BadFrame(String),
    #[error("transport: {0}")]
    Io(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HelloBody {
    lab_id: String,
    proto_version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TarBody {
    lab_id: String,
    local_min_us: TimeBound,
    pending_min_us: TimeBound,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TagBody {
    granted_until_us: Micros,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StopBody {
    reason: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AckBody {
    of_type: FrameType,
    of_seq: u64,
}

#[derive(Serialize)]
struct WireOut<'a> {
    #[serde(rename = "type")]
    ty: FrameType,
    experiment_id: &'a str,
    frame_seq: u64,
    body: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn {
    #[serde(rename = "type")]
    ty: String,
    experiment_id: String,
    frame_seq: u64,
    body: Value,
}

fn body_value(body: &Body) -> Value {
    let v = match body {
        Body::Hello { lab_id, proto_version } => {
            serde_json::to_value(HelloBody { lab_id: lab_id.clone(), proto_version: *proto_version })
        }
        Body::Plan(plan) => serde_json::to_value(plan),
        Body::Tar { lab_id, local_min_us, pending_min_us } => serde_json::to_value(TarBody {
            lab_id: lab_id.clone(),
            local_min_us: *local_min_us,
            pending_min_us: *pending_min_us,
        }),
        Body::Tag { granted_until_us } => serde_json::to_value(TagBody { granted_until_us: *granted_until_us }),
        Body::Msg(env) => serde_json::to_value(env),
        Body::Stop { reason } => serde_json::to_value(StopBody { reason: reason.clone() }),
        Body::Ack { of_type, of_seq } => serde_json::to_value(AckBody { of_type: *of_type, of_seq: *of_seq }),
    };
    v.expect("frame bodies always serialize")
}

/// Canonical JSON of a frame, without the length prefix.
pub fn frame_json(frame: &Frame) -> String {
    serde_json::to_string(&WireOut {
        ty: frame.frame_type(),
        experiment_id: &frame.experiment_id,
        frame_seq: frame.frame_seq,
        body: body_value(&frame.body),
    })
    .expect("frames always serialize")
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let json = frame_json(frame);
    if json.len() > MAX_FRAME_BYTES {
        return Err(FrameError::FrameTooLarge(json.len()));
    }
    let mut out = Vec::with_capacity(4 + json.len());
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(json.as_bytes());
    Ok(out)
}

fn parse_body<T: serde::de::DeserializeOwned>(ty: &str, body: Value) -> Result<T, FrameError> {
    serde_json::from_value(body).map_err(|e| FrameError::BadFrame(format!("{ty} body: {e}")))
}

/// Parses the JSON part of a frame. Key order is not checked.
pub fn parse_frame_json(json: &[u8]) -> Result<Frame, FrameError> {
    let wire: WireIn = serde_json::from_slice(json).map_err(|e| FrameError::BadFrame(e.to_string()))?;
    let ty = wire.ty.as_str();
    let body = match ty {
        "HELLO" => {
            let b: HelloBody = parse_body(ty, wire.body)?;
            Body::Hello { lab_id: b.lab_id, proto_version: b.proto_version }
        }
        "PLAN" => Body::Plan(Box::new(parse_body(ty, wire.body)?)),
        "TAR" => {
            let b: TarBody = parse_body(ty, wire.body)?;
            Body::Tar { lab_id: b.lab_id, local_min_us: b.local_min_us, pending_min_us: b.pending_min_us }
        }
        "TAG" => {
            let b: TagBody = parse_body(ty, wire.body)?;
            Body::Tag { granted_until_us: b.granted_until_us }
        }
        "MSG" => Body::Msg(parse_body(ty, wire.body)?),
        "STOP" => {
            let b: StopBody = parse_body(ty, wire.body)?;
            Body::Stop { reason: b.reason }
        }
        "ACK" => {
            let b: AckBody = parse_body(ty, wire.body)?;
            Body::Ack { of_type: b.of_type, of_seq: b.of_seq }
        }
        other => return Err(FrameError::BadFrame(format!("unknown frame type {other:?}"))),
    };
    Ok(Frame { experiment_id: wire.experiment_id, frame_seq: wire.frame_seq, body })
}

fn check_prefix(prefix: [u8; 4]) -> Result<usize, FrameError> {
    let n = u32::from_be_bytes(prefix);
    if n == 0 || n as usize > MAX_FRAME_BYTES {
        return Err(FrameError::BadLength(n));
    }
    Ok(n as usize)
}

/// Decodes the first frame in `bytes`, returning it and the number of bytes
/// it occupied.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
    let Some(prefix) = bytes.get(..4) else {
        return Err(FrameError::Truncated);
    };
    let n = check_prefix(prefix.try_into().expect("4 bytes"))?;
    let Some(json) = bytes.get(4..4 + n) else {
        return Err(FrameError::Truncated);
    };
    Ok((parse_frame_json(json)?, 4 + n))
}

/// Reads one frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(reader: &mut impl Read) -> Result<Option<Frame>, FrameError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match reader.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(FrameError::Io(e.to_string())),
        }
    }
    let n = check_prefix(prefix)?;
    let mut json = vec![0u8; n];
    reader.read_exact(&mut json).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e.to_string()),
    })?;
    parse_frame_json(&json).map(Some)
}
