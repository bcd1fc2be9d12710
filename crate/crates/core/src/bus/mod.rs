//! Simulation message bus.
//!
//! Envelopes travel along routes. Each route owns a [`ChannelState`] that
//! emulates loss, latency, jitter and bandwidth in simulated time, drawing
//! from a per-route SplitMix64 stream. The draw count per envelope is fixed
//! (one for a dropped envelope, two otherwise) so that a run is reproducible
//! from the seeds alone.

mod adapter;
mod rng;

use serde::{Deserialize, Serialize};

use crate::scenario::ChannelModel;
use crate::time::Micros;

pub use adapter::{adapt, unit_factor, AdaptFailure, AdapterSpec};
pub use rng::SplitMix64;

pub type RouteId = u32;

/// The canonical routed message.
///
/// The field order here is the wire order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub route_id: RouteId,
    pub seq: u64,
    pub t_send_us: Micros,
    pub t_deliver_us: Micros,
    pub quantity: String,
    pub unit: String,
    pub value: f64,
    pub experiment_id: String,
}

impl Envelope {
    /// Compact JSON, keys in declaration order, shortest round-trip reals.
    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("envelopes always serialize")
    }

    pub fn from_wire(text: &str) -> Result<Envelope, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn wire_len(&self) -> usize {
        self.to_wire().len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteOutcome {
    Delivered(Micros),
    Dropped,
}

/// Per-route emulation state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelState {
    rng: SplitMix64,
    /// Time at which the serializer is free again.
    pub bucket_free_at_us: Micros,
    /// FIFO floor for channels that must not reorder.
    pub last_deliver_us: Micros,
    draws: u64,
}

impl ChannelState {
    pub fn new(seed: u64, route_id: RouteId) -> Self {
        ChannelState { rng: SplitMix64::for_route(seed, route_id), bucket_free_at_us: 0, last_deliver_us: 0, draws: 0 }
    }

    pub fn rng_state(&self) -> u64 {
        self.rng.state()
    }

    /// Number of PRNG draws made so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_f64(&mut self) -> f64 {
        self.draws += 1;
        self.rng.next_f64()
    }
}

/// Passes one envelope through an emulated channel.
///
/// The payload size is the wire length of `envelope` exactly as given; the
/// kernel hands envelopes over with `t_deliver_us == t_send_us` before
/// stamping the result.
pub fn route(envelope: &Envelope, channel: &ChannelModel, state: &mut ChannelState) -> RouteOutcome {
    let bytes = if channel.bandwidth_bps > 0 { envelope.wire_len() } else { 0 };
    route_bytes(envelope.t_send_us, bytes, channel, state)
}

/// [`route`] for a payload of a given size, without building an envelope.
pub fn route_bytes(
    t_send_us: Micros,
    payload_bytes: usize,
    channel: &ChannelModel,
    state: &mut ChannelState,
) -> RouteOutcome {
    let u1 = state.next_f64();
    if u1 < channel.loss_prob {
        return RouteOutcome::Dropped;
    }
    let u2 = state.next_f64();
    let jitter = ((2.0 * u2 - 1.0) * channel.jitter_us as f64).round() as i64;

    let serialization = if channel.bandwidth_bps > 0 {
        let bits = payload_bytes as u128 * 1_000_000;
        bits.div_ceil(channel.bandwidth_bps as u128) as Micros
    } else {
        0
    };
    let start = t_send_us.max(state.bucket_free_at_us);
    state.bucket_free_at_us = start + serialization;

    // |jitter| <= jitter_us <= latency_us, so this never goes below t_send.
    let raw =
        (state.bucket_free_at_us + channel.latency_us).checked_add_signed(jitter).expect("jitter bounded by latency");
    let t_deliver = if channel.reorder_allowed { raw } else { raw.max(state.last_deliver_us) };
    state.last_deliver_us = state.last_deliver_us.max(t_deliver);
    RouteOutcome::Delivered(t_deliver)
}
