//! Push envelopes through emulated channels and look at what comes out.

use gridweave::bus::{route, ChannelState, Envelope, RouteOutcome};
use gridweave::scenario::ChannelModel;

fn envelope(seq: u64, t_send_us: u64) -> Envelope {
    Envelope {
        route_id: 3,
        seq,
        t_send_us,
        t_deliver_us: t_send_us,
        quantity: "active-power".into(),
        unit: "W".into(),
        value: 1500.0,
        experiment_id: "bench".into(),
    }
}

fn run(name: &str, channel: ChannelModel) {
    let mut state = ChannelState::new(channel.seed, 3);
    let (mut dropped, mut delays) = (0, Vec::new());
    for seq in 0..10_000u64 {
        let t = seq * 10_000;
        match route(&envelope(seq, t), &channel, &mut state) {
            RouteOutcome::Dropped => dropped += 1,
            RouteOutcome::Delivered(d) => delays.push(d - t),
        }
    }
    delays.sort_unstable();
    let pick = |q: f64| delays.get(((delays.len() - 1) as f64 * q) as usize).copied().unwrap_or(0);
    println!(
        "{name:>10}: dropped {dropped:>5}, delay min {} p50 {} p99 {} max {} us, {} draws",
        pick(0.0),
        pick(0.5),
        pick(0.99),
        pick(1.0),
        state.draws()
    );
}

fn main() {
    run("ideal", ChannelModel::ideal());
    run("wan", ChannelModel { latency_us: 20_000, jitter_us: 5_000, seed: 42, ..ChannelModel::ideal() });
    run("lossy", ChannelModel { latency_us: 20_000, loss_prob: 0.1, seed: 42, ..ChannelModel::ideal() });
    // 10 ms between sends but each envelope needs longer than that on the wire
    run("narrow", ChannelModel { bandwidth_bps: 8_000, ..ChannelModel::ideal() });
    run(
        "reorder",
        ChannelModel { latency_us: 20_000, jitter_us: 15_000, reorder_allowed: true, seed: 9, ..ChannelModel::ideal() },
    );
}
