//! Generators and helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use gridweave::scenario::{
    ChannelModel, ComponentDecl, ComponentKind, Direction, LabDecl, LinkDecl, ModelSpec, PortDecl, PortRef, RunConfig,
    ScenarioModel, SgamLayer,
};
use proptest::prelude::*;
use serde_json::json;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/scenarios").join(name)
}

pub fn load_fixture(name: &str) -> ScenarioModel {
    gridweave::parse_scenario(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

pub const LAB_IDS: [&str; 3] = ["alpha", "beta", "gamma"];

#[derive(Clone, Debug)]
pub struct CompSpec {
    pub lab: usize,
    pub continuous: bool,
    /// In units of 100 ms.
    pub step: u64,
    pub profile: bool,
    pub kilo: bool,
    pub layer: usize,
}

#[derive(Clone, Debug)]
pub struct LinkSpec {
    pub from: usize,
    pub to: usize,
    pub latency_us: u64,
    pub jitter_frac: f64,
    pub loss_prob: f64,
    pub bandwidth: u64,
    pub reorder: bool,
    pub seed: u64,
}

fn comp_spec(n_labs: usize) -> impl Strategy<Value = CompSpec> {
    (0..n_labs, any::<bool>(), 1u64..=5, any::<bool>(), any::<bool>(), 0usize..5).prop_map(
        |(lab, continuous, step, profile, kilo, layer)| CompSpec { lab, continuous, step, profile, kilo, layer },
    )
}

fn link_spec(n: usize) -> impl Strategy<Value = LinkSpec> {
    (
        0..n,
        0..n,
        prop_oneof![Just(0u64), 1u64..50_000],
        0.0f64..=1.0,
        prop_oneof![Just(0.0), 0.0f64..0.3],
        prop_oneof![Just(0u64), 100u64..100_000],
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(from, to, latency_us, jitter_frac, loss_prob, bandwidth, reorder, seed)| LinkSpec {
            from,
            to,
            latency_us,
            jitter_frac,
            loss_prob,
            bandwidth,
            reorder,
            seed,
        })
}

/// Valid scenarios by construction: zero-delay links between discrete-event
/// components only ever point from a lower to a higher component index.
pub fn valid_scenario() -> impl Strategy<Value = ScenarioModel> {
    (1usize..=3, 1usize..=6)
        .prop_flat_map(|(n_labs, n)| {
            (
                Just(n_labs),
                prop::collection::vec(comp_spec(n_labs), n),
                prop::collection::vec(link_spec(n), 0..=8),
                1u64..=3,
                any::<u64>(),
            )
        })
        .prop_map(|(n_labs, comps, links, secs, seed)| build(n_labs, &comps, &links, secs * 1_000_000, seed))
}

pub fn build(n_labs: usize, comps: &[CompSpec], links: &[LinkSpec], duration_us: u64, seed: u64) -> ScenarioModel {
    let labs = (0..n_labs)
        .map(|i| LabDecl {
            id: LAB_IDS[i].to_string(),
            endpoint: format!("127.0.0.1:{}", 7841 + i),
            description: String::new(),
        })
        .collect();

    let mut components: Vec<ComponentDecl> = comps
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let period = c.step * 100_000;
            let params = if c.profile {
                json!({"points": [[0, 1.0 + i as f64, 0.0], [300_000, 2.5, 0.1], [700_000, -4.0, 0.2]], "p_port": "out"})
            } else if c.continuous {
                json!({"gain": 0.5, "offset": i as f64})
            } else {
                json!({"gain": 0.5, "offset": i as f64, "period_us": period})
            };
            ComponentDecl {
                id: format!("c{i}"),
                lab: LAB_IDS[c.lab].to_string(),
                kind: if c.continuous { ComponentKind::Continuous } else { ComponentKind::DiscreteEvent },
                step_us: c.continuous.then_some(period),
                model: ModelSpec {
                    name: if c.profile { "profile" } else { "gain" }.into(),
                    params: params.as_object().unwrap().clone(),
                },
                ports: vec![PortDecl {
                    name: "out".into(),
                    direction: Direction::Out,
                    quantity: "active-power".into(),
                    unit: if c.kilo { "kW" } else { "W" }.into(),
                }],
                protocol: "smb-json".into(),
                sgam_layer: SgamLayer::ALL[c.layer],
            }
        })
        .collect();

    let mut link_decls = Vec::new();
    for (k, l) in links.iter().enumerate() {
        let both_discrete = !comps[l.from].continuous && !comps[l.to].continuous;
        let mut channel = ChannelModel {
            latency_us: l.latency_us,
            jitter_us: (l.latency_us as f64 * l.jitter_frac).floor() as u64,
            loss_prob: l.loss_prob,
            bandwidth_bps: l.bandwidth,
            reorder_allowed: l.reorder,
            seed: l.seed,
        };
        if both_discrete && l.from >= l.to && !channel.has_positive_min_delay() {
            channel.latency_us = channel.jitter_us + 1_000;
        }
        let port = format!("in{k}");
        components[l.to].ports.push(PortDecl {
            name: port.clone(),
            direction: Direction::In,
            quantity: "active-power".into(),
            unit: "W".into(),
        });
        link_decls.push(LinkDecl {
            from: PortRef::new(format!("c{}", l.from), "out"),
            to: PortRef::new(format!("c{}", l.to), port),
            channel,
        });
    }

    ScenarioModel {
        id: "generated".into(),
        labs,
        components,
        links: link_decls,
        run: RunConfig { duration_us, seed, rt_factor: None, experiment_id: "gen".into() },
    }
}

/// A free localhost port. Racy by nature, good enough for tests.
pub fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}
