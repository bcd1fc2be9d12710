//! Two experiments sharing one lab-to-lab connection.
//!
//! Frames carry their experiment id, so each experiment sees only its own
//! traffic. Experiment B runs over a lossy, jittery cross-lab link.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use gridweave::components::builtin_registry;
use gridweave::federation::{run_master, run_member, Session};
use gridweave::plan::compile;
use gridweave::scenario::{parse_scenario, ChannelModel, ScenarioModel};
use gridweave::Kernel;

fn experiment(id: &str, hours: u64, lossy: bool) -> ScenarioModel {
    let mut model = parse_scenario(include_str!("scenarios/sv_demo.json")).expect("parse");
    model.run.experiment_id = id.into();
    model.run.duration_us = hours * 3_600_000_000;
    if lossy {
        let link = model.links.iter_mut().find(|l| l.from.component == "pv").unwrap();
        link.channel =
            ChannelModel { latency_us: 20_000, jitter_us: 5_000, loss_prob: 0.05, seed: 5, ..ChannelModel::ideal() };
    }
    model
}

fn main() {
    let models = [experiment("exp-a", 2, false), experiment("exp-b", 3, true)];
    let compiled: Vec<_> = models.iter().map(|m| compile(m).expect("compile")).collect();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();

    let member = {
        let work: Vec<_> = compiled.iter().cloned().zip(models.iter().map(|m| m.run.clone())).collect();
        thread::spawn(move || {
            let session =
                Session::connect(&addr, 3, Duration::from_millis(100), Duration::from_secs(5)).expect("connect");
            let workers: Vec<_> = work
                .into_iter()
                .map(|(c, run)| {
                    let mut link = session.register(&run.experiment_id).expect("register");
                    link.handshake("smartest", Duration::from_secs(5)).expect("handshake");
                    thread::spawn(move || {
                        let plan = &c.plans["smartest"];
                        run_member(Kernel::start([plan], &builtin_registry(), &run).unwrap(), plan, link)
                    })
                })
                .collect();
            workers.into_iter().map(|w| w.join().unwrap()).collect::<Vec<_>>()
        })
    };

    let session = Session::accept(&listener, Instant::now() + Duration::from_secs(5)).expect("accept");
    let masters: Vec<_> = compiled
        .iter()
        .cloned()
        .zip(models.iter().map(|m| m.run.clone()))
        .map(|(c, run)| {
            let mut link = session.register(&run.experiment_id).expect("register");
            link.handshake("sesa", Duration::from_secs(5)).expect("handshake");
            thread::spawn(move || {
                let kernel = Kernel::start([&c.plans["sesa"]], &builtin_registry(), &run).unwrap();
                run_master(kernel, &c, "sesa", BTreeMap::from([("smartest".to_string(), link)]))
            })
        })
        .collect();

    let members = member.join().unwrap();
    for (m, s) in masters.into_iter().map(|h| h.join().unwrap()).zip(members) {
        let (trace, rounds) = m;
        let cross = trace.deliveries().filter(|r| r.port.as_deref() == Some("P_pv")).count();
        println!(
            "{}: {:?} after {rounds} rounds, {} + {} records, {cross} PV samples reached the feeder",
            trace.experiment_id,
            trace.outcome.reason,
            trace.records.len(),
            s.records.len()
        );
    }
}
