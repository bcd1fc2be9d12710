//! Run the two-lab demo as two coordinators talking over loopback TCP, then
//! check the merged trace against a single-process run.
//!
//! The same thing from the shell:
//!
//! ```text
//! gridweave run --lab sesa examples/scenarios/sv_demo.json --out sesa.jsonl &
//! gridweave run --lab smartest examples/scenarios/sv_demo.json --out smartest.jsonl
//! ```

use std::thread;
use std::time::Duration;

use gridweave::components::builtin_registry;
use gridweave::federation::{run_lab, LabOptions};
use gridweave::kernel::normalize;
use gridweave::plan::compile;
use gridweave::scenario::parse_scenario;
use gridweave::Kernel;

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn main() {
    let text = include_str!("scenarios/sv_demo.json");
    let mut model = parse_scenario(text).expect("parse");
    for lab in &mut model.labs {
        lab.endpoint = format!("127.0.0.1:{}", free_port());
    }
    model.run.duration_us = 6 * 3_600_000_000;
    let compiled = compile(&model).expect("compile");

    let labs: Vec<String> = compiled.plans.keys().cloned().collect();
    let handles: Vec<_> = labs
        .iter()
        .map(|lab| {
            let (compiled, lab, run) = (compiled.clone(), lab.clone(), model.run.clone());
            thread::spawn(move || {
                if lab != compiled.topology.master {
                    thread::sleep(Duration::from_millis(100));
                }
                let result = run_lab(&compiled, &lab, &builtin_registry(), &run, &LabOptions::default());
                (lab, result.expect("lab run"))
            })
        })
        .collect();

    let mut merged = Vec::new();
    for h in handles {
        let (lab, run) = h.join().unwrap();
        println!(
            "{lab}: {:?}, {} records, {} grant rounds",
            run.trace.outcome.reason,
            run.trace.records.len(),
            run.rounds
        );
        merged.extend(run.trace.records);
    }
    normalize(&mut merged);

    let mut single = Kernel::start(compiled.plans.values(), &builtin_registry(), &model.run)
        .expect("start")
        .run_to_completion()
        .records;
    normalize(&mut single);
    println!("federated and single-process traces identical: {}", merged == single);
}
