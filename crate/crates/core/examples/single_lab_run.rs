//! Run a whole scenario in one kernel and summarize the trace.

use std::collections::BTreeMap;

use gridweave::components::builtin_registry;
use gridweave::plan::compile;
use gridweave::scenario::parse_scenario;
use gridweave::Kernel;

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/scenarios/voltvar_loop.json").to_string());
    let model = parse_scenario(&std::fs::read_to_string(&path).expect("read scenario")).expect("parse scenario");
    let compiled = compile(&model).expect("compile");

    let kernel = Kernel::start(compiled.plans.values(), &builtin_registry(), &model.run).expect("start kernel");
    let trace = kernel.run_to_completion();
    println!("{}: {:?} at t = {} us", trace.experiment_id, trace.outcome.reason, trace.outcome.final_t_us);

    let mut steps: BTreeMap<&str, usize> = BTreeMap::new();
    for r in trace.steps() {
        *steps.entry(&r.component).or_default() += 1;
    }
    for (component, n) in &steps {
        println!("  {component}: {n} steps");
    }

    // last value seen on every in-port
    let mut last: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in trace.deliveries() {
        last.insert((&r.component, r.port.as_deref().unwrap_or("")), r.value.unwrap_or(f64::NAN));
    }
    for ((component, port), v) in last {
        println!("  {component}.{port} = {v:.4}");
    }
}
