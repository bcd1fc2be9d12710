//! Compile a scenario into per-lab execution plans.
//!
//! Shows which routes stay inside a lab, which cross to another lab, and
//! which adapter each route carries.

use gridweave::plan::compile;
use gridweave::scenario::parse_scenario;

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/scenarios/sv_demo.json").to_string());
    let model = parse_scenario(&std::fs::read_to_string(&path).expect("read scenario")).expect("parse scenario");
    let compiled = match compile(&model) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };

    println!("master lab: {}", compiled.topology.master);
    for (lab, plan) in &compiled.plans {
        println!("lab {lab}{}", if plan.master { " (master)" } else { "" });
        for l in &plan.launches {
            let step = l.step_us.map(|s| format!(" every {s} us")).unwrap_or_default();
            println!("  launch {} [{}] {:?}{step}", l.component, l.model, l.kind);
        }
        for (label, routes) in
            [("local", &plan.local_routes), ("egress", &plan.egress_routes), ("ingress", &plan.ingress_routes)]
        {
            for r in routes {
                let adapter = r.adapter.as_ref().map(|a| format!(" via {a:?}")).unwrap_or_default();
                println!("  {label:7} #{} {} -> {} ({} {}){adapter}", r.route_id, r.from, r.to, r.quantity, r.unit);
            }
        }
    }
}
