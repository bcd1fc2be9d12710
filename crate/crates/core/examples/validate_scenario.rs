//! Parse a scenario file and print its violations.
//!
//! ```text
//! cargo run --example validate_scenario -- path/to/scenario.json
//! ```
//!
//! Without an argument the bundled two-lab demo is checked, followed by a
//! deliberately broken copy of it.

use gridweave::scenario::{parse_scenario, validate, ChannelModel};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/scenarios/sv_demo.json").to_string());
    let text = std::fs::read_to_string(&path).expect("read scenario");
    let mut model = match parse_scenario(&text) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{path}: {e}");
            std::process::exit(2);
        }
    };

    let violations = validate(&model);
    println!(
        "{path}: {} components, {} links, {} violations",
        model.components.len(),
        model.links.len(),
        violations.len()
    );
    for v in &violations {
        println!("  {v}");
    }

    // break a few invariants on purpose
    model.components[0].lab = "atlantis".into();
    model.labs[0].endpoint = "localhost".into();
    if let Some(link) = model.links.first_mut() {
        link.channel = ChannelModel { latency_us: 10, jitter_us: 50, ..ChannelModel::ideal() };
    }
    println!("after tampering:");
    for v in validate(&model) {
        println!("  {v}");
    }
}
