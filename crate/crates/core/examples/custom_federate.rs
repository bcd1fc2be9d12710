//! Plug a user-defined model into the kernel.
//!
//! A battery follows a household profile and discharges to cover whatever
//! load exceeds a threshold, until it runs empty.

use gridweave::components::builtin_registry;
use gridweave::kernel::{Federate, ModelError, NextStep, Params, StepOutput, StopReason};
use gridweave::plan::compile;
use gridweave::scenario::parse_scenario;
use gridweave::{Kernel, Micros};

#[derive(Default)]
struct PeakShaver {
    threshold_w: f64,
    energy_wh: f64,
    period_us: Micros,
    load_w: f64,
}

impl Federate for PeakShaver {
    fn init(&mut self, _t0: Micros, params: &Params) -> Result<NextStep, ModelError> {
        let num = |key: &str| {
            params.get(key).and_then(|v| v.as_f64()).ok_or_else(|| ModelError::new(format!("missing {key}")))
        };
        self.threshold_w = num("threshold_w")?;
        self.energy_wh = num("capacity_wh")?;
        self.period_us = num("period_us")? as Micros;
        Ok(NextStep::At(0))
    }

    fn step(&mut self, t: Micros, inputs: &[(String, f64)]) -> Result<StepOutput, ModelError> {
        if let Some((_, p)) = inputs.iter().find(|(port, _)| port == "load") {
            self.load_w = *p;
        }
        let hours = self.period_us as f64 / 3.6e9;
        let wanted = (self.load_w - self.threshold_w).max(0.0);
        let p = wanted.min(self.energy_wh / hours);
        self.energy_wh -= p * hours;
        Ok(StepOutput::new(NextStep::At(t + self.period_us)).with("discharge", p).with("soc_wh", self.energy_wh))
    }

    fn stop(&mut self, reason: StopReason) {
        println!("battery stopped ({reason}) with {:.0} Wh left", self.energy_wh);
    }
}

const SCENARIO: &str = r#"{
  "id": "peak-shaving",
  "labs": [{"id": "home", "endpoint": "127.0.0.1:7841"}],
  "components": [
    {"id": "house", "lab": "home", "kind": "DiscreteEvent",
     "model": {"name": "profile", "params": {"synthetic": {"shape": "Residential",
        "interval_us": 900000000, "duration_us": 86400000000,
        "base_w": 400.0, "amplitude_w": 2600.0, "peak_hour": 19.0}}},
     "ports": [{"name": "P", "direction": "Out", "quantity": "active-power", "unit": "W"}],
     "protocol": "smb-json", "sgam_layer": "Component"},
    {"id": "battery", "lab": "home", "kind": "DiscreteEvent",
     "model": {"name": "peak_shaver", "params": {"threshold_w": 1500.0, "capacity_wh": 5000.0, "period_us": 900000000}},
     "ports": [{"name": "load", "direction": "In", "quantity": "active-power", "unit": "W"},
               {"name": "discharge", "direction": "Out", "quantity": "active-power", "unit": "W"},
               {"name": "soc_wh", "direction": "Out", "quantity": "energy", "unit": "Wh"}],
     "protocol": "smb-json", "sgam_layer": "Component"},
    {"id": "logger", "lab": "home", "kind": "DiscreteEvent",
     "model": {"name": "monitor", "params": {"period_us": 3600000000}},
     "ports": [{"name": "discharge", "direction": "In", "quantity": "active-power", "unit": "kW"},
               {"name": "soc", "direction": "In", "quantity": "energy", "unit": "Wh"}],
     "protocol": "smb-json", "sgam_layer": "Information"}
  ],
  "links": [
    {"from": {"component": "house", "port": "P"}, "to": {"component": "battery", "port": "load"}},
    {"from": {"component": "battery", "port": "discharge"}, "to": {"component": "logger", "port": "discharge"},
     "channel": {"latency_us": 1000}},
    {"from": {"component": "battery", "port": "soc_wh"}, "to": {"component": "logger", "port": "soc"},
     "channel": {"latency_us": 1000}}
  ],
  "run": {"duration_us": 86400000000, "experiment_id": "peak-shaving"}
}"#;

fn main() {
    let model = parse_scenario(SCENARIO).expect("parse");
    let compiled = compile(&model).expect("compile");
    let mut registry = builtin_registry();
    registry.register("peak_shaver", PeakShaver::default);

    let trace = Kernel::start(compiled.plans.values(), &registry, &model.run).expect("start").run_to_completion();
    for r in trace.deliveries().filter(|r| r.component == "logger" && r.port.as_deref() == Some("discharge")) {
        let hour = r.t_us as f64 / 3.6e9;
        if r.value.unwrap_or(0.0) > 0.0 {
            println!("{hour:5.2} h: discharging {:.2} kW", r.value.unwrap());
        }
    }
}
