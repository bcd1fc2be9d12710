//! Federate implementations of the reference models.
//!
//! | model         | kind          | in-ports                  | out-ports            |
//! |---------------|---------------|---------------------------|----------------------|
//! | `profile`     | DiscreteEvent | none                      | `P`, `Q`             |
//! | `pv_inverter` | Continuous    | `G` (W/m2), `V` (pu)      | `P`, `Q`             |
//! | `powerflow`   | DiscreteEvent | one P/Q pair per injection| `vm.<bus>` (pu)      |
//! | `gain`        | either        | any                       | `out`                |
//! | `monitor`     | DiscreteEvent | any                       | none                 |
//!
//! Port names can be changed through parameters. Outputs on ports that have
//! no route are dropped by the kernel.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use super::powerflow::{bfs_powerflow, GridModel, Injection};
use super::profile::{profile_step, LoadProfile, ProfileMode, ProfilePoint, Synthetic};
use super::pv::{pv_power, volt_var, PvParams};
use crate::kernel::{Federate, ModelError, ModelRegistry, NextStep, Params, StepOutput};
use crate::time::{Micros, TimeBound};

const DEFAULT_PERIOD_US: Micros = 60_000_000;

fn parse_params<T: DeserializeOwned>(model: &str, params: &Params) -> Result<T, ModelError> {
    serde_json::from_value(Value::Object(params.clone()))
        .map_err(|e| ModelError(format!("{model}: bad parameters: {e}")))
}

fn held(inputs: &[(String, f64)], store: &mut BTreeMap<String, f64>) {
    for (port, v) in inputs {
        store.insert(port.clone(), *v);
    }
}

fn p_port() -> String {
    "P".into()
}

fn q_port() -> String {
    "Q".into()
}

/// Every model shipped with the crate, under its scenario name.
pub fn builtin_registry() -> ModelRegistry {
    let mut r = ModelRegistry::new();
    r.register("profile", ProfilePlayer::default)
        .register("pv_inverter", PvInverter::default)
        .register("powerflow", PowerFlow::default)
        .register("gain", Gain::default)
        .register("monitor", Monitor::default);
    r
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileParams {
    /// Inline `[t_us, P, Q]` rows.
    #[serde(default)]
    points: Option<Vec<(Micros, f64, f64)>>,
    #[serde(default)]
    file: Option<PathBuf>,
    #[serde(default)]
    synthetic: Option<Synthetic>,
    #[serde(default)]
    mode: ProfileMode,
    #[serde(default = "p_port")]
    p_port: String,
    #[serde(default = "q_port")]
    q_port: String,
}

/// Replays a [`LoadProfile`]. Exactly one of `points`, `file` and
/// `synthetic` must be given.
#[derive(Default)]
pub struct ProfilePlayer {
    profile: Option<LoadProfile>,
    p_port: String,
    q_port: String,
}

impl Federate for ProfilePlayer {
    fn init(&mut self, _t0: Micros, params: &Params) -> Result<NextStep, ModelError> {
        let p: ProfileParams = parse_params("profile", params)?;
        let profile = match (p.points, p.file, p.synthetic) {
            (Some(rows), None, None) => {
                LoadProfile::new(rows.into_iter().map(|(t_us, p, q)| ProfilePoint { t_us, p, q }).collect(), p.mode)
            }
            (None, Some(path), None) => LoadProfile::load(&path, p.mode),
            (None, None, Some(shape)) => shape.generate(p.mode),
            _ => Err("exactly one of points, file, synthetic is required".into()),
        }
        .map_err(|e| ModelError(format!("profile: {e}")))?;
        let first = profile.first_time();
        self.profile = Some(profile);
        self.p_port = p.p_port;
        self.q_port = p.q_port;
        Ok(first.into())
    }

    fn step(&mut self, t: Micros, _inputs: &[(String, f64)]) -> Result<StepOutput, ModelError> {
        let profile = self.profile.as_ref().expect("initialized");
        let s = profile_step(profile, t);
        Ok(StepOutput::new(s.next.into()).with(&self.p_port, s.p).with(&self.q_port, s.q))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PvInverterParams {
    p_peak: f64,
    p_rated: f64,
    #[serde(default)]
    voltvar: Vec<(f64, f64)>,
    #[serde(default = "g_port")]
    g_port: String,
    #[serde(default = "v_port")]
    v_port: String,
    #[serde(default = "p_port")]
    p_port: String,
    #[serde(default = "q_port")]
    q_port: String,
}

fn g_port() -> String {
    "G".into()
}

fn v_port() -> String {
    "V".into()
}

/// PV inverter with an optional volt-var characteristic.
///
/// Publishes in the load convention, so generated active power is negative
/// and reactive output according to the curve appears with flipped sign.
/// Irradiance and voltage are held between deliveries; before the first
/// delivery they are 0 W/m2 and 1.0 pu.
pub struct PvInverter {
    params: Option<(PvParams, PvInverterParams)>,
    g: f64,
    v_pu: f64,
}

impl Default for PvInverter {
    fn default() -> Self {
        PvInverter { params: None, g: 0.0, v_pu: 1.0 }
    }
}

impl Federate for PvInverter {
    fn init(&mut self, _t0: Micros, params: &Params) -> Result<NextStep, ModelError> {
        let p: PvInverterParams = parse_params("pv_inverter", params)?;
        let pv = PvParams { p_peak: p.p_peak, p_rated: p.p_rated, voltvar: p.voltvar.clone() };
        pv.check().map_err(|e| ModelError(format!("pv_inverter: {e}")))?;
        self.params = Some((pv, p));
        // Continuous: the kernel schedules the steps.
        Ok(NextStep::Done)
    }

    fn step(&mut self, _t: Micros, inputs: &[(String, f64)]) -> Result<StepOutput, ModelError> {
        let (pv, p) = self.params.as_ref().expect("initialized");
        for (port, v) in inputs {
            if *port == p.g_port {
                self.g = *v;
            } else if *port == p.v_port {
                self.v_pu = *v;
            }
        }
        Ok(StepOutput::default()
            .with(&p.p_port, -pv_power(self.g, pv))
            .with(&p.q_port, -volt_var(self.v_pu, &pv.voltvar)))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InjectionPorts {
    bus: String,
    p_port: String,
    #[serde(default)]
    q_port: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerFlowParams {
    #[serde(default)]
    grid: Option<GridModel>,
    #[serde(default)]
    grid_file: Option<PathBuf>,
    injections: Vec<InjectionPorts>,
    #[serde(default = "default_period")]
    period_us: Micros,
    #[serde(default)]
    start_us: Micros,
}

fn default_period() -> Micros {
    DEFAULT_PERIOD_US
}

/// Periodic feeder power flow. Each injection maps an in-port pair onto a
/// bus; values are held until replaced. Publishes `vm.<bus>` in per unit for
/// every bus. A diverging solve fails the step.
#[derive(Default)]
pub struct PowerFlow {
    grid: Option<GridModel>,
    injections: Vec<InjectionPorts>,
    period_us: Micros,
    held: BTreeMap<String, f64>,
    outputs: Vec<(String, String)>,
}

impl Federate for PowerFlow {
    fn init(&mut self, _t0: Micros, params: &Params) -> Result<NextStep, ModelError> {
        let p: PowerFlowParams = parse_params("powerflow", params)?;
        let grid = match (p.grid, p.grid_file) {
            (Some(g), None) => g,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ModelError(format!("powerflow: {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| ModelError(format!("powerflow: {}: {e}", path.display())))?
            }
            _ => return Err(ModelError::new("powerflow: exactly one of grid, grid_file is required")),
        };
        if p.period_us == 0 {
            return Err(ModelError::new("powerflow: period_us must be positive"));
        }
        // solve once with no load to reject bad grids up front
        bfs_powerflow(&grid, &[]).map_err(|e| ModelError(format!("powerflow: {e}")))?;
        self.outputs = grid.buses.iter().map(|b| (b.clone(), format!("vm.{b}"))).collect();
        self.grid = Some(grid);
        self.injections = p.injections;
        self.period_us = p.period_us;
        Ok(NextStep::At(p.start_us))
    }

    fn step(&mut self, t: Micros, inputs: &[(String, f64)]) -> Result<StepOutput, ModelError> {
        held(inputs, &mut self.held);
        let value = |port: &str| self.held.get(port).copied().unwrap_or(0.0);
        let injections: Vec<Injection> = self
            .injections
            .iter()
            .map(|i| Injection::new(&i.bus, value(&i.p_port), i.q_port.as_deref().map_or(0.0, value)))
            .collect();
        let solution = bfs_powerflow(self.grid.as_ref().expect("initialized"), &injections)
            .map_err(|e| ModelError(e.to_string()))?;
        let mut out = StepOutput::new(NextStep::At(t + self.period_us));
        for (bus, port) in &self.outputs {
            out = out.with(port, solution.voltages[bus].pu);
        }
        Ok(out)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GainParams {
    #[serde(default = "one")]
    gain: f64,
    #[serde(default)]
    offset: f64,
    #[serde(default)]
    period_us: Option<Micros>,
    #[serde(default = "out_port")]
    out_port: String,
}

fn one() -> f64 {
    1.0
}

fn out_port() -> String {
    "out".into()
}

/// `out = offset + gain * (sum of held inputs)`.
///
/// As a DiscreteEvent component it steps every `period_us` from time zero;
/// without a period it steps once.
#[derive(Default)]
pub struct Gain {
    gain: f64,
    offset: f64,
    period_us: Option<Micros>,
    out_port: String,
    held: BTreeMap<String, f64>,
}

impl Federate for Gain {
    fn init(&mut self, _t0: Micros, params: &Params) -> Result<NextStep, ModelError> {
        let p: GainParams = parse_params("gain", params)?;
        if p.period_us == Some(0) {
            return Err(ModelError::new("gain: period_us must be positive"));
        }
        self.gain = p.gain;
        self.offset = p.offset;
        self.period_us = p.period_us;
        self.out_port = p.out_port;
        Ok(NextStep::At(0))
    }

    fn step(&mut self, t: Micros, inputs: &[(String, f64)]) -> Result<StepOutput, ModelError> {
        held(inputs, &mut self.held);
        let sum: f64 = self.held.values().sum();
        let next = self.period_us.map_or(NextStep::Done, |p| NextStep::At(t + p));
        Ok(StepOutput::new(next).with(&self.out_port, self.offset + self.gain * sum))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MonitorParams {
    #[serde(default = "default_period")]
    period_us: Micros,
}

/// Consumes deliveries every `period_us`, so they show up in the trace.
#[derive(Default)]
pub struct Monitor {
    period_us: Micros,
    latest: BTreeMap<String, f64>,
}

impl Monitor {
    pub fn latest(&self) -> &BTreeMap<String, f64> {
        &self.latest
    }
}

impl Federate for Monitor {
    fn init(&mut self, _t0: Micros, params: &Params) -> Result<NextStep, ModelError> {
        let p: MonitorParams = parse_params("monitor", params)?;
        if p.period_us == 0 {
            return Err(ModelError::new("monitor: period_us must be positive"));
        }
        self.period_us = p.period_us;
        Ok(NextStep::At(0))
    }

    fn step(&mut self, t: Micros, inputs: &[(String, f64)]) -> Result<StepOutput, ModelError> {
        held(inputs, &mut self.latest);
        Ok(StepOutput::new(NextStep::At(t + self.period_us)))
    }
}

/// First step time a profile federate would request for these parameters.
pub fn profile_first_event(params: &Params) -> Result<TimeBound, ModelError> {
    let mut player = ProfilePlayer::default();
    Ok(player.init(0, params)?.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn params(v: Value) -> Params {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn registry_names() {
        let names: Vec<_> = builtin_registry().names().map(str::to_string).collect();
        assert_eq!(names, ["gain", "monitor", "powerflow", "profile", "pv_inverter"]);
    }

    #[test]
    fn profile_player_steps_through_points() {
        let mut p = ProfilePlayer::default();
        let first = p.init(0, &params(json!({"points": [[300000000, 1.0, 0.5], [360000000, 2.0, 0.0]]}))).unwrap();
        assert_eq!(first, NextStep::At(300_000_000));
        let out = p.step(300_000_000, &[]).unwrap();
        assert_eq!(out.outputs, [("P".to_string(), 1.0), ("Q".to_string(), 0.5)]);
        assert_eq!(out.next, Some(NextStep::At(360_000_000)));
        assert_eq!(p.step(360_000_000, &[]).unwrap().next, Some(NextStep::Done));
    }

    #[test]
    fn profile_requires_one_source() {
        let mut p = ProfilePlayer::default();
        assert!(p.init(0, &params(json!({}))).is_err());
        assert!(p.init(0, &params(json!({"points": [], "file": "x.csv"}))).is_err());
        assert!(p.init(0, &params(json!({"points": [], "colour": 1}))).is_err());
    }

    #[test]
    fn pv_inverter_holds_inputs() {
        let mut pv = PvInverter::default();
        pv.init(0, &params(json!({"p_peak": 5000.0, "p_rated": 4600.0, "voltvar": [[0.95, 1000.0], [1.05, -1000.0]]})))
            .unwrap();
        let out = pv.step(1, &[("G".into(), 1000.0), ("V".into(), 1.05)]).unwrap();
        assert_eq!(out.outputs, [("P".to_string(), -4600.0), ("Q".to_string(), 1000.0)]);
        let out = pv.step(2, &[]).unwrap();
        assert_eq!(out.outputs[0].1, -4600.0);
    }

    #[test]
    fn powerflow_publishes_bus_voltages() {
        let mut pf = PowerFlow::default();
        let grid = serde_json::to_value(super::super::powerflow::linear_feeder(3, 0.2, 0.1, 230.0)).unwrap();
        let next = pf
            .init(0, &params(json!({"grid": grid, "injections": [{"bus": "b2", "p_port": "p2"}], "period_us": 10})))
            .unwrap();
        assert_eq!(next, NextStep::At(0));
        let out = pf.step(0, &[]).unwrap();
        assert_eq!(out.next, Some(NextStep::At(10)));
        assert!(out.outputs.iter().all(|(_, v)| *v == 1.0));
        let out = pf.step(10, &[("p2".into(), 5000.0)]).unwrap();
        let vm2 = out.outputs.iter().find(|(p, _)| p == "vm.b2").unwrap().1;
        assert!(vm2 < 1.0);
        assert!(pf.step(20, &[("p2".into(), 1e9)]).is_err());
    }

    #[test]
    fn gain_sums_held_inputs() {
        let mut g = Gain::default();
        g.init(0, &params(json!({"gain": 2.0, "period_us": 5}))).unwrap();
        let out = g.step(0, &[("a".into(), 1.0), ("b".into(), 2.0)]).unwrap();
        assert_eq!(out.outputs, [("out".to_string(), 6.0)]);
        let out = g.step(5, &[("a".into(), 0.0)]).unwrap();
        assert_eq!(out.outputs[0].1, 4.0);
        assert_eq!(out.next, Some(NextStep::At(10)));
    }
}
