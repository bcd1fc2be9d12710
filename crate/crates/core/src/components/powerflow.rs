//! Radial feeder power flow by backward-forward sweep.
//!
//! Single-phase equivalent. Injections use the load convention: positive P
//! and Q are consumption, generation is negative.

use std::collections::{BTreeMap, VecDeque};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TOLERANCE_VOLTS: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridModel {
    /// The first bus is the slack bus.
    pub buses: Vec<String>,
    pub lines: Vec<Line>,
    /// Phase-neutral slack voltage magnitude in volts.
    pub v_slack: f64,
    /// Phase-neutral base voltage in kV, for per-unit reporting.
    pub base_kv: f64,
    pub base_kva: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub bus: String,
    pub p: f64,
    pub q: f64,
}

impl Injection {
    pub fn new(bus: impl Into<String>, p: f64, q: f64) -> Self {
        Injection { bus: bus.into(), p, q }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BusVoltage {
    pub volts: f64,
    pub pu: f64,
    pub angle_rad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlowSolution {
    pub voltages: BTreeMap<String, BusVoltage>,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("Diverged: no convergence within {iterations} iterations (last step {last_delta_v} V)")]
    Diverged { iterations: usize, last_delta_v: f64 },
    #[error("BadGrid: {0}")]
    BadGrid(String),
}

/// Tree structure derived from a [`GridModel`].
struct Radial {
    /// Bus indices in breadth-first order from the slack.
    order: Vec<usize>,
    /// Parent bus and series impedance of the feeding line, per bus.
    parent: Vec<Option<(usize, Complex64)>>,
}

impl GridModel {
    pub fn bus_index(&self, bus: &str) -> Option<usize> {
        self.buses.iter().position(|b| b == bus)
    }

    pub fn base_volts(&self) -> f64 {
        self.base_kv * 1_000.0
    }

    fn radial(&self) -> Result<Radial, PowerFlowError> {
        let bad = |msg: String| Err(PowerFlowError::BadGrid(msg));
        let n = self.buses.len();
        if n == 0 {
            return bad("grid has no buses".into());
        }
        if !(self.v_slack > 0.0 && self.v_slack.is_finite()) {
            return bad(format!("v_slack must be positive, got {}", self.v_slack));
        }
        if !(self.base_kv > 0.0 && self.base_kv.is_finite()) {
            return bad(format!("base_kv must be positive, got {}", self.base_kv));
        }
        for (i, b) in self.buses.iter().enumerate() {
            if self.buses[..i].contains(b) {
                return bad(format!("duplicate bus {b:?}"));
            }
        }
        if self.lines.len() != n - 1 {
            return bad(format!("{} lines cannot form a spanning tree over {n} buses", self.lines.len()));
        }
        let mut adj: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
        for line in &self.lines {
            let (Some(a), Some(b)) = (self.bus_index(&line.from), self.bus_index(&line.to)) else {
                return bad(format!("line {}-{} references an unknown bus", line.from, line.to));
            };
            if line.r_ohm < 0.0 || line.x_ohm < 0.0 || (line.r_ohm == 0.0 && line.x_ohm == 0.0) {
                return bad(format!("line {}-{} needs R, X >= 0 and not both zero", line.from, line.to));
            }
            let z = Complex64::new(line.r_ohm, line.x_ohm);
            adj[a].push((b, z));
            adj[b].push((a, z));
        }
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, z) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, z));
                    queue.push_back(v);
                }
            }
        }
        if order.len() != n {
            return bad("lines do not connect every bus to the slack".into());
        }
        Ok(Radial { order, parent })
    }
}

/// Solves the feeder for the given injections.
///
/// Iterates until the largest bus voltage change between sweeps drops below
/// [`TOLERANCE_VOLTS`], giving up after [`MAX_ITERATIONS`].
pub fn bfs_powerflow(grid: &GridModel, injections: &[Injection]) -> Result<PowerFlowSolution, PowerFlowError> {
    let radial = grid.radial()?;
    let n = grid.buses.len();
    let mut load = vec![Complex64::new(0.0, 0.0); n];
    for inj in injections {
        match grid.bus_index(&inj.bus) {
            Some(0) => return Err(PowerFlowError::BadGrid(format!("injection at slack bus {:?}", inj.bus))),
            Some(i) => load[i] += Complex64::new(inj.p, inj.q),
            None => return Err(PowerFlowError::BadGrid(format!("injection at unknown bus {:?}", inj.bus))),
        }
    }

    let slack = Complex64::new(grid.v_slack, 0.0);
    let mut v = vec![slack; n];
    let mut branch = vec![Complex64::new(0.0, 0.0); n];
    let mut last_delta = f64::INFINITY;
    for iteration in 1..=MAX_ITERATIONS {
        // backward: leaves to root
        for &bus in &radial.order {
            branch[bus] = (load[bus] / v[bus]).conj();
        }
        for &bus in radial.order.iter().rev() {
            if let Some((p, _)) = radial.parent[bus] {
                let downstream = branch[bus];
                branch[p] += downstream;
            }
        }
        // forward: root to leaves
        let mut next = vec![slack; n];
        for &bus in &radial.order {
            if let Some((p, z)) = radial.parent[bus] {
                next[bus] = next[p] - z * branch[bus];
            }
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if !delta.is_finite() || next.iter().any(|x| !x.is_finite()) {
            return Err(PowerFlowError::Diverged { iterations: iteration, last_delta_v: delta });
        }
        v = next;
        last_delta = delta;
        if delta < TOLERANCE_VOLTS {
            let base = grid.base_volts();
            let voltages = grid
                .buses
                .iter()
                .zip(&v)
                .map(|(b, x)| (b.clone(), BusVoltage { volts: x.norm(), pu: x.norm() / base, angle_rad: x.arg() }))
                .collect();
            return Ok(PowerFlowSolution { voltages, iterations: iteration });
        }
    }
    Err(PowerFlowError::Diverged { iterations: MAX_ITERATIONS, last_delta_v: last_delta })
}

/// A linear feeder `b0 - b1 - ... - b{n-1}` with identical segments.
pub fn linear_feeder(buses: usize, r_ohm: f64, x_ohm: f64, v_slack: f64) -> GridModel {
    let names: Vec<String> = (0..buses).map(|i| format!("b{i}")).collect();
    let lines = names.windows(2).map(|w| Line { from: w[0].clone(), to: w[1].clone(), r_ohm, x_ohm }).collect();
    GridModel { buses: names, lines, v_slack, base_kv: v_slack / 1_000.0, base_kva: 100.0 }
}
