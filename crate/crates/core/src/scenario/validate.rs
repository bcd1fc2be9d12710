use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{ComponentKind, Direction, ScenarioModel};
use crate::bus::unit_factor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ViolationCode {
    DuplicateId,
    UnknownLab,
    UnknownEndpoint,
    DirectionMismatch,
    QuantityMismatch,
    /// Units differ and no conversion exists between them.
    NoAdapter,
    AlgebraicLoop,
    BadEndpoint,
    BadStep,
    BadChannel,
    EmptyField,
    BadRunConfig,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
    pub detail: String,
}

impl Violation {
    fn new(code: ViolationCode, path: impl Into<String>, detail: impl Into<String>) -> Self {
        Violation { code, path: path.into(), detail: detail.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.code, self.path, self.detail)
    }
}

/// Checks every model invariant. An empty list means the model is valid.
pub fn validate(model: &ScenarioModel) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();

    let mut seen = BTreeSet::new();
    for (i, lab) in model.labs.iter().enumerate() {
        if !seen.insert(lab.id.as_str()) {
            out.push(Violation::new(DuplicateId, format!("labs[{i}]"), format!("lab id {:?}", lab.id)));
        }
        if lab.host_port().is_none() {
            out.push(Violation::new(
                BadEndpoint,
                format!("labs[{i}].endpoint"),
                format!("{:?} is not host:port with port in 1..=65535", lab.endpoint),
            ));
        }
    }
    let labs = seen;

    // First declaration wins when ids collide.
    let mut components = BTreeMap::new();
    for (i, c) in model.components.iter().enumerate() {
        let path = format!("components[{i}]");
        if components.contains_key(c.id.as_str()) {
            out.push(Violation::new(DuplicateId, path.clone(), format!("component id {:?}", c.id)));
        } else {
            components.insert(c.id.as_str(), c);
        }
        if !labs.contains(c.lab.as_str()) {
            out.push(Violation::new(UnknownLab, format!("{path}.lab"), format!("undeclared lab {:?}", c.lab)));
        }
        match (c.kind, c.step_us) {
            (ComponentKind::Continuous, Some(s)) if s >= 1 => {}
            (ComponentKind::DiscreteEvent, None) => {}
            (kind, step) => out.push(Violation::new(
                BadStep,
                format!("{path}.step_us"),
                format!("{kind:?} component with step_us {step:?}"),
            )),
        }
        let mut ports = BTreeSet::new();
        for (j, p) in c.ports.iter().enumerate() {
            if !ports.insert(p.name.as_str()) {
                out.push(Violation::new(
                    DuplicateId,
                    format!("{path}.ports[{j}]"),
                    format!("port {:?} on {:?}", p.name, c.id),
                ));
            }
            if p.quantity.is_empty() || p.unit.is_empty() {
                out.push(Violation::new(
                    EmptyField,
                    format!("{path}.ports[{j}]"),
                    "quantity and unit must be nonempty",
                ));
            }
        }
    }

    for (i, link) in model.links.iter().enumerate() {
        let path = format!("links[{i}]");
        let ch = &link.channel;
        if ch.jitter_us > ch.latency_us {
            out.push(Violation::new(BadChannel, format!("{path}.channel.jitter_us"), "jitter exceeds latency"));
        }
        if !(0.0..=1.0).contains(&ch.loss_prob) {
            out.push(Violation::new(BadChannel, format!("{path}.channel.loss_prob"), "must lie in [0, 1]"));
        }

        let from = components.get(link.from.component.as_str()).and_then(|c| c.port(&link.from.port).map(|p| (c, p)));
        let to = components.get(link.to.component.as_str()).and_then(|c| c.port(&link.to.port).map(|p| (c, p)));
        if from.is_none() {
            out.push(Violation::new(UnknownEndpoint, format!("{path}.from"), format!("no port {}", link.from)));
        }
        if to.is_none() {
            out.push(Violation::new(UnknownEndpoint, format!("{path}.to"), format!("no port {}", link.to)));
        }
        let (Some((_, fp)), Some((_, tp))) = (from, to) else {
            continue;
        };
        if fp.direction != Direction::Out || tp.direction != Direction::In {
            out.push(Violation::new(
                DirectionMismatch,
                path.clone(),
                format!("{} is {:?}, {} is {:?}", link.from, fp.direction, link.to, tp.direction),
            ));
        }
        if fp.quantity != tp.quantity {
            out.push(Violation::new(QuantityMismatch, path.clone(), format!("{:?} vs {:?}", fp.quantity, tp.quantity)));
        }
        if fp.unit != tp.unit && unit_factor(&fp.unit, &tp.unit).is_none() {
            out.push(Violation::new(NoAdapter, path.clone(), format!("cannot convert {} to {}", fp.unit, tp.unit)));
        }
    }

    for cycle in zero_delay_cycles(model) {
        let first = cycle.links[0];
        out.push(Violation::new(
            AlgebraicLoop,
            format!("links[{first}]"),
            format!("zero-delay cycle {}", cycle.components.join(" -> ")),
        ));
    }

    if model.run.duration_us < 1 {
        out.push(Violation::new(BadRunConfig, "run.duration_us", "must be at least 1"));
    }
    if let Some(rt) = model.run.rt_factor {
        if !(rt > 0.0 && rt.is_finite()) {
            out.push(Violation::new(BadRunConfig, "run.rt_factor", "must be positive"));
        }
    }

    out
}

struct Cycle {
    components: Vec<String>,
    links: Vec<usize>,
}

/// One cycle per strongly connected component of the graph formed by
/// zero-delay links between discrete-event components.
fn zero_delay_cycles(model: &ScenarioModel) -> Vec<Cycle> {
    let mut index = BTreeMap::new();
    for c in &model.components {
        if c.kind == ComponentKind::DiscreteEvent {
            let next = index.len();
            index.entry(c.id.as_str()).or_insert(next);
        }
    }
    let names: Vec<&str> = {
        let mut v = vec![""; index.len()];
        for (name, &i) in &index {
            v[i] = name;
        }
        v
    };
    let n = names.len();
    // adjacency: (target, link index), in declaration order
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (li, link) in model.links.iter().enumerate() {
        if link.channel.has_positive_min_delay() {
            continue;
        }
        if let (Some(&a), Some(&b)) = (index.get(link.from.component.as_str()), index.get(link.to.component.as_str())) {
            adj[a].push((b, li));
        }
    }

    let scc = tarjan(&adj);
    let mut cycles = Vec::new();
    for members in scc {
        let set: BTreeSet<usize> = members.iter().copied().collect();
        let start = *set.iter().next().unwrap();
        let self_loop = adj[start].iter().find(|(t, _)| *t == start);
        if set.len() == 1 {
            if let Some(&(_, li)) = self_loop {
                cycles.push(Cycle {
                    components: vec![names[start].to_string(), names[start].to_string()],
                    links: vec![li],
                });
            }
            continue;
        }
        // BFS inside the SCC for the shortest path back to `start`.
        let mut prev: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        let mut queue = std::collections::VecDeque::from([start]);
        let mut closing = None;
        'bfs: while let Some(u) = queue.pop_front() {
            for &(v, li) in &adj[u] {
                if !set.contains(&v) {
                    continue;
                }
                if v == start {
                    closing = Some((u, li));
                    break 'bfs;
                }
                if let std::collections::btree_map::Entry::Vacant(e) = prev.entry(v) {
                    e.insert((u, li));
                    queue.push_back(v);
                }
            }
        }
        let (mut u, li) = closing.expect("an SCC with two or more nodes has a cycle through each node");
        let mut nodes = vec![start, u];
        let mut links = vec![li];
        while u != start {
            let (p, pl) = prev[&u];
            links.push(pl);
            nodes.push(p);
            u = p;
        }
        nodes.reverse();
        links.reverse();
        cycles.push(Cycle { components: nodes.into_iter().map(|i| names[i].to_string()).collect(), links });
    }
    cycles.sort_by_key(|c| c.links[0]);
    cycles
}

/// Tarjan's strongly connected components, iterative.
fn tarjan(adj: &[Vec<(usize, usize)>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work = vec![(root, 0usize)];
        while let Some(&mut (v, ref mut edge)) = work.last_mut() {
            if *edge == 0 && index[v] == usize::MAX {
                index[v] = counter;
                low[v] = counter;
                counter += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&(w, _)) = adj[v].get(*edge) {
                *edge += 1;
                if index[w] == usize::MAX {
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                out.push(comp);
            }
        }
    }
    out
}
