//! Water distribution network: element models, the quasi-convex hull of the
//! pipe head-loss curve, and a Newton hydraulic solver used as ground truth.
//!
//! Units are SI throughout: heads and levels in m, flows in m³/s, pump power
//! in W (single phase), durations in s except where a field says hours.
//!
//! Tanks sit behind an inlet valve: their hydraulic head is free within
//! `[head_min, head_max]` and does not follow the water level, while the
//! level integrates the net inflow. Reservoirs have a fixed head.

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Error, PartialEq)]
pub enum WdnError {
    #[error("degenerate flow range: x_min = x_max = {0}")]
    DegenerateRange(f64),
    #[error("flow range [{x_min}, {x_max}] is outside the hull's validity domain (needs x_min <= 0 <= x_max within a factor 1+sqrt(2))")]
    UnsupportedRange { x_min: f64, x_max: f64 },
    #[error("pump power slope is zero; power cannot be inverted to flow")]
    ZeroSlope,
    #[error("hydraulic solve did not converge in period {period} after {iterations} iterations (residual {residual:e})")]
    NoConvergence { period: usize, iterations: usize, residual: f64 },
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("network is not connected; unreachable nodes {0:?}")]
    Disconnected(Vec<String>),
    #[error("invalid parameter for {element}: {msg}")]
    InvalidParameter { element: String, msg: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Junction { elevation: f64, head_min: f64, head_max: f64 },
    Reservoir { head: f64 },
    Tank { area: f64, level_min: f64, level_max: f64, level_init: f64, head_min: f64, head_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

impl Node {
    pub fn head_limits(&self) -> Option<(f64, f64)> {
        match self.kind {
            NodeKind::Junction { head_min, head_max, .. } | NodeKind::Tank { head_min, head_max, .. } => {
                Some((head_min, head_max))
            }
            NodeKind::Reservoir { .. } => None,
        }
    }

    pub fn is_reservoir(&self) -> bool {
        matches!(self.kind, NodeKind::Reservoir { .. })
    }

    pub fn is_tank(&self) -> bool {
        matches!(self.kind, NodeKind::Tank { .. })
    }

    pub fn is_junction(&self) -> bool {
        matches!(self.kind, NodeKind::Junction { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpCurve {
    /// Head gain slope m¹ (m per m³/s).
    pub head_slope: f64,
    /// Head gain offset m⁰ (m).
    pub head_offset: f64,
    /// Power slope g¹ (W per m³/s).
    pub power_slope: f64,
    /// Power offset g⁰ (W).
    pub power_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EdgeKind {
    Pipe { resistance: f64 },
    Pump(PumpCurve),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub flow_min: f64,
    pub flow_max: f64,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn pump(&self) -> Option<&PumpCurve> {
        match &self.kind {
            EdgeKind::Pump(c) => Some(c),
            EdgeKind::Pipe { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WdnNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Water injection per node and period (m³/s); consumer demand is nonpositive.
    pub demands: Vec<Vec<f64>>,
    pub periods: usize,
    pub dt_hours: f64,
}

impl WdnNetwork {
    pub fn check(&self) -> Result<(), WdnError> {
        let bad = |element: &str, msg: &str| WdnError::InvalidParameter {
            element: element.to_string(),
            msg: msg.to_string(),
        };
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(WdnError::DuplicateNode(n.id.clone()));
            }
            match n.kind {
                NodeKind::Junction { head_min, head_max, .. } => {
                    if !(head_min <= head_max) {
                        return Err(bad(&n.id, "head_min > head_max"));
                    }
                }
                NodeKind::Reservoir { head } => {
                    if !head.is_finite() {
                        return Err(bad(&n.id, "non-finite head"));
                    }
                }
                NodeKind::Tank { area, level_min, level_max, level_init, head_min, head_max } => {
                    if !(area > 0.0) {
                        return Err(bad(&n.id, "tank area must be positive"));
                    }
                    if !(level_min <= level_init && level_init <= level_max) {
                        return Err(bad(&n.id, "need level_min <= level_init <= level_max"));
                    }
                    if !(head_min <= head_max) {
                        return Err(bad(&n.id, "head_min > head_max"));
                    }
                }
            }
        }
        for e in &self.edges {
            if e.from >= self.nodes.len() || e.to >= self.nodes.len() {
                return Err(WdnError::UnknownNode(e.id.clone()));
            }
            if !(e.flow_min <= e.flow_max) {
                return Err(bad(&e.id, "flow_min > flow_max"));
            }
            match &e.kind {
                EdgeKind::Pipe { resistance } => {
                    if !(*resistance > 0.0) {
                        return Err(bad(&e.id, "pipe resistance must be positive"));
                    }
                }
                EdgeKind::Pump(c) => {
                    if e.flow_min < 0.0 {
                        return Err(bad(&e.id, "pump flow lower bound must be nonnegative"));
                    }
                    if [c.head_slope, c.head_offset, c.power_slope, c.power_offset].iter().any(|v| !v.is_finite()) {
                        return Err(bad(&e.id, "non-finite pump coefficient"));
                    }
                }
            }
        }
        if self.demands.len() != self.nodes.len() || self.demands.iter().any(|d| d.len() != self.periods) {
            return Err(WdnError::DimensionMismatch("demand series must cover every node and period".into()));
        }
        for (n, d) in self.nodes.iter().zip(&self.demands) {
            if !n.is_junction() && d.iter().any(|&v| v != 0.0) {
                return Err(bad(&n.id, "only junctions carry demand"));
            }
        }
        // connectivity
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.from].push(e.to);
            adj[e.to].push(e.from);
        }
        if !self.nodes.is_empty() {
            let mut seen = vec![false; self.nodes.len()];
            let mut queue = VecDeque::from([0]);
            seen[0] = true;
            while let Some(k) = queue.pop_front() {
                for &n in &adj[k] {
                    if !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
            let missing: Vec<String> =
                (0..self.nodes.len()).filter(|&k| !seen[k]).map(|k| self.nodes[k].id.clone()).collect();
            if !missing.is_empty() {
                return Err(WdnError::Disconnected(missing));
            }
        }
        Ok(())
    }

    pub fn node_index(&self) -> HashMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect()
    }

    pub fn tanks(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_tank()).collect()
    }

    pub fn junctions(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_junction()).collect()
    }

    pub fn pumps(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].pump().is_some()).collect()
    }

    pub fn pipes(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].pump().is_none()).collect()
    }

    pub fn dt_seconds(&self) -> f64 {
        self.dt_hours * SECONDS_PER_HOUR
    }

    /// Single-phase power range implied by a pump's flow bounds.
    pub fn pump_power_range(&self, edge: usize) -> Option<(f64, f64)> {
        let e = &self.edges[edge];
        let c = e.pump()?;
        let a = pump_power(c.power_slope, c.power_offset, e.flow_min);
        let b = pump_power(c.power_slope, c.power_offset, e.flow_max);
        Some((a.min(b), a.max(b)))
    }
}

/// Darcy-Weisbach head loss `k·x·|x|`.
pub fn pipe_headloss(k: f64, x: f64) -> f64 {
    k * x * x.abs()
}

pub fn pump_power(g1: f64, g0: f64, x: f64) -> f64 {
    g1 * x + g0
}

pub fn pump_flow_from_power(g1: f64, g0: f64, p: f64) -> Result<f64, WdnError> {
    if g1 == 0.0 {
        return Err(WdnError::ZeroSlope);
    }
    Ok((p - g0) / g1)
}

pub fn pump_head_gain(m1: f64, m0: f64, x: f64) -> f64 {
    m1 * x + m0
}

/// Level after one period with net inflow `inflow_sum` (m³/s) into a tank of cross-section `area` (m²).
pub fn tank_update(level_prev: f64, inflow_sum: f64, area: f64, dt_hours: f64) -> f64 {
    level_prev + dt_hours * SECONDS_PER_HOUR / area * inflow_sum
}

/// One affine bound on the head difference `ΔH = H_from − H_to` of a pipe:
/// `ΔH ≤ slope·x + intercept` if `upper`, else `ΔH ≥ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullLine {
    pub upper: bool,
    pub slope: f64,
    pub intercept: f64,
}

impl HullLine {
    pub fn value(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    pub fn holds(&self, dh: f64, x: f64, tol: f64) -> bool {
        if self.upper {
            dh <= self.value(x) + tol
        } else {
            dh >= self.value(x) - tol
        }
    }
}

pub const HULL_A: f64 = 2.0 * std::f64::consts::SQRT_2 - 2.0;
pub const HULL_B: f64 = 3.0 - 2.0 * std::f64::consts::SQRT_2;

/// The four inequalities enclosing `k·x·|x|` on `[x_min, x_max]`: two secants
/// tangent to the opposite branch and two tangents at the range ends.
pub fn hull_constraints(k: f64, x_min: f64, x_max: f64) -> Result<[HullLine; 4], WdnError> {
    if x_min == x_max {
        return Err(WdnError::DegenerateRange(x_min));
    }
    let ratio = 1.0 + std::f64::consts::SQRT_2;
    let lo = x_min.abs();
    if !(x_min <= 0.0 && x_max >= 0.0 && x_max <= ratio * lo && lo <= ratio * x_max) {
        return Err(WdnError::UnsupportedRange { x_min, x_max });
    }
    Ok([
        HullLine { upper: true, slope: HULL_A * k * x_max, intercept: HULL_B * k * x_max * x_max },
        HullLine { upper: false, slope: HULL_A * k * lo, intercept: -HULL_B * k * x_min * x_min },
        HullLine { upper: false, slope: 2.0 * k * x_max, intercept: -k * x_max * x_max },
        HullLine { upper: true, slope: 2.0 * k * lo, intercept: k * x_min * x_min },
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydraulicState {
    /// `[edge][t]`, m³/s.
    pub flows: Vec<Vec<f64>>,
    /// `[node][t]`, m.
    pub heads: Vec<Vec<f64>>,
    /// `[tank][t]` for `t = 0..=T`, tanks in [`WdnNetwork::tanks`] order; entry 0 is the initial level.
    pub levels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct HydraulicSolution {
    pub state: HydraulicState,
    /// `(pump edge, period)` pairs whose inverted flow lies outside the pump's flow bounds.
    pub pump_out_of_range: Vec<(usize, usize)>,
    pub iterations: usize,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 60, max_halvings: 30 }
    }
}

/// Per-period unknown layout: heads of junctions and tanks, then pipe flows.
struct PeriodSystem<'a> {
    net: &'a WdnNetwork,
    head_var: Vec<Option<usize>>,
    flow_var: Vec<Option<usize>>,
    n_unknowns: usize,
    n_eqs: usize,
    junctions: Vec<usize>,
    pipes: Vec<usize>,
    pumps: Vec<usize>,
}

impl<'a> PeriodSystem<'a> {
    fn new(net: &'a WdnNetwork) -> Self {
        let mut head_var = vec![None; net.nodes.len()];
        let mut flow_var = vec![None; net.edges.len()];
        let mut k = 0;
        for (i, n) in net.nodes.iter().enumerate() {
            if !n.is_reservoir() {
                head_var[i] = Some(k);
                k += 1;
            }
        }
        let pipes = net.pipes();
        for &e in &pipes {
            flow_var[e] = Some(k);
            k += 1;
        }
        let junctions = net.junctions();
        let pumps = net.pumps();
        let n_eqs = junctions.len() + pipes.len() + pumps.len();
        PeriodSystem { net, head_var, flow_var, n_unknowns: k, n_eqs, junctions, pipes, pumps }
    }

    fn head(&self, z: &[f64], node: usize) -> f64 {
        match (self.head_var[node], &self.net.nodes[node].kind) {
            (Some(v), _) => z[v],
            (None, NodeKind::Reservoir { head }) => *head,
            (None, _) => unreachable!("only reservoirs have fixed heads"),
        }
    }

    fn flow(&self, z: &[f64], pump_flows: &[f64], edge: usize) -> f64 {
        match self.flow_var[edge] {
            Some(v) => z[v],
            None => pump_flows[edge],
        }
    }

    fn residual(&self, z: &[f64], pump_flows: &[f64], t: usize) -> DVector<f64> {
        let net = self.net;
        let mut r = DVector::zeros(self.n_eqs);
        let mut row_of_junction = vec![usize::MAX; net.nodes.len()];
        for (row, &j) in self.junctions.iter().enumerate() {
            row_of_junction[j] = row;
            r[row] = net.demands[j][t];
        }
        for (e, edge) in net.edges.iter().enumerate() {
            let x = self.flow(z, pump_flows, e);
            if row_of_junction[edge.to] != usize::MAX {
                r[row_of_junction[edge.to]] += x;
            }
            if row_of_junction[edge.from] != usize::MAX {
                r[row_of_junction[edge.from]] -= x;
            }
        }
        let base = self.junctions.len();
        for (i, &e) in self.pipes.iter().enumerate() {
            let edge = &net.edges[e];
            let EdgeKind::Pipe { resistance } = edge.kind else { unreachable!() };
            r[base + i] = self.head(z, edge.from) - self.head(z, edge.to)
                - pipe_headloss(resistance, self.flow(z, pump_flows, e));
        }
        let base = base + self.pipes.len();
        for (i, &e) in self.pumps.iter().enumerate() {
            let edge = &net.edges[e];
            let c = edge.pump().expect("pump edge");
            r[base + i] = self.head(z, edge.to) - self.head(z, edge.from)
                - pump_head_gain(c.head_slope, c.head_offset, pump_flows[e]);
        }
        r
    }

    fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let net = self.net;
        let mut jac = DMatrix::zeros(self.n_eqs, self.n_unknowns);
        let mut row_of_junction = vec![usize::MAX; net.nodes.len()];
        for (row, &j) in self.junctions.iter().enumerate() {
            row_of_junction[j] = row;
        }
        for &e in &self.pipes {
            let edge = &net.edges[e];
            let v = self.flow_var[e].expect("pipe flow var");
            if row_of_junction[edge.to] != usize::MAX {
                jac[(row_of_junction[edge.to], v)] += 1.0;
            }
            if row_of_junction[edge.from] != usize::MAX {
                jac[(row_of_junction[edge.from], v)] -= 1.0;
            }
        }
        let base = self.junctions.len();
        for (i, &e) in self.pipes.iter().enumerate() {
            let edge = &net.edges[e];
            let EdgeKind::Pipe { resistance } = edge.kind else { unreachable!() };
            let row = base + i;
            if let Some(v) = self.head_var[edge.from] {
                jac[(row, v)] += 1.0;
            }
            if let Some(v) = self.head_var[edge.to] {
                jac[(row, v)] -= 1.0;
            }
            let v = self.flow_var[e].expect("pipe flow var");
            // floor keeps the Jacobian regular at zero flow
            let scale = edge.flow_max.abs().max(edge.flow_min.abs()).max(1e-3);
            let slope = 2.0 * resistance * z[v].abs().max(1e-4 * scale);
            jac[(row, v)] = -slope;
        }
        let base = base + self.pipes.len();
        for (i, &e) in self.pumps.iter().enumerate() {
            let edge = &net.edges[e];
            if let Some(v) = self.head_var[edge.to] {
                jac[(base + i, v)] += 1.0;
            }
            if let Some(v) = self.head_var[edge.from] {
                jac[(base + i, v)] -= 1.0;
            }
        }
        jac
    }

    fn initial_guess(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.n_unknowns];
        for (i, n) in self.net.nodes.iter().enumerate() {
            if let (Some(v), Some((lo, hi))) = (self.head_var[i], n.head_limits()) {
                z[v] = 0.5 * (lo + hi);
            }
        }
        for &e in &self.pipes {
            let edge = &self.net.edges[e];
            z[self.flow_var[e].unwrap()] = 0.5 * (edge.flow_min + edge.flow_max);
        }
        z
    }
}

fn newton_step(jac: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if jac.is_square() {
        if let Some(step) = jac.clone().lu().solve(rhs) {
            if step.iter().all(|v| v.is_finite()) {
                return Some(step);
            }
        }
    }
    // non-square or singular: least-squares step
    let svd = jac.svd(true, true);
    svd.solve(rhs, 1e-12).ok()
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Ground-truth hydraulics at given single-phase pump powers `[pump][t]`
/// (pumps in [`WdnNetwork::pumps`] order). Pump flows come from inverting the
/// affine power curve; heads and pipe flows from damped Newton on mass balance,
/// pipe head loss and pump head gain; tank levels from the level recursion.
pub fn hydraulic_solve(net: &WdnNetwork, pump_powers: &[Vec<f64>]) -> Result<HydraulicSolution, WdnError> {
    hydraulic_solve_from(net, pump_powers, None, NewtonOptions::default())
}

/// [`hydraulic_solve`] with an optional starting point (e.g. a nominal solution)
/// and explicit Newton options.
pub fn hydraulic_solve_from(
    net: &WdnNetwork,
    pump_powers: &[Vec<f64>],
    start: Option<&HydraulicState>,
    opts: NewtonOptions,
) -> Result<HydraulicSolution, WdnError> {
    let pumps = net.pumps();
    if pump_powers.len() != pumps.len() || pump_powers.iter().any(|p| p.len() != net.periods) {
        return Err(WdnError::DimensionMismatch(format!(
            "expected powers for {} pumps x {} periods",
            pumps.len(),
            net.periods
        )));
    }
    let sys = PeriodSystem::new(net);
    let tanks = net.tanks();
    let mut flows = vec![vec![0.0; net.periods]; net.edges.len()];
    let mut heads = vec![vec![0.0; net.periods]; net.nodes.len()];
    let mut pump_out_of_range = Vec::new();
    let mut total_iters = 0;
    let mut worst = 0.0_f64;

    for t in 0..net.periods {
        let mut pump_flows = vec![0.0; net.edges.len()];
        for (k, &e) in pumps.iter().enumerate() {
            let c = net.edges[e].pump().unwrap();
            let x = pump_flow_from_power(c.power_slope, c.power_offset, pump_powers[k][t])?;
            if x < net.edges[e].flow_min || x > net.edges[e].flow_max {
                pump_out_of_range.push((e, t));
            }
            pump_flows[e] = x;
        }

        let mut z = match start {
            Some(s) => {
                let mut z = vec![0.0; sys.n_unknowns];
                for (i, v) in sys.head_var.iter().enumerate() {
                    if let Some(v) = v {
                        z[*v] = s.heads[i][t];
                    }
                }
                for (e, v) in sys.flow_var.iter().enumerate() {
                    if let Some(v) = v {
                        z[*v] = s.flows[e][t];
                    }
                }
                z
            }
            None => sys.initial_guess(),
        };

        let mut r = sys.residual(&z, &pump_flows, t);
        let mut norm = inf_norm(&r);
        let mut iters = 0;
        while norm > opts.tol {
            if iters == opts.max_iter {
                return Err(WdnError::NoConvergence { period: t, iterations: iters, residual: norm });
            }
            iters += 1;
            let step = newton_step(sys.jacobian(&z), &(-&r))
                .ok_or(WdnError::NoConvergence { period: t, iterations: iters, residual: norm })?;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=opts.max_halvings {
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
                let r_trial = sys.residual(&trial, &pump_flows, t);
                let n_trial = inf_norm(&r_trial);
                if n_trial < norm {
                    z = trial;
                    r = r_trial;
                    norm = n_trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(WdnError::NoConvergence { period: t, iterations: iters, residual: norm });
            }
        }
        total_iters += iters;
        worst = worst.max(norm);

        for (i, _) in net.nodes.iter().enumerate() {
            heads[i][t] = sys.head(&z, i);
        }
        for e in 0..net.edges.len() {
            flows[e][t] = sys.flow(&z, &pump_flows, e);
        }
    }

    let mut levels = Vec::with_capacity(tanks.len());
    for &tank in &tanks {
        let NodeKind::Tank { area, level_init, .. } = net.nodes[tank].kind else { unreachable!() };
        let mut series = Vec::with_capacity(net.periods + 1);
        series.push(level_init);
        for t in 0..net.periods {
            let inflow: f64 = net
                .edges
                .iter()
                .enumerate()
                .map(|(e, edge)| {
                    if edge.to == tank {
                        flows[e][t]
                    } else if edge.from == tank {
                        -flows[e][t]
                    } else {
                        0.0
                    }
                })
                .sum();
            series.push(tank_update(series[t], inflow, area, net.dt_hours));
        }
        levels.push(series);
    }

    Ok(HydraulicSolution {
        state: HydraulicState { flows, heads, levels },
        pump_out_of_range,
        iterations: total_iters,
        max_residual: worst,
    })
}

/// Largest mass-balance residual at junctions (m³/s) over all periods.
pub fn mass_balance_residual(net: &WdnNetwork, state: &HydraulicState) -> f64 {
    let mut worst = 0.0_f64;
    for t in 0..net.periods {
        for j in net.junctions() {
            let mut r = net.demands[j][t];
            for (e, edge) in net.edges.iter().enumerate() {
                if edge.to == j {
                    r += state.flows[e][t];
                }
                if edge.from == j {
                    r -= state.flows[e][t];
                }
            }
            worst = worst.max(r.abs());
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaterBound {
    HeadMin,
    HeadMax,
    LevelMin,
    LevelMax,
    PumpFlowMin,
    PumpFlowMax,
    FinalTank,
}

impl WaterBound {
    pub fn label(self) -> &'static str {
        match self {
            WaterBound::HeadMin => "head-min",
            WaterBound::HeadMax => "head-max",
            WaterBound::LevelMin => "level-min",
            WaterBound::LevelMax => "level-max",
            WaterBound::PumpFlowMin => "pump-flow-min",
            WaterBound::PumpFlowMax => "pump-flow-max",
            WaterBound::FinalTank => "final-tank",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterViolation {
    pub bound: WaterBound,
    /// Node index for head/level bounds, edge index for pump flow bounds.
    pub element: usize,
    /// `None` for the end-of-horizon tank requirement.
    pub period: Option<usize>,
    pub magnitude: f64,
}

/// Every violated bound of a hydraulic state (closed inequalities).
pub fn check_feasibility(state: &HydraulicState, net: &WdnNetwork, include_final_tank: bool) -> Vec<WaterViolation> {
    check_feasibility_tol(state, net, include_final_tank, 0.0)
}

/// As [`check_feasibility`], ignoring excesses up to `tol`.
pub fn check_feasibility_tol(
    state: &HydraulicState,
    net: &WdnNetwork,
    include_final_tank: bool,
    tol: f64,
) -> Vec<WaterViolation> {
    let mut out = Vec::new();
    let mut push = |bound, element, period, magnitude: f64| {
        if magnitude > tol {
            out.push(WaterViolation { bound, element, period, magnitude });
        }
    };
    for t in 0..net.periods {
        for (i, node) in net.nodes.iter().enumerate() {
            if let Some((lo, hi)) = node.head_limits() {
                let h = state.heads[i][t];
                push(WaterBound::HeadMin, i, Some(t), lo - h);
                push(WaterBound::HeadMax, i, Some(t), h - hi);
            }
        }
        for (i, e) in net.edges.iter().enumerate() {
            if e.pump().is_some() {
                let x = state.flows[i][t];
                push(WaterBound::PumpFlowMin, i, Some(t), e.flow_min - x);
                push(WaterBound::PumpFlowMax, i, Some(t), x - e.flow_max);
            }
        }
    }
    for (k, &tank) in net.tanks().iter().enumerate() {
        let NodeKind::Tank { level_min, level_max, level_init, .. } = net.nodes[tank].kind else { unreachable!() };
        for t in 0..net.periods {
            let l = state.levels[k][t + 1];
            push(WaterBound::LevelMin, tank, Some(t), level_min - l);
            push(WaterBound::LevelMax, tank, Some(t), l - level_max);
        }
        if include_final_tank {
            push(WaterBound::FinalTank, tank, None, level_init - state.levels[k][net.periods]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headloss_values() {
        assert_eq!(pipe_headloss(1.0, 2.0), 4.0);
        assert_eq!(pipe_headloss(1.0, -2.0), -4.0);
        assert_eq!(pipe_headloss(0.5, 0.0), 0.0);
    }

    #[test]
    fn pump_affine_maps() {
        assert_eq!(pump_power(2.0, 1.0, 3.0), 7.0);
        assert_eq!(pump_flow_from_power(2.0, 1.0, 7.0).unwrap(), 3.0);
        assert_eq!(pump_head_gain(-5.0, 40.0, 2.0), 30.0);
        assert_eq!(pump_flow_from_power(0.0, 1.0, 7.0), Err(WdnError::ZeroSlope));
    }

    #[test]
    fn tank_recursion() {
        assert_eq!(tank_update(5.0, 0.0, 12.3, 1.0), 5.0);
        assert!((tank_update(5.0, 0.01, 36.0, 1.0) - 6.0).abs() < 1e-12);
        assert!((tank_update(5.0, -0.01, 36.0, 1.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn hull_endpoint_tight_and_origin_inside() {
        let (k, xmax) = (3.7, 0.8);
        let lines = hull_constraints(k, -xmax, xmax).unwrap();
        assert_eq!((HULL_A + HULL_B) * k * xmax * xmax, lines[0].value(xmax));
        assert!((lines[0].value(xmax) - k * xmax * xmax).abs() < 1e-12);
        for l in &lines {
            assert!(l.holds(0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn hull_rejects_bad_ranges() {
        assert_eq!(hull_constraints(1.0, 0.5, 0.5), Err(WdnError::DegenerateRange(0.5)));
        assert!(matches!(hull_constraints(1.0, 0.1, 0.5), Err(WdnError::UnsupportedRange { .. })));
        assert!(matches!(hull_constraints(1.0, -5.0, 0.5), Err(WdnError::UnsupportedRange { .. })));
    }

    #[test]
    fn hull_gap_on_unit_range() {
        // widest vertical gap of the envelope over [0, 1] with k = 1
        let lines = hull_constraints(1.0, -1.0, 1.0).unwrap();
        let upper = |x: f64| lines.iter().filter(|l| l.upper).map(|l| l.value(x)).fold(f64::INFINITY, f64::min);
        let lower = |x: f64| lines.iter().filter(|l| !l.upper).map(|l| l.value(x)).fold(f64::NEG_INFINITY, f64::max);
        let gap = (0..=10_000)
            .map(|i| i as f64 / 10_000.0)
            .map(|x| upper(x) - lower(x))
            .fold(0.0_f64, f64::max);
        assert!((gap - HULL_GAP_UNIT).abs() < 1e-9, "{gap}");
    }

    // 2(3 − 2√2): the gap at x = 0 between the two secants
    const HULL_GAP_UNIT: f64 = 0.343_145_750_507_619_8;

    fn chain(demand: f64) -> WdnNetwork {
        // reservoir -> pump -> A -> pipe -> B (demand)
        WdnNetwork {
            nodes: vec![
                Node { id: "R".into(), kind: NodeKind::Reservoir { head: 100.0 } },
                Node { id: "A".into(), kind: NodeKind::Junction { elevation: 0.0, head_min: 0.0, head_max: 500.0 } },
                Node { id: "B".into(), kind: NodeKind::Junction { elevation: 0.0, head_min: 0.0, head_max: 500.0 } },
            ],
            edges: vec![
                Edge {
                    id: "P".into(),
                    from: 0,
                    to: 1,
                    flow_min: 0.0,
                    flow_max: 1.0,
                    kind: EdgeKind::Pump(PumpCurve { head_slope: -5.0, head_offset: 40.0, power_slope: 2.0, power_offset: 1.0 }),
                },
                Edge { id: "L".into(), from: 1, to: 2, flow_min: -1.0, flow_max: 1.0, kind: EdgeKind::Pipe { resistance: 10.0 } },
            ],
            demands: vec![vec![0.0], vec![0.0], vec![-demand]],
            periods: 1,
            dt_hours: 1.0,
        }
    }

    #[test]
    fn chain_closed_form() {
        let q = 0.3;
        let net = chain(q);
        // power for flow q
        let p = pump_power(2.0, 1.0, q);
        let sol = hydraulic_solve(&net, &[vec![p]]).unwrap();
        let h_a = 100.0 + pump_head_gain(-5.0, 40.0, q);
        let h_b = h_a - pipe_headloss(10.0, q);
        assert!((sol.state.heads[1][0] - h_a).abs() < 1e-9);
        assert!((sol.state.heads[2][0] - h_b).abs() < 1e-9);
        assert!(mass_balance_residual(&net, &sol.state) < 1e-8);
    }

    #[test]
    fn zero_everything_gives_flat_zones() {
        let mut net = chain(0.0);
        if let EdgeKind::Pump(c) = &mut net.edges[0].kind {
            c.power_offset = 0.0;
        }
        let sol = hydraulic_solve(&net, &[vec![0.0]]).unwrap();
        assert!(sol.state.flows.iter().flatten().all(|x| x.abs() < 1e-12));
        assert!((sol.state.heads[1][0] - sol.state.heads[2][0]).abs() < 1e-9);
    }

    #[test]
    fn feasibility_checks() {
        let net = chain(0.3);
        let p = pump_power(2.0, 1.0, 0.3);
        let sol = hydraulic_solve(&net, &[vec![p]]).unwrap();
        assert!(check_feasibility(&sol.state, &net, true).is_empty());

        let mut net2 = net.clone();
        let h = sol.state.heads[2][0];
        net2.nodes[2].kind = NodeKind::Junction { elevation: 0.0, head_min: h + 0.1, head_max: 500.0 };
        let v = check_feasibility(&sol.state, &net2, false);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].bound, WaterBound::HeadMin);
        assert!((v[0].magnitude - 0.1).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_pump_flagged() {
        let net = chain(1.5);
        let p = pump_power(2.0, 1.0, 1.5);
        let sol = hydraulic_solve(&net, &[vec![p]]).unwrap();
        assert_eq!(sol.pump_out_of_range, vec![(0, 0)]);
        let v = check_feasibility(&sol.state, &net, false);
        assert!(v.iter().any(|v| v.bound == WaterBound::PumpFlowMax));
    }
}
