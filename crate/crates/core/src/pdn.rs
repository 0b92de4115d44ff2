//! Radial three-phase unbalanced distribution network and its linearized
//! (Lin3DistFlow) voltage model.
//!
//! Squared voltage magnitudes obey, for every line `n → k` and period `t`,
//!
//! ```text
//! Y_k = Y_n − M_nk P_k − N_nk Q_k
//! P_k = ρ_k + Σ_{pumps at k} p_e + Σ_{children c} P_c
//! Q_k = ζ_k + Σ_{pumps at k} η_e p_e + Σ_{children c} Q_c
//! ```
//!
//! where `P_k`, `Q_k` are the three-phase flows entering bus `k`. Substituting
//! the flows gives an affine map from pump powers and real-demand forecast
//! errors to every `Y_k,φ`, built here as a [`VoltageAffineMap`].

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;
use thiserror::Error;

pub const PHASE_NAMES: [char; 3] = ['a', 'b', 'c'];

#[derive(Debug, Error, PartialEq)]
pub enum PdnError {
    #[error("cycle detected through lines {0:?}")]
    CycleDetected(Vec<(String, String)>),
    #[error("buses not connected to the substation: {0:?}")]
    DisconnectedBus(Vec<String>),
    #[error("missing demand for bus {bus} (expected {expected} periods, found {found})")]
    MissingDemand { bus: String, expected: usize, found: usize },
    #[error("unknown bus {0:?}")]
    UnknownBus(String),
    #[error("duplicate bus {0:?}")]
    DuplicateBus(String),
    #[error("pump {pump:?} is attached to bus {bus:?} which does not carry all three phases")]
    PumpNotThreePhase { pump: String, bus: String },
    #[error("bus {child:?} carries a phase its upstream bus {parent:?} lacks")]
    PhaseMismatch { parent: String, child: String },
    #[error("invalid voltage limits: need 0 < v_min < v_max (got {v_min}, {v_max})")]
    VoltageLimits { v_min: f64, v_max: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: [bool; 3],
    /// Real demand forecast per period and phase, per-unit.
    pub p_demand: Vec<[f64; 3]>,
    /// Reactive demand per period and phase, per-unit.
    pub q_demand: Vec<[f64; 3]>,
}

impl Bus {
    pub fn has_all_phases(&self) -> bool {
        self.phases.iter().all(|&p| p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub m: [[f64; 3]; 3],
    pub n: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumpAttachment {
    pub pump: String,
    pub bus: usize,
    /// Reactive-to-real power ratio.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdnNetwork {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub substation: usize,
    pub substation_voltage_sq: [f64; 3],
    pub pumps: Vec<PumpAttachment>,
    pub v_min: f64,
    pub v_max: f64,
    /// Power base used to express pump powers (W) in per-unit.
    pub base_power_va: f64,
    pub periods: usize,
    pub dt_hours: f64,
}

impl PdnNetwork {
    /// Checks every invariant except radiality (see [`validate_radial`]).
    pub fn check(&self) -> Result<(), PdnError> {
        if !(self.v_min > 0.0 && self.v_min < self.v_max && self.v_max.is_finite()) {
            return Err(PdnError::VoltageLimits { v_min: self.v_min, v_max: self.v_max });
        }
        if !(self.base_power_va > 0.0 && self.base_power_va.is_finite()) {
            return Err(PdnError::NonFinite("base power".into()));
        }
        let mut seen = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if seen.insert(b.id.as_str(), i).is_some() {
                return Err(PdnError::DuplicateBus(b.id.clone()));
            }
            for series in [&b.p_demand, &b.q_demand] {
                if series.len() != self.periods {
                    return Err(PdnError::MissingDemand {
                        bus: b.id.clone(),
                        expected: self.periods,
                        found: series.len(),
                    });
                }
                if series.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(PdnError::NonFinite(format!("demand of bus {}", b.id)));
                }
            }
        }
        if self.substation >= self.buses.len() {
            return Err(PdnError::UnknownBus(format!("#{}", self.substation)));
        }
        for l in &self.lines {
            if l.from >= self.buses.len() || l.to >= self.buses.len() {
                return Err(PdnError::UnknownBus(format!("line endpoint #{}/#{}", l.from, l.to)));
            }
            if l.m.iter().chain(l.n.iter()).flatten().any(|v| !v.is_finite()) {
                return Err(PdnError::NonFinite(format!(
                    "line {}-{}",
                    self.buses[l.from].id, self.buses[l.to].id
                )));
            }
        }
        for p in &self.pumps {
            let bus = self.buses.get(p.bus).ok_or_else(|| PdnError::UnknownBus(p.pump.clone()))?;
            if !bus.has_all_phases() {
                return Err(PdnError::PumpNotThreePhase { pump: p.pump.clone(), bus: bus.id.clone() });
            }
            if !p.eta.is_finite() {
                return Err(PdnError::NonFinite(format!("eta of pump {}", p.pump)));
            }
        }
        Ok(())
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Uncertain real-demand coordinates of one period: every non-substation
    /// bus and present phase with a nonzero forecast in at least one period.
    /// Full error vectors are period-major: index `t * n_t + j`.
    pub fn error_coords(&self) -> Vec<ErrorCoord> {
        let mut out = Vec::new();
        for (k, bus) in self.buses.iter().enumerate() {
            if k == self.substation {
                continue;
            }
            for phase in 0..3 {
                if bus.phases[phase] && bus.p_demand.iter().any(|d| d[phase] != 0.0) {
                    out.push(ErrorCoord { bus: k, phase });
                }
            }
        }
        out
    }

    /// Every (bus, present phase), bus-major.
    pub fn voltage_rows(&self) -> Vec<VoltageRow> {
        let mut out = Vec::new();
        for (k, bus) in self.buses.iter().enumerate() {
            for phase in 0..3 {
                if bus.phases[phase] {
                    out.push(VoltageRow { bus: k, phase });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ErrorCoord {
    pub bus: usize,
    pub phase: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoltageRow {
    pub bus: usize,
    pub phase: usize,
}

/// Spanning tree of the line graph rooted at the substation.
#[derive(Debug, Clone)]
pub struct RadialTree {
    pub parent: Vec<Option<usize>>,
    pub parent_line: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Buses in breadth-first order from the substation.
    pub order: Vec<usize>,
}

impl RadialTree {
    /// Lines from the substation down to `bus`.
    pub fn path_lines(&self, bus: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut k = bus;
        while let Some(l) = self.parent_line[k] {
            out.push(l);
            k = self.parent[k].expect("line implies parent");
        }
        out.reverse();
        out
    }
}

/// Ok iff the lines form a spanning tree rooted at the substation.
pub fn validate_radial(net: &PdnNetwork) -> Result<RadialTree, PdnError> {
    let nb = net.buses.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nb];

    // union-find over already accepted lines to spot the first cycle
    let mut uf: Vec<usize> = (0..nb).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    for (li, l) in net.lines.iter().enumerate() {
        let (ra, rb) = (find(&mut uf, l.from), find(&mut uf, l.to));
        if ra == rb {
            let mut cycle = path_between(&adj, l.from, l.to)
                .into_iter()
                .map(|e| (net.buses[net.lines[e].from].id.clone(), net.buses[net.lines[e].to].id.clone()))
                .collect::<Vec<_>>();
            cycle.push((net.buses[l.from].id.clone(), net.buses[l.to].id.clone()));
            return Err(PdnError::CycleDetected(cycle));
        }
        uf[ra] = rb;
        adj[l.from].push((l.to, li));
        adj[l.to].push((l.from, li));
    }

    let mut parent = vec![None; nb];
    let mut parent_line = vec![None; nb];
    let mut children = vec![Vec::new(); nb];
    let mut seen = vec![false; nb];
    let mut order = Vec::with_capacity(nb);
    let mut queue = VecDeque::from([net.substation]);
    seen[net.substation] = true;
    while let Some(k) = queue.pop_front() {
        order.push(k);
        for &(n, li) in &adj[k] {
            if !seen[n] {
                seen[n] = true;
                parent[n] = Some(k);
                parent_line[n] = Some(li);
                children[k].push(n);
                queue.push_back(n);
            }
        }
    }
    let missing: Vec<String> =
        (0..nb).filter(|&k| !seen[k]).map(|k| net.buses[k].id.clone()).collect();
    if !missing.is_empty() {
        return Err(PdnError::DisconnectedBus(missing));
    }
    Ok(RadialTree { parent, parent_line, children, order })
}

fn path_between(adj: &[Vec<(usize, usize)>], from: usize, to: usize) -> Vec<usize> {
    let mut via: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(k) = queue.pop_front() {
        if k == to {
            break;
        }
        for &(n, li) in &adj[k] {
            if !seen[n] {
                seen[n] = true;
                via[n] = Some((k, li));
                queue.push_back(n);
            }
        }
    }
    let mut lines = Vec::new();
    let mut k = to;
    while let Some((prev, li)) = via[k] {
        lines.push(li);
        k = prev;
    }
    lines.reverse();
    lines
}

/// Squared voltages as an affine function of pump powers and forecast errors:
/// `Y[t,row] = y0[t,row] + Σ_e S[row,e] p_e^t + Σ_j W[row,j] Δρ_j^t`.
///
/// Sensitivities never couple different periods, so `S` and `W` are stored
/// once as per-period blocks; only `y0` depends on the period.
#[derive(Debug, Clone)]
pub struct VoltageAffineMap {
    pub rows: Vec<VoltageRow>,
    pub coords: Vec<ErrorCoord>,
    pub periods: usize,
    pub n_pumps: usize,
    pub base_power_va: f64,
    /// `[t][row]`, per-unit².
    pub y0: Vec<Vec<f64>>,
    /// rows × pumps, per-unit² per per-unit pump power.
    pub pump_sens: DMatrix<f64>,
    /// rows × coords, per-unit² per per-unit demand.
    pub error_sens: DMatrix<f64>,
}

impl VoltageAffineMap {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Error coordinates per period.
    pub fn n_t(&self) -> usize {
        self.coords.len()
    }

    pub fn n_errors(&self) -> usize {
        self.coords.len() * self.periods
    }

    /// Pump coefficient of `Y[t,row]` with respect to `p_pump^s` (per-unit).
    pub fn s(&self, row: usize, t: usize, pump: usize, s: usize) -> f64 {
        if t == s {
            self.pump_sens[(row, pump)]
        } else {
            0.0
        }
    }

    /// Error coefficient of `Y[t,row]` with respect to the full-vector coordinate `j`.
    pub fn w(&self, row: usize, t: usize, j: usize) -> f64 {
        let n_t = self.n_t();
        if j / n_t == t {
            self.error_sens[(row, j % n_t)]
        } else {
            0.0
        }
    }

    /// One period; pump powers in per-unit.
    pub fn eval_period(&self, t: usize, p_pu: &[f64], dr_t: &[f64]) -> Vec<f64> {
        let mut y = self.y0[t].clone();
        for (r, yr) in y.iter_mut().enumerate() {
            for (e, &p) in p_pu.iter().enumerate() {
                *yr += self.pump_sens[(r, e)] * p;
            }
            for (j, &d) in dr_t.iter().enumerate() {
                *yr += self.error_sens[(r, j)] * d;
            }
        }
        y
    }

    /// `y0 + S·p + W·Δρ` for the whole horizon.
    ///
    /// `p_w` holds single-phase pump powers in W, period-major (`t * n_pumps + e`);
    /// `dr` holds per-unit errors, period-major. Output is `t * n_rows + row`.
    pub fn evaluate(&self, p_w: &[f64], dr: &[f64]) -> Result<Vec<f64>, PdnError> {
        if p_w.len() != self.n_pumps * self.periods {
            return Err(PdnError::DimensionMismatch(format!(
                "pump vector has {} entries, expected {}",
                p_w.len(),
                self.n_pumps * self.periods
            )));
        }
        if dr.len() != self.n_errors() {
            return Err(PdnError::DimensionMismatch(format!(
                "error vector has {} entries, expected {}",
                dr.len(),
                self.n_errors()
            )));
        }
        let n_t = self.n_t();
        let mut out = Vec::with_capacity(self.n_rows() * self.periods);
        for t in 0..self.periods {
            let p_pu: Vec<f64> = p_w[t * self.n_pumps..(t + 1) * self.n_pumps]
                .iter()
                .map(|p| p / self.base_power_va)
                .collect();
            out.extend(self.eval_period(t, &p_pu, &dr[t * n_t..(t + 1) * n_t]));
        }
        Ok(out)
    }
}

/// Free function form of [`VoltageAffineMap::evaluate`].
pub fn evaluate_voltages(map: &VoltageAffineMap, p_w: &[f64], dr: &[f64]) -> Result<Vec<f64>, PdnError> {
    map.evaluate(p_w, dr)
}

fn check_phase_nesting(net: &PdnNetwork, tree: &RadialTree) -> Result<(), PdnError> {
    for (k, parent) in tree.parent.iter().enumerate() {
        if let Some(p) = *parent {
            let ok = (0..3).all(|ph| !net.buses[k].phases[ph] || net.buses[p].phases[ph]);
            if !ok {
                return Err(PdnError::PhaseMismatch {
                    parent: net.buses[p].id.clone(),
                    child: net.buses[k].id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Eliminates the line flows by substitution: the sensitivity of `Y_k,φ` to an
/// injection at bus `j`, phase `ψ` is minus the sum of `M[φ][ψ]` over the
/// lines shared by the substation paths of `k` and `j`.
pub fn build_voltage_map(net: &PdnNetwork) -> Result<VoltageAffineMap, PdnError> {
    net.check()?;
    let tree = validate_radial(net)?;
    check_phase_nesting(net, &tree)?;

    let nb = net.buses.len();
    let paths: Vec<Vec<usize>> = (0..nb).map(|k| tree.path_lines(k)).collect();
    let shared = |a: usize, b: usize| -> Vec<usize> {
        paths[a].iter().zip(&paths[b]).take_while(|(x, y)| x == y).map(|(x, _)| *x).collect()
    };
    // sum of M and N over the shared path, for every bus pair
    let mut m_sum = vec![[[0.0; 3]; 3]; nb * nb];
    let mut n_sum = vec![[[0.0; 3]; 3]; nb * nb];
    for a in 0..nb {
        for b in 0..nb {
            for li in shared(a, b) {
                let l = &net.lines[li];
                for phi in 0..3 {
                    for psi in 0..3 {
                        m_sum[a * nb + b][phi][psi] += l.m[phi][psi];
                        n_sum[a * nb + b][phi][psi] += l.n[phi][psi];
                    }
                }
            }
        }
    }

    let rows = net.voltage_rows();
    let coords = net.error_coords();
    let np = net.pumps.len();

    let mut pump_sens = DMatrix::zeros(rows.len(), np);
    let mut error_sens = DMatrix::zeros(rows.len(), coords.len());
    for (r, row) in rows.iter().enumerate() {
        for (e, pump) in net.pumps.iter().enumerate() {
            let (ms, ns) = (&m_sum[row.bus * nb + pump.bus], &n_sum[row.bus * nb + pump.bus]);
            pump_sens[(r, e)] = -(0..3).map(|psi| ms[row.phase][psi] + pump.eta * ns[row.phase][psi]).sum::<f64>();
        }
        for (j, c) in coords.iter().enumerate() {
            error_sens[(r, j)] = -m_sum[row.bus * nb + c.bus][row.phase][c.phase];
        }
    }

    let mut y0 = Vec::with_capacity(net.periods);
    for t in 0..net.periods {
        let mut yt = Vec::with_capacity(rows.len());
        for row in &rows {
            let mut y = net.substation_voltage_sq[row.phase];
            for (j, bus) in net.buses.iter().enumerate() {
                if j == net.substation {
                    continue;
                }
                let (ms, ns) = (&m_sum[row.bus * nb + j], &n_sum[row.bus * nb + j]);
                for psi in 0..3 {
                    if bus.phases[psi] {
                        y -= ms[row.phase][psi] * bus.p_demand[t][psi]
                            + ns[row.phase][psi] * bus.q_demand[t][psi];
                    }
                }
            }
            yt.push(y);
        }
        y0.push(yt);
    }

    Ok(VoltageAffineMap {
        rows,
        coords,
        periods: net.periods,
        n_pumps: np,
        base_power_va: net.base_power_va,
        y0,
        pump_sens,
        error_sens,
    })
}

/// Direct recursive evaluation of the flow and voltage equations for one
/// period: flows accumulate leaf-to-root, voltages drop root-to-leaf.
///
/// `p_w` is per pump (single-phase W); `dr_t` follows [`PdnNetwork::error_coords`].
/// Returns `Y` per bus and phase (absent phases are left at zero).
pub fn recursive_voltages(
    net: &PdnNetwork,
    tree: &RadialTree,
    t: usize,
    p_w: &[f64],
    dr_t: &[f64],
) -> Vec<[f64; 3]> {
    let nb = net.buses.len();
    let mut flow_p = vec![[0.0; 3]; nb];
    let mut flow_q = vec![[0.0; 3]; nb];
    for (k, bus) in net.buses.iter().enumerate() {
        for ph in 0..3 {
            if bus.phases[ph] {
                flow_p[k][ph] = bus.p_demand[t][ph];
                flow_q[k][ph] = bus.q_demand[t][ph];
            }
        }
    }
    for (c, &d) in net.error_coords().iter().zip(dr_t) {
        flow_p[c.bus][c.phase] += d;
    }
    for (pump, &p) in net.pumps.iter().zip(p_w) {
        let p_pu = p / net.base_power_va;
        for ph in 0..3 {
            flow_p[pump.bus][ph] += p_pu;
            flow_q[pump.bus][ph] += pump.eta * p_pu;
        }
    }
    for &k in tree.order.iter().rev() {
        if let Some(par) = tree.parent[k] {
            let (pk, qk) = (flow_p[k], flow_q[k]);
            for ph in 0..3 {
                flow_p[par][ph] += pk[ph];
                flow_q[par][ph] += qk[ph];
            }
        }
    }

    let mut y = vec![[0.0; 3]; nb];
    y[net.substation] = net.substation_voltage_sq;
    for &k in &tree.order {
        if let (Some(par), Some(li)) = (tree.parent[k], tree.parent_line[k]) {
            let l = &net.lines[li];
            for phi in 0..3 {
                if !net.buses[k].phases[phi] {
                    continue;
                }
                let mut v = y[par][phi];
                for psi in 0..3 {
                    if net.buses[k].phases[psi] {
                        v -= l.m[phi][psi] * flow_p[k][psi] + l.n[phi][psi] * flow_q[k][psi];
                    }
                }
                y[k][phi] = v;
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: &str, periods: usize, p: [f64; 3], q: [f64; 3]) -> Bus {
        Bus { id: id.into(), phases: [true; 3], p_demand: vec![p; periods], q_demand: vec![q; periods] }
    }

    fn diag(v: f64) -> [[f64; 3]; 3] {
        [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]]
    }

    fn net_with_lines(n_buses: usize, lines: &[(usize, usize)]) -> PdnNetwork {
        PdnNetwork {
            buses: (0..n_buses).map(|k| bus(&format!("b{k}"), 1, [0.0; 3], [0.0; 3])).collect(),
            lines: lines.iter().map(|&(f, t)| Line { from: f, to: t, m: diag(0.01), n: diag(0.01) }).collect(),
            substation: 0,
            substation_voltage_sq: [1.0; 3],
            pumps: vec![],
            v_min: 0.95,
            v_max: 1.05,
            base_power_va: 1.0,
            periods: 1,
            dt_hours: 1.0,
        }
    }

    /// Single-phase-like toy: scalar m, n on the diagonal, one load on bus 1.
    fn toy(m: f64, n: f64, rho: f64, zeta: f64, pump_eta: Option<f64>) -> PdnNetwork {
        let mut net = net_with_lines(2, &[(0, 1)]);
        net.lines[0].m = diag(m);
        net.lines[0].n = diag(n);
        net.buses[1].p_demand = vec![[rho, 0.0, 0.0]];
        net.buses[1].q_demand = vec![[zeta, 0.0, 0.0]];
        if let Some(eta) = pump_eta {
            net.pumps.push(PumpAttachment { pump: "P1".into(), bus: 1, eta });
        }
        net
    }

    #[test]
    fn chain_is_radial() {
        let tree = validate_radial(&net_with_lines(3, &[(0, 1), (1, 2)])).unwrap();
        assert_eq!(tree.order, vec![0, 1, 2]);
        assert_eq!(tree.path_lines(2), vec![0, 1]);
    }

    #[test]
    fn triangle_has_cycle() {
        let err = validate_radial(&net_with_lines(3, &[(0, 1), (1, 2), (2, 0)])).unwrap_err();
        match err {
            PdnError::CycleDetected(edges) => assert_eq!(edges.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreachable_buses_listed() {
        let err = validate_radial(&net_with_lines(4, &[(0, 1)])).unwrap_err();
        assert_eq!(err, PdnError::DisconnectedBus(vec!["b2".into(), "b3".into()]));
    }

    #[test]
    fn zero_demand_reproduces_substation_voltage() {
        let mut net = net_with_lines(4, &[(0, 1), (1, 2), (1, 3)]);
        net.substation_voltage_sq = [1.02, 1.01, 1.03];
        net.periods = 2;
        for b in &mut net.buses {
            b.p_demand = vec![[0.0; 3]; 2];
            b.q_demand = vec![[0.0; 3]; 2];
        }
        let map = build_voltage_map(&net).unwrap();
        for t in 0..2 {
            for (r, row) in map.rows.iter().enumerate() {
                assert_eq!(map.y0[t][r], net.substation_voltage_sq[row.phase]);
            }
        }
    }

    #[test]
    fn two_bus_toy_closed_form() {
        let (m, n, rho, zeta) = (0.05, 0.02, 0.1, 0.03);
        let map = build_voltage_map(&toy(m, n, rho, zeta, None)).unwrap();
        let r = map.rows.iter().position(|r| r.bus == 1 && r.phase == 0).unwrap();
        assert!((map.y0[0][r] - (1.0 - m * rho - n * zeta)).abs() < 1e-15);
    }

    #[test]
    fn two_bus_toy_pump_coefficient() {
        let (m, n, eta) = (0.05, 0.02, 0.4);
        let map = build_voltage_map(&toy(m, n, 0.1, 0.0, Some(eta))).unwrap();
        let r = map.rows.iter().position(|r| r.bus == 1 && r.phase == 0).unwrap();
        // diagonal M, N: only the own-phase share of the balanced pump counts
        assert!((map.pump_sens[(r, 0)] + (m + n * eta)).abs() < 1e-15);
    }

    #[test]
    fn two_bus_toy_evaluates_to_0995() {
        let map = build_voltage_map(&toy(0.05, 0.0, 0.1, 0.0, None)).unwrap();
        let y = map.evaluate(&[], &[0.0]).unwrap();
        let r = map.rows.iter().position(|r| r.bus == 1 && r.phase == 0).unwrap();
        assert!((y[r] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn evaluate_checks_dimensions() {
        let map = build_voltage_map(&toy(0.05, 0.0, 0.1, 0.0, Some(0.1))).unwrap();
        assert!(matches!(map.evaluate(&[], &[0.0]), Err(PdnError::DimensionMismatch(_))));
        assert!(matches!(map.evaluate(&[1.0], &[]), Err(PdnError::DimensionMismatch(_))));
    }

    #[test]
    fn pump_on_single_phase_bus_rejected() {
        let mut net = toy(0.05, 0.0, 0.1, 0.0, Some(0.1));
        net.buses[1].phases = [true, false, false];
        assert!(matches!(build_voltage_map(&net), Err(PdnError::PumpNotThreePhase { .. })));
    }

    #[test]
    fn missing_demand_rejected() {
        let mut net = toy(0.05, 0.0, 0.1, 0.0, None);
        net.periods = 2;
        net.buses[0].p_demand = vec![[0.0; 3]; 2];
        net.buses[0].q_demand = vec![[0.0; 3]; 2];
        assert!(matches!(build_voltage_map(&net), Err(PdnError::MissingDemand { .. })));
    }
}
