//! The deterministic, robust and probabilistic pump scheduling problems.
//!
//! Inside the problems pump powers are per-unit on the power network base:
//! `p` is single-phase, capacities `R̄`, `R̲` are three-phase, and the policy
//! `C` is dimensionless. A pump's extreme single-phase powers are
//! `p ± R/3`. Schedules are reported in W.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ConicBackend, LinExpr, SolveResult, SolveStatus, StandardProblem};
use crate::instance::Instance;
use crate::uncertainty::{std_normal_quantile, FittedNormal, RobustBox, UncertaintyError};
use crate::wdn::{hull_constraints, EdgeKind, HydraulicState, NodeKind, WdnError, SECONDS_PER_HOUR};

pub const SCHEDULE_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error("pipe {pipe:?}: {source}")]
    Hull { pipe: String, source: WdnError },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Deterministic,
    Robust,
    Probabilistic,
    /// Deterministic water scheduling plus voltage limits at zero forecast error.
    CoupledNominal,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Deterministic => "deterministic",
            Mode::Robust => "robust",
            Mode::Probabilistic => "probabilistic",
            Mode::CoupledNominal => "coupled-nominal",
        })
    }
}

/// Violation level, either shared by every constraint of a family or given per constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Uniform(f64),
    PerConstraint(Vec<f64>),
}

impl Epsilon {
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Epsilon::Uniform(e) => *e,
            Epsilon::PerConstraint(v) => v[i],
        }
    }

    fn check(&self, len: usize, what: &str) -> Result<(), FormulationError> {
        let values: Vec<f64> = match self {
            Epsilon::Uniform(e) => vec![*e],
            Epsilon::PerConstraint(v) => {
                if v.len() != len {
                    return Err(FormulationError::DimensionMismatch(format!(
                        "{what} has {} levels, expected {len}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        // above one half the reformulation is no longer convex
        if values.iter().any(|e| !(*e > 0.0 && *e <= 0.5)) {
            return Err(FormulationError::Config(format!("{what} levels must lie in (0, 0.5]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulationConfig {
    pub mode: Mode,
    /// Voltage chance constraints, indexed `((t * n_rows + row) * 2 + side)` with
    /// side 0 the upper limit; substation rows are counted but unused.
    pub eps_p: Epsilon,
    /// Capacity chance constraints, indexed `((t * n_pumps + pump) * 2 + side)` with
    /// side 0 the upward capacity.
    pub eps_w: Epsilon,
    /// $/MWh per period.
    pub energy_price: Vec<f64>,
    /// $/MWh per period.
    pub support_price: Vec<f64>,
    /// Require every tank to end at or above its initial level in the scheduled state.
    pub final_tank: bool,
}

impl FormulationConfig {
    pub fn new(mode: Mode, energy_price: Vec<f64>, support_price: Vec<f64>) -> Self {
        FormulationConfig {
            mode,
            eps_p: Epsilon::Uniform(0.05),
            eps_w: Epsilon::Uniform(0.05),
            energy_price,
            support_price,
            final_tank: true,
        }
    }

    fn check(&self, inst: &Instance) -> Result<(), FormulationError> {
        let t = inst.periods();
        if self.energy_price.len() != t || self.support_price.len() != t {
            return Err(FormulationError::DimensionMismatch(format!(
                "need {t} energy and support prices, got {} and {}",
                self.energy_price.len(),
                self.support_price.len()
            )));
        }
        if self.energy_price.iter().chain(&self.support_price).any(|p| !p.is_finite()) {
            return Err(FormulationError::Config("prices must be finite".into()));
        }
        Ok(())
    }
}

/// Variables of one copy of the water network constraints.
#[derive(Debug, Clone)]
pub struct WaterVars {
    /// `[node][t]`, `None` for reservoirs.
    pub heads: Vec<Vec<Option<usize>>>,
    /// `[edge][t]`.
    pub flows: Vec<Vec<usize>>,
    /// `[tank][t]`, level at the end of period `t`.
    pub levels: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Layout {
    /// `[pump][t]`, single-phase per-unit.
    pub p: Vec<Vec<usize>>,
    /// `[pump][t]`, three-phase per-unit.
    pub r_up: Option<Vec<Vec<usize>>>,
    pub r_down: Option<Vec<Vec<usize>>>,
    /// `[pump][t][j]`.
    pub policy: Option<Vec<Vec<Vec<usize>>>>,
    pub water_nominal: WaterVars,
    pub water_up: Option<WaterVars>,
    pub water_down: Option<WaterVars>,
}

/// A built problem with the bookkeeping needed to read a schedule back.
#[derive(Debug, Clone)]
pub struct Formulation {
    pub mode: Mode,
    pub problem: StandardProblem,
    pub layout: Layout,
    pub config: FormulationConfig,
}

fn mwh_factor(inst: &Instance) -> f64 {
    inst.dt_hours() * inst.base_power() / 1e6
}

/// Adds one copy of the water constraints driven by the single-phase per-unit
/// pump powers `power(pump, t)`: mass balance, tank recursion, head, level
/// and flow bounds, pump head gain, the power-flow link and the pipe hull.
fn add_water_block(
    prob: &mut StandardProblem,
    inst: &Instance,
    tag: &str,
    power: &dyn Fn(usize, usize) -> LinExpr,
    final_tank: bool,
) -> Result<WaterVars, FormulationError> {
    let net = &inst.wdn;
    let periods = net.periods;
    let mut heads = vec![vec![None; periods]; net.nodes.len()];
    let mut flows = vec![Vec::with_capacity(periods); net.edges.len()];
    let tanks = net.tanks();
    let mut levels = vec![Vec::with_capacity(periods); tanks.len()];

    let hulls: Vec<Option<[crate::wdn::HullLine; 4]>> = net
        .edges
        .iter()
        .map(|e| match e.kind {
            EdgeKind::Pipe { resistance } => hull_constraints(resistance, e.flow_min, e.flow_max)
                .map(Some)
                .map_err(|source| FormulationError::Hull { pipe: e.id.clone(), source }),
            EdgeKind::Pump(_) => Ok(None),
        })
        .collect::<Result<_, _>>()?;

    for t in 0..periods {
        for (i, node) in net.nodes.iter().enumerate() {
            if let Some((lo, hi)) = node.head_limits() {
                heads[i][t] = Some(prob.add_var(format!("{tag}H[{},{t}]", node.id), lo, hi));
            }
        }
        for (e, edge) in net.edges.iter().enumerate() {
            flows[e].push(prob.add_var(format!("{tag}x[{},{t}]", edge.id), edge.flow_min, edge.flow_max));
        }
        for (k, &tank) in tanks.iter().enumerate() {
            let NodeKind::Tank { level_min, level_max, .. } = net.nodes[tank].kind else { unreachable!() };
            levels[k].push(prob.add_var(format!("{tag}l[{},{t}]", net.nodes[tank].id), level_min, level_max));
        }
    }

    let head = |i: usize, t: usize| -> LinExpr {
        match (heads[i][t], &net.nodes[i].kind) {
            (Some(v), _) => LinExpr::var(v),
            (None, NodeKind::Reservoir { head }) => LinExpr::constant(*head),
            _ => unreachable!(),
        }
    };

    for t in 0..periods {
        for (i, node) in net.nodes.iter().enumerate() {
            if !node.is_junction() && !node.is_tank() {
                continue;
            }
            let mut inflow = LinExpr::zero();
            for (e, edge) in net.edges.iter().enumerate() {
                if edge.to == i {
                    inflow.add_term(flows[e][t], 1.0);
                }
                if edge.from == i {
                    inflow.add_term(flows[e][t], -1.0);
                }
            }
            if node.is_junction() {
                prob.add_eq(inflow, -net.demands[i][t]);
            } else {
                let k = tanks.iter().position(|&x| x == i).unwrap();
                let NodeKind::Tank { area, level_init, .. } = node.kind else { unreachable!() };
                let mut expr = LinExpr::var(levels[k][t]);
                if t == 0 {
                    expr.constant -= level_init;
                } else {
                    expr.add_term(levels[k][t - 1], -1.0);
                }
                expr.add_expr(&inflow, -net.dt_hours * SECONDS_PER_HOUR / area);
                prob.add_eq(expr, 0.0);
            }
        }
        for (e, edge) in net.edges.iter().enumerate() {
            let x = flows[e][t];
            match &edge.kind {
                EdgeKind::Pipe { .. } => {
                    let dh = head(edge.from, t) - head(edge.to, t);
                    for line in hulls[e].as_ref().unwrap() {
                        let expr = dh.clone() + LinExpr::term(x, -line.slope);
                        if line.upper {
                            prob.add_le(expr, line.intercept);
                        } else {
                            prob.add_ge(expr, line.intercept);
                        }
                    }
                }
                EdgeKind::Pump(c) => {
                    let gain = head(edge.to, t) - head(edge.from, t) + LinExpr::term(x, -c.head_slope);
                    prob.add_eq(gain, c.head_offset);
                    let k = inst.pump_edges.iter().position(|&p| p == e).expect("attached pump");
                    let link = LinExpr::var(x) - power(k, t) * (inst.base_power() / c.power_slope);
                    prob.add_eq(link, -c.power_offset / c.power_slope);
                }
            }
        }
    }
    if final_tank {
        for (k, &tank) in tanks.iter().enumerate() {
            let NodeKind::Tank { level_init, .. } = net.nodes[tank].kind else { unreachable!() };
            prob.add_ge(LinExpr::var(levels[k][periods - 1]), level_init);
        }
    }
    Ok(WaterVars { heads, flows, levels })
}

/// Adds `τ_j ≥ |b_j|` for every coordinate with a positive half-width and
/// returns `Σ_j δ_j τ_j`, the largest value of `b·Δ` over the box `|Δ_j| ≤ δ_j`.
pub fn add_box_deviation(prob: &mut StandardProblem, b: &[LinExpr], half_width: &[f64], tag: &str) -> LinExpr {
    let mut out = LinExpr::zero();
    for (j, (bj, &d)) in b.iter().zip(half_width).enumerate() {
        if d == 0.0 {
            continue;
        }
        let bj = bj.clone().compact();
        if bj.terms.is_empty() {
            out.constant += d * bj.constant.abs();
            continue;
        }
        let tau = prob.add_var(format!("{tag}tau[{j}]"), 0.0, f64::INFINITY);
        prob.add_ge(LinExpr::var(tau) - bj.clone(), 0.0);
        prob.add_ge(LinExpr::var(tau) + bj, 0.0);
        out.add_term(tau, d);
    }
    out
}

/// Returns an expression `s` with `s ≥ ‖Lᵀ b‖₂`, the standard deviation of
/// `b·Δ` when `Δ` has covariance `L·Lᵀ`.
pub fn add_gaussian_deviation(prob: &mut StandardProblem, b: &[LinExpr], factor: &DMatrix<f64>, tag: &str) -> LinExpr {
    let n = b.len();
    let mut u = Vec::with_capacity(factor.ncols());
    for i in 0..factor.ncols() {
        let mut e = LinExpr::zero();
        for j in 0..n {
            let l = factor[(j, i)];
            if l != 0.0 {
                e.add_expr(&b[j], l);
            }
        }
        let e = e.compact();
        if !e.terms.is_empty() || e.constant != 0.0 {
            u.push(e);
        }
    }
    if u.is_empty() {
        return LinExpr::zero();
    }
    if u.iter().all(|e| e.terms.is_empty()) {
        return LinExpr::constant(u.iter().map(|e| e.constant * e.constant).sum::<f64>().sqrt());
    }
    let s = prob.add_var(format!("{tag}s"), 0.0, f64::INFINITY);
    prob.add_cone(LinExpr::var(s), u);
    LinExpr::var(s)
}

/// Robust counterpart of `a + b·Δ ≤ c` for all `|Δ_j| ≤ δ_j`.
pub fn add_robust_le(prob: &mut StandardProblem, a: LinExpr, b: &[LinExpr], half_width: &[f64], c: f64, tag: &str) -> usize {
    let dev = add_box_deviation(prob, b, half_width, tag);
    prob.add_le(a + dev, c)
}

/// Deterministic equivalent of `P[a + b·Δ ≤ c] ≥ 1 − ε` for normal `Δ` with
/// the given mean and covariance factor:
/// `a + b·μ + Φ⁻¹(1−ε)·‖Lᵀb‖ ≤ c`.
pub fn add_chance_le(
    prob: &mut StandardProblem,
    a: LinExpr,
    b: &[LinExpr],
    mean: &[f64],
    factor: &DMatrix<f64>,
    eps: f64,
    c: f64,
    tag: &str,
) -> Result<usize, FormulationError> {
    let kappa = std_normal_quantile(1.0 - eps)?;
    let mut lhs = a;
    for (bj, &m) in b.iter().zip(mean) {
        if m != 0.0 {
            lhs.add_expr(bj, m);
        }
    }
    if kappa != 0.0 {
        let s = add_gaussian_deviation(prob, b, factor, tag);
        lhs.add_expr(&s, kappa);
    }
    Ok(prob.add_le(lhs, c))
}

enum Uncertainty<'a> {
    None,
    Box(&'a RobustBox),
    Normal { fitted: &'a FittedNormal, factors: Vec<DMatrix<f64>> },
}

fn build(inst: &Instance, config: &FormulationConfig, unc: Uncertainty) -> Result<Formulation, FormulationError> {
    config.check(inst)?;
    let mode = config.mode;
    let periods = inst.periods();
    let np = inst.n_pumps();
    let n_t = inst.n_t();
    let mwh = mwh_factor(inst);
    let mut prob = StandardProblem::new();

    let p: Vec<Vec<usize>> = (0..np)
        .map(|e| (0..periods).map(|t| prob.add_var(format!("p[{e},{t}]"), f64::NEG_INFINITY, f64::INFINITY)).collect())
        .collect();
    for e in 0..np {
        for t in 0..periods {
            prob.add_objective(&LinExpr::term(p[e][t], 3.0 * config.energy_price[t] * mwh));
        }
    }

    let adjustable = matches!(mode, Mode::Robust | Mode::Probabilistic);
    let (r_up, r_down, policy) = if adjustable {
        let mut mk = |name: &str| -> Vec<Vec<usize>> {
            (0..np)
                .map(|e| (0..periods).map(|t| prob.add_var(format!("{name}[{e},{t}]"), 0.0, f64::INFINITY)).collect())
                .collect()
        };
        let up = mk("Rup");
        let down = mk("Rdn");
        for e in 0..np {
            for t in 0..periods {
                let c = config.support_price[t] * mwh;
                prob.add_objective(&LinExpr::term(up[e][t], c));
                prob.add_objective(&LinExpr::term(down[e][t], c));
            }
        }
        let pol: Vec<Vec<Vec<usize>>> = (0..np)
            .map(|e| {
                (0..periods)
                    .map(|t| {
                        (0..n_t)
                            .map(|j| prob.add_var(format!("C[{e},{t},{j}]"), f64::NEG_INFINITY, f64::INFINITY))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        (Some(up), Some(down), Some(pol))
    } else {
        (None, None, None)
    };

    let p_expr = |e: usize, t: usize| LinExpr::var(p[e][t]);
    let water_nominal = add_water_block(&mut prob, inst, "", &p_expr, config.final_tank)?;
    let (water_up, water_down) = if let (Some(up), Some(down)) = (&r_up, &r_down) {
        let hi = |e: usize, t: usize| LinExpr::var(p[e][t]) + LinExpr::term(up[e][t], 1.0 / 3.0);
        let lo = |e: usize, t: usize| LinExpr::var(p[e][t]) + LinExpr::term(down[e][t], -1.0 / 3.0);
        (
            Some(add_water_block(&mut prob, inst, "up:", &hi, false)?),
            Some(add_water_block(&mut prob, inst, "dn:", &lo, false)?),
        )
    } else {
        (None, None)
    };

    if mode != Mode::Deterministic {
        let map = &inst.map;
        let (y_lo, y_hi) = (inst.pdn.v_min * inst.pdn.v_min, inst.pdn.v_max * inst.pdn.v_max);
        let n_rows = map.n_rows();
        for t in 0..periods {
            for r in inst.limited_rows() {
                let mut a = LinExpr::constant(map.y0[t][r]);
                for e in 0..np {
                    a.add_term(p[e][t], map.pump_sens[(r, e)]);
                }
                let b = || -> Vec<LinExpr> {
                    (0..n_t)
                        .map(|j| {
                            let mut bj = LinExpr::constant(map.error_sens[(r, j)]);
                            if let Some(pol) = &policy {
                                for e in 0..np {
                                    bj.add_term(pol[e][t][j], map.pump_sens[(r, e)]);
                                }
                            }
                            bj
                        })
                        .collect()
                };
                let tag = format!("V[{r},{t}]");
                match &unc {
                    Uncertainty::None => {
                        prob.add_le(a.clone(), y_hi);
                        prob.add_ge(a, y_lo);
                    }
                    Uncertainty::Box(bx) => {
                        let dev = add_box_deviation(&mut prob, &b(), &bx.half_width[t * n_t..(t + 1) * n_t], &tag);
                        prob.add_le(a.clone() + dev.clone(), y_hi);
                        prob.add_ge(a - dev, y_lo);
                    }
                    Uncertainty::Normal { fitted, factors } => {
                        let i = (t * n_rows + r) * 2;
                        let k_hi = std_normal_quantile(1.0 - config.eps_p.at(i))?;
                        let k_lo = std_normal_quantile(1.0 - config.eps_p.at(i + 1))?;
                        let b = b();
                        let mut mean = a;
                        for (j, bj) in b.iter().enumerate() {
                            let m = fitted.mean[t * n_t + j];
                            if m != 0.0 {
                                mean.add_expr(bj, m);
                            }
                        }
                        if k_hi == 0.0 && k_lo == 0.0 {
                            prob.add_le(mean.clone(), y_hi);
                            prob.add_ge(mean, y_lo);
                        } else {
                            let s = add_gaussian_deviation(&mut prob, &b, &factors[t], &tag);
                            prob.add_le(mean.clone() + s.scaled(k_hi), y_hi);
                            prob.add_ge(mean - s.scaled(k_lo), y_lo);
                        }
                    }
                }
            }
        }
    }

    if let (Some(up), Some(down), Some(pol)) = (&r_up, &r_down, &policy) {
        for e in 0..np {
            for t in 0..periods {
                let b: Vec<LinExpr> = (0..n_t).map(|j| LinExpr::term(pol[e][t][j], 3.0)).collect();
                let tag = format!("R[{e},{t}]");
                match &unc {
                    Uncertainty::Box(bx) => {
                        let dev = add_box_deviation(&mut prob, &b, &bx.half_width[t * n_t..(t + 1) * n_t], &tag);
                        prob.add_le(dev.clone() - LinExpr::var(up[e][t]), 0.0);
                        prob.add_le(dev - LinExpr::var(down[e][t]), 0.0);
                    }
                    Uncertainty::Normal { fitted, factors } => {
                        let i = (t * np + e) * 2;
                        let k_hi = std_normal_quantile(1.0 - config.eps_w.at(i))?;
                        let k_lo = std_normal_quantile(1.0 - config.eps_w.at(i + 1))?;
                        let mut mean = LinExpr::zero();
                        for (j, bj) in b.iter().enumerate() {
                            let m = fitted.mean[t * n_t + j];
                            if m != 0.0 {
                                mean.add_expr(bj, m);
                            }
                        }
                        let s = if k_hi == 0.0 && k_lo == 0.0 {
                            LinExpr::zero()
                        } else {
                            add_gaussian_deviation(&mut prob, &b, &factors[t], &tag)
                        };
                        prob.add_le(mean.clone() + s.scaled(k_hi) - LinExpr::var(up[e][t]), 0.0);
                        prob.add_le(s.scaled(k_lo) - mean - LinExpr::var(down[e][t]), 0.0);
                    }
                    Uncertainty::None => {}
                }
            }
        }
    }

    Ok(Formulation {
        mode,
        problem: prob,
        layout: Layout { p, r_up, r_down, policy, water_nominal, water_up, water_down },
        config: config.clone(),
    })
}

fn with_mode(config: &FormulationConfig, mode: Mode) -> FormulationConfig {
    FormulationConfig { mode, ..config.clone() }
}

/// Water-only scheduling: no power network constraints, no adjustment.
pub fn build_deterministic(inst: &Instance, config: &FormulationConfig) -> Result<Formulation, FormulationError> {
    build(inst, &with_mode(config, Mode::Deterministic), Uncertainty::None)
}

/// Deterministic scheduling plus voltage limits at zero forecast error.
pub fn build_coupled_nominal(inst: &Instance, config: &FormulationConfig) -> Result<Formulation, FormulationError> {
    build(inst, &with_mode(config, Mode::CoupledNominal), Uncertainty::None)
}

/// Adjustable robust scheduling against every error in the box.
pub fn build_robust(inst: &Instance, config: &FormulationConfig, bx: &RobustBox) -> Result<Formulation, FormulationError> {
    if bx.dim() != inst.n_errors() {
        return Err(FormulationError::DimensionMismatch(format!(
            "box has {} coordinates, instance has {}",
            bx.dim(),
            inst.n_errors()
        )));
    }
    if bx.half_width.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(FormulationError::Config("box half-widths must be finite and nonnegative".into()));
    }
    build(inst, &with_mode(config, Mode::Robust), Uncertainty::Box(bx))
}

/// Chance-constrained voltages and probabilistically robust water constraints
/// under a normal error model.
pub fn build_probabilistic(
    inst: &Instance,
    config: &FormulationConfig,
    fitted: &FittedNormal,
) -> Result<Formulation, FormulationError> {
    if fitted.dim() != inst.n_errors() {
        return Err(FormulationError::DimensionMismatch(format!(
            "fitted distribution has {} coordinates, instance has {}",
            fitted.dim(),
            inst.n_errors()
        )));
    }
    config.eps_p.check(2 * inst.map.n_rows() * inst.periods(), "eps_p")?;
    config.eps_w.check(2 * inst.n_pumps() * inst.periods(), "eps_w")?;
    let n_t = inst.n_t();
    let factors = (0..inst.periods())
        .map(|t| fitted.block_factor(t * n_t, n_t))
        .collect::<Result<Vec<_>, _>>()?;
    build(inst, &with_mode(config, Mode::Probabilistic), Uncertainty::Normal { fitted, factors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Scheduled energy cost ($).
    pub energy: f64,
    /// Voltage support capacity cost ($).
    pub support: f64,
    pub total: f64,
}

/// Cost of a schedule: `ΔT Σ_t Σ_e [3 π^t p^t_e + π_vs^t (R̄^t_e + R̲^t_e)]` with
/// powers in W (`p` single-phase, capacities three-phase) and prices in $/MWh.
pub fn objective(
    p_w: &[Vec<f64>],
    r_up_w: &[Vec<f64>],
    r_down_w: &[Vec<f64>],
    energy_price: &[f64],
    support_price: &[f64],
    dt_hours: f64,
) -> CostBreakdown {
    let mut energy = 0.0;
    let mut support = 0.0;
    for (e, series) in p_w.iter().enumerate() {
        for (t, &p) in series.iter().enumerate() {
            energy += dt_hours * 3.0 * energy_price[t] * p / 1e6;
            let r = r_up_w.get(e).map_or(0.0, |v| v[t]) + r_down_w.get(e).map_or(0.0, |v| v[t]);
            support += dt_hours * support_price[t] * r / 1e6;
        }
    }
    CostBreakdown { energy, support, total: energy + support }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionSchedule {
    pub schema: u32,
    pub mode: Mode,
    pub status: SolveStatus,
    pub pumps: Vec<String>,
    pub periods: usize,
    /// Error coordinates per period.
    pub n_t: usize,
    pub base_power_va: f64,
    /// `[pump][t]`, single-phase W.
    pub p_nom: Vec<Vec<f64>>,
    /// `[pump][t][j]`, W per W.
    pub policy: Vec<Vec<Vec<f64>>>,
    /// `[pump][t]`, three-phase W.
    pub r_up: Vec<Vec<f64>>,
    pub r_down: Vec<Vec<f64>>,
    pub water_nominal: HydraulicState,
    pub water_up: Option<HydraulicState>,
    pub water_down: Option<HydraulicState>,
    pub objective: f64,
    pub cost: CostBreakdown,
    /// Wall-clock solve time; kept out of the serialized form so files are reproducible.
    #[serde(skip)]
    pub solve_time_s: f64,
}

impl DecisionSchedule {
    /// Single-phase pump powers at the upper and lower ends of the reserved range (W).
    pub fn extreme_powers(&self, e: usize, t: usize) -> (f64, f64) {
        (self.p_nom[e][t] - self.r_down[e][t] / 3.0, self.p_nom[e][t] + self.r_up[e][t] / 3.0)
    }

    pub fn check_against(&self, inst: &Instance) -> Result<(), FormulationError> {
        let ok = self.pumps == inst.pump_ids()
            && self.periods == inst.periods()
            && self.n_t == inst.n_t()
            && self.p_nom.len() == self.pumps.len()
            && self.p_nom.iter().all(|s| s.len() == self.periods)
            && self.r_up.len() == self.pumps.len()
            && self.r_down.len() == self.pumps.len()
            && self.policy.len() == self.pumps.len()
            && self.policy.iter().all(|s| s.len() == self.periods && s.iter().all(|c| c.len() == self.n_t));
        if ok {
            Ok(())
        } else {
            Err(FormulationError::DimensionMismatch(format!(
                "schedule ({} pumps, {} periods, {} error coordinates) does not fit the instance ({} pumps, {} periods, {} error coordinates)",
                self.pumps.len(),
                self.periods,
                self.n_t,
                inst.n_pumps(),
                inst.periods(),
                inst.n_t()
            )))
        }
    }
}

/// `p^t = p_nom^t + C^t·Δρ^t` for every pump, in W; `dr_t` is per-unit.
pub fn realize_pump_power(schedule: &DecisionSchedule, dr_t: &[f64], t: usize) -> Result<Vec<f64>, FormulationError> {
    if t >= schedule.periods || dr_t.len() != schedule.n_t {
        return Err(FormulationError::DimensionMismatch(format!(
            "period {t} with {} errors, schedule has {} periods of {}",
            dr_t.len(),
            schedule.periods,
            schedule.n_t
        )));
    }
    Ok((0..schedule.pumps.len())
        .map(|e| {
            let c = &schedule.policy[e][t];
            schedule.p_nom[e][t] + schedule.base_power_va * c.iter().zip(dr_t).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect())
}

/// Outcome of solving a formulation; `schedule` is present iff the solve was optimal.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub schedule: Option<DecisionSchedule>,
    pub result: SolveResult,
}

impl Formulation {
    pub fn solve_with(&self, inst: &Instance, backend: &dyn ConicBackend) -> Result<SolveOutcome, FormulationError> {
        let result = backend.solve(&self.problem)?;
        let schedule = match &result.primal {
            Some(x) => Some(self.extract(inst, x, &result)),
            None => None,
        };
        Ok(SolveOutcome { status: result.status, schedule, result })
    }

    fn water_state(&self, inst: &Instance, vars: &WaterVars, x: &[f64]) -> HydraulicState {
        let net = &inst.wdn;
        let heads = net
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                (0..net.periods)
                    .map(|t| match (vars.heads[i][t], &n.kind) {
                        (Some(v), _) => x[v],
                        (None, NodeKind::Reservoir { head }) => *head,
                        _ => unreachable!(),
                    })
                    .collect()
            })
            .collect();
        let flows = vars.flows.iter().map(|s| s.iter().map(|&v| x[v]).collect()).collect();
        let levels = net
            .tanks()
            .iter()
            .zip(&vars.levels)
            .map(|(&tank, s)| {
                let NodeKind::Tank { level_init, .. } = net.nodes[tank].kind else { unreachable!() };
                std::iter::once(level_init).chain(s.iter().map(|&v| x[v])).collect()
            })
            .collect();
        HydraulicState { flows, heads, levels }
    }

    pub fn extract(&self, inst: &Instance, x: &[f64], result: &SolveResult) -> DecisionSchedule {
        let base = inst.base_power();
        let np = inst.n_pumps();
        let periods = inst.periods();
        let read = |m: &Option<Vec<Vec<usize>>>| -> Vec<Vec<f64>> {
            match m {
                Some(m) => m.iter().map(|s| s.iter().map(|&v| x[v] * base).collect()).collect(),
                None => vec![vec![0.0; periods]; np],
            }
        };
        let p_nom: Vec<Vec<f64>> = self.layout.p.iter().map(|s| s.iter().map(|&v| x[v] * base).collect()).collect();
        let r_up = read(&self.layout.r_up);
        let r_down = read(&self.layout.r_down);
        let policy = match &self.layout.policy {
            Some(pol) => pol.iter().map(|s| s.iter().map(|c| c.iter().map(|&v| x[v]).collect()).collect()).collect(),
            None => vec![vec![vec![0.0; inst.n_t()]; periods]; np],
        };
        let cost = objective(
            &p_nom,
            &r_up,
            &r_down,
            &self.config.energy_price,
            &self.config.support_price,
            inst.dt_hours(),
        );
        DecisionSchedule {
            schema: SCHEDULE_SCHEMA,
            mode: self.mode,
            status: result.status,
            pumps: inst.pump_ids(),
            periods,
            n_t: inst.n_t(),
            base_power_va: base,
            p_nom,
            policy,
            r_up,
            r_down,
            water_nominal: self.water_state(inst, &self.layout.water_nominal, x),
            water_up: self.layout.water_up.as_ref().map(|w| self.water_state(inst, w, x)),
            water_down: self.layout.water_down.as_ref().map(|w| self.water_state(inst, w, x)),
            objective: result.objective,
            cost,
            solve_time_s: result.solve_time_s,
        }
    }
}

/// Largest violation of the relaxed water constraints (hull in place of the
/// head-loss law) by `state` at single-phase pump powers `p_w` (`[pump][t]`, W).
pub fn relaxed_water_violation(inst: &Instance, p_w: &[Vec<f64>], state: &HydraulicState, final_tank: bool) -> f64 {
    let net = &inst.wdn;
    let mut worst = 0.0_f64;
    let mut upd = |v: f64| worst = worst.max(v);
    let tanks = net.tanks();
    for t in 0..net.periods {
        for (i, node) in net.nodes.iter().enumerate() {
            let h = state.heads[i][t];
            if let Some((lo, hi)) = node.head_limits() {
                upd(lo - h);
                upd(h - hi);
            }
            if let NodeKind::Reservoir { head } = node.kind {
                upd((h - head).abs());
            }
            let mut inflow = 0.0;
            for (e, edge) in net.edges.iter().enumerate() {
                if edge.to == i {
                    inflow += state.flows[e][t];
                }
                if edge.from == i {
                    inflow -= state.flows[e][t];
                }
            }
            if node.is_junction() {
                upd((inflow + net.demands[i][t]).abs());
            }
            if let NodeKind::Tank { area, level_min, level_max, .. } = node.kind {
                let k = tanks.iter().position(|&x| x == i).unwrap();
                let (prev, cur) = (state.levels[k][t], state.levels[k][t + 1]);
                upd((cur - prev - net.dt_hours * SECONDS_PER_HOUR / area * inflow).abs());
                upd(level_min - cur);
                upd(cur - level_max);
            }
        }
        for (e, edge) in net.edges.iter().enumerate() {
            let x = state.flows[e][t];
            upd(edge.flow_min - x);
            upd(x - edge.flow_max);
            let (hf, ht) = (state.heads[edge.from][t], state.heads[edge.to][t]);
            match &edge.kind {
                EdgeKind::Pipe { resistance } => {
                    if let Ok(lines) = hull_constraints(*resistance, edge.flow_min, edge.flow_max) {
                        for l in lines {
                            let gap = if l.upper { (hf - ht) - l.value(x) } else { l.value(x) - (hf - ht) };
                            upd(gap);
                        }
                    }
                }
                EdgeKind::Pump(c) => {
                    upd((ht - hf - (c.head_slope * x + c.head_offset)).abs());
                    let k = inst.pump_edges.iter().position(|&p| p == e).unwrap();
                    upd((c.power_slope * x + c.power_offset - p_w[k][t]).abs() / c.power_slope.abs());
                }
            }
        }
    }
    if final_tank {
        for (k, &tank) in tanks.iter().enumerate() {
            let NodeKind::Tank { level_init, .. } = net.nodes[tank].kind else { unreachable!() };
            upd(level_init - state.levels[k][net.periods]);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ClarabelBackend, SolverSettings};
    use crate::cases::{analog_case, toy_case, AnalogParams, ToyParams};
    use crate::uncertainty::{DistributionKind, ErrorDistribution};
    use nalgebra::DVector;

    fn backend() -> ClarabelBackend {
        ClarabelBackend::new(SolverSettings::default())
    }

    fn solve(f: &Formulation, inst: &Instance) -> SolveOutcome {
        f.solve_with(inst, &backend()).unwrap()
    }

    fn toy(p: &ToyParams) -> (Instance, FormulationConfig) {
        let case = toy_case(p);
        let inst = case.instance(1.0).unwrap();
        let cfg = FormulationConfig::new(Mode::Deterministic, case.prices.energy.clone(), case.prices.support.clone());
        (inst, cfg)
    }

    fn analog() -> (Instance, FormulationConfig) {
        let case = analog_case(&AnalogParams::default());
        let inst = case.instance(1.0).unwrap();
        let cfg = FormulationConfig::new(Mode::Deterministic, case.prices.energy.clone(), case.prices.support.clone());
        (inst, cfg)
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let (inst, cfg) = toy(&ToyParams { demand: vec![0.0, 0.0], power_offset: 0.0, ..Default::default() });
        let out = solve(&build_deterministic(&inst, &cfg).unwrap(), &inst);
        let s = out.schedule.unwrap();
        assert!(s.cost.total.abs() < 1e-6, "{}", s.cost.total);
        assert!(s.water_nominal.flows.iter().flatten().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn forced_flow_closed_form() {
        let p = ToyParams::default();
        let (inst, cfg) = toy(&p);
        let s = solve(&build_deterministic(&inst, &cfg).unwrap(), &inst).schedule.unwrap();
        let expected: f64 = p
            .demand
            .iter()
            .zip(&p.energy_price)
            .map(|(d, pi)| 3.0 * pi * (p.power_slope * d + p.power_offset) / 1e6)
            .sum();
        assert!((s.cost.total - expected).abs() < 1e-6 * expected, "{} vs {expected}", s.cost.total);
        for (t, d) in p.demand.iter().enumerate() {
            assert!((s.p_nom[0][t] - (p.power_slope * d + p.power_offset)).abs() < 1e-3);
        }
    }

    #[test]
    fn doubling_prices_doubles_cost() {
        let (inst, cfg) = analog();
        let a = solve(&build_coupled_nominal(&inst, &cfg).unwrap(), &inst).schedule.unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.energy_price.iter_mut().for_each(|p| *p *= 2.0);
        cfg2.support_price.iter_mut().for_each(|p| *p *= 2.0);
        let b = solve(&build_coupled_nominal(&inst, &cfg2).unwrap(), &inst).schedule.unwrap();
        assert!((b.cost.total - 2.0 * a.cost.total).abs() < 1e-6 * a.cost.total);
        for (x, y) in a.p_nom[0].iter().zip(&b.p_nom[0]) {
            assert!((x - y).abs() < 1e-2 * 4.41e5, "{x} vs {y}");
        }
    }

    #[test]
    fn objective_arithmetic() {
        let c = objective(&[vec![1e6]], &[vec![0.0]], &[vec![0.0]], &[30.0], &[5.0], 1.0);
        assert!((c.total - 90.0).abs() < 1e-12);
        let c = objective(&[vec![1e6]], &[vec![1e6]], &[vec![1e6]], &[30.0], &[5.0], 1.0);
        assert!((c.total - 100.0).abs() < 1e-12 && (c.support - 10.0).abs() < 1e-12);
        let c = objective(&[vec![0.0]], &[vec![0.0]], &[vec![0.0]], &[30.0], &[5.0], 1.0);
        assert_eq!(c.total, 0.0);
    }

    fn manual_schedule(p_nom: f64, c: Vec<f64>) -> DecisionSchedule {
        let n_t = c.len();
        DecisionSchedule {
            schema: SCHEDULE_SCHEMA,
            mode: Mode::Probabilistic,
            status: SolveStatus::Optimal,
            pumps: vec!["P".into()],
            periods: 1,
            n_t,
            base_power_va: 1e6,
            p_nom: vec![vec![p_nom]],
            policy: vec![vec![c]],
            r_up: vec![vec![0.0]],
            r_down: vec![vec![0.0]],
            water_nominal: HydraulicState { flows: vec![], heads: vec![], levels: vec![] },
            water_up: None,
            water_down: None,
            objective: 0.0,
            cost: CostBreakdown { energy: 0.0, support: 0.0, total: 0.0 },
            solve_time_s: 0.0,
        }
    }

    #[test]
    fn realize_examples() {
        let s = manual_schedule(100e3, vec![0.1, -0.2]);
        let p = realize_pump_power(&s, &[50e3 / 1e6, 30e3 / 1e6], 0).unwrap();
        assert!((p[0] - 99e3).abs() < 1e-6);
        assert_eq!(realize_pump_power(&s, &[0.0, 0.0], 0).unwrap(), vec![100e3]);
        let z = manual_schedule(100e3, vec![0.0, 0.0]);
        assert_eq!(realize_pump_power(&z, &[0.3, -0.7], 0).unwrap(), vec![100e3]);
        assert!(realize_pump_power(&s, &[0.0], 0).is_err());
        assert!(realize_pump_power(&s, &[0.0, 0.0], 1).is_err());
    }

    #[test]
    fn one_dimensional_chance_toy() {
        let mut prob = StandardProblem::new();
        let x = prob.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        prob.add_objective(&LinExpr::term(x, -1.0));
        let factor = DMatrix::from_element(1, 1, 0.2);
        add_chance_le(&mut prob, LinExpr::var(x), &[LinExpr::constant(1.0)], &[0.0], &factor, 0.05, 1.0, "c").unwrap();
        let r = backend().solve(&prob).unwrap();
        let v = r.primal.unwrap()[x];
        assert!((v - 0.67102).abs() < 1e-5, "{v}");
    }

    #[test]
    fn robust_two_point_toy() {
        // x + c·Δ ≤ 1 for Δ ∈ [−2, 2], c ∈ [0.25, 1]: x ≤ 1 − 2c
        let mut prob = StandardProblem::new();
        let x = prob.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let c = prob.add_var("c", 0.25, 1.0);
        prob.add_objective(&LinExpr::term(x, -1.0));
        add_robust_le(&mut prob, LinExpr::var(x), &[LinExpr::var(c)], &[2.0], 1.0, "r");
        let sol = backend().solve(&prob).unwrap().primal.unwrap();
        assert!((sol[x] - 0.5).abs() < 1e-6 && (sol[c] - 0.25).abs() < 1e-6);
        let worst = [-2.0, 2.0].iter().map(|d| sol[x] + sol[c] * d).fold(f64::MIN, f64::max);
        assert!((worst - 1.0).abs() < 1e-6);

        // fixed (x, c): the counterpart is feasible iff both endpoints satisfy the constraint
        for &(xv, cv) in &[(0.0, 0.4), (0.3, -0.4), (0.5, 0.3), (-1.0, 1.1), (0.9, 0.0), (0.95, -0.1)] {
            let mut prob = StandardProblem::new();
            let x = prob.add_var("x", xv, xv);
            let c = prob.add_var("c", cv, cv);
            add_robust_le(&mut prob, LinExpr::var(x), &[LinExpr::var(c)], &[2.0], 1.0, "r");
            let feasible = backend().solve(&prob).unwrap().status == SolveStatus::Optimal;
            let oracle = [-2.0, 2.0].iter().all(|d| xv + cv * d <= 1.0);
            assert_eq!(feasible, oracle, "x={xv} c={cv}");
        }
    }

    fn fitted_for(inst: &Instance, n: usize, seed: u64) -> FittedNormal {
        let kind = DistributionKind::TruncatedMvT { dof: 3.0, correlation: 0.2, alpha: 0.015 };
        let dist = ErrorDistribution::for_network(kind, &inst.pdn).unwrap();
        crate::uncertainty::fit_mle(&crate::uncertainty::sample(&dist, n, seed).unwrap()).unwrap()
    }

    #[test]
    fn empty_box_matches_coupled_nominal() {
        let (inst, cfg) = analog();
        let nominal = solve(&build_coupled_nominal(&inst, &cfg).unwrap(), &inst).schedule.unwrap();
        let bx = RobustBox { half_width: vec![0.0; inst.n_errors()] };
        let robust = solve(&build_robust(&inst, &cfg, &bx).unwrap(), &inst).schedule.unwrap();
        assert!((robust.cost.total - nominal.cost.total).abs() < 1e-6 * nominal.cost.total);
    }

    #[test]
    fn larger_box_costs_more() {
        let (inst, cfg) = analog();
        let kind = DistributionKind::TruncatedMvT { dof: 3.0, correlation: 0.2, alpha: 0.015 };
        let dist = ErrorDistribution::for_network(kind, &inst.pdn).unwrap();
        let bx = crate::uncertainty::robust_box(&crate::uncertainty::sample(&dist, 2000, 2).unwrap()).unwrap();
        let a = solve(&build_robust(&inst, &cfg, &bx.scaled(0.5)).unwrap(), &inst).schedule.unwrap();
        let b = solve(&build_robust(&inst, &cfg, &bx).unwrap(), &inst).schedule.unwrap();
        assert!(a.cost.total <= b.cost.total * (1.0 + 1e-6));
    }

    #[test]
    fn zero_covariance_is_deterministic_at_the_mean() {
        let (inst, cfg) = analog();
        let n = inst.n_errors();
        let fitted = FittedNormal::new(DVector::zeros(n), DMatrix::zeros(n, n)).unwrap();
        let mut c = cfg.clone();
        c.eps_p = Epsilon::Uniform(0.01);
        c.eps_w = Epsilon::Uniform(0.01);
        let p = solve(&build_probabilistic(&inst, &c, &fitted).unwrap(), &inst).schedule.unwrap();
        let nominal = solve(&build_coupled_nominal(&inst, &cfg).unwrap(), &inst).schedule.unwrap();
        assert!((p.cost.total - nominal.cost.total).abs() < 1e-6 * nominal.cost.total);
    }

    #[test]
    fn extreme_states_satisfy_relaxed_water_constraints() {
        let (inst, mut cfg) = analog();
        cfg.support_price = vec![0.5; inst.periods()];
        let fitted = fitted_for(&inst, 500, 1);
        let s = solve(&build_probabilistic(&inst, &cfg, &fitted).unwrap(), &inst).schedule.unwrap();
        let shift = |sign: f64, r: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            s.p_nom.iter().zip(r).map(|(p, r)| p.iter().zip(r).map(|(p, r)| p + sign * r / 3.0).collect()).collect()
        };
        assert!(relaxed_water_violation(&inst, &s.p_nom, &s.water_nominal, true) < 1e-6);
        assert!(relaxed_water_violation(&inst, &shift(1.0, &s.r_up), s.water_up.as_ref().unwrap(), false) < 1e-6);
        assert!(relaxed_water_violation(&inst, &shift(-1.0, &s.r_down), s.water_down.as_ref().unwrap(), false) < 1e-6);
        assert!(s.r_up.iter().chain(&s.r_down).flatten().all(|r| *r >= -1e-3));
    }

    #[test]
    fn policy_blocks_are_per_period() {
        let (inst, cfg) = analog();
        let fitted = fitted_for(&inst, 500, 1);
        let f = build_probabilistic(&inst, &cfg, &fitted).unwrap();
        let pol = f.layout.policy.as_ref().unwrap();
        assert_eq!(pol[0].len(), inst.periods());
        assert!(pol[0].iter().all(|c| c.len() == inst.n_t()));
    }

    #[test]
    fn epsilon_outside_half_open_interval_rejected() {
        let (inst, mut cfg) = analog();
        let fitted = fitted_for(&inst, 100, 1);
        for bad in [0.0, 0.6, 1.0] {
            cfg.eps_p = Epsilon::Uniform(bad);
            assert!(matches!(build_probabilistic(&inst, &cfg, &fitted), Err(FormulationError::Config(_))));
        }
        cfg.eps_p = Epsilon::PerConstraint(vec![0.1; 3]);
        assert!(matches!(build_probabilistic(&inst, &cfg, &fitted), Err(FormulationError::DimensionMismatch(_))));
    }

    #[test]
    fn price_length_checked() {
        let (inst, mut cfg) = analog();
        cfg.energy_price.pop();
        assert!(matches!(build_deterministic(&inst, &cfg), Err(FormulationError::DimensionMismatch(_))));
    }
}
