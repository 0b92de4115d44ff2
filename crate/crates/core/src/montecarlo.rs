//! Scenario-based evaluation of a schedule: realize the affine policy, check
//! voltages through the affine map and water limits through the nonlinear
//! hydraulics, and count violations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulations::{realize_pump_power, DecisionSchedule, FormulationError};
use crate::instance::Instance;
use crate::uncertainty::{chunk_rng, RobustBox, ScenarioSource, UncertaintyError, CHUNK};
use crate::wdn::{check_feasibility_tol, hydraulic_solve_from, HydraulicState, NewtonOptions, WaterBound};

/// Excess beyond a limit that counts as a violation (per-unit², m, m³/s or per-unit power).
pub const VIOLATION_TOL: f64 = 1e-6;

const PHASES: [char; 3] = ['a', 'b', 'c'];

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("scenario count must be at least 1")]
    NoScenarios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    VoltageMax,
    VoltageMin,
    CapacityUp,
    CapacityDown,
    Water(WaterBound),
}

impl ConstraintKind {
    pub fn label(&self) -> &'static str {
        match self {
            ConstraintKind::VoltageMax => "voltage-max",
            ConstraintKind::VoltageMin => "voltage-min",
            ConstraintKind::CapacityUp => "capacity-up",
            ConstraintKind::CapacityDown => "capacity-down",
            ConstraintKind::Water(b) => b.label(),
        }
    }

    pub fn is_voltage(&self) -> bool {
        matches!(self, ConstraintKind::VoltageMax | ConstraintKind::VoltageMin)
    }

    pub fn is_water(&self) -> bool {
        matches!(self, ConstraintKind::Water(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRate {
    pub kind: ConstraintKind,
    pub element: String,
    pub period: Option<usize>,
    pub violations: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSummary {
    pub mean_rate: f64,
    pub std_rate: f64,
    pub max_rate: f64,
    /// Bus with the largest individual voltage violation rate, if any bound was violated.
    pub most_violated_bus: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub label: String,
    pub seed: u64,
    pub scenarios: u64,
    pub rates: Vec<ConstraintRate>,
    pub joint_power: f64,
    pub joint_water: f64,
    pub joint_total: f64,
    /// Scenarios whose hydraulic solve failed (already counted as water violations).
    pub nonconverged: u64,
    pub voltage: VoltageSummary,
}

#[derive(Debug, Clone, Copy)]
pub struct EvaluationOptions {
    pub include_final_tank: bool,
    pub tol: f64,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        EvaluationOptions { include_final_tank: false, tol: VIOLATION_TOL }
    }
}

/// Index of every checked constraint, in report order.
struct Catalogue {
    entries: Vec<(ConstraintKind, String, Option<usize>)>,
    /// `[t][limited row][side]`.
    voltage: Vec<Vec<[usize; 2]>>,
    /// `[pump][t][side]`.
    capacity: Vec<Vec<[usize; 2]>>,
    water: std::collections::HashMap<(WaterBound, usize, Option<usize>), usize>,
}

fn catalogue(inst: &Instance, include_final_tank: bool) -> Catalogue {
    let mut entries = Vec::new();
    let periods = inst.periods();
    let rows = inst.limited_rows();
    let mut voltage = vec![Vec::with_capacity(rows.len()); periods];
    for (t, vt) in voltage.iter_mut().enumerate() {
        for &r in &rows {
            let row = inst.map.rows[r];
            let el = format!("{}.{}", inst.pdn.buses[row.bus].id, PHASES[row.phase]);
            let hi = entries.len();
            entries.push((ConstraintKind::VoltageMax, el.clone(), Some(t)));
            entries.push((ConstraintKind::VoltageMin, el, Some(t)));
            vt.push([hi, hi + 1]);
        }
    }
    let ids = inst.pump_ids();
    let mut capacity = vec![Vec::with_capacity(periods); inst.n_pumps()];
    for (e, ce) in capacity.iter_mut().enumerate() {
        for t in 0..periods {
            let i = entries.len();
            entries.push((ConstraintKind::CapacityUp, ids[e].clone(), Some(t)));
            entries.push((ConstraintKind::CapacityDown, ids[e].clone(), Some(t)));
            ce.push([i, i + 1]);
        }
    }
    let net = &inst.wdn;
    let mut water = std::collections::HashMap::new();
    let mut add = |entries: &mut Vec<_>, b: WaterBound, el: usize, id: &str, t: Option<usize>| {
        water.insert((b, el, t), entries.len());
        entries.push((ConstraintKind::Water(b), id.to_string(), t));
    };
    for t in 0..periods {
        for (i, node) in net.nodes.iter().enumerate() {
            if node.head_limits().is_some() {
                add(&mut entries, WaterBound::HeadMin, i, &node.id, Some(t));
                add(&mut entries, WaterBound::HeadMax, i, &node.id, Some(t));
            }
        }
        for &tank in &net.tanks() {
            add(&mut entries, WaterBound::LevelMin, tank, &net.nodes[tank].id, Some(t));
            add(&mut entries, WaterBound::LevelMax, tank, &net.nodes[tank].id, Some(t));
        }
        for e in net.pumps() {
            add(&mut entries, WaterBound::PumpFlowMin, e, &net.edges[e].id, Some(t));
            add(&mut entries, WaterBound::PumpFlowMax, e, &net.edges[e].id, Some(t));
        }
    }
    if include_final_tank {
        for &tank in &net.tanks() {
            add(&mut entries, WaterBound::FinalTank, tank, &net.nodes[tank].id, None);
        }
    }
    Catalogue { entries, voltage, capacity, water }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    counts: Vec<u64>,
    joint_power: u64,
    joint_water: u64,
    joint_total: u64,
    nonconverged: u64,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.joint_power += other.joint_power;
        self.joint_water += other.joint_water;
        self.joint_total += other.joint_total;
        self.nonconverged += other.nonconverged;
        self
    }
}

/// Monte Carlo evaluation of `schedule` on `count` scenarios drawn from
/// `source`. Scenarios are optionally clipped to `clip` before use.
/// Identical inputs give identical reports regardless of thread count.
pub fn evaluate(
    schedule: &DecisionSchedule,
    inst: &Instance,
    source: &dyn ScenarioSource,
    count: usize,
    seed: u64,
    options: EvaluationOptions,
    clip: Option<&RobustBox>,
) -> Result<EvaluationReport, EvaluationError> {
    if count == 0 {
        return Err(EvaluationError::NoScenarios);
    }
    schedule.check_against(inst)?;
    let n = inst.n_errors();
    if source.dim() != n {
        return Err(EvaluationError::DimensionMismatch(format!(
            "distribution has {} coordinates, instance has {n}",
            source.dim()
        )));
    }
    if let Some(b) = clip {
        if b.dim() != n {
            return Err(EvaluationError::DimensionMismatch(format!("box has {} coordinates, instance has {n}", b.dim())));
        }
    }
    let cat = catalogue(inst, options.include_final_tank);
    let periods = inst.periods();
    let n_t = inst.n_t();
    let map = &inst.map;
    let base = inst.base_power();
    let (y_lo, y_hi) = (inst.pdn.v_min.powi(2), inst.pdn.v_max.powi(2));
    let rows = inst.limited_rows();
    let tol = options.tol;
    let newton = NewtonOptions::default();
    let nominal_water = inst.to_water_order(&schedule.p_nom);
    let warm: Option<HydraulicState> =
        hydraulic_solve_from(&inst.wdn, &nominal_water, None, newton).ok().map(|s| s.state);

    let n_chunks = count.div_ceil(CHUNK);
    let tally = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<Tally, EvaluationError> {
            let mut tally = Tally { counts: vec![0; cat.entries.len()], ..Default::default() };
            let mut rng = chunk_rng(seed, c);
            let mut dr = vec![0.0; n];
            let mut hit = vec![false; cat.entries.len()];
            for _ in 0..CHUNK.min(count - c * CHUNK) {
                source.draw(&mut rng, &mut dr)?;
                if let Some(b) = clip {
                    b.clip(&mut dr);
                }
                hit.iter_mut().for_each(|h| *h = false);
                let mut power_bad = false;
                let mut powers = vec![vec![0.0; periods]; inst.n_pumps()];
                for t in 0..periods {
                    let dr_t = &dr[t * n_t..(t + 1) * n_t];
                    let p_t = realize_pump_power(schedule, dr_t, t)?;
                    let p_pu: Vec<f64> = p_t.iter().map(|p| p / base).collect();
                    let y = map.eval_period(t, &p_pu, dr_t);
                    for (k, &r) in rows.iter().enumerate() {
                        let [hi, lo] = cat.voltage[t][k];
                        if y[r] > y_hi + tol {
                            hit[hi] = true;
                            power_bad = true;
                        }
                        if y[r] < y_lo - tol {
                            hit[lo] = true;
                            power_bad = true;
                        }
                    }
                    for e in 0..inst.n_pumps() {
                        powers[e][t] = p_t[e];
                        let dev = 3.0 * (p_t[e] - schedule.p_nom[e][t]) / base;
                        let [up, down] = cat.capacity[e][t];
                        if dev > schedule.r_up[e][t] / base + tol {
                            hit[up] = true;
                        }
                        if -dev > schedule.r_down[e][t] / base + tol {
                            hit[down] = true;
                        }
                    }
                }
                let mut water_bad = false;
                match hydraulic_solve_from(&inst.wdn, &inst.to_water_order(&powers), warm.as_ref(), newton) {
                    Ok(sol) => {
                        for v in check_feasibility_tol(&sol.state, &inst.wdn, options.include_final_tank, tol) {
                            if let Some(&i) = cat.water.get(&(v.bound, v.element, v.period)) {
                                hit[i] = true;
                            }
                            water_bad = true;
                        }
                    }
                    Err(_) => {
                        tally.nonconverged += 1;
                        water_bad = true;
                    }
                }
                for (cnt, &h) in tally.counts.iter_mut().zip(&hit) {
                    *cnt += h as u64;
                }
                tally.joint_power += power_bad as u64;
                tally.joint_water += water_bad as u64;
                tally.joint_total += (power_bad || water_bad) as u64;
            }
            Ok(tally)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(Tally { counts: vec![0; cat.entries.len()], ..Default::default() }, Tally::merge);

    let total = count as f64;
    let rates: Vec<ConstraintRate> = cat
        .entries
        .iter()
        .zip(&tally.counts)
        .map(|((kind, element, period), &v)| ConstraintRate {
            kind: *kind,
            element: element.clone(),
            period: *period,
            violations: v,
            rate: v as f64 / total,
        })
        .collect();
    let voltage = voltage_summary(&rates);
    Ok(EvaluationReport {
        label: source.label().to_string(),
        seed,
        scenarios: count as u64,
        rates,
        joint_power: tally.joint_power as f64 / total,
        joint_water: tally.joint_water as f64 / total,
        joint_total: tally.joint_total as f64 / total,
        nonconverged: tally.nonconverged,
        voltage,
    })
}

fn voltage_summary(rates: &[ConstraintRate]) -> VoltageSummary {
    let v: Vec<&ConstraintRate> = rates.iter().filter(|r| r.kind.is_voltage()).collect();
    if v.is_empty() {
        return VoltageSummary { mean_rate: 0.0, std_rate: 0.0, max_rate: 0.0, most_violated_bus: None };
    }
    let n = v.len() as f64;
    let mean = v.iter().map(|r| r.rate).sum::<f64>() / n;
    let std = (v.iter().map(|r| (r.rate - mean).powi(2)).sum::<f64>() / n).sqrt();
    let worst = v.iter().fold(None::<&ConstraintRate>, |best, r| match best {
        Some(b) if b.rate >= r.rate => Some(b),
        _ => Some(r),
    });
    let max = worst.map_or(0.0, |r| r.rate);
    let most = worst.filter(|r| r.rate > 0.0).map(|r| r.element.split('.').next().unwrap_or("").to_string());
    VoltageSummary { mean_rate: mean, std_rate: std, max_rate: max, most_violated_bus: most }
}

impl EvaluationReport {
    pub fn rate_of(&self, kind: ConstraintKind, element: &str, period: Option<usize>) -> Option<f64> {
        self.rates.iter().find(|r| r.kind == kind && r.element == element && r.period == period).map(|r| r.rate)
    }

    pub fn max_voltage_rate(&self) -> f64 {
        self.voltage.max_rate
    }

    /// Individual-rate CSV: kind, element, period, violations, rate.
    pub fn individual_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["constraint", "element", "period", "violations", "rate"]).unwrap();
        for r in &self.rates {
            w.write_record([
                r.kind.label().to_string(),
                r.element.clone(),
                r.period.map_or(String::new(), |p| p.to_string()),
                r.violations.to_string(),
                format!("{:?}", r.rate),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Joint rates of several labelled reports in one CSV, one row per report.
pub fn joint_csv(reports: &[(&str, &EvaluationReport)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["schedule", "distribution", "scenarios", "seed", "joint_power", "joint_water", "total", "nonconverged"])
        .unwrap();
    for (name, r) in reports {
        w.write_record([
            name.to_string(),
            r.label.clone(),
            r.scenarios.to_string(),
            r.seed.to_string(),
            format!("{:?}", r.joint_power),
            format!("{:?}", r.joint_water),
            format!("{:?}", r.joint_total),
            r.nonconverged.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// One named column of a comparison.
pub struct ComparisonEntry<'a> {
    pub name: &'a str,
    pub schedule: &'a DecisionSchedule,
    pub report: &'a EvaluationReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// False when the reports were not produced from the same scenarios.
    pub paired: bool,
    pub csv: String,
}

/// Side-by-side table of costs, average capacities and violation rates. With
/// exactly two entries a `difference` column (second minus first) is added.
pub fn compare(entries: &[ComparisonEntry]) -> Comparison {
    let paired = entries.windows(2).all(|w| {
        w[0].report.seed == w[1].report.seed
            && w[0].report.scenarios == w[1].report.scenarios
            && w[0].report.label == w[1].report.label
    });
    let avg = |m: &Vec<Vec<f64>>| {
        let n = m.iter().map(|s| s.len()).sum::<usize>().max(1) as f64;
        m.iter().flatten().sum::<f64>() / n
    };
    let metrics: Vec<(&str, Box<dyn Fn(&ComparisonEntry) -> f64>)> = vec![
        ("total_cost", Box::new(|e| e.schedule.cost.total)),
        ("energy_cost", Box::new(|e| e.schedule.cost.energy)),
        ("support_cost", Box::new(|e| e.schedule.cost.support)),
        ("avg_r_up_w", Box::new(move |e| avg(&e.schedule.r_up))),
        ("avg_r_down_w", Box::new(move |e| avg(&e.schedule.r_down))),
        ("joint_power", Box::new(|e| e.report.joint_power)),
        ("joint_water", Box::new(|e| e.report.joint_water)),
        ("joint_total", Box::new(|e| e.report.joint_total)),
        ("max_voltage_rate", Box::new(|e| e.report.voltage.max_rate)),
        ("mean_voltage_rate", Box::new(|e| e.report.voltage.mean_rate)),
        ("nonconverged", Box::new(|e| e.report.nonconverged as f64)),
    ];
    let with_diff = entries.len() == 2;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric".to_string()];
    header.extend(entries.iter().map(|e| e.name.to_string()));
    if with_diff {
        header.push("difference".into());
    }
    w.write_record(&header).unwrap();
    for (name, f) in &metrics {
        let mut row = vec![name.to_string()];
        let vals: Vec<f64> = entries.iter().map(|e| f(e)).collect();
        row.extend(vals.iter().map(|v| format!("{v:?}")));
        if with_diff {
            row.push(format!("{:?}", vals[1] - vals[0]));
        }
        w.write_record(&row).unwrap();
    }
    let mut row = vec!["paired".to_string()];
    row.extend(entries.iter().map(|_| paired.to_string()));
    if with_diff {
        row.push(String::new());
    }
    w.write_record(&row).unwrap();
    Comparison { paired, csv: String::from_utf8(w.into_inner().unwrap()).unwrap() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ClarabelBackend, SolverSettings};
    use crate::cases::{analog_case, toy_case, AnalogParams, ToyParams};
    use crate::formulations::{build_deterministic, FormulationConfig, Mode};
    use crate::uncertainty::{DistributionKind, ErrorDistribution};
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn toy() -> (Instance, DecisionSchedule) {
        let case = toy_case(&ToyParams { demand: vec![0.1], energy_price: vec![30.0], tank: true, ..Default::default() });
        let inst = case.instance(1.0).unwrap();
        let cfg = FormulationConfig::new(Mode::Deterministic, case.prices.energy.clone(), case.prices.support.clone());
        let f = build_deterministic(&inst, &cfg).unwrap();
        let s = f.solve_with(&inst, &ClarabelBackend::new(SolverSettings::default())).unwrap().schedule.unwrap();
        (inst, s)
    }

    /// Replays fixed scenarios in draw order.
    struct Fixed {
        scenarios: Vec<Vec<f64>>,
        next: AtomicUsize,
    }

    impl ScenarioSource for Fixed {
        fn dim(&self) -> usize {
            self.scenarios[0].len()
        }
        fn label(&self) -> &'static str {
            "fixed"
        }
        fn draw(&self, _rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<(), UncertaintyError> {
            let i = self.next.fetch_add(1, Ordering::SeqCst);
            out.copy_from_slice(&self.scenarios[i % self.scenarios.len()]);
            Ok(())
        }
    }

    #[test]
    fn tiny_errors_give_zero_rates() {
        let (inst, s) = toy();
        let kind = DistributionKind::TruncatedMvNormal { sigma_global: 1e-6, sigma_node: 1e-6 };
        let dist = ErrorDistribution::for_network(kind, &inst.pdn).unwrap();
        let r = evaluate(&s, &inst, &dist, 500, 7, EvaluationOptions::default(), None).unwrap();
        assert!(r.rates.iter().all(|c| c.rate == 0.0));
        assert_eq!((r.joint_power, r.joint_water, r.joint_total), (0.0, 0.0, 0.0));
        assert_eq!(r.voltage.most_violated_bus, None);
    }

    #[test]
    fn one_of_two_scenarios_violates_one_bound() {
        let (inst, s) = toy();
        assert_eq!(inst.n_errors(), 3);
        // phase-a error of 12 pu drops Y_a by 0.24 below the 0.81 floor
        let src = Fixed { scenarios: vec![vec![0.0; 3], vec![12.0, 0.0, 0.0]], next: AtomicUsize::new(0) };
        let r = evaluate(&s, &inst, &src, 2, 0, EvaluationOptions::default(), None).unwrap();
        assert_eq!(r.rate_of(ConstraintKind::VoltageMin, "b.a", Some(0)), Some(0.5));
        let others = r.rates.iter().filter(|c| !(c.kind == ConstraintKind::VoltageMin && c.element == "b.a"));
        assert!(others.into_iter().all(|c| c.rate == 0.0));
        assert_eq!(r.joint_power, 0.5);
        assert_eq!(r.joint_water, 0.0);
        assert_eq!(r.joint_total, 0.5);
        assert_eq!(r.voltage.most_violated_bus.as_deref(), Some("b"));
    }

    #[test]
    fn out_of_range_pump_power_is_a_water_violation() {
        let (inst, mut s) = toy();
        s.p_nom[0][0] = inst.pump_power_limits(0).1 * 1.2;
        let src = Fixed { scenarios: vec![vec![0.0; 3]], next: AtomicUsize::new(0) };
        let r = evaluate(&s, &inst, &src, 3, 0, EvaluationOptions::default(), None).unwrap();
        assert_eq!(r.rate_of(ConstraintKind::Water(WaterBound::PumpFlowMax), "P", Some(0)), Some(1.0));
        assert_eq!(r.joint_water, 1.0);
    }

    #[test]
    fn clipping_and_dimension_checks() {
        let (inst, s) = toy();
        let src = Fixed { scenarios: vec![vec![12.0, 0.0, 0.0]], next: AtomicUsize::new(0) };
        let bx = RobustBox { half_width: vec![0.1; 3] };
        let r = evaluate(&s, &inst, &src, 4, 0, EvaluationOptions::default(), Some(&bx)).unwrap();
        assert_eq!(r.joint_total, 0.0);
        let bad = RobustBox { half_width: vec![0.1; 2] };
        assert!(evaluate(&s, &inst, &src, 4, 0, EvaluationOptions::default(), Some(&bad)).is_err());
        assert!(matches!(
            evaluate(&s, &inst, &src, 0, 0, EvaluationOptions::default(), None),
            Err(EvaluationError::NoScenarios)
        ));
    }

    fn analog_deterministic() -> (Instance, DecisionSchedule, ErrorDistribution) {
        let case = analog_case(&AnalogParams::default());
        let inst = case.instance(1.0).unwrap();
        let cfg = FormulationConfig::new(Mode::Deterministic, case.prices.energy.clone(), case.prices.support.clone());
        let f = build_deterministic(&inst, &cfg).unwrap();
        let s = f.solve_with(&inst, &ClarabelBackend::new(SolverSettings::default())).unwrap().schedule.unwrap();
        let kind = DistributionKind::TruncatedMvT { dof: 3.0, correlation: 0.2, alpha: 0.08 };
        let dist = ErrorDistribution::for_network(kind, &inst.pdn).unwrap();
        (inst, s, dist)
    }

    #[test]
    fn report_invariants_and_thread_independence() {
        let (inst, s, dist) = analog_deterministic();
        let r = evaluate(&s, &inst, &dist, 3000, 11, EvaluationOptions::default(), None).unwrap();
        assert!(r.rates.iter().all(|c| (0.0..=1.0).contains(&c.rate)));
        assert!(r.joint_total >= r.joint_power.max(r.joint_water));
        assert!(r.rates.iter().filter(|c| c.kind.is_voltage()).all(|c| r.joint_power >= c.rate));
        assert!(r.joint_power > 0.0);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let r1 = single.install(|| evaluate(&s, &inst, &dist, 3000, 11, EvaluationOptions::default(), None).unwrap());
        assert_eq!(r, r1);
        assert_eq!(r.individual_csv(), r1.individual_csv());
    }

    #[test]
    fn comparison_tables() {
        let (inst, s, dist) = analog_deterministic();
        let r = evaluate(&s, &inst, &dist, 200, 1, EvaluationOptions::default(), None).unwrap();
        let one = compare(&[ComparisonEntry { name: "D", schedule: &s, report: &r }]);
        assert!(one.csv.lines().next().unwrap() == "metric,D");
        let two = compare(&[
            ComparisonEntry { name: "x", schedule: &s, report: &r },
            ComparisonEntry { name: "y", schedule: &s, report: &r },
        ]);
        assert!(two.paired);
        for line in two.csv.lines().skip(1).filter(|l| !l.starts_with("paired")) {
            assert!(line.ends_with(",0.0"), "{line}");
        }
        let mut shifted = r.clone();
        shifted.seed += 1;
        let unpaired = compare(&[
            ComparisonEntry { name: "x", schedule: &s, report: &r },
            ComparisonEntry { name: "y", schedule: &s, report: &shifted },
        ]);
        assert!(!unpaired.paired);
        let joint = joint_csv(&[("D", &r)]);
        assert_eq!(joint.lines().count(), 2);
    }
}
