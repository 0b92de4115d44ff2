//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pumpflex::backend::{ClarabelBackend, ConicBackend, LinExpr, SolveStatus, SolverSettings, StandardProblem};
use pumpflex::cases::{analog_case, AnalogParams};
use pumpflex::config;
use pumpflex::formulations::{
    add_chance_le, build_coupled_nominal, build_deterministic, build_probabilistic, build_robust, DecisionSchedule,
    Epsilon, FormulationConfig, Mode,
};
use pumpflex::instance::Instance;
use pumpflex::montecarlo::{evaluate, EvaluationOptions};
use pumpflex::pdn::{build_voltage_map, recursive_voltages, validate_radial, Bus, Line, PdnNetwork, PumpAttachment};
use pumpflex::uncertainty::{fit_mle, robust_box, sample, std_normal_quantile, ErrorDistribution, FittedNormal, RobustBox};
use pumpflex::wdn::{hull_constraints, hydraulic_solve, pipe_headloss};

const CALIBRATION_SAMPLES: usize = 200_000;
const EVALUATION_SAMPLES: usize = 50_000;
const HULL_PROBES: usize = 100_000;
const MONOTONE_GRID: usize = 20;
const MONOTONE_TOL: f64 = 1e-9;
const RADIAL_INSTANCES: usize = 50;
const MAP_TOL: f64 = 1e-10;
const COST_RTOL: f64 = 1e-6;
const COLLAPSE_RTOL: f64 = 1e-8;
const SOLVE_LIMIT_S: f64 = 10.0;

type Outcome = Result<String, String>;

fn case_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/analog")
}

/// Instance, prices and actual distribution of a shipped configuration.
struct Case {
    inst: Instance,
    energy: Vec<f64>,
    support: Vec<f64>,
    actual: ErrorDistribution,
    fit_seed: u64,
    robust_seed: u64,
    eval_seed: u64,
}

fn load_case(name: &str) -> Case {
    let loaded = config::load(&case_dir().join(format!("{name}.toml"))).expect("shipped config loads");
    let c = &loaded.config;
    let inst = loaded.case.instance(c.case.dt_hours).unwrap();
    let actual = ErrorDistribution::for_network(c.distribution, &inst.pdn).unwrap();
    Case {
        energy: loaded.case.prices.energy.clone(),
        support: loaded.case.prices.support.clone(),
        inst,
        actual,
        fit_seed: c.seeds.fit,
        robust_seed: c.seeds.robust,
        eval_seed: c.seeds.evaluation,
    }
}

impl Case {
    fn cfg(&self, mode: Mode, eps: f64) -> FormulationConfig {
        let mut c = FormulationConfig::new(mode, self.energy.clone(), self.support.clone());
        c.eps_p = Epsilon::Uniform(eps);
        c.eps_w = Epsilon::Uniform(eps);
        c
    }

    fn fitted(&self) -> FittedNormal {
        fit_mle(&sample(&self.actual, 500, self.fit_seed).unwrap()).unwrap()
    }

    fn bx(&self) -> RobustBox {
        robust_box(&sample(&self.actual, 2000, self.robust_seed).unwrap()).unwrap()
    }
}

fn backend() -> ClarabelBackend {
    ClarabelBackend::new(SolverSettings::default())
}

fn solve(
    inst: &Instance,
    f: pumpflex::formulations::Formulation,
    settings: Option<SolverSettings>,
) -> (SolveStatus, Option<DecisionSchedule>, f64) {
    let b = ClarabelBackend::new(settings.unwrap_or_default());
    let start = Instant::now();
    let out = f.solve_with(inst, &b).unwrap();
    (out.status, out.schedule, start.elapsed().as_secs_f64())
}

fn c1_calibration() -> Outcome {
    let start = Instant::now();
    let sigma = 0.2;
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, eps) in [0.05, 0.01, 0.001].into_iter().enumerate() {
        let mut prob = StandardProblem::new();
        let x = prob.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        prob.add_objective(&LinExpr::term(x, -1.0));
        let factor = nalgebra::DMatrix::from_element(1, 1, sigma);
        add_chance_le(&mut prob, LinExpr::var(x), &[LinExpr::constant(1.0)], &[0.0], &factor, eps, 1.0, "c").unwrap();
        let xs = backend().solve(&prob).unwrap().primal.unwrap()[x];
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let normal = Normal::new(0.0, sigma).unwrap();
        let hits = (0..CALIBRATION_SAMPLES).filter(|_| xs + normal.sample(&mut rng) > 1.0).count();
        let rate = hits as f64 / CALIBRATION_SAMPLES as f64;
        let band = 3.0 * (eps * (1.0 - eps) / CALIBRATION_SAMPLES as f64).sqrt();
        ok &= (rate - eps).abs() <= band;
        lines.push(format!("eps={eps} rate={rate:.5} (±{band:.5})"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 10.0;
    let msg = format!("{}; {secs:.2} s", lines.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c2_robust_soundness() -> Outcome {
    let start = Instant::now();
    let case = load_case("case_b");
    let bx = case.bx();
    let (status, s, _) = solve(&case.inst, build_robust(&case.inst, &case.cfg(Mode::Robust, 0.05), &bx).unwrap(), None);
    let s = s.ok_or(format!("robust solve on case B: {status}"))?;
    let r = evaluate(&s, &case.inst, &case.actual, EVALUATION_SAMPLES, case.eval_seed, EvaluationOptions::default(), Some(&bx))
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let msg = format!(
        "case B, {} clipped scenarios: joint power {}, joint water {}, nonconverged {}; {secs:.1} s",
        r.scenarios, r.joint_power, r.joint_water, r.nonconverged
    );
    if r.joint_power == 0.0 && r.joint_water == 0.0 && r.nonconverged == 0 && secs < 300.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c3_cost_ordering() -> Outcome {
    let start = Instant::now();
    let case = load_case("case_b");
    let fitted = case.fitted();
    let bx = case.bx();
    let levels = [0.1, 0.05, 0.01, 0.001, 1e-4];
    // support nesting: every box half-width covers the largest quantile times the fitted std
    let kappa = std_normal_quantile(1.0 - levels[levels.len() - 1]).unwrap();
    let nested = (0..fitted.dim()).all(|j| bx.half_width[j] >= kappa * fitted.cov[(j, j)].sqrt());
    if !nested {
        return Err("robust box does not contain the fitted quantile box".into());
    }
    let cost = |st: (SolveStatus, Option<DecisionSchedule>, f64)| st.1.map(|s| s.cost.total);
    let d = cost(solve(&case.inst, build_deterministic(&case.inst, &case.cfg(Mode::Deterministic, 0.05)).unwrap(), None))
        .ok_or("deterministic infeasible")?;
    let mut seq = vec![("D".to_string(), d)];
    for eps in levels {
        let c = cost(solve(&case.inst, build_probabilistic(&case.inst, &case.cfg(Mode::Probabilistic, eps), &fitted).unwrap(), None))
            .ok_or(format!("probabilistic infeasible at {eps}"))?;
        seq.push((format!("P({eps})"), c));
    }
    let r = cost(solve(&case.inst, build_robust(&case.inst, &case.cfg(Mode::Robust, 0.05), &bx).unwrap(), None))
        .ok_or("robust infeasible")?;
    seq.push(("R".into(), r));
    let ok = seq.windows(2).all(|w| w[0].1 <= w[1].1 * (1.0 + COST_RTOL));
    let secs = start.elapsed().as_secs_f64();
    let msg = format!(
        "case B: {}; {secs:.1} s",
        seq.iter().map(|(n, c)| format!("{n}={c:.4}")).collect::<Vec<_>>().join(" ≤ ")
    );
    if ok && secs < 60.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c4_collapse() -> Outcome {
    let case = load_case("case_a");
    let fitted = case.fitted();
    let zero_mean = FittedNormal::zero_mean(fitted.cov.clone()).unwrap();
    let tight = SolverSettings { tol_gap_abs: 1e-10, tol_gap_rel: 1e-10, tol_feas: 1e-10, ..Default::default() };
    let (_, p, _) = solve(
        &case.inst,
        build_probabilistic(&case.inst, &case.cfg(Mode::Probabilistic, 0.5), &zero_mean).unwrap(),
        Some(tight.clone()),
    );
    let (_, n, _) = solve(&case.inst, build_coupled_nominal(&case.inst, &case.cfg(Mode::CoupledNominal, 0.5)).unwrap(), Some(tight));
    let (p, n) = (p.ok_or("probabilistic infeasible")?.cost.total, n.ok_or("coupled nominal infeasible")?.cost.total);
    let rel = (p - n).abs() / n.abs();
    let msg = format!("P(0.5)={p:.10} nominal={n:.10} rel diff {rel:.2e}");
    if rel <= COLLAPSE_RTOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_hull() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ratio = 1.0 + std::f64::consts::SQRT_2;
    let mut violations = 0;
    let mut worst_tight = 0.0_f64;
    for _ in 0..HULL_PROBES {
        let k = 10f64.powf(rng.gen_range(-2.0..4.0));
        let x_max = 10f64.powf(rng.gen_range(-3.0..1.0));
        let lo = x_max * rng.gen_range(1.0 / ratio..ratio);
        let x_min = -lo;
        let lines = hull_constraints(k, x_min, x_max).map_err(|e| e.to_string())?;
        let x = rng.gen_range(x_min..=x_max);
        let dh = pipe_headloss(k, x);
        let scale = k * x_max.max(lo).powi(2);
        if lines.iter().any(|l| !l.holds(dh, x, 1e-12 * scale)) {
            violations += 1;
        }
        let tight = (lines[2].value(x_max) - k * x_max * x_max).abs() / (k * x_max * x_max);
        worst_tight = worst_tight.max(tight);
    }
    let msg = format!("{HULL_PROBES} probes, {violations} containment violations, endpoint error {worst_tight:.1e}");
    if violations == 0 && worst_tight <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_monotonicity() -> Outcome {
    let inst = analog_case(&AnalogParams::default()).instance(1.0).unwrap();
    let (lo, hi) = inst.pump_power_limits(0);
    let periods = inst.periods();
    let junctions = inst.wdn.junctions();
    let mut prev: Option<pumpflex::wdn::HydraulicState> = None;
    let mut worst = 0.0_f64;
    for k in 0..MONOTONE_GRID {
        let p = lo + (hi - lo) * k as f64 / (MONOTONE_GRID - 1) as f64;
        let sol = hydraulic_solve(&inst.wdn, &vec![vec![p; periods]; 1]).map_err(|e| e.to_string())?;
        if let Some(prev) = &prev {
            for &j in &junctions {
                for t in 0..periods {
                    worst = worst.max(sol.state.heads[j][t] - prev.heads[j][t]);
                }
            }
            for (a, b) in sol.state.levels.iter().zip(&prev.levels) {
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max(y - x);
                }
            }
        }
        prev = Some(sol.state);
    }
    let msg = format!("{MONOTONE_GRID}-point grid, largest wrong-way change {worst:.2e} m");
    if worst <= MONOTONE_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_radial(rng: &mut ChaCha8Rng) -> PdnNetwork {
    let nb = rng.gen_range(2..=6);
    let periods = 2;
    let mut phases = vec![[true; 3]];
    let mut lines = Vec::new();
    for k in 1..nb {
        let parent = rng.gen_range(0..k);
        let mut ph = phases[parent];
        for p in ph.iter_mut() {
            if *p && rng.gen_bool(0.25) {
                *p = false;
            }
        }
        if !ph.iter().any(|&p| p) {
            ph = phases[parent];
        }
        phases.push(ph);
        let mut m = [[0.0; 3]; 3];
        let mut n = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                m[a][b] = rng.gen_range(-0.02..0.05);
                n[a][b] = rng.gen_range(-0.02..0.05);
            }
        }
        // orientation is random to exercise the tree search
        let (from, to) = if rng.gen_bool(0.5) { (parent, k) } else { (k, parent) };
        lines.push(Line { from, to, m, n });
    }
    let buses = (0..nb)
        .map(|k| {
            let mut gen = || {
                (0..periods)
                    .map(|_| {
                        let mut v = [0.0; 3];
                        for p in 0..3 {
                            if k > 0 && phases[k][p] && rng.gen_bool(0.8) {
                                v[p] = rng.gen_range(-0.05..0.2);
                            }
                        }
                        v
                    })
                    .collect::<Vec<_>>()
            };
            let p = gen();
            let q = gen();
            Bus { id: format!("n{k}"), phases: phases[k], p_demand: p, q_demand: q }
        })
        .collect::<Vec<_>>();
    let pumps = (1..nb)
        .filter(|&k| phases[k] == [true; 3])
        .take(2)
        .enumerate()
        .map(|(i, k)| PumpAttachment { pump: format!("p{i}"), bus: k, eta: rng.gen_range(0.0..0.5) })
        .collect();
    PdnNetwork {
        buses,
        lines,
        substation: 0,
        substation_voltage_sq: [rng.gen_range(0.95..1.1), rng.gen_range(0.95..1.1), rng.gen_range(0.95..1.1)],
        pumps,
        v_min: 0.9,
        v_max: 1.1,
        base_power_va: 1e6,
        periods,
        dt_hours: 1.0,
    }
}

fn c7_voltage_map() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for _ in 0..RADIAL_INSTANCES {
        let net = random_radial(&mut rng);
        let map = build_voltage_map(&net).map_err(|e| e.to_string())?;
        let tree = validate_radial(&net).unwrap();
        for t in 0..net.periods {
            let p_w: Vec<f64> = net.pumps.iter().map(|_| rng.gen_range(0.0..2e5)).collect();
            let dr: Vec<f64> = (0..map.n_t()).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let p_pu: Vec<f64> = p_w.iter().map(|p| p / net.base_power_va).collect();
            let y = map.eval_period(t, &p_pu, &dr);
            let truth = recursive_voltages(&net, &tree, t, &p_w, &dr);
            for (r, row) in map.rows.iter().enumerate() {
                worst = worst.max((y[r] - truth[row.bus][row.phase]).abs());
            }
        }
    }
    let msg = format!("{RADIAL_INSTANCES} random radial feeders, max deviation {worst:.2e} pu²");
    if worst < MAP_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8_solver_time() -> Outcome {
    let mut times = Vec::new();
    let mut ok = true;
    for name in ["case_a", "case_b"] {
        let case = load_case(name);
        let fitted = case.fitted();
        let bx = case.bx();
        let runs = [
            ("D", build_deterministic(&case.inst, &case.cfg(Mode::Deterministic, 1e-4)).unwrap()),
            ("P", build_probabilistic(&case.inst, &case.cfg(Mode::Probabilistic, 1e-4), &fitted).unwrap()),
            ("R", build_robust(&case.inst, &case.cfg(Mode::Robust, 1e-4), &bx).unwrap()),
        ];
        for (label, f) in runs {
            let (status, _, secs) = solve(&case.inst, f, None);
            ok &= secs < SOLVE_LIMIT_S;
            times.push(format!("{name} {label} {secs:.2} s ({status})"));
        }
    }
    let msg = times.join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c9_reliability_gap() -> Outcome {
    let case = load_case("case_a");
    let fitted = case.fitted();
    let (_, d, _) = solve(&case.inst, build_deterministic(&case.inst, &case.cfg(Mode::Deterministic, 1e-4)).unwrap(), None);
    let (status, p, _) =
        solve(&case.inst, build_probabilistic(&case.inst, &case.cfg(Mode::Probabilistic, 1e-4), &fitted).unwrap(), None);
    let d = d.ok_or("deterministic infeasible")?;
    let p = p.ok_or(format!("probabilistic: {status}"))?;
    let opts = EvaluationOptions::default();
    let rd = evaluate(&d, &case.inst, &fitted, EVALUATION_SAMPLES, case.eval_seed, opts, None).unwrap();
    let rp = evaluate(&p, &case.inst, &fitted, EVALUATION_SAMPLES, case.eval_seed, opts, None).unwrap();
    let msg = format!(
        "case A under fitted normal, {EVALUATION_SAMPLES} paired scenarios: D total {:.5} vs P total {:.5}",
        rd.joint_total, rp.joint_total
    );
    if rd.joint_total > rp.joint_total {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_pumpflex"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove(config::OUT_DIR_ENV)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)))
    }
}

fn c10_reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = case_dir().join("case_b.toml");
    let cfg = cfg.to_str().unwrap();
    let mut dirs = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("run{run}"));
        for mode in ["deterministic", "probabilistic", "robust"] {
            run_cli(&["solve", "--config", cfg, "--mode", mode], &out)?;
            run_cli(&["evaluate", "--config", cfg, "--mode", mode, "--samples", "5000"], &out)?;
        }
        run_cli(&["sweep", "--config", cfg, "--eps-p", "0.05,0.01", "--eps-w", "0.05,0.01"], &out)?;
        run_cli(&["report", "--config", cfg], &out)?;
        dirs.push(out);
    }
    let list = |d: &Path| -> Vec<String> {
        let mut v: Vec<String> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n != "timings.csv")
            .collect();
        v.sort();
        v
    };
    let (a, b) = (list(&dirs[0]), list(&dirs[1]));
    if a != b {
        return Err(format!("file sets differ: {a:?} vs {b:?}"));
    }
    let differing: Vec<&String> =
        a.iter().filter(|n| std::fs::read(dirs[0].join(n)).unwrap() != std::fs::read(dirs[1].join(n)).unwrap()).collect();
    let msg = format!("{} output files compared (timings.csv excluded), {} differ", a.len(), differing.len());
    if differing.is_empty() && a.len() > 10 {
        Ok(msg)
    } else {
        Err(format!("{msg}: {differing:?}"))
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("chance-constraint calibration", c1_calibration),
        ("robust soundness", c2_robust_soundness),
        ("cost ordering", c3_cost_ordering),
        ("eps=0.5 collapse", c4_collapse),
        ("hull validity", c5_hull),
        ("monotonicity", c6_monotonicity),
        ("voltage map oracle", c7_voltage_map),
        ("solver time", c8_solver_time),
        ("reliability gap", c9_reliability_gap),
        ("reproducibility", c10_reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(msg) => println!("criterion {}: PASS {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {msg}", i + 1)
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
