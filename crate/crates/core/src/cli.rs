//! Command-line experiment runner.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ClarabelBackend, SolveStatus};
use crate::cases::{self, AnalogParams};
use crate::config::{self, LoadedConfig, Seeds};
use crate::formulations::{
    build_coupled_nominal, build_deterministic, build_probabilistic, build_robust, DecisionSchedule, Epsilon,
    FormulationConfig, FormulationError, Mode, SolveOutcome,
};
use crate::instance::Instance;
use crate::io::{self, InputError};
use crate::montecarlo::{self, ComparisonEntry, EvaluationOptions, EvaluationReport};
use crate::uncertainty::{self, ErrorDistribution, FittedNormal, RobustBox, UncertaintyError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Solver(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Solver(_) | CliError::Output { .. } => EXIT_SOLVER,
        }
    }
}

impl From<InputError> for CliError {
    fn from(e: InputError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<UncertaintyError> for CliError {
    fn from(e: UncertaintyError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<FormulationError> for CliError {
    fn from(e: FormulationError) -> Self {
        match e {
            FormulationError::Backend(b) => CliError::Solver(b.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<montecarlo::EvaluationError> for CliError {
    fn from(e: montecarlo::EvaluationError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "pumpflex", version, about = "Pump scheduling with voltage support under load uncertainty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one formulation and write the schedule, cost summary and plot data.
    Solve(CommonArgs),
    /// Monte Carlo evaluation of a schedule under the fitted and actual distributions.
    Evaluate(EvaluateArgs),
    /// Probabilistic solves over a list of violation levels, plus the deterministic baseline and the robust solve.
    Sweep(CommonArgs),
    /// Summary tables over the schedules and evaluation reports in the output directory.
    Report(CommonArgs),
    /// Write the analog case files into a directory.
    GenerateCase {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Voltage violation level; a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub eps_p: Vec<f64>,
    /// Capacity violation level; a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub eps_w: Vec<f64>,
    /// Base seed: fit uses it, the robust box seed+1, evaluation seed+2.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of evaluation scenarios.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Schedule file; defaults to the mode's schedule in the output directory.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Clip scenarios to the robust box before evaluation.
    #[arg(long)]
    pub clip: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown mode {s:?} (deterministic, robust, probabilistic, coupled-nominal)"))
}

/// Serialized schedule with the digest of the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub config_digest: String,
    pub schedule: DecisionSchedule,
}

/// A loaded configuration with overrides applied and the instance built.
pub struct Experiment {
    pub loaded: LoadedConfig,
    pub inst: Instance,
    pub actual: ErrorDistribution,
    pub out: PathBuf,
    pub digest: String,
}

impl Experiment {
    pub fn open(args: &CommonArgs) -> Result<Self, CliError> {
        let mut loaded = config::load(&args.config)?;
        let c = &mut loaded.config;
        if let Some(m) = args.mode {
            c.formulation.mode = m;
        }
        if let Some(&e) = args.eps_p.first() {
            c.formulation.eps_p = Epsilon::Uniform(e);
        }
        if let Some(&e) = args.eps_w.first() {
            c.formulation.eps_w = Epsilon::Uniform(e);
        }
        if let Some(s) = args.seed {
            c.seeds = Seeds::from_base(s);
        }
        if let Some(n) = args.samples {
            c.samples.evaluation = n;
        }
        if let Some(o) = &args.out {
            c.output_dir = o.clone();
        }
        c.validate()?;
        let inst = loaded.case.instance(c.case.dt_hours)?;
        let actual = ErrorDistribution::for_network(c.distribution, &inst.pdn)?;
        let out = if args.out.is_some() {
            loaded.config.output_dir.clone()
        } else {
            loaded.output_dir()
        };
        let digest = loaded.digest();
        Ok(Experiment { loaded, inst, actual, out, digest })
    }

    pub fn formulation_config(&self, mode: Mode) -> FormulationConfig {
        let f = &self.loaded.config.formulation;
        let mut cfg = FormulationConfig::new(
            mode,
            self.loaded.case.prices.energy.clone(),
            self.loaded.case.prices.support.clone(),
        );
        cfg.eps_p = f.eps_p.clone();
        cfg.eps_w = f.eps_w.clone();
        cfg.final_tank = f.final_tank;
        cfg
    }

    /// Normal distribution fitted to the fit samples of the actual distribution.
    pub fn fitted(&self) -> Result<FittedNormal, CliError> {
        let c = &self.loaded.config;
        let s = uncertainty::sample(&self.actual, c.samples.fit, c.seeds.fit)?;
        Ok(uncertainty::fit_mle(&s)?)
    }

    /// Sampled robust box, scaled by the configured factor.
    pub fn robust_box(&self) -> Result<RobustBox, CliError> {
        let c = &self.loaded.config;
        let s = uncertainty::sample(&self.actual, c.samples.robust, c.seeds.robust)?;
        Ok(uncertainty::robust_box(&s)?.scaled(c.formulation.box_scale))
    }

    pub fn solve(&self, cfg: &FormulationConfig) -> Result<SolveOutcome, CliError> {
        let f = match cfg.mode {
            Mode::Deterministic => build_deterministic(&self.inst, cfg)?,
            Mode::CoupledNominal => build_coupled_nominal(&self.inst, cfg)?,
            Mode::Robust => build_robust(&self.inst, cfg, &self.robust_box()?)?,
            Mode::Probabilistic => build_probabilistic(&self.inst, cfg, &self.fitted()?)?,
        };
        let backend = ClarabelBackend::new(self.loaded.config.solver.clone());
        Ok(f.solve_with(&self.inst, &backend)?)
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        io::write_atomic(&path, contents.as_bytes()).map_err(|source| CliError::Output { path, source })
    }

    /// CSV with a leading digest comment line.
    fn write_csv(&self, name: &str, body: &str) -> Result<(), CliError> {
        self.write(name, &format!("# config_digest={}\n{body}", self.digest))
    }

    fn append_timings(&self, rows: &[(String, f64)]) -> Result<(), CliError> {
        let path = self.out.join("timings.csv");
        let mut text = std::fs::read_to_string(&path).unwrap_or_default();
        if text.is_empty() {
            text.push_str("task,seconds\n");
        }
        for (task, s) in rows {
            println!("time {task}: {s:.3} s");
            text.push_str(&format!("{task},{s:.6}\n"));
        }
        io::write_atomic(&path, text.as_bytes()).map_err(|source| CliError::Output { path, source })
    }

    fn schedule_path(&self, mode: Mode) -> PathBuf {
        self.out.join(format!("schedule-{mode}.json"))
    }
}

fn status_error(mode: Mode, status: SolveStatus) -> CliError {
    let msg = format!("{mode}: solver status {status}");
    match status {
        SolveStatus::Infeasible => CliError::Infeasible(msg),
        _ => CliError::Solver(msg),
    }
}

fn mean(m: &[Vec<f64>]) -> f64 {
    let n = m.iter().map(Vec::len).sum::<usize>();
    if n == 0 {
        0.0
    } else {
        m.iter().flatten().sum::<f64>() / n as f64
    }
}

fn cost_csv(mode: Mode, status: SolveStatus, s: Option<&DecisionSchedule>) -> String {
    let mut text = String::from("mode,status,total_cost,energy_cost,support_cost,avg_r_up_w,avg_r_down_w\n");
    match s {
        Some(s) => text.push_str(&format!(
            "{mode},{status},{:?},{:?},{:?},{:?},{:?}\n",
            s.cost.total,
            s.cost.energy,
            s.cost.support,
            mean(&s.r_up),
            mean(&s.r_down)
        )),
        None => text.push_str(&format!("{mode},{status},,,,,\n")),
    }
    text
}

/// Tidy pump-band data: nominal power, the reserved range and the pump limits, per phase.
pub fn plot_csv(s: &DecisionSchedule, inst: &Instance) -> String {
    let mut text = String::from("pump,period,phase,series,value_w\n");
    for (e, id) in s.pumps.iter().enumerate() {
        let (lo, hi) = inst.pump_power_limits(e);
        for t in 0..s.periods {
            let (down, up) = s.extreme_powers(e, t);
            for phase in ["a", "b", "c"] {
                for (series, v) in
                    [("p_nom", s.p_nom[e][t]), ("p_lower", down), ("p_upper", up), ("limit_min", lo), ("limit_max", hi)]
                {
                    text.push_str(&format!("{id},{t},{phase},{series},{v:?}\n"));
                }
            }
        }
    }
    text
}

pub fn cmd_solve(args: &CommonArgs) -> Result<(), CliError> {
    let ex = Experiment::open(args)?;
    let mode = ex.loaded.config.formulation.mode;
    let cfg = ex.formulation_config(mode);
    let start = Instant::now();
    let outcome = ex.solve(&cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    ex.append_timings(&[(format!("solve-{mode}"), elapsed), (format!("solver-{mode}"), outcome.result.solve_time_s)])?;
    ex.write_csv(&format!("cost-{mode}.csv"), &cost_csv(mode, outcome.status, outcome.schedule.as_ref()))?;
    println!("{mode}: {}", outcome.status);
    let Some(s) = outcome.schedule else {
        return Err(status_error(mode, outcome.status));
    };
    let file = ScheduleFile { config_digest: ex.digest.clone(), schedule: s };
    let json = serde_json::to_string_pretty(&file).expect("schedule serializes") + "\n";
    let path = ex.schedule_path(mode);
    io::write_atomic(&path, json.as_bytes()).map_err(|source| CliError::Output { path, source })?;
    ex.write_csv(&format!("plot-{mode}.csv"), &plot_csv(&file.schedule, &ex.inst))?;
    println!("total cost {:.4} $ (energy {:.4}, support {:.4})", file.schedule.cost.total, file.schedule.cost.energy, file.schedule.cost.support);
    Ok(())
}

pub fn read_schedule(path: &Path) -> Result<ScheduleFile, CliError> {
    let bytes = io::read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let ex = Experiment::open(&args.common)?;
    let path = match &args.schedule {
        Some(p) => p.clone(),
        None => ex.schedule_path(ex.loaded.config.formulation.mode),
    };
    let schedule = read_schedule(&path)?.schedule;
    schedule.check_against(&ex.inst)?;
    let mode = schedule.mode;
    let c = &ex.loaded.config;
    let options = EvaluationOptions { include_final_tank: c.evaluation.include_final_tank, ..Default::default() };
    let clip = if args.clip { Some(ex.robust_box()?) } else { None };
    let fitted = ex.fitted()?;
    let mut reports = Vec::new();
    let mut timings = Vec::new();
    for (name, source) in [("fitted", &fitted as &dyn uncertainty::ScenarioSource), ("actual", &ex.actual)] {
        let start = Instant::now();
        let r = montecarlo::evaluate(&schedule, &ex.inst, source, c.samples.evaluation, c.seeds.evaluation, options, clip.as_ref())?;
        timings.push((format!("evaluate-{mode}-{name}"), start.elapsed().as_secs_f64()));
        println!(
            "{mode} under {name}: joint power {:.6}, water {:.6}, total {:.6}",
            r.joint_power, r.joint_water, r.joint_total
        );
        ex.write_csv(&format!("rates-{mode}-{name}.csv"), &r.individual_csv())?;
        ex.write(&format!("report-{mode}-{name}.json"), &(serde_json::to_string_pretty(&r).expect("report serializes") + "\n"))?;
        reports.push(r);
    }
    ex.append_timings(&timings)?;
    ex.write_csv(&format!("joint-{mode}.csv"), &montecarlo::joint_csv(&[("fitted", &reports[0]), ("actual", &reports[1])]))?;
    let cmp = montecarlo::compare(&[
        ComparisonEntry { name: "fitted", schedule: &schedule, report: &reports[0] },
        ComparisonEntry { name: "actual", schedule: &schedule, report: &reports[1] },
    ]);
    ex.write_csv(&format!("comparison-{mode}.csv"), &cmp.csv)?;
    Ok(())
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub eps_p: Option<f64>,
    pub eps_w: Option<f64>,
    pub status: SolveStatus,
    pub total_cost: Option<f64>,
    pub scheduled_cost: Option<f64>,
    pub avg_r_up_w: Option<f64>,
    pub avg_r_down_w: Option<f64>,
    pub solve_time_s: f64,
}

fn sweep_pairs(args: &CommonArgs, ex: &Experiment) -> Result<Vec<(f64, f64)>, CliError> {
    if args.eps_p.is_empty() && args.eps_w.is_empty() {
        return Ok(ex.loaded.config.sweep.eps.clone());
    }
    let (p, w) = (&args.eps_p, &args.eps_w);
    let n = p.len().max(w.len());
    let pick = |v: &Vec<f64>, i: usize, other: &Vec<f64>| -> Result<f64, CliError> {
        match v.len() {
            0 => Ok(other[i]),
            1 => Ok(v[0]),
            l if l == n => Ok(v[i]),
            _ => Err(CliError::Input("--eps-p and --eps-w lists differ in length".into())),
        }
    };
    (0..n).map(|i| Ok((pick(p, i, w)?, pick(w, i, p)?))).collect()
}

/// Deterministic baseline (first row), one probabilistic row per pair, then the robust row.
/// Empty `pairs` gives an empty table.
pub fn run_sweep(ex: &Experiment, pairs: &[(f64, f64)]) -> Result<Vec<SweepRow>, CliError> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let row = |label: String, eps: Option<(f64, f64)>, o: &SolveOutcome| SweepRow {
        label,
        eps_p: eps.map(|e| e.0),
        eps_w: eps.map(|e| e.1),
        status: o.status,
        total_cost: o.schedule.as_ref().map(|s| s.cost.total),
        scheduled_cost: o.schedule.as_ref().map(|s| s.cost.energy),
        avg_r_up_w: o.schedule.as_ref().map(|s| mean(&s.r_up)),
        avg_r_down_w: o.schedule.as_ref().map(|s| mean(&s.r_down)),
        solve_time_s: o.result.solve_time_s,
    };
    let base = ex.solve(&ex.formulation_config(Mode::Deterministic))?;
    if base.schedule.is_none() {
        return Err(status_error(Mode::Deterministic, base.status));
    }
    let mut rows = vec![row("deterministic".into(), None, &base)];
    let fitted = ex.fitted()?;
    let backend = ClarabelBackend::new(ex.loaded.config.solver.clone());
    for &(ep, ew) in pairs {
        let mut cfg = ex.formulation_config(Mode::Probabilistic);
        cfg.eps_p = Epsilon::Uniform(ep);
        cfg.eps_w = Epsilon::Uniform(ew);
        let o = build_probabilistic(&ex.inst, &cfg, &fitted)?.solve_with(&ex.inst, &backend)?;
        rows.push(row("probabilistic".into(), Some((ep, ew)), &o));
    }
    let o = ex.solve(&ex.formulation_config(Mode::Robust))?;
    rows.push(row("robust".into(), None, &o));
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let base = rows.first().and_then(|r| r.total_cost.zip(r.scheduled_cost));
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
    let pct = |v: Option<f64>, b: Option<f64>| match (v, b) {
        (Some(v), Some(b)) if b != 0.0 => format!("{:?}", 100.0 * (v - b) / b),
        _ => String::new(),
    };
    let mut text = String::from(
        "schedule,eps_p,eps_w,status,total_cost,cost_increase_pct,scheduled_cost,scheduled_cost_increase_pct,avg_r_up_w,avg_r_down_w\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            opt(r.eps_p),
            opt(r.eps_w),
            r.status,
            opt(r.total_cost),
            pct(r.total_cost, base.map(|b| b.0)),
            opt(r.scheduled_cost),
            pct(r.scheduled_cost, base.map(|b| b.1)),
            opt(r.avg_r_up_w),
            opt(r.avg_r_down_w),
        ));
    }
    text
}

pub fn cmd_sweep(args: &CommonArgs) -> Result<(), CliError> {
    let ex = Experiment::open(args)?;
    let pairs = sweep_pairs(args, &ex)?;
    if pairs.iter().any(|&(p, w)| !(p > 0.0 && p < 1.0 && w > 0.0 && w < 1.0)) {
        return Err(CliError::Input("violation levels must lie in (0, 1)".into()));
    }
    let start = Instant::now();
    let rows = run_sweep(&ex, &pairs)?;
    let mut timings: Vec<(String, f64)> = rows
        .iter()
        .map(|r| {
            let eps = r.eps_p.zip(r.eps_w).map_or(String::new(), |(p, w)| format!("-{p}-{w}"));
            (format!("sweep-solver-{}{eps}", r.label), r.solve_time_s)
        })
        .collect();
    timings.push(("sweep".into(), start.elapsed().as_secs_f64()));
    ex.append_timings(&timings)?;
    for r in &rows {
        println!("{} {:?} {:?}: {} {:?}", r.label, r.eps_p, r.eps_w, r.status, r.total_cost);
    }
    ex.write_csv("sweep.csv", &sweep_csv(&rows))
}

fn read_report(path: &Path) -> Option<EvaluationReport> {
    let bytes = std::fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

pub fn cmd_report(args: &CommonArgs) -> Result<(), CliError> {
    let ex = Experiment::open(args)?;
    let modes = [Mode::Deterministic, Mode::CoupledNominal, Mode::Probabilistic, Mode::Robust];
    let mut summary = String::from(
        "mode,total_cost,energy_cost,support_cost,avg_r_up_w,avg_r_down_w,joint_total_fitted,joint_total_actual\n",
    );
    let mut found = Vec::new();
    for mode in modes {
        let path = ex.schedule_path(mode);
        if !path.exists() {
            continue;
        }
        let file = read_schedule(&path)?;
        file.schedule.check_against(&ex.inst)?;
        let fitted = read_report(&ex.out.join(format!("report-{mode}-fitted.json")));
        let actual = read_report(&ex.out.join(format!("report-{mode}-actual.json")));
        let s = &file.schedule;
        let j = |r: &Option<EvaluationReport>| r.as_ref().map_or(String::new(), |r| format!("{:?}", r.joint_total));
        summary.push_str(&format!(
            "{mode},{:?},{:?},{:?},{:?},{:?},{},{}\n",
            s.cost.total,
            s.cost.energy,
            s.cost.support,
            mean(&s.r_up),
            mean(&s.r_down),
            j(&fitted),
            j(&actual)
        ));
        found.push((mode.to_string(), file.schedule, actual));
    }
    if found.is_empty() {
        return Err(CliError::Input(format!("no schedules found in {}", ex.out.display())));
    }
    ex.write_csv("summary.csv", &summary)?;
    let evaluated: Vec<_> = found.iter().filter_map(|(n, s, r)| r.as_ref().map(|r| (n, s, r))).collect();
    if !evaluated.is_empty() {
        let entries: Vec<ComparisonEntry> = evaluated
            .iter()
            .map(|(n, s, r)| ComparisonEntry { name: n.as_str(), schedule: s, report: r })
            .collect();
        let cmp = montecarlo::compare(&entries);
        if !cmp.paired {
            eprintln!("warning: reports were not produced from the same scenarios");
        }
        ex.write_csv("comparison.csv", &cmp.csv)?;
    }
    print!("{summary}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Report(a) => cmd_report(&a),
        Command::GenerateCase { out } => cases::write_analog(&out, &AnalogParams::default())
            .map_err(|source| CliError::Output { path: out.clone(), source }),
    }
}

/// Runs the parsed command and maps the outcome to a process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
