//! Solver-agnostic standard form for linear and second-order cone programs,
//! and the interior-point backend that solves it.
//!
//! A [`StandardProblem`] is
//!
//! ```text
//! minimize    cᵀx + c0
//! subject to  lower ≤ x ≤ upper
//!             Σ_j a_ij x_j  (≤ | ≥ | =)  rhs_i      (sparse triplets)
//!             t_k(x) ≥ ‖u_k(x)‖₂                     (affine t, u)
//! ```
//!
//! The backend hands the problem to Clarabel. The same problem can be dumped
//! to a plain-text format (see [`StandardProblem::to_text`]) for cross-checking
//! in an external solver.

use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("variable index {index} out of range (problem has {count} variables)")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("cone block {0} has an empty vector part")]
    EmptyCone(usize),
    #[error("problem text parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("solver setup failed: {0}")]
    Setup(String),
}

/// Sparse affine expression `Σ coef·x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(index: usize) -> Self {
        LinExpr { terms: vec![(index, 1.0)], constant: 0.0 }
    }

    pub fn term(index: usize, coef: f64) -> Self {
        LinExpr { terms: vec![(index, coef)], constant: 0.0 }
    }

    pub fn add_term(&mut self, index: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((index, coef));
        }
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(j, a)| (j, a * scale)));
        self.constant += other.constant * scale;
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        LinExpr {
            terms: self.terms.iter().map(|&(j, a)| (j, a * s)).collect(),
            constant: self.constant * s,
        }
    }

    /// Merges repeated variables and drops exact zeros. Term order becomes ascending.
    pub fn compact(mut self) -> LinExpr {
        self.terms.sort_by_key(|&(j, _)| j);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (j, a) in self.terms {
            match out.last_mut() {
                Some((k, b)) if *k == j => *b += a,
                _ => out.push((j, a)),
            }
        }
        out.retain(|&(_, a)| a != 0.0);
        LinExpr { terms: out, constant: self.constant }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self.add_expr(&rhs, 1.0);
        self
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: LinExpr) -> LinExpr {
        self.add_expr(&rhs, -1.0);
        self
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        self.scaled(rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn token(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

/// `t ≥ ‖u‖₂` with every entry affine in the variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub t: LinExpr,
    pub u: Vec<LinExpr>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StandardProblem {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `(row, col, value)`; repeated entries are summed.
    pub triplets: Vec<(usize, usize, f64)>,
    pub senses: Vec<Sense>,
    pub rhs: Vec<f64>,
    pub cones: Vec<ConeBlock>,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
}

impl StandardProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.names.push(name.into());
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.push(0.0);
        self.lower.len() - 1
    }

    /// Adds `expr (sense) rhs`; the expression's constant is moved to the right-hand side.
    pub fn add_constraint(&mut self, expr: LinExpr, sense: Sense, rhs: f64) -> usize {
        let row = self.rhs.len();
        let expr = expr.compact();
        for (j, a) in expr.terms {
            self.triplets.push((row, j, a));
        }
        self.senses.push(sense);
        self.rhs.push(rhs - expr.constant);
        row
    }

    pub fn add_le(&mut self, expr: LinExpr, rhs: f64) -> usize {
        self.add_constraint(expr, Sense::Le, rhs)
    }

    pub fn add_ge(&mut self, expr: LinExpr, rhs: f64) -> usize {
        self.add_constraint(expr, Sense::Ge, rhs)
    }

    pub fn add_eq(&mut self, expr: LinExpr, rhs: f64) -> usize {
        self.add_constraint(expr, Sense::Eq, rhs)
    }

    pub fn add_cone(&mut self, t: LinExpr, u: Vec<LinExpr>) {
        self.cones.push(ConeBlock {
            t: t.compact(),
            u: u.into_iter().map(LinExpr::compact).collect(),
        });
    }

    /// Adds `expr` to the minimized objective.
    pub fn add_objective(&mut self, expr: &LinExpr) {
        for &(j, a) in &expr.terms {
            self.objective[j] += a;
        }
        self.objective_offset += expr.constant;
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let n = self.num_vars();
        let check_idx = |j: usize| {
            if j >= n {
                Err(BackendError::IndexOutOfRange { index: j, count: n })
            } else {
                Ok(())
            }
        };
        let check_finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(BackendError::NonFinite(what.to_string()))
            }
        };
        for &(i, j, a) in &self.triplets {
            check_idx(j)?;
            if i >= self.num_rows() {
                return Err(BackendError::IndexOutOfRange { index: i, count: self.num_rows() });
            }
            check_finite(a, "constraint matrix")?;
        }
        for &v in &self.rhs {
            check_finite(v, "right-hand side")?;
        }
        for &v in &self.objective {
            check_finite(v, "objective")?;
        }
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if l.is_nan() || u.is_nan() {
                return Err(BackendError::NonFinite("variable bounds".into()));
            }
        }
        for (k, cone) in self.cones.iter().enumerate() {
            if cone.u.is_empty() {
                return Err(BackendError::EmptyCone(k));
            }
            for e in std::iter::once(&cone.t).chain(cone.u.iter()) {
                check_finite(e.constant, "cone block")?;
                for &(j, a) in &e.terms {
                    check_idx(j)?;
                    check_finite(a, "cone block")?;
                }
            }
        }
        Ok(())
    }

    /// Largest violation of bounds, rows and cones at `x`, each scaled by `1 + |rhs|`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (j, &v) in x.iter().enumerate() {
            if self.lower[j].is_finite() {
                worst = worst.max((self.lower[j] - v) / (1.0 + self.lower[j].abs()));
            }
            if self.upper[j].is_finite() {
                worst = worst.max((v - self.upper[j]) / (1.0 + self.upper[j].abs()));
            }
        }
        let mut lhs = vec![0.0; self.num_rows()];
        for &(i, j, a) in &self.triplets {
            lhs[i] += a * x[j];
        }
        for (i, (&s, &b)) in self.senses.iter().zip(&self.rhs).enumerate() {
            let gap = match s {
                Sense::Le => lhs[i] - b,
                Sense::Ge => b - lhs[i],
                Sense::Eq => (lhs[i] - b).abs(),
            };
            worst = worst.max(gap / (1.0 + b.abs()));
        }
        for cone in &self.cones {
            let t = cone.t.eval(x);
            let norm = cone.u.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            worst = worst.max((norm - t) / (1.0 + t.abs()));
        }
        worst
    }

    /// Plain-text dump. Every number is written in Rust's shortest round-trip
    /// decimal form, so [`StandardProblem::from_text`] restores the problem exactly.
    ///
    /// ```text
    /// # comment
    /// vars <n>
    /// var <index> <name> <lower|-inf> <upper|inf> <objective coefficient>
    /// offset <objective constant>
    /// rows <m>
    /// row <index> <<=|>=|=> <rhs>
    /// a <row> <col> <value>
    /// cones <k>
    /// cone <index> <dim of u>
    /// t <constant> {<col> <value>}*
    /// u <constant> {<col> <value>}*      (one line per entry of u)
    /// end
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let num = |v: f64| -> String {
            if v == f64::INFINITY {
                "inf".into()
            } else if v == f64::NEG_INFINITY {
                "-inf".into()
            } else {
                format!("{v:?}")
            }
        };
        let _ = writeln!(s, "# pumpflex standard-form problem");
        let _ = writeln!(s, "vars {}", self.num_vars());
        for j in 0..self.num_vars() {
            let name = if self.names[j].is_empty() { "_" } else { &self.names[j] };
            let _ = writeln!(
                s,
                "var {j} {name} {} {} {}",
                num(self.lower[j]),
                num(self.upper[j]),
                num(self.objective[j])
            );
        }
        let _ = writeln!(s, "offset {}", num(self.objective_offset));
        let _ = writeln!(s, "rows {}", self.num_rows());
        for i in 0..self.num_rows() {
            let _ = writeln!(s, "row {i} {} {}", self.senses[i].token(), num(self.rhs[i]));
        }
        for &(i, j, a) in &self.triplets {
            let _ = writeln!(s, "a {i} {j} {}", num(a));
        }
        let _ = writeln!(s, "cones {}", self.cones.len());
        let expr_line = |tag: &str, e: &LinExpr| -> String {
            let mut line = format!("{tag} {}", num(e.constant));
            for &(j, a) in &e.terms {
                let _ = write!(line, " {j} {}", num(a));
            }
            line
        };
        for (k, c) in self.cones.iter().enumerate() {
            let _ = writeln!(s, "cone {k} {}", c.u.len());
            let _ = writeln!(s, "{}", expr_line("t", &c.t));
            for e in &c.u {
                let _ = writeln!(s, "{}", expr_line("u", e));
            }
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn from_text(text: &str) -> Result<StandardProblem, BackendError> {
        fn num(tok: &str, line: usize) -> Result<f64, BackendError> {
            match tok {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => tok.parse::<f64>().map_err(|e| BackendError::Parse {
                    line,
                    msg: format!("bad number {tok:?}: {e}"),
                }),
            }
        }
        fn idx(tok: &str, line: usize) -> Result<usize, BackendError> {
            tok.parse::<usize>().map_err(|e| BackendError::Parse {
                line,
                msg: format!("bad index {tok:?}: {e}"),
            })
        }
        fn expr(toks: &[&str], line: usize) -> Result<LinExpr, BackendError> {
            if toks.is_empty() || toks.len() % 2 == 0 {
                return Err(BackendError::Parse { line, msg: "malformed expression".into() });
            }
            let mut e = LinExpr::constant(num(toks[0], line)?);
            for pair in toks[1..].chunks(2) {
                e.terms.push((idx(pair[0], line)?, num(pair[1], line)?));
            }
            Ok(e)
        }
        let err = |line: usize, msg: &str| BackendError::Parse { line, msg: msg.into() };

        let mut p = StandardProblem::new();
        let mut pending_cone: Option<(usize, ConeBlock)> = None;
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = raw.split_whitespace().collect();
            match toks[0] {
                "vars" | "rows" | "cones" => {}
                "var" if toks.len() == 6 => {
                    let name = if toks[2] == "_" { String::new() } else { toks[2].to_string() };
                    let j = p.add_var(name, num(toks[3], line)?, num(toks[4], line)?);
                    if j != idx(toks[1], line)? {
                        return Err(err(line, "variables out of order"));
                    }
                    p.objective[j] = num(toks[5], line)?;
                }
                "offset" if toks.len() == 2 => p.objective_offset = num(toks[1], line)?,
                "row" if toks.len() == 4 => {
                    let sense = match toks[2] {
                        "<=" => Sense::Le,
                        ">=" => Sense::Ge,
                        "=" => Sense::Eq,
                        other => return Err(err(line, &format!("unknown sense {other}"))),
                    };
                    p.senses.push(sense);
                    p.rhs.push(num(toks[3], line)?);
                }
                "a" if toks.len() == 4 => {
                    p.triplets.push((idx(toks[1], line)?, idx(toks[2], line)?, num(toks[3], line)?))
                }
                "cone" if toks.len() == 3 => {
                    if let Some((_, c)) = pending_cone.take() {
                        p.cones.push(c);
                    }
                    let dim = idx(toks[2], line)?;
                    pending_cone =
                        Some((dim, ConeBlock { t: LinExpr::zero(), u: Vec::with_capacity(dim) }));
                }
                "t" => match pending_cone.as_mut() {
                    Some((_, c)) => c.t = expr(&toks[1..], line)?,
                    None => return Err(err(line, "t outside cone")),
                },
                "u" => match pending_cone.as_mut() {
                    Some((_, c)) => c.u.push(expr(&toks[1..], line)?),
                    None => return Err(err(line, "u outside cone")),
                },
                "end" => {
                    if let Some((dim, c)) = pending_cone.take() {
                        if c.u.len() != dim {
                            return Err(err(line, "cone dimension mismatch"));
                        }
                        p.cones.push(c);
                    }
                }
                _ => return Err(err(line, &format!("unrecognized line {raw:?}"))),
            }
        }
        if pending_cone.is_some() {
            return Err(err(text.lines().count(), "missing end"));
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical-failure",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Present iff `status == Optimal`.
    pub primal: Option<Vec<f64>>,
    pub objective: f64,
    pub solve_time_s: f64,
    pub iterations: u32,
    /// Scaled primal infeasibility of the returned point (see [`StandardProblem::max_violation`]).
    pub max_violation: f64,
    /// Raw status reported by the interior-point method.
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
    /// Returned points with a larger scaled violation are reported as numerical failures.
    pub accept_violation: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_gap_abs: 1e-8,
            tol_gap_rel: 1e-8,
            tol_feas: 1e-8,
            max_iter: 200,
            accept_violation: 1e-6,
        }
    }
}

/// Anything that can solve a [`StandardProblem`].
pub trait ConicBackend {
    fn solve(&self, problem: &StandardProblem) -> Result<SolveResult, BackendError>;
}

/// Clarabel interior-point backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend {
    pub settings: SolverSettings,
}

impl ClarabelBackend {
    pub fn new(settings: SolverSettings) -> Self {
        ClarabelBackend { settings }
    }
}

/// Solves with the default backend and settings.
pub fn solve(problem: &StandardProblem) -> Result<SolveResult, BackendError> {
    ClarabelBackend::default().solve(problem)
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, problem: &StandardProblem) -> Result<SolveResult, BackendError> {
        problem.validate()?;
        let started = Instant::now();
        let n = problem.num_vars();

        // Clarabel form: A x + s = b, s ∈ K, cones ordered zero | nonneg | soc...
        let mut rows_i = Vec::new();
        let mut rows_j = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();

        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); problem.num_rows()];
        for &(i, j, a) in &problem.triplets {
            by_row[i].push((j, a));
        }
        let mut push_row = |terms: &[(usize, f64)], rhs: f64, sign: f64, b: &mut Vec<f64>| {
            let r = b.len();
            for &(j, a) in terms {
                rows_i.push(r);
                rows_j.push(j);
                vals.push(sign * a);
            }
            b.push(sign * rhs);
        };

        let mut n_zero = 0;
        for (i, terms) in by_row.iter().enumerate() {
            if problem.senses[i] == Sense::Eq {
                push_row(terms, problem.rhs[i], 1.0, &mut b);
                n_zero += 1;
            }
        }
        let mut n_nonneg = 0;
        for (i, terms) in by_row.iter().enumerate() {
            match problem.senses[i] {
                Sense::Le => {
                    push_row(terms, problem.rhs[i], 1.0, &mut b);
                    n_nonneg += 1;
                }
                Sense::Ge => {
                    push_row(terms, problem.rhs[i], -1.0, &mut b);
                    n_nonneg += 1;
                }
                Sense::Eq => {}
            }
        }
        for j in 0..n {
            if problem.upper[j].is_finite() {
                push_row(&[(j, 1.0)], problem.upper[j], 1.0, &mut b);
                n_nonneg += 1;
            }
            if problem.lower[j].is_finite() {
                push_row(&[(j, 1.0)], problem.lower[j], -1.0, &mut b);
                n_nonneg += 1;
            }
        }
        let mut cones = Vec::with_capacity(2 + problem.cones.len());
        if n_zero > 0 {
            cones.push(SupportedConeT::ZeroConeT(n_zero));
        }
        if n_nonneg > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
        }
        for cone in &problem.cones {
            // s = b - A x = expr(x)  =>  A = -coefs, b = constant
            for e in std::iter::once(&cone.t).chain(cone.u.iter()) {
                let r = b.len();
                for &(j, a) in &e.terms {
                    rows_i.push(r);
                    rows_j.push(j);
                    vals.push(-a);
                }
                b.push(e.constant);
            }
            cones.push(SupportedConeT::SecondOrderConeT(1 + cone.u.len()));
        }

        let m = b.len();
        let a_mat = CscMatrix::new_from_triplets(m, n, rows_i, rows_j, vals);
        let p_mat = CscMatrix::zeros((n, n));
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(self.settings.tol_gap_abs)
            .tol_gap_rel(self.settings.tol_gap_rel)
            .tol_feas(self.settings.tol_feas)
            .max_iter(self.settings.max_iter)
            .build()
            .map_err(|e| BackendError::Setup(e.to_string()))?;
        let mut solver =
            DefaultSolver::new(&p_mat, &problem.objective, &a_mat, &b, &cones, settings)
                .map_err(|e| BackendError::Setup(format!("{e:?}")))?;
        solver.solve();

        let sol = &solver.solution;
        let detail = format!("{:?}", sol.status);
        let mut status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            _ => SolveStatus::NumericalFailure,
        };
        let mut max_violation = f64::NAN;
        let mut primal = None;
        let mut objective = f64::NAN;
        if status == SolveStatus::Optimal {
            max_violation = problem.max_violation(&sol.x);
            if max_violation <= self.settings.accept_violation {
                objective = problem.objective_value(&sol.x);
                primal = Some(sol.x.clone());
            } else {
                status = SolveStatus::NumericalFailure;
            }
        }
        Ok(SolveResult {
            status,
            primal,
            objective,
            solve_time_s: started.elapsed().as_secs_f64(),
            iterations: sol.iterations,
            max_violation,
            detail,
        })
    }
}
