//! Declarative convex conic programs over Hermitian matrix and real scalar
//! variables, solved with the Clarabel interior-point method.
//!
//! An `n x n` Hermitian variable `W = A + jB` is stored as `n^2` real columns.
//! Column `j` of the upper triangle contributes, for every `i < j`, the pair
//! `(A_ij, B_ij)` followed by the diagonal `A_jj`. Positive semidefiniteness
//! is imposed on the real embedding `[[A, -B], [B, A]]`.

use std::fmt;
use std::io::{self, Write};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg::{min_eigenvalue, CMat, CVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatrixVar {
    pub id: usize,
    pub dim: usize,
    offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScalarVar {
    pub id: usize,
    col: usize,
}

/// Column of `A_ij` (`i <= j`) inside a Hermitian parameter block.
fn re_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * j + 2 * i
}

/// Column of `B_ij` (`i < j`) inside a Hermitian parameter block.
fn im_index(i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    j * j + 2 * i + 1
}

pub fn params_from_hermitian(w: &CMat) -> Vec<f64> {
    let n = w.nrows();
    let mut p = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..j {
            let z = 0.5 * (w[(i, j)] + w[(j, i)].conj());
            p[re_index(i, j)] = z.re;
            p[im_index(i, j)] = z.im;
        }
        p[re_index(j, j)] = w[(j, j)].re;
    }
    p
}

pub fn hermitian_from_params(dim: usize, p: &[f64]) -> CMat {
    assert_eq!(p.len(), dim * dim);
    let mut w = CMat::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..j {
            let z = Complex64::new(p[re_index(i, j)], p[im_index(i, j)]);
            w[(i, j)] = z;
            w[(j, i)] = z.conj();
        }
        w[(j, j)] = Complex64::new(p[re_index(j, j)], 0.0);
    }
    w
}

/// Real symmetric embedding `[[A, -B], [B, A]]` of `W = A + jB`.
pub fn lift_hermitian(w: &CMat) -> DMatrix<f64> {
    let n = w.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = w[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Inverse of [`lift_hermitian`]; the two copies of each block are averaged.
pub fn unlift_hermitian(lifted: &DMatrix<f64>) -> CMat {
    let n = lifted.nrows() / 2;
    CMat::from_fn(n, n, |i, j| {
        let re = 0.5 * (lifted[(i, j)] + lifted[(i + n, j + n)]);
        let im = 0.5 * (lifted[(i + n, j)] - lifted[(i, j + n)]);
        Complex64::new(re, im)
    })
}

/// Coefficients `a` with `Re tr(C W) = a . params(W)` for Hermitian `W`.
pub fn trace_product_coeffs(c: &CMat) -> Vec<f64> {
    let n = c.nrows();
    let mut a = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..j {
            a[re_index(i, j)] = c[(j, i)].re + c[(i, j)].re;
            a[im_index(i, j)] = c[(i, j)].im - c[(j, i)].im;
        }
        a[re_index(j, j)] = c[(j, j)].re;
    }
    a
}

/// Coefficients of `h^H W h`.
fn quad_coeffs(h: &CVec) -> Vec<f64> {
    let n = h.len();
    let mut a = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..j {
            // C = h h^H, C_ji = h_j conj(h_i)
            let z = h[j] * h[i].conj();
            a[re_index(i, j)] = 2.0 * z.re;
            a[im_index(i, j)] = -2.0 * z.im;
        }
        a[re_index(j, j)] = h[j].norm_sqr();
    }
    a
}

/// Real affine function of the program variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl AffineExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn of(var: ScalarVar) -> Self {
        Self::new().scalar(var, 1.0)
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, a)| a == 0.0)
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_scalar(&mut self, var: ScalarVar, coef: f64) -> &mut Self {
        self.terms.push((var.col, coef));
        self
    }

    pub fn scalar(mut self, var: ScalarVar, coef: f64) -> Self {
        self.add_scalar(var, coef);
        self
    }

    fn add_block(&mut self, var: MatrixVar, coeffs: &[f64], scale: f64) {
        for (p, &a) in coeffs.iter().enumerate() {
            if a != 0.0 {
                self.terms.push((var.offset + p, scale * a));
            }
        }
    }

    /// Adds `coef * Re tr(C W)`.
    pub fn add_trace_product(&mut self, var: MatrixVar, c: &CMat, coef: f64) -> &mut Self {
        assert_eq!(c.nrows(), var.dim);
        self.add_block(var, &trace_product_coeffs(c), coef);
        self
    }

    /// Adds `coef * h^H W h`.
    pub fn add_quad(&mut self, var: MatrixVar, h: &CVec, coef: f64) -> &mut Self {
        assert_eq!(h.len(), var.dim);
        self.add_block(var, &quad_coeffs(h), coef);
        self
    }

    /// Adds `coef * v^T W v^*`, the power radiated towards a steering vector.
    pub fn add_radiated(&mut self, var: MatrixVar, v: &CVec, coef: f64) -> &mut Self {
        self.add_quad(var, &v.map(|z| z.conj()), coef)
    }

    /// Adds `coef * tr(W)`.
    pub fn add_trace(&mut self, var: MatrixVar, coef: f64) -> &mut Self {
        for j in 0..var.dim {
            self.terms.push((var.offset + re_index(j, j), coef));
        }
        self
    }

    /// Adds `coef * a . params(W)` for precomputed coefficients.
    pub fn add_param_coeffs(&mut self, var: MatrixVar, coeffs: &[f64], coef: f64) -> &mut Self {
        assert_eq!(coeffs.len(), var.dim * var.dim);
        self.add_block(var, coeffs, coef);
        self
    }

    pub fn add_expr(&mut self, other: &AffineExpr, coef: f64) -> &mut Self {
        self.terms
            .extend(other.terms.iter().map(|&(col, a)| (col, coef * a)));
        self.constant += coef * other.constant;
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(c, a)| (c, factor * a)).collect(),
            constant: factor * self.constant,
        }
    }

    pub fn minus(&self, other: &AffineExpr) -> Self {
        let mut out = self.clone();
        out.add_expr(other, -1.0);
        out
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(c, a)| a * values[c]).sum::<f64>()
    }

    fn max_column(&self) -> Option<usize> {
        self.terms.iter().map(|&(c, _)| c).max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `expr = 0`
    Equal(AffineExpr),
    /// `expr >= 0`
    NonNegative(AffineExpr),
    /// `W ⪰ 0`
    Psd(MatrixVar),
    /// `||vector||_2 <= bound`
    SecondOrder { bound: AffineExpr, vector: Vec<AffineExpr> },
    /// `Σ c_j log(arg_j) >= rhs`, every `c_j > 0`
    LogSum { terms: Vec<(f64, AffineExpr)>, rhs: AffineExpr },
}

impl Constraint {
    pub fn eq(lhs: AffineExpr, rhs: AffineExpr) -> Self {
        Constraint::Equal(lhs.minus(&rhs))
    }

    pub fn ge(lhs: AffineExpr, rhs: AffineExpr) -> Self {
        Constraint::NonNegative(lhs.minus(&rhs))
    }

    pub fn le(lhs: AffineExpr, rhs: AffineExpr) -> Self {
        Constraint::NonNegative(rhs.minus(&lhs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feasibility: f64,
    pub gap_rel: f64,
    pub gap_abs: f64,
    pub max_iterations: u32,
    /// Largest scaled constraint violation accepted from a reduced-accuracy
    /// solver exit.
    pub reduced_accept: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-8,
            gap_rel: 1e-8,
            gap_abs: 1e-8,
            max_iterations: 300,
            reduced_accept: 1e-6,
        }
    }
}

impl Tolerances {
    /// For reference values that other results are compared against.
    pub fn tight() -> Self {
        Self {
            feasibility: 1e-10,
            gap_abs: 1e-12,
            gap_rel: 1e-11,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Column values; empty unless the status is optimal.
    pub values: Vec<f64>,
    /// Objective re-evaluated from `values`.
    pub objective_value: f64,
    pub solver_iterations: u32,
    /// Largest scaled constraint violation of `values`.
    pub max_violation: f64,
    /// Absolute and relative duality gap at exit; NaN without a solution.
    pub gap: (f64, f64),
    /// The solver stopped at its reduced-accuracy thresholds.
    pub reduced: bool,
    pub detail: String,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Accepted, but short of the requested accuracy.
    fn loose(&self, tol: &Tolerances) -> bool {
        self.is_optimal() && (self.reduced || (self.gap.0 > tol.gap_abs && self.gap.1 > tol.gap_rel))
    }

    /// Certified answers first, then the smaller violation and gap.
    fn better_than(&self, other: &SolveResult) -> bool {
        let key = |r: &SolveResult| (r.reduced, r.max_violation.max(r.gap.0.min(r.gap.1 * r.objective_value.abs().max(1.0))));
        self.is_optimal() && (!other.is_optimal() || key(self) < key(other))
    }

    pub fn matrix(&self, var: MatrixVar) -> CMat {
        hermitian_from_params(var.dim, &self.values[var.offset..var.offset + var.dim * var.dim])
    }

    pub fn scalar(&self, var: ScalarVar) -> f64 {
        self.values[var.col]
    }

    pub fn eval(&self, expr: &AffineExpr) -> f64 {
        expr.evaluate(&self.values)
    }
}

#[derive(Debug, Clone)]
struct VarInfo {
    name: String,
    kind: VarKind,
}

#[derive(Debug, Clone, Copy)]
enum VarKind {
    Matrix(MatrixVar),
    Scalar(ScalarVar),
}

/// Minimize `Σ_i expr_i^2 + linear` subject to conic constraints.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    n_cols: usize,
    vars: Vec<VarInfo>,
    squares: Vec<AffineExpr>,
    linear: AffineExpr,
    constraints: Vec<Constraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_columns(&self) -> usize {
        self.n_cols
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn add_matrix(&mut self, name: impl Into<String>, dim: usize) -> MatrixVar {
        let var = MatrixVar {
            id: self.vars.len(),
            dim,
            offset: self.n_cols,
        };
        self.n_cols += dim * dim;
        self.vars.push(VarInfo {
            name: name.into(),
            kind: VarKind::Matrix(var),
        });
        var
    }

    /// Hermitian variable constrained to be positive semidefinite.
    pub fn add_psd_matrix(&mut self, name: impl Into<String>, dim: usize) -> MatrixVar {
        let var = self.add_matrix(name, dim);
        self.constraints.push(Constraint::Psd(var));
        var
    }

    pub fn add_scalar(&mut self, name: impl Into<String>) -> ScalarVar {
        let var = ScalarVar {
            id: self.vars.len(),
            col: self.n_cols,
        };
        self.n_cols += 1;
        self.vars.push(VarInfo {
            name: name.into(),
            kind: VarKind::Scalar(var),
        });
        var
    }

    pub fn add_square(&mut self, expr: AffineExpr) {
        self.squares.push(expr);
    }

    pub fn add_linear(&mut self, expr: &AffineExpr, coef: f64) {
        self.linear.add_expr(expr, coef);
    }

    pub fn add_constraint(&mut self, constraint: Constraint) {
        self.constraints.push(constraint);
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.squares
            .iter()
            .map(|e| e.evaluate(values).powi(2))
            .sum::<f64>()
            + self.linear.evaluate(values)
    }

    /// Largest scaled violation of any constraint at `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| violation(c, values))
            .fold(0.0, f64::max)
    }

    /// Kind and position of the most violated constraint, for diagnostics.
    fn worst_constraint(&self, values: &[f64]) -> String {
        let worst = self
            .constraints
            .iter()
            .enumerate()
            .map(|(i, c)| (i, violation(c, values)))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let kind = match self.constraints.get(worst.0) {
            Some(Constraint::Equal(_)) => "equality",
            Some(Constraint::NonNegative(_)) => "inequality",
            Some(Constraint::Psd(_)) => "psd",
            Some(Constraint::SecondOrder { .. }) => "second-order",
            Some(Constraint::LogSum { .. }) => "log-sum",
            None => "none",
        };
        format!("{kind} constraint {}", worst.0)
    }

    fn check(&self) -> Result<(), String> {
        let all = self
            .squares
            .iter()
            .chain(std::iter::once(&self.linear))
            .chain(self.constraints.iter().flat_map(constraint_exprs));
        for e in all {
            if let Some(c) = e.max_column() {
                if c >= self.n_cols {
                    return Err(format!("expression references undeclared column {c}"));
                }
            }
        }
        for c in &self.constraints {
            if let Constraint::LogSum { terms, .. } = c {
                if terms.iter().any(|(w, _)| !(*w > 0.0) || !w.is_finite()) {
                    return Err("log-sum weights must be positive".into());
                }
            }
        }
        Ok(())
    }

    fn assemble(&self) -> Assembled {
        let n_user = self.n_cols;
        let n_sq = self.squares.len();
        let n_log: usize = self
            .constraints
            .iter()
            .map(|c| match c {
                Constraint::LogSum { terms, .. } => terms.len(),
                _ => 0,
            })
            .sum();
        let n = n_user + n_sq + n_log;
        let mut asm = Assembled {
            n,
            n_user,
            ..Default::default()
        };

        let mut p_i = Vec::with_capacity(n_sq);
        let mut p_v = Vec::with_capacity(n_sq);
        for s in 0..n_sq {
            p_i.push(n_user + s);
            p_v.push(2.0);
        }
        asm.p = Some(CscMatrix::new_from_triplets(n, n, p_i.clone(), p_i, p_v));

        asm.q = vec![0.0; n];
        for &(c, a) in &self.linear.terms {
            asm.q[c] += a;
        }

        // s = expr - r_s = 0 links residual columns to the squared expressions
        for (s, e) in self.squares.iter().enumerate() {
            asm.row_expr(e);
            asm.push_entry(n_user + s, 1.0);
            asm.close_row(ConeKind::Zero);
        }

        let mut next_log = n_user + n_sq;
        for c in &self.constraints {
            match c {
                Constraint::Equal(e) => {
                    asm.row_expr(e);
                    asm.close_row(ConeKind::Zero);
                }
                Constraint::NonNegative(e) => {
                    asm.row_expr(e);
                    asm.close_row(ConeKind::Nonneg);
                }
                Constraint::SecondOrder { bound, vector } => {
                    asm.row_expr(bound);
                    asm.close_row(ConeKind::Soc);
                    for e in vector {
                        asm.row_expr(e);
                        asm.close_row(ConeKind::SocCont);
                    }
                }
                Constraint::LogSum { terms, rhs } => {
                    let first = next_log;
                    for (_, arg) in terms {
                        // (u, 1, arg) in the exponential cone: exp(u) <= arg
                        asm.push_entry(next_log, -1.0);
                        asm.close_row(ConeKind::Exp);
                        asm.b_const(1.0);
                        asm.close_row(ConeKind::ExpCont);
                        asm.row_expr(arg);
                        asm.close_row(ConeKind::ExpCont);
                        next_log += 1;
                    }
                    // Σ w u - rhs >= 0
                    for (k, (w, _)) in terms.iter().enumerate() {
                        asm.push_entry(first + k, -w);
                    }
                    asm.row_expr_scaled(rhs, -1.0);
                    asm.close_row(ConeKind::Nonneg);
                }
                Constraint::Psd(var) => {
                    let dim = var.dim;
                    for col in 0..2 * dim {
                        for row in 0..=col {
                            let scale = if row == col { 1.0 } else { std::f64::consts::SQRT_2 };
                            if let Some((p, sign)) = lifted_entry(dim, row, col) {
                                asm.push_entry(var.offset + p, -sign * scale);
                            }
                            asm.close_row(if row == 0 && col == 0 {
                                ConeKind::Psd(2 * dim)
                            } else {
                                ConeKind::PsdCont
                            });
                        }
                    }
                }
            }
        }
        asm
    }

    pub fn solve(&self, tol: &Tolerances) -> SolveResult {
        if let Err(msg) = self.check() {
            return failure(msg);
        }
        let asm = self.assemble();
        let a = CscMatrix::new_from_triplets(asm.rows(), asm.n, asm.a_i.clone(), asm.a_j.clone(), asm.a_v.clone());
        let mut result = self.solve_assembled(&asm, &a, tol, Retry::Default);
        let mut details = Vec::new();
        // interior-point stalls are usually cured by a differently conditioned KKT system
        for retry in [Retry::NoEquilibration, Retry::Refinement, Retry::ShortSteps] {
            if result.loose(tol) {
                // keep the reduced-accuracy answer unless a retry closes more of the gap
                let other = self.solve_assembled(&asm, &a, tol, retry);
                if other.better_than(&result) {
                    result = other;
                }
                continue;
            }
            if result.status != SolveStatus::NumericalFailure {
                break;
            }
            details.push(result.detail.clone());
            result = self.solve_assembled(&asm, &a, tol, retry);
        }
        if result.status == SolveStatus::NumericalFailure && !details.is_empty() {
            details.push(result.detail.clone());
            result.detail = details.join("; ");
        }
        result
    }

    fn solve_assembled(&self, asm: &Assembled, a: &CscMatrix<f64>, tol: &Tolerances, retry: Retry) -> SolveResult {
        let mut settings = DefaultSettings::<f64> {
            verbose: false,
            max_iter: tol.max_iterations,
            tol_feas: tol.feasibility,
            tol_gap_rel: tol.gap_rel,
            tol_gap_abs: tol.gap_abs,
            max_threads: 1,
            ..DefaultSettings::default()
        };
        match retry {
            Retry::Default => {}
            Retry::NoEquilibration => settings.equilibrate_enable = false,
            Retry::Refinement => {
                settings.iterative_refinement_reltol = 1e-15;
                settings.iterative_refinement_abstol = 1e-15;
                settings.iterative_refinement_max_iter = 50;
            }
            Retry::ShortSteps => settings.max_step_fraction = 0.9,
        }
        let mut solver = match DefaultSolver::new(asm.p.as_ref().expect("assembled"), &asm.q, a, &asm.b, &asm.cones, settings) {
            Ok(s) => s,
            Err(e) => return failure(format!("solver setup failed: {e:?}")),
        };
        solver.solve();
        let status = solver.solution.status;
        let iterations = solver.solution.iterations;
        let detail = format!("{status:?}");
        let gap = (solver.info.gap_abs, solver.info.gap_rel);
        match status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let values = solver.solution.x[..asm.n_user].to_vec();
                let viol = self.max_violation(&values);
                let accept = match status {
                    SolverStatus::Solved => viol <= tol.reduced_accept.max(1e3 * tol.feasibility),
                    _ => viol <= tol.reduced_accept,
                };
                if !accept || values.iter().any(|v| !v.is_finite()) {
                    return SolveResult {
                        solver_iterations: iterations,
                        max_violation: viol,
                        detail: format!("{detail}, violation {viol:.3e} at {}", self.worst_constraint(&values)),
                        ..failure(String::new())
                    };
                }
                SolveResult {
                    status: SolveStatus::Optimal,
                    objective_value: self.objective_value(&values),
                    values,
                    solver_iterations: iterations,
                    max_violation: viol,
                    gap,
                    reduced: status == SolverStatus::AlmostSolved,
                    detail,
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveResult {
                status: SolveStatus::Infeasible,
                values: Vec::new(),
                objective_value: f64::NAN,
                solver_iterations: iterations,
                max_violation: f64::NAN,
                gap: (f64::NAN, f64::NAN),
                reduced: false,
                detail,
            },
            _ => SolveResult {
                solver_iterations: iterations,
                detail,
                ..failure(String::new())
            },
        }
    }

    /// Sparse text dump: variable table, then the assembled conic data
    /// `min ½x'Px + q'x  s.t.  Ax + s = b, s ∈ K` as triplets.
    pub fn write_debug<W: Write>(&self, mut w: W) -> io::Result<()> {
        let asm = self.assemble();
        writeln!(w, "# variables")?;
        for v in &self.vars {
            match v.kind {
                VarKind::Matrix(m) => writeln!(w, "matrix {} dim {} columns {}..{}", v.name, m.dim, m.offset, m.offset + m.dim * m.dim)?,
                VarKind::Scalar(s) => writeln!(w, "scalar {} column {}", v.name, s.col)?,
            }
        }
        writeln!(w, "# columns {} rows {}", asm.n, asm.rows())?;
        writeln!(w, "# cones")?;
        for c in &asm.cones {
            writeln!(w, "{c:?}")?;
        }
        writeln!(w, "# P (row col value)")?;
        write_csc(&mut w, asm.p.as_ref().expect("assembled"))?;
        writeln!(w, "# q (index value)")?;
        for (i, v) in asm.q.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(w, "{i} {v:e}")?;
        }
        writeln!(w, "# A (row col value)")?;
        for ((i, j), v) in asm.a_i.iter().zip(&asm.a_j).zip(&asm.a_v) {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        writeln!(w, "# b (index value)")?;
        for (i, v) in asm.b.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(w, "{i} {v:e}")?;
        }
        Ok(())
    }
}

fn write_csc<W: Write>(w: &mut W, m: &CscMatrix<f64>) -> io::Result<()> {
    for col in 0..m.n {
        for k in m.colptr[col]..m.colptr[col + 1] {
            writeln!(w, "{} {} {:e}", m.rowval[k], col, m.nzval[k])?;
        }
    }
    Ok(())
}

fn failure(detail: String) -> SolveResult {
    SolveResult {
        status: SolveStatus::NumericalFailure,
        values: Vec::new(),
        objective_value: f64::NAN,
        solver_iterations: 0,
        max_violation: f64::NAN,
        gap: (f64::NAN, f64::NAN),
        reduced: false,
        detail,
    }
}

/// Parameter column and sign of entry `(row, col)` of the lifted matrix.
fn lifted_entry(n: usize, row: usize, col: usize) -> Option<(usize, f64)> {
    let (r, c) = (row.min(col), row.max(col));
    match (r < n, c < n) {
        (true, true) => Some((re_index(r, c), 1.0)),
        (false, false) => Some((re_index(r - n, c - n), 1.0)),
        _ => {
            // upper-right block holds -B[r][c - n]
            let j = c - n;
            if r < j {
                Some((im_index(r, j), -1.0))
            } else if r > j {
                Some((im_index(j, r), 1.0))
            } else {
                None
            }
        }
    }
}

fn constraint_exprs(c: &Constraint) -> Vec<&AffineExpr> {
    match c {
        Constraint::Equal(e) | Constraint::NonNegative(e) => vec![e],
        Constraint::Psd(_) => Vec::new(),
        Constraint::SecondOrder { bound, vector } => std::iter::once(bound).chain(vector).collect(),
        Constraint::LogSum { terms, rhs } => terms.iter().map(|(_, e)| e).chain(std::iter::once(rhs)).collect(),
    }
}

fn violation(c: &Constraint, x: &[f64]) -> f64 {
    match c {
        Constraint::Equal(e) => e.evaluate(x).abs() / (1.0 + e.constant.abs()),
        Constraint::NonNegative(e) => (-e.evaluate(x)).max(0.0) / (1.0 + e.constant.abs()),
        Constraint::Psd(var) => {
            let w = hermitian_from_params(var.dim, &x[var.offset..var.offset + var.dim * var.dim]);
            let tr: f64 = (0..var.dim).map(|i| w[(i, i)].re).sum();
            (-min_eigenvalue(&w)).max(0.0) / (1.0 + tr.abs())
        }
        Constraint::SecondOrder { bound, vector } => {
            let norm = vector.iter().map(|e| e.evaluate(x).powi(2)).sum::<f64>().sqrt();
            let t = bound.evaluate(x);
            (norm - t).max(0.0) / (1.0 + t.abs())
        }
        Constraint::LogSum { terms, rhs } => {
            let mut lhs = 0.0;
            for (w, e) in terms {
                let v = e.evaluate(x);
                if v <= 0.0 {
                    return f64::INFINITY;
                }
                lhs += w * v.ln();
            }
            let r = rhs.evaluate(x);
            (r - lhs).max(0.0) / (1.0 + r.abs())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ConeKind {
    Zero,
    Nonneg,
    Soc,
    SocCont,
    Exp,
    ExpCont,
    Psd(usize),
    PsdCont,
}

#[derive(Debug, Clone, Copy)]
enum Retry {
    Default,
    NoEquilibration,
    Refinement,
    ShortSteps,
}

#[derive(Default)]
struct Assembled {
    n: usize,
    n_user: usize,
    p: Option<CscMatrix<f64>>,
    q: Vec<f64>,
    a_i: Vec<usize>,
    a_j: Vec<usize>,
    a_v: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    pending_b: f64,
}

impl Assembled {
    fn rows(&self) -> usize {
        self.b.len()
    }

    fn push_entry(&mut self, col: usize, a: f64) {
        self.a_i.push(self.b.len());
        self.a_j.push(col);
        self.a_v.push(a);
    }

    fn b_const(&mut self, b: f64) {
        self.pending_b += b;
    }

    /// Stages the row `s = expr`.
    fn row_expr(&mut self, e: &AffineExpr) {
        self.row_expr_scaled(e, 1.0);
    }

    fn row_expr_scaled(&mut self, e: &AffineExpr, scale: f64) {
        for &(c, a) in &e.terms {
            self.push_entry(c, -scale * a);
        }
        self.pending_b += scale * e.constant;
    }

    fn close_row(&mut self, kind: ConeKind) {
        self.b.push(std::mem::take(&mut self.pending_b));
        use SupportedConeT::*;
        match (kind, self.cones.last_mut()) {
            (ConeKind::Zero, Some(ZeroConeT(k))) | (ConeKind::Nonneg, Some(NonnegativeConeT(k))) => *k += 1,
            (ConeKind::Zero, _) => self.cones.push(ZeroConeT(1)),
            (ConeKind::Nonneg, _) => self.cones.push(NonnegativeConeT(1)),
            (ConeKind::Soc, _) => self.cones.push(SecondOrderConeT(1)),
            (ConeKind::SocCont, Some(SecondOrderConeT(k))) => *k += 1,
            (ConeKind::Exp, _) => self.cones.push(ExponentialConeT()),
            (ConeKind::Psd(d), _) => self.cones.push(PSDTriangleConeT(d)),
            (ConeKind::ExpCont, _) | (ConeKind::PsdCont, _) => {}
            (ConeKind::SocCont, _) => unreachable!("second-order cone continuation without a head"),
        }
    }
}
