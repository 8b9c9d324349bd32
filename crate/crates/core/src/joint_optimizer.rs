//! Iterative solution of the semidefinite relaxation: successive convex
//! approximation (SCA) of the rate constraints, or fractional programming (FP)
//! with Lagrangian-dual and quadratic transforms.
//!
//! Rate constraints are posed in nats inside the programs; the bps/Hz
//! requirement is multiplied by `ln 2`.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::{round_robin, zf};
use crate::conic::{AffineExpr, ConicProgram, Constraint, ScalarVar, SolveResult, SolveStatus, Tolerances};
use crate::linalg::{quad_form, CMat};
use crate::metrics::{average_rate, gain_table, matching_error, BeamformingSolution};
use crate::model::{average_over_blocks, best_zeta, local_powers, polish, Budget, Layout, Model, Normalized};
use crate::scenario::{ChannelSet, Requirements, Scenario, SlotSchedule};
use crate::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sca,
    Fp,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sca => "sca",
            Method::Fp => "fp",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sca" => Ok(Method::Sca),
            "fp" => Ok(Method::Fp),
            _ => Err(Error::InvalidConfig(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPointSource {
    Zf,
    RoundRobin,
    UniformIsotropic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub method: Method,
    pub max_iterations: usize,
    pub convergence_rel_tol: f64,
    pub initial_point_source: InitialPointSource,
    /// Share one set of covariances among the symbols of a slot.
    pub slot_collapse: bool,
    pub tolerances: Tolerances,
    /// Iteration cap of the rate-feasibility phase.
    pub max_feasibility_iterations: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            method: Method::Sca,
            max_iterations: 50,
            convergence_rel_tol: 1e-3,
            initial_point_source: InitialPointSource::Zf,
            slot_collapse: true,
            tolerances: Tolerances::default(),
            max_feasibility_iterations: 50,
        }
    }
}

impl OptimizerSettings {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_rel_tol >= 0.0) {
            return Err(Error::InvalidConfig("convergence tolerance must be nonnegative".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Termination {
    Converged,
    #[default]
    MaxIterations,
    SubproblemFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::SubproblemFailure => "subproblem_failure",
        })
    }
}

/// Objective after the initial point (entry 0) and after every subproblem
/// solve, with the elapsed wall time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub objectives: Vec<f64>,
    pub seconds: Vec<f64>,
    pub termination: Termination,
    /// Subproblems spent restoring rate feasibility before the main loop.
    pub feasibility_iterations: usize,
}

impl IterationTrace {
    /// Number of main-loop subproblem solves.
    pub fn solves(&self) -> usize {
        self.objectives.len().saturating_sub(1)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objectives.last().copied()
    }

    /// Largest increase between consecutive entries.
    pub fn max_increase(&self) -> f64 {
        self.objectives
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "iteration,objective,seconds")?;
        for (i, (o, s)) in self.objectives.iter().zip(&self.seconds).enumerate() {
            writeln!(w, "{i},{o},{s}")?;
        }
        Ok(())
    }

    fn push(&mut self, objective: f64, start: &Instant) {
        self.objectives.push(objective);
        self.seconds.push(start.elapsed().as_secs_f64());
    }
}

/// Per-(subcarrier, symbol, IR) transform variables, indexed `(n L + l) K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FpAuxiliaries {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub k_ir: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl FpAuxiliaries {
    /// Closed-form optimum for `solution`: α from SINR, then β.
    pub fn at(solution: &BeamformingSolution, channels: &ChannelSet, noise: f64) -> Self {
        let alpha = fp_update_alpha(solution, channels, noise);
        let beta = fp_update_beta(solution, channels, &alpha, noise);
        Self {
            n_subcarriers: solution.n_subcarriers(),
            n_symbols: solution.n_symbols(),
            k_ir: solution.k_ir(),
            alpha,
            beta,
        }
    }

    pub fn index(&self, n: usize, l: usize, k: usize) -> usize {
        aux_index(n, l, k, self.n_symbols, self.k_ir)
    }

    pub fn alpha(&self, n: usize, l: usize, k: usize) -> f64 {
        self.alpha[self.index(n, l, k)]
    }

    pub fn beta(&self, n: usize, l: usize, k: usize) -> f64 {
        self.beta[self.index(n, l, k)]
    }
}

fn aux_index(n: usize, l: usize, k: usize, n_symbols: usize, k_ir: usize) -> usize {
    (n * n_symbols + l) * k_ir + k
}

/// Received powers `(h^H W_k h, Σ_{i≠k} h^H W_i h)` of IR `k`.
fn received_powers(solution: &BeamformingSolution, channels: &ChannelSet, n: usize, l: usize, k: usize) -> (f64, f64) {
    let h = channels.ir(n, k);
    let mut signal = 0.0;
    let mut other = 0.0;
    for s in 0..solution.n_streams() {
        let q = quad_form(solution.get(n, l, s), h).max(0.0);
        if s == k + 1 {
            signal = q;
        } else {
            other += q;
        }
    }
    (signal, other)
}

/// `α* = h^H W_k h / (Σ_{i≠k} h^H W_i h + σ_c^2)` for every index.
pub fn fp_update_alpha(solution: &BeamformingSolution, channels: &ChannelSet, noise: f64) -> Vec<f64> {
    let (nn, ll, kk) = (solution.n_subcarriers(), solution.n_symbols(), solution.k_ir());
    let mut alpha = vec![0.0; nn * ll * kk];
    for n in 0..nn {
        for l in 0..ll {
            for k in 0..kk {
                let (s, i) = received_powers(solution, channels, n, l, k);
                alpha[aux_index(n, l, k, ll, kk)] = s / (i + noise);
            }
        }
    }
    alpha
}

/// `β* = sqrt(1+α) sqrt(h^H W_k h) / (Σ_i h^H W_i h + σ_c^2)`, the sum
/// including stream `k`.
pub fn fp_update_beta(solution: &BeamformingSolution, channels: &ChannelSet, alpha: &[f64], noise: f64) -> Vec<f64> {
    let (nn, ll, kk) = (solution.n_subcarriers(), solution.n_symbols(), solution.k_ir());
    let mut beta = vec![0.0; nn * ll * kk];
    for n in 0..nn {
        for l in 0..ll {
            for k in 0..kk {
                let idx = aux_index(n, l, k, ll, kk);
                let (s, i) = received_powers(solution, channels, n, l, k);
                beta[idx] = (1.0 + alpha[idx]).sqrt() * s.sqrt() / (s + i + noise);
            }
        }
    }
    beta
}

/// Lagrangian-dual transform of one rate term in bits:
/// `log2(1+α) - α + (1+α) S / (S + I + σ^2)` / ln 2 scaling applied to the
/// whole natural-log expression.
pub fn fp_dual_term(alpha: f64, signal: f64, interference: f64, noise: f64) -> f64 {
    ((1.0 + alpha).ln() - alpha + (1.0 + alpha) * signal / (signal + interference + noise)) / LN2
}

/// Quadratic-transform rate term in bits:
/// `[ln(1+α) - α + 2 β sqrt((1+α) S) - β^2 (S + I + σ^2)] / ln 2`.
pub fn fp_quadratic_term(alpha: f64, beta: f64, signal: f64, interference: f64, noise: f64) -> f64 {
    ((1.0 + alpha).ln() - alpha + 2.0 * beta * ((1.0 + alpha) * signal).sqrt()
        - beta * beta * (signal + interference + noise))
        / LN2
}

/// FP surrogate of IR `k`'s average rate (bps/Hz) at `candidate`.
pub fn fp_rate_surrogate(
    candidate: &BeamformingSolution,
    channels: &ChannelSet,
    aux: &FpAuxiliaries,
    k: usize,
    noise: f64,
) -> f64 {
    let (nn, ll) = (candidate.n_subcarriers(), candidate.n_symbols());
    let mut acc = 0.0;
    for n in 0..nn {
        for l in 0..ll {
            let (s, i) = received_powers(candidate, channels, n, l, k);
            acc += fp_quadratic_term(aux.alpha(n, l, k), aux.beta(n, l, k), s, i, noise);
        }
    }
    acc / (nn * ll) as f64
}

/// Tangent of `log2(Σ_{i≠k} h^H W_i h + σ^2)` at `point`, evaluated at `candidate`.
pub fn sca_log_tangent(
    point: &BeamformingSolution,
    candidate: &BeamformingSolution,
    channels: &ChannelSet,
    n: usize,
    l: usize,
    k: usize,
    noise: f64,
) -> f64 {
    let (_, i0) = received_powers(point, channels, n, l, k);
    let (_, i) = received_powers(candidate, channels, n, l, k);
    let i0 = i0 + noise;
    (i0.ln() + (i + noise - i0) / i0) / LN2
}

/// SCA surrogate of IR `k`'s average rate (bps/Hz): exact concave part minus
/// the tangent of the interference log.
pub fn sca_rate_surrogate(
    point: &BeamformingSolution,
    candidate: &BeamformingSolution,
    channels: &ChannelSet,
    k: usize,
    noise: f64,
) -> f64 {
    let (nn, ll) = (candidate.n_subcarriers(), candidate.n_symbols());
    let mut acc = 0.0;
    for n in 0..nn {
        for l in 0..ll {
            let (s, i) = received_powers(candidate, channels, n, l, k);
            acc += (s + i + noise).log2() - sca_log_tangent(point, candidate, channels, n, l, k, noise);
        }
    }
    acc / (nn * ll) as f64
}

/// Adds the SCA rate constraint of IR `k`:
/// `(1/(LN)) Σ [ln(T) - ln I0 - (I - I0)/I0] >= ln2 * target`.
pub(crate) fn add_sca_rate(
    model: &mut Model,
    norm: &Normalized,
    point: &BeamformingSolution,
    channels: &ChannelSet,
    k: usize,
    target: AffineExpr,
    include: &dyn Fn(usize, usize) -> bool,
) {
    let nn = model.n_sub;
    let n_streams = model.n_streams;
    let mut terms = Vec::new();
    let mut rhs = target.scaled(LN2 * (model.layout.n_symbols * nn) as f64);
    for b in 0..model.layout.len() {
        let w = model.layout.weight(b);
        for n in (0..nn).filter(|&n| include(b, n)) {
            let h = &norm.ir[n][k];
            let mut total = model.received(b, n, h, 0..n_streams);
            total.add_constant(1.0);
            terms.push((w, total));
            let (_, i0) = local_powers(point, channels, norm.noise, &model.layout, b, n, k);
            let mut interference = model.received(b, n, h, (0..n_streams).filter(|&s| s != k + 1));
            interference.add_constant(1.0 - i0);
            rhs.add_constant(w * i0.ln());
            rhs.add_expr(&interference, w / i0);
        }
    }
    model.prog.add_constraint(Constraint::LogSum { terms, rhs });
}

/// Adds the FP rate constraint of IR `k` for block-constant auxiliaries.
fn add_fp_rate(model: &mut Model, norm: &Normalized, aux: &FpAuxiliaries, k: usize, target: f64) {
    let nn = model.n_sub;
    let n_streams = model.n_streams;
    let mut row = AffineExpr::constant(-target * LN2 * (model.layout.n_symbols * nn) as f64);
    for b in 0..model.layout.len() {
        let w = model.layout.weight(b);
        let l = model.layout.blocks[b].symbols[0];
        for n in 0..nn {
            let h = &norm.ir[n][k];
            let alpha = aux.alpha(n, l, k);
            // β in normalized units (noise power one)
            let beta = aux.beta(n, l, k) * norm.noise.sqrt();
            row.add_constant(w * ((1.0 + alpha).ln() - alpha - beta * beta));
            row.add_expr(&model.received(b, n, h, 0..n_streams), -w * beta * beta);
            if beta > 0.0 {
                let t = model.prog.add_scalar(format!("t[{b},{n},{k}]"));
                let signal = model.received(b, n, h, [k + 1]);
                let mut bound = signal.clone();
                bound.add_constant(1.0);
                let mut lower = signal;
                lower.add_constant(-1.0);
                // t^2 <= S  as  ||(2t, S - 1)|| <= S + 1
                model.prog.add_constraint(Constraint::SecondOrder {
                    bound,
                    vector: vec![AffineExpr::of(t).scaled(2.0), lower],
                });
                row.add_scalar(t, w * 2.0 * (1.0 + alpha).sqrt() * beta);
            }
        }
    }
    model.prog.add_constraint(Constraint::NonNegative(row));
}

fn layout_for(scenario: &Scenario, collapse: bool) -> Layout {
    Layout::for_settings(&scenario.schedule, collapse)
}

/// A built convex subproblem together with the map back to covariances.
pub struct Subproblem {
    model: Model,
    p0: f64,
    slack: Option<ScalarVar>,
}

impl Subproblem {
    pub fn program(&self) -> &ConicProgram {
        &self.model.prog
    }

    pub fn solve(&self, tol: &Tolerances) -> SolveResult {
        self.model.prog.solve(tol)
    }

    pub fn decode(&self, result: &SolveResult) -> BeamformingSolution {
        self.model.decode(result, self.p0)
    }

    /// Feasibility-phase slack in bps/Hz.
    pub fn slack(&self, result: &SolveResult) -> Option<f64> {
        self.slack.map(|s| result.scalar(s))
    }
}

fn base_model(scenario: &Scenario, norm: &Normalized, requirements: Requirements, collapse: bool) -> Model {
    let mut model = Model::full(layout_for(scenario, collapse), scenario, |_, _, _| true);
    model.add_power_equalities();
    model.add_er_constraints(norm, requirements.power);
    model
}

/// Error-minimization subproblem with rate constraints linearized at `point`.
pub fn sca_build_subproblem(
    scenario: &Scenario,
    channels: &ChannelSet,
    requirements: Requirements,
    point: &BeamformingSolution,
    slot_collapse: bool,
) -> Subproblem {
    let cfg = &scenario.config;
    let norm = Normalized::new(channels, cfg.tx_power, cfg.noise_power_comm);
    let mut model = base_model(scenario, &norm, requirements, slot_collapse);
    model.add_matching_objective(scenario);
    if requirements.rate > 0.0 {
        for k in 0..scenario.k_ir() {
            add_sca_rate(&mut model, &norm, point, channels, k, AffineExpr::constant(requirements.rate), &|_, _| true);
        }
    }
    Subproblem {
        model,
        p0: cfg.tx_power,
        slack: None,
    }
}

/// Error-minimization subproblem with quadratic-transform rate constraints.
pub fn fp_build_subproblem(
    scenario: &Scenario,
    channels: &ChannelSet,
    requirements: Requirements,
    aux: &FpAuxiliaries,
    slot_collapse: bool,
) -> Subproblem {
    let cfg = &scenario.config;
    let norm = Normalized::new(channels, cfg.tx_power, cfg.noise_power_comm);
    let mut model = base_model(scenario, &norm, requirements, slot_collapse);
    model.add_matching_objective(scenario);
    if requirements.rate > 0.0 {
        for k in 0..scenario.k_ir() {
            add_fp_rate(&mut model, &norm, aux, k, requirements.rate);
        }
    }
    Subproblem {
        model,
        p0: cfg.tx_power,
        slack: None,
    }
}

/// Maximizes the smallest SCA rate slack `s <= cap` (bps/Hz).
fn feasibility_subproblem(
    scenario: &Scenario,
    channels: &ChannelSet,
    requirements: Requirements,
    point: &BeamformingSolution,
    slot_collapse: bool,
    cap: f64,
) -> Subproblem {
    let cfg = &scenario.config;
    let norm = Normalized::new(channels, cfg.tx_power, cfg.noise_power_comm);
    let mut model = base_model(scenario, &norm, requirements, slot_collapse);
    let s = model.prog.add_scalar("slack");
    model.prog.add_linear(&AffineExpr::of(s), -1.0);
    model
        .prog
        .add_constraint(Constraint::le(AffineExpr::of(s), AffineExpr::constant(cap)));
    for k in 0..scenario.k_ir() {
        let target = AffineExpr::constant(requirements.rate).scalar(s, 1.0);
        add_sca_rate(&mut model, &norm, point, channels, k, target, &|_, _| true);
    }
    Subproblem {
        model,
        p0: cfg.tx_power,
        slack: Some(s),
    }
}

/// Starting point of the iterations.
pub fn initial_point(
    settings: &OptimizerSettings,
    scenario: &Scenario,
    channels: &ChannelSet,
    requirements: Requirements,
) -> Result<BeamformingSolution> {
    match settings.initial_point_source {
        InitialPointSource::UniformIsotropic => Ok(uniform_isotropic(scenario)),
        InitialPointSource::Zf => with_relaxed_fallback(requirements, |r| zf::zf_solve(scenario, channels, r)),
        InitialPointSource::RoundRobin => {
            with_relaxed_fallback(requirements, |r| round_robin::round_robin_solve(scenario, channels, r))
        }
    }
}

/// Retries without requirements when the baseline cannot meet them; the
/// feasibility phase then restores the rates.
fn with_relaxed_fallback(
    requirements: Requirements,
    solve: impl Fn(Requirements) -> Result<BeamformingSolution>,
) -> Result<BeamformingSolution> {
    match solve(requirements) {
        Err(e) if e.is_infeasible() => solve(Requirements::NONE),
        other => other,
    }
}

pub fn uniform_isotropic(scenario: &Scenario) -> BeamformingSolution {
    let cfg = &scenario.config;
    let mut sol = BeamformingSolution::zeros_for(scenario);
    let w = CMat::identity(cfg.n_tx, cfg.n_tx).scale(cfg.tx_power / (cfg.n_subcarriers * cfg.n_tx) as f64);
    for n in 0..cfg.n_subcarriers {
        for l in 0..cfg.n_symbols {
            sol.set(n, l, 0, w.clone());
        }
    }
    sol.zeta = best_zeta(&gain_table(&sol, scenario), scenario);
    sol
}

/// Replaces every covariance with its average over the symbols of its slot.
pub fn symmetrize_over_slot(solution: &BeamformingSolution, schedule: &SlotSchedule) -> BeamformingSolution {
    average_over_blocks(solution, &Layout::per_slot(schedule))
}

/// `log2(1 + P_0 max_n ||h_{n,k}||^2 / σ_c^2)` for every IR.
pub fn single_user_capacity(scenario: &Scenario, channels: &ChannelSet) -> Vec<f64> {
    let cfg = &scenario.config;
    (0..channels.k_ir())
        .map(|k| {
            let best = (0..channels.n_subcarriers())
                .map(|n| channels.ir(n, k).norm_squared())
                .fold(0.0, f64::max);
            (1.0 + cfg.tx_power * best / cfg.noise_power_comm).log2()
        })
        .collect()
}

pub(crate) fn check_requirements(requirements: Requirements) -> Result<()> {
    if !(requirements.rate >= 0.0) || !(requirements.power >= 0.0) {
        return Err(Error::Precondition(format!(
            "requirements must be nonnegative, got rate {} and power {}",
            requirements.rate, requirements.power
        )));
    }
    Ok(())
}

fn min_rate(solution: &BeamformingSolution, channels: &ChannelSet, noise: f64) -> f64 {
    (0..channels.k_ir())
        .map(|k| average_rate(solution, channels, k, noise))
        .fold(f64::INFINITY, f64::min)
}

/// Solves the relaxed problem; returns the converged covariances and the trace.
pub fn optimize(
    settings: &OptimizerSettings,
    scenario: &Scenario,
    channels: &ChannelSet,
    requirements: Requirements,
) -> Result<(BeamformingSolution, IterationTrace)> {
    settings.validate()?;
    check_requirements(requirements)?;
    let start = Instant::now();
    let noise = scenario.config.noise_power_comm;
    let capacity = single_user_capacity(scenario, channels);
    if let Some((k, c)) = capacity.iter().enumerate().find(|(_, &c)| requirements.rate > c) {
        return Err(Error::RequirementsInfeasible(format!(
            "rate requirement {} exceeds the single-user capacity {c:.4} of IR {}",
            requirements.rate,
            k + 1
        )));
    }

    let layout = layout_for(scenario, settings.slot_collapse);
    let mut point = average_over_blocks(&initial_point(settings, scenario, channels, requirements)?, &layout);
    let mut trace = IterationTrace::default();

    if requirements.rate > 0.0 && min_rate(&point, channels, noise) < requirements.rate {
        point = feasibility_phase(settings, scenario, channels, requirements, point, &mut trace)?;
    }
    point.zeta = best_zeta(&gain_table(&point, scenario), scenario);
    trace.push(matching_error(&point, scenario), &start);

    for iter in 0..settings.max_iterations {
        let sub = match settings.method {
            Method::Sca => sca_build_subproblem(scenario, channels, requirements, &point, settings.slot_collapse),
            Method::Fp => {
                let aux = FpAuxiliaries::at(&point, channels, noise);
                fp_build_subproblem(scenario, channels, requirements, &aux, settings.slot_collapse)
            }
        };
        let res = sub.solve(&settings.tolerances);
        match res.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible if iter == 0 => {
                return Err(Error::RequirementsInfeasible(format!(
                    "first {} subproblem is infeasible",
                    settings.method
                )));
            }
            _ => {
                trace.termination = Termination::SubproblemFailure;
                let source = Error::NumericalFailure(format!(
                    "{} subproblem {} ended with {} ({})",
                    settings.method,
                    iter + 1,
                    res.status,
                    res.detail
                ));
                return Err(Error::Optimizer {
                    source: Box::new(source),
                    trace,
                });
            }
        }
        let mut next = sub.decode(&res);
        if let Err(source) = polish(&mut next, scenario, Budget::PerSymbol) {
            trace.termination = Termination::SubproblemFailure;
            return Err(Error::Optimizer {
                source: Box::new(source),
                trace,
            });
        }
        let prev = *trace.objectives.last().expect("initial entry");
        let mut current = matching_error(&next, scenario);
        // Once it is a subproblem solution itself, the incumbent is feasible
        // for every later subproblem, so an inexact solve that lands above it
        // is beaten by simply keeping it.
        if iter > 0 && current > prev {
            current = prev;
        } else {
            point = next;
        }
        trace.push(current, &start);
        if (prev - current).abs() / prev.max(1e-12) < settings.convergence_rel_tol {
            trace.termination = Termination::Converged;
            break;
        }
    }
    Ok((point, trace))
}

/// SCA on the minimum rate slack until every IR meets its requirement.
fn feasibility_phase(
    settings: &OptimizerSettings,
    scenario: &Scenario,
    channels: &ChannelSet,
    requirements: Requirements,
    mut point: BeamformingSolution,
    trace: &mut IterationTrace,
) -> Result<BeamformingSolution> {
    let noise = scenario.config.noise_power_comm;
    let cap = 0.02 * requirements.rate.max(0.1);
    let mut last_slack = f64::NEG_INFINITY;
    for _ in 0..settings.max_feasibility_iterations {
        let sub = feasibility_subproblem(scenario, channels, requirements, &point, settings.slot_collapse, cap);
        let res = sub.solve(&settings.tolerances);
        trace.feasibility_iterations += 1;
        match res.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Err(Error::RequirementsInfeasible(
                    "energy-harvesting requirement cannot be met with the power budget".into(),
                ));
            }
            SolveStatus::NumericalFailure => {
                return Err(Error::NumericalFailure(format!("feasibility phase: {}", res.detail)));
            }
        }
        point = sub.decode(&res);
        if min_rate(&point, channels, noise) >= requirements.rate {
            return Ok(point);
        }
        let slack = sub.slack(&res).unwrap_or(f64::NEG_INFINITY);
        if slack < 0.0 && slack - last_slack < 1e-6 {
            break;
        }
        last_slack = slack;
    }
    Err(Error::RequirementsInfeasible(format!(
        "rate requirement {} bps/Hz not reached by the feasibility phase",
        requirements.rate
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, outer};
    use crate::metrics::sinr;
    use crate::scenario::{ScenarioConfig, UserGeometry};

    fn one_user_channels(h: crate::linalg::CVec, n: usize) -> ChannelSet {
        ChannelSet {
            ir: vec![vec![h.clone()]; n],
            er: vec![vec![h]; n],
        }
    }

    #[test]
    fn alpha_matches_sinr_and_simple_cases() {
        let s = Scenario::desk();
        let ch = s.channels().unwrap();
        let noise = s.config.noise_power_comm;
        let sol = uniform_isotropic(&s);
        let alpha = fp_update_alpha(&sol, &ch, noise);
        assert!(alpha.iter().all(|&a| a == 0.0));

        let h = crate::linalg::CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let chan = one_user_channels(h.clone(), 1);
        let mut one = BeamformingSolution::zeros(1, 1, 1, 2);
        let unit = outer(&h);
        one.set(0, 0, 1, unit.scale(2.0));
        let alpha = fp_update_alpha(&one, &chan, 2.0);
        assert!((alpha[0] - 1.0).abs() < 1e-15);
        assert!((alpha[0] - sinr(&one, &chan, 0, 0, 0, 2.0)).abs() < 1e-15);
        let beta = fp_update_beta(&one, &chan, &alpha, 2.0);
        // α = 1, S = σ^2 = 2: β = sqrt(2) sqrt(2) / 4
        assert!((beta[0] - 1.0 / (2f64.sqrt() * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn fp_terms_coincide_at_closed_form() {
        let (s, i, noise) = (3.0f64, 0.5, 1.0);
        let alpha = s / (i + noise);
        let beta = (1.0 + alpha).sqrt() * s.sqrt() / (s + i + noise);
        let rate = (1.0 + alpha).log2();
        assert!((fp_dual_term(alpha, s, i, noise) - rate).abs() < 1e-12);
        assert!((fp_quadratic_term(alpha, beta, s, i, noise) - rate).abs() < 1e-12);
        assert!(fp_quadratic_term(0.0, 0.0, s, i, noise).abs() < 1e-15);
    }

    #[test]
    fn sca_surrogate_touches_and_underestimates() {
        let s = Scenario::desk();
        let ch = s.channels().unwrap();
        let noise = s.config.noise_power_comm;
        let mut a = uniform_isotropic(&s);
        let h = ch.ir(0, 0).clone();
        let beam = outer(&h).scale(0.05 / h.norm_squared());
        for n in 0..4 {
            for l in 0..8 {
                a.set(n, l, 1, beam.clone());
                a.set(n, l, 2, beam.clone());
            }
        }
        let b = uniform_isotropic(&s).scaled(0.7);
        for k in 0..2 {
            let at = sca_rate_surrogate(&a, &a, &ch, k, noise);
            assert!((at - average_rate(&a, &ch, k, noise)).abs() < 1e-12);
            let other = sca_rate_surrogate(&a, &b, &ch, k, noise);
            assert!(other <= average_rate(&b, &ch, k, noise) + 1e-12);
        }
    }

    #[test]
    fn symmetrize_is_idempotent_on_slot_constant() {
        let s = Scenario::desk();
        let sol = uniform_isotropic(&s);
        assert_eq!(symmetrize_over_slot(&sol, &s.schedule), sol);
    }

    #[test]
    fn capacity_screen_rejects_large_rates() {
        let s = Scenario::desk();
        let ch = s.channels().unwrap();
        let cap = single_user_capacity(&s, &ch);
        let req = Requirements {
            rate: cap.iter().cloned().fold(0.0, f64::max) + 0.1,
            power: 0.0,
        };
        let err = optimize(&OptimizerSettings::default(), &s, &ch, req).unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn negative_requirement_is_rejected() {
        let s = Scenario::desk();
        let ch = s.channels().unwrap();
        let req = Requirements { rate: -1.0, power: 0.0 };
        assert!(matches!(
            optimize(&OptimizerSettings::default(), &s, &ch, req),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn unconstrained_single_slot_matches_sensing_only() {
        let cfg = ScenarioConfig {
            n_slots: 1,
            ..ScenarioConfig::desk()
        };
        let s = Scenario::new(cfg, UserGeometry::desk(), vec![0.0], std::f64::consts::PI).unwrap();
        let ch = s.channels().unwrap();
        let settings = OptimizerSettings {
            initial_point_source: InitialPointSource::UniformIsotropic,
            ..OptimizerSettings::default()
        };
        let (sol, _) = optimize(&settings, &s, &ch, Requirements::NONE).unwrap();
        let (sensing, _) = crate::baselines::time_switch::sensing_only(&s).unwrap();
        let a = matching_error(&sol, &s);
        let b = matching_error(&sensing, &s);
        assert!((a - b).abs() <= 1e-4 * b.max(1e-12) + 1e-12, "{a} vs {b}");
    }
}
