//! Executes an experiment: every (sweep point, seed, method) job on a bounded
//! worker pool, then writes the result tables in canonical order.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use iscap::baselines::round_robin::round_robin_solve;
use iscap::baselines::time_switch::{sensing_only, time_switch_solve};
use iscap::baselines::zf::zf_solve;
use iscap::joint_optimizer::{optimize, Method, OptimizerSettings, Termination};
use iscap::metrics::normalized_error;
use iscap::rank1::{extract, verify_equivalence};
use iscap::sensing::{self, EstimationReport, Target, TargetSet};
use iscap::{BeamformingSolution, ChannelSet, Error, PerformanceReport, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::plot;
use crate::spec::{ExperimentSpec, MethodKind, SensingSpec, SpecError};

/// Target draws use their own ChaCha stream so they never overlap the
/// channel draws of the same seed.
const TARGET_STREAM: u64 = 7;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the spec's output directory.
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    pub workers: Option<usize>,
    /// Overrides the spec's method list.
    pub methods: Option<Vec<MethodKind>>,
    pub sense: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot start the worker pool: {0}")]
    Pool(String),
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Spec(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// Iteration cap reached; the design is feasible but not converged.
    MaxIterations,
    Infeasible,
    NumericalFailure,
    DegenerateChannel,
    /// The solver returned, but a feasibility or equivalence check failed.
    ConstraintViolation,
    Error,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::MaxIterations => "max_iterations",
            Status::Infeasible => "infeasible",
            Status::NumericalFailure => "numerical_failure",
            Status::DegenerateChannel => "degenerate_channel",
            Status::ConstraintViolation => "constraint_violation",
            Status::Error => "error",
        }
    }

    /// The design satisfies every check and may enter aggregates.
    pub fn usable(self) -> bool {
        matches!(self, Status::Optimal | Status::MaxIterations)
    }

    fn of(err: &Error) -> Self {
        if err.is_infeasible() {
            Status::Infeasible
        } else if err.is_numerical_failure() {
            Status::NumericalFailure
        } else if matches!(err, Error::DegenerateChannel(_)) {
            Status::DegenerateChannel
        } else {
            Status::Error
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingOutcome {
    /// `ok`, or the failure kind.
    pub status: String,
    pub report: Option<EstimationReport>,
    pub expected: usize,
}

/// One (point, seed, method) result.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub point: usize,
    pub axis_value: Option<f64>,
    pub seed: u64,
    pub method: MethodKind,
    pub status: Status,
    pub detail: String,
    pub norm_error: Option<f64>,
    pub matching_error: Option<f64>,
    pub min_rate: Option<f64>,
    pub min_er_power: Option<f64>,
    /// Main-loop subproblem solves of the iterative methods.
    pub iterations: Option<usize>,
    pub seconds: f64,
    /// Per (slot, grid angle) gain of the design.
    pub slot_gains: Option<Vec<Vec<f64>>>,
    pub trace: Option<iscap::joint_optimizer::IterationTrace>,
    pub sensing: Option<SensingOutcome>,
}

impl Outcome {
    fn empty(point: usize, axis_value: Option<f64>, seed: u64, method: MethodKind) -> Self {
        Self {
            point,
            axis_value,
            seed,
            method,
            status: Status::Error,
            detail: String::new(),
            norm_error: None,
            matching_error: None,
            min_rate: None,
            min_er_power: None,
            iterations: None,
            seconds: 0.0,
            slot_gains: None,
            trace: None,
            sensing: None,
        }
    }

    fn fail(&mut self, status: Status, detail: impl ToString) {
        self.status = status;
        self.detail = detail.to_string();
    }

    fn record(&mut self, report: &PerformanceReport, scenario: &Scenario) {
        self.norm_error = report.normalized_error;
        self.matching_error = Some(report.matching_error);
        self.min_rate = Some(report.min_rate());
        self.min_er_power = Some(report.min_er_power());
        self.slot_gains = Some(report.slot_gains.clone());
        let req = scenario.config.requirements();
        if report.satisfies(req.rate, req.power, scenario.config.tx_power) {
            self.status = Status::Optimal;
        } else {
            self.fail(
                Status::ConstraintViolation,
                format!(
                    "min rate {} / min harvested power {} against requirements {} / {}",
                    report.min_rate(),
                    report.min_er_power(),
                    req.rate,
                    req.power
                ),
            );
        }
    }
}

/// Sensing-only optimum at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct Bound {
    pub point: usize,
    pub axis_value: Option<f64>,
    pub matching_error: Option<f64>,
    pub norm_error: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub outcomes: Vec<Outcome>,
    pub bounds: Vec<Bound>,
    pub warnings: Vec<String>,
}

impl RunSummary {
    pub fn numerical_failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status == Status::NumericalFailure).count()
    }

    /// 0 on success, 3 if any solve ended in a numerical failure.
    pub fn exit_code(&self) -> i32 {
        if self.numerical_failures() > 0 {
            3
        } else {
            0
        }
    }
}

/// Solves one job. `sense` additionally runs the estimation pipeline on the
/// design.
pub fn solve_job(
    spec: &ExperimentSpec,
    point: usize,
    axis_value: Option<f64>,
    seed: u64,
    method: MethodKind,
    sense: bool,
) -> Outcome {
    let start = Instant::now();
    let mut out = Outcome::empty(point, axis_value, seed, method);
    let scenario = match spec.scenario_at(axis_value, seed) {
        Ok(s) => s,
        Err(e) => {
            out.fail(Status::Error, e);
            return out;
        }
    };
    let design = match scenario.channels() {
        Ok(ch) => solve_method(&scenario, &ch, method, &mut out),
        Err(e) => {
            out.fail(Status::of(&e), e);
            None
        }
    };
    if sense {
        out.sensing = Some(match &design {
            Some(sol) if out.status.usable() => sense_design(sol, &scenario, &spec.sensing, seed),
            Some(_) | None => SensingOutcome {
                status: "skipped".into(),
                report: None,
                expected: 0,
            },
        });
    }
    out.seconds = start.elapsed().as_secs_f64();
    out
}

/// Fills the metrics of `out`; returns the design with rank-one information
/// beams when the method produces a single one.
fn solve_method(scenario: &Scenario, ch: &ChannelSet, method: MethodKind, out: &mut Outcome) -> Option<BeamformingSolution> {
    let req = scenario.config.requirements();
    let p0 = scenario.config.tx_power;
    match method {
        MethodKind::Sca | MethodKind::Fp => {
            let m = if method == MethodKind::Sca { Method::Sca } else { Method::Fp };
            match optimize(&OptimizerSettings::with_method(m), scenario, ch, req) {
                Ok((hat, trace)) => {
                    let bar = extract(&hat, ch, p0);
                    let equivalence = verify_equivalence(&hat, &bar, scenario, ch, req);
                    out.iterations = Some(trace.solves());
                    out.record(&PerformanceReport::evaluate(&bar, scenario, ch), scenario);
                    if !equivalence.passed() {
                        out.fail(Status::ConstraintViolation, equivalence);
                    } else if out.status == Status::Optimal && trace.termination == Termination::MaxIterations {
                        out.status = Status::MaxIterations;
                    }
                    out.trace = Some(trace);
                    Some(bar)
                }
                Err(e) => {
                    if let Error::Optimizer { trace, .. } = &e {
                        out.iterations = Some(trace.solves());
                        out.trace = Some(trace.clone());
                    }
                    out.fail(Status::of(&e), e);
                    None
                }
            }
        }
        MethodKind::Zf | MethodKind::RoundRobin => {
            let solved = if method == MethodKind::Zf {
                zf_solve(scenario, ch, req)
            } else {
                round_robin_solve(scenario, ch, req)
            };
            match solved {
                Ok(sol) => {
                    out.record(&PerformanceReport::evaluate(&sol, scenario, ch), scenario);
                    Some(sol)
                }
                Err(e) => {
                    out.fail(Status::of(&e), e);
                    None
                }
            }
        }
        MethodKind::TimeSwitching => {
            match time_switch_solve(scenario, ch, req) {
                Ok(d) => {
                    out.norm_error = d.normalized_error(scenario).ok();
                    out.matching_error = Some(d.matching_error);
                    out.min_rate = Some(d.min_rate());
                    out.min_er_power = Some(d.min_er_power());
                    // time-shared gain of the three phases
                    let mut gains: Option<Vec<Vec<f64>>> = None;
                    for (phase, t) in d.phases.iter().zip(d.t) {
                        let g = PerformanceReport::evaluate(phase, scenario, ch).slot_gains;
                        let acc = gains.get_or_insert_with(|| vec![vec![0.0; g[0].len()]; g.len()]);
                        for (row, grow) in acc.iter_mut().zip(&g) {
                            for (a, b) in row.iter_mut().zip(grow) {
                                *a += t * b;
                            }
                        }
                    }
                    out.slot_gains = gains;
                    if d.min_rate() >= req.rate - 1e-6 && d.min_er_power() >= req.power * (1.0 - 1e-6) {
                        out.status = Status::Optimal;
                    } else {
                        out.fail(Status::ConstraintViolation, "time allocation misses a requirement");
                    }
                }
                Err(e) => out.fail(Status::of(&e), e),
            }
            // no single waveform to sense with
            None
        }
    }
}

/// Targets for one seed: uniform angles, on-grid delay and Doppler indices,
/// two-way path-loss amplitudes.
pub fn draw_targets(scenario: &Scenario, sensing: &SensingSpec, seed: u64) -> Vec<Target> {
    let cfg = &scenario.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TARGET_STREAM);
    let half = cfg.n_symbols as i64 / 2;
    (0..sensing.targets)
        .map(|_| {
            let angle = rng.random_range(sensing.min_angle..sensing.max_angle);
            let i = rng.random_range(0..cfg.n_subcarriers);
            // Doppler index kept strictly inside the unambiguous range
            let j = rng.random_range(1 - half..half);
            Target {
                angle,
                amplitude: TargetSet::draw_amplitude(scenario, sensing.distance, &mut rng),
                delay: i as f64 / (cfg.n_subcarriers as f64 * cfg.subcarrier_spacing),
                doppler: j as f64 / (cfg.n_symbols as f64 * cfg.carrier_freq * cfg.symbol_duration),
            }
        })
        .collect()
}

fn sense_design(sol: &BeamformingSolution, scenario: &Scenario, spec: &SensingSpec, seed: u64) -> SensingOutcome {
    let outcome = TargetSet::new(draw_targets(scenario, spec, seed), scenario).and_then(|set| {
        let expected = set.slot_members.iter().map(Vec::len).sum();
        sensing::evaluate(sol, &set, scenario, seed).map(|r| (r, expected))
    });
    match outcome {
        Ok((report, expected)) => SensingOutcome {
            status: if report.mse.mismatch { "mismatch".into() } else { "ok".into() },
            report: Some(report),
            expected,
        },
        Err(e) => SensingOutcome {
            status: match e {
                Error::EstimationDegenerate(_) => "estimation_degenerate".into(),
                Error::Precondition(_) => "precondition".into(),
                _ => "error".into(),
            },
            report: None,
            expected: 0,
        },
    }
}

fn solve_bound(spec: &ExperimentSpec, point: usize, axis_value: Option<f64>) -> Bound {
    let mut bound = Bound {
        point,
        axis_value,
        matching_error: None,
        norm_error: None,
        status: "optimal".into(),
    };
    // independent of the channel draw
    let result = spec
        .scenario_at(axis_value, spec.seed)
        .map_err(Error::InvalidConfig)
        .and_then(|s| {
            let (sol, e) = sensing_only(&s)?;
            Ok((e, normalized_error(e, sol.zeta, s.config.n_symbols, s.grid.len()).ok()))
        });
    match result {
        Ok((e, norm)) => {
            bound.matching_error = Some(e);
            bound.norm_error = norm;
        }
        Err(e) => bound.status = Status::of(&e).name().into(),
    }
    bound
}

enum Task {
    Job(usize, Option<f64>, u64, MethodKind),
    Bound(usize, Option<f64>),
}

enum Done {
    Job(Box<Outcome>),
    Bound(Bound),
}

/// Solves every job of `spec` without writing anything. Results come back
/// ordered by point, seed and method whatever the completion order.
pub fn execute(spec: &ExperimentSpec, opts: &RunOptions) -> Result<(Vec<Outcome>, Vec<Bound>), RunError> {
    let methods = opts.methods.clone().unwrap_or_else(|| spec.methods.clone());
    let mut tasks = Vec::new();
    for (p, value) in spec.points().into_iter().enumerate() {
        tasks.push(Task::Bound(p, value));
        for t in 0..spec.trials {
            for &m in &methods {
                tasks.push(Task::Job(p, value, spec.trial_seed(t), m));
            }
        }
    }
    let workers = opts
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let total = tasks.len();
    let finished = AtomicUsize::new(0);
    let done: Vec<Done> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let d = match *task {
                    Task::Job(p, v, seed, m) => Done::Job(Box::new(solve_job(spec, p, v, seed, m, opts.sense))),
                    Task::Bound(p, v) => Done::Bound(solve_bound(spec, p, v)),
                };
                let k = finished.fetch_add(1, Ordering::Relaxed) + 1;
                if let Done::Job(o) = &d {
                    eprintln!(
                        "[{k}/{total}] {}={} seed {} {}: {} ({:.1} s)",
                        spec.axis_name(),
                        fmt_opt(o.axis_value),
                        o.seed,
                        o.method,
                        o.status,
                        o.seconds
                    );
                }
                d
            })
            .collect()
    });
    let mut outcomes = Vec::new();
    let mut bounds = Vec::new();
    for d in done {
        match d {
            Done::Job(o) => outcomes.push(*o),
            Done::Bound(b) => bounds.push(b),
        }
    }
    Ok((outcomes, bounds))
}

/// Loads, solves and writes one experiment.
pub fn run(spec_path: &Path, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let spec = ExperimentSpec::from_file(spec_path)?;
    run_spec(&spec, opts)
}

pub fn run_spec(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let out_dir = opts.out.clone().unwrap_or_else(|| spec.outputs.clone());
    let (outcomes, bounds) = execute(spec, opts)?;
    let warnings = write_outputs(spec, &out_dir, &outcomes, &bounds, opts.sense)?;
    Ok(RunSummary {
        out_dir,
        outcomes,
        bounds,
        warnings,
    })
}

/// Empty for `None`, shortest round-trip form otherwise.
pub(crate) fn fmt_opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub(crate) fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), RunError> {
    let io_err = |source| RunError::Io {
        path: path.to_owned(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err)
}

fn write_outputs(
    spec: &ExperimentSpec,
    dir: &Path,
    outcomes: &[Outcome],
    bounds: &[Bound],
    sense: bool,
) -> Result<Vec<String>, RunError> {
    let axis = spec.axis_name();
    let first_seed = spec.trial_seed(0);

    write_file(&dir.join("results.csv"), |w| {
        writeln!(w, "axis,axis_value,seed,method,norm_error,matching_error,min_rate,min_er_power,status,iterations")?;
        for o in outcomes {
            writeln!(
                w,
                "{axis},{},{},{},{},{},{},{},{},{}",
                fmt_opt(o.axis_value),
                o.seed,
                o.method,
                fmt_opt(o.norm_error),
                fmt_opt(o.matching_error),
                fmt_opt(o.min_rate),
                fmt_opt(o.min_er_power),
                o.status,
                fmt_opt(o.iterations)
            )?;
        }
        Ok(())
    })?;

    write_file(&dir.join("failures.csv"), |w| {
        writeln!(w, "axis,axis_value,seed,method,status,detail")?;
        for o in outcomes.iter().filter(|o| !o.detail.is_empty()) {
            writeln!(
                w,
                "{axis},{},{},{},{},{}",
                fmt_opt(o.axis_value),
                o.seed,
                o.method,
                o.status,
                csv_quote(&o.detail)
            )?;
        }
        Ok(())
    })?;

    write_file(&dir.join("bounds.csv"), |w| {
        writeln!(w, "axis,axis_value,matching_error,norm_error,status")?;
        for b in bounds {
            writeln!(
                w,
                "{axis},{},{},{},{}",
                fmt_opt(b.axis_value),
                fmt_opt(b.matching_error),
                fmt_opt(b.norm_error),
                b.status
            )?;
        }
        Ok(())
    })?;

    // wall-clock data lives apart so the tables above are reproducible
    write_file(&dir.join("timing").join("results.csv"), |w| {
        writeln!(w, "axis,axis_value,seed,method,status,iterations,seconds")?;
        for o in outcomes {
            writeln!(
                w,
                "{axis},{},{},{},{},{},{}",
                fmt_opt(o.axis_value),
                o.seed,
                o.method,
                o.status,
                fmt_opt(o.iterations),
                o.seconds
            )?;
        }
        Ok(())
    })?;
    for o in outcomes {
        if let Some(trace) = &o.trace {
            let name = format!("point{}_seed{}_{}.csv", o.point, o.seed, o.method);
            write_file(&dir.join("timing").join("traces").join(name), |w| trace.write_csv(w))?;
        }
    }

    for o in outcomes.iter().filter(|o| o.seed == first_seed) {
        let Some(gains) = &o.slot_gains else { continue };
        let scenario = spec.scenario_at(o.axis_value, o.seed).expect("validated at load");
        let name = format!("point{}_{}.csv", o.point, o.method);
        write_file(&dir.join("beampattern").join(name), |w| {
            writeln!(w, "slot,grid_angle_deg,gain,desired")?;
            for (q, row) in gains.iter().enumerate() {
                for (m, g) in row.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        q + 1,
                        scenario.grid.angles[m].to_degrees(),
                        g,
                        scenario.desired.gains[q][m]
                    )?;
                }
            }
            Ok(())
        })?;
    }

    if sense {
        write_file(&dir.join("sensing.csv"), |w| {
            writeln!(w, "axis,axis_value,seed,method,angle_mse_rad2,matched,expected,status")?;
            for o in outcomes {
                let Some(s) = &o.sensing else { continue };
                let (mse, matched) = match &s.report {
                    Some(r) => (Some(r.mse.mse), Some(r.estimates.len())),
                    None => (None, None),
                };
                writeln!(
                    w,
                    "{axis},{},{},{},{},{},{},{}",
                    fmt_opt(o.axis_value),
                    o.seed,
                    o.method,
                    fmt_opt(mse),
                    fmt_opt(matched),
                    s.expected,
                    s.status
                )?;
            }
            Ok(())
        })?;
        for o in outcomes.iter().filter(|o| o.seed == first_seed) {
            if let Some(report) = o.sensing.as_ref().and_then(|s| s.report.as_ref()) {
                let name = format!("point{}_{}.csv", o.point, o.method);
                write_file(&dir.join("sensing").join(name), |w| report.write_csv(w))?;
            }
        }
    }

    plot::emit_plot_data(spec, dir, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_the_error_kind() {
        assert_eq!(Status::of(&Error::RequirementsInfeasible("x".into())), Status::Infeasible);
        assert_eq!(Status::of(&Error::NumericalFailure("x".into())), Status::NumericalFailure);
        assert_eq!(Status::of(&Error::DegenerateChannel("x".into())), Status::DegenerateChannel);
        assert_eq!(Status::of(&Error::Index("x".into())), Status::Error);
        assert!(!Status::ConstraintViolation.usable());
    }

    #[test]
    fn csv_fields_are_quoted_when_needed() {
        assert_eq!(csv_quote("plain"), "plain");
        assert_eq!(csv_quote("a, \"b\""), "\"a, \"\"b\"\"\"");
        assert_eq!(fmt_opt(Some(240.0)), "240");
        assert_eq!(fmt_opt::<f64>(None), "");
    }

    #[test]
    fn targets_are_reproducible_and_in_range() {
        let s = Scenario::desk();
        let spec = SensingSpec::default();
        let a = draw_targets(&s, &spec, 4);
        assert_eq!(a, draw_targets(&s, &spec, 4));
        assert_ne!(a, draw_targets(&s, &spec, 5));
        assert_eq!(a.len(), 8);
        assert!(a.iter().all(|t| t.angle.abs() <= 60f64.to_radians()));
        TargetSet::new(a, &s).unwrap();
    }
}
