//! Round-robin scheduling: one IR per (subcarrier, symbol), equal power per
//! subcarrier, and no dedicated sensing stream.

use crate::baselines::require_optimal;
use crate::conic::{AffineExpr, Constraint, SolveStatus, Tolerances};
use crate::joint_optimizer::{add_sca_rate, check_requirements};
use crate::linalg::trace_re;
use crate::metrics::{matching_error, BeamformingSolution};
use crate::model::{polish, Budget, Layout, Model, Normalized};
use crate::rank1;
use crate::scenario::{ChannelSet, Requirements, Scenario};
use crate::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// IR scheduled on subcarrier `n` (0-based) at symbol `l` (1-based): the
/// unique `k` in `1..=K` with `k ≡ n + (l-1) N (mod K)`. The result is 1-based.
pub fn round_robin_index(n: usize, l: usize, n_subcarriers: usize, k_ir: usize) -> usize {
    assert!(l >= 1 && k_ir >= 1, "symbol index is 1-based and K must be positive");
    let r = (n + (l - 1) * n_subcarriers) % k_ir;
    if r == 0 {
        k_ir
    } else {
        r
    }
}

/// Symbols with the same slot and the same schedule share variables.
fn layout(scenario: &Scenario) -> Layout {
    let n_sub = scenario.config.n_subcarriers;
    let k_ir = scenario.k_ir();
    Layout::grouped(&scenario.schedule, |l| (l * n_sub) % k_ir)
}

/// 0-based IR served on subcarrier `n` of block `b`.
fn scheduled(layout: &Layout, n_sub: usize, k_ir: usize, b: usize, n: usize) -> usize {
    round_robin_index(n, layout.blocks[b].symbols[0] + 1, n_sub, k_ir) - 1
}

fn build(scenario: &Scenario, channels: &ChannelSet, requirements: Requirements, free_sensing: bool) -> (Model, Normalized) {
    let cfg = &scenario.config;
    let (n_sub, k_ir) = (cfg.n_subcarriers, scenario.k_ir());
    let layout = layout(scenario);
    let sched: Vec<Vec<usize>> = (0..layout.len())
        .map(|b| (0..n_sub).map(|n| scheduled(&layout, n_sub, k_ir, b, n)).collect())
        .collect();
    let mut model = Model::full(layout, scenario, |b, n, k| {
        if k == 0 {
            free_sensing
        } else {
            sched[b][n] == k - 1
        }
    });
    let norm = Normalized::new(channels, cfg.tx_power, cfg.noise_power_comm);
    model.add_subcarrier_power_equalities();
    model.add_er_constraints(&norm, requirements.power);
    (model, norm)
}

fn served(scenario: &Scenario, model: &Model, k: usize) -> impl Fn(usize, usize) -> bool {
    let n_sub = scenario.config.n_subcarriers;
    let k_ir = scenario.k_ir();
    let layout = model.layout.clone();
    move |b, n| scheduled(&layout, n_sub, k_ir, b, n) == k
}

/// Solves the relaxed scheduling problem with the sensing stream fixed to
/// zero and returns rank-one information beams.
pub fn round_robin_solve(
    scenario: &Scenario,
    channels: &ChannelSet,
    requirements: Requirements,
) -> Result<BeamformingSolution> {
    let relaxed = round_robin_relaxed(scenario, channels, requirements)?;
    Ok(rank1::extract(&relaxed, channels, scenario.config.tx_power))
}

/// Relaxed optimum before rank-one extraction.
pub fn round_robin_relaxed(
    scenario: &Scenario,
    channels: &ChannelSet,
    requirements: Requirements,
) -> Result<BeamformingSolution> {
    check_requirements(requirements)?;
    let cfg = &scenario.config;
    let (mut model, norm) = build(scenario, channels, requirements, false);
    model.add_matching_objective(scenario);
    if requirements.rate > 0.0 {
        let total = (cfg.n_symbols * cfg.n_subcarriers) as f64;
        for k in 0..scenario.k_ir() {
            let include = served(scenario, &model, k);
            let mut terms = Vec::new();
            for b in 0..model.layout.len() {
                for n in (0..cfg.n_subcarriers).filter(|&n| include(b, n)) {
                    let mut snr = model.received(b, n, &norm.ir[n][k], [k + 1]);
                    snr.add_constant(1.0);
                    terms.push((model.layout.weight(b), snr));
                }
            }
            if terms.is_empty() {
                return Err(Error::RequirementsInfeasible(format!("IR {} is never scheduled", k + 1)));
            }
            model.prog.add_constraint(Constraint::LogSum {
                terms,
                rhs: AffineExpr::constant(requirements.rate * LN2 * total),
            });
        }
    }
    let res = model.prog.solve(&Tolerances::default());
    require_optimal(&res, "round-robin scheduling")?;
    let mut sol = model.decode(&res, cfg.tx_power);
    polish(&mut sol, scenario, Budget::PerSubcarrier)?;
    Ok(sol)
}

/// Outcome of re-solving the scheduling problem with the sensing stream free.
#[derive(Debug, Clone, PartialEq)]
pub struct TightnessProbe {
    /// Matching error with the sensing stream fixed to zero.
    pub fixed_objective: f64,
    /// Matching error reached by SCA with the sensing stream free.
    pub free_objective: f64,
    /// Smallest attainable `max_{n,l} tr(W_{n,l,0}) / P_0` among solutions
    /// whose error does not exceed the free optimum.
    pub max_sensing_trace: f64,
    pub sca_iterations: usize,
}

/// Validation mode: starting from the fixed optimum, runs SCA on the
/// problem with a free sensing stream, then minimizes the sensing-stream
/// power among solutions at least as good.
pub fn tightness_probe(scenario: &Scenario, channels: &ChannelSet, requirements: Requirements) -> Result<TightnessProbe> {
    let cfg = &scenario.config;
    let tol = Tolerances::tight();
    let fixed = round_robin_relaxed(scenario, channels, requirements)?;
    let fixed_objective = matching_error(&fixed, scenario);
    let mut point = fixed.clone();
    let mut free_objective = fixed_objective;
    let mut sca_iterations = 0;

    let with_rates = |model: &mut Model, norm: &Normalized, point: &BeamformingSolution| {
        if requirements.rate > 0.0 {
            for k in 0..scenario.k_ir() {
                let include = served(scenario, model, k);
                add_sca_rate(model, norm, point, channels, k, AffineExpr::constant(requirements.rate), &include);
            }
        }
    };

    for _ in 0..30 {
        let (mut model, norm) = build(scenario, channels, requirements, true);
        model.add_matching_objective(scenario);
        with_rates(&mut model, &norm, &point);
        let res = model.prog.solve(&tol);
        if res.status != SolveStatus::Optimal {
            break;
        }
        sca_iterations += 1;
        point = model.decode(&res, cfg.tx_power);
        polish(&mut point, scenario, Budget::PerSubcarrier)?;
        let e = matching_error(&point, scenario);
        let done = (free_objective - e).abs() <= 1e-9 * free_objective.max(1e-12);
        free_objective = e;
        if done {
            break;
        }
    }

    // lexicographic step: least sensing power with error at most the free optimum
    let (mut model, norm) = build(scenario, channels, requirements, true);
    let (_, residuals) = model.matching_residuals(scenario);
    let bound = (free_objective.min(fixed_objective) * (1.0 + 1e-6)).sqrt() / cfg.tx_power;
    model.prog.add_constraint(Constraint::SecondOrder {
        bound: AffineExpr::constant(bound),
        vector: residuals,
    });
    // linearized at the fixed optimum, which is then itself feasible
    with_rates(&mut model, &norm, &fixed);
    let mut power = AffineExpr::new();
    for b in 0..model.layout.len() {
        for n in 0..cfg.n_subcarriers {
            model.stream(b, n, 0).add_trace(&mut power, model.layout.weight(b));
        }
    }
    model.prog.add_linear(&power, 1.0);
    let res = model.prog.solve(&tol);
    require_optimal(&res, "sensing-power minimization")?;
    let sol = model.decode(&res, cfg.tx_power);
    let mut max_sensing_trace: f64 = 0.0;
    for n in 0..cfg.n_subcarriers {
        for l in 0..cfg.n_symbols {
            max_sensing_trace = max_sensing_trace.max(trace_re(sol.get(n, l, 0)) / cfg.tx_power);
        }
    }
    Ok(TightnessProbe {
        fixed_objective,
        free_objective,
        max_sensing_trace,
        sca_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_examples() {
        assert_eq!(round_robin_index(0, 1, 16, 4), 4);
        assert_eq!(round_robin_index(1, 1, 16, 4), 1);
        for n in 0..8 {
            for l in 1..5 {
                assert_eq!(round_robin_index(n, l, 8, 1), 1);
            }
        }
    }

    #[test]
    fn balanced_when_k_divides_n() {
        let (n_sub, k_ir) = (8, 4);
        for l in 1..=6 {
            let mut counts = vec![0; k_ir];
            for n in 0..n_sub {
                counts[round_robin_index(n, l, n_sub, k_ir) - 1] += 1;
            }
            assert!(counts.iter().all(|&c| c == n_sub / k_ir));
        }
    }
}
