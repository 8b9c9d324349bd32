//! Time switching between a sensing-only, a communication-only and a
//! powering-only phase, followed by the optimal split of the frame.

use crate::baselines::require_optimal;
use crate::conic::{AffineExpr, ConicProgram, Constraint, Tolerances};
use crate::joint_optimizer::{add_sca_rate, check_requirements};
use crate::linalg::outer;
use crate::metrics::{average_rate, gain_table, harvested_power, matching_error, BeamformingSolution};
use crate::model::{polish, Budget, Layout, Model, Normalized};
use crate::scenario::{ChannelSet, Requirements, Scenario};
use crate::{Error, Result};

/// Gains, rates and harvested powers achieved by one phase design.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMetrics {
    /// Beampattern gain `[l][m]`.
    pub gains: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    pub er_powers: Vec<f64>,
}

impl PhaseMetrics {
    pub fn evaluate(solution: &BeamformingSolution, scenario: &Scenario, channels: &ChannelSet) -> Self {
        let noise = scenario.config.noise_power_comm;
        Self {
            gains: gain_table(solution, scenario),
            rates: (0..channels.k_ir())
                .map(|k| average_rate(solution, channels, k, noise))
                .collect(),
            er_powers: (0..channels.k_er())
                .map(|i| harvested_power(solution, channels, i))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSwitchDesign {
    /// Sensing, communication and powering phase designs.
    pub phases: [BeamformingSolution; 3],
    pub metrics: [PhaseMetrics; 3],
    /// Time portions `t_1, t_2, t_3`.
    pub t: [f64; 3],
    pub zeta: f64,
    /// Matching error of the time-mixed gain table.
    pub matching_error: f64,
    /// Matching error of the sensing-only phase alone.
    pub sensing_only_error: f64,
}

impl TimeSwitchDesign {
    pub fn normalized_error(&self, scenario: &Scenario) -> Result<f64> {
        crate::metrics::normalized_error(
            self.matching_error,
            self.zeta,
            scenario.config.n_symbols,
            scenario.grid.len(),
        )
    }

    /// `t_2 R_k^{(2)}` for every IR.
    pub fn rates(&self) -> Vec<f64> {
        self.metrics[1].rates.iter().map(|r| self.t[1] * r).collect()
    }

    /// `Σ_j t_j P_i^{(j)}` for every ER.
    pub fn er_powers(&self) -> Vec<f64> {
        (0..self.metrics[0].er_powers.len())
            .map(|i| (0..3).map(|j| self.t[j] * self.metrics[j].er_powers[i]).sum())
            .collect()
    }

    pub fn min_rate(&self) -> f64 {
        self.rates().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn min_er_power(&self) -> f64 {
        self.er_powers().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Sensing-only design: minimum matching error with the information streams
/// off. Returns the solution and its matching error.
pub fn sensing_only(scenario: &Scenario) -> Result<(BeamformingSolution, f64)> {
    let mut model = Model::full(Layout::per_slot(&scenario.schedule), scenario, |_, _, k| k == 0);
    model.add_matching_objective(scenario);
    model.add_power_equalities();
    let res = model.prog.solve(&Tolerances::tight());
    require_optimal(&res, "sensing-only design")?;
    let mut sol = model.decode(&res, scenario.config.tx_power);
    polish(&mut sol, scenario, Budget::PerSymbol)?;
    let error = matching_error(&sol, scenario);
    Ok((sol, error))
}

/// Communication-only design: max-min rate over information streams with the
/// sensing stream off, by SCA on the epigraph form.
pub fn max_min_rate(scenario: &Scenario, channels: &ChannelSet) -> Result<BeamformingSolution> {
    let cfg = &scenario.config;
    let noise = cfg.noise_power_comm;
    let norm = Normalized::new(channels, cfg.tx_power, noise);
    let k_ir = scenario.k_ir();

    // matched-filter start with equal powers
    let mut point = BeamformingSolution::zeros_for(scenario);
    for n in 0..cfg.n_subcarriers {
        for k in 0..k_ir {
            let h = channels.ir(n, k);
            let w = outer(h).scale(cfg.tx_power / (cfg.n_subcarriers * k_ir) as f64 / h.norm_squared());
            for l in 0..cfg.n_symbols {
                point.set(n, l, k + 1, w.clone());
            }
        }
    }
    let min_rate = |s: &BeamformingSolution| {
        (0..k_ir)
            .map(|k| average_rate(s, channels, k, noise))
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = min_rate(&point);
    for _ in 0..50 {
        let mut model = Model::full(Layout::single(cfg.n_symbols), scenario, |_, _, k| k > 0);
        model.add_power_equalities();
        let s = model.prog.add_scalar("rate");
        model.prog.add_linear(&AffineExpr::of(s), -1.0);
        for k in 0..k_ir {
            add_sca_rate(&mut model, &norm, &point, channels, k, AffineExpr::of(s), &|_, _| true);
        }
        let res = model.prog.solve(&Tolerances::default());
        require_optimal(&res, "max-min rate design")?;
        point = model.decode(&res, cfg.tx_power);
        polish(&mut point, scenario, Budget::PerSymbol)?;
        let r = min_rate(&point);
        let done = (r - best).abs() <= 1e-6 * best.abs().max(1e-12);
        best = r;
        if done {
            break;
        }
    }
    Ok(point)
}

/// Powering-only design: max-min harvested power with the sensing/energy
/// stream only.
pub fn max_min_power(scenario: &Scenario, channels: &ChannelSet) -> Result<BeamformingSolution> {
    let cfg = &scenario.config;
    let norm = Normalized::new(channels, cfg.tx_power, cfg.noise_power_comm);
    let mut model = Model::full(Layout::single(cfg.n_symbols), scenario, |_, _, k| k == 0);
    model.add_power_equalities();
    let u = model.prog.add_scalar("power");
    model.prog.add_linear(&AffineExpr::of(u), -1.0);
    let exprs: Vec<(AffineExpr, f64)> = (0..channels.k_er()).map(|i| model.er_expr(&norm, i)).collect();
    let common = exprs.iter().map(|(_, s)| *s).fold(0.0, f64::max);
    for (e, scale) in exprs {
        // e is P_i / (P_0 scale); bring every ER to the common scale
        let e = e.scaled(scale / common);
        model.prog.add_constraint(Constraint::ge(e, AffineExpr::of(u)));
    }
    let res = model.prog.solve(&Tolerances::default());
    require_optimal(&res, "max-min harvested power design")?;
    let mut sol = model.decode(&res, cfg.tx_power);
    polish(&mut sol, scenario, Budget::PerSymbol)?;
    Ok(sol)
}

/// Optimal time split `(t, ζ, error)` for fixed phase metrics.
pub fn allocate_time(
    scenario: &Scenario,
    metrics: &[PhaseMetrics; 3],
    requirements: Requirements,
) -> Result<([f64; 3], f64, f64)> {
    check_requirements(requirements)?;
    let p0 = scenario.config.tx_power;
    if let Some(r) = metrics[1].rates.iter().find(|&&r| requirements.rate > r) {
        return Err(Error::RequirementsInfeasible(format!(
            "rate requirement {} exceeds the communication-phase rate {r:.4}",
            requirements.rate
        )));
    }
    let mut prog = ConicProgram::new();
    let t: Vec<_> = (0..3).map(|j| prog.add_scalar(format!("t{}", j + 1))).collect();
    let zeta = prog.add_scalar("zeta");
    for &v in t.iter().chain([&zeta]) {
        prog.add_constraint(Constraint::NonNegative(AffineExpr::of(v)));
    }
    let mut sum = AffineExpr::constant(-1.0);
    for &v in &t {
        sum.add_scalar(v, 1.0);
    }
    prog.add_constraint(Constraint::Equal(sum));

    for (l, row) in metrics[0].gains.iter().enumerate() {
        let desired = scenario.desired.slot(scenario.schedule.slot_of(l));
        for m in 0..row.len() {
            let mut e = AffineExpr::new();
            for j in 0..3 {
                e.add_scalar(t[j], metrics[j].gains[l][m] / p0);
            }
            e.add_scalar(zeta, -desired[m]);
            prog.add_square(e);
        }
    }
    if requirements.rate > 0.0 {
        for &r in &metrics[1].rates {
            let e = AffineExpr::constant(-1.0).scalar(t[1], r / requirements.rate);
            prog.add_constraint(Constraint::NonNegative(e));
        }
    }
    if requirements.power > 0.0 {
        for i in 0..metrics[0].er_powers.len() {
            let mut e = AffineExpr::constant(-1.0);
            for j in 0..3 {
                e.add_scalar(t[j], metrics[j].er_powers[i] / requirements.power);
            }
            prog.add_constraint(Constraint::NonNegative(e));
        }
    }
    let tol = Tolerances::tight();
    let res = prog.solve(&tol);
    require_optimal(&res, "time allocation")?;
    let ts = [res.scalar(t[0]), res.scalar(t[1]), res.scalar(t[2])];
    Ok((ts, res.scalar(zeta) * p0, res.objective_value * p0 * p0))
}

pub fn time_switch_solve(scenario: &Scenario, channels: &ChannelSet, requirements: Requirements) -> Result<TimeSwitchDesign> {
    check_requirements(requirements)?;
    let (sensing, sensing_only_error) = sensing_only(scenario)?;
    let comm = max_min_rate(scenario, channels)?;
    let power = max_min_power(scenario, channels)?;
    let metrics = [
        PhaseMetrics::evaluate(&sensing, scenario, channels),
        PhaseMetrics::evaluate(&comm, scenario, channels),
        PhaseMetrics::evaluate(&power, scenario, channels),
    ];
    let (t, zeta, matching_error) = allocate_time(scenario, &metrics, requirements)?;
    Ok(TimeSwitchDesign {
        phases: [sensing, comm, power],
        metrics,
        t,
        zeta,
        matching_error,
        sensing_only_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics_with(gains: Vec<Vec<f64>>, rate: f64, power: f64) -> PhaseMetrics {
        PhaseMetrics {
            gains,
            rates: vec![rate],
            er_powers: vec![power],
        }
    }

    #[test]
    fn tight_rate_forces_communication_phase() {
        let s = Scenario::desk();
        let rows = vec![vec![1.0; 24]; 8];
        let m = [metrics_with(rows.clone(), 0.0, 0.0), metrics_with(rows.clone(), 2.0, 0.0), metrics_with(rows, 0.0, 1.0)];
        let (t, _, _) = allocate_time(&s, &m, Requirements { rate: 2.0, power: 0.0 }).unwrap();
        assert!((t[1] - 1.0).abs() < 1e-6, "{t:?}");
        assert!(allocate_time(&s, &m, Requirements { rate: 2.5, power: 0.0 }).is_err());
    }

    #[test]
    fn identical_phases_tie() {
        let s = Scenario::desk();
        let rows: Vec<Vec<f64>> = (0..8).map(|l| (0..24).map(|m| ((l + m) % 3) as f64).collect()).collect();
        let m = [metrics_with(rows.clone(), 1.0, 1.0), metrics_with(rows.clone(), 1.0, 1.0), metrics_with(rows, 1.0, 1.0)];
        let (t, _, e) = allocate_time(&s, &m, Requirements::NONE).unwrap();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        let (t2, _, e2) = allocate_time(&s, &m, Requirements { rate: 0.5, power: 0.5 }).unwrap();
        assert!((e - e2).abs() < 1e-9 * e.max(1.0));
        assert!(t2[1] >= 0.5 - 1e-8);
    }
}
