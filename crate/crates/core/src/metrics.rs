//! Performance functionals of a covariance family: beampattern gain, matching
//! error, SINR, average rate, harvested power and power residual.

use std::io::{self, Write};

use crate::linalg::{quad_form, radiated_power, repair_psd, trace_re, CMat, CVec};
use crate::scenario::{steering_vector, ChannelSet, Scenario};
use crate::{Error, Result};

/// Covariances `W_{n,l,k}` for every subcarrier `n`, symbol `l` and stream `k`.
/// Stream 0 is the dedicated sensing/energy signal; stream `k >= 1` is the
/// information beam of IR `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    n_subcarriers: usize,
    n_symbols: usize,
    n_streams: usize,
    n_tx: usize,
    covariances: Vec<CMat>,
    pub zeta: f64,
}

impl BeamformingSolution {
    pub fn zeros(n_subcarriers: usize, n_symbols: usize, k_ir: usize, n_tx: usize) -> Self {
        let n_streams = k_ir + 1;
        Self {
            n_subcarriers,
            n_symbols,
            n_streams,
            n_tx,
            covariances: vec![CMat::zeros(n_tx, n_tx); n_subcarriers * n_symbols * n_streams],
            zeta: 0.0,
        }
    }

    /// Sized for `scenario`.
    pub fn zeros_for(scenario: &Scenario) -> Self {
        let c = &scenario.config;
        Self::zeros(c.n_subcarriers, c.n_symbols, scenario.k_ir(), c.n_tx)
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn n_streams(&self) -> usize {
        self.n_streams
    }

    pub fn k_ir(&self) -> usize {
        self.n_streams - 1
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    fn index(&self, n: usize, l: usize, k: usize) -> usize {
        debug_assert!(n < self.n_subcarriers && l < self.n_symbols && k < self.n_streams);
        (n * self.n_symbols + l) * self.n_streams + k
    }

    pub fn get(&self, n: usize, l: usize, k: usize) -> &CMat {
        &self.covariances[self.index(n, l, k)]
    }

    pub fn get_mut(&mut self, n: usize, l: usize, k: usize) -> &mut CMat {
        let i = self.index(n, l, k);
        &mut self.covariances[i]
    }

    pub fn set(&mut self, n: usize, l: usize, k: usize, w: CMat) {
        *self.get_mut(n, l, k) = w;
    }

    /// `R_{n,l}`, the transmit covariance summed over streams.
    pub fn total(&self, n: usize, l: usize) -> CMat {
        let mut acc = CMat::zeros(self.n_tx, self.n_tx);
        for k in 0..self.n_streams {
            acc += self.get(n, l, k);
        }
        acc
    }

    pub fn iter(&self) -> impl Iterator<Item = &CMat> {
        self.covariances.iter()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.covariances {
            *w = w.scale(factor);
        }
        out.zeta *= factor;
        out
    }

    /// Symmetrizes every covariance and clips eigenvalues above `-1e-8 trace`.
    pub fn repair(&mut self) -> Result<()> {
        for (i, w) in self.covariances.iter_mut().enumerate() {
            *w = repair_psd(w, 1e-8)
                .ok_or_else(|| Error::NumericalFailure(format!("covariance {i} is not positive semidefinite")))?;
        }
        Ok(())
    }

    fn check_symbol(&self, l: usize) -> Result<()> {
        if l >= self.n_symbols {
            return Err(Error::Index(format!("symbol {l} out of range (L = {})", self.n_symbols)));
        }
        Ok(())
    }
}

/// `G_l(θ) = Σ_n Σ_k v^T(θ) W_{n,l,k} v^*(θ)`.
pub fn beampattern_gain(solution: &BeamformingSolution, symbol: usize, theta: f64, spacing_ratio: f64) -> Result<f64> {
    solution.check_symbol(symbol)?;
    let v = steering_vector(theta, solution.n_tx, spacing_ratio);
    Ok(gain_with_steering(solution, symbol, &v))
}

pub(crate) fn gain_with_steering(solution: &BeamformingSolution, symbol: usize, v: &CVec) -> f64 {
    let mut g = 0.0;
    for n in 0..solution.n_subcarriers {
        for k in 0..solution.n_streams {
            g += radiated_power(solution.get(n, symbol, k), v);
        }
    }
    g
}

/// Gain table `[l][m]` over the scenario's grid.
pub fn gain_table(solution: &BeamformingSolution, scenario: &Scenario) -> Vec<Vec<f64>> {
    (0..solution.n_symbols)
        .map(|l| {
            scenario
                .grid_steering
                .iter()
                .map(|v| gain_with_steering(solution, l, v))
                .collect()
        })
        .collect()
}

/// `Σ_l Σ_m |G_l(θ_m) - ζ P_l(θ_m)|^2` for a gain table `[l][m]`.
pub fn matching_error_from_gains(gains: &[Vec<f64>], scenario: &Scenario, zeta: f64) -> f64 {
    gains
        .iter()
        .enumerate()
        .map(|(l, row)| {
            let desired = scenario.desired.slot(scenario.schedule.slot_of(l));
            row.iter()
                .zip(desired)
                .map(|(g, p)| (g - zeta * p).powi(2))
                .sum::<f64>()
        })
        .sum()
}

pub fn matching_error(solution: &BeamformingSolution, scenario: &Scenario) -> f64 {
    matching_error_from_gains(&gain_table(solution, scenario), scenario, solution.zeta)
}

/// Matching error divided by `L M ζ^2`.
pub fn normalized_error(raw: f64, zeta: f64, n_symbols: usize, n_grid: usize) -> Result<f64> {
    if zeta == 0.0 || !zeta.is_finite() {
        return Err(Error::Normalization(format!("scaling coefficient is {zeta}")));
    }
    Ok(raw / (n_symbols as f64 * n_grid as f64 * zeta * zeta))
}

pub fn normalized_matching_error(solution: &BeamformingSolution, scenario: &Scenario) -> Result<f64> {
    normalized_error(
        matching_error(solution, scenario),
        solution.zeta,
        solution.n_symbols,
        scenario.grid.len(),
    )
}

/// SINR of IR `ir` (0-based) on subcarrier `n`, symbol `l`.
pub fn sinr(solution: &BeamformingSolution, channels: &ChannelSet, n: usize, l: usize, ir: usize, noise: f64) -> f64 {
    let h = channels.ir(n, ir);
    let signal = quad_form(solution.get(n, l, ir + 1), h).max(0.0);
    let interference: f64 = (0..solution.n_streams)
        .filter(|&k| k != ir + 1)
        .map(|k| quad_form(solution.get(n, l, k), h).max(0.0))
        .sum();
    signal / (interference + noise)
}

/// `(1/(LN)) Σ_l Σ_n log2(1 + SINR)`, bps/Hz.
pub fn average_rate(solution: &BeamformingSolution, channels: &ChannelSet, ir: usize, noise: f64) -> f64 {
    let mut acc = 0.0;
    for n in 0..solution.n_subcarriers {
        for l in 0..solution.n_symbols {
            acc += (1.0 + sinr(solution, channels, n, l, ir, noise)).log2();
        }
    }
    acc / (solution.n_symbols * solution.n_subcarriers) as f64
}

/// `(1/L) Σ_l Σ_n Σ_k g^H W g`, watts.
pub fn harvested_power(solution: &BeamformingSolution, channels: &ChannelSet, er: usize) -> f64 {
    let mut acc = 0.0;
    for n in 0..solution.n_subcarriers {
        let g = channels.er(n, er);
        for l in 0..solution.n_symbols {
            for k in 0..solution.n_streams {
                acc += quad_form(solution.get(n, l, k), g);
            }
        }
    }
    acc / solution.n_symbols as f64
}

/// Per-symbol `Σ_n Σ_k tr(W) - P_0`.
pub fn power_residual(solution: &BeamformingSolution, p0: f64) -> Vec<f64> {
    (0..solution.n_symbols)
        .map(|l| {
            let mut p = 0.0;
            for n in 0..solution.n_subcarriers {
                for k in 0..solution.n_streams {
                    p += trace_re(solution.get(n, l, k));
                }
            }
            p - p0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub matching_error: f64,
    pub normalized_error: Option<f64>,
    pub zeta: f64,
    pub per_ir_rate: Vec<f64>,
    pub per_er_power: Vec<f64>,
    pub per_symbol_power_residual: Vec<f64>,
    /// Gain per (slot, grid angle), averaged over the slot's symbols.
    pub slot_gains: Vec<Vec<f64>>,
}

impl PerformanceReport {
    pub fn evaluate(solution: &BeamformingSolution, scenario: &Scenario, channels: &ChannelSet) -> Self {
        let gains = gain_table(solution, scenario);
        let raw = matching_error_from_gains(&gains, scenario, solution.zeta);
        let noise = scenario.config.noise_power_comm;
        Self {
            matching_error: raw,
            normalized_error: normalized_error(raw, solution.zeta, solution.n_symbols, scenario.grid.len()).ok(),
            zeta: solution.zeta,
            per_ir_rate: (0..channels.k_ir())
                .map(|k| average_rate(solution, channels, k, noise))
                .collect(),
            per_er_power: (0..channels.k_er())
                .map(|i| harvested_power(solution, channels, i))
                .collect(),
            per_symbol_power_residual: power_residual(solution, scenario.config.tx_power),
            slot_gains: slot_average(&gains, scenario),
        }
    }

    pub fn min_rate(&self) -> f64 {
        self.per_ir_rate.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_er_power(&self) -> f64 {
        self.per_er_power.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rate, harvested-power and power-equality checks at the usual tolerances.
    pub fn satisfies(&self, rate: f64, power: f64, p0: f64) -> bool {
        self.per_ir_rate.iter().all(|&r| r >= rate - 1e-6)
            && self.per_er_power.iter().all(|&p| p >= power * (1.0 - 1e-6))
            && self.per_symbol_power_residual.iter().all(|r| r.abs() <= 1e-6 * p0)
    }

    /// CSV with header `slot,grid_angle_deg,gain,desired`.
    pub fn write_gain_csv<W: Write>(&self, scenario: &Scenario, mut w: W) -> io::Result<()> {
        writeln!(w, "slot,grid_angle_deg,gain,desired")?;
        for (q, row) in self.slot_gains.iter().enumerate() {
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
    }

    /// CSV with header `entity_type,entity_id,metric,value`.
    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "entity_type,entity_id,metric,value")?;
        writeln!(w, "system,0,matching_error,{}", self.matching_error)?;
        if let Some(e) = self.normalized_error {
            writeln!(w, "system,0,normalized_error,{e}")?;
        }
        writeln!(w, "system,0,zeta,{}", self.zeta)?;
        for (k, r) in self.per_ir_rate.iter().enumerate() {
            writeln!(w, "ir,{},rate_bps_hz,{r}", k + 1)?;
        }
        for (i, p) in self.per_er_power.iter().enumerate() {
            writeln!(w, "er,{},harvested_power_w,{p}", i + 1)?;
        }
        for (l, r) in self.per_symbol_power_residual.iter().enumerate() {
            writeln!(w, "symbol,{l},power_residual_w,{r}")?;
        }
        Ok(())
    }
}

pub(crate) fn slot_average(gains: &[Vec<f64>], scenario: &Scenario) -> Vec<Vec<f64>> {
    scenario
        .schedule
        .slot_symbols
        .iter()
        .map(|range| {
            let mut acc = vec![0.0; scenario.grid.len()];
            for l in range.clone() {
                for (a, g) in acc.iter_mut().zip(&gains[l]) {
                    *a += g;
                }
            }
            acc.iter().map(|a| a / range.len() as f64).collect()
        })
        .collect()
}
