//! Monostatic OFDM echo synthesis and target parameter estimation: MUSIC for
//! directions, a 2-D DFT likelihood for delay and Doppler, and angle MSE.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::linalg::{c, hermitian_eigen, psd_sqrt, CMat, CVec};
use crate::metrics::BeamformingSolution;
use crate::scenario::{steering_vector, AngularGrid, Scenario};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    /// Direction, radians.
    pub angle: f64,
    pub amplitude: Complex64,
    /// Round-trip delay, seconds.
    pub delay: f64,
    /// Normalized Doppler `2v/c`.
    pub doppler: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub targets: Vec<Target>,
    /// Targets of interest in each slot, as indices into `targets`.
    pub slot_members: Vec<Vec<usize>>,
}

impl TargetSet {
    /// Assigns every target to the slots whose scanned sector contains it.
    pub fn new(targets: Vec<Target>, scenario: &Scenario) -> Result<Self> {
        let cfg = &scenario.config;
        for (i, t) in targets.iter().enumerate() {
            if !(0.0..1.0 / cfg.subcarrier_spacing).contains(&t.delay) {
                return Err(Error::InvalidConfig(format!("target {i}: delay {} s outside [0, 1/Δf)", t.delay)));
            }
            if (t.doppler * cfg.carrier_freq * cfg.symbol_duration).abs() >= 0.5 {
                return Err(Error::InvalidConfig(format!("target {i}: ambiguous Doppler {}", t.doppler)));
            }
        }
        let half = scenario.slot_width / 2.0;
        let slot_members = scenario
            .slot_centers
            .iter()
            .map(|&center| {
                (0..targets.len())
                    .filter(|&i| (targets[i].angle - center).abs() <= half)
                    .collect()
            })
            .collect();
        Ok(Self { targets, slot_members })
    }

    /// Amplitude with two-way path loss at distance `d` and uniform phase.
    pub fn draw_amplitude<R: Rng>(scenario: &Scenario, distance: f64, rng: &mut R) -> Complex64 {
        let mag = (1.0 / scenario.config.path_loss(2.0 * distance)).sqrt();
        Complex64::from_polar(mag, rng.random_range(0.0..2.0 * PI))
    }
}

/// Received snapshots and the transmit realizations behind them, both
/// indexed `n * L + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoFrame {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub received: Vec<CVec>,
    pub transmitted: Vec<CVec>,
}

impl EchoFrame {
    fn index(&self, n: usize, l: usize) -> usize {
        n * self.n_symbols + l
    }

    pub fn y(&self, n: usize, l: usize) -> &CVec {
        &self.received[self.index(n, l)]
    }

    pub fn x(&self, n: usize, l: usize) -> &CVec {
        &self.transmitted[self.index(n, l)]
    }
}

fn cscg<R: Rng>(rng: &mut R, len: usize) -> CVec {
    CVec::from_iterator(
        len,
        (0..len).map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            c(re, im) * std::f64::consts::FRAC_1_SQRT_2
        }),
    )
}

/// Beam of a rank-one covariance, or `None` for a zero stream.
fn beam(w: &CMat) -> Result<Option<CVec>> {
    let (eig, vecs) = hermitian_eigen(w);
    let top = *eig.last().unwrap_or(&0.0);
    if top <= 0.0 {
        return Ok(None);
    }
    if eig.len() > 1 && eig[eig.len() - 2].abs() > 1e-6 * top {
        return Err(Error::Precondition(
            "information covariance is not rank one; extract beams first".into(),
        ));
    }
    Ok(Some(vecs.column(eig.len() - 1).scale(top.sqrt())))
}

/// Draws transmit signals from `solution` and the echoes of `targets`.
pub fn synthesize_echo(solution: &BeamformingSolution, targets: &TargetSet, scenario: &Scenario, seed: u64) -> Result<EchoFrame> {
    let (n_sub, n_sym) = (solution.n_subcarriers(), solution.n_symbols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transmitted = Vec::with_capacity(n_sub * n_sym);
    for n in 0..n_sub {
        for l in 0..n_sym {
            let root = psd_sqrt(solution.get(n, l, 0));
            let mut x = &root * cscg(&mut rng, solution.n_tx());
            for k in 1..solution.n_streams() {
                if let Some(w) = beam(solution.get(n, l, k))? {
                    let s = cscg(&mut rng, 1)[0];
                    x += w * s;
                }
            }
            transmitted.push(x);
        }
    }
    Ok(echo_from_signals(transmitted, n_sub, n_sym, targets, scenario, &mut rng))
}

/// Echoes of given transmit signals, indexed `n * L + l`, plus receiver noise.
pub fn echo_from_signals<R: Rng>(
    transmitted: Vec<CVec>,
    n_subcarriers: usize,
    n_symbols: usize,
    targets: &TargetSet,
    scenario: &Scenario,
    rng: &mut R,
) -> EchoFrame {
    let cfg = &scenario.config;
    let n_rx = cfg.n_rx;
    let sigma = cfg.noise_power_sense.sqrt();
    let responses: Vec<(CVec, CVec)> = targets
        .targets
        .iter()
        .map(|t| {
            let n_tx = transmitted.first().map_or(cfg.n_tx, |x| x.len());
            (
                steering_vector(t.angle, n_rx, cfg.spacing_ratio).scale(1.0).map(|z| z * t.amplitude),
                steering_vector(t.angle, n_tx, cfg.spacing_ratio),
            )
        })
        .collect();
    let mut received = Vec::with_capacity(transmitted.len());
    for n in 0..n_subcarriers {
        for l in 0..n_symbols {
            let x = &transmitted[n * n_symbols + l];
            let mut y = CVec::zeros(n_rx);
            for (t, (a, v)) in targets.targets.iter().zip(&responses) {
                let phase = 2.0
                    * PI
                    * (l as f64 * t.doppler * cfg.carrier_freq * cfg.symbol_duration
                        - n as f64 * t.delay * cfg.subcarrier_spacing);
                let g = (v.transpose() * x)[(0, 0)];
                y += a * (Complex64::from_polar(1.0, phase) * g);
            }
            if sigma > 0.0 {
                y += cscg(rng, n_rx).scale(sigma);
            }
            received.push(y);
        }
    }
    EchoFrame {
        n_subcarriers,
        n_symbols,
        received,
        transmitted,
    }
}

/// Sample covariance of the snapshots in slot `q`.
pub fn slot_covariance(frame: &EchoFrame, scenario: &Scenario, q: usize) -> CMat {
    let n_rx = frame.received.first().map_or(0, |y| y.len());
    let mut r = CMat::zeros(n_rx, n_rx);
    for l in scenario.schedule.slot_symbols[q].clone() {
        for n in 0..frame.n_subcarriers {
            let y = frame.y(n, l);
            r += y * y.adjoint();
        }
    }
    r
}

/// MUSIC pseudo-spectrum of a covariance over the grid with
/// `expected` signal dimensions.
pub fn music_spectrum(r: &CMat, expected: usize, grid: &AngularGrid, spacing_ratio: f64) -> Vec<f64> {
    let n_rx = r.nrows();
    let (_, vecs) = hermitian_eigen(r);
    // ascending order: the noise subspace is the leading columns
    let noise = vecs.columns(0, n_rx - expected).into_owned();
    grid.angles
        .iter()
        .map(|&theta| {
            let a = steering_vector(theta, n_rx, spacing_ratio);
            let p = noise.adjoint() * a;
            1.0 / p.norm_squared()
        })
        .collect()
}

/// Indices of local maxima, best first. A plateau counts once, at its
/// smallest angle.
pub fn local_maxima(spectrum: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < spectrum.len() {
        let mut j = i;
        while j + 1 < spectrum.len() && spectrum[j + 1] == spectrum[i] {
            j += 1;
        }
        let left = i == 0 || spectrum[i - 1] < spectrum[i];
        let right = j + 1 == spectrum.len() || spectrum[j + 1] < spectrum[i];
        if left && right {
            peaks.push(i);
        }
        i = j + 1;
    }
    peaks.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]).then(a.cmp(&b)));
    peaks
}

/// Direction estimates for slot `q`, in grid order of decreasing spectrum.
pub fn music_doa(frame: &EchoFrame, scenario: &Scenario, q: usize, expected: usize, grid: &AngularGrid) -> Result<Vec<f64>> {
    let angles = music_peaks(frame, scenario, q, expected, grid)?;
    if angles.len() < expected {
        return Err(Error::EstimationDegenerate(format!(
            "found {} of {expected} spectrum peaks: {angles:?}",
            angles.len()
        )));
    }
    Ok(angles)
}

/// Up to `expected` strongest peaks; fewer when the spectrum has fewer.
fn music_peaks(frame: &EchoFrame, scenario: &Scenario, q: usize, expected: usize, grid: &AngularGrid) -> Result<Vec<f64>> {
    if expected == 0 {
        return Ok(Vec::new());
    }
    let r = slot_covariance(frame, scenario, q);
    if expected >= r.nrows() {
        return Err(Error::Precondition(format!(
            "MUSIC needs fewer targets ({expected}) than receive antennas ({})",
            r.nrows()
        )));
    }
    let spectrum = music_spectrum(&r, expected, grid, scenario.config.spacing_ratio);
    let peaks = local_maxima(&spectrum);
    Ok(peaks.iter().take(expected).map(|&i| grid.angles[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayDoppler {
    pub delay_index: usize,
    /// Doppler index after the signed wrap, in `(-L/2, L/2]`.
    pub doppler_index: i64,
    pub delay: f64,
    pub doppler: f64,
}

/// Delay and Doppler of the target at `theta_hat` from the whole frame.
pub fn estimate_delay_doppler(frame: &EchoFrame, theta_hat: f64, scenario: &Scenario) -> Result<DelayDoppler> {
    let cfg = &scenario.config;
    let (n_sub, n_sym) = (frame.n_subcarriers, frame.n_symbols);
    let n_tx = frame.transmitted.first().map_or(cfg.n_tx, |x| x.len());
    let n_rx = frame.received.first().map_or(cfg.n_rx, |y| y.len());
    let v = steering_vector(theta_hat, n_tx, cfg.spacing_ratio);
    let a = steering_vector(theta_hat, n_rx, cfg.spacing_ratio);
    let guard = 1e-9 * (cfg.tx_power / n_sub as f64).sqrt();

    // rows over l, columns over n
    let mut grid = vec![Complex64::new(0.0, 0.0); n_sub * n_sym];
    let mut used = 0;
    for n in 0..n_sub {
        for l in 0..n_sym {
            let g = (v.transpose() * frame.x(n, l))[(0, 0)];
            if g.norm() < guard {
                continue;
            }
            used += 1;
            grid[l * n_sub + n] = a.dotc(frame.y(n, l)) / g;
        }
    }
    if used == 0 {
        return Err(Error::EstimationDegenerate("reference signal vanishes on every cell".into()));
    }

    let mut planner = FftPlanner::new();
    // e^{+j2πni/N}: unnormalized inverse transform along n
    let inverse = planner.plan_fft_inverse(n_sub);
    for row in grid.chunks_mut(n_sub) {
        inverse.process(row);
    }
    // e^{-j2πlj/L}: forward transform along l
    let forward = planner.plan_fft_forward(n_sym);
    let mut column = vec![Complex64::new(0.0, 0.0); n_sym];
    let mut best = (0, 0, f64::NEG_INFINITY);
    for i in 0..n_sub {
        for l in 0..n_sym {
            column[l] = grid[l * n_sub + i];
        }
        forward.process(&mut column);
        for (j, z) in column.iter().enumerate() {
            if z.norm_sqr() > best.2 {
                best = (i, j, z.norm_sqr());
            }
        }
    }
    let (i, j) = (best.0, best.1);
    let signed = if 2 * j > n_sym { j as i64 - n_sym as i64 } else { j as i64 };
    Ok(DelayDoppler {
        delay_index: i,
        doppler_index: signed,
        delay: i as f64 / (n_sub as f64 * cfg.subcarrier_spacing),
        doppler: signed as f64 / (n_sym as f64 * cfg.carrier_freq * cfg.symbol_duration),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleMse {
    pub mse: f64,
    /// `(truth, estimate)` index pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Set when the counts differ; the MSE then covers the matched subset.
    pub mismatch: bool,
}

/// Greedy nearest-neighbour matching followed by the mean squared error.
pub fn angle_mse(truth: &[f64], estimates: &[f64]) -> AngleMse {
    let mut candidates: Vec<(f64, usize, usize)> = truth
        .iter()
        .enumerate()
        .flat_map(|(i, t)| estimates.iter().enumerate().map(move |(j, e)| ((t - e).abs(), i, j)))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_t = vec![false; truth.len()];
    let mut used_e = vec![false; estimates.len()];
    let mut pairs = Vec::new();
    let mut sum = 0.0;
    for (d, i, j) in candidates {
        if !used_t[i] && !used_e[j] {
            used_t[i] = true;
            used_e[j] = true;
            pairs.push((i, j));
            sum += d * d;
        }
    }
    pairs.sort();
    AngleMse {
        mse: if pairs.is_empty() { 0.0 } else { sum / pairs.len() as f64 },
        pairs,
        mismatch: truth.len() != estimates.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetEstimate {
    pub target_id: usize,
    pub truth: Target,
    pub angle: f64,
    pub delay: f64,
    pub doppler: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub estimates: Vec<TargetEstimate>,
    pub mse: AngleMse,
}

impl EstimationReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "target_id,truth_deg,est_deg,truth_delay_s,est_delay_s,truth_doppler,est_doppler")?;
        for e in &self.estimates {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{:e}",
                e.target_id,
                e.truth.angle.to_degrees(),
                e.angle.to_degrees(),
                e.truth.delay,
                e.delay,
                e.truth.doppler,
                e.doppler
            )?;
        }
        writeln!(w, "mse_rad2,{:e},,,,,", self.mse.mse)
    }
}

/// Full pipeline: echoes, per-slot MUSIC over the slot's sector,
/// delay/Doppler per estimate, and angle MSE against the targets of interest.
pub fn evaluate(solution: &BeamformingSolution, targets: &TargetSet, scenario: &Scenario, seed: u64) -> Result<EstimationReport> {
    let frame = synthesize_echo(solution, targets, scenario, seed)?;
    let mut truth_ids = Vec::new();
    let mut angles = Vec::new();
    for (q, members) in targets.slot_members.iter().enumerate() {
        // the spectrum is searched over the slot's sector of interest only
        let sector = AngularGrid {
            angles: scenario
                .grid
                .angles
                .iter()
                .zip(&scenario.schedule.interest_masks[q])
                .filter(|(_, &inside)| inside)
                .map(|(&a, _)| a)
                .collect(),
        };
        // a degenerate spectrum keeps its partial peaks and flags a mismatch
        let found = music_peaks(&frame, scenario, q, members.len(), &sector)?;
        // match within the slot so a target seen in two slots is scored twice
        let truth: Vec<f64> = members.iter().map(|&k| targets.targets[k].angle).collect();
        let m = angle_mse(&truth, &found);
        for (i, j) in m.pairs {
            truth_ids.push(members[i]);
            angles.push(found[j]);
        }
    }
    let mut estimates = Vec::new();
    for (&id, &angle) in truth_ids.iter().zip(&angles) {
        let dd = estimate_delay_doppler(&frame, angle, scenario)?;
        estimates.push(TargetEstimate {
            target_id: id,
            truth: targets.targets[id],
            angle,
            delay: dd.delay,
            doppler: dd.doppler,
        });
    }
    let truth: Vec<f64> = estimates.iter().map(|e| e.truth.angle).collect();
    let total: usize = targets.slot_members.iter().map(Vec::len).sum();
    let mut mse = angle_mse(&truth, &angles);
    mse.mismatch = estimates.len() != total;
    Ok(EstimationReport { estimates, mse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ScenarioConfig, UserGeometry};

    fn single_slot(n_tx: usize, n_rx: usize, noise: f64) -> Scenario {
        let cfg = ScenarioConfig {
            n_tx,
            n_rx,
            n_slots: 1,
            noise_power_sense: noise,
            ..ScenarioConfig::desk()
        };
        Scenario::new(cfg, UserGeometry::desk(), vec![0.0], PI).unwrap()
    }

    fn target(angle: f64, delay: f64, doppler: f64) -> Target {
        Target {
            angle,
            amplitude: c(1.0, 0.0),
            delay,
            doppler,
        }
    }

    fn constant_signals(s: &Scenario, x: CVec) -> Vec<CVec> {
        vec![x; s.config.n_subcarriers * s.config.n_symbols]
    }

    #[test]
    fn no_targets_no_noise_is_silent() {
        let s = single_slot(4, 8, 0.0);
        let set = TargetSet::new(vec![], &s).unwrap();
        let sol = crate::joint_optimizer::uniform_isotropic(&s);
        let frame = synthesize_echo(&sol, &set, &s, 3).unwrap();
        assert!(frame.received.iter().all(|y| y.norm() == 0.0));
    }

    #[test]
    fn static_single_antenna_echo_is_steering() {
        let s = single_slot(1, 8, 0.0);
        let b = c(0.3, -0.2);
        let set = TargetSet::new(vec![Target { amplitude: b, ..target(0.4, 0.0, 0.0) }], &s).unwrap();
        let x = CVec::from_element(1, c(1.0, 0.0));
        let frame = echo_from_signals(constant_signals(&s, x), 4, 8, &set, &s, &mut ChaCha8Rng::seed_from_u64(0));
        let expect = steering_vector(0.4, 8, s.config.spacing_ratio).map(|z| z * b);
        assert!(frame.received.iter().all(|y| (y - &expect).norm() < 1e-12));
    }

    #[test]
    fn delay_gives_subcarrier_phase_ramp() {
        let s = single_slot(2, 4, 0.0);
        let tau = 1.0 / (4.0 * s.config.subcarrier_spacing);
        let set = TargetSet::new(vec![target(0.2, tau, 0.0)], &s).unwrap();
        let x = CVec::from_vec(vec![c(0.7, 0.1), c(-0.3, 0.5)]);
        let frame = echo_from_signals(constant_signals(&s, x), 4, 8, &set, &s, &mut ChaCha8Rng::seed_from_u64(0));
        let ramp = Complex64::from_polar(1.0, -2.0 * PI / 4.0);
        for n in 0..3 {
            for l in 0..8 {
                for (a, b) in frame.y(n + 1, l).iter().zip(frame.y(n, l).iter()) {
                    assert!((a / b - ramp).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn information_streams_must_be_rank_one() {
        let s = single_slot(4, 8, 0.0);
        let mut sol = crate::joint_optimizer::uniform_isotropic(&s);
        sol.set(0, 0, 1, CMat::identity(4, 4));
        let set = TargetSet::new(vec![], &s).unwrap();
        assert!(matches!(synthesize_echo(&sol, &set, &s, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn plateau_counts_once_at_smaller_angle() {
        assert_eq!(local_maxima(&[0.0, 2.0, 2.0, 1.0, 3.0, 0.5]), vec![4, 1]);
        assert_eq!(local_maxima(&[1.0, 1.0, 1.0]), vec![0]);
        assert!(local_maxima(&[]).is_empty());
    }

    #[test]
    fn music_zero_targets_is_empty() {
        let s = single_slot(4, 8, 1e-3);
        let sol = crate::joint_optimizer::uniform_isotropic(&s);
        let frame = synthesize_echo(&sol, &TargetSet::new(vec![], &s).unwrap(), &s, 0).unwrap();
        assert!(music_doa(&frame, &s, 0, 0, &s.grid).unwrap().is_empty());
    }

    #[test]
    fn spectrum_ignores_covariance_scale() {
        let s = single_slot(4, 8, 1e-3);
        let sol = crate::joint_optimizer::uniform_isotropic(&s);
        let set = TargetSet::new(vec![target(s.grid.angles[9], 0.0, 0.0)], &s).unwrap();
        let frame = synthesize_echo(&sol, &set, &s, 5).unwrap();
        let r = slot_covariance(&frame, &s, 0);
        let a = music_spectrum(&r, 1, &s.grid, 0.5);
        let b = music_spectrum(&r.scale(37.0), 1, &s.grid, 0.5);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-8 * x.abs());
        }
    }

    #[test]
    fn stationary_target_has_zero_indices() {
        let s = single_slot(4, 8, 0.0);
        let sol = crate::joint_optimizer::uniform_isotropic(&s);
        let set = TargetSet::new(vec![target(0.3, 0.0, 0.0)], &s).unwrap();
        let frame = synthesize_echo(&sol, &set, &s, 1).unwrap();
        let dd = estimate_delay_doppler(&frame, 0.3, &s).unwrap();
        assert_eq!((dd.delay_index, dd.doppler_index), (0, 0));
    }

    #[test]
    fn doppler_wraps_to_negative() {
        let s = single_slot(4, 8, 0.0);
        let cfg = &s.config;
        let nu = 7.0 / (8.0 * cfg.carrier_freq * cfg.symbol_duration);
        // ν above the unambiguous range aliases to index L-1
        let mut t = target(0.3, 0.0, nu - 8.0 / (8.0 * cfg.carrier_freq * cfg.symbol_duration));
        t.doppler = t.doppler.max(-0.49 / (cfg.carrier_freq * cfg.symbol_duration));
        let set = TargetSet::new(vec![t], &s).unwrap();
        let sol = crate::joint_optimizer::uniform_isotropic(&s);
        let frame = synthesize_echo(&sol, &set, &s, 2).unwrap();
        let dd = estimate_delay_doppler(&frame, 0.3, &s).unwrap();
        assert_eq!(dd.doppler_index, -1);
        assert!((dd.doppler + 1.0 / (8.0 * cfg.carrier_freq * cfg.symbol_duration)).abs() < 1e-15);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(angle_mse(&[0.1, 0.5], &[0.5, 0.1]).mse, 0.0);
        let step = PI / 47.0;
        let m = angle_mse(&[0.2], &[0.2 + step]);
        assert!((m.mse - 4.468e-3).abs() < 1e-6);
        let e = 0.01;
        assert!((angle_mse(&[0.0, 1.0], &[e, 1.0 - e]).mse - e * e).abs() < 1e-15);
        let partial = angle_mse(&[0.0, 1.0], &[0.9]);
        assert!(partial.mismatch);
        assert_eq!(partial.pairs, vec![(1, 0)]);
    }

    #[test]
    fn evaluation_searches_each_slot_sector() {
        let s = Scenario::desk();
        let sol = crate::joint_optimizer::uniform_isotropic(&s);
        // an unresolvable pair in one sector and a lone target in another
        let g = &s.grid.angles;
        let targets = vec![target(g[8], 0.0, 0.0), target(g[8] + 0.01, 0.0, 0.0), target(g[16], 0.0, 0.0)];
        let set = TargetSet::new(targets, &s).unwrap();
        let report = evaluate(&sol, &set, &s, 3).unwrap();
        let half = s.slot_width / 2.0;
        for e in &report.estimates {
            let q = (0..4).find(|&q| set.slot_members[q].contains(&e.target_id)).unwrap();
            assert!((e.angle - s.slot_centers[q]).abs() <= half + 1e-12, "{e:?}");
        }
        assert!(report.estimates.iter().any(|e| e.target_id == 2 && e.angle == g[16]));
    }

    #[test]
    fn report_csv_has_summary_row() {
        let report = EstimationReport {
            estimates: vec![],
            mse: angle_mse(&[], &[]),
        };
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("target_id,truth_deg"));
        assert!(text.lines().last().unwrap().starts_with("mse_rad2,"));
    }
}
