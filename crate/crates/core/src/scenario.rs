//! Physical world: array steering, angular grid, slot schedule, desired
//! beampatterns and Rician user channels.

use std::f64::consts::PI;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{c, CVec};
use crate::{Error, Result};

/// All physical and dimensional parameters. Powers are linear watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub n_cp: usize,
    pub n_slots: usize,
    pub n_grid: usize,
    pub carrier_freq: f64,
    pub subcarrier_spacing: f64,
    pub symbol_duration: f64,
    pub spacing_ratio: f64,
    pub tx_power: f64,
    pub noise_power_comm: f64,
    pub noise_power_sense: f64,
    pub rician_factor: f64,
    pub pathloss_ref_db: f64,
    pub pathloss_ref_dist: f64,
    pub pathloss_exponent: f64,
    /// Average rate each IR must reach, bps/Hz.
    pub rate_requirement: f64,
    /// Average RF power each ER must harvest, W.
    pub power_requirement: f64,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    /// Small configuration used for tests and the default experiment:
    /// 4 transmit / 8 receive antennas, 8 symbols, 4 subcarriers, 4 slots, 24 grid angles.
    pub fn desk() -> Self {
        Self {
            n_tx: 4,
            n_rx: 8,
            n_symbols: 8,
            n_subcarriers: 4,
            n_cp: 1,
            n_slots: 4,
            n_grid: 24,
            ..Self::full_scale()
        }
    }

    /// The large reference system (16 transmit antennas, 256 symbols, 16 subcarriers).
    pub fn full_scale() -> Self {
        Self {
            n_tx: 16,
            n_rx: 32,
            n_symbols: 256,
            n_subcarriers: 16,
            n_cp: 4,
            n_slots: 4,
            n_grid: 48,
            carrier_freq: 28e9,
            subcarrier_spacing: 120e3,
            symbol_duration: 8.333e-6,
            spacing_ratio: 0.5,
            tx_power: dbm_to_watts(30.0),
            noise_power_comm: dbm_to_watts(-70.0),
            noise_power_sense: dbm_to_watts(-70.0),
            rician_factor: 20.0,
            pathloss_ref_db: 30.0,
            pathloss_ref_dist: 1.0,
            pathloss_exponent: 3.0,
            rate_requirement: 0.5,
            power_requirement: 1e-6,
            rng_seed: 0,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing
    }

    pub fn requirements(&self) -> Requirements {
        Requirements {
            rate: self.rate_requirement,
            power: self.power_requirement,
        }
    }

    /// Linear path loss `K_ref (D / D_ref)^eta` at distance `d`.
    pub fn path_loss(&self, d: f64) -> f64 {
        10f64.powf(self.pathloss_ref_db / 10.0) * (d / self.pathloss_ref_dist).powf(self.pathloss_exponent)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_tx", self.n_tx),
            ("n_rx", self.n_rx),
            ("n_symbols", self.n_symbols),
            ("n_subcarriers", self.n_subcarriers),
            ("n_slots", self.n_slots),
            ("n_grid", self.n_grid),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.n_rx < self.n_tx {
            return Err(Error::InvalidConfig(format!(
                "n_rx ({}) must be at least n_tx ({})",
                self.n_rx, self.n_tx
            )));
        }
        if self.n_symbols % self.n_slots != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_slots ({}) must divide n_symbols ({})",
                self.n_slots, self.n_symbols
            )));
        }
        if self.n_grid < 2 {
            return Err(Error::InvalidConfig("n_grid must be at least 2".into()));
        }
        let positive = [
            ("carrier_freq", self.carrier_freq),
            ("subcarrier_spacing", self.subcarrier_spacing),
            ("symbol_duration", self.symbol_duration),
            ("spacing_ratio", self.spacing_ratio),
            ("tx_power", self.tx_power),
            ("noise_power_comm", self.noise_power_comm),
            ("rician_factor", self.rician_factor),
            ("pathloss_ref_dist", self.pathloss_ref_dist),
            ("pathloss_exponent", self.pathloss_exponent),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        // a noiseless sensing receiver is allowed
        if !(self.noise_power_sense.is_finite() && self.noise_power_sense >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_power_sense must be nonnegative and finite, got {}",
                self.noise_power_sense
            )));
        }
        if self.rate_requirement < 0.0 || self.power_requirement < 0.0 {
            return Err(Error::InvalidConfig("requirements must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Per-IR rate (bps/Hz) and per-ER harvested power (W) thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Requirements {
    pub rate: f64,
    pub power: f64,
}

impl Requirements {
    pub const NONE: Requirements = Requirements { rate: 0.0, power: 0.0 };
}

/// User placement. Angles in radians, distances in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGeometry {
    pub ir_angles: Vec<f64>,
    pub ir_distances: Vec<f64>,
    pub er_angles: Vec<f64>,
    pub er_distances: Vec<f64>,
}

impl UserGeometry {
    /// Two IRs at -50° (60 m) and 15° (50 m); one ER at -40° (5 m).
    pub fn desk() -> Self {
        Self {
            ir_angles: vec![(-50f64).to_radians(), 15f64.to_radians()],
            ir_distances: vec![60.0, 50.0],
            er_angles: vec![(-40f64).to_radians()],
            er_distances: vec![5.0],
        }
    }

    pub fn k_ir(&self) -> usize {
        self.ir_angles.len()
    }

    pub fn k_er(&self) -> usize {
        self.er_angles.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ir_angles.len() != self.ir_distances.len() || self.er_angles.len() != self.er_distances.len() {
            return Err(Error::InvalidConfig("user angle and distance lists differ in length".into()));
        }
        if self.k_ir() == 0 || self.k_er() == 0 {
            return Err(Error::InvalidConfig("at least one IR and one ER are required".into()));
        }
        for &a in self.ir_angles.iter().chain(&self.er_angles) {
            if !(-PI / 2.0 - 1e-12..=PI / 2.0 + 1e-12).contains(&a) {
                return Err(Error::InvalidConfig(format!("user angle {a} rad outside [-pi/2, pi/2]")));
            }
        }
        for &d in self.ir_distances.iter().chain(&self.er_distances) {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig(format!("user distance must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// Uniform linear array response; entry `m` is `exp(j 2π d/λ m sin θ)`.
pub fn steering_vector(theta: f64, count: usize, spacing_ratio: f64) -> CVec {
    let phase = 2.0 * PI * spacing_ratio * theta.sin();
    CVec::from_iterator(count, (0..count).map(|m| {
        let p = phase * m as f64;
        c(p.cos(), p.sin())
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    pub angles: Vec<f64>,
}

impl AngularGrid {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.angles[1] - self.angles[0]
    }

    /// Index of the grid angle closest to `theta`.
    pub fn nearest(&self, theta: f64) -> usize {
        let mut best = 0;
        for (i, a) in self.angles.iter().enumerate() {
            if (a - theta).abs() < (self.angles[best] - theta).abs() {
                best = i;
            }
        }
        best
    }
}

/// `m` uniformly spaced angles over `[-π/2, π/2]`, both endpoints included.
pub fn make_angular_grid(m: usize) -> Result<AngularGrid> {
    if m < 2 {
        return Err(Error::InvalidConfig(format!("angular grid needs at least 2 points, got {m}")));
    }
    let step = PI / (m - 1) as f64;
    let mut angles: Vec<f64> = (0..m).map(|i| -PI / 2.0 + step * i as f64).collect();
    angles[m - 1] = PI / 2.0;
    Ok(AngularGrid { angles })
}

/// Splits `l` symbols into `q` equal contiguous slots.
pub fn slot_partition(l: usize, q: usize) -> Result<Vec<Range<usize>>> {
    if q == 0 || l == 0 || l % q != 0 {
        return Err(Error::InvalidConfig(format!("{q} slots do not evenly divide {l} symbols")));
    }
    let len = l / q;
    Ok((0..q).map(|j| j * len..(j + 1) * len).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSchedule {
    pub slot_symbols: Vec<Range<usize>>,
    /// `interest_masks[q][m]`: grid angle `m` belongs to the interest set of slot `q`.
    pub interest_masks: Vec<Vec<bool>>,
}

impl SlotSchedule {
    pub fn n_slots(&self) -> usize {
        self.slot_symbols.len()
    }

    pub fn slot_of(&self, symbol: usize) -> usize {
        self.slot_symbols
            .iter()
            .position(|r| r.contains(&symbol))
            .expect("symbol outside the schedule")
    }

    pub fn symbols_per_slot(&self) -> usize {
        self.slot_symbols[0].len()
    }
}

/// Binary desired gain per (slot, grid angle).
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredBeampattern {
    pub gains: Vec<Vec<f64>>,
}

impl DesiredBeampattern {
    pub fn slot(&self, q: usize) -> &[f64] {
        &self.gains[q]
    }
}

/// Rectangular desired pattern: entry (q, m) is 1 iff `|θ_m - center_q| <= width/2`.
/// Band edges count as inside.
pub fn desired_beampattern(
    grid: &AngularGrid,
    centers: &[f64],
    width: f64,
    schedule: &[Range<usize>],
) -> Result<DesiredBeampattern> {
    if centers.len() != schedule.len() {
        return Err(Error::InvalidConfig(format!(
            "{} slot centers given for {} slots",
            centers.len(),
            schedule.len()
        )));
    }
    let half = width / 2.0;
    let gains = centers
        .iter()
        .map(|&center| {
            grid.angles
                .iter()
                .map(|&a| if (a - center).abs() <= half + 1e-12 { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(DesiredBeampattern { gains })
}

/// Per-subcarrier channels. `ir[n][k]` is `h_{n,k}`, `er[n][i]` is `g_{n,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub ir: Vec<Vec<CVec>>,
    pub er: Vec<Vec<CVec>>,
}

impl ChannelSet {
    pub fn n_subcarriers(&self) -> usize {
        self.ir.len()
    }

    pub fn k_ir(&self) -> usize {
        self.ir.first().map_or(0, Vec::len)
    }

    pub fn k_er(&self) -> usize {
        self.er.first().map_or(0, Vec::len)
    }

    pub fn ir(&self, n: usize, k: usize) -> &CVec {
        &self.ir[n][k]
    }

    pub fn er(&self, n: usize, i: usize) -> &CVec {
        &self.er[n][i]
    }
}

/// Rician channels with distance path loss. The LoS term is the conjugated
/// transmit steering vector at the user's angle, shared by all subcarriers; the
/// scattered term is i.i.d. unit-variance CSCG per subcarrier. Deterministic in
/// `config.rng_seed`; IRs are drawn before ERs, subcarrier-major within a user.
pub fn generate_channels(config: &ScenarioConfig, geometry: &UserGeometry) -> Result<ChannelSet> {
    geometry.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let kappa = config.rician_factor;
    let los_w = (kappa / (1.0 + kappa)).sqrt();
    let nlos_w = (1.0 / (1.0 + kappa)).sqrt();
    let nt = config.n_tx;
    let n_sub = config.n_subcarriers;

    let mut draw_user = |angle: f64, dist: f64| -> Vec<CVec> {
        let amp = (1.0 / config.path_loss(dist)).sqrt();
        let los = steering_vector(angle, nt, config.spacing_ratio).map(|z| z.conj());
        (0..n_sub)
            .map(|_| {
                let scatter = CVec::from_iterator(
                    nt,
                    (0..nt).map(|_| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        c(re, im) * std::f64::consts::FRAC_1_SQRT_2
                    }),
                );
                (los.scale(los_w) + scatter.scale(nlos_w)).scale(amp)
            })
            .collect()
    };

    let ir_users: Vec<Vec<CVec>> = geometry
        .ir_angles
        .iter()
        .zip(&geometry.ir_distances)
        .map(|(&a, &d)| draw_user(a, d))
        .collect();
    let er_users: Vec<Vec<CVec>> = geometry
        .er_angles
        .iter()
        .zip(&geometry.er_distances)
        .map(|(&a, &d)| draw_user(a, d))
        .collect();

    let transpose = |users: Vec<Vec<CVec>>| -> Vec<Vec<CVec>> {
        (0..n_sub).map(|n| users.iter().map(|u| u[n].clone()).collect()).collect()
    };
    Ok(ChannelSet {
        ir: transpose(ir_users),
        er: transpose(er_users),
    })
}

/// Everything an optimizer needs besides the channels.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub geometry: UserGeometry,
    pub grid: AngularGrid,
    pub schedule: SlotSchedule,
    pub desired: DesiredBeampattern,
    pub slot_centers: Vec<f64>,
    pub slot_width: f64,
    /// Transmit steering vectors at every grid angle.
    pub grid_steering: Vec<CVec>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig, geometry: UserGeometry, slot_centers: Vec<f64>, slot_width: f64) -> Result<Self> {
        config.validate()?;
        geometry.validate()?;
        let grid = make_angular_grid(config.n_grid)?;
        let slots = slot_partition(config.n_symbols, config.n_slots)?;
        let desired = desired_beampattern(&grid, &slot_centers, slot_width, &slots)?;
        let interest_masks = desired
            .gains
            .iter()
            .map(|row| row.iter().map(|&g| g > 0.5).collect())
            .collect();
        let grid_steering = grid
            .angles
            .iter()
            .map(|&a| steering_vector(a, config.n_tx, config.spacing_ratio))
            .collect();
        Ok(Self {
            config,
            geometry,
            grid,
            schedule: SlotSchedule {
                slot_symbols: slots,
                interest_masks,
            },
            desired,
            slot_centers,
            slot_width,
            grid_steering,
        })
    }

    /// Scanning over [-60°, 60°] with four 30°-wide slots centered at -45°, -15°, 15°, 45°.
    pub fn with_default_scan(config: ScenarioConfig, geometry: UserGeometry) -> Result<Self> {
        assert_eq!(config.n_slots, 4, "the default scan has four slots");
        let centers = [-45.0f64, -15.0, 15.0, 45.0].iter().map(|d| d.to_radians()).collect();
        Self::new(config, geometry, centers, 30f64.to_radians())
    }

    pub fn desk() -> Self {
        Self::with_default_scan(ScenarioConfig::desk(), UserGeometry::desk()).expect("desk scenario is valid")
    }

    pub fn channels(&self) -> Result<ChannelSet> {
        generate_channels(&self.config, &self.geometry)
    }

    /// Same scenario with another channel seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.config.rng_seed = seed;
        s
    }

    pub fn k_ir(&self) -> usize {
        self.geometry.k_ir()
    }

    pub fn k_er(&self) -> usize {
        self.geometry.k_er()
    }

    /// Desired gain for symbol `l` at grid angle `m`.
    pub fn desired_at(&self, l: usize, m: usize) -> f64 {
        self.desired.gains[self.schedule.slot_of(l)][m]
    }
}
