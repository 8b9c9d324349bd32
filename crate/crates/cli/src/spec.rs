//! Experiment files: a TOML document describing the scenario, the methods to
//! compare, an optional sweep axis and the number of channel draws per point.
//!
//! File units follow the usual link-budget conventions (degrees, dBm, Kbps,
//! meters); everything is converted to radians, watts and bps/Hz here.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use iscap::scenario::dbm_to_watts;
use iscap::{Scenario, ScenarioConfig, UserGeometry};
use serde::Deserialize;

/// IR placements appended when a K_IR sweep asks for more receivers than the
/// file lists, in order. Degrees.
pub const EXTRA_IR_ANGLES_DEG: [f64; 6] = [35.0, -20.0, 50.0, 0.0, -35.0, 25.0];
pub const EXTRA_IR_DISTANCE_M: f64 = 60.0;

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Syntax or type error; the message carries line and column.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: `{key}`: {message}")]
    Invalid { path: PathBuf, key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodKind {
    Sca,
    Fp,
    Zf,
    RoundRobin,
    TimeSwitching,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Sca,
        MethodKind::Fp,
        MethodKind::Zf,
        MethodKind::RoundRobin,
        MethodKind::TimeSwitching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Sca => "sca",
            MethodKind::Fp => "fp",
            MethodKind::Zf => "zf",
            MethodKind::RoundRobin => "round_robin",
            MethodKind::TimeSwitching => "time_switching",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == key || (key == "rr" && *m == MethodKind::RoundRobin) || (key == "ts" && *m == MethodKind::TimeSwitching))
            .ok_or_else(|| format!("unknown method `{s}` (expected one of sca, fp, zf, round_robin, time_switching)"))
    }
}

/// Parses a comma-separated method list, dropping duplicates and sorting.
pub fn parse_method_list(list: &str) -> Result<Vec<MethodKind>, String> {
    let mut out = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(MethodKind::from_str)
        .collect::<Result<Vec<_>, _>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err("empty method list".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// IR rate requirement, Kbps.
    RateKbps,
    /// ER harvesting requirement, μW.
    PowerUw,
    TxPowerDbm,
    KIr,
    NTx,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::RateKbps => "rate_kbps",
            SweepAxis::PowerUw => "power_uw",
            SweepAxis::TxPowerDbm => "tx_power_dbm",
            SweepAxis::KIr => "k_ir",
            SweepAxis::NTx => "n_tx",
        }
    }

    fn integral(self) -> bool {
        matches!(self, SweepAxis::KIr | SweepAxis::NTx)
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            SweepAxis::RateKbps,
            SweepAxis::PowerUw,
            SweepAxis::TxPowerDbm,
            SweepAxis::KIr,
            SweepAxis::NTx,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| format!("unknown sweep axis `{s}` (expected rate_kbps, power_uw, tx_power_dbm, k_ir or n_tx)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Targets placed for the optional sensing evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSpec {
    pub targets: usize,
    /// Angular range the targets are drawn from, radians.
    pub min_angle: f64,
    pub max_angle: f64,
    pub distance: f64,
}

impl Default for SensingSpec {
    fn default() -> Self {
        Self {
            targets: 8,
            min_angle: (-60f64).to_radians(),
            max_angle: 60f64.to_radians(),
            distance: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub config: ScenarioConfig,
    pub geometry: UserGeometry,
    /// Slot centers and common width, radians; `None` uses the default scan.
    pub scan: Option<(Vec<f64>, f64)>,
    pub methods: Vec<MethodKind>,
    pub sweep: Option<Sweep>,
    pub trials: usize,
    pub seed: u64,
    pub outputs: PathBuf,
    pub sensing: SensingSpec,
}

// ---- file layout -----------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSpec {
    #[serde(default)]
    scenario: ScenarioSection,
    users: Option<UsersSection>,
    scan: Option<ScanSection>,
    methods: Option<Vec<String>>,
    sweep: Option<SweepSection>,
    trials: Option<i64>,
    seed: Option<u64>,
    outputs: Option<PathBuf>,
    sensing: Option<SensingSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    n_tx: Option<usize>,
    n_rx: Option<usize>,
    n_symbols: Option<usize>,
    n_subcarriers: Option<usize>,
    n_cp: Option<usize>,
    n_slots: Option<usize>,
    n_grid: Option<usize>,
    carrier_freq_ghz: Option<f64>,
    subcarrier_spacing_khz: Option<f64>,
    symbol_duration_us: Option<f64>,
    spacing_ratio: Option<f64>,
    tx_power_dbm: Option<f64>,
    noise_comm_dbm: Option<f64>,
    noise_sense_dbm: Option<f64>,
    rician_factor: Option<f64>,
    pathloss_ref_db: Option<f64>,
    pathloss_ref_dist_m: Option<f64>,
    pathloss_exponent: Option<f64>,
    rate_requirement_kbps: Option<f64>,
    power_requirement_uw: Option<f64>,
    power_requirement_dbm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UsersSection {
    ir_angles_deg: Vec<f64>,
    ir_distances_m: Vec<f64>,
    er_angles_deg: Vec<f64>,
    er_distances_m: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanSection {
    centers_deg: Vec<f64>,
    width_deg: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    axis: String,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensingSection {
    targets: Option<usize>,
    min_angle_deg: Option<f64>,
    max_angle_deg: Option<f64>,
    distance_m: Option<f64>,
}

impl ExperimentSpec {
    pub fn from_file(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// `origin` only labels diagnostics.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, SpecError> {
        let file: FileSpec = toml::from_str(text).map_err(|e| SpecError::Parse {
            path: origin.to_owned(),
            message: describe_toml_error(text, &e),
        })?;
        let invalid = |key: &str, message: String| SpecError::Invalid {
            path: origin.to_owned(),
            key: key.to_owned(),
            message,
        };
        let config = file.scenario.resolve().map_err(|(k, m)| match k {
            "" => invalid("scenario", m),
            k => invalid(&format!("scenario.{k}"), m),
        })?;

        let geometry = match file.users {
            Some(u) => UserGeometry {
                ir_angles: u.ir_angles_deg.iter().map(|d| d.to_radians()).collect(),
                ir_distances: u.ir_distances_m,
                er_angles: u.er_angles_deg.iter().map(|d| d.to_radians()).collect(),
                er_distances: u.er_distances_m,
            },
            None => UserGeometry::desk(),
        };
        geometry.validate().map_err(|e| invalid("users", e.to_string()))?;

        let scan = file
            .scan
            .map(|s| (s.centers_deg.iter().map(|d| d.to_radians()).collect::<Vec<_>>(), s.width_deg.to_radians()));
        match &scan {
            Some((centers, _)) if centers.len() != config.n_slots => {
                return Err(invalid(
                    "scan.centers_deg",
                    format!("{} centers for {} slots", centers.len(), config.n_slots),
                ));
            }
            None if config.n_slots != 4 => {
                return Err(invalid("scan", "a [scan] section is required unless n_slots = 4".into()));
            }
            _ => {}
        }

        let methods = match file.methods {
            Some(list) => parse_method_list(&list.join(",")).map_err(|m| invalid("methods", m))?,
            None => MethodKind::ALL.to_vec(),
        };

        let sweep = match file.sweep {
            Some(s) => {
                let axis = s.axis.parse().map_err(|m| invalid("sweep.axis", m))?;
                Some(Sweep { axis, values: s.values })
            }
            None => None,
        };

        let trials = file.trials.unwrap_or(1);
        if trials < 1 {
            return Err(invalid("trials", format!("must be at least 1, got {trials}")));
        }

        let sensing = match file.sensing {
            Some(s) => {
                let d = SensingSpec::default();
                SensingSpec {
                    targets: s.targets.unwrap_or(d.targets),
                    min_angle: s.min_angle_deg.map_or(d.min_angle, f64::to_radians),
                    max_angle: s.max_angle_deg.map_or(d.max_angle, f64::to_radians),
                    distance: s.distance_m.unwrap_or(d.distance),
                }
            }
            None => SensingSpec::default(),
        };
        if !(sensing.min_angle < sensing.max_angle && sensing.distance > 0.0) {
            return Err(invalid("sensing", "need min_angle_deg < max_angle_deg and a positive distance".into()));
        }

        let spec = ExperimentSpec {
            config,
            geometry,
            scan,
            methods,
            sweep,
            trials: trials as usize,
            seed: file.seed.unwrap_or(0),
            outputs: file.outputs.unwrap_or_else(|| PathBuf::from("results")),
            sensing,
        };
        spec.check_sweep().map_err(|m| invalid("sweep.values", m))?;
        // every sweep point must produce a valid scenario
        for value in spec.points() {
            spec.scenario_at(value, spec.seed).map_err(|m| match value {
                Some(v) => invalid("sweep.values", format!("at {v}: {m}")),
                None => invalid("scenario", m),
            })?;
        }
        Ok(spec)
    }

    fn check_sweep(&self) -> Result<(), String> {
        let Some(sweep) = &self.sweep else { return Ok(()) };
        if sweep.values.is_empty() {
            return Err("at least one value is required".into());
        }
        if let Some(w) = sweep.values.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(format!("values must be strictly increasing ({} then {})", w[0], w[1]));
        }
        for &v in &sweep.values {
            if !v.is_finite() {
                return Err(format!("{v} is not finite"));
            }
            if sweep.axis.integral() && (v.fract() != 0.0 || v < 1.0) {
                return Err(format!("{} takes positive integers, got {v}", sweep.axis.name()));
            }
            if matches!(sweep.axis, SweepAxis::RateKbps | SweepAxis::PowerUw) && v < 0.0 {
                return Err(format!("requirements are nonnegative, got {v}"));
            }
        }
        if sweep.axis == SweepAxis::KIr {
            let max = self.geometry.k_ir() + EXTRA_IR_ANGLES_DEG.len();
            if let Some(v) = sweep.values.iter().find(|&&v| v as usize > max) {
                return Err(format!("k_ir {v} exceeds the {max} available placements"));
            }
        }
        Ok(())
    }

    /// Sweep values, or a single `None` point without a sweep.
    pub fn points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }

    pub fn axis_name(&self) -> &'static str {
        self.sweep.as_ref().map_or("none", |s| s.axis.name())
    }

    /// Channel seed of trial `t`.
    pub fn trial_seed(&self, t: usize) -> u64 {
        self.seed.wrapping_add(t as u64)
    }

    /// Scenario at a sweep value with the given channel seed.
    pub fn scenario_at(&self, value: Option<f64>, seed: u64) -> Result<Scenario, String> {
        let mut config = self.config.clone();
        let mut geometry = self.geometry.clone();
        if let (Some(sweep), Some(v)) = (&self.sweep, value) {
            match sweep.axis {
                SweepAxis::RateKbps => config.rate_requirement = kbps_to_spectral(v, &config),
                SweepAxis::PowerUw => config.power_requirement = v * 1e-6,
                SweepAxis::TxPowerDbm => config.tx_power = dbm_to_watts(v),
                SweepAxis::KIr => resize_irs(&mut geometry, v as usize),
                SweepAxis::NTx => {
                    config.n_tx = v as usize;
                    config.n_rx = config.n_rx.max(config.n_tx);
                }
            }
        }
        config.rng_seed = seed;
        let scenario = match &self.scan {
            Some((centers, width)) => Scenario::new(config, geometry, centers.clone(), *width),
            None => Scenario::with_default_scan(config, geometry),
        };
        scenario.map_err(|e| e.to_string())
    }
}

/// Kbps over the occupied bandwidth, in bps/Hz.
pub fn kbps_to_spectral(kbps: f64, config: &ScenarioConfig) -> f64 {
    kbps * 1e3 / config.bandwidth()
}

/// Truncates the IR list or extends it from [`EXTRA_IR_ANGLES_DEG`].
fn resize_irs(geometry: &mut UserGeometry, k: usize) {
    let have = geometry.k_ir();
    if k <= have {
        geometry.ir_angles.truncate(k);
        geometry.ir_distances.truncate(k);
        return;
    }
    for deg in EXTRA_IR_ANGLES_DEG.iter().take(k - have) {
        geometry.ir_angles.push(deg.to_radians());
        geometry.ir_distances.push(EXTRA_IR_DISTANCE_M);
    }
}

impl ScenarioSection {
    fn resolve(self) -> Result<ScenarioConfig, (&'static str, String)> {
        let d = ScenarioConfig::desk();
        let power_requirement = match (self.power_requirement_uw, self.power_requirement_dbm) {
            (Some(_), Some(_)) => {
                return Err((
                    "power_requirement_uw",
                    "give either power_requirement_uw or power_requirement_dbm".into(),
                ));
            }
            (Some(uw), None) => uw * 1e-6,
            (None, Some(dbm)) => dbm_to_watts(dbm),
            (None, None) => d.power_requirement,
        };
        let mut config = ScenarioConfig {
            n_tx: self.n_tx.unwrap_or(d.n_tx),
            n_rx: self.n_rx.unwrap_or(d.n_rx),
            n_symbols: self.n_symbols.unwrap_or(d.n_symbols),
            n_subcarriers: self.n_subcarriers.unwrap_or(d.n_subcarriers),
            n_cp: self.n_cp.unwrap_or(d.n_cp),
            n_slots: self.n_slots.unwrap_or(d.n_slots),
            n_grid: self.n_grid.unwrap_or(d.n_grid),
            carrier_freq: self.carrier_freq_ghz.map_or(d.carrier_freq, |g| g * 1e9),
            subcarrier_spacing: self.subcarrier_spacing_khz.map_or(d.subcarrier_spacing, |k| k * 1e3),
            symbol_duration: self.symbol_duration_us.map_or(d.symbol_duration, |u| u * 1e-6),
            spacing_ratio: self.spacing_ratio.unwrap_or(d.spacing_ratio),
            tx_power: self.tx_power_dbm.map_or(d.tx_power, dbm_to_watts),
            noise_power_comm: self.noise_comm_dbm.map_or(d.noise_power_comm, dbm_to_watts),
            noise_power_sense: self.noise_sense_dbm.map_or(d.noise_power_sense, dbm_to_watts),
            rician_factor: self.rician_factor.unwrap_or(d.rician_factor),
            pathloss_ref_db: self.pathloss_ref_db.unwrap_or(d.pathloss_ref_db),
            pathloss_ref_dist: self.pathloss_ref_dist_m.unwrap_or(d.pathloss_ref_dist),
            pathloss_exponent: self.pathloss_exponent.unwrap_or(d.pathloss_exponent),
            rate_requirement: d.rate_requirement,
            power_requirement,
            rng_seed: 0,
        };
        if let Some(kbps) = self.rate_requirement_kbps {
            config.rate_requirement = kbps_to_spectral(kbps, &config);
        }
        config.validate().map_err(|e| ("", e.to_string()))?;
        Ok(config)
    }
}

/// The toml message plus an explicit `line L, column C` prefix.
fn describe_toml_error(text: &str, err: &toml::de::Error) -> String {
    match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line}, column {column}: {}", err.message())
        }
        None => err.message().to_owned(),
    }
}
