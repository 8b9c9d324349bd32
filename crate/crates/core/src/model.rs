//! Shared construction of the beamforming programs: how symbols are grouped
//! into variable blocks, how each stream covariance is parameterized, and the
//! matching objective, power equality and energy-harvesting constraints.
//!
//! Programs are posed in normalized units: covariances are divided by `P_0`
//! and IR channels are scaled by `sqrt(P_0)/σ_c`, so the communication noise
//! power is one.

use crate::conic::{AffineExpr, ConicProgram, Constraint, MatrixVar, ScalarVar, SolveResult};
use crate::linalg::{hermitian_eigen, hermitian_part, quad_form, trace_re, CMat, CVec};
use crate::metrics::{gain_table, BeamformingSolution};
use crate::scenario::{ChannelSet, Scenario, SlotSchedule};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block {
    pub slot: usize,
    pub symbols: Vec<usize>,
}

/// Partition of the symbols into blocks that share one set of covariances.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub blocks: Vec<Block>,
    pub n_symbols: usize,
}

impl Layout {
    pub fn per_symbol(schedule: &SlotSchedule) -> Self {
        Self::grouped(schedule, |l| l)
    }

    pub fn per_slot(schedule: &SlotSchedule) -> Self {
        Self::grouped(schedule, |_| 0)
    }

    pub fn for_settings(schedule: &SlotSchedule, collapse: bool) -> Self {
        if collapse {
            Self::per_slot(schedule)
        } else {
            Self::per_symbol(schedule)
        }
    }

    /// Blocks keyed by `(slot, key(l))`, ordered by first symbol.
    pub fn grouped(schedule: &SlotSchedule, key: impl Fn(usize) -> usize) -> Self {
        let n_symbols = schedule.slot_symbols.last().map_or(0, |r| r.end);
        let mut blocks: Vec<(usize, usize, Block)> = Vec::new();
        for l in 0..n_symbols {
            let slot = schedule.slot_of(l);
            let k = key(l);
            match blocks.iter_mut().find(|(s, kk, _)| *s == slot && *kk == k) {
                Some((_, _, b)) => b.symbols.push(l),
                None => blocks.push((slot, k, Block { slot, symbols: vec![l] })),
            }
        }
        Self {
            blocks: blocks.into_iter().map(|(_, _, b)| b).collect(),
            n_symbols,
        }
    }

    /// One block holding every symbol; used where the program does not depend
    /// on the slot.
    pub fn single(n_symbols: usize) -> Self {
        Self {
            blocks: vec![Block {
                slot: 0,
                symbols: (0..n_symbols).collect(),
            }],
            n_symbols,
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn weight(&self, b: usize) -> f64 {
        self.blocks[b].symbols.len() as f64
    }
}

/// How one covariance `W_{n,l,k}` enters the program.
#[derive(Debug, Clone)]
pub(crate) enum Stream {
    Absent,
    Full(MatrixVar),
    /// `W = p w w^H` with fixed unit `w`.
    Beam { power: ScalarVar, dir: CVec },
    /// `W = U P U^H` with fixed orthonormal `U`.
    Subspace { var: MatrixVar, basis: CMat },
}

impl Stream {
    /// Adds `coef * h^H W h`.
    pub fn add_quad(&self, e: &mut AffineExpr, h: &CVec, coef: f64) {
        match self {
            Stream::Absent => {}
            Stream::Full(var) => {
                e.add_quad(*var, h, coef);
            }
            Stream::Beam { power, dir } => {
                e.add_scalar(*power, coef * dir.dotc(h).norm_sqr());
            }
            Stream::Subspace { var, basis } => {
                e.add_quad(*var, &(basis.adjoint() * h), coef);
            }
        }
    }

    pub fn add_trace(&self, e: &mut AffineExpr, coef: f64) {
        match self {
            Stream::Absent => {}
            Stream::Full(var) | Stream::Subspace { var, .. } => {
                e.add_trace(*var, coef);
            }
            Stream::Beam { power, .. } => {
                e.add_scalar(*power, coef);
            }
        }
    }

    pub fn decode(&self, res: &SolveResult, n_tx: usize) -> CMat {
        match self {
            Stream::Absent => CMat::zeros(n_tx, n_tx),
            Stream::Full(var) => res.matrix(*var),
            Stream::Beam { power, dir } => (dir * dir.adjoint()).scale(res.scalar(*power)),
            Stream::Subspace { var, basis } => basis * res.matrix(*var) * basis.adjoint(),
        }
    }
}

/// Channels in normalized units.
#[derive(Debug, Clone)]
pub(crate) struct Normalized {
    /// `h sqrt(P_0) / σ_c`, indexed `[n][k]`.
    pub ir: Vec<Vec<CVec>>,
    pub er: Vec<Vec<CVec>>,
    pub p0: f64,
    pub noise: f64,
}

impl Normalized {
    pub fn new(channels: &ChannelSet, p0: f64, noise: f64) -> Self {
        let s = (p0 / noise).sqrt();
        Self {
            ir: channels
                .ir
                .iter()
                .map(|row| row.iter().map(|h| h.scale(s)).collect())
                .collect(),
            er: channels.er.clone(),
            p0,
            noise,
        }
    }

    pub fn k_er(&self) -> usize {
        self.er.first().map_or(0, Vec::len)
    }
}

pub(crate) struct Model {
    pub prog: ConicProgram,
    pub layout: Layout,
    pub n_sub: usize,
    pub n_streams: usize,
    pub n_tx: usize,
    streams: Vec<Stream>,
    pub zeta: Option<ScalarVar>,
}

impl Model {
    pub fn new(
        layout: Layout,
        n_sub: usize,
        n_streams: usize,
        n_tx: usize,
        mut make: impl FnMut(&mut ConicProgram, usize, usize, usize) -> Stream,
    ) -> Self {
        let mut prog = ConicProgram::new();
        let mut streams = Vec::with_capacity(layout.len() * n_sub * n_streams);
        for b in 0..layout.len() {
            for n in 0..n_sub {
                for k in 0..n_streams {
                    streams.push(make(&mut prog, b, n, k));
                }
            }
        }
        Self {
            prog,
            layout,
            n_sub,
            n_streams,
            n_tx,
            streams,
            zeta: None,
        }
    }

    /// Every stream a full PSD matrix unless `keep(k)` is false.
    pub fn full(layout: Layout, scenario: &Scenario, keep: impl Fn(usize, usize, usize) -> bool) -> Self {
        let n_tx = scenario.config.n_tx;
        Self::new(
            layout,
            scenario.config.n_subcarriers,
            scenario.k_ir() + 1,
            n_tx,
            |prog, b, n, k| {
                if keep(b, n, k) {
                    Stream::Full(prog.add_psd_matrix(format!("W[{b},{n},{k}]"), n_tx))
                } else {
                    Stream::Absent
                }
            },
        )
    }

    pub fn stream(&self, b: usize, n: usize, k: usize) -> &Stream {
        &self.streams[(b * self.n_sub + n) * self.n_streams + k]
    }

    /// `Σ_{k in ks} h^H W_{b,n,k} h`.
    pub fn received(&self, b: usize, n: usize, h: &CVec, ks: impl IntoIterator<Item = usize>) -> AffineExpr {
        let mut e = AffineExpr::new();
        for k in ks {
            self.stream(b, n, k).add_quad(&mut e, h, 1.0);
        }
        e
    }

    pub fn gain(&self, b: usize, v: &CVec) -> AffineExpr {
        let vc = v.map(|z| z.conj());
        let mut e = AffineExpr::new();
        for n in 0..self.n_sub {
            for k in 0..self.n_streams {
                self.stream(b, n, k).add_quad(&mut e, &vc, 1.0);
            }
        }
        e
    }

    /// Residuals `sqrt(w_b) (G_b(θ_m) - ζ P(θ_m))` with a fresh `ζ >= 0`.
    pub fn matching_residuals(&mut self, scenario: &Scenario) -> (ScalarVar, Vec<AffineExpr>) {
        let zeta = self.prog.add_scalar("zeta");
        self.prog
            .add_constraint(Constraint::NonNegative(AffineExpr::of(zeta)));
        let mut out = Vec::with_capacity(self.layout.len() * scenario.grid.len());
        for b in 0..self.layout.len() {
            let w = self.layout.weight(b).sqrt();
            let desired = scenario.desired.slot(self.layout.blocks[b].slot);
            for (m, v) in scenario.grid_steering.iter().enumerate() {
                let mut e = self.gain(b, v);
                e.add_scalar(zeta, -desired[m]);
                out.push(e.scaled(w));
            }
        }
        self.zeta = Some(zeta);
        (zeta, out)
    }

    /// Minimizes the matching error `Σ_b w_b Σ_m (G_b(θ_m) - ζ P(θ_m))^2`.
    pub fn add_matching_objective(&mut self, scenario: &Scenario) -> ScalarVar {
        let (zeta, residuals) = self.matching_residuals(scenario);
        for r in residuals {
            self.prog.add_square(r);
        }
        zeta
    }

    /// Per block `Σ_n Σ_k tr(W) = 1`.
    pub fn add_power_equalities(&mut self) {
        for b in 0..self.layout.len() {
            let mut e = AffineExpr::constant(-1.0);
            for n in 0..self.n_sub {
                for k in 0..self.n_streams {
                    self.stream(b, n, k).add_trace(&mut e, 1.0);
                }
            }
            self.prog.add_constraint(Constraint::Equal(e));
        }
    }

    /// Per block and subcarrier `Σ_k tr(W) = 1/N`.
    pub fn add_subcarrier_power_equalities(&mut self) {
        for b in 0..self.layout.len() {
            for n in 0..self.n_sub {
                let mut e = AffineExpr::constant(-1.0);
                for k in 0..self.n_streams {
                    self.stream(b, n, k).add_trace(&mut e, self.n_sub as f64);
                }
                self.prog.add_constraint(Constraint::Equal(e));
            }
        }
    }

    /// Harvested power of ER `i` divided by `P_0 s_i`, `s_i = max_n ||g_{n,i}||^2`.
    pub fn er_expr(&self, norm: &Normalized, i: usize) -> (AffineExpr, f64) {
        let scale = (0..self.n_sub)
            .map(|n| norm.er[n][i].norm_squared())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut e = AffineExpr::new();
        for b in 0..self.layout.len() {
            let w = self.layout.weight(b) / self.layout.n_symbols as f64 / scale;
            for n in 0..self.n_sub {
                let g = &norm.er[n][i];
                for k in 0..self.n_streams {
                    self.stream(b, n, k).add_quad(&mut e, g, w);
                }
            }
        }
        (e, scale)
    }

    pub fn add_er_constraints(&mut self, norm: &Normalized, power: f64) {
        if power <= 0.0 {
            return;
        }
        for i in 0..norm.k_er() {
            let (mut e, scale) = self.er_expr(norm, i);
            e.add_constant(-power / (norm.p0 * scale));
            self.prog.add_constraint(Constraint::NonNegative(e));
        }
    }

    /// Solution in physical units, expanded to every symbol.
    pub fn decode(&self, res: &SolveResult, p0: f64) -> BeamformingSolution {
        let mut sol = BeamformingSolution::zeros(self.n_sub, self.layout.n_symbols, self.n_streams - 1, self.n_tx);
        for (b, block) in self.layout.blocks.iter().enumerate() {
            for n in 0..self.n_sub {
                for k in 0..self.n_streams {
                    let w = self.stream(b, n, k).decode(res, self.n_tx).scale(p0);
                    for &l in &block.symbols {
                        sol.set(n, l, k, w.clone());
                    }
                }
            }
        }
        sol.zeta = self.zeta.map_or(0.0, |z| res.scalar(z) * p0);
        sol
    }
}

/// Averages every covariance over the symbols of each block.
pub(crate) fn average_over_blocks(solution: &BeamformingSolution, layout: &Layout) -> BeamformingSolution {
    let mut out = solution.clone();
    for block in &layout.blocks {
        let inv = 1.0 / block.symbols.len() as f64;
        for n in 0..solution.n_subcarriers() {
            for k in 0..solution.n_streams() {
                let mut acc = CMat::zeros(solution.n_tx(), solution.n_tx());
                for &l in &block.symbols {
                    acc += solution.get(n, l, k);
                }
                let acc = acc.scale(inv);
                for &l in &block.symbols {
                    out.set(n, l, k, acc.clone());
                }
            }
        }
    }
    out
}

/// Received powers of IR `k` at the first symbol of block `b` in normalized
/// units: `(signal, interference + 1)`.
pub(crate) fn local_powers(
    point: &BeamformingSolution,
    channels: &ChannelSet,
    noise: f64,
    layout: &Layout,
    b: usize,
    n: usize,
    k: usize,
) -> (f64, f64) {
    let l = layout.blocks[b].symbols[0];
    let h = channels.ir(n, k);
    let mut signal = 0.0;
    let mut interference = 0.0;
    for s in 0..point.n_streams() {
        let q = quad_form(point.get(n, l, s), h).max(0.0) / noise;
        if s == k + 1 {
            signal += q;
        } else {
            interference += q;
        }
    }
    (signal, interference + 1.0)
}

/// Least-squares `ζ >= 0` for a gain table `[l][m]`.
/// How the transmit power budget is split in a design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Budget {
    /// `P_0` per symbol, shared freely by the subcarriers.
    PerSymbol,
    /// `P_0 / N` on every subcarrier.
    PerSubcarrier,
}

/// Removes solver round-off from a decoded design: clips tiny negative
/// eigenvalues, rescales to the exact power budget and refits `ζ`.
pub(crate) fn polish(solution: &mut BeamformingSolution, scenario: &Scenario, budget: Budget) -> Result<()> {
    let p0 = scenario.config.tx_power;
    let (n_sub, n_sym) = (solution.n_subcarriers(), solution.n_symbols());
    for n in 0..n_sub {
        for l in 0..n_sym {
            for k in 0..solution.n_streams() {
                let (values, vectors) = hermitian_eigen(solution.get(n, l, k));
                if values[0] >= 0.0 {
                    continue;
                }
                // round-off is judged against the budget, not the stream's own size
                if values[0] < -1e-5 * p0 {
                    return Err(Error::NumericalFailure(format!(
                        "covariance ({n}, {l}, {k}) has eigenvalue {:.3e}",
                        values[0]
                    )));
                }
                let mut w = CMat::zeros(values.len(), values.len());
                for (j, &v) in values.iter().enumerate().filter(|(_, &v)| v > 0.0) {
                    let u = vectors.column(j);
                    w += (&u * u.adjoint()).scale(v);
                }
                solution.set(n, l, k, hermitian_part(&w));
            }
        }
    }
    let mut rescale = |l: usize, subs: std::ops::Range<usize>, target: f64| {
        let total: f64 = subs.clone().map(|n| trace_re(&solution.total(n, l))).sum();
        if total > 0.0 {
            let f = target / total;
            for n in subs {
                for k in 0..solution.n_streams() {
                    let w = solution.get(n, l, k).scale(f);
                    solution.set(n, l, k, w);
                }
            }
        }
    };
    for l in 0..n_sym {
        match budget {
            Budget::PerSymbol => rescale(l, 0..n_sub, p0),
            Budget::PerSubcarrier => {
                for n in 0..n_sub {
                    rescale(l, n..n + 1, p0 / n_sub as f64);
                }
            }
        }
    }
    solution.zeta = best_zeta(&gain_table(solution, scenario), scenario);
    Ok(())
}

pub(crate) fn best_zeta(gains: &[Vec<f64>], scenario: &Scenario) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (l, row) in gains.iter().enumerate() {
        let desired = scenario.desired.slot(scenario.schedule.slot_of(l));
        for (g, p) in row.iter().zip(desired) {
            num += g * p;
            den += p * p;
        }
    }
    if den > 0.0 {
        (num / den).max(0.0)
    } else {
        0.0
    }
}
