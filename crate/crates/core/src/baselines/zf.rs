//! Zero-forcing information beams with a null-space sensing/energy stream.
//! Only the powers of the fixed beams and the null-space covariance are
//! optimized, in a single convex program.

use crate::baselines::require_optimal;
use crate::conic::{AffineExpr, Constraint};
use crate::joint_optimizer::check_requirements;
use crate::linalg::{hermitian_eigen, CMat, CVec};
use crate::metrics::BeamformingSolution;
use crate::model::{polish, Budget, Layout, Model, Normalized, Stream};
use crate::scenario::{ChannelSet, Requirements, Scenario};
use crate::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq)]
pub struct ZfBasis {
    /// Unit beams `w̃_{n,k}`, indexed `[n][k]`.
    pub directions: Vec<Vec<CVec>>,
    /// Orthonormal basis `U_{n,0}` of the null space of `H_n^H`, `[n]`.
    pub null_space: Vec<CMat>,
}

impl ZfBasis {
    /// `λ_{n,k} = |h_{n,k}^H w̃_{n,k}|`.
    pub fn lambda(&self, channels: &ChannelSet, n: usize, k: usize) -> f64 {
        channels.ir(n, k).dotc(&self.directions[n][k]).norm()
    }

    /// `δ_{m,n,k} = |v^T w̃_{n,k}|`.
    pub fn delta(&self, v: &CVec, n: usize, k: usize) -> f64 {
        (v.transpose() * &self.directions[n][k])[(0, 0)].norm()
    }

    /// `δ_{m,n,0} = (v^T U_{n,0})^H`.
    pub fn delta_vec(&self, v: &CVec, n: usize) -> CVec {
        (v.transpose() * &self.null_space[n]).adjoint()
    }

    /// `ρ_{n,i,k} = |g^H w̃_{n,k}|`.
    pub fn rho(&self, g: &CVec, n: usize, k: usize) -> f64 {
        g.dotc(&self.directions[n][k]).norm()
    }

    /// `ρ_{n,i,0} = (g^H U_{n,0})^H`.
    pub fn rho_vec(&self, g: &CVec, n: usize) -> CVec {
        self.null_space[n].adjoint() * g
    }
}

/// Channel matrix `H_n = [h_{n,1} ... h_{n,K}]`.
fn channel_matrix(channels: &ChannelSet, n: usize) -> CMat {
    let cols: Vec<CVec> = (0..channels.k_ir()).map(|k| channels.ir(n, k).clone()).collect();
    CMat::from_columns(&cols)
}

pub fn zf_build_basis(channels: &ChannelSet) -> Result<ZfBasis> {
    let k_ir = channels.k_ir();
    let mut directions = Vec::new();
    let mut null_space = Vec::new();
    for n in 0..channels.n_subcarriers() {
        let h = channel_matrix(channels, n);
        let n_tx = h.nrows();
        if k_ir >= n_tx {
            return Err(Error::DegenerateChannel(format!(
                "zero forcing needs fewer IRs ({k_ir}) than transmit antennas ({n_tx})"
            )));
        }
        // work with a unit-norm copy; directions are scale invariant
        let scale = h.norm();
        if !(scale > 0.0) {
            return Err(Error::DegenerateChannel(format!("all-zero channel on subcarrier {n}")));
        }
        let hs = h.unscale(scale);
        let gram = hs.adjoint() * &hs;
        let (eig, _) = hermitian_eigen(&gram);
        if eig[0] <= 1e-12 * eig[k_ir - 1] {
            return Err(Error::DegenerateChannel(format!("rank-deficient IR channels on subcarrier {n}")));
        }
        let inv = gram
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateChannel(format!("singular Gram matrix on subcarrier {n}")))?;
        let pinv = &hs * &inv;
        directions.push(
            (0..k_ir)
                .map(|k| {
                    let col = pinv.column(k).into_owned();
                    col.unscale(col.norm())
                })
                .collect(),
        );

        let (_, vecs) = hermitian_eigen(&(&hs * hs.adjoint()));
        let u = vecs.columns(0, n_tx - k_ir).into_owned();
        // project out the residual channel component and re-orthonormalize
        let projected = &u - &hs * (&inv * (hs.adjoint() * &u));
        null_space.push(projected.qr().q());
    }
    Ok(ZfBasis {
        directions,
        null_space,
    })
}

/// Solves the power-allocation program and reassembles the covariances.
pub fn zf_solve(scenario: &Scenario, channels: &ChannelSet, requirements: Requirements) -> Result<BeamformingSolution> {
    check_requirements(requirements)?;
    let basis = zf_build_basis(channels)?;
    let cfg = &scenario.config;
    let norm = Normalized::new(channels, cfg.tx_power, cfg.noise_power_comm);
    let null_dim = cfg.n_tx - scenario.k_ir();
    let mut model = Model::new(
        Layout::per_slot(&scenario.schedule),
        cfg.n_subcarriers,
        scenario.k_ir() + 1,
        cfg.n_tx,
        |prog, b, n, k| {
            if k == 0 {
                Stream::Subspace {
                    var: prog.add_psd_matrix(format!("P[{b},{n}]"), null_dim),
                    basis: basis.null_space[n].clone(),
                }
            } else {
                let power = prog.add_scalar(format!("p[{b},{n},{k}]"));
                prog.add_constraint(Constraint::NonNegative(AffineExpr::of(power)));
                Stream::Beam {
                    power,
                    dir: basis.directions[n][k - 1].clone(),
                }
            }
        },
    );
    model.add_matching_objective(scenario);
    model.add_power_equalities();
    model.add_er_constraints(&norm, requirements.power);
    if requirements.rate > 0.0 {
        let total = (cfg.n_symbols * cfg.n_subcarriers) as f64;
        for k in 0..scenario.k_ir() {
            let mut terms = Vec::new();
            for b in 0..model.layout.len() {
                for n in 0..cfg.n_subcarriers {
                    let mut snr = model.received(b, n, &norm.ir[n][k], [k + 1]);
                    snr.add_constant(1.0);
                    terms.push((model.layout.weight(b), snr));
                }
            }
            model.prog.add_constraint(Constraint::LogSum {
                terms,
                rhs: AffineExpr::constant(requirements.rate * LN2 * total),
            });
        }
    }
    let res = model.prog.solve(&Default::default());
    require_optimal(&res, "zero-forcing power allocation")?;
    let mut sol = model.decode(&res, cfg.tx_power);
    polish(&mut sol, scenario, Budget::PerSymbol)?;
    Ok(sol)
}
