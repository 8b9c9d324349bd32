//! Rank-one extraction of relaxed information covariances.
//!
//! For each IR stream, `w = (h^H Ŵ h)^{-1/2} Ŵ h` carries the same received
//! signal power as `Ŵ`, and the remainder `Ŵ - w w^H` is positive
//! semidefinite, so it is moved into the dedicated sensing stream. Every
//! per-(subcarrier, symbol) covariance sum, and with it every metric, is
//! unchanged.

use std::fmt;
use std::io::{self, Write};

use crate::linalg::{hermitian_eigen, min_eigenvalue, quad_form, trace_re, CMat};
use crate::metrics::{
    average_rate, harvested_power, matching_error, power_residual, BeamformingSolution,
};
use crate::scenario::{ChannelSet, Requirements, Scenario};

/// Returns the rank-one solution. Streams whose received power is below
/// `1e-12 (P_0/N) ||h||^2` are zeroed and folded into the sensing stream.
pub fn extract(hat: &BeamformingSolution, channels: &ChannelSet, p0: f64) -> BeamformingSolution {
    let threshold = 1e-12 * p0 / hat.n_subcarriers() as f64;
    let mut bar = hat.clone();
    for n in 0..hat.n_subcarriers() {
        for l in 0..hat.n_symbols() {
            let mut w0 = hat.get(n, l, 0).clone();
            for k in 1..hat.n_streams() {
                let h = channels.ir(n, k - 1);
                let w_hat = hat.get(n, l, k);
                let q = quad_form(w_hat, h);
                let w_bar = if q > threshold * h.norm_squared() {
                    let w = (w_hat * h).unscale(q.sqrt());
                    &w * w.adjoint()
                } else {
                    CMat::zeros(hat.n_tx(), hat.n_tx())
                };
                w0 += w_hat - &w_bar;
                bar.set(n, l, k, w_bar);
            }
            bar.set(n, l, 0, w0);
        }
    }
    bar
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst residual relative to its tolerance scale.
    pub residual: f64,
    pub tolerance: f64,
    /// `(n, l, k)` of the worst residual when it is index-specific.
    pub worst_index: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub checks: Vec<CheckResult>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "check,passed,residual,tolerance,n,l,k")?;
        for c in &self.checks {
            let (n, l, k) = c
                .worst_index
                .map_or((String::new(), String::new(), String::new()), |(n, l, k)| {
                    (n.to_string(), l.to_string(), k.to_string())
                });
            writeln!(w, "{},{},{:e},{:e},{n},{l},{k}", c.name, c.passed, c.residual, c.tolerance)?;
        }
        Ok(())
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(f, "equivalence {verdict}")?;
        for c in &self.checks {
            write!(f, "  {:<24} {} residual {:.3e} (tol {:.0e})", c.name, if c.passed { "ok" } else { "FAILED" }, c.residual, c.tolerance)?;
            if let Some((n, l, k)) = c.worst_index {
                write!(f, " at n={n} l={l} k={k}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

struct Worst {
    residual: f64,
    index: Option<(usize, usize, usize)>,
}

impl Worst {
    fn new() -> Self {
        Self {
            residual: 0.0,
            index: None,
        }
    }

    fn update(&mut self, r: f64, index: (usize, usize, usize)) {
        if r > self.residual || r.is_nan() {
            self.residual = r;
            self.index = Some(index);
        }
    }

    fn check(self, name: &'static str, tolerance: f64) -> CheckResult {
        CheckResult {
            name,
            passed: self.residual <= tolerance,
            residual: self.residual,
            tolerance,
            worst_index: self.index,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Checks that `bar` preserves every quantity of `hat` and has rank-one
/// information covariances.
pub fn verify_equivalence(
    hat: &BeamformingSolution,
    bar: &BeamformingSolution,
    scenario: &Scenario,
    channels: &ChannelSet,
    requirements: Requirements,
) -> EquivalenceReport {
    let noise = scenario.config.noise_power_comm;
    let p0 = scenario.config.tx_power;
    let mut sums = Worst::new();
    let mut received = Worst::new();
    let mut w0_psd = Worst::new();
    let mut dominance = Worst::new();
    let mut rank = Worst::new();

    for n in 0..hat.n_subcarriers() {
        for l in 0..hat.n_symbols() {
            let total_hat = hat.total(n, l);
            let total_bar = bar.total(n, l);
            let scale = trace_re(&total_hat).abs().max(f64::MIN_POSITIVE);
            sums.update((&total_bar - &total_hat).norm() / scale, (n, l, 0));

            let lam = min_eigenvalue(bar.get(n, l, 0));
            w0_psd.update(-lam / scale, (n, l, 0));

            for k in 0..hat.k_ir() {
                let h = channels.ir(n, k);
                let floor = quad_form(&total_hat, h).abs() + noise;
                let s_hat = quad_form(hat.get(n, l, k + 1), h);
                let s_bar = quad_form(bar.get(n, l, k + 1), h);
                received.update((s_hat - s_bar).abs() / floor, (n, l, k + 1));
                let i_hat = quad_form(&total_hat, h) - s_hat;
                let i_bar = quad_form(&total_bar, h) - s_bar;
                received.update((i_hat - i_bar).abs() / floor, (n, l, k + 1));

                let diff = hat.get(n, l, k + 1) - bar.get(n, l, k + 1);
                dominance.update(-min_eigenvalue(&diff) / scale, (n, l, k + 1));

                let (eig, _) = hermitian_eigen(bar.get(n, l, k + 1));
                let top = eig.last().copied().unwrap_or(0.0);
                if top > 0.0 && eig.len() > 1 {
                    rank.update(eig[eig.len() - 2].abs() / top, (n, l, k + 1));
                }
            }
        }
    }

    let mut checks = vec![
        sums.check("covariance_sum", 1e-9),
        received.check("received_powers", 1e-9),
        w0_psd.check("sensing_stream_psd", 1e-10),
        dominance.check("dominance", 1e-10),
        rank.check("rank_one", 1e-6),
    ];

    let mut metrics = Worst::new();
    metrics.update(rel(matching_error(hat, scenario), matching_error(bar, scenario)), (0, 0, 0));
    for k in 0..channels.k_ir() {
        metrics.update(
            rel(average_rate(hat, channels, k, noise), average_rate(bar, channels, k, noise)),
            (0, 0, k + 1),
        );
    }
    for i in 0..channels.k_er() {
        metrics.update(rel(harvested_power(hat, channels, i), harvested_power(bar, channels, i)), (0, 0, 0));
    }
    for (a, b) in power_residual(hat, p0).iter().zip(power_residual(bar, p0)) {
        metrics.update((a - b).abs() / p0, (0, 0, 0));
    }
    checks.push(metrics.check("metrics", 1e-8));

    let meets = |s: &BeamformingSolution| {
        (0..channels.k_ir()).all(|k| average_rate(s, channels, k, noise) >= requirements.rate - 1e-6)
            && (0..channels.k_er()).all(|i| harvested_power(s, channels, i) >= requirements.power * (1.0 - 1e-6))
    };
    let preserved = !meets(hat) || meets(bar);
    checks.push(CheckResult {
        name: "requirements",
        passed: preserved,
        residual: if preserved { 0.0 } else { 1.0 },
        tolerance: 0.0,
        worst_index: None,
    });

    EquivalenceReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, outer, CVec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn channels_for(h: CVec) -> ChannelSet {
        ChannelSet {
            ir: vec![vec![h.clone()]],
            er: vec![vec![h]],
        }
    }

    #[test]
    fn rank_one_input_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_vec(&mut rng, 3);
        let h = random_vec(&mut rng, 3);
        let mut hat = BeamformingSolution::zeros(1, 1, 1, 3);
        hat.set(0, 0, 1, outer(&w));
        let bar = extract(&hat, &channels_for(h), 1.0);
        assert!((bar.get(0, 0, 1) - hat.get(0, 0, 1)).norm() < 1e-12);
        assert!(bar.get(0, 0, 0).norm() < 1e-12);
    }

    #[test]
    fn zero_stream_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_vec(&mut rng, 3);
        let mut hat = BeamformingSolution::zeros(1, 1, 1, 3);
        let w0 = outer(&random_vec(&mut rng, 3));
        hat.set(0, 0, 0, w0.clone());
        let bar = extract(&hat, &channels_for(h), 1.0);
        assert_eq!(bar.get(0, 0, 1), &CMat::zeros(3, 3));
        assert!((bar.get(0, 0, 0) - &w0).norm() < 1e-15);
    }

    #[test]
    fn full_rank_stream_keeps_signal_and_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = CMat::from_fn(3, 3, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let w_hat = &a * a.adjoint();
            let h = random_vec(&mut rng, 3);
            let mut hat = BeamformingSolution::zeros(1, 1, 1, 3);
            hat.set(0, 0, 1, w_hat.clone());
            let bar = extract(&hat, &channels_for(h.clone()), 1.0);
            let w_bar = bar.get(0, 0, 1);
            assert!((quad_form(w_bar, &h) - quad_form(&w_hat, &h)).abs() < 1e-10);
            assert!(min_eigenvalue(&(&w_hat - w_bar)) >= -1e-10);
        }
    }

    #[test]
    fn corrupted_sensing_stream_fails_psd_check() {
        let s = Scenario::desk();
        let ch = s.channels().unwrap();
        let mut hat = crate::joint_optimizer::uniform_isotropic(&s);
        let h = ch.ir(0, 0).clone();
        hat.set(0, 0, 1, outer(&h).scale(1e-3 / h.norm_squared()));
        let bar = extract(&hat, &ch, 1.0);
        let ok = verify_equivalence(&hat, &bar, &s, &ch, Requirements::NONE);
        assert!(ok.passed(), "{ok}");
        let same = verify_equivalence(&hat, &hat, &s, &ch, Requirements::NONE);
        assert!(same.checks.iter().find(|c| c.name == "covariance_sum").unwrap().passed);

        let mut bad = bar.clone();
        let w0 = bad.get(0, 0, 0) - CMat::identity(4, 4).scale(1.0);
        bad.set(0, 0, 0, w0);
        let report = verify_equivalence(&hat, &bad, &s, &ch, Requirements::NONE);
        assert!(!report.passed());
        assert!(report.failures().any(|c| c.name == "sensing_stream_psd"));
    }
}
