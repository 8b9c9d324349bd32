use iscap::joint_optimizer::{optimize, Method, OptimizerSettings, Termination};
use iscap::metrics::matching_error;
use iscap::rank1::{extract, verify_equivalence};
use iscap::{Error, PerformanceReport, Requirements, Scenario};

const REQ: Requirements = Requirements { rate: 0.5, power: 1e-6 };

#[test]
fn both_methods_converge_to_feasible_designs() {
    let s = Scenario::desk().with_seed(4);
    let ch = s.channels().unwrap();
    for method in [Method::Sca, Method::Fp] {
        let (sol, trace) = optimize(&OptimizerSettings::with_method(method), &s, &ch, REQ).unwrap();
        assert_eq!(trace.termination, Termination::Converged, "{method}");
        assert!(trace.solves() <= 50);
        let worst = trace.max_increase();
        assert!(worst <= 1e-7 * trace.objectives[0], "{method}: objective rose by {worst}");
        let report = PerformanceReport::evaluate(&sol, &s, &ch);
        assert!(report.satisfies(REQ.rate, REQ.power, s.config.tx_power), "{method}: {report:?}");
        assert!((trace.final_objective().unwrap() - matching_error(&sol, &s)).abs() <= 1e-9 * report.matching_error);
    }
}

#[test]
fn extracted_beams_preserve_everything() {
    let s = Scenario::desk().with_seed(2);
    let ch = s.channels().unwrap();
    let (hat, _) = optimize(&OptimizerSettings::with_method(Method::Sca), &s, &ch, REQ).unwrap();
    let bar = extract(&hat, &ch, s.config.tx_power);
    let report = verify_equivalence(&hat, &bar, &s, &ch, REQ);
    assert!(report.passed(), "{report}");
}

#[test]
fn unreachable_harvesting_target_is_infeasible() {
    let s = Scenario::desk();
    let ch = s.channels().unwrap();
    // far beyond the whole budget steered at the receiver
    let req = Requirements { rate: 0.0, power: 1.0 };
    let err = optimize(&OptimizerSettings::with_method(Method::Sca), &s, &ch, req).unwrap_err();
    assert!(err.is_infeasible(), "{err}");
}

#[test]
fn rate_above_capacity_is_screened() {
    let s = Scenario::desk();
    let ch = s.channels().unwrap();
    let req = Requirements { rate: 40.0, power: 0.0 };
    let err = optimize(&OptimizerSettings::with_method(Method::Fp), &s, &ch, req).unwrap_err();
    assert!(matches!(err, Error::RequirementsInfeasible(_)), "{err}");
}

#[test]
fn runs_are_deterministic() {
    let s = Scenario::desk().with_seed(7);
    let ch = s.channels().unwrap();
    let settings = OptimizerSettings::with_method(Method::Fp);
    let (a, ta) = optimize(&settings, &s, &ch, REQ).unwrap();
    let (b, tb) = optimize(&settings, &s, &ch, REQ).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.objectives, tb.objectives);
}
