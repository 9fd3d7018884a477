mod common;

use common::{equal_totals_scenario, fixture, random_scenario, rng};
use odest::estimators::{
    balance_destinations, calibrate_ad, calibrate_ad_with_trace, estimate_ad, estimate_bm,
    estimate_sa_balanced, estimate_sa_closed, CalibrationTarget, UtilityParams,
};
use odest::model::Scenario;
use odest::oracle::{reference_solve, residuals, ConstraintSet};
use odest::scalar::violation;
use odest::OdError;

const TIGHT: f64 = 1e-10;

fn line4() -> Scenario {
    Scenario::from_entry_rows(
        vec![
            vec![4.0, 1.0],
            vec![2.0, 3.0],
            vec![1.0, 2.5],
            vec![3.0, 0.5],
        ],
        Some(vec![
            vec![0.0, 3.0, 7.0, 12.0],
            vec![3.0, 0.0, 4.0, 9.0],
            vec![7.0, 4.0, 0.0, 5.0],
            vec![12.0, 9.0, 5.0, 0.0],
        ]),
    )
    .unwrap()
}

#[test]
fn bm_fixture_values() {
    let od = estimate_bm(&fixture());
    assert_eq!(od.get(0, 1, 0), 5.0);
    assert_eq!(od.get(0, 2, 0), 5.0);
    assert_eq!(od.get(1, 0, 0), 2.0);
    assert_eq!(od.get(1, 2, 0), 2.0);
    assert_eq!(od.get(2, 0, 0), 1.0);
    assert_eq!(od.get(2, 1, 0), 1.0);
}

#[test]
fn bm_matches_entry_row_optimum_on_fixture() {
    let s = fixture();
    let reference = reference_solve(&s, &ConstraintSet::entries_only(), 1e-12).unwrap();
    assert!(estimate_bm(&s).max_abs_diff(&reference) <= 1e-6);
}

#[test]
fn sa_closed_fixture_values_and_row_residual() {
    let s = fixture();
    let od = estimate_sa_closed(&s).unwrap();
    assert_eq!(od.get(0, 1, 0), 2.5);
    assert_eq!(od.get(0, 2, 0), 1.25);
    let report = residuals(&od, &s, &ConstraintSet::entries_only()).unwrap();
    assert!((report.entry_rows - 0.625).abs() <= 1e-15);
}

#[test]
fn sa_balanced_rejects_fixture_as_infeasible() {
    let err = estimate_sa_balanced(&fixture(), 1e-5, 10_000).unwrap_err();
    assert!(matches!(err, OdError::Infeasible(_)));
    assert!(err.is_numerical());
}

#[test]
fn sa_balanced_equals_bm_under_equal_totals() {
    let mut r = rng(11);
    for _ in 0..10 {
        let s = equal_totals_scenario(&mut r, 4, 3);
        let sa = estimate_sa_balanced(&s, TIGHT, 10_000).unwrap();
        assert!(sa.max_abs_diff(&estimate_bm(&s)) <= 1e-8);
    }
}

#[test]
fn sa_balanced_matches_symmetric_optimum() {
    let s = line4();
    let sa = estimate_sa_balanced(&s, TIGHT, 10_000).unwrap();
    let reference = reference_solve(&s, &ConstraintSet::symmetric(), 1e-12).unwrap();
    assert!(sa.max_abs_diff(&reference) <= 1e-6);
}

#[test]
fn ad_with_flat_utilities_is_bm() {
    let s = line4();
    let ad = estimate_ad(&s, &UtilityParams::distance(0.0, vec![1.7; 4]).unwrap()).unwrap();
    assert_eq!(ad.as_raw(), estimate_bm(&s).as_raw());
}

#[test]
fn ad_with_balanced_constants_at_zero_theta_is_sa() {
    let s = line4();
    let (params, _) = balance_destinations(&s, 0.0, 1e-9, 10_000).unwrap();
    let ad = estimate_ad(&s, &params).unwrap();
    let sa = estimate_sa_balanced(&s, 1e-9, 10_000).unwrap();
    assert!(ad.max_abs_diff(&sa) <= 1e-5);
}

#[test]
fn calibration_at_sa_person_km_returns_sa() {
    let s = line4();
    let d = s.distances().unwrap();
    let sa = estimate_sa_balanced(&s, TIGHT, 10_000).unwrap();
    let target = CalibrationTarget::new(sa.person_km(d).unwrap()).unwrap();
    let fit = calibrate_ad(&s, &target).unwrap();
    assert!(fit.params.theta()[0].abs() <= 1e-5);
    assert!(fit.od.max_abs_diff(&sa) <= 1e-4);
}

#[test]
fn calibration_below_sa_person_km() {
    let s = line4();
    let d = s.distances().unwrap();
    let sa = estimate_sa_balanced(&s, TIGHT, 10_000).unwrap();
    let goal = 0.8 * sa.person_km(d).unwrap();
    let fit = calibrate_ad(&s, &CalibrationTarget::new(goal).unwrap()).unwrap();
    assert!(fit.params.theta()[0] < 0.0);
    assert!(violation(fit.od.person_km(d).unwrap(), goal) <= 1e-5);
    let report = residuals(&fit.od, &s, &ConstraintSet::full(goal)).unwrap();
    assert!(report.entry_rows <= 1e-14);
    assert!(report.symmetry.unwrap() <= 1e-5);
    assert!(report.person_km.unwrap() <= 1e-5);
}

// Station A's daily total (10) exceeds what B and C can send it (6).
#[test]
fn calibration_on_fixture_reports_infeasibility() {
    let s = fixture();
    let sa_closed = estimate_sa_closed(&s).unwrap();
    let goal = 0.8 * sa_closed.person_km(s.distances().unwrap()).unwrap();
    let err = calibrate_ad(&s, &CalibrationTarget::new(goal).unwrap()).unwrap_err();
    assert!(matches!(err, OdError::Infeasible(_)), "{err}");
}

#[test]
fn calibration_rejects_unreachable_target() {
    let err = calibrate_ad(&line4(), &CalibrationTarget::new(1e9).unwrap()).unwrap_err();
    assert!(matches!(err, OdError::Infeasible(_)));
}

#[test]
fn calibration_bracket_shrinks() {
    let s = line4();
    let (_, at) = balance_destinations(&s, 0.11, 1e-9, 10_000).unwrap();
    let goal = at.person_km;
    let fit = calibrate_ad_with_trace(&s, &CalibrationTarget::new(goal).unwrap()).unwrap();
    assert!(fit.converged);
    let brackets: Vec<(f64, f64)> = fit.trace.iter().filter_map(|st| st.bracket).collect();
    assert!(!brackets.is_empty());
    for w in brackets.windows(2) {
        assert!(w[1].1 - w[1].0 <= w[0].1 - w[0].0);
        assert!(w[1].0 >= w[0].0 && w[1].1 <= w[0].1);
    }
    let root = fit.params.theta()[0];
    let (lo, hi) = *brackets.last().unwrap();
    assert!(lo <= root && root <= hi);
}

#[test]
fn all_estimators_keep_rows_diagonal_and_sign() {
    let mut r = rng(5);
    for _ in 0..10 {
        let s = random_scenario(&mut r, 4, 3, 0.45);
        let sa = estimate_sa_balanced(&s, 1e-5, 10_000).unwrap();
        let goal = balance_destinations(&s, -0.2, 1e-9, 10_000)
            .unwrap()
            .1
            .person_km;
        let ad = calibrate_ad(&s, &CalibrationTarget::new(goal).unwrap())
            .unwrap()
            .od;
        for (name, od, row_tol) in [
            ("bm", estimate_bm(&s), 1e-14),
            ("sa", sa, 1e-5),
            ("ad", ad, 1e-14),
        ] {
            assert!(od.as_raw().iter().all(|&x| x >= 0.0), "{name}");
            for i in 0..4 {
                for t in 0..3 {
                    assert_eq!(od.get(i, i, t), 0.0, "{name}");
                    let row: f64 = od.row(i, t).iter().sum();
                    assert!(violation(row, s.entries().get(i, t)) <= row_tol, "{name}");
                }
            }
        }
    }
}

#[test]
fn f32_pipeline_runs() {
    let s: Scenario<f32> = Scenario::from_entry_rows(
        vec![
            vec![4.0, 1.0],
            vec![2.0, 3.0],
            vec![1.0, 2.5],
            vec![3.0, 0.5],
        ],
        Some(vec![
            vec![0.0, 3.0, 7.0, 12.0],
            vec![3.0, 0.0, 4.0, 9.0],
            vec![7.0, 4.0, 0.0, 5.0],
            vec![12.0, 9.0, 5.0, 0.0],
        ]),
    )
    .unwrap();
    let d = s.distances().unwrap();
    let sa = estimate_sa_balanced(&s, 1e-4, 10_000).unwrap();
    let goal = 0.9 * sa.person_km(d).unwrap();
    let target = CalibrationTarget::new(goal)
        .unwrap()
        .with_epsilon(1e-4)
        .unwrap();
    let fit = calibrate_ad(&s, &target).unwrap();
    assert!(fit.residual_person_km <= 1e-4);
    assert!(fit.params.theta()[0] < 0.0);
}
