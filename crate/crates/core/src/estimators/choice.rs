//! Destination choice: utilities `u_ij = K_j + Σ_k θ_k k_ij^(k)`, logit
//! probabilities over the other stations, and the additional-data estimate
//! `n_ij^t = O_i^t p(j|i)` with distance as the single attribute.

use crate::error::{OdError, Result};
use crate::model::{DistanceMatrix, OdTensor, Scenario, SquareMatrix};
use crate::scalar::{violation, Scalar};

use super::{check_symmetry_feasible, fill_rows};

/// Attribute coefficients `θ` and destination constants `K_j`.
///
/// A constant of `-inf` closes a destination (it never receives trips);
/// balancing assigns it to stations whose daily total is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityParams<S = f64> {
    theta: Vec<S>,
    dest_constants: Vec<S>,
}

impl<S: Scalar> UtilityParams<S> {
    pub fn new(theta: Vec<S>, dest_constants: Vec<S>) -> Result<Self> {
        if let Some(t) = theta.iter().find(|t| !t.is_finite()) {
            return Err(OdError::domain(format!("coefficient {t} is not finite")));
        }
        if let Some(k) = dest_constants
            .iter()
            .find(|k| k.is_nan() || **k == S::infinity())
        {
            return Err(OdError::domain(format!(
                "destination constant {k} is invalid"
            )));
        }
        Ok(UtilityParams {
            theta,
            dest_constants,
        })
    }

    /// Distance coefficient `theta` with the given destination constants.
    pub fn distance(theta: S, dest_constants: Vec<S>) -> Result<Self> {
        Self::new(vec![theta], dest_constants)
    }

    /// `θ = 0`, `K = 0`: every destination equally likely.
    pub fn uniform(stations: usize) -> Self {
        UtilityParams {
            theta: vec![S::zero()],
            dest_constants: vec![S::zero(); stations],
        }
    }

    pub fn theta(&self) -> &[S] {
        &self.theta
    }

    pub fn dest_constants(&self) -> &[S] {
        &self.dest_constants
    }

    /// Constants shifted by `shift`; choice probabilities are unchanged.
    pub fn shifted(&self, shift: S) -> Self {
        UtilityParams {
            theta: self.theta.clone(),
            dest_constants: self.dest_constants.iter().map(|&k| k + shift).collect(),
        }
    }
}

/// Fills `weights[s] = exp(u_s - max u)` for `s != origin` and returns the
/// normaliser `Σ weights`. `weights[origin]` is zero.
fn choice_weights<S: Scalar>(origin: usize, utility: impl Fn(usize) -> S, weights: &mut [S]) -> S {
    let mut peak = S::neg_infinity();
    for s in 0..weights.len() {
        if s != origin {
            peak = peak.max(utility(s));
        }
    }
    if peak == S::neg_infinity() {
        weights.iter_mut().for_each(|w| *w = S::zero());
        return S::zero();
    }
    let mut z = S::zero();
    for (s, w) in weights.iter_mut().enumerate() {
        *w = if s == origin {
            S::zero()
        } else {
            (utility(s) - peak).exp()
        };
        z = z + *w;
    }
    z
}

/// `p(j | origin)` for every destination, with `p(origin | origin) = 0`.
pub fn destination_probabilities<S: Scalar>(
    params: &UtilityParams<S>,
    attributes: &[&SquareMatrix<S>],
    origin: usize,
) -> Result<Vec<S>> {
    let n = params.dest_constants.len();
    if attributes.len() != params.theta.len() {
        return Err(OdError::Dimension(format!(
            "{} coefficients for {} attributes",
            params.theta.len(),
            attributes.len()
        )));
    }
    if origin >= n {
        return Err(OdError::Dimension(format!(
            "origin {origin} outside 0..{n}"
        )));
    }
    for a in attributes {
        if a.dim() != n {
            return Err(OdError::Dimension(format!(
                "attribute matrix is {0}x{0}, expected {n}x{n}",
                a.dim()
            )));
        }
        if !a.is_finite() {
            return Err(OdError::domain("attribute values must be finite"));
        }
    }
    let utility = |s: usize| {
        params.dest_constants[s]
            + params
                .theta
                .iter()
                .zip(attributes)
                .fold(S::zero(), |u, (th, a)| u + *th * a.get(origin, s))
    };
    let mut p = vec![S::zero(); n];
    let z = choice_weights(origin, utility, &mut p);
    if !(z > S::zero()) {
        return Err(OdError::domain(format!(
            "origin {origin} has no open destination"
        )));
    }
    p.iter_mut().for_each(|w| *w = *w / z);
    Ok(p)
}

/// Additional-data estimate `n_ij^t = O_i^t p(j|i)` with distance as the only
/// attribute. Row sums equal the entries by construction.
pub fn estimate_ad<S: Scalar>(
    scenario: &Scenario<S>,
    params: &UtilityParams<S>,
) -> Result<OdTensor<S>> {
    let distances = scenario.require_distances()?;
    let n = scenario.station_count();
    if params.theta.len() != 1 {
        return Err(OdError::Dimension(format!(
            "distance model takes one coefficient, got {}",
            params.theta.len()
        )));
    }
    if params.dest_constants.len() != n {
        return Err(OdError::Dimension(format!(
            "{} destination constants for {n} stations",
            params.dest_constants.len()
        )));
    }
    let theta = params.theta[0];
    let mut weights = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let mut w = vec![S::zero(); n];
        let z = choice_weights(
            i,
            |s| params.dest_constants[s] + theta * distances.get(i, s),
            &mut w,
        );
        let needed = scenario.entries().row(i).iter().any(|&o| o > S::zero());
        if needed && !(z > S::zero()) {
            return Err(OdError::domain(format!(
                "station {} has entries but no open destination",
                scenario.stations().id(i)
            )));
        }
        weights.push(w);
        norms.push(z);
    }
    let entries = scenario.entries();
    Ok(fill_rows(n, scenario.interval_count(), |i, t, row| {
        let o = entries.get(i, t);
        if o > S::zero() {
            for (x, &w) in row.iter_mut().zip(&weights[i]) {
                *x = o * w / norms[i];
            }
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceReport<S = f64> {
    pub iterations: usize,
    /// Worst relative violation of the daily symmetry constraints.
    pub residual: S,
    /// `Σ_ijt d_ij n_ij^t` of the balanced estimate.
    pub person_km: S,
}

/// Static reduction of the additional-data model: inflows depend on the
/// entries only through the daily totals, so balancing runs on `N x N`.
pub(crate) struct DestinationBalancer<'a, S> {
    totals: Vec<S>,
    distances: &'a DistanceMatrix<S>,
}

impl<'a, S: Scalar> DestinationBalancer<'a, S> {
    pub(crate) fn new(scenario: &'a Scenario<S>) -> Result<Self> {
        let distances = scenario.require_distances()?;
        let totals = scenario.daily_totals();
        check_symmetry_feasible(&totals)?;
        Ok(DestinationBalancer { totals, distances })
    }

    pub(crate) fn totals(&self) -> &[S] {
        &self.totals
    }

    /// Constants at the start of balancing: 0 for open stations, `-inf` for
    /// stations without entries.
    pub(crate) fn initial_constants(&self) -> Vec<S> {
        self.totals
            .iter()
            .map(|&t| {
                if t > S::zero() {
                    S::zero()
                } else {
                    S::neg_infinity()
                }
            })
            .collect()
    }

    /// Daily inflow per destination and the person-km at `(theta, mu)`.
    fn inflows(&self, theta: S, mu: &[S]) -> (Vec<S>, S) {
        let n = self.totals.len();
        let mut inflow = vec![S::zero(); n];
        let mut person_km = S::zero();
        let mut w = vec![S::zero(); n];
        for (i, &ti) in self.totals.iter().enumerate() {
            if !(ti > S::zero()) {
                continue;
            }
            let d = self.distances.row(i);
            let z = choice_weights(i, |s| mu[s] + theta * d[s], &mut w);
            for j in 0..n {
                let flow = ti * w[j] / z;
                inflow[j] = inflow[j] + flow;
                person_km = person_km + flow * d[j];
            }
        }
        (inflow, person_km)
    }

    /// Adjusts `mu` in place until daily inflows match daily totals within
    /// `tolerance`. `mu` is re-centred to zero mean over open stations.
    pub(crate) fn balance(
        &self,
        theta: S,
        mu: &mut [S],
        tolerance: S,
        max_iterations: usize,
    ) -> Result<BalanceReport<S>> {
        let open: Vec<usize> = (0..self.totals.len())
            .filter(|&j| self.totals[j] > S::zero())
            .collect();
        let count = S::from_usize_lossy(open.len());
        let mut residual = S::infinity();
        for iteration in 0..=max_iterations {
            let (inflow, person_km) = self.inflows(theta, mu);
            residual = inflow
                .iter()
                .zip(&self.totals)
                .fold(S::zero(), |m, (&f, &t)| m.max(violation(f, t)));
            if residual <= tolerance {
                return Ok(BalanceReport {
                    iterations: iteration,
                    residual,
                    person_km,
                });
            }
            if iteration == max_iterations {
                break;
            }
            for &j in &open {
                if !(inflow[j] > S::zero()) {
                    return Err(OdError::Convergence {
                        iterations: iteration,
                        residual: residual.to_f64_lossy(),
                        context: format!(
                            "destination balancing at theta={theta}: inflow to station {j} underflowed"
                        ),
                    });
                }
                mu[j] = mu[j] + self.totals[j].ln() - inflow[j].ln();
            }
            let centre = open.iter().map(|&j| mu[j]).sum::<S>() / count;
            for &j in &open {
                mu[j] = mu[j] - centre;
            }
        }
        Err(OdError::Convergence {
            iterations: max_iterations,
            residual: residual.to_f64_lossy(),
            context: format!("destination balancing at theta={theta}"),
        })
    }
}

/// Destination constants that make the additional-data estimate at a fixed
/// `theta` satisfy daily symmetry.
pub fn balance_destinations<S: Scalar>(
    scenario: &Scenario<S>,
    theta: S,
    epsilon: S,
    max_iterations: usize,
) -> Result<(UtilityParams<S>, BalanceReport<S>)> {
    if !theta.is_finite() {
        return Err(OdError::domain("theta must be finite"));
    }
    let balancer = DestinationBalancer::new(scenario)?;
    let mut mu = balancer.initial_constants();
    let report = balancer.balance(theta, &mut mu, epsilon, max_iterations)?;
    Ok((UtilityParams::distance(theta, mu)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{estimate_bm, estimate_sa_balanced};

    fn line3() -> SquareMatrix<f64> {
        SquareMatrix::from_rows(vec![
            vec![0.0, 5.0, 8.0],
            vec![5.0, 0.0, 4.0],
            vec![8.0, 4.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn uniform_probabilities() {
        let p = destination_probabilities(&UtilityParams::uniform(4), &[&line3_4()], 2).unwrap();
        assert_eq!(p, vec![1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0]);
    }

    fn line3_4() -> SquareMatrix<f64> {
        SquareMatrix::from_fn(4, |i, j| (i as f64 - j as f64).abs())
    }

    #[test]
    fn hand_computed_logit() {
        let params = UtilityParams::distance(-0.2, vec![0.0; 3]).unwrap();
        let p = destination_probabilities(&params, &[&line3()], 0).unwrap();
        // e^-1 / (e^-1 + e^-1.6)
        let expect_b = (-1.0f64).exp() / ((-1.0f64).exp() + (-1.6f64).exp());
        assert!((p[1] - expect_b).abs() < 1e-15);
        assert!((p[1] - 0.6457).abs() < 5e-5);
        assert!((p[2] - 0.3543).abs() < 5e-5);
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn constant_shift_invariance() {
        let params = UtilityParams::distance(-0.3, vec![0.4, -1.0, 2.0]).unwrap();
        let base = destination_probabilities(&params, &[&line3()], 1).unwrap();
        let shifted = destination_probabilities(&params.shifted(123.0), &[&line3()], 1).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_attribute_evaluation() {
        let time = SquareMatrix::from_fn(3, |i, j| if i == j { 0.0 } else { 10.0 + j as f64 });
        let params = UtilityParams::new(vec![-0.2, -0.05], vec![0.0, 0.5, 0.0]).unwrap();
        let p = destination_probabilities(&params, &[&line3(), &time], 0).unwrap();
        let ub: f64 = 0.5 - 1.0 - 0.55;
        let uc = -1.6 - 0.6;
        let expect = ub.exp() / (ub.exp() + f64::exp(uc));
        assert!((p[1] - expect).abs() < 1e-14);
        assert!(destination_probabilities(&params, &[&line3()], 0).is_err());
    }

    #[test]
    fn extreme_utilities_stay_finite() {
        let d = SquareMatrix::from_fn(3, |i, j| {
            if i == j {
                0.0
            } else {
                1000.0 * (1 + i + j) as f64
            }
        });
        for theta in [-0.5, 0.5] {
            let params = UtilityParams::distance(theta, vec![0.0; 3]).unwrap();
            let p = destination_probabilities(&params, &[&d], 0).unwrap();
            assert!(p.iter().all(|v| v.is_finite()));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(UtilityParams::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(UtilityParams::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert!(UtilityParams::new(vec![0.0], vec![f64::NEG_INFINITY, 0.0]).is_ok());
    }

    fn scenario() -> Scenario<f64> {
        Scenario::from_entry_rows(
            vec![
                vec![4.0, 2.0],
                vec![3.0, 3.0],
                vec![1.0, 4.0],
                vec![2.0, 1.0],
            ],
            Some(vec![
                vec![0.0, 5.0, 9.0, 12.0],
                vec![5.0, 0.0, 4.0, 7.0],
                vec![9.0, 4.0, 0.0, 3.0],
                vec![12.0, 7.0, 3.0, 0.0],
            ]),
        )
        .unwrap()
    }

    #[test]
    fn ad_uniform_params_is_bm_exactly() {
        let s = scenario();
        let ad = estimate_ad(&s, &UtilityParams::distance(0.0, vec![1.5; 4]).unwrap()).unwrap();
        assert_eq!(ad, estimate_bm(&s));
    }

    #[test]
    fn ad_rows_match_entries() {
        let s = scenario();
        let params = UtilityParams::distance(-0.4, vec![0.3, -0.2, 0.9, 0.0]).unwrap();
        let od = estimate_ad(&s, &params).unwrap();
        let rows = od.row_sums();
        for i in 0..4 {
            for t in 0..2 {
                assert!(violation(rows.get(i, t), s.entries().get(i, t)) < 1e-14);
            }
        }
    }

    #[test]
    fn ad_needs_distances() {
        let s = Scenario::from_entry_rows(vec![vec![1.0], vec![1.0]], None).unwrap();
        assert!(matches!(
            estimate_ad(&s, &UtilityParams::uniform(2)),
            Err(OdError::MissingInput(_))
        ));
    }

    #[test]
    fn balanced_at_zero_theta_is_sa() {
        let s = scenario();
        let (params, report) = balance_destinations(&s, 0.0, 1e-5, 10_000).unwrap();
        assert!(report.residual <= 1e-5);
        let ad = estimate_ad(&s, &params).unwrap();
        let sa = estimate_sa_balanced(&s, 1e-5, 10_000).unwrap();
        assert!(ad.max_abs_diff(&sa) <= 1e-5);
        let mean: f64 = params.dest_constants().iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn balancing_reports_person_km_of_estimate() {
        let s = scenario();
        let (params, report) = balance_destinations(&s, -0.2, 1e-9, 10_000).unwrap();
        let od = estimate_ad(&s, &params).unwrap();
        let pk = od.person_km(s.distances().unwrap()).unwrap();
        assert!((pk - report.person_km).abs() < 1e-9 * pk);
    }
}
