//! Calibration of the distance coefficient and destination constants against a
//! reported person-km total while keeping daily symmetry.
//!
//! Outer loop: root search on `θ` for `g(θ) = person_km(θ) / d̄ - 1`, which is
//! increasing in `θ`. The bracket starts at `±1 / mean distance` on the side
//! indicated by `g(0)` and doubles until `g` changes sign, then is bisected.
//! Inner loop: for each trial `θ`, destination constants are balanced to the
//! daily totals, warm-started from the previous trial.

use crate::error::{OdError, Result};
use crate::model::{OdTensor, Scenario};
use crate::scalar::{violation, Scalar};

use super::choice::{estimate_ad, DestinationBalancer, UtilityParams};
use super::{DEFAULT_EPSILON, DEFAULT_MAX_ITERATIONS};

/// Bracket expansion stops once `|θ| * mean distance` exceeds this.
const MAX_THETA_SCALE: f64 = 64.0;
/// Beyond this scale an inner stall is read as an unreachable target.
const STALL_THETA_SCALE: f64 = 8.0;
/// Inner balancing runs this much tighter than the outer tolerance.
const INNER_TOLERANCE_FACTOR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget<S = f64> {
    person_km: S,
    epsilon: S,
    max_iterations: usize,
}

impl<S: Scalar> CalibrationTarget<S> {
    pub fn new(person_km: S) -> Result<Self> {
        if !(person_km > S::zero() && person_km.is_finite()) {
            return Err(OdError::domain(format!(
                "target person-km must be positive, got {person_km}"
            )));
        }
        Ok(CalibrationTarget {
            person_km,
            epsilon: S::lit(DEFAULT_EPSILON),
            max_iterations: DEFAULT_MAX_ITERATIONS,
        })
    }

    pub fn with_epsilon(mut self, epsilon: S) -> Result<Self> {
        if !(epsilon > S::zero()) {
            return Err(OdError::domain("epsilon must be positive"));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Result<Self> {
        if max_iterations == 0 {
            return Err(OdError::domain("max_iterations must be positive"));
        }
        self.max_iterations = max_iterations;
        Ok(self)
    }

    pub fn person_km(&self) -> S {
        self.person_km
    }

    pub fn epsilon(&self) -> S {
        self.epsilon
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }
}

/// One evaluation of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationStep<S = f64> {
    pub iteration: usize,
    pub theta: S,
    /// Signed relative person-km error `person_km / d̄ - 1`.
    pub person_km_residual: S,
    pub symmetry_residual: S,
    /// `(θ_low, θ_high)` around the root, once a sign change has been found.
    pub bracket: Option<(S, S)>,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult<S = f64> {
    pub params: UtilityParams<S>,
    pub od: OdTensor<S>,
    pub iterations: usize,
    /// `|person_km(od) - d̄| / d̄` measured on the final tensor.
    pub residual_person_km: S,
    /// Worst relative daily-symmetry violation of the final tensor.
    pub residual_symmetry: S,
    pub converged: bool,
    pub trace: Vec<CalibrationStep<S>>,
}

struct Search<'a, S: Scalar> {
    balancer: DestinationBalancer<'a, S>,
    target: CalibrationTarget<S>,
    mu: Vec<S>,
    trace: Vec<CalibrationStep<S>>,
}

impl<'a, S: Scalar> Search<'a, S> {
    fn evaluate(&mut self, theta: S, bracket: Option<(S, S)>) -> Result<S> {
        let inner_tol = self.target.epsilon * S::lit(INNER_TOLERANCE_FACTOR);
        let report =
            self.balancer
                .balance(theta, &mut self.mu, inner_tol, self.target.max_iterations)?;
        let g = report.person_km / self.target.person_km - S::one();
        self.trace.push(CalibrationStep {
            iteration: self.trace.len(),
            theta,
            person_km_residual: g,
            symmetry_residual: report.residual,
            bracket,
        });
        Ok(g)
    }

    fn exhausted(&self) -> bool {
        self.trace.len() >= self.target.max_iterations
    }
}

/// Calibrates `θ` and the destination constants. Non-convergence is reported
/// through `converged = false` so the trace stays available; infeasible
/// targets and invalid inputs are errors.
pub fn calibrate_ad_with_trace<S: Scalar>(
    scenario: &Scenario<S>,
    target: &CalibrationTarget<S>,
) -> Result<CalibrationResult<S>> {
    let distances = scenario.require_distances()?;
    let balancer = DestinationBalancer::new(scenario)?;
    let total = scenario.total_entries();
    let (d_min, d_max) = distances.off_diagonal_range();
    let goal = target.person_km;
    if goal > total * d_max * (S::one() + target.epsilon)
        || goal < total * d_min * (S::one() - target.epsilon)
    {
        return Err(OdError::Infeasible(format!(
            "person-km target {goal} outside the attainable range [{}, {}]",
            total * d_min,
            total * d_max
        )));
    }
    let d_mean = distances.mean_off_diagonal();
    let eps = target.epsilon;

    let mu = balancer.initial_constants();
    let mut search = Search {
        balancer,
        target: *target,
        mu,
        trace: Vec::new(),
    };

    let mut theta = S::zero();
    let g0 = search.evaluate(theta, None)?;
    let mut converged = g0.abs() <= eps;

    if !converged {
        // g increases with theta: too much person-km means theta must drop.
        let direction = if g0 > S::zero() { -S::one() } else { S::one() };
        let mut near = (S::zero(), g0);
        let mut far_theta = direction / d_mean;
        let far = loop {
            let g = match search.evaluate(far_theta, None) {
                Ok(g) => g,
                // Balancing stalls only when the kernel is nearly degenerate.
                Err(OdError::Convergence { .. })
                    if (far_theta * d_mean).abs() >= S::lit(STALL_THETA_SCALE) =>
                {
                    return Err(attainable_error(&search, goal, direction));
                }
                Err(e) => return Err(e),
            };
            if g.abs() <= eps || g.signum() != g0.signum() {
                break (far_theta, g);
            }
            near = (far_theta, g);
            far_theta = far_theta + far_theta;
            if (far_theta * d_mean).abs() > S::lit(MAX_THETA_SCALE) || search.exhausted() {
                return Err(attainable_error(&search, goal, direction));
            }
        };
        theta = far.0;
        converged = far.1.abs() <= eps;

        let (mut lo, mut hi) = if far.0 < near.0 {
            (far.0, near.0)
        } else {
            (near.0, far.0)
        };
        while !converged && !search.exhausted() {
            let mid = (lo + hi) / S::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            let g = search.evaluate(mid, Some((lo, hi)))?;
            theta = mid;
            if g.abs() <= eps {
                converged = true;
            } else if g > S::zero() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }

    let params = UtilityParams::distance(theta, search.mu.clone())?;
    let od = estimate_ad(scenario, &params)?;
    let residual_person_km = violation(od.person_km(distances)?, goal);
    let residual_symmetry = od
        .daily_exits()
        .into_iter()
        .zip(search.balancer.totals())
        .fold(S::zero(), |m, (e, &t)| m.max(violation(e, t)));
    Ok(CalibrationResult {
        params,
        od,
        iterations: search.trace.len(),
        residual_person_km,
        residual_symmetry,
        converged: converged && residual_person_km <= eps && residual_symmetry <= eps,
        trace: search.trace,
    })
}

fn attainable_error<S: Scalar>(search: &Search<'_, S>, goal: S, direction: S) -> OdError {
    let reached = search
        .trace
        .iter()
        .map(|s| (s.person_km_residual + S::one()) * goal)
        .fold((S::infinity(), S::neg_infinity()), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let side = if direction < S::zero() {
        "below"
    } else {
        "above"
    };
    OdError::Infeasible(format!(
        "person-km target {goal} lies {side} what balanced estimates reach; \
         attainable bracket explored so far is [{}, {}]",
        reached.0, reached.1
    ))
}

/// [`calibrate_ad_with_trace`] with non-convergence turned into an error.
pub fn calibrate_ad<S: Scalar>(
    scenario: &Scenario<S>,
    target: &CalibrationTarget<S>,
) -> Result<CalibrationResult<S>> {
    let result = calibrate_ad_with_trace(scenario, target)?;
    if result.converged {
        Ok(result)
    } else {
        let last = result.trace.last().map(|s| s.theta.to_f64_lossy());
        Err(OdError::Convergence {
            iterations: result.iterations,
            residual: result
                .residual_person_km
                .max(result.residual_symmetry)
                .to_f64_lossy(),
            context: format!("person-km calibration (last theta {last:?})"),
        })
    }
}
