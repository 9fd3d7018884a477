//! Entropy objective, constraint residuals and an independent reference
//! solver for small instances.
//!
//! The objective maximised throughout is `H(n) = -Σ (n ln n - n)` over the
//! off-diagonal cells, with `0 ln 0 = 0`. Its Lagrangian dual is
//!
//! ```text
//! D(λ, μ, θ) = Σ_ijt exp(λ_it + μ_j + θ d_ij) - Σ_it λ_it O_i^t - Σ_j μ_j T_j - θ d̄
//! ```
//!
//! (terms present only for the enabled constraint families), a smooth convex
//! function whose minimiser gives the primal optimum `n = exp(λ + μ + θ d)`.
//! [`ReferenceSolver`] minimises it with a few exact coordinate sweeps
//! followed by damped Newton steps on all multipliers at once. It shares no
//! code with the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{OdError, Result};
use crate::model::{DistanceMatrix, OdTensor, Scenario};
use crate::scalar::{log_sum_exp, violation, xlogx_minus_x, Scalar};

/// Coordinate sweeps before switching to Newton steps.
const COORDINATE_SWEEPS: usize = 20;

/// `H(n) = -Σ (n ln n - n)`; larger is more entropic.
pub fn entropy<S: Scalar>(od: &OdTensor<S>) -> S {
    -raw_entropy_sum(od)
}

/// `Σ (n ln n - n)` as literally summed, the negative of [`entropy`].
pub fn raw_entropy_sum<S: Scalar>(od: &OdTensor<S>) -> S {
    od.as_raw().iter().map(|&n| xlogx_minus_x(n)).sum()
}

/// Enabled constraint families. Entry rows are always enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSet<S = f64> {
    pub symmetry: bool,
    /// Target person-km `d̄`, when that constraint is enabled.
    pub person_km: Option<S>,
}

impl<S: Scalar> ConstraintSet<S> {
    pub fn entries_only() -> Self {
        ConstraintSet {
            symmetry: false,
            person_km: None,
        }
    }

    pub fn symmetric() -> Self {
        ConstraintSet {
            symmetry: true,
            person_km: None,
        }
    }

    /// Entry rows, symmetry and person-km.
    pub fn full(person_km: S) -> Self {
        ConstraintSet {
            symmetry: true,
            person_km: Some(person_km),
        }
    }

    pub fn entry_rows(&self) -> bool {
        true
    }
}

/// Worst relative violation per enabled family (absolute where the target is
/// zero), plus the entropy of the tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport<S = f64> {
    pub entry_rows: S,
    pub symmetry: Option<S>,
    pub person_km: Option<S>,
    pub entropy: S,
}

impl<S: Scalar> ResidualReport<S> {
    /// Largest residual over the enabled families.
    pub fn max(&self) -> S {
        [Some(self.entry_rows), self.symmetry, self.person_km]
            .into_iter()
            .flatten()
            .fold(S::zero(), S::max)
    }
}

pub fn residuals<S: Scalar>(
    od: &OdTensor<S>,
    scenario: &Scenario<S>,
    constraints: &ConstraintSet<S>,
) -> Result<ResidualReport<S>> {
    od.dims_match(scenario)?;
    let entries = scenario.entries();
    let rows = od.row_sums();
    let entry_rows = rows
        .as_slice()
        .iter()
        .zip(entries.as_slice())
        .fold(S::zero(), |m, (&r, &o)| m.max(violation(r, o)));
    let symmetry = constraints.symmetry.then(|| {
        od.daily_exits()
            .into_iter()
            .zip(scenario.daily_totals())
            .fold(S::zero(), |m, (e, t)| m.max(violation(e, t)))
    });
    let person_km = match constraints.person_km {
        Some(target) => {
            let d = scenario.require_distances()?;
            Some(violation(od.person_km(d)?, target))
        }
        None => None,
    };
    Ok(ResidualReport {
        entry_rows,
        symmetry,
        person_km,
        entropy: entropy(od),
    })
}

/// Dual variables: `lambda[i * |T| + t]`, `mu[j]`, `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers<S = f64> {
    pub lambda: Vec<S>,
    pub mu: Vec<S>,
    pub theta: S,
}

/// The Lagrangian dual of the entropy program for one scenario and
/// constraint set.
pub struct DualFunction<'a, S: Scalar> {
    scenario: &'a Scenario<S>,
    constraints: ConstraintSet<S>,
    totals: Vec<S>,
    distances: Option<&'a DistanceMatrix<S>>,
}

impl<'a, S: Scalar> DualFunction<'a, S> {
    pub fn new(scenario: &'a Scenario<S>, constraints: ConstraintSet<S>) -> Result<Self> {
        let distances = match constraints.person_km {
            Some(target) => {
                if !(target > S::zero()) {
                    return Err(OdError::domain("person-km target must be positive"));
                }
                Some(scenario.require_distances()?)
            }
            None => None,
        };
        Ok(DualFunction {
            scenario,
            constraints,
            totals: scenario.daily_totals(),
            distances,
        })
    }

    fn n(&self) -> usize {
        self.scenario.station_count()
    }

    fn nt(&self) -> usize {
        self.scenario.interval_count()
    }

    fn dist(&self, i: usize, j: usize) -> S {
        self.distances.map_or(S::zero(), |d| d.get(i, j))
    }

    /// Exponent of cell `(i, j, t)` without the `λ` term.
    fn column_term(&self, m: &Multipliers<S>, i: usize, j: usize) -> S {
        let mut v = S::zero();
        if self.constraints.symmetry {
            v = v + m.mu[j];
        }
        if self.constraints.person_km.is_some() {
            v = v + m.theta * self.dist(i, j);
        }
        v
    }

    fn cell_log(&self, m: &Multipliers<S>, i: usize, j: usize, t: usize) -> S {
        m.lambda[i * self.nt() + t] + self.column_term(m, i, j)
    }

    pub fn primal(&self, m: &Multipliers<S>) -> Result<OdTensor<S>> {
        OdTensor::from_fn(self.n(), self.nt(), |i, j, t| {
            self.cell_log(m, i, j, t).exp()
        })
    }

    pub fn value(&self, m: &Multipliers<S>) -> S {
        let (n, nt) = (self.n(), self.nt());
        let entries = self.scenario.entries();
        let mut v = S::zero();
        for i in 0..n {
            for t in 0..nt {
                for j in 0..n {
                    if i != j {
                        v = v + self.cell_log(m, i, j, t).exp();
                    }
                }
                let o = entries.get(i, t);
                if o > S::zero() {
                    v = v - m.lambda[i * nt + t] * o;
                }
            }
        }
        if self.constraints.symmetry {
            for (j, &tj) in self.totals.iter().enumerate() {
                if tj > S::zero() {
                    v = v - m.mu[j] * tj;
                }
            }
        }
        if let Some(target) = self.constraints.person_km {
            v = v - m.theta * target;
        }
        v
    }

    /// Partial derivatives, laid out like the multipliers. Disabled
    /// families get zero entries.
    pub fn gradient(&self, m: &Multipliers<S>) -> Multipliers<S> {
        let (n, nt) = (self.n(), self.nt());
        let entries = self.scenario.entries();
        let mut g = Multipliers {
            lambda: vec![S::zero(); n * nt],
            mu: vec![S::zero(); n],
            theta: S::zero(),
        };
        let mut pk = S::zero();
        for i in 0..n {
            for t in 0..nt {
                let mut row = S::zero();
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let x = self.cell_log(m, i, j, t).exp();
                    row = row + x;
                    g.mu[j] = g.mu[j] + x;
                    pk = pk + x * self.dist(i, j);
                }
                g.lambda[i * nt + t] = row - entries.get(i, t);
            }
        }
        if self.constraints.symmetry {
            for (gj, &tj) in g.mu.iter_mut().zip(&self.totals) {
                *gj = *gj - tj;
            }
        } else {
            g.mu.iter_mut().for_each(|x| *x = S::zero());
        }
        if let Some(target) = self.constraints.person_km {
            g.theta = pk - target;
        }
        g
    }
}

impl<S: Scalar> DualFunction<'_, S> {
    /// Worst relative violation of the enabled constraints at the primal
    /// point of `m`.
    pub fn residual(&self, m: &Multipliers<S>) -> S {
        let g = self.gradient(m);
        let entries = self.scenario.entries().as_slice();
        let mut r = S::zero();
        for (gk, &o) in g.lambda.iter().zip(entries) {
            r = r.max(violation(*gk + o, o));
        }
        if self.constraints.symmetry {
            for (gj, &tj) in g.mu.iter().zip(&self.totals) {
                r = r.max(violation(*gj + tj, tj));
            }
        }
        if let Some(target) = self.constraints.person_km {
            r = r.max(violation(g.theta + target, target));
        }
        r
    }

    fn max_distance(&self) -> S {
        self.distances
            .map_or(S::zero(), |d| d.off_diagonal_range().1)
    }
}

/// Active multipliers of one cell: `λ` slot, optional `μ` slot, distance.
struct Cell {
    lambda: usize,
    mu: Option<usize>,
    distance: f64,
}

/// One damped Newton step on the dual over the finite multipliers, computed
/// in `f64`. Returns false when no descent is possible.
fn newton_step<S: Scalar>(dual: &DualFunction<'_, S>, m: &mut Multipliers<S>) -> bool {
    let (n, nt) = (dual.n(), dual.nt());
    let entries = dual.scenario.entries();
    let mut slots: Vec<f64> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let lambda_slot: Vec<Option<usize>> = m
        .lambda
        .iter()
        .enumerate()
        .map(|(k, l)| {
            l.is_finite().then(|| {
                slots.push(l.to_f64_lossy());
                rhs.push(entries.as_slice()[k].to_f64_lossy());
                slots.len() - 1
            })
        })
        .collect();
    let mu_slot: Vec<Option<usize>> = if dual.constraints.symmetry {
        m.mu.iter()
            .zip(&dual.totals)
            .map(|(u, tj)| {
                u.is_finite().then(|| {
                    slots.push(u.to_f64_lossy());
                    rhs.push(tj.to_f64_lossy());
                    slots.len() - 1
                })
            })
            .collect()
    } else {
        vec![None; n]
    };
    let theta_slot = dual.constraints.person_km.map(|target| {
        slots.push(m.theta.to_f64_lossy());
        rhs.push(target.to_f64_lossy());
        slots.len() - 1
    });

    let mut cells = Vec::new();
    for i in 0..n {
        for t in 0..nt {
            let Some(lambda) = lambda_slot[i * nt + t] else {
                continue;
            };
            for j in 0..n {
                if i == j || (dual.constraints.symmetry && mu_slot[j].is_none()) {
                    continue;
                }
                cells.push(Cell {
                    lambda,
                    mu: mu_slot[j],
                    distance: dual.dist(i, j).to_f64_lossy(),
                });
            }
        }
    }

    let dim = slots.len();
    let x = DVector::from_vec(slots);
    let b = DVector::from_vec(rhs);
    let exponent = |x: &DVector<f64>, c: &Cell| {
        x[c.lambda] + c.mu.map_or(0.0, |k| x[k]) + theta_slot.map_or(0.0, |k| x[k] * c.distance)
    };
    let value =
        |x: &DVector<f64>| cells.iter().map(|c| exponent(x, c).exp()).sum::<f64>() - b.dot(x);

    let gradient = |x: &DVector<f64>| {
        let mut g = -b.clone();
        for c in &cells {
            let w = exponent(x, c).exp();
            g[c.lambda] += w;
            if let Some(k) = c.mu {
                g[k] += w;
            }
            if let Some(k) = theta_slot {
                g[k] += w * c.distance;
            }
        }
        g
    };

    let grad = gradient(&x);
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    for c in &cells {
        let w = exponent(&x, c).exp();
        let mut idx: Vec<(usize, f64)> = vec![(c.lambda, 1.0)];
        if let Some(k) = c.mu {
            idx.push((k, 1.0));
        }
        if let Some(k) = theta_slot {
            idx.push((k, c.distance));
        }
        for &(a, va) in &idx {
            for &(bb, vb) in &idx {
                hess[(a, bb)] += w * va * vb;
            }
        }
    }

    // The λ/μ gauge makes the Hessian singular; a small ridge fixes it.
    let scale = (0..dim)
        .map(|k| hess[(k, k)])
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut ridge = 1e-12 * scale;
    let step = loop {
        let mut h = hess.clone();
        for k in 0..dim {
            h[(k, k)] += ridge;
        }
        if let Some(chol) = h.cholesky() {
            break -chol.solve(&grad);
        }
        ridge *= 100.0;
        if ridge > scale {
            return false;
        }
    };

    let f0 = value(&x);
    let slope = grad.dot(&step);
    if !(slope < 0.0) {
        return false;
    }
    // Near the optimum the decrease drops below the resolution of the dual
    // value; a shrinking gradient then accepts the step.
    let grad_norm = grad.norm();
    let mut t = 1.0;
    for _ in 0..60 {
        let trial = &x + &step * t;
        let f = value(&trial);
        let accept = f.is_finite()
            && (f <= f0 + 1e-4 * t * slope || gradient(&trial).norm() < 0.5 * grad_norm);
        if accept {
            for (k, slot) in lambda_slot.iter().enumerate() {
                if let Some(p) = slot {
                    m.lambda[k] = S::lit(trial[*p]);
                }
            }
            for (j, slot) in mu_slot.iter().enumerate() {
                if let Some(p) = slot {
                    m.mu[j] = S::lit(trial[*p]);
                }
            }
            if let Some(p) = theta_slot {
                m.theta = S::lit(trial[p]);
            }
            return true;
        }
        t *= 0.5;
    }
    false
}

/// Dual solver used as the correctness reference for the
/// estimators on small instances.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceSolver<S = f64> {
    pub tolerance: S,
    pub max_sweeps: usize,
}

impl<S: Scalar> ReferenceSolver<S> {
    pub fn new(tolerance: S) -> Self {
        ReferenceSolver {
            tolerance,
            max_sweeps: 200_000,
        }
    }

    /// Start at the uniform split: `λ_it = ln(O_i^t / (N - 1))` (floored at
    /// `ln tol` for empty rows), `μ = 0`, `θ = 0`.
    pub fn initial_multipliers(&self, scenario: &Scenario<S>) -> Multipliers<S> {
        let share = S::from_usize_lossy(scenario.station_count() - 1);
        let floor = self.tolerance.ln();
        Multipliers {
            lambda: scenario
                .entries()
                .as_slice()
                .iter()
                .map(|&o| {
                    if o > S::zero() {
                        (o / share).ln()
                    } else {
                        floor
                    }
                })
                .collect(),
            mu: vec![S::zero(); scenario.station_count()],
            theta: S::zero(),
        }
    }

    pub fn solve(
        &self,
        scenario: &Scenario<S>,
        constraints: &ConstraintSet<S>,
    ) -> Result<OdTensor<S>> {
        let init = self.initial_multipliers(scenario);
        self.solve_from(scenario, constraints, init)
            .map(|(od, _)| od)
    }

    /// Runs from the given multipliers; returns the primal optimum and the
    /// final multipliers.
    pub fn solve_from(
        &self,
        scenario: &Scenario<S>,
        constraints: &ConstraintSet<S>,
        init: Multipliers<S>,
    ) -> Result<(OdTensor<S>, Multipliers<S>)> {
        let dual = DualFunction::new(scenario, *constraints)?;
        let (n, nt) = (dual.n(), dual.nt());
        if init.lambda.len() != n * nt || init.mu.len() != n {
            return Err(OdError::Dimension("multiplier shapes".into()));
        }
        let total: S = dual.totals.iter().copied().sum();
        if constraints.symmetry {
            for (j, &tj) in dual.totals.iter().enumerate() {
                if tj > (total - tj) * (S::one() + S::lit(1e-12)) {
                    return Err(OdError::Infeasible(format!(
                        "daily total of station {j} exceeds what the others can send"
                    )));
                }
            }
        }
        let mut m = init;
        let mut residual = S::infinity();

        for sweep in 0..self.max_sweeps {
            if sweep < COORDINATE_SWEEPS {
                self.coordinate_sweep(&dual, &mut m)?;
            } else if !newton_step(&dual, &mut m) {
                break;
            }
            residual = dual.residual(&m);
            if residual <= self.tolerance {
                return Ok((dual.primal(&m)?, m));
            }
        }
        if let Some(target) = constraints.person_km {
            let reach = m.theta.abs() * dual.max_distance();
            if reach > S::lit(600.0) {
                return Err(OdError::Infeasible(format!(
                    "person-km target {target} unattainable: multiplier diverges"
                )));
            }
        }
        Err(OdError::Convergence {
            iterations: self.max_sweeps,
            residual: residual.to_f64_lossy(),
            context: "reference dual solver".into(),
        })
    }

    /// Exact minimisation over each `λ_it`, then each `μ_j`, then `θ`.
    fn coordinate_sweep(&self, dual: &DualFunction<'_, S>, m: &mut Multipliers<S>) -> Result<()> {
        let (n, nt) = (dual.n(), dual.nt());
        let entries = dual.scenario.entries();
        for i in 0..n {
            for t in 0..nt {
                let o = entries.get(i, t);
                m.lambda[i * nt + t] = if o > S::zero() {
                    let lse = log_sum_exp(
                        (0..n)
                            .filter(|&j| j != i)
                            .map(|j| dual.column_term(m, i, j)),
                    );
                    o.ln() - lse
                } else {
                    S::neg_infinity()
                };
            }
        }
        if dual.constraints.symmetry {
            let with_theta = dual.constraints.person_km.is_some();
            for j in 0..n {
                m.mu[j] = if dual.totals[j] > S::zero() {
                    let theta = m.theta;
                    let lambda = &m.lambda;
                    let lse = log_sum_exp(
                        (0..n)
                            .filter(|&i| i != j)
                            .flat_map(|i| (0..nt).map(move |t| (i, t)))
                            .map(|(i, t)| {
                                let shift = if with_theta {
                                    theta * dual.dist(i, j)
                                } else {
                                    S::zero()
                                };
                                lambda[i * nt + t] + shift
                            }),
                    );
                    dual.totals[j].ln() - lse
                } else {
                    S::neg_infinity()
                };
            }
        }
        if let Some(target) = dual.constraints.person_km {
            m.theta = self.theta_newton(dual, m, target)?;
        }
        Ok(())
    }

    /// Minimises `θ -> Σ exp(c + θ d) - θ d̄` with `λ`, `μ` held fixed.
    fn theta_newton(&self, dual: &DualFunction<'_, S>, m: &Multipliers<S>, target: S) -> Result<S> {
        let (n, nt) = (dual.n(), dual.nt());
        let moments = |theta: S| {
            let (mut s0, mut s1, mut s2) = (S::zero(), S::zero(), S::zero());
            for i in 0..n {
                for t in 0..nt {
                    let lam = m.lambda[i * nt + t];
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let d = dual.dist(i, j);
                        let mu = if dual.constraints.symmetry {
                            m.mu[j]
                        } else {
                            S::zero()
                        };
                        let x = (lam + mu + theta * d).exp();
                        s0 = s0 + x;
                        s1 = s1 + x * d;
                        s2 = s2 + x * d * d;
                    }
                }
            }
            (s0 - theta * target, s1 - target, s2)
        };
        let mut theta = m.theta;
        for _ in 0..100 {
            let (phi, slope, curvature) = moments(theta);
            if slope.abs() <= self.tolerance * target * S::lit(1e-3) {
                break;
            }
            if !(curvature > S::zero()) {
                return Err(OdError::Infeasible(
                    "person-km constraint has no distance mass to act on".into(),
                ));
            }
            let mut step = -slope / curvature;
            let mut accepted = false;
            for _ in 0..80 {
                let (next, _, _) = moments(theta + step);
                if next.is_finite() && next <= phi {
                    accepted = true;
                    break;
                }
                step = step / S::lit(2.0);
            }
            if !accepted {
                break;
            }
            theta = theta + step;
            if theta.abs() > S::lit(1e8) {
                return Err(OdError::Infeasible("person-km target unattainable".into()));
            }
        }
        Ok(theta)
    }
}

/// Reference solution with the default sweep budget.
pub fn reference_solve<S: Scalar>(
    scenario: &Scenario<S>,
    constraints: &ConstraintSet<S>,
    tolerance: S,
) -> Result<OdTensor<S>> {
    ReferenceSolver::new(tolerance).solve(scenario, constraints)
}
