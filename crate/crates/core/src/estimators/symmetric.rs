use crate::error::{OdError, Result};
use crate::model::{OdTensor, Scenario};
use crate::scalar::{violation, Scalar};

use super::{check_symmetry_feasible, fill_rows};

/// Symmetric-assumption closed form `n_ij^t = O_i^t T_j / O`.
///
/// The formula comes from summations that include `j = i`. With self trips
/// excluded, row `(i, t)` sums to `O_i^t (1 - T_i / O)` rather than `O_i^t`,
/// a relative shortfall of exactly `T_i / O`. [`estimate_sa_balanced`] is the
/// variant that honours both constraint families.
pub fn estimate_sa_closed<S: Scalar>(scenario: &Scenario<S>) -> Result<OdTensor<S>> {
    let total = scenario.total_entries();
    if !(total > S::zero()) {
        return Err(OdError::domain("total entries must be positive"));
    }
    let totals = scenario.daily_totals();
    let entries = scenario.entries();
    Ok(fill_rows(
        scenario.station_count(),
        scenario.interval_count(),
        |i, t, row| {
            let o = entries.get(i, t);
            for (x, &tj) in row.iter_mut().zip(&totals) {
                *x = o * tj / total;
            }
        },
    ))
}

/// Entropy-maximising estimate under entry rows and daily symmetry with self
/// trips excluded: `n_ij^t = a_i^t b_j`, found by alternately fitting the
/// destination factors `b` to the daily totals and the origin factors `a` to
/// the entries, until the worst relative violation is at most `epsilon`.
pub fn estimate_sa_balanced<S: Scalar>(
    scenario: &Scenario<S>,
    epsilon: S,
    max_iterations: usize,
) -> Result<OdTensor<S>> {
    let n = scenario.station_count();
    let nt = scenario.interval_count();
    let totals = scenario.daily_totals();
    check_symmetry_feasible(&totals)?;
    let entries = scenario.entries();

    let mut b: Vec<S> = totals
        .iter()
        .map(|&tj| if tj > S::zero() { S::one() } else { S::zero() })
        .collect();
    let mut a = vec![S::zero(); n * nt];
    let mut residual = S::infinity();

    for _ in 0..=max_iterations {
        let b_sum: S = b.iter().copied().sum();
        for i in 0..n {
            let reach = b_sum - b[i];
            for t in 0..nt {
                let o = entries.get(i, t);
                a[i * nt + t] = if o > S::zero() { o / reach } else { S::zero() };
            }
        }
        let origin_mass: Vec<S> = (0..n)
            .map(|i| a[i * nt..(i + 1) * nt].iter().copied().sum())
            .collect();
        let mass_sum: S = origin_mass.iter().copied().sum();

        residual = S::zero();
        let mut inflow = vec![S::zero(); n];
        for j in 0..n {
            inflow[j] = b[j] * (mass_sum - origin_mass[j]);
            residual = residual.max(violation(inflow[j], totals[j]));
        }
        if residual <= epsilon {
            return Ok(fill_rows(n, nt, |i, t, row| {
                let ai = a[i * nt + t];
                for (x, &bj) in row.iter_mut().zip(&b) {
                    *x = ai * bj;
                }
            }));
        }

        for j in 0..n {
            if totals[j] > S::zero() {
                if !(inflow[j] > S::zero()) {
                    return Err(OdError::Infeasible(format!(
                        "station {j} cannot receive any trips"
                    )));
                }
                b[j] = b[j] * totals[j] / inflow[j];
            }
        }
        let scale = b.iter().copied().sum::<S>() / S::from_usize_lossy(n);
        b.iter_mut().for_each(|x| *x = *x / scale);
    }

    Err(OdError::Convergence {
        iterations: max_iterations,
        residual: residual.to_f64_lossy(),
        context: "symmetric balancing".into(),
    })
}
