//! Entropy-maximising OD estimators.
//!
//! | method      | constraints honoured                     | form                               |
//! |-------------|------------------------------------------|------------------------------------|
//! | `bm`        | entry rows                               | `O_i^t / (N - 1)`                  |
//! | `sa-closed` | none exactly (see [`estimate_sa_closed`])| `O_i^t T_j / O`                    |
//! | `sa`        | entry rows, daily symmetry               | `a_i^t b_j` by two-sided scaling   |
//! | `ad`        | entry rows (+ symmetry, person-km when calibrated) | `O_i^t p(j|i)`           |
//!
//! Self trips are excluded everywhere: `n_ii^t = 0`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{OdError, Result};
use crate::model::OdTensor;
use crate::scalar::Scalar;

mod calibrate;
mod choice;
mod symmetric;
mod uniform;

pub use calibrate::{
    calibrate_ad, calibrate_ad_with_trace, CalibrationResult, CalibrationStep, CalibrationTarget,
};
pub use choice::{
    balance_destinations, destination_probabilities, estimate_ad, BalanceReport, UtilityParams,
};
pub use symmetric::{estimate_sa_balanced, estimate_sa_closed};
pub use uniform::estimate_bm;

/// Default relative tolerance for the iterative methods.
pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bm,
    SaClosed,
    Sa,
    Ad,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bm => "bm",
            Method::SaClosed => "sa-closed",
            Method::Sa => "sa",
            Method::Ad => "ad",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = OdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm" => Ok(Method::Bm),
            "sa-closed" => Ok(Method::SaClosed),
            "sa" => Ok(Method::Sa),
            "ad" => Ok(Method::Ad),
            other => Err(OdError::domain(format!(
                "unknown method `{other}` (expected bm, sa-closed, sa or ad)"
            ))),
        }
    }
}

/// Fills every `(origin, interval)` row of a fresh tensor. Rows are
/// independent, so the result does not depend on the thread count.
pub(crate) fn fill_rows<S, F>(stations: usize, intervals: usize, fill: F) -> OdTensor<S>
where
    S: Scalar,
    F: Fn(usize, usize, &mut [S]) + Sync,
{
    let mut od = OdTensor::zeros(stations, intervals);
    od.raw_mut()
        .par_chunks_mut(stations)
        .enumerate()
        .for_each(|(k, row)| {
            let (i, t) = (k / intervals, k % intervals);
            fill(i, t, row);
            row[i] = S::zero();
        });
    od
}

/// Symmetry with excluded self trips needs every station's daily total to be
/// coverable by the other stations: `T_j <= O - T_j`.
pub(crate) fn check_symmetry_feasible<S: Scalar>(totals: &[S]) -> Result<()> {
    let total: S = totals.iter().copied().sum();
    let slack = S::one() + S::lit(1e-12);
    for (j, &tj) in totals.iter().enumerate() {
        let others = total - tj;
        if tj > others * slack {
            return Err(OdError::Infeasible(format!(
                "station {j} has daily total {tj} but the other stations only enter {others}; \
                 daily symmetry cannot hold without self trips"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Bm, Method::SaClosed, Method::Sa, Method::Ad] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("xx".parse::<Method>().is_err());
    }

    #[test]
    fn symmetry_feasibility() {
        assert!(check_symmetry_feasible(&[10.0, 4.0, 2.0]).is_err());
        assert!(check_symmetry_feasible(&[5.0, 3.0, 2.0]).is_ok());
        assert!(check_symmetry_feasible(&[3.0, 3.0]).is_ok());
        assert!(check_symmetry_feasible(&[3.0, 1.0]).is_err());
    }
}
