use crate::model::{OdTensor, Scenario};
use crate::scalar::Scalar;

use super::fill_rows;

/// Basic method: each origin's entries split evenly over the `N - 1` other stations.
pub fn estimate_bm<S: Scalar>(scenario: &Scenario<S>) -> OdTensor<S> {
    let n = scenario.station_count();
    let share = S::from_usize_lossy(n - 1);
    let entries = scenario.entries();
    fill_rows(n, scenario.interval_count(), |i, t, row| {
        let v = entries.get(i, t) / share;
        row.iter_mut().for_each(|x| *x = v);
    })
}
