#![allow(dead_code)]

use odest::model::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Three-station example: entries 10, 4, 2 in one interval.
pub fn fixture() -> Scenario {
    Scenario::from_entry_rows(
        vec![vec![10.0], vec![4.0], vec![2.0]],
        Some(vec![
            vec![0.0, 5.0, 9.0],
            vec![5.0, 0.0, 4.0],
            vec![9.0, 4.0, 0.0],
        ]),
    )
    .unwrap()
}

/// Euclidean distances between random points in a 10 km square.
pub fn random_distances(rng: &mut impl Rng, n: usize) -> Vec<Vec<f64>> {
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                        (dx * dx + dy * dy).sqrt().max(0.5)
                    }
                })
                .collect()
        })
        .collect()
}

/// Random scenario whose largest daily total is below `share_cap` of all
/// entries, so that daily symmetry is strictly feasible.
pub fn random_scenario(
    rng: &mut impl Rng,
    stations: usize,
    intervals: usize,
    share_cap: f64,
) -> Scenario {
    loop {
        let rows: Vec<Vec<f64>> = (0..stations)
            .map(|_| {
                (0..intervals)
                    .map(|_| rng.random_range(0.5..10.0))
                    .collect()
            })
            .collect();
        let totals: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
        let total: f64 = totals.iter().sum();
        if totals.iter().all(|&t| t < share_cap * total) {
            let d = random_distances(rng, stations);
            return Scenario::from_entry_rows(rows, Some(d)).unwrap();
        }
    }
}

/// Random scenario in which every station has the same daily total.
pub fn equal_totals_scenario(rng: &mut impl Rng, stations: usize, intervals: usize) -> Scenario {
    let daily = rng.random_range(5.0..50.0);
    let rows: Vec<Vec<f64>> = (0..stations)
        .map(|_| {
            let w: Vec<f64> = (0..intervals).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| daily * x / s).collect()
        })
        .collect();
    let d = random_distances(rng, stations);
    Scenario::from_entry_rows(rows, Some(d)).unwrap()
}
