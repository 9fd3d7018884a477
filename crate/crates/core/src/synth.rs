//! Synthetic scenarios with a known ground-truth OD tensor.
//!
//! The truth follows the logit destination-choice form
//! `n_ij^t = w_i · profile_t · p(j|i)` with `p(j|i) ∝ a_j exp(θ d_ij)`, and
//! the entries are derived from it, so every scenario is feasible. With
//! [`OriginWeights::Stationary`] the origin weights are the stationary
//! distribution of the choice matrix, which makes daily exits equal daily
//! entries: the truth then lies exactly inside the calibrated
//! additional-data model family.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{OdError, Result};
use crate::model::{
    DistanceMatrix, EntryMatrix, OdTensor, Scenario, SquareMatrix, StationSet, TimeGrid,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Stations on a line, `spacing_km` apart.
    Line,
    /// Station 0 is the hub, every other station `spacing_km` from it.
    Star,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OriginWeights<S = f64> {
    /// Stationary distribution of the choice matrix (daily symmetric truth).
    Stationary,
    /// Origin weight equals the destination attraction.
    Attraction,
    Custom(Vec<S>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    None,
    /// Each cell replaced by a Poisson draw with that mean, seeded.
    Poisson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig<S = f64> {
    pub seed: u64,
    pub stations: usize,
    pub intervals: usize,
    pub topology: Topology,
    pub spacing_km: S,
    pub truth_theta: S,
    pub truth_attraction: Vec<S>,
    pub temporal_profile: Vec<S>,
    pub total_trips: S,
    pub origins: OriginWeights<S>,
    /// Amplitude of a per-station daily oscillation of the attractions; any
    /// non-zero value puts the truth outside the time-invariant model family.
    pub attraction_drift: S,
    pub rounding: Rounding,
}

/// Two bumps over the day: a sharp morning peak at 32% and a lower, wider
/// afternoon peak at 70%, on a small base load.
pub fn two_peak_profile<S: Scalar>(intervals: usize) -> Vec<S> {
    (0..intervals)
        .map(|t| {
            let x = (t as f64 + 0.5) / intervals as f64;
            let bump = |centre: f64, width: f64| (-0.5 * ((x - centre) / width).powi(2)).exp();
            S::lit(0.15 + bump(0.32, 0.04) + 0.6 * bump(0.70, 0.08))
        })
        .collect()
}

impl<S: Scalar> SynthConfig<S> {
    /// Uniform attractions, flat profile, no distance sensitivity.
    pub fn flat(stations: usize, intervals: usize, total_trips: S) -> Self {
        SynthConfig {
            seed: 0,
            stations,
            intervals,
            topology: Topology::Line,
            spacing_km: S::one(),
            truth_theta: S::zero(),
            truth_attraction: vec![S::one(); stations],
            temporal_profile: vec![S::one(); intervals],
            total_trips,
            origins: OriginWeights::Stationary,
            attraction_drift: S::zero(),
            rounding: Rounding::None,
        }
    }

    /// Line network with a central hub four times as attractive as the rest
    /// and a two-peak day.
    pub fn two_peak_line(stations: usize, intervals: usize) -> Self {
        let mut attraction = vec![S::one(); stations];
        attraction[stations / 2] = S::lit(4.0);
        SynthConfig {
            seed: 0,
            stations,
            intervals,
            topology: Topology::Line,
            spacing_km: S::lit(4.0),
            truth_theta: S::lit(-0.1),
            truth_attraction: attraction,
            temporal_profile: two_peak_profile(intervals),
            total_trips: S::lit(10_000.0 * stations as f64),
            origins: OriginWeights::Stationary,
            attraction_drift: S::zero(),
            rounding: Rounding::None,
        }
    }

    /// Star network around station 0, which is four times as attractive.
    pub fn two_peak_star(stations: usize, intervals: usize) -> Self {
        let mut cfg = Self::two_peak_line(stations, intervals);
        cfg.topology = Topology::Star;
        cfg.truth_attraction = vec![S::one(); stations];
        cfg.truth_attraction[0] = S::lit(4.0);
        cfg
    }

    /// Index of the most attractive station.
    pub fn hub(&self) -> usize {
        let mut best = 0;
        for (k, &a) in self.truth_attraction.iter().enumerate() {
            if a > self.truth_attraction[best] {
                best = k;
            }
        }
        best
    }

    fn validate(&self) -> Result<()> {
        let n = self.stations;
        if n < 2 {
            return Err(OdError::domain("need at least 2 stations"));
        }
        if self.intervals == 0 {
            return Err(OdError::domain("need at least one interval"));
        }
        check_weights("truth_attraction", &self.truth_attraction, n)?;
        if self
            .truth_attraction
            .iter()
            .filter(|&&a| a > S::zero())
            .count()
            < 2
        {
            return Err(OdError::domain("at least two stations must be attractive"));
        }
        check_weights("temporal_profile", &self.temporal_profile, self.intervals)?;
        if let OriginWeights::Custom(w) = &self.origins {
            check_weights("origin weights", w, n)?;
        }
        if !(self.total_trips > S::zero() && self.total_trips.is_finite()) {
            return Err(OdError::domain("total_trips must be positive"));
        }
        if !(self.spacing_km > S::zero() && self.spacing_km.is_finite()) {
            return Err(OdError::domain("spacing_km must be positive"));
        }
        if !self.truth_theta.is_finite() || !self.attraction_drift.is_finite() {
            return Err(OdError::domain("theta and drift must be finite"));
        }
        Ok(())
    }

    pub fn distances(&self) -> Result<DistanceMatrix<S>> {
        let h = self.spacing_km;
        DistanceMatrix::new(SquareMatrix::from_fn(self.stations, |i, j| {
            match (self.topology, i == j) {
                (_, true) => S::zero(),
                (Topology::Line, false) => h * S::from_usize_lossy(i.abs_diff(j)),
                (Topology::Star, false) if i == 0 || j == 0 => h,
                (Topology::Star, false) => h + h,
            }
        }))
    }
}

fn check_weights<S: Scalar>(name: &str, w: &[S], len: usize) -> Result<()> {
    if w.len() != len {
        return Err(OdError::Dimension(format!(
            "{name} has {} values, expected {len}",
            w.len()
        )));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= S::zero())) {
        return Err(OdError::domain(format!(
            "{name} must be finite and non-negative"
        )));
    }
    if !w.iter().any(|v| *v > S::zero()) {
        return Err(OdError::domain(format!("{name} needs a positive value")));
    }
    Ok(())
}

/// Row-stochastic choice matrix with zero diagonal.
fn choice_matrix<S: Scalar>(theta: S, attraction: &[S], d: &DistanceMatrix<S>) -> SquareMatrix<S> {
    let n = attraction.len();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let score = |j: usize| {
            if i == j || !(attraction[j] > S::zero()) {
                S::neg_infinity()
            } else {
                attraction[j].ln() + theta * d.get(i, j)
            }
        };
        let peak = (0..n).map(score).fold(S::neg_infinity(), S::max);
        let w: Vec<S> = (0..n).map(|j| (score(j) - peak).exp()).collect();
        let z: S = w.iter().copied().sum();
        rows.push(w.into_iter().map(|x| x / z).collect());
    }
    SquareMatrix::from_rows(rows).expect("square by construction")
}

/// Stationary distribution of a row-stochastic matrix by iterating the lazy
/// chain `(I + P) / 2`.
fn stationary<S: Scalar>(p: &SquareMatrix<S>) -> Vec<S> {
    let n = p.dim();
    let half = S::lit(0.5);
    let mut pi = vec![S::one() / S::from_usize_lossy(n); n];
    for _ in 0..1_000_000 {
        let mut next: Vec<S> = pi.iter().map(|&x| x * half).collect();
        for i in 0..n {
            for j in 0..n {
                next[j] = next[j] + half * pi[i] * p.get(i, j);
            }
        }
        let z: S = next.iter().copied().sum();
        next.iter_mut().for_each(|x| *x = *x / z);
        let change = pi
            .iter()
            .zip(&next)
            .fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        pi = next;
        if change <= S::epsilon() {
            break;
        }
    }
    pi
}

#[derive(Debug, Clone)]
pub struct Synthetic<S = f64> {
    pub scenario: Scenario<S>,
    pub truth: OdTensor<S>,
}

pub fn generate<S: Scalar>(config: &SynthConfig<S>) -> Result<Synthetic<S>> {
    config.validate()?;
    let (n, nt) = (config.stations, config.intervals);
    let distances = config.distances()?;
    let base_choice = choice_matrix(config.truth_theta, &config.truth_attraction, &distances);

    let origin_weights = match &config.origins {
        OriginWeights::Stationary => stationary(&base_choice),
        OriginWeights::Attraction => config.truth_attraction.clone(),
        OriginWeights::Custom(w) => w.clone(),
    };
    let weight_sum: S = origin_weights.iter().copied().sum();
    let profile_sum: S = config.temporal_profile.iter().copied().sum();
    let scale = config.total_trips / (weight_sum * profile_sum);

    let per_interval: Vec<SquareMatrix<S>> = if config.attraction_drift == S::zero() {
        vec![base_choice]
    } else {
        let two_pi = S::lit(std::f64::consts::TAU);
        (0..nt)
            .map(|t| {
                let phase = two_pi * S::from_usize_lossy(t) / S::from_usize_lossy(nt);
                let attraction: Vec<S> = config
                    .truth_attraction
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| {
                        let offset = two_pi * S::from_usize_lossy(j) / S::from_usize_lossy(n);
                        a * (config.attraction_drift * (phase + offset).sin()).exp()
                    })
                    .collect();
                choice_matrix(config.truth_theta, &attraction, &distances)
            })
            .collect()
    };

    let mut truth = OdTensor::from_fn(n, nt, |i, j, t| {
        let p = &per_interval[t.min(per_interval.len() - 1)];
        origin_weights[i] * config.temporal_profile[t] * scale * p.get(i, j)
    })?;

    if config.rounding == Rounding::Poisson {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut values = truth.as_raw().to_vec();
        for v in values.iter_mut() {
            let mean = v.to_f64_lossy();
            if mean > 0.0 {
                let draw = Poisson::new(mean)
                    .map_err(|e| OdError::domain(format!("poisson mean {mean}: {e}")))?
                    .sample(&mut rng);
                *v = S::lit(draw);
            }
        }
        truth = OdTensor::from_raw(n, nt, values)?;
    }

    let entries: EntryMatrix<S> = truth.row_sums();
    let stations = StationSet::new((0..n).map(|k| format!("S{k}")))?;
    let scenario = Scenario::new(stations, TimeGrid::new(nt, 15)?, entries, Some(distances))?;
    Ok(Synthetic { scenario, truth })
}
