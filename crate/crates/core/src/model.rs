//! Scenario data model: stations, time grid, entry counts, distances and
//! origin-destination tensors.
//!
//! Every container indexes stations in [`StationSet`] order. Constructors
//! validate the invariants, after which the values are immutable.

use std::collections::HashMap;

use crate::error::{OdError, Result};
use crate::scalar::Scalar;

/// Ordered set of unique station identifiers, at least two of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationSet {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl StationSet {
    pub fn new<I, T>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(ids.len());
        for (k, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(OdError::domain("station id must be non-empty"));
            }
            if index.insert(id.clone(), k).is_some() {
                return Err(OdError::DuplicateKey(format!("station `{id}`")));
            }
        }
        if ids.len() < 2 {
            return Err(OdError::domain(format!(
                "need at least 2 stations, got {}",
                ids.len()
            )));
        }
        Ok(StationSet { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of admissible destinations for any origin (all stations but itself).
    pub fn destinations_per_origin(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, k: usize) -> &str {
        &self.ids[k]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<usize> {
        self.position(id)
            .ok_or_else(|| OdError::UnknownStation(id.to_string()))
    }
}

/// Uniform grid of time intervals over the studied period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    intervals: usize,
    interval_minutes: u32,
}

impl TimeGrid {
    pub fn new(intervals: usize, interval_minutes: u32) -> Result<Self> {
        if intervals == 0 {
            return Err(OdError::domain("time grid needs at least one interval"));
        }
        if interval_minutes == 0 {
            return Err(OdError::domain("interval length must be positive"));
        }
        Ok(TimeGrid {
            intervals,
            interval_minutes,
        })
    }

    /// A day of 15-minute intervals (96 of them).
    pub fn quarter_hours() -> Self {
        TimeGrid {
            intervals: 96,
            interval_minutes: 15,
        }
    }

    pub fn len(&self) -> usize {
        self.intervals
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }
}

/// Entries `O[i][t]` per station and interval, stored row-major by station.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryMatrix<S = f64> {
    stations: usize,
    intervals: usize,
    values: Vec<S>,
}

impl<S: Scalar> EntryMatrix<S> {
    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        let stations = rows.len();
        let intervals = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != intervals) {
            return Err(OdError::Dimension("ragged entry rows".into()));
        }
        Self::from_flat(stations, intervals, rows.into_iter().flatten().collect())
    }

    pub fn from_flat(stations: usize, intervals: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != stations * intervals {
            return Err(OdError::Dimension(format!(
                "expected {}x{} entry values, got {}",
                stations,
                intervals,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= S::zero())) {
            return Err(OdError::domain(format!(
                "entry counts must be finite and non-negative, got {v}"
            )));
        }
        Ok(EntryMatrix {
            stations,
            intervals,
            values,
        })
    }

    pub fn zeros(stations: usize, intervals: usize) -> Self {
        EntryMatrix {
            stations,
            intervals,
            values: vec![S::zero(); stations * intervals],
        }
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn get(&self, station: usize, interval: usize) -> S {
        self.values[station * self.intervals + interval]
    }

    pub fn row(&self, station: usize) -> &[S] {
        &self.values[station * self.intervals..(station + 1) * self.intervals]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    /// Per-station totals over all intervals, `T_j = Σ_t O_j^t`.
    pub fn daily_totals(&self) -> Vec<S> {
        (0..self.stations)
            .map(|j| self.row(j).iter().copied().sum())
            .collect()
    }

    /// Sum of all entries.
    pub fn total(&self) -> S {
        self.daily_totals().into_iter().sum()
    }

    /// Entries multiplied by a positive constant.
    pub fn scaled(&self, factor: S) -> Result<Self> {
        Self::from_flat(
            self.stations,
            self.intervals,
            self.values.iter().map(|&v| v * factor).collect(),
        )
    }
}

/// Dense square matrix indexed by station pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<S = f64> {
    n: usize,
    values: Vec<S>,
}

impl<S: Scalar> SquareMatrix<S> {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(i, j));
            }
        }
        SquareMatrix { n, values }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(OdError::Dimension("matrix is not square".into()));
        }
        Ok(SquareMatrix {
            n,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Travel distances `d[i][j]` in kilometres: finite, non-negative, zero diagonal.
/// Symmetry is not required.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<S = f64>(SquareMatrix<S>);

impl<S: Scalar> DistanceMatrix<S> {
    pub fn new(matrix: SquareMatrix<S>) -> Result<Self> {
        for i in 0..matrix.dim() {
            for j in 0..matrix.dim() {
                let d = matrix.get(i, j);
                if !d.is_finite() || d < S::zero() {
                    return Err(OdError::domain(format!(
                        "distance {i}->{j} must be finite and non-negative, got {d}"
                    )));
                }
                if i == j && d != S::zero() {
                    return Err(OdError::domain(format!(
                        "distance from station {i} to itself must be 0"
                    )));
                }
            }
        }
        Ok(DistanceMatrix(matrix))
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        Self::new(SquareMatrix::from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[S] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &SquareMatrix<S> {
        &self.0
    }

    /// Mean over the off-diagonal pairs.
    pub fn mean_off_diagonal(&self) -> S {
        let n = self.dim();
        let mut sum = S::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum = sum + self.get(i, j);
                }
            }
        }
        sum / S::from_usize_lossy(n * (n - 1))
    }

    /// Smallest and largest off-diagonal distance.
    pub fn off_diagonal_range(&self) -> (S, S) {
        let n = self.dim();
        let mut lo = S::infinity();
        let mut hi = S::neg_infinity();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    lo = lo.min(self.get(i, j));
                    hi = hi.max(self.get(i, j));
                }
            }
        }
        (lo, hi)
    }
}

/// Validated estimation input: stations, time grid, entry counts and
/// optional distances, mutually consistent, with a positive entry total.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<S = f64> {
    stations: StationSet,
    grid: TimeGrid,
    entries: EntryMatrix<S>,
    distances: Option<DistanceMatrix<S>>,
}

impl<S: Scalar> Scenario<S> {
    pub fn new(
        stations: StationSet,
        grid: TimeGrid,
        entries: EntryMatrix<S>,
        distances: Option<DistanceMatrix<S>>,
    ) -> Result<Self> {
        if entries.stations() != stations.len() || entries.intervals() != grid.len() {
            return Err(OdError::Dimension(format!(
                "entries are {}x{} but scenario has {} stations and {} intervals",
                entries.stations(),
                entries.intervals(),
                stations.len(),
                grid.len()
            )));
        }
        if let Some(d) = &distances {
            if d.dim() != stations.len() {
                return Err(OdError::Dimension(format!(
                    "distance matrix is {0}x{0} but scenario has {1} stations",
                    d.dim(),
                    stations.len()
                )));
            }
        }
        if !(entries.total() > S::zero()) {
            return Err(OdError::domain("total entries must be positive"));
        }
        Ok(Scenario {
            stations,
            grid,
            entries,
            distances,
        })
    }

    /// Builds a scenario with generated ids `S0, S1, ...` from entry rows.
    pub fn from_entry_rows(rows: Vec<Vec<S>>, distances: Option<Vec<Vec<S>>>) -> Result<Self> {
        let entries = EntryMatrix::from_rows(rows)?;
        let stations = StationSet::new((0..entries.stations()).map(|k| format!("S{k}")))?;
        let grid = TimeGrid::new(entries.intervals(), 15)?;
        let distances = distances.map(DistanceMatrix::from_rows).transpose()?;
        Scenario::new(stations, grid, entries, distances)
    }

    pub fn stations(&self) -> &StationSet {
        &self.stations
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn entries(&self) -> &EntryMatrix<S> {
        &self.entries
    }

    pub fn distances(&self) -> Option<&DistanceMatrix<S>> {
        self.distances.as_ref()
    }

    pub fn require_distances(&self) -> Result<&DistanceMatrix<S>> {
        self.distances
            .as_ref()
            .ok_or_else(|| OdError::MissingInput("distance matrix".into()))
    }

    pub fn station_count(&self) -> usize {
        self.stations.len()
    }

    pub fn interval_count(&self) -> usize {
        self.grid.len()
    }

    pub fn daily_totals(&self) -> Vec<S> {
        self.entries.daily_totals()
    }

    pub fn total_entries(&self) -> S {
        self.entries.total()
    }

    pub fn with_distances(self, distances: DistanceMatrix<S>) -> Result<Self> {
        Scenario::new(self.stations, self.grid, self.entries, Some(distances))
    }

    /// Same scenario with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: S) -> Result<Self> {
        Scenario::new(
            self.stations.clone(),
            self.grid,
            self.entries.scaled(factor)?,
            self.distances.clone(),
        )
    }

    /// Drops the named stations together with their entries and distances.
    pub fn exclude(&self, ids: &[String]) -> Result<Self> {
        for id in ids {
            self.stations.require(id)?;
        }
        let keep: Vec<usize> = (0..self.station_count())
            .filter(|&k| !ids.iter().any(|id| id == self.stations.id(k)))
            .collect();
        let stations = StationSet::new(keep.iter().map(|&k| self.stations.id(k).to_string()))?;
        let t = self.interval_count();
        let values = keep
            .iter()
            .flat_map(|&k| self.entries.row(k).iter().copied())
            .collect();
        let entries = EntryMatrix::from_flat(keep.len(), t, values)?;
        let distances = self
            .distances
            .as_ref()
            .map(|d| {
                DistanceMatrix::new(SquareMatrix::from_fn(keep.len(), |a, b| {
                    d.get(keep[a], keep[b])
                }))
            })
            .transpose()?;
        Scenario::new(stations, self.grid, entries, distances)
    }
}

/// Trips `n[i][j][t]`: non-negative with a zero diagonal.
///
/// Stored with `(origin, interval)` rows contiguous over destinations, so
/// the values for a fixed origin and interval form one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct OdTensor<S = f64> {
    stations: usize,
    intervals: usize,
    values: Vec<S>,
}

impl<S: Scalar> OdTensor<S> {
    pub fn zeros(stations: usize, intervals: usize) -> Self {
        OdTensor {
            stations,
            intervals,
            values: vec![S::zero(); stations * stations * intervals],
        }
    }

    /// Validates and wraps raw values laid out as `[origin][interval][destination]`.
    pub fn from_raw(stations: usize, intervals: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != stations * stations * intervals {
            return Err(OdError::Dimension(format!(
                "expected {} tensor cells, got {}",
                stations * stations * intervals,
                values.len()
            )));
        }
        let od = OdTensor {
            stations,
            intervals,
            values,
        };
        od.validate()?;
        Ok(od)
    }

    /// Builds a tensor from `f(origin, destination, interval)`; the diagonal is
    /// never queried.
    pub fn from_fn(
        stations: usize,
        intervals: usize,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Result<Self> {
        let mut od = Self::zeros(stations, intervals);
        for i in 0..stations {
            for t in 0..intervals {
                for j in 0..stations {
                    if i != j {
                        od.values[(i * intervals + t) * stations + j] = f(i, j, t);
                    }
                }
            }
        }
        od.validate()?;
        Ok(od)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.stations {
            for t in 0..self.intervals {
                let row = self.row(i, t);
                if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= S::zero())) {
                    return Err(OdError::domain(format!(
                        "trips must be finite and non-negative, got {v}"
                    )));
                }
                if row[i] != S::zero() {
                    return Err(OdError::domain(format!(
                        "trips from station {i} to itself must be 0"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn get(&self, origin: usize, destination: usize, interval: usize) -> S {
        self.values[(origin * self.intervals + interval) * self.stations + destination]
    }

    /// Trips from `origin` during `interval`, indexed by destination.
    pub fn row(&self, origin: usize, interval: usize) -> &[S] {
        let start = (origin * self.intervals + interval) * self.stations;
        &self.values[start..start + self.stations]
    }

    pub fn as_raw(&self) -> &[S] {
        &self.values
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn total(&self) -> S {
        self.values.iter().copied().sum()
    }

    /// Trips originating at each `(origin, interval)`, i.e. `Σ_j n_ij^t`.
    pub fn row_sums(&self) -> EntryMatrix<S> {
        let values = (0..self.stations)
            .flat_map(|i| (0..self.intervals).map(move |t| (i, t)))
            .map(|(i, t)| self.row(i, t).iter().copied().sum())
            .collect();
        EntryMatrix {
            stations: self.stations,
            intervals: self.intervals,
            values,
        }
    }

    /// Exits per destination and interval, `D_j^t = Σ_i n_ij^t`.
    pub fn exit_profile(&self) -> EntryMatrix<S> {
        let mut values = vec![S::zero(); self.stations * self.intervals];
        for i in 0..self.stations {
            for t in 0..self.intervals {
                for (j, &v) in self.row(i, t).iter().enumerate() {
                    let cell = &mut values[j * self.intervals + t];
                    *cell = *cell + v;
                }
            }
        }
        EntryMatrix {
            stations: self.stations,
            intervals: self.intervals,
            values,
        }
    }

    /// Exits per destination over all intervals.
    pub fn daily_exits(&self) -> Vec<S> {
        self.exit_profile().daily_totals()
    }

    /// `Σ_ijt d_ij n_ij^t`.
    pub fn person_km(&self, distances: &DistanceMatrix<S>) -> Result<S> {
        if distances.dim() != self.stations {
            return Err(OdError::Dimension(format!(
                "distances are {0}x{0}, tensor has {1} stations",
                distances.dim(),
                self.stations
            )));
        }
        let mut sum = S::zero();
        for i in 0..self.stations {
            let d = distances.row(i);
            for t in 0..self.intervals {
                for (j, &v) in self.row(i, t).iter().enumerate() {
                    sum = sum + v * d[j];
                }
            }
        }
        Ok(sum)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> S {
        assert_eq!(
            self.values.len(),
            other.values.len(),
            "tensor shapes differ"
        );
        self.values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Largest elementwise difference scaled by `max(1, |other|)`.
    pub fn max_scaled_diff(&self, other: &Self) -> S {
        assert_eq!(
            self.values.len(),
            other.values.len(),
            "tensor shapes differ"
        );
        self.values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |m, (a, b)| {
                m.max((*a - *b).abs() / b.abs().max(S::one()))
            })
    }

    pub fn dims_match(&self, scenario: &Scenario<S>) -> Result<()> {
        if self.stations != scenario.station_count() || self.intervals != scenario.interval_count()
        {
            return Err(OdError::Dimension(format!(
                "tensor is {}x{}x{}, scenario has {} stations and {} intervals",
                self.stations,
                self.stations,
                self.intervals,
                scenario.station_count(),
                scenario.interval_count()
            )));
        }
        Ok(())
    }
}
