//! CSV readers and writers for the scenario and result files.
//!
//! | file            | header                               |
//! |-----------------|--------------------------------------|
//! | entries         | `station,interval,count`             |
//! | distances       | `from,to,km`                         |
//! | OD estimates    | `origin,destination,interval,trips`  |
//! | calibration log | `iteration,theta,person_km_residual,symmetry_residual` |

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{OdError, Result};
use crate::estimators::CalibrationStep;
use crate::model::{DistanceMatrix, EntryMatrix, OdTensor, SquareMatrix, StationSet, TimeGrid};
use crate::scalar::Scalar;

pub const ENTRIES_HEADER: [&str; 3] = ["station", "interval", "count"];
pub const DISTANCES_HEADER: [&str; 3] = ["from", "to", "km"];
pub const OD_HEADER: [&str; 4] = ["origin", "destination", "interval", "trips"];
pub const TRACE_HEADER: [&str; 4] = [
    "iteration",
    "theta",
    "person_km_residual",
    "symmetry_residual",
];

#[derive(Debug, Clone, Default)]
pub struct EntryOptions {
    /// Fixes `|T|` instead of inferring `1 + max interval`.
    pub intervals: Option<usize>,
    /// Stations listed ahead of those appearing in the file, so stations
    /// without any entry rows still exist.
    pub declared_stations: Vec<String>,
    /// Informational interval length; 15 when unset.
    pub interval_minutes: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct LoadedEntries<S = f64> {
    pub stations: StationSet,
    pub grid: TimeGrid,
    pub entries: EntryMatrix<S>,
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(source)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers()?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(OdError::Parse {
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn field<'r>(record: &'r csv::StringRecord, k: usize, name: &str) -> Result<&'r str> {
    record.get(k).ok_or_else(|| OdError::Parse {
        line: line_of(record),
        message: format!("missing field `{name}`"),
    })
}

fn parse_real<S: Scalar>(record: &csv::StringRecord, k: usize, name: &str) -> Result<S> {
    let raw = field(record, k, name)?;
    let v: f64 = raw.parse().map_err(|_| OdError::Parse {
        line: line_of(record),
        message: format!("`{raw}` is not a number ({name})"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(OdError::domain(format!(
            "line {}: {name} must be finite and non-negative, got {raw}",
            line_of(record)
        )));
    }
    S::from_f64(v).ok_or_else(|| OdError::domain(format!("{raw} not representable")))
}

fn parse_index(record: &csv::StringRecord, k: usize, name: &str) -> Result<usize> {
    let raw = field(record, k, name)?;
    raw.parse().map_err(|_| OdError::Parse {
        line: line_of(record),
        message: format!("`{raw}` is not a non-negative integer ({name})"),
    })
}

/// Reads `station,interval,count` rows. Absent pairs are zero; stations are
/// ordered by declaration, then by first appearance.
pub fn load_entries<S: Scalar, R: Read>(
    source: R,
    options: &EntryOptions,
) -> Result<LoadedEntries<S>> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &ENTRIES_HEADER)?;

    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for id in &options.declared_stations {
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(OdError::DuplicateKey(format!("declared station `{id}`")));
        }
        ids.push(id.clone());
    }

    let mut cells: HashMap<(usize, usize), S> = HashMap::new();
    let mut max_interval = 0usize;
    for record in rdr.records() {
        let record = record?;
        let station = field(&record, 0, "station")?;
        if station.is_empty() {
            return Err(OdError::Parse {
                line: line_of(&record),
                message: "empty station id".into(),
            });
        }
        let interval = parse_index(&record, 1, "interval")?;
        let count: S = parse_real(&record, 2, "count")?;
        if let Some(limit) = options.intervals {
            if interval >= limit {
                return Err(OdError::domain(format!(
                    "line {}: interval {interval} outside 0..{limit}",
                    line_of(&record)
                )));
            }
        }
        let k = *index.entry(station.to_string()).or_insert_with(|| {
            ids.push(station.to_string());
            ids.len() - 1
        });
        if cells.insert((k, interval), count).is_some() {
            return Err(OdError::DuplicateKey(format!(
                "station `{station}` interval {interval} (line {})",
                line_of(&record)
            )));
        }
        max_interval = max_interval.max(interval);
    }

    let intervals = match options.intervals {
        Some(t) => t,
        None if cells.is_empty() => {
            return Err(OdError::MissingInput("entries file has no rows".into()))
        }
        None => max_interval + 1,
    };
    let stations = StationSet::new(ids)?;
    let mut values = vec![S::zero(); stations.len() * intervals];
    for ((k, t), v) in cells {
        values[k * intervals + t] = v;
    }
    Ok(LoadedEntries {
        grid: TimeGrid::new(intervals, options.interval_minutes.unwrap_or(15))?,
        entries: EntryMatrix::from_flat(stations.len(), intervals, values)?,
        stations,
    })
}

/// Reads `from,to,km` rows. Without `symmetric`, every ordered off-diagonal
/// pair must be present; with it, a missing `(j, i)` is copied from `(i, j)`.
/// Diagonal rows are accepted and ignored.
pub fn load_distances<S: Scalar, R: Read>(
    source: R,
    stations: &StationSet,
    symmetric: bool,
) -> Result<DistanceMatrix<S>> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &DISTANCES_HEADER)?;
    let n = stations.len();
    let mut cells: Vec<Option<S>> = vec![None; n * n];
    for record in rdr.records() {
        let record = record?;
        let from = stations.require(field(&record, 0, "from")?)?;
        let to = stations.require(field(&record, 1, "to")?)?;
        let km: S = parse_real(&record, 2, "km")?;
        if from == to {
            continue;
        }
        if cells[from * n + to].replace(km).is_some() {
            return Err(OdError::DuplicateKey(format!(
                "distance {} -> {} (line {})",
                stations.id(from),
                stations.id(to),
                line_of(&record)
            )));
        }
    }
    if symmetric {
        for i in 0..n {
            for j in 0..n {
                if cells[i * n + j].is_none() {
                    cells[i * n + j] = cells[j * n + i];
                }
            }
        }
    }
    let mut rows = vec![vec![S::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            rows[i][j] = cells[i * n + j].ok_or_else(|| OdError::MissingPair {
                from: stations.id(i).to_string(),
                to: stations.id(j).to_string(),
            })?;
        }
    }
    DistanceMatrix::new(SquareMatrix::from_rows(rows)?)
}

/// Writes every `(station, interval)` cell, zeros included, so that reading
/// the file back yields the same stations, grid and counts.
pub fn write_entries<S: Scalar, W: Write>(
    sink: W,
    stations: &StationSet,
    entries: &EntryMatrix<S>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(ENTRIES_HEADER)?;
    for k in 0..entries.stations() {
        for t in 0..entries.intervals() {
            w.write_record([
                stations.id(k).to_string(),
                t.to_string(),
                entries.get(k, t).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_distances<S: Scalar, W: Write>(
    sink: W,
    stations: &StationSet,
    distances: &DistanceMatrix<S>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(DISTANCES_HEADER)?;
    for i in 0..distances.dim() {
        for j in 0..distances.dim() {
            if i != j {
                w.write_record([
                    stations.id(i).to_string(),
                    stations.id(j).to_string(),
                    distances.get(i, j).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the non-zero cells with six decimals, ordered by origin,
/// destination, interval.
pub fn write_od<S: Scalar, W: Write>(
    sink: W,
    stations: &StationSet,
    od: &OdTensor<S>,
) -> Result<()> {
    if od.stations() != stations.len() {
        return Err(OdError::Dimension(format!(
            "tensor has {} stations, station set has {}",
            od.stations(),
            stations.len()
        )));
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(OD_HEADER)?;
    for i in 0..od.stations() {
        for j in 0..od.stations() {
            for t in 0..od.intervals() {
                let v = od.get(i, j, t);
                if v != S::zero() {
                    w.write_record([
                        stations.id(i).to_string(),
                        stations.id(j).to_string(),
                        t.to_string(),
                        format!("{:.6}", v.to_f64_lossy()),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_od<S: Scalar, R: Read>(
    source: R,
    stations: &StationSet,
    intervals: usize,
) -> Result<OdTensor<S>> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &OD_HEADER)?;
    let n = stations.len();
    let mut values = vec![S::zero(); n * n * intervals];
    let mut seen = vec![false; n * n * intervals];
    for record in rdr.records() {
        let record = record?;
        let i = stations.require(field(&record, 0, "origin")?)?;
        let j = stations.require(field(&record, 1, "destination")?)?;
        let t = parse_index(&record, 2, "interval")?;
        let trips: S = parse_real(&record, 3, "trips")?;
        if t >= intervals {
            return Err(OdError::domain(format!(
                "line {}: interval {t} outside 0..{intervals}",
                line_of(&record)
            )));
        }
        let k = (i * intervals + t) * n + j;
        if std::mem::replace(&mut seen[k], true) {
            return Err(OdError::DuplicateKey(format!(
                "{} -> {} interval {t} (line {})",
                stations.id(i),
                stations.id(j),
                line_of(&record)
            )));
        }
        values[k] = trips;
    }
    OdTensor::from_raw(n, intervals, values)
}

pub fn write_trace<S: Scalar, W: Write>(sink: W, trace: &[CalibrationStep<S>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(TRACE_HEADER)?;
    for step in trace {
        w.write_record([
            step.iteration.to_string(),
            format!("{:e}", step.theta.to_f64_lossy()),
            format!("{:e}", step.person_km_residual.to_f64_lossy()),
            format!("{:e}", step.symmetry_residual.to_f64_lossy()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
