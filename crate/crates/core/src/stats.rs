//! Travel statistics of OD estimates and comparison against reported values.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{OdError, Result};
use crate::model::{DistanceMatrix, EntryMatrix, OdTensor, StationSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TravelStats<S = f64> {
    pub total_person_km: S,
    /// Person-km per trip; zero when there are no trips.
    pub average_distance: S,
    pub total_trips: S,
    /// `Σ_{i,t} n_ij^t` per destination.
    pub daily_exits: Vec<S>,
    /// `D_j^t` per destination and interval.
    pub exit_profile: EntryMatrix<S>,
}

pub fn compute_stats<S: Scalar>(
    od: &OdTensor<S>,
    distances: &DistanceMatrix<S>,
) -> Result<TravelStats<S>> {
    let total_person_km = od.person_km(distances)?;
    let total_trips = od.total();
    let exit_profile = od.exit_profile();
    let average_distance = if total_trips > S::zero() {
        total_person_km / total_trips
    } else {
        S::zero()
    };
    Ok(TravelStats {
        total_person_km,
        average_distance,
        total_trips,
        daily_exits: exit_profile.daily_totals(),
        exit_profile,
    })
}

/// Exits at one station per interval.
pub fn exit_profile_series<S: Scalar>(od: &OdTensor<S>, station: usize) -> Result<Vec<S>> {
    if station >= od.stations() {
        return Err(OdError::UnknownStation(format!("#{station}")));
    }
    Ok((0..od.intervals())
        .map(|t| (0..od.stations()).map(|i| od.get(i, station, t)).sum())
        .collect())
}

/// `100 (1 - |estimate - reference| / reference)`.
pub fn accuracy<S: Scalar>(estimate: S, reference: S) -> S {
    S::lit(100.0) * (S::one() - (estimate - reference).abs() / reference)
}

/// The three headline figures compared between variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsSummary<S = f64> {
    pub person_km: S,
    pub average_distance: S,
    pub station_exits: S,
}

impl<S: Scalar> StatsSummary<S> {
    pub fn from_stats(stats: &TravelStats<S>, station: usize) -> Self {
        StatsSummary {
            person_km: stats.total_person_km,
            average_distance: stats.average_distance,
            station_exits: stats.daily_exits[station],
        }
    }

    /// Accuracy of each figure against `reference`, in percent.
    pub fn accuracy_against(&self, reference: &Self) -> Self {
        StatsSummary {
            person_km: accuracy(self.person_km, reference.person_km),
            average_distance: accuracy(self.average_distance, reference.average_distance),
            station_exits: accuracy(self.station_exits, reference.station_exits),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow<S = f64> {
    pub name: String,
    pub summary: StatsSummary<S>,
    pub accuracy: Option<StatsSummary<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport<S = f64> {
    pub station: String,
    pub rows: Vec<ComparisonRow<S>>,
    pub reference: Option<(String, StatsSummary<S>)>,
}

impl<S: Scalar> ComparisonReport<S> {
    pub fn from_summaries(
        station: impl Into<String>,
        variants: Vec<(String, StatsSummary<S>)>,
        reference: Option<(String, StatsSummary<S>)>,
    ) -> Self {
        let rows = variants
            .into_iter()
            .map(|(name, summary)| ComparisonRow {
                accuracy: reference.as_ref().map(|(_, r)| summary.accuracy_against(r)),
                name,
                summary,
            })
            .collect();
        ComparisonReport {
            station: station.into(),
            rows,
            reference,
        }
    }

    pub fn row(&self, name: &str) -> Option<&ComparisonRow<S>> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>16} {:>10} {:>14}{}",
            "variant",
            "person-km",
            "avg km",
            format!("exits {}", self.station),
            if self.reference.is_some() {
                "   acc pkm   acc avg  acc exits"
            } else {
                ""
            }
        );
        for row in &self.rows {
            let s = row.summary;
            let _ = write!(
                out,
                "{:<12} {:>16.1} {:>10.2} {:>14.1}",
                row.name,
                s.person_km.to_f64_lossy(),
                s.average_distance.to_f64_lossy(),
                s.station_exits.to_f64_lossy()
            );
            if let Some(a) = row.accuracy {
                let _ = write!(
                    out,
                    " {:>8.2}% {:>8.2}% {:>9.2}%",
                    a.person_km.to_f64_lossy(),
                    a.average_distance.to_f64_lossy(),
                    a.station_exits.to_f64_lossy()
                );
            }
            out.push('\n');
        }
        if let Some((name, r)) = &self.reference {
            let _ = writeln!(
                out,
                "{:<12} {:>16.1} {:>10.2} {:>14.1}",
                name,
                r.person_km.to_f64_lossy(),
                r.average_distance.to_f64_lossy(),
                r.station_exits.to_f64_lossy()
            );
        }
        out
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "variant".to_string(),
            "total_person_km".into(),
            "average_distance_km".into(),
            format!("exits_{}", self.station),
            "accuracy_person_km".into(),
            "accuracy_average_distance".into(),
            "accuracy_exits".into(),
        ])?;
        let fmt = |v: S| format!("{:.6}", v.to_f64_lossy());
        for row in &self.rows {
            let s = row.summary;
            let acc = row.accuracy.map_or_else(
                || [String::new(), String::new(), String::new()],
                |a| {
                    [
                        fmt(a.person_km),
                        fmt(a.average_distance),
                        fmt(a.station_exits),
                    ]
                },
            );
            w.write_record([
                row.name.clone(),
                fmt(s.person_km),
                fmt(s.average_distance),
                fmt(s.station_exits),
                acc[0].clone(),
                acc[1].clone(),
                acc[2].clone(),
            ])?;
        }
        if let Some((name, r)) = &self.reference {
            w.write_record([
                name.clone(),
                fmt(r.person_km),
                fmt(r.average_distance),
                fmt(r.station_exits),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row per variant with person-km, average distance and exits at
/// `station`, plus accuracy columns when reference figures are supplied.
pub fn compare_report<S: Scalar>(
    variants: &[(String, OdTensor<S>)],
    distances: &DistanceMatrix<S>,
    stations: &StationSet,
    station: usize,
    reference: Option<(String, StatsSummary<S>)>,
) -> Result<ComparisonReport<S>> {
    if station >= stations.len() {
        return Err(OdError::UnknownStation(format!("#{station}")));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for (name, od) in variants {
        if od.stations() != stations.len() {
            return Err(OdError::Dimension(format!(
                "variant `{name}` has wrong station count"
            )));
        }
        let stats = compute_stats(od, distances)?;
        rows.push((name.clone(), StatsSummary::from_stats(&stats, station)));
    }
    Ok(ComparisonReport::from_summaries(
        stations.id(station),
        rows,
        reference,
    ))
}

/// `variant,total_person_km,average_distance_km,total_trips,exits_<station>...`
pub fn write_stats_csv<S: Scalar, W: Write>(
    sink: W,
    variants: &[(String, TravelStats<S>)],
    stations: &StationSet,
    exit_stations: &[usize],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![
        "variant".to_string(),
        "total_person_km".into(),
        "average_distance_km".into(),
        "total_trips".into(),
    ];
    header.extend(
        exit_stations
            .iter()
            .map(|&k| format!("exits_{}", stations.id(k))),
    );
    w.write_record(&header)?;
    for (name, stats) in variants {
        let mut record = vec![
            name.clone(),
            format!("{:.6}", stats.total_person_km.to_f64_lossy()),
            format!("{:.6}", stats.average_distance.to_f64_lossy()),
            format!("{:.6}", stats.total_trips.to_f64_lossy()),
        ];
        record.extend(
            exit_stations
                .iter()
                .map(|&k| format!("{:.6}", stats.daily_exits[k].to_f64_lossy())),
        );
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// `interval,<variant...>,entries`: exits per variant and entries at `station`.
pub fn write_profile_csv<S: Scalar, W: Write>(
    sink: W,
    variants: &[(String, &OdTensor<S>)],
    entries: &EntryMatrix<S>,
    station: usize,
) -> Result<()> {
    let series = variants
        .iter()
        .map(|(_, od)| exit_profile_series(od, station))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["interval".to_string()];
    header.extend(variants.iter().map(|(n, _)| n.clone()));
    header.push("entries".into());
    w.write_record(&header)?;
    for t in 0..entries.intervals() {
        let mut record = vec![t.to_string()];
        record.extend(series.iter().map(|s| format!("{:.6}", s[t].to_f64_lossy())));
        record.push(format!("{:.6}", entries.get(station, t).to_f64_lossy()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
