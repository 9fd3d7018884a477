//! `odest`: estimate, inspect and generate dynamic OD matrices from entry
//! counts.
//!
//! Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure
//! (non-convergence or an infeasible constraint set).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use odest::estimators::{
    balance_destinations, calibrate_ad_with_trace, estimate_ad, estimate_bm, estimate_sa_balanced,
    estimate_sa_closed, CalibrationTarget, UtilityParams, DEFAULT_EPSILON, DEFAULT_MAX_ITERATIONS,
};
use odest::io::{
    load_distances, load_entries, read_od, write_distances, write_entries, write_od, write_trace,
    EntryOptions,
};
use odest::model::{OdTensor, Scenario};
use odest::oracle::{raw_entropy_sum, residuals, ConstraintSet, ResidualReport};
use odest::stats::{
    compare_report, compute_stats, write_profile_csv, write_stats_csv, StatsSummary,
};
use odest::synth::{generate, Rounding, SynthConfig};
use odest::{Method, OdError};

#[derive(Parser)]
#[command(
    name = "odest",
    version,
    about = "Entropy-maximising OD estimation from entry counts"
)]
struct Cli {
    /// Worker threads for estimators (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate an OD tensor and write od.csv.
    Estimate(EstimateArgs),
    /// Travel statistics and exit profiles of OD files.
    Stats(StatsArgs),
    /// Compare OD files against each other and optional reference figures.
    Compare(CompareArgs),
    /// Report constraint residuals of an OD file.
    Check(CheckArgs),
    /// Write a synthetic scenario with its ground truth.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// `station,interval,count` file.
    #[arg(long)]
    entries: PathBuf,
    /// `from,to,km` file.
    #[arg(long)]
    distances: Option<PathBuf>,
    /// Fill missing (j, i) distances from (i, j).
    #[arg(long)]
    symmetric_distances: bool,
    /// Number of intervals; inferred from the entries when omitted.
    #[arg(long)]
    intervals: Option<usize>,
    /// Station ids to drop before estimation.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Bm,
    SaClosed,
    Sa,
    Ad,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bm => Method::Bm,
            MethodArg::SaClosed => Method::SaClosed,
            MethodArg::Sa => Method::Sa,
            MethodArg::Ad => Method::Ad,
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "bm")]
    method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long = "max-iter", default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iter: usize,
    /// Total person-km target; calibrates θ and the destination constants.
    #[arg(long, conflicts_with = "theta")]
    person_km: Option<f64>,
    /// Fixed distance coefficient for an uncalibrated AD run.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Destination constants, one per station; balanced when omitted.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        requires = "theta"
    )]
    constants: Option<Vec<f64>>,
    /// Also print the raw sum Σ (n ln n - n).
    #[arg(long)]
    raw_eq4: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// `name=path` pair naming an OD file.
#[derive(Clone)]
struct NamedOd {
    name: String,
    path: PathBuf,
}

fn parse_named_od(s: &str) -> Result<NamedOd, String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok(NamedOd {
            name: name.to_string(),
            path: PathBuf::from(path),
        }),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// OD file as NAME=PATH; repeatable.
    #[arg(long = "od", value_parser = parse_named_od, required = true)]
    od: Vec<NamedOd>,
    /// Stations whose daily exits are listed; all when omitted.
    #[arg(long, value_delimiter = ',')]
    exit_stations: Vec<String>,
    /// Station whose exit profile is written to profile.csv.
    #[arg(long)]
    profile_station: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// OD file as NAME=PATH; repeatable.
    #[arg(long = "od", value_parser = parse_named_od, required = true)]
    od: Vec<NamedOd>,
    /// Station whose daily exits are compared.
    #[arg(long)]
    station: String,
    /// Reference total person-km.
    #[arg(long, requires_all = ["reference_average_distance", "reference_exits"])]
    reference_person_km: Option<f64>,
    /// Reference average trip length in km.
    #[arg(long, requires_all = ["reference_person_km", "reference_exits"])]
    reference_average_distance: Option<f64>,
    /// Reference daily exits at the compared station.
    #[arg(long, requires_all = ["reference_person_km", "reference_average_distance"])]
    reference_exits: Option<f64>,
    /// Label of the reference row in compare.csv.
    #[arg(long, default_value = "reference")]
    reference_name: String,
    /// Directory for compare.csv; the table is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// OD file to check.
    #[arg(long)]
    od: PathBuf,
    /// Person-km target to check against.
    #[arg(long)]
    person_km: Option<f64>,
    /// Also print the raw sum Σ (n ln n - n).
    #[arg(long)]
    raw_eq4: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    TwoPeakLine,
    TwoPeakStar,
    FlatLine,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "two-peak-line")]
    preset: Preset,
    #[arg(long, default_value_t = 8)]
    stations: usize,
    #[arg(long, default_value_t = 96)]
    intervals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Distance coefficient of the ground truth.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Total trips over the day.
    #[arg(long)]
    total: Option<f64>,
    /// Replace each cell by a seeded Poisson draw.
    #[arg(long)]
    poisson: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<OdError> for Failure {
    fn from(e: OdError) -> Self {
        Failure {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn load_scenario(args: &ScenarioArgs) -> CliResult<Scenario> {
    let options = EntryOptions {
        intervals: args.intervals,
        ..EntryOptions::default()
    };
    let loaded = load_entries(open(&args.entries)?, &options)?;
    let distances = match &args.distances {
        Some(p) => Some(load_distances(
            open(p)?,
            &loaded.stations,
            args.symmetric_distances,
        )?),
        None => None,
    };
    let scenario = Scenario::new(loaded.stations, loaded.grid, loaded.entries, distances)?;
    if args.exclude.is_empty() {
        Ok(scenario)
    } else {
        Ok(scenario.exclude(&args.exclude)?)
    }
}

fn load_od(scenario: &Scenario, path: &Path) -> CliResult<OdTensor> {
    Ok(read_od(
        open(path)?,
        scenario.stations(),
        scenario.interval_count(),
    )?)
}

fn print_report(report: &ResidualReport, raw: Option<f64>) {
    println!("entropy H = {:.9e}", report.entropy);
    if let Some(r) = raw {
        println!("raw sum (n ln n - n) = {r:.9e}");
    }
    println!("residual entry rows = {:.3e}", report.entry_rows);
    if let Some(s) = report.symmetry {
        println!("residual daily symmetry = {s:.3e}");
    }
    if let Some(p) = report.person_km {
        println!("residual person-km = {p:.3e}");
    }
}

fn constraint_set(scenario: &Scenario, symmetry: bool, person_km: Option<f64>) -> ConstraintSet {
    ConstraintSet {
        symmetry,
        person_km: person_km.filter(|_| scenario.distances().is_some()),
    }
}

fn cmd_estimate(args: EstimateArgs) -> CliResult {
    if !(args.epsilon > 0.0) {
        return Err(usage("--epsilon must be positive"));
    }
    let scenario = load_scenario(&args.scenario)?;
    let method = Method::from(args.method);
    let mut target = None;
    let od = match method {
        Method::Bm => estimate_bm(&scenario),
        Method::SaClosed => estimate_sa_closed(&scenario)?,
        Method::Sa => estimate_sa_balanced(&scenario, args.epsilon, args.max_iter)?,
        Method::Ad => {
            if scenario.distances().is_none() {
                return Err(usage("method ad needs --distances"));
            }
            match (args.person_km, args.theta) {
                (Some(d), _) => {
                    let goal = CalibrationTarget::new(d)?
                        .with_epsilon(args.epsilon)?
                        .with_max_iterations(args.max_iter)?;
                    let fit = calibrate_ad_with_trace(&scenario, &goal)?;
                    write_trace(create(&args.out, "calibration_trace.csv")?, &fit.trace)?;
                    if !fit.converged {
                        return Err(Failure {
                            code: 3,
                            message: format!(
                                "calibration did not converge after {} iterations: person-km residual {:.3e}, symmetry residual {:.3e}",
                                fit.iterations, fit.residual_person_km, fit.residual_symmetry
                            ),
                        });
                    }
                    println!(
                        "calibrated theta = {:.9e} in {} iterations",
                        fit.params.theta()[0],
                        fit.iterations
                    );
                    target = Some(d);
                    fit.od
                }
                (None, Some(theta)) => {
                    let params = match &args.constants {
                        Some(k) => {
                            if k.len() != scenario.station_count() {
                                return Err(usage(format!(
                                    "--constants has {} values for {} stations",
                                    k.len(),
                                    scenario.station_count()
                                )));
                            }
                            UtilityParams::distance(theta, k.clone())?
                        }
                        None => {
                            balance_destinations(&scenario, theta, args.epsilon, args.max_iter)?.0
                        }
                    };
                    estimate_ad(&scenario, &params)?
                }
                (None, None) => return Err(usage(
                    "method ad needs --person-km (calibrate) or --theta [--constants] (evaluate)",
                )),
            }
        }
    };
    write_od(create(&args.out, "od.csv")?, scenario.stations(), &od)?;
    let symmetry = matches!(method, Method::Sa | Method::Ad);
    let report = residuals(&od, &scenario, &constraint_set(&scenario, symmetry, target))?;
    println!("method = {method}");
    print_report(&report, args.raw_eq4.then(|| raw_entropy_sum(&od)));
    Ok(())
}

fn station_index(scenario: &Scenario, id: &str) -> CliResult<usize> {
    Ok(scenario.stations().require(id)?)
}

fn cmd_stats(args: StatsArgs) -> CliResult {
    let scenario = load_scenario(&args.scenario)?;
    let distances = scenario.require_distances()?;
    let exit_stations = if args.exit_stations.is_empty() {
        (0..scenario.station_count()).collect()
    } else {
        args.exit_stations
            .iter()
            .map(|id| station_index(&scenario, id))
            .collect::<CliResult<Vec<_>>>()?
    };
    let tensors = args
        .od
        .iter()
        .map(|v| Ok((v.name.clone(), load_od(&scenario, &v.path)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let stats = tensors
        .iter()
        .map(|(name, od)| Ok((name.clone(), compute_stats(od, distances)?)))
        .collect::<CliResult<Vec<_>>>()?;
    write_stats_csv(
        create(&args.out, "stats.csv")?,
        &stats,
        scenario.stations(),
        &exit_stations,
    )?;
    for (name, s) in &stats {
        println!(
            "{name}: person-km {:.3}, average distance {:.4} km, trips {:.3}",
            s.total_person_km, s.average_distance, s.total_trips
        );
    }
    if let Some(id) = &args.profile_station {
        let k = station_index(&scenario, id)?;
        let refs: Vec<(String, &OdTensor)> =
            tensors.iter().map(|(n, od)| (n.clone(), od)).collect();
        write_profile_csv(
            create(&args.out, "profile.csv")?,
            &refs,
            scenario.entries(),
            k,
        )?;
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CliResult {
    let scenario = load_scenario(&args.scenario)?;
    let distances = scenario.require_distances()?;
    let station = station_index(&scenario, &args.station)?;
    let tensors = args
        .od
        .iter()
        .map(|v| Ok((v.name.clone(), load_od(&scenario, &v.path)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let reference = match (
        args.reference_person_km,
        args.reference_average_distance,
        args.reference_exits,
    ) {
        (Some(person_km), Some(average_distance), Some(station_exits)) => Some((
            args.reference_name.clone(),
            StatsSummary {
                person_km,
                average_distance,
                station_exits,
            },
        )),
        _ => None,
    };
    let report = compare_report(&tensors, distances, scenario.stations(), station, reference)?;
    print!("{}", report.to_text());
    if let Some(dir) = &args.out {
        report.write_csv(create(dir, "compare.csv")?)?;
    }
    Ok(())
}

fn cmd_check(args: CheckArgs) -> CliResult {
    let scenario = load_scenario(&args.scenario)?;
    let od = load_od(&scenario, &args.od)?;
    if args.person_km.is_some() && scenario.distances().is_none() {
        return Err(usage("--person-km needs --distances"));
    }
    let report = residuals(
        &od,
        &scenario,
        &constraint_set(&scenario, true, args.person_km),
    )?;
    print_report(&report, args.raw_eq4.then(|| raw_entropy_sum(&od)));
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> CliResult {
    let mut config = match args.preset {
        Preset::TwoPeakLine => SynthConfig::two_peak_line(args.stations, args.intervals),
        Preset::TwoPeakStar => SynthConfig::two_peak_star(args.stations, args.intervals),
        Preset::FlatLine => {
            SynthConfig::flat(args.stations, args.intervals, 1000.0 * args.stations as f64)
        }
    };
    config.seed = args.seed;
    if let Some(theta) = args.theta {
        config.truth_theta = theta;
    }
    if let Some(total) = args.total {
        config.total_trips = total;
    }
    if args.poisson {
        config.rounding = Rounding::Poisson;
    }
    let syn = generate(&config)?;
    let s = &syn.scenario;
    write_entries(create(&args.out, "entries.csv")?, s.stations(), s.entries())?;
    write_distances(
        create(&args.out, "distances.csv")?,
        s.stations(),
        s.require_distances()?,
    )?;
    write_od(create(&args.out, "truth_od.csv")?, s.stations(), &syn.truth)?;
    let pk = syn.truth.person_km(s.require_distances()?)?;
    println!(
        "{} stations, {} intervals, {:.3} trips, truth person-km {pk:.6}",
        s.station_count(),
        s.interval_count(),
        s.total_entries()
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Check(a) => cmd_check(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
