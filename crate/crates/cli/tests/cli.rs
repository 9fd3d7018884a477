use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn odest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Three stations A, B, C with entries 10, 4, 2 on a line 5 + 4 km long.
fn fixture(dir: &Path) {
    fs::write(
        dir.join("entries.csv"),
        "station,interval,count\nA,0,10\nB,0,4\nC,0,2\n",
    )
    .unwrap();
    fs::write(
        dir.join("distances.csv"),
        "from,to,km\nA,B,5\nB,C,4\nA,C,9\n",
    )
    .unwrap();
}

/// Four stations in two intervals, daily totals balanced enough for symmetry.
fn four_stations(dir: &Path) {
    fs::write(
        dir.join("entries.csv"),
        "station,interval,count\nA,0,4\nA,1,1\nB,0,2\nB,1,3\nC,0,1\nC,1,2.5\nD,0,3\nD,1,0.5\n",
    )
    .unwrap();
    fs::write(
        dir.join("distances.csv"),
        "from,to,km\nA,B,3\nA,C,7\nA,D,12\nB,C,4\nB,D,9\nC,D,5\n",
    )
    .unwrap();
}

fn parse_od(text: &str) -> Vec<(String, String, usize, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].into(),
                f[1].into(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn estimate_bm_on_fixture() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fixture(d);
    let o = odest(&[
        "estimate",
        "--entries",
        &path(d, "entries.csv"),
        "--method",
        "bm",
        "--out",
        &path(d, "out"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let od = parse_od(&fs::read_to_string(d.join("out/od.csv")).unwrap());
    let expect = [
        ("A", "B", 5.0),
        ("A", "C", 5.0),
        ("B", "A", 2.0),
        ("B", "C", 2.0),
        ("C", "A", 1.0),
        ("C", "B", 1.0),
    ];
    assert_eq!(od.len(), expect.len());
    for ((o_, d_, t, v), (eo, ed, ev)) in od.iter().zip(expect) {
        assert_eq!((o_.as_str(), d_.as_str(), *t, *v), (eo, ed, 0, ev));
    }
    let text = stdout(&o);
    assert!(text.contains("entropy H"));
    assert!(text.contains("residual entry rows = 0.000e0"));
}

#[test]
fn estimate_ad_calibrates_and_writes_trace() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    four_stations(d);
    let out = path(d, "out");
    let base = [
        "--entries",
        &path(d, "entries.csv"),
        "--distances",
        &path(d, "distances.csv"),
        "--symmetric-distances",
    ];
    let sa = odest(
        &[
            &["estimate", "--method", "sa", "--out", &out][..],
            &base[..],
        ]
        .concat(),
    );
    assert!(sa.status.success(), "{}", stderr(&sa));
    let dist = |a: &str, b: &str| -> f64 {
        let pos = |s: &str| -> f64 {
            match s {
                "A" => 0.0,
                "B" => 3.0,
                "C" => 7.0,
                _ => 12.0,
            }
        };
        (pos(a) - pos(b)).abs()
    };
    let pk: f64 = parse_od(&fs::read_to_string(d.join("out/od.csv")).unwrap())
        .iter()
        .map(|(a, b, _, v)| v * dist(a, b))
        .sum();
    let target = format!("{}", 0.9 * pk);
    let ad = odest(
        &[
            &[
                "estimate",
                "--method",
                "ad",
                "--person-km",
                &target,
                "--out",
                &out,
            ][..],
            &base[..],
        ]
        .concat(),
    );
    assert!(ad.status.success(), "{}", stderr(&ad));
    let trace = fs::read_to_string(d.join("out/calibration_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,theta,person_km_residual,symmetry_residual"));
    assert!(trace.lines().count() > 2);
    let text = stdout(&ad);
    assert!(text.contains("calibrated theta = -"), "{text}");
    assert!(text.contains("residual person-km"));
}

#[test]
fn estimate_ad_without_parameters_is_usage_error() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    four_stations(d);
    let o = odest(&[
        "estimate",
        "--method",
        "ad",
        "--entries",
        &path(d, "entries.csv"),
        "--distances",
        &path(d, "distances.csv"),
        "--symmetric-distances",
        "--out",
        &path(d, "out"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--person-km"));
    assert!(!d.join("out/od.csv").exists());
}

#[test]
fn infeasible_symmetry_exits_with_numerical_code() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fixture(d);
    let o = odest(&[
        "estimate",
        "--method",
        "sa",
        "--entries",
        &path(d, "entries.csv"),
        "--out",
        &path(d, "out"),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("infeasible"));
}

#[test]
fn invalid_input_exits_with_validation_code() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("entries.csv"),
        "station,interval,count\nA,0,-1\nB,0,3\n",
    )
    .unwrap();
    let o = odest(&[
        "estimate",
        "--entries",
        &path(d, "entries.csv"),
        "--out",
        &path(d, "out"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = odest(&["estimate", "--entries", &path(d, "missing.csv")]);
    assert_eq!(o.status.code(), Some(2));
    let o = odest(&[
        "estimate",
        "--method",
        "nope",
        "--entries",
        &path(d, "entries.csv"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_detects_corrupted_row() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fixture(d);
    let out = path(d, "out");
    let e = path(d, "entries.csv");
    assert!(odest(&["estimate", "--entries", &e, "--out", &out])
        .status
        .success());
    let clean = odest(&["check", "--entries", &e, "--od", &path(d, "out/od.csv")]);
    assert!(clean.status.success());
    assert!(stdout(&clean).contains("residual entry rows = 0.000e0"));

    let text = fs::read_to_string(d.join("out/od.csv")).unwrap();
    let corrupted = text.replacen("A,B,0,5.000000", "A,B,0,6.000000", 1);
    assert_ne!(text, corrupted);
    fs::write(d.join("bad.csv"), corrupted).unwrap();
    let o = odest(&["check", "--entries", &e, "--od", &path(d, "bad.csv")]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("residual entry rows = 1.000e-1"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn generate_then_estimate_round_trip() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let gen = path(d, "gen");
    let o = odest(&[
        "generate",
        "--preset",
        "two-peak-line",
        "--stations",
        "8",
        "--intervals",
        "96",
        "--out",
        &gen,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["entries.csv", "distances.csv", "truth_od.csv"] {
        assert!(d.join("gen").join(f).exists(), "{f}");
    }
    let pk: f64 = stdout(&o)
        .rsplit(' ')
        .next()
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    let est = odest(&[
        "estimate",
        "--method",
        "ad",
        "--entries",
        &path(d, "gen/entries.csv"),
        "--distances",
        &path(d, "gen/distances.csv"),
        "--person-km",
        &pk.to_string(),
        "--out",
        &path(d, "est"),
    ]);
    assert!(est.status.success(), "{}", stderr(&est));
    let truth = parse_od(&fs::read_to_string(d.join("gen/truth_od.csv")).unwrap());
    let fit = parse_od(&fs::read_to_string(d.join("est/od.csv")).unwrap());
    assert_eq!(truth.len(), fit.len());
    for (a, b) in truth.iter().zip(&fit) {
        assert_eq!((&a.0, &a.1, a.2), (&b.0, &b.1, b.2));
        assert!((a.3 - b.3).abs() <= 1e-3 * a.3.max(1.0), "{a:?} vs {b:?}");
    }
    let check = odest(&[
        "check",
        "--entries",
        &path(d, "gen/entries.csv"),
        "--distances",
        &path(d, "gen/distances.csv"),
        "--od",
        &path(d, "gen/truth_od.csv"),
        "--person-km",
        &pk.to_string(),
    ]);
    assert!(check.status.success(), "{}", stderr(&check));
}

#[test]
fn compare_reproduces_accuracy_figures() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("entries.csv"),
        "station,interval,count\nA,0,66552\nB,0,0\n",
    )
    .unwrap();
    fs::write(d.join("distances.csv"), "from,to,km\nA,B,19.7\n").unwrap();
    fs::write(
        d.join("ad.csv"),
        "origin,destination,interval,trips\nA,B,0,66552\n",
    )
    .unwrap();
    let o = odest(&[
        "compare",
        "--entries",
        &path(d, "entries.csv"),
        "--distances",
        &path(d, "distances.csv"),
        "--symmetric-distances",
        "--od",
        &format!("ad={}", path(d, "ad.csv")),
        "--station",
        "B",
        "--reference-person-km",
        "5776e3",
        "--reference-average-distance",
        "18.7",
        "--reference-exits",
        "64700",
        "--reference-name",
        "sll",
        "--out",
        &path(d, "out"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(d.join("out/compare.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "ad");
    let avg: f64 = row[5].parse().unwrap();
    let exits: f64 = row[6].parse().unwrap();
    assert_eq!(avg.round(), 95.0);
    assert_eq!(exits.round(), 97.0);
    assert!(stdout(&o).contains("94.65%"));
    assert!(stdout(&o).contains("97.14%"));
}

#[test]
fn stats_writes_tables_and_profile() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    four_stations(d);
    let base = [
        "--entries",
        &path(d, "entries.csv"),
        "--distances",
        &path(d, "distances.csv"),
        "--symmetric-distances",
    ];
    for m in ["bm", "sa"] {
        let out = path(d, m);
        let o = odest(&[&["estimate", "--method", m, "--out", &out][..], &base[..]].concat());
        assert!(o.status.success());
    }
    let bm = format!("bm={}", path(d, "bm/od.csv"));
    let sa = format!("sa={}", path(d, "sa/od.csv"));
    let o = odest(
        &[
            &[
                "stats",
                "--od",
                &bm,
                "--od",
                &sa,
                "--profile-station",
                "B",
                "--out",
                &path(d, "stats"),
            ][..],
            &base[..],
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let stats = fs::read_to_string(d.join("stats/stats.csv")).unwrap();
    assert!(stats.starts_with("variant,total_person_km,average_distance_km,total_trips,exits_A"));
    assert_eq!(stats.lines().count(), 3);
    let profile = fs::read_to_string(d.join("stats/profile.csv")).unwrap();
    assert!(profile.starts_with("interval,bm,sa,entries"));
    assert_eq!(profile.lines().count(), 3);
}

#[test]
fn exclusion_drops_stations() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    four_stations(d);
    let o = odest(&[
        "estimate",
        "--entries",
        &path(d, "entries.csv"),
        "--exclude",
        "D",
        "--out",
        &path(d, "out"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let od = fs::read_to_string(d.join("out/od.csv")).unwrap();
    assert!(!od.contains('D'));
    let o = odest(&[
        "estimate",
        "--entries",
        &path(d, "entries.csv"),
        "--exclude",
        "Z",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let gen = |dir: &str| {
        let o = odest(&[
            "generate",
            "--preset",
            "two-peak-star",
            "--stations",
            "6",
            "--intervals",
            "24",
            "--seed",
            "9",
            "--poisson",
            "--out",
            &path(d, dir),
        ]);
        assert!(o.status.success());
    };
    gen("g1");
    gen("g2");
    for f in ["entries.csv", "distances.csv", "truth_od.csv"] {
        assert_eq!(
            fs::read(d.join("g1").join(f)).unwrap(),
            fs::read(d.join("g2").join(f)).unwrap()
        );
    }
    let run = |dir: &str, threads: &str| {
        let o = odest(&[
            "--threads",
            threads,
            "estimate",
            "--method",
            "sa",
            "--entries",
            &path(d, "g1/entries.csv"),
            "--out",
            &path(d, dir),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read(d.join(dir).join("od.csv")).unwrap(), o.stdout)
    };
    let a = run("e1", "1");
    let b = run("e2", "1");
    let c = run("e3", "4");
    assert_eq!(a, b);
    assert_eq!(a.0, c.0);
}
