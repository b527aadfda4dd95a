use std::path::Path;
use std::process::Command;

use driftbound_cli::commands::{self, BOUND_CURVE_HEADER, SWEEP_HEADER, TV_CURVE_HEADER};
use driftbound_cli::config::{parse_data, DataSource, ExperimentConfig, SimulationConfig, SynthSpec};
use driftbound_cli::manifest::{verify, RunManifest, MANIFEST_FILE};
use driftbound_cli::validation::{run_validation, ValidationReport};
use driftbound_cli::CliError;
use proptest::prelude::*;

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn small_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: out.to_path_buf(),
        k_max: 20,
        ..ExperimentConfig::default()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_driftbound"))
}

#[test]
fn bound_curve_golden_header_and_additivity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let m = commands::bound_curve(&cfg, None).unwrap();
    let csv = read(&dir.path().join("bound_curve.csv"));
    assert_eq!(csv.lines().next().unwrap(), "k,term1,term2,tail,total,clamped_total");
    assert_eq!(BOUND_CURVE_HEADER, "k,term1,term2,tail,total,clamped_total");
    let r = rows(&csv);
    assert_eq!(r.len(), 20);
    let mut prev = f64::INFINITY;
    for (i, row) in r.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        let x: Vec<f64> = row[1..].iter().map(|s| s.parse().unwrap()).collect();
        assert!((x[3] - (x[0] + x[1] + x[2])).abs() <= 1e-12 * x[3].max(1.0));
        assert_eq!(x[4], x[3].min(1.0));
        // gamma is within 1e-30 of one here, so term1 only weakly decreases in f64.
        assert!(x[0] <= prev);
        prev = x[0];
    }
    assert!(verify(dir.path(), &m).is_empty());
    let names: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
    assert_eq!(names, ["bound_curve.csv", "bound_report.json"]);
}

#[test]
fn bound_curve_rerun_from_manifest_is_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = commands::bound_curve(&small_config(a.path()), None).unwrap();
    let cfg = ExperimentConfig::load(&a.path().join(MANIFEST_FILE)).unwrap();
    let second = commands::bound_curve(&cfg, Some(b.path())).unwrap();
    assert_eq!(first.artifacts, second.artifacts);
    assert_eq!(read(&a.path().join("bound_curve.csv")), read(&b.path().join("bound_curve.csv")));
}

#[test]
fn sweep_golden_header_and_failed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n_list: vec![100, 400],
        ..small_config(dir.path())
    };
    commands::sweep_n(&cfg, None).unwrap();
    let csv = read(&dir.path().join("sweep_n.csv"));
    assert_eq!(
        csv.lines().next().unwrap(),
        "n,lambda_t,b_drift,d_small,epsilon,q_mass,gamma,log_gamma,k_bar,n_c,status"
    );
    assert_eq!(SWEEP_HEADER, csv.lines().next().unwrap());
    let r = rows(&csv);
    assert_eq!(r.len(), 2);
    assert!(r.iter().all(|row| row.len() == 11 && row[10] == "ok"));
    assert_eq!(r[0][1].parse::<f64>().unwrap(), 0.5625);

    // Centre 0.5 gives Delta/(n-1) = 1.5 < V + delta on every resample.
    let low = ExperimentConfig {
        data: DataSource::Synth(SynthSpec {
            n: 100,
            center: 0.5,
            exact_center: true,
        }),
        n_list: vec![50, 100],
        ..small_config(dir.path())
    };
    let m = commands::sweep_n(&low, None).unwrap();
    let csv = read(&dir.path().join("sweep_n.csv"));
    assert_eq!(csv.lines().nth(1).unwrap(), "50,,,,,,,,,,failed");
    assert_eq!(csv.lines().nth(2).unwrap(), "100,,,,,,,,,,failed");
    let details: serde_json::Value = serde_json::from_str(&read(&dir.path().join("sweep_n.json"))).unwrap();
    assert!(details[0]["error"].as_str().unwrap().contains("100 resamples"));
    assert!(verify(dir.path(), &m).is_empty());
}

#[test]
fn synth_data_is_deterministic_and_centred() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small_config(a.path());
    cfg.seed = 42;
    commands::synth_data(&cfg, None).unwrap();
    commands::synth_data(&cfg, Some(b.path())).unwrap();
    let bytes = std::fs::read(a.path().join("data.txt")).unwrap();
    assert_eq!(bytes, std::fs::read(b.path().join("data.txt")).unwrap());
    let ds = parse_data(&String::from_utf8(bytes).unwrap()).unwrap();
    assert_eq!(ds.n(), 100);
    assert!((ds.delta / 99.0 - 3.0).abs() < 1e-12);

    // Without rescaling the spread is V + A = 3 up to sampling error (sd about 0.43).
    cfg.data = DataSource::Synth(SynthSpec {
        n: 100,
        center: 2.0,
        exact_center: false,
    });
    commands::synth_data(&cfg, None).unwrap();
    let ds = parse_data(&read(&a.path().join("data.txt"))).unwrap();
    assert!((ds.delta / 99.0 - 3.0).abs() < 4.0 * 3.0 * (2.0f64 / 99.0).sqrt());
}

#[test]
fn synth_data_rejects_n_below_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["synth-data", "--n", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn large_set_above_centre_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = ExperimentConfig {
        large_set_t: Some(5.0),
        output_dir: out.clone(),
        ..ExperimentConfig::default()
    };
    let err = commands::validate(&cfg, None, None).unwrap_err();
    assert!(matches!(err, CliError::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("T = 5"));
    assert!(!out.exists());

    let path = dir.path().join("bad.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let status = bin().args(["validate", "--config"]).arg(&path).status().unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"seed": 3, "sead": 4}"#).unwrap();
    assert!(matches!(ExperimentConfig::load(&path), Err(CliError::Config(_))));
    std::fs::write(&path, r#"{"seed": 3, "data": {"synth": {"n": 30, "center": 2.0}}}"#).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.k_max, 200);
    assert_eq!(
        cfg.data,
        DataSource::Synth(SynthSpec {
            n: 30,
            center: 2.0,
            exact_center: true
        })
    );
}

#[test]
fn data_files_in_both_formats() {
    let text = "# header\n1.5\n\n-0.25\n  3.0  \n";
    let ds = parse_data(text).unwrap();
    assert_eq!(ds.y, vec![1.5, -0.25, 3.0]);
    let ds = parse_data(" [1.5, -0.25, 3.0]").unwrap();
    assert_eq!(ds.y, vec![1.5, -0.25, 3.0]);
    assert!(parse_data("1.0\nabc\n").is_err());
    assert!(parse_data("1.0\n").is_err());

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    commands::synth_data(&cfg, None).unwrap();
    cfg.data = DataSource::File(dir.path().join("data.txt"));
    let from_file = cfg.resolve().unwrap();
    cfg.data = ExperimentConfig::default().data;
    let from_synth = cfg.resolve().unwrap();
    assert_eq!(from_file.data.y, from_synth.data.y);
}

#[test]
fn validation_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (m, report) = commands::validate(&cfg, None, Some(&[8])).unwrap();
    assert!(report.all_pass);
    let text = read(&dir.path().join("validation_report.json"));
    let parsed: ValidationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, report);
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), value);
    let c = &value["criteria"][0];
    for key in ["id", "name", "measured", "threshold", "pass"] {
        assert!(c.get(key).is_some(), "missing {key}");
    }
    assert!(verify(dir.path(), &m).is_empty());
    let manifest: RunManifest = serde_json::from_str(&read(&dir.path().join(MANIFEST_FILE))).unwrap();
    assert_eq!(manifest.command, "validate");
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bin()
        .args(["validate", "--scale", "quick", "--only", "8", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("criterion  8 [PASS]"));
    let bad = bin().args(["validate", "--only", "11", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(bad.code(), Some(1));
}

#[test]
fn a_failing_criterion_is_an_entry_not_an_error() {
    let report = run_validation(1, Default::default(), Some(&[0]));
    assert!(!report.all_pass);
    assert_eq!(report.criteria[0].measured, None);
    assert!(report.criteria[0].details[0].contains("no criterion 0"));
}

fn sim_config(out: &Path, n_chains: usize) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: out.to_path_buf(),
        k_max: 10,
        simulation: SimulationConfig {
            n_chains,
            n_steps: 10,
            tv_replicas: 2_000,
            reference_burn_in: 1_000,
            reference_steps: 200_000,
            bins_theta: 8,
            bins_a: 8,
            ..SimulationConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn simulate_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = commands::simulate(&sim_config(dir.path(), 500), None).unwrap();
    let tv = read(&dir.path().join("tv_curve.csv"));
    assert_eq!(tv.lines().next().unwrap(), "k,tv,se,bound,clamped_bound");
    assert_eq!(TV_CURVE_HEADER, tv.lines().next().unwrap());
    let r = rows(&tv);
    assert_eq!(r.len(), 11);
    let k0: Vec<f64> = r[0][1..].iter().map(|s| s.parse().unwrap()).collect();
    // A point mass against a continuous law: every replica sits in one bin.
    assert!(k0[0] > 0.95, "{k0:?}");
    assert_eq!(k0[2], 1.0);
    for row in &r {
        let x: Vec<f64> = row[1..].iter().map(|s| s.parse().unwrap()).collect();
        assert!(x[3] >= x[0] - 3.0 * x[1]);
    }
    let ens = read(&dir.path().join("ensemble.csv"));
    assert_eq!(ens.lines().next().unwrap(), "chain,step,theta_bar,a,f,in_large_set");
    assert_eq!(ens.lines().count(), 1 + 500 * 11);
    assert!(verify(dir.path(), &m).is_empty());
}

#[test]
fn ensemble_se_scales_with_chain_count() {
    let se_at = |chains: usize| {
        let dir = tempfile::tempdir().unwrap();
        commands::simulate(&sim_config(dir.path(), chains), None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&read(&dir.path().join("simulate_summary.json"))).unwrap();
        v["aggregates"][5]["se_f"].as_f64().unwrap()
    };
    // Four times the chains halves the standard error.
    let ratio = se_at(8_000) / se_at(2_000);
    assert!((ratio - 0.5).abs() < 0.1, "{ratio}");
}

proptest! {
    #[test]
    fn csv_numbers_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let s = commands::fmt(x);
        prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn data_text_round_trips(ys in proptest::collection::vec(-1e6f64..1e6, 2..40)) {
        let text: String = ys.iter().map(|y| commands::fmt(*y) + "\n").collect();
        prop_assert_eq!(parse_data(&text).unwrap().y, ys);
    }
}
