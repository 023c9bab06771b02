use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;
use tempfile::TempDir;

fn qclose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qclose")).args(args).output().expect("qclose runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_data(dir: &Path, name: &str, constant_y: bool) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut text = String::from("y,x,z\n");
    for _ in 0..80 {
        let x: f64 = StandardNormal.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        let y = if constant_y { 2.0 } else { 0.5 + 0.7 * x + 0.5 * z + e };
        text.push_str(&format!("{y},{x},{z}\n"));
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn test_args<'a>(input: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["test", "--input", input, "--response", "y", "--target", "x", "--nuisance", "z"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn test_reports_hypotheses_and_subsets() {
    let dir = TempDir::new().unwrap();
    let input = write_data(dir.path(), "d.csv", false);
    let o = qclose(&test_args(&input, &["--taus", "0.25,0.5,0.75", "--weighting", "identity", "--verbose"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let h = v["hypotheses"].as_array().unwrap();
    assert_eq!(h.len(), 3);
    assert_eq!(v["subsets"].as_array().unwrap().len(), 7);
    for row in h {
        assert!((row["beta_hat"].as_f64().unwrap() - 0.7).abs() < 0.5);
        assert!(row["adjusted_p"].as_f64().unwrap() >= row["local_p"].as_f64().unwrap());
        assert_eq!(row["rejected"].as_bool().unwrap(), row["adjusted_p"].as_f64().unwrap() <= 0.05);
    }

    let quiet = qclose(&test_args(&input, &["--taus", "0.25,0.5,0.75"]));
    let v: Value = serde_json::from_str(&stdout(&quiet)).unwrap();
    assert!(v.get("subsets").is_none());
    assert_eq!(v["weighting"], "identity");
}

#[test]
fn test_csv_output_parses() {
    let dir = TempDir::new().unwrap();
    let input = write_data(dir.path(), "d.csv", false);
    let out = dir.path().join("report.csv");
    let o = qclose(&test_args(
        &input,
        &["--taus", "0.25,0.75", "--format", "csv", "--verbose", "--out", out.to_str().unwrap()],
    ));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2 + 3);
    assert_eq!(&rows[0][0], "hypothesis");
    assert_eq!(&rows[4][1], "{1,2}");
}

#[test]
fn missing_column_exits_2_naming_it() {
    let dir = TempDir::new().unwrap();
    let input = write_data(dir.path(), "d.csv", false);
    let o = qclose(&["test", "--input", &input, "--response", "y", "--target", "income", "--taus", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("income"), "{}", stderr(&o));
}

#[test]
fn malformed_number_reports_line() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y,x\n1,2\n3,oops\n").unwrap();
    let o = qclose(&["test", "--input", path.to_str().unwrap(), "--response", "y", "--target", "x", "--taus", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn constant_response_exits_3() {
    let dir = TempDir::new().unwrap();
    let input = write_data(dir.path(), "c.csv", true);
    let o = qclose(&test_args(&input, &["--taus", "0.25,0.5"]));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn validation_failures_exit_2() {
    let dir = TempDir::new().unwrap();
    let input = write_data(dir.path(), "d.csv", false);
    for taus in ["0.5,0.25", "0,0.5", "0.5,0.5"] {
        assert_eq!(qclose(&test_args(&input, &["--taus", taus])).status.code(), Some(2), "taus {taus}");
    }
    assert_eq!(qclose(&test_args(&input, &["--taus", "0.25,0.5", "--null-values", "0"])).status.code(), Some(2));
    assert_eq!(qclose(&test_args(&input, &["--taus", "0.5", "--alpha", "1.5"])).status.code(), Some(2));
    assert_eq!(qclose(&test_args(&input, &[])).status.code(), Some(2));
}

#[test]
fn only_one_weighting_per_test() {
    let dir = TempDir::new().unwrap();
    let input = write_data(dir.path(), "d.csv", false);
    let o = qclose(&test_args(&input, &["--taus", "0.5", "--weighting", "identity,inverse"]));
    assert_eq!(o.status.code(), Some(2));
    let o = qclose(&test_args(&input, &["--taus", "0.5", "--weighting", "identity", "--weighting", "inverse"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn custom_weighting_file() {
    let dir = TempDir::new().unwrap();
    let input = write_data(dir.path(), "d.csv", false);
    let good = dir.path().join("b.txt");
    std::fs::write(&good, "2 0.5\n0.5 1\n").unwrap();
    let spec = format!("custom:{}", good.display());
    let o = qclose(&test_args(&input, &["--taus", "0.25,0.75", "--weighting", &spec]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1 2\n2 1\n").unwrap();
    let spec = format!("custom:{}", bad.display());
    let o = qclose(&test_args(&input, &["--taus", "0.25,0.75", "--weighting", &spec]));
    assert_eq!(o.status.code(), Some(2));

    let o = qclose(&test_args(&input, &["--taus", "0.25,0.5,0.75", "--weighting", &format!("custom:{}", good.display())]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inverse_weighting_matches_standard_chi_square() {
    let dir = TempDir::new().unwrap();
    let input = write_data(dir.path(), "d.csv", false);
    let o = qclose(&test_args(&input, &["--taus", "0.5", "--weighting", "inverse", "--verbose"]));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let s = &v["subsets"][0];
    let expected = statrs::distribution::ContinuousCDF::sf(
        &statrs::distribution::ChiSquared::new(1.0).unwrap(),
        s["statistic"].as_f64().unwrap(),
    );
    assert!((s["local_p"].as_f64().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn simulate_is_deterministic_given_seed() {
    let args = ["simulate", "--scenario", "null_calibration", "--replications", "30", "--seed", "99", "--format", "csv"];
    let a = qclose(&args);
    let b = qclose(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert!(stderr(&a).contains("seed: 99"));
    let c = qclose(&["simulate", "--scenario", "null_calibration", "--replications", "30", "--seed", "100", "--format", "csv"]);
    assert_ne!(a.stdout, c.stdout);
    let header = stdout(&a).lines().next().unwrap().to_string();
    assert_eq!(header, "method,kind,label,rate,std_error");
}

#[test]
fn simulate_json_has_familywise_rates() {
    let o = qclose(&["simulate", "--scenario", "null_calibration", "--replications", "20", "--methods", "closed:identity,holm"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["completed_replications"], 20);
    let identity = &v["methods"][0];
    assert_eq!(identity["method"], "closed:identity");
    assert!(identity["familywise"]["rate"].as_f64().unwrap() <= 1.0);
    assert_eq!(identity["subsets"].as_array().unwrap().len(), 31);
}

#[test]
fn simulate_rejects_bad_scenarios() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("s.scn");
    std::fs::write(&path, "dgp = lognormal\nbeta = 0\ngamma = 0\nn = 50\nrho = 0\ntaus = 0.5\nreplications = 2\nseed = 1\n")
        .unwrap();
    let o = qclose(&["simulate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lognormal"), "{}", stderr(&o));
    assert_eq!(qclose(&["simulate", "--scenario", "no_such_scenario"]).status.code(), Some(2));
    assert_eq!(qclose(&["simulate", "--scenario", "null_calibration", "--methods", "closed:bogus"]).status.code(), Some(2));
}

fn power(args: &[&str]) -> Value {
    let mut all = vec!["power"];
    all.extend_from_slice(args);
    let o = qclose(&all);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn power_at_null_is_alpha() {
    for weighting in ["identity", "inverse", "diag-delta", "density:t3"] {
        let v = power(&["--taus", "0.1,0.5,0.9", "--g", "0,0,0", "--weighting", weighting, "--alpha", "0.1"]);
        let rows = v["subsets"].as_array().unwrap();
        assert_eq!(rows.len(), 7);
        for r in rows {
            assert!((r["standard_power"].as_f64().unwrap() - 0.1).abs() < 1e-8, "{weighting}: {r}");
            assert!((r["weighted_power"].as_f64().unwrap() - 0.1).abs() < 1e-8, "{weighting}: {r}");
        }
    }
}

#[test]
fn inverse_weighting_power_matches_standard() {
    let v = power(&["--taus", "0.2,0.4,0.6,0.8", "--g", "0.3,-0.2,0.5,0.1", "--vn", "0.7", "--weighting", "inverse"]);
    for r in v["subsets"].as_array().unwrap() {
        let (a, b) = (r["standard_power"].as_f64().unwrap(), r["weighted_power"].as_f64().unwrap());
        assert!((a - b).abs() < 1e-8, "{r}");
    }
}

#[test]
fn bivariate_power_matches_noncentral_monte_carlo() {
    // (1, 1) is an eigenvector of Delta at (0.25, 0.75) with eigenvalue 1/4,
    // so the noncentrality of the pair is 2 / (1/4) = 8.
    let v = power(&["--taus", "0.25,0.75", "--g", "1,1"]);
    let pair = &v["subsets"][2];
    assert_eq!(pair["label"], "{1,2}");
    assert!((pair["noncentrality"].as_f64().unwrap() - 8.0).abs() < 1e-12);
    let analytic = pair["standard_power"].as_f64().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 10_000_000;
    let shift = 8f64.sqrt();
    let hits = (0..draws)
        .filter(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            (a + shift).powi(2) + b * b > 5.991464547107979
        })
        .count();
    let mc = hits as f64 / draws as f64;
    let se = (mc * (1.0 - mc) / draws as f64).sqrt();
    assert!((analytic - mc).abs() < 3.0 * se, "analytic {analytic}, monte carlo {mc} +- {se}");
}

#[test]
fn power_rejects_mismatched_g() {
    assert_eq!(qclose(&["power", "--taus", "0.25,0.75", "--g", "1"]).status.code(), Some(2));
    assert_eq!(qclose(&["power", "--taus", "0.25,0.75", "--g", "1,1", "--weighting", "identity,inverse"]).status.code(), Some(2));
}

#[test]
fn help_exits_0() {
    assert_eq!(qclose(&["--help"]).status.code(), Some(0));
    assert_eq!(qclose(&["frobnicate"]).status.code(), Some(2));
}
