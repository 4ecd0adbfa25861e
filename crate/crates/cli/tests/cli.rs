use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn trek(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trek"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn trek_ok(args: &[&str]) {
    let out = trek(args);
    assert!(
        out.status.success(),
        "trek {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Header and data rows, split on commas.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(
        !text.contains('\r'),
        "{} has CR line endings",
        path.display()
    );
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(rows: &[Vec<String>], c: usize) -> Vec<f64> {
    rows.iter().map(|r| r[c].parse().unwrap()).collect()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_one_row_per_observation() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("a");
    trek_ok(&[
        "simulate",
        "--n",
        "1",
        "--r",
        "2",
        "--seed",
        "4",
        "--out",
        path_str(&out),
    ]);
    let (header, rows) = read_csv(&out.join("dataset.csv"));
    assert_eq!(header, ["function_index", "location", "value"]);
    assert_eq!(rows.len(), 2);

    let out = tmp.path().join("b");
    trek_ok(&[
        "simulate",
        "--n",
        "3",
        "--r",
        "4",
        "--process",
        "ou:2:1",
        "--out",
        path_str(&out),
    ]);
    let (_, rows) = read_csv(&out.join("dataset.csv"));
    assert_eq!(rows.len(), 12);
    let indices: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        indices,
        ["0", "0", "0", "0", "1", "1", "1", "1", "2", "2", "2", "2"]
    );

    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(sidecar["config"]["process"], "ou:2:1");
    assert_eq!(sidecar["spec"]["seed"], 0);
    assert_eq!(sidecar["rows"], 12);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let dirs = [tmp.path().join("x"), tmp.path().join("y")];
    for d in &dirs {
        trek_ok(&[
            "smooth",
            "--n",
            "4",
            "--r",
            "15",
            "--m",
            "12",
            "--seed",
            "9",
            "--mode",
            "plugin",
            "--out",
            path_str(d),
        ]);
        trek_ok(&["fpca", "--out", path_str(d)]);
    }
    for file in [
        "dataset.csv",
        "residuals.csv",
        "surface.csv",
        "truth.csv",
        "eigen.csv",
        "eigenfunctions.csv",
    ] {
        let a = fs::read(dirs[0].join(file)).unwrap();
        let b = fs::read(dirs[1].join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }

    let other = tmp.path().join("z");
    trek_ok(&[
        "simulate",
        "--n",
        "4",
        "--r",
        "15",
        "--seed",
        "10",
        "--out",
        path_str(&other),
    ]);
    assert_ne!(
        fs::read(dirs[0].join("dataset.csv")).unwrap(),
        fs::read(other.join("dataset.csv")).unwrap()
    );
}

#[test]
fn zero_dataset_gives_zero_surface_and_no_iterations() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("zeros.csv");
    fs::write(
        &data,
        "function_index,location,value\n0,0.1,0\n0,0.5,0\n1,0.2,0\n1,0.7,0\n1,0.9,0\n",
    )
    .unwrap();
    let out = tmp.path().join("fit");
    trek_ok(&[
        "smooth",
        "--data",
        path_str(&data),
        "--m",
        "6",
        "--out",
        path_str(&out),
    ]);

    let r = report(&out);
    assert_eq!(r["kappa"], 0);
    assert_eq!(r["status"], "converged");
    let (header, rows) = read_csv(&out.join("surface.csv"));
    assert_eq!(header, ["k1", "k2", "z1", "z2", "value"]);
    assert_eq!(rows.len(), 36);
    assert!(column(&rows, 4).iter().all(|&v| v == 0.0));
    // no generating process is known for an external file
    assert!(!out.join("truth.csv").exists());

    trek_ok(&["fpca", "--out", path_str(&out)]);
    let (header, rows) = read_csv(&out.join("eigen.csv"));
    assert_eq!(header, ["l", "lambda"]);
    assert!(rows.is_empty());
    let (_, rows) = read_csv(&out.join("eigenfunctions.csv"));
    assert!(rows.is_empty());
}

#[test]
fn final_residual_below_tol_exactly_when_converged() {
    let tmp = TempDir::new().unwrap();
    for (maxiter, expect_converged) in [("500", true), ("3", false)] {
        let out = tmp.path().join(maxiter);
        trek_ok(&[
            "smooth",
            "--n",
            "5",
            "--r",
            "20",
            "--m",
            "4",
            "--maxiter",
            maxiter,
            "--out",
            path_str(&out),
        ]);
        let r = report(&out);
        let (header, rows) = read_csv(&out.join("residuals.csv"));
        assert_eq!(header, ["iteration", "delta"]);
        let deltas = column(&rows, 1);
        let converged = r["status"] == "converged";
        assert_eq!(converged, expect_converged);
        assert_eq!(*deltas.last().unwrap() < 1e-10, converged);
        assert_eq!(deltas.len() as u64, r["kappa"].as_u64().unwrap() + 1);
    }
}

#[test]
fn strict_flag_turns_nonconvergence_into_failure() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("s");
    let args = [
        "smooth",
        "--n",
        "3",
        "--r",
        "10",
        "--m",
        "4",
        "--maxiter",
        "1",
        "--out",
        path_str(&out),
    ];
    assert!(trek(&args).status.success());
    let mut strict = args.to_vec();
    strict.push("--strict");
    let failed = trek(&strict);
    assert_eq!(failed.status.code(), Some(2));
    // artifacts are still written before the exit
    assert_eq!(report(&out)["status"], "max_iter_reached");
}

#[test]
fn linear_kernel_on_bridge_data_saves_finite_iterate() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bb");
    trek_ok(&[
        "smooth",
        "--process",
        "bb",
        "--kernel",
        "linear",
        "--m",
        "10",
        "--seed",
        "11",
        "--out",
        path_str(&out),
    ]);
    let r = report(&out);
    assert!(r["kappa"].as_u64().unwrap() <= 5);
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    let coefficients = fit["coefficients"].as_array().unwrap();
    assert_eq!(coefficients.len(), 20 * 100 * 100);
    assert!(coefficients.iter().all(|c| c.as_f64().unwrap().is_finite()));
    let (_, rows) = read_csv(&out.join("surface.csv"));
    assert!(column(&rows, 4).iter().all(|v| v.is_finite()));
}

#[test]
fn spectral_files_reconstruct_surface() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("f");
    let m = 10;
    trek_ok(&[
        "smooth",
        "--process",
        "ibm",
        "--sigma",
        "0.1",
        "--n",
        "6",
        "--r",
        "5",
        "--m",
        "10",
        "--out",
        path_str(&out),
    ]);
    trek_ok(&["fpca", "--out", path_str(&out)]);

    let (_, eigen) = read_csv(&out.join("eigen.csv"));
    let lambda = column(&eigen, 1);
    let (header, phi_rows) = read_csv(&out.join("eigenfunctions.csv"));
    assert_eq!(header, ["l", "k", "z", "value"]);
    assert_eq!(phi_rows.len(), lambda.len() * m);
    let phi = |l: usize, k: usize| phi_rows[l * m + k][3].parse::<f64>().unwrap();

    let (_, surface) = read_csv(&out.join("surface.csv"));
    for row in &surface {
        let k1: usize = row[0].parse().unwrap();
        let k2: usize = row[1].parse().unwrap();
        let value: f64 = row[4].parse().unwrap();
        let rebuilt: f64 = (0..lambda.len())
            .map(|l| lambda[l] * phi(l, k1) * phi(l, k2))
            .sum();
        assert!(
            (rebuilt - value).abs() <= 1e-7,
            "({k1},{k2}): {rebuilt} vs {value}"
        );
    }

    trek_ok(&["fpca", "--out", path_str(&out), "--truncate-negative"]);
    let (_, eigen) = read_csv(&out.join("eigen.csv"));
    let lambda = column(&eigen, 1);
    assert!(lambda.iter().all(|&l| l > 0.0));
    let (_, phi_rows) = read_csv(&out.join("eigenfunctions.csv"));
    for k in 0..m {
        let variance: f64 = (0..lambda.len())
            .map(|l| lambda[l] * phi_rows[l * m + k][3].parse::<f64>().unwrap().powi(2))
            .sum();
        assert!(variance >= 0.0);
    }
}

#[test]
fn eval_reuses_saved_fit_at_new_resolution() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("e");
    trek_ok(&[
        "smooth",
        "--n",
        "3",
        "--r",
        "8",
        "--m",
        "10",
        "--mode",
        "centered",
        "--out",
        path_str(&out),
    ]);
    let (_, fine) = read_csv(&out.join("surface.csv"));
    trek_ok(&["eval", "--m", "5", "--out", path_str(&out)]);
    let (_, coarse) = read_csv(&out.join("surface.csv"));
    assert_eq!(coarse.len(), 25);
    let (_, truth) = read_csv(&out.join("truth.csv"));
    assert_eq!(truth.len(), 25);
    // grid point k/5 is grid point 2k/10
    for row in &coarse {
        let (k1, k2): (usize, usize) = (row[0].parse().unwrap(), row[1].parse().unwrap());
        let (a, b): (f64, f64) = (
            row[4].parse().unwrap(),
            fine[(2 * k1) * 10 + 2 * k2][4].parse().unwrap(),
        );
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
    }

    let before = fs::read(out.join("surface.csv")).unwrap();
    trek_ok(&["eval", "--out", path_str(&out), "--m", "5"]);
    assert_eq!(before, fs::read(out.join("surface.csv")).unwrap());
}

#[test]
fn missing_fit_and_bad_specs_are_reported() {
    let tmp = TempDir::new().unwrap();
    let out = trek(&["eval", "--out", path_str(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trek smooth"));

    let out = trek(&["smooth", "--kernel", "cubic", "--out", path_str(tmp.path())]);
    assert!(!out.status.success());
    let out = trek(&[
        "simulate",
        "--process",
        "ou:-1:1",
        "--out",
        path_str(tmp.path()),
    ]);
    assert!(!out.status.success());
    let out = trek(&[
        "smooth",
        "--r",
        "1",
        "--n",
        "2",
        "--m",
        "3",
        "--out",
        path_str(tmp.path()),
    ]);
    assert!(!out.status.success());
}
