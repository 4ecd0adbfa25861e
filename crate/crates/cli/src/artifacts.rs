use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trek::{FunctionalDataset, ProcessSpec, SolveReport};

use crate::config::{DataArgs, FitArgs};

pub const DATASET_CSV: &str = "dataset.csv";
pub const RESIDUALS_CSV: &str = "residuals.csv";
pub const SURFACE_CSV: &str = "surface.csv";
pub const TRUTH_CSV: &str = "truth.csv";
pub const EIGEN_CSV: &str = "eigen.csv";
pub const EIGENFUNCTIONS_CSV: &str = "eigenfunctions.csv";
pub const REPORT_JSON: &str = "report.json";
pub const FIT_JSON: &str = "fit.json";

/// Fixed float format: 17 significant digits, so output bytes depend only on the value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// JSON file written next to a simulated dataset CSV.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub config: DataArgs,
    pub spec: ProcessSpec,
    pub rows: usize,
}

/// Everything needed to re-evaluate or decompose a fit without re-solving.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitArtifact {
    pub config: FitArgs,
    /// Generating process, when the data were simulated.
    pub spec: Option<ProcessSpec>,
    pub locations: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    /// Diagonal vectorization of the fitted blocks.
    pub coefficients: Vec<f64>,
    pub mean: Option<Vec<f64>>,
    pub report: SolveReport,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub kappa: usize,
    pub status: trek::SolveStatus,
    pub final_delta: f64,
    pub tol: f64,
    pub mode: crate::config::Mode,
    pub kernel: String,
    pub n_functions: usize,
    pub observations: usize,
    pub wall_time_seconds: f64,
    /// Peak resident set size in KiB, where the platform reports it.
    pub max_resident_kib: Option<u64>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header)
        .with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.write_record(row)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .with_context(|| format!("writing {}", path.display()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn write_dataset(path: &Path, data: &FunctionalDataset) -> Result<()> {
    let rows = data
        .locations()
        .iter()
        .zip(data.values())
        .enumerate()
        .flat_map(|(i, (xs, ys))| {
            xs.iter()
                .zip(ys)
                .map(move |(&x, &y)| vec![i.to_string(), fmt_f64(x), fmt_f64(y)])
        });
    write_csv(path, &["function_index", "location", "value"], rows)
}

#[derive(Deserialize)]
struct DatasetRow {
    function_index: usize,
    location: f64,
    value: f64,
}

/// Reads a dataset CSV; rows are grouped by function index in ascending order.
pub fn read_dataset(path: &Path) -> Result<FunctionalDataset> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, row) in reader.deserialize::<DatasetRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), line + 1))?;
        let entry = groups.entry(row.function_index).or_default();
        entry.0.push(row.location);
        entry.1.push(row.value);
    }
    if groups.is_empty() {
        bail!("{}: no observations", path.display());
    }
    let (locations, values) = groups.into_values().unzip();
    FunctionalDataset::new(locations, values).with_context(|| format!("loading {}", path.display()))
}

/// Sidecar path of a dataset CSV: same stem, `.json` extension.
pub fn sidecar_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("json")
}

pub fn write_surface(path: &Path, grid: &[f64], surface: &DMatrix<f64>) -> Result<()> {
    let m = grid.len();
    let rows = (0..m).flat_map(|k1| {
        (0..m).map(move |k2| {
            vec![
                k1.to_string(),
                k2.to_string(),
                fmt_f64(grid[k1]),
                fmt_f64(grid[k2]),
                fmt_f64(surface[(k1, k2)]),
            ]
        })
    });
    write_csv(path, &["k1", "k2", "z1", "z2", "value"], rows)
}

/// Peak resident set size from `/proc/self/status`, in KiB.
pub fn max_resident_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}
