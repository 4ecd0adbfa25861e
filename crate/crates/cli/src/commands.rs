use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use trek::simulate::{regular_grid, sample_dataset};
use trek::smoother::{
    evaluate_on_grid, fit_covariance_centered_with_gram, fit_mean_with_gram,
    fit_second_moment_with_gram, fpca,
};
use trek::{
    BlockDiagMatrix, CovarianceFit, CovarianceMode, FunctionalDataset, Kernel, MeanFit, Process,
    ProcessSpec, SolverConfig,
};

use crate::artifacts::*;
use crate::config::{DataArgs, FitArgs, Mode};

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn process_spec(args: &DataArgs) -> Result<ProcessSpec> {
    let process: Process = args.process.parse()?;
    let spec = ProcessSpec::uniform(process, args.sigma, args.n, args.r, args.seed);
    spec.validate()?;
    Ok(spec)
}

fn simulate_into(args: &DataArgs, out: &Path) -> Result<(FunctionalDataset, ProcessSpec)> {
    let spec = process_spec(args)?;
    let data = sample_dataset(&spec)?;
    let csv = out.join(DATASET_CSV);
    write_dataset(&csv, &data)?;
    let sidecar = DatasetSidecar {
        config: args.clone(),
        spec: spec.clone(),
        rows: data.layout().total(),
    };
    write_json(&sidecar_path(&csv), &sidecar)?;
    Ok((data, spec))
}

pub fn simulate(args: &DataArgs, out: &Path) -> Result<ExitCode> {
    create_out(out)?;
    simulate_into(args, out)?;
    Ok(ExitCode::SUCCESS)
}

fn check_fit_args(args: &FitArgs) -> Result<Kernel> {
    if args.m == 0 {
        bail!("--m must be at least 1");
    }
    Ok(args.kernel.parse()?)
}

pub fn smooth(
    data_args: &DataArgs,
    fit_args: &FitArgs,
    dataset: Option<&PathBuf>,
    strict: bool,
    out: &Path,
) -> Result<ExitCode> {
    let kernel = check_fit_args(fit_args)?;
    let cfg = SolverConfig::default()
        .with_tol(fit_args.tol)
        .with_maxiter(fit_args.maxiter);
    cfg.validate()?;
    create_out(out)?;

    let (data, spec) = match dataset {
        Some(path) => {
            let data = read_dataset(path)?;
            let sidecar = sidecar_path(path);
            let spec = if sidecar.exists() {
                Some(read_json::<DatasetSidecar>(&sidecar)?.spec)
            } else {
                None
            };
            (data, spec)
        }
        None => {
            let (data, spec) = simulate_into(data_args, out)?;
            (data, Some(spec))
        }
    };

    let start = Instant::now();
    let gram = data.gram(&kernel)?;
    let (fit, mean) = match fit_args.mode {
        Mode::SecondMoment => (
            fit_second_moment_with_gram(&data, &gram, fit_args.eta, &cfg, None)?,
            None,
        ),
        Mode::Centered => {
            let (mean, fit) =
                fit_covariance_centered_with_gram(&data, &gram, fit_args.nu, fit_args.eta, &cfg)?;
            (fit, Some(mean))
        }
        Mode::Plugin => (
            fit_second_moment_with_gram(&data, &gram, fit_args.eta, &cfg, None)?,
            Some(fit_mean_with_gram(&data, &gram, fit_args.nu)?),
        ),
    };
    let seconds = start.elapsed().as_secs_f64();

    let trace = &fit.report.residual_trace;
    write_csv(
        &out.join(RESIDUALS_CSV),
        &["iteration", "delta"],
        trace
            .iter()
            .enumerate()
            .map(|(k, &d)| vec![k.to_string(), fmt_f64(d)]),
    )?;

    let artifact = FitArtifact {
        config: fit_args.clone(),
        spec,
        locations: data.locations().to_vec(),
        values: data.values().to_vec(),
        coefficients: fit.coefficients.odvec(),
        mean: mean.as_ref().map(|m| m.coefficients.as_slice().to_vec()),
        report: fit.report.clone(),
    };
    write_json(&out.join(FIT_JSON), &artifact)?;
    write_surfaces(
        &artifact,
        &data,
        &kernel,
        &fit,
        mean.as_ref(),
        fit_args.m,
        out,
    )?;

    let report = RunReport {
        kappa: fit.report.iterations,
        status: fit.report.status,
        final_delta: fit.report.final_delta(),
        tol: fit_args.tol,
        mode: fit_args.mode,
        kernel: fit_args.kernel.clone(),
        n_functions: data.layout().n_blocks(),
        observations: data.layout().total(),
        wall_time_seconds: seconds,
        max_resident_kib: max_resident_kib(),
    };
    write_json(&out.join(REPORT_JSON), &report)?;

    if strict && !fit.report.converged() {
        eprintln!(
            "solver stopped with status {:?} after {} iterations",
            fit.report.status, fit.report.iterations
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

/// The mean to subtract at evaluation time: only plug-in fits use it.
fn plug_in_mean(mode: Mode, mean: Option<&MeanFit>) -> Option<&MeanFit> {
    match mode {
        Mode::Plugin => mean,
        Mode::SecondMoment | Mode::Centered => None,
    }
}

fn write_surfaces(
    artifact: &FitArtifact,
    data: &FunctionalDataset,
    kernel: &Kernel,
    fit: &CovarianceFit,
    mean: Option<&MeanFit>,
    m: usize,
    out: &Path,
) -> Result<()> {
    let grid = regular_grid(m);
    let frame = data.frame(kernel, &grid)?;
    let surface = evaluate_on_grid(fit, &frame, plug_in_mean(artifact.config.mode, mean))?;
    write_surface(&out.join(SURFACE_CSV), &grid, &surface)?;
    if let Some(spec) = &artifact.spec {
        let truth =
            nalgebra::DMatrix::from_fn(m, m, |a, b| spec.true_second_moment(grid[a], grid[b]));
        write_surface(&out.join(TRUTH_CSV), &grid, &truth)?;
    }
    Ok(())
}

struct LoadedFit {
    artifact: FitArtifact,
    data: FunctionalDataset,
    kernel: Kernel,
    fit: CovarianceFit,
    mean: Option<MeanFit>,
}

fn load_fit(out: &Path) -> Result<LoadedFit> {
    let artifact: FitArtifact = read_json(&out.join(FIT_JSON))
        .with_context(|| format!("no saved fit in {}; run `trek smooth` first", out.display()))?;
    let kernel: Kernel = artifact.config.kernel.parse()?;
    let data = FunctionalDataset::new(artifact.locations.clone(), artifact.values.clone())?;
    let layout = Arc::clone(data.layout());
    let coefficients = BlockDiagMatrix::odmat(artifact.coefficients.clone(), layout)?;
    let mode = match artifact.config.mode {
        Mode::Centered => CovarianceMode::CenteredCovariance,
        Mode::SecondMoment | Mode::Plugin => CovarianceMode::SecondMoment,
    };
    let fit = CovarianceFit {
        coefficients,
        ridge: artifact.config.eta,
        report: artifact.report.clone(),
        mode,
    };
    let mean = match &artifact.mean {
        Some(a) => {
            if a.len() != data.layout().total() {
                bail!(
                    "saved mean has {} coefficients for {} observations",
                    a.len(),
                    data.layout().total()
                );
            }
            let coefficients = nalgebra::DVector::from_column_slice(a);
            let gram = data.gram(&kernel)?;
            let y = nalgebra::DVector::from_vec(data.flat_values());
            let residual_norm =
                (gram.matrix() * &coefficients + &coefficients * artifact.config.nu - y).norm();
            Some(MeanFit {
                coefficients,
                ridge: artifact.config.nu,
                residual_norm,
            })
        }
        None => None,
    };
    Ok(LoadedFit {
        artifact,
        data,
        kernel,
        fit,
        mean,
    })
}

pub fn eval(m: Option<usize>, out: &Path) -> Result<ExitCode> {
    let loaded = load_fit(out)?;
    let m = m.unwrap_or(loaded.artifact.config.m);
    if m == 0 {
        bail!("--m must be at least 1");
    }
    write_surfaces(
        &loaded.artifact,
        &loaded.data,
        &loaded.kernel,
        &loaded.fit,
        loaded.mean.as_ref(),
        m,
        out,
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn fpca_cmd(m: Option<usize>, truncate_negative: bool, out: &Path) -> Result<ExitCode> {
    let loaded = load_fit(out)?;
    let m = m.unwrap_or(loaded.artifact.config.m);
    if m == 0 {
        bail!("--m must be at least 1");
    }
    let gram = loaded.data.gram(&loaded.kernel)?;
    let mean = plug_in_mean(loaded.artifact.config.mode, loaded.mean.as_ref());
    let result = fpca(&loaded.fit, &gram, mean, truncate_negative)?;

    write_csv(
        &out.join(EIGEN_CSV),
        &["l", "lambda"],
        result
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(l, &lambda)| vec![(l + 1).to_string(), fmt_f64(lambda)]),
    )?;

    let grid = regular_grid(m);
    let phi = result.eigenfunctions(&loaded.data.frame(&loaded.kernel, &grid)?)?;
    let grid = &grid;
    let phi = &phi;
    write_csv(
        &out.join(EIGENFUNCTIONS_CSV),
        &["l", "k", "z", "value"],
        (0..result.rank()).flat_map(|l| {
            (0..grid.len()).map(move |k| {
                vec![
                    (l + 1).to_string(),
                    k.to_string(),
                    fmt_f64(grid[k]),
                    fmt_f64(phi[(k, l)]),
                ]
            })
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}
