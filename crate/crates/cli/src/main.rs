//! `rstba` command-line tool: scene simulation, single solves, Monte Carlo
//! benchmarks and accuracy reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rstba::bench::{self, Algorithm, BenchmarkManifest};
use rstba::metrics;
use rstba::network::ControlNetwork;
use rstba::outlier::{self, EditRuleConfig};
use rstba::simgen::{self, GroundTruth, NoiseScheme, SceneConfig};
use rstba::solver::{self, SolverConfig, SolverReport};
use rstba::ObjectiveKind;
use serde::Deserialize;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rstba", version, about = "Robust Student's-t bundle adjustment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene, optionally with noise, and write the
    /// network plus a ground-truth sidecar.
    Simulate {
        /// JSON with optional `scene` and `noise` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the scene seed; also seeds the noise.
        #[arg(long)]
        seed: Option<u64>,
        /// Network output; the truth goes next to it as `<stem>.truth.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine a network and write it with a per-iteration report.
    Solve {
        network: PathBuf,
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Rst)]
        algorithm: AlgorithmArg,
        /// JSON with optional `solver` and `edit` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace the dof of every observation and prior.
        #[arg(long)]
        dof: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Iteration report CSV; defaults to `<stem>.report.csv` beside `--out`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a Monte Carlo benchmark described by a manifest.
    Bench {
        /// Benchmark manifest JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dof: Option<f64>,
        /// Output directory; overrides the manifest's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Triangulation error of a network, and MSE against ground truth when
    /// a truth file is given.
    Report {
        network: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Metric CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    L2,
    SigmaEdit,
    Rst,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::L2 => Algorithm::L2,
            AlgorithmArg::SigmaEdit => Algorithm::SigmaEdit,
            AlgorithmArg::Rst => Algorithm::Rst,
        }
    }
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn data_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn solver_failure(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 3,
        error: error.into(),
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct SimulateConfig {
    scene: SceneConfig,
    noise: Option<NoiseScheme>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct SolveConfig {
    solver: SolverConfig,
    edit: EditRuleConfig,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data_error)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(data_error)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(data_error)
}

fn simulate(config: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Result<(), Failure> {
    let mut config: SimulateConfig = match config {
        Some(path) => read_json(&path)?,
        None => SimulateConfig::default(),
    };
    if let Some(seed) = seed {
        config.scene.rng_seed = seed;
    }
    let (mut net, mut truth) = simgen::generate_scene(&config.scene).map_err(data_error)?;
    if let Some(noise) = &config.noise {
        (net, truth) = simgen::apply_noise(&net, &truth, noise, config.scene.rng_seed).map_err(data_error)?;
    }
    net.save(&out)
        .with_context(|| format!("writing {}", out.display()))
        .map_err(data_error)?;
    let truth_path = sibling(&out, ".truth.json");
    truth
        .save(&truth_path)
        .with_context(|| format!("writing {}", truth_path.display()))
        .map_err(data_error)?;
    log::info!(
        "wrote {} cameras, {} points, {} observations to {}",
        net.cameras.len(),
        net.points.len(),
        net.observations.len(),
        out.display()
    );
    Ok(())
}

fn override_dof(net: &mut ControlNetwork, dof: f64) -> Result<(), Failure> {
    if !(dof > 0.0 && dof.is_finite()) {
        return Err(data_error(anyhow!("--dof must be positive, got {dof}")));
    }
    for obs in &mut net.observations {
        obs.dof = dof;
    }
    for prior in net.cameras.iter_mut().filter_map(|c| c.prior.as_mut()) {
        prior.dof = dof;
    }
    for prior in net.points.iter_mut().filter_map(|p| p.prior.as_mut()) {
        prior.dof = dof;
    }
    Ok(())
}

fn write_report(report: &SolverReport, path: &Path) -> Result<(), Failure> {
    report
        .write_csv(create(path)?)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data_error)
}

fn solve(
    network: PathBuf,
    algorithm: Algorithm,
    config: Option<PathBuf>,
    dof: Option<f64>,
    out: PathBuf,
    report: Option<PathBuf>,
) -> Result<(), Failure> {
    let config: SolveConfig = match config {
        Some(path) => read_json(&path)?,
        None => SolveConfig::default(),
    };
    config.solver.validate().map_err(data_error)?;
    config.edit.validate().map_err(data_error)?;
    let mut net = ControlNetwork::load(&network)
        .with_context(|| format!("loading {}", network.display()))
        .map_err(data_error)?;
    if let Some(dof) = dof {
        override_dof(&mut net, dof)?;
        net.validate().map_err(data_error)?;
    }
    let report_path = report.unwrap_or_else(|| sibling(&out, ".report.csv"));

    let (solved, reports) = match algorithm {
        Algorithm::L2 | Algorithm::Rst => {
            let kind = if algorithm == Algorithm::Rst {
                ObjectiveKind::StudentT
            } else {
                ObjectiveKind::GaussianL2
            };
            let (solved, report) = solver::solve(&net, &config.solver.with_kind(kind)).map_err(solver_failure)?;
            (solved, vec![report])
        }
        Algorithm::SigmaEdit => {
            let outcome = outlier::sigma_edit_solve(&net, &config.solver, &config.edit).map_err(solver_failure)?;
            let removed_path = sibling(&out, ".removed.csv");
            outcome
                .write_removed_csv(create(&removed_path)?)
                .with_context(|| format!("writing {}", removed_path.display()))
                .map_err(data_error)?;
            log::info!("removed {} observations", outcome.removed.len());
            (outcome.network, outcome.reports)
        }
    };

    solved
        .save(&out)
        .with_context(|| format!("writing {}", out.display()))
        .map_err(data_error)?;
    write_report(&reports[0], &report_path)?;
    for (k, refit) in reports.iter().enumerate().skip(1) {
        write_report(refit, &sibling(&report_path, &format!(".refit{k}.csv")))?;
    }
    let last = reports.last().expect("at least one solve");
    println!(
        "{algorithm}: {:?} after {} iterations, F {:.6e} -> {:.6e}",
        last.termination,
        last.iterations(),
        reports[0].initial_objective(),
        last.final_objective()
    );
    Ok(())
}

fn run_bench(
    config: Option<PathBuf>,
    runs: Option<usize>,
    seed: Option<u64>,
    dof: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut manifest: BenchmarkManifest = match config {
        Some(path) => read_json(&path)?,
        None => BenchmarkManifest::default(),
    };
    if let Some(runs) = runs {
        manifest.n_runs = runs;
    }
    if let Some(seed) = seed {
        manifest.base_seed = seed;
    }
    if let Some(dof) = dof {
        manifest.dof = dof;
    }
    if let Some(out) = out {
        manifest.output_dir = Some(out);
    }
    manifest.validate().map_err(data_error)?;
    let dir = manifest
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("bench-out"));
    let result = bench::run_benchmark(&manifest).map_err(|e| match e {
        bench::BenchError::MissingBaseline => solver_failure(e),
        other => data_error(other),
    })?;
    result.write_outputs(&manifest, &dir).map_err(data_error)?;
    print!("{}", result.table(&manifest.algorithms));
    let failed: usize = result.cells.iter().map(|c| c.n_failed).sum();
    if failed > 0 {
        log::warn!("{failed} runs failed; see runs.csv");
    }
    Ok(())
}

fn report(network: PathBuf, truth: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), Failure> {
    let net = ControlNetwork::load(&network)
        .with_context(|| format!("loading {}", network.display()))
        .map_err(data_error)?;
    let tri = metrics::triangulation_error(&net, &net.pack()).map_err(data_error)?;
    let mut rows: Vec<(&str, f64)> = vec![
        ("triangulation_min", tri.min),
        ("triangulation_median", tri.median),
        ("triangulation_max", tri.max),
        ("parallel_ray_pairs", tri.parallel_pairs as f64),
    ];
    if let Some(path) = truth {
        let truth = GroundTruth::load(&path)
            .with_context(|| format!("loading {}", path.display()))
            .map_err(data_error)?;
        let poses: Vec<_> = net.cameras.iter().map(|c| c.pose).collect();
        let points: Vec<_> = net.points.iter().map(|p| p.position).collect();
        rows.push((
            "world_point_mse",
            metrics::world_point_mse(&points, &truth.points).map_err(data_error)?,
        ));
        rows.push((
            "camera_xyz_mse",
            metrics::camera_xyz_mse(&poses, &truth.poses).map_err(data_error)?,
        ));
    }
    let mut text = String::from("metric,value\n");
    for (name, value) in rows {
        text.push_str(&format!("{name},{value}\n"));
    }
    match out {
        Some(path) => std::fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(data_error)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate { config, seed, out } => simulate(config, seed, out),
        Command::Solve {
            network,
            algorithm,
            config,
            dof,
            out,
            report,
        } => solve(network, algorithm.into(), config, dof, out, report),
        Command::Bench {
            config,
            runs,
            seed,
            dof,
            out,
        } => run_bench(config, runs, seed, dof, out),
        Command::Report { network, truth, out } => report(network, truth, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
