//! Monte Carlo comparison of the Gaussian solve, the sigma-edit baseline
//! and the Student's-t solve over a family of synthetic scenes.
//!
//! Run `r` generates its own scene and one noise seed; every pixel-noise
//! scheme and every algorithm of that run reuse them, so cell differences
//! come from the estimator and the noise distribution only.

use crate::metrics::{self, Baseline, MetricsError};
use crate::network::ControlNetwork;
use crate::objective::ObjectiveKind;
use crate::outlier::{self, EditRuleConfig};
use crate::simgen::{self, CameraNoise, NoiseScheme, PixelNoise, PointInit, SceneConfig, SimError};
use crate::solver::{self, SolverConfig, SolverReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no baseline: the manifest has none and no nominal Gaussian run succeeded")]
    MissingBaseline,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    L2,
    SigmaEdit,
    Rst,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::L2, Algorithm::SigmaEdit, Algorithm::Rst];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::L2 => "l2",
            Algorithm::SigmaEdit => "sigma-edit",
            Algorithm::Rst => "rst",
        }
    }

    /// Column heading used in the text table.
    fn heading(self) -> &'static str {
        match self {
            Algorithm::L2 => "L2-BA",
            Algorithm::SigmaEdit => "2sigma-BA",
            Algorithm::Rst => "RST-BA",
        }
    }

    /// Runs the algorithm and returns the refined network with every solver
    /// report it produced (one, or one per sigma-edit pass).
    pub fn run(
        self,
        net: &ControlNetwork,
        solver_config: &SolverConfig,
        edit: &EditRuleConfig,
    ) -> Result<(ControlNetwork, Vec<SolverReport>), String> {
        match self {
            Algorithm::L2 => solver::solve(net, &solver_config.with_kind(ObjectiveKind::GaussianL2))
                .map(|(n, r)| (n, vec![r]))
                .map_err(|e| e.to_string()),
            Algorithm::Rst => solver::solve(net, &solver_config.with_kind(ObjectiveKind::StudentT))
                .map(|(n, r)| (n, vec![r]))
                .map_err(|e| e.to_string()),
            Algorithm::SigmaEdit => outlier::sigma_edit_solve(net, solver_config, edit)
                .map(|o| (o.network, o.reports))
                .map_err(|e| e.to_string()),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm '{s}' (expected l2, sigma-edit or rst)"))
    }
}

/// The contaminated-normal grid plus Student's t, with the nominal row first.
pub fn standard_schemes() -> Vec<PixelNoise> {
    let mut rows = vec![PixelNoise::Nominal];
    for phi in [4.0, 10.0, 50.0] {
        for p in [0.05, 0.1] {
            rows.push(PixelNoise::ContaminatedNormal {
                p,
                phi,
                base_variance: 1.0,
            });
        }
    }
    rows.push(PixelNoise::StudentT { df: 4.0 });
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkManifest {
    /// Scene template; each run replaces `rng_seed` with a derived seed.
    pub scene: SceneConfig,
    pub camera_noise: CameraNoise,
    pub point_init: PointInit,
    /// Degrees of freedom on every observation and camera prior.
    pub dof: f64,
    pub schemes: Vec<PixelNoise>,
    pub algorithms: Vec<Algorithm>,
    pub n_runs: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Fixed reference MSEs. When absent they are the mean Gaussian-solve
    /// MSEs of the nominal scheme in this benchmark.
    pub baseline: Option<Baseline>,
    pub solver: SolverConfig,
    pub edit: EditRuleConfig,
}

impl Default for BenchmarkManifest {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            camera_noise: CameraNoise::default(),
            point_init: PointInit::Triangulate,
            dof: crate::network::DEFAULT_DOF,
            schemes: standard_schemes(),
            algorithms: Algorithm::ALL.to_vec(),
            n_runs: 100,
            base_seed: 0,
            output_dir: None,
            baseline: None,
            solver: SolverConfig::default(),
            edit: EditRuleConfig::default(),
        }
    }
}

impl BenchmarkManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let manifest: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::InvalidManifest(msg));
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1".into());
        }
        if self.schemes.is_empty() {
            return bad("at least one noise scheme is required".into());
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        self.scene.validate()?;
        for scheme in &self.schemes {
            self.noise_scheme(*scheme).validate()?;
        }
        self.solver
            .validate()
            .map_err(|e| BenchError::InvalidManifest(e.to_string()))?;
        self.edit
            .validate()
            .map_err(|e| BenchError::InvalidManifest(e.to_string()))?;
        if let Some(b) = self.baseline {
            if !(b.world_mse0 > 0.0 && b.camera_mse0 > 0.0) {
                return bad("baseline MSEs must be positive".into());
            }
        }
        Ok(())
    }

    pub fn noise_scheme(&self, pixel: PixelNoise) -> NoiseScheme {
        NoiseScheme {
            pixel,
            camera: self.camera_noise,
            point_init: self.point_init,
            observation_dof: self.dof,
            prior_dof: self.dof,
        }
    }

    pub fn scene_seed(&self, run: usize) -> u64 {
        derive_seed(self.base_seed, run as u64, 0)
    }

    pub fn noise_seed(&self, run: usize) -> u64 {
        derive_seed(self.base_seed, run as u64, 1)
    }

    /// Scene and noisy network of `run` under `pixel`, with its truth.
    pub fn noisy_network(
        &self,
        run: usize,
        pixel: PixelNoise,
    ) -> Result<(ControlNetwork, simgen::GroundTruth), BenchError> {
        let scene = SceneConfig {
            rng_seed: self.scene_seed(run),
            ..self.scene.clone()
        };
        let (net, truth) = simgen::generate_scene(&scene)?;
        Ok(simgen::apply_noise(&net, &truth, &self.noise_scheme(pixel), self.noise_seed(run))?)
    }
}

/// SplitMix64 finalizer over the combined inputs.
fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Outcome of one algorithm on one noisy network.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub scheme: String,
    pub algorithm: Algorithm,
    pub run: usize,
    pub world_mse: Option<f64>,
    pub camera_mse: Option<f64>,
    pub iterations: usize,
    pub error: Option<String>,
    #[serde(skip)]
    pub reports: Vec<SolverReport>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Summary of relative MSEs of one (scheme, algorithm) cell over the
/// successful runs. `std` is the sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub scheme: String,
    pub algorithm: Algorithm,
    pub n_runs: usize,
    pub n_failed: usize,
    pub world_mean: f64,
    pub world_median: f64,
    pub world_std: f64,
    pub camera_mean: f64,
    pub camera_median: f64,
    pub camera_std: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub baseline: Baseline,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

impl BenchmarkResult {
    pub fn cell(&self, scheme: &PixelNoise, algorithm: Algorithm) -> Option<&CellSummary> {
        let label = scheme.label();
        self.cells.iter().find(|c| c.scheme == label && c.algorithm == algorithm)
    }

    pub fn write_cells_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        for cell in &self.cells {
            out.serialize(cell)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_runs_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        for run in &self.runs {
            out.serialize(run)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Relative means with standard deviations in parentheses, one row per
    /// scheme, world-point columns then camera columns.
    pub fn table(&self, algorithms: &[Algorithm]) -> String {
        let mut schemes: Vec<&str> = Vec::new();
        for cell in &self.cells {
            if !schemes.contains(&cell.scheme.as_str()) {
                schemes.push(&cell.scheme);
            }
        }
        let label_width = schemes.iter().map(|s| s.len()).max().unwrap_or(0).max(10);
        let mut out = String::new();
        let _ = write!(out, "{:<label_width$}", "noise");
        for part in ["world", "camera"] {
            for a in algorithms {
                let _ = write!(out, " | {:>16}", format!("{part} {}", a.heading()));
            }
        }
        out.push('\n');
        for scheme in schemes {
            let _ = write!(out, "{scheme:<label_width$}");
            for camera in [false, true] {
                for &a in algorithms {
                    let text = self
                        .cells
                        .iter()
                        .find(|c| c.scheme == scheme && c.algorithm == a)
                        .map_or_else(
                            || "-".to_string(),
                            |c| {
                                let (mean, std) = if camera {
                                    (c.camera_mean, c.camera_std)
                                } else {
                                    (c.world_mean, c.world_std)
                                };
                                format!("{} ({})", short(mean), short(std))
                            },
                        );
                    let _ = write!(out, " | {text:>16}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes `cells.csv`, `runs.csv`, `table.txt` and the manifest with the
    /// baseline filled in as `manifest.json`.
    pub fn write_outputs(&self, manifest: &BenchmarkManifest, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        self.write_cells_csv(std::fs::File::create(dir.join("cells.csv"))?)?;
        self.write_runs_csv(std::fs::File::create(dir.join("runs.csv"))?)?;
        std::fs::write(dir.join("table.txt"), self.table(&manifest.algorithms))?;
        let resolved = BenchmarkManifest {
            baseline: Some(self.baseline),
            ..manifest.clone()
        };
        std::fs::write(dir.join("manifest.json"), resolved.to_json()?)?;
        Ok(())
    }
}

fn short(v: f64) -> String {
    if !v.is_finite() {
        "nan".to_string()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

struct RawRun {
    record: RunRecord,
    truth_mse: Option<(f64, f64)>,
}

fn run_one(manifest: &BenchmarkManifest, run: usize) -> Result<Vec<RawRun>, BenchError> {
    let mut out = Vec::new();
    for scheme in &manifest.schemes {
        let (noisy, truth) = manifest.noisy_network(run, *scheme)?;
        for &algorithm in &manifest.algorithms {
            let result = algorithm.run(&noisy, &manifest.solver, &manifest.edit);
            let (record, truth_mse) = match result {
                Ok((solved, reports)) => {
                    let poses: Vec<_> = solved.cameras.iter().map(|c| c.pose).collect();
                    let points: Vec<_> = solved.points.iter().map(|p| p.position).collect();
                    let world = metrics::world_point_mse(&points, &truth.points)?;
                    let camera = metrics::camera_xyz_mse(&poses, &truth.poses)?;
                    (
                        RunRecord {
                            scheme: scheme.label(),
                            algorithm,
                            run,
                            world_mse: Some(world),
                            camera_mse: Some(camera),
                            iterations: reports.iter().map(|r| r.iterations()).sum(),
                            error: None,
                            reports,
                        },
                        Some((world, camera)),
                    )
                }
                Err(message) => {
                    log::warn!("run {run} {} {algorithm}: {message}", scheme.label());
                    (
                        RunRecord {
                            scheme: scheme.label(),
                            algorithm,
                            run,
                            world_mse: None,
                            camera_mse: None,
                            iterations: 0,
                            error: Some(message),
                            reports: Vec::new(),
                        },
                        None,
                    )
                }
            };
            out.push(RawRun { record, truth_mse });
        }
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn summarize(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mu = mean(values);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let std = if n > 1 {
        (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mu, median, std)
}

/// Runs every (scheme, algorithm) cell for `n_runs` runs. Runs execute in
/// parallel; results are collected in run order so the output does not
/// depend on scheduling.
pub fn run_benchmark(manifest: &BenchmarkManifest) -> Result<BenchmarkResult, BenchError> {
    manifest.validate()?;
    let per_run: Vec<Vec<RawRun>> = (0..manifest.n_runs)
        .into_par_iter()
        .map(|run| run_one(manifest, run))
        .collect::<Result<_, _>>()?;
    let raw: Vec<RawRun> = per_run.into_iter().flatten().collect();

    let baseline = match manifest.baseline {
        Some(b) => b,
        None => {
            let nominal = PixelNoise::Nominal.label();
            let (world, camera): (Vec<f64>, Vec<f64>) = raw
                .iter()
                .filter(|r| r.record.scheme == nominal && r.record.algorithm == Algorithm::L2)
                .filter_map(|r| r.truth_mse)
                .unzip();
            if world.is_empty() {
                return Err(BenchError::MissingBaseline);
            }
            Baseline {
                world_mse0: mean(&world),
                camera_mse0: mean(&camera),
            }
        }
    };
    if !(baseline.world_mse0 > 0.0 && baseline.camera_mse0 > 0.0) {
        return Err(MetricsError::ZeroBaseline(baseline.world_mse0.min(baseline.camera_mse0)).into());
    }

    let mut cells = Vec::new();
    for scheme in &manifest.schemes {
        let label = scheme.label();
        for &algorithm in &manifest.algorithms {
            let runs: Vec<&RawRun> = raw
                .iter()
                .filter(|r| r.record.scheme == label && r.record.algorithm == algorithm)
                .collect();
            let ok: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.truth_mse).collect();
            let world: Vec<f64> = ok.iter().map(|(w, _)| w / baseline.world_mse0).collect();
            let camera: Vec<f64> = ok.iter().map(|(_, c)| c / baseline.camera_mse0).collect();
            let (world_mean, world_median, world_std) = summarize(&world);
            let (camera_mean, camera_median, camera_std) = summarize(&camera);
            cells.push(CellSummary {
                scheme: label.clone(),
                algorithm,
                n_runs: runs.len(),
                n_failed: runs.len() - ok.len(),
                world_mean,
                world_median,
                world_std,
                camera_mean,
                camera_median,
                camera_std,
            });
        }
    }
    Ok(BenchmarkResult {
        baseline,
        runs: raw.into_iter().map(|r| r.record).collect(),
        cells,
    })
}
