//! Synthetic orbital-strip scenes.
//!
//! Cameras fly a straight line along world `x` at a fixed elevation, looking
//! straight down (camera `z` toward the surface). The along-track spacing is
//! derived from the requested footprint overlap. World points are drawn
//! uniformly inside the volume bounded by one footprint across track, the
//! combined footprints of the interior cameras along track, and the surface
//! height range vertically; only points visible in at least two cameras are
//! kept.

use crate::geometry::{self, CameraPose, Intrinsics, WorldPoint};
use crate::network::{Camera, CameraPrior, ControlNetwork, NetworkError, Observation, Point};
use nalgebra::{Matrix2, Matrix6, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible scene configuration: {0}")]
    InfeasibleConfig(String),
    #[error("invalid noise scheme: {0}")]
    InvalidNoise(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// World-to-camera rotation of a nadir-looking camera: a half turn about
/// world `x`, so camera `z` points down and camera `x` runs along track.
pub fn nadir_rotation() -> Vector3<f64> {
    Vector3::new(PI, 0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub n_cameras: usize,
    /// Fraction of a footprint shared by consecutive cameras.
    pub overlap_fraction: f64,
    /// Camera height above the surface datum, in world units.
    pub elevation: f64,
    /// `[min, max]` surface height.
    pub surface_height_range: [f64; 2],
    pub n_points: usize,
    pub intrinsics: Intrinsics,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_cameras: 10,
            overlap_fraction: 0.8,
            elevation: 100.0,
            surface_height_range: [-2.0, 2.0],
            n_points: 200,
            intrinsics: Intrinsics::from_fov(74.0, 1024.0, 1024.0).expect("valid default intrinsics"),
            rng_seed: 0,
        }
    }
}

/// Axis-aligned sampling volume of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneVolume {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl SceneVolume {
    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InfeasibleConfig(msg.to_string()));
        if self.n_cameras < 2 {
            return bad("at least two cameras are required");
        }
        if self.n_points < 1 {
            return bad("at least one point is required");
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction < 1.0) {
            return bad("overlap fraction must be in (0, 1)");
        }
        let [lo, hi] = self.surface_height_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("surface height range must satisfy min <= max");
        }
        if !(self.elevation.is_finite() && self.elevation > hi) {
            return bad("elevation must be above the highest surface point");
        }
        self.intrinsics
            .validate()
            .map_err(|e| SimError::InfeasibleConfig(e.to_string()))?;
        Ok(())
    }

    /// Half footprint extents `(along, across)` at the top of the surface.
    fn half_footprint(&self) -> (f64, f64) {
        let (tx, ty) = self.intrinsics.half_fov_tangents();
        let depth = self.elevation - self.surface_height_range[1];
        (tx * depth, ty * depth)
    }

    /// Along-track distance between consecutive cameras.
    pub fn camera_spacing(&self) -> f64 {
        2.0 * self.half_footprint().0 * (1.0 - self.overlap_fraction)
    }

    pub fn camera_poses(&self) -> Vec<CameraPose> {
        let spacing = self.camera_spacing();
        (0..self.n_cameras)
            .map(|j| {
                CameraPose::new(
                    Vector3::new(j as f64 * spacing, 0.0, self.elevation),
                    nadir_rotation(),
                )
            })
            .collect()
    }

    pub fn volume(&self) -> Result<SceneVolume, SimError> {
        self.validate()?;
        let (hx, hy) = self.half_footprint();
        let spacing = self.camera_spacing();
        let m = self.n_cameras;
        let (x_lo, x_hi) = if m >= 3 {
            (spacing - hx, (m - 2) as f64 * spacing + hx)
        } else {
            // two cameras: only their shared footprint is seen twice
            (spacing - hx, hx)
        };
        if !(x_lo < x_hi) {
            return Err(SimError::InfeasibleConfig("scene volume is empty".into()));
        }
        Ok(SceneVolume {
            min: Vector3::new(x_lo, -hy, self.surface_height_range[0]),
            max: Vector3::new(x_hi, hy, self.surface_height_range[1]),
        })
    }
}

/// True scene state plus per-observation contaminant labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub poses: Vec<CameraPose>,
    pub points: Vec<WorldPoint>,
    /// Whether each observation's noise came from the contaminating
    /// component. All false unless a contaminated-normal scheme was applied.
    pub outlier_flags: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    cameras: Vec<TruthCamera>,
    points: Vec<[f64; 3]>,
    outlier_flags: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthCamera {
    position: [f64; 3],
    rotation: [f64; 3],
}

impl GroundTruth {
    pub fn to_json(&self) -> Result<String, SimError> {
        let file = TruthFile {
            cameras: self
                .poses
                .iter()
                .map(|p| TruthCamera {
                    position: p.position.into(),
                    rotation: p.rotation.into(),
                })
                .collect(),
            points: self.points.iter().map(|p| p.0.into()).collect(),
            outlier_flags: self.outlier_flags.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let file: TruthFile = serde_json::from_str(text)?;
        Ok(Self {
            poses: file
                .cameras
                .into_iter()
                .map(|c| CameraPose::new(c.position.into(), c.rotation.into()))
                .collect(),
            points: file.points.into_iter().map(|p| WorldPoint(p.into())).collect(),
            outlier_flags: file.outlier_flags,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Generates a scene with exact observations (unit covariance, dof 4) and
/// the cameras and points at their true values.
pub fn generate_scene(config: &SceneConfig) -> Result<(ControlNetwork, GroundTruth), SimError> {
    let volume = config.volume()?;
    let poses = config.camera_poses();
    let intrinsics = config.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let max_attempts = 1000 * config.n_points;
    let mut points = Vec::with_capacity(config.n_points);
    let mut observations = Vec::new();
    let mut attempts = 0;
    while points.len() < config.n_points {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SimError::InfeasibleConfig(format!(
                "only {} of {} points are visible in two or more cameras",
                points.len(),
                config.n_points
            )));
        }
        let candidate = WorldPoint(Vector3::from_fn(|k, _| {
            if volume.min[k] < volume.max[k] {
                rng.random_range(volume.min[k]..volume.max[k])
            } else {
                volume.min[k]
            }
        }));
        let visible = visible_projections(&poses, &intrinsics, &candidate);
        if visible.len() < 2 {
            continue;
        }
        let point = points.len();
        for (camera, pixel) in visible {
            observations.push(Observation {
                camera,
                point,
                pixel,
                cov: Matrix2::identity(),
                dof: crate::network::DEFAULT_DOF,
            });
        }
        points.push(candidate);
    }

    let net = ControlNetwork {
        cameras: poses
            .iter()
            .map(|&pose| Camera {
                pose,
                intrinsics,
                prior: None,
            })
            .collect(),
        points: points
            .iter()
            .map(|&position| Point {
                position,
                prior: None,
            })
            .collect(),
        observations,
    };
    let truth = GroundTruth {
        poses,
        points,
        outlier_flags: vec![false; net.observations.len()],
    };
    Ok((net, truth))
}

/// Cameras in which `point` projects inside the image with positive depth.
pub fn visible_projections(
    poses: &[CameraPose],
    intrinsics: &Intrinsics,
    point: &WorldPoint,
) -> Vec<(usize, Vector2<f64>)> {
    poses
        .iter()
        .enumerate()
        .filter_map(|(j, pose)| {
            geometry::project(pose, intrinsics, point)
                .ok()
                .filter(|px| intrinsics.contains(px))
                .map(|px| (j, px))
        })
        .collect()
}

/// Distribution of the per-component pixel errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum PixelNoise {
    /// `N(0, 1)`.
    Nominal,
    /// `(1 − p) N(0, base_variance) + p N(0, phi)`, one component draw per
    /// observation.
    ContaminatedNormal {
        p: f64,
        phi: f64,
        #[serde(default = "unit_variance")]
        base_variance: f64,
    },
    /// Student's t with `df` degrees of freedom, unit scale.
    StudentT { df: f64 },
}

fn unit_variance() -> f64 {
    1.0
}

impl PixelNoise {
    pub fn validate(&self) -> Result<(), SimError> {
        match *self {
            PixelNoise::Nominal => Ok(()),
            PixelNoise::ContaminatedNormal { p, phi, base_variance } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(SimError::InvalidNoise(format!("mixture probability {p} outside [0, 1]")));
                }
                if !(phi > 0.0 && base_variance > 0.0) {
                    return Err(SimError::InvalidNoise("mixture variances must be positive".into()));
                }
                Ok(())
            }
            PixelNoise::StudentT { df } => {
                if !(df > 0.0) {
                    return Err(SimError::InvalidNoise(format!("dof {df} must be positive")));
                }
                Ok(())
            }
        }
    }

    /// Short label such as `.9N(0,1)+.1N(0,50)`.
    pub fn label(&self) -> String {
        fn trim(v: f64) -> String {
            let s = format!("{v}");
            s.strip_prefix('0').filter(|r| r.starts_with('.')).map_or(s.clone(), str::to_string)
        }
        match *self {
            PixelNoise::Nominal => "N(0,1)".to_string(),
            PixelNoise::ContaminatedNormal { p, phi, base_variance } => format!(
                "{}N(0,{})+{}N(0,{})",
                trim(1.0 - p),
                trim(base_variance),
                trim(p),
                trim(phi)
            ),
            PixelNoise::StudentT { df } => format!("t(df={df})"),
        }
    }

    /// Draws one observation's 2-vector error and whether it came from the
    /// contaminating component.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vector2<f64>, bool) {
        match *self {
            PixelNoise::Nominal => {
                let n = Normal::new(0.0, 1.0).expect("unit normal");
                (Vector2::new(n.sample(rng), n.sample(rng)), false)
            }
            PixelNoise::ContaminatedNormal { p, phi, base_variance } => {
                let outlier = rng.random::<f64>() < p;
                let variance = if outlier { phi } else { base_variance };
                let n = Normal::new(0.0, variance.sqrt()).expect("validated variance");
                (Vector2::new(n.sample(rng), n.sample(rng)), outlier)
            }
            PixelNoise::StudentT { df } => {
                let t = StudentT::new(df).expect("validated dof");
                (Vector2::new(t.sample(rng), t.sample(rng)), false)
            }
        }
    }
}

/// Telemetry error on the camera initial guesses and the priors built
/// around them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraNoise {
    /// Standard deviation of the initial camera position error.
    pub position_stddev: f64,
    /// Standard deviation of the initial rotation error, per axis (radians).
    pub rotation_stddev: f64,
    /// Attach a prior to every camera.
    pub with_priors: bool,
    pub prior_center: PriorCenter,
    /// Prior standard deviation of each position axis.
    pub prior_position_stddev: f64,
    /// Prior information on the rotation block; large values pin rotations.
    pub rotation_prior_weight: f64,
}

/// Where camera priors are centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorCenter {
    /// The true pose: the prior holds cameras near their true values while
    /// the initial guess starts from the perturbed pose.
    Truth,
    /// The perturbed pose, as when the prior comes from noisy telemetry.
    Perturbed,
}

impl Default for CameraNoise {
    fn default() -> Self {
        Self {
            position_stddev: 1.0,
            rotation_stddev: 0.0,
            with_priors: true,
            prior_center: PriorCenter::Truth,
            prior_position_stddev: 1.0,
            rotation_prior_weight: 1e12,
        }
    }
}

impl CameraNoise {
    /// Prior information on each position axis.
    pub fn position_prior_weight(&self) -> f64 {
        1.0 / (self.prior_position_stddev * self.prior_position_stddev)
    }
}

/// How world-point initial guesses are formed after noise is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum PointInit {
    /// Keep the true positions.
    Truth,
    /// Least-squares ray intersection from the noisy pixels and perturbed
    /// cameras.
    Triangulate,
    /// True position plus isotropic Gaussian error.
    Perturb { stddev: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseScheme {
    pub pixel: PixelNoise,
    #[serde(default)]
    pub camera: CameraNoise,
    #[serde(default = "default_point_init")]
    pub point_init: PointInit,
    /// Degrees of freedom written to every observation.
    #[serde(default = "default_dof")]
    pub observation_dof: f64,
    /// Degrees of freedom written to every camera prior.
    #[serde(default = "default_dof")]
    pub prior_dof: f64,
}

fn default_point_init() -> PointInit {
    PointInit::Triangulate
}

fn default_dof() -> f64 {
    crate::network::DEFAULT_DOF
}

impl NoiseScheme {
    pub fn new(pixel: PixelNoise) -> Self {
        Self {
            pixel,
            camera: CameraNoise::default(),
            point_init: default_point_init(),
            observation_dof: default_dof(),
            prior_dof: default_dof(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.pixel.validate()?;
        let c = &self.camera;
        if !(c.position_stddev >= 0.0
            && c.rotation_stddev >= 0.0
            && c.prior_position_stddev > 0.0
            && c.rotation_prior_weight > 0.0)
        {
            return Err(SimError::InvalidNoise("camera noise parameters must be non-negative".into()));
        }
        if !(self.observation_dof > 0.0 && self.prior_dof > 0.0) {
            return Err(SimError::InvalidNoise("dof must be positive".into()));
        }
        if let PointInit::Perturb { stddev } = self.point_init {
            if !(stddev >= 0.0) {
                return Err(SimError::InvalidNoise("point perturbation must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Adds pixel noise to every observation, perturbs the camera initial
/// guesses, attaches camera priors, and re-initializes the world
/// points. Pixel noise and camera perturbations use independent streams of
/// the seed, so the same seed perturbs cameras identically under every
/// pixel-noise scheme.
pub fn apply_noise(
    net: &ControlNetwork,
    truth: &GroundTruth,
    scheme: &NoiseScheme,
    seed: u64,
) -> Result<(ControlNetwork, GroundTruth), SimError> {
    scheme.validate()?;
    let mut noisy = net.clone();
    let mut truth = truth.clone();

    let mut pixel_rng = ChaCha8Rng::seed_from_u64(seed);
    pixel_rng.set_stream(1);
    truth.outlier_flags = Vec::with_capacity(noisy.observations.len());
    for obs in &mut noisy.observations {
        let (error, outlier) = scheme.pixel.sample(&mut pixel_rng);
        obs.pixel += error;
        obs.cov = Matrix2::identity();
        obs.dof = scheme.observation_dof;
        truth.outlier_flags.push(outlier);
    }

    let mut camera_rng = ChaCha8Rng::seed_from_u64(seed);
    camera_rng.set_stream(2);
    let cam = &scheme.camera;
    let pos_noise = Normal::new(0.0, cam.position_stddev).expect("validated stddev");
    let rot_noise = Normal::new(0.0, cam.rotation_stddev).expect("validated stddev");
    for (camera, true_pose) in noisy.cameras.iter_mut().zip(&truth.poses) {
        let position = true_pose.position + Vector3::from_fn(|_, _| pos_noise.sample(&mut camera_rng));
        let rotation = true_pose.rotation + Vector3::from_fn(|_, _| rot_noise.sample(&mut camera_rng));
        camera.pose = CameraPose::new(position, rotation);
        let center = match cam.prior_center {
            PriorCenter::Truth => *true_pose,
            PriorCenter::Perturbed => camera.pose,
        };
        camera.prior = cam.with_priors.then(|| {
            let mut diag = Vector6::repeat(cam.rotation_prior_weight);
            diag.fixed_rows_mut::<3>(3).fill(cam.position_prior_weight());
            CameraPrior {
                mean: center.to_vector(),
                cov_inv: Matrix6::from_diagonal(&diag),
                dof: scheme.prior_dof,
            }
        });
    }

    let mut point_rng = ChaCha8Rng::seed_from_u64(seed);
    point_rng.set_stream(3);
    match scheme.point_init {
        PointInit::Truth => {
            for (pt, t) in noisy.points.iter_mut().zip(&truth.points) {
                pt.position = *t;
            }
        }
        PointInit::Perturb { stddev } => {
            let n = Normal::new(0.0, stddev).expect("validated stddev");
            for (pt, t) in noisy.points.iter_mut().zip(&truth.points) {
                pt.position = WorldPoint(t.0 + Vector3::from_fn(|_, _| n.sample(&mut point_rng)));
            }
        }
        PointInit::Triangulate => triangulate_points(&mut noisy),
    }
    Ok((noisy, truth))
}

/// Re-initializes every point from its observations. Points whose rays do
/// not intersect in front of all observing cameras keep their position.
pub fn triangulate_points(net: &mut ControlNetwork) {
    for (i, obs_ids) in net.observations_by_point().into_iter().enumerate() {
        let rays: Vec<_> = obs_ids
            .iter()
            .map(|&k| {
                let obs = &net.observations[k];
                let cam = &net.cameras[obs.camera];
                geometry::back_project(&cam.pose, &cam.intrinsics, &obs.pixel)
            })
            .collect();
        let Some(x) = geometry::triangulate(&rays) else {
            continue;
        };
        let candidate = WorldPoint(x);
        let in_front = obs_ids.iter().all(|&k| {
            let cam = &net.cameras[net.observations[k].camera];
            cam.pose.to_camera_frame(&candidate).z > 0.0
        });
        if in_front {
            net.points[i].position = candidate;
        }
    }
}
