//! Accuracy statistics: squared-error against ground truth and ray
//! intersection residuals of tie-points.

use crate::geometry::{self, CameraPose, Ray, WorldPoint};
use crate::network::ControlNetwork;
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("entity count mismatch: estimate has {estimate}, truth has {truth}")]
    CountMismatch { estimate: usize, truth: usize },
    #[error("baseline MSE must be positive, got {0}")]
    ZeroBaseline(f64),
    #[error("point {point} has fewer than two observations")]
    TooFewViews { point: usize },
    #[error("no tie-points to evaluate")]
    Empty,
}

/// Mean squared Euclidean distance between corresponding vectors.
pub fn mse(estimate: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    if estimate.len() != truth.len() {
        return Err(MetricsError::CountMismatch {
            estimate: estimate.len(),
            truth: truth.len(),
        });
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok(total / estimate.len() as f64)
}

pub fn world_point_mse(estimate: &[WorldPoint], truth: &[WorldPoint]) -> Result<f64, MetricsError> {
    let a: Vec<_> = estimate.iter().map(|p| p.0).collect();
    let b: Vec<_> = truth.iter().map(|p| p.0).collect();
    mse(&a, &b)
}

/// MSE of camera positions; rotations do not contribute.
pub fn camera_xyz_mse(estimate: &[CameraPose], truth: &[CameraPose]) -> Result<f64, MetricsError> {
    let a: Vec<_> = estimate.iter().map(|p| p.position).collect();
    let b: Vec<_> = truth.iter().map(|p| p.position).collect();
    mse(&a, &b)
}

pub fn relative_mse(value: f64, baseline_mse0: f64) -> Result<f64, MetricsError> {
    if !(baseline_mse0 > 0.0) {
        return Err(MetricsError::ZeroBaseline(baseline_mse0));
    }
    Ok(value / baseline_mse0)
}

/// Reference MSE values of the Gaussian solve under nominal noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub world_mse0: f64,
    pub camera_mse0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseReport {
    pub world_point_mse: f64,
    pub camera_xyz_mse: f64,
    pub relative_world: f64,
    pub relative_camera: f64,
    #[serde(flatten)]
    pub baseline: Baseline,
}

impl MseReport {
    /// Scores a solved network against the true poses and points. World
    /// and camera errors are each divided by their own baseline.
    pub fn new(
        net: &ControlNetwork,
        true_poses: &[CameraPose],
        true_points: &[WorldPoint],
        baseline: Baseline,
    ) -> Result<Self, MetricsError> {
        let poses: Vec<_> = net.cameras.iter().map(|c| c.pose).collect();
        let points: Vec<_> = net.points.iter().map(|p| p.position).collect();
        let world = world_point_mse(&points, true_points)?;
        let camera = camera_xyz_mse(&poses, true_poses)?;
        Ok(Self {
            world_point_mse: world,
            camera_xyz_mse: camera,
            relative_world: relative_mse(world, baseline.world_mse0)?,
            relative_camera: relative_mse(camera, baseline.camera_mse0)?,
            baseline,
        })
    }
}

/// Rays closer than this to parallel (sine of the angle between them) use
/// the point-to-line distance.
const PARALLEL_SINE: f64 = 1e-12;

/// Shortest distance between two rays treated as infinite lines, and whether
/// they were numerically parallel.
pub fn ray_distance(a: &Ray, b: &Ray) -> (f64, bool) {
    let d1 = a.direction.normalize();
    let d2 = b.direction.normalize();
    let n = d1.cross(&d2);
    let offset = b.origin - a.origin;
    let sine = n.norm();
    if sine <= PARALLEL_SINE {
        // distance from b's origin to the line through a
        let perp = offset - d1 * offset.dot(&d1);
        (perp.norm(), true)
    } else {
        (offset.dot(&n).abs() / sine, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriangulationReport {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// Mean pairwise ray distance of each evaluated tie-point.
    #[serde(skip)]
    pub per_point: Vec<f64>,
    /// Camera pairs whose rays were parallel.
    pub parallel_pairs: usize,
}

impl TriangulationReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        out.serialize(self)?;
        out.flush()?;
        Ok(())
    }
}

/// For every tie-point, back-projects each observation from the camera
/// poses in `c` and averages the distance between every pair of rays.
pub fn triangulation_error(net: &ControlNetwork, c: &DVector<f64>) -> Result<TriangulationReport, MetricsError> {
    let layout = net.layout();
    if c.len() != layout.len() {
        return Err(MetricsError::CountMismatch {
            estimate: c.len(),
            truth: layout.len(),
        });
    }
    let mut per_point = Vec::with_capacity(layout.n_points);
    let mut parallel_pairs = 0;
    for (i, obs_ids) in net.observations_by_point().into_iter().enumerate() {
        if obs_ids.len() < 2 {
            return Err(MetricsError::TooFewViews { point: i });
        }
        let rays: Vec<Ray> = obs_ids
            .iter()
            .map(|&k| {
                let obs = &net.observations[k];
                let pose = layout.camera_pose(c, obs.camera);
                geometry::back_project(&pose, &net.cameras[obs.camera].intrinsics, &obs.pixel)
            })
            .collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for a in 0..rays.len() {
            for b in a + 1..rays.len() {
                let (d, parallel) = ray_distance(&rays[a], &rays[b]);
                total += d;
                pairs += 1;
                parallel_pairs += usize::from(parallel);
            }
        }
        per_point.push(total / pairs as f64);
    }
    if per_point.is_empty() {
        return Err(MetricsError::Empty);
    }
    if parallel_pairs > 0 {
        log::warn!("{parallel_pairs} ray pairs were parallel; used point-to-line distance");
    }
    let mut sorted = per_point.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(TriangulationReport {
        min: sorted[0],
        median,
        max: sorted[n - 1],
        per_point,
        parallel_pairs,
    })
}
