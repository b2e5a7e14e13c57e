//! The control network: cameras, world points, their priors, and the pixel
//! observations linking them.
//!
//! Networks are persisted as a single JSON document with `cameras`, `points`
//! and `observations` sections. Floats are written in shortest round-trip
//! form, so `save` followed by `load` is lossless.

use crate::geometry::{CameraPose, Intrinsics, WorldPoint, POINT_DIM, POSE_DIM};
use nalgebra::{DVector, Matrix2, Matrix3, Matrix6, SMatrix, SVector, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::collections::{HashSet, VecDeque};
use std::ops::Range;
use std::path::Path;
use thiserror::Error;

/// Degrees of freedom used when a record does not specify one.
pub const DEFAULT_DOF: f64 = 4.0;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid {record}: {reason}")]
    Validation { record: String, reason: String },
    #[error("parameter vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

impl NetworkError {
    fn invalid(record: impl Into<String>, reason: impl Into<String>) -> Self {
        NetworkError::Validation {
            record: record.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPrior {
    /// Prior pose in packed `[rotation, position]` order.
    pub mean: Vector6<f64>,
    pub cov_inv: Matrix6<f64>,
    pub dof: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointPrior {
    pub mean: Vector3<f64>,
    pub cov_inv: Matrix3<f64>,
    pub dof: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub pose: CameraPose,
    pub intrinsics: Intrinsics,
    pub prior: Option<CameraPrior>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub position: WorldPoint,
    pub prior: Option<PointPrior>,
}

/// Pixel measurement of point `point` in image `camera`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    pub pixel: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub dof: f64,
}

impl Observation {
    /// Information matrix `Σ⁻¹`. The covariance is validated SPD on load.
    pub fn information(&self) -> Matrix2<f64> {
        self.cov
            .try_inverse()
            .expect("observation covariance validated as SPD")
    }
}

/// Offsets of camera and point blocks inside the packed parameter vector:
/// all camera blocks first, then all point blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_cameras: usize,
    pub n_points: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        POSE_DIM * self.n_cameras + POINT_DIM * self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn camera(&self, j: usize) -> Range<usize> {
        POSE_DIM * j..POSE_DIM * (j + 1)
    }

    pub fn point(&self, i: usize) -> Range<usize> {
        let start = POSE_DIM * self.n_cameras + POINT_DIM * i;
        start..start + POINT_DIM
    }

    pub fn camera_pose(&self, c: &DVector<f64>, j: usize) -> CameraPose {
        CameraPose::from_slice(&c.as_slice()[self.camera(j)])
    }

    pub fn camera_vector(&self, c: &DVector<f64>, j: usize) -> Vector6<f64> {
        Vector6::from_column_slice(&c.as_slice()[self.camera(j)])
    }

    pub fn world_point(&self, c: &DVector<f64>, i: usize) -> WorldPoint {
        WorldPoint(Vector3::from_column_slice(&c.as_slice()[self.point(i)]))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlNetwork {
    pub cameras: Vec<Camera>,
    pub points: Vec<Point>,
    pub observations: Vec<Observation>,
}

impl ControlNetwork {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_cameras: self.cameras.len(),
            n_points: self.points.len(),
        }
    }

    /// Packs all poses and points into one parameter vector.
    pub fn pack(&self) -> DVector<f64> {
        let layout = self.layout();
        let mut c = DVector::zeros(layout.len());
        for (j, cam) in self.cameras.iter().enumerate() {
            c.rows_mut(layout.camera(j).start, POSE_DIM)
                .copy_from(&cam.pose.to_vector());
        }
        for (i, pt) in self.points.iter().enumerate() {
            c.rows_mut(layout.point(i).start, POINT_DIM)
                .copy_from(&pt.position.0);
        }
        c
    }

    /// Overwrites poses and points from a packed parameter vector.
    pub fn set_parameters(&mut self, c: &DVector<f64>) -> Result<(), NetworkError> {
        let layout = self.layout();
        if c.len() != layout.len() {
            return Err(NetworkError::DimensionMismatch {
                expected: layout.len(),
                found: c.len(),
            });
        }
        for (j, cam) in self.cameras.iter_mut().enumerate() {
            cam.pose = layout.camera_pose(c, j);
        }
        for (i, pt) in self.points.iter_mut().enumerate() {
            pt.position = layout.world_point(c, i);
        }
        Ok(())
    }

    /// Copy of this network with parameters taken from `c`.
    pub fn unpack(&self, c: &DVector<f64>) -> Result<ControlNetwork, NetworkError> {
        let mut out = self.clone();
        out.set_parameters(c)?;
        Ok(out)
    }

    /// Observation indices grouped by point.
    pub fn observations_by_point(&self) -> Vec<Vec<usize>> {
        let mut by_point = vec![Vec::new(); self.points.len()];
        for (k, obs) in self.observations.iter().enumerate() {
            if obs.point < by_point.len() {
                by_point[obs.point].push(k);
            }
        }
        by_point
    }

    /// Checks every structural and numeric invariant, naming the first
    /// offending record.
    pub fn validate(&self) -> Result<(), NetworkError> {
        for (j, cam) in self.cameras.iter().enumerate() {
            let record = format!("camera {j}");
            cam.intrinsics
                .validate()
                .map_err(|e| NetworkError::invalid(&record, e.to_string()))?;
            let pose = cam.pose.to_vector();
            if !pose.iter().all(|v| v.is_finite()) {
                return Err(NetworkError::invalid(&record, "pose is not finite"));
            }
            if let Some(prior) = &cam.prior {
                check_prior(&record, prior.mean.as_slice(), &prior.cov_inv, prior.dof)?;
            }
        }
        for (i, pt) in self.points.iter().enumerate() {
            let record = format!("point {i}");
            if !pt.position.0.iter().all(|v| v.is_finite()) {
                return Err(NetworkError::invalid(&record, "coordinates are not finite"));
            }
            if let Some(prior) = &pt.prior {
                check_prior(&record, prior.mean.as_slice(), &prior.cov_inv, prior.dof)?;
            }
        }

        let mut seen = HashSet::with_capacity(self.observations.len());
        let mut observed = vec![false; self.points.len()];
        for (k, obs) in self.observations.iter().enumerate() {
            let record = format!("observation {k}");
            if obs.camera >= self.cameras.len() {
                return Err(NetworkError::invalid(
                    &record,
                    format!("camera index {} out of range ({} cameras)", obs.camera, self.cameras.len()),
                ));
            }
            if obs.point >= self.points.len() {
                return Err(NetworkError::invalid(
                    &record,
                    format!("point index {} out of range ({} points)", obs.point, self.points.len()),
                ));
            }
            if !seen.insert((obs.point, obs.camera)) {
                return Err(NetworkError::invalid(
                    &record,
                    format!("duplicate observation of point {} in camera {}", obs.point, obs.camera),
                ));
            }
            if !obs.pixel.iter().all(|v| v.is_finite()) {
                return Err(NetworkError::invalid(&record, "pixel is not finite"));
            }
            if !(obs.dof.is_finite() && obs.dof > 0.0) {
                return Err(NetworkError::invalid(&record, "dof must be positive"));
            }
            if !is_spd(&obs.cov) {
                return Err(NetworkError::invalid(&record, "covariance is not symmetric positive definite"));
            }
            observed[obs.point] = true;
        }
        if let Some(i) = observed.iter().position(|o| !o) {
            return Err(NetworkError::invalid(format!("point {i}"), "not observed by any camera"));
        }
        if !self.is_connected() {
            log::warn!("control network observation graph is not connected");
        }
        Ok(())
    }

    /// Whether the camera/point bipartite graph forms one component.
    pub fn is_connected(&self) -> bool {
        let n_cam = self.cameras.len();
        let total = n_cam + self.points.len();
        if total == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); total];
        for obs in &self.observations {
            adj[obs.camera].push(n_cam + obs.point);
            adj[n_cam + obs.point].push(obs.camera);
        }
        let mut visited = vec![false; total];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        let mut count = 1;
        while let Some(node) = queue.pop_front() {
            for &next in &adj[node] {
                if !visited[next] {
                    visited[next] = true;
                    count += 1;
                    queue.push_back(next);
                }
            }
        }
        count == total
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetworkError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile = serde_json::from_str(text)?;
        let net = ControlNetwork::from(file);
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String, NetworkError> {
        let mut text = serde_json::to_string_pretty(&NetworkFile::from(self))?;
        text.push('\n');
        Ok(text)
    }
}

fn check_prior<const D: usize>(
    record: &str,
    mean: &[f64],
    cov_inv: &SMatrix<f64, D, D>,
    dof: f64,
) -> Result<(), NetworkError> {
    if !mean.iter().all(|v| v.is_finite()) {
        return Err(NetworkError::invalid(record, "prior mean is not finite"));
    }
    if !(dof.is_finite() && dof > 0.0) {
        return Err(NetworkError::invalid(record, "prior dof must be positive"));
    }
    if !is_psd(cov_inv) {
        return Err(NetworkError::invalid(
            record,
            "prior inverse covariance is not symmetric positive semidefinite",
        ));
    }
    Ok(())
}

fn is_symmetric<const D: usize>(m: &SMatrix<f64, D, D>) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    m.iter().all(|v| v.is_finite()) && (m - m.transpose()).amax() <= 1e-12 * scale
}

fn is_spd<const D: usize>(m: &SMatrix<f64, D, D>) -> bool {
    is_symmetric(m) && m.cholesky().is_some()
}

fn is_psd<const D: usize>(m: &SMatrix<f64, D, D>) -> bool {
    if !is_symmetric(m) {
        return false;
    }
    let scale = m.amax();
    if scale == 0.0 {
        return true;
    }
    nalgebra::DMatrix::from_column_slice(D, D, m.as_slice())
        .symmetric_eigenvalues()
        .min()
        >= -1e-12 * scale
}

// On-disk representation. Matrices are stored row-major as nested arrays.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    cameras: Vec<CameraRecord>,
    points: Vec<PointRecord>,
    observations: Vec<ObservationRecord>,
}

fn default_dof() -> f64 {
    DEFAULT_DOF
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    position: [f64; 3],
    rotation: [f64; 3],
    intrinsics: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior: Option<PriorRecord<6>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointRecord {
    position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior: Option<PriorRecord<3>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorRecord<const D: usize> {
    #[serde(with = "serde_arrays")]
    mean: [f64; D],
    #[serde(with = "serde_arrays")]
    cov_inv: [[f64; D]; D],
    #[serde(default = "default_dof")]
    dof: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationRecord {
    camera: usize,
    point: usize,
    pixel: [f64; 2],
    cov: [[f64; 2]; 2],
    #[serde(default = "default_dof")]
    dof: f64,
}

/// serde only derives array impls up to length 32 for generic `T`, but not
/// for const-generic lengths; route through `Vec`.
mod serde_arrays {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub trait FixedArray: Sized {
        type Repr: Serialize + for<'de> Deserialize<'de>;
        fn to_repr(&self) -> Self::Repr;
        fn from_repr(r: Self::Repr) -> Option<Self>;
    }

    impl<const D: usize> FixedArray for [f64; D] {
        type Repr = Vec<f64>;
        fn to_repr(&self) -> Vec<f64> {
            self.to_vec()
        }
        fn from_repr(r: Vec<f64>) -> Option<Self> {
            r.try_into().ok()
        }
    }

    impl<const D: usize> FixedArray for [[f64; D]; D] {
        type Repr = Vec<Vec<f64>>;
        fn to_repr(&self) -> Vec<Vec<f64>> {
            self.iter().map(|row| row.to_vec()).collect()
        }
        fn from_repr(r: Vec<Vec<f64>>) -> Option<Self> {
            let rows: Vec<[f64; D]> = r
                .into_iter()
                .map(|row| row.try_into().ok())
                .collect::<Option<_>>()?;
            rows.try_into().ok()
        }
    }

    pub fn serialize<T: FixedArray, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        v.to_repr().serialize(s)
    }

    pub fn deserialize<'de, T: FixedArray, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        let repr = T::Repr::deserialize(d)?;
        T::from_repr(repr).ok_or_else(|| D::Error::custom("array has wrong dimensions"))
    }
}

fn matrix_to_rows<const D: usize>(m: &SMatrix<f64, D, D>) -> [[f64; D]; D] {
    let mut rows = [[0.0; D]; D];
    for (r, row) in rows.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    rows
}

fn rows_to_matrix<const D: usize>(rows: &[[f64; D]; D]) -> SMatrix<f64, D, D> {
    SMatrix::from_fn(|r, c| rows[r][c])
}

impl From<&ControlNetwork> for NetworkFile {
    fn from(net: &ControlNetwork) -> Self {
        NetworkFile {
            cameras: net
                .cameras
                .iter()
                .map(|cam| CameraRecord {
                    position: cam.pose.position.into(),
                    rotation: cam.pose.rotation.into(),
                    intrinsics: cam.intrinsics,
                    prior: cam.prior.as_ref().map(|p| PriorRecord {
                        mean: p.mean.into(),
                        cov_inv: matrix_to_rows(&p.cov_inv),
                        dof: p.dof,
                    }),
                })
                .collect(),
            points: net
                .points
                .iter()
                .map(|pt| PointRecord {
                    position: pt.position.0.into(),
                    prior: pt.prior.as_ref().map(|p| PriorRecord {
                        mean: p.mean.into(),
                        cov_inv: matrix_to_rows(&p.cov_inv),
                        dof: p.dof,
                    }),
                })
                .collect(),
            observations: net
                .observations
                .iter()
                .map(|obs| ObservationRecord {
                    camera: obs.camera,
                    point: obs.point,
                    pixel: obs.pixel.into(),
                    cov: matrix_to_rows(&obs.cov),
                    dof: obs.dof,
                })
                .collect(),
        }
    }
}

impl From<NetworkFile> for ControlNetwork {
    fn from(file: NetworkFile) -> Self {
        ControlNetwork {
            cameras: file
                .cameras
                .into_iter()
                .map(|rec| Camera {
                    pose: CameraPose::new(rec.position.into(), rec.rotation.into()),
                    intrinsics: rec.intrinsics,
                    prior: rec.prior.map(|p| CameraPrior {
                        mean: SVector::from(p.mean),
                        cov_inv: rows_to_matrix(&p.cov_inv),
                        dof: p.dof,
                    }),
                })
                .collect(),
            points: file
                .points
                .into_iter()
                .map(|rec| Point {
                    position: WorldPoint(rec.position.into()),
                    prior: rec.prior.map(|p| PointPrior {
                        mean: SVector::from(p.mean),
                        cov_inv: rows_to_matrix(&p.cov_inv),
                        dof: p.dof,
                    }),
                })
                .collect(),
            observations: file
                .observations
                .into_iter()
                .map(|rec| Observation {
                    camera: rec.camera,
                    point: rec.point,
                    pixel: rec.pixel.into(),
                    cov: rows_to_matrix(&rec.cov),
                    dof: rec.dof,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"{
        "cameras": [{"position": [0, 0, 0], "rotation": [0, 0, 0],
                     "intrinsics": {"focal_length": 500, "principal_point": [320, 240], "image_size": [640, 480]}}],
        "points": [{"position": [0, 0, 10]}],
        "observations": [{"camera": 0, "point": 0, "pixel": [320, 240], "cov": [[1, 0], [0, 1]]}]
    }"#;

    fn sample_network(n_cameras: usize, n_points: usize) -> ControlNetwork {
        let intrinsics = Intrinsics::from_fov(74.0, 1000.0, 1000.0).unwrap();
        let cameras = (0..n_cameras)
            .map(|j| Camera {
                pose: CameraPose::new(
                    Vector3::new(j as f64 * 0.1 + 1.0 / 3.0, 0.7, -2.0),
                    Vector3::new(0.01 * j as f64, -0.02, 0.1 / 7.0),
                ),
                intrinsics,
                prior: (j == 0).then(|| CameraPrior {
                    mean: Vector6::repeat(0.1),
                    cov_inv: Matrix6::identity() * 1e12,
                    dof: 4.0,
                }),
            })
            .collect();
        let points = (0..n_points)
            .map(|i| Point {
                position: WorldPoint::new(i as f64 / 3.0, (i as f64).sin(), 10.0 + 1e-9 * i as f64),
                prior: (i % 7 == 0).then(|| PointPrior {
                    mean: Vector3::new(0.1, 0.2, 0.3),
                    cov_inv: Matrix3::identity() * 2.5,
                    dof: 3.0,
                }),
            })
            .collect();
        let observations = (0..n_points)
            .flat_map(|i| {
                (0..n_cameras.min(3)).map(move |j| Observation {
                    camera: (i + j) % n_cameras,
                    point: i,
                    pixel: Vector2::new(100.0 + i as f64 * 0.123456789, 200.0 - j as f64 / 9.0),
                    cov: Matrix2::new(2.0, 0.3, 0.3, 1.0),
                    dof: 4.0,
                })
            })
            .collect();
        ControlNetwork {
            cameras,
            points,
            observations,
        }
    }

    #[test]
    fn loads_minimal_file() {
        let net = ControlNetwork::from_json(MINIMAL).unwrap();
        assert_eq!(
            (net.cameras.len(), net.points.len(), net.observations.len()),
            (1, 1, 1)
        );
        assert_eq!(net.observations[0].dof, DEFAULT_DOF);
        assert!(net.cameras[0].prior.is_none());
    }

    #[test]
    fn rejects_out_of_range_camera() {
        let text = MINIMAL.replace(r#""camera": 0"#, r#""camera": 3"#);
        match ControlNetwork::from_json(&text) {
            Err(NetworkError::Validation { record, .. }) => assert_eq!(record, "observation 0"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_json() {
        assert!(matches!(
            ControlNetwork::from_json("{\"cameras\": ["),
            Err(NetworkError::Parse(_))
        ));
    }

    #[test]
    fn rejects_bad_covariance_and_dof() {
        let text = MINIMAL.replace("[[1, 0], [0, 1]]", "[[1, 2], [2, 1]]");
        assert!(matches!(ControlNetwork::from_json(&text), Err(NetworkError::Validation { .. })));
        let text = MINIMAL.replace("[[1, 0], [0, 1]]", "[[1, 0], [0, 1]], \"dof\": 0");
        assert!(matches!(ControlNetwork::from_json(&text), Err(NetworkError::Validation { .. })));
    }

    #[test]
    fn rejects_duplicate_and_unobserved() {
        let mut net = sample_network(3, 4);
        net.observations.push(net.observations[0].clone());
        assert!(net.validate().is_err());

        let mut net = sample_network(3, 4);
        net.observations.retain(|o| o.point != 2);
        match net.validate() {
            Err(NetworkError::Validation { record, .. }) => assert_eq!(record, "point 2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_prior_is_allowed_but_negative_is_not() {
        let mut net = sample_network(2, 3);
        net.cameras[0].prior.as_mut().unwrap().cov_inv = Matrix6::zeros();
        net.validate().unwrap();
        net.cameras[0].prior.as_mut().unwrap().cov_inv = -Matrix6::identity();
        assert!(net.validate().is_err());
    }

    #[test]
    fn priors_are_omitted_when_absent() {
        let net = ControlNetwork::from_json(MINIMAL).unwrap();
        let text = net.to_json().unwrap();
        assert!(!text.contains("prior"));
    }

    #[test]
    fn file_round_trip_is_lossless() {
        let net = sample_network(4, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        assert_eq!(ControlNetwork::load(&path).unwrap(), net);
    }

    #[test]
    fn resave_is_byte_stable() {
        let net = sample_network(10, 200);
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.json");
        let second = dir.path().join("b.json");
        net.save(&first).unwrap();
        ControlNetwork::load(&first).unwrap().save(&second).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    }

    #[test]
    fn packed_length_and_layout() {
        let net = sample_network(2, 3);
        let c = net.pack();
        assert_eq!(c.len(), 21);
        let mut perturbed = c.clone();
        perturbed[6] += 0.5;
        let moved = net.unpack(&perturbed).unwrap();
        assert_eq!(moved.cameras[0], net.cameras[0]);
        assert_eq!(moved.points, net.points);
        assert_eq!(moved.cameras[1].pose.position, net.cameras[1].pose.position);
        assert_eq!(
            moved.cameras[1].pose.rotation - net.cameras[1].pose.rotation,
            Vector3::new(0.5, 0.0, 0.0)
        );
        assert!(matches!(
            net.unpack(&DVector::zeros(20)),
            Err(NetworkError::DimensionMismatch { expected: 21, found: 20 })
        ));
    }

    proptest! {
        #[test]
        fn pack_unpack_are_inverse(values in prop::collection::vec(-1e6..1e6f64, 2 * 6 + 5 * 3)) {
            let net = sample_network(2, 5);
            let c = DVector::from_vec(values);
            let moved = net.unpack(&c).unwrap();
            prop_assert_eq!(moved.pack(), c);
            prop_assert_eq!(net.unpack(&net.pack()).unwrap(), net);
        }

        #[test]
        fn json_round_trip_preserves_bits(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            let mut net = sample_network(2, 2);
            net.points[1].position.0.y = x;
            net.observations[0].pixel.x = x;
            let back = ControlNetwork::from_json(&net.to_json().unwrap()).unwrap();
            prop_assert_eq!(back.points[1].position.0.y.to_bits(), x.to_bits());
            prop_assert_eq!(back, net);
        }
    }
}
