//! Objective functions over a control network.
//!
//! Every term (reprojection, camera prior, point prior) is a function of one
//! squared Mahalanobis norm `d²` of a `dim`-dimensional residual:
//!
//! * Gaussian:   `½ d²`
//! * Student-t:  `½ (ν + dim) log(1 + d²/ν)`
//!
//! The derivative of a term with respect to `d²` is `½ w` with
//! `w = (ν + dim) / (ν + d²)` for Student-t and `w = 1` for Gaussian. That `w`
//! is the squared observation weight `ρ²` and the prior weights `ϱ`, `g` used
//! by the solver, so the gradient and the reweighted Gauss-Newton matrix come
//! from the same quantity.

use crate::geometry::{self, GeometryError, PIXEL_DIM, POINT_DIM, POSE_DIM};
use crate::network::{ControlNetwork, Observation, ParamLayout};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix2x6, Vector2};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("observation {observation}: point is behind the camera")]
    BehindCamera { observation: usize },
    #[error("scale matrix is not symmetric positive definite")]
    NotSpd,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degrees of freedom must be positive, got {0}")]
    InvalidDof(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    GaussianL2,
    StudentT,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::GaussianL2 => f.write_str("l2"),
            ObjectiveKind::StudentT => f.write_str("student-t"),
        }
    }
}

impl FromStr for ObjectiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" | "gaussian" | "GaussianL2" => Ok(ObjectiveKind::GaussianL2),
            "student-t" | "student" | "StudentT" => Ok(ObjectiveKind::StudentT),
            other => Err(format!("unknown objective kind '{other}'")),
        }
    }
}

/// Value of one term given its squared Mahalanobis norm.
pub fn robust_cost(kind: ObjectiveKind, dof: f64, dim: usize, mahal_sq: f64) -> f64 {
    match kind {
        ObjectiveKind::GaussianL2 => 0.5 * mahal_sq,
        ObjectiveKind::StudentT => 0.5 * (dof + dim as f64) * (mahal_sq / dof).ln_1p(),
    }
}

/// Twice the derivative of [`robust_cost`] with respect to `mahal_sq`.
pub fn robust_weight(kind: ObjectiveKind, dof: f64, dim: usize, mahal_sq: f64) -> f64 {
    match kind {
        ObjectiveKind::GaussianL2 => 1.0,
        ObjectiveKind::StudentT => (dof + dim as f64) / (dof + mahal_sq),
    }
}

/// Reprojection error of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    /// `z - h(x, y)` in pixels.
    pub eps: Vector2<f64>,
    /// `εᵀ Σ⁻¹ ε`.
    pub mahal_sq: f64,
}

impl Residual {
    pub fn mahalanobis(&self) -> f64 {
        self.mahal_sq.sqrt()
    }
}

fn behind(observation: usize) -> impl Fn(GeometryError) -> ObjectiveError {
    move |_| ObjectiveError::BehindCamera { observation }
}

fn check_len(net: &ControlNetwork, c: &DVector<f64>) -> Result<ParamLayout, ObjectiveError> {
    let layout = net.layout();
    if c.len() != layout.len() {
        return Err(ObjectiveError::DimensionMismatch {
            expected: layout.len(),
            found: c.len(),
        });
    }
    Ok(layout)
}

fn observation_residual(
    net: &ControlNetwork,
    layout: &ParamLayout,
    c: &DVector<f64>,
    k: usize,
    obs: &Observation,
    info: &Matrix2<f64>,
) -> Result<Residual, ObjectiveError> {
    let pose = layout.camera_pose(c, obs.camera);
    let point = layout.world_point(c, obs.point);
    let predicted = geometry::project(&pose, &net.cameras[obs.camera].intrinsics, &point)
        .map_err(behind(k))?;
    let eps = obs.pixel - predicted;
    Ok(Residual {
        eps,
        mahal_sq: eps.dot(&(info * eps)),
    })
}

/// Reprojection residuals of every observation at parameters `c`.
pub fn residuals(net: &ControlNetwork, c: &DVector<f64>) -> Result<Vec<Residual>, ObjectiveError> {
    let layout = check_len(net, c)?;
    net.observations
        .iter()
        .enumerate()
        .map(|(k, obs)| observation_residual(net, &layout, c, k, obs, &obs.information()))
        .collect()
}

/// Per-entity squared Mahalanobis prior distances; zero for absent priors.
pub(crate) fn prior_distances(
    net: &ControlNetwork,
    layout: &ParamLayout,
    c: &DVector<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let cams = net
        .cameras
        .iter()
        .enumerate()
        .map(|(j, cam)| match &cam.prior {
            Some(p) => {
                let e = p.mean - layout.camera_vector(c, j);
                e.dot(&(p.cov_inv * e))
            }
            None => 0.0,
        })
        .collect();
    let pts = net
        .points
        .iter()
        .enumerate()
        .map(|(i, pt)| match &pt.prior {
            Some(p) => {
                let e = p.mean - layout.world_point(c, i).0;
                e.dot(&(p.cov_inv * e))
            }
            None => 0.0,
        })
        .collect();
    (cams, pts)
}

/// Objective value of the selected kind. Terms are summed in a fixed order.
pub fn eval(net: &ControlNetwork, c: &DVector<f64>, kind: ObjectiveKind) -> Result<f64, ObjectiveError> {
    let layout = check_len(net, c)?;
    let mut total = 0.0;
    for (k, obs) in net.observations.iter().enumerate() {
        let r = observation_residual(net, &layout, c, k, obs, &obs.information())?;
        total += robust_cost(kind, obs.dof, PIXEL_DIM, r.mahal_sq);
    }
    let (cam_d2, pt_d2) = prior_distances(net, &layout, c);
    for (cam, d2) in net.cameras.iter().zip(cam_d2) {
        if let Some(p) = &cam.prior {
            total += robust_cost(kind, p.dof, POSE_DIM, d2);
        }
    }
    for (pt, d2) in net.points.iter().zip(pt_d2) {
        if let Some(p) = &pt.prior {
            total += robust_cost(kind, p.dof, POINT_DIM, d2);
        }
    }
    Ok(total)
}

/// Gaussian negative log-likelihood (up to constants), with ½ on every sum.
pub fn eval_l2(net: &ControlNetwork, c: &DVector<f64>) -> Result<f64, ObjectiveError> {
    eval(net, c, ObjectiveKind::GaussianL2)
}

/// Student-t MAP objective `F(c)`.
pub fn eval_student(net: &ControlNetwork, c: &DVector<f64>) -> Result<f64, ObjectiveError> {
    eval(net, c, ObjectiveKind::StudentT)
}

/// Exact gradient of [`eval`] for the selected kind.
pub fn gradient(
    net: &ControlNetwork,
    c: &DVector<f64>,
    kind: ObjectiveKind,
) -> Result<DVector<f64>, ObjectiveError> {
    let layout = check_len(net, c)?;
    let mut grad = DVector::zeros(layout.len());
    for (k, obs) in net.observations.iter().enumerate() {
        let lin = linearize(net, &layout, c, k, kind)?;
        let scaled = lin.info * lin.residual.eps * lin.weight;
        let mut cam_block = grad.rows_mut(layout.camera(obs.camera).start, POSE_DIM);
        cam_block -= lin.a.transpose() * scaled;
        let mut pt_block = grad.rows_mut(layout.point(obs.point).start, POINT_DIM);
        pt_block -= lin.b.transpose() * scaled;
    }
    add_prior_gradient(net, &layout, c, kind, &mut grad);
    Ok(grad)
}

pub(crate) fn add_prior_gradient(
    net: &ControlNetwork,
    layout: &ParamLayout,
    c: &DVector<f64>,
    kind: ObjectiveKind,
    grad: &mut DVector<f64>,
) {
    for (j, cam) in net.cameras.iter().enumerate() {
        if let Some(p) = &cam.prior {
            let e = layout.camera_vector(c, j) - p.mean;
            let info_e = p.cov_inv * e;
            let w = robust_weight(kind, p.dof, POSE_DIM, e.dot(&info_e));
            let mut block = grad.rows_mut(layout.camera(j).start, POSE_DIM);
            block += info_e * w;
        }
    }
    for (i, pt) in net.points.iter().enumerate() {
        if let Some(p) = &pt.prior {
            let e = layout.world_point(c, i).0 - p.mean;
            let info_e = p.cov_inv * e;
            let w = robust_weight(kind, p.dof, POINT_DIM, e.dot(&info_e));
            let mut block = grad.rows_mut(layout.point(i).start, POINT_DIM);
            block += info_e * w;
        }
    }
}

/// Linearization of one observation: residual, Jacobians of `h`, information
/// matrix and the squared weight `ρ²`.
pub(crate) struct Linearized {
    pub residual: Residual,
    pub a: Matrix2x6<f64>,
    pub b: Matrix2x3<f64>,
    pub info: Matrix2<f64>,
    pub weight: f64,
}

pub(crate) fn linearize(
    net: &ControlNetwork,
    layout: &ParamLayout,
    c: &DVector<f64>,
    k: usize,
    kind: ObjectiveKind,
) -> Result<Linearized, ObjectiveError> {
    let obs = &net.observations[k];
    let pose = layout.camera_pose(c, obs.camera);
    let point = layout.world_point(c, obs.point);
    let intrinsics = &net.cameras[obs.camera].intrinsics;
    let predicted = geometry::project(&pose, intrinsics, &point).map_err(behind(k))?;
    let (a, b) = geometry::jacobians(&pose, intrinsics, &point).map_err(behind(k))?;
    let info = obs.information();
    let eps = obs.pixel - predicted;
    let mahal_sq = eps.dot(&(info * eps));
    Ok(Linearized {
        residual: Residual { eps, mahal_sq },
        a,
        b,
        info,
        weight: robust_weight(kind, obs.dof, PIXEL_DIM, mahal_sq),
    })
}

/// Reweighting factors at parameters `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    /// Per observation `ρ_ij`; the Gauss-Newton block uses `ρ²`.
    pub rho: Vec<f64>,
    /// Per camera `ϱ_j`; 1 for cameras without a prior.
    pub varrho: Vec<f64>,
    /// Per point `g_i`; 1 for points without a prior.
    pub g: Vec<f64>,
}

/// Weights of the selected kind; all ones for the Gaussian objective.
pub fn weights_for(
    net: &ControlNetwork,
    c: &DVector<f64>,
    kind: ObjectiveKind,
) -> Result<WeightSet, ObjectiveError> {
    let layout = check_len(net, c)?;
    let rho = residuals(net, c)?
        .iter()
        .zip(&net.observations)
        .map(|(r, obs)| robust_weight(kind, obs.dof, PIXEL_DIM, r.mahal_sq).sqrt())
        .collect();
    let (cam_d2, pt_d2) = prior_distances(net, &layout, c);
    let varrho = net
        .cameras
        .iter()
        .zip(cam_d2)
        .map(|(cam, d2)| {
            cam.prior
                .as_ref()
                .map_or(1.0, |p| robust_weight(kind, p.dof, POSE_DIM, d2))
        })
        .collect();
    let g = net
        .points
        .iter()
        .zip(pt_d2)
        .map(|(pt, d2)| {
            pt.prior
                .as_ref()
                .map_or(1.0, |p| robust_weight(kind, p.dof, POINT_DIM, d2))
        })
        .collect();
    Ok(WeightSet { rho, varrho, g })
}

/// Student-t reweighting factors at parameters `c`.
pub fn weights(net: &ControlNetwork, c: &DVector<f64>) -> Result<WeightSet, ObjectiveError> {
    weights_for(net, c, ObjectiveKind::StudentT)
}

/// `ln Γ(a + h) − ln Γ(a)`, accurate for large `a` where the two log-gamma
/// values nearly cancel.
pub fn ln_gamma_ratio(a: f64, h: f64) -> f64 {
    if a < 10.0 {
        return ln_gamma(a + h) - ln_gamma(a);
    }
    // Stirling series, with the leading terms combined through ln_1p.
    fn tail(z: f64) -> f64 {
        let z2 = z * z;
        (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * z2)) / z2) / z2) / z
    }
    h * a.ln() + (a + h - 0.5) * (h / a).ln_1p() - h + tail(a + h) - tail(a)
}

/// Log-density of the multivariate Student-t with location `mu`, scale
/// matrix `scale` and `dof` degrees of freedom, evaluated at `x`.
pub fn student_log_density(
    x: &DVector<f64>,
    mu: &DVector<f64>,
    scale: &DMatrix<f64>,
    dof: f64,
) -> Result<f64, ObjectiveError> {
    let m = x.len();
    if mu.len() != m || scale.nrows() != m || scale.ncols() != m {
        return Err(ObjectiveError::DimensionMismatch {
            expected: m,
            found: if mu.len() != m { mu.len() } else { scale.nrows() },
        });
    }
    if !(dof > 0.0 && dof.is_finite()) {
        return Err(ObjectiveError::InvalidDof(dof));
    }
    if (scale - scale.transpose()).amax() > 1e-12 * scale.amax() {
        return Err(ObjectiveError::NotSpd);
    }
    let chol = scale.clone().cholesky().ok_or(ObjectiveError::NotSpd)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let diff = x - mu;
    let mahal_sq = diff.dot(&chol.solve(&diff));
    let m_f = m as f64;
    Ok(ln_gamma_ratio(0.5 * dof, 0.5 * m_f)
        - 0.5 * (m_f * (std::f64::consts::PI * dof).ln() + log_det)
        - 0.5 * (dof + m_f) * (mahal_sq / dof).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraPose, Intrinsics, WorldPoint};
    use crate::network::{Camera, CameraPrior, Observation, Point, PointPrior};
    use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small network with cameras on a line looking down +z, some priors,
    /// and noisy pixels.
    fn random_net(rng: &mut ChaCha8Rng, n_cameras: usize, n_points: usize) -> ControlNetwork {
        let intrinsics = Intrinsics::from_fov(60.0, 640.0, 480.0).unwrap();
        let cameras: Vec<_> = (0..n_cameras)
            .map(|j| Camera {
                pose: CameraPose::new(
                    Vector3::new(j as f64 + rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0),
                    Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0),
                ),
                intrinsics,
                prior: (j % 2 == 0).then(|| CameraPrior {
                    mean: Vector6::from_fn(|_, _| rng.random_range(-0.2..0.2)),
                    cov_inv: Matrix6::from_diagonal(&Vector6::from_fn(|_, _| rng.random_range(0.5..3.0))),
                    dof: rng.random_range(1.0..8.0),
                }),
            })
            .collect();
        let points: Vec<_> = (0..n_points)
            .map(|i| Point {
                position: WorldPoint::new(
                    rng.random_range(0.0..n_cameras as f64),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(8.0..12.0),
                ),
                prior: (i % 3 == 0).then(|| PointPrior {
                    mean: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                    cov_inv: Matrix3::identity() * rng.random_range(0.1..2.0),
                    dof: rng.random_range(1.0..8.0),
                }),
            })
            .collect();
        let mut observations = Vec::new();
        for i in 0..n_points {
            for j in 0..n_cameras {
                if (i + j) % 3 == 2 && j > 0 {
                    continue;
                }
                let px = geometry::project(&cameras[j].pose, &intrinsics, &points[i].position).unwrap();
                observations.push(Observation {
                    camera: j,
                    point: i,
                    pixel: px + Vector2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)),
                    cov: Matrix2::new(1.5, 0.2, 0.2, 0.8),
                    dof: rng.random_range(1.0..8.0),
                });
            }
        }
        ControlNetwork {
            cameras,
            points,
            observations,
        }
    }

    fn single_observation_net(residual: Vector2<f64>, dof: f64) -> ControlNetwork {
        let intrinsics = Intrinsics::new(500.0, [0.0, 0.0], [100.0, 100.0]).unwrap();
        let pose = CameraPose::new(Vector3::zeros(), Vector3::zeros());
        let point = WorldPoint::new(0.0, 0.0, 5.0);
        ControlNetwork {
            cameras: vec![Camera { pose, intrinsics, prior: None }],
            points: vec![Point { position: point, prior: None }],
            observations: vec![Observation {
                camera: 0,
                point: 0,
                pixel: residual,
                cov: Matrix2::identity(),
                dof,
            }],
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn cauchy_mode_density() {
        let one = DVector::from_element(1, 0.3);
        let v = student_log_density(&one, &one, &DMatrix::identity(1, 1), 1.0).unwrap();
        assert!((v - (1.0 / std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn density_rejects_bad_scale() {
        let x = DVector::zeros(2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(student_log_density(&x, &x, &bad, 4.0), Err(ObjectiveError::NotSpd));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(student_log_density(&x, &x, &asym, 4.0), Err(ObjectiveError::NotSpd));
    }

    #[test]
    fn ln_gamma_ratio_matches_direct_evaluation_at_moderate_arguments() {
        for &a in &[10.0, 12.5, 40.0, 300.0] {
            for &h in &[0.5, 1.0, 1.5, 3.0] {
                let direct = ln_gamma(a + h) - ln_gamma(a);
                assert!(rel(ln_gamma_ratio(a, h), direct) < 1e-12, "a={a} h={h}");
            }
        }
    }

    #[test]
    fn zero_residual_objectives_vanish() {
        let net = single_observation_net(Vector2::zeros(), 4.0);
        let c = net.pack();
        assert_eq!(eval_l2(&net, &c).unwrap(), 0.0);
        assert_eq!(eval_student(&net, &c).unwrap(), 0.0);
        assert_eq!(gradient(&net, &c, ObjectiveKind::StudentT).unwrap().amax(), 0.0);
        assert_eq!(gradient(&net, &c, ObjectiveKind::GaussianL2).unwrap().amax(), 0.0);
    }

    #[test]
    fn single_term_values() {
        let net = single_observation_net(Vector2::new(1.0, 0.0), 4.0);
        assert_eq!(eval_l2(&net, &net.pack()).unwrap(), 0.5);

        let net = single_observation_net(Vector2::new(2.0, 0.0), 4.0);
        let expected = 0.5 * 6.0 * 2f64.ln();
        assert!(rel(eval_student(&net, &net.pack()).unwrap(), expected) < 1e-15);
    }

    #[test]
    fn weight_values() {
        let net = single_observation_net(Vector2::zeros(), 4.0);
        let w = weights(&net, &net.pack()).unwrap();
        assert!(rel(w.rho[0], (6.0f64 / 4.0).sqrt()) < 1e-15);

        let net = single_observation_net(Vector2::new(1.0, 1.0), 4.0);
        let w = weights(&net, &net.pack()).unwrap();
        assert_eq!(w.rho[0], 1.0);
        let l2 = weights_for(&net, &net.pack(), ObjectiveKind::GaussianL2).unwrap();
        assert_eq!(l2.rho[0], 1.0);
    }

    #[test]
    fn behind_camera_reports_observation() {
        let mut net = single_observation_net(Vector2::zeros(), 4.0);
        net.points[0].position = WorldPoint::new(0.0, 0.0, -5.0);
        assert_eq!(
            eval_l2(&net, &net.pack()),
            Err(ObjectiveError::BehindCamera { observation: 0 })
        );
    }

    #[test]
    fn zero_information_prior_contributes_nothing() {
        let mut net = single_observation_net(Vector2::new(0.5, -0.25), 4.0);
        let c = net.pack();
        let before = (eval_student(&net, &c).unwrap(), gradient(&net, &c, ObjectiveKind::StudentT).unwrap());
        net.cameras[0].prior = Some(CameraPrior {
            mean: Vector6::repeat(3.0),
            cov_inv: Matrix6::zeros(),
            dof: 4.0,
        });
        net.points[0].prior = Some(PointPrior {
            mean: Vector3::repeat(-2.0),
            cov_inv: Matrix3::zeros(),
            dof: 4.0,
        });
        assert_eq!(eval_student(&net, &c).unwrap(), before.0);
        assert_eq!(gradient(&net, &c, ObjectiveKind::StudentT).unwrap(), before.1);
    }

    /// Direct summation with explicit loops and no shared helpers.
    fn dense_oracle(net: &ControlNetwork, c: &DVector<f64>, student: bool) -> f64 {
        let layout = net.layout();
        let mut total = 0.0;
        for obs in &net.observations {
            let pose = layout.camera_pose(c, obs.camera);
            let x = layout.world_point(c, obs.point);
            let h = geometry::project(&pose, &net.cameras[obs.camera].intrinsics, &x).unwrap();
            let e = obs.pixel - h;
            let d2 = (e.transpose() * obs.cov.try_inverse().unwrap() * e)[0];
            total += if student {
                0.5 * (obs.dof + 2.0) * (1.0 + d2 / obs.dof).ln()
            } else {
                0.5 * d2
            };
        }
        for (j, cam) in net.cameras.iter().enumerate() {
            if let Some(p) = &cam.prior {
                let e = p.mean - layout.camera_vector(c, j);
                let d2 = (e.transpose() * p.cov_inv * e)[0];
                total += if student { 0.5 * (p.dof + 6.0) * (1.0 + d2 / p.dof).ln() } else { 0.5 * d2 };
            }
        }
        for (i, pt) in net.points.iter().enumerate() {
            if let Some(p) = &pt.prior {
                let e = p.mean - layout.world_point(c, i).0;
                let d2 = (e.transpose() * p.cov_inv * e)[0];
                total += if student { 0.5 * (p.dof + 3.0) * (1.0 + d2 / p.dof).ln() } else { 0.5 * d2 };
            }
        }
        total
    }

    #[test]
    fn evaluations_match_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let net = random_net(&mut rng, 3, 8);
            let c = net.pack();
            assert!(rel(eval_l2(&net, &c).unwrap(), dense_oracle(&net, &c, false)) < 1e-12);
            assert!(rel(eval_student(&net, &c).unwrap(), dense_oracle(&net, &c, true)) < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let net = random_net(&mut rng, 3, 6);
            let c = net.pack();
            for kind in [ObjectiveKind::GaussianL2, ObjectiveKind::StudentT] {
                let g = gradient(&net, &c, kind).unwrap();
                let fd = central_difference(&net, &c, kind);
                let err = (&g - &fd).amax() / g.amax();
                assert!(err < 1e-5, "{kind}: {err}");
            }
        }
    }

    fn central_difference(net: &ControlNetwork, c: &DVector<f64>, kind: ObjectiveKind) -> DVector<f64> {
        DVector::from_fn(c.len(), |k, _| {
            let h = 1e-6 * c[k].abs().max(1.0);
            let mut plus = c.clone();
            let mut minus = c.clone();
            plus[k] += h;
            minus[k] -= h;
            (eval(net, &plus, kind).unwrap() - eval(net, &minus, kind).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn student_gradient_approaches_l2_for_large_dof() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = random_net(&mut rng, 3, 6);
        for obs in &mut net.observations {
            obs.dof = 1e8;
        }
        for cam in &mut net.cameras {
            if let Some(p) = &mut cam.prior {
                p.dof = 1e8;
            }
        }
        for pt in &mut net.points {
            if let Some(p) = &mut pt.prior {
                p.dof = 1e8;
            }
        }
        let c = net.pack();
        let gs = gradient(&net, &c, ObjectiveKind::StudentT).unwrap();
        let gl = gradient(&net, &c, ObjectiveKind::GaussianL2).unwrap();
        assert!((&gs - &gl).norm() / gl.norm() < 1e-4);
    }

    #[test]
    fn weighted_block_reproduces_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut net = random_net(&mut rng, 3, 6);
        for cam in &mut net.cameras {
            cam.prior = None;
        }
        for pt in &mut net.points {
            pt.prior = None;
        }
        let c = net.pack();
        let layout = net.layout();
        let w = weights(&net, &c).unwrap();
        let mut oracle = DVector::zeros(c.len());
        for (k, obs) in net.observations.iter().enumerate() {
            let pose = layout.camera_pose(&c, obs.camera);
            let x = layout.world_point(&c, obs.point);
            let intr = &net.cameras[obs.camera].intrinsics;
            let (a, b) = geometry::jacobians(&pose, intr, &x).unwrap();
            let e = obs.pixel - geometry::project(&pose, intr, &x).unwrap();
            let info = obs.cov.try_inverse().unwrap();
            let rho_sq = w.rho[k] * w.rho[k];
            let ga = -(a.transpose() * info * e) * rho_sq;
            let gb = -(b.transpose() * info * e) * rho_sq;
            let mut cam_block = oracle.rows_mut(layout.camera(obs.camera).start, 6);
            cam_block += ga;
            let mut pt_block = oracle.rows_mut(layout.point(obs.point).start, 3);
            pt_block += gb;
        }
        let g = gradient(&net, &c, ObjectiveKind::StudentT).unwrap();
        assert!((&g - &oracle).amax() <= 1e-12 * g.amax());
    }

    #[test]
    fn student_objective_is_mahalanobis_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = random_net(&mut rng, 2, 5);
        for cam in &mut net.cameras {
            cam.prior = None;
        }
        for pt in &mut net.points {
            pt.prior = None;
        }
        let c = net.pack();
        let base = eval_student(&net, &c).unwrap();
        let layout = net.layout();
        let alpha = 3.7;
        let mut scaled = net.clone();
        for obs in &mut scaled.observations {
            let h = geometry::project(
                &layout.camera_pose(&c, obs.camera),
                &net.cameras[obs.camera].intrinsics,
                &layout.world_point(&c, obs.point),
            )
            .unwrap();
            obs.pixel = h + (obs.pixel - h) * alpha;
            obs.cov *= alpha * alpha;
        }
        assert!(rel(eval_student(&scaled, &c).unwrap(), base) < 1e-10);
    }

    #[test]
    fn weights_are_bounded_and_decreasing() {
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let d2 = k as f64 * 0.5;
            let w = robust_weight(ObjectiveKind::StudentT, 4.0, 2, d2);
            assert!(w > 0.0 && w <= 6.0 / 4.0);
            assert!(w < prev);
            prev = w;
        }
        assert_eq!(robust_weight(ObjectiveKind::StudentT, 4.0, 6, 0.0), 10.0 / 4.0);
        assert_eq!(robust_weight(ObjectiveKind::StudentT, 4.0, 3, 0.0), 7.0 / 4.0);
    }
}
