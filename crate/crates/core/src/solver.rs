//! Damped Gauss-Newton iteration over the sparse normal equations.
//!
//! Each iteration assembles the reweighted system
//!
//! ```text
//! H = J̃ᵀ Σ⁻¹ J̃ + diag(ϱ_j Ω_j⁻¹) + diag(g_i Φ_i⁻¹) + λ I
//! ```
//!
//! in camera (`U`), point (`V`) and coupling (`W`) blocks, solves
//! `H δ = −∇F` by eliminating the point blocks, and accepts the trial point
//! only when the objective strictly decreases. On acceptance `λ` is scaled by
//! `max(1/3, 1 − (2φ − 1)³)` where `φ` is the ratio of actual to predicted
//! decrease; on rejection it grows by `ν`, which doubles on every consecutive
//! rejection.
//!
//! The Gaussian objective uses unit weights, so the same machinery runs
//! classical L2 bundle adjustment.

use crate::geometry::{POINT_DIM, POSE_DIM};
use crate::network::{ControlNetwork, ParamLayout};
use crate::objective::{self, ObjectiveError, ObjectiveKind};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, Vector3};
use serde::Serialize;
use std::io::Write;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("normal equations are singular (smallest pivot {pivot:e})")]
    SingularSystem { pivot: f64 },
    #[error("solver diverged: {rejects} consecutive rejected steps at iteration {iteration} (lambda {lambda:e})")]
    Diverged {
        iteration: usize,
        rejects: usize,
        lambda: f64,
    },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub kind: ObjectiveKind,
    /// Initial damping. `None` uses `1e-3 ×` the largest diagonal entry of
    /// the undamped system at the starting point.
    pub lambda0: Option<f64>,
    pub grad_tol: f64,
    /// Relative step-size floor: stop once `‖δ‖ ≤ step_tol (‖c‖ + step_tol)`.
    pub step_tol: f64,
    /// Stop after an accepted step that lowers `F` by at most `f_tol · F`.
    pub f_tol: f64,
    pub max_iters: usize,
    pub max_rejects: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::new(ObjectiveKind::GaussianL2)
    }
}

impl SolverConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            lambda0: None,
            grad_tol: 1e-6,
            step_tol: 1e-12,
            f_tol: 1e-12,
            max_iters: 200,
            max_rejects: 40,
        }
    }

    pub fn with_kind(&self, kind: ObjectiveKind) -> Self {
        Self { kind, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if let Some(l) = self.lambda0 {
            if !(l > 0.0 && l.is_finite()) {
                return Err(SolverError::InvalidConfig("lambda0 must be positive".into()));
            }
        }
        if !(self.grad_tol > 0.0) {
            return Err(SolverError::InvalidConfig("grad_tol must be positive".into()));
        }
        if !(self.step_tol >= 0.0 && self.f_tol >= 0.0) {
            return Err(SolverError::InvalidConfig("step_tol and f_tol must be non-negative".into()));
        }
        if self.max_iters == 0 || self.max_rejects == 0 {
            return Err(SolverError::InvalidConfig(
                "max_iters and max_rejects must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Coupling block `W_ij = ρ² A_ijᵀ Σ⁻¹ B_ij` of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    pub camera: usize,
    pub point: usize,
    pub block: Matrix6x3<f64>,
}

/// Block form of the damped normal equations. `u` and `v` hold the
/// undamped diagonal blocks; `lambda` is added on solve and in [`densify`].
///
/// [`densify`]: SparseNormalSystem::densify
#[derive(Debug, Clone, PartialEq)]
pub struct SparseNormalSystem {
    pub layout: ParamLayout,
    pub u: Vec<Matrix6<f64>>,
    pub v: Vec<Matrix3<f64>>,
    pub w: Vec<CouplingBlock>,
    /// Gradient `∇F` at the linearization point.
    pub gradient: DVector<f64>,
    /// Objective value at the linearization point.
    pub objective: f64,
    pub lambda: f64,
}

impl SparseNormalSystem {
    /// Dense `H` including damping.
    pub fn densify(&self) -> DMatrix<f64> {
        let n = self.layout.len();
        let mut h = DMatrix::zeros(n, n);
        for (j, u) in self.u.iter().enumerate() {
            let s = self.layout.camera(j).start;
            h.fixed_view_mut::<6, 6>(s, s).copy_from(u);
        }
        for (i, v) in self.v.iter().enumerate() {
            let s = self.layout.point(i).start;
            h.fixed_view_mut::<3, 3>(s, s).copy_from(v);
        }
        for w in &self.w {
            let r = self.layout.camera(w.camera).start;
            let c = self.layout.point(w.point).start;
            let mut upper = h.fixed_view_mut::<6, 3>(r, c);
            upper += w.block;
            let mut lower = h.fixed_view_mut::<3, 6>(c, r);
            lower += w.block.transpose();
        }
        for k in 0..n {
            h[(k, k)] += self.lambda;
        }
        h
    }

    /// Largest diagonal entry of the undamped matrix.
    pub fn max_diagonal(&self) -> f64 {
        let u_max = self.u.iter().map(|u| u.diagonal().max()).fold(0.0, f64::max);
        let v_max = self.v.iter().map(|v| v.diagonal().max()).fold(0.0, f64::max);
        u_max.max(v_max)
    }
}

/// Assembles the reweighted normal equations at `c`. Weights are all one for
/// [`ObjectiveKind::GaussianL2`].
pub fn build_system(
    net: &ControlNetwork,
    c: &DVector<f64>,
    kind: ObjectiveKind,
    lambda: f64,
) -> Result<SparseNormalSystem, SolverError> {
    let layout = net.layout();
    if c.len() != layout.len() {
        return Err(ObjectiveError::DimensionMismatch {
            expected: layout.len(),
            found: c.len(),
        }
        .into());
    }
    let mut u = vec![Matrix6::zeros(); layout.n_cameras];
    let mut v = vec![Matrix3::zeros(); layout.n_points];
    let mut w = Vec::with_capacity(net.observations.len());
    let mut gradient = DVector::zeros(layout.len());
    let mut total = 0.0;

    for (k, obs) in net.observations.iter().enumerate() {
        let lin = objective::linearize(net, &layout, c, k, kind)?;
        total += objective::robust_cost(kind, obs.dof, crate::geometry::PIXEL_DIM, lin.residual.mahal_sq);
        let wa = lin.a.transpose() * lin.info * lin.weight;
        let wb = lin.b.transpose() * lin.info * lin.weight;
        u[obs.camera] += wa * lin.a;
        v[obs.point] += wb * lin.b;
        w.push(CouplingBlock {
            camera: obs.camera,
            point: obs.point,
            block: wa * lin.b,
        });
        let mut g_cam = gradient.rows_mut(layout.camera(obs.camera).start, POSE_DIM);
        g_cam -= wa * lin.residual.eps;
        let mut g_pt = gradient.rows_mut(layout.point(obs.point).start, POINT_DIM);
        g_pt -= wb * lin.residual.eps;
    }

    let (cam_d2, pt_d2) = objective::prior_distances(net, &layout, c);
    for (j, cam) in net.cameras.iter().enumerate() {
        if let Some(p) = &cam.prior {
            let weight = objective::robust_weight(kind, p.dof, POSE_DIM, cam_d2[j]);
            total += objective::robust_cost(kind, p.dof, POSE_DIM, cam_d2[j]);
            u[j] += p.cov_inv * weight;
        }
    }
    for (i, pt) in net.points.iter().enumerate() {
        if let Some(p) = &pt.prior {
            let weight = objective::robust_weight(kind, p.dof, POINT_DIM, pt_d2[i]);
            total += objective::robust_cost(kind, p.dof, POINT_DIM, pt_d2[i]);
            v[i] += p.cov_inv * weight;
        }
    }
    objective::add_prior_gradient(net, &layout, c, kind, &mut gradient);

    Ok(SparseNormalSystem {
        layout,
        u,
        v,
        w,
        gradient,
        objective: total,
        lambda,
    })
}

/// In-place lower Cholesky factorization. On failure returns the offending
/// pivot value.
fn cholesky_in_place(a: &mut DMatrix<f64>) -> Result<(), f64> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(d);
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `H δ = −∇F` by eliminating point blocks: forms the reduced camera
/// system `S = U − W V⁻¹ Wᵀ`, solves it densely, then back-substitutes the
/// point updates.
pub fn schur_solve(sys: &SparseNormalSystem) -> Result<DVector<f64>, SolverError> {
    let layout = sys.layout;
    let n_cam = POSE_DIM * layout.n_cameras;
    let lambda = sys.lambda;
    let g = &sys.gradient;

    let mut by_point: Vec<Vec<usize>> = vec![Vec::new(); layout.n_points];
    for (k, w) in sys.w.iter().enumerate() {
        by_point[w.point].push(k);
    }

    let mut v_inv = Vec::with_capacity(layout.n_points);
    for v in &sys.v {
        let damped = v + Matrix3::identity() * lambda;
        let chol = damped.cholesky().ok_or_else(|| SolverError::SingularSystem {
            pivot: damped.symmetric_eigenvalues().min(),
        })?;
        v_inv.push(chol.inverse());
    }

    let mut s = DMatrix::zeros(n_cam, n_cam);
    let mut rhs = DVector::zeros(n_cam);
    for (j, u) in sys.u.iter().enumerate() {
        let o = POSE_DIM * j;
        let mut block = s.fixed_view_mut::<6, 6>(o, o);
        block += u + Matrix6::identity() * lambda;
        rhs.fixed_rows_mut::<6>(o).copy_from(&(-g.fixed_rows::<6>(o)));
    }

    for (i, blocks) in by_point.iter().enumerate() {
        let vi = &v_inv[i];
        let g_point: Vector3<f64> = g.fixed_rows::<3>(layout.point(i).start).into_owned();
        let y = vi * (-g_point);
        for &a in blocks {
            let wa = &sys.w[a];
            let oa = POSE_DIM * wa.camera;
            let mut r = rhs.fixed_rows_mut::<6>(oa);
            r -= wa.block * y;
            let wv = wa.block * vi;
            for &b in blocks {
                let wb = &sys.w[b];
                let ob = POSE_DIM * wb.camera;
                let mut block = s.fixed_view_mut::<6, 6>(oa, ob);
                block -= wv * wb.block.transpose();
            }
        }
    }

    cholesky_in_place(&mut s).map_err(|pivot| SolverError::SingularSystem { pivot })?;
    let delta_cam = cholesky_solve(&s, &rhs);

    let mut delta = DVector::zeros(layout.len());
    delta.rows_mut(0, n_cam).copy_from(&delta_cam);
    for (i, blocks) in by_point.iter().enumerate() {
        let start = layout.point(i).start;
        let mut r: Vector3<f64> = -g.fixed_rows::<3>(start).into_owned();
        for &a in blocks {
            let wa = &sys.w[a];
            r -= wa.block.transpose() * delta_cam.fixed_rows::<6>(POSE_DIM * wa.camera);
        }
        delta.fixed_rows_mut::<3>(start).copy_from(&(v_inv[i] * r));
    }
    Ok(delta)
}

/// Multiplier applied to `λ` after an accepted step with gain ratio `phi`.
pub fn lambda_accept_factor(phi: f64) -> f64 {
    f64::max(1.0 / 3.0, 1.0 - (2.0 * phi - 1.0).powi(3))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub c: DVector<f64>,
    pub lambda: f64,
    /// Growth factor applied to `λ` on the next rejection.
    pub nu: f64,
    /// Number of steps taken (accepted or rejected).
    pub iter: usize,
    pub objective: f64,
    pub grad_inf_norm: f64,
    pub consecutive_rejects: usize,
}

impl SolverState {
    /// State at the network's current parameters.
    pub fn initial(net: &ControlNetwork, config: &SolverConfig) -> Result<Self, SolverError> {
        let c = net.pack();
        let sys = build_system(net, &c, config.kind, 0.0)?;
        let lambda = match config.lambda0 {
            Some(l) => l,
            None => {
                let max_diag = sys.max_diagonal();
                if max_diag > 0.0 {
                    1e-3 * max_diag
                } else {
                    1e-3
                }
            }
        };
        Ok(Self {
            c,
            lambda,
            nu: 2.0,
            iter: 0,
            objective: sys.objective,
            grad_inf_norm: sys.gradient.amax(),
            consecutive_rejects: 0,
        })
    }
}

/// Result of one damped step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: SolverState,
    pub accepted: bool,
    /// Actual over predicted decrease, set on accepted steps.
    pub gain_ratio: Option<f64>,
    pub step_norm: f64,
    /// Objective at the trial point; infinite when it was not evaluable.
    pub trial_objective: f64,
}

/// One iteration: solve for the step at the current `λ`, accept it iff the
/// objective strictly decreases, and update `λ`.
pub fn step(
    state: &SolverState,
    net: &ControlNetwork,
    config: &SolverConfig,
) -> Result<StepOutcome, SolverError> {
    let sys = build_system(net, &state.c, config.kind, state.lambda)?;
    let mut next = state.clone();
    next.iter += 1;

    let delta = match schur_solve(&sys) {
        Ok(d) => d,
        Err(SolverError::SingularSystem { .. }) => {
            reject(&mut next, config)?;
            return Ok(StepOutcome {
                state: next,
                accepted: false,
                gain_ratio: None,
                step_norm: f64::INFINITY,
                trial_objective: f64::INFINITY,
            });
        }
        Err(e) => return Err(e),
    };
    let step_norm = delta.norm();
    let trial = &state.c + &delta;
    let trial_objective = match objective::eval(net, &trial, config.kind) {
        Ok(f) if f.is_finite() => f,
        Ok(_) | Err(ObjectiveError::BehindCamera { .. }) => f64::INFINITY,
        Err(e) => return Err(e.into()),
    };

    if trial_objective < state.objective {
        let predicted = 0.5 * delta.dot(&(&delta * state.lambda - &sys.gradient));
        let phi = (state.objective - trial_objective) / predicted;
        next.lambda = state.lambda * lambda_accept_factor(phi);
        next.nu = 2.0;
        next.consecutive_rejects = 0;
        next.grad_inf_norm = objective::gradient(net, &trial, config.kind)?.amax();
        next.c = trial;
        next.objective = trial_objective;
        Ok(StepOutcome {
            state: next,
            accepted: true,
            gain_ratio: Some(phi),
            step_norm,
            trial_objective,
        })
    } else {
        reject(&mut next, config)?;
        Ok(StepOutcome {
            state: next,
            accepted: false,
            gain_ratio: None,
            step_norm,
            trial_objective,
        })
    }
}

fn reject(state: &mut SolverState, config: &SolverConfig) -> Result<(), SolverError> {
    state.lambda *= state.nu;
    state.nu *= 2.0;
    state.consecutive_rejects += 1;
    if state.consecutive_rejects >= config.max_rejects {
        return Err(SolverError::Diverged {
            iteration: state.iter,
            rejects: state.consecutive_rejects,
            lambda: state.lambda,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// Every gradient component is below `grad_tol`.
    GradientTolerance,
    /// The computed step fell below the relative step floor.
    StepTolerance,
    /// An accepted step barely changed the objective.
    FunctionTolerance,
    MaxIterations,
}

/// One row of the per-iteration log. Row 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    #[serde(rename = "F")]
    pub objective: f64,
    pub lambda: f64,
    pub accepted: bool,
    pub grad_inf_norm: f64,
    pub millis: f64,
    #[serde(skip)]
    pub gain_ratio: Option<f64>,
    #[serde(skip)]
    pub trial_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub kind: ObjectiveKind,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub accepted_steps: usize,
    pub elapsed: Duration,
}

impl SolverReport {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn initial_objective(&self) -> f64 {
        self.records[0].objective
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    /// Mean wall time of the steps taken, in milliseconds.
    pub fn mean_step_millis(&self) -> f64 {
        let steps = &self.records[1..];
        if steps.is_empty() {
            return 0.0;
        }
        steps.iter().map(|r| r.millis).sum::<f64>() / steps.len() as f64
    }

    /// Writes `iteration,F,lambda,accepted,grad_inf_norm,millis` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        for record in &self.records {
            out.serialize(record)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Iterates [`step`] from the network's current parameters until the
/// gradient, step or objective-change tolerance is met or `max_iters` steps
/// were taken.
pub fn solve(
    net: &ControlNetwork,
    config: &SolverConfig,
) -> Result<(ControlNetwork, SolverReport), SolverError> {
    config.validate()?;
    let started = Instant::now();
    let mut state = SolverState::initial(net, config)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        objective: state.objective,
        lambda: state.lambda,
        accepted: false,
        grad_inf_norm: state.grad_inf_norm,
        millis: 0.0,
        gain_ratio: None,
        trial_objective: state.objective,
    }];
    let mut accepted_steps = 0;

    let termination = loop {
        if state.grad_inf_norm < config.grad_tol {
            break Termination::GradientTolerance;
        }
        if state.iter >= config.max_iters {
            break Termination::MaxIterations;
        }
        let t0 = Instant::now();
        let outcome = step(&state, net, config)?;
        let millis = t0.elapsed().as_secs_f64() * 1e3;
        let c_norm = state.c.norm();
        let previous = state.objective;
        state = outcome.state;
        accepted_steps += usize::from(outcome.accepted);
        records.push(IterationRecord {
            iteration: state.iter,
            objective: state.objective,
            lambda: state.lambda,
            accepted: outcome.accepted,
            grad_inf_norm: state.grad_inf_norm,
            millis,
            gain_ratio: outcome.gain_ratio,
            trial_objective: outcome.trial_objective,
        });
        if outcome.step_norm <= config.step_tol * (c_norm + config.step_tol) {
            break Termination::StepTolerance;
        }
        if outcome.accepted && previous - state.objective <= config.f_tol * previous.abs() {
            break Termination::FunctionTolerance;
        }
    };

    let solved = net
        .unpack(&state.c)
        .expect("solver state has the network's parameter layout");
    log::debug!(
        "{} solve: {:?} after {} steps ({} accepted), F {:.6e} -> {:.6e}",
        config.kind,
        termination,
        state.iter,
        accepted_steps,
        records[0].objective,
        state.objective
    );
    Ok((
        solved,
        SolverReport {
            kind: config.kind,
            records,
            termination,
            accepted_steps,
            elapsed: started.elapsed(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{self, PIXEL_DIM};
    use crate::network::{CameraPrior, PointPrior};
    use crate::simgen::{self, NoiseScheme, PixelNoise, SceneConfig};
    use nalgebra::Vector6;

    fn scene(seed: u64, n_cameras: usize, n_points: usize) -> (ControlNetwork, simgen::GroundTruth) {
        simgen::generate_scene(&SceneConfig {
            n_cameras,
            n_points,
            rng_seed: seed,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    fn noisy_scene(seed: u64, pixel: PixelNoise) -> ControlNetwork {
        let (net, truth) = scene(seed, 4, 25);
        simgen::apply_noise(&net, &truth, &NoiseScheme::new(pixel), seed).unwrap().0
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    /// Dense Jacobian of all projections by central differences.
    fn fd_projection_jacobian(net: &ControlNetwork, c: &DVector<f64>) -> DMatrix<f64> {
        let layout = net.layout();
        let project_all = |c: &DVector<f64>| {
            let mut out = DVector::zeros(PIXEL_DIM * net.observations.len());
            for (k, obs) in net.observations.iter().enumerate() {
                let pose = layout.camera_pose(c, obs.camera);
                let x = layout.world_point(c, obs.point);
                let px = geometry::project(&pose, &net.cameras[obs.camera].intrinsics, &x).unwrap();
                out.fixed_rows_mut::<2>(2 * k).copy_from(&px);
            }
            out
        };
        let mut jac = DMatrix::zeros(PIXEL_DIM * net.observations.len(), c.len());
        for col in 0..c.len() {
            let h = 1e-6 * c[col].abs().max(1.0);
            let mut plus = c.clone();
            plus[col] += h;
            let mut minus = c.clone();
            minus[col] -= h;
            jac.set_column(col, &((project_all(&plus) - project_all(&minus)) / (2.0 * h)));
        }
        jac
    }

    /// `Σ ρ² Jᵀ Σ⁻¹ J + priors`, assembled densely.
    fn dense_oracle(net: &ControlNetwork, c: &DVector<f64>, kind: ObjectiveKind) -> DMatrix<f64> {
        let layout = net.layout();
        let jac = fd_projection_jacobian(net, c);
        let weights = objective::weights_for(net, c, kind).unwrap();
        let mut info = DMatrix::zeros(jac.nrows(), jac.nrows());
        for (k, obs) in net.observations.iter().enumerate() {
            let block = obs.information() * weights.rho[k].powi(2);
            info.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&block);
        }
        let mut h = jac.transpose() * info * &jac;
        for (j, cam) in net.cameras.iter().enumerate() {
            if let Some(p) = &cam.prior {
                let s = layout.camera(j).start;
                let mut block = h.view_mut((s, s), (6, 6));
                block += p.cov_inv * weights.varrho[j];
            }
        }
        for (i, pt) in net.points.iter().enumerate() {
            if let Some(p) = &pt.prior {
                let s = layout.point(i).start;
                let mut block = h.view_mut((s, s), (3, 3));
                block += p.cov_inv * weights.g[i];
            }
        }
        h
    }

    #[test]
    fn lambda_factor_values() {
        assert!((lambda_accept_factor(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((lambda_accept_factor(0.5) - 1.0).abs() < 1e-15);
        assert!((lambda_accept_factor(0.0) - 2.0).abs() < 1e-15);
        assert_eq!(lambda_accept_factor(5.0), 1.0 / 3.0);
    }

    #[test]
    fn single_observation_blocks() {
        let (mut net, _) = scene(1, 2, 1);
        net.observations.truncate(1);
        let c = net.pack();
        let sys = build_system(&net, &c, ObjectiveKind::GaussianL2, 0.0).unwrap();
        let obs = &net.observations[0];
        let pose = net.cameras[obs.camera].pose;
        let (a, b) = geometry::jacobians(&pose, &net.cameras[obs.camera].intrinsics, &net.points[0].position).unwrap();
        let info = obs.information();
        assert!((sys.u[obs.camera] - a.transpose() * info * a).norm() < 1e-9);
        assert!((sys.v[0] - b.transpose() * info * b).norm() < 1e-9);
        assert!((sys.w[0].block - a.transpose() * info * b).norm() < 1e-9);
        assert_eq!(sys.u[1 - obs.camera], Matrix6::zeros());
    }

    #[test]
    fn system_matches_dense_oracle() {
        let net = noisy_scene(2, PixelNoise::StudentT { df: 3.0 });
        let c = net.pack();
        for kind in [ObjectiveKind::GaussianL2, ObjectiveKind::StudentT] {
            let sys = build_system(&net, &c, kind, 0.0).unwrap();
            let oracle = dense_oracle(&net, &c, kind);
            let err = rel_err(&sys.densify(), &oracle);
            assert!(err < 1e-6, "{kind}: relative error {err}");
            let grad = objective::gradient(&net, &c, kind).unwrap();
            assert!((&sys.gradient - &grad).norm() <= 1e-12 * grad.norm());
            let f = objective::eval(&net, &c, kind).unwrap();
            assert!((sys.objective - f).abs() <= 1e-12 * f.abs());
        }
    }

    #[test]
    fn large_dof_system_approaches_gaussian() {
        let mut net = noisy_scene(3, PixelNoise::Nominal);
        for obs in &mut net.observations {
            obs.dof = 1e8;
        }
        for cam in &mut net.cameras {
            cam.prior.as_mut().unwrap().dof = 1e8;
        }
        let c = net.pack();
        let l2 = build_system(&net, &c, ObjectiveKind::GaussianL2, 0.0).unwrap().densify();
        let st = build_system(&net, &c, ObjectiveKind::StudentT, 0.0).unwrap().densify();
        assert!(rel_err(&st, &l2) < 1e-6);
    }

    #[test]
    fn priors_only_system_is_block_diagonal() {
        let (mut net, _) = scene(4, 2, 3);
        net.observations.clear();
        for cam in &mut net.cameras {
            cam.prior = Some(CameraPrior {
                mean: cam.pose.to_vector(),
                cov_inv: Matrix6::from_diagonal(&Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0)),
                dof: 4.0,
            });
        }
        for pt in &mut net.points {
            pt.prior = Some(PointPrior {
                mean: pt.position.0,
                cov_inv: Matrix3::identity() * 7.0,
                dof: 4.0,
            });
        }
        let h = build_system(&net, &net.pack(), ObjectiveKind::StudentT, 0.0).unwrap().densify();
        let off: f64 = (0..h.nrows())
            .flat_map(|r| (0..h.ncols()).map(move |c| (r, c)))
            .filter(|(r, c)| r != c)
            .map(|(r, c)| h[(r, c)].abs())
            .sum();
        assert_eq!(off, 0.0);
        // at the prior means the Student weight is (ν + dim)/ν
        assert!((h[(0, 0)] - 10.0 / 4.0).abs() < 1e-12);
        assert!((h[(12, 12)] - 7.0 * 7.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn schur_step_matches_dense_solve() {
        let net = noisy_scene(5, PixelNoise::ContaminatedNormal {
            p: 0.1,
            phi: 50.0,
            base_variance: 1.0,
        });
        let c = net.pack();
        for kind in [ObjectiveKind::GaussianL2, ObjectiveKind::StudentT] {
            let sys = build_system(&net, &c, kind, 1e-2).unwrap();
            let delta = schur_solve(&sys).unwrap();
            let dense = sys.densify().lu().solve(&(-&sys.gradient)).unwrap();
            let err = (&delta - &dense).norm() / dense.norm();
            assert!(err < 1e-8, "{kind}: {err}");
        }
    }

    #[test]
    fn gauge_deficient_system_is_solvable_with_damping() {
        let net = noisy_scene(6, PixelNoise::Nominal);
        let mut free = net.clone();
        for cam in &mut free.cameras {
            cam.prior = None;
        }
        let sys = build_system(&free, &free.pack(), ObjectiveKind::GaussianL2, 1e-3).unwrap();
        let delta = schur_solve(&sys).unwrap();
        assert!(delta.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn singular_system_reports_pivot() {
        let (mut net, _) = scene(7, 2, 2);
        net.observations.clear();
        let sys = build_system(&net, &net.pack(), ObjectiveKind::GaussianL2, 0.0).unwrap();
        assert!(matches!(schur_solve(&sys), Err(SolverError::SingularSystem { .. })));
    }

    #[test]
    fn quadratic_priors_converge_in_one_step() {
        let (mut net, _) = scene(8, 2, 2);
        net.observations.clear();
        for cam in &mut net.cameras {
            let mut mean = cam.pose.to_vector();
            mean[4] += 3.0;
            cam.prior = Some(CameraPrior {
                mean,
                cov_inv: Matrix6::identity() * 2.0,
                dof: 4.0,
            });
        }
        for pt in &mut net.points {
            pt.prior = Some(PointPrior {
                mean: pt.position.0 + Vector3::new(1.0, -2.0, 0.5),
                cov_inv: Matrix3::identity(),
                dof: 4.0,
            });
        }
        let config = SolverConfig {
            lambda0: Some(1e-12),
            ..SolverConfig::new(ObjectiveKind::GaussianL2)
        };
        let state = SolverState::initial(&net, &config).unwrap();
        let outcome = step(&state, &net, &config).unwrap();
        assert!(outcome.accepted);
        assert!(outcome.state.objective < 1e-20);
        let phi = outcome.gain_ratio.unwrap();
        assert!((phi - 1.0).abs() < 1e-9);
        assert!((outcome.state.lambda - 1e-12 / 3.0).abs() < 1e-24);
        for (j, cam) in net.cameras.iter().enumerate() {
            let got = net.layout().camera_vector(&outcome.state.c, j);
            assert!((got - cam.prior.as_ref().unwrap().mean).norm() < 1e-9);
        }
    }

    #[test]
    fn stationary_network_takes_no_step() {
        let (net, _) = scene(9, 3, 20);
        for kind in [ObjectiveKind::GaussianL2, ObjectiveKind::StudentT] {
            let (out, report) = solve(&net, &SolverConfig::new(kind)).unwrap();
            assert_eq!(report.accepted_steps, 0);
            assert_eq!(report.termination, Termination::GradientTolerance);
            assert_eq!(out, net);
        }
    }

    #[test]
    fn accepted_iterates_decrease_objective() {
        let net = noisy_scene(10, PixelNoise::StudentT { df: 4.0 });
        for kind in [ObjectiveKind::GaussianL2, ObjectiveKind::StudentT] {
            let (out, report) = solve(&net, &SolverConfig::new(kind)).unwrap();
            assert!(report.accepted_steps > 0);
            let mut prev = report.initial_objective();
            for r in &report.records[1..] {
                if r.accepted {
                    assert!(r.objective < prev);
                } else {
                    assert_eq!(r.objective, prev);
                }
                prev = r.objective;
            }
            assert!(report.final_objective() < report.initial_objective());
            let f = objective::eval(&out, &out.pack(), kind).unwrap();
            assert_eq!(f, report.final_objective());
            assert_ne!(report.termination, Termination::MaxIterations, "{kind}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut config = SolverConfig::new(ObjectiveKind::StudentT);
        config.lambda0 = Some(-1.0);
        assert!(config.validate().is_err());
        config.lambda0 = None;
        config.max_iters = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn iteration_csv_has_header_and_rows() {
        let net = noisy_scene(11, PixelNoise::Nominal);
        let (_, report) = solve(&net, &SolverConfig::new(ObjectiveKind::GaussianL2)).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,F,lambda,accepted,grad_inf_norm,millis"));
        assert_eq!(lines.count(), report.records.len());
    }
}
