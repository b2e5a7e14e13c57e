//! Sigma-edit baseline: Gaussian solve, removal of observations whose
//! residual norm is far above the mean, and a refit on what remains.

use crate::network::{ControlNetwork, Observation};
use crate::objective::{self, ObjectiveKind};
use crate::solver::{self, SolverConfig, SolverError, SolverReport};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OutlierError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("edit rule removed every observation")]
    AllRemoved,
    #[error("invalid edit rule: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditRuleConfig {
    /// Observations with norm above `mean + k_sigma · stddev` are removed.
    pub k_sigma: f64,
    /// Number of remove-and-refit passes.
    pub rounds: usize,
}

impl Default for EditRuleConfig {
    fn default() -> Self {
        Self {
            k_sigma: 2.0,
            rounds: 1,
        }
    }
}

impl EditRuleConfig {
    pub fn validate(&self) -> Result<(), OutlierError> {
        if !(self.k_sigma > 0.0) {
            return Err(OutlierError::InvalidConfig(format!("k_sigma {} must be positive", self.k_sigma)));
        }
        if self.rounds == 0 {
            return Err(OutlierError::InvalidConfig("rounds must be positive".into()));
        }
        Ok(())
    }
}

/// Population mean and standard deviation, summed in sorted order so the
/// result does not depend on input order.
pub fn norm_statistics(norms: &[f64]) -> (f64, f64) {
    if norms.is_empty() {
        return (0.0, 0.0);
    }
    let mut sorted = norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let var = dev.iter().sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Indices of `norms` strictly above `mean + k_sigma · stddev`.
pub fn edit_rule(norms: &[f64], k_sigma: f64) -> Vec<usize> {
    let (mean, std) = norm_statistics(norms);
    let threshold = mean + k_sigma * std;
    norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > threshold)
        .map(|(k, _)| k)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemovedObservation {
    /// Index into the input network's observation list.
    pub observation: usize,
    pub camera: usize,
    pub point: usize,
    /// Mahalanobis residual norm that triggered the removal.
    pub norm: f64,
    /// Edit round (1-based) that removed it.
    pub round: usize,
}

#[derive(Debug, Clone)]
pub struct SigmaEditOutcome {
    /// Input network with refined parameters. Removed observations are
    /// still listed; frozen entities keep the estimate they had when they
    /// lost their last observation.
    pub network: ControlNetwork,
    pub removed: Vec<RemovedObservation>,
    pub frozen_cameras: Vec<usize>,
    pub frozen_points: Vec<usize>,
    /// The initial solve followed by one report per refit.
    pub reports: Vec<SolverReport>,
}

impl SigmaEditOutcome {
    pub fn removed_ids(&self) -> Vec<usize> {
        self.removed.iter().map(|r| r.observation).collect()
    }

    /// Writes `observation,camera,point,norm,round` rows.
    pub fn write_removed_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        out.write_record(["observation", "camera", "point", "norm", "round"])?;
        for r in &self.removed {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs the Gaussian solve, then `rounds` passes of: score every active
/// observation by its Mahalanobis residual norm, remove those above the
/// threshold, and re-solve on the reduced network. A pass that removes
/// nothing ends the loop without a refit.
pub fn sigma_edit_solve(
    net: &ControlNetwork,
    solver_config: &SolverConfig,
    edit: &EditRuleConfig,
) -> Result<SigmaEditOutcome, OutlierError> {
    edit.validate()?;
    let config = solver_config.with_kind(ObjectiveKind::GaussianL2);
    let (mut current, first) = solver::solve(net, &config)?;
    let mut reports = vec![first];
    let mut active: Vec<bool> = vec![true; net.observations.len()];
    let mut removed = Vec::new();

    for round in 1..=edit.rounds {
        let residuals = objective::residuals(&current, &current.pack()).map_err(SolverError::from)?;
        let ids: Vec<usize> = (0..active.len()).filter(|&k| active[k]).collect();
        let norms: Vec<f64> = ids.iter().map(|&k| residuals[k].mahalanobis()).collect();
        let flagged = edit_rule(&norms, edit.k_sigma);
        if flagged.is_empty() {
            break;
        }
        for &f in &flagged {
            let k = ids[f];
            active[k] = false;
            removed.push(RemovedObservation {
                observation: k,
                camera: net.observations[k].camera,
                point: net.observations[k].point,
                norm: norms[f],
                round,
            });
        }
        if !active.iter().any(|&a| a) {
            return Err(OutlierError::AllRemoved);
        }
        let reduced = Reduced::new(&current, &active);
        let (solved, report) = solver::solve(&reduced.net, &config)?;
        reduced.write_back(&solved, &mut current);
        reports.push(report);
    }

    let (frozen_cameras, frozen_points) = frozen_entities(net, &active);
    if !frozen_cameras.is_empty() || !frozen_points.is_empty() {
        log::warn!(
            "sigma edit left {} cameras and {} points without observations; they were frozen",
            frozen_cameras.len(),
            frozen_points.len()
        );
    }
    removed.sort_by_key(|r| r.observation);
    Ok(SigmaEditOutcome {
        network: current,
        removed,
        frozen_cameras,
        frozen_points,
        reports,
    })
}

fn frozen_entities(net: &ControlNetwork, active: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut cam_seen = vec![false; net.cameras.len()];
    let mut pt_seen = vec![false; net.points.len()];
    for (obs, _) in net.observations.iter().zip(active).filter(|(_, &a)| a) {
        cam_seen[obs.camera] = true;
        pt_seen[obs.point] = true;
    }
    let unseen = |seen: Vec<bool>| seen.iter().enumerate().filter(|(_, &s)| !s).map(|(k, _)| k).collect();
    (unseen(cam_seen), unseen(pt_seen))
}

/// Sub-network of the active observations and the entities they touch.
struct Reduced {
    net: ControlNetwork,
    cameras: Vec<usize>,
    points: Vec<usize>,
}

impl Reduced {
    fn new(full: &ControlNetwork, active: &[bool]) -> Self {
        let mut cam_map = vec![None; full.cameras.len()];
        let mut pt_map = vec![None; full.points.len()];
        let mut cameras = Vec::new();
        let mut points = Vec::new();
        let mut observations = Vec::new();
        for (obs, _) in full.observations.iter().zip(active).filter(|(_, &a)| a) {
            let camera = *cam_map[obs.camera].get_or_insert_with(|| {
                cameras.push(obs.camera);
                cameras.len() - 1
            });
            let point = *pt_map[obs.point].get_or_insert_with(|| {
                points.push(obs.point);
                points.len() - 1
            });
            observations.push(Observation {
                camera,
                point,
                ..obs.clone()
            });
        }
        let net = ControlNetwork {
            cameras: cameras.iter().map(|&j| full.cameras[j].clone()).collect(),
            points: points.iter().map(|&i| full.points[i].clone()).collect(),
            observations,
        };
        Self { net, cameras, points }
    }

    fn write_back(&self, solved: &ControlNetwork, full: &mut ControlNetwork) {
        for (local, &j) in self.cameras.iter().enumerate() {
            full.cameras[j].pose = solved.cameras[local].pose;
        }
        for (local, &i) in self.points.iter().enumerate() {
            full.points[i].position = solved.points[local].position;
        }
    }
}
