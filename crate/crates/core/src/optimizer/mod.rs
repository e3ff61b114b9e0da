//! Problem definition and solvers.
//!
//! The pose-only modes optimize `6·(P−1)` pose parameters (pose 0 is the
//! gauge anchor); the baseline bundle adjustment additionally carries one 3D
//! point per track and eliminates them with a Schur complement.

mod baseline;
mod cost;
mod lm;
mod metrics;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::base_select::{select_bases_with, BaseStrategy};
use crate::error::{Error, Result};
use crate::gcm::RigConfig;
use crate::geometry::Pose;
use crate::pose_only::signed_depths;
use crate::scalar::Real;
use crate::track::Track;
use crate::triangulate::triangulate_sot;

pub use baseline::{
    baseline_ba_solve, baseline_hessian_bytes, baseline_increment, reprojection_jacobians, BaselineSolution,
};
pub use cost::{build_cost, build_normal_equations, cost_at, pose_only_hessian_bytes, CostSummary, NormalEquations};
pub use lm::{lm_solve, IterationRecord, SolveReport, Termination};
pub use metrics::{gauge_align, gauge_align_points, error_metrics, Metrics};

/// Which cost is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Pose-only, left-base family.
    Mcpa,
    /// Pose-only, left and right families.
    Mcpalr,
    /// Reprojection bundle adjustment over poses and points.
    BaselineBa,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mcpa => "mcpa",
            Self::Mcpalr => "mcpalr",
            Self::BaselineBa => "ba",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mcpa" => Some(Self::Mcpa),
            "mcpalr" => Some(Self::Mcpalr),
            "ba" => Some(Self::BaselineBa),
            _ => None,
        }
    }
}

/// Levenberg–Marquardt schedule and stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub cost_rel_tol: f64,
    pub gradient_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iters: 10,
            lambda_init: 1e-4,
            lambda_up: 10.0,
            lambda_down: 10.0,
            cost_rel_tol: 1e-10,
            gradient_tol: 1e-10,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.lambda_init > 0.0) || !(self.lambda_up > 1.0) || !(self.lambda_down > 1.0) {
            return Err(Error::InvalidInput("damping schedule must have lambda_init > 0 and factors > 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem<T: Real> {
    pub rig: RigConfig<T>,
    pub poses: Vec<Pose<T>>,
    pub tracks: Vec<Track<T>>,
    pub mode: Mode,
    pub settings: SolverSettings,
}

impl<T: Real> Problem<T> {
    pub fn new(rig: RigConfig<T>, poses: Vec<Pose<T>>, tracks: Vec<Track<T>>) -> Result<Self> {
        let p = Self { rig, poses, tracks, mode: Mode::Mcpa, settings: SolverSettings::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses.is_empty() {
            return Err(Error::InvalidInput("problem needs at least one pose".into()));
        }
        self.settings.validate()?;
        for (k, t) in self.tracks.iter().enumerate() {
            if t.observations.len() < 2 {
                return Err(Error::InvalidInput(format!("track {k} has fewer than two observations")));
            }
            for o in &t.observations {
                if o.pose_id >= self.poses.len() {
                    return Err(Error::InvalidInput(format!("track {k} references pose {}", o.pose_id)));
                }
                self.rig.camera(o.camera_id)?;
            }
            if let Some(b) = t.base {
                if b.left >= t.len() || b.right >= t.len() || b.left == b.right {
                    return Err(Error::InvalidInput(format!("track {k} has an invalid base pair")));
                }
            }
        }
        Ok(())
    }

    pub fn observation_count(&self) -> usize {
        self.tracks.iter().map(|t| t.len()).sum()
    }
}

/// Outcome of base selection over a whole problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectionStats {
    pub selected: usize,
    /// Tracks without any non-degenerate pair.
    pub no_valid_pair: usize,
    /// Tracks whose base rays meet behind one of them.
    pub behind_base: usize,
}

/// Selects bases for every track at `poses`, dropping tracks that cannot
/// carry a pose-only constraint. Kept tracks retain their relative order.
pub fn select_all_bases<T: Real>(
    tracks: &mut Vec<Track<T>>,
    poses: &[Pose<T>],
    strategy: BaseStrategy,
) -> Result<SelectionStats> {
    let outcomes: Vec<Result<Option<crate::track::BasePair>>> = tracks
        .par_iter()
        .enumerate()
        .map(|(k, t)| match select_bases_with(t, poses, strategy, k) {
            Ok(b) => Ok(Some(b)),
            Err(Error::NoValidPair) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut stats = SelectionStats::default();
    let mut kept = Vec::with_capacity(tracks.len());
    for (mut t, outcome) in std::mem::take(tracks).into_iter().zip(outcomes) {
        let Some(base) = outcome? else {
            stats.no_valid_pair += 1;
            continue;
        };
        let (l, r) = (&t.observations[base.left], &t.observations[base.right]);
        match signed_depths(l, r, &poses[l.pose_id], &poses[r.pose_id]) {
            Ok((sl, sr)) if sl > T::zero() && sr > T::zero() => {
                t.set_base(base)?;
                stats.selected += 1;
                kept.push(t);
            }
            _ => stats.behind_base += 1,
        }
    }
    *tracks = kept;
    Ok(stats)
}

/// Poses, per-track points and the solver trace of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T: Real> {
    pub poses: Vec<Pose<T>>,
    /// Reconstructed point per track, `None` where reconstruction failed.
    pub points: Vec<Option<Vector3<T>>>,
    pub report: SolveReport,
}

/// Triangulates every track with the covariance-weighted estimator at `poses`.
pub fn triangulate_tracks<T: Real>(tracks: &[Track<T>], poses: &[Pose<T>]) -> Vec<Option<Vector3<T>>> {
    tracks
        .par_iter()
        .map(|t| {
            let rays: Vec<_> = t.observations.iter().map(|o| (o, &poses[o.pose_id])).collect();
            triangulate_sot(&rays).ok()
        })
        .collect()
}

/// Runs the solver selected by `problem.mode`. Pose-only modes reconstruct
/// points afterwards; the baseline returns its own point estimates.
pub fn solve<T: Real>(problem: &Problem<T>) -> Result<Solution<T>> {
    match problem.mode {
        Mode::Mcpa | Mode::Mcpalr => {
            let (poses, report) = lm_solve(problem)?;
            let points = triangulate_tracks(&problem.tracks, &poses);
            Ok(Solution { poses, points, report })
        }
        Mode::BaselineBa => {
            let s = baseline_ba_solve(problem)?;
            Ok(Solution { poses: s.poses, points: s.points, report: s.report })
        }
    }
}
