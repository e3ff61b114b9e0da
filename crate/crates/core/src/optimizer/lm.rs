//! Levenberg–Marquardt driver shared by the pose-only and baseline solvers.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::cost::{accumulate, damped_solve, free_gradient, pose_only_layout, BlockLayout, POSE_BLOCK_BYTES};
use super::{Mode, Problem, SolverSettings};
use crate::error::{Error, Result};
use crate::geometry::{apply_right_perturbation, Perturbation, Pose};
use crate::scalar::{lit, to_f64, Real};

/// Consecutive failed factorizations tolerated before giving up.
pub const MAX_SOLVE_FAILURES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub lambda: f64,
    pub accepted: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    CostTolerance,
    GradientTolerance,
    ZeroCost,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MaxIterations => "max_iterations",
            Self::CostTolerance => "cost_tolerance",
            Self::GradientTolerance => "gradient_tolerance",
            Self::ZeroCost => "zero_cost",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub accepted_steps: usize,
    pub wall_time: f64,
    /// Nonzero upper-triangle blocks of the normal matrix, in bytes.
    pub hessian_bytes: usize,
    /// Dense pose-block bound `36·P²·8`.
    pub dense_hessian_bytes: usize,
    /// Residual terms skipped at the final state (degenerate or behind a camera).
    pub skipped_terms: usize,
    /// Tracks excluded from the solve before it started.
    pub dropped_tracks: usize,
    pub termination: Termination,
    /// Iteration 0 is the initial state.
    pub trace: Vec<IterationRecord>,
}

/// A nonlinear least-squares problem as seen by the damping loop.
pub(crate) trait LmModel<T: Real> {
    type State: Clone;
    type System;

    /// Cost and linearization at `state`.
    fn linearize(&self, state: &Self::State) -> Result<(T, Self::System)>;
    fn cost(&self, state: &Self::State) -> Result<T>;
    fn gradient_inf(&self, system: &Self::System) -> T;
    /// Damped step from `state`, or `None` when the damped system is not positive definite.
    fn trial(&self, state: &Self::State, system: &Self::System, lambda: T) -> Result<Option<Self::State>>;
}

pub(crate) struct LmOutcome<S> {
    pub state: S,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    pub trace: Vec<IterationRecord>,
    pub wall_time: f64,
}

pub(crate) fn run_lm<T: Real, M: LmModel<T>>(
    model: &M,
    init: M::State,
    settings: &SolverSettings,
) -> Result<LmOutcome<M::State>> {
    settings.validate()?;
    let start = Instant::now();
    let ms = |s: &Instant| s.elapsed().as_secs_f64() * 1e3;
    let mut state = init;
    let (mut cost, mut system) = model.linearize(&state)?;
    let initial_cost = to_f64(cost);
    let mut lambda: T = lit(settings.lambda_init);
    let mut trace = vec![IterationRecord {
        iter: 0,
        cost: initial_cost,
        lambda: settings.lambda_init,
        accepted: true,
        wall_ms: ms(&start),
    }];
    let (mut iterations, mut accepted_steps) = (0, 0);
    let mut termination = Termination::MaxIterations;
    let (up, down) = (lit::<T>(settings.lambda_up), lit::<T>(settings.lambda_down));

    while iterations < settings.max_iters {
        if cost == T::zero() {
            termination = Termination::ZeroCost;
            break;
        }
        if model.gradient_inf(&system) < lit(settings.gradient_tol) {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut failures = 0;
        let trial = loop {
            match model.trial(&state, &system, lambda)? {
                Some(t) => break t,
                None => {
                    failures += 1;
                    if failures >= MAX_SOLVE_FAILURES {
                        return Err(Error::LinearSolveFailure(failures));
                    }
                    lambda *= up;
                }
            }
        };
        iterations += 1;
        let trial_cost = model.cost(&trial)?;
        if trial_cost.is_finite() && trial_cost < cost {
            let rel = (cost - trial_cost) / cost;
            state = trial;
            accepted_steps += 1;
            lambda /= down;
            let (c, s) = model.linearize(&state)?;
            cost = c;
            system = s;
            trace.push(IterationRecord {
                iter: iterations,
                cost: to_f64(cost),
                lambda: to_f64(lambda),
                accepted: true,
                wall_ms: ms(&start),
            });
            if rel < lit(settings.cost_rel_tol) {
                termination = Termination::CostTolerance;
                break;
            }
        } else {
            lambda *= up;
            trace.push(IterationRecord {
                iter: iterations,
                cost: to_f64(trial_cost),
                lambda: to_f64(lambda),
                accepted: false,
                wall_ms: ms(&start),
            });
        }
    }
    Ok(LmOutcome {
        state,
        iterations,
        accepted_steps,
        initial_cost,
        final_cost: to_f64(cost),
        termination,
        trace,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Applies a stacked free-pose increment; pose 0 is left untouched.
pub(crate) fn apply_pose_step<T: Real>(poses: &[Pose<T>], delta: &DVector<T>) -> Vec<Pose<T>> {
    let mut out = poses.to_vec();
    for (k, pose) in out.iter_mut().enumerate().skip(1) {
        let d = Perturbation::from_slice(delta.rows(6 * (k - 1), 6).as_slice());
        let mut p = apply_right_perturbation(pose, &d);
        p.rotation = p.rotation.orthonormalized();
        *pose = p;
    }
    out
}

struct PoseOnlyModel<'a, T: Real> {
    problem: &'a Problem<T>,
    layout: BlockLayout,
}

struct PoseOnlySystem<T: Real> {
    h: DMatrix<T>,
    g: DVector<T>,
}

impl<T: Real> LmModel<T> for PoseOnlyModel<'_, T> {
    type State = Vec<Pose<T>>;
    type System = PoseOnlySystem<T>;

    fn linearize(&self, poses: &Self::State) -> Result<(T, Self::System)> {
        let acc = accumulate(self.problem, poses, Some(&self.layout))?;
        let h = self.layout.assemble_free(&acc.blocks);
        let g = free_gradient(&acc.gradient);
        Ok((acc.cost, PoseOnlySystem { h, g }))
    }

    fn cost(&self, poses: &Self::State) -> Result<T> {
        Ok(accumulate(self.problem, poses, None)?.cost)
    }

    fn gradient_inf(&self, system: &Self::System) -> T {
        system.g.amax()
    }

    fn trial(&self, poses: &Self::State, system: &Self::System, lambda: T) -> Result<Option<Self::State>> {
        Ok(damped_solve(&system.h, &system.g, lambda).map(|d| apply_pose_step(poses, &d)))
    }
}

/// Pose-only Levenberg–Marquardt. Every track needs a selected base pair.
pub fn lm_solve<T: Real>(problem: &Problem<T>) -> Result<(Vec<Pose<T>>, SolveReport)> {
    if !matches!(problem.mode, Mode::Mcpa | Mode::Mcpalr) {
        return Err(Error::InvalidInput("lm_solve handles the pose-only modes".into()));
    }
    if problem.tracks.is_empty() {
        return Err(Error::EmptyProblem);
    }
    problem.validate()?;
    let layout = pose_only_layout(problem)?;
    let hessian_bytes = layout.len() * POSE_BLOCK_BYTES;
    let p = problem.poses.len();
    if p == 1 {
        let cost = to_f64(accumulate(problem, &problem.poses, None)?.cost);
        let report = SolveReport {
            iterations: 0,
            initial_cost: cost,
            final_cost: cost,
            accepted_steps: 0,
            wall_time: 0.0,
            hessian_bytes,
            dense_hessian_bytes: 36 * 8,
            skipped_terms: 0,
            dropped_tracks: 0,
            termination: Termination::GradientTolerance,
            trace: Vec::new(),
        };
        return Ok((problem.poses.clone(), report));
    }
    let model = PoseOnlyModel { problem, layout };
    let out = run_lm(&model, problem.poses.clone(), &problem.settings)?;
    let skipped_terms = accumulate(problem, &out.state, None)?.skipped;
    let report = SolveReport {
        iterations: out.iterations,
        initial_cost: out.initial_cost,
        final_cost: out.final_cost,
        accepted_steps: out.accepted_steps,
        wall_time: out.wall_time,
        hessian_bytes,
        dense_hessian_bytes: 36 * p * p * 8,
        skipped_terms,
        dropped_tracks: 0,
        termination: out.termination,
        trace: out.trace,
    };
    Ok((out.state, report))
}
