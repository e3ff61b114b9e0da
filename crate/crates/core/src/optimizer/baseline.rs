//! Reprojection bundle adjustment over poses and points, used as the
//! comparison baseline. Point blocks are eliminated with a Schur complement
//! so the reduced camera system has the same size as the pose-only one.

use nalgebra::{DVector, Matrix2x3, Matrix2x6, Matrix3, Matrix6, Matrix6x3, Vector2, Vector3, Vector6};
use rayon::prelude::*;

use super::cost::{damped_solve, free_gradient, BlockLayout, CHUNKS, POSE_BLOCK_BYTES};
use super::lm::{apply_pose_step, run_lm, LmModel, SolveReport};
use super::Problem;
use crate::error::{Error, Result};
use crate::gcm::{world_to_camera, ObservationRay, RigConfig};
use crate::geometry::{skew, Pose};
use crate::scalar::{lit, to_f64, Real};
use crate::track::Track;
use crate::triangulate::triangulate_midpoint;

/// Bytes of a 6×3 pose–point block.
const POSE_POINT_BYTES: usize = 18 * 8;
/// Bytes of a 3×3 point block.
const POINT_BYTES: usize = 9 * 8;

/// Pixel residual `π(X) − x` and its Jacobians with respect to a right
/// perturbation of the pose and to the world point.
pub fn reprojection_jacobians<T: Real>(
    rig: &RigConfig<T>,
    obs: &ObservationRay<T>,
    pose: &Pose<T>,
    x: &Vector3<T>,
) -> Result<(Vector2<T>, Matrix2x6<T>, Matrix2x3<T>)> {
    let cam = rig.camera(obs.camera_id)?;
    let xc = world_to_camera(cam, pose, x);
    if xc.z <= lit(crate::gcm::BEHIND_CAMERA_DEPTH) {
        return Err(Error::BehindCamera { camera: obs.camera_id, depth: to_f64(xc.z) });
    }
    let k = &cam.intrinsics;
    let iz = T::one() / xc.z;
    let pixel = Vector2::new(k.fx * xc.x * iz + k.cx, k.fy * xc.y * iz + k.cy);
    let dpi = Matrix2x3::new(
        k.fx * iz,
        T::zero(),
        -k.fx * xc.x * iz * iz,
        T::zero(),
        k.fy * iz,
        -k.fy * xc.y * iz * iz,
    );
    let a = dpi * cam.extrinsics.rotation.transpose().matrix();
    let r = pose.rotation.matrix();
    let mut jp = Matrix2x6::zeros();
    jp.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-(a * r * skew(x))));
    jp.fixed_view_mut::<2, 3>(0, 3).copy_from(&a);
    Ok((pixel - obs.pixel, jp, a * r))
}

/// Normal-equation pieces contributed by one track.
struct TrackSystem<T: Real> {
    v: Matrix3<T>,
    gx: Vector3<T>,
    /// `J_poseᵀ·J_point` per observing pose.
    w: Vec<(usize, Matrix6x3<T>)>,
}

struct Linearization<T: Real> {
    tracks: Vec<TrackSystem<T>>,
    u: Vec<Matrix6<T>>,
    gp: Vec<Vector6<T>>,
}

#[derive(Clone)]
struct BaState<T: Real> {
    poses: Vec<Pose<T>>,
    points: Vec<Vector3<T>>,
}

struct BaModel<'a, T: Real> {
    rig: &'a RigConfig<T>,
    tracks: Vec<&'a Track<T>>,
    layout: BlockLayout,
}

struct ChunkOut<T: Real> {
    cost: T,
    skipped: usize,
    tracks: Vec<TrackSystem<T>>,
    u: Vec<Matrix6<T>>,
    gp: Vec<Vector6<T>>,
}

impl<'a, T: Real> BaModel<'a, T> {
    fn new(rig: &'a RigConfig<T>, tracks: Vec<&'a Track<T>>, n_poses: usize) -> Self {
        let mut layout = BlockLayout::new(n_poses);
        for t in &tracks {
            let mut ids: Vec<usize> = t.observations.iter().map(|o| o.pose_id).collect();
            ids.sort_unstable();
            ids.dedup();
            for (k, &a) in ids.iter().enumerate() {
                for &b in &ids[k..] {
                    layout.insert(a, b);
                }
            }
        }
        for p in 0..n_poses {
            layout.insert(p, p);
        }
        Self { rig, tracks, layout }
    }

    fn chunk_size(&self) -> usize {
        self.tracks.len().div_ceil(CHUNKS).max(1)
    }

    fn evaluate(&self, state: &BaState<T>, with_jacobians: bool) -> Result<ChunkOut<T>> {
        let n_poses = state.poses.len();
        let chunk = self.chunk_size();
        let partials: Vec<Result<ChunkOut<T>>> = self
            .tracks
            .par_chunks(chunk)
            .zip(state.points.par_chunks(chunk))
            .map(|(tracks, points)| {
                let mut out = ChunkOut {
                    cost: T::zero(),
                    skipped: 0,
                    tracks: Vec::new(),
                    u: if with_jacobians { vec![Matrix6::zeros(); n_poses] } else { Vec::new() },
                    gp: if with_jacobians { vec![Vector6::zeros(); n_poses] } else { Vec::new() },
                };
                for (t, x) in tracks.iter().zip(points) {
                    let mut sys = TrackSystem { v: Matrix3::zeros(), gx: Vector3::zeros(), w: Vec::new() };
                    for o in &t.observations {
                        let (r, jp, jx) = match reprojection_jacobians(self.rig, o, &state.poses[o.pose_id], x) {
                            Ok(v) => v,
                            Err(Error::BehindCamera { .. }) => {
                                out.skipped += 1;
                                continue;
                            }
                            Err(e) => return Err(e),
                        };
                        out.cost += r.norm_squared();
                        if !with_jacobians {
                            continue;
                        }
                        out.u[o.pose_id] += jp.transpose() * jp;
                        out.gp[o.pose_id] -= jp.transpose() * r;
                        sys.v += jx.transpose() * jx;
                        sys.gx -= jx.transpose() * r;
                        let w = jp.transpose() * jx;
                        match sys.w.iter_mut().find(|(p, _)| *p == o.pose_id) {
                            Some((_, acc)) => *acc += w,
                            None => sys.w.push((o.pose_id, w)),
                        }
                    }
                    if with_jacobians {
                        out.tracks.push(sys);
                    }
                }
                Ok(out)
            })
            .collect();
        let mut total = ChunkOut {
            cost: T::zero(),
            skipped: 0,
            tracks: Vec::with_capacity(if with_jacobians { self.tracks.len() } else { 0 }),
            u: if with_jacobians { vec![Matrix6::zeros(); n_poses] } else { Vec::new() },
            gp: if with_jacobians { vec![Vector6::zeros(); n_poses] } else { Vec::new() },
        };
        for p in partials {
            let p = p?;
            total.cost += p.cost;
            total.skipped += p.skipped;
            total.tracks.extend(p.tracks);
            for (a, b) in total.u.iter_mut().zip(&p.u) {
                *a += b;
            }
            for (a, b) in total.gp.iter_mut().zip(&p.gp) {
                *a += b;
            }
        }
        Ok(total)
    }

    /// Damped Schur step; `None` if a point block or the reduced system is not positive definite.
    fn increment(&self, lin: &Linearization<T>, lambda: T) -> Result<Option<(DVector<T>, Vec<Vector3<T>>)>> {
        let damp = |d: T| if d == T::zero() { T::one() } else { d * (T::one() + lambda) };
        let n_poses = lin.u.len();
        let chunk = self.chunk_size();
        type Partial<T> = (Vec<Matrix6<T>>, Vec<Vector6<T>>, Vec<Matrix3<T>>);
        let partials: Vec<Option<Partial<T>>> = lin
            .tracks
            .par_chunks(chunk)
            .map(|tracks| {
                let mut blocks = vec![Matrix6::zeros(); self.layout.len()];
                let mut rhs = vec![Vector6::zeros(); n_poses];
                let mut inverses = Vec::with_capacity(tracks.len());
                for t in tracks {
                    let mut v = t.v;
                    for k in 0..3 {
                        v[(k, k)] = damp(v[(k, k)]);
                    }
                    let vinv = v.cholesky()?.inverse();
                    for (ka, (pa, wa)) in t.w.iter().enumerate() {
                        if *pa == 0 {
                            continue;
                        }
                        let wv = wa * vinv;
                        rhs[*pa] -= wv * t.gx;
                        for (pb, wb) in &t.w[ka..] {
                            if *pb == 0 {
                                continue;
                            }
                            let (lo, hi, blk) = if pa <= pb {
                                (*pa, *pb, wv * wb.transpose())
                            } else {
                                (*pb, *pa, wb * vinv * wa.transpose())
                            };
                            blocks[self.layout.slot(lo, hi)] -= blk;
                        }
                    }
                    inverses.push(vinv);
                }
                Some((blocks, rhs, inverses))
            })
            .collect();
        let mut blocks = vec![Matrix6::zeros(); self.layout.len()];
        let mut rhs = lin.gp.clone();
        let mut inverses = Vec::with_capacity(lin.tracks.len());
        for p in partials {
            let Some((b, r, inv)) = p else { return Ok(None) };
            for (a, x) in blocks.iter_mut().zip(&b) {
                *a += x;
            }
            for (a, x) in rhs.iter_mut().zip(&r) {
                *a += x;
            }
            inverses.extend(inv);
        }
        for (p, u) in lin.u.iter().enumerate() {
            let mut u = *u;
            for k in 0..6 {
                u[(k, k)] = damp(u[(k, k)]);
            }
            blocks[self.layout.slot(p, p)] += u;
        }
        let s = self.layout.assemble_free(&blocks);
        let Some(dp) = damped_solve(&s, &free_gradient(&rhs), T::zero()) else { return Ok(None) };
        let pose_delta = |p: usize| -> Vector6<T> {
            if p == 0 {
                Vector6::zeros()
            } else {
                dp.fixed_rows::<6>(6 * (p - 1)).into_owned()
            }
        };
        let dx = lin
            .tracks
            .iter()
            .zip(&inverses)
            .map(|(t, vinv)| {
                let mut r = t.gx;
                for (p, w) in &t.w {
                    r -= w.transpose() * pose_delta(*p);
                }
                vinv * r
            })
            .collect();
        Ok(Some((dp, dx)))
    }
}

impl<T: Real> LmModel<T> for BaModel<'_, T> {
    type State = BaState<T>;
    type System = Linearization<T>;

    fn linearize(&self, state: &Self::State) -> Result<(T, Self::System)> {
        let out = self.evaluate(state, true)?;
        Ok((out.cost, Linearization { tracks: out.tracks, u: out.u, gp: out.gp }))
    }

    fn cost(&self, state: &Self::State) -> Result<T> {
        Ok(self.evaluate(state, false)?.cost)
    }

    fn gradient_inf(&self, system: &Self::System) -> T {
        let pose = system.gp.iter().skip(1).map(|g| g.amax()).fold(T::zero(), |a, b| a.max(b));
        system.tracks.iter().map(|t| t.gx.amax()).fold(pose, |a, b| a.max(b))
    }

    fn trial(&self, state: &Self::State, system: &Self::System, lambda: T) -> Result<Option<Self::State>> {
        Ok(self.increment(system, lambda)?.map(|(dp, dx)| BaState {
            poses: apply_pose_step(&state.poses, &dp),
            points: state.points.iter().zip(&dx).map(|(x, d)| x + d).collect(),
        }))
    }
}

/// Bytes of the nonzero upper-triangle blocks of the joint pose+point normal
/// matrix: pose diagonal blocks, one 6×3 block per observing (pose, point)
/// pair and one 3×3 block per point.
pub fn baseline_hessian_bytes<'a, T: Real>(n_poses: usize, tracks: impl IntoIterator<Item = &'a Track<T>>) -> usize {
    let mut points = 0;
    let pose_point: usize = tracks
        .into_iter()
        .map(|t| {
            points += 1;
            let mut ids: Vec<usize> = t.observations.iter().map(|o| o.pose_id).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        })
        .sum();
    n_poses * POSE_BLOCK_BYTES + pose_point * POSE_POINT_BYTES + points * POINT_BYTES
}

/// One damped Schur-complement increment `(δposes, δpoints)` for all tracks
/// of `problem` at the given state. The pose increment covers poses `1..P`.
pub fn baseline_increment<T: Real>(
    problem: &Problem<T>,
    poses: &[Pose<T>],
    points: &[Vector3<T>],
    lambda: T,
) -> Result<Option<(DVector<T>, Vec<Vector3<T>>)>> {
    if points.len() != problem.tracks.len() || poses.len() != problem.poses.len() {
        return Err(Error::InvalidInput("state does not match problem".into()));
    }
    let model = BaModel::new(&problem.rig, problem.tracks.iter().collect(), poses.len());
    let state = BaState { poses: poses.to_vec(), points: points.to_vec() };
    let (_, lin) = model.linearize(&state)?;
    model.increment(&lin, lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSolution<T: Real> {
    pub poses: Vec<Pose<T>>,
    /// Per problem track; `None` where initial triangulation failed.
    pub points: Vec<Option<Vector3<T>>>,
    pub report: SolveReport,
}

/// Joint pose+point Levenberg–Marquardt on pixel reprojection errors, with
/// points initialized by geometric triangulation at the initial poses.
pub fn baseline_ba_solve<T: Real>(problem: &Problem<T>) -> Result<BaselineSolution<T>> {
    problem.validate()?;
    let init: Vec<Option<Vector3<T>>> = problem
        .tracks
        .par_iter()
        .map(|t| {
            let rays: Vec<_> = t.observations.iter().map(|o| (o, &problem.poses[o.pose_id])).collect();
            triangulate_midpoint(&rays).ok()
        })
        .collect();
    let active: Vec<usize> = (0..problem.tracks.len()).filter(|&k| init[k].is_some()).collect();
    if active.is_empty() {
        return Err(Error::EmptyProblem);
    }
    let tracks: Vec<&Track<T>> = active.iter().map(|&k| &problem.tracks[k]).collect();
    let p = problem.poses.len();
    let model = BaModel::new(&problem.rig, tracks, p);
    let state = BaState { poses: problem.poses.clone(), points: active.iter().map(|&k| init[k].unwrap()).collect() };
    let out = run_lm(&model, state, &problem.settings)?;
    let skipped_terms = model.evaluate(&out.state, false)?.skipped;
    let mut points = vec![None; problem.tracks.len()];
    for (&k, x) in active.iter().zip(&out.state.points) {
        points[k] = Some(*x);
    }
    let report = SolveReport {
        iterations: out.iterations,
        initial_cost: out.initial_cost,
        final_cost: out.final_cost,
        accepted_steps: out.accepted_steps,
        wall_time: out.wall_time,
        hessian_bytes: baseline_hessian_bytes(p, model.tracks.iter().copied()),
        dense_hessian_bytes: 36 * p * p * 8,
        skipped_terms,
        dropped_tracks: problem.tracks.len() - active.len(),
        termination: out.termination,
        trace: out.trace,
    };
    Ok(BaselineSolution { poses: out.state.poses, points, report })
}
