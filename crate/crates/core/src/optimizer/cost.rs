//! Pose-only cost and normal equations.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use rayon::prelude::*;

use super::{Mode, Problem};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::pose_only::{BaseContext, Family, PoseBlocks};
use crate::scalar::Real;
use crate::track::Track;

/// Fixed number of partial accumulators; reduction order is independent of
/// the thread count, so results are bit-reproducible.
pub(crate) const CHUNKS: usize = 8;

/// Bytes of one stored 6×6 block.
pub const POSE_BLOCK_BYTES: usize = 36 * 8;

/// Upper-triangle block layout of a pose-indexed symmetric matrix.
#[derive(Debug, Clone)]
pub(crate) struct BlockLayout {
    n_poses: usize,
    slots: Vec<u32>,
    pairs: Vec<(usize, usize)>,
}

impl BlockLayout {
    pub(crate) fn new(n_poses: usize) -> Self {
        Self { n_poses, slots: vec![u32::MAX; n_poses * n_poses], pairs: Vec::new() }
    }

    pub(crate) fn insert(&mut self, a: usize, b: usize) {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let idx = a * self.n_poses + b;
        if self.slots[idx] == u32::MAX {
            self.slots[idx] = self.pairs.len() as u32;
            self.pairs.push((a, b));
        }
    }

    /// Slot of the block `(a, b)` with `a ≤ b`.
    #[inline]
    pub(crate) fn slot(&self, a: usize, b: usize) -> usize {
        let s = self.slots[a * self.n_poses + b];
        debug_assert!(s != u32::MAX, "pose pair ({a}, {b}) missing from layout");
        s as usize
    }

    pub(crate) fn len(&self) -> usize {
        self.pairs.len()
    }

    pub(crate) fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Dense `6(P−1)` system over the non-gauge poses. Diagonal entries that
    /// are exactly zero (unconstrained parameters) are set to one.
    pub(crate) fn assemble_free<T: Real>(&self, blocks: &[Matrix6<T>]) -> DMatrix<T> {
        let n = 6 * (self.n_poses - 1);
        let mut h = DMatrix::zeros(n, n);
        for (&(a, b), blk) in self.pairs.iter().zip(blocks) {
            if a == 0 {
                continue;
            }
            let (ra, rb) = (6 * (a - 1), 6 * (b - 1));
            h.view_mut((ra, rb), (6, 6)).copy_from(blk);
            if a != b {
                h.view_mut((rb, ra), (6, 6)).copy_from(&blk.transpose());
            }
        }
        for k in 0..n {
            if h[(k, k)] == T::zero() {
                h[(k, k)] = T::one();
            }
        }
        h
    }
}

pub(crate) fn families(mode: Mode) -> &'static [Family] {
    match mode {
        Mode::Mcpalr => &[Family::Left, Family::Right],
        _ => &[Family::Left],
    }
}

fn roles(track: &Track<impl Real>, family: Family, k: usize) -> Result<(usize, usize)> {
    let b = track.base.ok_or(Error::MissingBases(k))?;
    Ok(match family {
        Family::Left => (b.left, b.right),
        Family::Right => (b.right, b.left),
    })
}

/// Block layout touched by the pose-only residuals of `problem`.
pub(crate) fn pose_only_layout<T: Real>(problem: &Problem<T>) -> Result<BlockLayout> {
    let mut layout = BlockLayout::new(problem.poses.len());
    for (k, t) in problem.tracks.iter().enumerate() {
        for &fam in families(problem.mode) {
            let (p, s) = roles(t, fam, k)?;
            let (pp, ps) = (t.observations[p].pose_id, t.observations[s].pose_id);
            layout.insert(pp, pp);
            layout.insert(ps, ps);
            layout.insert(pp, ps);
            for (i, o) in t.observations.iter().enumerate() {
                if i == p {
                    continue;
                }
                layout.insert(o.pose_id, o.pose_id);
                layout.insert(o.pose_id, pp);
                layout.insert(o.pose_id, ps);
            }
        }
    }
    Ok(layout)
}

/// Bytes of the nonzero upper-triangle blocks of the pose-only normal matrix.
pub fn pose_only_hessian_bytes<T: Real>(problem: &Problem<T>) -> Result<usize> {
    Ok(pose_only_layout(problem)?.len() * POSE_BLOCK_BYTES)
}

/// Total cost and the number of residual terms skipped because their base
/// pair was degenerate at the evaluated poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSummary<T: Real> {
    pub cost: T,
    pub skipped: usize,
}

pub(crate) struct Accumulator<T: Real> {
    pub cost: T,
    pub skipped: usize,
    pub blocks: Vec<Matrix6<T>>,
    pub gradient: Vec<Vector6<T>>,
}

impl<T: Real> Accumulator<T> {
    fn new(layout: Option<&BlockLayout>, n_poses: usize) -> Self {
        let (nb, ng) = layout.map_or((0, 0), |l| (l.len(), n_poses));
        Self { cost: T::zero(), skipped: 0, blocks: vec![Matrix6::zeros(); nb], gradient: vec![Vector6::zeros(); ng] }
    }

    fn merge(&mut self, other: &Self) {
        self.cost += other.cost;
        self.skipped += other.skipped;
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a += b;
        }
        for (a, b) in self.gradient.iter_mut().zip(&other.gradient) {
            *a += b;
        }
    }

    fn add_jacobians(&mut self, layout: &BlockLayout, e: &Vector3<T>, blocks: &PoseBlocks<T>) {
        let items = blocks.as_slice();
        for (ka, (pa, ja)) in items.iter().enumerate() {
            self.gradient[*pa] -= ja.transpose() * e;
            for (pb, jb) in &items[ka..] {
                let (lo, jlo, hi, jhi) = if pa <= pb { (*pa, ja, *pb, jb) } else { (*pb, jb, *pa, ja) };
                let blk: Matrix6<T> = jlo.transpose() * jhi;
                // pose blocks are merged per pose, so lo == hi only on the diagonal
                self.blocks[layout.slot(lo, hi)] += blk;
            }
        }
    }
}

fn pose<'a, T: Real>(poses: &'a [Pose<T>], id: usize) -> &'a Pose<T> {
    &poses[id]
}

fn accumulate_track<T: Real>(
    acc: &mut Accumulator<T>,
    track: &Track<T>,
    k: usize,
    mode: Mode,
    poses: &[Pose<T>],
    layout: Option<&BlockLayout>,
) -> Result<()> {
    let obs = &track.observations;
    for &fam in families(mode) {
        let (p, s) = roles(track, fam, k)?;
        let (primary, secondary) = (&obs[p], &obs[s]);
        let ctx = match BaseContext::new(
            primary,
            secondary,
            pose(poses, primary.pose_id),
            pose(poses, secondary.pose_id),
        ) {
            Ok(c) => c,
            Err(Error::DegenerateParallax(_)) => {
                acc.skipped += obs.len() - 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        match layout {
            None => {
                for (i, target) in obs.iter().enumerate() {
                    if i == p {
                        continue;
                    }
                    let pi = target.pose_id;
                    if pi == primary.pose_id || pi == secondary.pose_id {
                        let (e, _, _) = ctx.evaluate(target, pose(poses, pi), false);
                        acc.cost += e.norm_squared();
                    } else {
                        let (rt, rt_t) = frame(pose(poses, pi));
                        acc.cost += ctx.rotated(target, &rt, &rt_t).cost();
                    }
                }
            }
            Some(layout) => linearize_family(acc, layout, &ctx, obs, p, primary.pose_id, secondary.pose_id, poses),
        }
    }
    Ok(())
}

/// Adds `block = J_aᵀ·J_b` to the stored upper-triangle block of `(a, b)`.
#[inline]
fn add_oriented<T: Real>(blocks: &mut [Matrix6<T>], layout: &BlockLayout, a: usize, b: usize, block: Matrix6<T>) {
    if a <= b {
        blocks[layout.slot(a, b)] += block;
    } else {
        blocks[layout.slot(b, a)] += block.transpose();
    }
}

/// `R_iᵀ` and `R_iᵀ·t_i`.
fn frame<T: Real>(pose: &Pose<T>) -> (Matrix3<T>, Vector3<T>) {
    let rt = pose.rotation.matrix().transpose();
    let rt_t = rt * pose.translation;
    (rt, rt_t)
}

/// Sums over residuals of one track family, in the `R_iᵀ`-rotated frame of
/// each residual. With `P = (I − Ŷ'Ŷ'ᵀ)/‖Y‖²` the Gram matrix of the residual
/// Jacobian with respect to `Y'`, and `m = −(I − Ŷ'Ŷ'ᵀ)·f'/‖Y‖` the pullback
/// of the residual:
#[derive(Clone, Copy)]
struct Sums<T: Real> {
    /// `Σ P`
    s: Matrix3<T>,
    /// `Σ P·q'`
    vq: Vector3<T>,
    /// `Σ m`
    r: Vector3<T>,
}

impl<T: Real> Sums<T> {
    fn zero() -> Self {
        Self { s: Matrix3::zeros(), vq: Vector3::zeros(), r: Vector3::zeros() }
    }

    fn add(&mut self, o: &Self) {
        self.s += o.s;
        self.vq += o.vq;
        self.r += o.r;
    }
}

/// Accumulates one track family. Residuals on a base pose go through the
/// full 3-row Jacobians. For all others the Jacobians factor as
/// `J_i = W·Cᵢ`, `J_p = W·(F − q'·a₂)`, `J_s = W·(d·a₁ + q'·a₂)` with
/// `W = Nᵀ·R_i/‖Y‖` and `WᵀW = P`, so only `P`-weighted sums are gathered per
/// residual and the 6×6 blocks are formed once per run of residuals sharing a
/// pose (target blocks) or once per track (base blocks).
#[allow(clippy::too_many_arguments)]
fn linearize_family<T: Real>(
    acc: &mut Accumulator<T>,
    layout: &BlockLayout,
    ctx: &BaseContext<T>,
    obs: &[crate::gcm::ObservationRay<T>],
    p: usize,
    pp: usize,
    ps: usize,
    poses: &[Pose<T>],
) {
    let (a1, a2) = ctx.secondary_rows();
    let d = *ctx.dir_world();
    let f_p = ctx.primary_factor();
    let distinct = pp != ps;

    let mut total = Sums::zero();
    let (mut sqq, mut sqe) = (T::zero(), T::zero());
    let mut run = Sums::zero();
    let mut run_pose = usize::MAX;
    let (mut run_rt, mut run_rt_t) = (Matrix3::zeros(), Vector3::zeros());
    let flush = |acc: &mut Accumulator<T>, run: &Sums<T>, pi: usize, rt: &Matrix3<T>| {
        let c = ctx.target_factor(rt);
        let ct = c.transpose();
        let h_ii = ct * (run.s * c);
        acc.blocks[layout.slot(pi, pi)] += h_ii;
        acc.gradient[pi] -= ct * run.r;
        let sd = run.s * d;
        let h_ip = ct * (run.s * f_p - run.vq * a2);
        add_oriented(&mut acc.blocks, layout, pi, pp, h_ip);
        if distinct {
            let u1 = ct * sd;
            let u2 = ct * run.vq;
            add_oriented(&mut acc.blocks, layout, pi, ps, u1 * a1 + u2 * a2);
        }
    };

    for (i, target) in obs.iter().enumerate() {
        if i == p {
            continue;
        }
        let pi = target.pose_id;
        if pi == pp || pi == ps {
            let (e, _, jacs) = ctx.evaluate(target, pose(poses, pi), true);
            acc.cost += e.norm_squared();
            let [ji, jp, js] = jacs.expect("jacobians requested");
            acc.add_jacobians(layout, &e, &PoseBlocks::from_roles([(pi, ji), (pp, jp), (ps, js)]));
            continue;
        }
        if pi != run_pose {
            if run_pose != usize::MAX {
                flush(acc, &run, run_pose, &run_rt);
                total.add(&run);
            }
            run = Sums::zero();
            run_pose = pi;
            (run_rt, run_rt_t) = frame(pose(poses, pi));
        }
        let t = ctx.rotated(target, &run_rt, &run_rt_t);
        acc.cost += t.cost();
        let k = t.inv_norm * t.inv_norm;
        let y = t.y_hat;
        let pq = (t.q - y * y.dot(&t.q)) * k;
        let m = (y * y.dot(&t.f) - t.f) * t.inv_norm;
        run.s += (Matrix3::identity() - y * y.transpose()) * k;
        run.vq += pq;
        run.r += m;
        sqq += t.q.dot(&pq);
        sqe += t.q.dot(&m);
    }
    if run_pose != usize::MAX {
        flush(acc, &run, run_pose, &run_rt);
        total.add(&run);
    }

    // J_p = W·(F − q'·a₂) summed over all projected residuals
    let sf = total.s * f_p;
    let a2t = a2.transpose();
    let vq_f = f_p.tr_mul(&total.vq);
    let mut h_pp = f_p.tr_mul(&sf) - vq_f * a2 + a2t * a2 * sqq;
    h_pp -= a2t * vq_f.transpose();
    acc.blocks[layout.slot(pp, pp)] += h_pp;
    acc.gradient[pp] -= f_p.tr_mul(&total.r) - a2t * sqe;
    if distinct {
        let sd = total.s * d;
        let (sgg, sgq, sge) = (d.dot(&sd), d.dot(&total.vq), d.dot(&total.r));
        // Σ J_pᵀ·ĝ and Σ J_pᵀ·q̂, with ĝ = W·d and q̂ = W·q'
        let p1 = f_p.tr_mul(&sd) - a2t * sgq;
        let p2 = vq_f - a2t * sqq;
        add_oriented(&mut acc.blocks, layout, pp, ps, p1 * a1 + p2 * a2);
        let a1t = a1.transpose();
        let cross = a1t * a2;
        acc.blocks[layout.slot(ps, ps)] += a1t * a1 * sgg + (cross + cross.transpose()) * sgq + a2t * a2 * sqq;
        acc.gradient[ps] -= a1t * sge + a2t * sqe;
    }
}

pub(crate) fn accumulate<T: Real>(
    problem: &Problem<T>,
    poses: &[Pose<T>],
    layout: Option<&BlockLayout>,
) -> Result<Accumulator<T>> {
    let n = problem.tracks.len();
    let chunk = n.div_ceil(CHUNKS).max(1);
    let partials: Vec<Result<Accumulator<T>>> = problem
        .tracks
        .par_chunks(chunk)
        .enumerate()
        .map(|(c, tracks)| {
            let mut acc = Accumulator::new(layout, poses.len());
            for (j, t) in tracks.iter().enumerate() {
                accumulate_track(&mut acc, t, c * chunk + j, problem.mode, poses, layout)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(layout, poses.len());
    for p in partials {
        total.merge(&p?);
    }
    Ok(total)
}

/// Cost of the problem's mode at arbitrary poses.
pub fn cost_at<T: Real>(problem: &Problem<T>, poses: &[Pose<T>]) -> Result<CostSummary<T>> {
    if poses.len() != problem.poses.len() {
        return Err(Error::InvalidInput("pose count mismatch".into()));
    }
    let acc = accumulate(problem, poses, None)?;
    Ok(CostSummary { cost: acc.cost, skipped: acc.skipped })
}

/// Sum of squared pose-only residuals at the problem's current poses.
pub fn build_cost<T: Real>(problem: &Problem<T>) -> Result<T> {
    cost_at(problem, &problem.poses).map(|c| c.cost)
}

/// Gauss–Newton system over all `6P` parameters; the gauge pose's rows and
/// columns are replaced by identity and zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations<T: Real> {
    pub h: DMatrix<T>,
    pub g: DVector<T>,
    pub cost: T,
    /// Bytes of the nonzero upper-triangle blocks.
    pub hessian_bytes: usize,
    /// Bytes of a dense `6P × 6P` matrix.
    pub dense_bytes: usize,
}

pub fn build_normal_equations<T: Real>(problem: &Problem<T>) -> Result<NormalEquations<T>> {
    let layout = pose_only_layout(problem)?;
    let acc = accumulate(problem, &problem.poses, Some(&layout))?;
    let p = problem.poses.len();
    let mut h = DMatrix::zeros(6 * p, 6 * p);
    let mut g = DVector::zeros(6 * p);
    for (&(a, b), blk) in layout.pairs().iter().zip(&acc.blocks) {
        if a == 0 {
            continue;
        }
        h.view_mut((6 * a, 6 * b), (6, 6)).copy_from(blk);
        h.view_mut((6 * b, 6 * a), (6, 6)).copy_from(&blk.transpose());
    }
    for (k, gk) in acc.gradient.iter().enumerate().skip(1) {
        g.rows_mut(6 * k, 6).copy_from(gk);
    }
    h.view_mut((0, 0), (6, 6)).fill_with_identity();
    Ok(NormalEquations {
        h,
        g,
        cost: acc.cost,
        hessian_bytes: layout.len() * POSE_BLOCK_BYTES,
        dense_bytes: 36 * p * p * 8,
    })
}

/// Copies a free-pose gradient into a dense vector.
pub(crate) fn free_gradient<T: Real>(gradient: &[Vector6<T>]) -> DVector<T> {
    let mut g = DVector::zeros(6 * gradient.len().saturating_sub(1));
    for (k, gk) in gradient.iter().enumerate().skip(1) {
        g.rows_mut(6 * (k - 1), 6).copy_from(gk);
    }
    g
}

/// Solves `(H + λ·diag H)·δ = g` by Cholesky.
pub(crate) fn damped_solve<T: Real>(h: &DMatrix<T>, g: &DVector<T>, lambda: T) -> Option<DVector<T>> {
    let mut a = h.clone();
    for k in 0..a.nrows() {
        a[(k, k)] *= T::one() + lambda;
    }
    let chol = a.cholesky()?;
    let d = chol.solve(g);
    d.iter().all(|x| x.is_finite()).then_some(d)
}
