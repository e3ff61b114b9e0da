//! Multi-camera pose-only constraint.
//!
//! A track's point is represented implicitly by a *primary* and a *secondary*
//! base observation. The primary's depth follows from the two base rays and
//! their poses,
//!
//! ```text
//! s_p = λ / θ,   λ = ‖[f_s]×(v_s − R_ps·v_p − t_ps)‖,   θ = ‖[f_s]×·R_ps·f_p‖
//! ```
//!
//! and every other observation `i` is predicted (up to the positive factor
//! `θ·s_i`) by
//!
//! ```text
//! Y_i = λ·R_pi·f_p + θ·(R_pi·v_p + t_pi − v_i)
//! ```
//!
//! The residual is the spherical error `Y_i/‖Y_i‖ − f̂_i`. The *left* family uses
//! the left base as primary, the *right* family the right base.
//!
//! Pose Jacobians are with respect to a right perturbation `(φ, δt)` of each
//! pose. The primary-pose block is never differentiated directly; it follows
//! from the other two:
//!
//! ```text
//! ∂Y/∂φ_p = −∂Y/∂φ_s − ∂Y/∂φ_i
//! ∂Y/∂t_p = −∂Y/∂t_s·R_ps − θ·R_pi
//! ```

use nalgebra::{Matrix3, Matrix3x6, RowVector3, RowVector6, Vector3};

use crate::error::{Error, Result};
use crate::gcm::ObservationRay;
use crate::geometry::{skew, Pose, Rotation};
use crate::scalar::{lit, to_f64, Real};
use crate::track::Track;

/// Base rays with `θ` below this are treated as parallel.
pub const DEGENERATE_THETA: f64 = 1e-10;

/// Depth of a base observation and the two norms it is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleResult<T: Real> {
    pub s: T,
    pub lambda: T,
    pub theta: T,
}

/// Which base observation drives the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Left,
    Right,
}

/// Relative transform `a → b`: `R_ab = R_b·R_aᵀ`, `t_ab = t_b − R_ab·t_a`.
pub fn relative_pose<T: Real>(a: &Pose<T>, b: &Pose<T>) -> (Rotation<T>, Vector3<T>) {
    let r = b.rotation.compose(&a.rotation.transpose());
    let t = b.translation - r.rotate(&a.translation);
    (r, t)
}

/// Relative transform between the poses of two observations; exactly `(I, 0)`
/// when both come from the same rig pose.
fn base_relative<T: Real>(
    primary: &ObservationRay<T>,
    secondary: &ObservationRay<T>,
    pose_p: &Pose<T>,
    pose_s: &Pose<T>,
) -> (Rotation<T>, Vector3<T>) {
    if primary.pose_id == secondary.pose_id {
        (Rotation::identity(), Vector3::zeros())
    } else {
        relative_pose(pose_p, pose_s)
    }
}

/// Depth of `primary` given the relative transform `(r_ps, t_ps)` to `secondary`.
pub fn scale_with_relative<T: Real>(
    primary: &ObservationRay<T>,
    secondary: &ObservationRay<T>,
    r_ps: &Rotation<T>,
    t_ps: &Vector3<T>,
) -> Result<ScaleResult<T>> {
    let fs = skew(&secondary.f);
    let lambda = (fs * (secondary.v - r_ps.rotate(&primary.v) - t_ps)).norm();
    let theta = (fs * r_ps.rotate(&primary.f)).norm();
    if theta < lit(DEGENERATE_THETA) {
        return Err(Error::DegenerateParallax(to_f64(theta)));
    }
    Ok(ScaleResult { s: lambda / theta, lambda, theta })
}

/// Depth of the left base observation.
pub fn scale_left<T: Real>(
    obs_l: &ObservationRay<T>,
    obs_r: &ObservationRay<T>,
    pose_l: &Pose<T>,
    pose_r: &Pose<T>,
) -> Result<ScaleResult<T>> {
    let (r, t) = base_relative(obs_l, obs_r, pose_l, pose_r);
    scale_with_relative(obs_l, obs_r, &r, &t)
}

/// Depth of the right base observation.
pub fn scale_right<T: Real>(
    obs_l: &ObservationRay<T>,
    obs_r: &ObservationRay<T>,
    pose_l: &Pose<T>,
    pose_r: &Pose<T>,
) -> Result<ScaleResult<T>> {
    scale_left(obs_r, obs_l, pose_r, pose_l)
}

/// Signed depths `(s_p, s_s)` along both base rays. Both are positive when
/// the implied point lies in front of both rays.
pub fn signed_depths<T: Real>(
    primary: &ObservationRay<T>,
    secondary: &ObservationRay<T>,
    pose_p: &Pose<T>,
    pose_s: &Pose<T>,
) -> Result<(T, T)> {
    let (r, t) = base_relative(primary, secondary, pose_p, pose_s);
    let fs = skew(&secondary.f);
    let a = r.rotate(&primary.v) + t - secondary.v;
    let b = r.rotate(&primary.f);
    let u = fs * a;
    let w = fs * b;
    let theta2 = w.norm_squared();
    if theta2.sqrt() < lit(DEGENERATE_THETA) {
        return Err(Error::DegenerateParallax(to_f64(theta2.sqrt())));
    }
    let sp = -w.dot(&u) / theta2;
    let ss = secondary.f.dot(&(b * sp + a));
    Ok((sp, ss))
}

/// World point `R_lᵀ(s_l·f_l + v_l − t_l)` on the left base ray.
pub fn reconstruct_from_base<T: Real>(obs_l: &ObservationRay<T>, pose_l: &Pose<T>, s_l: T) -> Vector3<T> {
    pose_l.rotation.transpose().rotate(&(obs_l.f * s_l + obs_l.v - pose_l.translation))
}

/// Residual of one observation, with optional pose Jacobians.
///
/// `jac_l`/`jac_r` always refer to the track's left/right base poses,
/// whichever of them is the primary.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T: Real> {
    pub e: Vector3<T>,
    pub y: Vector3<T>,
    pub jac_i: Option<Matrix3x6<T>>,
    pub jac_l: Option<Matrix3x6<T>>,
    pub jac_r: Option<Matrix3x6<T>>,
    pub pose_i: usize,
    pub pose_l: usize,
    pub pose_r: usize,
}

/// Jacobian blocks merged per distinct pose.
#[derive(Debug, Clone, Copy)]
pub struct PoseBlocks<T: Real> {
    items: [(usize, Matrix3x6<T>); 3],
    len: usize,
}

impl<T: Real> PoseBlocks<T> {
    pub(crate) fn from_roles(roles: [(usize, Matrix3x6<T>); 3]) -> Self {
        let mut items = [(usize::MAX, Matrix3x6::zeros()); 3];
        let mut len = 0;
        for (pose, jac) in roles {
            match items[..len].iter_mut().find(|(p, _)| *p == pose) {
                Some((_, acc)) => *acc += jac,
                None => {
                    items[len] = (pose, jac);
                    len += 1;
                }
            }
        }
        Self { items, len }
    }

    pub fn as_slice(&self) -> &[(usize, Matrix3x6<T>)] {
        &self.items[..self.len]
    }
}

impl<T: Real> ResidualBlock<T> {
    /// Jacobian blocks with roles sharing a pose summed together.
    pub fn pose_blocks(&self) -> Option<PoseBlocks<T>> {
        Some(PoseBlocks::from_roles([
            (self.pose_i, self.jac_i?),
            (self.pose_l, self.jac_l?),
            (self.pose_r, self.jac_r?),
        ]))
    }
}

/// Quantities shared by every residual of one track family: the primary's
/// world-frame direction and vertex, `λ`, `θ`, and their secondary-pose partials.
#[derive(Debug, Clone, Copy)]
pub struct BaseContext<T: Real> {
    pub scale: ScaleResult<T>,
    /// `R_pᵀ·f_p`
    dir_world: Vector3<T>,
    /// `R_pᵀ·(v_p − t_p)`
    vertex_world: Vector3<T>,
    /// `∂λ/∂t_s`, `∂λ/∂φ_s`, `∂θ/∂φ_s` (zero when both bases share a pose).
    dlambda_dt_s: RowVector3<T>,
    dlambda_dphi_s: RowVector3<T>,
    dtheta_dphi_s: RowVector3<T>,
    /// `∂λ/∂t_s·R_ps`
    dlambda_dt_s_rps: RowVector3<T>,
    /// `λ[d]× + θ[pw]×`, so that `∂Y/∂φ_i = −R_i·mixed`.
    mixed: Matrix3<T>,
    rp_t: Matrix3<T>,
}

/// Residual of an observation off both base poses, expressed in the frame
/// rotated by `R_iᵀ` (norms and inner products are unchanged).
#[derive(Debug, Clone, Copy)]
pub(crate) struct RotatedTerm<T: Real> {
    /// `Ŷ' = R_iᵀ·Y / ‖Y‖`
    pub y_hat: Vector3<T>,
    /// `1/‖Y‖`
    pub inv_norm: T,
    /// `R_iᵀ·q`
    pub q: Vector3<T>,
    /// `R_iᵀ·f̂_i`
    pub f: Vector3<T>,
}

impl<T: Real> RotatedTerm<T> {
    pub fn cost(&self) -> T {
        (self.y_hat - self.f).norm_squared()
    }
}

impl<T: Real> BaseContext<T> {
    pub fn new(
        primary: &ObservationRay<T>,
        secondary: &ObservationRay<T>,
        pose_p: &Pose<T>,
        pose_s: &Pose<T>,
    ) -> Result<Self> {
        let (r_ps, t_ps) = base_relative(primary, secondary, pose_p, pose_s);
        let scale = scale_with_relative(primary, secondary, &r_ps, &t_ps)?;
        let rp_t = pose_p.rotation.transpose();
        let dir_world = rp_t.rotate(&primary.f);
        let vertex_world = rp_t.rotate(&(primary.v - pose_p.translation));

        let zero = RowVector3::zeros();
        let (mut dlambda_dt_s, mut dlambda_dphi_s, mut dtheta_dphi_s) = (zero, zero, zero);
        if primary.pose_id != secondary.pose_id {
            let fs = skew(&secondary.f);
            let a = r_ps.rotate(&primary.v) + t_ps - secondary.v;
            let b = r_ps.rotate(&primary.f);
            // ∂‖[f]×x‖/∂x = −[f]×[f]×x / ‖[f]×x‖
            if scale.lambda > T::zero() {
                dlambda_dt_s = (-(fs * (fs * a)) / scale.lambda).transpose();
            }
            let dtheta_db: RowVector3<T> = (-(fs * (fs * b)) / scale.theta).transpose();
            let rs = pose_s.rotation.matrix();
            dlambda_dphi_s = -dlambda_dt_s * rs * skew(&vertex_world);
            dtheta_dphi_s = -dtheta_db * rs * skew(&dir_world);
        }
        let mixed = skew(&dir_world) * scale.lambda + skew(&vertex_world) * scale.theta;
        Ok(Self {
            scale,
            dir_world,
            vertex_world,
            dlambda_dt_s,
            dlambda_dphi_s,
            dtheta_dphi_s,
            dlambda_dt_s_rps: dlambda_dt_s * r_ps.matrix(),
            mixed,
            rp_t: *rp_t.matrix(),
        })
    }

    /// Rows `a₁ = ∂λ/∂(φ_s, t_s)` and `a₂ = ∂θ/∂(φ_s, t_s)`.
    pub fn secondary_rows(&self) -> (RowVector6<T>, RowVector6<T>) {
        let mut a1 = RowVector6::zeros();
        let mut a2 = RowVector6::zeros();
        a1.fixed_columns_mut::<3>(0).copy_from(&self.dlambda_dphi_s);
        a1.fixed_columns_mut::<3>(3).copy_from(&self.dlambda_dt_s);
        a2.fixed_columns_mut::<3>(0).copy_from(&self.dtheta_dphi_s);
        (a1, a2)
    }

    /// `g = R_i·d` and `q = R_i·pw + t_i − v_i`, i.e. `R_pi·f_p` and `R_pi·v_p + t_pi − v_i`.
    #[inline]
    fn predict(&self, target: &ObservationRay<T>, pose_i: &Pose<T>) -> (Vector3<T>, Vector3<T>) {
        let ri = pose_i.rotation.matrix();
        (ri * self.dir_world, ri * self.vertex_world + pose_i.translation - target.v)
    }

    /// Residual of `target` at a pose with `R_iᵀ = rt` and `R_iᵀ·t_i = rt_t`.
    #[inline]
    pub(crate) fn rotated(&self, target: &ObservationRay<T>, rt: &Matrix3<T>, rt_t: &Vector3<T>) -> RotatedTerm<T> {
        let ScaleResult { lambda, theta, .. } = self.scale;
        let q = self.vertex_world + rt_t - rt * target.v;
        let y = self.dir_world * lambda + q * theta;
        let inv_norm = T::one() / y.norm();
        RotatedTerm { y_hat: y * inv_norm, inv_norm, q, f: rt * target.f }
    }

    /// `R_pᵀ·f_p`
    pub(crate) fn dir_world(&self) -> &Vector3<T> {
        &self.dir_world
    }

    /// `Cᵢ` with `∂Y/∂xᵢ = R_i·Cᵢ`, i.e. `[−mixed | θ·R_iᵀ]`.
    pub(crate) fn target_factor(&self, rt: &Matrix3<T>) -> Matrix3x6<T> {
        let mut c = Matrix3x6::zeros();
        c.fixed_columns_mut::<3>(0).copy_from(&(-self.mixed));
        c.fixed_columns_mut::<3>(3).copy_from(&(rt * self.scale.theta));
        c
    }

    /// `F` with `∂Y/∂x_p = R_i·(F − q'·a₂)`, where `q' = R_iᵀ·q`.
    pub(crate) fn primary_factor(&self) -> Matrix3x6<T> {
        let d = self.dir_world;
        let mut f = Matrix3x6::zeros();
        f.fixed_columns_mut::<3>(0).copy_from(&(self.mixed - d * self.dlambda_dphi_s));
        f.fixed_columns_mut::<3>(3).copy_from(&(-(d * self.dlambda_dt_s_rps) - self.rp_t * self.scale.theta));
        f
    }

    /// Prediction `Y`, residual `e` and, if requested, the (i, primary,
    /// secondary) pose blocks for observation `target` at `pose_i`.
    #[allow(clippy::type_complexity)]
    pub fn evaluate(
        &self,
        target: &ObservationRay<T>,
        pose_i: &Pose<T>,
        with_jacobians: bool,
    ) -> (Vector3<T>, Vector3<T>, Option<[Matrix3x6<T>; 3]>) {
        let ScaleResult { lambda, theta, .. } = self.scale;
        let (g, q) = self.predict(target, pose_i);
        let y = g * lambda + q * theta;
        let norm = y.norm();
        let e = y / norm - target.f;
        if !with_jacobians {
            return (e, y, None);
        }

        let de_dy = (Matrix3::identity() - y * y.transpose() / (norm * norm)) / norm;

        let ri = pose_i.rotation.matrix();
        let dy_dphi_i = -(ri * self.mixed);
        let dy_dt_i = Matrix3::identity() * theta;
        let dy_dphi_s = g * self.dlambda_dphi_s + q * self.dtheta_dphi_s;
        let dy_dt_s = g * self.dlambda_dt_s;
        let dy_dphi_p = -dy_dphi_s - dy_dphi_i;
        let dy_dt_p = -(g * self.dlambda_dt_s_rps) - ri * self.rp_t * theta;

        let block = |dphi: Matrix3<T>, dt: Matrix3<T>| {
            let mut j = Matrix3x6::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(de_dy * dphi));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(de_dy * dt));
            j
        };
        let jacs = [block(dy_dphi_i, dy_dt_i), block(dy_dphi_p, dy_dt_p), block(dy_dphi_s, dy_dt_s)];
        (e, y, Some(jacs))
    }
}

fn residual_impl<T: Real>(
    track: &Track<T>,
    i: usize,
    poses: &[Pose<T>],
    family: Family,
    with_jacobians: bool,
) -> Result<ResidualBlock<T>> {
    let base = track.base.ok_or(Error::MissingBases(0))?;
    let (p_idx, s_idx) = match family {
        Family::Left => (base.left, base.right),
        Family::Right => (base.right, base.left),
    };
    if i == p_idx {
        return Err(Error::InvalidInput(format!("observation {i} is the primary base of this family")));
    }
    let obs = &track.observations;
    let target = obs.get(i).ok_or_else(|| Error::InvalidInput(format!("observation {i} out of range")))?;
    let pose = |o: &ObservationRay<T>| {
        poses.get(o.pose_id).ok_or_else(|| Error::InvalidInput(format!("pose {} out of range", o.pose_id)))
    };
    let (primary, secondary) = (&obs[p_idx], &obs[s_idx]);
    let ctx = BaseContext::new(primary, secondary, pose(primary)?, pose(secondary)?)?;
    let (e, y, jacs) = ctx.evaluate(target, pose(target)?, with_jacobians);
    let (jac_i, jac_l, jac_r) = match (jacs, family) {
        (None, _) => (None, None, None),
        (Some([ji, jp, js]), Family::Left) => (Some(ji), Some(jp), Some(js)),
        (Some([ji, jp, js]), Family::Right) => (Some(ji), Some(js), Some(jp)),
    };
    Ok(ResidualBlock {
        e,
        y,
        jac_i,
        jac_l,
        jac_r,
        pose_i: target.pose_id,
        pose_l: obs[base.left].pose_id,
        pose_r: obs[base.right].pose_id,
    })
}

/// Residual of observation `i` predicted from the left base (`i ≠ l`).
pub fn residual_left<T: Real>(track: &Track<T>, i: usize, poses: &[Pose<T>]) -> Result<ResidualBlock<T>> {
    residual_impl(track, i, poses, Family::Left, false)
}

/// Residual of observation `i` predicted from the right base (`i ≠ r`).
pub fn residual_right<T: Real>(track: &Track<T>, i: usize, poses: &[Pose<T>]) -> Result<ResidualBlock<T>> {
    residual_impl(track, i, poses, Family::Right, false)
}

/// Residual with all three pose Jacobian blocks filled in.
pub fn residual_jacobians<T: Real>(
    track: &Track<T>,
    i: usize,
    poses: &[Pose<T>],
    family: Family,
) -> Result<ResidualBlock<T>> {
    residual_impl(track, i, poses, family, true)
}
