//! Base-observation selection.
//!
//! The left base is the observation whose direction covariance has the
//! smallest average variance; the right base is the partner that makes the
//! two-ray reconstruction's uncertainty ellipsoid the roundest.
//!
//! The ellipsoid comes from a constrained Gauss–Helmert estimate of the
//! homogeneous point `X̃` (`‖X̃‖ = 1`) from the stacked ray constraints
//! `K(f)·[R | t − v]·X̃ = 0`, with
//!
//! ```text
//! N   = Eᵀ (F Σ_l Fᵀ)⁻¹ E
//! Σ_X̃ = N⁻¹ − N⁻¹H (HᵀN⁻¹H)⁻¹ HᵀN⁻¹,   H = X̂
//! Σ_X = J Σ_X̃ Jᵀ,                      J = [I₃ | −X] / X̃₄
//! ```
//!
//! `Σ_X̃` is evaluated in the equivalent reduced form `P (PᵀNP)⁻¹ Pᵀ` with `P`
//! an orthonormal basis of `X̂⊥`, which stays finite when `N` is singular along
//! `X̂` (noise-free rays).

use nalgebra::{Matrix2, Matrix2x3, Matrix2x4, Matrix3, Matrix3x4, Matrix4, Matrix4x3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gcm::ObservationRay;
use crate::geometry::{skew, Pose};
use crate::pose_only::{relative_pose, scale_left};
use crate::scalar::{lit, Real};
use crate::track::{BasePair, Track};

/// Smallest-two singular value gap of the stacked system below which the
/// solution direction is ambiguous.
pub const SINGULAR_GAP: f64 = 1e-10;
/// Homogeneous coordinate below which the point is taken to be at infinity.
pub const MIN_HOMOGENEOUS: f64 = 1e-12;
/// Trace below which a covariance counts as zero.
pub const ZERO_TRACE: f64 = 1e-30;

/// Two-ray point estimate with its covariance and ellipsoid roundness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairUncertainty<T: Real> {
    pub x_hat: Vector3<T>,
    pub cov_x: Matrix3<T>,
    pub roundness: T,
}

/// `trace(Σ_f)/3`
pub fn average_variance<T: Real>(sigma_f: &Matrix3<T>) -> T {
    sigma_f.trace() / lit(3.0)
}

/// `sqrt(λ_min/λ_max)` of a covariance; scale and rotation invariant.
pub fn roundness<T: Real>(cov: &Matrix3<T>) -> Result<T> {
    if cov.trace().abs() < lit(ZERO_TRACE) {
        return Err(Error::ZeroCovariance);
    }
    let sym = (cov + cov.transpose()) * lit::<T>(0.5);
    let eig = sym.symmetric_eigenvalues();
    let max = eig.max();
    if max <= T::zero() {
        return Err(Error::ZeroCovariance);
    }
    Ok((eig.min().max(T::zero()) / max).sqrt())
}

/// Row of `[f]×` to drop: the one with the smallest norm, i.e. the index of
/// the largest `|f_k|`. For `f` near the optical axis this keeps rows 0 and 1.
fn dropped_row<T: Real>(f: &Vector3<T>) -> usize {
    let a = f.map(|x| x.abs());
    if a.z >= a.x && a.z >= a.y {
        2
    } else if a.y >= a.x {
        1
    } else {
        0
    }
}

fn select_rows<T: Real>(m: &Matrix3<T>, dropped: usize) -> Matrix2x3<T> {
    let rows: [usize; 2] = match dropped {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    };
    Matrix2x3::from_rows(&[m.row(rows[0]).into_owned(), m.row(rows[1]).into_owned()])
}

/// Two independent rows of `[f]×`.
pub fn reduced_skew<T: Real>(f: &Vector3<T>) -> Matrix2x3<T> {
    select_rows(&skew(f), dropped_row(f))
}

/// Orthonormal 4×3 basis of the complement of unit `x`, via a Householder reflector.
fn complement_basis<T: Real>(x: &Vector4<T>) -> Matrix4x3<T> {
    let mut k = 0;
    for j in 1..4 {
        if x[j].abs() > x[k].abs() {
            k = j;
        }
    }
    let mut w = *x;
    w[k] += if x[k] >= T::zero() { T::one() } else { -T::one() };
    let h = Matrix4::identity() - w * w.transpose() * (lit::<T>(2.0) / w.norm_squared());
    let cols: Vec<_> = (0..4).filter(|&j| j != k).map(|j| h.column(j).into_owned()).collect();
    Matrix4x3::from_columns(&cols)
}

struct StackedSystem<T: Real> {
    e: Matrix4<T>,
    /// Rows of `[f]×` kept for each ray.
    dropped: [usize; 2],
    /// `P_k = [R_k | t_k − v_k]` in the centred frame.
    p: [Matrix3x4<T>; 2],
}

/// Unit-norm homogeneous solution of the stacked two-ray system, expressed in
/// a world frame shifted by `centre`.
fn stacked_system<T: Real>(
    rays: [&ObservationRay<T>; 2],
    poses: [&Pose<T>; 2],
    centre: &Vector3<T>,
) -> StackedSystem<T> {
    let mut e = Matrix4::zeros();
    let mut dropped = [2; 2];
    let mut p = [Matrix3x4::zeros(); 2];
    for k in 0..2 {
        let r = poses[k].rotation.matrix();
        // X = X_c + centre  ⇒  R·X + t − v = R·X_c + (R·centre + t − v)
        let offset = r * centre + poses[k].translation - rays[k].v;
        let mut pk = Matrix3x4::zeros();
        pk.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        pk.fixed_view_mut::<3, 1>(0, 3).copy_from(&offset);
        dropped[k] = dropped_row(&rays[k].f);
        let kf = select_rows(&skew(&rays[k].f), dropped[k]);
        e.fixed_view_mut::<2, 4>(2 * k, 0).copy_from(&(kf * pk));
        p[k] = pk;
    }
    StackedSystem { e, dropped, p }
}

/// World-frame midpoint of the two ray vertices. The stacked system is
/// solved relative to it so the homogeneous coordinate stays well scaled.
fn conditioning_centre<T: Real>(rays: [&ObservationRay<T>; 2], poses: [&Pose<T>; 2]) -> Vector3<T> {
    (poses[0].inverse().transform(&rays[0].v) + poses[1].inverse().transform(&rays[1].v)) * lit::<T>(0.5)
}

/// Two-ray reconstruction with Gauss–Helmert covariance, using explicit
/// direction covariances for the two rays.
pub fn pair_with_covariances<T: Real>(
    obs_i: &ObservationRay<T>,
    obs_j: &ObservationRay<T>,
    sigma_i: &Matrix3<T>,
    sigma_j: &Matrix3<T>,
    pose_i: &Pose<T>,
    pose_j: &Pose<T>,
) -> Result<PairUncertainty<T>> {
    let centre = conditioning_centre([obs_i, obs_j], [pose_i, pose_j]);
    let sys = stacked_system([obs_i, obs_j], [pose_i, pose_j], &centre);

    let svd = sys.e.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::IllConditioned("SVD failed".into()))?;
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let s = |k: usize| svd.singular_values[order[k]];
    if s(2) - s(3) < lit(SINGULAR_GAP) {
        return Err(Error::IllConditioned("solution direction is ambiguous".into()));
    }
    let mut xh: Vector4<T> = v_t.row(order[3]).transpose();
    if xh[3] < T::zero() {
        xh = -xh;
    }
    if xh[3] < lit(MIN_HOMOGENEOUS) {
        return Err(Error::IllConditioned("point at infinity".into()));
    }
    let x_c = Vector3::new(xh[0], xh[1], xh[2]) / xh[3];
    let x_hat = x_c + centre;

    if sigma_i.trace().abs() + sigma_j.trace().abs() < lit(ZERO_TRACE) {
        return Ok(PairUncertainty { x_hat, cov_x: Matrix3::zeros(), roundness: T::one() });
    }

    let n = normal_matrix(&sys, &xh, [sigma_i, sigma_j])?;
    let basis = complement_basis(&xh);
    let reduced = basis.transpose() * n * basis;
    let reduced_inv = reduced
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("reduced normal matrix is singular".into()))?;
    let cov_h = basis * reduced_inv * basis.transpose();

    let mut jac = Matrix3x4::zeros();
    jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    jac.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-x_c));
    let jac = jac / xh[3];
    let cov = jac * cov_h * jac.transpose();
    let cov_x = (cov + cov.transpose()) * lit::<T>(0.5);
    let roundness = match roundness(&cov_x) {
        Ok(r) => r,
        Err(Error::ZeroCovariance) => T::one(),
        Err(e) => return Err(e),
    };
    Ok(PairUncertainty { x_hat, cov_x, roundness })
}

/// `N = Eᵀ (F Σ Fᵀ)⁻¹ E` with `F` the derivative of the constraints w.r.t. the directions.
fn normal_matrix<T: Real>(sys: &StackedSystem<T>, xh: &Vector4<T>, sigmas: [&Matrix3<T>; 2]) -> Result<Matrix4<T>> {
    let mut n = Matrix4::zeros();
    for k in 0..2 {
        let y = sys.p[k] * xh;
        // K(f)·y = S·(f × y) = −S·[y]×·f
        let f = -select_rows(&skew(&y), sys.dropped[k]);
        let b: Matrix2<T> = f * sigmas[k] * f.transpose();
        let w = b
            .try_inverse()
            .ok_or_else(|| Error::IllConditioned("singular constraint covariance".into()))?;
        let ek: Matrix2x4<T> = sys.e.fixed_view::<2, 4>(2 * k, 0).into_owned();
        n += ek.transpose() * w * ek;
    }
    Ok(n)
}

/// Two-ray reconstruction of a track point and its uncertainty.
pub fn pair_point_and_covariance<T: Real>(
    obs_i: &ObservationRay<T>,
    obs_j: &ObservationRay<T>,
    pose_i: &Pose<T>,
    pose_j: &Pose<T>,
) -> Result<PairUncertainty<T>> {
    pair_with_covariances(obs_i, obs_j, &obs_i.sigma_f, &obs_j.sigma_f, pose_i, pose_j)
}

/// How base pairs are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseStrategy {
    /// Minimum average variance left base, maximum roundness right base.
    Roundness,
    /// Pair with the largest `θ = ‖[f_b]×·R_ab·f_a‖` over all pairs.
    MaxTheta,
    /// Pair with the largest angle between world-frame ray directions.
    MaxDisparity,
    /// Uniformly random non-degenerate pair, seeded per track.
    Random { seed: u64 },
    /// First non-degenerate pair in index order.
    First,
}

impl BaseStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Roundness => "roundness",
            Self::MaxTheta => "max-theta",
            Self::MaxDisparity => "max-disparity",
            Self::Random { .. } => "random",
            Self::First => "first",
        }
    }
}

fn pose_of<'a, T: Real>(poses: &'a [Pose<T>], o: &ObservationRay<T>) -> Result<&'a Pose<T>> {
    poses.get(o.pose_id).ok_or_else(|| Error::InvalidInput(format!("pose {} out of range", o.pose_id)))
}

/// True when the pair can carry a pose-only constraint.
fn usable<T: Real>(track: &Track<T>, a: usize, b: usize, poses: &[Pose<T>]) -> Result<bool> {
    let (oa, ob) = (&track.observations[a], &track.observations[b]);
    Ok(scale_left(oa, ob, pose_of(poses, oa)?, pose_of(poses, ob)?).is_ok())
}

/// Covariances are considered unavailable when every observation's is exactly zero.
fn covariances_available<T: Real>(track: &Track<T>) -> bool {
    track.observations.iter().any(|o| o.sigma_f != Matrix3::zeros())
}

/// Roundness-based selection at the given poses.
pub fn select_bases<T: Real>(track: &Track<T>, poses: &[Pose<T>]) -> Result<BasePair> {
    let obs = &track.observations;
    if obs.len() < 2 {
        return Err(Error::NoValidPair);
    }
    let available = covariances_available(track);
    let identity = Matrix3::identity();
    let sigma = |k: usize| if available { obs[k].sigma_f } else { identity };

    // Phase 1
    let mut left = 0;
    if available {
        let mut best = average_variance(&obs[0].sigma_f);
        for (k, o) in obs.iter().enumerate().skip(1) {
            let v = average_variance(&o.sigma_f);
            if v < best {
                best = v;
                left = k;
            }
        }
    }

    // Phase 2
    let pose_l = pose_of(poses, &obs[left])?;
    let mut best: Option<(usize, T)> = None;
    for i in (0..obs.len()).filter(|&i| i != left) {
        if !usable(track, left, i, poses)? {
            continue;
        }
        let pose_i = pose_of(poses, &obs[i])?;
        let score = match pair_with_covariances(&obs[left], &obs[i], &sigma(left), &sigma(i), pose_l, pose_i) {
            Ok(u) => u.roundness,
            Err(Error::IllConditioned(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.map_or(true, |(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    let (right, _) = best.ok_or(Error::NoValidPair)?;
    BasePair::new(left, right)
}

fn world_direction<T: Real>(o: &ObservationRay<T>, poses: &[Pose<T>]) -> Result<Vector3<T>> {
    Ok(pose_of(poses, o)?.rotation.transpose().rotate(&o.f))
}

/// Best pair under a per-pair score; ties keep the lexicographically first pair.
fn best_pair_by<T: Real>(
    track: &Track<T>,
    poses: &[Pose<T>],
    mut score: impl FnMut(usize, usize) -> Result<T>,
) -> Result<BasePair> {
    let n = track.observations.len();
    let mut best: Option<(BasePair, T)> = None;
    for a in 0..n {
        for b in a + 1..n {
            if !usable(track, a, b, poses)? {
                continue;
            }
            let s = score(a, b)?;
            if best.map_or(true, |(_, v)| s > v) {
                best = Some((BasePair { left: a, right: b }, s));
            }
        }
    }
    best.map(|(p, _)| p).ok_or(Error::NoValidPair)
}

/// Selects a base pair with any strategy. `track_index` decorrelates the
/// random strategy across tracks.
pub fn select_bases_with<T: Real>(
    track: &Track<T>,
    poses: &[Pose<T>],
    strategy: BaseStrategy,
    track_index: usize,
) -> Result<BasePair> {
    let obs = &track.observations;
    if obs.len() < 2 {
        return Err(Error::NoValidPair);
    }
    match strategy {
        BaseStrategy::Roundness => select_bases(track, poses),
        BaseStrategy::MaxTheta => best_pair_by(track, poses, |a, b| {
            let (r_ab, _) = relative_pose(pose_of(poses, &obs[a])?, pose_of(poses, &obs[b])?);
            Ok(obs[b].f.cross(&r_ab.rotate(&obs[a].f)).norm())
        }),
        BaseStrategy::MaxDisparity => best_pair_by(track, poses, |a, b| {
            let da = world_direction(&obs[a], poses)?;
            let db = world_direction(&obs[b], poses)?;
            Ok(da.dot(&db).clamp(-T::one(), T::one()).acos())
        }),
        BaseStrategy::First => best_pair_by(track, poses, |_, _| Ok(T::zero())),
        BaseStrategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(track_index as u64);
            let n = obs.len();
            for _ in 0..4 * n * n {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a != b && usable(track, a, b, poses)? {
                    return BasePair::new(a, b);
                }
            }
            Err(Error::NoValidPair)
        }
    }
}
