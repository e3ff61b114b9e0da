//! Rigid-body primitives: rotations on SO(3), poses and right-perturbation updates.
//!
//! Rotations are stored as full 3×3 matrices. A pose maps world points into
//! the rig body frame: `X_body = R·X_world + t`.

use nalgebra::{Matrix3, Vector3};

use crate::scalar::{lit, Real};

/// Below this angle `exp`/`log` switch to their series expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix `[v]×` with `[v]×·w = v × w`.
#[inline]
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Rotation matrix in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T: Real> {
    m: Matrix3<T>,
}

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    /// Wraps a matrix that is already orthonormal. No projection is applied.
    pub fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self { m }
    }

    /// Nearest rotation to `m` in the Frobenius sense (polar decomposition).
    pub fn from_matrix_projected(m: &Matrix3<T>) -> Self {
        Self { m: nearest_rotation(m) }
    }

    /// Rotation by `angle` radians about the unit `axis`.
    pub fn from_axis_angle(axis: &Vector3<T>, angle: T) -> Self {
        exp_so3(&(axis.normalize() * angle))
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<T> {
        &self.m
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        Self { m: self.m.transpose() }
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<T>) -> Vector3<T> {
        self.m * v
    }

    #[inline]
    pub fn compose(&self, other: &Self) -> Self {
        Self { m: self.m * other.m }
    }

    /// Angle of the rotation in `[0, π]`, with the trace argument clamped to `[-1, 1]`.
    pub fn angle(&self) -> T {
        let c = (self.m.trace() - T::one()) * lit::<T>(0.5);
        c.clamp(-T::one(), T::one()).acos()
    }

    /// Re-projects onto SO(3) to bound drift accumulated by repeated updates.
    pub fn orthonormalized(&self) -> Self {
        Self::from_matrix_projected(&self.m)
    }
}

fn nearest_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < T::zero() {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -T::one();
        r = u * d * v_t;
    }
    r
}

/// Rodrigues formula. Below [`SMALL_ANGLE`] a second-order series is used.
pub fn exp_so3<T: Real>(phi: &Vector3<T>) -> Rotation<T> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let k2 = k * k;
    let (a, b) = if theta < lit(SMALL_ANGLE) {
        (T::one() - theta2 / lit(6.0), lit::<T>(0.5) - theta2 / lit(24.0))
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
    };
    Rotation { m: Matrix3::identity() + k * a + k2 * b }
}

/// Inverse of [`exp_so3`] for angles in `[0, π)`.
pub fn log_so3<T: Real>(r: &Rotation<T>) -> Vector3<T> {
    let m = r.matrix();
    let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let theta = r.angle();
    if theta < lit(SMALL_ANGLE) {
        // sin(θ)/θ ≈ 1 - θ²/6
        return w * (lit::<T>(0.5) * (T::one() + theta * theta / lit(6.0)));
    }
    let pi = T::pi();
    if pi - theta < lit(1e-6) {
        // Near π the antisymmetric part vanishes; recover the axis from R + I.
        let b = (m + Matrix3::identity()) * lit::<T>(0.5);
        let mut col = 0;
        for c in 1..3 {
            if b[(c, c)] > b[(col, col)] {
                col = c;
            }
        }
        let mut axis: Vector3<T> = b.column(col).into_owned();
        axis /= b[(col, col)].max(T::zero()).sqrt();
        let axis = axis.normalize();
        let sign = if axis.dot(&w) < T::zero() { -T::one() } else { T::one() };
        return axis * (theta * sign);
    }
    w * (theta / (lit::<T>(2.0) * theta.sin()))
}

/// World→body rigid transform of the rig: `X_body = R·X_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: Rotation<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Rotation<T>, translation: Vector3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    #[inline]
    pub fn transform(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation.rotate(x) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -rt.rotate(&self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation.compose(&other.rotation),
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    /// Position of the body origin in world coordinates.
    pub fn center(&self) -> Vector3<T> {
        -self.rotation.transpose().rotate(&self.translation)
    }
}

/// Right perturbation of a pose: rotation `R·exp(φ)`, translation `t + δt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation<T: Real> {
    pub phi: Vector3<T>,
    pub dt: Vector3<T>,
}

impl<T: Real> Perturbation<T> {
    pub fn zero() -> Self {
        Self { phi: Vector3::zeros(), dt: Vector3::zeros() }
    }

    /// Reads `[φ, δt]` from a 6-slice.
    pub fn from_slice(s: &[T]) -> Self {
        Self {
            phi: Vector3::new(s[0], s[1], s[2]),
            dt: Vector3::new(s[3], s[4], s[5]),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.phi.iter().chain(self.dt.iter()).all(|x| *x == T::zero())
    }
}

pub fn apply_right_perturbation<T: Real>(p: &Pose<T>, d: &Perturbation<T>) -> Pose<T> {
    if d.is_zero() {
        return *p;
    }
    Pose::new(p.rotation.compose(&exp_so3(&d.phi)), p.translation + d.dt)
}
