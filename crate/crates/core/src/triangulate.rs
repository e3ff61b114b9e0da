//! Multi-ray point reconstruction for the generalized camera.
//!
//! Both estimators solve a 3×3 normal system. The geometric one minimizes the
//! summed squared distances `‖(I − ffᵀ)(R·X + t − v)‖²`; the statistically
//! optimal one projects each residual onto the ray's tangent plane,
//! `e = J_fᵀ(R·X + t − v)`, and weights it by the inverse of
//! `Σ_e = J_fᵀ Σ_f J_f`.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector3};

use crate::error::{Error, Result};
use crate::gcm::ObservationRay;
use crate::geometry::Pose;
use crate::scalar::{lit, to_f64, Real};

/// Condition number above which the normal system is rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Determinant below which a tangent covariance is treated as singular.
pub const MIN_WEIGHT_DET: f64 = 1e-30;

/// Orthonormal basis of the plane orthogonal to a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullSpaceBasis<T: Real> {
    pub j: Matrix3x2<T>,
}

/// Tangent basis from the Householder reflector that maps `f` onto `±e_z`.
pub fn null_space<T: Real>(f: &Vector3<T>) -> NullSpaceBasis<T> {
    let sign = if f.z >= T::zero() { T::one() } else { -T::one() };
    let w = f + Vector3::z() * sign;
    let h = Matrix3::identity() - w * w.transpose() * (lit::<T>(2.0) / w.norm_squared());
    NullSpaceBasis { j: h.fixed_columns::<2>(0).into_owned() }
}

/// Output of the weighted solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SotSolution<T: Real> {
    pub point: Vector3<T>,
    /// Rays whose tangent covariance was singular and got identity weight.
    pub fallbacks: usize,
}

fn solve_normal<T: Real>(a: &Matrix3<T>, b: &Vector3<T>) -> Result<Vector3<T>> {
    let sym = (a + a.transpose()) * lit::<T>(0.5);
    let eig = sym.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= T::zero() || hi / lo > lit(MAX_CONDITION) {
        let cond = to_f64(hi) / to_f64(lo);
        return Err(Error::IllConditioned(format!("triangulation normal matrix condition {cond:e}")));
    }
    sym.cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::IllConditioned("triangulation normal matrix not positive definite".into()))
}

fn check_len<T>(rays: &[T]) -> Result<()> {
    if rays.len() < 2 {
        return Err(Error::InvalidInput("triangulation needs at least two rays".into()));
    }
    Ok(())
}

/// Point minimizing the summed squared ray distances.
pub fn triangulate_midpoint<T: Real>(rays: &[(&ObservationRay<T>, &Pose<T>)]) -> Result<Vector3<T>> {
    check_len(rays)?;
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (ray, pose) in rays {
        let r = pose.rotation.matrix();
        let q = Matrix3::identity() - ray.f * ray.f.transpose();
        let rq = r.transpose() * q;
        a += rq * r;
        b -= rq * (pose.translation - ray.v);
    }
    solve_normal(&a, &b)
}

/// Covariance-weighted closed-form point, with the number of identity-weight fallbacks.
pub fn triangulate_sot_counted<T: Real>(rays: &[(&ObservationRay<T>, &Pose<T>)]) -> Result<SotSolution<T>> {
    check_len(rays)?;
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    let mut fallbacks = 0;
    for (ray, pose) in rays {
        let jf = null_space(&ray.f).j;
        let sigma_e = jf.transpose() * ray.sigma_f * jf;
        let w = if sigma_e.determinant() < lit(MIN_WEIGHT_DET) {
            fallbacks += 1;
            Matrix2::identity()
        } else {
            match sigma_e.try_inverse() {
                Some(w) => w,
                None => {
                    fallbacks += 1;
                    Matrix2::identity()
                }
            }
        };
        let ai = jf.transpose() * pose.rotation.matrix();
        let bi = jf.transpose() * (pose.translation - ray.v);
        let aw = ai.transpose() * w;
        a += aw * ai;
        b -= aw * bi;
    }
    Ok(SotSolution { point: solve_normal(&a, &b)?, fallbacks })
}

/// Covariance-weighted closed-form point.
pub fn triangulate_sot<T: Real>(rays: &[(&ObservationRay<T>, &Pose<T>)]) -> Result<Vector3<T>> {
    triangulate_sot_counted(rays).map(|s| s.point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;
    use nalgebra::Vector2;
    use proptest::prelude::*;

    fn ray(f: Vector3<f64>, v: Vector3<f64>, sigma: Matrix3<f64>) -> ObservationRay<f64> {
        ObservationRay {
            f: f.normalize(),
            v,
            sigma_f: sigma,
            pose_id: 0,
            camera_id: 0,
            pixel: Vector2::zeros(),
            sigma_px: Matrix2::zeros(),
        }
    }

    #[test]
    fn null_space_of_z() {
        let j = null_space(&Vector3::<f64>::z()).j;
        assert!((j.transpose() * Vector3::z()).amax() < 1e-15);
        assert!((j.transpose() * j - Matrix2::identity()).amax() < 1e-15);
    }

    #[test]
    fn orthogonal_rays() {
        let p = Pose::identity();
        let x = Vector3::new(1.0, 2.0, 3.0);
        let a = ray(Vector3::new(1.0, 0.0, 0.0), x - Vector3::new(1.0, 0.0, 0.0), Matrix3::zeros());
        let b = ray(Vector3::new(0.0, 0.0, 1.0), x - Vector3::new(0.0, 0.0, 2.0), Matrix3::zeros());
        let got = triangulate_midpoint(&[(&a, &p), (&b, &p)]).unwrap();
        assert!((got - x).amax() < 1e-10);
        let sot = triangulate_sot_counted(&[(&a, &p), (&b, &p)]).unwrap();
        assert_eq!(sot.fallbacks, 2);
        assert!((sot.point - x).amax() < 1e-10);
    }

    #[test]
    fn parallel_rays_are_rejected() {
        let p = Pose::identity();
        let a = ray(Vector3::z(), Vector3::zeros(), Matrix3::zeros());
        let b = ray(Vector3::z(), Vector3::x(), Matrix3::zeros());
        assert!(matches!(triangulate_midpoint(&[(&a, &p), (&b, &p)]), Err(Error::IllConditioned(_))));
        assert!(matches!(triangulate_sot(&[(&a, &p), (&b, &p)]), Err(Error::IllConditioned(_))));
        assert!(matches!(triangulate_midpoint(&[(&a, &p)]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn weight_scale_cancels() {
        let poses = [Pose::identity(), Pose::new(exp_so3(&Vector3::new(0.0, 0.2, 0.0)), Vector3::new(-1.0, 0.0, 0.1))];
        let x = Vector3::new(0.5, 0.2, 4.0);
        let mk = |k: usize, noise: Vector3<f64>, var: f64| {
            let f = (poses[k].transform(&x) + noise).normalize();
            ray(f, Vector3::zeros(), (Matrix3::identity() - f * f.transpose()) * var)
        };
        let a = mk(0, Vector3::new(0.01, 0.0, 0.0), 1e-6);
        let b = mk(1, Vector3::new(0.0, -0.02, 0.01), 9e-6);
        let base = triangulate_sot(&[(&a, &poses[0]), (&b, &poses[1])]).unwrap();
        let (a3, b3) = (ray(a.f, a.v, a.sigma_f * 1e3), ray(b.f, b.v, b.sigma_f * 1e3));
        let scaled = triangulate_sot(&[(&a3, &poses[0]), (&b3, &poses[1])]).unwrap();
        assert!((base - scaled).amax() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn null_space_is_orthonormal_tangent(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
                                             wx in -5.0..5.0f64, wy in -5.0..5.0f64, wz in -5.0..5.0f64) {
            let v = Vector3::new(x, y, z);
            prop_assume!(v.norm() > 1e-3);
            let f = v.normalize();
            let j = null_space(&f).j;
            prop_assert!((j.transpose() * j - Matrix2::identity()).amax() < 1e-12);
            prop_assert!((j.transpose() * f).amax() < 1e-12);
            let w = Vector3::new(wx, wy, wz);
            let proj = w - f * f.dot(&w);
            prop_assert!(((j.transpose() * w).norm() - proj.norm()).abs() < 1e-12);
        }
    }
}
