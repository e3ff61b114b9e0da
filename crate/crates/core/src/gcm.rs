//! Generalized camera model for a calibrated rig of pinhole cameras.
//!
//! Every pixel of camera `c` maps to a body-frame ray `(f, v)` with
//! `f = normalize(R_c·K_c⁻¹·x̃)` and `v = t_c`, so that a world point seen at
//! pose `(R, t)` satisfies `s·f + v = R·X + t` with `s` the distance from the
//! camera centre.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation};
use crate::scalar::{lit, Real};

/// Camera-frame depths at or below this value count as behind the camera.
pub const BEHIND_CAMERA_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: T,
    pub height: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: T, height: T) -> Result<Self> {
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(width > T::zero() && height > T::zero()) {
            return Err(Error::InvalidIntrinsics("image size must be positive".into()));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn contains(&self, px: &Vector2<T>) -> bool {
        px.x >= T::zero() && px.y >= T::zero() && px.x <= self.width && px.y <= self.height
    }
}

/// Camera→body transform: `X_body = R_c·X_cam + t_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics<T: Real> {
    pub rotation: Rotation<T>,
    pub translation: Vector3<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera<T: Real> {
    pub intrinsics: CameraIntrinsics<T>,
    pub extrinsics: CameraExtrinsics<T>,
}

/// Calibrated rig; extrinsics stay fixed during optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct RigConfig<T: Real> {
    cameras: Vec<Camera<T>>,
}

impl<T: Real> RigConfig<T> {
    pub fn new(cameras: Vec<Camera<T>>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::InvalidInput("rig needs at least one camera".into()));
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[Camera<T>] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn camera(&self, cam: usize) -> Result<&Camera<T>> {
        self.cameras.get(cam).ok_or(Error::InvalidCamera(cam))
    }
}

/// One body-frame observation ray with the pixel it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationRay<T: Real> {
    /// Unit direction in the body frame.
    pub f: Vector3<T>,
    /// Ray vertex, the camera centre `t_c` in the body frame.
    pub v: Vector3<T>,
    /// Covariance of `f`; `f` lies in its null space.
    pub sigma_f: Matrix3<T>,
    pub pose_id: usize,
    pub camera_id: usize,
    pub pixel: Vector2<T>,
    pub sigma_px: Matrix2<T>,
}

/// Result of [`project`]: the pixel plus whether it falls inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T: Real> {
    pub pixel: Vector2<T>,
    pub in_image: bool,
    /// Camera-frame depth `z`.
    pub depth: T,
}

/// Transforms a world point into the frame of camera `cam` at `pose`.
pub fn world_to_camera<T: Real>(cam: &Camera<T>, pose: &Pose<T>, x_world: &Vector3<T>) -> Vector3<T> {
    let rc_t = cam.extrinsics.rotation.transpose();
    rc_t.rotate(&(pose.transform(x_world) - cam.extrinsics.translation))
}

pub fn project<T: Real>(
    rig: &RigConfig<T>,
    cam: usize,
    pose: &Pose<T>,
    x_world: &Vector3<T>,
) -> Result<Projection<T>> {
    let camera = rig.camera(cam)?;
    let xc = world_to_camera(camera, pose, x_world);
    if xc.z <= lit(BEHIND_CAMERA_DEPTH) {
        return Err(Error::BehindCamera { camera: cam, depth: crate::scalar::to_f64(xc.z) });
    }
    let k = &camera.intrinsics;
    let pixel = Vector2::new(k.fx * xc.x / xc.z + k.cx, k.fy * xc.y / xc.z + k.cy);
    Ok(Projection { in_image: k.contains(&pixel), pixel, depth: xc.z })
}

/// `K⁻¹·x̃` for a pixel.
fn unproject<T: Real>(k: &CameraIntrinsics<T>, px: &Vector2<T>) -> Vector3<T> {
    Vector3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, T::one())
}

/// Jacobian of the camera-frame unit direction with respect to the pixel.
pub fn back_projection_jacobian<T: Real>(k: &CameraIntrinsics<T>, px: &Vector2<T>) -> Matrix3x2<T> {
    let m = unproject(k, px);
    let norm = m.norm();
    let n = m / norm;
    let dnorm = (Matrix3::identity() - n * n.transpose()) / norm;
    let dm = Matrix3x2::new(T::one() / k.fx, T::zero(), T::zero(), T::one() / k.fy, T::zero(), T::zero());
    dnorm * dm
}

/// Body-frame covariance `Σ_f = R_c·J·Σ_px·Jᵀ·R_cᵀ` of the ray direction.
pub fn propagate_ray_covariance<T: Real>(
    rig: &RigConfig<T>,
    cam: usize,
    pixel: &Vector2<T>,
    sigma_px: &Matrix2<T>,
) -> Result<Matrix3<T>> {
    let camera = rig.camera(cam)?;
    let j = back_projection_jacobian(&camera.intrinsics, pixel);
    let rc = camera.extrinsics.rotation.matrix();
    let s = rc * j * sigma_px * j.transpose() * rc.transpose();
    Ok((s + s.transpose()) * lit::<T>(0.5))
}

/// Converts a pixel of camera `cam` at rig pose `pose_id` into an observation ray.
pub fn pixel_to_ray<T: Real>(
    rig: &RigConfig<T>,
    cam: usize,
    pose_id: usize,
    pixel: &Vector2<T>,
    sigma_px: &Matrix2<T>,
) -> Result<ObservationRay<T>> {
    let camera = rig.camera(cam)?;
    let d = unproject(&camera.intrinsics, pixel).normalize();
    let f = camera.extrinsics.rotation.rotate(&d);
    Ok(ObservationRay {
        f,
        v: camera.extrinsics.translation,
        sigma_f: propagate_ray_covariance(rig, cam, pixel, sigma_px)?,
        pose_id,
        camera_id: cam,
        pixel: *pixel,
        sigma_px: *sigma_px,
    })
}
