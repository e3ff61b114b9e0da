//! Synthetic rigs, trajectories and problems.
//!
//! Randomness comes from ChaCha8 seeded with `seed`, using independent
//! streams: 0 for scene points, 1 for pixel noise, 2 for pose perturbation.
//! Within a stream, draws happen in point/pose/camera index order.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::gcm::{pixel_to_ray, project, Camera, CameraExtrinsics, CameraIntrinsics, ObservationRay, RigConfig};
use crate::geometry::{exp_so3, Pose, Rotation};
use crate::optimizer::Problem;
use crate::pose_only::scale_left;
use crate::scalar::{lit, to_f64, Real};
use crate::track::{BasePair, Track};

pub const FOCAL: f64 = 540.0;
pub const IMAGE_WIDTH: f64 = 1080.0;
pub const IMAGE_HEIGHT: f64 = 960.0;
/// Half-extent of the cube scene points are drawn from, meters.
pub const SCENE_HALF_EXTENT: f64 = 500.0;

const STREAM_POINTS: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_PERTURB: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RigPreset {
    /// Four cameras side by side along body x, all looking along +z.
    Forward,
    /// Four cameras looking along +z, +x, −z, −x.
    Omni,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrajectoryKind {
    Linear,
    Curve,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub rig_preset: RigPreset,
    pub trajectory: TrajectoryKind,
    pub n_poses: usize,
    pub n_points: usize,
    /// Upper bound of the per-observation pixel noise std.
    pub sigma_max: f64,
    /// Initial rotation error, degrees.
    pub rot_perturb: f64,
    /// Initial translation error std (vector), meters.
    pub trans_perturb: f64,
    pub seed: u64,
    /// Spacing of linear trajectory poses, meters.
    pub step: f64,
    /// Radius of the curved trajectory, meters.
    pub radius: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            rig_preset: RigPreset::Forward,
            trajectory: TrajectoryKind::Linear,
            n_poses: 50,
            n_points: 1000,
            sigma_max: 4.0,
            rot_perturb: 2.0,
            trans_perturb: 0.5,
            seed: 0,
            step: 2.0,
            radius: 100.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_poses < 2 || self.n_points < 1 {
            return Err(Error::InvalidInput("need at least 2 poses and 1 point".into()));
        }
        if !(self.sigma_max >= 0.0) || !(self.rot_perturb >= 0.0) || !(self.trans_perturb >= 0.0) {
            return Err(Error::InvalidInput("noise levels must be non-negative".into()));
        }
        if !(self.step > 0.0) || !(self.radius > 0.0) {
            return Err(Error::InvalidInput("trajectory step and radius must be positive".into()));
        }
        Ok(())
    }
}

fn ry<T: Real>(angle: f64) -> Rotation<T> {
    exp_so3(&Vector3::new(T::zero(), lit(angle), T::zero()))
}

pub fn make_rig<T: Real>(preset: RigPreset) -> RigConfig<T> {
    let intrinsics = CameraIntrinsics::new(
        lit(FOCAL),
        lit(FOCAL),
        lit(IMAGE_WIDTH / 2.0),
        lit(IMAGE_HEIGHT / 2.0),
        lit(IMAGE_WIDTH),
        lit(IMAGE_HEIGHT),
    )
    .expect("preset intrinsics are valid");
    let cameras = (0..4)
        .map(|k| {
            let extrinsics = match preset {
                RigPreset::Forward => CameraExtrinsics {
                    rotation: Rotation::identity(),
                    translation: Vector3::new(lit(0.5 * k as f64 - 0.75), T::zero(), T::zero()),
                },
                RigPreset::Omni => {
                    let yaw = std::f64::consts::FRAC_PI_2 * k as f64;
                    let rotation: Rotation<T> = ry(yaw);
                    // centre 0.25 m out along the optical axis
                    let translation = rotation.rotate(&Vector3::new(T::zero(), T::zero(), lit(0.25)));
                    CameraExtrinsics { rotation, translation }
                }
            };
            Camera { intrinsics, extrinsics }
        })
        .collect();
    RigConfig::new(cameras).expect("four cameras")
}

/// Ground-truth world→body poses. Linear: centres `k·step·x̂`, identity
/// rotation. Curve: centres on a circle in the xz-plane with the body z axis
/// along the direction of travel.
pub fn make_trajectory<T: Real>(kind: TrajectoryKind, n_poses: usize, step: f64, radius: f64) -> Vec<Pose<T>> {
    (0..n_poses)
        .map(|k| match kind {
            TrajectoryKind::Linear => {
                let c = Vector3::new(lit(step * k as f64), T::zero(), T::zero());
                Pose::new(Rotation::identity(), -c)
            }
            TrajectoryKind::Curve => {
                let alpha = step / radius * k as f64;
                let c = Vector3::new(lit(radius * (1.0 - alpha.cos())), T::zero(), lit(radius * alpha.sin()));
                let r = ry::<T>(alpha).transpose();
                let t = -r.rotate(&c);
                Pose::new(r, t)
            }
        })
        .collect()
}

/// Generated problem plus the ground truth it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem<T: Real> {
    /// Initial (perturbed) poses, noisy observations, no bases selected.
    pub problem: Problem<T>,
    pub gt_poses: Vec<Pose<T>>,
    /// Ground-truth point per track (also stored as the track's world hint).
    pub gt_points: Vec<Vector3<T>>,
    /// Pixel noise std drawn for each observation, in track order.
    pub sigmas: Vec<f64>,
}

fn uniform_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Builds a deterministic synthetic problem from `spec`. Pose 0 is left
/// unperturbed because it anchors the gauge.
pub fn generate_problem<T: Real>(spec: &SynthSpec) -> Result<SyntheticProblem<T>> {
    spec.validate()?;
    let rig = make_rig::<T>(spec.rig_preset);
    let gt_poses = make_trajectory::<T>(spec.trajectory, spec.n_poses, spec.step, spec.radius);

    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(s);
        rng
    };
    let mut point_rng = stream(STREAM_POINTS);
    let mut noise_rng = stream(STREAM_NOISE);
    let mut perturb_rng = stream(STREAM_PERTURB);

    // Visibility first, so the noise stream only depends on surviving tracks.
    let mut visible: Vec<(Vector3<T>, Vec<(usize, usize, Vector2<T>)>)> = Vec::new();
    for _ in 0..spec.n_points {
        let x = Vector3::from_fn(|_, _| lit::<T>(point_rng.random_range(-SCENE_HALF_EXTENT..SCENE_HALF_EXTENT)));
        let mut obs = Vec::new();
        for (p, pose) in gt_poses.iter().enumerate() {
            for c in 0..rig.len() {
                if let Ok(proj) = project(&rig, c, pose, &x) {
                    if proj.in_image {
                        obs.push((p, c, proj.pixel));
                    }
                }
            }
        }
        if obs.len() >= 2 {
            visible.push((x, obs));
        }
    }
    if visible.is_empty() {
        return Err(Error::EmptyProblem);
    }

    let mut tracks = Vec::with_capacity(visible.len());
    let mut gt_points = Vec::with_capacity(visible.len());
    let mut sigmas = Vec::new();
    for (x, obs) in visible {
        let mut rays = Vec::with_capacity(obs.len());
        for (p, c, pixel) in obs {
            let sigma = if spec.sigma_max > 0.0 { noise_rng.random_range(0.0..spec.sigma_max) } else { 0.0 };
            let noise = if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).expect("positive std");
                Vector2::new(lit::<T>(n.sample(&mut noise_rng)), lit::<T>(n.sample(&mut noise_rng)))
            } else {
                Vector2::zeros()
            };
            sigmas.push(sigma);
            let sigma_px = Matrix2::identity() * lit::<T>(sigma * sigma);
            rays.push(pixel_to_ray(&rig, c, p, &(pixel + noise), &sigma_px)?);
        }
        let mut track = Track::new(rays)?;
        track.world_hint = Some(x);
        tracks.push(track);
        gt_points.push(x);
    }

    let per_axis = spec.trans_perturb / 3f64.sqrt();
    let mut poses = gt_poses.clone();
    for pose in poses.iter_mut().skip(1) {
        let axis = uniform_axis(&mut perturb_rng);
        let phi = axis * spec.rot_perturb.to_radians();
        let dt = Vector3::from_fn(|_, _| {
            let z: f64 = StandardNormal.sample(&mut perturb_rng);
            z * per_axis
        });
        let rotation = pose.rotation.compose(&exp_so3(&phi.map(lit::<T>)));
        *pose = Pose::new(rotation, pose.translation + dt.map(lit::<T>));
    }

    let problem = Problem::new(rig, poses, tracks)?;
    Ok(SyntheticProblem { problem, gt_poses, gt_points, sigmas })
}

/// A noise-free track of one point seen by `n_obs` rays spread over
/// `n_poses` random poses (ray `k` on pose `k % n_poses`), with ray vertices
/// scattered around the rig origin. Bases are observations 0 and 1 and their
/// parallax `θ` is at least `min_theta`. Returns the poses, the track and the
/// point.
pub fn random_track<T: Real, R: Rng>(
    rng: &mut R,
    n_obs: usize,
    n_poses: usize,
    min_theta: f64,
) -> Result<(Vec<Pose<T>>, Track<T>, Vector3<T>)> {
    if n_obs < 2 || n_poses == 0 {
        return Err(Error::InvalidInput("need at least two rays and one pose".into()));
    }
    loop {
        let poses: Vec<Pose<T>> = (0..n_poses)
            .map(|_| {
                let phi = Vector3::from_fn(|_, _| rng.random_range(-0.4..0.4));
                let t = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
                Pose::new(exp_so3(&phi.map(lit::<T>)), t.map(lit::<T>))
            })
            .collect();
        let x = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(5.0..9.0));
        let x = x.map(lit::<T>);
        let rays: Vec<ObservationRay<T>> = (0..n_obs)
            .map(|k| {
                let v = Vector3::from_fn(|_, _| lit::<T>(rng.random_range(-0.5..0.5)));
                let f = (poses[k % n_poses].transform(&x) - v).normalize();
                let tangent = Matrix3::identity() - f * f.transpose();
                ObservationRay {
                    f,
                    v,
                    sigma_f: tangent * lit::<T>(1e-6),
                    pose_id: k % n_poses,
                    camera_id: 0,
                    pixel: Vector2::zeros(),
                    sigma_px: Matrix2::identity(),
                }
            })
            .collect();
        let ok = match scale_left(&rays[0], &rays[1], &poses[rays[0].pose_id], &poses[rays[1].pose_id]) {
            Ok(s) => to_f64(s.theta) >= min_theta,
            Err(_) => false,
        };
        if ok {
            let track = Track::new(rays)?.with_base(BasePair::new(0, 1)?)?;
            return Ok((poses, Track { world_hint: Some(x), ..track }, x));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_rig_axes_are_parallel() {
        let rig = make_rig::<f64>(RigPreset::Forward);
        for c in rig.cameras() {
            assert_eq!(*c.extrinsics.rotation.matrix(), nalgebra::Matrix3::identity());
        }
    }

    #[test]
    fn omni_axes_are_orthogonal_or_opposite() {
        let rig = make_rig::<f64>(RigPreset::Omni);
        let axes: Vec<_> = rig.cameras().iter().map(|c| c.extrinsics.rotation.rotate(&Vector3::z())).collect();
        for a in 0..4 {
            for b in a + 1..4 {
                let d = axes[a].dot(&axes[b]);
                assert!(d.abs() < 1e-12 || (d + 1.0).abs() < 1e-12, "{d}");
            }
        }
    }

    #[test]
    fn linear_trajectory() {
        let poses = make_trajectory::<f64>(TrajectoryKind::Linear, 3, 2.0, 100.0);
        let expect = [0.0, -2.0, -4.0];
        for (p, x) in poses.iter().zip(expect) {
            assert_eq!(p.translation, Vector3::new(x, 0.0, 0.0));
            assert_eq!(p.rotation, Rotation::identity());
        }
    }

    #[test]
    fn curve_has_uniform_yaw_and_tangent_heading() {
        let poses = make_trajectory::<f64>(TrajectoryKind::Curve, 6, 2.0, 100.0);
        for w in poses.windows(2) {
            let d = w[1].rotation.compose(&w[0].rotation.transpose()).angle();
            assert!((d - 0.02).abs() < 1e-12);
        }
        for w in poses.windows(2) {
            let heading = w[0].rotation.transpose().rotate(&Vector3::z());
            let travel = (w[1].center() - w[0].center()).normalize();
            assert!(heading.dot(&travel) > 0.9999);
        }
    }

    #[test]
    fn perturbation_has_exact_angle() {
        let spec = SynthSpec { n_poses: 6, n_points: 200, ..Default::default() };
        let s = generate_problem::<f64>(&spec).unwrap();
        assert_eq!(s.problem.poses[0], s.gt_poses[0]);
        for (p, g) in s.problem.poses.iter().zip(&s.gt_poses).skip(1) {
            let a = p.rotation.compose(&g.rotation.transpose()).angle();
            assert!((a - 2f64.to_radians()).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmas_are_bounded() {
        let spec = SynthSpec { n_poses: 5, n_points: 300, sigma_max: 3.0, ..Default::default() };
        let s = generate_problem::<f64>(&spec).unwrap();
        assert_eq!(s.sigmas.len(), s.problem.observation_count());
        assert!(s.sigmas.iter().all(|&x| (0.0..3.0).contains(&x)));
    }
}
