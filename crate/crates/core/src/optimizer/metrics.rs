//! Accuracy metrics against ground truth.

use nalgebra::Vector3;

use super::Problem;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::scalar::{lit, to_f64, Real};

/// Ground-truth translations shorter than this have no relative error.
pub const MIN_TRANSLATION_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean rotation angle error, radians.
    pub eps_r: f64,
    /// Mean relative translation error `‖t_gt − t‖/‖t_gt‖`.
    pub eps_t: f64,
    /// Mean absolute translation error, meters.
    pub eps_t_abs: f64,
    /// Mean point error, meters.
    pub eps_x: Option<f64>,
    /// Mean reprojection error of the estimated points, pixels.
    pub eps_p: Option<f64>,
    /// Poses left out of `eps_t` because their ground-truth translation vanishes.
    pub excluded_translations: usize,
}

/// Re-expresses poses in the frame of pose 0, so pose 0 becomes the identity.
pub fn gauge_align<T: Real>(poses: &[Pose<T>]) -> Vec<Pose<T>> {
    let Some(anchor) = poses.first() else { return Vec::new() };
    let inv = anchor.inverse();
    poses.iter().map(|p| p.compose(&inv)).collect()
}

/// World points expressed in the frame of `anchor`, matching [`gauge_align`].
pub fn gauge_align_points<T: Real>(anchor: &Pose<T>, points: &[Option<Vector3<T>>]) -> Vec<Option<Vector3<T>>> {
    points.iter().map(|x| x.map(|x| anchor.transform(&x))).collect()
}

/// Rotation, translation, point and reprojection errors. Poses are compared
/// as given; call [`gauge_align`] first when the two sets use different gauges.
/// Point slices are indexed like `problem.tracks` and may be empty.
pub fn error_metrics<T: Real>(
    est_poses: &[Pose<T>],
    gt_poses: &[Pose<T>],
    est_points: &[Option<Vector3<T>>],
    gt_points: &[Option<Vector3<T>>],
    problem: &Problem<T>,
) -> Result<Metrics> {
    if est_poses.len() != gt_poses.len() || est_poses.is_empty() {
        return Err(Error::InvalidInput("pose lists must be non-empty and of equal length".into()));
    }
    let n = est_poses.len() as f64;
    let mut eps_r = 0.0;
    let mut eps_t_abs = 0.0;
    let (mut rel_sum, mut rel_count, mut excluded) = (0.0, 0usize, 0usize);
    for (e, g) in est_poses.iter().zip(gt_poses) {
        let rel = g.rotation.compose(&e.rotation.transpose());
        let c = (rel.matrix().trace() - T::one()) * lit::<T>(0.5);
        eps_r += to_f64(c.clamp(-T::one(), T::one()).acos());
        let dt = to_f64((g.translation - e.translation).norm());
        eps_t_abs += dt;
        let gn = to_f64(g.translation.norm());
        if gn < MIN_TRANSLATION_NORM {
            excluded += 1;
        } else {
            rel_sum += dt / gn;
            rel_count += 1;
        }
    }

    let eps_x = mean(est_points.iter().zip(gt_points).filter_map(|(e, g)| Some(to_f64((e.as_ref()? - g.as_ref()?).norm()))));

    let eps_p = if est_points.len() == problem.tracks.len() {
        let mut errs = Vec::new();
        for (t, x) in problem.tracks.iter().zip(est_points) {
            let Some(x) = x else { continue };
            for o in &t.observations {
                if let Ok(p) = crate::gcm::project(&problem.rig, o.camera_id, &est_poses[o.pose_id], x) {
                    errs.push(to_f64((p.pixel - o.pixel).norm()));
                }
            }
        }
        mean(errs.into_iter())
    } else {
        None
    };

    Ok(Metrics {
        eps_r: eps_r / n,
        eps_t: if rel_count == 0 { 0.0 } else { rel_sum / rel_count as f64 },
        eps_t_abs: eps_t_abs / n,
        eps_x,
        eps_p,
        excluded_translations: excluded,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}
