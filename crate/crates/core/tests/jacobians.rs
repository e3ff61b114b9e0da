//! Analytic pose Jacobians of both residual families against central
//! finite differences.

use mcpa_core::geometry::{apply_right_perturbation, Perturbation, Pose};
use mcpa_core::pose_only::{residual_jacobians, residual_left, residual_right, scale_left, Family, ResidualBlock};
use mcpa_core::synth::random_track;
use mcpa_core::track::Track;
use nalgebra::{Matrix3, Matrix3x6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

fn residual(track: &Track<f64>, i: usize, poses: &[Pose<f64>], fam: Family) -> ResidualBlock<f64> {
    match fam {
        Family::Left => residual_left(track, i, poses).unwrap(),
        Family::Right => residual_right(track, i, poses).unwrap(),
    }
}

fn perturbed(poses: &[Pose<f64>], k: usize, coord: usize, h: f64) -> Vec<Pose<f64>> {
    let mut d = [0.0; 6];
    d[coord] = h;
    let mut out = poses.to_vec();
    out[k] = apply_right_perturbation(&poses[k], &Perturbation::from_slice(&d));
    out
}

/// Central differences of `value` with respect to each coordinate of pose `k`.
fn numeric<F: Fn(&[Pose<f64>]) -> Vector3<f64>>(poses: &[Pose<f64>], k: usize, value: F) -> Matrix3x6<f64> {
    Matrix3x6::from_fn(|r, c| {
        let plus = value(&perturbed(poses, k, c, STEP));
        let minus = value(&perturbed(poses, k, c, -STEP));
        (plus[r] - minus[r]) / (2.0 * STEP)
    })
}

/// Worst absolute deviation over all residuals and touched poses of one track.
fn worst_error(track: &Track<f64>, poses: &[Pose<f64>]) -> f64 {
    let base = track.base.unwrap();
    let mut worst: f64 = 0.0;
    for fam in [Family::Left, Family::Right] {
        let primary = if fam == Family::Left { base.left } else { base.right };
        for i in (0..track.len()).filter(|&i| i != primary) {
            let r = residual_jacobians(track, i, poses, fam).unwrap();
            for (pose, jac) in r.pose_blocks().unwrap().as_slice() {
                let fd = numeric(poses, *pose, |p| residual(track, i, p, fam).e);
                worst = worst.max((jac - fd).amax());
            }
        }
    }
    worst
}

#[test]
fn blocks_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_obs = rng.random_range(3..7);
        let n_poses = rng.random_range(1..5);
        let (poses, track, _) = random_track::<f64, _>(&mut rng, n_obs, n_poses, 1e-3).unwrap();
        worst = worst.max(worst_error(&track, &poses));
    }
    assert!(worst < 1e-5, "worst deviation {worst:e}");
}

#[test]
fn blocks_match_away_from_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (mut poses, track, _) = random_track::<f64, _>(&mut rng, 5, 3, 1e-3).unwrap();
        for p in &mut poses {
            let d: Vec<f64> = (0..6).map(|_| rng.random_range(-0.05..0.05)).collect();
            *p = apply_right_perturbation(p, &Perturbation::from_slice(&d));
        }
        let base = track.base.unwrap();
        let (l, r) = (&track.observations[base.left], &track.observations[base.right]);
        if scale_left(l, r, &poses[l.pose_id], &poses[r.pose_id]).unwrap().theta < 1e-3 {
            continue;
        }
        let w = worst_error(&track, &poses);
        assert!(w < 1e-5, "deviation {w:e}");
    }
}

#[test]
fn primary_rotation_block_is_minus_the_others() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (poses, track, _) = random_track::<f64, _>(&mut rng, 3, 3, 1e-3).unwrap();
        // observations sit on poses 0, 1, 2: primary 0, secondary 1, target 2
        let y = |p: &[Pose<f64>]| residual_left(&track, 2, p).unwrap().y;
        let rot = |k: usize| numeric(&poses, k, y).fixed_columns::<3>(0).into_owned();
        let (dl, dr, di) = (rot(0), rot(1), rot(2));
        assert!((dl + dr + di).amax() < 1e-9 * dl.amax().max(1.0), "{:e}", (dl + dr + di).amax());
    }
}

#[test]
fn target_translation_block_is_theta_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let (poses, track, _) = random_track::<f64, _>(&mut rng, 3, 3, 1e-3).unwrap();
        let (l, r) = (&track.observations[0], &track.observations[1]);
        let theta = scale_left(l, r, &poses[0], &poses[1]).unwrap().theta;
        let y = |p: &[Pose<f64>]| residual_left(&track, 2, p).unwrap().y;
        let dt = numeric(&poses, 2, y).fixed_columns::<3>(3).into_owned();
        // Y is affine in t_i, so the difference quotient is exact up to rounding
        assert!((dt - Matrix3::identity() * theta).amax() < 1e-8, "{dt}");
    }
}
