//! Equal-depth and geometric-equivalence properties of the pose-only constraint.

use mcpa_core::geometry::{apply_right_perturbation, Perturbation};
use mcpa_core::pose_only::{reconstruct_from_base, residual_left, residual_right, scale_left, scale_right};
use mcpa_core::synth::random_track;
use mcpa_core::track::BasePair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn left_depth_is_independent_of_the_partner() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..2000 {
        let (poses, track, _) = random_track::<f64, _>(&mut rng, 6, 4, 1e-3).unwrap();
        let obs = &track.observations;
        let l = &obs[0];
        let reference = scale_left(l, &obs[1], &poses[l.pose_id], &poses[obs[1].pose_id]).unwrap().s;
        for o in &obs[2..] {
            let Ok(s) = scale_left(l, o, &poses[l.pose_id], &poses[o.pose_id]) else { continue };
            if s.theta < 1e-3 {
                continue;
            }
            assert!((s.s - reference).abs() < 1e-10 * reference.max(1.0), "{} vs {reference}", s.s);
        }
    }
}

#[test]
fn residuals_vanish_at_the_generating_poses() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..2000 {
        let (poses, track, _) = random_track::<f64, _>(&mut rng, 5, 3, 1e-3).unwrap();
        for i in 1..track.len() {
            assert!(residual_left(&track, i, &poses).unwrap().e.norm() < 1e-12);
        }
        for i in (0..track.len()).filter(|&i| i != 1) {
            assert!(residual_right(&track, i, &poses).unwrap().e.norm() < 1e-12);
        }
    }
}

#[test]
fn residual_equals_reprojection_of_the_implied_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut checked = 0;
    while checked < 2000 {
        let (mut poses, track, _) = random_track::<f64, _>(&mut rng, 4, 4, 1e-2).unwrap();
        for p in &mut poses {
            let d: Vec<f64> = (0..6).map(|_| rng.random_range(-0.02..0.02)).collect();
            *p = apply_right_perturbation(p, &Perturbation::from_slice(&d));
        }
        let obs = &track.observations;
        let (l, r) = (&obs[0], &obs[1]);
        let Ok(s) = scale_left(l, r, &poses[l.pose_id], &poses[r.pose_id]) else { continue };
        let x = reconstruct_from_base(l, &poses[l.pose_id], s.s);
        let i = rng.random_range(1..track.len());
        let o = &obs[i];
        let predicted = (poses[o.pose_id].transform(&x) - o.v).normalize();
        let e = residual_left(&track, i, &poses).unwrap().e;
        assert!((e - (predicted - o.f)).amax() < 1e-10);
        checked += 1;
    }
}

#[test]
fn right_family_is_the_left_family_of_the_swapped_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..500 {
        let (mut poses, track, _) = random_track::<f64, _>(&mut rng, 5, 3, 1e-3).unwrap();
        for p in &mut poses {
            let d: Vec<f64> = (0..6).map(|_| rng.random_range(-0.02..0.02)).collect();
            *p = apply_right_perturbation(p, &Perturbation::from_slice(&d));
        }
        let mut swapped = track.clone();
        swapped.set_base(BasePair::new(1, 0).unwrap()).unwrap();
        for i in (0..track.len()).filter(|&i| i != 1) {
            let a = residual_right(&track, i, &poses).unwrap().e;
            let b = residual_left(&swapped, i, &poses).unwrap().e;
            assert!((a - b).amax() < 1e-12);
        }
        let (l, r) = (&track.observations[0], &track.observations[1]);
        let (pl, pr) = (&poses[l.pose_id], &poses[r.pose_id]);
        assert_eq!(scale_right(l, r, pl, pr).unwrap(), scale_left(r, l, pr, pl).unwrap());
    }
}

#[test]
fn residual_norm_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..500 {
        let (mut poses, track, _) = random_track::<f64, _>(&mut rng, 4, 4, 1e-3).unwrap();
        for p in &mut poses {
            let d: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            *p = apply_right_perturbation(p, &Perturbation::from_slice(&d));
        }
        for i in 1..track.len() {
            if let Ok(r) = residual_left(&track, i, &poses) {
                assert!(r.e.norm() <= 2.0 + 1e-12);
            }
        }
    }
}
