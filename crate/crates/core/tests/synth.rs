//! Properties of generated synthetic problems.

use mcpa_core::gcm::project;
use mcpa_core::optimizer::{build_cost, select_all_bases};
use mcpa_core::base_select::BaseStrategy;
use mcpa_core::synth::{generate_problem, RigPreset, SynthSpec, TrajectoryKind};

#[test]
fn same_seed_gives_identical_problems() {
    let spec = SynthSpec { n_poses: 6, n_points: 300, seed: 9, ..Default::default() };
    assert_eq!(generate_problem::<f64>(&spec).unwrap(), generate_problem::<f64>(&spec).unwrap());
    let other = SynthSpec { seed: 10, ..spec };
    assert_ne!(generate_problem::<f64>(&spec).unwrap(), generate_problem::<f64>(&other).unwrap());
}

#[test]
fn desk_scale_observation_count() {
    let s = generate_problem::<f64>(&SynthSpec::default()).unwrap();
    let n = s.problem.observation_count();
    assert!((10_000..=100_000).contains(&n), "{n} observations");
}

#[test]
fn noise_free_pixels_satisfy_projection() {
    for preset in [RigPreset::Forward, RigPreset::Omni] {
        for trajectory in [TrajectoryKind::Linear, TrajectoryKind::Curve] {
            let spec = SynthSpec { rig_preset: preset, trajectory, n_poses: 8, n_points: 400, sigma_max: 0.0, ..Default::default() };
            let s = generate_problem::<f64>(&spec).unwrap();
            for (t, x) in s.problem.tracks.iter().zip(&s.gt_points) {
                assert!(t.len() >= 2);
                for o in &t.observations {
                    let p = project(&s.problem.rig, o.camera_id, &s.gt_poses[o.pose_id], x).unwrap();
                    assert!((p.pixel - o.pixel).norm() < 1e-9);
                    let dir = (s.gt_poses[o.pose_id].transform(x) - o.v).normalize();
                    assert!((dir - o.f).norm() < 1e-12);
                }
            }
            let mut p = s.problem.clone();
            p.poses = s.gt_poses.clone();
            select_all_bases(&mut p.tracks, &p.poses, BaseStrategy::Roundness).unwrap();
            assert!(build_cost(&p).unwrap() < 1e-20);
        }
    }
}

#[test]
fn pixel_noise_is_bounded_by_sigma_max() {
    let spec = SynthSpec { n_poses: 10, n_points: 500, sigma_max: 4.0, seed: 3, ..Default::default() };
    let s = generate_problem::<f64>(&spec).unwrap();
    let mut sq = 0.0;
    let mut n = 0;
    for (t, x) in s.problem.tracks.iter().zip(&s.gt_points) {
        for o in &t.observations {
            let p = project(&s.problem.rig, o.camera_id, &s.gt_poses[o.pose_id], x).unwrap();
            sq += (p.pixel - o.pixel).norm_squared();
            n += 2;
        }
    }
    let std = (sq / n as f64).sqrt();
    assert!(std <= 4.0 && std > 0.5, "{std}");
}
