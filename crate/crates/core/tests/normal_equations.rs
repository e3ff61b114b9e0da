//! The assembled pose-only normal equations against a dense `JᵀJ` built
//! from the per-residual 3-row Jacobians.

use mcpa_core::base_select::BaseStrategy;
use mcpa_core::optimizer::{build_cost, build_normal_equations, select_all_bases, Mode, Problem};
use mcpa_core::pose_only::{residual_jacobians, Family};
use mcpa_core::synth::{generate_problem, RigPreset, SynthSpec};
use mcpa_core::track::BasePair;
use nalgebra::{DMatrix, DVector};

fn toy(preset: RigPreset, seed: u64) -> Problem<f64> {
    let spec = SynthSpec { rig_preset: preset, n_poses: 5, n_points: 80, sigma_max: 3.0, seed, ..Default::default() };
    let mut p = generate_problem::<f64>(&spec).unwrap().problem;
    select_all_bases(&mut p.tracks, &p.poses, BaseStrategy::Random { seed }).unwrap();
    for (k, t) in p.tracks.iter_mut().enumerate() {
        // interleave poses so same-pose runs are split
        if k % 3 == 0 {
            let n = t.observations.len();
            let base = t.base.unwrap();
            let perm: Vec<usize> = (0..n).rev().collect();
            t.observations = perm.iter().map(|&i| t.observations[i]).collect();
            t.set_base(BasePair::new(n - 1 - base.left, n - 1 - base.right).unwrap()).unwrap();
        }
        // bases on one rig pose, where the rig allows it
        if k % 3 == 1 {
            let obs = &t.observations;
            let pair = (0..obs.len())
                .flat_map(|a| (0..obs.len()).map(move |b| (a, b)))
                .find(|&(a, b)| a != b && obs[a].pose_id == obs[b].pose_id);
            if let Some((a, b)) = pair {
                t.set_base(BasePair::new(a, b).unwrap()).unwrap();
            }
        }
    }
    p
}

fn dense_system(problem: &Problem<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
    let n = 6 * problem.poses.len();
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut cost = 0.0;
    let families: &[Family] = match problem.mode {
        Mode::Mcpalr => &[Family::Left, Family::Right],
        _ => &[Family::Left],
    };
    for t in &problem.tracks {
        let base = t.base.unwrap();
        for &fam in families {
            let primary = if fam == Family::Left { base.left } else { base.right };
            for i in (0..t.len()).filter(|&i| i != primary) {
                let r = residual_jacobians(t, i, &problem.poses, fam).unwrap();
                let mut j = DMatrix::zeros(3, n);
                for (pose, blk) in [(r.pose_i, r.jac_i), (r.pose_l, r.jac_l), (r.pose_r, r.jac_r)] {
                    let mut v = j.view_mut((0, 6 * pose), (3, 6));
                    v += blk.unwrap();
                }
                h += j.transpose() * &j;
                g -= j.transpose() * r.e;
                cost += r.e.norm_squared();
            }
        }
    }
    // gauge pose
    h.view_mut((0, 0), (6, n)).fill(0.0);
    h.view_mut((0, 0), (n, 6)).fill(0.0);
    h.view_mut((0, 0), (6, 6)).fill_with_identity();
    g.rows_mut(0, 6).fill(0.0);
    (h, g, cost)
}

fn check(problem: &Problem<f64>) {
    let ne = build_normal_equations(problem).unwrap();
    let (h, g, cost) = dense_system(problem);
    let scale = h.amax().max(1.0);
    let dh = (&ne.h - &h).amax();
    let dg = (&ne.g - &g).amax();
    assert!(dh <= 1e-9 * scale, "H differs by {dh} (scale {scale})");
    assert!(dg <= 1e-9 * g.amax().max(1.0), "g differs by {dg}");
    assert!((ne.cost - cost).abs() <= 1e-12 * cost.max(1.0));
    assert!((build_cost(problem).unwrap() - cost).abs() <= 1e-12 * cost.max(1.0));
}

#[test]
fn matches_dense_jacobian_products() {
    for preset in [RigPreset::Forward, RigPreset::Omni] {
        for seed in 0..3 {
            for mode in [Mode::Mcpa, Mode::Mcpalr] {
                let mut p = toy(preset, seed);
                p.mode = mode;
                check(&p);
            }
        }
    }
}

#[test]
fn toy_covers_shared_base_poses() {
    let p = toy(RigPreset::Forward, 0);
    let shared = p
        .tracks
        .iter()
        .filter(|t| {
            let b = t.base.unwrap();
            t.observations[b.left].pose_id == t.observations[b.right].pose_id
        })
        .count();
    assert!(shared > 0);
}

#[test]
fn single_pose_system_is_identity() {
    let spec = SynthSpec { n_poses: 2, n_points: 200, seed: 4, ..Default::default() };
    let mut p = generate_problem::<f64>(&spec).unwrap().problem;
    p.poses.truncate(1);
    for t in &mut p.tracks {
        t.observations.retain(|o| o.pose_id == 0);
    }
    p.tracks.retain(|t| t.len() >= 2);
    assert!(!p.tracks.is_empty());
    select_all_bases(&mut p.tracks, &p.poses, BaseStrategy::Roundness).unwrap();
    let ne = build_normal_equations(&p).unwrap();
    assert_eq!(ne.h, DMatrix::identity(6, 6));
    assert!(ne.g.iter().all(|&x| x == 0.0));
}
