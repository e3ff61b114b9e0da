use std::fs;
use std::path::Path;

use mcpa_core::gcm::{project, Camera, CameraExtrinsics, CameraIntrinsics, RigConfig};
use mcpa_core::geometry::{exp_so3, Pose, Rotation};
use mcpa_core::RigConfig64;
use mcpa_io::colmap::{import_colmap_text, parse_images, ImportOptions};
use mcpa_io::problem::{problem_from_str, problem_to_string};
use mcpa_io::IoError;
use nalgebra::{UnitQuaternion, Vector3};

fn stereo_rig() -> RigConfig64 {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap();
    let cam = |x: f64| Camera {
        intrinsics: k,
        extrinsics: CameraExtrinsics { rotation: Rotation::identity(), translation: Vector3::new(x, 0.0, 0.0) },
    };
    RigConfig::new(vec![cam(0.0), cam(0.3)]).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const CAMERAS: &str = "# Camera list\n# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n1 PINHOLE 640 480 500 500 320 240\n";

#[test]
fn empty_points_give_zero_tracks() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cameras.txt", CAMERAS);
    write(dir.path(), "images.txt", "# header\n1 1 0 0 0 0 0 0 1 a.png\n\n");
    write(dir.path(), "points3D.txt", "# only comments\n");
    write(dir.path(), "rig.txt", "1 0 0\n");
    let m = import_colmap_text(dir.path(), &dir.path().join("rig.txt"), stereo_rig(), &ImportOptions::default()).unwrap();
    assert!(m.problem.tracks.is_empty());
    assert_eq!(m.problem.poses.len(), 1);
}

#[test]
fn two_image_one_point_model() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cameras.txt", CAMERAS);
    write(
        dir.path(),
        "images.txt",
        "# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n\
         1 1 0 0 0 0 0 0 1 left.png\n100.5 200.25 7 10 10 -1\n\
         # interleaved comment\n\
         2 1 0 0 0 -0.3 0 0 1 right.png\n5 5 -1 70.5 200.25 7\n",
    );
    write(dir.path(), "points3D.txt", "# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n7 0 0 5 255 0 0 0.1 1 0 2 1\n");
    write(dir.path(), "rig.txt", "# IMAGE_ID POSE_ID CAMERA_ID\n1 0 0\n2 0 1\n");
    let m = import_colmap_text(dir.path(), &dir.path().join("rig.txt"), stereo_rig(), &ImportOptions::default()).unwrap();
    assert_eq!(m.problem.tracks.len(), 1);
    let t = &m.problem.tracks[0];
    assert_eq!(t.observations.len(), 2);
    assert_eq!((t.observations[0].pixel.x, t.observations[0].pixel.y), (100.5, 200.25));
    assert_eq!((t.observations[1].pixel.x, t.observations[1].pixel.y), (70.5, 200.25));
    assert_eq!(t.observations[1].camera_id, 1);
    assert_eq!(t.observations[0].sigma_px, nalgebra::Matrix2::identity());
}

#[test]
fn rig_pose_reproduces_image_poses() {
    // Two rig poses seen by both cameras; every COLMAP image pose must be
    // consistent with the imported rig pose and that camera's extrinsics.
    let rig = stereo_rig();
    let bodies = [
        Pose::new(Rotation::identity(), Vector3::zeros()),
        Pose::new(exp_so3(&Vector3::new(0.05, -0.1, 0.02)), Vector3::new(-0.5, 0.1, 0.2)),
    ];
    let x = Vector3::new(0.2, -0.1, 6.0);
    let mut images = String::new();
    let mut rig_map = String::new();
    let mut track = String::new();
    let mut id = 1;
    for (p, body) in bodies.iter().enumerate() {
        for (c, cam) in rig.cameras().iter().enumerate() {
            // world-to-camera = inverse(extrinsics) ∘ body
            let ext = Pose::new(cam.extrinsics.rotation.clone(), cam.extrinsics.translation);
            let wc = ext.inverse().compose(body);
            let q = UnitQuaternion::from_matrix(wc.rotation.matrix());
            let px = project(&rig, c, body, &x).unwrap().pixel;
            images.push_str(&format!(
                "{id} {} {} {} {} {} {} {} 1 img{id}.png\n{} {} 0\n",
                q.w, q.i, q.j, q.k, wc.translation.x, wc.translation.y, wc.translation.z, px.x, px.y
            ));
            rig_map.push_str(&format!("{id} {p} {c}\n"));
            track.push_str(&format!(" {id} 0"));
            id += 1;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cameras.txt", CAMERAS);
    write(dir.path(), "images.txt", &images);
    write(dir.path(), "points3D.txt", &format!("0 0 0 6 1 2 3 0.5{track}\n"));
    write(dir.path(), "rig.txt", &rig_map);
    let m = import_colmap_text(dir.path(), &dir.path().join("rig.txt"), rig, &ImportOptions::default()).unwrap();
    for (got, want) in m.problem.poses.iter().zip(&bodies) {
        assert!((got.rotation.matrix() - want.rotation.matrix()).amax() < 1e-12);
        assert!((got.translation - want.translation).amax() < 1e-12);
    }
    assert_eq!(m.problem.tracks[0].observations.len(), 4);

    // Import, write, read: stable.
    let text = problem_to_string(&m.problem, None).unwrap();
    let back = problem_from_str(&text, "imported.json").unwrap();
    assert_eq!(back.problem, m.problem);
    assert_eq!(problem_to_string(&back.problem, None).unwrap(), text);
}

#[test]
fn duplicate_rig_slot_is_inconsistent() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cameras.txt", CAMERAS);
    write(dir.path(), "images.txt", "1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 0 0 0 0 0 1 b.png\n\n");
    write(dir.path(), "points3D.txt", "");
    write(dir.path(), "rig.txt", "1 0 1\n2 0 1\n");
    let err = import_colmap_text(dir.path(), &dir.path().join("rig.txt"), stereo_rig(), &ImportOptions::default());
    assert!(matches!(err, Err(IoError::InconsistentRig { first: 1, second: 2, pose_id: 0, camera_id: 1 })), "{err:?}");
}

#[test]
fn malformed_line_reports_file_and_line() {
    let err = parse_images("# c\n1 1 0 0 zero 0 0 0 1 a.png\n\n", "images.txt").unwrap_err();
    match err {
        IoError::Parse { context, message } => {
            assert_eq!(context, "images.txt:2");
            assert!(message.contains("QZ"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn distorted_models_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cameras.txt", "1 SIMPLE_RADIAL 640 480 500 320 240 0.1\n");
    write(dir.path(), "images.txt", "1 1 0 0 0 0 0 0 1 a.png\n\n");
    write(dir.path(), "points3D.txt", "");
    write(dir.path(), "rig.txt", "1 0 0\n");
    let err = import_colmap_text(dir.path(), &dir.path().join("rig.txt"), stereo_rig(), &ImportOptions::default());
    assert!(matches!(err, Err(IoError::Parse { .. })));
}
