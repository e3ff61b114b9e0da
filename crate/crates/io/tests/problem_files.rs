use mcpa_core::base_select::BaseStrategy;
use mcpa_core::optimizer::select_all_bases;
use mcpa_core::synth::{generate_problem, SynthSpec};
use mcpa_io::problem::{poses_to_string, problem_from_str, problem_to_string, read_poses, write_poses};
use mcpa_io::{read_problem, write_problem, IoError};

fn small() -> mcpa_core::synth::SyntheticProblem<f64> {
    let spec = SynthSpec { n_poses: 4, n_points: 60, sigma_max: 2.0, seed: 3, ..SynthSpec::default() };
    let mut s = generate_problem::<f64>(&spec).unwrap();
    let poses = s.problem.poses.clone();
    select_all_bases(&mut s.problem.tracks, &poses, BaseStrategy::Roundness).unwrap();
    s
}

#[test]
fn write_then_read_is_structurally_equal() {
    let s = small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    write_problem(&path, &s.problem, Some(&s.gt_poses)).unwrap();
    let loaded = read_problem(&path).unwrap();
    assert_eq!(loaded.problem, s.problem);
    assert_eq!(loaded.gt_poses.as_deref(), Some(s.gt_poses.as_slice()));
    // Writing the loaded problem again gives the same bytes.
    let again = problem_to_string(&loaded.problem, loaded.gt_poses.as_deref()).unwrap();
    assert_eq!(again, std::fs::read_to_string(&path).unwrap());
}

#[test]
fn poses_round_trip() {
    let s = small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("poses.json");
    write_poses(&path, &s.gt_poses).unwrap();
    assert_eq!(read_poses(&path).unwrap(), s.gt_poses);
}

#[test]
fn truncated_file_names_the_record() {
    let s = small();
    let text = problem_to_string(&s.problem, None).unwrap();
    let cut = text.find("\"tracks\"").unwrap() + 200;
    match problem_from_str(&text[..cut], "cut.json") {
        Err(IoError::Parse { context, .. }) => {
            assert!(context.contains("tracks"), "{context}");
            assert!(context.contains("line"), "{context}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn wrong_field_type_reports_path() {
    let s = small();
    let text = problem_to_string(&s.problem, None).unwrap();
    let bad = text.replacen("\"camera\": 0", "\"camera\": \"zero\"", 1);
    match problem_from_str(&bad, "bad.json") {
        Err(IoError::Parse { context, .. }) => assert!(context.contains("observations"), "{context}"),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn unknown_version_is_rejected() {
    let s = small();
    let text = problem_to_string(&s.problem, None).unwrap().replace("mcpa-problem/1", "mcpa-problem/9");
    match problem_from_str(&text, "v.json") {
        Err(IoError::VersionMismatch { found, expected }) => {
            assert_eq!(found, "mcpa-problem/9");
            assert_eq!(expected, "mcpa-problem/1");
        }
        other => panic!("expected version mismatch, got {other:?}"),
    }
    let poses = poses_to_string(&s.gt_poses).unwrap();
    assert!(matches!(problem_from_str(&poses, "poses.json"), Err(IoError::VersionMismatch { .. })));
}

#[test]
fn out_of_range_ids_are_rejected() {
    let s = small();
    let text = problem_to_string(&s.problem, None).unwrap();
    let bad = text.replacen("\"pose\": 0", "\"pose\": 99", 1);
    match problem_from_str(&bad, "ids.json") {
        Err(IoError::Parse { context, message }) => {
            assert!(context.starts_with("tracks["), "{context}");
            assert!(message.contains("pose 99"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn output_is_lf_only_and_deterministic() {
    let s = small();
    let a = problem_to_string(&s.problem, Some(&s.gt_poses)).unwrap();
    let b = problem_to_string(&s.problem, Some(&s.gt_poses)).unwrap();
    assert_eq!(a, b);
    assert!(!a.contains('\r'));
    assert!(a.ends_with('\n'));
}
