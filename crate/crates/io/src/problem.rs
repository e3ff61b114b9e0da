//! Versioned JSON problem and pose files.
//!
//! Observations are stored as pixels with their 2×2 covariance; rays are
//! recomputed through the rig on read, so files do not depend on how the
//! ray model is parameterized.

use std::fs;
use std::path::Path;

use mcpa_core::gcm::{pixel_to_ray, Camera, CameraExtrinsics, CameraIntrinsics, RigConfig};
use mcpa_core::geometry::{Pose, Rotation};
use mcpa_core::optimizer::Problem;
use mcpa_core::track::{BasePair, Track};
use mcpa_core::{Pose64, Problem64, RigConfig64};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{IoError, IoResult};
use crate::json;

pub const PROBLEM_VERSION: &str = "mcpa-problem/1";
pub const POSES_VERSION: &str = "mcpa-poses/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Camera-to-body rotation, row-major.
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    /// Camera centre in the body frame.
    pub t: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigRecord {
    pub cameras: Vec<CameraRecord>,
}

/// World-to-body transform `X_b = R·X_w + t`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub t: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub pose: usize,
    pub camera: usize,
    pub u: f64,
    pub v: f64,
    /// Pixel covariance, row-major 2×2.
    pub sigma_px: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub observations: Vec<ObservationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_point: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: String,
    pub rig: RigRecord,
    pub poses: Vec<PoseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_poses: Option<Vec<PoseRecord>>,
    pub tracks: Vec<TrackRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosesFile {
    pub version: String,
    pub poses: Vec<PoseRecord>,
}

/// A problem together with the optional ground truth stored beside it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedProblem {
    pub problem: Problem64,
    pub gt_poses: Option<Vec<Pose64>>,
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
}

fn from_row_major(a: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(a)
}

fn check_rotation(m: &Matrix3<f64>, context: &str) -> IoResult<()> {
    let err = (m.transpose() * m - Matrix3::identity()).amax();
    if !(err < 1e-6) || !(m.determinant() > 0.0) {
        return Err(IoError::parse(context, format!("not a rotation matrix (orthogonality error {err:e})")));
    }
    Ok(())
}

impl From<&Pose64> for PoseRecord {
    fn from(p: &Pose64) -> Self {
        Self { rotation: row_major(p.rotation.matrix()), t: p.translation.into() }
    }
}

impl PoseRecord {
    pub fn to_pose(&self, context: &str) -> IoResult<Pose64> {
        let r = from_row_major(&self.rotation);
        check_rotation(&r, context)?;
        Ok(Pose::new(Rotation::from_matrix_unchecked(r), Vector3::from(self.t)))
    }
}

impl RigRecord {
    pub fn from_rig(rig: &RigConfig64) -> Self {
        let cameras = rig
            .cameras()
            .iter()
            .map(|c| {
                let k = &c.intrinsics;
                CameraRecord {
                    fx: k.fx,
                    fy: k.fy,
                    cx: k.cx,
                    cy: k.cy,
                    width: k.width,
                    height: k.height,
                    rotation: row_major(c.extrinsics.rotation.matrix()),
                    t: c.extrinsics.translation.into(),
                }
            })
            .collect();
        Self { cameras }
    }

    pub fn to_rig(&self, context: &str) -> IoResult<RigConfig64> {
        let mut cameras = Vec::with_capacity(self.cameras.len());
        for (k, c) in self.cameras.iter().enumerate() {
            let ctx = format!("{context}.cameras[{k}]");
            let intrinsics = CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height)
                .map_err(|e| IoError::parse(&ctx, e.to_string()))?;
            let r = from_row_major(&c.rotation);
            check_rotation(&r, &ctx)?;
            let extrinsics =
                CameraExtrinsics { rotation: Rotation::from_matrix_unchecked(r), translation: Vector3::from(c.t) };
            cameras.push(Camera { intrinsics, extrinsics });
        }
        RigConfig::new(cameras).map_err(|e| IoError::parse(context, e.to_string()))
    }
}

impl ProblemFile {
    pub fn from_problem(problem: &Problem64, gt_poses: Option<&[Pose64]>) -> Self {
        let tracks = problem
            .tracks
            .iter()
            .map(|t| TrackRecord {
                observations: t
                    .observations
                    .iter()
                    .map(|o| ObservationRecord {
                        pose: o.pose_id,
                        camera: o.camera_id,
                        u: o.pixel.x,
                        v: o.pixel.y,
                        sigma_px: [o.sigma_px[(0, 0)], o.sigma_px[(0, 1)], o.sigma_px[(1, 0)], o.sigma_px[(1, 1)]],
                    })
                    .collect(),
                base: t.base.map(|b| [b.left, b.right]),
                gt_point: t.world_hint.map(Into::into),
            })
            .collect();
        Self {
            version: PROBLEM_VERSION.to_string(),
            rig: RigRecord::from_rig(&problem.rig),
            poses: problem.poses.iter().map(PoseRecord::from).collect(),
            gt_poses: gt_poses.map(|g| g.iter().map(PoseRecord::from).collect()),
            tracks,
        }
    }

    /// Validates ids and rebuilds the in-memory problem.
    pub fn to_problem(&self) -> IoResult<LoadedProblem> {
        let rig = self.rig.to_rig("rig")?;
        let poses = convert_poses(&self.poses, "poses")?;
        let gt_poses = match &self.gt_poses {
            Some(g) if g.len() != poses.len() => {
                return Err(IoError::parse("gt_poses", format!("{} entries for {} poses", g.len(), poses.len())))
            }
            Some(g) => Some(convert_poses(g, "gt_poses")?),
            None => None,
        };

        let mut tracks = Vec::with_capacity(self.tracks.len());
        for (k, rec) in self.tracks.iter().enumerate() {
            let ctx = format!("tracks[{k}]");
            let mut observations = Vec::with_capacity(rec.observations.len());
            for (j, o) in rec.observations.iter().enumerate() {
                let octx = format!("{ctx}.observations[{j}]");
                if o.pose >= poses.len() {
                    return Err(IoError::parse(octx, format!("pose {} out of range (have {})", o.pose, poses.len())));
                }
                if o.camera >= rig.len() {
                    return Err(IoError::parse(octx, format!("camera {} out of range (have {})", o.camera, rig.len())));
                }
                let sigma = Matrix2::new(o.sigma_px[0], o.sigma_px[1], o.sigma_px[2], o.sigma_px[3]);
                let ray = pixel_to_ray(&rig, o.camera, o.pose, &Vector2::new(o.u, o.v), &sigma)
                    .map_err(|e| IoError::parse(&octx, e.to_string()))?;
                observations.push(ray);
            }
            let mut track = Track::new(observations).map_err(|e| IoError::parse(&ctx, e.to_string()))?;
            if let Some([l, r]) = rec.base {
                let base = BasePair::new(l, r).map_err(|e| IoError::parse(format!("{ctx}.base"), e.to_string()))?;
                track.set_base(base).map_err(|e| IoError::parse(format!("{ctx}.base"), e.to_string()))?;
            }
            track.world_hint = rec.gt_point.map(Vector3::from);
            tracks.push(track);
        }
        let problem = Problem::new(rig, poses, tracks).map_err(|e| IoError::parse("problem", e.to_string()))?;
        Ok(LoadedProblem { problem, gt_poses })
    }
}

fn convert_poses(records: &[PoseRecord], field: &str) -> IoResult<Vec<Pose64>> {
    records.iter().enumerate().map(|(k, p)| p.to_pose(&format!("{field}[{k}]"))).collect()
}

/// Parses `text` as `T`, reporting the JSON path and line/column on failure.
pub(crate) fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> IoResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        IoError::parse(
            format!("{origin} at {path} (line {}, column {})", inner.line(), inner.column()),
            inner.to_string(),
        )
    })
}

#[derive(Deserialize)]
struct VersionOnly {
    version: Option<String>,
}

/// Like [`parse_json`], but the version tag is checked first so that files of another format version
/// fail with [`IoError::VersionMismatch`] rather than a schema error.
fn parse_versioned<T: DeserializeOwned>(text: &str, origin: &str, expected: &str) -> IoResult<T> {
    // A truncated or malformed document fails this probe too; fall through so
    // the full parse reports the location.
    if let Ok(VersionOnly { version }) = serde_json::from_str::<VersionOnly>(text) {
        match version {
            Some(v) if v != expected => {
                return Err(IoError::VersionMismatch { found: v, expected: expected.to_string() })
            }
            None => return Err(IoError::parse(origin, "missing version tag")),
            _ => {}
        }
    }
    parse_json(text, origin)
}

pub fn problem_to_string(problem: &Problem64, gt_poses: Option<&[Pose64]>) -> IoResult<String> {
    json::to_string(&ProblemFile::from_problem(problem, gt_poses))
}

pub fn problem_from_str(text: &str, origin: &str) -> IoResult<LoadedProblem> {
    parse_versioned::<ProblemFile>(text, origin, PROBLEM_VERSION)?.to_problem()
}

pub fn write_problem(path: &Path, problem: &Problem64, gt_poses: Option<&[Pose64]>) -> IoResult<()> {
    fs::write(path, problem_to_string(problem, gt_poses)?)?;
    Ok(())
}

pub fn read_problem(path: &Path) -> IoResult<LoadedProblem> {
    let text = fs::read_to_string(path)?;
    problem_from_str(&text, &path.display().to_string())
}

pub fn poses_to_string(poses: &[Pose64]) -> IoResult<String> {
    json::to_string(&PosesFile { version: POSES_VERSION.to_string(), poses: poses.iter().map(PoseRecord::from).collect() })
}

pub fn write_poses(path: &Path, poses: &[Pose64]) -> IoResult<()> {
    fs::write(path, poses_to_string(poses)?)?;
    Ok(())
}

pub fn read_poses(path: &Path) -> IoResult<Vec<Pose64>> {
    let text = fs::read_to_string(path)?;
    let file: PosesFile = parse_versioned(&text, &path.display().to_string(), POSES_VERSION)?;
    convert_poses(&file.poses, "poses")
}

/// Reads a standalone rig description (`{"cameras": [...]}`).
pub fn read_rig(path: &Path) -> IoResult<RigConfig64> {
    let text = fs::read_to_string(path)?;
    let origin = path.display().to_string();
    parse_json::<RigRecord>(&text, &origin)?.to_rig(&origin)
}

pub fn rig_to_string(rig: &RigConfig64) -> IoResult<String> {
    json::to_string(&RigRecord::from_rig(rig))
}
