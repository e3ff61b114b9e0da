//! Import of COLMAP text models (`cameras.txt`, `images.txt`, `points3D.txt`)
//! into a rig problem.
//!
//! COLMAP reconstructs individual images; which images were captured
//! together by the rig is supplied separately as a map
//! `IMAGE_ID POSE_ID CAMERA_ID`, one image per line.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use mcpa_core::gcm::pixel_to_ray;
use mcpa_core::geometry::{Pose, Rotation};
use mcpa_core::optimizer::Problem;
use mcpa_core::track::Track;
use mcpa_core::{Pose64, Problem64, RigConfig64};
use nalgebra::{Matrix2, Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::error::{IoError, IoResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub id: u64,
    pub model: String,
    pub width: u64,
    pub height: u64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u64,
    /// World-to-camera rotation.
    pub rotation: Rotation<f64>,
    pub translation: Vector3<f64>,
    pub camera_id: u64,
    pub name: String,
    /// Keypoints `(x, y, point3D_id)`; id −1 marks an unmatched keypoint.
    pub points2d: Vec<(f64, f64, i64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint {
    pub id: u64,
    pub xyz: Vector3<f64>,
    /// `(image_id, point2d_idx)` pairs.
    pub track: Vec<(u64, usize)>,
}

/// Rig slot of one COLMAP image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RigSlot {
    pub pose_id: usize,
    pub camera_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportOptions {
    /// Covariance assigned to every imported pixel.
    pub sigma_px: Matrix2<f64>,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self { sigma_px: Matrix2::identity() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportedModel {
    pub problem: Problem64,
    /// Points with fewer than two observations, left out of the problem.
    pub skipped_points: usize,
}

/// Non-comment lines with their 1-based line numbers. Blank lines are kept
/// because `images.txt` uses them for images without keypoints.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.starts_with('#'))
}

struct Fields<'a> {
    file: &'a str,
    line: usize,
    tokens: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn new(file: &'a str, line: usize, text: &'a str) -> Self {
        Self { file, line, tokens: text.split_whitespace() }
    }

    fn err(&self, message: String) -> IoError {
        IoError::parse(format!("{}:{}", self.file, self.line), message)
    }

    fn next<T: std::str::FromStr>(&mut self, field: &str) -> IoResult<T> {
        let tok = self.tokens.next().ok_or_else(|| self.err(format!("missing field {field}")))?;
        tok.parse().map_err(|_| self.err(format!("invalid {field} {tok:?}")))
    }

    fn rest(&mut self) -> Vec<&'a str> {
        self.tokens.by_ref().collect()
    }
}

pub fn parse_cameras(text: &str, file: &str) -> IoResult<BTreeMap<u64, ColmapCamera>> {
    let mut cameras = BTreeMap::new();
    for (line, l) in content_lines(text).filter(|(_, l)| !l.is_empty()) {
        let mut f = Fields::new(file, line, l);
        let id = f.next("CAMERA_ID")?;
        let model: String = f.next("MODEL")?;
        let width = f.next("WIDTH")?;
        let height = f.next("HEIGHT")?;
        let params = f
            .rest()
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| f.err(format!("invalid camera parameter {t:?}"))))
            .collect::<IoResult<Vec<_>>>()?;
        cameras.insert(id, ColmapCamera { id, model, width, height, params });
    }
    Ok(cameras)
}

pub fn parse_images(text: &str, file: &str) -> IoResult<BTreeMap<u64, ColmapImage>> {
    let mut images = BTreeMap::new();
    let mut lines = content_lines(text).peekable();
    loop {
        // Skip blank lines between records; a header line is never blank.
        while lines.peek().is_some_and(|(_, l)| l.is_empty()) {
            lines.next();
        }
        let Some((line, header)) = lines.next() else { break };
        let mut f = Fields::new(file, line, header);
        let id: u64 = f.next("IMAGE_ID")?;
        let q: [f64; 4] = [f.next("QW")?, f.next("QX")?, f.next("QY")?, f.next("QZ")?];
        let t = Vector3::new(f.next("TX")?, f.next("TY")?, f.next("TZ")?);
        let camera_id = f.next("CAMERA_ID")?;
        let name = f.rest().join(" ");
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if !(quat.norm() > 1e-12) {
            return Err(f.err("zero quaternion".into()));
        }
        let rotation = Rotation::from_matrix_unchecked(*UnitQuaternion::from_quaternion(quat).to_rotation_matrix().matrix());

        // The keypoint line is mandatory but may be empty.
        let (kline, ktext) = lines.next().unwrap_or((line + 1, ""));
        let tokens: Vec<&str> = ktext.split_whitespace().collect();
        let kerr = |m: String| IoError::parse(format!("{file}:{kline}"), m);
        if tokens.len() % 3 != 0 {
            return Err(kerr(format!("keypoint list of image {id} has {} values, not a multiple of 3", tokens.len())));
        }
        let points2d = tokens
            .chunks(3)
            .map(|c| {
                let x = c[0].parse().map_err(|_| kerr(format!("invalid keypoint x {:?}", c[0])))?;
                let y = c[1].parse().map_err(|_| kerr(format!("invalid keypoint y {:?}", c[1])))?;
                let p = c[2].parse().map_err(|_| kerr(format!("invalid POINT3D_ID {:?}", c[2])))?;
                Ok((x, y, p))
            })
            .collect::<IoResult<Vec<_>>>()?;
        if images.insert(id, ColmapImage { id, rotation, translation: t, camera_id, name, points2d }).is_some() {
            return Err(IoError::parse(format!("{file}:{line}"), format!("duplicate IMAGE_ID {id}")));
        }
    }
    Ok(images)
}

pub fn parse_points3d(text: &str, file: &str) -> IoResult<Vec<ColmapPoint>> {
    let mut points = Vec::new();
    for (line, l) in content_lines(text).filter(|(_, l)| !l.is_empty()) {
        let mut f = Fields::new(file, line, l);
        let id = f.next("POINT3D_ID")?;
        let xyz = Vector3::new(f.next("X")?, f.next("Y")?, f.next("Z")?);
        for field in ["R", "G", "B"] {
            f.next::<u8>(field)?;
        }
        f.next::<f64>("ERROR")?;
        let rest = f.rest();
        if rest.len() % 2 != 0 {
            return Err(f.err(format!("track of point {id} has an odd number of values")));
        }
        let track = rest
            .chunks(2)
            .map(|c| {
                let img = c[0].parse().map_err(|_| f.err(format!("invalid IMAGE_ID {:?}", c[0])))?;
                let idx = c[1].parse().map_err(|_| f.err(format!("invalid POINT2D_IDX {:?}", c[1])))?;
                Ok((img, idx))
            })
            .collect::<IoResult<Vec<_>>>()?;
        points.push(ColmapPoint { id, xyz, track });
    }
    Ok(points)
}

/// Parses `IMAGE_ID POSE_ID CAMERA_ID` lines; `#` starts a comment line.
pub fn parse_rig_map(text: &str, file: &str) -> IoResult<BTreeMap<u64, RigSlot>> {
    let mut map = BTreeMap::new();
    let mut slots: HashMap<(usize, usize), u64> = HashMap::new();
    for (line, l) in content_lines(text).filter(|(_, l)| !l.is_empty()) {
        let mut f = Fields::new(file, line, l);
        let image: u64 = f.next("IMAGE_ID")?;
        let slot = RigSlot { pose_id: f.next("POSE_ID")?, camera_id: f.next("CAMERA_ID")? };
        if !f.rest().is_empty() {
            return Err(f.err("trailing fields".into()));
        }
        if let Some(&first) = slots.get(&(slot.pose_id, slot.camera_id)) {
            return Err(IoError::InconsistentRig { first, second: image, pose_id: slot.pose_id, camera_id: slot.camera_id });
        }
        slots.insert((slot.pose_id, slot.camera_id), image);
        if map.insert(image, slot).is_some() {
            return Err(f.err(format!("image {image} mapped twice")));
        }
    }
    Ok(map)
}

const PINHOLE_MODELS: [&str; 2] = ["PINHOLE", "SIMPLE_PINHOLE"];

/// Builds a problem from parsed model files.
///
/// Each rig pose is derived from the mapped image with the lowest rig camera
/// id: with the image's world-to-camera `(R_img, t_img)` and the camera's
/// camera-to-body extrinsics `(R_c, t_c)`, the body pose is
/// `(R_c·R_img, R_c·t_img + t_c)`.
pub fn build_problem(
    images: &BTreeMap<u64, ColmapImage>,
    cameras: &BTreeMap<u64, ColmapCamera>,
    points: &[ColmapPoint],
    rig_map: &BTreeMap<u64, RigSlot>,
    rig: RigConfig64,
    options: &ImportOptions,
) -> IoResult<ImportedModel> {
    for img in images.values() {
        let cam = cameras.get(&img.camera_id).ok_or_else(|| {
            IoError::parse("images.txt", format!("image {} references unknown camera {}", img.id, img.camera_id))
        })?;
        if !PINHOLE_MODELS.contains(&cam.model.as_str()) {
            return Err(IoError::parse(
                "cameras.txt",
                format!("camera {} uses unsupported model {} (pinhole models only)", cam.id, cam.model),
            ));
        }
    }

    let mut pose_sources: BTreeMap<usize, (usize, u64)> = BTreeMap::new();
    for (&image_id, slot) in rig_map {
        let Some(_) = images.get(&image_id) else {
            return Err(IoError::parse("rig map", format!("image {image_id} is not in images.txt")));
        };
        if slot.camera_id >= rig.len() {
            return Err(IoError::parse("rig map", format!("image {image_id} maps to camera {} outside the rig", slot.camera_id)));
        }
        let entry = pose_sources.entry(slot.pose_id).or_insert((slot.camera_id, image_id));
        if slot.camera_id < entry.0 {
            *entry = (slot.camera_id, image_id);
        }
    }
    let n_poses = pose_sources.len();
    if let Some((&last, _)) = pose_sources.last_key_value() {
        if last + 1 != n_poses {
            return Err(IoError::parse("rig map", format!("pose ids must be contiguous from 0 (max {last}, count {n_poses})")));
        }
    }

    let mut poses: Vec<Pose64> = Vec::with_capacity(n_poses);
    for (cam_id, image_id) in pose_sources.values() {
        let img = &images[image_id];
        let ext = &rig.cameras()[*cam_id].extrinsics;
        let rotation = ext.rotation.compose(&img.rotation);
        let translation = ext.rotation.rotate(&img.translation) + ext.translation;
        poses.push(Pose::new(rotation, translation));
    }

    let mut tracks = Vec::new();
    let mut skipped = 0;
    for p in points {
        let mut observations = Vec::with_capacity(p.track.len());
        for &(image_id, idx) in &p.track {
            let ctx = || format!("points3D.txt point {}", p.id);
            let img = images.get(&image_id).ok_or_else(|| IoError::parse(ctx(), format!("unknown image {image_id}")))?;
            let slot = rig_map.get(&image_id).ok_or_else(|| IoError::parse(ctx(), format!("image {image_id} has no rig slot")))?;
            let &(x, y, _) = img
                .points2d
                .get(idx)
                .ok_or_else(|| IoError::parse(ctx(), format!("keypoint {idx} out of range in image {image_id}")))?;
            let ray = pixel_to_ray(&rig, slot.camera_id, slot.pose_id, &Vector2::new(x, y), &options.sigma_px)?;
            observations.push(ray);
        }
        if observations.len() < 2 {
            skipped += 1;
            continue;
        }
        tracks.push(Track::new(observations)?);
    }

    if poses.is_empty() {
        return Err(IoError::parse("rig map", "no images mapped to rig poses"));
    }
    let problem = Problem::new(rig, poses, tracks)?;
    Ok(ImportedModel { problem, skipped_points: skipped })
}

/// Reads `cameras.txt`, `images.txt` and `points3D.txt` from `dir`.
pub fn import_colmap_text(
    dir: &Path,
    rig_map: &Path,
    rig: RigConfig64,
    options: &ImportOptions,
) -> IoResult<ImportedModel> {
    let read = |name: &str| -> IoResult<String> { Ok(fs::read_to_string(dir.join(name))?) };
    let cameras = parse_cameras(&read("cameras.txt")?, "cameras.txt")?;
    let images = parse_images(&read("images.txt")?, "images.txt")?;
    let points = parse_points3d(&read("points3D.txt")?, "points3D.txt")?;
    let map_name = rig_map.display().to_string();
    let map = parse_rig_map(&fs::read_to_string(rig_map)?, &map_name)?;
    build_problem(&images, &cameras, &points, &map, rig, options)
}
