//! Root-relative pose features in the 263-wide layout (for 22 joints).
//!
//! Per frame, in order:
//!
//! | block            | width      | content                                         |
//! |------------------|------------|-------------------------------------------------|
//! | root             | 4          | yaw velocity, local x/z velocity, root height   |
//! | joint positions  | 3 (J - 1)  | non-root joints, root-XZ-relative, de-yawed     |
//! | joint rotations  | 6 (J - 1)  | parent-local rotations of non-root joints, 6D   |
//! | joint velocities | 3 J        | forward differences, expressed in the yaw frame |
//! | foot contacts    | 4          | 1 when foot-joint speed^2 < threshold           |
//!
//! Velocities at frame `i` are differences `i -> i + 1`; the last frame
//! repeats the previous frame's velocities, so a clip of `L` frames maps to
//! `L` feature rows. Root rotation is represented by its heading only.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::clip::{forward_kinematics, MotionClip};
use super::quat::{rotate_yaw, sub3, Quat, Vec3};
use super::skeleton::SkeletonDef;
use crate::error::{Error, Result};

pub const FEATURE_SCHEMA_VERSION: u64 = 1;
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 2e-3;

/// Column offsets for a given joint count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub joints: usize,
}

impl FeatureLayout {
    pub fn new(joints: usize) -> Self {
        FeatureLayout { joints }
    }

    pub fn width(&self) -> usize {
        4 + (self.joints - 1) * 3 + (self.joints - 1) * 6 + self.joints * 3 + 4
    }

    pub fn positions(&self) -> usize {
        4
    }

    pub fn rotations(&self) -> usize {
        4 + (self.joints - 1) * 3
    }

    pub fn velocities(&self) -> usize {
        self.rotations() + (self.joints - 1) * 6
    }

    pub fn contacts(&self) -> usize {
        self.velocities() + self.joints * 3
    }

    /// Joint count for a feature width, if the width is a valid layout.
    pub fn from_width(width: usize) -> Option<Self> {
        // width = 12 J - 1
        ((width + 1).is_multiple_of(12) && width >= 23).then(|| FeatureLayout::new((width + 1) / 12))
    }
}

/// Row-major `frames x dim` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFeatures {
    dim: usize,
    data: Vec<f64>,
}

impl PoseFeatures {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "feature buffer of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(PoseFeatures { dim, data })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        PoseFeatures {
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("feature rows have unequal widths"));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn max_abs_diff(&self, other: &PoseFeatures) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Squared foot speed, (m/frame)^2, below which a contact is flagged.
    pub contact_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

fn push3(row: &mut Vec<f64>, v: Vec3) {
    row.extend_from_slice(&v);
}

pub fn to_pose_features(clip: &MotionClip, skeleton: &SkeletonDef, cfg: &FeatureConfig) -> Result<PoseFeatures> {
    let len = clip.len();
    if len < 2 {
        return Err(Error::invalid(format!(
            "pose features need at least 2 frames, clip has {len}"
        )));
    }
    let positions = forward_kinematics(clip, skeleton)?;
    let j = skeleton.joint_count();
    let layout = FeatureLayout::new(j);
    let feet = skeleton.foot_indices();
    let yaw: Vec<f64> = clip.joint_rotations.iter().map(|r| r[0].yaw()).collect();

    let mut data = Vec::with_capacity(len * layout.width());
    for i in 0..len {
        // velocity source frame; the last row repeats the previous step
        let n = i.min(len - 2);
        let root = clip.root_translation[i];
        let row_start = data.len();

        let root_vel = sub3(clip.root_translation[n + 1], clip.root_translation[n]);
        let local = rotate_yaw(root_vel, -yaw[n]);
        data.push(wrap_angle(yaw[n + 1] - yaw[n]));
        data.push(local[0]);
        data.push(local[2]);
        data.push(root[1]);

        for p in &positions[i][1..] {
            push3(&mut data, rotate_yaw([p[0] - root[0], p[1], p[2] - root[2]], -yaw[i]));
        }
        for q in &clip.joint_rotations[i][1..] {
            data.extend_from_slice(&q.to_6d());
        }
        for (a, b) in positions[n].iter().zip(&positions[n + 1]) {
            push3(&mut data, rotate_yaw(sub3(*b, *a), -yaw[n]));
        }
        for &f in &feet {
            let v = sub3(positions[n + 1][f], positions[n][f]);
            let speed2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            data.push(if speed2 < cfg.contact_threshold { 1.0 } else { 0.0 });
        }
        debug_assert_eq!(data.len() - row_start, layout.width());
    }
    PoseFeatures::new(layout.width(), data)
}

/// Rebuild an animatable clip: yaw integrated from the yaw velocity, root XZ
/// integrated from the de-yawed velocities starting at the origin, height
/// and non-root rotations read directly.
pub fn from_pose_features(features: &PoseFeatures, skeleton: &SkeletonDef, fps: f64) -> Result<MotionClip> {
    let j = skeleton.joint_count();
    let layout = FeatureLayout::new(j);
    if features.dim() != layout.width() {
        return Err(Error::invalid(format!(
            "feature width {} does not match {} for a {j}-joint skeleton",
            features.dim(),
            layout.width()
        )));
    }
    let len = features.frames();
    if len == 0 {
        return Err(Error::invalid("feature sequence has no frames"));
    }
    let mut yaw = 0.0;
    let mut xz = [0.0, 0.0];
    let mut root_translation = Vec::with_capacity(len);
    let mut joint_rotations = Vec::with_capacity(len);
    for (i, row) in features.rows().enumerate() {
        root_translation.push([xz[0], row[3], xz[1]]);
        let mut rots = Vec::with_capacity(j);
        rots.push(Quat::from_yaw(yaw));
        let base = layout.rotations();
        for k in 0..j - 1 {
            let q = Quat::from_6d(&row[base + 6 * k..base + 6 * k + 6])
                .map_err(|e| Error::invalid(format!("frame {i}, joint {}: {e}", k + 1)))?;
            rots.push(q);
        }
        joint_rotations.push(rots);

        let step = rotate_yaw([row[1], 0.0, row[2]], yaw);
        xz[0] += step[0];
        xz[1] += step[2];
        yaw += row[0];
    }
    MotionClip::new(fps, root_translation, joint_rotations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub schema_version: u64,
    pub feature_dim: usize,
    pub frames: Vec<Vec<f64>>,
}

pub fn read_features(path: &Path) -> Result<PoseFeatures> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: FeatureFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
    if file.schema_version != FEATURE_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: file.schema_version,
            expected: FEATURE_SCHEMA_VERSION,
        });
    }
    if file.frames.iter().any(|r| r.len() != file.feature_dim) {
        return Err(Error::parse(path, None, "row width differs from feature_dim"));
    }
    PoseFeatures::new(file.feature_dim, file.frames.concat())
}

pub fn write_features(path: &Path, features: &PoseFeatures) -> Result<()> {
    let file = FeatureFile {
        schema_version: FEATURE_SCHEMA_VERSION,
        feature_dim: features.dim(),
        frames: features.to_rows(),
    };
    let text = serde_json::to_string(&file).expect("features serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
