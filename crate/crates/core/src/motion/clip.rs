use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quat::{add3, slerp, Quat, Vec3};
use super::skeleton::SkeletonDef;
use crate::error::{Error, Result};

pub const MOTION_SCHEMA_VERSION: u64 = 1;

/// Framewise root translation plus parent-local joint rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub fps: f64,
    pub root_translation: Vec<Vec3>,
    /// `joint_rotations[frame][joint]`
    pub joint_rotations: Vec<Vec<Quat>>,
}

impl MotionClip {
    pub fn new(fps: f64, root_translation: Vec<Vec3>, joint_rotations: Vec<Vec<Quat>>) -> Result<Self> {
        let clip = MotionClip {
            fps,
            root_translation,
            joint_rotations,
        };
        clip.validate()?;
        Ok(clip)
    }

    /// A clip holding one pose for `len` frames.
    pub fn constant(fps: f64, len: usize, root: Vec3, pose: Vec<Quat>) -> Result<Self> {
        Self::new(fps, vec![root; len], vec![pose; len])
    }

    pub fn len(&self) -> usize {
        self.root_translation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.root_translation.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_rotations.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if self.root_translation.is_empty() {
            return Err(Error::invalid("motion clip has no frames"));
        }
        if self.joint_rotations.len() != self.root_translation.len() {
            return Err(Error::invalid(format!(
                "{} translation frames but {} rotation frames",
                self.root_translation.len(),
                self.joint_rotations.len()
            )));
        }
        let j = self.joint_count();
        if j == 0 {
            return Err(Error::invalid("motion clip has no joints"));
        }
        for (f, frame) in self.joint_rotations.iter().enumerate() {
            if frame.len() != j {
                return Err(Error::invalid(format!("frame {f} has {} joints, expected {j}", frame.len())));
            }
            for q in frame {
                if !q.is_finite() || (q.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!("frame {f}: non-unit quaternion {q:?}")));
                }
            }
        }
        if self.root_translation.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite root translation"));
        }
        Ok(())
    }

    /// Uniformly time-remap to `target_len` frames: SLERP on rotations,
    /// linear interpolation on translation. First and last frames are kept.
    pub fn resample(&self, target_len: usize) -> Result<MotionClip> {
        if target_len == 0 {
            return Err(Error::invalid("target length must be at least 1"));
        }
        let n = self.len();
        if n == 0 {
            return Err(Error::invalid("cannot resample an empty clip"));
        }
        if target_len == n {
            return Ok(self.clone());
        }
        let mut root = Vec::with_capacity(target_len);
        let mut rots = Vec::with_capacity(target_len);
        for i in 0..target_len {
            let (lo, frac) = source_position(i, target_len, n);
            if frac == 0.0 {
                root.push(self.root_translation[lo]);
                rots.push(self.joint_rotations[lo].clone());
                continue;
            }
            let hi = lo + 1;
            let (a, b) = (self.root_translation[lo], self.root_translation[hi]);
            root.push([
                a[0] + frac * (b[0] - a[0]),
                a[1] + frac * (b[1] - a[1]),
                a[2] + frac * (b[2] - a[2]),
            ]);
            rots.push(
                self.joint_rotations[lo]
                    .iter()
                    .zip(&self.joint_rotations[hi])
                    .map(|(q0, q1)| slerp(q0, q1, frac))
                    .collect(),
            );
        }
        Ok(MotionClip {
            fps: self.fps,
            root_translation: root,
            joint_rotations: rots,
        })
    }
}

/// Source frame and interpolation weight for output frame `i`.
fn source_position(i: usize, target_len: usize, n: usize) -> (usize, f64) {
    if target_len == 1 || n == 1 {
        return (0, 0.0);
    }
    if i == target_len - 1 {
        return (n - 1, 0.0);
    }
    let num = (i * (n - 1)) as f64;
    let s = num / (target_len - 1) as f64;
    let lo = s.floor() as usize;
    (lo, s - lo as f64)
}

pub fn resample_clip(clip: &MotionClip, target_len: usize) -> Result<MotionClip> {
    clip.resample(target_len)
}

/// World-space joint positions, `[frame][joint]`.
pub fn forward_kinematics(clip: &MotionClip, skeleton: &SkeletonDef) -> Result<Vec<Vec<Vec3>>> {
    let j = skeleton.joint_count();
    if clip.joint_count() != j {
        return Err(Error::invalid(format!(
            "clip has {} joints but skeleton has {j}",
            clip.joint_count()
        )));
    }
    let mut out = Vec::with_capacity(clip.len());
    let mut global = vec![Quat::IDENTITY; j];
    for (root, locals) in clip.root_translation.iter().zip(&clip.joint_rotations) {
        let mut pos = vec![[0.0; 3]; j];
        pos[0] = *root;
        global[0] = locals[0];
        for i in 1..j {
            let p = skeleton.parent_index[i] as usize;
            pos[i] = add3(pos[p], global[p].rotate(skeleton.rest_offsets[i]));
            global[i] = global[p].mul(&locals[i]);
        }
        out.push(pos);
    }
    Ok(out)
}

/// On-disk motion record. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFile {
    pub schema_version: u64,
    pub fps: f64,
    pub joint_names: Vec<String>,
    pub parent_index: Vec<i64>,
    pub rest_offsets: Vec<Vec3>,
    pub root_translation: Vec<Vec3>,
    pub joint_rotations: Vec<Vec<Quat>>,
}

impl MotionFile {
    pub fn from_parts(clip: &MotionClip, skeleton: &SkeletonDef) -> Self {
        MotionFile {
            schema_version: MOTION_SCHEMA_VERSION,
            fps: clip.fps,
            joint_names: skeleton.joint_names.clone(),
            parent_index: skeleton.parent_index.clone(),
            rest_offsets: skeleton.rest_offsets.clone(),
            root_translation: clip.root_translation.clone(),
            joint_rotations: clip.joint_rotations.clone(),
        }
    }

    pub fn into_parts(self) -> Result<(MotionClip, SkeletonDef)> {
        if self.schema_version != MOTION_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: MOTION_SCHEMA_VERSION,
            });
        }
        let skeleton = SkeletonDef {
            joint_names: self.joint_names,
            parent_index: self.parent_index,
            rest_offsets: self.rest_offsets,
            foot_joints: Vec::new(),
        };
        skeleton.validate()?;
        let clip = MotionClip::new(self.fps, self.root_translation, self.joint_rotations)?;
        if clip.joint_count() != skeleton.joint_count() {
            return Err(Error::invalid("joint_rotations width does not match joint_names"));
        }
        Ok((clip, skeleton))
    }
}

pub fn read_motion(path: &Path) -> Result<(MotionClip, SkeletonDef)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: MotionFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
    file.into_parts().map_err(|e| match e {
        Error::InvalidArgument(m) => Error::parse(path, None, m),
        other => other,
    })
}

pub fn write_motion(path: &Path, clip: &MotionClip, skeleton: &SkeletonDef) -> Result<()> {
    let text = serde_json::to_string(&MotionFile::from_parts(clip, skeleton)).expect("motion serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn z_ramp(n: usize) -> MotionClip {
        let root = (0..n).map(|i| [0.0, 0.0, i as f64 / (n - 1) as f64]).collect();
        MotionClip::new(20.0, root, vec![vec![Quat::IDENTITY; 2]; n]).unwrap()
    }

    #[test]
    fn resample_linear_translation() {
        let out = z_ramp(11).resample(6).unwrap();
        let expect = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        assert_eq!(out.len(), 6);
        for (r, e) in out.root_translation.iter().zip(expect) {
            assert!((r[2] - e).abs() < 1e-12, "{r:?} vs {e}");
        }
    }

    #[test]
    fn resample_identity_and_endpoints() {
        let clip = z_ramp(7);
        assert_eq!(clip.resample(7).unwrap(), clip);
        let up = clip.resample(23).unwrap();
        assert_eq!(up.root_translation[0], clip.root_translation[0]);
        assert_eq!(up.root_translation[22], clip.root_translation[6]);
        assert_eq!(up.fps, clip.fps);
        assert!(clip.resample(0).is_err());
    }

    #[test]
    fn resample_single_frame_and_to_single_frame() {
        let one = MotionClip::constant(30.0, 1, [1.0, 2.0, 3.0], vec![Quat::IDENTITY]).unwrap();
        let many = one.resample(5).unwrap();
        assert!(many.root_translation.iter().all(|r| *r == [1.0, 2.0, 3.0]));
        let back = z_ramp(4).resample(1).unwrap();
        assert_eq!(back.root_translation, vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn resample_constant_pose_stays_constant() {
        let pose = vec![Quat::from_axis_angle([0.2, 1.0, 0.0], 0.9), Quat::from_axis_angle([1.0, 0.0, 0.0], -0.4)];
        let clip = MotionClip::constant(20.0, 9, [0.5, 0.9, -1.0], pose.clone()).unwrap();
        let out = clip.resample(31).unwrap();
        for frame in &out.joint_rotations {
            for (q, p) in frame.iter().zip(&pose) {
                assert!(q.angle_to(p) < 1e-7);
            }
        }
        assert!(out.root_translation.iter().all(|r| (r[0] - 0.5).abs() < 1e-15));
    }

    #[test]
    fn fk_zero_offsets_collapse_to_root() {
        let sk = SkeletonDef {
            joint_names: vec!["a".into(), "b".into(), "c".into()],
            parent_index: vec![-1, 0, 1],
            rest_offsets: vec![[0.0; 3]; 3],
            foot_joints: vec![],
        };
        let q = Quat::from_axis_angle([1.0, 1.0, 0.0], 1.0);
        let clip = MotionClip::constant(20.0, 2, [0.3, 1.0, -2.0], vec![q; 3]).unwrap();
        for frame in forward_kinematics(&clip, &sk).unwrap() {
            for p in frame {
                assert_eq!(p, [0.3, 1.0, -2.0]);
            }
        }
    }

    #[test]
    fn fk_two_joint_chain_rotated_parent() {
        let sk = SkeletonDef {
            joint_names: vec!["root".into(), "child".into()],
            parent_index: vec![-1, 0],
            rest_offsets: vec![[0.0; 3], [1.0, 0.0, 0.0]],
            foot_joints: vec![],
        };
        let rz = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        let clip = MotionClip::constant(20.0, 1, [2.0, 0.0, 0.0], vec![rz, Quat::IDENTITY]).unwrap();
        let p = &forward_kinematics(&clip, &sk).unwrap()[0];
        let expect = [2.0, 1.0, 0.0];
        for i in 0..3 {
            assert!((p[1][i] - expect[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn fk_identity_rotations_accumulate_offsets() {
        let sk = SkeletonDef::smpl22();
        let root = [0.1, 0.9, 0.2];
        let clip = MotionClip::constant(20.0, 1, root, vec![Quat::IDENTITY; 22]).unwrap();
        let p = &forward_kinematics(&clip, &sk).unwrap()[0];
        for j in 0..22 {
            let mut expect = root;
            let mut k = j;
            while k != 0 {
                expect = add3(expect, sk.rest_offsets[k]);
                k = sk.parent_index[k] as usize;
            }
            for a in 0..3 {
                assert!((p[j][a] - expect[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fk_joint_mismatch_is_rejected() {
        let clip = MotionClip::constant(20.0, 1, [0.0; 3], vec![Quat::IDENTITY; 3]).unwrap();
        assert!(forward_kinematics(&clip, &SkeletonDef::smpl22()).is_err());
    }

    #[test]
    fn invalid_clips() {
        assert!(MotionClip::new(20.0, vec![], vec![]).is_err());
        assert!(MotionClip::new(20.0, vec![[0.0; 3]], vec![vec![Quat::new(2.0, 0.0, 0.0, 0.0)]]).is_err());
        assert!(MotionClip::new(0.0, vec![[0.0; 3]], vec![vec![Quat::IDENTITY]]).is_err());
        assert!(MotionClip::new(20.0, vec![[f64::NAN, 0.0, 0.0]], vec![vec![Quat::IDENTITY]]).is_err());
    }

    #[test]
    fn motion_file_layout() {
        let sk = SkeletonDef {
            joint_names: vec!["root".into()],
            parent_index: vec![-1],
            rest_offsets: vec![[0.0; 3]],
            foot_joints: vec![],
        };
        let clip = MotionClip::constant(20.0, 1, [0.0, 1.5, 0.0], vec![Quat::IDENTITY]).unwrap();
        let text = serde_json::to_string(&MotionFile::from_parts(&clip, &sk)).unwrap();
        assert_eq!(
            text,
            r#"{"schema_version":1,"fps":20.0,"joint_names":["root"],"parent_index":[-1],"rest_offsets":[[0.0,0.0,0.0]],"root_translation":[[0.0,1.5,0.0]],"joint_rotations":[[[1.0,0.0,0.0,0.0]]]}"#
        );
        let back: MotionFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_parts().unwrap().0, clip);
    }

    #[test]
    fn motion_file_version_checked() {
        let text = r#"{"schema_version":2,"fps":20.0,"joint_names":["root"],"parent_index":[-1],"rest_offsets":[[0,0,0]],"root_translation":[[0,0,0]],"joint_rotations":[[[1,0,0,0]]]}"#;
        let f: MotionFile = serde_json::from_str(text).unwrap();
        assert!(matches!(f.into_parts(), Err(Error::SchemaVersion { found: 2, .. })));
    }
}
