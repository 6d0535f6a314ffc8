use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quat::Vec3;
use crate::error::{Error, Result};

const DEFAULT_SKELETON: &str = include_str!("../../data/skeleton_smpl22_v1.json");
const DEFAULT_FOOT_JOINTS: [&str; 4] = ["left_ankle", "left_foot", "right_ankle", "right_foot"];

/// Joint hierarchy with parent-local rest offsets in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonDef {
    pub joint_names: Vec<String>,
    pub parent_index: Vec<i64>,
    pub rest_offsets: Vec<Vec3>,
    /// Joints whose speed drives the four foot-contact flags
    /// (left ankle, left toe, right ankle, right toe).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub foot_joints: Vec<String>,
}

#[derive(Deserialize)]
struct SkeletonFile {
    schema_version: u64,
    #[serde(flatten)]
    skeleton: SkeletonDef,
}

impl SkeletonDef {
    /// The bundled 22-joint SMPL-style skeleton.
    pub fn smpl22() -> Self {
        let file: SkeletonFile = serde_json::from_str(DEFAULT_SKELETON).expect("bundled skeleton parses");
        debug_assert_eq!(file.schema_version, 1);
        let sk = file.skeleton;
        sk.validate().expect("bundled skeleton is valid");
        sk
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SkeletonFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
        if file.schema_version != 1 {
            return Err(Error::SchemaVersion {
                found: file.schema_version,
                expected: 1,
            });
        }
        file.skeleton.validate()?;
        Ok(file.skeleton)
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_names.len();
        if j == 0 {
            return Err(Error::invalid("skeleton has no joints"));
        }
        if self.parent_index.len() != j || self.rest_offsets.len() != j {
            return Err(Error::invalid(format!(
                "skeleton arrays disagree: {} names, {} parents, {} offsets",
                j,
                self.parent_index.len(),
                self.rest_offsets.len()
            )));
        }
        if self.parent_index[0] != -1 {
            return Err(Error::invalid("joint 0 must be the root (parent -1)"));
        }
        for (i, &p) in self.parent_index.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= i {
                return Err(Error::invalid(format!(
                    "joint {i} ({}) has parent {p}; parents must precede children and only joint 0 may be a root",
                    self.joint_names[i]
                )));
            }
        }
        if self.rest_offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite rest offset"));
        }
        if !self.foot_joints.is_empty() {
            if self.foot_joints.len() != 4 {
                return Err(Error::invalid("foot_joints must list exactly 4 joints"));
            }
            for n in &self.foot_joints {
                self.joint_index(n)?;
            }
        }
        Ok(())
    }

    pub fn joint_index(&self, name: &str) -> Result<usize> {
        self.joint_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("unknown joint {name:?}")))
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        let p = self.parent_index[joint];
        (p >= 0).then_some(p as usize)
    }

    /// Indices of the four foot-contact joints. Without an explicit
    /// `foot_joints` list the standard ankle/toe names are tried, then the
    /// first four leaf joints.
    pub fn foot_indices(&self) -> Vec<usize> {
        if !self.foot_joints.is_empty() {
            return self.foot_joints.iter().filter_map(|n| self.joint_index(n).ok()).collect();
        }
        let named: Vec<usize> = DEFAULT_FOOT_JOINTS.iter().filter_map(|n| self.joint_index(n).ok()).collect();
        if named.len() == 4 {
            return named;
        }
        let j = self.joint_count();
        let mut leaves: Vec<usize> = (0..j)
            .filter(|&i| !self.parent_index.contains(&(i as i64)))
            .take(4)
            .collect();
        while leaves.len() < 4 {
            leaves.push(0);
        }
        leaves
    }
}
