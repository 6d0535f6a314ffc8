use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::clip::MotionClip;
use super::skeleton::SkeletonDef;
use crate::error::{Error, Result};

const DEFAULT_MASKS: &str = include_str!("../../data/body_part_masks_v1.json");

/// Granularity of a retrieval / composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Full,
    Half,
    Fine,
}

impl Level {
    pub fn parts(self) -> &'static [Part] {
        match self {
            Level::Full => &[Part::Full],
            Level::Half => &[Part::Upper, Part::Lower],
            Level::Fine => &Part::FINE,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Full => "full",
            Level::Half => "half",
            Level::Fine => "fine",
        })
    }
}

/// A retrievable slice of the body at some level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Full,
    Upper,
    Lower,
    Head,
    Torso,
    LeftArm,
    RightArm,
    LowerBody,
    Trajectory,
}

impl Part {
    pub const FINE: [Part; 6] = [
        Part::Head,
        Part::Torso,
        Part::LeftArm,
        Part::RightArm,
        Part::LowerBody,
        Part::Trajectory,
    ];

    pub const ALL: [Part; 9] = [
        Part::Full,
        Part::Upper,
        Part::Lower,
        Part::Head,
        Part::Torso,
        Part::LeftArm,
        Part::RightArm,
        Part::LowerBody,
        Part::Trajectory,
    ];

    pub fn level(self) -> Level {
        match self {
            Part::Full => Level::Full,
            Part::Upper | Part::Lower => Level::Half,
            _ => Level::Fine,
        }
    }

    /// Key of this part's description in a database entry.
    pub fn key(self) -> &'static str {
        match self {
            Part::Full => "full",
            Part::Upper => "half.upper",
            Part::Lower => "half.lower",
            Part::Head => "fine.head",
            Part::Torso => "fine.torso",
            Part::LeftArm => "fine.left_arm",
            Part::RightArm => "fine.right_arm",
            Part::LowerBody => "fine.lower_body",
            Part::Trajectory => "fine.trajectory",
        }
    }

    pub fn from_key(key: &str) -> Option<Part> {
        Part::ALL.into_iter().find(|p| p.key() == key)
    }

    /// Wording used when asking an LLM about this part.
    pub fn display_name(self) -> &'static str {
        match self {
            Part::Full => "full body",
            Part::Upper => "upper body",
            Part::Lower => "lower body",
            Part::Head => "head",
            Part::Torso => "torso",
            Part::LeftArm => "left arm",
            Part::RightArm => "right arm",
            Part::LowerBody => "lower body",
            Part::Trajectory => "trajectory",
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Which fine-level part owns the root (pelvis) rotation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootRotationOwner {
    #[default]
    Trajectory,
    LowerBody,
}

/// Channels owned by one part: joint rotations plus optionally root translation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    pub joints: BTreeSet<usize>,
    pub translation: bool,
}

impl ChannelMask {
    fn union(masks: &[&ChannelMask]) -> ChannelMask {
        ChannelMask {
            joints: masks.iter().flat_map(|m| m.joints.iter().copied()).collect(),
            translation: masks.iter().any(|m| m.translation),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct MaskFile {
    schema_version: u64,
    parts: BTreeMap<Part, PartSpec>,
}

#[derive(Debug, Clone, Deserialize)]
struct PartSpec {
    joints: Vec<String>,
    #[serde(default)]
    carries_translation: bool,
    #[serde(default)]
    carries_root_rotation: bool,
}

/// Fine-level channel partition resolved against a skeleton; half and full
/// masks derive from it.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyPartMasks {
    joint_count: usize,
    fine: BTreeMap<Part, ChannelMask>,
}

impl BodyPartMasks {
    /// Bundled masks for the 22-joint skeleton.
    pub fn default_for(skeleton: &SkeletonDef, owner: RootRotationOwner) -> Result<Self> {
        Self::from_json(DEFAULT_MASKS, skeleton, owner)
    }

    pub fn load(path: &Path, skeleton: &SkeletonDef, owner: RootRotationOwner) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, skeleton, owner).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::parse(path, None, m),
            other => other,
        })
    }

    pub fn from_json(text: &str, skeleton: &SkeletonDef, owner: RootRotationOwner) -> Result<Self> {
        let file: MaskFile = serde_json::from_str(text).map_err(|e| Error::invalid(format!("mask file: {e}")))?;
        if file.schema_version != 1 {
            return Err(Error::SchemaVersion {
                found: file.schema_version,
                expected: 1,
            });
        }
        let mut fine = BTreeMap::new();
        for part in Part::FINE {
            let spec = file
                .parts
                .get(&part)
                .ok_or_else(|| Error::invalid(format!("mask file lacks part {}", part.key())))?;
            let mut joints = BTreeSet::new();
            for name in &spec.joints {
                joints.insert(skeleton.joint_index(name)?);
            }
            if spec.carries_root_rotation && !joints.contains(&0) {
                joints.insert(0);
            }
            fine.insert(
                part,
                ChannelMask {
                    joints,
                    translation: spec.carries_translation,
                },
            );
        }
        if let Some(extra) = file.parts.keys().find(|p| p.level() != Level::Fine) {
            return Err(Error::invalid(format!("mask file may only list fine parts, found {extra}")));
        }
        if owner == RootRotationOwner::LowerBody {
            for m in fine.values_mut() {
                m.joints.remove(&0);
            }
            fine.get_mut(&Part::LowerBody).expect("fine part").joints.insert(0);
        }
        let masks = BodyPartMasks {
            joint_count: skeleton.joint_count(),
            fine,
        };
        for level in [Level::Full, Level::Half, Level::Fine] {
            masks.check_partition(level)?;
        }
        Ok(masks)
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn mask(&self, part: Part) -> ChannelMask {
        let fine = |p: Part| &self.fine[&p];
        match part {
            Part::Full => ChannelMask {
                joints: (0..self.joint_count).collect(),
                translation: true,
            },
            Part::Upper => ChannelMask::union(&[
                fine(Part::Head),
                fine(Part::Torso),
                fine(Part::LeftArm),
                fine(Part::RightArm),
            ]),
            Part::Lower => ChannelMask::union(&[fine(Part::LowerBody), fine(Part::Trajectory)]),
            p => fine(p).clone(),
        }
    }

    /// Every joint channel and the translation channel belong to exactly one
    /// part of `level`.
    pub fn check_partition(&self, level: Level) -> Result<()> {
        let mut owner: Vec<Option<Part>> = vec![None; self.joint_count];
        let mut translation: Option<Part> = None;
        for &part in level.parts() {
            let m = self.mask(part);
            for &j in &m.joints {
                if j >= self.joint_count {
                    return Err(Error::invalid(format!("{part} mask references joint {j}")));
                }
                if let Some(prev) = owner[j] {
                    return Err(Error::invalid(format!("joint {j} claimed by both {prev} and {part}")));
                }
                owner[j] = Some(part);
            }
            if m.translation {
                if let Some(prev) = translation {
                    return Err(Error::invalid(format!("translation claimed by both {prev} and {part}")));
                }
                translation = Some(part);
            }
        }
        if let Some(j) = owner.iter().position(Option::is_none) {
            return Err(Error::invalid(format!("joint {j} not covered at {level} level")));
        }
        if translation.is_none() {
            return Err(Error::invalid(format!("no part carries translation at {level} level")));
        }
        Ok(())
    }

    /// Source part of every joint channel (index = joint) and of translation.
    pub fn provenance(&self, level: Level) -> Result<(Vec<Part>, Part)> {
        self.check_partition(level)?;
        let mut joints = vec![Part::Full; self.joint_count];
        let mut translation = Part::Full;
        for &part in level.parts() {
            let m = self.mask(part);
            for j in m.joints {
                joints[j] = part;
            }
            if m.translation {
                translation = part;
            }
        }
        Ok((joints, translation))
    }
}

/// Recombine per-part source clips into one full-body clip of `target_len`
/// frames. Each source is resampled first; joint rotations are copied by
/// mask and root translation comes from the translation-carrying part.
pub fn compose_parts(
    selections: &BTreeMap<Part, MotionClip>,
    level: Level,
    target_len: usize,
    masks: &BodyPartMasks,
) -> Result<MotionClip> {
    for &part in level.parts() {
        if !selections.contains_key(&part) {
            return Err(Error::invalid(format!("composition at {level} level is missing part {part}")));
        }
    }
    if let Some(extra) = selections.keys().find(|p| p.level() != level) {
        return Err(Error::invalid(format!("part {extra} does not belong to the {level} level")));
    }
    let (joint_src, translation_src) = masks.provenance(level)?;

    let mut resampled = BTreeMap::new();
    for (&part, clip) in selections {
        if clip.joint_count() != masks.joint_count() {
            return Err(Error::invalid(format!(
                "{part} source has {} joints, masks expect {}",
                clip.joint_count(),
                masks.joint_count()
            )));
        }
        resampled.insert(part, clip.resample(target_len)?);
    }

    let base = &resampled[&translation_src];
    let joint_rotations = (0..target_len)
        .map(|f| {
            joint_src
                .iter()
                .enumerate()
                .map(|(j, part)| resampled[part].joint_rotations[f][j])
                .collect()
        })
        .collect();
    MotionClip::new(base.fps, base.root_translation.clone(), joint_rotations)
}
