//! Skeleton-aware motion data model.

mod clip;
mod compose;
mod features;
mod quat;
mod skeleton;

pub use clip::{
    forward_kinematics, read_motion, resample_clip, write_motion, MotionClip, MotionFile, MOTION_SCHEMA_VERSION,
};
pub use compose::{compose_parts, BodyPartMasks, ChannelMask, Level, Part, RootRotationOwner};
pub use features::{
    from_pose_features, read_features, to_pose_features, write_features, FeatureConfig, FeatureFile, FeatureLayout,
    PoseFeatures, DEFAULT_CONTACT_THRESHOLD, FEATURE_SCHEMA_VERSION,
};
pub use quat::{slerp, Quat, Vec3};
pub use skeleton::SkeletonDef;
