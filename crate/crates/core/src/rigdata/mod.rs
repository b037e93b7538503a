//! Rigged-model data, dataset files and data conditioning.

pub mod conditioning;
pub mod files;
pub mod sample;
pub mod skeleton;

pub use conditioning::{
    baseline_bone_hits, correct_leaf_bones, joints_outside, randomize_pose, RotationLimits,
};
pub use files::{load_rigged_model, read_manifest, save_rigged_model, DatasetManifest, RiggedModel, Split};
pub use sample::{augment, load_sample, load_split, make_sample, save_sample, AugmentConfig, Sample};
pub use skeleton::{template, Category, Joint, JointSpec, Skeleton, TEMPLATE_JOINT_COUNT};
