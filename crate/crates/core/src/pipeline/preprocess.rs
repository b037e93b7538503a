use std::path::Path;

use geometry::io::atomic_write;
use geometry::normals::DEFAULT_K_NORMALS;
use geometry::Bvh;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::provenance;
use crate::rigdata::conditioning::{
    correct_leaf_bones, joints_outside, randomize_pose, AcceptedRotation, LeafRecord, RotationLimits,
    DEFAULT_RETRIES,
};
use crate::rigdata::files::{
    load_rigged_model, read_manifest, sample_dir, to_json_bytes, write_manifest, DatasetKind, RiggedModel, Splits,
};
use crate::rigdata::sample::{make_sample, save_sample};

pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessOptions {
    pub seed: u64,
    pub pose_randomize: bool,
    pub limits: RotationLimits,
    pub retries: usize,
    pub k_normals: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            seed: 0,
            pose_randomize: false,
            limits: RotationLimits::zero(),
            retries: DEFAULT_RETRIES,
            k_normals: DEFAULT_K_NORMALS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub pose_seed: u64,
    pub leaf_corrections: Vec<LeafRecord>,
    pub accepted_rotations: Vec<AcceptedRotation>,
    pub rejected_rotations: usize,
    pub degenerate_normals: usize,
    pub joints_outside: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessProvenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub options: PreprocessOptions,
    pub samples: Vec<SampleRecord>,
    pub failures: Vec<FailureRecord>,
}

/// Pose seed of one sample, independent of processing order.
pub fn sample_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{id}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn condition_one(
    raw: &Path,
    out: &Path,
    id: &str,
    up: geometry::UpAxis,
    options: &PreprocessOptions,
    comments: &[String],
) -> Result<SampleRecord> {
    let model = load_rigged_model(&sample_dir(raw, id))?;
    let bvh = Bvh::build(&model.mesh)?;
    let corrected = correct_leaf_bones(&bvh, &model.skeleton)?;
    let mut warnings = corrected.warnings.clone();
    let pose_seed = sample_seed(options.seed, id);
    let model = RiggedModel {
        skeleton: corrected.skeleton,
        ..model
    };
    let (mesh, skeleton, accepted, rejected) = if options.pose_randomize {
        let posed = randomize_pose(&model, &options.limits, pose_seed, options.retries)?;
        (posed.mesh, posed.skeleton, posed.accepted, posed.rejected)
    } else {
        (model.mesh, model.skeleton, Vec::new(), 0)
    };
    let outside = joints_outside(&Bvh::build(&mesh)?, &skeleton);
    if !outside.is_empty() {
        warnings.push(format!("{} joints are not inside the mesh", outside.len()));
    }
    let build = make_sample(id, &mesh, &skeleton, up, options.k_normals)?;
    if !build.sample.joints_within_bounds() {
        warnings.push("some joints lie outside the cloud's bounding box".into());
    }
    save_sample(&sample_dir(out, id), &build, comments)?;
    for w in &warnings {
        log::warn!("{id}: {w}");
    }
    Ok(SampleRecord {
        id: id.to_string(),
        pose_seed,
        leaf_corrections: corrected.records,
        accepted_rotations: accepted,
        rejected_rotations: rejected,
        degenerate_normals: build.degenerate_normals,
        joints_outside: outside,
        warnings,
    })
}

/// Conditions every sample of a raw dataset into `out`: leaf correction,
/// optional pose randomization, normalization and normal estimation.
/// Samples that fail are skipped and listed in the provenance record.
pub fn preprocess(raw: &Path, out: &Path, options: &PreprocessOptions) -> Result<PreprocessProvenance> {
    options.limits.validate()?;
    if !raw.is_dir() {
        return Err(CoreError::Config(format!("raw dataset directory {} does not exist", raw.display())));
    }
    let manifest = read_manifest(raw)?;
    manifest.check_files(raw, DatasetKind::Raw)?;
    std::fs::create_dir_all(out).map_err(|e| CoreError::io(out, e))?;
    let hash = provenance::config_hash(options);
    let comments = vec![provenance::stamp(&hash)];
    let ids: Vec<&String> = manifest.all_ids().collect();
    let results: Vec<Result<SampleRecord>> = ids
        .par_iter()
        .map(|id| condition_one(raw, out, id, manifest.up_axis, options, &comments))
        .collect();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(rec) => samples.push(rec),
            Err(e) => {
                log::error!("{id}: {e}");
                failures.push(FailureRecord {
                    id: id.to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    let keep = |list: &[String]| -> Vec<String> {
        list.iter()
            .filter(|id| !failures.iter().any(|f| &f.id == *id))
            .cloned()
            .collect()
    };
    let conditioned = crate::rigdata::files::DatasetManifest {
        up_axis: manifest.up_axis,
        joints: manifest.joints.clone(),
        splits: Splits {
            train: keep(&manifest.splits.train),
            val: keep(&manifest.splits.val),
            test: keep(&manifest.splits.test),
        },
        expected_counts: if failures.is_empty() { manifest.expected_counts } else { None },
    };
    write_manifest(out, &conditioned)?;
    let record = PreprocessProvenance {
        tool: provenance::TOOL.into(),
        version: provenance::VERSION.into(),
        config_hash: hash,
        options: options.clone(),
        samples,
        failures,
    };
    atomic_write(&out.join(PROVENANCE_FILE), &to_json_bytes(&record))?;
    Ok(record)
}
