//! Dataset file formats: `rig.json`, `weights.json`, `manifest.json` and
//! the conditioned `joints.json`. JSON files are written pretty-printed with
//! a trailing newline; loading then saving a canonical file reproduces it
//! byte for byte.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use geometry::io::{atomic_write, ply};
use geometry::{ScaleRecord, SkinWeights, TriMesh, UpAxis};
use nalgebra::Point3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rigdata::skeleton::{Category, Joint, JointSpec, Skeleton};

pub const MESH_FILE: &str = "mesh.ply";
pub const RIG_FILE: &str = "rig.json";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLE_FILE: &str = "sample.ply";
pub const JOINTS_FILE: &str = "joints.json";

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::file(path, e))
}

/// Pretty JSON with a trailing newline, the canonical form of every JSON file.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("plain data serializes");
    bytes.push(b'\n');
    bytes
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    Ok(atomic_write(path, &to_json_bytes(value))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigJoint {
    name: String,
    parent: Option<String>,
    head: [f64; 3],
    tail: [f64; 3],
    category: Category,
    leaf: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigFile {
    joints: Vec<RigJoint>,
}

pub fn skeleton_to_json(skeleton: &Skeleton) -> Vec<u8> {
    let joints = skeleton
        .joints()
        .iter()
        .map(|j| RigJoint {
            name: j.name.clone(),
            parent: j.parent.map(|p| skeleton.joint(p).name.clone()),
            head: j.head.into(),
            tail: j.tail.into(),
            category: j.category,
            leaf: j.leaf,
        })
        .collect();
    to_json_bytes(&RigFile { joints })
}

pub fn read_skeleton(path: &Path) -> Result<Skeleton> {
    let rig: RigFile = read_json(path)?;
    let mut joints = Vec::with_capacity(rig.joints.len());
    for (i, j) in rig.joints.iter().enumerate() {
        let parent = match &j.parent {
            None => None,
            Some(p) => Some(
                rig.joints[..i]
                    .iter()
                    .position(|q| &q.name == p)
                    .ok_or_else(|| {
                        CoreError::file(
                            path,
                            format!("joint {i} '{}': parent '{p}' is unknown or listed later", j.name),
                        )
                    })?,
            ),
        };
        joints.push(Joint {
            name: j.name.clone(),
            parent,
            head: Point3::from(j.head),
            tail: Point3::from(j.tail),
            category: j.category,
            leaf: j.leaf,
        });
    }
    Skeleton::new(joints).map_err(|e| CoreError::file(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    weights: SkinWeights,
}

pub fn weights_to_json(weights: &SkinWeights) -> Vec<u8> {
    to_json_bytes(&WeightsFile {
        weights: weights.clone(),
    })
}

pub fn read_weights(path: &Path) -> Result<SkinWeights> {
    let file: WeightsFile = read_json(path)?;
    file.weights
        .validate()
        .map_err(|e| CoreError::file(path, e))?;
    Ok(file.weights)
}

/// Mesh, skeleton and skinning weights of one raw sample.
#[derive(Clone, Debug)]
pub struct RiggedModel {
    pub mesh: TriMesh,
    pub skeleton: Skeleton,
    pub weights: SkinWeights,
}

pub fn load_rigged_model(dir: &Path) -> Result<RiggedModel> {
    let mesh_path = dir.join(MESH_FILE);
    let mesh = ply::read_mesh(&mesh_path)?;
    let skeleton = read_skeleton(&dir.join(RIG_FILE))?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let weights = read_weights(&weights_path)?;
    if weights.len() != mesh.vertices().len() {
        return Err(CoreError::file(
            &weights_path,
            format!(
                "{} weight rows for {} mesh vertices",
                weights.len(),
                mesh.vertices().len()
            ),
        ));
    }
    if let Some(j) = weights.max_joint() {
        if j as usize >= skeleton.len() {
            return Err(CoreError::file(
                &weights_path,
                format!("weights reference joint {j} of a {}-joint rig", skeleton.len()),
            ));
        }
    }
    Ok(RiggedModel {
        mesh,
        skeleton,
        weights,
    })
}

pub fn save_rigged_model(dir: &Path, model: &RiggedModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    ply::write_mesh(&dir.join(MESH_FILE), &model.mesh, &[])?;
    atomic_write(&dir.join(RIG_FILE), &skeleton_to_json(&model.skeleton))?;
    atomic_write(&dir.join(WEIGHTS_FILE), &weights_to_json(&model.weights))?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CoreError::Config(format!(
                "unknown split '{other}', expected train, val or test"
            ))),
        }
    }
}

/// Which files each sample directory must contain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Raw,
    Conditioned,
}

impl DatasetKind {
    pub fn required_files(self) -> &'static [&'static str] {
        match self {
            DatasetKind::Raw => &[MESH_FILE, RIG_FILE, WEIGHTS_FILE],
            DatasetKind::Conditioned => &[SAMPLE_FILE, JOINTS_FILE, MESH_FILE],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub up_axis: UpAxis,
    /// Joint order, names, parents and categories.
    pub joints: Vec<JointSpec>,
    pub splits: Splits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_counts: Option<SplitCounts>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.splits.train.len(),
            val: self.splits.val.len(),
            test: self.splits.test.len(),
        }
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.splits
            .train
            .iter()
            .chain(&self.splits.val)
            .chain(&self.splits.test)
    }

    pub fn categories(&self) -> Vec<Category> {
        self.joints.iter().map(|j| j.category).collect()
    }

    /// Structural checks: disjoint splits, safe ids, a valid joint
    /// hierarchy and matching expected counts.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.all_ids() {
            if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                return Err(CoreError::Data(format!("invalid sample id '{id}'")));
            }
            if !seen.insert(id.as_str()) {
                return Err(CoreError::Data(format!("sample '{id}' appears in more than one split entry")));
            }
        }
        let dummy = vec![Point3::origin(); self.joints.len()];
        Skeleton::from_positions(&self.joints, &dummy)?;
        if let Some(expected) = self.expected_counts {
            if expected != self.counts() {
                return Err(CoreError::Data(format!(
                    "splits hold {:?}, manifest expects {expected:?}",
                    self.counts()
                )));
            }
        }
        Ok(())
    }

    /// Checks that every sample directory holds the files of `kind`.
    pub fn check_files(&self, root: &Path, kind: DatasetKind) -> Result<()> {
        for id in self.all_ids() {
            for f in kind.required_files() {
                let p = root.join(id).join(f);
                if !p.is_file() {
                    return Err(CoreError::file(p, "missing sample file"));
                }
            }
        }
        Ok(())
    }
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let manifest: DatasetManifest = read_json(&path)?;
    manifest.validate().map_err(|e| CoreError::file(&path, e))?;
    Ok(manifest)
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    write_json(&root.join(MANIFEST_FILE), manifest)
}

/// Contents of a conditioned `joints.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointsFile {
    pub source_id: String,
    pub joints: Vec<[f64; 3]>,
    pub scale: ScaleRecord,
}

impl JointsFile {
    pub fn points(&self) -> Vec<Point3<f64>> {
        self.joints.iter().map(|&c| Point3::from(c)).collect()
    }
}

pub fn read_joints(path: &Path) -> Result<JointsFile> {
    let file: JointsFile = read_json(path)?;
    if file.joints.iter().flatten().any(|c| !c.is_finite()) || !(file.scale.height > 0.0) {
        return Err(CoreError::file(path, "joints or scale are not finite and positive"));
    }
    Ok(file)
}

pub fn sample_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rigdata::skeleton::template;

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            up_axis: UpAxis::Y,
            joints: template(),
            splits: Splits {
                train: vec!["a".into(), "b".into()],
                val: vec!["c".into()],
                test: vec!["d".into()],
            },
            expected_counts: None,
        }
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let mut m = manifest();
        assert!(m.validate().is_ok());
        m.splits.test.push("a".into());
        assert!(m.validate().is_err());
    }

    #[test]
    fn expected_counts_are_checked() {
        let mut m = manifest();
        m.expected_counts = Some(SplitCounts {
            train: 2400,
            val: 300,
            test: 300,
        });
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_json_round_trips() {
        let m = manifest();
        let bytes = to_json_bytes(&m);
        let back: DatasetManifest = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_json_bytes(&back), bytes);
    }
}
