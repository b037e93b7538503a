use std::path::Path;

use geometry::io::ply;
use geometry::Bvh;
use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::eval::report::{mpjpe_csv, pcj_csv, pcj_svg};
use crate::eval::{default_factors, mpjpe, pcj_curve, sample_thresholds, MetricReport, PcjConfig, PcjCurve};
use crate::model::Checkpoint;
use crate::pipeline::predict::PredictionFile;
use crate::provenance;
use crate::rigdata::files::{
    read_json, read_manifest, sample_dir, DatasetKind, DatasetManifest, JointsFile, Split, JOINTS_FILE, MESH_FILE,
};
use crate::rigdata::sample::{load_split, Sample};
use crate::rigdata::skeleton::Skeleton;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub split: Split,
    pub pcj: PcjConfig,
    pub factors: Vec<f64>,
    /// Label of the `method` column.
    pub method: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: Split::Test,
            pcj: PcjConfig::default(),
            factors: default_factors(),
            method: "ours".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    pub curve: PcjCurve,
    pub thresholds: Vec<Vec<Option<f64>>>,
    /// `(sample id, joint name)` of joints left out of PCJ.
    pub flagged: Vec<(String, String)>,
    pub stamp: String,
    pub mpjpe_csv: String,
    pub pcj_csv: String,
    pub pcj_svg: String,
}

impl Evaluation {
    /// Writes `mpjpe.csv`, `pcj.csv` and, if asked, `pcj.svg`.
    pub fn write(&self, dir: &Path, svg: bool) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        geometry::io::atomic_write(&dir.join("mpjpe.csv"), self.mpjpe_csv.as_bytes())?;
        geometry::io::atomic_write(&dir.join("pcj.csv"), self.pcj_csv.as_bytes())?;
        if svg {
            geometry::io::atomic_write(&dir.join("pcj.svg"), self.pcj_svg.as_bytes())?;
        }
        Ok(())
    }
}

struct SplitData {
    manifest: DatasetManifest,
    samples: Vec<Sample>,
}

fn load(dataset: &Path, split: Split) -> Result<SplitData> {
    if !dataset.is_dir() {
        return Err(CoreError::Config(format!("dataset directory {} does not exist", dataset.display())));
    }
    let manifest = read_manifest(dataset)?;
    manifest.check_files(dataset, DatasetKind::Conditioned)?;
    let samples = load_split(dataset, &manifest, split)?;
    if samples.is_empty() {
        return Err(CoreError::Data(format!("split {split:?} of {} is empty", dataset.display())));
    }
    Ok(SplitData { manifest, samples })
}

fn score(data: &SplitData, dataset: &Path, preds: Vec<Vec<Point3<f64>>>, options: &EvalOptions, hash: String) -> Result<Evaluation> {
    let categories = data.manifest.categories();
    let gts: Vec<Vec<Point3<f64>>> = data.samples.iter().map(|s| s.joints.clone()).collect();
    let report = mpjpe(&preds, &gts, &categories)?;
    let thresholds: Vec<Vec<Option<f64>>> = data
        .samples
        .par_iter()
        .map(|s| {
            let mesh = ply::read_mesh(&sample_dir(dataset, &s.id).join(MESH_FILE))?;
            let skeleton = Skeleton::from_positions(&data.manifest.joints, &s.joints)?;
            sample_thresholds(&Bvh::build(&mesh)?, &skeleton, &options.pcj)
        })
        .collect::<Result<_>>()?;
    let curve = pcj_curve(&preds, &gts, &thresholds, &categories, &options.factors)?;
    let flagged = curve
        .excluded
        .iter()
        .map(|&(s, j)| (data.samples[s].id.clone(), data.manifest.joints[j].name.clone()))
        .collect();
    let stamp = provenance::stamp(&hash);
    let method = options.method.replace(',', ";");
    Ok(Evaluation {
        mpjpe_csv: mpjpe_csv(&stamp, &[(method, &report)]),
        pcj_csv: pcj_csv(&stamp, &curve),
        pcj_svg: pcj_svg(&stamp, &curve),
        report,
        curve,
        thresholds,
        flagged,
        stamp,
    })
}

/// Scores a checkpoint on one split of a conditioned dataset.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    dataset: &Path,
    options: &EvalOptions,
    expect_normals: Option<bool>,
) -> Result<Evaluation> {
    let data = load(dataset, options.split)?;
    let cfg = &checkpoint.header.model;
    if cfg.joint_count != data.manifest.joints.len() || checkpoint.header.joints != data.manifest.joints {
        return Err(CoreError::Contract(format!(
            "checkpoint predicts {} joints that do not match the dataset's {} template joints",
            cfg.joint_count,
            data.manifest.joints.len()
        )));
    }
    if let Some(want) = expect_normals {
        if want != cfg.use_normals {
            return Err(CoreError::Contract(format!(
                "checkpoint was trained with use_normals = {} but {} was requested",
                cfg.use_normals, want
            )));
        }
    }
    let preds = crate::train::predict_all(&checkpoint.model, &data.samples)?;
    let hash = provenance::config_hash(&(options, provenance::config_hash(&checkpoint.encode())));
    score(&data, dataset, preds, options, hash)
}

/// Either a conditioned `joints.json` or one written by `predict`.
#[derive(Deserialize)]
#[serde(untagged)]
enum AnyJoints {
    Prediction(PredictionFile),
    Conditioned(JointsFile),
}

/// Scores stored predictions: `<dir>/<id>/joints.json` for every sample
/// of the split, in normalized coordinates.
pub fn evaluate_predictions(predictions: &Path, dataset: &Path, options: &EvalOptions) -> Result<Evaluation> {
    let data = load(dataset, options.split)?;
    let preds = data
        .samples
        .iter()
        .map(|s| {
            let path = predictions.join(&s.id).join(JOINTS_FILE);
            Ok(match read_json::<AnyJoints>(&path)? {
                AnyJoints::Prediction(p) => p.normalized_points(),
                AnyJoints::Conditioned(j) => j.points(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let digest = preds
        .iter()
        .flatten()
        .flat_map(|p| [p.x, p.y, p.z])
        .map(f64::to_bits)
        .collect::<Vec<u64>>();
    let hash = provenance::config_hash(&(options, provenance::config_hash(&digest)));
    score(&data, dataset, preds, options, hash)
}
