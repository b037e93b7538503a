//! Training loop: seeded epochs, validation, plateau scheduling and
//! checkpoints.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use geometry::io::atomic_write;
use nalgebra::Point3;
use numcore::{AdamW, AdamWConfig, PlateauScheduler};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{PlateauMetric, TrainConfig};

use crate::error::{CoreError, Result};
use crate::eval::{mpjpe, MetricReport};
use crate::model::{Checkpoint, JointLocalizer, TrainingState};
use crate::provenance;
use crate::rigdata::files::{read_manifest, DatasetKind, Split};
use crate::rigdata::sample::{augment, load_split, AugmentConfig, Sample};
use crate::rigdata::skeleton::{Category, JointSpec};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const RESOLVED_CONFIG_FILE: &str = "train_config.json";

/// Generator for one epoch's shuffle and augmentation.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// One pass over `samples` in a seeded order, one optimizer step per
/// sample. Returns the mean training loss.
pub fn train_epoch(
    model: &mut JointLocalizer,
    optimizer: &mut AdamW,
    samples: &[Sample],
    augmentation: Option<&AugmentConfig>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(CoreError::Data("no training samples".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for (step, &i) in order.iter().enumerate() {
        let s = &samples[i];
        let (cloud, joints) = match augmentation {
            Some(cfg) => augment(&s.cloud, &s.joints, cfg, rng)?,
            None => (s.cloud.clone(), s.joints.clone()),
        };
        let (loss, grads) = model.loss_and_gradients(&cloud, &joints)?;
        if !loss.is_finite() {
            return Err(CoreError::Data(format!(
                "non-finite loss {loss} on sample '{}' at step {step}",
                s.id
            )));
        }
        optimizer.step(model.parameters_mut(), &grads)?;
        total += loss;
    }
    Ok(total / samples.len() as f64)
}

/// Predictions for every sample with frozen statistics, in sample order.
pub fn predict_all(model: &JointLocalizer, samples: &[Sample]) -> Result<Vec<Vec<Point3<f64>>>> {
    samples
        .par_iter()
        .map(|s| model.predict(&s.cloud).map(|p| p.joints))
        .collect()
}

/// MPJPE of the model on `samples`; never touches parameters or statistics.
pub fn validate(model: &JointLocalizer, samples: &[Sample], categories: &[Category]) -> Result<MetricReport> {
    let preds = predict_all(model, samples)?;
    let gts: Vec<Vec<Point3<f64>>> = samples.iter().map(|s| s.joints.clone()).collect();
    mpjpe(&preds, &gts, categories)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean MPJPE over all joints of the validation split.
    pub val_mpjpe: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

pub fn log_csv(stamp: &str, rows: &[LogRow]) -> String {
    let mut s = format!("# {stamp}\nepoch,train_loss,val_mpjpe,lr,seconds\n");
    for r in rows {
        let val = r.val_mpjpe.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{},{:.3}", r.epoch, r.train_loss, val, r.lr, r.seconds).expect("string write");
    }
    s
}

pub fn parse_log_csv(text: &str) -> Result<Vec<LogRow>> {
    let bad = |line: &str| CoreError::Data(format!("malformed training log line '{line}'"));
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch,") && !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            Ok(LogRow {
                epoch: f[0].parse().map_err(|_| bad(line))?,
                train_loss: f[1].parse().map_err(|_| bad(line))?,
                val_mpjpe: if f[2].is_empty() {
                    None
                } else {
                    Some(f[2].parse().map_err(|_| bad(line))?)
                },
                lr: f[3].parse().map_err(|_| bad(line))?,
                seconds: f[4].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

/// Model, optimizer and scheduler state of a run in progress.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub joints: Vec<JointSpec>,
    pub model: JointLocalizer,
    pub optimizer: AdamW,
    pub scheduler: PlateauScheduler,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val: Option<f64>,
    pub log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(config: TrainConfig, joints: Vec<JointSpec>) -> Result<Self> {
        config.validate()?;
        let model = JointLocalizer::new(config.model_config(joints.len()), config.seed)?;
        let optimizer = AdamW::new(
            AdamWConfig {
                learning_rate: config.initial_lr,
                weight_decay: config.weight_decay,
                ..AdamWConfig::default()
            },
            model.parameters(),
        );
        let scheduler = PlateauScheduler::new(config.initial_lr, config.patience, config.decay, config.warmup);
        Ok(Trainer {
            config,
            joints,
            model,
            optimizer,
            scheduler,
            epoch: 0,
            best_val: None,
            log: Vec::new(),
        })
    }

    /// Continues from a checkpoint written by the same configuration.
    pub fn resume(config: TrainConfig, checkpoint: Checkpoint, log: Vec<LogRow>) -> Result<Self> {
        let key = config.resume_key();
        if checkpoint.header.train_config_hash.as_deref() != Some(key.as_str()) {
            return Err(CoreError::Config(
                "checkpoint was written by a different training configuration".into(),
            ));
        }
        let state = checkpoint
            .training
            .ok_or_else(|| CoreError::Data("checkpoint has no training state".into()))?;
        let log: Vec<LogRow> = log.into_iter().filter(|r| r.epoch <= state.epoch).collect();
        if log.len() != state.epoch {
            return Err(CoreError::Data(format!(
                "training log has {} rows but the checkpoint is at epoch {}",
                log.len(),
                state.epoch
            )));
        }
        Ok(Trainer {
            config,
            joints: checkpoint.header.joints,
            model: checkpoint.model,
            optimizer: state.optimizer,
            scheduler: state.scheduler,
            epoch: state.epoch,
            best_val: state.best_val,
            log,
        })
    }

    pub fn categories(&self) -> Vec<Category> {
        self.joints.iter().map(|j| j.category).collect()
    }

    /// Trains one epoch, validates, steps the scheduler and logs the row.
    /// Returns the row and whether it set a new best.
    pub fn run_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<(LogRow, bool)> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let lr = self.optimizer.config.learning_rate;
        let mut rng = epoch_rng(self.config.seed, epoch);
        let augmentation = self.config.augment_config();
        let train_loss = train_epoch(&mut self.model, &mut self.optimizer, train, augmentation.as_ref(), &mut rng)?;
        let val_mpjpe = if val.is_empty() {
            None
        } else {
            Some(validate(&self.model, val, &self.categories())?.overall())
        };
        let metric = match self.config.plateau_metric {
            PlateauMetric::ValMpjpe => val_mpjpe.ok_or_else(|| {
                CoreError::Config("plateau_metric = \"val_mpjpe\" needs a non-empty validation split".into())
            })?,
            PlateauMetric::TrainLoss => train_loss,
        };
        let next_lr = self.scheduler.step(metric);
        self.optimizer.set_learning_rate(next_lr);
        let selection = val_mpjpe.unwrap_or(train_loss);
        let improved = self.best_val.is_none_or(|b| selection < b);
        if improved {
            self.best_val = Some(selection);
        }
        self.epoch = epoch;
        let row = LogRow {
            epoch,
            train_loss,
            val_mpjpe,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.log.push(row.clone());
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6}, val MPJPE {}, lr {lr}",
            val_mpjpe.map(|v| format!("{v:.4}%")).unwrap_or_else(|| "n/a".into())
        );
        Ok((row, improved))
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.model.clone(), self.joints.clone(), self.config.seed)?;
        ck.header.train_config_hash = Some(self.config.resume_key());
        ck.training = Some(TrainingState {
            epoch: self.epoch,
            best_val: self.best_val,
            optimizer: self.optimizer.clone(),
            scheduler: self.scheduler.clone(),
        });
        Ok(ck)
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub log: Vec<LogRow>,
    pub best_val: Option<f64>,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Loads the train and validation splits of a conditioned dataset.
pub fn load_training_data(dataset: &Path) -> Result<(Vec<JointSpec>, Vec<Sample>, Vec<Sample>)> {
    let manifest = read_manifest(dataset)?;
    manifest.check_files(dataset, DatasetKind::Conditioned)?;
    let train = load_split(dataset, &manifest, Split::Train)?;
    let val = load_split(dataset, &manifest, Split::Val)?;
    Ok((manifest.joints, train, val))
}

/// Full training run. With `resume`, continues from `last.ckpt` in the
/// output directory when it exists.
pub fn fit(config: &TrainConfig, resume: bool) -> Result<FitOutcome> {
    config.validate()?;
    if !config.dataset.is_dir() {
        return Err(CoreError::Config(format!(
            "dataset directory {} does not exist",
            config.dataset.display()
        )));
    }
    let (joints, train, val) = load_training_data(&config.dataset)?;
    if config.plateau_metric == PlateauMetric::ValMpjpe && val.is_empty() {
        return Err(CoreError::Config(
            "plateau_metric = \"val_mpjpe\" needs a non-empty validation split".into(),
        ));
    }
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| CoreError::io(out, e))?;
    let last = out.join(LAST_CHECKPOINT);
    let best = out.join(BEST_CHECKPOINT);
    let log_path = out.join(LOG_FILE);
    let stamp = provenance::stamp(&provenance::config_hash(config));
    let resolved = serde_json::to_vec_pretty(config).expect("config serializes");
    atomic_write(&out.join(RESOLVED_CONFIG_FILE), &resolved)?;
    log::info!("resolved training configuration: {}", String::from_utf8_lossy(&resolved));

    let mut trainer = if resume && last.exists() {
        let log = match std::fs::read_to_string(&log_path) {
            Ok(text) => parse_log_csv(&text)?,
            Err(_) => Vec::new(),
        };
        let t = Trainer::resume(config.clone(), Checkpoint::load(&last)?, log)?;
        log::info!("resuming after epoch {}", t.epoch);
        t
    } else {
        Trainer::new(config.clone(), joints.clone())?
    };
    if trainer.joints != joints {
        return Err(CoreError::Data("dataset joints differ from the checkpoint's".into()));
    }
    while trainer.epoch < config.epochs {
        let (_, improved) = trainer.run_epoch(&train, &val)?;
        let ck = trainer.checkpoint()?;
        ck.save(&last)?;
        if improved {
            ck.save(&best)?;
        }
        atomic_write(&log_path, log_csv(&stamp, &trainer.log).as_bytes())?;
    }
    Ok(FitOutcome {
        log: trainer.log,
        best_val: trainer.best_val,
        last_checkpoint: last,
        best_checkpoint: best,
    })
}
