//! Binary checkpoint container.
//!
//! Layout, all little-endian:
//! magic `JLOCCKPT`, `u32` version, `u64`-prefixed header JSON, `u64` seed,
//! named parameter blobs, norm statistics, an optional training-state block,
//! and a trailing SHA-256 over everything before it.

use std::path::Path;

use geometry::io::atomic_write;
use numcore::{AdamW, AdamWConfig, BatchNormStats, PlateauScheduler, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::model::config::ModelConfig;
use crate::model::network::JointLocalizer;
use crate::rigdata::skeleton::JointSpec;

pub const MAGIC: &[u8; 8] = b"JLOCCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub joints: Vec<JointSpec>,
    /// Hash of the resolved training configuration, when trained.
    pub train_config_hash: Option<String>,
}

/// Everything needed to resume training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    /// Last completed epoch, counting from 1.
    pub epoch: usize,
    pub best_val: Option<f64>,
    pub optimizer: AdamW,
    pub scheduler: PlateauScheduler,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub seed: u64,
    pub model: JointLocalizer,
    pub training: Option<TrainingState>,
}

impl Checkpoint {
    pub fn new(model: JointLocalizer, joints: Vec<JointSpec>, seed: u64) -> Result<Self> {
        if joints.len() != model.config().joint_count {
            return Err(CoreError::Contract(format!(
                "model predicts {} joints but {} joint specs were given",
                model.config().joint_count,
                joints.len()
            )));
        }
        Ok(Checkpoint {
            header: CheckpointHeader {
                model: model.config().clone(),
                joints,
                train_config_hash: None,
            },
            seed,
            model,
            training: None,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        w.blob(&header);
        w.u64(self.seed);
        let names = self.model.parameter_names();
        w.u64(names.len() as u64);
        for (name, p) in names.iter().zip(self.model.parameters()) {
            w.blob(name.as_bytes());
            w.tensor(p);
        }
        w.u64(self.model.norm_stats().len() as u64);
        for s in self.model.norm_stats() {
            w.f64(s.momentum);
            w.f64(s.eps);
            w.f64s(&s.running_mean);
            w.f64s(&s.running_var);
        }
        match &self.training {
            None => w.u8(0),
            Some(t) => {
                w.u8(1);
                w.u64(t.epoch as u64);
                w.opt_f64(t.best_val);
                let c = t.optimizer.config;
                for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon, c.weight_decay] {
                    w.f64(v);
                }
                w.u64(t.optimizer.step_count());
                w.u64(t.optimizer.first_moment().len() as u64);
                for (m, v) in t.optimizer.first_moment().iter().zip(t.optimizer.second_moment()) {
                    w.f64s(m);
                    w.f64s(v);
                }
                let s = &t.scheduler;
                w.opt_f64(s.best_metric);
                w.u64(s.epochs_since_improvement as u64);
                w.u64(s.patience as u64);
                w.f64(s.decay_rate);
                w.f64(s.current_lr);
                w.u64(s.warmup_epochs as u64);
                w.u64(s.epochs_seen as u64);
            }
        }
        let digest = Sha256::digest(&w.buf);
        w.bytes(&digest);
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CoreError::Data("not a jointloc checkpoint".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CoreError::Data("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CoreError::Data(format!("unsupported checkpoint version {version}")));
        }
        let header: CheckpointHeader = serde_json::from_slice(r.blob()?)
            .map_err(|e| CoreError::Data(format!("checkpoint header: {e}")))?;
        let seed = r.u64()?;
        let count = r.len()?;
        let mut params = Vec::with_capacity(count);
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            names.push(String::from_utf8_lossy(r.blob()?).into_owned());
            params.push(r.tensor()?);
        }
        let stat_count = r.len()?;
        let mut stats = Vec::with_capacity(stat_count);
        for _ in 0..stat_count {
            let momentum = r.f64()?;
            let eps = r.f64()?;
            let running_mean = r.f64s()?;
            let running_var = r.f64s()?;
            stats.push(BatchNormStats {
                running_mean,
                running_var,
                momentum,
                eps,
            });
        }
        let model = JointLocalizer::from_parts(header.model.clone(), params, stats)?;
        if model.parameter_names() != names {
            return Err(CoreError::Data(format!("unexpected parameter names {names:?}")));
        }
        let training = match r.u8()? {
            0 => None,
            1 => {
                let epoch = r.len()?;
                let best_val = r.opt_f64()?;
                let config = AdamWConfig {
                    learning_rate: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    epsilon: r.f64()?,
                    weight_decay: r.f64()?,
                };
                let step = r.u64()?;
                let slots = r.len()?;
                let (mut m, mut v) = (Vec::with_capacity(slots), Vec::with_capacity(slots));
                for _ in 0..slots {
                    m.push(r.f64s()?);
                    v.push(r.f64s()?);
                }
                let optimizer = AdamW::from_state(config, step, m, v, model.parameters())?;
                let scheduler = PlateauScheduler {
                    best_metric: r.opt_f64()?,
                    epochs_since_improvement: r.len()?,
                    patience: r.len()?,
                    decay_rate: r.f64()?,
                    current_lr: r.f64()?,
                    warmup_epochs: r.len()?,
                    epochs_seen: r.len()?,
                };
                Some(TrainingState {
                    epoch,
                    best_val,
                    optimizer,
                    scheduler,
                })
            }
            t => return Err(CoreError::Data(format!("bad training-state tag {t}"))),
        };
        if r.pos != body.len() {
            return Err(CoreError::Data("trailing bytes in checkpoint".into()));
        }
        if header.joints.len() != header.model.joint_count {
            return Err(CoreError::Data("joint list does not match the model's joint count".into()));
        }
        Ok(Checkpoint {
            header,
            seed,
            model,
            training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Checkpoint::decode(&bytes).map_err(|e| CoreError::file(path, e))
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn opt_f64(&mut self, v: Option<f64>) {
        match v {
            Some(x) => {
                self.u8(1);
                self.f64(x);
            }
            None => self.u8(0),
        }
    }
    fn blob(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.bytes(b);
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for x in t.data() {
            self.f64(*x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CoreError::Data("checkpoint is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| CoreError::Data(format!("implausible length {v} in checkpoint")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.f64()?)),
            t => Err(CoreError::Data(format!("bad optional tag {t}"))),
        }
    }
    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Tensor::new(shape, data)?)
    }
}
