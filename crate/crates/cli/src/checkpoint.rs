//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "CTXPPI1\0" | version u32 | config hash u64 | epoch u64
//! rng:       flag u8 [seed 32B | stream u64 | word pos u128]
//! tensors:   count u32, each: name len u32 | name | rows u64 | cols u64 | f64 * rows * cols
//! optimizer: flag u8 [step u64 | lr, beta1, beta2, eps f64 | first, second tensor lists]
//! best:      flag u8 [epoch u64 | valid auroc f64 | tensor list]
//! history:   count u64, each: epoch u64 | loss f64 | flag u8 | valid auroc f64
//! crc32 of everything above, u32
//! ```

use std::fs;
use std::path::Path;

use anyhow::Context as _;
use ctxppi_core::autodiff::{AdamConfig, AdamState, Matrix};
use ctxppi_core::finetune::MlpParams;
use ctxppi_core::model::ModelParams;
use ctxppi_core::pretrain::{BestState, EpochRecord, TrainerState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"CTXPPI1\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint was written with config hash {found:016x}, current config hashes to {expected:016x}")]
    ResumeMismatch { expected: u64, found: u64 },
    #[error("checkpoint does not fit this model: {0}")]
    Layout(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

pub type Tensors = Vec<(String, Matrix)>;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub config: AdamConfig,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub epoch: u64,
    pub valid_auroc: f64,
    pub tensors: Tensors,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub epoch: u64,
    pub rng: Option<RngState>,
    pub tensors: Tensors,
    pub optimizer: Option<OptimizerState>,
    pub best: Option<BestSnapshot>,
    pub history: Vec<EpochRecord>,
}

fn owned(named: Vec<(String, &Matrix)>) -> Tensors {
    named.into_iter().map(|(n, m)| (n, m.clone())).collect()
}

impl Checkpoint {
    pub fn from_trainer(config_hash: u64, state: &TrainerState) -> Self {
        Self {
            config_hash,
            epoch: state.epoch as u64,
            rng: Some(RngState::capture(&state.rng)),
            tensors: owned(state.params.named_tensors()),
            optimizer: Some(OptimizerState {
                step: state.adam.step,
                config: state.adam.config,
                first: state.adam.first.clone(),
                second: state.adam.second.clone(),
            }),
            best: state.best.as_ref().map(|b| BestSnapshot {
                epoch: b.epoch as u64,
                valid_auroc: b.valid_auroc,
                tensors: owned(b.params.named_tensors()),
            }),
            history: state.history.clone(),
        }
    }

    /// Rebuilds trainer state; `template` supplies the model layout.
    pub fn into_trainer_state(
        self,
        template: &ModelParams,
    ) -> Result<TrainerState, CheckpointError> {
        let layout = |e: ctxppi_core::model::ModelError| CheckpointError::Layout(e.to_string());
        let mut params = template.clone();
        params.load_tensors(self.tensors).map_err(layout)?;
        let opt = self
            .optimizer
            .ok_or_else(|| CheckpointError::Layout("no optimizer state".into()))?;
        let rng = self
            .rng
            .ok_or_else(|| CheckpointError::Layout("no RNG state".into()))?;
        let best = match self.best {
            Some(b) => {
                let mut p = template.clone();
                p.load_tensors(b.tensors).map_err(layout)?;
                Some(BestState {
                    epoch: b.epoch as usize,
                    valid_auroc: b.valid_auroc,
                    params: p,
                })
            }
            None => None,
        };
        Ok(TrainerState {
            epoch: self.epoch as usize,
            params,
            adam: AdamState {
                config: opt.config,
                step: opt.step,
                first: opt.first,
                second: opt.second,
            },
            rng: rng.restore(),
            best,
            history: self.history,
        })
    }

    pub fn from_mlp(config_hash: u64, epochs: usize, mlp: &MlpParams) -> Self {
        Self {
            config_hash,
            epoch: epochs as u64,
            rng: None,
            tensors: owned(mlp.named_tensors()),
            optimizer: None,
            best: None,
            history: Vec::new(),
        }
    }

    pub fn into_mlp(self) -> Result<MlpParams, CheckpointError> {
        let mut it = self.tensors.into_iter();
        let mut next = |name: &str| match it.next() {
            Some((n, m)) if n == name => Ok(m),
            _ => Err(CheckpointError::Layout(format!("missing tensor {name}"))),
        };
        Ok(MlpParams {
            w1: next("mlp.w1")?,
            b1: next("mlp.b1")?,
            w2: next("mlp.w2")?,
            b2: next("mlp.b2")?,
        })
    }

    /// Fails with `ResumeMismatch` unless the stored hash equals `expected`.
    pub fn check_hash(&self, expected: u64) -> Result<(), CheckpointError> {
        if self.config_hash != expected {
            return Err(CheckpointError::ResumeMismatch {
                expected,
                found: self.config_hash,
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        w.extend_from_slice(&self.config_hash.to_le_bytes());
        w.extend_from_slice(&self.epoch.to_le_bytes());
        match &self.rng {
            Some(r) => {
                w.push(1);
                w.extend_from_slice(&r.seed);
                w.extend_from_slice(&r.stream.to_le_bytes());
                w.extend_from_slice(&r.word_pos.to_le_bytes());
            }
            None => w.push(0),
        }
        put_named(&mut w, &self.tensors);
        match &self.optimizer {
            Some(o) => {
                w.push(1);
                w.extend_from_slice(&o.step.to_le_bytes());
                for v in [o.config.lr, o.config.beta1, o.config.beta2, o.config.eps] {
                    w.extend_from_slice(&v.to_le_bytes());
                }
                put_unnamed(&mut w, &o.first);
                put_unnamed(&mut w, &o.second);
            }
            None => w.push(0),
        }
        match &self.best {
            Some(b) => {
                w.push(1);
                w.extend_from_slice(&b.epoch.to_le_bytes());
                w.extend_from_slice(&b.valid_auroc.to_le_bytes());
                put_named(&mut w, &b.tensors);
            }
            None => w.push(0),
        }
        w.extend_from_slice(&(self.history.len() as u64).to_le_bytes());
        for r in &self.history {
            w.extend_from_slice(&(r.epoch as u64).to_le_bytes());
            w.extend_from_slice(&r.loss.to_le_bytes());
            w.push(r.valid_auroc.is_some() as u8);
            w.extend_from_slice(&r.valid_auroc.unwrap_or(0.0).to_le_bytes());
        }
        let crc = crc32fast::hash(&w);
        w.extend_from_slice(&crc.to_le_bytes());
        w
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::CorruptCheckpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 8 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("CRC mismatch"));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let config_hash = r.u64()?;
        let epoch = r.u64()?;
        let rng = if r.flag()? {
            let seed = r.take(32)?.try_into().expect("32 bytes");
            Some(RngState {
                seed,
                stream: r.u64()?,
                word_pos: u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes")),
            })
        } else {
            None
        };
        let tensors = r.named()?;
        let optimizer = if r.flag()? {
            let step = r.u64()?;
            let config = AdamConfig {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            Some(OptimizerState {
                step,
                config,
                first: r.unnamed()?,
                second: r.unnamed()?,
            })
        } else {
            None
        };
        let best = if r.flag()? {
            Some(BestSnapshot {
                epoch: r.u64()?,
                valid_auroc: r.f64()?,
                tensors: r.named()?,
            })
        } else {
            None
        };
        let n = r.u64()?;
        let mut history = Vec::new();
        for _ in 0..n {
            let epoch = r.u64()? as usize;
            let loss = r.f64()?;
            let has = r.flag()?;
            let v = r.f64()?;
            history.push(EpochRecord {
                epoch,
                loss,
                valid_auroc: has.then_some(v),
            });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            config_hash,
            epoch,
            rng,
            tensors,
            optimizer,
            best,
            history,
        })
    }
}

fn put_matrix(w: &mut Vec<u8>, m: &Matrix) {
    w.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    w.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_named(w: &mut Vec<u8>, tensors: &[(String, Matrix)]) {
    w.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        w.extend_from_slice(&(name.len() as u32).to_le_bytes());
        w.extend_from_slice(name.as_bytes());
        put_matrix(w, m);
    }
}

fn put_unnamed(w: &mut Vec<u8>, tensors: &[Matrix]) {
    w.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for m in tensors {
        put_matrix(w, m);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn flag(&mut self) -> Result<bool, CheckpointError> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(CheckpointError::CorruptCheckpoint(format!(
                "bad flag byte {b}"
            ))),
        }
    }

    fn matrix(&mut self) -> Result<Matrix, CheckpointError> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| CheckpointError::CorruptCheckpoint("tensor shape overflows".into()))?;
        let data = self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Matrix::from_vec(rows, cols, data)
            .map_err(|e| CheckpointError::CorruptCheckpoint(e.to_string()))
    }

    fn named(&mut self) -> Result<Tensors, CheckpointError> {
        let n = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..n {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| CheckpointError::CorruptCheckpoint("tensor name is not UTF-8".into()))?
                .to_string();
            out.push((name, self.matrix()?));
        }
        Ok(out)
    }

    fn unnamed(&mut self) -> Result<Vec<Matrix>, CheckpointError> {
        let n = self.u32()?;
        (0..n).map(|_| self.matrix()).collect()
    }
}

/// Writes via a temporary sibling and a rename, so an interrupted save
/// leaves the previous checkpoint intact.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, checkpoint.encode()).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Checkpoint::decode(&bytes)
}
