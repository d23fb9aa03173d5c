//! Binary model container.
//!
//! ```text
//! "SOMACKPT"            8 bytes
//! version               u32 little-endian
//! header length         u64 little-endian
//! header                UTF-8 JSON
//! tensor data           f32 little-endian, row-major, in header order
//! ```
//!
//! The header holds the network configuration, label names, the activation
//! used between the head layers, training metadata and the name and shape
//! of every stored tensor. Optimizer moments, when present, follow the
//! network tensors as `adam.m.<name>` and `adam.v.<name>`.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SomaError};
use crate::net::{NetConfig, NetParams};
use crate::train::{Adam, EpochRecord, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"SOMACKPT";
pub const VERSION: u32 = 1;
pub const ACTIVATION: &str = "gelu";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

/// Training bookkeeping carried alongside the weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub lr: f64,
    pub best_epoch: usize,
    pub best_val_acc: Option<f64>,
    pub epochs_since_best: usize,
    pub epochs_since_reduce: usize,
    pub adam_step: u64,
    pub train_config: Option<TrainConfig>,
    pub history: Vec<EpochRecord>,
    /// Hash of the producing configuration.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    num_markers: usize,
    label_names: Vec<String>,
    activation: String,
    training: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub label_names: Vec<String>,
    pub training: TrainingMeta,
    /// First and second Adam moments, one per parameter tensor.
    pub optimizer: Option<(Vec<Array2<f64>>, Vec<Array2<f64>>)>,
}

impl Checkpoint {
    pub fn new(params: NetParams, label_names: Vec<String>) -> Result<Self> {
        if label_names.len() != params.num_markers {
            return Err(SomaError::LengthMismatch {
                what: "label names vs network markers",
                left: label_names.len(),
                right: params.num_markers,
            });
        }
        Ok(Checkpoint {
            params,
            label_names,
            training: TrainingMeta::default(),
            optimizer: None,
        })
    }

    /// Snapshot of a training run; `with_optimizer` keeps Adam moments for
    /// resuming.
    pub fn from_state(
        state: &TrainState,
        params: &NetParams,
        label_names: Vec<String>,
        cfg: &TrainConfig,
        config_hash: String,
        with_optimizer: bool,
    ) -> Result<Self> {
        let mut ck = Checkpoint::new(params.clone(), label_names)?;
        ck.training = TrainingMeta {
            epoch: state.epoch,
            lr: state.lr,
            best_epoch: state.best_epoch,
            best_val_acc: state.best_val_acc.is_finite().then_some(state.best_val_acc),
            epochs_since_best: state.epochs_since_best,
            epochs_since_reduce: state.epochs_since_reduce,
            adam_step: state.adam.step,
            train_config: Some(cfg.clone()),
            history: state.history.clone(),
            config_hash,
        };
        if with_optimizer {
            ck.optimizer = Some((state.adam.m.clone(), state.adam.v.clone()));
        }
        Ok(ck)
    }

    /// Training state that continues from this checkpoint. `best` defaults
    /// to the stored weights.
    pub fn resume_state(&self, cfg: &TrainConfig, best: Option<NetParams>) -> Result<TrainState> {
        let (m, v) = self
            .optimizer
            .clone()
            .ok_or_else(|| SomaError::InvalidArgument("checkpoint carries no optimizer state".into()))?;
        let mut adam = Adam::new(&self.params.tensors);
        adam.m = m;
        adam.v = v;
        adam.step = self.training.adam_step;
        let mut state = TrainState::from_params(self.params.clone(), cfg);
        state.adam = adam;
        state.epoch = self.training.epoch;
        state.lr = self.training.lr;
        state.best_epoch = self.training.best_epoch;
        state.best_val_acc = self.training.best_val_acc.unwrap_or(f64::NEG_INFINITY);
        state.epochs_since_best = self.training.epochs_since_best;
        state.epochs_since_reduce = self.training.epochs_since_reduce;
        state.history = self.training.history.clone();
        state.best = best.unwrap_or_else(|| self.params.clone());
        Ok(state)
    }

    fn stored(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> =
            self.params.names.iter().cloned().zip(self.params.tensors.iter()).collect();
        if let Some((m, v)) = &self.optimizer {
            for (prefix, moments) in [("adam.m.", m), ("adam.v.", v)] {
                for (name, t) in self.params.names.iter().zip(moments) {
                    out.push((format!("{prefix}{name}"), t));
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.validate()?;
        let stored = self.stored();
        let header = Header {
            net: self.params.config,
            num_markers: self.params.num_markers,
            label_names: self.label_names.clone(),
            activation: ACTIVATION.to_string(),
            training: self.training.clone(),
            tensors: stored
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: [t.nrows(), t.ncols()],
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * self.params.num_parameters() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in stored {
            for &x in t.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: String| SomaError::format("checkpoint", message);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing SOMACKPT magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20usize.saturating_add(header_len))
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.activation != ACTIVATION {
            return Err(bad(format!("unsupported activation {:?}", header.activation)));
        }
        let expected = NetParams::layout(&header.net, header.num_markers);
        let n = expected.len();
        if header.tensors.len() != n && header.tensors.len() != 3 * n {
            return Err(bad(format!("expected {n} or {} tensors, found {}", 3 * n, header.tensors.len())));
        }
        let mut data = &bytes[20 + header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for (k, entry) in header.tensors.iter().enumerate() {
            let (name, shape) = &expected[k % n];
            let want = match k / n {
                0 => name.clone(),
                1 => format!("adam.m.{name}"),
                _ => format!("adam.v.{name}"),
            };
            if entry.name != want || (entry.shape[0], entry.shape[1]) != *shape {
                return Err(bad(format!(
                    "tensor {k}: expected {want} {shape:?}, found {} {:?}",
                    entry.name, entry.shape
                )));
            }
            let count = shape.0 * shape.1;
            if data.len() < 4 * count {
                return Err(bad(format!("tensor {} truncated", entry.name)));
            }
            let values = data[..4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            data = &data[4 * count..];
            tensors.push(Array2::from_shape_vec(*shape, values).map_err(|e| bad(e.to_string()))?);
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        let optimizer = (tensors.len() == 3 * n).then(|| {
            let v = tensors.split_off(2 * n);
            let m = tensors.split_off(n);
            (m, v)
        });
        let params = NetParams {
            config: header.net,
            num_markers: header.num_markers,
            names: expected.into_iter().map(|(name, _)| name).collect(),
            tensors,
        };
        params.validate()?;
        let mut ck = Checkpoint::new(params, header.label_names)?;
        ck.training = header.training;
        ck.optimizer = optimizer;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| SomaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| SomaError::io(path, e))?)
    }
}
