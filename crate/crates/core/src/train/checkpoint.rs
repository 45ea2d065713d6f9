//! `DFCKPT01` checkpoint files.
//!
//! Layout: 8-byte magic, u32 LE header length, compact JSON header, then raw
//! little-endian f64 blocks. The blocks are the parameters in manifest
//! order, followed by the Adam first and second moments (when present) and
//! the band-reduction model (when present).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimState, TrainError};
use crate::data::{DataError, PcaModel, SplitSpec};
use crate::model::{ModelConfig, ParamStore};
use crate::tensor::{Rng64, Tensor};

pub const CKPT_MAGIC: &[u8; 8] = b"DFCKPT01";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng: Option<Rng64>,
    pub optim: Option<OptimState>,
    pub pca: Option<PcaModel>,
    pub split: Option<SplitSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    manifest: Vec<Entry>,
    epoch: usize,
    #[serde(default)]
    rng: Option<Rng64>,
    #[serde(default)]
    optimizer: Option<AdamHeader>,
    #[serde(default)]
    pca: Option<PcaHeader>,
    #[serde(default)]
    split: Option<SplitSpec>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    decay: f64,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct PcaHeader {
    bands: usize,
    components: usize,
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Data(DataError::BadHeader(msg.into()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn floats(&mut self, n: usize) -> Result<Vec<f64>, TrainError> {
        let end = self.pos + n * 8;
        if end > self.bytes.len() {
            return Err(DataError::Truncated {
                expected: end,
                found: self.bytes.len(),
            }
            .into());
        }
        let out = self.bytes[self.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos = end;
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            manifest: self
                .params
                .iter()
                .map(|(name, t)| Entry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            optimizer: self.optim.as_ref().map(|o| AdamHeader {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                decay: o.decay,
                t: o.t,
            }),
            pca: self.pca.as_ref().map(|p| PcaHeader {
                bands: p.bands(),
                components: p.n_components(),
            }),
            split: self.split,
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |values: &[f64]| values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.params.tensors().iter().for_each(|t| put(t.data()));
        if let Some(o) = &self.optim {
            o.m.iter().chain(&o.v).for_each(|t| put(t.data()));
        }
        if let Some(p) = &self.pca {
            put(p.mean());
            put(p.components());
            put(p.explained_variance());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 12 {
            return Err(DataError::Truncated {
                expected: 12,
                found: bytes.len(),
            }
            .into());
        }
        if &bytes[..8] != CKPT_MAGIC {
            return Err(DataError::BadMagic {
                expected: String::from_utf8_lossy(CKPT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
            }
            .into());
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + hlen {
            return Err(DataError::Truncated {
                expected: 12 + hlen,
                found: bytes.len(),
            }
            .into());
        }
        let header: Header =
            serde_json::from_slice(&bytes[12..12 + hlen]).map_err(|e| bad(format!("checkpoint header: {e}")))?;
        header.config.validate()?;
        let mut r = Reader { bytes, pos: 12 + hlen };

        let mut parts = Vec::with_capacity(header.manifest.len());
        for e in &header.manifest {
            let n = e.shape.iter().product();
            let data = r.floats(n)?;
            parts.push((e.name.clone(), Tensor::new(&e.shape, data)?));
        }
        let params = ParamStore::from_parts(parts)?;
        params.check_layout(&header.config)?;

        let optim = match header.optimizer {
            Some(a) => {
                let read = |r: &mut Reader| -> Result<Vec<Tensor>, TrainError> {
                    params
                        .tensors()
                        .iter()
                        .map(|t| Ok(Tensor::new(t.shape(), r.floats(t.len())?)?))
                        .collect()
                };
                let m = read(&mut r)?;
                let v = read(&mut r)?;
                Some(OptimState {
                    lr: a.lr,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: a.eps,
                    decay: a.decay,
                    t: a.t,
                    m,
                    v,
                })
            }
            None => None,
        };
        let pca = match header.pca {
            Some(p) => {
                let mean = r.floats(p.bands)?;
                let comps = r.floats(p.components * p.bands)?;
                let explained = r.floats(p.components)?;
                Some(PcaModel::new(mean, comps, explained)?)
            }
            None => None,
        };
        let split = match header.split {
            Some(s) => Some(SplitSpec::new(s.train_frac(), s.val_frac(), s.test_frac(), s.seed())?),
            None => None,
        };
        if r.pos != bytes.len() {
            return Err(DataError::HeaderMismatch {
                declared: (r.pos - 12 - hlen) / 8,
                found: (bytes.len() - 12 - hlen) / 8,
            }
            .into());
        }
        Ok(Self {
            config: header.config,
            params,
            epoch: header.epoch,
            rng: header.rng,
            optim,
            pca,
            split,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
