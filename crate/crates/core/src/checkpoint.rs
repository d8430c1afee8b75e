//! Model checkpoints.
//!
//! | offset | size  | field                                   |
//! |--------|-------|-----------------------------------------|
//! | 0      | 4     | magic `OWLM`                            |
//! | 4      | 4     | format version (`u32` = 1)              |
//! | 8      | 4     | header length `H` (`u32`)               |
//! | 12     | H     | UTF-8 JSON header                       |
//! | 12+H   | 8·N   | `f64` parameters in declaration order   |
//!
//! The header names the model kind, its provenance, the full model config,
//! the input dimensions, and the name and shape of every parameter. Loading
//! rebuilds the model from the config and rejects any layout mismatch.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::Reader;
use crate::fusion::{FusionConfig, FusionModel};
use crate::numerics::{ParamSet, Tape, Tensor2, Var};
use crate::owl::{ClassifierDims, OwlConfig, OwlModel, ProposalClassifier, ProposalToken, Targets};
use crate::proposals::{TemConfig, TemModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OWLM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Tool version, config hash and seed carried by every output artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            tool_version: crate::TOOL_VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
        }
    }
}

/// A trained proposal classifier of either family.
#[derive(Clone, Debug)]
pub enum Classifier {
    Owl(OwlModel),
    Fusion(FusionModel),
}

impl ProposalClassifier for Classifier {
    fn params(&self) -> &ParamSet {
        match self {
            Classifier::Owl(m) => &m.params,
            Classifier::Fusion(m) => &m.params,
        }
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Classifier::Owl(m) => &mut m.params,
            Classifier::Fusion(m) => &mut m.params,
        }
    }

    fn loss(&self, tape: &mut Tape, ps: &ParamSet, tokens: &[ProposalToken], targets: &Targets) -> Result<Var> {
        match self {
            Classifier::Owl(m) => m.loss(tape, ps, tokens, targets),
            Classifier::Fusion(m) => m.loss(tape, ps, tokens, targets),
        }
    }

    fn logits(&self, tokens: &[ProposalToken]) -> Result<(Tensor2, Option<Tensor2>)> {
        match self {
            Classifier::Owl(m) => m.logits(tokens),
            Classifier::Fusion(m) => m.logits(tokens),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    Tem(TemModel),
    Classifier(Classifier),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tem,
    Owl,
    Fusion,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Tem(_) => ModelKind::Tem,
            Model::Classifier(Classifier::Owl(_)) => ModelKind::Owl,
            Model::Classifier(Classifier::Fusion(_)) => ModelKind::Fusion,
        }
    }

    fn params(&self) -> &ParamSet {
        match self {
            Model::Tem(m) => &m.params,
            Model::Classifier(c) => c.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Tem(m) => &mut m.params,
            Model::Classifier(c) => c.params_mut(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    provenance: Provenance,
    config: serde_json::Value,
    dims: serde_json::Value,
    params: Vec<ParamShape>,
}

fn shapes(ps: &ParamSet) -> Vec<ParamShape> {
    ps.iter()
        .map(|p| ParamShape {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
        })
        .collect()
}

/// A model together with the provenance it was trained under.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub provenance: Provenance,
    pub model: Model,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (config, dims) = match &self.model {
            Model::Tem(m) => (serde_json::to_value(&m.config)?, serde_json::to_value(m.dim)?),
            Model::Classifier(Classifier::Owl(m)) => (serde_json::to_value(&m.config)?, serde_json::to_value(m.dims)?),
            Model::Classifier(Classifier::Fusion(m)) => {
                (serde_json::to_value(&m.config)?, serde_json::to_value(m.dims)?)
            }
        };
        let header = Header {
            kind: self.model.kind(),
            provenance: self.provenance.clone(),
            config,
            dims,
            params: shapes(self.model.params()),
        };
        let json = serde_json::to_vec(&header)?;
        let values = self.model.params().flat_values();
        let mut out = Vec::with_capacity(12 + json.len() + 8 * values.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.err_at(0, format!("bad magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.err_at(4, format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Parse {
            offset: 12,
            msg: format!("checkpoint header: {e}"),
        })?;
        let mut model = match header.kind {
            ModelKind::Tem => {
                let cfg: TemConfig = serde_json::from_value(header.config)?;
                Model::Tem(TemModel::new(cfg, serde_json::from_value(header.dims)?))
            }
            ModelKind::Owl => {
                let cfg: OwlConfig = serde_json::from_value(header.config)?;
                let dims: ClassifierDims = serde_json::from_value(header.dims)?;
                Model::Classifier(Classifier::Owl(OwlModel::new(cfg, dims)?))
            }
            ModelKind::Fusion => {
                let cfg: FusionConfig = serde_json::from_value(header.config)?;
                let dims: ClassifierDims = serde_json::from_value(header.dims)?;
                Model::Classifier(Classifier::Fusion(FusionModel::new(cfg, dims)?))
            }
        };
        if shapes(model.params()) != header.params {
            return Err(r.err_at(12, "parameter layout does not match the recorded config".into()));
        }
        let n = model.params().num_scalars();
        let start = r.pos;
        let payload = r.take(8 * n)?;
        if r.pos != bytes.len() {
            return Err(r.err_at(
                r.pos as u64,
                format!("{} trailing bytes after {n} parameters", bytes.len() - r.pos),
            ));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(r.err_at((start + 8 * k) as u64, "non-finite parameter".into()));
        }
        model.params_mut().load_flat(&values)?;
        Ok(Self {
            provenance: header.provenance,
            model,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Dependency(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
