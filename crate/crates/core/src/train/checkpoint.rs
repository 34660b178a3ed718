//! Checkpoint files.
//!
//! Layout: magic `b"RCKP"`, `u32` format version, `u64` header length, a JSON
//! header (config, step, seeds, optimizer kind and counters, vocabulary,
//! frozen parameter names), then one named-array container holding the
//! parameters (`param.*`) and optimizer buffers (`opt.first.*`,
//! `opt.second.*`) as f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{OptimizerHyper, OptimizerState};
use crate::backbone::Vocabulary;
use crate::config::{ModelConfig, OptimizerKind};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::io::{read_arrays, write_arrays, Dtype};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
    pub step: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: ModelConfig,
    step: u64,
    seed: u64,
    vocab: Vec<String>,
    frozen: Vec<String>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    kind: OptimizerKind,
    hyper: OptimizerHyper,
    step: u64,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            step: self.step,
            seed: self.seed,
            vocab: self.vocab.tokens().to_vec(),
            frozen: self.params.names().filter(|n| self.params.is_frozen(n)).map(String::from).collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader { kind: o.kind, hyper: o.hyper, step: o.step }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;

        let mut names: Vec<String> = Vec::new();
        let mut tensors: Vec<&Tensor> = Vec::new();
        for (name, p) in self.params.iter() {
            names.push(format!("param.{name}"));
            tensors.push(p.value.as_ref());
        }
        if let Some(o) = &self.optimizer {
            for (name, t) in &o.first {
                names.push(format!("opt.first.{name}"));
                tensors.push(t);
            }
            for (name, t) in &o.second {
                names.push(format!("opt.second.{name}"));
                tensors.push(t);
            }
        }
        let arrays: Vec<(&str, &Tensor)> = names.iter().map(String::as_str).zip(tensors).collect();
        write_arrays(&mut w, &arrays, Dtype::F64)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::data("not a checkpoint (bad magic)"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::data(format!("checkpoint version {version} not supported")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| Error::data(format!("checkpoint header: {e}")))?;
        header.config.validate()?;

        let mut params = ParamStore::new();
        let mut optimizer = header.optimizer.map(|o| {
            let mut s = OptimizerState::new(o.kind, o.hyper);
            s.step = o.step;
            s
        });
        for (name, t) in read_arrays(&mut r)? {
            if let Some(p) = name.strip_prefix("param.") {
                params.insert(p, t)?;
            } else if let (Some(p), Some(o)) = (name.strip_prefix("opt.first."), optimizer.as_mut()) {
                o.first.insert(p.to_string(), t);
            } else if let (Some(p), Some(o)) = (name.strip_prefix("opt.second."), optimizer.as_mut()) {
                o.second.insert(p.to_string(), t);
            } else {
                return Err(Error::data(format!("unexpected array {name} in checkpoint")));
            }
        }
        for name in &header.frozen {
            params.set_frozen(name, true).map_err(|_| Error::data(format!("frozen parameter {name} missing from checkpoint")))?;
        }
        let vocab = Vocabulary::from_text(&header.vocab.join("\n"))?;
        Ok(Self { config: header.config, vocab, params, optimizer, step: header.step, seed: header.seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
