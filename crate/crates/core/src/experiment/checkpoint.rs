//! Binary checkpoint format, bit-exact and language-neutral.
//!
//! Layout (all integers little-endian):
//!   magic "CFWG" | version u32 | model-kind u8 | seed u64 | epoch u32 |
//!   digest [32 bytes] | payload.
//!
//! MLP payload: model-count u8, then per model a layer table
//! (layer-count u32, then fan_in u32 + fan_out u32 per layer) followed by
//! the parameters as IEEE-754 f64 values in layer order, weights
//! row-major then bias. Item-popularity payload: item-count u32 followed
//! by the score vector.

use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelKind;
use crate::autodiff::{ParamSet, Tensor};
use crate::error::{CheckpointFault, Error, Result};
use crate::models::{bias_name, weight_name, MlpSpec, OutputActivation};

pub const MAGIC: [u8; 4] = *b"CFWG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub seed: u64,
    pub epoch: u32,
    pub digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointPayload {
    /// Generator [+ discriminator] for the adversarial kinds, or the
    /// classifier alone.
    Mlp(Vec<(MlpSpec, ParamSet)>),
    /// Item-popularity score vector.
    Scores(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub payload: CheckpointPayload,
}

fn fault(fault: CheckpointFault, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        fault,
        msg: msg.into(),
    }
}

/// Output activations per model slot, fixed by the model kind.
fn slot_activation(kind: ModelKind, slot: usize) -> OutputActivation {
    match (kind, slot) {
        (ModelKind::CfwganGp | ModelKind::CfganVanilla, 1) => OutputActivation::Identity,
        _ => OutputActivation::Sigmoid,
    }
}

pub fn checkpoint_save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(ckpt.meta.kind.wire_byte());
    buf.extend_from_slice(&ckpt.meta.seed.to_le_bytes());
    buf.extend_from_slice(&ckpt.meta.epoch.to_le_bytes());
    buf.extend_from_slice(&ckpt.meta.digest);
    match &ckpt.payload {
        CheckpointPayload::Mlp(models) => {
            buf.push(models.len() as u8);
            for (spec, params) in models {
                let dims = spec.layer_dims();
                buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
                for (fan_in, fan_out) in &dims {
                    buf.extend_from_slice(&(*fan_in as u32).to_le_bytes());
                    buf.extend_from_slice(&(*fan_out as u32).to_le_bytes());
                }
                for layer in 0..dims.len() {
                    // The critic's split first layer serializes as the
                    // concatenated (2n × h) matrix: condition rows first.
                    if layer == 0 && spec.activation == OutputActivation::Identity {
                        for name in ["w0c", "w0v"] {
                            let w = params.get(name).ok_or_else(|| {
                                Error::InvalidArgument(format!("missing weight {name}"))
                            })?;
                            for v in w.data() {
                                buf.extend_from_slice(&v.to_le_bytes());
                            }
                        }
                    } else {
                        let w = params.get(&weight_name(layer)).ok_or_else(|| {
                            Error::InvalidArgument(format!("missing weight w{layer}"))
                        })?;
                        for v in w.data() {
                            buf.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                    let b = params.get(&bias_name(layer)).ok_or_else(|| {
                        Error::InvalidArgument(format!("missing bias b{layer}"))
                    })?;
                    for v in b.data() {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        CheckpointPayload::Scores(scores) => {
            buf.extend_from_slice(&(scores.len() as u32).to_le_bytes());
            for v in scores {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(fault(
                CheckpointFault::Truncated,
                format!("needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader {
        data: &data,
        pos: 0,
    };
    let magic = r.bytes(4).map_err(|_| {
        fault(CheckpointFault::NotACheckpoint, "file shorter than the magic")
    })?;
    if magic != MAGIC {
        return Err(fault(
            CheckpointFault::NotACheckpoint,
            format!("bad magic bytes {magic:?}"),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(fault(
            CheckpointFault::VersionMismatch,
            format!("file version {version}, supported {VERSION}"),
        ));
    }
    let kind = ModelKind::from_wire_byte(r.u8()?)?;
    let seed = r.u64()?;
    let epoch = r.u32()?;
    let digest: [u8; 32] = r.bytes(32)?.try_into().unwrap();

    let payload = match kind {
        ModelKind::ItemPop => {
            let n = r.u32()? as usize;
            CheckpointPayload::Scores(r.f64_vec(n)?)
        }
        _ => {
            let count = r.u8()? as usize;
            let expected = if kind.is_gan() { 2 } else { 1 };
            if count != expected {
                return Err(fault(
                    CheckpointFault::Corrupt,
                    format!("{} checkpoint must hold {expected} models, found {count}", kind.name()),
                ));
            }
            let mut models = Vec::with_capacity(count);
            for slot in 0..count {
                let n_layers = r.u32()? as usize;
                if n_layers == 0 || n_layers > 64 {
                    return Err(fault(
                        CheckpointFault::Corrupt,
                        format!("implausible layer count {n_layers}"),
                    ));
                }
                let mut dims = Vec::with_capacity(n_layers);
                for _ in 0..n_layers {
                    let fan_in = r.u32()? as usize;
                    let fan_out = r.u32()? as usize;
                    dims.push((fan_in, fan_out));
                }
                for w in dims.windows(2) {
                    if w[0].1 != w[1].0 {
                        return Err(fault(
                            CheckpointFault::Corrupt,
                            "layer dimensions do not chain",
                        ));
                    }
                }
                let spec = MlpSpec::new(
                    dims[0].0,
                    dims[..n_layers - 1].iter().map(|d| d.1).collect(),
                    dims[n_layers - 1].1,
                    slot_activation(kind, slot),
                )?;
                let mut params = ParamSet::new();
                for (layer, (fan_in, fan_out)) in dims.iter().enumerate() {
                    let w = r.f64_vec(fan_in * fan_out)?;
                    let b = r.f64_vec(*fan_out)?;
                    let corrupt = |e: Error| fault(CheckpointFault::Corrupt, e.to_string());
                    if layer == 0 && spec.activation == OutputActivation::Identity {
                        if fan_in % 2 != 0 {
                            return Err(fault(
                                CheckpointFault::Corrupt,
                                "critic input width must be even",
                            ));
                        }
                        let n = fan_in / 2;
                        let half = n * fan_out;
                        params.insert(
                            "w0c",
                            Tensor::new(vec![n, *fan_out], w[..half].to_vec()).map_err(corrupt)?,
                        )?;
                        params.insert(
                            "w0v",
                            Tensor::new(vec![n, *fan_out], w[half..].to_vec()).map_err(corrupt)?,
                        )?;
                    } else {
                        params.insert(
                            weight_name(layer),
                            Tensor::new(vec![*fan_in, *fan_out], w).map_err(corrupt)?,
                        )?;
                    }
                    params.insert(
                        bias_name(layer),
                        Tensor::new(vec![*fan_out], b).map_err(corrupt)?,
                    )?;
                }
                models.push((spec, params));
            }
            CheckpointPayload::Mlp(models)
        }
    };
    if r.pos != data.len() {
        return Err(fault(
            CheckpointFault::Corrupt,
            format!("{} trailing bytes", data.len() - r.pos),
        ));
    }
    Ok(Checkpoint {
        meta: CheckpointMeta {
            kind,
            seed,
            epoch,
            digest,
        },
        payload,
    })
}
