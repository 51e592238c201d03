//! Binary checkpoints: `RSCK`, a u32 version, a length-prefixed JSON header
//! with configs, counters and history, then length-prefixed f64 arrays (all
//! little-endian).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::gan::{EpochRecord, GanState, TrainConfig};
use super::generator::{Generator, GeneratorConfig};
use crate::diff_ops::StageConfig;
use crate::error::{Error, Result};
use crate::tag_model::TagGeometry;

pub const MAGIC: &[u8; 4] = b"RSCK";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

impl OptimizerHeader {
    fn of(a: &Adam) -> Self {
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            step: a.step,
        }
    }

    fn restore(self, m: Vec<f64>, v: Vec<f64>) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
            m,
            v,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    train: TrainConfig,
    resolution: usize,
    generator: GeneratorConfig,
    stages: StageConfig,
    discriminator: DiscriminatorConfig,
    geometry: TagGeometry,
    penalty_weight: f64,
    step: u64,
    epoch: usize,
    history: Vec<EpochRecord>,
    opt_g: OptimizerHeader,
    opt_d: OptimizerHeader,
}

/// A trained state together with the config it was trained under.
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: GanState,
}

fn write_array(out: &mut Vec<u8>, v: &[f64]) {
    out.extend((v.len() as u64).to_le_bytes());
    for x in v {
        out.extend(x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array(&mut self) -> std::result::Result<Vec<f64>, String> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or("array length overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn encode(config: &TrainConfig, state: &GanState) -> Result<Vec<u8>> {
    let header = Header {
        train: config.clone(),
        resolution: state.generator.resolution(),
        generator: state.generator.config.clone(),
        stages: state.generator.stages.clone(),
        discriminator: state.discriminator.config.clone(),
        geometry: state.geometry.clone(),
        penalty_weight: state.penalty_weight,
        step: state.step,
        epoch: state.epoch,
        history: state.history.clone(),
        opt_g: OptimizerHeader::of(&state.opt_g),
        opt_d: OptimizerHeader::of(&state.opt_d),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((json.len() as u64).to_le_bytes());
    out.extend(&json);
    for v in [
        &state.generator.params,
        &state.discriminator.params,
        &state.opt_g.m,
        &state.opt_g.v,
        &state.opt_d.m,
        &state.opt_d.v,
    ] {
        write_array(&mut out, v);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |reason: String| Error::format(path, reason);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(&fail)? != MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4).map_err(&fail)?.try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u64().map_err(&fail)? as usize;
    let header: Header = serde_json::from_slice(r.take(n).map_err(&fail)?).map_err(|e| fail(format!("header: {e}")))?;
    let mut arrays = Vec::new();
    for _ in 0..6 {
        arrays.push(r.array().map_err(&fail)?);
    }
    if r.pos != bytes.len() {
        return Err(fail("trailing bytes".into()));
    }
    let mut it = arrays.into_iter();
    let mut next = || it.next().unwrap();
    let generator = Generator::from_params(header.generator, header.stages, header.resolution, next())?;
    let discriminator = Discriminator::from_params(header.discriminator, header.resolution, next())?;
    let (gm, gv, dm, dv) = (next(), next(), next(), next());
    if gm.len() != generator.num_params()
        || gv.len() != generator.num_params()
        || dm.len() != discriminator.num_params()
        || dv.len() != discriminator.num_params()
    {
        return Err(fail("optimizer moments do not match parameter counts".into()));
    }
    Ok(Checkpoint {
        config: header.train,
        state: GanState {
            generator,
            discriminator,
            opt_g: header.opt_g.restore(gm, gv),
            opt_d: header.opt_d.restore(dm, dv),
            geometry: header.geometry,
            penalty_weight: header.penalty_weight,
            step: header.step,
            epoch: header.epoch,
            history: header.history,
        },
    })
}

pub fn save(path: &Path, config: &TrainConfig, state: &GanState) -> Result<()> {
    let bytes = encode(config, state)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
