//! Binary checkpoint of everything needed to score new data: the flow, the
//! feature standardizer, the scoring transforms and the fitted threshold.
//!
//! ```text
//! magic      8 bytes  "RADFLOW\0"
//! version    u16      1
//! dim        u32
//! blocks     u32
//! k, t, q1, q3        f64 each
//! mean, scale         dim × f64 each
//! transforms u32 n, then per transform: kind u8 (0 identity, 1 rotation,
//!            2 sign flip), seed u64, then dim×dim or dim f64 (none for identity)
//! per block: s_max f64, permutation dim × u32, mask dim × u8,
//!            8 tensors as (rank u32, rank × u32 extents, data f64)
//! ```

use std::path::Path;

use rad_core::flow::{CouplingBlock, FlowModel, Subnet, TENSORS_PER_BLOCK};
use rad_core::ndgrad::Tensor;
use rad_core::pipeline::{Standardizer, TrainOutcome};
use rad_core::scoring::{score_all, ScoreReport, Threshold, Transform, TransformSet};

use crate::binio::{put_f64, put_u16, put_u32, put_u64, Reader};
use crate::error::{read_bytes, write_bytes, RadError, Result};

pub const MAGIC: &[u8; 8] = b"RADFLOW\0";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FlowModel,
    pub standardizer: Standardizer,
    pub transforms: TransformSet,
    pub threshold: Threshold,
    pub k: f64,
}

impl Checkpoint {
    pub fn from_outcome(o: &TrainOutcome) -> Self {
        Checkpoint {
            model: o.model.clone(),
            standardizer: o.standardizer.clone(),
            transforms: o.transforms.clone(),
            threshold: o.threshold,
            k: o.k,
        }
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Scores `rows` and flags them against the stored threshold.
    pub fn score<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<ScoreReport> {
        let z: Vec<Vec<f64>> = rows.iter().map(|r| self.standardizer.apply(r.as_ref())).collect();
        let scores = score_all(&self.model, &self.transforms, &z)?;
        Ok(ScoreReport::with_threshold(scores, self.threshold, self.k))
    }

    pub fn encode(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        put_u32(&mut out, d as u32);
        put_u32(&mut out, self.model.blocks().len() as u32);
        for v in [self.k, self.threshold.t, self.threshold.q1, self.threshold.q3] {
            put_f64(&mut out, v);
        }
        for &v in self.standardizer.mean.iter().chain(&self.standardizer.scale) {
            put_f64(&mut out, v);
        }
        put_u32(&mut out, self.transforms.len() as u32);
        for t in self.transforms.transforms() {
            let (kind, seed, data): (u8, u64, &[f64]) = match t {
                Transform::Identity => (0, 0, &[]),
                Transform::Rotation { seed, matrix } => (1, *seed, matrix),
                Transform::SignFlip { seed, signs } => (2, *seed, signs),
            };
            out.push(kind);
            put_u64(&mut out, seed);
            data.iter().for_each(|&v| put_f64(&mut out, v));
        }
        for b in self.model.blocks() {
            put_f64(&mut out, b.s_max());
            b.permutation().iter().for_each(|&p| put_u32(&mut out, p as u32));
            out.extend(b.mask().iter().map(|&m| m as u8));
            for t in b.params() {
                put_u32(&mut out, t.shape().len() as u32);
                t.shape().iter().for_each(|&e| put_u32(&mut out, e as u32));
                t.data().iter().for_each(|&v| put_f64(&mut out, v));
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(bytes);
        if r.take(8, "magic")? != MAGIC {
            return Err("not a checkpoint (bad magic bytes)".into());
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let d = r.u32("dim")? as usize;
        let nblocks = r.count("block count", 8)?;
        if d == 0 || nblocks == 0 {
            return Err("checkpoint needs d ≥ 1 and at least one block".into());
        }
        let k = r.f64("k")?;
        let threshold = Threshold {
            t: r.f64("threshold")?,
            q1: r.f64("q1")?,
            q3: r.f64("q3")?,
        };
        let mut vec_of = |n: usize, what: &str| (0..n).map(|_| r.f64(what)).collect::<Result<Vec<_>, _>>();
        let mean = vec_of(d, "standardizer mean")?;
        let scale = vec_of(d, "standardizer scale")?;
        let nt = r.count("transform count", 9)?;
        let mut transforms = Vec::with_capacity(nt);
        for _ in 0..nt {
            let kind = r.u8("transform kind")?;
            let seed = r.u64("transform seed")?;
            let mut floats = |n: usize| (0..n).map(|_| r.f64("transform data")).collect::<Result<Vec<_>, _>>();
            transforms.push(match kind {
                0 => Transform::Identity,
                1 => Transform::Rotation {
                    seed,
                    matrix: floats(d * d)?,
                },
                2 => Transform::SignFlip { seed, signs: floats(d)? },
                _ => return Err(format!("unknown transform kind {kind}")),
            });
        }
        if transforms.first() != Some(&Transform::Identity) {
            return Err("the first scoring transform must be the identity".into());
        }
        let mut blocks = Vec::with_capacity(nblocks);
        for _ in 0..nblocks {
            let s_max = r.f64("s_max")?;
            let permutation = (0..d)
                .map(|_| r.u32("permutation").map(|p| p as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let mask = (0..d)
                .map(|_| match r.u8("mask")? {
                    0 => Ok(false),
                    1 => Ok(true),
                    b => Err(format!("invalid mask byte {b}")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut tensors = Vec::with_capacity(TENSORS_PER_BLOCK);
            for _ in 0..TENSORS_PER_BLOCK {
                let rank = r.count("tensor rank", 4)?;
                let shape = (0..rank)
                    .map(|_| r.u32("tensor extent").map(|e| e as usize))
                    .collect::<Result<Vec<_>, _>>()?;
                let n: usize = shape.iter().product();
                if n.saturating_mul(8) > r.remaining() {
                    return Err(format!("tensor of {n} values exceeds the remaining bytes"));
                }
                let data = (0..n).map(|_| r.f64("tensor data")).collect::<Result<Vec<_>, _>>()?;
                tensors.push(Tensor::new(shape, data).map_err(|e| e.to_string())?);
            }
            let mut it = tensors.into_iter();
            let mut net = || Subnet {
                w1: it.next().unwrap(),
                b1: it.next().unwrap(),
                w2: it.next().unwrap(),
                b2: it.next().unwrap(),
            };
            let (scale_net, shift_net) = (net(), net());
            blocks.push(CouplingBlock::new(mask, permutation, s_max, scale_net, shift_net).map_err(|e| e.to_string())?);
        }
        if r.remaining() != 0 {
            return Err(format!("{} trailing bytes after the last block", r.remaining()));
        }
        let model = FlowModel::from_blocks(blocks).map_err(|e| e.to_string())?;
        Ok(Checkpoint {
            model,
            standardizer: Standardizer { mean, scale },
            transforms: TransformSet::from_transforms(transforms),
            threshold,
            k,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_bytes(path)?).map_err(|m| RadError::format(path, m))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.encode())
    }
}
