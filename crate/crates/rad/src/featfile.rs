//! Binary feature file.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "RADFEAT\0"
//! version      u16       1
//! dim          u32
//! count        u64
//! boundaries   u32 n, then n × u32 scale start offsets
//! flags        u8        bit 0: true labels present, bit 1: training labels present
//! provenance   u32 length + UTF-8
//! count records:
//!   id         u32 length + UTF-8
//!   features   dim × f64
//!   true label u8        0 nominal, 1 anomalous, 255 absent
//!   train label u8       same coding
//! ```
//!
//! Nothing may follow the last record. Reading and writing round-trip
//! bit-exactly.

use std::collections::HashSet;
use std::path::Path;

use rad_core::data::{FeatureSet, Label, Sample};

use crate::binio::{put_f64, put_str, put_u16, put_u32, put_u64, Reader};
use crate::error::{read_bytes, write_bytes, RadError, Result};

pub const MAGIC: &[u8; 8] = b"RADFEAT\0";
pub const VERSION: u16 = 1;

const FLAG_TRUE: u8 = 1;
const FLAG_TRAIN: u8 = 2;
const ABSENT: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelFlags {
    pub true_labels: bool,
    pub train_labels: bool,
}

impl LabelFlags {
    pub const ALL: LabelFlags = LabelFlags {
        true_labels: true,
        train_labels: true,
    };
    pub const TRUE_ONLY: LabelFlags = LabelFlags {
        true_labels: true,
        train_labels: false,
    };
}

/// A decoded file. Without true labels every sample reads as nominal.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub set: FeatureSet,
    pub flags: LabelFlags,
}

fn label_byte(l: Option<Label>) -> u8 {
    match l {
        Some(Label::Nominal) => 0,
        Some(Label::Anomalous) => 1,
        None => ABSENT,
    }
}

pub fn encode(set: &FeatureSet, flags: LabelFlags) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + set.len() * (set.dim() * 8 + 32));
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, VERSION);
    put_u32(&mut out, set.dim() as u32);
    put_u64(&mut out, set.len() as u64);
    put_u32(&mut out, set.scale_boundaries.len() as u32);
    for &b in &set.scale_boundaries {
        put_u32(&mut out, b as u32);
    }
    out.push(if flags.true_labels { FLAG_TRUE } else { 0 } | if flags.train_labels { FLAG_TRAIN } else { 0 });
    put_str(&mut out, &set.provenance);
    for s in set.samples() {
        put_str(&mut out, &s.id);
        for &v in &s.features {
            put_f64(&mut out, v);
        }
        out.push(label_byte(flags.true_labels.then_some(s.true_label)));
        out.push(label_byte(s.train_label.filter(|_| flags.train_labels)));
    }
    out
}

fn parse_label(b: u8, present: bool, what: &str, id: &str) -> Result<Option<Label>, String> {
    match (b, present) {
        (0, true) => Ok(Some(Label::Nominal)),
        (1, true) => Ok(Some(Label::Anomalous)),
        (ABSENT, false) => Ok(None),
        (ABSENT, true) if what == "training label" => Ok(None),
        _ => Err(format!("sample {id}: invalid {what} byte {b}")),
    }
}

pub fn decode(bytes: &[u8]) -> Result<FeatureFile, String> {
    let mut r = Reader::new(bytes);
    if r.take(8, "magic")? != MAGIC {
        return Err("not a feature file (bad magic bytes)".into());
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(format!("unsupported feature file version {version}"));
    }
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err("dimension must be ≥ 1".into());
    }
    let count = r.u64("count")?;
    let nb = r.count("boundary count", 4)?;
    let boundaries = (0..nb)
        .map(|_| r.u32("boundary").map(|b| b as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let raw_flags = r.u8("flags")?;
    if raw_flags & !(FLAG_TRUE | FLAG_TRAIN) != 0 {
        return Err(format!("unknown flag bits in {raw_flags:#04x}"));
    }
    let flags = LabelFlags {
        true_labels: raw_flags & FLAG_TRUE != 0,
        train_labels: raw_flags & FLAG_TRAIN != 0,
    };
    let provenance = r.str("provenance")?;
    let record_min = 4 + 8 * dim + 2;
    if count.saturating_mul(record_min as u64) > r.remaining() as u64 {
        return Err(format!(
            "header declares {count} records but only {} bytes follow",
            r.remaining()
        ));
    }
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = r.str("sample id")?;
        let features = (0..dim).map(|_| r.f64("feature")).collect::<Result<Vec<_>, _>>()?;
        let t = parse_label(r.u8("true label")?, flags.true_labels, "true label", &id)?;
        let train = parse_label(r.u8("training label")?, flags.train_labels, "training label", &id)?;
        samples.push(Sample {
            id,
            features,
            true_label: t.unwrap_or(Label::Nominal),
            train_label: train,
        });
    }
    if r.remaining() != 0 {
        return Err(format!("{} trailing bytes after the last record", r.remaining()));
    }
    let set = FeatureSet::new(dim, samples, provenance, boundaries).map_err(|e| e.to_string())?;
    Ok(FeatureFile { set, flags })
}

pub fn read(path: &Path) -> Result<FeatureFile> {
    decode(&read_bytes(path)?).map_err(|m| RadError::format(path, m))
}

pub fn write(path: &Path, set: &FeatureSet, flags: LabelFlags) -> Result<()> {
    write_bytes(path, &encode(set, flags))
}

/// Outcome of [`validate`]: errors make the file unusable, warnings do not.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Validation {
    pub dim: usize,
    pub records: usize,
    pub nominal: usize,
    pub anomalous: usize,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate(bytes: &[u8]) -> Validation {
    let mut v = Validation::default();
    let file = match decode(bytes) {
        Ok(f) => f,
        Err(e) => {
            v.errors.push(e);
            return v;
        }
    };
    let set = &file.set;
    v.dim = set.dim();
    v.records = set.len();
    v.nominal = set.count_true(Label::Nominal);
    v.anomalous = set.count_true(Label::Anomalous);
    if set.is_empty() {
        v.warnings.push("file holds no records".into());
    }
    if !file.flags.true_labels {
        v.warnings.push("no true labels; the file can be scored but not evaluated".into());
    }
    if file.flags.train_labels && set.samples().iter().any(|s| s.train_label.is_none()) {
        v.warnings.push("training labels flagged present but missing for some records".into());
    }
    if set.scale_boundaries.first().is_some_and(|&b| b != 0) {
        v.warnings.push("first scale boundary is not 0".into());
    }
    let mut seen = HashSet::new();
    let dups: Vec<&str> = set.samples().iter().map(|s| s.id.as_str()).filter(|id| !seen.insert(*id)).collect();
    if !dups.is_empty() {
        v.warnings.push(format!("{} duplicate ids, first: {}", dups.len(), dups[0]));
    }
    if set.len() >= 2 {
        let flat: Vec<usize> = (0..set.dim())
            .filter(|&j| set.samples().iter().all(|s| s.features[j] == set.samples()[0].features[j]))
            .collect();
        if !flat.is_empty() {
            v.warnings.push(format!("{} constant feature columns, first: {}", flat.len(), flat[0]));
        }
    }
    v
}
