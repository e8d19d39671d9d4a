//! Dataset manifest: a TOML file naming feature files, their split roles and
//! class names. Relative paths resolve against the manifest's directory.
//!
//! ```toml
//! version = 1
//! classes = ["synthetic"]
//!
//! [[file]]
//! path = "train.radfeat"
//! role = "train"
//! class = "synthetic"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{read_bytes, write_bytes, RadError, Result};
use crate::featfile::{self, FeatureFile};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub role: Role,
    pub class: String,
}

/// Parameters of the synthetic generator, when the data came from `rad synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub dim: usize,
    pub nominal: usize,
    pub anomalous: usize,
    pub test_nominal: usize,
    pub test_anomalous: usize,
    pub separation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub classes: Vec<String>,
    #[serde(rename = "file")]
    pub files: Vec<FileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub path: PathBuf,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_toml().as_bytes())
    }
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(read_bytes(path)?).map_err(|_| RadError::format(path, "manifest is not UTF-8"))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| RadError::format(path, e.message().to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(RadError::format(path, format!("unsupported manifest version {}", manifest.version)));
        }
        for f in &manifest.files {
            if !manifest.classes.contains(&f.class) {
                return Err(RadError::format(path, format!("file {} names unknown class {}", f.path, f.class)));
            }
        }
        Ok(Dataset {
            manifest,
            path: path.to_path_buf(),
        })
    }

    pub fn resolve(&self, entry: &FileEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new("")).join(p)
        }
    }

    /// The single file with `role` for `class` (or the only class when `None`).
    pub fn entry(&self, role: Role, class: Option<&str>) -> Result<&FileEntry> {
        let class = match class {
            Some(c) => c.to_string(),
            None if self.manifest.classes.len() == 1 => self.manifest.classes[0].clone(),
            None => {
                return Err(RadError::Config(format!(
                    "{} lists several classes; choose one with --class",
                    self.path.display()
                )))
            }
        };
        let mut hits = self.manifest.files.iter().filter(|f| f.role == role && f.class == class);
        match (hits.next(), hits.next()) {
            (Some(f), None) => Ok(f),
            (None, _) => Err(RadError::format(&self.path, format!("no {role} file for class {class}"))),
            (Some(_), Some(_)) => Err(RadError::format(&self.path, format!("several {role} files for class {class}"))),
        }
    }

    pub fn read(&self, role: Role, class: Option<&str>) -> Result<(PathBuf, FeatureFile)> {
        let path = self.resolve(self.entry(role, class)?);
        let file = featfile::read(&path)?;
        Ok((path, file))
    }

    /// Train and test files for one class, checked for matching dimension.
    pub fn read_pair(&self, class: Option<&str>) -> Result<(FeatureFile, FeatureFile)> {
        let (tp, train) = self.read(Role::Train, class)?;
        let (sp, test) = self.read(Role::Test, class)?;
        if train.set.dim() != test.set.dim() {
            return Err(RadError::DimensionMismatch {
                left: tp,
                left_dim: train.set.dim(),
                right: sp,
                right_dim: test.set.dim(),
            });
        }
        Ok((train, test))
    }
}
