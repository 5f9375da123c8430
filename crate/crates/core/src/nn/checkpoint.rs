//! JSON checkpoint container: parameters grouped into sections by the name
//! prefix before the first `.` (`generator`, `policy`, ...).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParamStore, Tensor};

pub const FORMAT: &str = "cueflow-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub sections: BTreeMap<String, Vec<ParamRecord>>,
}

fn section_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: BTreeMap<String, serde_json::Value>) -> Self {
        let mut sections: BTreeMap<String, Vec<ParamRecord>> = BTreeMap::new();
        for (_, p) in store.iter() {
            sections
                .entry(section_of(&p.name).to_string())
                .or_default()
                .push(ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.values().to_vec(),
                });
        }
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            meta,
            sections,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint values are finite")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
        if ckpt.format != FORMAT {
            return Err(Error::format("checkpoint", format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {}", ckpt.version),
            ));
        }
        for rec in ckpt.sections.values().flatten() {
            let n: usize = rec.shape.iter().product();
            if n != rec.values.len() {
                return Err(Error::format(
                    "checkpoint",
                    format!("`{}` has {} values for shape {:?}", rec.name, rec.values.len(), rec.shape),
                ));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Canonical bytes of one section, used to compare frozen parts.
    pub fn section_bytes(&self, section: &str) -> Option<Vec<u8>> {
        self.sections
            .get(section)
            .map(|recs| serde_json::to_vec(recs).expect("finite values"))
    }

    /// Overwrites matching parameters in `store`. Every parameter of the
    /// store must be present with the same shape.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        let by_name: BTreeMap<&str, &ParamRecord> = self
            .sections
            .values()
            .flatten()
            .map(|r| (r.name.as_str(), r))
            .collect();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.get(id).name.clone();
            let rec = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter `{name}`")))?;
            let p = store.get_mut(id);
            if rec.shape != p.value.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("`{name}` has shape {:?}, model expects {:?}", rec.shape, p.value.shape()),
                ));
            }
            p.value = Tensor::new(&rec.shape, rec.values.clone())?;
        }
        Ok(())
    }
}
