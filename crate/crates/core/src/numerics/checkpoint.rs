//! Parameter checkpoints.
//!
//! A checkpoint is a JSON document:
//!
//! ```json
//! {
//!   "format": "seqroute-params",
//!   "version": 1,
//!   "params": {
//!     "<name>": { "shape": [rows, cols], "values": [f64, ...] }
//!   }
//! }
//! ```
//!
//! Parameters are keyed by name in sorted order and values are written in
//! row-major order using the shortest decimal form that round-trips to the
//! same `f64`, so a save/load cycle is exact and files are byte-stable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "seqroute-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params: store.iter().map(|(_, name, t)| (name.to_string(), t.clone())).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Input(format!("unknown checkpoint format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!("unsupported checkpoint version {}", ck.version)));
        }
        for (name, t) in &ck.params {
            // Deserialization bypasses the constructor checks.
            Tensor::new(t.shape().to_vec(), t.values().to_vec())
                .map_err(|e| Error::Input(format!("parameter {name}: {e}")))?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Overwrites every parameter of `store` by name. Names and shapes must
    /// match exactly.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Input(format!(
                "checkpoint holds {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, t) in &self.params {
            let id =
                store.id(name).ok_or_else(|| Error::Input(format!("checkpoint parameter {name} unknown to model")))?;
            if store.get(id).shape() != t.shape() {
                return Err(Error::Input(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::matrix(2, 2, vec![0.1, -0.2, 1.0 / 3.0, 7e-17]).unwrap()).unwrap();
        s.add("b", Tensor::vector(vec![std::f64::consts::PI]).unwrap()).unwrap();
        s
    }

    #[test]
    fn roundtrip_is_exact() {
        let s = store();
        let json = Checkpoint::from_store(&s).to_json().unwrap();
        let mut fresh = ParamStore::new();
        fresh.add("w", Tensor::zeros(&[2, 2])).unwrap();
        fresh.add("b", Tensor::zeros(&[1])).unwrap();
        Checkpoint::from_json(&json).unwrap().apply_to(&mut fresh).unwrap();
        assert_eq!(fresh, s);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = store();
        let ck = Checkpoint::from_store(&s);
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(&[4])).unwrap();
        other.add("b", Tensor::zeros(&[1])).unwrap();
        assert!(ck.apply_to(&mut other).is_err());
    }

    #[test]
    fn wrong_format_rejected() {
        let text = r#"{"format":"other","version":1,"params":{}}"#;
        assert!(Checkpoint::from_json(text).is_err());
        let text = r#"{"format":"seqroute-params","version":1,"params":{"x":{"shape":[3],"values":[1.0]}}}"#;
        assert!(Checkpoint::from_json(text).is_err());
    }
}
