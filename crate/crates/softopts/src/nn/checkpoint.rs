//! Self-describing checkpoint files.
//!
//! A checkpoint is a single JSON document: a format-version field, a free-form
//! metadata object (architecture manifest, option count, head names), and a
//! map of tensor name -> shape + row-major f64 values. serde_json round-trips
//! finite f64 exactly, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::store::{Init, ParamStore};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    /// Captures every tensor in the store. Fails on non-finite values, which
    /// JSON cannot represent.
    pub fn capture(store: &ParamStore, meta: serde_json::Value) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for id in store.ids() {
            let t = store.tensor(id);
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "tensor `{}` contains non-finite values, refusing to checkpoint",
                    t.name()
                )));
            }
            tensors.insert(
                t.name().to_string(),
                TensorRecord {
                    shape: t.shape().to_vec(),
                    data: t.data.clone(),
                },
            );
        }
        Ok(Checkpoint {
            format_version: CHECKPOINT_VERSION,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let json = serde_json::to_string(self)
            .map_err(|e| Error::format(format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("invalid checkpoint {}: {e}", path.display())))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "checkpoint {} has format version {}, this build reads {}",
                path.display(),
                ckpt.format_version,
                CHECKPOINT_VERSION
            )));
        }
        Ok(ckpt)
    }

    /// Copies values for tensors matching `select` into an existing store.
    /// Missing tensors or shape mismatches are configuration errors.
    pub fn install(&self, store: &mut ParamStore, select: impl Fn(&str) -> bool) -> Result<usize> {
        let mut installed = 0;
        for (name, rec) in &self.tensors {
            if !select(name) {
                continue;
            }
            let id = store.id(name).map_err(|_| {
                Error::config(format!("checkpoint tensor `{name}` not present in target store"))
            })?;
            if store.tensor(id).shape() != rec.shape.as_slice() {
                return Err(Error::config(format!(
                    "checkpoint tensor `{name}` has shape {:?}, store expects {:?}",
                    rec.shape,
                    store.tensor(id).shape()
                )));
            }
            store.tensor_mut(id).data.copy_from_slice(&rec.data);
            installed += 1;
        }
        Ok(installed)
    }

    /// Registers every checkpointed tensor into a fresh store.
    pub fn restore_all(&self, store: &mut ParamStore) -> Result<()> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for (name, rec) in &self.tensors {
            let id = store.register(name, &rec.shape, Init::Zeros, &mut rng)?;
            store.tensor_mut(id).data.copy_from_slice(&rec.data);
        }
        Ok(())
    }
}

use rand::SeedableRng;

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        store
            .register("a.w", &[3, 2], Init::Orthogonal { gain: 1.3 }, &mut rng)
            .unwrap();
        store.register("a.b", &[3], Init::Constant(0.1), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let meta = serde_json::json!({"option_count": 4});
        Checkpoint::capture(&store, meta).unwrap().save(&path).unwrap();

        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.meta["option_count"], 4);
        let mut restored = ParamStore::new();
        loaded.restore_all(&mut restored).unwrap();
        for id in store.ids() {
            let t = store.tensor(id);
            let r = restored.tensor(restored.id(t.name()).unwrap());
            assert_eq!(t.shape(), r.shape());
            for (a, b) in t.data.iter().zip(r.data.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("old.json");
        std::fs::write(&path, r#"{"format_version":99,"tensors":{}}"#).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn shape_mismatch_on_install_is_config_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        store.register("w", &[2, 2], Init::Zeros, &mut rng).unwrap();
        let ckpt = Checkpoint::capture(&store, serde_json::Value::Null).unwrap();
        let mut other = ParamStore::new();
        other.register("w", &[3, 2], Init::Zeros, &mut rng).unwrap();
        assert!(matches!(
            ckpt.install(&mut other, |_| true),
            Err(Error::Config(_))
        ));
    }
}
