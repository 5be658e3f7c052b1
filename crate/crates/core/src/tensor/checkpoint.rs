//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "TRACECKP"
//! version    u32      1
//! header_len u64
//! header     header_len bytes of UTF-8 JSON (see `Header`)
//! payload    f64 values of every parameter, in header order, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Result, TraceError};

const MAGIC: &[u8; 8] = b"TRACECKP";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    frozen_row: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_kind: String,
    config: serde_json::Value,
    seed: u64,
    step: u64,
    param_count: usize,
    checksum: String,
    params: Vec<ParamEntry>,
    extra: serde_json::Value,
}

/// Parameters plus everything needed to rebuild the model around them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_kind: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Auxiliary state persisted with the weights (vocabularies, scalers).
    pub extra: serde_json::Value,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self
            .store
            .ids()
            .map(|id| ParamEntry {
                name: self.store.name(id).to_string(),
                shape: self.store.get(id).shape().to_vec(),
                frozen_row: self.store.frozen_row(id),
            })
            .collect();
        let header = Header {
            model_kind: self.model_kind.clone(),
            config: self.config.clone(),
            seed: self.seed,
            step: self.store.step(),
            param_count: self.store.num_scalars(),
            checksum: self.store.checksum(),
            params,
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * header.param_count);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for id in self.store.ids() {
            for x in self.store.get(id).data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| TraceError::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut payload = &bytes[20 + hlen..];
        if payload.len() != 8 * header.param_count {
            return Err(bad("payload size does not match header"));
        }
        let mut store = ParamStore::new();
        for p in &header.params {
            let n: usize = p.shape.iter().product();
            let (chunk, rest) = payload.split_at(8 * n);
            payload = rest;
            let data = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let t = Tensor::new(p.shape.clone(), data)?;
            match p.frozen_row {
                Some(r) => store.add_embedding(p.name.clone(), t, r)?,
                None => store.add(p.name.clone(), t)?,
            };
        }
        if store.checksum() != header.checksum {
            return Err(bad("checksum mismatch"));
        }
        Ok(Checkpoint {
            model_kind: header.model_kind,
            config: header.config,
            seed: header.seed,
            extra: header.extra,
            store,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn exact_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add("w", Tensor::randn(&[3, 5], 1.0, &mut rng)).unwrap();
        store
            .add_embedding("emb", Tensor::randn(&[4, 2], 1.0, &mut rng), 0)
            .unwrap();
        store.add("tiny", Tensor::scalar(f64::MIN_POSITIVE)).unwrap();
        let ck = Checkpoint {
            model_kind: "test".into(),
            config: serde_json::json!({"a": 1}),
            seed: 99,
            extra: serde_json::Value::Null,
            store,
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.seed, 99);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.store.checksum(), ck.store.checksum());
        for id in ck.store.ids() {
            assert_eq!(back.store.get(id), ck.store.get(id));
            assert_eq!(back.store.frozen_row(id), ck.store.frozen_row(id));
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0)).unwrap();
        let ck = Checkpoint {
            model_kind: "t".into(),
            config: serde_json::Value::Null,
            seed: 0,
            extra: serde_json::Value::Null,
            store,
        };
        let mut bytes = ck.to_bytes().unwrap();
        *bytes.last_mut().unwrap() ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
    }
}
