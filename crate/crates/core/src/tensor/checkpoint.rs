//! Single-file parameter container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` manifest length, a JSON
//! manifest, then every entry as raw little-endian `f32` values in manifest
//! order. All integers are little-endian.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimizerState, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VS4DCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub model: String,
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: String,
    meta: BTreeMap<String, String>,
    entries: Vec<EntryHeader>,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

impl Checkpoint {
    pub fn new(model: impl Into<String>) -> Self {
        Self { model: model.into(), ..Default::default() }
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.entries.push(Entry {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            data: tensor.data().iter().map(|x| x.f64() as f32).collect(),
        });
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self
            .entry(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no entry {name}")))?;
        Tensor::new(e.shape.clone(), e.data.iter().map(|&x| T::of(x as f64)).collect())
    }

    /// Adds every parameter of `store`, prefixing names with `namespace`.
    pub fn push_params<T: Real>(&mut self, namespace: &str, store: &ParamStore<T>) {
        for (name, t) in store.names().iter().zip(store.tensors()) {
            self.push(format!("{namespace}{name}"), t);
        }
    }

    /// Restores every parameter of `store` from entries under `namespace`.
    pub fn load_params<T: Real>(&self, namespace: &str, store: &mut ParamStore<T>) -> Result<()> {
        let mut loaded = Vec::with_capacity(store.len());
        for name in store.names() {
            loaded.push((name.clone(), self.tensor::<T>(&format!("{namespace}{name}"))?));
        }
        store.load(loaded.iter().map(|(n, t)| (n.as_str(), t.clone())))
    }

    pub fn push_optimizer<T: Real>(&mut self, namespace: &str, store: &ParamStore<T>, state: &OptimizerState<T>) {
        for (i, name) in store.names().iter().enumerate() {
            let shape = store.tensors()[i].shape().to_vec();
            for (kind, buf) in [("m", &state.m[i]), ("v", &state.v[i])] {
                self.entries.push(Entry {
                    name: format!("{namespace}adam/{kind}/{name}"),
                    shape: shape.clone(),
                    data: buf.iter().map(|x| x.f64() as f32).collect(),
                });
            }
        }
        self.meta.insert(format!("{namespace}adam/step"), state.step.to_string());
    }

    pub fn load_optimizer<T: Real>(&self, namespace: &str, store: &ParamStore<T>) -> Result<OptimizerState<T>> {
        let mut state = OptimizerState::zeros(store);
        for (i, name) in store.names().iter().enumerate() {
            state.m[i] = self.tensor::<T>(&format!("{namespace}adam/m/{name}"))?.into_data();
            state.v[i] = self.tensor::<T>(&format!("{namespace}adam/v/{name}"))?.into_data();
        }
        state.step = self
            .meta
            .get(&format!("{namespace}adam/step"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("checkpoint lacks optimizer step".into()))?;
        Ok(state)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let h = EntryHeader {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    offset,
                    len: e.data.len() as u64,
                };
                offset += 4 * e.data.len() as u64;
                h
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model: self.model.clone(),
            meta: self.meta.clone(),
            entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in &self.entries {
            for x in &e.data {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20usize.checked_add(mlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[20..body]).map_err(|e| bad(&format!("manifest: {e}")))?;
        if manifest.format_version != version {
            return Err(bad("manifest version disagrees with header"));
        }
        let data = &bytes[body..];
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for h in manifest.entries {
            let start = h.offset as usize;
            let end = start + 4 * h.len as usize;
            if end > data.len() {
                return Err(bad(&format!("entry {} out of bounds", h.name)));
            }
            if h.shape.iter().product::<usize>() != h.len as usize {
                return Err(bad(&format!("entry {} shape disagrees with length", h.name)));
            }
            let values = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            entries.push(Entry { name: h.name, shape: h.shape, data: values });
        }
        Ok(Self { model: manifest.model, meta: manifest.meta, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::Init;
    use proptest::prelude::*;

    #[test]
    fn params_and_optimizer_round_trip() {
        let mut store = ParamStore::<f64>::new();
        let mut r = rng::rng(3);
        store.add("a/w", vec![2, 3], Init::FanIn(2), &mut r);
        store.add("a/b", vec![3], Init::Zeros, &mut r);
        let cast = store.cast::<f32>().cast::<f64>();
        let mut state = OptimizerState::zeros(&cast);
        state.step = 7;
        state.m[0][1] = 0.25;
        let mut ck = Checkpoint::new("toy");
        ck.meta.insert("config".into(), "{}".into());
        ck.push_params("toy/", &cast);
        ck.push_optimizer("toy/", &cast, &state);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let mut restored = ParamStore::<f64>::new();
        let mut r = rng::rng(99);
        restored.add("a/w", vec![2, 3], Init::Zeros, &mut r);
        restored.add("a/b", vec![3], Init::Ones, &mut r);
        back.load_params("toy/", &mut restored).unwrap();
        assert_eq!(restored.tensors(), cast.tensors());
        assert_eq!(back.load_optimizer("toy/", &restored).unwrap(), state);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut bytes = Checkpoint::new("x").to_bytes();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn byte_exact_round_trip(values in proptest::collection::vec(any::<u32>(), 1..64), name in "[a-z/]{1,12}") {
            let data: Vec<f32> = values.iter().map(|&b| f32::from_bits(b)).collect();
            let ck = Checkpoint {
                model: "p".into(),
                meta: BTreeMap::new(),
                entries: vec![Entry { name, shape: vec![data.len()], data }],
            };
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
