//! Parameter file: `u64` little-endian header length, a JSON header, then the
//! raw little-endian `f64` data of every tensor back to back.
//!
//! ```text
//! {"meta": {...}, "tensors": [{"name": "gpc1.theta", "shape": [8, 1], "offset": 0}, ...]}
//! ```
//!
//! `offset` counts bytes from the start of the data section.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelGraph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

/// Decoded parameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &ModelGraph, meta: serde_json::Value) -> Self {
        Checkpoint {
            meta,
            tensors: model.params().map(|(n, p)| (n, p.value.clone())).collect(),
        }
    }

    /// Copies the stored tensors into `model`, matching by qualified name.
    pub fn apply(&self, model: &mut ModelGraph) -> Result<()> {
        let expected = model.params().count();
        if expected != self.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model has {expected}",
                self.tensors.len()
            )));
        }
        for (name, _, p) in model.params_mut() {
            let stored = self
                .tensors
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Config(format!("checkpoint has no tensor `{name}`")))?;
            stored.1.ensure_shape(p.value.shape(), &name)?;
            p.value = stored.1.clone();
        }
        Ok(())
    }
}

pub fn write_checkpoint(out: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    let mut offset = 0u64;
    let tensors = ckpt
        .tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.len() as u64;
            e
        })
        .collect();
    let header = Header {
        meta: ckpt.meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Json {
        context: "checkpoint header".into(),
        source: e,
    })?;
    let io = |e| Error::io("writing checkpoint", e);
    out.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    let mut buf = Vec::with_capacity(offset as usize);
    for (_, t) in &ckpt.tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io)
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Checkpoint> {
    let bad = |m: String| Error::format("<checkpoint>", m);
    let mut len = [0u8; 8];
    input
        .read_exact(&mut len)
        .map_err(|_| bad("truncated header length".into()))?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(bad(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json).map_err(|_| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    let mut data = Vec::new();
    input
        .read_to_end(&mut data)
        .map_err(|e| Error::io("reading checkpoint", e))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * n;
        if end > data.len() {
            return Err(bad(format!("tensor `{}` extends past end of file", e.name)));
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((e.name, Tensor::new(&e.shape, values)?));
    }
    Ok(Checkpoint {
        meta: header.meta,
        tensors,
    })
}

pub fn save_checkpoint(path: &Path, model: &ModelGraph, meta: serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
    }
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &Checkpoint::from_model(model, meta))?;
    fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_checkpoint(&mut bytes.as_slice()).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(path.display().to_string(), message),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{Dense, Relu};

    fn model(seed: u64) -> ModelGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ModelGraph::new(&[5]);
        m.push("fc1", Dense::new(5, 4, &mut rng)).unwrap();
        m.push("relu", Relu::default()).unwrap();
        m.push("fc2", Dense::new(4, 1, &mut rng)).unwrap();
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = model(1);
        let mut buf = Vec::new();
        let ckpt = Checkpoint::from_model(&a, serde_json::json!({"kind": "test"}));
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);

        let mut b = model(2);
        back.apply(&mut b).unwrap();
        let x = Tensor::vector(vec![0.1, -0.4, 0.9, 1.3, -2.0]);
        let mut a = a;
        assert_eq!(a.forward(&x).unwrap().logit, b.forward(&x).unwrap().logit);
    }

    #[test]
    fn header_layout() {
        let ckpt = Checkpoint::from_model(&model(3), serde_json::Value::Null);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let len = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[8..8 + len]).unwrap();
        let offsets: Vec<u64> = header["tensors"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["offset"].as_u64().unwrap())
            .collect();
        assert_eq!(offsets, vec![0, 160, 192, 224]);
        assert_eq!(buf.len(), 8 + len + 8 * (20 + 4 + 4 + 1));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &Checkpoint::from_model(&model(4), serde_json::Value::Null)).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::Format { .. })));
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let ckpt = Checkpoint::from_model(&model(5), serde_json::Value::Null);
        let mut other = ModelGraph::new(&[5]);
        other
            .push("fc1", Dense::new(5, 1, &mut ChaCha8Rng::seed_from_u64(0)))
            .unwrap();
        assert!(ckpt.apply(&mut other).is_err());
    }
}
