//! Checkpoint files.
//!
//! ```text
//! SEQCOPY1
//! emb_size=32
//! hidden_size=64
//! ...
//! encoder.src_emb<TAB>204,32<TAB>f32
//! ...
//! <blank line>
//! <little-endian f32 values, row-major, in header order>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Hyper, Model};
use crate::numcore::{ParameterStore, Tensor};

pub const MAGIC: &str = "SEQCOPY1";

/// Serializes the model's weights at 32-bit precision.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut header = format!("{MAGIC}\n");
    for (k, v) in model.hyper.to_pairs() {
        let _ = writeln!(header, "{k}={v}");
    }
    for (_, name, t) in model.store.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(header, "{name}\t{}\tf32", shape.join(","));
    }
    header.push('\n');
    let mut out = header.into_bytes();
    for (_, _, t) in model.store.iter() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn hyper_from(pairs: &[(String, usize)]) -> Result<Hyper> {
    let get = |key: &str| {
        pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::Format(format!("missing hyperparameter {key}")))
    };
    Ok(Hyper {
        emb_size: get("emb_size")?,
        hidden_size: get("hidden_size")?,
        src_vocab_size: get("src_vocab_size")?,
        tgt_vocab_size: get("tgt_vocab_size")?,
        max_copy_len: get("max_copy_len")?,
    })
}

/// Parses a checkpoint and rebuilds the model.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let magic = format!("{MAGIC}\n");
    if !bytes.starts_with(magic.as_bytes()) {
        return Err(Error::Format("missing SEQCOPY1 magic line".into()));
    }
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Format("header is not terminated by a blank line".into()))?;
    let header = std::str::from_utf8(&bytes[magic.len()..end + 1])
        .map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let mut data = &bytes[end + 2..];

    let mut hyper_pairs = Vec::new();
    let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();
    for line in header.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if !tensors.is_empty() {
                return Err(Error::Format(format!("hyperparameter {k} after tensor headers")));
            }
            let v = v
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad value for {k}")))?;
            hyper_pairs.push((k.to_owned(), v));
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields[2] != "f32" {
            return Err(Error::Format(format!("bad tensor header {line:?}")));
        }
        let shape = fields[1]
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("bad shape in {line:?}")))?;
        tensors.push((fields[0].to_owned(), shape));
    }
    let hyper = hyper_from(&hyper_pairs)?;

    let mut store = ParameterStore::new();
    for (name, shape) in tensors {
        let count: usize = shape.iter().product();
        let need = count * 4;
        if data.len() < need {
            return Err(Error::Corrupt(format!(
                "tensor {name} declares {count} values but only {} remain",
                data.len() / 4
            )));
        }
        let values = data[..need]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        data = &data[need..];
        let t = Tensor::new(shape, values).map_err(|e| Error::Corrupt(format!("tensor {name}: {e}")))?;
        store
            .insert(name, t)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    if !data.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes after the last tensor", data.len())));
    }
    Model::from_store(hyper, store)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), to_bytes(model)).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint that must match `expected` exactly.
pub fn load_compatible(path: impl AsRef<Path>, expected: &Hyper) -> Result<Model> {
    let model = load_checkpoint(path)?;
    if model.hyper != *expected {
        return Err(Error::Incompatible(format!(
            "checkpoint has {:?}, expected {expected:?}",
            model.hyper
        )));
    }
    Ok(model)
}
