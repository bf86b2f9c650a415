use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Tensor};

const MAGIC: &str = "FOLVEC-CKPT v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("parameter {name}: {problem}")]
    Mismatch { name: String, problem: String },
}

/// Writes every parameter as a text header line (`name rank dims...`) followed
/// by its little-endian `f32` data.
pub fn write_checkpoint(store: &ParamStore<f32>, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{MAGIC} {}", store.len())?;
    for (_, name, t) in store.iter() {
        let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
        writeln!(out, "{name} {} {}", t.shape().len(), dims.join(" "))?;
        for x in t.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(input: &mut impl BufRead) -> Result<ParamStore<f32>, CheckpointError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let count: usize = line
        .trim_end()
        .strip_prefix(MAGIC)
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| CheckpointError::Format("bad header".into()))?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        line.clear();
        input.read_line(&mut line)?;
        let mut parts = line.split_whitespace();
        let name = parts.next().ok_or_else(|| CheckpointError::Format("missing parameter name".into()))?.to_string();
        let bad = |problem: &str| CheckpointError::Mismatch { name: name.clone(), problem: problem.to_string() };
        let rank: usize = parts.next().and_then(|r| r.parse().ok()).ok_or_else(|| bad("bad rank"))?;
        let shape: Vec<usize> = parts.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad dimension"))?;
        if shape.len() != rank || shape.contains(&0) {
            return Err(bad("bad shape"));
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; 4 * n];
        input.read_exact(&mut bytes).map_err(|_| bad("truncated data"))?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        store.add(name, Tensor::new(shape, data));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore<f32>, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(store, &mut w)?;
    w.flush()
}

/// Loads a checkpoint into `store`. Every parameter of `store` must be
/// present with the same shape; parameters only in the file are an error
/// unless `ignore_extra` is set.
pub fn load_checkpoint(store: &mut ParamStore<f32>, path: &Path, ignore_extra: bool) -> Result<(), CheckpointError> {
    let loaded = read_checkpoint(&mut BufReader::new(File::open(path)?))?;
    for (_, name, t) in store.iter() {
        let Some(other) = loaded.id(name) else {
            return Err(CheckpointError::Mismatch { name: name.to_string(), problem: "missing from checkpoint".into() });
        };
        let got = loaded.get(other).shape();
        if got != t.shape() {
            return Err(CheckpointError::Mismatch {
                name: name.to_string(),
                problem: format!("expected shape {:?}, found {:?}", t.shape(), got),
            });
        }
    }
    if let Some((_, extra, _)) = loaded.iter().find(|(_, n, _)| !ignore_extra && store.id(n).is_none()) {
        return Err(CheckpointError::Mismatch { name: extra.to_string(), problem: "not part of the model".into() });
    }
    let ids: Vec<_> = store.iter().map(|(id, name, _)| (id, loaded.id(name).unwrap())).collect();
    for (id, other) in ids {
        store.get_mut(id).data_mut().copy_from_slice(loaded.get(other).data());
    }
    Ok(())
}
