//! Binary parameter checkpoint.
//!
//! Layout (all integers little-endian):
//! `b"MTSCKPT\0"`, `u32` version, `u32` header length, JSON header
//! (model config, heads, task bindings), `u32` tensor count, then per tensor
//! `u32` name length, name, `u32` rank, `u64` dims, and the data as `f64`.

use std::io::{self, Read, Write};
use std::path::Path;

use mtsched_core::model::{
    HeadSpec, ModelConfig, ModelError, ModelParams, ParamStore, TaskBinding, Tensor,
};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"MTSCKPT\0";
pub const VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("bad header: {0}")]
    Header(String),
    #[error("tensor `{0}` has {1} values but its shape needs {2}")]
    Size(String, usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    heads: Vec<HeadSpec>,
    bindings: Vec<TaskBinding>,
}

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn len32(n: usize) -> io::Result<u32> {
    u32::try_from(n).map_err(|_| io::Error::other("length exceeds u32"))
}

pub fn write_checkpoint(w: &mut impl Write, params: &ModelParams) -> Result<(), CheckpointError> {
    let header = Header {
        config: params.config.clone(),
        heads: params.head_specs(),
        bindings: params.bindings.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, len32(json.len())?)?;
    w.write_all(&json)?;
    put_u32(w, len32(params.store.tensors.len())?)?;
    for t in &params.store.tensors {
        put_u32(w, len32(t.name.len())?)?;
        w.write_all(t.name.as_bytes())?;
        put_u32(w, len32(t.shape.len())?)?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 8);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelParams, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let n = get_u32(r)? as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let count = get_u32(r)?;
    let mut store = ParamStore::default();
    for _ in 0..count {
        let n = get_u32(r)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let rank = get_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| get_u64(r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 8];
        r.read_exact(&mut raw)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.len() != len {
            return Err(CheckpointError::Size(name, data.len(), len));
        }
        store.push(Tensor { name, shape, data });
    }
    Ok(ModelParams::from_store(
        header.config,
        &header.heads,
        &header.bindings,
        store,
    )?)
}

pub fn save(path: &Path, params: &ModelParams) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams, CheckpointError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mtsched_core::model::{HeadKind, TaskTokenMode};

    fn model() -> ModelParams {
        let cfg = ModelConfig {
            vocab_size: 10,
            region_dim: 4,
            dim: 5,
            hidden: 3,
            max_words: 4,
            max_regions: 3,
            task_tokens: TaskTokenMode::PerHead,
            init_scale: 1.0,
        };
        let heads = vec![
            HeadSpec {
                name: "a".into(),
                kind: HeadKind::VocabVqa { answers: 3 },
            },
            HeadSpec {
                name: "r".into(),
                kind: HeadKind::Referring,
            },
        ];
        let bindings = vec![
            TaskBinding {
                task: "x".into(),
                head: "a".into(),
            },
            TaskBinding {
                task: "y".into(),
                head: "a".into(),
            },
            TaskBinding {
                task: "z".into(),
                head: "r".into(),
            },
        ];
        ModelParams::init(cfg, &heads, &bindings, 11).unwrap()
    }

    #[test]
    fn bit_exact_round_trip() {
        let mut m = model();
        m.store.tensors[0].data[0] = -0.0;
        m.store.tensors[0].data[1] = f64::MIN_POSITIVE / 3.0;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.bindings, m.bindings);
        for (a, b) in back.store.tensors.iter().zip(&m.store.tensors) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_inputs() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(&mut bad.as_slice()),
            Err(CheckpointError::BadMagic)
        ));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(
            read_checkpoint(&mut bad.as_slice()),
            Err(CheckpointError::Version(9))
        ));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(
            read_checkpoint(&mut &short[..]),
            Err(CheckpointError::Io(_))
        ));
    }
}
