//! Model checkpoint container ("SMM1").
//!
//! Layout (little-endian): magic, format version u32, twelve u32 dims,
//! mode u8, style count u32, dropout f64, style names, an optional
//! skeleton (flag u8, then joints as in the clip container), named tensors
//! (name, rank u32, extents u32, f32 data), normalisation vectors
//! (length u32 + f32 data, six of them) and a named embedding table.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Dims, ModelSpec, ModulatorMode, StyleModel};
use crate::error::{Error, Result};
use crate::motion::{read_skeleton, read_str, write_skeleton, write_str, NormalizationStats};
use crate::nn::{ParamStore, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"SMM1";
pub const FORMAT_VERSION: u32 = 1;

/// A named style embedding stored next to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedEmbedding {
    pub name: String,
    pub values: Vec<f32>,
}

fn eof(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated("checkpoint ends early".into())
    } else {
        Error::Io(e)
    }
}

fn dims_array(d: &Dims) -> [usize; 12] {
    [
        d.input,
        d.phase,
        d.output,
        d.hidden,
        d.experts,
        d.gating_hidden,
        d.clip_frames,
        d.clip_channels,
        d.conv_channels,
        d.kernel,
        d.pool,
        d.film_hidden,
    ]
}

fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> Result<()> {
    w.write_u32::<LE>(v.len() as u32)?;
    for x in v {
        w.write_f32::<LE>(*x)?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, limit: usize) -> Result<Vec<f32>> {
    let n = r.read_u32::<LE>().map_err(eof)? as usize;
    if n > limit {
        return Err(Error::Format(format!("vector of {n} values is implausible")));
    }
    let mut v = vec![0f32; n];
    r.read_f32_into::<LE>(&mut v).map_err(eof)?;
    Ok(v)
}

pub fn write_checkpoint<W: Write>(model: &StyleModel, embeddings: &[NamedEmbedding], w: &mut W) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    for v in dims_array(&model.spec.dims) {
        w.write_u32::<LE>(v as u32)?;
    }
    w.write_u8(model.spec.mode.code())?;
    w.write_u32::<LE>(model.spec.styles as u32)?;
    w.write_f64::<LE>(model.spec.dropout)?;
    w.write_u32::<LE>(model.style_names.len() as u32)?;
    for s in &model.style_names {
        write_str(w, s)?;
    }
    match &model.skeleton {
        Some(sk) => {
            w.write_u8(1)?;
            write_skeleton(w, sk)?;
        }
        None => w.write_u8(0)?,
    }
    w.write_u32::<LE>(model.params.len() as u32)?;
    for p in model.params.iter() {
        write_str(w, &p.name)?;
        w.write_u32::<LE>(p.value.shape().len() as u32)?;
        for e in p.value.shape() {
            w.write_u32::<LE>(*e as u32)?;
        }
        for x in p.value.data() {
            w.write_f32::<LE>(*x)?;
        }
    }
    let n = &model.norm;
    for v in [&n.input_mean, &n.input_std, &n.output_mean, &n.output_std, &n.clip_mean, &n.clip_std] {
        write_f32s(w, v)?;
    }
    w.write_u32::<LE>(embeddings.len() as u32)?;
    for e in embeddings {
        write_str(w, &e.name)?;
        write_f32s(w, &e.values)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(StyleModel, Vec<NamedEmbedding>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format(format!(
            "unknown checkpoint magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.read_u32::<LE>().map_err(eof)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut a = [0usize; 12];
    for v in &mut a {
        *v = r.read_u32::<LE>().map_err(eof)? as usize;
    }
    let dims = Dims {
        input: a[0],
        phase: a[1],
        output: a[2],
        hidden: a[3],
        experts: a[4],
        gating_hidden: a[5],
        clip_frames: a[6],
        clip_channels: a[7],
        conv_channels: a[8],
        kernel: a[9],
        pool: a[10],
        film_hidden: a[11],
    };
    let mode = ModulatorMode::from_code(r.read_u8().map_err(eof)?)
        .ok_or_else(|| Error::Format("unknown modulator mode".into()))?;
    let styles = r.read_u32::<LE>().map_err(eof)? as usize;
    let dropout = r.read_f64::<LE>().map_err(eof)?;
    let spec = ModelSpec {
        dims,
        mode,
        styles,
        dropout,
    };
    spec.validate().map_err(|e| Error::Format(format!("bad architecture record: {e}")))?;
    let n_names = r.read_u32::<LE>().map_err(eof)? as usize;
    let style_names = (0..n_names.min(1 << 16))
        .map(|_| read_str(r))
        .collect::<Result<Vec<_>>>()?;
    let skeleton = match r.read_u8().map_err(eof)? {
        0 => None,
        1 => Some(read_skeleton(r)?),
        f => return Err(Error::Format(format!("bad skeleton flag {f}"))),
    };
    let n_params = r.read_u32::<LE>().map_err(eof)? as usize;
    if n_params > 1 << 16 {
        return Err(Error::Format(format!("{n_params} tensors is implausible")));
    }
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let name = read_str(r)?;
        let rank = r.read_u32::<LE>().map_err(eof)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor {name:?} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LE>().map_err(eof)? as usize);
        }
        let len: usize = shape.iter().product();
        if len > 1 << 28 {
            return Err(Error::Format(format!("tensor {name:?} is implausibly large")));
        }
        let mut data = vec![0f32; len];
        r.read_f32_into::<LE>(&mut data).map_err(eof)?;
        params.add(name, Tensor::from_vec(&shape, data)?);
    }
    let limit = 1 << 24;
    let norm = NormalizationStats {
        input_mean: read_f32s(r, limit)?,
        input_std: read_f32s(r, limit)?,
        output_mean: read_f32s(r, limit)?,
        output_std: read_f32s(r, limit)?,
        clip_mean: read_f32s(r, limit)?,
        clip_std: read_f32s(r, limit)?,
    };
    let n_emb = r.read_u32::<LE>().map_err(eof)? as usize;
    let mut embeddings = Vec::with_capacity(n_emb.min(1024));
    for _ in 0..n_emb {
        let name = read_str(r)?;
        let values = read_f32s(r, limit)?;
        if values.len() != dims.embedding_len() {
            return Err(Error::Format(format!(
                "embedding {name:?} has {} values, expected {}",
                values.len(),
                dims.embedding_len()
            )));
        }
        embeddings.push(NamedEmbedding { name, values });
    }
    let model = StyleModel {
        spec,
        style_names,
        norm,
        params,
        skeleton,
    };
    model.check()?;
    Ok((model, embeddings))
}

pub fn checkpoint_bytes(model: &StyleModel, embeddings: &[NamedEmbedding]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(model, embeddings, &mut buf)?;
    Ok(buf)
}

pub fn save_checkpoint(model: &StyleModel, embeddings: &[NamedEmbedding], path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &checkpoint_bytes(model, embeddings)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(StyleModel, Vec<NamedEmbedding>)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
