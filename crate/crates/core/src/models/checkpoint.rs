//! Checkpoint files.
//!
//! Layout: one UTF-8 header line `egospeed-checkpoint <version> <spec-json>\n`,
//! then a little-endian `u64` parameter count, then per parameter:
//! `u32` name length, name bytes, `u32` rank, `u64` extents, and the values
//! as little-endian `f64`. Values round-trip bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Model, ModelSpec, Parameter};

pub const CHECKPOINT_MAGIC: &str = "egospeed-checkpoint";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &Model, out: &mut impl Write) -> Result<()> {
    let spec = serde_json::to_string(model.spec())?;
    writeln!(out, "{CHECKPOINT_MAGIC} {VERSION} {spec}")?;
    out.write_all(&(model.params().len() as u64).to_le_bytes())?;
    for p in model.params() {
        let name = p.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(p.tensor.shape().len() as u32).to_le_bytes())?;
        for &d in p.tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.tensor.len() * 8);
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(input: &mut impl BufRead) -> Result<Model> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let mut parts = header.trim_end_matches('\n').splitn(3, ' ');
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::Checkpoint("not an egospeed checkpoint".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing format version".into()))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let spec: ModelSpec = serde_json::from_str(
        parts
            .next()
            .ok_or_else(|| Error::Checkpoint("missing model spec".into()))?,
    )?;
    let count = read_u64(input)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(input)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0; n * 8];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.push(Parameter {
            name,
            tensor: Tensor::from_vec(&shape, data)?.with_requires_grad(true),
        });
    }
    let model = Model::from_params(spec, params)?;
    check_against_spec(&model)?;
    Ok(model)
}

/// The stored parameters must be exactly those the spec builds.
fn check_against_spec(model: &Model) -> Result<()> {
    let reference = super::layout(model.spec())?;
    let expected: Vec<(&str, &[usize])> = reference
        .iter()
        .map(|s| (s.name.as_str(), s.shape.as_slice()))
        .collect();
    let found: Vec<(&str, &[usize])> = model
        .params()
        .iter()
        .map(|p| (p.name.as_str(), p.tensor.shape()))
        .collect();
    if expected != found {
        return Err(Error::Checkpoint(
            "parameters do not match the stored model spec".into(),
        ));
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
