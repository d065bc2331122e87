//! Binary checkpoint format.
//!
//! Layout: the 5-byte magic `FTNN1`, then one record per parameter in
//! registry order. Each record is `u32` name length, the UTF-8 name bytes,
//! `u32` rank, `rank` dimensions as `u32`, then the raw `f32` values — all
//! integers and floats little-endian. Records run to end of file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"FTNN1";

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for (name, t) in net.parameters() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_record(r: &mut impl Read) -> Result<Option<(String, Tensor)>> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let name_len = u32::from_le_bytes(len_buf) as usize;
    if name_len == 0 || name_len > 4096 {
        return Err(Error::Checkpoint(format!(
            "implausible parameter-name length {name_len}"
        )));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Checkpoint(format!(
            "implausible rank {rank} for {name}"
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let count: usize = shape.iter().product();
    if count == 0 {
        return Err(Error::Checkpoint(format!("empty shape for {name}")));
    }
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Some((
        name,
        Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?,
    )))
}

/// Loads a checkpoint into an architecturally matching network. Every stored
/// parameter must match a network parameter by name and shape, and vice
/// versa.
pub fn load_checkpoint(net: &mut Network, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut stored: BTreeMap<String, Tensor> = BTreeMap::new();
    while let Some((name, t)) = read_record(&mut r)? {
        if stored.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
    }
    for (name, p) in net.parameters_mut() {
        let t = stored.remove(&name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint is missing parameter {name}"))
        })?;
        if t.shape() != p.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: checkpoint {:?} vs network {:?}",
                t.shape(),
                p.shape()
            )));
        }
        p.data_mut().copy_from_slice(t.data());
    }
    if let Some(name) = stored.keys().next() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has extra parameter {name}"
        )));
    }
    Ok(())
}
