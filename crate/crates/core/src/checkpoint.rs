//! Parameter checkpoints: magic, version, config echo, then named arrays.
//! The payload is `f32` little-endian; save -> load -> save is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{DetectorConfig, NetPlan, ParameterSet};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSIY";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(
    path: &Path,
    cfg: &DetectorConfig,
    params: &ParameterSet<f32>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg_json = serde_json::to_vec(cfg)?;
    w.write_all(&(cfg_json.len() as u32).to_le_bytes())?;
    w.write_all(&cfg_json)?;
    w.write_all(&(params.layout.len() as u32).to_le_bytes())?;
    for spec in &params.layout {
        let name = spec.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(spec.shape.len() as u32).to_le_bytes())?;
        for &d in &spec.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &params.data[spec.offset..spec.offset + spec.len()] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Load a checkpoint, validating names and shapes against the plan rebuilt
/// from the embedded config.
pub fn load_checkpoint(path: &Path) -> Result<(DetectorConfig, ParameterSet<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_buf)?;
    let cfg: DetectorConfig = serde_json::from_slice(&cfg_buf)?;
    let plan = NetPlan::new(&cfg)?;
    let mut params = ParameterSet::<f32>::zeros(plan.layout());

    let n_tensors = read_u32(&mut r)? as usize;
    if n_tensors != params.layout.len() {
        return Err(Error::Checkpoint(format!(
            "tensor count {n_tensors} != plan layout {}",
            params.layout.len()
        )));
    }
    for i in 0..n_tensors {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| Error::Checkpoint(format!("tensor name not UTF-8: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let spec = &params.layout[i];
        if spec.name != name || spec.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {i} is {name} {shape:?}, expected {} {:?}",
                spec.name, spec.shape
            )));
        }
        let (off, len) = (spec.offset, spec.len());
        for v in params.data[off..off + len].iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b);
        }
    }
    Ok((cfg, params))
}
