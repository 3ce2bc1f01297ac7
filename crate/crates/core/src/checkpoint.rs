//! Versioned binary parameter checkpoints.
//!
//! Layout: 8-byte magic, u32 format version, u32 tensor count, then per
//! tensor a length-prefixed name, a rank, the dimension sizes, and the data
//! as little-endian f64. Loading validates the full architecture (names,
//! order, shapes) against the receiving parameter set.

use crate::error::HarnessError;
use crate::params::NetParams;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"MARLCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn save(path: &Path, params: &NetParams) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(params.n_tensors() as u32).to_le_bytes())?;
    let mut result = Ok(());
    params.visit(&mut |name, t| {
        if result.is_err() {
            return;
        }
        result = (|| -> Result<(), HarnessError> {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        })();
    });
    result?;
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, HarnessError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, HarnessError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Load a checkpoint into an architecture-matched parameter set. Fails if
/// the version, tensor names, order, or shapes do not match.
pub fn load_into(path: &Path, params: &mut NetParams) -> Result<(), HarnessError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(HarnessError::Checkpoint("unrecognized file magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(HarnessError::Checkpoint(format!(
            "format version {version} does not match supported {FORMAT_VERSION}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    if count != params.n_tensors() {
        return Err(HarnessError::Checkpoint(format!(
            "checkpoint holds {count} tensors, architecture expects {}",
            params.n_tensors()
        )));
    }

    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| HarnessError::Checkpoint("non-utf8 tensor name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push((name, shape, data));
    }

    // validate against the receiving architecture, in visitation order
    let mut expected: Vec<(String, Vec<usize>)> = Vec::with_capacity(count);
    params.visit(&mut |name, t| expected.push((name, t.shape().to_vec())));
    for ((got_name, got_shape, _), (want_name, want_shape)) in entries.iter().zip(&expected) {
        if got_name != want_name || got_shape != want_shape {
            return Err(HarnessError::Checkpoint(format!(
                "architecture mismatch: checkpoint has {got_name} {got_shape:?}, \
                 expected {want_name} {want_shape:?}"
            )));
        }
    }

    let mut idx = 0;
    params.visit_mut(&mut |t| {
        t.data_mut().copy_from_slice(&entries[idx].2);
        idx += 1;
    });
    Ok(())
}
