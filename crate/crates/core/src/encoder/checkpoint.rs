//! Parameter checkpoint format: magic "LTCK", version, a JSON header with
//! the model kind, its config and the shape table, then all parameter groups
//! concatenated as 64-bit little-endian floats in table order.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"LTCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: serde_json::Value,
    pub groups: Vec<GroupMeta>,
}

pub fn write_checkpoint(
    path: &Path,
    kind: &str,
    config: serde_json::Value,
    groups: &[(&'static str, Vec<usize>, &[f64])],
) -> Result<()> {
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config,
        groups: groups
            .iter()
            .map(|(name, shape, _)| GroupMeta {
                name: name.to_string(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    for (name, shape, data) in groups {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Invalid(format!(
                "group `{name}` shape {shape:?} does not cover {} values",
                data.len()
            )));
        }
        for &v in *data {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Vec<f64>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic, not a checkpoint".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header_json).map_err(|e| bad(e.to_string()))?;

    let mut payload = Vec::with_capacity(header.groups.len());
    let mut f64buf = [0u8; 8];
    for group in &header.groups {
        let len: usize = group.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut f64buf).map_err(|e| Error::io(path, e))?;
            data.push(f64::from_le_bytes(f64buf));
        }
        payload.push(data);
    }
    Ok((header, payload))
}

/// Copies checkpoint payload into live parameter groups, verifying that
/// names and shapes line up exactly.
pub fn fill_groups(
    path: &Path,
    header: &CheckpointHeader,
    payload: &[Vec<f64>],
    groups: &mut [(&'static str, Vec<usize>, &mut [f64])],
) -> Result<()> {
    if header.groups.len() != groups.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "checkpoint has {} groups, model expects {}",
                header.groups.len(),
                groups.len()
            ),
        });
    }
    for ((meta, data), (name, shape, dest)) in header.groups.iter().zip(payload).zip(groups.iter_mut()) {
        if meta.name != *name || meta.shape != *shape {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!(
                    "group mismatch: checkpoint has {} {:?}, model expects {} {:?}",
                    meta.name, meta.shape, name, shape
                ),
            });
        }
        dest.copy_from_slice(data);
    }
    Ok(())
}

/// Loss-curve log as `step,loss` CSV.
pub fn write_loss_curve(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(b"step,loss\n").map_err(|e| Error::io(path, e))?;
    for (step, loss) in curve {
        writeln!(w, "{step},{loss:.12}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn shape_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let data = vec![1.0, 2.0];
        write_checkpoint(&path, "encoder", serde_json::json!({}), &[("a", vec![2], &data)]).unwrap();
        let (header, payload) = read_checkpoint(&path).unwrap();
        let mut wrong = vec![0.0; 3];
        let mut groups: Vec<(&'static str, Vec<usize>, &mut [f64])> =
            vec![("a", vec![3], &mut wrong)];
        assert!(fill_groups(&path, &header, &payload, &mut groups).is_err());
    }
}
