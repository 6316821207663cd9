//! On-disk artifact formats: prompts/descriptions as JSONL, embeddings as a
//! small binary file (magic "LTTE", version, count, dim, row-major f32 LE)
//! with a JSON sidecar mapping client_id to row.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clients::Description;
use crate::error::{Error, Result};

const EMBEDDINGS_MAGIC: &[u8; 4] = b"LTTE";
const EMBEDDINGS_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptRecord {
    pub client_id: String,
    pub prompt: String,
}

pub fn write_prompts_jsonl(path: &Path, prompts: &[PromptRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in prompts {
        serde_json::to_writer(&mut w, p).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_prompts_jsonl(path: &Path) -> Result<Vec<PromptRecord>> {
    read_jsonl(path)
}

pub fn write_descriptions_jsonl(path: &Path, descriptions: &[Description]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in descriptions {
        serde_json::to_writer(&mut w, d).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_descriptions_jsonl(path: &Path) -> Result<Vec<Description>> {
    read_jsonl(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::ParseRow {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Embedding rows in file order, with ids parallel to rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingsFile {
    pub dim: usize,
    pub client_ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingsFile {
    pub fn row_of(&self, client_id: &str) -> Option<usize> {
        self.client_ids.iter().position(|c| c == client_id)
    }
}

fn index_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".index.json");
    path.with_file_name(name)
}

/// Writes vectors (narrowed to f32) plus a `client_id -> row` sidecar index.
pub fn write_embeddings(path: &Path, client_ids: &[String], vectors: &[Vec<f64>]) -> Result<()> {
    if client_ids.len() != vectors.len() {
        return Err(Error::Invalid(format!(
            "ids ({}) and vectors ({}) length mismatch",
            client_ids.len(),
            vectors.len()
        )));
    }
    let dim = vectors.first().map_or(0, Vec::len);
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(EMBEDDINGS_MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_all(&EMBEDDINGS_VERSION.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&(vectors.len() as u64).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    for v in vectors {
        for &x in v {
            w.write_all(&(x as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let index: BTreeMap<&str, usize> = client_ids
        .iter()
        .enumerate()
        .map(|(row, id)| (id.as_str(), row))
        .collect();
    if index.len() != client_ids.len() {
        return Err(Error::Invalid("duplicate client_id in embeddings".into()));
    }
    let ipath = index_path(path);
    let body = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&ipath, body + "\n").map_err(|e| Error::io(&ipath, e))?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingsFile> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != EMBEDDINGS_MAGIC {
        return Err(bad("bad magic, not an embeddings file"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(u32buf);
    if version != EMBEDDINGS_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(|e| Error::io(path, e))?;
    let count = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let dim = u32::from_le_bytes(u32buf) as usize;

    let mut payload = vec![0u8; count * dim * 4];
    r.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let mut vectors = Vec::with_capacity(count);
    for row in 0..count {
        let mut v = Vec::with_capacity(dim);
        for j in 0..dim {
            let off = (row * dim + j) * 4;
            let bits: [u8; 4] = payload[off..off + 4].try_into().unwrap();
            v.push(f32::from_le_bytes(bits) as f64);
        }
        vectors.push(v);
    }

    let ipath = index_path(path);
    let body = std::fs::read_to_string(&ipath).map_err(|e| Error::io(&ipath, e))?;
    let index: BTreeMap<String, usize> = serde_json::from_str(&body).map_err(|e| Error::Format {
        path: ipath.clone(),
        message: e.to_string(),
    })?;
    if index.len() != count {
        return Err(bad("sidecar index row count does not match payload"));
    }
    let mut client_ids = vec![String::new(); count];
    for (id, row) in index {
        if row >= count {
            return Err(bad(&format!("index row {row} out of range")));
        }
        client_ids[row] = id;
    }

    Ok(EmbeddingsFile {
        dim,
        client_ids,
        vectors,
    })
}
