//! Filesystem helpers: atomic writes and JSON document IO.
//!
//! Every durable write in the engine goes through write-temp-then-rename
//! so readers only ever observe fully committed documents.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Write `bytes` to `path` atomically: a sibling temp file is written,
/// flushed, then renamed over the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path
        .parent()
        .ok_or_else(|| Error::InvalidSpec(format!("path {} has no parent", path.display())))?;
    fs::create_dir_all(parent).map_err(|e| Error::store_io(parent, e))?;
    let tmp = parent.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "file".to_string())
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::store_io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::store_io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::store_io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::store_io(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Encoding {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound {
                kind: "document",
                what: path.display().to_string(),
            }
        } else {
            Error::store_io(path, e)
        }
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Encoding {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Write items as JSON lines, atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::Encoding {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound {
                kind: "document",
                what: path.display().to_string(),
            }
        } else {
            Error::store_io(path, e)
        }
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Encoding {
            path: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Sorted names of entries directly under `dir`; empty when the
/// directory does not exist.
pub fn sorted_dir_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(names),
        Err(e) => return Err(Error::store_io(dir, e)),
    };
    for entry in rd {
        let entry = entry.map_err(|e| Error::store_io(dir, e))?;
        names.push(entry.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    Ok(names)
}
