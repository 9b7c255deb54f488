//! Checkpoint encoding and the on-disk results directory.
//!
//! A checkpoint file is one header line
//! `UQCKPT <version> <sha256 of payload, hex> <payload bytes>` followed by
//! the payload: the experiment state as JSON with object keys sorted.
//! Files are written to a temporary name and renamed into place, and the
//! `latest` pointer is replaced the same way after the checkpoint itself.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{EngineError, ExperimentState};

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &str = "UQCKPT";
pub const LATEST: &str = "latest";
pub const SUMMARY: &str = "summary.csv";
pub const TIMING: &str = "timing.csv";
pub const RESULT: &str = "result.json";
pub const SAMPLES: &str = "samples.csv";

/// Canonical JSON: keys sorted, shortest round-trip floats.
pub fn canonical_json<T: serde::Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("engine types serialize to JSON");
    serde_json::to_string(&v).expect("JSON values always print")
}

pub fn encode(state: &ExperimentState) -> Vec<u8> {
    let payload = canonical_json(state);
    let digest = hex::encode(Sha256::digest(payload.as_bytes()));
    let mut out = format!("{MAGIC} {FORMAT_VERSION} {digest} {}\n", payload.len()).into_bytes();
    out.extend_from_slice(payload.as_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<ExperimentState, EngineError> {
    let corrupt = |why: &str| EngineError::CorruptCheckpoint(why.to_string());
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| corrupt("missing header"))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| corrupt("header is not text"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != MAGIC {
        return Err(corrupt("bad header"));
    }
    let version: u32 = fields[1].parse().map_err(|_| corrupt("bad version field"))?;
    if version != FORMAT_VERSION {
        return Err(EngineError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len: usize = fields[3].parse().map_err(|_| corrupt("bad length field"))?;
    let payload = &bytes[newline + 1..];
    if payload.len() != len {
        return Err(corrupt("payload length differs from header"));
    }
    if hex::encode(Sha256::digest(payload)) != fields[2] {
        return Err(corrupt("checksum mismatch"));
    }
    serde_json::from_slice(payload).map_err(|e| corrupt(&format!("payload: {e}")))
}

pub fn checkpoint_name(generation_index: u64) -> String {
    format!("gen{generation_index:05}.state")
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Follows a user-supplied checkpoint location: a directory (its `latest`),
/// a `latest` pointer file, or a checkpoint file.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf, EngineError> {
    let io_err = |e: io::Error| EngineError::Io(format!("{}: {e}", path.display()));
    let pointer = if path.is_dir() {
        path.join(LATEST)
    } else {
        path.to_path_buf()
    };
    if pointer.file_name().is_some_and(|n| n == LATEST) {
        let target = fs::read_to_string(&pointer).map_err(io_err)?;
        let dir = pointer.parent().unwrap_or(Path::new("."));
        return Ok(dir.join(target.trim()));
    }
    Ok(pointer)
}

pub fn load(path: &Path) -> Result<ExperimentState, EngineError> {
    let bytes = fs::read(path).map_err(|e| EngineError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// One experiment's results directory.
#[derive(Clone, Debug)]
pub struct ResultStore {
    dir: PathBuf,
    keep: usize,
}

fn io(e: io::Error, path: &Path) -> EngineError {
    EngineError::Io(format!("{}: {e}", path.display()))
}

impl ResultStore {
    pub fn create(dir: impl Into<PathBuf>, keep: usize) -> Result<Self, EngineError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io(e, &dir))?;
        Ok(ResultStore { dir, keep })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn checkpoint_path(&self, generation_index: u64) -> PathBuf {
        self.dir.join(checkpoint_name(generation_index))
    }

    pub fn save_checkpoint(&self, state: &ExperimentState) -> Result<PathBuf, EngineError> {
        let index = state
            .generation
            .checked_sub(1)
            .expect("checkpoints follow a completed generation");
        let path = self.checkpoint_path(index);
        write_atomic(&path, &encode(state)).map_err(|e| io(e, &path))?;
        let latest = self.dir.join(LATEST);
        write_atomic(&latest, format!("{}\n", checkpoint_name(index)).as_bytes())
            .map_err(|e| io(e, &latest))?;
        if self.keep > 0 && index >= self.keep as u64 {
            let stale = self.checkpoint_path(index - self.keep as u64);
            match fs::remove_file(&stale) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(io(e, &stale)),
            }
        }
        Ok(path)
    }

    fn append(&self, file: &str, header: &str, row: &str) -> Result<(), EngineError> {
        let path = self.dir.join(file);
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io(e, &path))?;
        if fresh {
            writeln!(f, "{header}").map_err(|e| io(e, &path))?;
        }
        writeln!(f, "{row}").map_err(|e| io(e, &path))
    }

    pub fn append_summary(&self, header: &str, row: &str) -> Result<(), EngineError> {
        self.append(SUMMARY, header, row)
    }

    pub fn append_timing(&self, generation_index: u64, seconds: f64) -> Result<(), EngineError> {
        self.append(TIMING, "generation,seconds", &format!("{generation_index},{seconds:.6}"))
    }

    /// Drops rows of the per-generation logs past `generation_index`.
    pub fn truncate_logs(&self, generation_index: u64) -> Result<(), EngineError> {
        for file in [SUMMARY, TIMING] {
            let path = self.dir.join(file);
            let Ok(text) = fs::read_to_string(&path) else { continue };
            let mut lines = text.lines();
            let mut kept: Vec<&str> = lines.next().into_iter().collect();
            kept.extend(lines.filter(|l| {
                l.split(',')
                    .next()
                    .and_then(|g| g.parse::<u64>().ok())
                    .is_some_and(|g| g <= generation_index)
            }));
            let mut body = kept.join("\n");
            body.push('\n');
            write_atomic(&path, body.as_bytes()).map_err(|e| io(e, &path))?;
        }
        Ok(())
    }

    pub fn write_file(&self, name: &str, contents: &str) -> Result<(), EngineError> {
        let path = self.dir.join(name);
        write_atomic(&path, contents.as_bytes()).map_err(|e| io(e, &path))
    }
}
