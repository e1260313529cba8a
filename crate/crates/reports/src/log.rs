//! Append-only log of JSON records, one per line.
//!
//! Every append rewrites the whole file into a sibling temporary and renames
//! it over the original, so a crash leaves either the old or the new log and
//! never a torn line.

use std::fs;
use std::io::{self, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt record at {path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("record does not serialise: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug)]
pub struct JsonLog<T> {
    path: PathBuf,
    bytes: Vec<u8>,
    _record: PhantomData<fn() -> T>,
}

impl<T: Serialize + DeserializeOwned> JsonLog<T> {
    /// Opens (or lazily creates) the log at `path` and returns it with every
    /// record already stored, in append order.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<T>), LogError> {
        let path = path.into();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(source) => return Err(LogError::Io { path, source }),
        };
        let mut records = Vec::new();
        for (i, line) in bytes.split(|b| *b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let rec = serde_json::from_slice(line).map_err(|e| LogError::Corrupt {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        let log = Self {
            path,
            bytes,
            _record: PhantomData,
        };
        Ok((log, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &T) -> Result<(), LogError> {
        let mut next = self.bytes.clone();
        if !next.is_empty() && next.last() != Some(&b'\n') {
            next.push(b'\n');
        }
        serde_json::to_writer(&mut next, record)?;
        next.push(b'\n');
        self.replace(&next)?;
        self.bytes = next;
        Ok(())
    }

    fn replace(&self, contents: &[u8]) -> Result<(), LogError> {
        let io_err = |source| LogError::Io {
            path: self.path.clone(),
            source,
        };
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let mut tmp_name = self.path.file_name().unwrap_or_default().to_os_string();
        tmp_name.push(".tmp");
        let tmp = self.path.with_file_name(tmp_name);
        {
            let mut f = fs::File::create(&tmp).map_err(io_err)?;
            f.write_all(contents).map_err(io_err)?;
            f.sync_all().map_err(io_err)?;
        }
        fs::rename(&tmp, &self.path).map_err(io_err)
    }
}
