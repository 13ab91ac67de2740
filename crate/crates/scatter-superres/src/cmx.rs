//! CMX1 complex-matrix files and column-pool manifests.
//!
//! Layout: the 4 bytes `CMX1`, `rows` and `cols` as little-endian `u64`, then
//! `rows * cols` entries in column-major order, each stored as little-endian
//! `f64` real part followed by imaginary part.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64, CMat};

pub const MAGIC: [u8; 4] = *b"CMX1";
pub const HEADER_LEN: u64 = 20;

#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions {
    /// Fail on NaN or infinite entries instead of logging a warning.
    pub reject_non_finite: bool,
}

pub fn encode(m: &CMat) -> Vec<u8> {
    let (rows, cols) = m.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + 16 * rows * cols);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    for j in 0..cols {
        for i in 0..rows {
            let z = m[[i, j]];
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    buf
}

pub fn decode(bytes: &[u8], opts: ReadOptions) -> Result<CMat> {
    let actual = bytes.len() as u64;
    if actual < HEADER_LEN {
        return Err(Error::SizeMismatch { expected: HEADER_LEN, actual });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(16))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or(Error::SizeMismatch { expected: u64::MAX, actual })?;
    if expected != actual {
        return Err(Error::SizeMismatch { expected, actual });
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let mut m = Array2::zeros((rows, cols));
    let mut warned = false;
    let mut off = HEADER_LEN as usize;
    for j in 0..cols {
        for i in 0..rows {
            let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
            off += 16;
            if !(re.is_finite() && im.is_finite()) {
                if opts.reject_non_finite {
                    return Err(Error::NonFiniteEntry { row: i, col: j });
                }
                if !warned {
                    log::warn!("cmx: non-finite entry at ({i}, {j})");
                    warned = true;
                }
            }
            m[[i, j]] = C64::new(re, im);
        }
    }
    Ok(m)
}

pub fn write_cmx(m: &CMat, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(m))?;
    w.flush()?;
    Ok(())
}

pub fn read_cmx(path: impl AsRef<Path>) -> Result<CMat> {
    read_cmx_with(path, ReadOptions::default())
}

pub fn read_cmx_with(path: impl AsRef<Path>, opts: ReadOptions) -> Result<CMat> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?
        .read_to_end(&mut bytes)?;
    decode(&bytes, opts)
}

/// One CMX1 file of unit-norm columns per realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub path: PathBuf,
    pub seed: u64,
    pub columns: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub rows: usize,
    pub realizations: Vec<PoolEntry>,
}

impl PoolManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads every realization, resolving relative paths against `base`.
    pub fn read_all(&self, base: &Path) -> Result<Vec<CMat>> {
        self.realizations
            .iter()
            .map(|e| {
                let p = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
                let m = read_cmx(&p)?;
                if m.nrows() != self.rows || m.ncols() != e.columns {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: {}x{} but manifest says {}x{}",
                        p.display(),
                        m.nrows(),
                        m.ncols(),
                        self.rows,
                        e.columns
                    )));
                }
                Ok(m)
            })
            .collect()
    }
}
