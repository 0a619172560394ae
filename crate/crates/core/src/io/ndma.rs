//! The `NDMA` activation format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic  "NDMA"
//! 4       4     version (u32 LE) = 1
//! 8       4     dtype   (u32 LE): 0 = f32, 1 = f64
//! 12      8     n rows  (u64 LE)
//! 20      8     d cols  (u64 LE)
//! 28      …     n·d values, row-major, little-endian
//! ```
//!
//! Per-row metadata lives in a sidecar `<path>.meta`: one JSON object per
//! line with keys `doc_id`, `position`, `token_text`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NdmError, Result};
use crate::linalg::Matrix;

pub const MAGIC: [u8; 4] = *b"NDMA";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

const CHUNK_ROWS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(NdmError::UnsupportedDtype(other)),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub doc_id: u64,
    pub position: u64,
    pub token_text: String,
}

/// `n × d` activations with optional per-row token metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSet {
    pub data: Matrix,
    pub meta: Option<Vec<TokenMeta>>,
}

impl ActivationSet {
    pub fn new(data: Matrix, meta: Option<Vec<TokenMeta>>) -> Result<Self> {
        if let Some(m) = &meta {
            if m.len() != data.rows() {
                return Err(NdmError::LengthMismatch { expected: data.rows(), actual: m.len() });
            }
        }
        if let Some((row, col)) = first_non_finite(&data) {
            return Err(NdmError::NonFiniteEntry { row, col });
        }
        Ok(Self { data, meta })
    }

    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn d(&self) -> usize {
        self.data.cols()
    }
}

fn first_non_finite(m: &Matrix) -> Option<(usize, usize)> {
    m.as_slice().iter().position(|v| !v.is_finite()).map(|k| (k / m.cols().max(1), k % m.cols().max(1)))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub dtype: Dtype,
    pub n: u64,
    pub d: u64,
}

pub fn write_header(w: &mut impl Write, h: Header) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(h.dtype as u32).to_le_bytes())?;
    w.write_all(&h.n.to_le_bytes())?;
    w.write_all(&h.d.to_le_bytes())?;
    Ok(())
}

pub fn read_header(r: &mut impl Read) -> Result<Header> {
    let mut buf = [0u8; HEADER_LEN];
    let got = read_full(r, &mut buf)?;
    if got < 4 {
        return Err(NdmError::Truncated { expected: HEADER_LEN as u64, found: got as u64 });
    }
    let magic: [u8; 4] = buf[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(NdmError::MagicMismatch { expected: MAGIC, found: magic });
    }
    if got < HEADER_LEN {
        return Err(NdmError::Truncated { expected: HEADER_LEN as u64, found: got as u64 });
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(NdmError::UnsupportedVersion(version));
    }
    Ok(Header { dtype: Dtype::from_code(u32_at(8))?, n: u64_at(12), d: u64_at(20) })
}

/// Reads until `buf` is full or EOF; returns bytes read.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Writes a header and the matrix payload.
pub fn write_grid(w: &mut impl Write, m: &Matrix, dtype: Dtype) -> Result<()> {
    write_header(w, Header { dtype, n: m.rows() as u64, d: m.cols() as u64 })?;
    match dtype {
        Dtype::F32 => {
            for v in m.as_slice() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for v in m.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a header and payload, widening to `f64`. Rejects non-finite values.
pub fn read_grid(r: &mut impl Read) -> Result<Matrix> {
    let header = read_header(r)?;
    let (n, d) = (header.n as usize, header.d as usize);
    let width = header.dtype.width();
    let expected = header.n * header.d * width as u64;
    let mut data = Vec::with_capacity(n * d);
    let mut chunk = vec![0u8; CHUNK_ROWS.max(1) * d.max(1) * width];
    let mut read_total = 0u64;
    while data.len() < n * d {
        let want = ((n * d - data.len()) * width).min(chunk.len());
        let got = read_full(r, &mut chunk[..want])?;
        read_total += got as u64;
        if got < want {
            return Err(NdmError::Truncated { expected, found: read_total });
        }
        match header.dtype {
            Dtype::F32 => data.extend(
                chunk[..want].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4")) as f64),
            ),
            Dtype::F64 => data
                .extend(chunk[..want].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8")))),
        }
    }
    let m = Matrix::from_vec(n, d, data)?;
    if let Some((row, col)) = first_non_finite(&m) {
        return Err(NdmError::NonFiniteEntry { row, col });
    }
    Ok(m)
}

pub fn write_activations(set: &ActivationSet, path: &Path) -> Result<()> {
    write_activations_as(set, path, Dtype::F32)
}

pub fn write_activations_as(set: &ActivationSet, path: &Path, dtype: Dtype) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(&mut w, &set.data, dtype)?;
    w.flush()?;
    if let Some(meta) = &set.meta {
        let mut mw = BufWriter::new(File::create(meta_path(path))?);
        for m in meta {
            serde_json::to_writer(&mut mw, m).map_err(|e| NdmError::Parse(e.to_string()))?;
            mw.write_all(b"\n")?;
        }
        mw.flush()?;
    }
    Ok(())
}

/// Loads an activation file and, when present, its `.meta` sidecar.
pub fn read_activations(path: &Path) -> Result<ActivationSet> {
    let mut r = BufReader::new(File::open(path)?);
    let data = read_grid(&mut r)?;
    let mut trailing = [0u8; 1];
    if read_full(&mut r, &mut trailing)? != 0 {
        return Err(NdmError::Malformed { path: path.to_owned(), reason: "trailing bytes after payload".into() });
    }
    let mp = meta_path(path);
    let meta = if mp.exists() { Some(read_meta(&mp)?) } else { None };
    ActivationSet::new(data, meta)
}

pub fn read_meta(path: &Path) -> Result<Vec<TokenMeta>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenMeta = serde_json::from_str(&line).map_err(|e| NdmError::Malformed {
            path: path.to_owned(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}
