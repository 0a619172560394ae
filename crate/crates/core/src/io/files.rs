//! Partition and toy-model files: a short text header of `key value…` lines
//! terminated by `end`, followed by `NDMA` grids in `f64`.
//!
//! ```text
//! NDMP 1
//! d 12
//! c 6 6
//! provenance site=toy seed=3
//! end
//! <NDMA grid: R, d × d>
//! ```
//!
//! Toy models use the tag `NDMT` with keys `groups`, `sparsity`, `d` and two
//! grids: `W` (`d × z`) and `b` (`1 × z`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ndma::{read_grid, write_grid, Dtype};
use crate::error::{NdmError, Result};
use crate::linalg::Matrix;
use crate::partition::Partition;
use crate::toy::{FeatureGroupSpec, ToyModel};

const PARTITION_TAG: &str = "NDMP";
const TOY_TAG: &str = "NDMT";
const FILE_VERSION: u32 = 1;

/// A partition with free-text provenance lines.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionFile {
    pub partition: Partition,
    pub provenance: Vec<String>,
}

struct TextHeader {
    fields: Vec<(String, String)>,
}

impl TextHeader {
    fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.fields.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> NdmError {
    NdmError::Malformed { path: path.to_owned(), reason: reason.into() }
}

fn read_text_header(r: &mut impl BufRead, tag: &str, path: &Path) -> Result<TextHeader> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let mut parts = first.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(malformed(path, format!("expected {tag} header")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed(path, "missing version"))?;
    if version != FILE_VERSION {
        return Err(NdmError::UnsupportedVersion(version));
    }
    let mut fields = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(malformed(path, "header not terminated by `end`"));
        }
        let line = line.trim_end_matches(['\n', '\r']);
        if line == "end" {
            break;
        }
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        fields.push((k.to_string(), v.to_string()));
    }
    Ok(TextHeader { fields })
}

fn parse_list<T: std::str::FromStr>(s: &str, path: &Path, what: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| malformed(path, format!("bad {what} entry {t:?}"))))
        .collect()
}

fn sanitize(line: &str) -> String {
    line.replace(['\n', '\r'], " ")
}

pub fn write_partition(file: &PartitionFile, path: &Path) -> Result<()> {
    let p = &file.partition;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{PARTITION_TAG} {FILE_VERSION}")?;
    writeln!(w, "d {}", p.d())?;
    let c: Vec<String> = p.dims().iter().map(|x| x.to_string()).collect();
    writeln!(w, "c {}", c.join(" "))?;
    for line in &file.provenance {
        writeln!(w, "provenance {}", sanitize(line))?;
    }
    writeln!(w, "end")?;
    write_grid(&mut w, p.r(), Dtype::F64)?;
    w.flush()?;
    Ok(())
}

pub fn read_partition(path: &Path) -> Result<PartitionFile> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_text_header(&mut r, PARTITION_TAG, path)?;
    let d: usize = header
        .get("d")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| malformed(path, "missing d"))?;
    let dims: Vec<usize> = parse_list(header.get("c").ok_or_else(|| malformed(path, "missing c"))?, path, "c")?;
    let r_mat = read_grid(&mut r)?;
    if r_mat.shape() != (d, d) {
        return Err(malformed(path, format!("R is {:?}, header says d = {d}", r_mat.shape())));
    }
    let partition = Partition::new(r_mat, dims)?;
    Ok(PartitionFile { partition, provenance: header.all("provenance").map(String::from).collect() })
}

pub fn write_toy_model(model: &ToyModel, spec: &FeatureGroupSpec, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TOY_TAG} {FILE_VERSION}")?;
    let g: Vec<String> = spec.group_sizes.iter().map(|x| x.to_string()).collect();
    writeln!(w, "groups {}", g.join(" "))?;
    writeln!(w, "sparsity {:?}", spec.group_sparsity)?;
    writeln!(w, "d {}", model.d())?;
    writeln!(w, "end")?;
    write_grid(&mut w, &model.w, Dtype::F64)?;
    write_grid(&mut w, &Matrix::from_vec(1, model.z(), model.b.clone())?, Dtype::F64)?;
    w.flush()?;
    Ok(())
}

pub fn read_toy_model(path: &Path) -> Result<(ToyModel, FeatureGroupSpec)> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_text_header(&mut r, TOY_TAG, path)?;
    let groups = parse_list(header.get("groups").ok_or_else(|| malformed(path, "missing groups"))?, path, "groups")?;
    let sparsity: f64 = header
        .get("sparsity")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| malformed(path, "missing sparsity"))?;
    let spec = FeatureGroupSpec::new(groups, sparsity)?;
    let w = read_grid(&mut r)?;
    let b = read_grid(&mut r)?;
    if w.cols() != spec.z() || b.shape() != (1, spec.z()) {
        return Err(malformed(path, "weight shapes disagree with group sizes"));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(malformed(path, "trailing bytes"));
    }
    Ok((ToyModel::new(w, b.into_vec())?, spec))
}

/// Comma-separated text grid, one matrix row per line, full precision.
pub fn write_grid_csv(m: &Matrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in m.row_iter().take(m.rows()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>> = line
            .split(',')
            .map(|c| c.trim().parse().map_err(|_| malformed(path, format!("line {}: bad number {c:?}", i + 1))))
            .collect();
        rows.push(row?);
    }
    Matrix::from_rows(&rows)
}
