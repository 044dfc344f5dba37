//! Plain-text matrix files and atomic output writes.
//!
//! Dense: a `B <size>` line, then `size` rows of `size` numbers.
//! Sparse plus rank-one: a `B <size>` line, a `SPARSE <nnz>` line, `nnz`
//! lines of `row col value`, then `RANK1 <weight> p_0 ... p_{size-1}`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::ctmc::{EventProcess, GeneratorMatrix, KernelRepresentation, SparseRankOne};
use crate::error::{Result, ScudError};

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFile {
    Dense { size: usize, entries: Vec<f64> },
    Sparse(SparseRankOne),
}

impl MatrixFile {
    pub fn size(&self) -> usize {
        match self {
            Self::Dense { size, .. } => *size,
            Self::Sparse(m) => m.size(),
        }
    }

    pub fn from_generator(g: &GeneratorMatrix) -> Self {
        Self::Dense { size: g.size(), entries: g.entries().to_vec() }
    }

    pub fn from_kernel(process: &EventProcess) -> Self {
        match process.kernel() {
            KernelRepresentation::SparsePlusRankOne(m) => Self::Sparse(m.clone()),
            dense => Self::Dense { size: dense.size(), entries: dense.densify() },
        }
    }

    pub fn densify(&self) -> Vec<f64> {
        match self {
            Self::Dense { entries, .. } => entries.clone(),
            Self::Sparse(m) => m.densify(),
        }
    }

    /// Floats use Rust's shortest round-trip form, so parsing is exact.
    pub fn to_text(&self) -> String {
        let mut out = format!("B {}\n", self.size());
        match self {
            Self::Dense { size, entries } => {
                for row in entries.chunks(*size) {
                    let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                    out.push_str(&line.join(" "));
                    out.push('\n');
                }
            }
            Self::Sparse(m) => {
                let _ = writeln!(out, "SPARSE {}", m.nnz());
                for (i, j, v) in m.triples() {
                    let _ = writeln!(out, "{i} {j} {v:?}");
                }
                let _ = write!(out, "RANK1 {:?}", m.weight());
                for p in m.rank_one_factor() {
                    let _ = write!(out, " {p:?}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (n, header) = lines.next().ok_or(ScudError::Parse { line: 1, message: "empty matrix file".into() })?;
        let size = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["B", b] => b.parse::<usize>().ok().filter(|&b| b > 0),
            _ => None,
        }
        .ok_or(ScudError::Parse { line: n, message: format!("expected `B <size>`, found `{header}`") })?;

        let numbers = |line: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|tok| tok.parse::<f64>().map_err(|e| ScudError::Parse { line, message: format!("`{tok}`: {e}") }))
                .collect()
        };

        let Some((n, first)) = lines.next() else {
            return Err(ScudError::Parse { line: n + 1, message: "missing matrix body".into() });
        };
        if let Some(rest) = first.strip_prefix("SPARSE") {
            let nnz: usize = rest
                .trim()
                .parse()
                .map_err(|_| ScudError::Parse { line: n, message: format!("bad entry count `{}`", rest.trim()) })?;
            let mut triples = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let (k, line) =
                    lines.next().ok_or(ScudError::Parse { line: n, message: "too few sparse entries".into() })?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                let bad = || ScudError::Parse { line: k, message: format!("expected `row col value`, found `{line}`") };
                if fields.len() != 3 {
                    return Err(bad());
                }
                let i: usize = fields[0].parse().map_err(|_| bad())?;
                let j: usize = fields[1].parse().map_err(|_| bad())?;
                let v: f64 = fields[2].parse().map_err(|_| bad())?;
                if i >= size || j >= size {
                    return Err(ScudError::Parse { line: k, message: format!("index outside size {size}") });
                }
                triples.push((i, j, v));
            }
            let (k, line) = lines.next().ok_or(ScudError::Parse { line: n, message: "missing RANK1 line".into() })?;
            let rest = line
                .strip_prefix("RANK1")
                .ok_or(ScudError::Parse { line: k, message: format!("expected `RANK1 ...`, found `{line}`") })?;
            let values = numbers(k, rest)?;
            if values.len() != size + 1 {
                return Err(ScudError::Parse {
                    line: k,
                    message: format!("RANK1 needs a weight and {size} probabilities, found {} numbers", values.len()),
                });
            }
            if let Some((k, _)) = lines.next() {
                return Err(ScudError::Parse { line: k, message: "trailing content".into() });
            }
            let m = SparseRankOne::from_triples(size, triples, values[0], values[1..].to_vec())
                .map_err(|e| ScudError::Parse { line: k, message: e.to_string() })?;
            return Ok(Self::Sparse(m));
        }

        let mut entries = Vec::with_capacity(size * size);
        let mut row_line = Some((n, first));
        for _ in 0..size {
            let (k, line) = row_line
                .take()
                .or_else(|| lines.next())
                .ok_or(ScudError::Parse { line: n, message: format!("expected {size} rows") })?;
            let row = numbers(k, line)?;
            if row.len() != size {
                return Err(ScudError::Parse { line: k, message: format!("{} entries, expected {size}", row.len()) });
            }
            entries.extend(row);
        }
        if let Some((k, _)) = lines.next() {
            return Err(ScudError::Parse { line: k, message: "trailing content".into() });
        }
        Ok(Self::Dense { size, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScudError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or(ScudError::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        ScudError::Io(format!("{}: {e}", path.display()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{build_gaussian_band, build_sparse_graph, ring_similarity, GaussianForm, SparseGraphSpec};

    #[test]
    fn dense_round_trip_is_exact() {
        let g = build_gaussian_band(7, 200.0, GaussianForm::Normalized).unwrap();
        let file = MatrixFile::from_generator(&g);
        assert_eq!(MatrixFile::parse(&file.to_text()).unwrap(), file);
    }

    #[test]
    fn sparse_round_trip_is_exact() {
        let f = 12;
        let spec = SparseGraphSpec {
            vocabulary: 20,
            similarities: ring_similarity(f),
            neighbours: 3,
            temperature: 0.3,
            mix_weight: 0.4,
            frequencies: vec![1.0 / f as f64; f],
        };
        let file = MatrixFile::Sparse(build_sparse_graph(&spec).unwrap());
        let back = MatrixFile::parse(&file.to_text()).unwrap();
        assert_eq!(back.densify(), file.densify());
    }

    #[test]
    fn errors_carry_line_numbers() {
        match MatrixFile::parse("B 2\n0.5 0.5\n0.5 x\n") {
            Err(ScudError::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        match MatrixFile::parse("B 2\n0.5 0.5\n") {
            Err(ScudError::Parse { .. }) => {}
            other => panic!("{other:?}"),
        }
        match MatrixFile::parse("B 3\nSPARSE 1\n0 5 1.0\nRANK1 0 1 0 0\n") {
            Err(ScudError::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
