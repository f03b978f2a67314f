//! Node feature matrices and their on-disk formats.
//!
//! Text form: a header line `xnode-feat v1 <N> <d>` followed by `N` CSV rows.
//! Binary form: the 8-byte magic `XNFEAT01`, `N` and `d` as little-endian
//! `u32`, then `N·d` little-endian `f64` values in row-major order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BINARY_MAGIC: &[u8; 8] = b"XNFEAT01";
const TEXT_HEADER: &str = "xnode-feat";

/// `N × d` matrix of finite node features, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::shape("feature_matrix", &[n, d], &[data.len()]));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteFeature {
                row: pos / d.max(1),
                col: pos % d.max(1),
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = Tensor::from_rows(rows)?;
        let [n, d] = t.shape();
        Self::new(n, d, t.into_data())
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d.max(1)).take(self.n)
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(self.n, self.d, self.data.clone()).expect("validated shape")
    }

    /// Multiplies every entry by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.n, self.d, self.data.iter().map(|x| x * k).collect())
    }

    /// Rows reordered so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Self {
            n: self.n,
            d: self.d,
            data,
        }
    }

    /// Largest entry of row `i` and its column; the lowest column wins ties.
    pub fn top_feature(&self, i: usize) -> (usize, f64) {
        let row = self.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        (best, row.get(best).copied().unwrap_or(0.0))
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "{TEXT_HEADER} v1 {} {}", self.n, self.d)?;
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 8);
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.d as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf)?;
        Ok(())
    }

    /// Reads either format, detected from the leading bytes.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::parse_binary(&bytes, Some(path))
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::parse(Some(path), 1, "feature file is neither binary nor UTF-8"))?;
            Self::parse_text(&text, Some(path))
        }
    }

    pub fn parse_binary(bytes: &[u8], path: Option<&Path>) -> Result<Self> {
        if bytes.len() < 16 || !bytes.starts_with(BINARY_MAGIC) {
            return Err(Error::parse(path, 1, "missing binary feature header"));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != n * d * 8 {
            return Err(Error::parse(
                path,
                1,
                format!("expected {} bytes of data for {n}x{d}, found {}", n * d * 8, body.len()),
            ));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(n, d, data)
    }

    pub fn parse_text(text: &str, path: Option<&Path>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty feature file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != TEXT_HEADER || parts[1] != "v1" {
            return Err(Error::parse(path, 1, format!("bad header `{header}`")));
        }
        let n: usize = parts[2]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad node count"))?;
        let d: usize = parts[3]
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad feature width"))?;
        let mut data = Vec::with_capacity(n * d);
        let mut rows = 0;
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut count = 0;
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, format!("bad number `{field}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(path, line_no, "non-finite feature"));
                }
                data.push(v);
                count += 1;
            }
            if count != d {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected {d} values, found {count}"),
                ));
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::parse(
                path,
                text.lines().count(),
                format!("header declares {n} rows, found {rows}"),
            ));
        }
        Self::new(n, d, data)
    }
}
