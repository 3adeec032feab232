//! Dense per-item feature vectors and their text / binary file formats.
//!
//! Text format: a `#features <N> <F>` header followed by one
//! `<item_id>\t<v1>\t...\t<vF>` line per item. The binary mirror starts with
//! the magic `SMF1`, then little-endian `u64` N and F, the id table (each id
//! as a `u32` byte length followed by UTF-8), then N×F little-endian `f64`
//! values in row-major order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"SMF1";

/// Row-major N×F matrix of finite feature values keyed by item id.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    values: Vec<f64>,
}

impl PartialEq for FeatureMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ids == other.ids
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FeatureMatrix {
    /// Builds a validated matrix. Ids must be unique, `values.len()` must be
    /// `ids.len() * dim`, and every value must be finite.
    pub fn new(ids: Vec<String>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if values.len() != ids.len() * dim {
            return Err(Error::Dimension {
                expected: ids.len() * dim,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in row {} (`{}`)",
                pos / dim,
                ids[pos / dim]
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate item id `{id}`")));
            }
        }
        Ok(Self {
            ids,
            index,
            dim,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Feature dimension F.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Like [`index_of`](Self::index_of) but reports unknown ids as errors.
    pub fn require(&self, id: &str) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Returns a copy with every row scaled to unit Euclidean norm. Zero rows
    /// are left untouched.
    pub fn l2_normalized(&self) -> Self {
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Self {
            ids: self.ids.clone(),
            index: self.index.clone(),
            dim: self.dim,
            values,
        }
    }

    /// Loads either format, sniffing the binary magic.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 4];
        let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
        drop(file);
        if n == 4 && &magic == BINARY_MAGIC {
            Self::load_binary(path)
        } else {
            Self::load_text(path)
        }
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();

        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(path, 1, "empty file, expected `#features <N> <F>`")),
        };
        let (n, dim) = parse_header(&header).ok_or_else(|| {
            Error::parse(path, 1, format!("bad header `{header}`, expected `#features <N> <F>`"))
        })?;
        if dim == 0 {
            return Err(Error::parse(path, 1, "feature dimension must be positive"));
        }

        let mut ids = Vec::with_capacity(n);
        let mut index = HashMap::with_capacity(n);
        let mut values = Vec::with_capacity(n * dim);
        for (lineno, line) in lines.enumerate() {
            let lineno = lineno + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default();
            if id.is_empty() {
                return Err(Error::parse(path, lineno, "empty item id"));
            }
            let start = values.len();
            for field in fields {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::parse(path, lineno, format!("cannot parse `{field}` as a number"))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(path, lineno, format!("non-finite value `{field}`")));
                }
                values.push(v);
            }
            let got = values.len() - start;
            if got != dim {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {dim} values, found {got}"),
                ));
            }
            if index.insert(id.to_string(), ids.len()).is_some() {
                return Err(Error::parse(path, lineno, format!("duplicate item id `{id}`")));
            }
            ids.push(id.to_string());
        }
        if ids.len() != n {
            return Err(Error::parse(
                path,
                1,
                format!("header declares {n} items but file holds {}", ids.len()),
            ));
        }
        Ok(Self {
            ids,
            index,
            dim,
            values,
        })
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_text(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "#features {} {}", self.len(), self.dim)?;
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}")?;
            for v in self.row(i) {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let truncated = || Error::parse(path, 0, "truncated binary feature file");
        let mut cur = bytes.as_slice();
        let mut take = |len: usize| -> Result<&[u8]> {
            if cur.len() < len {
                return Err(truncated());
            }
            let (head, tail) = cur.split_at(len);
            cur = tail;
            Ok(head)
        };
        if take(4)? != BINARY_MAGIC {
            return Err(Error::parse(path, 0, "missing SMF1 magic"));
        }
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut ids = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(len)?)
                .map_err(|_| Error::parse(path, 0, "item id is not valid UTF-8"))?;
            ids.push(id.to_string());
        }
        let body = take(n * dim * 8)?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !cur.is_empty() {
            return Err(Error::parse(path, 0, "trailing bytes after feature values"));
        }
        Self::new(ids, dim, values).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(BINARY_MAGIC)?;
            w.write_all(&(self.len() as u64).to_le_bytes())?;
            w.write_all(&(self.dim as u64).to_le_bytes())?;
            for id in &self.ids {
                w.write_all(&(id.len() as u32).to_le_bytes())?;
                w.write_all(id.as_bytes())?;
            }
            for v in &self.values {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split_whitespace();
    if parts.next()? != "#features" {
        return None;
    }
    let n = parts.next()?.parse().ok()?;
    let dim = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((n, dim))
}
