//! Feature-matrix files (`TMFEAT1`) and their keypoint sidecars (`TMKP1`).
//!
//! A matrix file is a text header `TMFEAT1 <feature_id> <n_rows> <dim>`, one doc-id
//! line per row, then `n_rows × dim` little-endian f32 values, row-major. Local
//! descriptor sets repeat their doc id on every row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::global::DenseDescriptor;
use crate::index::DenseIndex;
use crate::keypoints::{DescriptorSet, Keypoint};
use crate::metrics::Normalization;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub feature_id: String,
    pub dim: usize,
    /// Doc id of every row.
    pub doc_ids: Vec<String>,
    pub data: Vec<f32>,
}

fn check_token(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains(char::is_whitespace) {
        return Err(Error::InvalidParam(format!("{what} {s:?} must be non-empty without whitespace")));
    }
    Ok(())
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\n', '\r']) {
        return Err(Error::InvalidParam(format!("doc id {id:?} is empty or spans lines")));
    }
    Ok(())
}

fn read_header_line(r: &mut impl BufRead) -> Result<Vec<String>> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    Ok(line.split_whitespace().map(str::to_string).collect())
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::format(format!("bad count {s:?}")))
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_dense(feature_id: &str, docs: &[(String, DenseDescriptor)]) -> Result<Self> {
        check_token("feature id", feature_id)?;
        let dim = docs.first().map_or(0, |d| d.1.dim());
        let mut m = FeatureMatrix { feature_id: feature_id.to_string(), dim, doc_ids: Vec::new(), data: Vec::new() };
        for (id, d) in docs {
            check_id(id)?;
            if d.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, got: d.dim() });
            }
            m.doc_ids.push(id.clone());
            m.data.extend(d.values.iter().map(|&v| v as f32));
        }
        Ok(m)
    }

    /// One row per descriptor plus the matching keypoints.
    pub fn from_sets(feature_id: &str, dim: usize, sets: &[(String, DescriptorSet)]) -> Result<(Self, Vec<Keypoint>)> {
        check_token("feature id", feature_id)?;
        let mut m = FeatureMatrix { feature_id: feature_id.to_string(), dim, doc_ids: Vec::new(), data: Vec::new() };
        let mut kps = Vec::new();
        for (id, s) in sets {
            check_id(id)?;
            if s.dim != dim {
                return Err(Error::DimMismatch { expected: dim, got: s.dim });
            }
            m.doc_ids.extend(std::iter::repeat(id.clone()).take(s.len()));
            m.data.extend_from_slice(&s.vectors);
            kps.extend_from_slice(&s.keypoints);
        }
        Ok((m, kps))
    }

    /// One descriptor per doc id.
    pub fn to_dense(&self) -> Result<Vec<(String, DenseDescriptor)>> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(self.rows());
        for (i, id) in self.doc_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateDoc(id.clone()));
            }
            out.push((id.clone(), DenseDescriptor::new(self.feature_id.clone(), self.row(i).iter().map(|&v| v as f64).collect())));
        }
        Ok(out)
    }

    /// Rows regrouped per doc id; docs without rows are absent.
    pub fn to_sets(&self, keypoints: &[Keypoint]) -> Result<BTreeMap<String, DescriptorSet>> {
        if keypoints.len() != self.rows() {
            return Err(Error::format(format!("{} keypoints for {} descriptor rows", keypoints.len(), self.rows())));
        }
        let mut out: BTreeMap<String, DescriptorSet> = BTreeMap::new();
        for (i, id) in self.doc_ids.iter().enumerate() {
            out.entry(id.clone())
                .or_insert_with(|| DescriptorSet::empty(self.feature_id.clone(), self.dim))
                .push(keypoints[i], self.row(i));
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "TMFEAT1 {} {} {}", self.feature_id, self.rows(), self.dim)?;
        for id in &self.doc_ids {
            writeln!(w, "{id}")?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self> {
        let h = read_header_line(&mut r)?;
        if h.len() != 4 || h[0] != "TMFEAT1" {
            return Err(Error::format(format!("bad feature-matrix header {:?}", h.join(" "))));
        }
        let (n, dim) = (parse_usize(&h[2])?, parse_usize(&h[3])?);
        let mut doc_ids = Vec::with_capacity(n);
        for _ in 0..n {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::format(format!("feature matrix declares {n} rows but lists {} doc ids", doc_ids.len())));
            }
            doc_ids.push(line.trim_end_matches(['\n', '\r']).to_string());
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() % 4 != 0 {
            return Err(Error::format("payload is not a whole number of f32 values"));
        }
        let floats = payload.len() / 4;
        if dim > 0 && floats % dim != 0 {
            return Err(Error::DimMismatch { expected: dim, got: floats % dim });
        }
        if floats != n * dim {
            return Err(Error::format(format!("payload holds {floats} values, expected {n} rows × {dim}")));
        }
        Ok(FeatureMatrix { feature_id: h[1].clone(), dim, doc_ids, data: read_f32s(&payload) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Sidecar of `(x, y, scale, orientation)` per descriptor row.
pub fn write_keypoints(kps: &[Keypoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "TMKP1 {}", kps.len())?;
    let mut buf = Vec::with_capacity(kps.len() * 16);
    for k in kps {
        for v in [k.x, k.y, k.scale, k.orientation] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_keypoints(mut r: impl BufRead) -> Result<Vec<Keypoint>> {
    let h = read_header_line(&mut r)?;
    if h.len() != 2 || h[0] != "TMKP1" {
        return Err(Error::format(format!("bad keypoint header {:?}", h.join(" "))));
    }
    let n = parse_usize(&h[1])?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n * 16 {
        return Err(Error::format(format!("keypoint payload has {} bytes, expected {}", payload.len(), n * 16)));
    }
    Ok(read_f32s(&payload)
        .chunks_exact(4)
        .map(|c| Keypoint { orientation: c[3], ..Keypoint::at(c[0], c[1], c[2]) })
        .collect())
}

/// Loads externally computed global features (e.g. network activations) as a
/// dense index, to be queried with cosine distance like any native feature.
pub fn import_external_features(path: &Path) -> Result<DenseIndex> {
    let m = FeatureMatrix::load(path)?;
    let docs = m.to_dense()?;
    let ids = docs.iter().map(|d| d.0.clone()).collect();
    DenseIndex::from_rows(&m.feature_id, ids, m.dim, m.data, Normalization::None)
}
