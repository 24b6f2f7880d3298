//! Corpus indexes: an exhaustive dense scan for global descriptors and an inverted
//! file for sparse TF-IDF vectors. Both produce [`Ranking`]s ordered by ascending
//! distance with ties broken by ascending document id.
//!
//! Stored values are 32-bit; scoring accumulates in 64-bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

use crate::codebook::{BoVWVector, IdfModel};
use crate::error::{Error, Result};
use crate::global::DenseDescriptor;
use crate::metrics::{cosine_from_parts, distance, normalize, Metric, Normalization};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
    /// 1-based position; fractional after tie averaging.
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ranking {
    pub query_id: String,
    pub entries: Vec<RankedDoc>,
}

impl Ranking {
    /// Sorts `(doc id, score)` pairs by ascending score then doc id and assigns
    /// ranks `1..`. `top` keeps only the first entries.
    pub fn from_scores(query_id: impl Into<String>, mut scored: Vec<(String, f64)>, top: Option<usize>) -> Self {
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(m) = top {
            scored.truncate(m);
        }
        Self {
            query_id: query_id.into(),
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(i, (doc_id, score))| RankedDoc { doc_id, score, rank: (i + 1) as f64 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rank_of(&self, doc_id: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.doc_id == doc_id).map(|e| e.rank)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Ranking over docs whose ids are already sorted ascending, so index order is id order.
fn rank_sorted_ids(query_id: &str, ids: &[String], scores: &[f64], top: Option<usize>) -> Ranking {
    let order: Vec<HeapItem> = match top {
        Some(m) if m < scores.len() => {
            let mut heap = BinaryHeap::with_capacity(m + 1);
            for (i, &s) in scores.iter().enumerate() {
                if m == 0 {
                    break;
                }
                let item = HeapItem(s, i);
                if heap.len() < m {
                    heap.push(item);
                } else if item < *heap.peek().unwrap() {
                    heap.pop();
                    heap.push(item);
                }
            }
            heap.into_sorted_vec()
        }
        _ => {
            let mut all: Vec<HeapItem> = scores.iter().enumerate().map(|(i, &s)| HeapItem(s, i)).collect();
            all.sort();
            all
        }
    };
    Ranking {
        query_id: query_id.to_string(),
        entries: order
            .into_iter()
            .enumerate()
            .map(|(r, HeapItem(score, i))| RankedDoc { doc_id: ids[i].clone(), score, rank: (r + 1) as f64 })
            .collect(),
    }
}

fn sorted_unique_ids<T>(docs: &mut [(String, T)]) -> Result<()> {
    docs.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateDoc(w[0].0.clone()));
    }
    for (id, _) in docs.iter() {
        if id.is_empty() || id.contains('\n') {
            return Err(Error::InvalidParam(format!("document id {id:?} is empty or contains a newline")));
        }
    }
    Ok(())
}

/// Row-per-document matrix of one global feature, rows in doc-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    pub feature_id: String,
    pub normalization: Normalization,
    pub seed: u64,
    dim: usize,
    doc_ids: Vec<String>,
    data: Vec<f32>,
}

/// Values as the index stores them: normalized, then rounded to 32 bits.
pub fn dense_storage_form(values: &[f64], normalization: Normalization) -> Vec<f64> {
    normalize(values, normalization).into_iter().map(|v| v as f32 as f64).collect()
}

/// Builds a dense index; descriptors are normalized with `normalization` first.
pub fn build_dense(docs: Vec<(String, DenseDescriptor)>, normalization: Normalization) -> Result<DenseIndex> {
    let mut docs = docs;
    sorted_unique_ids(&mut docs)?;
    let feature_id = docs.first().map(|d| d.1.feature_id.clone()).unwrap_or_default();
    let dim = docs.first().map(|d| d.1.dim()).unwrap_or(0);
    let mut data = Vec::with_capacity(docs.len() * dim);
    for (id, d) in &docs {
        if d.dim() != dim {
            return Err(Error::DimMismatch { expected: dim, got: d.dim() });
        }
        if d.feature_id != feature_id {
            return Err(Error::InvalidParam(format!(
                "document {id:?} has feature {:?}, index holds {feature_id:?}",
                d.feature_id
            )));
        }
        if d.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("document {id:?} has non-finite values")));
        }
        data.extend(normalize(&d.values, normalization).iter().map(|&v| v as f32));
    }
    Ok(DenseIndex {
        feature_id,
        normalization,
        seed: 0,
        dim,
        doc_ids: docs.into_iter().map(|d| d.0).collect(),
        data,
    })
}

impl DenseIndex {
    pub fn from_rows(feature_id: &str, doc_ids: Vec<String>, dim: usize, data: Vec<f32>, normalization: Normalization) -> Result<Self> {
        if data.len() != doc_ids.len() * dim {
            return Err(Error::format(format!("{} values for {} rows of dim {dim}", data.len(), doc_ids.len())));
        }
        let mut pairs: Vec<(String, usize)> = doc_ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        sorted_unique_ids(&mut pairs)?;
        let mut sorted = Vec::with_capacity(data.len());
        for (_, i) in &pairs {
            sorted.extend_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        Ok(Self {
            feature_id: feature_id.to_string(),
            normalization,
            seed: 0,
            dim,
            doc_ids: pairs.into_iter().map(|p| p.0).collect(),
            data: sorted,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Stored row for `doc_id`, widened to f64.
    pub fn vector(&self, doc_id: &str) -> Option<Vec<f64>> {
        let i = self.doc_ids.binary_search_by(|d| d.as_str().cmp(doc_id)).ok()?;
        Some(self.row(i).iter().map(|&v| v as f64).collect())
    }

    /// Query in storage form; errors on dimension mismatch with a non-empty index.
    pub fn prepare_query(&self, q: &DenseDescriptor) -> Result<Vec<f64>> {
        if !self.is_empty() && q.dim() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: q.dim() });
        }
        Ok(dense_storage_form(&q.values, self.normalization))
    }

    /// Distance from a prepared query to every row, in doc-id order.
    pub fn distances(&self, q: &[f64], metric: &Metric) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.dim];
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            for (dst, &v) in row.iter_mut().zip(self.row(i)) {
                *dst = v as f64;
            }
            out.push(distance(q, &row, metric)?);
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "TMIDX1 dense {} {} {} {} {}",
            self.feature_id,
            self.dim,
            self.len(),
            self.normalization,
            self.seed
        )?;
        for id in &self.doc_ids {
            writeln!(w, "{id}")?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Exhaustive scan. `top = None` ranks every document.
pub fn query_dense(idx: &DenseIndex, query_id: &str, q: &DenseDescriptor, metric: &Metric, top: Option<usize>) -> Result<Ranking> {
    let prepared = idx.prepare_query(q)?;
    let scores = idx.distances(&prepared, metric)?;
    Ok(rank_sorted_ids(query_id, &idx.doc_ids, &scores, top))
}

/// Word-to-postings inverted file over TF-IDF vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub feature_id: String,
    pub seed: u64,
    /// Weighting model used for queries against this index.
    pub idf: Option<IdfModel>,
    k: usize,
    doc_ids: Vec<String>,
    postings: Vec<Vec<(u32, f32)>>,
    norms: Vec<f64>,
}

/// Builds postings for vocabulary size `k`; weights are stored at 32-bit precision.
pub fn build_inverted(feature_id: &str, k: usize, docs: Vec<(String, BoVWVector)>) -> Result<InvertedIndex> {
    let mut docs = docs;
    sorted_unique_ids(&mut docs)?;
    let mut postings: Vec<Vec<(u32, f32)>> = vec![Vec::new(); k];
    let mut norms = Vec::with_capacity(docs.len());
    for (d, (id, v)) in docs.iter().enumerate() {
        let mut sq = 0.0f64;
        for &(w, x) in v.entries() {
            if w as usize >= k {
                return Err(Error::InvalidParam(format!("document {id:?} uses word {w} >= k = {k}")));
            }
            let x = x as f32;
            if x <= 0.0 {
                continue;
            }
            postings[w as usize].push((d as u32, x));
            sq += x as f64 * x as f64;
        }
        norms.push(sq.sqrt());
    }
    Ok(InvertedIndex {
        feature_id: feature_id.to_string(),
        seed: 0,
        idf: None,
        k,
        doc_ids: docs.into_iter().map(|d| d.0).collect(),
        postings,
        norms,
    })
}

impl InvertedIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn postings(&self, word: u32) -> &[(u32, f32)] {
        self.postings.get(word as usize).map(|p| p.as_slice()).unwrap_or(&[])
    }

    pub fn total_postings(&self) -> usize {
        self.postings.iter().map(|p| p.len()).sum()
    }

    pub fn norm(&self, doc: usize) -> f64 {
        self.norms[doc]
    }

    /// Reconstructs the stored vector of document `doc`.
    pub fn doc_vector(&self, doc: usize) -> BoVWVector {
        let mut entries = Vec::new();
        for (w, list) in self.postings.iter().enumerate() {
            if let Ok(p) = list.binary_search_by_key(&(doc as u32), |e| e.0) {
                entries.push((w as u32, list[p].1 as f64));
            }
        }
        BoVWVector::from_entries(entries).expect("stored weights are positive")
    }

    /// Cosine distance from `q` to every document, accumulated over `q`'s postings only.
    pub fn distances(&self, q: &BoVWVector) -> Vec<f64> {
        let q = q.to_f32_precision();
        let mut acc = vec![0.0f64; self.len()];
        for &(w, qw) in q.entries() {
            for &(d, dw) in self.postings(w) {
                acc[d as usize] += qw * dw as f64;
            }
        }
        acc.iter()
            .zip(&self.norms)
            .map(|(&dot, &dn)| cosine_from_parts(dot, q.norm(), dn))
            .collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "TMIDX1 inverted {} {} {} tfidf {}", self.feature_id, self.k, self.len(), self.seed)?;
        for id in &self.doc_ids {
            writeln!(w, "{id}")?;
        }
        let mut per_doc: Vec<Vec<(u32, f32)>> = vec![Vec::new(); self.len()];
        for (word, list) in self.postings.iter().enumerate() {
            for &(d, x) in list {
                per_doc[d as usize].push((word as u32, x));
            }
        }
        let mut buf = Vec::new();
        for entries in &per_doc {
            buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            for &(word, x) in entries {
                buf.extend_from_slice(&word.to_le_bytes());
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        match &self.idf {
            Some(idf) => {
                buf.extend_from_slice(&1u32.to_le_bytes());
                buf.extend_from_slice(&idf.doc_count.to_le_bytes());
                buf.extend_from_slice(&(idf.doc_freq.len() as u32).to_le_bytes());
                for df in &idf.doc_freq {
                    buf.extend_from_slice(&df.to_le_bytes());
                }
            }
            None => buf.extend_from_slice(&0u32.to_le_bytes()),
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Inverted-file query. Documents sharing no word with `q` score 1 (or 0 when both
/// vectors are empty) and sort by doc id among themselves.
pub fn query_inverted(idx: &InvertedIndex, query_id: &str, q: &BoVWVector, top: Option<usize>) -> Result<Ranking> {
    if let Some(&(w, _)) = q.entries().iter().find(|e| e.0 as usize >= idx.k) {
        return Err(Error::InvalidParam(format!("query word {w} >= k = {}", idx.k)));
    }
    Ok(rank_sorted_ids(query_id, &idx.doc_ids, &idx.distances(q), top))
}

/// Sparse cosine distance with the same accumulation order as the inverted file.
pub fn bovw_cosine_distance(q: &BoVWVector, d: &BoVWVector) -> f64 {
    let (a, b) = (q.entries(), d.entries());
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    cosine_from_parts(dot, q.norm(), d.norm())
}

/// Either kind of persisted index.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyIndex {
    Dense(DenseIndex),
    Inverted(InvertedIndex),
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32> {
    let b = buf.get(*pos..*pos + 4).ok_or_else(|| Error::format("index payload truncated"))?;
    *pos += 4;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_f32(buf: &[u8], pos: &mut usize) -> Result<f32> {
    Ok(f32::from_bits(read_u32(buf, pos)?))
}

/// Reads a `TMIDX1` index file.
pub fn read_index(mut r: impl BufRead) -> Result<AnyIndex> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 7 || parts[0] != "TMIDX1" {
        return Err(Error::format(format!("bad index header {:?}", header.trim_end())));
    }
    let num = |s: &str| s.parse::<u64>().map_err(|_| Error::format(format!("bad number {s:?}")));
    let width = num(parts[3])? as usize;
    let n = num(parts[4])? as usize;
    let seed = num(parts[6])?;
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::format("index ended inside the doc-id list"));
        }
        ids.push(line.trim_end_matches(['\n', '\r']).to_string());
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut pos = 0;
    match parts[1] {
        "dense" => {
            let normalization: Normalization = parts[5].parse()?;
            if payload.len() != n * width * 4 {
                return Err(Error::format(format!("dense payload has {} bytes, expected {}", payload.len(), n * width * 4)));
            }
            let data = (0..n * width).map(|_| read_f32(&payload, &mut pos)).collect::<Result<Vec<_>>>()?;
            let mut idx = DenseIndex::from_rows(parts[2], ids, width, data, normalization)?;
            idx.seed = seed;
            Ok(AnyIndex::Dense(idx))
        }
        "inverted" => {
            let mut docs = Vec::with_capacity(n);
            for id in ids {
                let nnz = read_u32(&payload, &mut pos)? as usize;
                let mut entries = Vec::with_capacity(nnz);
                for _ in 0..nnz {
                    let w = read_u32(&payload, &mut pos)?;
                    let x = read_f32(&payload, &mut pos)?;
                    entries.push((w, x as f64));
                }
                docs.push((id, BoVWVector::from_entries(entries)?));
            }
            let mut idx = build_inverted(parts[2], width, docs)?;
            idx.seed = seed;
            if read_u32(&payload, &mut pos)? == 1 {
                let doc_count = read_u32(&payload, &mut pos)?;
                let len = read_u32(&payload, &mut pos)? as usize;
                let df = (0..len).map(|_| read_u32(&payload, &mut pos)).collect::<Result<Vec<_>>>()?;
                idx.idf = Some(IdfModel::from_doc_freq(doc_count, df));
            }
            if pos != payload.len() {
                return Err(Error::format("trailing bytes after index payload"));
            }
            Ok(AnyIndex::Inverted(idx))
        }
        other => Err(Error::format(format!("unknown index kind {other:?}"))),
    }
}
