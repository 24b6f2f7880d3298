//! Visual vocabulary: k-means training, nearest-word quantization and TF-IDF
//! weighting of word counts.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::keypoints::DescriptorSet;

/// Visual-word id to occurrence count.
pub type TermCounts = BTreeMap<u32, u32>;

/// k-means centroids over one descriptor family.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub feature_id: String,
    pub seed: u64,
    k: usize,
    dim: usize,
    centroids: Vec<f64>,
}

impl Codebook {
    pub fn new(feature_id: impl Into<String>, dim: usize, centroids: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::InvalidParam(format!(
                "{} centroid values do not form rows of dim {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("centroids must be finite".into()));
        }
        Ok(Self { feature_id: feature_id.into(), seed, k: centroids.len() / dim, dim, centroids })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest centroid by Euclidean distance and its squared distance; lowest id wins ties.
    pub fn nearest(&self, row: &[f32]) -> (u32, f64) {
        nearest(&self.centroids, self.dim, row)
    }

    pub fn assign(&self, row: &[f32]) -> u32 {
        self.nearest(row).0
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "TMCB1 {} {} {} {}", self.feature_id, self.k, self.dim, self.seed)?;
        let mut buf = Vec::with_capacity(self.centroids.len() * 4);
        for &v in &self.centroids {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads the persisted form. Centroids come back rounded to 32-bit precision.
    pub fn read_from(mut r: impl BufRead) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "TMCB1" {
            return Err(Error::format(format!("bad codebook header {:?}", header.trim_end())));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| Error::format(format!("bad number {s:?}")));
        let k = num(parts[2])? as usize;
        let dim = num(parts[3])? as usize;
        let seed = num(parts[4])?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != k * dim * 4 {
            return Err(Error::format(format!(
                "codebook payload has {} bytes, expected {}",
                payload.len(),
                k * dim * 4
            )));
        }
        let centroids = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Codebook::new(parts[1], dim, centroids, seed)
    }
}

fn sq_dist(row: &[f32], c: &[f64]) -> f64 {
    row.iter().zip(c).map(|(&a, &b)| (a as f64 - b) * (a as f64 - b)).sum()
}

fn nearest(centroids: &[f64], dim: usize, row: &[f32]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (i as u32, d);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

/// Trained codebook plus the objective (sum of squared distances to the assigned
/// centroid) measured at every assignment step.
#[derive(Debug, Clone)]
pub struct KMeansTrace {
    pub codebook: Codebook,
    pub objectives: Vec<f64>,
    pub converged: bool,
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. `samples` is row-major with `dim` columns.
pub fn train_kmeans(feature_id: &str, samples: &[f32], dim: usize, cfg: KMeansConfig) -> Result<Codebook> {
    Ok(train_kmeans_traced(feature_id, samples, dim, cfg)?.codebook)
}

pub fn train_kmeans_traced(feature_id: &str, samples: &[f32], dim: usize, cfg: KMeansConfig) -> Result<KMeansTrace> {
    if dim == 0 || samples.len() % dim != 0 {
        return Err(Error::InvalidParam(format!("{} values are not rows of dim {dim}", samples.len())));
    }
    let m = samples.len() / dim;
    if cfg.k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    if m < cfg.k {
        return Err(Error::TooFewSamples { samples: m, k: cfg.k });
    }
    let rows = |i: usize| &samples[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // k-means++ seeding
    let mut chosen = vec![false; m];
    let mut centroids = Vec::with_capacity(cfg.k * dim);
    let first = rng.gen_range(0..m);
    chosen[first] = true;
    centroids.extend(rows(first).iter().map(|&v| v as f64));
    let mut min_d2: Vec<f64> = (0..m).into_par_iter().map(|i| sq_dist(rows(i), &centroids[..dim])).collect();
    for _ in 1..cfg.k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in min_d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..m).rev().find(|&i| min_d2[i] > 0.0).unwrap())
        } else {
            (0..m).find(|&i| !chosen[i]).expect("m >= k")
        };
        chosen[pick] = true;
        let start = centroids.len();
        centroids.extend(rows(pick).iter().map(|&v| v as f64));
        let c = &centroids[start..];
        min_d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist(rows(i), c);
            if nd < *d {
                *d = nd;
            }
        });
    }

    let mut assignment = vec![u32::MAX; m];
    let mut objectives = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let step: Vec<(u32, f64)> = (0..m).into_par_iter().map(|i| nearest(&centroids, dim, rows(i))).collect();
        objectives.push(step.iter().map(|s| s.1).sum());
        if step.iter().zip(&assignment).all(|(s, &a)| s.0 == a) {
            converged = true;
            break;
        }
        for (a, s) in assignment.iter_mut().zip(&step) {
            *a = s.0;
        }
        let mut sums = vec![0.0f64; cfg.k * dim];
        let mut counts = vec![0usize; cfg.k];
        for (i, &a) in assignment.iter().enumerate() {
            let a = a as usize;
            counts[a] += 1;
            for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(rows(i)) {
                *s += v as f64;
            }
        }
        let mut taken = vec![false; m];
        for c in 0..cfg.k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s / n;
                }
            } else {
                // empty cluster: move it onto the sample farthest from its centroid
                let far = (0..m)
                    .filter(|&i| !taken[i])
                    .fold(None::<(usize, f64)>, |best, i| match best {
                        Some((_, d)) if d >= step[i].1 => best,
                        _ => Some((i, step[i].1)),
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                taken[far] = true;
                for (dst, &v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(rows(far)) {
                    *dst = v as f64;
                }
            }
        }
    }
    Ok(KMeansTrace { codebook: Codebook::new(feature_id, dim, centroids, cfg.seed)?, objectives, converged })
}

/// Uniform reservoir sample of at most `max_rows` rows from `sets`, deterministic in `seed`.
pub fn reservoir_sample<'a>(sets: impl IntoIterator<Item = &'a DescriptorSet>, max_rows: usize, seed: u64) -> (Vec<f32>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<Vec<f32>> = Vec::new();
    let mut dim = 0;
    let mut seen = 0usize;
    for set in sets {
        dim = set.dim;
        for row in set.rows() {
            if reservoir.len() < max_rows {
                reservoir.push(row.to_vec());
            } else {
                let j = rng.gen_range(0..=seen);
                if j < max_rows {
                    reservoir[j] = row.to_vec();
                }
            }
            seen += 1;
        }
    }
    (reservoir.concat(), dim)
}

/// Count of each nearest visual word over the rows of `set`.
pub fn quantize(set: &DescriptorSet, cb: &Codebook) -> Result<TermCounts> {
    if set.dim != cb.dim() {
        return Err(Error::DimMismatch { expected: cb.dim(), got: set.dim });
    }
    let words: Vec<u32> = set.rows().map(|r| cb.assign(r)).collect();
    let mut counts = TermCounts::new();
    for w in words {
        *counts.entry(w).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Inverse document frequencies, `ln(N / df)`, zero for words never or always seen.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfModel {
    pub doc_count: u32,
    pub doc_freq: Vec<u32>,
    pub idf: Vec<f64>,
}

impl IdfModel {
    pub fn from_doc_freq(doc_count: u32, doc_freq: Vec<u32>) -> Self {
        let idf = doc_freq
            .iter()
            .map(|&df| if df == 0 || df >= doc_count { 0.0 } else { (doc_count as f64 / df as f64).ln() })
            .collect();
        Self { doc_count, doc_freq, idf }
    }

    pub fn vocabulary(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, word: u32) -> f64 {
        self.idf.get(word as usize).copied().unwrap_or(0.0)
    }
}

/// Document frequencies over a corpus of per-document counts, vocabulary size `k`.
pub fn compute_idf(k: usize, corpus_counts: &[TermCounts]) -> IdfModel {
    let mut df = vec![0u32; k];
    for doc in corpus_counts {
        for (&w, &c) in doc {
            if c > 0 && (w as usize) < k {
                df[w as usize] += 1;
            }
        }
    }
    IdfModel::from_doc_freq(corpus_counts.len() as u32, df)
}

/// Sparse TF-IDF vector, entries sorted by word id, all weights positive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoVWVector {
    entries: Vec<(u32, f64)>,
    norm: f64,
}

impl BoVWVector {
    /// Builds from `(word, weight)` pairs; zero weights are dropped, duplicates rejected.
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Result<Self> {
        entries.retain(|e| e.1 != 0.0);
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParam("duplicate word id in BoVW vector".into()));
        }
        if entries.iter().any(|e| !(e.1 > 0.0 && e.1.is_finite())) {
            return Err(Error::InvalidParam("BoVW weights must be positive and finite".into()));
        }
        let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        Ok(Self { entries, norm })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Weights rounded to the 32-bit precision indexes store.
    pub fn to_f32_precision(&self) -> BoVWVector {
        BoVWVector::from_entries(self.entries.iter().map(|&(w, v)| (w, v as f32 as f64)).collect())
            .expect("rounding keeps entries valid")
    }

    pub fn densify(&self, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        for &(w, x) in &self.entries {
            v[w as usize] = x;
        }
        v
    }
}

/// `weight(w) = count(w) / total · idf(w)`.
pub fn tfidf_weight(counts: &TermCounts, idf: &IdfModel) -> BoVWVector {
    let total: u64 = counts.values().map(|&c| c as u64).sum();
    if total == 0 {
        return BoVWVector::default();
    }
    let entries = counts
        .iter()
        .map(|(&w, &c)| (w, c as f64 / total as f64 * idf.idf(w)))
        .filter(|e| e.1 > 0.0)
        .collect();
    BoVWVector::from_entries(entries).expect("tf-idf weights are positive")
}
