//! Distances between feature vectors and the normalizations applied before them.
//!
//! Every metric is a distance: lower means more similar. Cosine is reported as
//! `1 - similarity`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::global::{HSV_HUE_CENTERS, HSV_SAT_BINS, HSV_VAL_BINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Normalization {
    None,
    L1,
    L2,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::L1 => "l1",
            Normalization::L2 => "l2",
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Normalization::None),
            "l1" => Ok(Normalization::L1),
            "l2" => Ok(Normalization::L2),
            other => Err(Error::InvalidParam(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Scale `v` to unit L1 or L2 norm. The zero vector is returned unchanged.
pub fn normalize(v: &[f64], scheme: Normalization) -> Vec<f64> {
    let norm = match scheme {
        Normalization::None => return v.to_vec(),
        Normalization::L1 => v.iter().map(|x| x.abs()).sum::<f64>(),
        Normalization::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    };
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / norm).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricId {
    Euclidean,
    Cosine,
    IntersectionL1,
    IntersectionL2,
    Quadratic,
    Manhattan,
}

impl MetricId {
    pub const ALL: [MetricId; 6] = [
        MetricId::Euclidean,
        MetricId::Cosine,
        MetricId::IntersectionL1,
        MetricId::IntersectionL2,
        MetricId::Quadratic,
        MetricId::Manhattan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Euclidean => "euclidean",
            MetricId::Cosine => "cosine",
            MetricId::IntersectionL1 => "intersection_l1",
            MetricId::IntersectionL2 => "intersection_l2",
            MetricId::Quadratic => "quadratic",
            MetricId::Manhattan => "manhattan",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown metric {s:?}")))
    }
}

/// Symmetric bin-similarity matrix for the quadratic-form distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimMismatch { expected: n * n, got: data.len() });
        }
        for i in 0..n {
            if data[i * n + i] != 1.0 {
                return Err(Error::InvalidParam(format!("A[{i}][{i}] must be 1")));
            }
            for j in 0..n {
                let a = data[i * n + j];
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::InvalidParam(format!("A[{i}][{j}] = {a} outside [0, 1]")));
                }
                if a != data[j * n + i] {
                    return Err(Error::InvalidParam(format!("A is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    /// `A[i][j] = 1 - d(i, j) / d_max` over the 72 HSV bin centers placed in the
    /// HSV cone `(v s cos h, v s sin h, v)`.
    pub fn hsv72_default() -> Self {
        let mut centers = Vec::with_capacity(72);
        for &h in HSV_HUE_CENTERS.iter() {
            for s in 0..HSV_SAT_BINS {
                for v in 0..HSV_VAL_BINS {
                    let sc = (s as f64 + 0.5) / HSV_SAT_BINS as f64;
                    let vc = (v as f64 + 0.5) / HSV_VAL_BINS as f64;
                    let t = h.to_radians();
                    centers.push([vc * sc * t.cos(), vc * sc * t.sin(), vc]);
                }
            }
        }
        let n = centers.len();
        let mut dist = vec![0.0; n * n];
        let mut dmax: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = (0..3).map(|k| (centers[i][k] - centers[j][k]).powi(2)).sum::<f64>().sqrt();
                dist[i * n + j] = d;
                dmax = dmax.max(d);
            }
        }
        let mut data: Vec<f64> = dist.iter().map(|d| 1.0 - d / dmax).collect();
        // exact symmetry and unit diagonal regardless of rounding
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in 0..i {
                data[i * n + j] = data[j * n + i];
            }
        }
        Self::new(n, data).expect("default matrix is well formed")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// A runnable metric; the quadratic form carries its matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Euclidean,
    Cosine,
    IntersectionL1,
    IntersectionL2,
    Quadratic(Arc<SimilarityMatrix>),
    Manhattan,
}

impl Metric {
    pub fn id(&self) -> MetricId {
        match self {
            Metric::Euclidean => MetricId::Euclidean,
            Metric::Cosine => MetricId::Cosine,
            Metric::IntersectionL1 => MetricId::IntersectionL1,
            Metric::IntersectionL2 => MetricId::IntersectionL2,
            Metric::Quadratic(_) => MetricId::Quadratic,
            Metric::Manhattan => MetricId::Manhattan,
        }
    }

    /// Builds the runnable metric for `id`. Quadratic uses the HSV-72 matrix when `dim == 72`
    /// and the identity otherwise.
    pub fn for_dim(id: MetricId, dim: usize) -> Metric {
        match id {
            MetricId::Euclidean => Metric::Euclidean,
            MetricId::Cosine => Metric::Cosine,
            MetricId::IntersectionL1 => Metric::IntersectionL1,
            MetricId::IntersectionL2 => Metric::IntersectionL2,
            MetricId::Manhattan => Metric::Manhattan,
            MetricId::Quadratic if dim == 72 => Metric::Quadratic(Arc::new(SimilarityMatrix::hsv72_default())),
            MetricId::Quadratic => Metric::Quadratic(Arc::new(SimilarityMatrix::identity(dim))),
        }
    }
}

fn dot(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * b).sum()
}

fn l2(p: &[f64]) -> f64 {
    p.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn squared_euclidean(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Cosine distance with the zero-norm convention: 0 between two zero vectors,
/// 1 between a zero and a nonzero vector.
pub fn cosine_distance(p: &[f64], q: &[f64]) -> f64 {
    let np = l2(p);
    let nq = l2(q);
    cosine_from_parts(dot(p, q), np, nq)
}

#[inline]
pub(crate) fn cosine_from_parts(dot: f64, np: f64, nq: f64) -> f64 {
    match (np == 0.0, nq == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => (1.0 - dot / (np * nq)).max(0.0),
    }
}

/// Distance between `p` and `q`. Intersection and cosine results are clamped at 0.
pub fn distance(p: &[f64], q: &[f64], metric: &Metric) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimMismatch { expected: p.len(), got: q.len() });
    }
    let d = match metric {
        Metric::Euclidean => squared_euclidean(p, q).sqrt(),
        Metric::Cosine => cosine_distance(p, q),
        Metric::IntersectionL1 => {
            let inter: f64 = p.iter().zip(q).map(|(a, b)| a.min(*b)).sum();
            let np: f64 = p.iter().map(|a| a.abs()).sum();
            let nq: f64 = q.iter().map(|a| a.abs()).sum();
            let m = np.min(nq);
            if m == 0.0 {
                if np == nq { 0.0 } else { 1.0 }
            } else {
                (1.0 - inter / m).max(0.0)
            }
        }
        Metric::IntersectionL2 => {
            let s: f64 = p.iter().zip(q).map(|(a, b)| (a * a).min(b * b)).sum();
            (1.0 - s.sqrt()).max(0.0)
        }
        Metric::Quadratic(a) => {
            if a.dim() != p.len() {
                return Err(Error::DimMismatch { expected: a.dim(), got: p.len() });
            }
            let diff: Vec<f64> = p.iter().zip(q).map(|(x, y)| x - y).collect();
            let n = diff.len();
            let mut acc = 0.0;
            for i in 0..n {
                if diff[i] == 0.0 {
                    continue;
                }
                let row = &a.data[i * n..(i + 1) * n];
                acc += diff[i] * dot(row, &diff);
            }
            acc
        }
        Metric::Manhattan => p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum(),
    };
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0], Normalization::L1), vec![0.5, 0.5]);
        let v = normalize(&[3.0, 4.0], Normalization::L2);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(normalize(&[0.0, 0.0], Normalization::L1), vec![0.0, 0.0]);
        assert_eq!(normalize(&[0.0, 0.0], Normalization::L2), vec![0.0, 0.0]);
    }

    #[test]
    fn distance_examples() {
        let h = normalize(&[1.0, 3.0, 0.0, 4.0], Normalization::L1);
        assert_eq!(distance(&h, &h, &Metric::IntersectionL1).unwrap(), 0.0);
        assert_eq!(distance(&[1.0, 0.0], &[0.0, 1.0], &Metric::Cosine).unwrap(), 1.0);
        let quad = Metric::Quadratic(Arc::new(SimilarityMatrix::identity(2)));
        assert_eq!(distance(&[1.0, 0.0], &[0.0, 1.0], &quad).unwrap(), 2.0);
        assert_eq!(distance(&[1.0, -2.0], &[0.0, 1.0], &Metric::Manhattan).unwrap(), 4.0);
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0], &Metric::Euclidean).unwrap(), 5.0);
    }

    #[test]
    fn zero_norm_cosine_convention() {
        assert_eq!(cosine_distance(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }

    #[test]
    fn dim_mismatch() {
        assert!(matches!(
            distance(&[1.0], &[1.0, 2.0], &Metric::Euclidean),
            Err(Error::DimMismatch { .. })
        ));
        let quad = Metric::Quadratic(Arc::new(SimilarityMatrix::identity(3)));
        assert!(distance(&[1.0, 2.0], &[1.0, 2.0], &quad).is_err());
    }

    #[test]
    fn names_round_trip() {
        for m in MetricId::ALL {
            assert_eq!(m.name().parse::<MetricId>().unwrap(), m);
        }
        assert!("chebyshev".parse::<MetricId>().is_err());
        assert_eq!("L2".parse::<Normalization>().unwrap(), Normalization::L2);
    }

    #[test]
    fn similarity_matrix_validation() {
        assert!(SimilarityMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(SimilarityMatrix::new(2, vec![0.9, 0.5, 0.5, 1.0]).is_err());
        assert!(SimilarityMatrix::new(2, vec![1.0, 0.5, 0.5, 1.0]).is_ok());
        let a = SimilarityMatrix::hsv72_default();
        assert_eq!(a.dim(), 72);
    }
}
