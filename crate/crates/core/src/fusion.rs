//! Inverse Rank Position fusion: `IRP(i) = 1 / Σⱼ 1/rankⱼ(i)`, smaller is better.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::index::Ranking;

/// Full rankings of one query over a shared document universe, one per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    pub query_id: String,
    pub rankings: Vec<Ranking>,
}

impl FusionInput {
    pub fn new(query_id: impl Into<String>, rankings: Vec<Ranking>) -> Self {
        Self { query_id: query_id.into(), rankings }
    }
}

/// IRP score from one document's per-feature ranks.
/// The reciprocal sum is accumulated in ascending rank order at double-double precision, so
/// the score does not depend on feature order and equal exact sums give equal scores.
pub fn irp_score(ranks: &[f64]) -> f64 {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for r in sorted {
        let q = 1.0 / r;
        let q_err = (-q).mul_add(r, 1.0) / r;
        let s = hi + q;
        let b = s - hi;
        lo += (hi - (s - b)) + (q - b) + q_err;
        hi = s;
    }
    1.0 / (hi + lo)
}

/// Fuses rankings by IRP. Each output entry's `score` is the IRP value and `rank`
/// its 1-based position; ties are broken by ascending doc id.
pub fn irp_fuse(input: &FusionInput) -> Result<Ranking> {
    let first = input
        .rankings
        .first()
        .ok_or_else(|| Error::InvalidParam("fusion needs at least one ranking".into()))?;
    let mut ranks: HashMap<&str, Vec<f64>> = HashMap::with_capacity(first.len());
    for e in &first.entries {
        if ranks.insert(e.doc_id.as_str(), Vec::with_capacity(input.rankings.len())).is_some() {
            return Err(Error::DuplicateDoc(e.doc_id.clone()));
        }
    }
    for (j, ranking) in input.rankings.iter().enumerate() {
        if ranking.len() != ranks.len() {
            return Err(Error::UniverseMismatch);
        }
        for e in &ranking.entries {
            if !(e.rank >= 1.0 && e.rank.is_finite()) {
                return Err(Error::InvalidParam(format!("rank {} of {:?} is not >= 1", e.rank, e.doc_id)));
            }
            let slot = ranks.get_mut(e.doc_id.as_str()).ok_or(Error::UniverseMismatch)?;
            if slot.len() != j {
                return Err(Error::DuplicateDoc(e.doc_id.clone()));
            }
            slot.push(e.rank);
        }
    }
    let scored = ranks.into_iter().map(|(id, r)| (id.to_string(), irp_score(&r))).collect();
    Ok(Ranking::from_scores(input.query_id.clone(), scored, None))
}

/// Writes `doc_id,rank` CSV.
pub fn write_ranking_csv(ranking: &Ranking, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["doc_id", "rank"]).map_err(csv_err)?;
    for e in &ranking.entries {
        out.write_record([e.doc_id.as_str(), &e.rank.to_string()]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `doc_id,rank` CSV; entries are ordered by rank then doc id and the score
/// column is set to the rank.
pub fn read_ranking_csv(query_id: &str, r: impl Read) -> Result<Ranking> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut scored = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() < 2 {
            return Err(Error::format(format!("ranking row {:?} needs doc_id and rank", rec)));
        }
        let rank: f64 = rec[1].trim().parse().map_err(|_| Error::format(format!("bad rank {:?}", &rec[1])))?;
        scored.push((rec[0].to_string(), rank));
    }
    let mut ranking = Ranking::from_scores(query_id, scored, None);
    for e in &mut ranking.entries {
        e.rank = e.score;
    }
    Ok(ranking)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::format(e.to_string())
}
