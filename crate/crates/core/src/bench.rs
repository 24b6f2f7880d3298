//! Evaluation harness: tie resolution, rank metrics, precision/recall, and the
//! query-injection protocol over pluggable rank sources.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::codebook::BoVWVector;
use crate::error::{Error, Result};
use crate::fusion::{irp_fuse, FusionInput};
use crate::global::DenseDescriptor;
use crate::index::{bovw_cosine_distance, dense_storage_form, DenseIndex, InvertedIndex, Ranking};
use crate::metrics::{distance, Metric};

/// Replaces each rank by the mean position of its block of equal scores.
pub fn resolve_ties(raw: &Ranking) -> Ranking {
    let mut out = raw.clone();
    let e = &mut out.entries;
    let mut start = 0;
    while start < e.len() {
        let mut end = start + 1;
        while end < e.len() && e[end].score == e[start].score {
            end += 1;
        }
        // Positions start+1 ..= end; their mean is exact in binary floating point.
        let mean = (start + 1 + end) as f64 / 2.0;
        for item in &mut e[start..end] {
            item.rank = mean;
        }
        start = end;
    }
    out
}

/// Mean rank of the relevant documents.
pub fn average_rank(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::InvalidParam("average rank needs at least one relevant document".into()));
    }
    Ok(ranks.iter().sum::<f64>() / ranks.len() as f64)
}

/// `(Σ Rᵢ − N_rel(N_rel+1)/2) / (N·N_rel)`: 0 for perfect retrieval, about 0.5 for random.
pub fn normalized_rank(ranks: &[f64], n: usize) -> Result<f64> {
    let n_rel = ranks.len();
    if n_rel == 0 || n_rel > n {
        return Err(Error::InvalidParam(format!("{n_rel} relevant documents in a universe of {n}")));
    }
    if let Some(r) = ranks.iter().find(|&&r| !(1.0..=n as f64).contains(&r)) {
        return Err(Error::InvalidParam(format!("rank {r} outside 1..={n}")));
    }
    let sum: f64 = ranks.iter().sum();
    let best = (n_rel * (n_rel + 1)) as f64 / 2.0;
    Ok((sum - best) / (n as f64 * n_rel as f64))
}

/// Lowest and highest possible average rank for `n_rel` relevant docs among `n`.
pub fn average_rank_range(n_rel: usize, n: usize) -> (f64, f64) {
    ((n_rel as f64 + 1.0) / 2.0, n as f64 - (n_rel as f64 - 1.0) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

fn relevant_set<'a>(ranking: &Ranking, relevant: &'a [String]) -> Result<HashSet<&'a str>> {
    let set: HashSet<&str> = relevant.iter().map(|s| s.as_str()).collect();
    if set.is_empty() {
        return Err(Error::InvalidParam("relevant set is empty".into()));
    }
    let ranked: HashSet<&str> = ranking.doc_ids().collect();
    if let Some(missing) = set.iter().find(|d| !ranked.contains(*d)) {
        return Err(Error::InvalidParam(format!("relevant document {missing:?} is not ranked")));
    }
    Ok(set)
}

/// One point at every cutoff where a relevant document appears.
pub fn precision_recall_curve(ranking: &Ranking, relevant: &[String]) -> Result<Vec<PrPoint>> {
    let set = relevant_set(ranking, relevant)?;
    let mut hits = 0usize;
    let mut out = Vec::with_capacity(set.len());
    for (i, e) in ranking.entries.iter().enumerate() {
        if set.contains(e.doc_id.as_str()) {
            hits += 1;
            out.push(PrPoint { recall: hits as f64 / set.len() as f64, precision: hits as f64 / (i + 1) as f64 });
        }
    }
    Ok(out)
}

/// Precision and recall over the first `cutoff` documents.
pub fn precision_recall_at(ranking: &Ranking, relevant: &[String], cutoff: usize) -> Result<PrPoint> {
    if cutoff == 0 {
        return Err(Error::InvalidParam("cutoff must be positive".into()));
    }
    let set = relevant_set(ranking, relevant)?;
    let hits = ranking.entries.iter().take(cutoff).filter(|e| set.contains(e.doc_id.as_str())).count();
    Ok(PrPoint { recall: hits as f64 / set.len() as f64, precision: hits as f64 / cutoff as f64 })
}

pub const PR_LEVELS: usize = 11;

/// Interpolated precision at recall 0, 0.1, ..., 1: the best precision at any
/// recall at or above the level.
pub fn interpolate_11(curve: &[PrPoint]) -> [f64; PR_LEVELS] {
    let mut out = [0.0; PR_LEVELS];
    for (i, slot) in out.iter_mut().enumerate() {
        let level = i as f64 / 10.0;
        *slot = curve
            .iter()
            .filter(|p| p.recall >= level - 1e-12)
            .map(|p| p.precision)
            .fold(0.0, f64::max);
    }
    out
}

/// A set of mutually similar images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGroup {
    pub id: String,
    members: Vec<String>,
}

impl QueryGroup {
    pub fn new(id: impl Into<String>, members: Vec<String>) -> Result<Self> {
        let id = id.into();
        if members.len() < 2 {
            return Err(Error::GroupTooSmall(id));
        }
        let mut seen = HashSet::new();
        if let Some(d) = members.iter().find(|m| !seen.insert(m.as_str())) {
            return Err(Error::DuplicateDoc(d.clone()));
        }
        Ok(Self { id, members })
    }

    pub fn members(&self) -> &[String] {
        &self.members
    }
}

/// Reads a `group_id,image_path` manifest; groups keep first-appearance order.
pub fn read_manifest(r: impl Read) -> Result<Vec<QueryGroup>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut order: Vec<String> = Vec::new();
    let mut members: HashMap<String, Vec<String>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::format(format!("manifest row {rec:?} needs group_id,image_path")));
        }
        let g = rec[0].to_string();
        if !members.contains_key(&g) {
            order.push(g.clone());
        }
        members.entry(g).or_default().push(rec[1].to_string());
    }
    let mut all = HashSet::new();
    let mut groups = Vec::with_capacity(order.len());
    for g in order {
        let m = members.remove(&g).unwrap_or_default();
        for id in &m {
            if !all.insert(id.clone()) {
                return Err(Error::DuplicateDoc(id.clone()));
            }
        }
        groups.push(QueryGroup::new(g, m)?);
    }
    Ok(groups)
}

pub fn write_manifest(groups: &[QueryGroup], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::format(e.to_string());
    out.write_record(["group_id", "image_path"]).map_err(err)?;
    for g in groups {
        for m in &g.members {
            out.write_record([g.id.as_str(), m.as_str()]).map_err(err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// A retrieval method under evaluation: ranks a fixed corpus plus injected documents.
pub trait RankSource: Sync {
    fn corpus_size(&self) -> usize;

    fn in_corpus(&self, doc_id: &str) -> bool;

    /// Raw full ranking of corpus ∪ `injected` for image `query`, ascending score,
    /// ties broken by doc id.
    fn rank(&self, query: &str, injected: &[&str]) -> Result<Ranking>;
}

fn lookup<'a, T>(map: &'a HashMap<String, T>, id: &str) -> Result<&'a T> {
    map.get(id).ok_or_else(|| Error::InvalidParam(format!("no features for image {id:?}")))
}

fn merge(query: &str, ids: &[String], base: Vec<f64>, injected: Vec<(String, f64)>) -> Ranking {
    let mut scored: Vec<(String, f64)> = ids.iter().cloned().zip(base).collect();
    scored.extend(injected);
    Ranking::from_scores(query, scored, None)
}

/// Dense global descriptors scanned with a distance metric.
pub struct DenseSource {
    pub index: DenseIndex,
    /// Descriptors of images outside the corpus (queries and injected docs).
    pub extra: HashMap<String, DenseDescriptor>,
    pub metric: Metric,
}

impl RankSource for DenseSource {
    fn corpus_size(&self) -> usize {
        self.index.len()
    }

    fn in_corpus(&self, doc_id: &str) -> bool {
        self.index.doc_ids().binary_search_by(|d| d.as_str().cmp(doc_id)).is_ok()
    }

    fn rank(&self, query: &str, injected: &[&str]) -> Result<Ranking> {
        let q = self.index.prepare_query(lookup(&self.extra, query)?)?;
        let base = self.index.distances(&q, &self.metric)?;
        let mut extra = Vec::with_capacity(injected.len());
        for &id in injected {
            let d = lookup(&self.extra, id)?;
            if d.dim() != q.len() {
                return Err(Error::DimMismatch { expected: q.len(), got: d.dim() });
            }
            let stored = dense_storage_form(&d.values, self.index.normalization);
            extra.push((id.to_string(), distance(&q, &stored, &self.metric)?));
        }
        Ok(merge(query, self.index.doc_ids(), base, extra))
    }
}

/// TF-IDF vectors scored through an inverted file.
pub struct BovwSource {
    pub index: InvertedIndex,
    pub extra: HashMap<String, BoVWVector>,
}

impl RankSource for BovwSource {
    fn corpus_size(&self) -> usize {
        self.index.len()
    }

    fn in_corpus(&self, doc_id: &str) -> bool {
        self.index.doc_ids().binary_search_by(|d| d.as_str().cmp(doc_id)).is_ok()
    }

    fn rank(&self, query: &str, injected: &[&str]) -> Result<Ranking> {
        let q = lookup(&self.extra, query)?.to_f32_precision();
        let base = self.index.distances(&q);
        let mut extra = Vec::with_capacity(injected.len());
        for &id in injected {
            let d = lookup(&self.extra, id)?.to_f32_precision();
            extra.push((id.to_string(), bovw_cosine_distance(&q, &d)));
        }
        Ok(merge(query, self.index.doc_ids(), base, extra))
    }
}

/// Uniform pseudo-random scores, a deterministic function of (seed, query, doc).
pub struct RandomSource {
    pub corpus: Vec<String>,
    pub seed: u64,
}

fn hash_str(mut h: u64, s: &str) -> u64 {
    for b in s.bytes().chain(std::iter::once(0xff)) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn score(&self, query: &str, doc: &str) -> f64 {
        let h = hash_str(hash_str(0xcbf2_9ce4_8422_2325 ^ splitmix(self.seed), query), doc);
        (splitmix(h) >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl RankSource for RandomSource {
    fn corpus_size(&self) -> usize {
        self.corpus.len()
    }

    fn in_corpus(&self, doc_id: &str) -> bool {
        self.corpus.iter().any(|d| d == doc_id)
    }

    fn rank(&self, query: &str, injected: &[&str]) -> Result<Ranking> {
        let scored = self
            .corpus
            .iter()
            .map(|d| d.as_str())
            .chain(injected.iter().copied())
            .map(|d| (d.to_string(), self.score(query, d)))
            .collect();
        Ok(Ranking::from_scores(query, scored, None))
    }
}

/// IRP fusion of tie-resolved rankings from several sources over the same corpus.
pub struct FusedSource {
    pub parts: Vec<Box<dyn RankSource>>,
}

impl RankSource for FusedSource {
    fn corpus_size(&self) -> usize {
        self.parts.first().map_or(0, |p| p.corpus_size())
    }

    fn in_corpus(&self, doc_id: &str) -> bool {
        self.parts.iter().any(|p| p.in_corpus(doc_id))
    }

    fn rank(&self, query: &str, injected: &[&str]) -> Result<Ranking> {
        let rankings = self
            .parts
            .iter()
            .map(|p| p.rank(query, injected).map(|r| resolve_ties(&r)))
            .collect::<Result<Vec<_>>>()?;
        irp_fuse(&FusionInput::new(query, rankings))
    }
}

/// Outcome of one query under the injection protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_id: String,
    pub group_id: String,
    /// Tie-resolved ranks of the injected group members, in group order.
    pub injected_ranks: Vec<f64>,
    /// Universe size: corpus plus injected members.
    pub n: usize,
    pub rank: f64,
    pub normalized_rank: f64,
    pub pr_curve: Vec<PrPoint>,
}

/// Queries every member of `group` against the corpus with the other members injected.
pub fn inject_and_evaluate(group: &QueryGroup, source: &dyn RankSource) -> Result<Vec<QueryResult>> {
    if group.members.len() < 2 {
        return Err(Error::GroupTooSmall(group.id.clone()));
    }
    if let Some(m) = group.members.iter().find(|m| source.in_corpus(m)) {
        return Err(Error::DuplicateDoc(m.clone()));
    }
    group
        .members
        .par_iter()
        .map(|q| {
            let others: Vec<&str> = group.members.iter().filter(|m| *m != q).map(|m| m.as_str()).collect();
            let raw = source.rank(q, &others)?;
            let n = source.corpus_size() + others.len();
            if raw.len() != n {
                return Err(Error::InvalidParam(format!("source ranked {} documents, expected {n}", raw.len())));
            }
            let resolved = resolve_ties(&raw);
            let by_id: HashMap<&str, f64> = resolved.entries.iter().map(|e| (e.doc_id.as_str(), e.rank)).collect();
            let injected_ranks: Vec<f64> = others.iter().map(|d| by_id[d]).collect();
            let relevant: Vec<String> = others.iter().map(|s| s.to_string()).collect();
            Ok(QueryResult {
                query_id: q.clone(),
                group_id: group.id.clone(),
                rank: average_rank(&injected_ranks)?,
                normalized_rank: normalized_rank(&injected_ranks, n)?,
                injected_ranks,
                n,
                pr_curve: precision_recall_curve(&raw, &relevant)?,
            })
        })
        .collect()
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Per-query results of one pipeline plus aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pipeline: String,
    pub config_hash: String,
    pub rows: Vec<QueryResult>,
}

impl EvalReport {
    /// Mean and population standard deviation of the average rank.
    pub fn rank_stats(&self) -> (f64, f64) {
        mean_std(self.rows.iter().map(|r| r.rank))
    }

    pub fn normalized_rank_stats(&self) -> (f64, f64) {
        mean_std(self.rows.iter().map(|r| r.normalized_rank))
    }

    pub fn mean_normalized_rank(&self) -> f64 {
        self.normalized_rank_stats().0
    }

    /// Macro-averaged 11-point interpolated precision.
    pub fn pr_11(&self) -> [f64; PR_LEVELS] {
        let mut acc = [0.0; PR_LEVELS];
        for r in &self.rows {
            for (a, p) in acc.iter_mut().zip(interpolate_11(&r.pr_curve)) {
                *a += p;
            }
        }
        acc.map(|a| a / self.rows.len().max(1) as f64)
    }

    /// `query_id,group_id,rank,normalized_rank`, preceded by a config-hash comment line.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = w;
        writeln!(w, "# pipeline={} config_sha256={}", self.pipeline, self.config_hash)?;
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::format(e.to_string());
        out.write_record(["query_id", "group_id", "rank", "normalized_rank"]).map_err(err)?;
        for r in &self.rows {
            out.write_record([r.query_id.clone(), r.group_id.clone(), r.rank.to_string(), r.normalized_rank.to_string()])
                .map_err(err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// `recall,precision` on the 11-point grid.
    pub fn write_pr_csv(&self, w: impl Write) -> Result<()> {
        let mut w = w;
        writeln!(w, "# pipeline={} config_sha256={}", self.pipeline, self.config_hash)?;
        writeln!(w, "recall,precision")?;
        for (i, p) in self.pr_11().iter().enumerate() {
            writeln!(w, "{:.1},{}", i as f64 / 10.0, p)?;
        }
        Ok(())
    }
}

/// Runs the injection protocol for every group; rows follow group then member order.
pub fn evaluate(pipeline: &str, groups: &[QueryGroup], source: &dyn RankSource) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for g in groups {
        rows.extend(inject_and_evaluate(g, source)?);
    }
    Ok(EvalReport { pipeline: pipeline.to_string(), config_hash: String::new(), rows })
}

/// Comparative table with mean ± standard deviation of both rank measures.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let header = ["Method", "Average rank", "Normalized average rank"];
    let rows: Vec<[String; 3]> = reports
        .iter()
        .map(|r| {
            let (m, sd) = r.rank_stats();
            let (nm, nsd) = r.normalized_rank_stats();
            [r.pipeline.clone(), format!("{m:.2} ± {sd:.2}"), format!("{nm:.3} ± {nsd:.3}")]
        })
        .collect();
    let width = |c: usize| rows.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0);
    let (w0, w1, w2) = (width(0), width(1), width(2));
    let mut s = String::new();
    let _ = writeln!(s, "| {:w0$} | {:>w1$} | {:>w2$} |", header[0], header[1], header[2]);
    let _ = writeln!(s, "|-{}-|-{}:|-{}:|", "-".repeat(w0), "-".repeat(w1 - 1), "-".repeat(w2 - 1));
    for r in &rows {
        let _ = writeln!(s, "| {:w0$} | {:>w1$} | {:>w2$} |", r[0], r[1], r[2]);
    }
    s
}

/// Group membership lookup by image id.
pub fn group_index(groups: &[QueryGroup]) -> BTreeMap<&str, &str> {
    groups.iter().flat_map(|g| g.members.iter().map(move |m| (m.as_str(), g.id.as_str()))).collect()
}
