//! Builds a SIFT visual vocabulary, an inverted file with TF-IDF weights, and checks
//! it ranks exactly like a brute-force cosine scan.
//!
//! cargo run --release --example bovw_search

use tmretrieval::codebook::{compute_idf, quantize, tfidf_weight};
use tmretrieval::index::{bovw_cosine_distance, build_inverted, query_inverted};
use tmretrieval::pipeline::{train_codebook, BovwParams, FeatureSpec, Workbench};
use tmretrieval::synth::{synth_corpus, SynthSpec};

fn main() -> tmretrieval::Result<()> {
    let corpus = synth_corpus(&SynthSpec::with_distractors(5, 120, 4, 3))?;
    let bench = Workbench::from_synth(&corpus)?;
    let sift: FeatureSpec = "sift".parse()?;
    let sets = bench.local_features(&sift, false)?;
    let params = BovwParams { k: 128, ..BovwParams::default() };
    let cb = train_codebook("sift", sets.values(), &params)?;
    let counts: Vec<_> = sets.iter().map(|(id, s)| Ok((id.clone(), quantize(s, &cb)?))).collect::<tmretrieval::Result<_>>()?;
    let idf = compute_idf(cb.k(), &counts.iter().map(|c| c.1.clone()).collect::<Vec<_>>());
    let docs: Vec<_> = counts.iter().map(|(id, c)| (id.clone(), tfidf_weight(c, &idf))).collect();
    let index = build_inverted("sift", cb.k(), docs.clone())?;
    println!("{} docs, {} postings over {} words", index.len(), index.total_postings(), index.k());

    let query = &corpus.groups[0].members()[1];
    let q = docs.iter().find(|d| &d.0 == query).map(|d| d.1.clone()).expect("query is indexed");
    let ranking = query_inverted(&index, query, &q, Some(5))?;
    println!("top 5 for {query}:");
    for e in &ranking.entries {
        let brute = bovw_cosine_distance(&q.to_f32_precision(), &docs.iter().find(|d| d.0 == e.doc_id).unwrap().1);
        println!("  {:>4} {:<24} {:.6} (brute force {:.6})", e.rank, e.doc_id, e.score, brute);
    }
    Ok(())
}
