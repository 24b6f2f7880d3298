//! Tie-averaged ranks, the (normalized) average rank of relevant images and an
//! 11-point precision-recall curve.
//!
//! cargo run --release --example evaluation_metrics

use tmretrieval::bench::{average_rank, average_rank_range, interpolate_11, normalized_rank, precision_recall_curve, resolve_ties};
use tmretrieval::index::Ranking;

fn main() -> tmretrieval::Result<()> {
    let scores = [("a", 0.1), ("rel1", 0.2), ("b", 0.2), ("rel2", 0.5), ("c", 0.9)];
    let raw = Ranking::from_scores("q", scores.iter().map(|(d, s)| (d.to_string(), *s)).collect(), None);
    let tied = resolve_ties(&raw);
    for e in &tied.entries {
        println!("{:>5} score {:.1} rank {}", e.doc_id, e.score, e.rank);
    }
    let relevant = vec!["rel1".to_string(), "rel2".to_string()];
    let ranks: Vec<f64> = relevant.iter().filter_map(|r| tied.rank_of(r)).collect();
    let n = tied.len();
    println!("average rank {} (range {:?})", average_rank(&ranks)?, average_rank_range(relevant.len(), n));
    println!("normalized rank {}", normalized_rank(&ranks, n)?);
    let curve = precision_recall_curve(&tied, &relevant)?;
    println!("11-point precision {:?}", interpolate_11(&curve));
    Ok(())
}
