//! Inverse-rank-position fusion of rankings from several methods.
//!
//! cargo run --release --example rank_fusion

use tmretrieval::fusion::{irp_fuse, irp_score, write_ranking_csv, FusionInput};
use tmretrieval::index::Ranking;

fn ranking(query: &str, order: &[&str]) -> Ranking {
    let scored = order.iter().enumerate().map(|(i, d)| (d.to_string(), i as f64)).collect();
    Ranking::from_scores(query, scored, None)
}

fn main() -> tmretrieval::Result<()> {
    println!("irp(2, 2) = {}, irp(1, 3) = {}", irp_score(&[2.0, 2.0]), irp_score(&[1.0, 3.0]));
    let color = ranking("q", &["a", "b", "c", "d"]);
    let shape = ranking("q", &["c", "a", "d", "b"]);
    let texture = ranking("q", &["a", "c", "b", "d"]);
    let fused = irp_fuse(&FusionInput::new("q", vec![color, shape, texture]))?;
    let mut out = Vec::new();
    write_ranking_csv(&fused, &mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}
