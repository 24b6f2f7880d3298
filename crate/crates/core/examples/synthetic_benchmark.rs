//! Generates a synthetic trademark corpus and compares retrieval pipelines under the
//! query-injection protocol.
//!
//! cargo run --release --example synthetic_benchmark -- [distractors] [groups] [members]

use std::time::Instant;

use tmretrieval::bench::summary_table;
use tmretrieval::pipeline::{BovwParams, FeatureSpec, PipelineKind, Workbench};
use tmretrieval::synth::{synth_corpus, SynthSpec};

fn main() -> tmretrieval::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let distractors = args.first().copied().unwrap_or(300);
    let groups = args.get(1).copied().unwrap_or(10);
    let members = args.get(2).copied().unwrap_or(4);

    let spec = SynthSpec::with_distractors(7, distractors, groups, members);
    let t = Instant::now();
    let corpus = synth_corpus(&spec)?;
    println!("rendered {} images in {:.1?}", corpus.images.len(), t.elapsed());

    let bench = Workbench::from_synth(&corpus)?;
    let params = BovwParams { k: 256, ..BovwParams::default() };
    let feature = |n: &str| n.parse::<FeatureSpec>();
    let pipelines = vec![
        ("hsv72", PipelineKind::dense(feature("hsv72")?)),
        ("lbp", PipelineKind::dense(feature("lbp")?)),
        ("gist", PipelineKind::dense(feature("gist")?)),
        ("sift", PipelineKind::bovw(feature("sift")?, params)),
        ("orsift", PipelineKind::bovw(feature("orsift")?, params)),
        ("random", PipelineKind::Random { seed: 1 }),
    ];
    let mut reports = Vec::new();
    for (name, kind) in &pipelines {
        let t = Instant::now();
        let r = bench.evaluate(name, kind)?;
        println!("{name}: {:.4} ({:.1?})", r.mean_normalized_rank(), t.elapsed());
        reports.push(r);
    }
    let fused = PipelineKind::Fused(pipelines[..4].iter().map(|p| p.1.clone()).collect());
    reports.push(bench.evaluate("irp(hsv72,lbp,gist,sift)", &fused)?);
    print!("{}", summary_table(&reports));
    Ok(())
}
