//! Imports externally computed features (e.g. network activations) from a feature
//! matrix file, searches them with cosine distance and fuses them with a colour
//! histogram pipeline in the benchmark.
//!
//! cargo run --release --example external_features

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmretrieval::featfile::{import_external_features, FeatureMatrix};
use tmretrieval::global::DenseDescriptor;
use tmretrieval::index::query_dense;
use tmretrieval::metrics::{Metric, MetricId};
use tmretrieval::pipeline::{FeatureSpec, PipelineKind, Workbench};
use tmretrieval::synth::{synth_corpus, SynthSpec};

fn main() -> tmretrieval::Result<()> {
    let corpus = synth_corpus(&SynthSpec::with_distractors(9, 100, 3, 3))?;
    let bench = Workbench::from_synth(&corpus)?;
    // Stand-in activations: the colour histogram projected to 4096 dims plus noise.
    let hsv = bench.dense_features(&FeatureSpec::Hsv72)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let proj: Vec<f64> = (0..4096 * 72).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let docs: Vec<(String, DenseDescriptor)> = hsv
        .iter()
        .map(|(id, d)| {
            let v = (0..4096).map(|r| (0..72).map(|c| proj[r * 72 + c] * d.values[c]).sum::<f64>() + rng.gen_range(-0.01..0.01));
            (id.clone(), DenseDescriptor::new("cnn4096", v.collect()))
        })
        .collect();
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("cnn.tmfeat");
    FeatureMatrix::from_dense("cnn4096", &docs)?.save(&path)?;

    let index = import_external_features(&path)?;
    println!("imported {} rows of dim {}", index.len(), index.dim());
    let (qid, q) = &docs[0];
    let top = query_dense(&index, qid, q, &Metric::for_dim(MetricId::Cosine, index.dim()), Some(3))?;
    println!("nearest to {qid}: {:?}", top.doc_ids().collect::<Vec<_>>());

    bench.insert_dense("cnn4096", docs.into_iter().collect());
    let external = PipelineKind::External { name: "cnn4096".into() };
    let fused = PipelineKind::Fused(vec![PipelineKind::dense(FeatureSpec::Hsv72), external.clone()]);
    for (name, kind) in [("cnn4096", external), ("irp(hsv72,cnn4096)", fused)] {
        println!("{name}: mean normalized rank {:.4}", bench.evaluate(name, &kind)?.mean_normalized_rank());
    }
    Ok(())
}
