//! Extracts every global and local descriptor from one synthetic mark and prints
//! its dimension.
//!
//! cargo run --release --example feature_extraction

use tmretrieval::keypoints::DogConfig;
use tmretrieval::pipeline::{extract_dense, extract_local, preprocess, FeatureSpec, Preprocess};
use tmretrieval::synth::{synth_corpus, SynthSpec};

fn main() -> tmretrieval::Result<()> {
    let corpus = synth_corpus(&SynthSpec::with_distractors(3, 0, 1, 2))?;
    let img = preprocess(&corpus.images[0].image, &Preprocess::default());
    println!("image {} preprocessed to {}x{}", corpus.images[0].id, img.width(), img.height());
    for name in FeatureSpec::ALL_NAMES {
        let spec: FeatureSpec = name.parse()?;
        if spec.is_local() {
            let extraction: FeatureSpec = spec.extraction_name().parse()?;
            let (set, _) = extract_local(&extraction, &img, &DogConfig::default(), false)?;
            println!("{name:>13}: {} descriptors of dim {}", set.len(), set.dim);
        } else {
            let d = extract_dense(&spec, &img)?;
            println!("{name:>13}: dense, dim {}", d.dim());
        }
    }
    Ok(())
}
