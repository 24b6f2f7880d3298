//! Writes a synthetic trademark corpus (PNG files, group manifest and annotations)
//! ready for the `tmr` command line.
//!
//! cargo run --release --example synthetic_corpus -- <output dir>

use tmretrieval::synth::{registry_split, synth_corpus, SynthSpec};

fn main() -> tmretrieval::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_corpus".into());
    let mut spec = SynthSpec::with_distractors(42, 200, 8, 4);
    spec.inversion = true;
    spec.text_contamination = true;
    let (t, f, c) = registry_split(200);
    println!("distractors: {t} text only, {f} figure only, {c} combined");
    let corpus = synth_corpus(&spec)?;
    corpus.write_to_dir(std::path::Path::new(&out))?;
    println!("wrote {} images and {} groups to {out}", corpus.images.len(), corpus.groups.len());
    Ok(())
}
