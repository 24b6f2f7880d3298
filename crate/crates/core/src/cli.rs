//! The `tmr` command line. Commands compose through files under the configured
//! output directory:
//!
//! ```text
//! out/features/<feature>[.strip].tmfeat   descriptors (plus .tmkp keypoints for local features)
//! out/text_boxes.csv                      detected text regions
//! out/codebooks/<feature>[.strip].tmcb    visual vocabularies
//! out/indexes/<pipeline>.tmidx            dense or inverted indexes
//! out/reports/<pipeline>.csv, .pr.csv     per-query ranks and 11-point PR curves
//! out/summary.md                          comparative table
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use crate::bench::{read_manifest, summary_table, EvalReport};
use crate::codebook::{compute_idf, tfidf_weight, Codebook, TermCounts};
use crate::config::{PipelineSource, RunConfig};
use crate::error::{Error, Result};
use crate::featfile::{import_external_features, read_keypoints, write_keypoints, FeatureMatrix};
use crate::fusion::{irp_fuse, read_ranking_csv, write_ranking_csv, FusionInput};
use crate::global::DenseDescriptor;
use crate::index::{build_dense, build_inverted, query_dense, query_inverted, read_index, AnyIndex};
use crate::keypoints::DescriptorSet;
use crate::metrics::Metric;
use crate::pipeline::{extract_dense, extract_local, preprocess, term_counts, train_codebook, vocabulary_size, FeatureSpec, ImageRef, Workbench};
use crate::raster::{load_image, walk_corpus, RasterImage};
use crate::synth::{synth_corpus, SynthSpec};
use crate::textmask::write_text_boxes_csv;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "tmr", version, about = "Trademark image retrieval toolkit")]
pub struct Cli {
    /// Worker threads (default: logical cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic corpus with query groups, a manifest and annotations.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        distractors: usize,
        #[arg(long, default_value_t = 10)]
        groups: usize,
        #[arg(long, default_value_t = 4)]
        members: usize,
        #[arg(long, default_value_t = 128)]
        canvas: u32,
        /// Make the last member of each group a contrast-inverted copy.
        #[arg(long)]
        inversion: bool,
        /// Overlay distinct random words on group members.
        #[arg(long)]
        text_contamination: bool,
        #[arg(long)]
        no_scale: bool,
        #[arg(long)]
        no_rotation: bool,
    },
    /// Extracts the features of every configured pipeline over the corpus.
    Extract {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Remove keypoints inside detected text regions.
        #[arg(long)]
        strip_text: bool,
    },
    /// Clusters extracted local descriptors into visual vocabularies.
    TrainCodebook {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        strip_text: bool,
    },
    /// Builds a searchable index per pipeline over every corpus image.
    Index {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        strip_text: bool,
    },
    /// Ranks the indexed images against one query image.
    Query {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        pipeline: String,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        strip_text: bool,
    },
    /// Runs the query-injection benchmark for every pipeline.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Group manifest; defaults to the configured one.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        strip_text: bool,
    },
    /// Fuses ranking CSVs of one query by inverse rank position.
    Fuse {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "query")]
        query_id: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Validates an external feature matrix and indexes it for cosine search.
    ImportFeatures {
        #[arg(long)]
        file: PathBuf,
        /// Index name; defaults to the file's feature id.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args(args: impl IntoIterator<Item = String>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::from(EXIT_OK),
        Ok(Outcome::Partial(n)) => {
            eprintln!("warning: {n} image(s) could not be processed and were skipped");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidParam(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Finished, but this many images were skipped.
    Partial(usize),
}

pub fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Synth { output, seed, distractors, groups, members, canvas, inversion, text_contamination, no_scale, no_rotation } => {
            let mut spec = SynthSpec::with_distractors(seed, distractors, groups, members);
            spec.canvas = canvas;
            spec.inversion = inversion;
            spec.text_contamination = text_contamination;
            spec.scale = !no_scale;
            spec.rotation = !no_rotation;
            let corpus = synth_corpus(&spec)?;
            corpus.write_to_dir(&output)?;
            println!("wrote {} images in {} groups to {}", corpus.images.len(), corpus.groups.len(), output.display());
            Ok(Outcome::Done)
        }
        Command::Extract { cfg, strip_text } => cmd_extract(&load_config(&cfg, strip_text)?),
        Command::TrainCodebook { cfg, strip_text } => cmd_train_codebook(&load_config(&cfg, strip_text)?),
        Command::Index { cfg, strip_text } => cmd_index(&load_config(&cfg, strip_text)?),
        Command::Query { cfg, pipeline, image, top, strip_text } => {
            let lines = cmd_query(&load_config(&cfg, strip_text)?, &pipeline, &image, top)?;
            let mut out = std::io::stdout().lock();
            for (id, score) in lines {
                writeln!(out, "{id}\t{score}")?;
            }
            Ok(Outcome::Done)
        }
        Command::Evaluate { cfg, manifest, strip_text } => {
            let mut config = load_config(&cfg, strip_text)?;
            if manifest.is_some() {
                config.manifest = manifest;
            }
            cmd_evaluate(&config)
        }
        Command::Fuse { inputs, query_id, output } => {
            let rankings = inputs
                .iter()
                .map(|p| read_ranking_csv(&query_id, BufReader::new(File::open(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let fused = irp_fuse(&FusionInput::new(query_id, rankings))?;
            write_ranking_csv(&fused, BufWriter::new(create(&output)?))?;
            Ok(Outcome::Done)
        }
        Command::ImportFeatures { file, name, output } => {
            let mut index = import_external_features(&file)?;
            if let Some(n) = name {
                index.feature_id = n;
            }
            let path = output.join("indexes").join(format!("{}.tmidx", index.feature_id));
            index.write_to(BufWriter::new(create(&path)?))?;
            println!("imported {} rows of dim {} into {}", index.len(), index.dim(), path.display());
            Ok(Outcome::Done)
        }
    }
}

fn load_config(args: &ConfigArgs, strip_text: bool) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config).map_err(|e| match e {
        Error::Format(m) => Error::InvalidParam(format!("{}: {m}", args.config.display())),
        other => other,
    })?;
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    cfg.strip_text |= strip_text;
    cfg.check_paths()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(File::create(path)?)
}

fn save_matrix(m: &FeatureMatrix, path: &Path) -> Result<()> {
    m.write_to(BufWriter::new(create(path)?))
}

fn stream_name(extraction: &str, strip: bool) -> String {
    if strip {
        format!("{extraction}.strip")
    } else {
        extraction.to_string()
    }
}

fn feature_path(cfg: &RunConfig, stream: &str) -> PathBuf {
    cfg.output.join("features").join(format!("{stream}.tmfeat"))
}

fn keypoint_path(cfg: &RunConfig, stream: &str) -> PathBuf {
    cfg.output.join("features").join(format!("{stream}.tmkp"))
}

fn codebook_path(cfg: &RunConfig, stream: &str) -> PathBuf {
    cfg.output.join("codebooks").join(format!("{stream}.tmcb"))
}

fn index_path(cfg: &RunConfig, pipeline: &str) -> PathBuf {
    cfg.output.join("indexes").join(format!("{pipeline}.tmidx"))
}

/// Distinct (feature, strip) extraction streams needed by the configured pipelines.
fn streams(cfg: &RunConfig) -> BTreeSet<(String, bool)> {
    cfg.pipelines
        .iter()
        .filter_map(|p| match &p.source {
            PipelineSource::Feature { feature, .. } => Some((feature.extraction_name(), cfg.effective_strip(&p.source))),
            _ => None,
        })
        .collect()
}

fn corpus_files(cfg: &RunConfig) -> Result<Vec<(String, PathBuf)>> {
    let files = walk_corpus(&cfg.corpus)?;
    if files.is_empty() {
        return Err(Error::Missing(format!("no images found under {}", cfg.corpus.display())));
    }
    Ok(files)
}

fn cmd_extract(cfg: &RunConfig) -> Result<Outcome> {
    let files = corpus_files(cfg)?;
    let decoded: Vec<(String, Result<RasterImage>)> = files.par_iter().map(|(id, p)| (id.clone(), load_image(p))).collect();
    let mut images = BTreeMap::new();
    let mut skipped = 0;
    for (id, r) in decoded {
        match r {
            Ok(img) => {
                images.insert(id, ImageRef::Memory(img));
            }
            Err(e) => {
                warn!("skipping {id}: {e}");
                skipped += 1;
            }
        }
    }
    let mut bench = Workbench::new(images, Vec::new())?;
    bench.preprocess = cfg.preprocess.clone();
    for (name, strip) in streams(cfg) {
        let spec: FeatureSpec = name.parse()?;
        let stream = stream_name(&name, strip);
        if spec.is_local() {
            let sets = bench.local_features(&spec, strip)?;
            let list: Vec<(String, DescriptorSet)> = sets.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            let dim = spec.local_dim().unwrap_or(0);
            let (m, kps) = FeatureMatrix::from_sets(&name, dim, &list)?;
            save_matrix(&m, &feature_path(cfg, &stream))?;
            write_keypoints(&kps, BufWriter::new(create(&keypoint_path(cfg, &stream))?))?;
            // Images without descriptors still need a record of having been processed.
            write_id_list(cfg, &stream, sets.keys())?;
            info!("{stream}: {} descriptors over {} images", m.rows(), sets.len());
        } else {
            let feats = bench.dense_features(&spec)?;
            let docs: Vec<(String, DenseDescriptor)> = feats.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            save_matrix(&FeatureMatrix::from_dense(&name, &docs)?, &feature_path(cfg, &stream))?;
            info!("{stream}: {} images", docs.len());
        }
    }
    let boxes = bench.text_boxes();
    if !boxes.is_empty() {
        let rows = boxes.iter().map(|(k, v)| (k.as_str(), v.as_slice()));
        write_text_boxes_csv(rows, BufWriter::new(create(&cfg.output.join("text_boxes.csv"))?))?;
    }
    Ok(if skipped > 0 { Outcome::Partial(skipped) } else { Outcome::Done })
}

fn write_id_list<'a>(cfg: &RunConfig, stream: &str, ids: impl Iterator<Item = &'a String>) -> Result<()> {
    let mut w = BufWriter::new(create(&cfg.output.join("features").join(format!("{stream}.ids")))?);
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

fn missing(path: &Path, step: &str) -> Error {
    Error::Missing(format!("{} not found; run `tmr {step}` first", path.display()))
}

fn load_dense(cfg: &RunConfig, stream: &str) -> Result<BTreeMap<String, DenseDescriptor>> {
    let path = feature_path(cfg, stream);
    if !path.exists() {
        return Err(missing(&path, "extract"));
    }
    Ok(FeatureMatrix::load(&path)?.to_dense()?.into_iter().collect())
}

/// Descriptor sets per image, including images that produced none.
fn load_local(cfg: &RunConfig, stream: &str, spec: &FeatureSpec) -> Result<BTreeMap<String, DescriptorSet>> {
    let path = feature_path(cfg, stream);
    if !path.exists() {
        return Err(missing(&path, "extract"));
    }
    let m = FeatureMatrix::load(&path)?;
    let kps = read_keypoints(BufReader::new(File::open(keypoint_path(cfg, stream))?))?;
    let mut sets = m.to_sets(&kps)?;
    let ids = fs::read_to_string(cfg.output.join("features").join(format!("{stream}.ids")))?;
    let dim = spec.local_dim().unwrap_or(m.dim);
    for id in ids.lines().filter(|l| !l.is_empty()) {
        sets.entry(id.to_string()).or_insert_with(|| DescriptorSet::empty(spec.extraction_name(), dim));
    }
    Ok(sets)
}

fn load_codebook(cfg: &RunConfig, stream: &str) -> Result<Codebook> {
    let path = codebook_path(cfg, stream);
    if !path.exists() {
        return Err(missing(&path, "train-codebook"));
    }
    Codebook::read_from(BufReader::new(File::open(&path)?))
}

fn cmd_train_codebook(cfg: &RunConfig) -> Result<Outcome> {
    for (name, strip) in streams(cfg) {
        let spec: FeatureSpec = name.parse()?;
        if !spec.is_local() {
            continue;
        }
        let stream = stream_name(&name, strip);
        let sets = load_local(cfg, &stream, &spec)?;
        let cb = train_codebook(&name, sets.values(), &cfg.codebook)?;
        let mut w = BufWriter::new(create(&codebook_path(cfg, &stream))?);
        cb.write_to(&mut w)?;
        w.flush()?;
        info!("{stream}: codebook with {} words", cb.k());
    }
    Ok(Outcome::Done)
}

fn bovw_counts(cfg: &RunConfig, spec: &FeatureSpec, strip: bool) -> Result<(BTreeMap<String, TermCounts>, usize)> {
    let stream = stream_name(&spec.extraction_name(), strip);
    let sets = load_local(cfg, &stream, spec)?;
    let cb = load_codebook(cfg, &stream)?;
    let dog = Default::default();
    let counts = sets.iter().map(|(id, s)| Ok((id.clone(), term_counts(spec, s, &cb, &dog)?))).collect::<Result<_>>()?;
    Ok((counts, vocabulary_size(spec, &cb)))
}

fn cmd_index(cfg: &RunConfig) -> Result<Outcome> {
    for p in &cfg.pipelines {
        let path = index_path(cfg, &p.name);
        match &p.source {
            PipelineSource::Feature { feature, normalization, .. } if !feature.is_local() => {
                let docs = load_dense(cfg, &feature.name())?.into_iter().collect();
                let mut idx = build_dense(docs, *normalization)?;
                idx.seed = cfg.seed;
                idx.write_to(BufWriter::new(create(&path)?))?;
            }
            PipelineSource::Feature { feature, .. } => {
                let (counts, vocab) = bovw_counts(cfg, feature, cfg.effective_strip(&p.source))?;
                let all: Vec<TermCounts> = counts.values().cloned().collect();
                let idf = compute_idf(vocab, &all);
                let docs = counts.iter().map(|(id, c)| (id.clone(), tfidf_weight(c, &idf))).collect();
                let mut idx = build_inverted(&feature.name(), vocab, docs)?;
                idx.idf = Some(idf);
                idx.write_to(BufWriter::new(create(&path)?))?;
            }
            PipelineSource::External { file } => {
                import_external_features(file)?.write_to(BufWriter::new(create(&path)?))?;
            }
            PipelineSource::Fuse(_) => continue,
        }
        info!("indexed pipeline {}", p.name);
    }
    Ok(Outcome::Done)
}

/// Top `top` `(doc id, score)` pairs for one query image, ascending score.
pub fn cmd_query(cfg: &RunConfig, pipeline: &str, image: &Path, top: usize) -> Result<Vec<(String, f64)>> {
    let p = cfg.pipeline(pipeline).ok_or_else(|| Error::InvalidParam(format!("unknown pipeline {pipeline:?}")))?;
    let path = index_path(cfg, pipeline);
    if !path.exists() {
        return Err(missing(&path, "index"));
    }
    let index = read_index(BufReader::new(File::open(&path)?))?;
    let img = preprocess(&load_image(image)?, &cfg.preprocess);
    let qid = image.display().to_string();
    let ranking = match (&p.source, index) {
        (PipelineSource::Feature { feature, metric, .. }, AnyIndex::Dense(idx)) if !feature.is_local() => {
            let q = extract_dense(feature, &img)?;
            query_dense(&idx, &qid, &q, &Metric::for_dim(*metric, idx.dim()), Some(top))?
        }
        (PipelineSource::Feature { feature, .. }, AnyIndex::Inverted(idx)) => {
            let strip = cfg.effective_strip(&p.source);
            let (set, _) = extract_local(&feature.extraction_name().parse()?, &img, &Default::default(), strip)?;
            let cb = load_codebook(cfg, &stream_name(&feature.extraction_name(), strip))?;
            let counts = term_counts(feature, &set, &cb, &Default::default())?;
            let idf = idx.idf.clone().ok_or_else(|| Error::format("inverted index carries no IDF table"))?;
            query_inverted(&idx, &qid, &tfidf_weight(&counts, &idf), Some(top))?
        }
        (PipelineSource::External { .. }, _) => {
            return Err(Error::InvalidParam(format!("pipeline {pipeline:?} uses external features and cannot embed new images")))
        }
        (PipelineSource::Fuse(_), _) => return Err(Error::InvalidParam("query a constituent pipeline, then `tmr fuse`".into())),
        _ => return Err(Error::format(format!("index {} does not match pipeline {pipeline:?}", path.display()))),
    };
    Ok(ranking.entries.into_iter().map(|e| (e.doc_id, e.score)).collect())
}

/// Benchmark over the configured corpus, loading every artifact written by earlier steps.
fn cmd_evaluate(cfg: &RunConfig) -> Result<Outcome> {
    let manifest = cfg.manifest.as_ref().ok_or_else(|| Error::Missing("no group manifest configured".into()))?;
    if !manifest.exists() {
        return Err(Error::Missing(format!("manifest {} does not exist", manifest.display())));
    }
    let groups = read_manifest(BufReader::new(File::open(manifest)?))?;
    let images: BTreeMap<String, ImageRef> = corpus_files(cfg)?.into_iter().map(|(id, p)| (id, ImageRef::File(p))).collect();
    let mut bench = Workbench::new(images, groups)?;
    bench.preprocess = cfg.preprocess.clone();
    for (name, strip) in streams(cfg) {
        let spec: FeatureSpec = name.parse()?;
        let stream = stream_name(&name, strip);
        if spec.is_local() {
            bench.insert_local(&name, strip, load_local(cfg, &stream, &spec)?);
            bench.insert_codebook(&name, strip, cfg.codebook, load_codebook(cfg, &stream)?);
        } else {
            bench.insert_dense(&name, load_dense(cfg, &stream)?);
        }
    }
    for p in &cfg.pipelines {
        if let PipelineSource::External { file } = &p.source {
            bench.insert_dense(&p.name, FeatureMatrix::load(file)?.to_dense()?.into_iter().collect());
        }
    }
    let hash = cfg.hash();
    let mut reports: Vec<EvalReport> = Vec::new();
    for p in &cfg.pipelines {
        let kind = cfg.kind(&p.name)?;
        let mut report = bench.evaluate(&p.name, &kind)?;
        report.config_hash = hash.clone();
        let dir = cfg.output.join("reports");
        report.write_csv(BufWriter::new(create(&dir.join(format!("{}.csv", p.name)))?))?;
        report.write_pr_csv(BufWriter::new(create(&dir.join(format!("{}.pr.csv", p.name)))?))?;
        info!("{}: mean normalized rank {:.4}", p.name, report.mean_normalized_rank());
        reports.push(report);
    }
    let mut summary = create(&cfg.output.join("summary.md"))?;
    writeln!(summary, "<!-- config_sha256={hash} -->")?;
    summary.write_all(summary_table(&reports).as_bytes())?;
    print!("{}", summary_table(&reports));
    Ok(Outcome::Done)
}
