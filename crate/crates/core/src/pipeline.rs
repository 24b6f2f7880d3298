//! Retrieval pipelines: feature selection, preprocessing, extraction, codebook
//! training and assembly of rank sources for the benchmark.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::bench::{evaluate, BovwSource, DenseSource, EvalReport, FusedSource, QueryGroup, RandomSource, RankSource};
use crate::codebook::{compute_idf, quantize, reservoir_sample, tfidf_weight, train_kmeans, Codebook, KMeansConfig, TermCounts};
use crate::error::{Error, Result};
use crate::global::{color_histogram_hsv72, color_histogram_rgb, gist, lbp, DenseDescriptor, LbpVariant};
use crate::index::{build_dense, build_inverted};
use crate::keypoints::{
    describe_hog_dense, group_triplets_with, shape_context, triplet_counts, DescriptorSet, DogConfig, SiftExtractor, SiftFlavor,
    HOG_DIM, SC_DEFAULT_SAMPLES, SC_DIM, TRIPLET_BINS,
};
use crate::metrics::{Metric, MetricId, Normalization};
use crate::raster::{autocrop, load_image, resize_bilinear, to_gray, RasterImage, DEFAULT_AUTOCROP_TOLERANCE};
use crate::textmask::{detect_text_regions, filter_keypoints, TextBox};

/// A feature extractor by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureSpec {
    Hsv72,
    Rgb { bins: usize },
    Lbp { p: u32, r: f64, variant: LbpVariant },
    Gist,
    Sift(SiftFlavor),
    Hog { cell: usize },
    ShapeContext { samples: usize },
    /// SIFT words grouped into same-scale triplets.
    TriSift,
}

impl FeatureSpec {
    pub const ALL_NAMES: [&'static str; 13] = [
        "hsv72", "rgb64", "rgb512", "lbp", "lbp.ri", "lbp.u2", "lbp.riu2", "gist", "sift", "orsift", "hog", "shapecontext", "trisift",
    ];

    pub fn name(&self) -> String {
        match self {
            FeatureSpec::Hsv72 => "hsv72".into(),
            FeatureSpec::Rgb { bins } => format!("rgb{}", bins * bins * bins),
            FeatureSpec::Lbp { variant: LbpVariant::Base, .. } => "lbp".into(),
            FeatureSpec::Lbp { variant, .. } => format!("lbp.{variant}"),
            FeatureSpec::Gist => "gist".into(),
            FeatureSpec::Sift(f) => f.feature_id().into(),
            FeatureSpec::Hog { .. } => "hog".into(),
            FeatureSpec::ShapeContext { .. } => "shapecontext".into(),
            FeatureSpec::TriSift => "trisift".into(),
        }
    }

    /// True for keypoint descriptors that go through a codebook.
    pub fn is_local(&self) -> bool {
        matches!(self, FeatureSpec::Sift(_) | FeatureSpec::Hog { .. } | FeatureSpec::ShapeContext { .. } | FeatureSpec::TriSift)
    }

    /// Name of the descriptor stream this feature is computed from.
    pub fn extraction_name(&self) -> String {
        match self {
            FeatureSpec::TriSift => "sift".into(),
            other => other.name(),
        }
    }

    /// Per-row dimension of local descriptors.
    pub fn local_dim(&self) -> Option<usize> {
        match self {
            FeatureSpec::Sift(f) => Some(f.dim()),
            FeatureSpec::TriSift => Some(SiftFlavor::Sift.dim()),
            FeatureSpec::Hog { .. } => Some(HOG_DIM),
            FeatureSpec::ShapeContext { .. } => Some(SC_DIM),
            _ => None,
        }
    }

    /// Default normalization and metric for dense features.
    pub fn default_scoring(&self) -> (Normalization, MetricId) {
        match self {
            FeatureSpec::Hsv72 | FeatureSpec::Rgb { .. } => (Normalization::L1, MetricId::IntersectionL1),
            FeatureSpec::Lbp { .. } => (Normalization::L1, MetricId::Cosine),
            FeatureSpec::Gist => (Normalization::None, MetricId::Euclidean),
            _ => (Normalization::None, MetricId::Cosine),
        }
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lbp = |variant| FeatureSpec::Lbp { p: 8, r: 1.0, variant };
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "hsv72" => FeatureSpec::Hsv72,
            "rgb64" => FeatureSpec::Rgb { bins: 4 },
            "rgb512" => FeatureSpec::Rgb { bins: 8 },
            "lbp" | "lbp.base" => lbp(LbpVariant::Base),
            "lbp.ri" => lbp(LbpVariant::Ri),
            "lbp.u2" => lbp(LbpVariant::U2),
            "lbp.riu2" => lbp(LbpVariant::Riu2),
            "gist" => FeatureSpec::Gist,
            "sift" => FeatureSpec::Sift(SiftFlavor::Sift),
            "orsift" => FeatureSpec::Sift(SiftFlavor::OrSift),
            "hog" => FeatureSpec::Hog { cell: 8 },
            "shapecontext" => FeatureSpec::ShapeContext { samples: SC_DEFAULT_SAMPLES },
            "trisift" => FeatureSpec::TriSift,
            other => return Err(Error::InvalidParam(format!("unknown feature {other:?}"))),
        })
    }
}

/// Cleaning applied to every image before extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    /// Corner-colour tolerance for cropping uniform borders; `None` disables it.
    pub autocrop: Option<u8>,
    /// Longest side after rescaling; `None` keeps the size.
    pub canonical_side: Option<u32>,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self { autocrop: Some(DEFAULT_AUTOCROP_TOLERANCE), canonical_side: Some(128) }
    }
}

pub fn preprocess(img: &RasterImage, p: &Preprocess) -> RasterImage {
    let img = match p.autocrop {
        Some(tol) => autocrop(img, tol),
        None => img.clone(),
    };
    match p.canonical_side {
        Some(side) => {
            let (w, h) = (img.width(), img.height());
            let scale = side as f64 / w.max(h) as f64;
            let nw = ((w as f64 * scale).round() as u32).max(1);
            let nh = ((h as f64 * scale).round() as u32).max(1);
            if (nw, nh) == (w, h) {
                img
            } else {
                resize_bilinear(&img, nw, nh)
            }
        }
        None => img,
    }
}

pub fn extract_dense(spec: &FeatureSpec, img: &RasterImage) -> Result<DenseDescriptor> {
    match *spec {
        FeatureSpec::Hsv72 => Ok(color_histogram_hsv72(img)),
        FeatureSpec::Rgb { bins } => color_histogram_rgb(img, bins),
        FeatureSpec::Lbp { p, r, variant } => lbp(&to_gray(img), p, r, variant),
        FeatureSpec::Gist => Ok(gist(&to_gray(img))),
        _ => Err(Error::InvalidParam(format!("{spec} is not a global feature"))),
    }
}

/// Local descriptors of `img`, with keypoints on detected text removed when
/// `strip_text` is set. Images without enough edges for shape context yield an
/// empty set.
pub fn extract_local(spec: &FeatureSpec, img: &RasterImage, dog: &DogConfig, strip_text: bool) -> Result<(DescriptorSet, Vec<TextBox>)> {
    let gray = to_gray(img);
    let set = match *spec {
        FeatureSpec::Sift(flavor) => SiftExtractor::new(dog.clone()).extract(&gray, flavor)?,
        FeatureSpec::TriSift => SiftExtractor::new(dog.clone()).extract(&gray, SiftFlavor::Sift)?,
        FeatureSpec::Hog { cell } => describe_hog_dense(&gray, cell)?,
        FeatureSpec::ShapeContext { samples } => match shape_context(&gray, samples) {
            Err(Error::InsufficientEdges { .. }) => DescriptorSet::empty("shapecontext", SC_DIM),
            other => other?,
        },
        _ => return Err(Error::InvalidParam(format!("{spec} is not a local feature"))),
    };
    if !strip_text {
        return Ok((set, Vec::new()));
    }
    let boxes = detect_text_regions(&gray);
    Ok((filter_keypoints(&set, &boxes), boxes))
}

/// Codebook training parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BovwParams {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Descriptor rows drawn (reservoir sample) for clustering.
    pub sample_rows: usize,
}

impl Default for BovwParams {
    fn default() -> Self {
        Self { k: 256, max_iters: 30, seed: 0, sample_rows: 40_000 }
    }
}

pub fn train_codebook<'a>(feature_id: &str, sets: impl IntoIterator<Item = &'a DescriptorSet>, params: &BovwParams) -> Result<Codebook> {
    let (samples, dim) = reservoir_sample(sets, params.sample_rows, params.seed);
    if dim == 0 {
        return Err(Error::TooFewSamples { samples: 0, k: params.k });
    }
    train_kmeans(feature_id, &samples, dim, KMeansConfig { k: params.k, max_iters: params.max_iters, seed: params.seed })
}

/// Term counts of one image and the vocabulary size they index into.
pub fn term_counts(spec: &FeatureSpec, set: &DescriptorSet, cb: &Codebook, dog: &DogConfig) -> Result<TermCounts> {
    match spec {
        FeatureSpec::TriSift => Ok(triplet_counts(&group_triplets_with(set, cb, dog)?)),
        _ => quantize(set, cb),
    }
}

pub fn vocabulary_size(spec: &FeatureSpec, cb: &Codebook) -> usize {
    match spec {
        FeatureSpec::TriSift => TRIPLET_BINS as usize,
        _ => cb.k(),
    }
}

/// Dense rank source: corpus rows indexed, everything else kept for injection.
pub fn dense_source(
    features: &BTreeMap<String, DenseDescriptor>,
    corpus: &[String],
    normalization: Normalization,
    metric: MetricId,
) -> Result<DenseSource> {
    let in_corpus: std::collections::HashSet<&str> = corpus.iter().map(|s| s.as_str()).collect();
    let mut docs = Vec::with_capacity(corpus.len());
    for id in corpus {
        let d = features.get(id).ok_or_else(|| Error::InvalidParam(format!("no features for corpus image {id:?}")))?;
        docs.push((id.clone(), d.clone()));
    }
    let dim = docs.first().map(|d| d.1.dim()).or_else(|| features.values().next().map(|d| d.dim())).unwrap_or(0);
    let index = build_dense(docs, normalization)?;
    let extra = features.iter().filter(|(k, _)| !in_corpus.contains(k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
    Ok(DenseSource { index, extra, metric: Metric::for_dim(metric, dim) })
}

/// BoVW rank source with IDF fitted over every image in `counts`.
pub fn bovw_source(feature_id: &str, vocabulary: usize, counts: &BTreeMap<String, TermCounts>, corpus: &[String]) -> Result<BovwSource> {
    let all: Vec<TermCounts> = counts.values().cloned().collect();
    let idf = compute_idf(vocabulary, &all);
    let in_corpus: std::collections::HashSet<&str> = corpus.iter().map(|s| s.as_str()).collect();
    let mut docs = Vec::with_capacity(corpus.len());
    for id in corpus {
        let c = counts.get(id).ok_or_else(|| Error::InvalidParam(format!("no features for corpus image {id:?}")))?;
        docs.push((id.clone(), tfidf_weight(c, &idf)));
    }
    let mut index = build_inverted(feature_id, vocabulary, docs)?;
    index.idf = Some(idf.clone());
    let extra = counts
        .iter()
        .filter(|(k, _)| !in_corpus.contains(k.as_str()))
        .map(|(k, c)| (k.clone(), tfidf_weight(c, &idf)))
        .collect();
    Ok(BovwSource { index, extra })
}

/// How a pipeline scores images.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineKind {
    Dense { feature: FeatureSpec, normalization: Normalization, metric: MetricId },
    Bovw { feature: FeatureSpec, strip_text: bool, params: BovwParams },
    /// Externally supplied dense features, compared with cosine distance.
    External { name: String },
    Fused(Vec<PipelineKind>),
    Random { seed: u64 },
}

impl PipelineKind {
    /// Dense pipeline with the feature's default normalization and metric.
    pub fn dense(feature: FeatureSpec) -> Self {
        let (normalization, metric) = feature.default_scoring();
        PipelineKind::Dense { feature, normalization, metric }
    }

    pub fn bovw(feature: FeatureSpec, params: BovwParams) -> Self {
        PipelineKind::Bovw { feature, strip_text: false, params }
    }
}

#[derive(Debug, Clone)]
pub enum ImageRef {
    Memory(RasterImage),
    File(PathBuf),
}

type LocalKey = (String, bool);
type CodebookKey = (String, bool, BovwParams);

/// Images, query groups and caches of everything derived from them. Features are
/// computed lazily and shared between pipelines.
pub struct Workbench {
    images: BTreeMap<String, ImageRef>,
    corpus: Vec<String>,
    groups: Vec<QueryGroup>,
    pub preprocess: Preprocess,
    pub dog: DogConfig,
    prepared: Mutex<Option<Arc<BTreeMap<String, RasterImage>>>>,
    dense: Mutex<HashMap<String, Arc<BTreeMap<String, DenseDescriptor>>>>,
    local: Mutex<HashMap<LocalKey, Arc<BTreeMap<String, DescriptorSet>>>>,
    text_boxes: Mutex<HashMap<String, Vec<TextBox>>>,
    codebooks: Mutex<HashMap<CodebookKey, Arc<Codebook>>>,
}

impl Workbench {
    /// The corpus is every image that belongs to no group.
    pub fn new(images: BTreeMap<String, ImageRef>, groups: Vec<QueryGroup>) -> Result<Self> {
        let grouped: std::collections::HashSet<&str> = groups.iter().flat_map(|g| g.members().iter().map(|m| m.as_str())).collect();
        if let Some(m) = grouped.iter().find(|m| !images.contains_key(**m)) {
            return Err(Error::InvalidParam(format!("group member {m:?} is not in the image set")));
        }
        let corpus = images.keys().filter(|k| !grouped.contains(k.as_str())).cloned().collect();
        Ok(Self {
            images,
            corpus,
            groups,
            preprocess: Preprocess::default(),
            dog: DogConfig::default(),
            prepared: Mutex::new(None),
            dense: Mutex::new(HashMap::new()),
            local: Mutex::new(HashMap::new()),
            text_boxes: Mutex::new(HashMap::new()),
            codebooks: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_synth(corpus: &crate::synth::SynthCorpus) -> Result<Self> {
        let images = corpus.images.iter().map(|i| (i.id.clone(), ImageRef::Memory(i.image.clone()))).collect();
        Self::new(images, corpus.groups.clone())
    }

    pub fn corpus(&self) -> &[String] {
        &self.corpus
    }

    pub fn groups(&self) -> &[QueryGroup] {
        &self.groups
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &String> {
        self.images.keys()
    }

    /// Every image decoded and preprocessed, computed once.
    pub fn prepared_images(&self) -> Result<Arc<BTreeMap<String, RasterImage>>> {
        if let Some(p) = self.prepared.lock().unwrap().as_ref() {
            return Ok(p.clone());
        }
        let list: Vec<(&String, &ImageRef)> = self.images.iter().collect();
        let done = list
            .par_iter()
            .map(|(id, r)| {
                let img = match r {
                    ImageRef::Memory(i) => i.clone(),
                    ImageRef::File(p) => load_image(p)?,
                };
                Ok(((*id).clone(), preprocess(&img, &self.preprocess)))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let done = Arc::new(done);
        *self.prepared.lock().unwrap() = Some(done.clone());
        Ok(done)
    }

    pub fn insert_dense(&self, name: &str, features: BTreeMap<String, DenseDescriptor>) {
        self.dense.lock().unwrap().insert(name.to_string(), Arc::new(features));
    }

    pub fn insert_local(&self, name: &str, strip_text: bool, sets: BTreeMap<String, DescriptorSet>) {
        self.local.lock().unwrap().insert((name.to_string(), strip_text), Arc::new(sets));
    }

    pub fn insert_codebook(&self, name: &str, strip_text: bool, params: BovwParams, cb: Codebook) {
        self.codebooks.lock().unwrap().insert((name.to_string(), strip_text, params), Arc::new(cb));
    }

    pub fn dense_features(&self, spec: &FeatureSpec) -> Result<Arc<BTreeMap<String, DenseDescriptor>>> {
        let name = spec.name();
        if let Some(f) = self.dense.lock().unwrap().get(&name) {
            return Ok(f.clone());
        }
        let imgs = self.prepared_images()?;
        let list: Vec<(&String, &RasterImage)> = imgs.iter().collect();
        let feats = list
            .par_iter()
            .map(|(id, img)| Ok(((*id).clone(), extract_dense(spec, img)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let feats = Arc::new(feats);
        self.dense.lock().unwrap().insert(name, feats.clone());
        Ok(feats)
    }

    /// Local descriptor sets of every image; text boxes are cached when stripping.
    pub fn local_features(&self, spec: &FeatureSpec, strip_text: bool) -> Result<Arc<BTreeMap<String, DescriptorSet>>> {
        let key = (spec.extraction_name(), strip_text);
        if let Some(f) = self.local.lock().unwrap().get(&key) {
            return Ok(f.clone());
        }
        let imgs = self.prepared_images()?;
        let list: Vec<(&String, &RasterImage)> = imgs.iter().collect();
        let extraction: FeatureSpec = key.0.parse()?;
        let out = list
            .par_iter()
            .map(|(id, img)| Ok(((*id).clone(), extract_local(&extraction, img, &self.dog, strip_text)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut sets = BTreeMap::new();
        let mut boxes = self.text_boxes.lock().unwrap();
        for (id, (set, b)) in out {
            if strip_text {
                boxes.insert(id.clone(), b);
            }
            sets.insert(id, set);
        }
        drop(boxes);
        let sets = Arc::new(sets);
        self.local.lock().unwrap().insert(key, sets.clone());
        Ok(sets)
    }

    /// Text boxes found while extracting with `strip_text`, by image id.
    pub fn text_boxes(&self) -> BTreeMap<String, Vec<TextBox>> {
        self.text_boxes.lock().unwrap().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Codebook over the descriptors of every image (corpus and group members).
    pub fn codebook(&self, spec: &FeatureSpec, strip_text: bool, params: &BovwParams) -> Result<Arc<Codebook>> {
        let key = (spec.extraction_name(), strip_text, *params);
        if let Some(cb) = self.codebooks.lock().unwrap().get(&key) {
            return Ok(cb.clone());
        }
        let sets = self.local_features(spec, strip_text)?;
        let cb = Arc::new(train_codebook(&key.0, sets.values(), params)?);
        self.codebooks.lock().unwrap().insert(key, cb.clone());
        Ok(cb)
    }

    /// Per-image term counts for a BoVW pipeline.
    pub fn term_counts(&self, spec: &FeatureSpec, strip_text: bool, params: &BovwParams) -> Result<(BTreeMap<String, TermCounts>, usize)> {
        let sets = self.local_features(spec, strip_text)?;
        let cb = self.codebook(spec, strip_text, params)?;
        let list: Vec<(&String, &DescriptorSet)> = sets.iter().collect();
        let counts = list
            .par_iter()
            .map(|(id, s)| Ok(((*id).clone(), term_counts(spec, s, &cb, &self.dog)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok((counts, vocabulary_size(spec, &cb)))
    }

    pub fn source(&self, kind: &PipelineKind) -> Result<Box<dyn RankSource>> {
        Ok(match kind {
            PipelineKind::Dense { feature, normalization, metric } => {
                let feats = self.dense_features(feature)?;
                Box::new(dense_source(&feats, &self.corpus, *normalization, *metric)?)
            }
            PipelineKind::Bovw { feature, strip_text, params } => {
                let (counts, vocab) = self.term_counts(feature, *strip_text, params)?;
                Box::new(bovw_source(&feature.name(), vocab, &counts, &self.corpus)?)
            }
            PipelineKind::External { name } => {
                let feats = self
                    .dense
                    .lock()
                    .unwrap()
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Error::InvalidParam(format!("external features {name:?} were not loaded")))?;
                Box::new(dense_source(&feats, &self.corpus, Normalization::None, MetricId::Cosine)?)
            }
            PipelineKind::Fused(parts) => {
                if parts.is_empty() {
                    return Err(Error::InvalidParam("fusion needs at least one pipeline".into()));
                }
                Box::new(FusedSource { parts: parts.iter().map(|p| self.source(p)).collect::<Result<_>>()? })
            }
            PipelineKind::Random { seed } => Box::new(RandomSource { corpus: self.corpus.clone(), seed: *seed }),
        })
    }

    pub fn evaluate(&self, name: &str, kind: &PipelineKind) -> Result<EvalReport> {
        let source = self.source(kind)?;
        evaluate(name, &self.groups, source.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_names_round_trip() {
        for n in FeatureSpec::ALL_NAMES {
            let f: FeatureSpec = n.parse().unwrap();
            assert_eq!(f.name(), n);
        }
        assert!("surf".parse::<FeatureSpec>().is_err());
        assert_eq!("trisift".parse::<FeatureSpec>().unwrap().extraction_name(), "sift");
    }

    #[test]
    fn preprocess_crops_and_rescales() {
        let img = RasterImage::from_fn(200, 100, |x, y| if (50..150).contains(&x) && (25..75).contains(&y) { [0, 0, 0] } else { [255; 3] });
        let p = preprocess(&img, &Preprocess::default());
        assert_eq!((p.width(), p.height()), (128, 64));
        let keep = preprocess(&img, &Preprocess { autocrop: None, canonical_side: None });
        assert_eq!(keep, img);
    }
}
