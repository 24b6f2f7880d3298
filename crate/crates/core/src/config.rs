//! Run configuration: line-based `key = value` text with `[section]` headers.
//!
//! ```text
//! [run]
//! corpus = images          # relative paths resolve against the config file
//! manifest = images/groups.csv
//! output = out
//! seed = 0
//! strip_text = false
//! canonical_side = 128
//! autocrop = 8             # or "off"
//!
//! [codebook]
//! k = 256
//! seed = 0
//! iters = 30
//! sample_rows = 40000
//!
//! [pipeline.color]
//! feature = hsv72
//! normalization = l1
//! metric = intersection_l1
//!
//! [pipeline.words]
//! feature = sift
//! strip_text = true
//!
//! [pipeline.cnn]
//! file = features/cnn.tmfeat
//!
//! [pipeline.fused]
//! fuse = color, words
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{MetricId, Normalization};
use crate::pipeline::{BovwParams, FeatureSpec, PipelineKind, Preprocess};

/// How one named pipeline produces scores.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineSource {
    Feature {
        feature: FeatureSpec,
        normalization: Normalization,
        metric: MetricId,
        /// `None` follows the run-level flag.
        strip_text: Option<bool>,
    },
    /// A `TMFEAT1` file of externally computed global features.
    External { file: PathBuf },
    Fuse(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub name: String,
    pub source: PipelineSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub manifest: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    pub strip_text: bool,
    pub preprocess: Preprocess,
    pub codebook: BovwParams,
    /// In file order.
    pub pipelines: Vec<PipelineConfig>,
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::InvalidParam(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidParam(format!("bad boolean {v:?} for {key}"))),
    }
}

fn check_pipeline_name(name: &str) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        return Err(Error::InvalidParam(format!("pipeline name {name:?} must use only letters, digits, '-', '_' or '.'")));
    }
    Ok(())
}

/// Raw `section -> [(key, value)]` view of a config file.
fn sections(text: &str) -> Result<Vec<(String, Vec<(String, String, usize)>)>> {
    let mut out: Vec<(String, Vec<(String, String, usize)>)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('[') {
            let name = h
                .strip_suffix(']')
                .ok_or_else(|| Error::format(format!("line {}: unterminated section header", no + 1)))?
                .trim();
            if out.iter().any(|s| s.0 == name) {
                return Err(Error::format(format!("line {}: section [{name}] repeated", no + 1)));
            }
            out.push((name.to_string(), Vec::new()));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("line {}: expected key = value", no + 1)))?;
        let sec = out
            .last_mut()
            .ok_or_else(|| Error::format(format!("line {}: key outside any section", no + 1)))?;
        sec.1.push((k.trim().to_string(), v.trim().to_string(), no + 1));
    }
    Ok(out)
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut corpus = None;
        let mut manifest = None;
        let mut output = None;
        let mut seed = 0;
        let mut strip_text = false;
        let mut preprocess = Preprocess::default();
        let mut codebook = BovwParams::default();
        let mut pipelines = Vec::new();
        let resolve = |v: &str| base.join(v);
        for (section, entries) in sections(text)? {
            let unknown = |k: &str, line: usize| Error::format(format!("line {line}: unknown key {k:?} in [{section}]"));
            match section.as_str() {
                "run" => {
                    for (k, v, line) in &entries {
                        match k.as_str() {
                            "corpus" => corpus = Some(resolve(v)),
                            "manifest" => manifest = Some(resolve(v)),
                            "output" => output = Some(resolve(v)),
                            "seed" => seed = parse_value(k, v)?,
                            "strip_text" => strip_text = parse_bool(k, v)?,
                            "canonical_side" => {
                                preprocess.canonical_side = if v == "off" { None } else { Some(parse_value(k, v)?) }
                            }
                            "autocrop" => preprocess.autocrop = if v == "off" { None } else { Some(parse_value(k, v)?) },
                            _ => return Err(unknown(k, *line)),
                        }
                    }
                }
                "codebook" => {
                    for (k, v, line) in &entries {
                        match k.as_str() {
                            "k" => codebook.k = parse_value(k, v)?,
                            "seed" => codebook.seed = parse_value(k, v)?,
                            "iters" => codebook.max_iters = parse_value(k, v)?,
                            "sample_rows" => codebook.sample_rows = parse_value(k, v)?,
                            _ => return Err(unknown(k, *line)),
                        }
                    }
                }
                s => {
                    let name = s
                        .strip_prefix("pipeline.")
                        .ok_or_else(|| Error::format(format!("unknown section [{s}]")))?;
                    check_pipeline_name(name)?;
                    pipelines.push(PipelineConfig { name: name.to_string(), source: pipeline_source(&entries, &resolve)? });
                }
            }
        }
        let cfg = RunConfig {
            corpus: corpus.ok_or_else(|| Error::InvalidParam("[run] corpus is required".into()))?,
            manifest,
            output: output.unwrap_or_else(|| base.join("out")),
            seed,
            strip_text,
            preprocess,
            codebook,
            pipelines,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    fn validate(&self) -> Result<()> {
        if self.codebook.k == 0 {
            return Err(Error::InvalidParam("codebook k must be positive".into()));
        }
        for (i, p) in self.pipelines.iter().enumerate() {
            if self.pipelines[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::InvalidParam(format!("pipeline {:?} defined twice", p.name)));
            }
            if let PipelineSource::Fuse(parts) = &p.source {
                if parts.is_empty() {
                    return Err(Error::InvalidParam(format!("pipeline {:?} fuses nothing", p.name)));
                }
                for part in parts {
                    match self.pipeline(part).map(|q| &q.source) {
                        None => return Err(Error::InvalidParam(format!("pipeline {:?} fuses unknown {part:?}", p.name))),
                        Some(PipelineSource::Fuse(_)) => {
                            return Err(Error::InvalidParam(format!("pipeline {:?} fuses another fusion {part:?}", p.name)))
                        }
                        Some(_) => {}
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that every referenced input path exists.
    /// Corpus and external feature files must exist; the manifest is checked by evaluation.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths = vec![&self.corpus];
        for p in &self.pipelines {
            if let PipelineSource::External { file } = &p.source {
                paths.push(file);
            }
        }
        for p in paths {
            if !p.exists() {
                return Err(Error::Missing(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn pipeline(&self, name: &str) -> Option<&PipelineConfig> {
        self.pipelines.iter().find(|p| p.name == name)
    }

    pub fn effective_strip(&self, p: &PipelineSource) -> bool {
        match p {
            PipelineSource::Feature { feature, strip_text, .. } => feature.is_local() && strip_text.unwrap_or(self.strip_text),
            _ => false,
        }
    }

    /// The scoring recipe of a pipeline.
    pub fn kind(&self, name: &str) -> Result<PipelineKind> {
        let p = self.pipeline(name).ok_or_else(|| Error::InvalidParam(format!("unknown pipeline {name:?}")))?;
        Ok(match &p.source {
            PipelineSource::Feature { feature, normalization, metric, .. } if !feature.is_local() => {
                PipelineKind::Dense { feature: *feature, normalization: *normalization, metric: *metric }
            }
            PipelineSource::Feature { feature, .. } => {
                PipelineKind::Bovw { feature: *feature, strip_text: self.effective_strip(&p.source), params: self.codebook }
            }
            PipelineSource::External { .. } => PipelineKind::External { name: p.name.clone() },
            PipelineSource::Fuse(parts) => PipelineKind::Fused(parts.iter().map(|q| self.kind(q)).collect::<Result<_>>()?),
        })
    }

    /// Canonical text of every setting that affects results; output location excluded.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "off".into());
        let _ = writeln!(s, "corpus={}", self.corpus.display());
        let _ = writeln!(s, "manifest={}", opt(self.manifest.as_ref().map(|m| m.display().to_string())));
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "strip_text={}", self.strip_text);
        let _ = writeln!(s, "autocrop={}", opt(self.preprocess.autocrop.map(|v| v.to_string())));
        let _ = writeln!(s, "canonical_side={}", opt(self.preprocess.canonical_side.map(|v| v.to_string())));
        let c = &self.codebook;
        let _ = writeln!(s, "codebook k={} seed={} iters={} sample_rows={}", c.k, c.seed, c.max_iters, c.sample_rows);
        for p in &self.pipelines {
            let _ = match &p.source {
                PipelineSource::Feature { feature, normalization, metric, .. } => writeln!(
                    s,
                    "pipeline {} feature={feature} normalization={normalization} metric={} strip_text={}",
                    p.name,
                    metric.name(),
                    self.effective_strip(&p.source)
                ),
                PipelineSource::External { file } => writeln!(s, "pipeline {} file={}", p.name, file.display()),
                PipelineSource::Fuse(parts) => writeln!(s, "pipeline {} fuse={}", p.name, parts.join(",")),
            };
        }
        s
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn pipeline_source(entries: &[(String, String, usize)], resolve: &dyn Fn(&str) -> PathBuf) -> Result<PipelineSource> {
    let map: BTreeMap<&str, &str> = entries.iter().map(|(k, v, _)| (k.as_str(), v.as_str())).collect();
    let allowed = ["feature", "normalization", "metric", "strip_text", "file", "fuse"];
    if let Some((k, _, line)) = entries.iter().find(|e| !allowed.contains(&e.0.as_str())) {
        return Err(Error::format(format!("line {line}: unknown pipeline key {k:?}")));
    }
    let kinds = ["feature", "file", "fuse"].iter().filter(|k| map.contains_key(**k)).count();
    if kinds != 1 {
        return Err(Error::InvalidParam("a pipeline needs exactly one of feature, file or fuse".into()));
    }
    if let Some(file) = map.get("file") {
        return Ok(PipelineSource::External { file: resolve(file) });
    }
    if let Some(parts) = map.get("fuse") {
        return Ok(PipelineSource::Fuse(parts.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()));
    }
    let feature: FeatureSpec = map["feature"].parse()?;
    let (default_norm, default_metric) = feature.default_scoring();
    Ok(PipelineSource::Feature {
        feature,
        normalization: map.get("normalization").map_or(Ok(default_norm), |v| v.parse())?,
        metric: map.get("metric").map_or(Ok(default_metric), |v| v.parse())?,
        strip_text: map.get("strip_text").map(|v| parse_bool("strip_text", v)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
[run]
corpus = imgs
manifest = imgs/groups.csv   # ground truth
output = out
strip_text = true

[codebook]
k = 64
seed = 3

[pipeline.color]
feature = hsv72

[pipeline.words]
feature = sift
strip_text = false

[pipeline.both]
fuse = color, words
";

    #[test]
    fn parses_sections_and_defaults() {
        let c = RunConfig::parse(SAMPLE, Path::new("/base")).unwrap();
        assert_eq!(c.corpus, PathBuf::from("/base/imgs"));
        assert_eq!(c.codebook.k, 64);
        assert_eq!(c.codebook.seed, 3);
        assert_eq!(c.pipelines.len(), 3);
        assert_eq!(c.kind("color").unwrap(), PipelineKind::dense(FeatureSpec::Hsv72));
        assert!(matches!(c.kind("words").unwrap(), PipelineKind::Bovw { strip_text: false, .. }));
        assert!(matches!(c.kind("both").unwrap(), PipelineKind::Fused(p) if p.len() == 2));
    }

    #[test]
    fn hash_ignores_output_but_not_settings() {
        let a = RunConfig::parse(SAMPLE, Path::new("/base")).unwrap();
        let mut b = a.clone();
        b.output = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.codebook.k = 65;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new("/");
        assert!(RunConfig::parse("[run]\ncorpus = x\n[pipeline.a]\nfeature = surf\n", base).is_err());
        assert!(RunConfig::parse("[run]\ncorpus = x\n[pipeline.a]\nfeature = hsv72\nmetric = cosin\n", base).is_err());
        assert!(RunConfig::parse("[run]\ncorpus = x\n[pipeline.a]\nfuse = b\n", base).is_err());
        assert!(RunConfig::parse("[run]\ncorpus = x\ncolour = 1\n", base).is_err());
        assert!(RunConfig::parse("corpus = x\n", base).is_err());
        assert!(RunConfig::parse("[run]\n", base).is_err());
        assert!(RunConfig::parse("[run]\ncorpus = x\n[pipeline.a]\nfeature = hsv72\nfile = y\n", base).is_err());
    }
}
