//! Exit criteria, run in order with one PASS/FAIL line each.
//!
//! cargo test --release --test acceptance

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmretrieval::bench::{average_rank, normalized_rank, resolve_ties, EvalReport};
use tmretrieval::codebook::{compute_idf, tfidf_weight, train_kmeans, train_kmeans_traced, KMeansConfig, TermCounts};
use tmretrieval::fusion::{irp_fuse, FusionInput};
use tmretrieval::global::{color_histogram_hsv72, color_histogram_rgb, gist, lbp, DenseDescriptor, LbpVariant};
use tmretrieval::index::{build_dense, build_inverted, query_dense, query_inverted, Ranking};
use tmretrieval::keypoints::{describe_hog_dense, shape_context, SiftExtractor, SiftFlavor};
use tmretrieval::metrics::{distance, Metric, MetricId, SimilarityMatrix};
use tmretrieval::pipeline::{BovwParams, FeatureSpec, PipelineKind, Workbench};
use tmretrieval::raster::{to_gray, GrayImage};
use tmretrieval::synth::{render_figure, synth_corpus, SynthCorpus, SynthSpec};
use tmretrieval::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn within(t: Instant, limit: Duration) -> bool {
    t.elapsed() <= limit
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

/// Distinct sorted ranks of `n_rel` relevant documents among `n`.
fn random_ranks(rng: &mut ChaCha8Rng, n: usize, n_rel: usize) -> Vec<f64> {
    let mut r: Vec<f64> = rand::seq::index::sample(rng, n, n_rel).into_iter().map(|i| (i + 1) as f64).collect();
    r.sort_by(f64::total_cmp);
    r
}

fn criterion_1() -> Result<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..3000);
        let n_rel = rng.gen_range(1..=n.min(25));
        let ranks = random_ranks(&mut rng, n, n_rel);
        // Oracle: each relevant document is displaced by the irrelevant ones above it.
        let mut relevant = vec![false; n + 1];
        for &r in &ranks {
            relevant[r as usize] = true;
        }
        let mut above = 0usize;
        let mut displaced = 0usize;
        for (pos, &rel) in relevant.iter().enumerate().skip(1) {
            if rel {
                displaced += above;
            } else {
                above += 1;
            }
            let _ = pos;
        }
        let want_norm = displaced as f64 / (n * n_rel) as f64;
        let want_avg = ranks.iter().sum::<f64>() / n_rel as f64;
        worst = worst
            .max((normalized_rank(&ranks, n)? - want_norm).abs())
            .max((average_rank(&ranks)? - want_avg).abs() / want_avg);
    }
    let perfect = normalized_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], 1000)?;

    let mut trials = Vec::with_capacity(200);
    for trial in 0..200u64 {
        let scored: Vec<(String, f64)> = (0..1000).map(|i| (format!("d{i:04}"), rng.gen::<f64>())).collect();
        let ranking = resolve_ties(&Ranking::from_scores(format!("q{trial}"), scored, None));
        let ranks: Vec<f64> = ranking.entries.iter().filter(|e| e.doc_id.as_str() < "d0010").map(|e| e.rank).collect();
        trials.push(normalized_rank(&ranks, 1000)?);
    }
    let random_mean = trials.iter().sum::<f64>() / trials.len() as f64;
    let pass = worst < 1e-12 && perfect == 0.0 && (random_mean - 0.5).abs() <= 0.03 && within(t, secs(10));
    outcome(pass, format!("max oracle error {worst:.1e}, perfect {perfect}, random mean {random_mean:.4}"))
}

fn criterion_2() -> Result<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for case in 0..1000 {
        let n = rng.gen_range(1..200);
        let levels = rng.gen_range(1..=n.clamp(1, 12));
        let scored: Vec<(String, f64)> = (0..n).map(|i| (format!("d{i:03}"), rng.gen_range(0..levels) as f64 * 0.25)).collect();
        let raw = Ranking::from_scores(format!("q{case}"), scored, None);
        let got = resolve_ties(&raw);
        // Oracle: average of the 1-based positions sharing each score.
        for (i, e) in raw.entries.iter().enumerate() {
            let positions: Vec<usize> = raw.entries.iter().enumerate().filter(|(_, o)| o.score == e.score).map(|(j, _)| j + 1).collect();
            let want = positions.iter().sum::<usize>() as f64 / positions.len() as f64;
            if got.entries[i].doc_id != e.doc_id || got.entries[i].rank != want {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0 && within(t, secs(5)), format!("{mismatches} mismatched ranks"))
}

fn criterion_3() -> Result<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut order_mismatch, mut worst) = (0, 0.0f64);
    for c in 0..50 {
        let k = rng.gen_range(8..400);
        let n = rng.gen_range(1..=1000);
        let random_counts = |rng: &mut ChaCha8Rng| -> TermCounts {
            (0..rng.gen_range(0..30)).map(|_| (rng.gen_range(0..k as u32), rng.gen_range(1..5))).collect()
        };
        let counts: Vec<TermCounts> = (0..n).map(|_| random_counts(&mut rng)).collect();
        let idf = compute_idf(k, &counts);
        let vecs: Vec<(String, _)> = counts.iter().enumerate().map(|(i, c)| (format!("doc{i:04}"), tfidf_weight(c, &idf))).collect();
        let inverted = build_inverted("w", k, vecs.clone())?;
        let dense = build_dense(
            vecs.iter().map(|(id, v)| (id.clone(), DenseDescriptor::new("w", v.densify(k)))).collect(),
            tmretrieval::metrics::Normalization::None,
        )?;
        let q = tfidf_weight(&random_counts(&mut rng), &idf);
        let a = query_inverted(&inverted, &format!("q{c}"), &q, None)?;
        let b = query_dense(&dense, &format!("q{c}"), &DenseDescriptor::new("w", q.densify(k)), &Metric::Cosine, None)?;
        if a.doc_ids().ne(b.doc_ids()) {
            order_mismatch += 1;
        }
        for (x, y) in a.entries.iter().zip(&b.entries) {
            worst = worst.max((x.score - y.score).abs());
        }
    }
    outcome(
        order_mismatch == 0 && worst <= 1e-6 && within(t, secs(30)),
        format!("{order_mismatch} of 50 corpora reordered, max score gap {worst:.1e}"),
    )
}

fn random_hist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn criterion_4() -> Result<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 72;
    let mut failures = Vec::new();
    let identity = Metric::Quadratic(Arc::new(SimilarityMatrix::identity(dim)));
    for _ in 0..1000 {
        let (p, q, r) = (random_hist(&mut rng, dim), random_hist(&mut rng, dim), random_hist(&mut rng, dim));
        for id in MetricId::ALL {
            let m = Metric::for_dim(id, dim);
            let same = if id == MetricId::IntersectionL2 {
                let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                p.iter().map(|x| x / n).collect()
            } else {
                p.clone()
            };
            if distance(&same, &same, &m)?.abs() > 1e-12 {
                failures.push(format!("{id} identity"));
            }
            if (distance(&p, &q, &m)? - distance(&q, &p, &m)?).abs() > 1e-12 {
                failures.push(format!("{id} symmetry"));
            }
        }
        for m in [Metric::Euclidean, Metric::Manhattan] {
            if distance(&p, &r, &m)? > distance(&p, &q, &m)? + distance(&q, &r, &m)? + 1e-12 {
                failures.push(format!("{} triangle", m.id()));
            }
        }
        if distance(&p, &p, &Metric::IntersectionL1)? != 0.0 {
            failures.push("intersection_l1 of identical histograms".into());
        }
        let sq: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
        if (distance(&p, &q, &identity)? - sq).abs() > 1e-9 {
            failures.push("quadratic identity".into());
        }
    }
    failures.dedup();
    let detail = if failures.is_empty() { "1000 triples".to_string() } else { failures.join(", ") };
    outcome(failures.is_empty() && within(t, secs(5)), detail)
}

fn criterion_5() -> Result<Outcome> {
    let img = render_figure(5, 128);
    let g = to_gray(&img);
    let ex = SiftExtractor::default();
    let dims = [
        ("hsv72", color_histogram_hsv72(&img).dim(), 72),
        ("rgb4", color_histogram_rgb(&img, 4)?.dim(), 64),
        ("rgb8", color_histogram_rgb(&img, 8)?.dim(), 512),
        ("lbp", lbp(&g, 8, 1.0, LbpVariant::Base)?.dim(), 256),
        ("lbp riu2", lbp(&g, 8, 1.0, LbpVariant::Riu2)?.dim(), 10),
        ("gist", gist(&g).dim(), 512),
        ("sift", ex.extract(&g, SiftFlavor::Sift)?.dim, 128),
        ("orsift", ex.extract(&g, SiftFlavor::OrSift)?.dim, 64),
        ("hog", describe_hog_dense(&g, 8)?.dim, 36),
        ("shape context", shape_context(&g, 100)?.dim, 60),
    ];
    let wrong: Vec<String> = dims.iter().filter(|d| d.1 != d.2).map(|d| format!("{} {} != {}", d.0, d.1, d.2)).collect();
    let detail = if wrong.is_empty() { dims.map(|d| format!("{}={}", d.0, d.1)).join(" ") } else { wrong.join(", ") };
    outcome(wrong.is_empty(), detail)
}

/// Tie-resolved rank of the inverted copy when querying with the group base, and of the
/// base when querying with the inverted copy.
fn duplicate_ranks(report: &EvalReport, corpus: &SynthCorpus) -> Vec<f64> {
    let mut out = Vec::new();
    for row in &report.rows {
        let group = corpus.groups.iter().find(|g| g.id == row.group_id).expect("group");
        let m = group.members();
        let (base, inverted) = (&m[0], &m[m.len() - 1]);
        let others: Vec<&String> = m.iter().filter(|x| *x != &row.query_id).collect();
        if &row.query_id == base {
            out.push(row.injected_ranks[others.iter().position(|x| *x == inverted).unwrap()]);
        } else if &row.query_id == inverted {
            out.push(row.injected_ranks[others.iter().position(|x| *x == base).unwrap()]);
        }
    }
    out
}

fn criterion_6() -> Result<Outcome> {
    let t = Instant::now();
    let mut spec = SynthSpec::with_distractors(11, 300, 10, 3);
    spec.inversion = true;
    let corpus = synth_corpus(&spec)?;
    let bench = Workbench::from_synth(&corpus)?;
    let params = BovwParams::default();
    let sift = bench.evaluate("sift", &PipelineKind::bovw(FeatureSpec::Sift(SiftFlavor::Sift), params))?;
    let orsift = bench.evaluate("orsift", &PipelineKind::bovw(FeatureSpec::Sift(SiftFlavor::OrSift), params))?;
    let n = orsift.rows[0].n as f64;
    let dup = duplicate_ranks(&orsift, &corpus);
    let top = dup.iter().filter(|&&r| r <= 0.05 * n).count();
    let (s, o) = (sift.mean_normalized_rank(), orsift.mean_normalized_rank());
    let pass = o < s && top * 5 >= dup.len() * 4 && within(t, secs(300));
    outcome(pass, format!("orsift {o:.4} vs sift {s:.4}; inverted copy in top 5% for {top}/{} queries", dup.len()))
}

fn criterion_7() -> Result<Outcome> {
    let t = Instant::now();
    let mut spec = SynthSpec::with_distractors(13, 300, 10, 4);
    spec.text_contamination = true;
    spec.group_base_text = false;
    let corpus = synth_corpus(&spec)?;
    let bench = Workbench::from_synth(&corpus)?;
    let kind = |strip_text| PipelineKind::Bovw { feature: FeatureSpec::Sift(SiftFlavor::Sift), strip_text, params: BovwParams::default() };
    let without = bench.evaluate("sift", &kind(false))?.mean_normalized_rank();
    let with = bench.evaluate("sift-filtered", &kind(true))?.mean_normalized_rank();
    let pass = without - with >= 0.02 && within(t, secs(300));
    outcome(pass, format!("filtered {with:.4} vs unfiltered {without:.4} (gain {:.4}, need 0.02)", without - with))
}

fn criterion_8() -> Result<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut oracle_mismatch = 0;
    for case in 0..1000 {
        let n = rng.gen_range(1..60);
        let m = rng.gen_range(1..6);
        let ids: Vec<String> = (0..n).map(|i| format!("d{i:02}")).collect();
        let rankings: Vec<Ranking> = (0..m)
            .map(|_| {
                let mut order = ids.clone();
                order.shuffle(&mut rng);
                Ranking::from_scores(format!("q{case}"), order.into_iter().enumerate().map(|(i, d)| (d, i as f64)).collect(), None)
            })
            .collect();
        let got = irp_fuse(&FusionInput::new(format!("q{case}"), rankings.clone()))?;
        // Exact oracle: 1 / Σ 1/r = Π r / Σ_j Π_{i≠j} r_i, compared as integer fractions.
        let mut want: Vec<(u128, u128, &str)> = ids
            .iter()
            .map(|d| {
                let r: Vec<u128> = rankings.iter().map(|x| x.rank_of(d).unwrap() as u128).collect();
                let num: u128 = r.iter().product();
                let den: u128 = (0..r.len()).map(|j| r.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| v).product::<u128>()).sum();
                (num, den, d.as_str())
            })
            .collect();
        want.sort_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)).then(a.2.cmp(b.2)));
        let same = got.entries.len() == want.len()
            && got.entries.iter().zip(&want).all(|(e, w)| {
                let exact = w.0 as f64 / w.1 as f64;
                e.doc_id == w.2 && (e.score - exact).abs() <= 1e-12 * exact
            });
        oracle_mismatch += (!same) as usize;
    }

    let corpus = synth_corpus(&SynthSpec::with_distractors(7, 300, 10, 4))?;
    let bench = Workbench::from_synth(&corpus)?;
    let parts = vec![
        ("hsv72", PipelineKind::dense(FeatureSpec::Hsv72)),
        ("lbp", PipelineKind::dense("lbp".parse()?)),
        ("gist", PipelineKind::dense(FeatureSpec::Gist)),
        ("sift", PipelineKind::bovw(FeatureSpec::Sift(SiftFlavor::Sift), BovwParams::default())),
    ];
    let mut means = BTreeMap::new();
    for (name, kind) in &parts {
        means.insert(*name, bench.evaluate(name, kind)?.mean_normalized_rank());
    }
    let fused = bench.evaluate("fused", &PipelineKind::Fused(parts.into_iter().map(|p| p.1).collect()))?.mean_normalized_rank();
    let best = means.values().cloned().fold(f64::INFINITY, f64::min);
    let pass = oracle_mismatch == 0 && fused <= best + 0.02 && within(t, secs(300));
    let parts = means.iter().map(|(k, v)| format!("{k} {v:.4}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("fused {fused:.4} vs best {best:.4} ({parts}); {oracle_mismatch} oracle mismatches"))
}

fn criterion_9() -> Result<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut rot_fail, mut shift_fail) = (0, 0);
    for _ in 0..50 {
        let (w, h) = (rng.gen_range(3..64), rng.gen_range(3..64));
        let g = GrayImage::new(w, h, (0..w * h).map(|_| rng.gen_range(0..=245)).collect())?;
        let base = lbp(&g, 8, 1.0, LbpVariant::Riu2)?;
        let mut r = g.clone();
        for _ in 0..3 {
            r = r.rotate90();
            rot_fail += (lbp(&r, 8, 1.0, LbpVariant::Riu2)?.values != base.values) as usize;
        }
        let shifted = GrayImage::from_fn(w, h, |x, y| g.get(x, y) + 10);
        shift_fail += (lbp(&shifted, 8, 1.0, LbpVariant::Base)?.values != lbp(&g, 8, 1.0, LbpVariant::Base)?.values) as usize;
    }
    outcome(
        rot_fail == 0 && shift_fail == 0 && within(t, secs(10)),
        format!("{rot_fail} rotation and {shift_fail} gray-shift differences over 50 images"),
    )
}

fn criterion_10() -> Result<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut increases = 0;
    let mut nondeterministic = 0;
    for case in 0..10u64 {
        let dim = rng.gen_range(2..16);
        let rows = rng.gen_range(200..2000);
        let samples: Vec<f32> = (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = KMeansConfig { k: rng.gen_range(2..40), max_iters: 50, seed: case };
        let a = train_kmeans_traced("t", &samples, dim, cfg)?;
        increases += a.objectives.windows(2).filter(|w| w[1] > w[0]).count();
        let b = train_kmeans_traced("t", &samples, dim, cfg)?;
        let bits = |c: &tmretrieval::codebook::Codebook| (0..c.k()).flat_map(|i| c.centroid(i).to_vec()).map(f64::to_bits).collect::<Vec<_>>();
        nondeterministic += (bits(&a.codebook) != bits(&b.codebook)) as usize;
    }
    let mut samples = Vec::new();
    let mut sums = [[0.0f64; 3]; 2];
    for c in 0..2 {
        for _ in 0..500 {
            let p: Vec<f32> = (0..3).map(|_| c as f32 * 50.0 + rng.gen_range(-1.0..1.0)).collect();
            for d in 0..3 {
                sums[c][d] += p[d] as f64;
            }
            samples.extend(p);
        }
    }
    let cb = train_kmeans("t", &samples, 3, KMeansConfig { k: 2, max_iters: 50, seed: 0 })?;
    let mut cents: Vec<&[f64]> = (0..2).map(|i| cb.centroid(i)).collect();
    cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let gap = (0..2).flat_map(|c| (0..3).map(move |d| (c, d))).map(|(c, d)| (cents[c][d] - sums[c][d] / 500.0).abs()).fold(0.0, f64::max);
    outcome(
        increases == 0 && nondeterministic == 0 && gap <= 1e-6 && within(t, secs(30)),
        format!("{increases} objective increases, {nondeterministic} non-reproducible runs, cluster gap {gap:.1e}"),
    )
}

fn tmr(args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_tmr")).args(args).env("RUST_LOG", "warn").output()?;
    if !out.status.success() {
        return Err(tmretrieval::Error::InvalidParam(format!("tmr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))));
    }
    Ok(())
}

fn read_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            for (k, v) in read_tree(&path)? {
                out.insert(format!("{}/{k}", path.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path)?);
        }
    }
    Ok(out)
}

fn criterion_11() -> Result<Outcome> {
    let t = Instant::now();
    let dir = tempfile::tempdir()?;
    let root = dir.path();
    let synth = |out: &str| tmr(&["synth", "--output", out, "--seed", "5", "--distractors", "80", "--groups", "4", "--members", "3"]);
    let (c1, c2) = (root.join("corpus"), root.join("corpus-again"));
    synth(c1.to_str().unwrap())?;
    synth(c2.to_str().unwrap())?;
    let corpus_same = read_tree(&c1)? == read_tree(&c2)?;

    let cfg = root.join("run.cfg");
    fs::write(
        &cfg,
        "[run]\ncorpus = corpus\nmanifest = corpus/groups.csv\noutput = out\n\n[codebook]\nk = 64\n\n\
         [pipeline.color]\nfeature = hsv72\n\n[pipeline.words]\nfeature = sift\n\n[pipeline.both]\nfuse = color, words\n",
    )?;
    let cfg = cfg.to_str().unwrap();
    let mut reports = Vec::new();
    for out in ["run-a", "run-b"] {
        let out = root.join(out);
        let out = out.to_str().unwrap();
        for step in ["extract", "train-codebook", "index", "evaluate"] {
            tmr(&[step, "-c", cfg, "--output", out])?;
        }
        reports.push(read_tree(&Path::new(out).join("reports"))?);
    }
    let n = reports[0].len();
    let same = corpus_same && n == 6 && reports[0] == reports[1];
    outcome(same && within(t, secs(600)), format!("corpus identical: {corpus_same}; {n} report files, identical: {}", reports[0] == reports[1]))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome>); 11] = [
        ("rank metrics match brute force", criterion_1),
        ("tied scores share their mean position", criterion_2),
        ("inverted file equals dense cosine", criterion_3),
        ("distance metric properties", criterion_4),
        ("descriptor dimensions", criterion_5),
        ("folded orientations find inverted copies", criterion_6),
        ("text filtering improves keypoint retrieval", criterion_7),
        ("rank fusion matches the best constituent", criterion_8),
        ("local binary pattern invariances", criterion_9),
        ("k-means determinism and monotonicity", criterion_10),
        ("end-to-end runs are byte-identical", criterion_11),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!("criterion {:>2} {} {name}: {detail} [{:.1?}]", i + 1, if pass { "PASS" } else { "FAIL" }, t.elapsed());
        if !pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
