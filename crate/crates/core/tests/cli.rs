//! End-to-end runs of the `tmr` binary over small corpora in temporary directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tmretrieval::featfile::{read_keypoints, FeatureMatrix};
use tmretrieval::synth::{render_figure, render_word, FontStyle};

fn tmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmr")).args(args).env("RUST_LOG", "warn").output().expect("spawn tmr")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_figures(dir: &Path, n: u64) {
    fs::create_dir_all(dir).unwrap();
    for seed in 0..n {
        fs::write(dir.join(format!("fig{seed:02}.png")), render_figure(seed, 96).encode_png().unwrap()).unwrap();
    }
}

fn write_config(root: &Path, body: &str) -> PathBuf {
    let path = root.join("run.cfg");
    fs::write(&path, format!("[run]\ncorpus = corpus\nmanifest = corpus/groups.csv\noutput = out\n\n[codebook]\nk = 16\n\n{body}")).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let o = tmr(args);
    assert_eq!(code(&o), 0, "tmr {args:?}: {}", stderr(&o));
    o
}

#[test]
fn extract_writes_one_row_per_image() {
    let dir = tempfile::tempdir().unwrap();
    write_figures(&dir.path().join("corpus"), 10);
    let cfg = write_config(dir.path(), "[pipeline.color]\nfeature = hsv72\n");
    run_ok(&["extract", "-c", cfg.to_str().unwrap()]);
    let m = FeatureMatrix::load(&dir.path().join("out/features/hsv72.tmfeat")).unwrap();
    assert_eq!((m.rows(), m.dim), (10, 72));
}

#[test]
fn text_stripping_only_removes_keypoints() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    write_figures(&corpus, 4);
    for (i, word) in ["ACME", "NOVA", "ZENITH"].iter().enumerate() {
        let (img, _, _) = render_word(word, (160, 80), (10.0, 24.0), 5.0, FontStyle::Bold).unwrap();
        fs::write(corpus.join(format!("word{i}.png")), img.encode_png().unwrap()).unwrap();
    }
    let cfg = write_config(dir.path(), "[pipeline.words]\nfeature = sift\n");
    let cfg = cfg.to_str().unwrap();
    run_ok(&["extract", "-c", cfg]);
    run_ok(&["extract", "-c", cfg, "--strip-text"]);

    let per_image = |stream: &str| {
        let feats = dir.path().join("out/features");
        let m = FeatureMatrix::load(&feats.join(format!("{stream}.tmfeat"))).unwrap();
        let kps = read_keypoints(std::io::BufReader::new(fs::File::open(feats.join(format!("{stream}.tmkp"))).unwrap())).unwrap();
        m.to_sets(&kps).unwrap().into_iter().map(|(id, s)| (id, s.len())).collect::<std::collections::BTreeMap<_, _>>()
    };
    let full = per_image("sift");
    let stripped = per_image("sift.strip");
    for (id, &n) in &stripped {
        assert!(n <= full[id], "{id}: {n} > {}", full[id]);
    }
    assert!(stripped.values().sum::<usize>() < full.values().sum::<usize>());
    let boxes = fs::read_to_string(dir.path().join("out/text_boxes.csv")).unwrap();
    assert!(boxes.lines().any(|l| l.starts_with("word")), "{boxes}");
}

#[test]
fn empty_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("corpus")).unwrap();
    let cfg = write_config(dir.path(), "[pipeline.color]\nfeature = hsv72\n");
    let o = tmr(&["extract", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no images found"), "{}", stderr(&o));
}

#[test]
fn query_returns_the_image_itself_first() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    write_figures(&corpus, 10);
    let cfg = write_config(dir.path(), "[pipeline.color]\nfeature = hsv72\n\n[pipeline.texture]\nfeature = lbp\n");
    let cfg = cfg.to_str().unwrap();
    run_ok(&["extract", "-c", cfg]);
    run_ok(&["index", "-c", cfg]);
    let image = corpus.join("fig03.png");
    for pipeline in ["color", "texture"] {
        let o = run_ok(&["query", "-c", cfg, "--pipeline", pipeline, "--image", image.to_str().unwrap(), "--top", "3"]);
        let text = String::from_utf8(o.stdout).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let (id, score) = lines[0].split_once('\t').unwrap();
        assert_eq!(id, "fig03.png");
        assert_eq!(score.parse::<f64>().unwrap(), 0.0);
    }
    let o = run_ok(&["query", "-c", cfg, "--pipeline", "color", "--image", image.to_str().unwrap(), "--top", "50"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 10);
}

#[test]
fn undecodable_images_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    write_figures(&corpus, 3);
    fs::write(corpus.join("broken.png"), b"not a png").unwrap();
    let cfg = write_config(dir.path(), "[pipeline.color]\nfeature = hsv72\n");
    let cfg = cfg.to_str().unwrap();
    let o = tmr(&["extract", "-c", cfg]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("broken.png"));
    let m = FeatureMatrix::load(&dir.path().join("out/features/hsv72.tmfeat")).unwrap();
    assert_eq!(m.rows(), 3);

    run_ok(&["index", "-c", cfg]);
    let o = tmr(&["query", "-c", cfg, "--pipeline", "color", "--image", corpus.join("broken.png").to_str().unwrap()]);
    assert_ne!(code(&o), 0);
}

#[test]
fn evaluate_writes_reports_for_every_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    run_ok(&[
        "synth", "--output", corpus.to_str().unwrap(), "--seed", "4", "--distractors", "30", "--groups", "2", "--members", "3",
    ]);
    let cfg = write_config(dir.path(), "[pipeline.color]\nfeature = hsv72\n\n[pipeline.shape]\nfeature = gist\n");
    let cfg = cfg.to_str().unwrap();
    run_ok(&["extract", "-c", cfg]);
    run_ok(&["evaluate", "-c", cfg]);
    let out = dir.path().join("out");
    let summary = fs::read_to_string(out.join("summary.md")).unwrap();
    let hash = summary.lines().next().unwrap().strip_prefix("<!-- config_sha256=").unwrap().strip_suffix(" -->").unwrap();
    assert_eq!(hash.len(), 64);
    for p in ["color", "shape"] {
        let report = fs::read_to_string(out.join(format!("reports/{p}.csv"))).unwrap();
        assert!(report.starts_with(&format!("# pipeline={p} config_sha256={hash}\n")));
        // 2 groups of 3 members, one row per query
        assert_eq!(report.lines().count(), 2 + 6);
        assert_eq!(fs::read_to_string(out.join(format!("reports/{p}.pr.csv"))).unwrap().lines().count(), 2 + 11);
        assert!(summary.contains(p));
    }
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_figures(&dir.path().join("corpus"), 3);
    let cfg = write_config(dir.path(), "[pipeline.color]\nfeature = hsv72\n");
    let cfg = cfg.to_str().unwrap();
    run_ok(&["extract", "-c", cfg]);
    let o = tmr(&["evaluate", "-c", cfg]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("groups.csv"), "{}", stderr(&o));

    let fresh = tempfile::tempdir().unwrap();
    write_figures(&fresh.path().join("corpus"), 3);
    let cfg = write_config(fresh.path(), "[pipeline.color]\nfeature = hsv72\n");
    let o = tmr(&["index", "-c", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    write_figures(&dir.path().join("corpus"), 2);
    let cfg = write_config(dir.path(), "[pipeline.color]\nfeature = surf\n");
    assert_eq!(code(&tmr(&["extract", "-c", cfg.to_str().unwrap()])), 1);
    assert_eq!(code(&tmr(&["extract"])), 1);
    assert_eq!(code(&tmr(&["no-such-command"])), 1);
}

#[test]
fn fuse_and_import_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "doc_id,rank\nx,1\ny,2\nz,3\n").unwrap();
    fs::write(&b, "doc_id,rank\nz,1\nx,2\ny,3\n").unwrap();
    let out = dir.path().join("fused.csv");
    let o = tmr(&["fuse", "--input", a.to_str().unwrap(), "--input", b.to_str().unwrap(), "--query-id", "q", "--output", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fused = fs::read_to_string(&out).unwrap();
    let first = fused.lines().nth(1).unwrap();
    assert!(first.starts_with("x,"), "{fused}");

    let docs: Vec<(String, tmretrieval::global::DenseDescriptor)> = (0..5)
        .map(|i| (format!("img{i}"), tmretrieval::global::DenseDescriptor::new("ext", (0..16).map(|j| ((i * j) % 7) as f64).collect())))
        .collect();
    let feat = dir.path().join("ext.tmfeat");
    FeatureMatrix::from_dense("ext", &docs).unwrap().save(&feat).unwrap();
    let o = run_ok(&["import-features", "--file", feat.to_str().unwrap(), "--output", dir.path().join("out").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("5 rows of dim 16"));
    assert!(dir.path().join("out/indexes/ext.tmidx").exists());
}
