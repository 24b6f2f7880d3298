//! Property tests for the invariants of every module.

use proptest::prelude::*;
use std::collections::BTreeMap;

use tmretrieval::bench::{average_rank, normalized_rank, precision_recall_curve, resolve_ties};
use tmretrieval::codebook::{compute_idf, quantize, tfidf_weight, train_kmeans, KMeansConfig, TermCounts};
use tmretrieval::fusion::{irp_fuse, irp_score, FusionInput};
use tmretrieval::global::{color_histogram_hsv72, color_histogram_rgb, gist, lbp, LbpVariant, GIST_DIM};
use tmretrieval::index::{
    bovw_cosine_distance, build_dense, build_inverted, query_dense, query_inverted, read_index, AnyIndex, Ranking,
};
use tmretrieval::keypoints::{
    detect_dog_keypoints, orientation_bin, shape_context_counts, DescriptorSet, DogConfig, Keypoint, SiftExtractor, SiftFlavor,
};
use tmretrieval::metrics::{distance, normalize, Metric, MetricId, Normalization, SimilarityMatrix};
use tmretrieval::raster::{autocrop, hsv_to_rgb, invert_contrast, resize_bilinear, rgb_to_hsv, to_gray, GrayImage, RasterImage};
use tmretrieval::synth::{render_figure, render_word, FontStyle};
use tmretrieval::textmask::{detect_text_regions, filter_keypoints, TextBox};
use tmretrieval::global::DenseDescriptor;
use tmretrieval::codebook::BoVWVector;

fn rgb_image(max_side: u32) -> impl Strategy<Value = RasterImage> {
    (2..max_side, 2..max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), (w * h * 3) as usize).prop_map(move |p| RasterImage::new(w, h, p).unwrap())
    })
}

fn gray_image(min_side: u32, max_side: u32, max_value: u8) -> impl Strategy<Value = GrayImage> {
    (min_side..max_side, min_side..max_side).prop_flat_map(move |(w, h)| {
        proptest::collection::vec(0..=max_value, (w * h) as usize).prop_map(move |p| GrayImage::new(w, h, p).unwrap())
    })
}

/// Blocky random "logo": a few flat rectangles on white.
fn blocky_gray(seed: u64, side: u32) -> GrayImage {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move |m: u32| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 33) % m as u64) as u32
    };
    let rects: Vec<(u32, u32, u32, u32, u8)> = (0..4)
        .map(|_| {
            let (x0, y0) = (next(side - 12), next(side - 12));
            (x0, y0, x0 + 6 + next(side - x0 - 6), y0 + 6 + next(side - y0 - 6), next(200) as u8)
        })
        .collect();
    GrayImage::from_fn(side, side, |x, y| {
        rects.iter().rev().find(|r| x >= r.0 && x < r.2 && y >= r.1 && y < r.3).map_or(255, |r| r.4)
    })
}

fn vec_f64(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0f64..10.0, n)
}

fn hist(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        if s == 0.0 {
            v
        } else {
            v.iter().map(|x| x / s).collect()
        }
    })
}

fn term_counts(k: u32) -> impl Strategy<Value = TermCounts> {
    proptest::collection::btree_map(0..k, 1u32..6, 0..12)
}

fn ranking_from(query: &str, order: &[usize]) -> Ranking {
    Ranking::from_scores(query, order.iter().enumerate().map(|(pos, d)| (format!("d{d:03}"), pos as f64)).collect(), None)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    // raster

    #[test]
    fn double_inversion_restores_gray(img in rgb_image(24)) {
        let g = to_gray(&img);
        prop_assert_eq!(invert_contrast(&invert_contrast(&g)), g);
    }

    #[test]
    fn hsv_round_trip(rgb in any::<[u8; 3]>()) {
        let (h, s, v) = rgb_to_hsv(rgb);
        prop_assume!(s > 0.0);
        let back = hsv_to_rgb(h, s, v);
        for c in 0..3 {
            prop_assert!((back[c] - rgb[c] as f64 / 255.0).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn resize_to_same_size_is_identity(img in rgb_image(20)) {
        prop_assert_eq!(resize_bilinear(&img, img.width(), img.height()), img);
    }

    #[test]
    fn autocrop_is_idempotent(img in rgb_image(16), pad in 0u32..6, bg in any::<[u8; 3]>(), tol in 0u8..20) {
        let framed = RasterImage::from_fn(img.width() + 2 * pad, img.height() + 2 * pad, |x, y| {
            if x < pad || y < pad || x >= img.width() + pad || y >= img.height() + pad { bg } else { img.get(x - pad, y - pad) }
        });
        let once = autocrop(&framed, tol);
        prop_assert_eq!(autocrop(&once, tol), once);
    }

    // global features

    #[test]
    fn l1_histograms_sum_to_one(img in rgb_image(20)) {
        for d in [color_histogram_hsv72(&img), color_histogram_rgb(&img, 4).unwrap()] {
            prop_assert!((d.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lbp_base_ignores_gray_shift(g in gray_image(3, 20, 245)) {
        let shifted = GrayImage::from_fn(g.width(), g.height(), |x, y| g.get(x, y) + 10);
        let a = lbp(&g, 8, 1.0, LbpVariant::Base).unwrap();
        let b = lbp(&shifted, 8, 1.0, LbpVariant::Base).unwrap();
        prop_assert_eq!(a.values, b.values);
    }

    #[test]
    fn lbp_riu2_is_rotation_invariant(g in gray_image(3, 20, 255)) {
        let base = lbp(&g, 8, 1.0, LbpVariant::Riu2).unwrap();
        let mut r = g.clone();
        for _ in 0..3 {
            r = r.rotate90();
            prop_assert_eq!(&lbp(&r, 8, 1.0, LbpVariant::Riu2).unwrap().values, &base.values);
        }
    }

    #[test]
    fn gist_dim_is_fixed(g in gray_image(4, 40, 255)) {
        prop_assert_eq!(gist(&g).dim(), GIST_DIM);
    }

    // keypoints

    #[test]
    fn orientation_folding_ignores_half_turns(theta in -10.0f32..10.0, reference in 0.0f32..6.28) {
        let a = orientation_bin(theta, reference, 4, true);
        let b = orientation_bin(theta + std::f32::consts::PI, reference, 4, true);
        let d = (a - b).abs();
        prop_assert!(d < 1e-3 || (4.0 - d) < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn shape_context_rows_count_other_points(pts in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..40)) {
        for row in shape_context_counts(&pts) {
            prop_assert_eq!(row.iter().sum::<u32>() as usize, pts.len() - 1);
        }
    }

    // codebook

    #[test]
    fn quantize_matches_brute_force(seed in any::<u64>(), k in 1usize..16) {
        let dim = 4;
        let mut s = seed;
        let mut rnd = move || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); ((s >> 40) as f32) / (1u64 << 24) as f32 };
        let samples: Vec<f32> = (0..64 * dim).map(|_| rnd()).collect();
        let cb = train_kmeans("t", &samples, dim, KMeansConfig { k, max_iters: 5, seed }).unwrap();
        let mut set = DescriptorSet::empty("t", dim);
        for i in 0..20 {
            let row: Vec<f32> = (0..dim).map(|j| samples[(i * 3 + j) % samples.len()] + 0.01).collect();
            set.push(Keypoint::at(0.0, 0.0, 1.0), &row);
        }
        let counts = quantize(&set, &cb).unwrap();
        let mut brute = TermCounts::new();
        for row in set.rows() {
            let mut best = (f64::INFINITY, 0u32);
            for c in 0..cb.k() {
                let d: f64 = row.iter().zip(cb.centroid(c)).map(|(&a, &b)| (a as f64 - b) * (a as f64 - b)).sum();
                if d < best.0 { best = (d, c as u32); }
            }
            *brute.entry(best.1).or_insert(0) += 1;
        }
        prop_assert_eq!(counts, brute);
    }

    #[test]
    fn kmeans_is_bitwise_reproducible(seed in any::<u64>(), k in 1usize..8) {
        let samples: Vec<f32> = (0..200).map(|i| ((i as u64 * 2654435761 ^ seed) % 1000) as f32 / 1000.0).collect();
        let a = train_kmeans("t", &samples, 2, KMeansConfig { k, max_iters: 10, seed }).unwrap();
        let b = train_kmeans("t", &samples, 2, KMeansConfig { k, max_iters: 10, seed }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bovw_cosine_ignores_count_scaling(a in term_counts(20), b in term_counts(20), factor in 1u32..5) {
        let docs = vec![a.clone(), b.clone(), TermCounts::from([(0, 1)])];
        let idf = compute_idf(20, &docs);
        let scaled: TermCounts = a.iter().map(|(&w, &c)| (w, c * factor)).collect();
        let d1 = bovw_cosine_distance(&tfidf_weight(&a, &idf), &tfidf_weight(&b, &idf));
        let d2 = bovw_cosine_distance(&tfidf_weight(&scaled, &idf), &tfidf_weight(&b, &idf));
        prop_assert!((d1 - d2).abs() < 1e-12);
    }

    // metrics

    #[test]
    fn metrics_identity_and_symmetry(p in hist(8), q in hist(8)) {
        for id in MetricId::ALL {
            let m = Metric::for_dim(id, 8);
            // The L2 intersection reaches 0 on identical inputs only at unit L2 norm.
            let same = if id == MetricId::IntersectionL2 { normalize(&p, Normalization::L2) } else { p.clone() };
            prop_assert!(distance(&same, &same, &m).unwrap().abs() < 1e-12, "{id:?}");
            let (a, b) = (distance(&p, &q, &m).unwrap(), distance(&q, &p, &m).unwrap());
            prop_assert!((a - b).abs() < 1e-12, "{id:?}");
        }
    }

    #[test]
    fn triangle_inequality(p in vec_f64(6), q in vec_f64(6), r in vec_f64(6)) {
        for m in [Metric::Euclidean, Metric::Manhattan] {
            let d = |a: &[f64], b: &[f64]| distance(a, b, &m).unwrap();
            prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
        }
    }

    #[test]
    fn cosine_ignores_positive_scaling(p in vec_f64(6), q in vec_f64(6), s in 0.01f64..100.0) {
        let scaled: Vec<f64> = p.iter().map(|x| x * s).collect();
        let a = distance(&p, &q, &Metric::Cosine).unwrap();
        let b = distance(&scaled, &q, &Metric::Cosine).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn quadratic_identity_is_squared_euclidean(p in vec_f64(5), q in vec_f64(5)) {
        let m = Metric::Quadratic(std::sync::Arc::new(SimilarityMatrix::identity(5)));
        let e = distance(&p, &q, &Metric::Euclidean).unwrap();
        prop_assert!((distance(&p, &q, &m).unwrap() - e * e).abs() < 1e-9);
    }

    #[test]
    fn euclidean_ranking_equals_squared_ranking(docs in proptest::collection::vec(vec_f64(4), 2..30), q in vec_f64(4)) {
        let named: Vec<(String, DenseDescriptor)> =
            docs.iter().enumerate().map(|(i, d)| (format!("d{i:02}"), DenseDescriptor::new("x", d.clone()))).collect();
        let idx = build_dense(named, Normalization::None).unwrap();
        let qd = DenseDescriptor::new("x", q.clone());
        let r = query_dense(&idx, "q", &qd, &Metric::Euclidean, None).unwrap();
        let sq = Metric::Quadratic(std::sync::Arc::new(SimilarityMatrix::identity(4)));
        let r2 = query_dense(&idx, "q", &qd, &sq, None).unwrap();
        let squared: BTreeMap<&str, f64> = r2.entries.iter().map(|e| (e.doc_id.as_str(), e.score)).collect();
        let in_euclidean_order: Vec<f64> = r.doc_ids().map(|d| squared[d]).collect();
        prop_assert!(in_euclidean_order.windows(2).all(|w| w[0] <= w[1] + 1e-9));
    }

    // index

    #[test]
    fn inverted_ranking_equals_dense_cosine(docs in proptest::collection::vec(term_counts(30), 1..60), q in term_counts(30)) {
        let idf = compute_idf(30, &docs);
        let vecs: Vec<(String, BoVWVector)> = docs.iter().enumerate().map(|(i, c)| (format!("d{i:03}"), tfidf_weight(c, &idf))).collect();
        let inv = build_inverted("w", 30, vecs.clone()).unwrap();
        let qv = tfidf_weight(&q, &idf);
        let a = query_inverted(&inv, "q", &qv, None).unwrap();
        let dense_docs = vecs.iter().map(|(id, v)| (id.clone(), DenseDescriptor::new("w", v.densify(30)))).collect();
        let dense = build_dense(dense_docs, Normalization::None).unwrap();
        let b = query_dense(&dense, "q", &DenseDescriptor::new("w", qv.densify(30)), &Metric::Cosine, None).unwrap();
        prop_assert_eq!(a.len(), b.len());
        let dense_scores: BTreeMap<&str, f64> = b.entries.iter().map(|e| (e.doc_id.as_str(), e.score)).collect();
        for e in &a.entries {
            prop_assert!((e.score - dense_scores[e.doc_id.as_str()]).abs() < 1e-6);
        }
        prop_assert!(a.entries.windows(2).all(|w| w[0].score <= w[1].score));
    }

    #[test]
    fn inverted_index_file_round_trip_is_bitwise(docs in proptest::collection::vec(term_counts(25), 1..30), q in term_counts(25)) {
        let idf = compute_idf(25, &docs);
        let vecs = docs.iter().enumerate().map(|(i, c)| (format!("d{i:03}"), tfidf_weight(c, &idf))).collect();
        let mut inv = build_inverted("w", 25, vecs).unwrap();
        inv.idf = Some(idf.clone());
        let mut buf = Vec::new();
        inv.write_to(&mut buf).unwrap();
        let AnyIndex::Inverted(back) = read_index(&buf[..]).unwrap() else { panic!("wrong index kind") };
        let qv = tfidf_weight(&q, &idf);
        let a: Vec<u64> = inv.distances(&qv).iter().map(|d| d.to_bits()).collect();
        let b: Vec<u64> = back.distances(&qv).iter().map(|d| d.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    // text

    #[test]
    fn filtering_partitions_keypoints(
        pts in proptest::collection::vec((0.0f32..100.0, 0.0f32..100.0), 0..50),
        boxes in proptest::collection::vec((0u32..90, 0u32..90, 1u32..30, 1u32..30), 0..4),
    ) {
        let mut set = DescriptorSet::empty("sift", 1);
        for (i, &(x, y)) in pts.iter().enumerate() {
            set.push(Keypoint::at(x, y, 1.0), &[i as f32]);
        }
        let boxes: Vec<TextBox> = boxes.iter().map(|&(x, y, w, h)| TextBox::new(x, y, x + w, y + h, 1.0).unwrap()).collect();
        let kept = filter_keypoints(&set, &boxes);
        let inside = set.keypoints.iter().filter(|k| boxes.iter().any(|b| b.contains(k.x, k.y))).count();
        prop_assert_eq!(kept.len() + inside, set.len());
        // Rows keep their original order: the payload is the row index.
        let idx: Vec<f32> = kept.rows().map(|r| r[0]).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        for (row, kp) in kept.rows().zip(&kept.keypoints) {
            prop_assert_eq!(&set.keypoints[row[0] as usize], kp);
        }
    }

    // fusion

    #[test]
    fn irp_score_bounds(ranks in proptest::collection::vec(1.0f64..500.0, 1..6)) {
        let n = ranks.len() as f64;
        let s = irp_score(&ranks);
        let min = ranks.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(s >= min / n - 1e-12 && s <= min + 1e-12);
        let harmonic = n / ranks.iter().map(|r| 1.0 / r).sum::<f64>();
        prop_assert!((s - harmonic / n).abs() < 1e-12);
    }

    #[test]
    fn irp_is_order_independent(
        perms in proptest::collection::vec(Just((0..20).collect::<Vec<usize>>()).prop_shuffle(), 2..5),
        rot in 0usize..5,
    ) {
        let rankings: Vec<Ranking> = perms.iter().map(|p| ranking_from("q", p)).collect();
        let mut rotated = rankings.clone();
        rotated.rotate_left(rot % rankings.len());
        let a = irp_fuse(&FusionInput::new("q", rankings)).unwrap();
        let b = irp_fuse(&FusionInput::new("q", rotated)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn irp_of_copies_keeps_order(perm in Just((0..30).collect::<Vec<usize>>()).prop_shuffle(), m in 1usize..5) {
        let r = ranking_from("q", &perm);
        let fused = irp_fuse(&FusionInput::new("q", vec![r.clone(); m])).unwrap();
        prop_assert_eq!(fused.doc_ids().collect::<Vec<_>>(), r.doc_ids().collect::<Vec<_>>());
    }

    // bench

    #[test]
    fn tie_resolution_preserves_rank_sum(scores in proptest::collection::vec(0u8..6, 1..80)) {
        let raw = Ranking::from_scores("q", scores.iter().enumerate().map(|(i, &s)| (format!("d{i:03}"), s as f64)).collect(), None);
        let tied = resolve_ties(&raw);
        let n = scores.len() as f64;
        prop_assert_eq!(tied.entries.iter().map(|e| e.rank).sum::<f64>(), n * (n + 1.0) / 2.0);
    }

    #[test]
    fn normalized_rank_zero_iff_perfect(n in 5usize..200, picks in proptest::collection::btree_set(1usize..200, 1..5)) {
        let ranks: Vec<f64> = picks.iter().filter(|&&r| r <= n).map(|&r| r as f64).collect();
        prop_assume!(!ranks.is_empty());
        let k = ranks.len();
        let perfect = ranks.iter().enumerate().all(|(i, &r)| r == (i + 1) as f64);
        let v = normalized_rank(&ranks, n).unwrap();
        prop_assert_eq!(v == 0.0, perfect);
        let avg = average_rank(&ranks).unwrap();
        let eq = (k as f64 * avg - (k * (k + 1)) as f64 / 2.0) / (n * k) as f64;
        prop_assert!((v - eq).abs() < 1e-12);
    }

    #[test]
    fn recall_strictly_increases_to_one(perm in Just((0..25).collect::<Vec<usize>>()).prop_shuffle(), rel in proptest::collection::btree_set(0usize..25, 1..6)) {
        let r = ranking_from("q", &perm);
        let relevant: Vec<String> = rel.iter().map(|d| format!("d{d:03}")).collect();
        let curve = precision_recall_curve(&r, &relevant).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].recall < w[1].recall));
        prop_assert_eq!(curve.last().unwrap().recall, 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dog_detection_is_deterministic_across_pools(seed in any::<u64>()) {
        let g = blocky_gray(seed, 64);
        let cfg = DogConfig::default();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| detect_dog_keypoints(&g, &cfg)).unwrap();
        let b = four.install(|| detect_dog_keypoints(&g, &cfg)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(detect_dog_keypoints(&g, &cfg).unwrap(), a);
    }

    #[test]
    fn one_descriptor_row_per_keypoint(seed in any::<u64>()) {
        let g = blocky_gray(seed, 64);
        let ex = SiftExtractor::default();
        for flavor in [SiftFlavor::Sift, SiftFlavor::OrSift] {
            let set = ex.extract(&g, flavor).unwrap();
            prop_assert_eq!(set.keypoints.len(), set.len());
            prop_assert_eq!(set.vectors.len(), set.len() * flavor.dim());
        }
    }

    #[test]
    fn text_detection_is_deterministic(word in "[A-Z]{3,7}", cell in 3.0f64..6.0) {
        let (img, _, _) = render_word(&word, (200, 80), (8.0, 20.0), cell, FontStyle::Regular).unwrap();
        let g = to_gray(&img);
        prop_assert_eq!(detect_text_regions(&g), detect_text_regions(&g));
    }
}

#[test]
fn colour_histogram_survives_resizing() {
    let mut worst = (0.0f64, 0u64, 0u32);
    for seed in 0..10 {
        let img = render_figure(seed, 128);
        let base = color_histogram_hsv72(&img);
        for side in [64, 96, 192, 256] {
            let other = color_histogram_hsv72(&resize_bilinear(&img, side, side));
            let l1: f64 = base.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum();
            if l1 > worst.0 {
                worst = (l1, seed, side);
            }
        }
    }
    assert!(worst.0 < 0.05, "figure {} at {}px: L1 {}", worst.1, worst.2, worst.0);
}
