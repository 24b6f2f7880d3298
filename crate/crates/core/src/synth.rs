//! Deterministic synthetic trademark corpus: vector marks (figures and bitmap-font
//! words) rendered with 2×2 supersampling, plus query groups of transformed variants.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bench::QueryGroup;
use crate::error::{Error, Result};
use crate::raster::{hsv_to_rgb, RasterImage};

/// Corpus composition counts of the reference trademark registry: text-only,
/// figure-only and combined marks.
pub const REGISTRY_TEXT_ONLY: u64 = 583_715;
pub const REGISTRY_FIGURE_ONLY: u64 = 19_214;
pub const REGISTRY_COMBINED: u64 = 310_804;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub text_only: usize,
    pub figure_only: usize,
    pub combined: usize,
    pub groups: usize,
    pub members_per_group: usize,
    /// Square canvas side in pixels.
    pub canvas: u32,
    /// Members other than the base are rescaled by up to ±30%.
    pub scale: bool,
    /// Members other than the base are rotated by up to ±15°.
    pub rotation: bool,
    /// The last member is a colour-inverted duplicate of the base.
    pub inversion: bool,
    /// Every member, base included, carries its own random word.
    pub text_contamination: bool,
    /// Group base marks may include a word under the figure.
    pub group_base_text: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::with_distractors(0, 200, 10, 4)
    }
}

impl SynthSpec {
    /// Spec whose distractors follow the registry's text/figure/combined proportions.
    pub fn with_distractors(seed: u64, distractors: usize, groups: usize, members_per_group: usize) -> Self {
        let (text_only, figure_only, combined) = registry_split(distractors);
        Self {
            seed,
            text_only,
            figure_only,
            combined,
            groups,
            members_per_group,
            canvas: 128,
            scale: true,
            rotation: true,
            inversion: false,
            text_contamination: false,
            group_base_text: true,
        }
    }

    pub fn distractors(&self) -> usize {
        self.text_only + self.figure_only + self.combined
    }

    pub fn validate(&self) -> Result<()> {
        if self.members_per_group < 2 {
            return Err(Error::InvalidParam("members per group must be at least 2".into()));
        }
        if self.canvas < 32 {
            return Err(Error::InvalidParam(format!("canvas {} is below 32 px", self.canvas)));
        }
        Ok(())
    }
}

/// Largest-remainder split of `n` distractors in registry proportions.
pub fn registry_split(n: usize) -> (usize, usize, usize) {
    let weights = [REGISTRY_TEXT_ONLY, REGISTRY_FIGURE_ONLY, REGISTRY_COMBINED];
    let total: u64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights.iter().map(|&w| (n as u64 * w / total) as usize).collect();
    let mut rem: Vec<(u64, usize)> = weights.iter().enumerate().map(|(i, &w)| (n as u64 * w % total, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = n - counts.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(short) {
        counts[i] += 1;
    }
    (counts[0], counts[1], counts[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkKind {
    TextOnly,
    FigureOnly,
    Combined,
}

impl MarkKind {
    pub fn name(self) -> &'static str {
        match self {
            MarkKind::TextOnly => "text",
            MarkKind::FigureOnly => "figure",
            MarkKind::Combined => "combined",
        }
    }
}

impl fmt::Display for MarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Similarity transform about the canvas centre, plus colour inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub scale: f64,
    pub rotation_deg: f64,
    pub invert: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { scale: 1.0, rotation_deg: 0.0, invert: false };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub kind: MarkKind,
    pub group_id: Option<String>,
    /// Pixel bounds `[x0, y0, x1, y1)` of every rendered word.
    pub text_bounds: Vec<[u32; 4]>,
    pub transform: Transform,
    /// Bounds of words added on top of the mark after the transform.
    pub contamination_bounds: Vec<[u32; 4]>,
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    pub image: RasterImage,
    pub annotation: Annotation,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub images: Vec<SynthImage>,
    pub groups: Vec<QueryGroup>,
}

impl SynthCorpus {
    /// Ids of images that belong to no group: the retrieval corpus proper.
    pub fn distractor_ids(&self) -> Vec<String> {
        self.images.iter().filter(|i| i.annotation.group_id.is_none()).map(|i| i.id.clone()).collect()
    }

    pub fn image(&self, id: &str) -> Option<&SynthImage> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Writes images as PNG under `dir`, plus `groups.csv` and `annotations.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        for img in &self.images {
            let path = dir.join(&img.id);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, img.image.encode_png()?)?;
        }
        crate::bench::write_manifest(&self.groups, fs::File::create(dir.join("groups.csv"))?)?;
        let mut w = csv::Writer::from_path(dir.join("annotations.csv")).map_err(csv_err)?;
        w.write_record(["image_id", "kind", "group_id", "scale", "rotation_deg", "inverted", "text_bounds", "contamination_bounds"])
            .map_err(csv_err)?;
        for img in &self.images {
            let a = &img.annotation;
            w.write_record([
                a.image_id.clone(),
                a.kind.to_string(),
                a.group_id.clone().unwrap_or_default(),
                format!("{:.4}", a.transform.scale),
                format!("{:.4}", a.transform.rotation_deg),
                (a.transform.invert as u8).to_string(),
                bounds_field(&a.text_bounds),
                bounds_field(&a.contamination_bounds),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(e.to_string())
}

fn bounds_field(b: &[[u32; 4]]) -> String {
    b.iter().map(|r| format!("{} {} {} {}", r[0], r[1], r[2], r[3])).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Circle { cx: f64, cy: f64, r: f64 },
    Ring { cx: f64, cy: f64, outer: f64, inner: f64 },
    Polygon(Vec<(f64, f64)>),
    Stroke { a: (f64, f64), b: (f64, f64), half_width: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn bounds(&self) -> [f64; 4] {
        match self {
            Shape::Circle { cx, cy, r } => [cx - r, cy - r, cx + r, cy + r],
            Shape::Ring { cx, cy, outer, .. } => [cx - outer, cy - outer, cx + outer, cy + outer],
            Shape::Polygon(pts) => pts.iter().fold([f64::MAX, f64::MAX, f64::MIN, f64::MIN], |b, &(x, y)| {
                [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)]
            }),
            Shape::Stroke { a, b, half_width: h } => [a.0.min(b.0) - h, a.1.min(b.1) - h, a.0.max(b.0) + h, a.1.max(b.1) + h],
            Shape::Rect { x0, y0, x1, y1 } => [*x0, *y0, *x1, *y1],
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Circle { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Ring { cx, cy, outer, inner } => {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                d2 <= outer * outer && d2 >= inner * inner
            }
            Shape::Polygon(pts) => {
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
            Shape::Stroke { a, b, half_width } => {
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 { (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (px, py) = (a.0 + t * dx - x, a.1 + t * dy - y);
                px * px + py * py <= half_width * half_width
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= *x0 && x < *x1 && y >= *y0 && y < *y1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    shape: Shape,
    bounds: [f64; 4],
    color: [u8; 3],
}

impl Layer {
    fn new(shape: Shape, color: [u8; 3]) -> Self {
        Self { bounds: shape.bounds(), shape, color }
    }

    fn hit(&self, x: f64, y: f64) -> bool {
        x >= self.bounds[0] && x <= self.bounds[2] && y >= self.bounds[1] && y <= self.bounds[3] && self.shape.contains(x, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Design {
    background: [u8; 3],
    layers: Vec<Layer>,
    /// Design-space bounds of each word.
    words: Vec<[f64; 4]>,
}

const GLYPHS: [[&str; 7]; 26] = [
    [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
    [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."],
    ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
    ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
    [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"],
    ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
    ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
    ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
    ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
    ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
    ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"],
    [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
    [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
    ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
    [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
    ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
    ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."],
    ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
    ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
    ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
];

/// Bitmap font variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FontStyle {
    Regular,
    Bold,
    Condensed,
}

impl FontStyle {
    /// (cell width, lit-cell width) relative to cell height.
    fn widths(self) -> (f64, f64) {
        match self {
            FontStyle::Regular => (1.0, 1.0),
            FontStyle::Bold => (1.0, 1.5),
            FontStyle::Condensed => (0.7, 0.7),
        }
    }
}

/// Width of `len` glyphs at cell height `cell`.
fn word_width(len: usize, cell: f64, style: FontStyle) -> f64 {
    let (cw, lit) = style.widths();
    (len as f64 * 6.0 - 2.0) * cw * cell + lit * cell
}

/// Rectangles of a rendered word whose top-left corner is `(x, y)`, and its bounds.
fn word_rects(word: &str, x: f64, y: f64, cell: f64, style: FontStyle) -> (Vec<Shape>, [f64; 4]) {
    let (cw, lit) = style.widths();
    let mut rects = Vec::new();
    for (i, ch) in word.bytes().enumerate() {
        let g = &GLYPHS[(ch.to_ascii_uppercase() - b'A') as usize % 26];
        let gx = x + i as f64 * 6.0 * cw * cell;
        for (row, line) in g.iter().enumerate() {
            for (col, c) in line.bytes().enumerate() {
                if c == b'#' {
                    let x0 = gx + col as f64 * cw * cell;
                    rects.push(Shape::Rect { x0, y0: y + row as f64 * cell, x1: x0 + lit * cell, y1: y + (row + 1) as f64 * cell });
                }
            }
        }
    }
    (rects, [x, y, x + word_width(word.len(), cell, style), y + 7.0 * cell])
}

fn random_word(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| (b'A' + rng.gen_range(0..26u8)) as char).collect()
}

fn random_style(rng: &mut ChaCha8Rng) -> FontStyle {
    [FontStyle::Regular, FontStyle::Bold, FontStyle::Condensed][rng.gen_range(0..3)]
}

fn mark_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    let h = rng.gen_range(0.0..360.0);
    let s = rng.gen_range(0.5..1.0);
    let v = rng.gen_range(0.15..0.75);
    hsv_to_rgb(h, s, v).map(|c| (c * 255.0).round() as u8)
}

fn background_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    if rng.gen_bool(0.85) {
        [255, 255, 255]
    } else {
        let h = rng.gen_range(0.0..360.0);
        hsv_to_rgb(h, rng.gen_range(0.05..0.2), 1.0).map(|c| (c * 255.0).round() as u8)
    }
}

/// 1 to 3 primitives inside `[x0, x1) × [y0, y1)`.
fn figure_layers(rng: &mut ChaCha8Rng, region: [f64; 4]) -> Vec<Layer> {
    let [x0, y0, x1, y1] = region;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let half = (x1 - x0).min(y1 - y0) / 2.0;
    let n = rng.gen_range(1..=3);
    let mut layers = Vec::new();
    for i in 0..n {
        // Later primitives are smaller and offset so they stay visible on top.
        let size = half * if i == 0 { rng.gen_range(0.75..1.0) } else { rng.gen_range(0.3..0.6) };
        let (ox, oy) = if i == 0 {
            (0.0, 0.0)
        } else {
            (rng.gen_range(-0.4..0.4) * half, rng.gen_range(-0.4..0.4) * half)
        };
        let (px, py) = (cx + ox, cy + oy);
        let shape = match rng.gen_range(0..5) {
            0 => Shape::Circle { cx: px, cy: py, r: size },
            1 => Shape::Ring { cx: px, cy: py, outer: size, inner: size * rng.gen_range(0.45..0.75) },
            2 => {
                let sides = rng.gen_range(3..=6);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let star = sides >= 5 && rng.gen_bool(0.4);
                let count = if star { sides * 2 } else { sides };
                Shape::Polygon(
                    (0..count)
                        .map(|k| {
                            let r = if star && k % 2 == 1 { size * 0.45 } else { size };
                            let a = phase + k as f64 * std::f64::consts::TAU / count as f64;
                            (px + r * a.cos(), py + r * a.sin())
                        })
                        .collect(),
                )
            }
            3 => {
                let a = rng.gen_range(0.0..std::f64::consts::PI);
                let (dx, dy) = (size * a.cos(), size * a.sin());
                Shape::Stroke { a: (px - dx, py - dy), b: (px + dx, py + dy), half_width: size * rng.gen_range(0.12..0.3) }
            }
            _ => {
                let w = size * rng.gen_range(0.5..1.0);
                let h = size * rng.gen_range(0.5..1.0);
                Shape::Rect { x0: px - w, y0: py - h, x1: px + w, y1: py + h }
            }
        };
        layers.push(Layer::new(shape, mark_color(rng)));
    }
    layers
}

/// Word layers fitted into `region`, centred.
fn word_layers(rng: &mut ChaCha8Rng, region: [f64; 4], min_len: usize, max_len: usize, color: [u8; 3]) -> (Vec<Layer>, [f64; 4]) {
    let word = random_word(rng, min_len, max_len);
    let style = random_style(rng);
    let [x0, y0, x1, y1] = region;
    let cell = ((y1 - y0) / 7.0).min((x1 - x0) / word_width(word.len(), 1.0, style));
    let (w, h) = (word_width(word.len(), cell, style), 7.0 * cell);
    let (ox, oy) = (x0 + (x1 - x0 - w) / 2.0, y0 + (y1 - y0 - h) / 2.0);
    let (rects, bounds) = word_rects(&word, ox, oy, cell, style);
    (rects.into_iter().map(|s| Layer::new(s, color)).collect(), bounds)
}

fn random_design(rng: &mut ChaCha8Rng, kind: MarkKind, size: f64) -> Design {
    let background = background_color(rng);
    let mut layers = Vec::new();
    let mut words = Vec::new();
    match kind {
        MarkKind::FigureOnly => layers.extend(figure_layers(rng, [0.15 * size, 0.15 * size, 0.85 * size, 0.85 * size])),
        MarkKind::TextOnly => {
            let top = rng.gen_range(0.3..0.45) * size;
            let color = mark_color(rng);
            let (l, b) = word_layers(rng, [0.08 * size, top, 0.92 * size, size - top], 3, 8, color);
            layers.extend(l);
            words.push(b);
        }
        MarkKind::Combined => {
            layers.extend(figure_layers(rng, [0.2 * size, 0.08 * size, 0.8 * size, 0.64 * size]));
            let color = mark_color(rng);
            let (l, b) = word_layers(rng, [0.1 * size, 0.7 * size, 0.9 * size, 0.9 * size], 3, 7, color);
            layers.extend(l);
            words.push(b);
        }
    }
    Design { background, layers, words }
}

/// Renders `design` under `xf` (about the canvas centre), then draws `overlay`
/// untransformed on top.
fn render(design: &Design, size: u32, xf: Transform, overlay: &[Layer]) -> RasterImage {
    let c = size as f64 / 2.0;
    let (sin, cos) = (-xf.rotation_deg.to_radians()).sin_cos();
    let inv = 1.0 / xf.scale;
    let mut img = RasterImage::from_fn(size, size, |px, py| {
        let mut acc = [0u32; 3];
        for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
            let (x, y) = (px as f64 + sx, py as f64 + sy);
            let color = match overlay.iter().rev().find(|l| l.hit(x, y)) {
                Some(l) => l.color,
                None => {
                    let (dx, dy) = ((x - c) * inv, (y - c) * inv);
                    let (ux, uy) = (c + dx * cos - dy * sin, c + dx * sin + dy * cos);
                    design.layers.iter().rev().find(|l| l.hit(ux, uy)).map_or(design.background, |l| l.color)
                }
            };
            for k in 0..3 {
                acc[k] += color[k] as u32;
            }
        }
        acc.map(|a| ((a + 2) / 4) as u8)
    });
    if xf.invert {
        img = img.inverted();
    }
    img
}

/// Pixel bounds of a design-space rectangle after `xf`, clipped to the canvas.
fn transformed_bounds(b: [f64; 4], size: u32, xf: Transform) -> Option<[u32; 4]> {
    let c = size as f64 / 2.0;
    let (sin, cos) = xf.rotation_deg.to_radians().sin_cos();
    let corners = [(b[0], b[1]), (b[2], b[1]), (b[0], b[3]), (b[2], b[3])];
    let pts: Vec<(f64, f64)> = corners
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = ((x - c) * xf.scale, (y - c) * xf.scale);
            (c + dx * cos - dy * sin, c + dx * sin + dy * cos)
        })
        .collect();
    let clip = |v: f64| v.clamp(0.0, size as f64);
    let x0 = clip(pts.iter().map(|p| p.0).fold(f64::MAX, f64::min)).floor() as u32;
    let y0 = clip(pts.iter().map(|p| p.1).fold(f64::MAX, f64::min)).floor() as u32;
    let x1 = clip(pts.iter().map(|p| p.0).fold(f64::MIN, f64::max)).ceil() as u32;
    let y1 = clip(pts.iter().map(|p| p.1).fold(f64::MIN, f64::max)).ceil() as u32;
    (x0 < x1 && y0 < y1).then_some([x0, y0, x1, y1])
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn distractor_kind(spec: &SynthSpec, i: usize) -> MarkKind {
    if i < spec.text_only {
        MarkKind::TextOnly
    } else if i < spec.text_only + spec.figure_only {
        MarkKind::FigureOnly
    } else {
        MarkKind::Combined
    }
}

/// Contamination word inside a band at the top or bottom edge.
fn contamination(rng: &mut ChaCha8Rng, size: f64) -> (Vec<Layer>, [f64; 4]) {
    let top = rng.gen_bool(0.5);
    let (y0, y1) = if top { (0.02 * size, 0.15 * size) } else { (0.85 * size, 0.98 * size) };
    let len = rng.gen_range(4..=7);
    let style = random_style(rng);
    let cell = (y1 - y0) / 7.0;
    let w = word_width(len, cell, style);
    let x0 = rng.gen_range(0.02 * size..(0.98 * size - w).max(0.02 * size + 1e-9));
    let word = random_word(rng, len, len);
    let color = mark_color(rng);
    let (rects, bounds) = word_rects(&word, x0, y0, cell, style);
    (rects.into_iter().map(|s| Layer::new(s, color)).collect(), bounds)
}

fn to_pixel_bounds(b: [f64; 4], size: u32) -> Option<[u32; 4]> {
    transformed_bounds(b, size, Transform::IDENTITY)
}

fn render_group(spec: &SynthSpec, g: usize) -> Vec<SynthImage> {
    let mut rng = stream_rng(spec.seed, (1 << 40) + g as u64);
    let size = spec.canvas;
    let kind = if spec.group_base_text && rng.gen_bool(0.5) { MarkKind::Combined } else { MarkKind::FigureOnly };
    let design = random_design(&mut rng, kind, size as f64);
    let group_id = format!("g{g:03}");
    let shrink = if spec.text_contamination { 0.7 } else { 1.0 };
    let m = spec.members_per_group;
    (0..m)
        .map(|j| {
            let mut xf = Transform { scale: shrink, ..Transform::IDENTITY };
            if spec.inversion && j == m - 1 {
                xf.invert = true;
            } else if j > 0 {
                if spec.scale {
                    xf.scale *= 1.0 + rng.gen_range(-0.3..0.3);
                }
                if spec.rotation {
                    xf.rotation_deg = rng.gen_range(-15.0..15.0);
                }
            }
            let (overlay, extra) = if spec.text_contamination {
                let (l, b) = contamination(&mut rng, size as f64);
                (l, to_pixel_bounds(b, size).into_iter().collect())
            } else {
                (Vec::new(), Vec::new())
            };
            let mut text_bounds: Vec<[u32; 4]> = design.words.iter().filter_map(|&b| transformed_bounds(b, size, xf)).collect();
            text_bounds.extend(extra.iter().copied());
            let id = format!("groups/{group_id}/m{j:02}.png");
            SynthImage {
                image: render(&design, size, xf, &overlay),
                annotation: Annotation {
                    image_id: id.clone(),
                    kind,
                    group_id: Some(group_id.clone()),
                    text_bounds,
                    transform: xf,
                    contamination_bounds: extra,
                },
                id,
            }
        })
        .collect()
}

fn render_distractor(spec: &SynthSpec, i: usize) -> SynthImage {
    let mut rng = stream_rng(spec.seed, i as u64);
    let kind = distractor_kind(spec, i);
    let design = random_design(&mut rng, kind, spec.canvas as f64);
    let id = format!("distractors/d{i:05}.png");
    SynthImage {
        image: render(&design, spec.canvas, Transform::IDENTITY, &[]),
        annotation: Annotation {
            image_id: id.clone(),
            kind,
            group_id: None,
            text_bounds: design.words.iter().filter_map(|&b| to_pixel_bounds(b, spec.canvas)).collect(),
            transform: Transform::IDENTITY,
            contamination_bounds: Vec::new(),
        },
        id,
    }
}

/// Generates the corpus; identical specs give identical images.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut images: Vec<SynthImage> = (0..spec.distractors()).into_par_iter().map(|i| render_distractor(spec, i)).collect();
    let members: Vec<Vec<SynthImage>> = (0..spec.groups).into_par_iter().map(|g| render_group(spec, g)).collect();
    let mut groups = Vec::with_capacity(spec.groups);
    for (g, m) in members.into_iter().enumerate() {
        groups.push(QueryGroup::new(format!("g{g:03}"), m.iter().map(|i| i.id.clone()).collect())?);
        images.extend(m);
    }
    Ok(SynthCorpus { images, groups })
}

/// A single word drawn in `color` on a white canvas, with the exact count of pixels
/// whose supersamples are all inside glyph cells, and the word bounds.
pub fn render_word(word: &str, canvas: (u32, u32), origin: (f64, f64), cell: f64, style: FontStyle) -> Result<(RasterImage, Vec<(u32, u32)>, [u32; 4])> {
    if word.is_empty() || !word.bytes().all(|b| b.is_ascii_alphabetic()) {
        return Err(Error::InvalidParam(format!("word {word:?} must be non-empty ASCII letters")));
    }
    let (rects, bounds) = word_rects(word, origin.0, origin.1, cell, style);
    let layers: Vec<Layer> = rects.into_iter().map(|s| Layer::new(s, [0, 0, 0])).collect();
    let img = RasterImage::from_fn(canvas.0, canvas.1, |px, py| {
        let hits = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
            .iter()
            .filter(|(sx, sy)| layers.iter().any(|l| l.hit(px as f64 + sx, py as f64 + sy)))
            .count() as u32;
        let v = (255 * (4 - hits) + 2) / 4;
        [v as u8; 3]
    });
    let glyph_pixels = (0..canvas.1)
        .flat_map(|y| (0..canvas.0).map(move |x| (x, y)))
        .filter(|&(x, y)| img.get(x, y)[0] == 0)
        .collect();
    let b = [
        bounds[0].floor().max(0.0) as u32,
        bounds[1].floor().max(0.0) as u32,
        (bounds[2].ceil() as u32).min(canvas.0),
        (bounds[3].ceil() as u32).min(canvas.1),
    ];
    Ok((img, glyph_pixels, b))
}

/// A figure-only mark (circle and triangle) with random placement and colours.
pub fn render_figure(seed: u64, size: u32) -> RasterImage {
    let mut rng = stream_rng(seed, 1 << 50);
    let s = size as f64;
    let r = s * rng.gen_range(0.15..0.25);
    let (cx, cy) = (s * rng.gen_range(0.3..0.4), s * rng.gen_range(0.35..0.65));
    let t = s * rng.gen_range(0.15..0.25);
    let (tx, ty) = (s * rng.gen_range(0.6..0.72), s * rng.gen_range(0.35..0.65));
    let design = Design {
        background: background_color(&mut rng),
        layers: vec![
            Layer::new(Shape::Circle { cx, cy, r }, mark_color(&mut rng)),
            Layer::new(Shape::Polygon(vec![(tx, ty - t), (tx + t, ty + t), (tx - t, ty + t)]), mark_color(&mut rng)),
        ],
        words: Vec::new(),
    };
    render(&design, size, Transform::IDENTITY, &[])
}
