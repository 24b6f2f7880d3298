//! Text localisation by a multi-threshold connected-component sweep, and removal of
//! keypoints that fall on detected text.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::keypoints::DescriptorSet;
use crate::raster::GrayImage;

/// Pixel rectangle `[x0, x1) × [y0, y1)` with a detection confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub confidence: f64,
}

impl TextBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, confidence: f64) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidParam(format!("empty text box ({x0},{y0})-({x1},{y1})")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidParam(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self { x0, y0, x1, y1, confidence })
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= self.x0 as f32 && x < self.x1 as f32 && y >= self.y0 as f32 && y < self.y1 as f32
    }

    fn intersection(&self, o: &TextBox) -> u64 {
        let w = self.x1.min(o.x1).saturating_sub(self.x0.max(o.x0));
        let h = self.y1.min(o.y1).saturating_sub(self.y0.max(o.y0));
        w as u64 * h as u64
    }

    pub fn iou(&self, o: &TextBox) -> f64 {
        let inter = self.intersection(o);
        inter as f64 / (self.area() + o.area() - inter) as f64
    }

    fn union(&self, o: &TextBox) -> TextBox {
        TextBox {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
            confidence: self.confidence,
        }
    }
}

pub const TEXT_THRESHOLD_LEVELS: usize = 8;
pub const MIN_CHAR_HEIGHT: u32 = 8;
/// Tallest character, as a fraction of the longer image side.
pub const MAX_CHAR_HEIGHT_FRACTION: f64 = 0.8;
pub const CHAR_ASPECT_RANGE: (f64, f64) = (0.1, 1.5);
pub const CHAR_FILL_RANGE: (f64, f64) = (0.1, 0.95);
/// Widest stroke, as a fraction of component height.
pub const MAX_STROKE_FRACTION: f64 = 0.4;
/// Largest coefficient of variation of stroke width along the medial ridge.
pub const MAX_STROKE_CV: f64 = 0.5;
pub const DEDUP_IOU: f64 = 0.5;
/// Largest horizontal overlap of chained characters, as a fraction of the narrower width.
pub const MAX_NEIGHBOR_OVERLAP: f64 = 0.2;
const MIN_COMPONENT_AREA: usize = 12;

struct Component {
    bbox: TextBox,
    pixels: Vec<u32>,
}

fn components(mask: &[bool], w: usize, h: usize, max_height: u32) -> Vec<Component> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(p) = queue.pop_front() {
            pixels.push(p as u32);
            let (x, y) = (p % w, p / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        if pixels.len() >= MIN_COMPONENT_AREA && (y1 - y0) as u32 <= max_height {
            out.push(Component {
                bbox: TextBox { x0: x0 as u32, y0: y0 as u32, x1: x1 as u32, y1: y1 as u32, confidence: 0.0 },
                pixels,
            });
        }
    }
    out
}

/// Largest city-block distance to the background and the coefficient of variation
/// of distances on the medial ridge.
fn stroke_stats(c: &Component, img_w: usize) -> (f64, f64) {
    let (bw, bh) = (c.bbox.width() as usize + 2, c.bbox.height() as usize + 2);
    let mut dt = vec![0u32; bw * bh];
    for &p in &c.pixels {
        let (x, y) = (p as usize % img_w, p as usize / img_w);
        dt[(y - c.bbox.y0 as usize + 1) * bw + (x - c.bbox.x0 as usize + 1)] = u32::MAX / 2;
    }
    for y in 1..bh - 1 {
        for x in 1..bw - 1 {
            let i = y * bw + x;
            if dt[i] > 0 {
                dt[i] = dt[i].min(dt[i - 1] + 1).min(dt[i - bw] + 1);
            }
        }
    }
    for y in (1..bh - 1).rev() {
        for x in (1..bw - 1).rev() {
            let i = y * bw + x;
            if dt[i] > 0 {
                dt[i] = dt[i].min(dt[i + 1] + 1).min(dt[i + bw] + 1);
            }
        }
    }
    let mut ridge = Vec::new();
    let mut max = 0u32;
    for y in 1..bh - 1 {
        for x in 1..bw - 1 {
            let v = dt[y * bw + x];
            if v == 0 {
                continue;
            }
            max = max.max(v);
            let is_ridge = [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)]
                .iter()
                .all(|&(dx, dy)| dt[(y as isize + dy) as usize * bw + (x as isize + dx) as usize] <= v);
            if is_ridge {
                ridge.push(v as f64);
            }
        }
    }
    let mean = ridge.iter().sum::<f64>() / ridge.len() as f64;
    let var = ridge.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ridge.len() as f64;
    (max as f64, var.sqrt() / mean)
}

/// Confidence of a component being a character, or `None` if it is rejected.
/// The height test is mandatory; at least two of aspect, fill and stroke must pass.
fn char_confidence(c: &Component, img_w: usize, max_height: u32) -> Option<f64> {
    let (w, h) = (c.bbox.width() as f64, c.bbox.height() as f64);
    if c.bbox.height() < MIN_CHAR_HEIGHT || c.bbox.height() > max_height {
        return None;
    }
    let aspect = w / h;
    let fill = c.pixels.len() as f64 / (w * h);
    let (max_dt, cv) = stroke_stats(c, img_w);
    let passed = [
        (CHAR_ASPECT_RANGE.0..=CHAR_ASPECT_RANGE.1).contains(&aspect),
        (CHAR_FILL_RANGE.0..=CHAR_FILL_RANGE.1).contains(&fill),
        2.0 * max_dt <= MAX_STROKE_FRACTION * h && cv <= MAX_STROKE_CV,
    ]
    .iter()
    .filter(|&&p| p)
    .count();
    (passed >= 2).then(|| (1 + passed) as f64 / 4.0)
}

fn character_candidates(gray: &GrayImage) -> Vec<TextBox> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let max_height = (MAX_CHAR_HEIGHT_FRACTION * w.max(h) as f64).floor() as u32;
    let mut found = Vec::new();
    for level in 1..=TEXT_THRESHOLD_LEVELS {
        let t = (255 * level / (TEXT_THRESHOLD_LEVELS + 1)) as u8;
        for dark in [true, false] {
            let mask: Vec<bool> = gray.pixels().iter().map(|&v| if dark { v < t } else { v > t }).collect();
            for c in components(&mask, w, h, max_height) {
                if let Some(conf) = char_confidence(&c, w, max_height) {
                    found.push(TextBox { confidence: conf, ..c.bbox });
                }
            }
        }
    }
    // Stable sort keeps sweep order among equals, so the result is deterministic.
    found.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(b.area().cmp(&a.area())));
    let mut kept: Vec<TextBox> = Vec::new();
    for b in found {
        if kept.iter().all(|k| k.iou(&b) < DEDUP_IOU) {
            kept.push(b);
        }
    }
    kept
}

fn aligned_neighbors(a: &TextBox, b: &TextBox) -> bool {
    let (ha, hb) = (a.height() as f64, b.height() as f64);
    let hmax = ha.max(hb);
    if ha.min(hb) / hmax < 0.6 {
        return false;
    }
    let ca = (a.y0 + a.y1) as f64 / 2.0;
    let cb = (b.y0 + b.y1) as f64 / 2.0;
    if (ca - cb).abs() > 0.5 * hmax {
        return false;
    }
    // Characters sit side by side: little horizontal overlap, bounded gap.
    let gap = (b.x0 as f64 - a.x1 as f64).max(a.x0 as f64 - b.x1 as f64);
    let min_w = a.width().min(b.width()) as f64;
    gap >= -MAX_NEIGHBOR_OVERLAP * min_w && gap <= hmax
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Word boxes: chains of at least three aligned, similar-height character candidates.
/// Each box's confidence is the mean candidate confidence of its chain.
pub fn detect_text_regions(gray: &GrayImage) -> Vec<TextBox> {
    let cands = character_candidates(gray);
    let n = cands.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if aligned_neighbors(&cands[i], &cands[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // (box, confidence sum, member count) per chain, in order of first member.
    let mut groups: Vec<(usize, TextBox, f64, usize)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == root) {
            Some(g) => {
                g.1 = g.1.union(&cands[i]);
                g.2 += cands[i].confidence;
                g.3 += 1;
            }
            None => groups.push((root, cands[i], cands[i].confidence, 1)),
        }
    }
    let mut words: Vec<(TextBox, f64, usize)> =
        groups.into_iter().filter(|g| g.3 >= 3).map(|g| (g.1, g.2, g.3)).collect();
    let mut merged = true;
    while merged {
        merged = false;
        'outer: for i in 0..words.len() {
            for j in i + 1..words.len() {
                if words[i].0.intersection(&words[j].0) > 0 {
                    let (b, s, c) = words.remove(j);
                    words[i] = (words[i].0.union(&b), words[i].1 + s, words[i].2 + c);
                    merged = true;
                    break 'outer;
                }
            }
        }
    }
    words
        .into_iter()
        .map(|(b, sum, count)| TextBox { confidence: sum / count as f64, ..b })
        .collect()
}

/// Keeps the rows whose keypoint centre lies outside every box, in order.
pub fn filter_keypoints(set: &DescriptorSet, boxes: &[TextBox]) -> DescriptorSet {
    set.retain_by(|kp| !boxes.iter().any(|b| b.contains(kp.x, kp.y)))
}

/// CSV rows `image_id,x0,y0,x1,y1,confidence`.
pub fn write_text_boxes_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [TextBox])>, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::format(e.to_string());
    out.write_record(["image_id", "x0", "y0", "x1", "y1", "confidence"]).map_err(err)?;
    for (id, boxes) in rows {
        for b in boxes {
            out.write_record([
                id.to_string(),
                b.x0.to_string(),
                b.y0.to_string(),
                b.x1.to_string(),
                b.y1.to_string(),
                b.confidence.to_string(),
            ])
            .map_err(err)?;
        }
    }
    out.flush()?;
    Ok(())
}
