//! Local features: difference-of-Gaussians keypoints with SIFT and orientation-folded
//! (contrast-invariant) SIFT descriptors, dense HOG blocks, shape context, and
//! same-scale keypoint triplets.

use std::collections::BTreeSet;
use std::f32::consts::PI;

use crate::codebook::{Codebook, TermCounts};
use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::raster::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Gaussian sigma in base-image pixels.
    pub scale: f32,
    /// Radians in `[0, 2π)`, measured with `atan2(dy, dx)` in image coordinates.
    pub orientation: f32,
    /// Absolute interpolated DoG value; 0 for keypoints that do not come from the detector.
    pub response: f32,
    pub octave: u32,
    pub layer: u32,
}

impl Keypoint {
    pub fn at(x: f32, y: f32, scale: f32) -> Self {
        Self { x, y, scale, orientation: 0.0, response: 0.0, octave: 0, layer: 0 }
    }
}

/// Discrete scale index of a keypoint (`scales_per_octave` levels per doubling of sigma).
pub fn scale_level(scale: f32, cfg: &DogConfig) -> i32 {
    (cfg.scales_per_octave as f32 * (scale / cfg.sigma0).log2()).round() as i32
}

/// Variable-count descriptors of one image, one row per keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub feature_id: String,
    pub dim: usize,
    pub keypoints: Vec<Keypoint>,
    pub vectors: Vec<f32>,
}

impl DescriptorSet {
    pub fn empty(feature_id: impl Into<String>, dim: usize) -> Self {
        Self { feature_id: feature_id.into(), dim, keypoints: Vec::new(), vectors: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim.max(1)).take(self.len())
    }

    pub fn push(&mut self, kp: Keypoint, row: &[f32]) {
        assert_eq!(row.len(), self.dim);
        self.keypoints.push(kp);
        self.vectors.extend_from_slice(row);
    }

    /// Rows for which `keep` returns true, order preserved.
    pub fn retain_by(&self, mut keep: impl FnMut(&Keypoint) -> bool) -> DescriptorSet {
        let mut out = DescriptorSet::empty(self.feature_id.clone(), self.dim);
        for (i, kp) in self.keypoints.iter().enumerate() {
            if keep(kp) {
                out.push(*kp, self.row(i));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DogConfig {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub sigma0: f32,
    /// Minimum |DoG| at the refined extremum, intensities in `[0, 1]`.
    pub contrast_threshold: f32,
    /// Maximum principal-curvature ratio.
    pub edge_threshold: f32,
    /// Strongest-first cap on keypoints per image.
    pub max_keypoints: usize,
}

impl Default for DogConfig {
    fn default() -> Self {
        Self {
            octaves: 4,
            scales_per_octave: 3,
            sigma0: 1.6,
            contrast_threshold: 0.03,
            edge_threshold: 10.0,
            max_keypoints: 2000,
        }
    }
}

/// Assumed blur of the input image.
const INPUT_SIGMA: f32 = 0.5;
const MIN_SIDE: u32 = 16;

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

struct ScaleSpace {
    octaves: Vec<Octave>,
}

impl ScaleSpace {
    fn build(gray: &GrayImage, cfg: &DogConfig) -> Self {
        let s = cfg.scales_per_octave;
        let k = 2f32.powf(1.0 / s as f32);
        let mut base = Plane::from_gray(gray)
            .blur((cfg.sigma0 * cfg.sigma0 - INPUT_SIGMA * INPUT_SIGMA).max(0.01).sqrt());
        let mut octaves = Vec::new();
        for o in 0..cfg.octaves {
            if o > 0 && (base.w < 8 || base.h < 8) {
                break;
            }
            let mut gauss = vec![base.clone()];
            for i in 1..s + 3 {
                let prev = cfg.sigma0 * k.powi(i as i32 - 1);
                let cur = prev * k;
                let step = (cur * cur - prev * prev).sqrt();
                let next = gauss[i - 1].blur(step);
                gauss.push(next);
            }
            let dog = gauss.windows(2).map(|w| w[1].sub(&w[0])).collect();
            base = gauss[s].downsample();
            octaves.push(Octave { gauss, dog });
        }
        Self { octaves }
    }
}

fn is_extremum(dog: &[Plane], i: usize, x: usize, y: usize) -> bool {
    let v = dog[i].at(x, y);
    let mut is_max = v > 0.0;
    let mut is_min = v < 0.0;
    for plane in &dog[i - 1..=i + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = plane.at(xx, yy);
                is_max &= v >= n;
                is_min &= v <= n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

fn solve3(h: [[f32; 3]; 3], g: [f32; 3]) -> Option<[f32; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
        - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = h;
        for r in 0..3 {
            m[r][c] = g[r];
        }
        let d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        *o = d / det;
    }
    Some(out)
}

struct Refined {
    x: usize,
    y: usize,
    layer: usize,
    offset: [f32; 3],
    value: f32,
}

fn refine(dog: &[Plane], mut layer: usize, mut x: usize, mut y: usize, cfg: &DogConfig) -> Option<Refined> {
    let s = cfg.scales_per_octave;
    let (w, h) = (dog[0].w, dog[0].h);
    for _ in 0..5 {
        let d = |l: usize, dx: isize, dy: isize| dog[l].at((x as isize + dx) as usize, (y as isize + dy) as usize);
        let v = d(layer, 0, 0);
        let g = [
            0.5 * (d(layer, 1, 0) - d(layer, -1, 0)),
            0.5 * (d(layer, 0, 1) - d(layer, 0, -1)),
            0.5 * (d(layer + 1, 0, 0) - d(layer - 1, 0, 0)),
        ];
        let dxx = d(layer, 1, 0) + d(layer, -1, 0) - 2.0 * v;
        let dyy = d(layer, 0, 1) + d(layer, 0, -1) - 2.0 * v;
        let dss = d(layer + 1, 0, 0) + d(layer - 1, 0, 0) - 2.0 * v;
        let dxy = 0.25 * (d(layer, 1, 1) - d(layer, -1, 1) - d(layer, 1, -1) + d(layer, -1, -1));
        let dxs = 0.25 * (d(layer + 1, 1, 0) - d(layer + 1, -1, 0) - d(layer - 1, 1, 0) + d(layer - 1, -1, 0));
        let dys = 0.25 * (d(layer + 1, 0, 1) - d(layer + 1, 0, -1) - d(layer - 1, 0, 1) + d(layer - 1, 0, -1));
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let sol = solve3(hess, g)?;
        let off = [-sol[0], -sol[1], -sol[2]];
        if off.iter().all(|o| o.abs() < 0.5) {
            let value = v + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
            if value.abs() < cfg.contrast_threshold {
                return None;
            }
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            let r = cfg.edge_threshold;
            if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
                return None;
            }
            return Some(Refined { x, y, layer, offset: off, value });
        }
        if off.iter().any(|o| !o.is_finite() || o.abs() > 1e3) {
            return None;
        }
        let nx = x as isize + off[0].round() as isize;
        let ny = y as isize + off[1].round() as isize;
        let nl = layer as isize + off[2].round() as isize;
        if nl < 1 || nl > s as isize || nx < 1 || ny < 1 || nx >= w as isize - 1 || ny >= h as isize - 1 {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    None
}

const ORI_BINS: usize = 36;

fn orientations(img: &Plane, x: usize, y: usize, sigma: f32) -> Vec<f32> {
    let radius = (3.0 * 1.5 * sigma).round() as isize;
    let wsig = 1.5 * sigma;
    let mut hist = [0f32; ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let px = x as isize + dx;
            let py = y as isize + dy;
            if px < 1 || py < 1 || px >= img.w as isize - 1 || py >= img.h as isize - 1 {
                continue;
            }
            let (px, py) = (px as usize, py as usize);
            let gx = img.at(px + 1, py) - img.at(px - 1, py);
            let gy = img.at(px, py + 1) - img.at(px, py - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let ang = gy.atan2(gx).rem_euclid(2.0 * PI);
            let w = (-((dx * dx + dy * dy) as f32) / (2.0 * wsig * wsig)).exp();
            let bin = ((ang * ORI_BINS as f32 / (2.0 * PI)).round() as usize) % ORI_BINS;
            hist[bin] += w * mag;
        }
    }
    let mut smooth = [0f32; ORI_BINS];
    for i in 0..ORI_BINS {
        let at = |o: isize| hist[(i as isize + o).rem_euclid(ORI_BINS as isize) as usize];
        smooth[i] = (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0;
    }
    let max = smooth.iter().cloned().fold(0.0, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..ORI_BINS {
        let l = smooth[(i + ORI_BINS - 1) % ORI_BINS];
        let r = smooth[(i + 1) % ORI_BINS];
        let c = smooth[i];
        if c > l && c > r && c >= 0.8 * max {
            let shift = 0.5 * (l - r) / (l - 2.0 * c + r);
            let bin = i as f32 + shift;
            out.push((bin * 2.0 * PI / ORI_BINS as f32).rem_euclid(2.0 * PI));
        }
    }
    out
}

fn detect_in(space: &ScaleSpace, cfg: &DogConfig) -> Vec<Keypoint> {
    let s = cfg.scales_per_octave;
    let prefilter = 0.5 * cfg.contrast_threshold;
    let mut kps = Vec::new();
    for (o, oct) in space.octaves.iter().enumerate() {
        let (w, h) = (oct.dog[0].w, oct.dog[0].h);
        if w < 3 || h < 3 {
            continue;
        }
        let factor = (1u32 << o) as f32;
        for layer in 1..=s {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    if oct.dog[layer].at(x, y).abs() <= prefilter || !is_extremum(&oct.dog, layer, x, y) {
                        continue;
                    }
                    let Some(r) = refine(&oct.dog, layer, x, y, cfg) else { continue };
                    let sigma_oct = cfg.sigma0 * 2f32.powf((r.layer as f32 + r.offset[2]) / s as f32);
                    let kx = (r.x as f32 + r.offset[0]) * factor;
                    let ky = (r.y as f32 + r.offset[1]) * factor;
                    let kx = kx.clamp(0.0, (w as f32 * factor) - 1.0);
                    let ky = ky.clamp(0.0, (h as f32 * factor) - 1.0);
                    for ori in orientations(&oct.gauss[r.layer], r.x, r.y, sigma_oct) {
                        kps.push(Keypoint {
                            x: kx,
                            y: ky,
                            scale: sigma_oct * factor,
                            orientation: ori,
                            response: r.value.abs(),
                            octave: o as u32,
                            layer: r.layer as u32,
                        });
                    }
                }
            }
        }
    }
    // stable: equal responses keep scan order
    kps.sort_by(|a, b| b.response.total_cmp(&a.response));
    kps.truncate(cfg.max_keypoints);
    kps
}

/// Scale-space extrema of the difference-of-Gaussians pyramid, sub-pixel refined,
/// with low-contrast and edge responses rejected.
pub fn detect_dog_keypoints(gray: &GrayImage, cfg: &DogConfig) -> Result<Vec<Keypoint>> {
    check_size(gray)?;
    Ok(detect_in(&ScaleSpace::build(gray, cfg), cfg))
}

fn check_size(gray: &GrayImage) -> Result<()> {
    if gray.width() < MIN_SIDE || gray.height() < MIN_SIDE {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} is below the {MIN_SIDE}x{MIN_SIDE} keypoint minimum",
            gray.width(),
            gray.height()
        )));
    }
    Ok(())
}

/// Gradient-orientation descriptor families built on the same 4×4 spatial grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiftFlavor {
    /// 8 orientation bins over the full circle, 128-d.
    Sift,
    /// Orientations folded modulo π, 4 bins, 64-d; invariant to contrast inversion.
    OrSift,
}

impl SiftFlavor {
    pub fn feature_id(self) -> &'static str {
        match self {
            SiftFlavor::Sift => "sift",
            SiftFlavor::OrSift => "orsift",
        }
    }

    pub fn orientation_bins(self) -> usize {
        match self {
            SiftFlavor::Sift => 8,
            SiftFlavor::OrSift => 4,
        }
    }

    pub fn dim(self) -> usize {
        SIFT_GRID * SIFT_GRID * self.orientation_bins()
    }

    fn period(self) -> f32 {
        match self {
            SiftFlavor::Sift => 2.0 * PI,
            SiftFlavor::OrSift => PI,
        }
    }
}

const SIFT_GRID: usize = 4;
const SIFT_CELL_SIGMAS: f32 = 3.0;
const SIFT_CLAMP: f32 = 0.2;

/// Continuous orientation-bin coordinate of angle `theta` relative to `reference`,
/// in `[0, bins)`. With folding the period is π, so `theta` and `theta + π` land in
/// the same place.
pub fn orientation_bin(theta: f32, reference: f32, bins: usize, folded: bool) -> f32 {
    let period = if folded { PI } else { 2.0 * PI };
    let rel = (theta - reference).rem_euclid(period);
    let b = rel * bins as f32 / period;
    if b >= bins as f32 { 0.0 } else { b }
}

fn describe_one(img: &Plane, kp: &Keypoint, flavor: SiftFlavor) -> Option<Vec<f32>> {
    let factor = (1u32 << kp.octave) as f32;
    let cx = kp.x / factor;
    let cy = kp.y / factor;
    if cx < 1.0 || cy < 1.0 || cx > img.w as f32 - 2.0 || cy > img.h as f32 - 2.0 {
        return None;
    }
    let sigma = kp.scale / factor;
    let n = flavor.orientation_bins();
    let d = SIFT_GRID;
    let folded = flavor == SiftFlavor::OrSift;
    let reference = kp.orientation.rem_euclid(flavor.period());
    let (sin_t, cos_t) = reference.sin_cos();
    let hist_width = SIFT_CELL_SIGMAS * sigma;
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round() as isize;
    let ix = cx.round() as isize;
    let iy = cy.round() as isize;
    let mut hist = vec![0f32; (d + 2) * (d + 2) * (n + 2)];
    let hidx = |r: usize, c: usize, o: usize| (r * (d + 2) + c) * (n + 2) + o;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let px = ix + dx;
            let py = iy + dy;
            if px < 1 || py < 1 || px >= img.w as isize - 1 || py >= img.h as isize - 1 {
                continue;
            }
            let fx = (px as f32 - cx) / hist_width;
            let fy = (py as f32 - cy) / hist_width;
            // rotate into the keypoint frame
            let u = fx * cos_t + fy * sin_t;
            let v = -fx * sin_t + fy * cos_t;
            let cbin = u + d as f32 / 2.0 - 0.5;
            let rbin = v + d as f32 / 2.0 - 0.5;
            if cbin <= -1.0 || rbin <= -1.0 || cbin >= d as f32 || rbin >= d as f32 {
                continue;
            }
            let (pxu, pyu) = (px as usize, py as usize);
            let gx = img.at(pxu + 1, pyu) - img.at(pxu - 1, pyu);
            let gy = img.at(pxu, pyu + 1) - img.at(pxu, pyu - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let obin = orientation_bin(gy.atan2(gx), reference, n, folded);
            let weight = (-(u * u + v * v) / (0.5 * (d * d) as f32)).exp() * mag;

            let r0 = rbin.floor();
            let c0 = cbin.floor();
            let o0 = obin.floor();
            let (dr, dc, dob) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0, o0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize, o0 as usize);
            for (ri, wr) in [(0, 1.0 - dr), (1, dr)] {
                for (ci, wc) in [(0, 1.0 - dc), (1, dc)] {
                    for (oi, wo) in [(0, 1.0 - dob), (1, dob)] {
                        hist[hidx(r0 + ri, c0 + ci, o0 + oi)] += weight * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut desc = vec![0f32; d * d * n];
    for r in 0..d {
        for c in 0..d {
            for o in 0..n + 2 {
                // wrap the circular orientation overflow bins
                let target = if o >= n { o - n } else { o };
                desc[(r * d + c) * n + target] += hist[hidx(r + 1, c + 1, o)];
            }
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm <= 1e-12 {
        return None;
    }
    let clamp = SIFT_CLAMP * norm;
    desc.iter_mut().for_each(|v| *v = v.min(clamp));
    let norm = desc.iter().map(|v| v * v).sum::<f32>().sqrt();
    desc.iter_mut().for_each(|v| *v /= norm);
    Some(desc)
}

fn describe_in(space: &ScaleSpace, keypoints: &[Keypoint], flavor: SiftFlavor) -> DescriptorSet {
    let mut set = DescriptorSet::empty(flavor.feature_id(), flavor.dim());
    for kp in keypoints {
        let Some(oct) = space.octaves.get(kp.octave as usize) else { continue };
        let Some(img) = oct.gauss.get(kp.layer as usize) else { continue };
        if let Some(desc) = describe_one(img, kp, flavor) {
            set.push(*kp, &desc);
        }
    }
    set
}

/// Detection plus description with a shared scale space.
#[derive(Debug, Clone, Default)]
pub struct SiftExtractor {
    pub config: DogConfig,
}

impl SiftExtractor {
    pub fn new(config: DogConfig) -> Self {
        Self { config }
    }

    pub fn detect(&self, gray: &GrayImage) -> Result<Vec<Keypoint>> {
        detect_dog_keypoints(gray, &self.config)
    }

    /// Describe externally supplied keypoints (normally from [`Self::detect`] on the same image).
    pub fn describe(&self, gray: &GrayImage, keypoints: &[Keypoint], flavor: SiftFlavor) -> Result<DescriptorSet> {
        check_size(gray)?;
        Ok(describe_in(&ScaleSpace::build(gray, &self.config), keypoints, flavor))
    }

    pub fn extract(&self, gray: &GrayImage, flavor: SiftFlavor) -> Result<DescriptorSet> {
        check_size(gray)?;
        let space = ScaleSpace::build(gray, &self.config);
        let kps = detect_in(&space, &self.config);
        Ok(describe_in(&space, &kps, flavor))
    }
}

/// 128-d SIFT descriptors for `keypoints`, default detector configuration.
pub fn describe_sift(gray: &GrayImage, keypoints: &[Keypoint]) -> Result<DescriptorSet> {
    SiftExtractor::default().describe(gray, keypoints, SiftFlavor::Sift)
}

/// 64-d orientation-folded SIFT descriptors for `keypoints`.
pub fn describe_orsift(gray: &GrayImage, keypoints: &[Keypoint]) -> Result<DescriptorSet> {
    SiftExtractor::default().describe(gray, keypoints, SiftFlavor::OrSift)
}

pub const HOG_BINS: usize = 9;
pub const HOG_DIM: usize = 4 * HOG_BINS;

/// Unsigned gradient orientation bin (20° each) used by HOG.
pub fn hog_bin(gx: f32, gy: f32) -> usize {
    let theta = gy.atan2(gx).rem_euclid(PI);
    ((theta * HOG_BINS as f32 / PI) as usize).min(HOG_BINS - 1)
}

/// Dense HOG: 9-bin cells of `cell_px` pixels, 2×2-cell blocks at every cell offset,
/// each block L2-normalized (all-zero blocks stay zero).
pub fn describe_hog_dense(gray: &GrayImage, cell_px: usize) -> Result<DescriptorSet> {
    if cell_px == 0 {
        return Err(Error::InvalidParam("HOG cell size must be positive".into()));
    }
    let img = Plane::from_gray(gray);
    let ncx = img.w / cell_px;
    let ncy = img.h / cell_px;
    if ncx < 2 || ncy < 2 {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} holds fewer than 2x2 cells of {cell_px} px",
            img.w, img.h
        )));
    }
    let mut cells = vec![[0f32; HOG_BINS]; ncx * ncy];
    for y in 0..ncy * cell_px {
        for x in 0..ncx * cell_px {
            let (xi, yi) = (x as isize, y as isize);
            let gx = img.at_clamped(xi + 1, yi) - img.at_clamped(xi - 1, yi);
            let gy = img.at_clamped(xi, yi + 1) - img.at_clamped(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                cells[(y / cell_px) * ncx + x / cell_px][hog_bin(gx, gy)] += mag;
            }
        }
    }
    let mut set = DescriptorSet::empty("hog", HOG_DIM);
    for by in 0..ncy - 1 {
        for bx in 0..ncx - 1 {
            let mut block = Vec::with_capacity(HOG_DIM);
            for (cx, cy) in [(bx, by), (bx + 1, by), (bx, by + 1), (bx + 1, by + 1)] {
                block.extend_from_slice(&cells[cy * ncx + cx]);
            }
            let norm = block.iter().map(|v| v * v).sum::<f32>().sqrt();
            if norm > 0.0 {
                block.iter_mut().for_each(|v| *v /= norm);
            }
            let kp = Keypoint::at(((bx + 1) * cell_px) as f32, ((by + 1) * cell_px) as f32, cell_px as f32);
            set.push(kp, &block);
        }
    }
    Ok(set)
}

pub const SC_RADIAL_BINS: usize = 5;
pub const SC_ANGULAR_BINS: usize = 12;
pub const SC_DIM: usize = SC_RADIAL_BINS * SC_ANGULAR_BINS;
const SC_R_INNER: f64 = 0.125;
const SC_R_OUTER: f64 = 2.0;
/// Fraction of the maximum Sobel magnitude above which a pixel counts as edge.
pub const SC_EDGE_FRACTION: f32 = 0.2;
pub const SC_DEFAULT_SAMPLES: usize = 100;

/// Edge pixels (Sobel magnitude at least 0.2 of the maximum) in raster order.
pub fn edge_pixels(gray: &GrayImage) -> Vec<(usize, usize)> {
    let mag = Plane::from_gray(gray).sobel_magnitude();
    let max = mag.data.iter().cloned().fold(0.0, f32::max);
    // Below a tenth of one grey level: rounding noise on flat images.
    if max < 1e-4 {
        return Vec::new();
    }
    let t = SC_EDGE_FRACTION * max;
    let mut out = Vec::new();
    for y in 0..mag.h {
        for x in 0..mag.w {
            if mag.at(x, y) >= t {
                out.push((x, y));
            }
        }
    }
    out
}

fn sc_radial_bin(r: f64) -> usize {
    let lo = SC_R_INNER.ln();
    let hi = SC_R_OUTER.ln();
    if r <= 0.0 {
        return 0;
    }
    let t = (r.ln() - lo) / (hi - lo) * SC_RADIAL_BINS as f64;
    if t < 0.0 {
        0
    } else {
        (t as usize).min(SC_RADIAL_BINS - 1)
    }
}

/// Unnormalized log-polar histograms (5 radial × 12 angular) for every point against
/// all others, radii divided by the mean pairwise distance. Row `i` sums to `n - 1`.
pub fn shape_context_counts(points: &[(f64, f64)]) -> Vec<[u32; SC_DIM]> {
    let n = points.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt();
            pairs += 1;
        }
    }
    let mean = if pairs > 0 { total / pairs as f64 } else { 0.0 };
    let mut out = vec![[0u32; SC_DIM]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dx = points[j].0 - points[i].0;
            let dy = points[j].1 - points[i].1;
            let d = (dx * dx + dy * dy).sqrt();
            let r = if mean > 0.0 { d / mean } else { 0.0 };
            let theta = dy.atan2(dx).rem_euclid(2.0 * std::f64::consts::PI);
            let a = ((theta * SC_ANGULAR_BINS as f64 / (2.0 * std::f64::consts::PI)) as usize).min(SC_ANGULAR_BINS - 1);
            row[sc_radial_bin(r) * SC_ANGULAR_BINS + a] += 1;
        }
    }
    out
}

/// Points sampled every `⌊E / n⌋`-th edge pixel; errors when fewer than `n` edges exist.
pub fn sample_edge_points(gray: &GrayImage, n_samples: usize) -> Result<Vec<(f64, f64)>> {
    let edges = edge_pixels(gray);
    if n_samples < 2 || edges.len() < n_samples {
        return Err(Error::InsufficientEdges { needed: n_samples.max(2), found: edges.len() });
    }
    let step = edges.len() / n_samples;
    Ok(edges
        .iter()
        .step_by(step)
        .take(n_samples)
        .map(|&(x, y)| (x as f64, y as f64))
        .collect())
}

/// Shape-context descriptors (60-d, rows L1-normalized) at `n_samples` edge points.
pub fn shape_context(gray: &GrayImage, n_samples: usize) -> Result<DescriptorSet> {
    let points = sample_edge_points(gray, n_samples)?;
    let counts = shape_context_counts(&points);
    let mut set = DescriptorSet::empty("shapecontext", SC_DIM);
    for (p, c) in points.iter().zip(&counts) {
        let total: u32 = c.iter().sum();
        let row: Vec<f32> = c.iter().map(|&v| if total > 0 { v as f32 / total as f32 } else { 0.0 }).collect();
        set.push(Keypoint::at(p.0 as f32, p.1 as f32, 1.0), &row);
    }
    Ok(set)
}

/// Sorted visual-word triple of three same-scale neighboring keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripletCode {
    pub words: [u32; 3],
    pub scale_level: i32,
}

/// Histogram width for hashed triplet codes.
pub const TRIPLET_BINS: u32 = 10_007;

impl TripletCode {
    pub fn bin(&self) -> u32 {
        // FNV-1a over the three word ids
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in self.words {
            for b in w.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        (h % TRIPLET_BINS as u64) as u32
    }
}

/// Within every discrete scale level, each keypoint forms a triplet with its two
/// nearest same-level neighbors; codes are the sorted word ids, deduplicated.
pub fn group_triplets(set: &DescriptorSet, codebook: &Codebook) -> Result<Vec<TripletCode>> {
    group_triplets_with(set, codebook, &DogConfig::default())
}

pub fn group_triplets_with(set: &DescriptorSet, codebook: &Codebook, cfg: &DogConfig) -> Result<Vec<TripletCode>> {
    if set.dim != codebook.dim() {
        return Err(Error::DimMismatch { expected: codebook.dim(), got: set.dim });
    }
    let words: Vec<u32> = set.rows().map(|r| codebook.assign(r)).collect();
    let mut by_level: std::collections::BTreeMap<i32, Vec<usize>> = Default::default();
    for (i, kp) in set.keypoints.iter().enumerate() {
        by_level.entry(scale_level(kp.scale, cfg)).or_default().push(i);
    }
    let mut codes = BTreeSet::new();
    for (&level, members) in &by_level {
        if members.len() < 3 {
            continue;
        }
        for &i in members {
            let a = &set.keypoints[i];
            let mut others: Vec<(f32, usize)> = members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| {
                    let b = &set.keypoints[j];
                    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2), j)
                })
                .collect();
            others.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
            let mut w = [words[i], words[others[0].1], words[others[1].1]];
            w.sort_unstable();
            codes.insert(TripletCode { words: w, scale_level: level });
        }
    }
    Ok(codes.into_iter().collect())
}

/// Hashed triplet-code histogram, usable wherever BoVW term counts are.
pub fn triplet_counts(codes: &[TripletCode]) -> TermCounts {
    let mut counts = TermCounts::new();
    for c in codes {
        *counts.entry(c.bin()).or_insert(0) += 1;
    }
    counts
}
