//! Fixed-length global descriptors: color histograms, local binary patterns and a
//! Gabor-energy GIST descriptor.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::metrics::{normalize, Normalization};
use crate::raster::{resize_gray, rgb_to_hsv, GrayImage, RasterImage};

/// One global feature vector for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDescriptor {
    pub feature_id: String,
    pub values: Vec<f64>,
}

impl DenseDescriptor {
    pub fn new(feature_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self { feature_id: feature_id.into(), values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn normalized(mut self, scheme: Normalization) -> Self {
        self.values = normalize(&self.values, scheme);
        self
    }
}

/// Upper hue boundaries (degrees) of the 8 non-uniform hue bins. Bin 0 wraps
/// around 0°, covering `[316, 360) ∪ [0, 20)`.
pub const HSV_HUE_EDGES: [f64; 8] = [20.0, 40.0, 75.0, 155.0, 190.0, 270.0, 295.0, 316.0];
/// Hue bin centers in degrees, used for the quadratic-form bin similarity.
pub const HSV_HUE_CENTERS: [f64; 8] = [348.0, 30.0, 57.5, 115.0, 172.5, 230.0, 282.5, 305.5];
pub const HSV_SAT_BINS: usize = 3;
pub const HSV_VAL_BINS: usize = 3;

fn hue_bin(h: f64) -> usize {
    if h >= HSV_HUE_EDGES[7] {
        return 0;
    }
    HSV_HUE_EDGES.iter().position(|&e| h < e).unwrap_or(0)
}

fn uniform_bin(x: f64, bins: usize) -> usize {
    ((x * bins as f64) as usize).min(bins - 1)
}

/// 72-bin bin index (`hue * 9 + sat * 3 + val`) of one pixel.
pub fn hsv72_bin(rgb: [u8; 3]) -> usize {
    let (h, s, v) = rgb_to_hsv(rgb);
    hue_bin(h) * HSV_SAT_BINS * HSV_VAL_BINS + uniform_bin(s, HSV_SAT_BINS) * HSV_VAL_BINS + uniform_bin(v, HSV_VAL_BINS)
}

/// L1-normalized 8×3×3 HSV histogram.
pub fn color_histogram_hsv72(img: &RasterImage) -> DenseDescriptor {
    let mut hist = vec![0.0; 72];
    for px in img.rgb_pixels() {
        hist[hsv72_bin(px)] += 1.0;
    }
    DenseDescriptor::new("hsv72", hist).normalized(Normalization::L1)
}

/// Uniformly quantized RGB histogram with 4 or 8 levels per channel, L1-normalized.
pub fn color_histogram_rgb(img: &RasterImage, bins_per_channel: usize) -> Result<DenseDescriptor> {
    if bins_per_channel != 4 && bins_per_channel != 8 {
        return Err(Error::InvalidParam(format!(
            "RGB histogram takes 4 or 8 bins per channel, got {bins_per_channel}"
        )));
    }
    let b = bins_per_channel;
    let mut hist = vec![0.0; b * b * b];
    for [r, g, bl] in img.rgb_pixels() {
        let q = |c: u8| c as usize * b / 256;
        hist[(q(r) * b + q(g)) * b + q(bl)] += 1.0;
    }
    Ok(DenseDescriptor::new(format!("rgb{}", b * b * b), hist).normalized(Normalization::L1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LbpVariant {
    Base,
    /// Rotation invariant: codes mapped to their minimum circular rotation.
    Ri,
    /// Uniform patterns (≤ 2 circular transitions) get their own bins.
    U2,
    /// Rotation-invariant uniform: bin = number of set bits, one bin for the rest.
    Riu2,
}

impl LbpVariant {
    pub fn name(self) -> &'static str {
        match self {
            LbpVariant::Base => "base",
            LbpVariant::Ri => "ri",
            LbpVariant::U2 => "u2",
            LbpVariant::Riu2 => "riu2",
        }
    }
}

impl fmt::Display for LbpVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LbpVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(LbpVariant::Base),
            "ri" => Ok(LbpVariant::Ri),
            "u2" => Ok(LbpVariant::U2),
            "riu2" => Ok(LbpVariant::Riu2),
            other => Err(Error::InvalidParam(format!("unknown LBP variant {other:?}"))),
        }
    }
}

fn rotate_bits(code: u32, p: u32) -> u32 {
    let mask = if p == 32 { u32::MAX } else { (1 << p) - 1 };
    ((code >> 1) | ((code & 1) << (p - 1))) & mask
}

fn min_rotation(code: u32, p: u32) -> u32 {
    let mut best = code;
    let mut c = code;
    for _ in 1..p {
        c = rotate_bits(c, p);
        best = best.min(c);
    }
    best
}

fn transitions(code: u32, p: u32) -> u32 {
    (code ^ rotate_bits(code, p)).count_ones()
}

/// Code-to-bin lookup table and histogram length for a variant.
pub fn lbp_mapping(p: u32, variant: LbpVariant) -> (Vec<u32>, usize) {
    let n = 1u32 << p;
    match variant {
        LbpVariant::Base => ((0..n).collect(), n as usize),
        LbpVariant::Ri => {
            let mins: Vec<u32> = (0..n).map(|c| min_rotation(c, p)).collect();
            let mut classes = mins.clone();
            classes.sort_unstable();
            classes.dedup();
            let table = mins.iter().map(|m| classes.binary_search(m).unwrap() as u32).collect();
            (table, classes.len())
        }
        LbpVariant::U2 => {
            let non_uniform = p * (p - 1) + 2;
            let mut next = 0;
            let table = (0..n)
                .map(|c| {
                    if transitions(c, p) <= 2 {
                        next += 1;
                        next - 1
                    } else {
                        non_uniform
                    }
                })
                .collect();
            debug_assert_eq!(next, non_uniform);
            (table, (p * (p - 1) + 3) as usize)
        }
        LbpVariant::Riu2 => {
            let table = (0..n)
                .map(|c| if transitions(c, p) <= 2 { c.count_ones() } else { p + 1 })
                .collect();
            (table, (p + 2) as usize)
        }
    }
}

/// Sign tolerance for interpolated neighbor comparisons: exact ties in real
/// arithmetic must not flip with float rounding.
const LBP_TIE_EPS: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Raw LBP code histogram (counts) with the neighbor circle sampled by bilinear
/// interpolation and `s(x) = 1` iff `x >= 0`.
pub fn lbp_counts(gray: &GrayImage, p: u32, r: f64, variant: LbpVariant) -> Result<Vec<f64>> {
    if !(4..=16).contains(&p) {
        return Err(Error::InvalidParam(format!("LBP neighbor count must be in 4..=16, got {p}")));
    }
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::InvalidParam(format!("LBP radius must be >= 1, got {r}")));
    }
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let margin = r.ceil() as usize;
    if w < 2 * margin + 1 || h < 2 * margin + 1 {
        return Err(Error::ImageTooSmall(format!(
            "{w}x{h} has no interior for LBP radius {r}"
        )));
    }
    let offsets: Vec<(f64, f64)> = (0..p)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / p as f64;
            (snap(r * a.cos()), snap(-r * a.sin()))
        })
        .collect();
    let (table, dim) = lbp_mapping(p, variant);
    let px = |x: isize, y: isize| gray.pixels()[y as usize * w + x as usize] as f64;
    let sample = |cx: usize, cy: usize, dx: f64, dy: f64| -> f64 {
        let fx = dx.floor();
        let fy = dy.floor();
        let tx = dx - fx;
        let ty = dy - fy;
        let x0 = cx as isize + fx as isize;
        let y0 = cy as isize + fy as isize;
        match (tx == 0.0, ty == 0.0) {
            (true, true) => px(x0, y0),
            (false, true) => px(x0, y0) + tx * (px(x0 + 1, y0) - px(x0, y0)),
            (true, false) => px(x0, y0) + ty * (px(x0, y0 + 1) - px(x0, y0)),
            (false, false) => {
                let top = px(x0, y0) + tx * (px(x0 + 1, y0) - px(x0, y0));
                let bot = px(x0, y0 + 1) + tx * (px(x0 + 1, y0 + 1) - px(x0, y0 + 1));
                top + ty * (bot - top)
            }
        }
    };
    let mut hist = vec![0.0; dim];
    for cy in margin..h - margin {
        for cx in margin..w - margin {
            let gc = px(cx as isize, cy as isize);
            let mut code = 0u32;
            for (i, &(dx, dy)) in offsets.iter().enumerate() {
                if sample(cx, cy, dx, dy) - gc >= -LBP_TIE_EPS {
                    code |= 1 << i;
                }
            }
            hist[table[code as usize] as usize] += 1.0;
        }
    }
    Ok(hist)
}

/// LBP histogram, L1-normalized. Feature id is `lbp.<variant>`.
pub fn lbp(gray: &GrayImage, p: u32, r: f64, variant: LbpVariant) -> Result<DenseDescriptor> {
    lbp_normalized(gray, p, r, variant, Normalization::L1)
}

pub fn lbp_normalized(
    gray: &GrayImage,
    p: u32,
    r: f64,
    variant: LbpVariant,
    scheme: Normalization,
) -> Result<DenseDescriptor> {
    let counts = lbp_counts(gray, p, r, variant)?;
    Ok(DenseDescriptor::new(format!("lbp.{variant}"), counts).normalized(scheme))
}

pub const GIST_SIZE: usize = 128;
pub const GIST_SCALES: usize = 4;
pub const GIST_ORIENTATIONS: usize = 8;
pub const GIST_GRID: usize = 4;
pub const GIST_DIM: usize = GIST_SCALES * GIST_ORIENTATIONS * GIST_GRID * GIST_GRID;

/// Frequency-domain Gabor transfer functions, one per (scale, orientation).
fn gabor_bank() -> &'static Vec<Vec<f64>> {
    static BANK: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    BANK.get_or_init(|| {
        let n = GIST_SIZE;
        let freq = |k: usize| {
            let k = k as f64;
            if k < n as f64 / 2.0 { k / n as f64 } else { (k - n as f64) / n as f64 }
        };
        let sigma_theta = PI / GIST_ORIENTATIONS as f64 * 0.6;
        let mut bank = Vec::with_capacity(GIST_SCALES * GIST_ORIENTATIONS);
        for s in 0..GIST_SCALES {
            let f0 = 0.25 / (1 << s) as f64;
            let sigma_f = 0.35 * f0;
            for o in 0..GIST_ORIENTATIONS {
                let theta = PI * o as f64 / GIST_ORIENTATIONS as f64;
                let mut g = vec![0.0; n * n];
                for v in 0..n {
                    for u in 0..n {
                        let (fx, fy) = (freq(u), freq(v));
                        let r = (fx * fx + fy * fy).sqrt();
                        if r == 0.0 {
                            continue;
                        }
                        let mut d = fy.atan2(fx) - theta;
                        d = (d + PI).rem_euclid(2.0 * PI) - PI;
                        g[v * n + u] = (-(r - f0).powi(2) / (2.0 * sigma_f * sigma_f)).exp()
                            * (-(d * d) / (2.0 * sigma_theta * sigma_theta)).exp();
                    }
                }
                bank.push(g);
            }
        }
        bank
    })
}

fn fft2(data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = data[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            data[y * n + x] = col[y];
        }
    }
}

/// 512-d GIST: mean Gabor energy (4 scales × 8 orientations) over a 4×4 grid on a
/// 128×128 working image, L2-normalized. Constant images give the zero vector.
pub fn gist(gray: &GrayImage) -> DenseDescriptor {
    let n = GIST_SIZE;
    let work = resize_gray(gray, n as u32, n as u32);
    let px = work.pixels();
    let (lo, hi) = px.iter().fold((u8::MAX, u8::MIN), |(a, b), &p| (a.min(p), b.max(p)));
    if lo == hi {
        return DenseDescriptor::new("gist", vec![0.0; GIST_DIM]);
    }
    let mean = px.iter().map(|&p| p as f64).sum::<f64>() / (n * n) as f64 / 255.0;
    let mut spectrum: Vec<Complex<f64>> =
        px.iter().map(|&p| Complex::new(p as f64 / 255.0 - mean, 0.0)).collect();
    fft2(&mut spectrum, n, false);
    let cell = n / GIST_GRID;
    let norm = 1.0 / (n * n) as f64;
    let mut out = Vec::with_capacity(GIST_DIM);
    let mut buf = vec![Complex::new(0.0, 0.0); n * n];
    for filter in gabor_bank() {
        for (b, (s, g)) in buf.iter_mut().zip(spectrum.iter().zip(filter)) {
            *b = s * g;
        }
        fft2(&mut buf, n, true);
        for gy in 0..GIST_GRID {
            for gx in 0..GIST_GRID {
                let mut acc = 0.0;
                for y in gy * cell..(gy + 1) * cell {
                    for x in gx * cell..(gx + 1) * cell {
                        acc += (buf[y * n + x] * norm).norm();
                    }
                }
                out.push(acc / (cell * cell) as f64);
            }
        }
    }
    let energy: f64 = out.iter().map(|v| v * v).sum();
    if energy.sqrt() < 1e-12 {
        return DenseDescriptor::new("gist", vec![0.0; GIST_DIM]);
    }
    DenseDescriptor::new("gist", out).normalized(Normalization::L2)
}
