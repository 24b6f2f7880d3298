//! Decoded pixel grids and the preprocessing every feature extractor starts from.
//!
//! Resampling uses the pixel-center convention: destination pixel `i` samples the
//! source at `(i + 0.5) * src / dst - 0.5`.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::ImageFormat;

use crate::error::{Error, Result};

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

/// Row-major 8-bit luma image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam("image dimensions must be at least 1x1".into()));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::DimMismatch { expected, got: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    /// Image filled with a single color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0);
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, pixels }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0);
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn rgb_pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Per-channel negative, `c -> 255 - c`.
    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| 255 - p).collect(),
        }
    }

    fn crop(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self::from_fn(x1 - x0, y1 - y0, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Lossless PNG encoding.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(out.into_inner())
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam("image dimensions must be at least 1x1".into()));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::DimMismatch { expected, got: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(width > 0 && height > 0);
        Self { width, height, pixels: vec![value; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        assert!(width > 0 && height > 0);
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn put(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }

    /// Quarter turn counter-clockwise: pixel `(x, y)` moves to `(y, w - 1 - x)`.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(h, w, |nx, ny| self.get(w - 1 - ny, nx))
    }
}

/// Decode a JPEG or PNG stream. Grayscale and alpha sources are flattened to RGB.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    let format = image::guess_format(bytes).map_err(|_| Error::UnsupportedFormat)?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(Error::UnsupportedFormat);
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RasterImage::new(w, h, rgb.into_raw())
}

pub fn load_image(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

/// Rec. 601 luma, rounded.
pub fn luma(rgb: [u8; 3]) -> u8 {
    let y = 0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64;
    y.round().clamp(0.0, 255.0) as u8
}

pub fn to_gray(img: &RasterImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img.rgb_pixels().map(luma).collect(),
    }
}

/// Hexcone RGB to HSV. Hue in degrees `[0, 360)`, defined as 0 for achromatic pixels.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let mut h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    (h, s, v)
}

/// Inverse of [`rgb_to_hsv`], channels in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn resize_channels(src: &[u8], w: u32, h: u32, ch: usize, nw: u32, nh: u32) -> Vec<u8> {
    if nw == w && nh == h {
        return src.to_vec();
    }
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    let coord = |i: u32, scale: f64, len: u32| -> (usize, usize, f64) {
        let c = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(len as usize - 1);
        (i0, i1, c - i0 as f64)
    };
    let xs: Vec<_> = (0..nw).map(|x| coord(x, sx, w)).collect();
    let mut out = Vec::with_capacity(nw as usize * nh as usize * ch);
    let stride = w as usize * ch;
    for y in 0..nh {
        let (y0, y1, fy) = coord(y, sy, h);
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let p = |xx: usize, yy: usize| src[yy * stride + xx * ch + c] as f64;
                let top = p(x0, y0) + fx * (p(x1, y0) - p(x0, y0));
                let bottom = p(x0, y1) + fx * (p(x1, y1) - p(x0, y1));
                let v = top + fy * (bottom - top);
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

pub fn resize_bilinear(img: &RasterImage, new_w: u32, new_h: u32) -> RasterImage {
    assert!(new_w > 0 && new_h > 0, "resize target must be at least 1x1");
    RasterImage {
        width: new_w,
        height: new_h,
        pixels: resize_channels(&img.pixels, img.width, img.height, 3, new_w, new_h),
    }
}

pub fn resize_gray(img: &GrayImage, new_w: u32, new_h: u32) -> GrayImage {
    assert!(new_w > 0 && new_h > 0, "resize target must be at least 1x1");
    GrayImage {
        width: new_w,
        height: new_h,
        pixels: resize_channels(&img.pixels, img.width, img.height, 1, new_w, new_h),
    }
}

pub fn invert_contrast(gray: &GrayImage) -> GrayImage {
    GrayImage {
        width: gray.width,
        height: gray.height,
        pixels: gray.pixels.iter().map(|&p| 255 - p).collect(),
    }
}

pub const DEFAULT_AUTOCROP_TOLERANCE: u8 = 8;

fn near(a: [u8; 3], b: [u8; 3], tol: u8) -> bool {
    a.iter().zip(b.iter()).all(|(&x, &y)| x.abs_diff(y) <= tol)
}

fn crop_once(img: &RasterImage, tol: u8) -> Option<RasterImage> {
    let bg = img.get(0, 0);
    let (w, h) = (img.width, img.height);
    let row_bg = |y: u32| (0..w).all(|x| near(img.get(x, y), bg, tol));
    let col_bg = |x: u32, y0: u32, y1: u32| (y0..y1).all(|y| near(img.get(x, y), bg, tol));
    let y0 = (0..h).find(|&y| !row_bg(y))?;
    let y1 = (0..h).rev().find(|&y| !row_bg(y))? + 1;
    let x0 = (0..w).find(|&x| !col_bg(x, y0, y1))?;
    let x1 = (0..w).rev().find(|&x| !col_bg(x, y0, y1))? + 1;
    if (x0, y0, x1, y1) == (0, 0, w, h) {
        return None;
    }
    Some(img.crop(x0, y0, x1, y1))
}

/// Strips border rows and columns matching the top-left corner color, repeated
/// until stable. A fully uniform image is returned unchanged.
pub fn autocrop(img: &RasterImage, background_tolerance: u8) -> RasterImage {
    let mut cur = img.clone();
    while let Some(next) = crop_once(&cur, background_tolerance) {
        cur = next;
    }
    cur
}

/// Every JPEG/PNG file under `root`, as `(relative path id, absolute path)` sorted by id.
pub fn walk_corpus(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        if !matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(path);
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        out.push((id, path.to_path_buf()));
    }
    out.sort();
    Ok(out)
}
