//! Single-channel float images used internally by the filtering code.

use crate::raster::GrayImage;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(w: usize, h: usize) -> Self {
        Self { w, h, data: vec![0.0; w * h] }
    }

    /// Gray levels scaled to `[0, 1]`.
    pub fn from_gray(g: &GrayImage) -> Self {
        Self {
            w: g.width() as usize,
            h: g.height() as usize,
            data: g.pixels().iter().map(|&p| p as f32 / 255.0).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    pub fn sub(&self, other: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Separable Gaussian blur with replicated borders.
    pub fn blur(&self, sigma: f32) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let mut tmp = Plane::zeros(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    acc += k * self.at_clamped(x as isize + i as isize - r, y as isize);
                }
                tmp.data[y * self.w + x] = acc;
            }
        }
        let mut out = Plane::zeros(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    acc += k * tmp.at_clamped(x as isize, y as isize + i as isize - r);
                }
                out.data[y * self.w + x] = acc;
            }
        }
        out
    }

    /// Every second pixel in both axes.
    pub fn downsample(&self) -> Plane {
        let w = (self.w / 2).max(1);
        let h = (self.h / 2).max(1);
        let mut out = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.at((2 * x).min(self.w - 1), (2 * y).min(self.h - 1));
            }
        }
        out
    }

    /// Sobel gradient magnitude.
    pub fn sobel_magnitude(&self) -> Plane {
        let mut out = Plane::zeros(self.w, self.h);
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let p = |dx: isize, dy: isize| self.at_clamped(x + dx, y + dy);
                let gx = p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1);
                let gy = p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1);
                out.data[y as usize * self.w + x as usize] = (gx * gx + gy * gy).sqrt();
            }
        }
        out
    }
}

pub(crate) fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}
