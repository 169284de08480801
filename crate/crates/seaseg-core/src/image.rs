//! In-memory rasters: interleaved 8-bit RGB and planar float images,
//! with bilinear/nearest resizing and D8 transforms.

use alloc::vec;
use alloc::vec::Vec;

use crate::d8::{transform_chw, transform_interleaved, D8};
use crate::mask::BinaryMask;
#[allow(unused_imports)]
use num_traits::Float;

/// Interleaved row-major 8-bit RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(h: usize, w: usize) -> Self {
        RgbImage {
            h,
            w,
            data: vec![0; h * w * 3],
        }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), h * w * 3);
        RgbImage { h, w, data }
    }

    pub fn pixel(&self, r: usize, c: usize) -> [u8; 3] {
        let base = (r * self.w + c) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [u8; 3]) {
        let base = (r * self.w + c) * 3;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }

    pub fn transform_d8(&self, e: D8) -> RgbImage {
        let (data, h, w) = transform_interleaved(&self.data, self.h, self.w, 3, e);
        RgbImage { h, w, data }
    }

    /// Planar float image scaled to [0, 1].
    pub fn to_unit_float(&self) -> FloatImage {
        let hw = self.h * self.w;
        let mut data = vec![0.0f32; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                data[c * hw + p] = self.data[p * 3 + c] as f32 / 255.0;
            }
        }
        FloatImage {
            channels: 3,
            h: self.h,
            w: self.w,
            data,
        }
    }
}

/// Planar (CHW) float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(channels: usize, h: usize, w: usize) -> Self {
        FloatImage {
            channels,
            h,
            w,
            data: vec![0.0; channels * h * w],
        }
    }

    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.h + r) * self.w + col]
    }

    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f32) {
        self.data[(c * self.h + r) * self.w + col] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn transform_d8(&self, e: D8) -> FloatImage {
        let (data, h, w) = transform_chw(&self.data, self.channels, self.h, self.w, e);
        FloatImage {
            channels: self.channels,
            h,
            w,
            data,
        }
    }

    /// Back to 8-bit RGB, clamping to [0, 1]. Requires 3 channels.
    pub fn to_rgb_u8(&self) -> RgbImage {
        debug_assert_eq!(self.channels, 3);
        let hw = self.h * self.w;
        let mut out = RgbImage::new(self.h, self.w);
        for p in 0..hw {
            for c in 0..3 {
                let v = self.data[c * hw + p].clamp(0.0, 1.0);
                out.data[p * 3 + c] = (v * 255.0 + 0.5) as u8;
            }
        }
        out
    }
}

/// Bilinear resize with the half-pixel convention. Resizing to the
/// source dimensions is the identity.
pub fn resize_bilinear(img: &FloatImage, oh: usize, ow: usize) -> FloatImage {
    debug_assert!(oh > 0 && ow > 0);
    let (h, w) = (img.h, img.w);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut ytab = Vec::with_capacity(oh);
    for o in 0..oh {
        let src = (o as f64 + 0.5) * sy - 0.5;
        let floor = src.floor();
        let frac = if floor < 0.0 { 0.0 } else { src - floor };
        let y0 = floor.max(0.0) as usize;
        let y1 = (y0 + 1).min(h - 1);
        ytab.push((y0.min(h - 1), y1, frac as f32));
    }
    let mut xtab = Vec::with_capacity(ow);
    for o in 0..ow {
        let src = (o as f64 + 0.5) * sx - 0.5;
        let floor = src.floor();
        let frac = if floor < 0.0 { 0.0 } else { src - floor };
        let x0 = floor.max(0.0) as usize;
        let x1 = (x0 + 1).min(w - 1);
        xtab.push((x0.min(w - 1), x1, frac as f32));
    }
    let mut out = FloatImage::new(img.channels, oh, ow);
    for c in 0..img.channels {
        let src = img.plane(c);
        let base = c * oh * ow;
        let mut o = base;
        for &(y0, y1, wy) in &ytab {
            for &(x0, x1, wx) in &xtab {
                let v00 = src[y0 * w + x0];
                let v01 = src[y0 * w + x1];
                let v10 = src[y1 * w + x0];
                let v11 = src[y1 * w + x1];
                let top = v00 * (1.0 - wx) + v01 * wx;
                let bot = v10 * (1.0 - wx) + v11 * wx;
                out.data[o] = top * (1.0 - wy) + bot * wy;
                o += 1;
            }
        }
    }
    out
}

/// Nearest-neighbour mask resize (half-pixel convention).
pub fn resize_nearest_mask(mask: &BinaryMask, oh: usize, ow: usize) -> BinaryMask {
    let (h, w) = mask.dims();
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = BinaryMask::empty(oh, ow);
    for oy in 0..oh {
        let src_y = (((oy as f64 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(h - 1);
        for ox in 0..ow {
            let src_x = (((ox as f64 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(w - 1);
            if mask.get(src_y, src_x) {
                out.set(oy, ox, true);
            }
        }
    }
    out
}

/// Halves both spatial extents with bilinear filtering.
pub fn downscale_2x(img: &FloatImage) -> FloatImage {
    resize_bilinear(img, (img.h / 2).max(1), (img.w / 2).max(1))
}
