//! Planar float tensors.
//!
//! Everything numeric in this crate — images, network activations, heat-maps,
//! gradients — is a [`Tensor`]: `c` planes of `h`×`w` f64 values stored
//! contiguously per plane. Images use pixel units in `[0, 255]` with `c = 3`
//! (RGB) or `c = 1` (gray); rendered images hold integral values so that a
//! PNG round trip is lossless.

use crate::error::{Error, Result};
use std::path::Path;

/// Planar (channel-major) H×W×C tensor of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

/// Images are tensors in pixel units; the alias marks intent at interfaces.
pub type ImageTensor = Tensor;

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length mismatch");
        Tensor { c, h, w, data }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.c, self.h, self.w)
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max absolute per-element deviation from `other`.
    pub fn linf_dev(&self, other: &Tensor) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn clamp_in_place(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    /// Rec. 601 luma; identity on single-channel input.
    pub fn to_gray(&self) -> Tensor {
        if self.c == 1 {
            return self.clone();
        }
        assert_eq!(self.c, 3, "to_gray expects 1 or 3 channels");
        let n = self.h * self.w;
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
        }
        Tensor {
            c: 1,
            h: self.h,
            w: self.w,
            data: out,
        }
    }

    /// Crop `[y0, y1) × [x0, x1)` across all channels.
    pub fn crop(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> Tensor {
        assert!(y0 < y1 && y1 <= self.h && x0 < x1 && x1 <= self.w, "bad crop");
        let (ch, cw) = (y1 - y0, x1 - x0);
        let mut out = Tensor::zeros(self.c, ch, cw);
        for c in 0..self.c {
            for y in 0..ch {
                let src = &self.plane(c)[(y0 + y) * self.w + x0..(y0 + y) * self.w + x1];
                out.plane_mut(c)[y * cw..(y + 1) * cw].copy_from_slice(src);
            }
        }
        out
    }

    pub fn from_rgb8(bytes: &[u8], h: usize, w: usize) -> Tensor {
        assert_eq!(bytes.len(), h * w * 3);
        let mut t = Tensor::zeros(3, h, w);
        for c in 0..3 {
            let plane = t.plane_mut(c);
            for i in 0..h * w {
                plane[i] = bytes[i * 3 + c] as f64;
            }
        }
        t
    }

    /// Interleaved RGB bytes; values rounded and clamped to `[0, 255]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        assert_eq!(self.c, 3, "to_rgb8 expects 3 channels");
        let n = self.h * self.w;
        let mut out = vec![0u8; n * 3];
        for c in 0..3 {
            let plane = self.plane(c);
            for i in 0..n {
                out[i * 3 + c] = plane[i].round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = self.to_rgb8();
        let img: image::RgbImage =
            image::ImageBuffer::from_raw(self.w as u32, self.h as u32, buf)
                .expect("buffer sized from tensor dims");
        img.save(path).map_err(Error::from)
    }

    pub fn load_png(path: &Path) -> Result<Tensor> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Tensor::from_rgb8(img.as_raw(), h, w))
    }
}

/// Bilinear resize to `(oh, ow)`. Degenerate same-size calls return a copy.
pub fn resize_bilinear(src: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = src.shape();
    if oh == h && ow == w {
        return src.clone();
    }
    let mut out = Tensor::zeros(c, oh, ow);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for ch in 0..c {
        let sp = src.plane(ch);
        let op = out.plane_mut(ch);
        for oy in 0..oh {
            // align pixel centers
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for ox in 0..ow {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                let v = sp[y0 * w + x0] * (1.0 - wy) * (1.0 - wx)
                    + sp[y0 * w + x1] * (1.0 - wy) * wx
                    + sp[y1 * w + x0] * wy * (1.0 - wx)
                    + sp[y1 * w + x1] * wy * wx;
                op[oy * ow + ox] = v;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: scatters a gradient over the resized
/// output back onto a `(h, w)` input grid with the same interpolation
/// weights.
pub fn resize_bilinear_adjoint(grad_out: &Tensor, h: usize, w: usize) -> Tensor {
    let (c, oh, ow) = grad_out.shape();
    if oh == h && ow == w {
        return grad_out.clone();
    }
    let mut out = Tensor::zeros(c, h, w);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for ch in 0..c {
        let gp = grad_out.plane(ch);
        let op = out.plane_mut(ch);
        for oy in 0..oh {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = fy - y0 as f64;
            for ox in 0..ow {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = fx - x0 as f64;
                let g = gp[oy * ow + ox];
                op[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
                op[y0 * w + x1] += g * (1.0 - wy) * wx;
                op[y1 * w + x0] += g * wy * (1.0 - wx);
                op[y1 * w + x1] += g * wy * wx;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_of_gray_is_identity() {
        let t = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.to_gray(), t);
    }

    #[test]
    fn rgb8_round_trip_is_exact_for_integral_pixels() {
        let mut t = Tensor::zeros(3, 3, 5);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f64;
        }
        let back = Tensor::from_rgb8(&t.to_rgb8(), 3, 5);
        assert_eq!(t, back);
    }

    #[test]
    fn crop_extracts_expected_region() {
        let mut t = Tensor::zeros(1, 4, 4);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = i as f64;
        }
        let c = t.crop(1, 3, 2, 4);
        assert_eq!(c.shape(), (1, 2, 2));
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
    }

    #[test]
    fn resize_identity_when_same_size() {
        let t = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(resize_bilinear(&t, 2, 2), t);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let t = Tensor::from_vec(1, 4, 4, vec![7.5; 16]);
        let r = resize_bilinear(&t, 3, 5);
        for v in r.data() {
            assert!((v - 7.5).abs() < 1e-12);
        }
    }

    /// <grad_out, resize(x)> == <adjoint(grad_out), x> for random pairs.
    #[test]
    fn resize_adjoint_satisfies_inner_product_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut x = Tensor::zeros(2, 7, 9);
            for v in x.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let (oh, ow) = (5, 6);
            let mut gy = Tensor::zeros(2, oh, ow);
            for v in gy.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let y = resize_bilinear(&x, oh, ow);
            let gx = resize_bilinear_adjoint(&gy, 7, 9);
            let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "lhs={lhs} rhs={rhs}");
        }
    }
}
