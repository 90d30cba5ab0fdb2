//! Similarity alignment of faces to a canonical landmark template.

use crate::error::{Error, Result};
use crate::faces::FaceParams;
use crate::landmarks::{LandmarkSet, Schema};
use crate::tensor::{ImageTensor, Tensor};

/// Scale + rotation + translation, applied as `p' = s·R(θ)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Rotation in radians.
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (
            self.scale * (c * p.0 - s * p.1) + self.tx,
            self.scale * (s * p.0 + c * p.1) + self.ty,
        )
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_s = 1.0 / self.scale;
        let (s, c) = (-self.rotation).sin_cos();
        SimilarityTransform {
            scale: inv_s,
            rotation: -self.rotation,
            tx: -inv_s * (c * self.tx - s * self.ty),
            ty: -inv_s * (s * self.tx + c * self.ty),
        }
    }
}

/// The fixed "mid-range" face whose landmark layout defines the template.
fn canonical_params() -> FaceParams {
    FaceParams {
        center: (63.5, 63.5),
        axes: (33.21, 41.0),
        rotation_deg: 0.0,
        eye_spacing: 36.53,
        eye_aperture: 5.33,
        brow_offset: 7.38,
        mouth_width: 23.25,
        mouth_curve: 0.09,
        nose_len: 14.35,
        skin_color: [200, 160, 130],
        eye_color: [60, 80, 110],
        brow_color: [40, 32, 28],
        mouth_color: [170, 60, 70],
        background: ([128, 128, 128], [128, 128, 128]),
        noise_amp: 0.0,
        seed: 0,
    }
}

/// Deterministic landmark layout centered in a `crop_size` square.
///
/// The layout is the mid-range synthetic face shape, scaled so the landmark
/// extent fills ~72% of the crop. Only the 13-point schema is supported.
pub fn canonical_template(k: usize, crop_size: usize) -> Result<LandmarkSet> {
    let schema = Schema::standard13();
    if k != schema.len() {
        return Err(Error::InvalidConfig(format!(
            "canonical template is defined for k={}, got k={k}",
            schema.len()
        )));
    }
    if crop_size < 16 {
        return Err(Error::InvalidConfig("crop_size must be at least 16".into()));
    }
    let params = canonical_params();
    let local = crate::faces::derive_landmarks(&params);
    let (cx, cy) = params.center;
    let (x0, y0, x1, y1) = local.bbox();
    let span = (x1 - x0).max(y1 - y0);
    let s = 0.72 * crop_size as f64 / span;
    let mid_x = (x0 + x1) / 2.0;
    let mid_y = (y0 + y1) / 2.0;
    let half = crop_size as f64 / 2.0;
    let coords = local
        .coords()
        .iter()
        .map(|p| {
            [
                half + s * (p[0] - mid_x),
                half + s * (p[1] - mid_y),
            ]
        })
        .collect();
    let _ = (cx, cy);
    LandmarkSet::new(schema, coords)
}

/// Closed-form least-squares similarity fit (`argmin_T Σ‖T(src_i) − dst_i‖²`),
/// computed with the complex-regression form of the Procrustes solution.
/// Reflections are outside the family, so the fit is a true similarity.
pub fn similarity_transform(src: &LandmarkSet, dst: &LandmarkSet) -> Result<SimilarityTransform> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "similarity fit needs two equally sized sets of >= 2 points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let (mut msx, mut msy, mut mdx, mut mdy) = (0.0, 0.0, 0.0, 0.0);
    for (s, d) in src.coords().iter().zip(dst.coords()) {
        msx += s[0];
        msy += s[1];
        mdx += d[0];
        mdy += d[1];
    }
    msx /= n;
    msy /= n;
    mdx /= n;
    mdy /= n;
    // a = Σ (d_c · conj(s_c)) / Σ |s_c|², over centered complex points
    let (mut num_re, mut num_im, mut den) = (0.0, 0.0, 0.0);
    for (s, d) in src.coords().iter().zip(dst.coords()) {
        let (sx, sy) = (s[0] - msx, s[1] - msy);
        let (dx, dy) = (d[0] - mdx, d[1] - mdy);
        num_re += dx * sx + dy * sy;
        num_im += dy * sx - dx * sy;
        den += sx * sx + sy * sy;
    }
    if den == 0.0 {
        return Err(Error::DegenerateGeometry(
            "all source points are coincident".into(),
        ));
    }
    let a_re = num_re / den;
    let a_im = num_im / den;
    let scale = (a_re * a_re + a_im * a_im).sqrt();
    if scale < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "fit collapses to zero scale".into(),
        ));
    }
    let rotation = a_im.atan2(a_re);
    // t = μd − a·μs
    let tx = mdx - (a_re * msx - a_im * msy);
    let ty = mdy - (a_im * msx + a_re * msy);
    Ok(SimilarityTransform {
        scale,
        rotation,
        tx,
        ty,
    })
}

/// Resample `image` under `transform` (image frame → crop frame) into a
/// `crop_size` square canvas. Bilinear; out-of-bounds samples are zero.
pub fn warp_crop(image: &ImageTensor, transform: &SimilarityTransform, crop_size: usize) -> ImageTensor {
    let (c, h, w) = image.shape();
    let inv = transform.inverse();
    let mut out = Tensor::zeros(c, crop_size, crop_size);
    for v in 0..crop_size {
        for u in 0..crop_size {
            let (x, y) = inv.apply((u as f64, v as f64));
            let x0 = x.floor();
            let y0 = y.floor();
            let wx = x - x0;
            let wy = y - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let plane = image.plane(ch);
                let sample = |xi: isize, yi: isize| -> f64 {
                    if xi < 0 || yi < 0 || xi >= w as isize || yi >= h as isize {
                        0.0
                    } else {
                        plane[yi as usize * w + xi as usize]
                    }
                };
                let val = sample(x0, y0) * (1.0 - wx) * (1.0 - wy)
                    + sample(x0 + 1, y0) * wx * (1.0 - wy)
                    + sample(x0, y0 + 1) * (1.0 - wx) * wy
                    + sample(x0 + 1, y0 + 1) * wx * wy;
                out.set(ch, v, u, val);
            }
        }
    }
    out
}

/// Sum of squared alignment residuals of `T(src)` against `dst`.
pub fn alignment_sse(t: &SimilarityTransform, src: &LandmarkSet, dst: &LandmarkSet) -> f64 {
    src.coords()
        .iter()
        .zip(dst.coords())
        .map(|(s, d)| {
            let (x, y) = t.apply((s[0], s[1]));
            (x - d[0]).powi(2) + (y - d[1]).powi(2)
        })
        .sum()
}
