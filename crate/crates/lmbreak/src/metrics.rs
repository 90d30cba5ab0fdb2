//! Landmark and image-quality metrics.

use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::tensor::ImageTensor;

/// SSIM window: 11×11 Gaussian, σ = 1.5.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

/// Normalized mean error: mean Euclidean landmark distance divided by the
/// ground-truth inter-ocular distance (left eye outer corner to right eye
/// outer corner).
pub fn nme(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<f64> {
    if pred.schema() != gt.schema() {
        return Err(Error::shape(
            format!("schema {:?}", gt.schema().names().first()),
            "differing landmark schema".to_string(),
        ));
    }
    let (li, ri) = gt.schema().normalization_pair();
    let (lx, ly) = gt.point(li);
    let (rx, ry) = gt.point(ri);
    let d = ((lx - rx).powi(2) + (ly - ry).powi(2)).sqrt();
    if d <= 0.0 || !d.is_finite() {
        return Err(Error::DegenerateGeometry(format!(
            "inter-ocular distance {d} is not positive"
        )));
    }
    let k = gt.len() as f64;
    let sum: f64 = pred
        .coords()
        .iter()
        .zip(gt.coords())
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
        .sum();
    Ok(sum / (k * d))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable valid-mode smoothing with the SSIM window.
fn smooth_valid(img: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for k in 0..SSIM_WINDOW {
                acc += win[k] * img[y * w + x + k];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for k in 0..SSIM_WINDOW {
                acc += win[k] * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over all valid window positions.
///
/// Color inputs are converted to luma first; constants follow the original
/// publication (K1 = 0.01, K2 = 0.03, dynamic range 255).
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::shape(a.shape_str(), b.shape_str()));
    }
    let ga = a.to_gray();
    let gb = b.to_gray();
    let (h, w) = (ga.height(), ga.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::SizeTooSmall {
            size: (h, w),
            reason: format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
        });
    }
    let x = ga.plane(0);
    let y = gb.plane(0);
    let n = h * w;
    let mut xx = vec![0.0; n];
    let mut yy = vec![0.0; n];
    let mut xy = vec![0.0; n];
    for i in 0..n {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    let win = gaussian_window();
    let mu_x = smooth_valid(x, h, w, &win);
    let mu_y = smooth_valid(y, h, w, &win);
    let e_xx = smooth_valid(&xx, h, w, &win);
    let e_yy = smooth_valid(&yy, h, w, &win);
    let e_xy = smooth_valid(&xy, h, w, &win);
    let c1 = (SSIM_K1 * SSIM_L).powi(2);
    let c2 = (SSIM_K2 * SSIM_L).powi(2);
    let mut sum = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cxy = e_xy[i] - mx * my;
        sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(sum / mu_x.len() as f64)
}

/// Axis-aligned region of interest, half-open `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, image_size: (usize, usize)) -> Result<Roi> {
        let (h, w) = image_size;
        if x0 >= x1 || y0 >= y1 || x1 > w || y1 > h {
            return Err(Error::InvalidConfig(format!(
                "roi ({x0},{y0},{x1},{y1}) invalid for {w}x{h} image"
            )));
        }
        Ok(Roi { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Bounding box of the ground-truth landmarks, expanded on every side by
/// `margin_frac` of the box diagonal and clipped to the image.
pub fn landmark_roi(gt: &LandmarkSet, margin_frac: f64, image_size: (usize, usize)) -> Result<Roi> {
    if margin_frac < 0.0 {
        return Err(Error::InvalidConfig("margin_frac must be >= 0".into()));
    }
    let (h, w) = image_size;
    let (x0, y0, x1, y1) = gt.bbox();
    let diag = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let m = margin_frac * diag;
    let ex0 = (x0 - m).max(0.0).floor() as usize;
    let ey0 = (y0 - m).max(0.0).floor() as usize;
    let ex1 = (((x1 + m).floor() as usize) + 1).min(w);
    let ey1 = (((y1 + m).floor() as usize) + 1).min(h);
    Roi::new(ex0, ey0, ex1, ey1, image_size)
}

/// SSIM over the ROI crop only.
pub fn mask_ssim(a: &ImageTensor, b: &ImageTensor, roi: &Roi) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::shape(a.shape_str(), b.shape_str()));
    }
    if roi.x1 > a.width() || roi.y1 > a.height() {
        return Err(Error::InvalidConfig(format!(
            "roi ({},{},{},{}) outside {} image",
            roi.x0,
            roi.y0,
            roi.x1,
            roi.y1,
            a.shape_str()
        )));
    }
    let ca = a.crop(roi.y0, roi.y1, roi.x0, roi.x1);
    let cb = b.crop(roi.y0, roi.y1, roi.x0, roi.x1);
    ssim(&ca, &cb)
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// series is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::landmarks::Schema;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lms(coords: Vec<[f64; 2]>) -> LandmarkSet {
        LandmarkSet::new(Schema::standard13(), coords).unwrap()
    }

    fn sample_gt() -> LandmarkSet {
        let mut coords = vec![[0.0, 0.0]; 13];
        for (i, c) in coords.iter_mut().enumerate() {
            c[0] = 30.0 + 5.0 * i as f64;
            c[1] = 40.0 + 3.0 * (i % 4) as f64;
        }
        coords[2] = [40.0, 50.0]; // left eye outer
        coords[5] = [80.0, 50.0]; // right eye outer -> D = 40
        lms(coords)
    }

    #[test]
    fn nme_of_identical_sets_is_zero() {
        let gt = sample_gt();
        assert_eq!(nme(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn nme_single_displacement_matches_closed_form() {
        let gt = sample_gt();
        let mut pred = gt.clone();
        pred.coords_mut()[7][0] += 3.0;
        pred.coords_mut()[7][1] += 4.0; // displacement 5
        let expect = 5.0 / (13.0 * 40.0);
        let got = nme(&pred, &gt).unwrap();
        assert!((got - expect).abs() < 1e-12, "got {got}, want {expect}");
    }

    #[test]
    fn nme_is_translation_invariant() {
        let gt = sample_gt();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pred = gt.clone();
        for p in pred.coords_mut() {
            p[0] += rng.gen_range(-2.0..2.0);
            p[1] += rng.gen_range(-2.0..2.0);
        }
        let base = nme(&pred, &gt).unwrap();
        let shifted = nme(&pred.translated(17.0, -9.0), &gt.translated(17.0, -9.0)).unwrap();
        assert!((base - shifted).abs() < 1e-12);
    }

    #[test]
    fn nme_rejects_degenerate_interocular_distance() {
        let gt = lms(vec![[10.0, 10.0]; 13]);
        assert!(nme(&gt, &gt).is_err());
    }

    fn textured_image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(3, h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let base = 40.0 + 150.0 * (x as f64 / w as f64) + 20.0 * ((y / 4) % 2) as f64;
                    t.set(c, y, x, (base + rng.gen_range(-10.0..10.0)).clamp(0.0, 255.0));
                }
            }
        }
        t
    }

    #[test]
    fn ssim_of_identical_images_is_exactly_one() {
        let a = textured_image(2, 32, 32);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_of_inverted_structured_image_is_negative() {
        let a = textured_image(3, 64, 64);
        let mut b = a.clone();
        for v in b.data_mut() {
            *v = 255.0 - *v;
        }
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.0, "ssim={s}");
    }

    #[test]
    fn ssim_rejects_images_smaller_than_window() {
        let a = Tensor::zeros(3, 8, 8);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_stays_in_bounds_and_detects_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..5 {
            let a = textured_image(10 + seed, 24, 24);
            let mut b = a.clone();
            for v in b.data_mut() {
                *v = (*v + rng.gen_range(-30.0..30.0)).clamp(0.0, 255.0);
            }
            let s = ssim(&a, &b).unwrap();
            assert!((-1.0..=1.0).contains(&s));
            assert!(s < 1.0 - 1e-9);
        }
    }

    /// Direct-formula re-implementation: per-window weighted moments, no
    /// separable shortcut.
    fn ssim_oracle(a: &Tensor, b: &Tensor) -> f64 {
        let ga = a.to_gray();
        let gb = b.to_gray();
        let (h, w) = (ga.height(), ga.width());
        let win = gaussian_window();
        let c1 = (0.01f64 * 255.0).powi(2);
        let c2 = (0.03f64 * 255.0).powi(2);
        let x = ga.plane(0);
        let y = gb.plane(0);
        let mut sum = 0.0;
        let mut count = 0usize;
        for wy in 0..=(h - SSIM_WINDOW) {
            for wx in 0..=(w - SSIM_WINDOW) {
                let mut mx = 0.0;
                let mut my = 0.0;
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wgt = win[i] * win[j];
                        mx += wgt * x[(wy + i) * w + wx + j];
                        my += wgt * y[(wy + i) * w + wx + j];
                    }
                }
                let mut vx = 0.0;
                let mut vy = 0.0;
                let mut cxy = 0.0;
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wgt = win[i] * win[j];
                        let dx = x[(wy + i) * w + wx + j] - mx;
                        let dy = y[(wy + i) * w + wx + j] - my;
                        vx += wgt * dx * dx;
                        vy += wgt * dy * dy;
                        cxy += wgt * dx * dy;
                    }
                }
                sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        sum / count as f64
    }

    #[test]
    fn ssim_matches_direct_formula_oracle() {
        let a = textured_image(20, 64, 64);
        let mut b = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for v in b.data_mut() {
            *v = (*v + rng.gen_range(-12.0..12.0)).clamp(0.0, 255.0);
        }
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_oracle(&a, &b);
        assert!((fast - slow).abs() < 1e-6, "fast={fast} slow={slow}");
    }

    #[test]
    fn roi_margin_zero_is_tight_box() {
        let gt = sample_gt();
        let roi = landmark_roi(&gt, 0.0, (128, 128)).unwrap();
        let (x0, y0, x1, y1) = gt.bbox();
        assert_eq!(roi.x0, x0.floor() as usize);
        assert_eq!(roi.y0, y0.floor() as usize);
        assert_eq!(roi.x1, x1.floor() as usize + 1);
        assert_eq!(roi.y1, y1.floor() as usize + 1);
    }

    #[test]
    fn roi_huge_margin_clips_to_full_image() {
        let gt = sample_gt();
        let roi = landmark_roi(&gt, 10.0, (128, 96)).unwrap();
        assert_eq!(roi, Roi { x0: 0, y0: 0, x1: 96, y1: 128 });
    }

    #[test]
    fn roi_matches_hand_computed_box() {
        // 13 points spanning x [30, 90], y [40, 49]; diagonal = sqrt(3681)
        let gt = sample_gt();
        let (x0, y0, x1, y1) = gt.bbox();
        assert_eq!((x0, y0, x1, y1), (30.0, 40.0, 90.0, 50.0));
        let diag = (60.0f64 * 60.0 + 10.0 * 10.0).sqrt();
        let m = 0.1 * diag; // ~6.08
        let roi = landmark_roi(&gt, 0.1, (128, 128)).unwrap();
        assert_eq!(roi.x0, (30.0 - m).floor() as usize);
        assert_eq!(roi.y0, (40.0 - m).floor() as usize);
        assert_eq!(roi.x1, (90.0 + m).floor() as usize + 1);
        assert_eq!(roi.y1, (50.0 + m).floor() as usize + 1);
    }

    #[test]
    fn mask_ssim_full_roi_equals_plain_ssim() {
        let a = textured_image(30, 40, 40);
        let mut b = a.clone();
        for v in b.data_mut() {
            *v = (*v * 0.95).round();
        }
        let roi = Roi::new(0, 0, 40, 40, (40, 40)).unwrap();
        assert_eq!(mask_ssim(&a, &b, &roi).unwrap(), ssim(&a, &b).unwrap());
    }

    #[test]
    fn mask_ssim_ignores_changes_outside_roi() {
        let a = textured_image(31, 48, 48);
        let mut b = a.clone();
        // wreck a corner outside the roi
        for y in 0..12 {
            for x in 0..12 {
                for c in 0..3 {
                    b.set(c, y, x, 255.0 - b.get(c, y, x));
                }
            }
        }
        let roi = Roi::new(20, 20, 44, 44, (48, 48)).unwrap();
        assert_eq!(mask_ssim(&a, &b, &roi).unwrap(), 1.0);
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn mask_ssim_rejects_tiny_roi() {
        let a = textured_image(32, 48, 48);
        let roi = Roi::new(0, 0, 8, 8, (48, 48)).unwrap();
        assert!(mask_ssim(&a, &a, &roi).is_err());
    }

    #[test]
    fn spearman_signs_are_sane() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let inc = [2.0, 4.0, 5.0, 9.0, 11.0];
        let dec = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &inc).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &dec).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&xs, &[1.0; 5]).is_none());
    }
}
