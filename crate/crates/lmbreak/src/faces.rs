//! Procedural face generation with exact landmark ground truth.
//!
//! Faces are built from a handful of geometric primitives (head ellipse,
//! eyes, brows, nose, mouth lens) in a face-local frame, rotated in-plane and
//! composited over a gradient-plus-noise background. Landmarks are derived
//! from the same geometry that drives the rasterizer, so ground truth is
//! exact by construction. Rendering is a pure function of
//! ([`FaceParams`], size): identical inputs give bit-identical images, and
//! every operation here is free of shared mutable state, so workers may call
//! them concurrently.

use crate::error::{Error, Result};
use crate::landmarks::{HeatmapSet, LandmarkSet, Schema};
use crate::tensor::{ImageTensor, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Geometry, colors and noise seed for one synthetic face.
///
/// Lengths are in pixels of the default 128×128 canvas; rendering validates
/// that the geometry fits whatever canvas it is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub center: (f64, f64),
    /// Head semi-axes (rx, ry).
    pub axes: (f64, f64),
    pub rotation_deg: f64,
    /// Horizontal distance between eye centers.
    pub eye_spacing: f64,
    /// Eye half-height.
    pub eye_aperture: f64,
    /// Vertical offset of the brows above the eye line.
    pub brow_offset: f64,
    pub mouth_width: f64,
    /// Dimensionless smile curvature; lifts the mouth corners.
    pub mouth_curve: f64,
    pub nose_len: f64,
    pub skin_color: [u8; 3],
    pub eye_color: [u8; 3],
    pub brow_color: [u8; 3],
    pub mouth_color: [u8; 3],
    pub background: ([u8; 3], [u8; 3]),
    /// Amplitude of the seeded pixel noise, in pixel units.
    pub noise_amp: f64,
    pub seed: u64,
}

pub const DEFAULT_IMAGE_SIZE: (usize, usize) = (128, 128);
pub const DEFAULT_STRIDE: usize = 4;
pub const DEFAULT_SIGMA: f64 = 1.5;

/// Deterministic parameter draw; ranges are sized for the default canvas so
/// every landmark of the rendered face stays strictly in bounds under any
/// in-plane rotation.
pub fn sample_face_params(seed: u64) -> FaceParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let (h, w) = DEFAULT_IMAGE_SIZE;
    let cx = (w as f64 - 1.0) / 2.0 + rng.gen_range(-5.0..5.0);
    let cy = (h as f64 - 1.0) / 2.0 + rng.gen_range(-5.0..5.0);
    // head aspect stays near-constant so every face is a near-similarity of
    // the canonical alignment template
    let ry = rng.gen_range(36.0..46.0);
    let rx = ry * rng.gen_range(0.76..0.86);
    let skin_r = rng.gen_range(150.0..225.0);
    let skin = [
        skin_r as u8,
        (skin_r * rng.gen_range(0.72..0.88)) as u8,
        (skin_r * rng.gen_range(0.52..0.72)) as u8,
    ];
    let eye = [
        rng.gen_range(20..90) as u8,
        rng.gen_range(40..110) as u8,
        rng.gen_range(60..150) as u8,
    ];
    let brow_v = rng.gen_range(20..70);
    let mouth = [
        rng.gen_range(130..200) as u8,
        rng.gen_range(40..85) as u8,
        rng.gen_range(50..95) as u8,
    ];
    let bg = |rng: &mut ChaCha8Rng| {
        [
            rng.gen_range(30..220) as u8,
            rng.gen_range(30..220) as u8,
            rng.gen_range(30..220) as u8,
        ]
    };
    FaceParams {
        center: (cx, cy),
        axes: (rx, ry),
        rotation_deg: rng.gen_range(-25.0..25.0),
        eye_spacing: rx * rng.gen_range(1.0..1.2),
        eye_aperture: ry * rng.gen_range(0.10..0.16),
        brow_offset: ry * rng.gen_range(0.15..0.21),
        mouth_width: rx * rng.gen_range(0.6..0.8),
        mouth_curve: rng.gen_range(0.04..0.14),
        nose_len: ry * rng.gen_range(0.31..0.39),
        skin_color: skin,
        eye_color: eye,
        brow_color: [brow_v as u8, (brow_v as f64 * 0.8) as u8, (brow_v as f64 * 0.7) as u8],
        mouth_color: mouth,
        background: (bg(&mut rng), bg(&mut rng)),
        noise_amp: rng.gen_range(5.0..9.0),
        seed,
    }
}

struct LocalGeometry {
    eye_y: f64,
    eye_dx: f64,
    eye_hw: f64,
    brow_y: f64,
    nose_tip_y: f64,
    mouth_y: f64,
    mouth_hw: f64,
    mouth_t: f64,
    mouth_c: f64,
    chin_y: f64,
    forehead_y: f64,
}

fn local_geometry(p: &FaceParams) -> LocalGeometry {
    let (_, ry) = p.axes;
    let eye_y = -0.28 * ry;
    let eye_dx = p.eye_spacing / 2.0;
    LocalGeometry {
        eye_y,
        eye_dx,
        eye_hw: 0.36 * eye_dx,
        brow_y: eye_y - p.brow_offset,
        nose_tip_y: eye_y + p.nose_len,
        mouth_y: 0.45 * ry,
        mouth_hw: p.mouth_width / 2.0,
        mouth_t: 0.10 * ry,
        mouth_c: p.mouth_curve * p.mouth_width,
        chin_y: 0.95 * ry,
        forehead_y: -0.78 * ry,
    }
}

/// Landmarks in face-local coordinates, ordered per [`Schema::standard13`].
fn landmarks_local(p: &FaceParams) -> [(f64, f64); 13] {
    let g = local_geometry(p);
    [
        (-g.eye_dx, g.brow_y),                 // left brow center
        (g.eye_dx, g.brow_y),                  // right brow center
        (-(g.eye_dx + g.eye_hw), g.eye_y),     // left eye outer corner
        (-(g.eye_dx - g.eye_hw), g.eye_y),     // left eye inner corner
        (g.eye_dx - g.eye_hw, g.eye_y),        // right eye inner corner
        (g.eye_dx + g.eye_hw, g.eye_y),        // right eye outer corner
        (0.0, g.nose_tip_y),                   // nose tip
        (-g.mouth_hw, g.mouth_y - g.mouth_c),  // mouth left corner
        (g.mouth_hw, g.mouth_y - g.mouth_c),   // mouth right corner
        (0.0, g.mouth_y - g.mouth_t),          // mouth top center
        (0.0, g.mouth_y + g.mouth_t),          // mouth bottom center
        (0.0, g.chin_y),                       // chin
        (0.0, g.forehead_y),                   // forehead center
    ]
}

/// Ground-truth landmarks implied by `params` in image coordinates.
///
/// This is the same computation the renderer uses; `render_face` returns an
/// identical set.
pub fn derive_landmarks(params: &FaceParams) -> LandmarkSet {
    let theta = params.rotation_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let (cx, cy) = params.center;
    let coords = landmarks_local(params)
        .iter()
        .map(|&(x, y)| [cx + c * x - s * y, cy + s * x + c * y])
        .collect();
    LandmarkSet::new(Schema::standard13(), coords).expect("13 points")
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    for i in 0..3 {
        dst[i] = dst[i] * (1.0 - alpha) + src[i] * alpha;
    }
}

fn coverage(signed_dist: f64) -> f64 {
    (0.5 - signed_dist).clamp(0.0, 1.0)
}

fn dist_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

/// Approximate signed distance to an axis-aligned ellipse boundary.
fn ellipse_sdist(x: f64, y: f64, rx: f64, ry: f64) -> f64 {
    let rho = ((x / rx).powi(2) + (y / ry).powi(2)).sqrt();
    (rho - 1.0) * rx.min(ry)
}

/// Render `params` onto an `size = (h, w)` canvas.
///
/// Output pixels are integral values in `[0, 255]`, so PNG export/import is
/// lossless. Fails if the requested canvas is below 64×64 or too small to
/// contain the face geometry.
pub fn render_face(params: &FaceParams, size: (usize, usize)) -> Result<(ImageTensor, LandmarkSet)> {
    let (h, w) = size;
    if h < 64 || w < 64 {
        return Err(Error::SizeTooSmall {
            size,
            reason: "minimum canvas is 64x64".into(),
        });
    }
    let landmarks = derive_landmarks(params);
    let (rx, ry) = params.axes;
    let head_r = rx.max(ry) + 2.0;
    let (cx, cy) = params.center;
    if cx - head_r < 0.0
        || cy - head_r < 0.0
        || cx + head_r >= w as f64
        || cy + head_r >= h as f64
        || !landmarks.in_bounds(h, w)
    {
        return Err(Error::SizeTooSmall {
            size,
            reason: format!(
                "face at center ({cx:.1},{cy:.1}) with radius {head_r:.1} exceeds canvas"
            ),
        });
    }

    let g = local_geometry(params);
    let theta = params.rotation_deg.to_radians();
    let (st, ct) = theta.sin_cos();
    let skin = params.skin_color.map(|v| v as f64);
    let eye_col = params.eye_color.map(|v| v as f64);
    let brow_col = params.brow_color.map(|v| v as f64);
    let mouth_col = params.mouth_color.map(|v| v as f64);
    let sclera = [236.0, 232.0, 224.0];
    let nose_col = skin.map(|v| v * 0.78);
    let (bg0, bg1) = (
        params.background.0.map(|v| v as f64),
        params.background.1.map(|v| v as f64),
    );

    let mut img = Tensor::zeros(3, h, w);
    let brow_half = 1.05 * g.eye_hw;
    let brow_thick = 1.8;
    let nose_thick = 1.4;
    let iris_r = 0.62 * params.eye_aperture;

    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            // background gradient
            let t = 0.5 * (fx / (w - 1) as f64 + fy / (h - 1) as f64);
            let mut px = [
                bg0[0] + (bg1[0] - bg0[0]) * t,
                bg0[1] + (bg1[1] - bg0[1]) * t,
                bg0[2] + (bg1[2] - bg0[2]) * t,
            ];
            // face-local frame
            let (dx, dy) = (fx - cx, fy - cy);
            let lx = ct * dx + st * dy;
            let ly = -st * dx + ct * dy;

            if lx * lx + ly * ly <= (head_r + 1.5) * (head_r + 1.5) {
                // head with radial shading
                let rho2 = (lx / rx).powi(2) + (ly / ry).powi(2);
                let shade = 1.0 - 0.22 * rho2.min(1.0);
                let d_head = ellipse_sdist(lx, ly, rx, ry);
                blend(&mut px, skin.map(|v| v * shade), coverage(d_head));

                if d_head < 0.0 {
                    // brows
                    for side in [-1.0, 1.0] {
                        let bx = side * g.eye_dx;
                        let d = dist_segment(lx, ly, bx - brow_half, g.brow_y, bx + brow_half, g.brow_y)
                            - brow_thick;
                        blend(&mut px, brow_col, coverage(d));
                    }
                    // eyes: sclera ellipse then iris disc
                    for side in [-1.0, 1.0] {
                        let ex = side * g.eye_dx;
                        let d_s = ellipse_sdist(lx - ex, ly - g.eye_y, g.eye_hw, params.eye_aperture);
                        blend(&mut px, sclera, coverage(d_s));
                        let d_i = ((lx - ex).powi(2) + (ly - g.eye_y).powi(2)).sqrt() - iris_r;
                        blend(&mut px, eye_col, coverage(d_i.max(d_s)));
                    }
                    // nose stem down to the tip
                    let d_n = dist_segment(lx, ly, 0.0, g.eye_y + 0.2 * params.nose_len, 0.0, g.nose_tip_y)
                        - nose_thick;
                    blend(&mut px, nose_col, coverage(d_n));
                    // mouth lens between two parabolas through the corners
                    if lx.abs() <= g.mouth_hw + 1.0 {
                        let u = (lx / g.mouth_hw).clamp(-1.0, 1.0);
                        let upper = (g.mouth_y - g.mouth_t) + (g.mouth_t - g.mouth_c) * u * u;
                        let lower = (g.mouth_y + g.mouth_t) - (g.mouth_t + g.mouth_c) * u * u;
                        let d_m = (upper - ly).max(ly - lower).max(lx.abs() - g.mouth_hw);
                        blend(&mut px, mouth_col, coverage(d_m));
                    }
                }
            }
            for (c, &v) in px.iter().enumerate() {
                img.set(c, y, x, v);
            }
        }
    }

    // seeded texture: a coarse value-noise field plus fine grain, shared
    // across channels so it reads as luminance variation
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_mul(0x2545f4914f6cdd1d));
    let cell = 8usize;
    let (gh, gw) = (h / cell + 2, w / cell + 2);
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let coarse_amp = 1.6 * params.noise_amp;
    let mut coarse = vec![0.0f64; h * w];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let y0 = fy.floor() as usize;
        let ty = fy - y0 as f64;
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let x0 = fx.floor() as usize;
            let tx = fx - x0 as f64;
            let v = lattice[y0 * gw + x0] * (1.0 - ty) * (1.0 - tx)
                + lattice[y0 * gw + x0 + 1] * (1.0 - ty) * tx
                + lattice[(y0 + 1) * gw + x0] * ty * (1.0 - tx)
                + lattice[(y0 + 1) * gw + x0 + 1] * ty * tx;
            coarse[y * w + x] = v * coarse_amp;
        }
    }
    let fine_amp = 0.7 * params.noise_amp;
    let mut fine = vec![0.0f64; h * w];
    for v in fine.iter_mut() {
        *v = rng.gen_range(-1.0..1.0) * fine_amp;
    }
    for c in 0..3 {
        let plane = img.plane_mut(c);
        for i in 0..h * w {
            plane[i] = (plane[i] + coarse[i] + fine[i]).clamp(0.0, 255.0).round();
        }
    }

    Ok((img, landmarks))
}

/// Gaussian heat-map training targets.
///
/// Landmarks are scaled into map coordinates by `stride`; each map is an
/// unnormalized Gaussian centered on the nearest grid point, so the peak
/// value is exactly 1.0 and the argmax is the landmark's grid cell. Returns
/// one `clamped` flag per landmark, set when the scaled point fell outside
/// the map and was clamped to the border.
pub fn render_heatmap_targets(
    landmarks: &LandmarkSet,
    map_size: (usize, usize),
    sigma: f64,
    stride: usize,
) -> Result<(HeatmapSet, Vec<bool>)> {
    if sigma <= 0.0 {
        return Err(Error::InvalidConfig(format!("sigma must be > 0, got {sigma}")));
    }
    let (hm, wm) = map_size;
    if hm == 0 || wm == 0 || stride == 0 {
        return Err(Error::InvalidConfig("map size and stride must be nonzero".into()));
    }
    let k = landmarks.len();
    let mut maps = Tensor::zeros(k, hm, wm);
    let mut clamped = vec![false; k];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (i, p) in landmarks.coords().iter().enumerate() {
        let sx = p[0] / stride as f64;
        let sy = p[1] / stride as f64;
        let gx = sx.round();
        let gy = sy.round();
        let cx = gx.clamp(0.0, (wm - 1) as f64);
        let cy = gy.clamp(0.0, (hm - 1) as f64);
        clamped[i] = cx != gx || cy != gy;
        let plane = maps.plane_mut(i);
        for y in 0..hm {
            let dy2 = (y as f64 - cy).powi(2);
            for x in 0..wm {
                let dx2 = (x as f64 - cx).powi(2);
                plane[y * wm + x] = (-(dx2 + dy2) * inv).exp();
            }
        }
    }
    Ok((HeatmapSet::new(maps, stride), clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Full,
    Train,
    Val,
    Test,
}

/// Where a record's pixels come from.
#[derive(Debug, Clone)]
pub enum ImageSource {
    /// Re-rendered on demand; rendering is deterministic so this is as good
    /// as storing the pixels.
    Synthetic { params: FaceParams, size: (usize, usize) },
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct Record {
    pub id: String,
    pub source: ImageSource,
    pub landmarks: LandmarkSet,
}

/// Ordered dataset of (image, landmarks) records.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub schema: Arc<Schema>,
    pub records: Vec<Record>,
    pub split: SplitTag,
    pub provenance: Provenance,
}

impl DatasetHandle {
    /// Generate `n` synthetic records with seeds `base_seed..base_seed+n`.
    pub fn generate(n: usize, base_seed: u64, size: (usize, usize)) -> DatasetHandle {
        let schema = Schema::standard13();
        let records = (0..n)
            .map(|i| {
                let seed = base_seed.wrapping_add(i as u64);
                let params = sample_face_params(seed);
                let landmarks = derive_landmarks(&params);
                Record {
                    id: format!("syn_{seed:08x}"),
                    source: ImageSource::Synthetic { params, size },
                    landmarks,
                }
            })
            .collect();
        DatasetHandle {
            schema,
            records,
            split: SplitTag::Full,
            provenance: Provenance::Synthetic,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load_image(&self, index: usize) -> Result<ImageTensor> {
        match &self.records[index].source {
            ImageSource::Synthetic { params, size } => Ok(render_face(params, *size)?.0),
            ImageSource::File(path) => Tensor::load_png(path),
        }
    }

    /// Stable content hash over ids and coordinates, for checkpoint metadata.
    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        for r in &self.records {
            h.update(r.id.as_bytes());
            for p in r.landmarks.coords() {
                h.update(&p[0].to_le_bytes());
                h.update(&p[1].to_le_bytes());
            }
        }
        h.finish()
    }

    /// Deterministic, disjoint, exhaustive split by ratios.
    pub fn split(
        &self,
        ratios: (f64, f64, f64),
        seed: u64,
    ) -> Result<(DatasetHandle, DatasetHandle, DatasetHandle)> {
        let (a, b, c) = ratios;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidConfig("split ratios must be positive".into()));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must sum to 1, got {}",
                a + b + c
            )));
        }
        let n = self.records.len();
        let n_train = (n as f64 * a).round() as usize;
        let n_val = (n as f64 * b).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(Error::InvalidConfig(format!(
                "ratios {ratios:?} produce an empty split for {n} records"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let take = |range: &[usize], tag: SplitTag| DatasetHandle {
            schema: self.schema.clone(),
            records: range.iter().map(|&i| self.records[i].clone()).collect(),
            split: tag,
            provenance: self.provenance,
        };
        Ok((
            take(&idx[..n_train], SplitTag::Train),
            take(&idx[n_train..n_train + n_val], SplitTag::Val),
            take(&idx[n_train + n_val..], SplitTag::Test),
        ))
    }

    /// Write PNGs plus a byte-stable `annotations.json` (sorted keys, two
    /// decimal places) under `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let mut body = String::from("{\n  \"records\": [\n");
        for (i, r) in self.records.iter().enumerate() {
            let rel = format!("images/{}.png", r.id);
            let img = self.load_image(i)?;
            img.save_png(&dir.join(&rel))?;
            let lms: Vec<String> = r
                .landmarks
                .coords()
                .iter()
                .map(|p| format!("[{:.2}, {:.2}]", p[0], p[1]))
                .collect();
            body.push_str(&format!(
                "    {{\"image\": \"{}\", \"landmarks\": [{}]}}{}\n",
                rel,
                lms.join(", "),
                if i + 1 < self.records.len() { "," } else { "" }
            ));
        }
        body.push_str("  ],\n  \"schema\": [");
        let names: Vec<String> = self
            .schema
            .names()
            .iter()
            .map(|n| format!("\"{n}\""))
            .collect();
        body.push_str(&names.join(", "));
        body.push_str("]\n}\n");
        let path = dir.join("annotations.json");
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Deserialize)]
struct AnnotationFile {
    schema: Vec<String>,
    records: Vec<AnnotationRecord>,
}

#[derive(Deserialize)]
struct AnnotationRecord {
    image: String,
    landmarks: Vec<[f64; 2]>,
}

/// Ingest a directory holding `annotations.json` plus its images.
///
/// Schemas of any size are accepted as long as they name the NME
/// normalization pair. Bad records are skipped and reported in the returned
/// diagnostics; an empty surviving set is a hard failure.
pub fn load_annotated_dataset(dir: &Path) -> Result<(DatasetHandle, Vec<String>)> {
    let ann_path = dir.join("annotations.json");
    let text = std::fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let parsed: AnnotationFile = serde_json::from_str(&text)?;
    let schema = Arc::new(Schema::new(parsed.schema)?);
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, rec) in parsed.records.iter().enumerate() {
        let img_path = dir.join(&rec.image);
        if !img_path.is_file() {
            diagnostics.push(format!("record {i}: missing image file {}", img_path.display()));
            continue;
        }
        if rec.landmarks.len() != schema.len() {
            diagnostics.push(format!(
                "record {i} ({}): {} landmarks, schema has {}",
                rec.image,
                rec.landmarks.len(),
                schema.len()
            ));
            continue;
        }
        if rec.landmarks.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            diagnostics.push(format!("record {i} ({}): non-finite coordinates", rec.image));
            continue;
        }
        let landmarks = LandmarkSet::new(schema.clone(), rec.landmarks.clone())?;
        records.push(Record {
            id: Path::new(&rec.image)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("rec_{i}")),
            source: ImageSource::File(img_path),
            landmarks,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no valid records in {}; diagnostics: {}",
            dir.display(),
            diagnostics.join("; ")
        )));
    }
    Ok((
        DatasetHandle {
            schema,
            records,
            split: SplitTag::Full,
            provenance: Provenance::Ingested,
        },
        diagnostics,
    ))
}

/// FNV-1a, used for artifact manifests and dataset content hashes.
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_params() {
        assert_eq!(sample_face_params(7), sample_face_params(7));
    }

    #[test]
    fn different_seeds_give_different_params() {
        assert_ne!(sample_face_params(7), sample_face_params(8));
    }

    #[test]
    fn render_is_bit_deterministic() {
        let p = sample_face_params(42);
        let (a, la) = render_face(&p, DEFAULT_IMAGE_SIZE).unwrap();
        let (b, lb) = render_face(&p, DEFAULT_IMAGE_SIZE).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn landmarks_in_bounds_and_faithful_over_many_seeds() {
        // oracle: render, bound-check, and re-derive from stored geometry
        for seed in 0..1000 {
            let p = sample_face_params(seed);
            let (img, lms) = render_face(&p, DEFAULT_IMAGE_SIZE).unwrap();
            assert!(
                lms.in_bounds(img.height(), img.width()),
                "seed {seed} produced out-of-bounds landmarks"
            );
            assert_eq!(lms, derive_landmarks(&p), "seed {seed} fidelity");
        }
    }

    #[test]
    fn zero_rotation_centered_head_has_mirror_symmetric_eyes() {
        let mut p = sample_face_params(5);
        p.rotation_deg = 0.0;
        p.center = (63.5, p.center.1);
        let (_, lms) = render_face(&p, DEFAULT_IMAGE_SIZE).unwrap();
        let lo = lms.named("left eye outer corner").unwrap();
        let ro = lms.named("right eye outer corner").unwrap();
        assert!((lo.0 - 63.5).abs() - (ro.0 - 63.5).abs() < 1e-9);
        assert!(((lo.0 + ro.0) / 2.0 - 63.5).abs() < 1.0);
        assert!((lo.1 - ro.1).abs() < 1.0);
    }

    #[test]
    fn zero_curvature_mouth_centers_share_x() {
        let mut p = sample_face_params(6);
        p.rotation_deg = 0.0;
        p.mouth_curve = 0.0;
        let (_, lms) = render_face(&p, DEFAULT_IMAGE_SIZE).unwrap();
        let top = lms.named("mouth top center").unwrap();
        let bot = lms.named("mouth bottom center").unwrap();
        assert!((top.0 - bot.0).abs() < 1e-9);
    }

    #[test]
    fn rotated_landmarks_equal_rotated_unrotated_landmarks() {
        // oracle: apply the rotation matrix to the unrotated output
        let mut p = sample_face_params(11);
        p.rotation_deg = 0.0;
        let (_, base) = render_face(&p, DEFAULT_IMAGE_SIZE).unwrap();
        let mut p90 = p.clone();
        p90.rotation_deg = 90.0;
        let (_, rotated) = render_face(&p90, DEFAULT_IMAGE_SIZE).unwrap();
        let (cx, cy) = p.center;
        let th = std::f64::consts::FRAC_PI_2;
        let (s, c) = th.sin_cos();
        for (a, b) in base.coords().iter().zip(rotated.coords()) {
            let (dx, dy) = (a[0] - cx, a[1] - cy);
            let ex = cx + c * dx - s * dy;
            let ey = cy + s * dx + c * dy;
            assert!((ex - b[0]).abs() < 1.0 && (ey - b[1]).abs() < 1.0);
        }
    }

    #[test]
    fn too_small_canvas_is_rejected_with_diagnostic() {
        let p = sample_face_params(1);
        let err = render_face(&p, (64, 64)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("too small"), "got: {msg}");
        let err = render_face(&p, (32, 32)).unwrap_err();
        assert!(matches!(err, Error::SizeTooSmall { .. }));
    }

    #[test]
    fn heatmap_peak_is_one_at_exact_grid_point() {
        let schema = Schema::standard13();
        let mut coords = vec![[40.0, 40.0]; 13];
        coords[0] = [40.0, 80.0]; // grid (10, 20) at stride 4
        let lms = LandmarkSet::new(schema, coords).unwrap();
        let (hm, clamped) = render_heatmap_targets(&lms, (32, 32), 1.5, 4).unwrap();
        assert!(clamped.iter().all(|c| !c));
        let m = hm.map(0);
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
        for (i, &v) in m.iter().enumerate() {
            if v > best {
                best = v;
                arg = i;
            }
        }
        assert_eq!((arg % 32, arg / 32), (10, 20));
        assert_eq!(best, 1.0);
    }

    #[test]
    fn huge_sigma_flattens_map() {
        let lms = LandmarkSet::new(Schema::standard13(), vec![[64.0, 64.0]; 13]).unwrap();
        let (hm, _) = render_heatmap_targets(&lms, (32, 32), 1e4, 4).unwrap();
        let m = hm.map(0);
        let max = m.iter().cloned().fold(f64::MIN, f64::max);
        let min = m.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.0001);
    }

    #[test]
    fn heatmap_sum_matches_dense_gaussian_oracle() {
        let lms = LandmarkSet::new(Schema::standard13(), vec![[52.0, 36.0]; 13]).unwrap();
        let (hm, _) = render_heatmap_targets(&lms, (32, 32), 1.5, 4).unwrap();
        let sum: f64 = hm.map(0).iter().sum();
        // independent dense evaluation of the same Gaussian
        let (cx, cy) = (13.0f64, 9.0f64);
        let mut oracle = 0.0;
        for y in 0..32 {
            for x in 0..32 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                oracle += (-d2 / (2.0 * 1.5 * 1.5)).exp();
            }
        }
        assert!((sum - oracle).abs() < 1e-9, "sum={sum} oracle={oracle}");
    }

    #[test]
    fn out_of_map_landmark_is_clamped_and_flagged() {
        let mut coords = vec![[10.0, 10.0]; 13];
        coords[4] = [127.9, 127.9]; // beyond a 16x16 map at stride 4
        let lms = LandmarkSet::new(Schema::standard13(), coords).unwrap();
        let (hm, clamped) = render_heatmap_targets(&lms, (16, 16), 1.5, 4).unwrap();
        assert!(clamped[4]);
        assert!(!clamped[0]);
        let m = hm.map(4);
        let arg = m
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!((arg % 16, arg / 16), (15, 15));
    }

    #[test]
    fn split_sizes_and_partition_property() {
        let ds = DatasetHandle::generate(100, 500, DEFAULT_IMAGE_SIZE);
        let (tr, va, te) = ds.split((0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        let (tr2, va2, te2) = ds.split((0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!(
            tr.records.iter().map(|r| &r.id).collect::<Vec<_>>(),
            tr2.records.iter().map(|r| &r.id).collect::<Vec<_>>()
        );
        assert_eq!(va.records[0].id, va2.records[0].id);
        assert_eq!(te.records[0].id, te2.records[0].id);
        let mut union: Vec<&String> = tr
            .records
            .iter()
            .chain(&va.records)
            .chain(&te.records)
            .map(|r| &r.id)
            .collect();
        union.sort();
        let mut orig: Vec<&String> = ds.records.iter().map(|r| &r.id).collect();
        orig.sort();
        assert_eq!(union, orig);
    }

    #[test]
    fn degenerate_split_is_rejected() {
        let ds = DatasetHandle::generate(5, 0, DEFAULT_IMAGE_SIZE);
        assert!(ds.split((0.98, 0.01, 0.01), 0).is_err());
        assert!(ds.split((0.5, 0.5, 0.5), 0).is_err());
    }
}
