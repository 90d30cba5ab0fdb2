//! Heat-map landmark extractors: three miniature architectures, peak
//! decoding, analytic input gradients, and MSE training on Gaussian targets.
//!
//! All three networks are fully convolutional, map a 3×H×W image (pixels in
//! `[0, 255]`, normalized to `[0, 1]` internally) to k heat-maps at 1/4
//! resolution, and end in a raw linear conv layer — the maps the attack
//! loss sees carry no post-activation.

use crate::attack;
use crate::error::{Error, Result};
use crate::faces::{DatasetHandle, DEFAULT_SIGMA};
use crate::landmarks::{HeatmapSet, LandmarkSet, Schema};
use crate::metrics;
use crate::nn::{Adam, Graph, ParamGrads};
use crate::tensor::{ImageTensor, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// One encoder-decoder with a skip connection at each scale.
    #[serde(rename = "hourglass-mini")]
    HourglassMini,
    /// Two parallel resolution branches with repeated cross-resolution fusion.
    #[serde(rename = "hires-parallel-mini")]
    HiresParallelMini,
    /// Plain strided encoder-decoder without skips.
    #[serde(rename = "encdec-mini")]
    EncdecMini,
}

impl Architecture {
    pub fn all() -> [Architecture; 3] {
        [
            Architecture::HourglassMini,
            Architecture::HiresParallelMini,
            Architecture::EncdecMini,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::HourglassMini => "hourglass-mini",
            Architecture::HiresParallelMini => "hires-parallel-mini",
            Architecture::EncdecMini => "encdec-mini",
        }
    }

    pub fn from_name(name: &str) -> Result<Architecture> {
        match name {
            "hourglass-mini" => Ok(Architecture::HourglassMini),
            "hires-parallel-mini" => Ok(Architecture::HiresParallelMini),
            "encdec-mini" => Ok(Architecture::EncdecMini),
            other => Err(Error::InvalidConfig(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub arch: Architecture,
    pub k: usize,
    pub input_size: (usize, usize),
    pub stride: usize,
    pub param_count: usize,
}

impl ExtractorSpec {
    pub fn new(arch: Architecture, k: usize, input_size: (usize, usize)) -> Result<ExtractorSpec> {
        let (h, w) = input_size;
        // the deepest scale in any of the three graphs is 1/16
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {h}x{w} must be divisible by 16"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        let graph = build_graph(arch, k);
        Ok(ExtractorSpec {
            arch,
            k,
            input_size,
            stride: 4,
            param_count: graph.param_count(),
        })
    }

    pub fn map_size(&self) -> (usize, usize) {
        (self.input_size.0 / self.stride, self.input_size.1 / self.stride)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub dataset_hash: String,
    pub epochs_run: usize,
    pub best_val_nme: f64,
    pub seed: u64,
}

/// An extractor with loaded weights. Immutable after construction; safe to
/// share across threads for concurrent forward/gradient calls.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ExtractorSpec,
    pub meta: TrainMeta,
    graph: Graph,
}

fn build_graph(arch: Architecture, k: usize) -> Graph {
    match arch {
        Architecture::HourglassMini => {
            let mut b = Graph::builder();
            let x = b.input();
            let s1 = b.conv(x, 3, 8, 3, 2, 1); // 64
            let s1r = b.lrelu(s1);
            let s2 = b.conv(s1r, 8, 16, 3, 2, 1); // 32
            let s32 = b.lrelu(s2);
            let skip32 = b.conv(s32, 16, 16, 1, 1, 0);
            let p16 = b.avgpool2(s32); // 16
            let c16 = b.conv(p16, 16, 16, 3, 1, 1);
            let d16 = b.lrelu(c16);
            let skip16 = b.conv(d16, 16, 16, 1, 1, 0);
            let p8 = b.avgpool2(d16); // 8
            let c8 = b.conv(p8, 16, 16, 3, 1, 1);
            let d8 = b.lrelu(c8);
            let bott = b.conv(d8, 16, 16, 3, 1, 1);
            let bott = b.lrelu(bott);
            let u16 = b.upsample2(bott); // 16
            let a16 = b.add(u16, skip16);
            let c16u = b.conv(a16, 16, 16, 3, 1, 1);
            let r16u = b.lrelu(c16u);
            let u32 = b.upsample2(r16u); // 32
            let a32 = b.add(u32, skip32);
            let c32u = b.conv(a32, 16, 16, 3, 1, 1);
            let r32u = b.lrelu(c32u);
            b.conv(r32u, 16, k, 1, 1, 0);
            b.finish()
        }
        Architecture::HiresParallelMini => {
            let mut b = Graph::builder();
            let x = b.input();
            let s1 = b.conv(x, 3, 8, 3, 2, 1); // 64
            let s1r = b.lrelu(s1);
            let s2 = b.conv(s1r, 8, 16, 3, 2, 1); // 32
            let h0 = b.lrelu(s2);
            let l0p = b.avgpool2(h0); // 16
            let l0c = b.conv(l0p, 16, 16, 3, 1, 1);
            let l0 = b.lrelu(l0c);
            // stage 1 with bidirectional fusion
            let h1c = b.conv(h0, 16, 16, 3, 1, 1);
            let h1 = b.lrelu(h1c);
            let l1c = b.conv(l0, 16, 16, 3, 1, 1);
            let l1 = b.lrelu(l1c);
            let l1u = b.conv(l1, 16, 16, 1, 1, 0);
            let l1up = b.upsample2(l1u);
            let h1f = b.add(h1, l1up);
            let h1d = b.avgpool2(h1);
            let h1dc = b.conv(h1d, 16, 16, 1, 1, 0);
            let l1f = b.add(l1, h1dc);
            // stage 2
            let h2c = b.conv(h1f, 16, 16, 3, 1, 1);
            let h2 = b.lrelu(h2c);
            let l2c = b.conv(l1f, 16, 16, 3, 1, 1);
            let l2 = b.lrelu(l2c);
            let l2u = b.conv(l2, 16, 16, 1, 1, 0);
            let l2up = b.upsample2(l2u);
            let h2f = b.add(h2, l2up);
            b.conv(h2f, 16, k, 1, 1, 0);
            b.finish()
        }
        Architecture::EncdecMini => {
            let mut b = Graph::builder();
            let x = b.input();
            let s1 = b.conv(x, 3, 10, 3, 2, 1); // 64
            let r1 = b.lrelu(s1);
            let s2 = b.conv(r1, 10, 20, 3, 2, 1); // 32
            let r2 = b.lrelu(s2);
            let s3 = b.conv(r2, 20, 20, 3, 2, 1); // 16
            let r3 = b.lrelu(s3);
            let c4 = b.conv(r3, 20, 20, 3, 1, 1);
            let r4 = b.lrelu(c4);
            let u = b.upsample2(r4); // 32
            let c5 = b.conv(u, 20, 20, 3, 1, 1);
            let r5 = b.lrelu(c5);
            b.conv(r5, 20, k, 1, 1, 0);
            b.finish()
        }
    }
}

impl Checkpoint {
    /// Fresh checkpoint with seeded random weights.
    pub fn init(spec: ExtractorSpec, seed: u64) -> Checkpoint {
        let mut graph = build_graph(spec.arch, spec.k);
        graph.init_weights(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xec7a_11e5_a77e_0001));
        Checkpoint {
            spec,
            meta: TrainMeta {
                seed,
                ..TrainMeta::default()
            },
            graph,
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn fingerprint(&self) -> String {
        self.graph.fingerprint()
    }

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        let (h, w) = self.spec.input_size;
        if image.shape() != (3, h, w) {
            return Err(Error::shape(format!("3x{h}x{w}"), image.shape_str()));
        }
        Ok(())
    }

    fn normalized(&self, image: &ImageTensor) -> Tensor {
        let mut x = image.clone();
        for v in x.data_mut() {
            *v /= 255.0;
        }
        x
    }

    /// Heat-maps for `image`. Deterministic: no stochastic layers exist.
    pub fn forward(&self, image: &ImageTensor) -> Result<HeatmapSet> {
        self.check_input(image)?;
        let acts = self.graph.forward(&self.normalized(image));
        let maps = acts.into_iter().last().expect("nonempty graph");
        Ok(HeatmapSet::new(maps, self.spec.stride))
    }

    /// Eq-style attack loss against `ref_maps` plus its exact gradient with
    /// respect to the input pixels (in `[0, 255]` units).
    pub fn input_gradient(
        &self,
        image: &ImageTensor,
        ref_maps: &HeatmapSet,
    ) -> Result<(f64, Tensor)> {
        self.check_input(image)?;
        let acts = self.graph.forward(&self.normalized(image));
        let pred = &acts[self.graph.output_node()];
        if pred.shape() != ref_maps.maps().shape() {
            return Err(Error::shape(ref_maps.maps().shape_str(), pred.shape_str()));
        }
        let (loss, d_pred) = attack::cosine_loss_and_grad(pred, ref_maps.maps())?;
        let (_, dx) = self.graph.backward(&acts, d_pred, false, true);
        let mut grad = dx.expect("input gradient requested");
        for v in grad.data_mut() {
            *v /= 255.0;
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("input gradient".into()));
        }
        Ok((loss, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({
            "version": 1,
            "kind": "extractor",
            "spec": self.spec,
            "meta": self.meta,
        });
        archive::save(path, &header, &self.graph.weights_flat())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let (header, weights) = archive::load(path)?;
        archive::check_kind(&header, "extractor")?;
        let spec: ExtractorSpec = serde_json::from_value(
            header
                .get("spec")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing spec".into()))?,
        )?;
        let meta: TrainMeta = serde_json::from_value(
            header
                .get("meta")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing meta".into()))?,
        )?;
        let mut graph = build_graph(spec.arch, spec.k);
        graph.load_weights_flat(&weights)?;
        Ok(Checkpoint { spec, meta, graph })
    }
}

/// Checkpoint container: magic, JSON header, raw little-endian f64 blob.
/// Shared by extractor and synthesizer checkpoints (distinct `kind` tags).
pub(crate) mod archive {
    use super::*;

    const MAGIC: &[u8; 4] = b"LMCK";

    pub fn save(path: &Path, header: &serde_json::Value, weights: &[f64]) -> Result<()> {
        let mut header = header.clone();
        header["weights_len"] = serde_json::json!(weights.len());
        let hbytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + hbytes.len() + weights.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(hbytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&hbytes);
        for w in weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(serde_json::Value, Vec<f64>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + hlen {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen])?;
        match header.get("version").and_then(|v| v.as_u64()) {
            Some(1) => {}
            Some(v) => return Err(Error::Checkpoint(format!("unsupported version {v}"))),
            None => return Err(Error::Checkpoint("missing version field".into())),
        }
        let n = header
            .get("weights_len")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint("missing weights_len".into()))? as usize;
        let blob = &bytes[8 + hlen..];
        if blob.len() != n * 8 {
            return Err(Error::Checkpoint(format!(
                "weight blob is {} bytes, expected {}",
                blob.len(),
                n * 8
            )));
        }
        let weights = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((header, weights))
    }

    pub fn check_kind(header: &serde_json::Value, want: &str) -> Result<()> {
        match header.get("kind").and_then(|v| v.as_str()) {
            Some(k) if k == want => Ok(()),
            Some(k) => Err(Error::Checkpoint(format!(
                "checkpoint kind {k:?}, expected {want:?}"
            ))),
            None => Err(Error::Checkpoint("missing kind field".into())),
        }
    }
}

/// Row-major-first argmax with quarter-pixel refinement toward the larger
/// axis neighbor, scaled back to image coordinates by the map stride.
pub fn decode_landmarks(
    maps: &HeatmapSet,
    image_size: (usize, usize),
    schema: Arc<Schema>,
) -> Result<LandmarkSet> {
    if maps.k() == 0 {
        return Err(Error::InvalidConfig("empty heat-map set".into()));
    }
    if maps.k() != schema.len() {
        return Err(Error::shape(
            format!("{} maps", schema.len()),
            format!("{} maps", maps.k()),
        ));
    }
    let (hm, wm) = (maps.map_height(), maps.map_width());
    let stride = maps.stride() as f64;
    let (ih, iw) = (image_size.0 as f64, image_size.1 as f64);
    let mut coords = Vec::with_capacity(maps.k());
    for i in 0..maps.k() {
        let m = maps.map(i);
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0usize;
        for (j, &v) in m.iter().enumerate() {
            if v > best {
                best = v;
                arg = j;
            }
        }
        let (my, mx) = (arg / wm, arg % wm);
        let center = m[arg];
        let left = if mx > 0 { m[arg - 1] } else { center };
        let right = if mx + 1 < wm { m[arg + 1] } else { center };
        let up = if my > 0 { m[arg - wm] } else { center };
        let down = if my + 1 < hm { m[arg + wm] } else { center };
        let qx = 0.25 * (right - left).signum() * f64::from(right != left);
        let qy = 0.25 * (down - up).signum() * f64::from(down != up);
        let x = ((mx as f64 + qx) * stride).clamp(0.0, iw - 1.0);
        let y = ((my as f64 + qy) * stride).clamp(0.0, ih - 1.0);
        coords.push([x, y]);
    }
    LandmarkSet::new(schema, coords)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop once validation NME drops below this.
    pub early_stop_nme: Option<f64>,
    pub sigma: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 30,
            batch_size: 8,
            lr: 5e-3,
            seed: 0,
            early_stop_nme: Some(0.042),
            sigma: DEFAULT_SIGMA,
        }
    }
}

struct Materialized {
    images: Vec<Vec<u8>>,
    centers: Vec<Vec<(f64, f64)>>, // heat-map grid centers per landmark
    landmarks: Vec<LandmarkSet>,
}

fn materialize(data: &DatasetHandle, spec: &ExtractorSpec) -> Result<Materialized> {
    let (hm, wm) = spec.map_size();
    let mut images = Vec::with_capacity(data.len());
    let mut centers = Vec::with_capacity(data.len());
    let mut landmarks = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let img = data.load_image(i)?;
        if img.shape() != (3, spec.input_size.0, spec.input_size.1) {
            return Err(Error::shape(
                format!("3x{}x{}", spec.input_size.0, spec.input_size.1),
                img.shape_str(),
            ));
        }
        images.push(img.to_rgb8());
        let lms = &data.records[i].landmarks;
        centers.push(
            lms.coords()
                .iter()
                .map(|p| {
                    let cx = (p[0] / spec.stride as f64).round().clamp(0.0, (wm - 1) as f64);
                    let cy = (p[1] / spec.stride as f64).round().clamp(0.0, (hm - 1) as f64);
                    (cx, cy)
                })
                .collect(),
        );
        landmarks.push(lms.clone());
    }
    Ok(Materialized {
        images,
        centers,
        landmarks,
    })
}

fn target_maps(centers: &[(f64, f64)], hm: usize, wm: usize, sigma: f64) -> Tensor {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut maps = Tensor::zeros(centers.len(), hm, wm);
    for (i, &(cx, cy)) in centers.iter().enumerate() {
        let plane = maps.plane_mut(i);
        for y in 0..hm {
            let dy2 = (y as f64 - cy).powi(2);
            for x in 0..wm {
                plane[y * wm + x] = (-(dy2 + (x as f64 - cx).powi(2)) * inv).exp();
            }
        }
    }
    maps
}

fn image_from_rgb8(bytes: &[u8], h: usize, w: usize) -> Tensor {
    Tensor::from_rgb8(bytes, h, w)
}

/// MSE training on Gaussian heat-map targets with Adam and best-validation
/// weight selection. Deterministic for a fixed seed: batch gradients are
/// reduced in index order.
pub fn train_extractor(
    spec: &ExtractorSpec,
    train: &DatasetHandle,
    val: &DatasetHandle,
    hyper: &TrainHyper,
) -> Result<Checkpoint> {
    if train.schema.len() != spec.k || val.schema.len() != spec.k {
        return Err(Error::shape(
            format!("schema with k={}", spec.k),
            format!("k={}", train.schema.len()),
        ));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset("training requires nonempty splits".into()));
    }
    let mut ckpt = Checkpoint::init(spec.clone(), hyper.seed);
    let (hm, wm) = spec.map_size();
    let (ih, iw) = spec.input_size;
    let tr = materialize(train, spec)?;
    let va = materialize(val, spec)?;

    let val_nme = |ckpt: &Checkpoint| -> Result<f64> {
        let sum: f64 = (0..va.images.len())
            .into_par_iter()
            .map(|i| {
                let img = image_from_rgb8(&va.images[i], ih, iw);
                let maps = ckpt.forward(&img)?;
                let pred = decode_landmarks(&maps, spec.input_size, val.schema.clone())?;
                metrics::nme(&pred, &va.landmarks[i])
            })
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum();
        Ok(sum / va.images.len() as f64)
    };

    let mut best_nme = val_nme(&ckpt)?;
    let mut best_weights = ckpt.graph.weights_flat();
    let mut adam = Adam::new(&ckpt.graph, hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x7261_1e5d_0b00_c1e5);
    let mut epochs_run = 0;

    'epochs: for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..tr.images.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let results: Vec<(ParamGrads, f64)> = batch
                .par_iter()
                .map(|&i| {
                    let img = image_from_rgb8(&tr.images[i], ih, iw);
                    let x = ckpt.normalized(&img);
                    let acts = ckpt.graph.forward(&x);
                    let pred = &acts[ckpt.graph.output_node()];
                    let target = target_maps(&tr.centers[i], hm, wm, hyper.sigma);
                    let n = pred.data().len() as f64;
                    let mut d = pred.clone();
                    let mut loss = 0.0;
                    for (dv, tv) in d.data_mut().iter_mut().zip(target.data()) {
                        let diff = *dv - tv;
                        loss += diff * diff;
                        *dv = 2.0 * diff / n;
                    }
                    loss /= n;
                    let (pg, _) = ckpt.graph.backward(&acts, d, true, false);
                    (pg.expect("param grads"), loss)
                })
                .collect();
            let mut total = ParamGrads::zeros_like(&ckpt.graph);
            let mut batch_loss = 0.0;
            for (pg, loss) in &results {
                total.accumulate(pg);
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total.scale(1.0 / batch.len() as f64);
            adam.step(&mut ckpt.graph, &total);
        }
        epochs_run = epoch + 1;
        let nme = val_nme(&ckpt)?;
        if !nme.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if std::env::var_os("LMBREAK_LOG").is_some() {
            eprintln!(
                "[train {}] epoch {epoch}: val NME {nme:.4} (best {:.4})",
                spec.arch.name(),
                best_nme.min(nme)
            );
        }
        if nme < best_nme {
            best_nme = nme;
            best_weights = ckpt.graph.weights_flat();
        }
        if let Some(stop) = hyper.early_stop_nme {
            if best_nme < stop {
                break 'epochs;
            }
        }
    }

    ckpt.graph.load_weights_flat(&best_weights)?;
    ckpt.meta = TrainMeta {
        dataset_hash: format!("{:016x}", train.content_hash()),
        epochs_run,
        best_val_nme: best_nme,
        seed: hyper.seed,
    };
    Ok(ckpt)
}

/// Mean NME of the extractor's decoded landmarks over a dataset.
pub fn evaluate_extractor(ckpt: &Checkpoint, data: &DatasetHandle) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluate_extractor".into()));
    }
    let sum: f64 = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let img = data.load_image(i)?;
            let maps = ckpt.forward(&img)?;
            let pred = decode_landmarks(&maps, ckpt.spec.input_size, data.schema.clone())?;
            metrics::nme(&pred, &data.records[i].landmarks)
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(sum / data.len() as f64)
}
