//! Synthesis proxy: a per-dataset reconstruction autoencoder over aligned
//! face crops.
//!
//! The full face-swap pipeline is replaced by same-identity reconstruction:
//! the autoencoder learns clean-aligned crops, so feeding it a crop aligned
//! with disrupted landmarks produces visibly different output. SSIM between
//! the two reconstructions (SSIM_W) quantifies the damage.

use crate::align::{canonical_template, similarity_transform, warp_crop};
use crate::error::{Error, Result};
use crate::extractor::archive;
use crate::landmarks::LandmarkSet;
use crate::metrics::ssim;
use crate::nn::{Adam, Graph, ParamGrads};
use crate::tensor::{ImageTensor, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthMeta {
    pub epochs_run: usize,
    /// Held-out reconstruction MSE (normalized pixel units) at the selected
    /// weights.
    pub recon_mse: f64,
    pub seed: u64,
}

/// Trained autoencoder over `crop_size` crops. Immutable after load.
#[derive(Debug, Clone)]
pub struct SynthCheckpoint {
    pub crop_size: usize,
    pub meta: SynthMeta,
    graph: Graph,
}

fn build_autoencoder(crop_size: usize) -> Result<Graph> {
    if !crop_size.is_multiple_of(8) || crop_size < 16 {
        return Err(Error::InvalidConfig(format!(
            "crop size {crop_size} must be a multiple of 8, at least 16"
        )));
    }
    let mut b = Graph::builder();
    let x = b.input();
    let c1 = b.conv(x, 3, 12, 3, 2, 1);
    let r1 = b.lrelu(c1);
    let c2 = b.conv(r1, 12, 24, 3, 2, 1);
    let r2 = b.lrelu(c2);
    let c3 = b.conv(r2, 24, 32, 3, 2, 1);
    let r3 = b.lrelu(c3);
    let c4 = b.conv(r3, 32, 32, 3, 1, 1);
    let r4 = b.lrelu(c4);
    let u1 = b.upsample2(r4);
    let c5 = b.conv(u1, 32, 24, 3, 1, 1);
    let r5 = b.lrelu(c5);
    let u2 = b.upsample2(r5);
    let c6 = b.conv(u2, 24, 12, 3, 1, 1);
    let r6 = b.lrelu(c6);
    let u3 = b.upsample2(r6);
    let c7 = b.conv(u3, 12, 3, 3, 1, 1);
    b.sigmoid(c7);
    Ok(b.finish())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of crops held out for the recorded reconstruction MSE.
    pub val_frac: f64,
}

impl Default for SynthHyper {
    fn default() -> Self {
        SynthHyper {
            epochs: 14,
            batch_size: 16,
            lr: 2e-3,
            seed: 0,
            val_frac: 0.1,
        }
    }
}

impl SynthCheckpoint {
    pub fn init(crop_size: usize, seed: u64) -> Result<SynthCheckpoint> {
        let mut graph = build_autoencoder(crop_size)?;
        graph.init_weights(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5e1f_ae0d_c0de_0002));
        Ok(SynthCheckpoint {
            crop_size,
            meta: SynthMeta {
                seed,
                ..SynthMeta::default()
            },
            graph,
        })
    }

    /// Reconstruct a crop; input and output are `[0, 255]` pixel tensors.
    pub fn reconstruct(&self, crop: &ImageTensor) -> Result<ImageTensor> {
        if crop.shape() != (3, self.crop_size, self.crop_size) {
            return Err(Error::shape(
                format!("3x{}x{}", self.crop_size, self.crop_size),
                crop.shape_str(),
            ));
        }
        let mut x = crop.clone();
        for v in x.data_mut() {
            *v /= 255.0;
        }
        let acts = self.graph.forward(&x);
        let mut out = acts.into_iter().last().expect("nonempty graph");
        for v in out.data_mut() {
            *v *= 255.0;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({
            "version": 1,
            "kind": "synthesizer",
            "crop_size": self.crop_size,
            "meta": self.meta,
        });
        archive::save(path, &header, &self.graph.weights_flat())
    }

    pub fn load(path: &Path) -> Result<SynthCheckpoint> {
        let (header, weights) = archive::load(path)?;
        archive::check_kind(&header, "synthesizer")?;
        let crop_size = header
            .get("crop_size")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint("missing crop_size".into()))? as usize;
        let meta: SynthMeta = serde_json::from_value(
            header
                .get("meta")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing meta".into()))?,
        )?;
        let mut graph = build_autoencoder(crop_size)?;
        graph.load_weights_flat(&weights)?;
        Ok(SynthCheckpoint {
            crop_size,
            meta,
            graph,
        })
    }

    pub fn weights_flat(&self) -> Vec<f64> {
        self.graph.weights_flat()
    }
}

/// Train the reconstruction autoencoder on clean-aligned crops.
///
/// Requires at least 200 uniform square crops. Deterministic under a fixed
/// seed (ordered gradient reduction); divergence to non-finite loss fails
/// with the epoch index.
pub fn train_synthesizer(crops: &[ImageTensor], hyper: &SynthHyper) -> Result<SynthCheckpoint> {
    if crops.len() < 200 {
        return Err(Error::InvalidConfig(format!(
            "train_synthesizer needs >= 200 crops, got {}",
            crops.len()
        )));
    }
    let shape = crops[0].shape();
    if shape.1 != shape.2 {
        return Err(Error::InvalidConfig("crops must be square".into()));
    }
    for (i, c) in crops.iter().enumerate() {
        if c.shape() != shape {
            return Err(Error::shape(
                format!("crop 0 shape {}", crops[0].shape_str()),
                format!("crop {i} shape {}", c.shape_str()),
            ));
        }
    }
    let crop_size = shape.1;
    let mut ckpt = SynthCheckpoint::init(crop_size, hyper.seed)?;

    // normalized copies once; crops are small
    let normalized: Vec<Tensor> = crops
        .iter()
        .map(|c| {
            let mut t = c.clone();
            for v in t.data_mut() {
                *v /= 255.0;
            }
            t
        })
        .collect();
    let n_val = ((crops.len() as f64 * hyper.val_frac).round() as usize).max(1);
    let n_train = crops.len() - n_val;
    let (train, val) = normalized.split_at(n_train);

    let val_mse = |g: &Graph| -> f64 {
        let total: f64 = val
            .par_iter()
            .map(|x| {
                let acts = g.forward(x);
                let out = &acts[g.output_node()];
                let mut mse = 0.0;
                for (a, b) in out.data().iter().zip(x.data()) {
                    mse += (a - b).powi(2);
                }
                mse / x.data().len() as f64
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        total / val.len() as f64
    };

    let mut best_mse = val_mse(&ckpt.graph);
    let mut best_weights = ckpt.graph.weights_flat();
    let mut adam = Adam::new(&ckpt.graph, hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5e1f_7241_1e5d);
    let mut epochs_run = 0;

    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size) {
            let results: Vec<(ParamGrads, f64)> = batch
                .par_iter()
                .map(|&i| {
                    let x = &train[i];
                    let acts = ckpt.graph.forward(x);
                    let out = &acts[ckpt.graph.output_node()];
                    let n = out.data().len() as f64;
                    let mut d = out.clone();
                    let mut loss = 0.0;
                    for (dv, tv) in d.data_mut().iter_mut().zip(x.data()) {
                        let diff = *dv - tv;
                        loss += diff * diff;
                        *dv = 2.0 * diff / n;
                    }
                    let (pg, _) = ckpt.graph.backward(&acts, d, true, false);
                    (pg.expect("param grads"), loss / n)
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
        let mse = val_mse(&ckpt.graph);
        if !mse.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if mse < best_mse {
            best_mse = mse;
            best_weights = ckpt.graph.weights_flat();
        }
    }

    ckpt.graph.load_weights_flat(&best_weights)?;
    ckpt.meta = SynthMeta {
        epochs_run,
        recon_mse: best_mse,
        seed: hyper.seed,
    };
    Ok(ckpt)
}

/// Align `image` twice — once with each landmark set — synthesize both crops
/// and return the SSIM between the two reconstructions.
pub fn ssim_w_pipeline(
    image: &ImageTensor,
    clean_landmarks: &LandmarkSet,
    attacked_landmarks: &LandmarkSet,
    synth: &SynthCheckpoint,
) -> Result<f64> {
    let template = canonical_template(clean_landmarks.len(), synth.crop_size)?;
    let t_clean = similarity_transform(clean_landmarks, &template)?;
    let t_adv = similarity_transform(attacked_landmarks, &template)?;
    let crop_clean = warp_crop(image, &t_clean, synth.crop_size);
    let crop_adv = warp_crop(image, &t_adv, synth.crop_size);
    let recon_clean = synth.reconstruct(&crop_clean)?;
    let recon_adv = synth.reconstruct(&crop_adv)?;
    ssim(&recon_clean, &recon_adv)
}

/// Clean-aligned crop of an image for synthesizer training.
pub fn aligned_crop(
    image: &ImageTensor,
    landmarks: &LandmarkSet,
    crop_size: usize,
) -> Result<ImageTensor> {
    let template = canonical_template(landmarks.len(), crop_size)?;
    let t = similarity_transform(landmarks, &template)?;
    Ok(warp_crop(image, &t, crop_size))
}
