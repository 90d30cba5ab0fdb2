//! Compression degradation channels for robustness runs.
//!
//! JPEG goes through the `image` crate's baseline codec. Video compression
//! runs an external encoder via a configurable command template; when no
//! tool is configured, an intra-frame block-DCT quantization fallback stands
//! in so the pipeline stays runnable. The fallback is NOT equivalent to real
//! MPEG4/H264 encoding (no temporal prediction); it only reproduces the
//! lossy-quantization character of the chain.

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Tensor};
use serde::{Deserialize, Serialize};
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

/// Encode to baseline JPEG at `quality`, decode back. Shape is preserved.
pub fn jpeg_roundtrip(image: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidConfig(format!(
            "jpeg quality must be in [1, 100], got {quality}"
        )));
    }
    let (c, h, w) = image.shape();
    if c != 3 {
        return Err(Error::shape("3-channel image", image.shape_str()));
    }
    let rgb = image.to_rgb8();
    let mut buf = Vec::new();
    let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(Cursor::new(&mut buf), quality);
    enc.encode(&rgb, w as u32, h as u32, image::ExtendedColorType::Rgb8)?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?.to_rgb8();
    if (decoded.width() as usize, decoded.height() as usize) != (w, h) {
        return Err(Error::shape(
            format!("{w}x{h}"),
            format!("{}x{}", decoded.width(), decoded.height()),
        ));
    }
    Ok(Tensor::from_rgb8(decoded.as_raw(), h, w))
}

/// Video compression chain: single encode (C) or double encode (C²).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chain {
    C,
    #[serde(rename = "C2")]
    C2,
}

/// External encoder command templates. A template is run through `sh -c`
/// with `{in_dir}`, `{frames_pattern}` and `{out_file}` expanded; it must
/// leave decoded frames at `{in_dir}/decoded/frame_%04d.png`. When the
/// template for a chain is absent the DCT fallback runs instead.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VideoCodecConfig {
    #[serde(default)]
    pub video_codec_c: Option<String>,
    #[serde(default)]
    pub video_codec_c2: Option<String>,
}

impl VideoCodecConfig {
    fn template(&self, chain: Chain) -> Option<&str> {
        match chain {
            Chain::C => self.video_codec_c.as_deref(),
            Chain::C2 => self.video_codec_c2.as_deref(),
        }
    }
}

static WORKSPACE_COUNTER: AtomicU64 = AtomicU64::new(0);

fn unique_workspace() -> Result<PathBuf> {
    let n = WORKSPACE_COUNTER.fetch_add(1, Ordering::Relaxed);
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let dir = std::env::temp_dir().join(format!(
        "lmbreak-video-{}-{}-{}",
        std::process::id(),
        nanos,
        n
    ));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Compress a frame sequence through the chain and decode back to frames.
/// Frame count and shape are preserved.
pub fn video_roundtrip(
    frames: &[ImageTensor],
    chain: Chain,
    codec: &VideoCodecConfig,
) -> Result<Vec<ImageTensor>> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("video_roundtrip needs at least one frame".into()));
    }
    let shape = frames[0].shape();
    for (i, f) in frames.iter().enumerate() {
        if f.shape() != shape {
            return Err(Error::shape(
                format!("frame 0 shape {}", frames[0].shape_str()),
                format!("frame {i} shape {}", f.shape_str()),
            ));
        }
    }
    match codec.template(chain) {
        Some(template) => external_roundtrip(frames, template),
        None => Ok(frames.iter().map(|f| dct_fallback(f, chain)).collect()),
    }
}

fn external_roundtrip(frames: &[ImageTensor], template: &str) -> Result<Vec<ImageTensor>> {
    let dir = unique_workspace()?;
    let result = (|| {
        let decoded_dir = dir.join("decoded");
        std::fs::create_dir_all(&decoded_dir).map_err(|e| Error::io(&decoded_dir, e))?;
        for (i, f) in frames.iter().enumerate() {
            f.save_png(&dir.join(format!("frame_{:04}.png", i + 1)))?;
        }
        let in_dir = dir.to_string_lossy().into_owned();
        let cmd = template
            .replace("{in_dir}", &in_dir)
            .replace("{frames_pattern}", &format!("{in_dir}/frame_%04d.png"))
            .replace("{out_file}", &format!("{in_dir}/video.out"));
        let output = std::process::Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .output()
            .map_err(|e| Error::Codec {
                message: format!("failed to spawn `{cmd}`: {e}"),
                output: String::new(),
            })?;
        let combined = format!(
            "{}{}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        );
        if !output.status.success() {
            return Err(Error::Codec {
                message: format!("`{cmd}` exited with {}", output.status),
                output: combined,
            });
        }
        let mut out = Vec::with_capacity(frames.len());
        for i in 0..frames.len() {
            let path = decoded_dir.join(format!("frame_{:04}.png", i + 1));
            if !path.is_file() {
                return Err(Error::Codec {
                    message: format!("decoded frame {} missing at {}", i + 1, path.display()),
                    output: combined.clone(),
                });
            }
            out.push(Tensor::load_png(&path)?);
        }
        Ok(out)
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result
}

// Standard JPEG luminance quantization table (quality-50 base).
const QTABLE: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

fn dct_basis() -> [f64; 64] {
    let mut c = [0.0; 64];
    for u in 0..8 {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for x in 0..8 {
            c[u * 8 + x] = a * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    c
}

/// Intra-frame block-DCT quantization. C uses the base table; C² runs the C
/// pass and re-quantizes with a coarser table, so it always distorts at
/// least as much.
pub fn dct_fallback(image: &ImageTensor, chain: Chain) -> ImageTensor {
    match chain {
        Chain::C => dct_quantize(image, 1.0),
        Chain::C2 => dct_quantize(&dct_quantize(image, 1.0), 1.8),
    }
}

fn dct_quantize(image: &ImageTensor, table_scale: f64) -> ImageTensor {
    let (c, h, w) = image.shape();
    let basis = dct_basis();
    let mut out = Tensor::zeros(c, h, w);
    let bh = h.div_ceil(8);
    let bw = w.div_ceil(8);
    let mut block = [0.0f64; 64];
    let mut tmp = [0.0f64; 64];
    let mut coef = [0.0f64; 64];
    for ch in 0..c {
        let src = image.plane(ch);
        for by in 0..bh {
            for bx in 0..bw {
                // gather with edge replication
                for y in 0..8 {
                    let sy = (by * 8 + y).min(h - 1);
                    for x in 0..8 {
                        let sx = (bx * 8 + x).min(w - 1);
                        block[y * 8 + x] = src[sy * w + sx] - 128.0;
                    }
                }
                // coef = B * block * B^T
                for u in 0..8 {
                    for x in 0..8 {
                        let mut acc = 0.0;
                        for y in 0..8 {
                            acc += basis[u * 8 + y] * block[y * 8 + x];
                        }
                        tmp[u * 8 + x] = acc;
                    }
                }
                for u in 0..8 {
                    for v in 0..8 {
                        let mut acc = 0.0;
                        for x in 0..8 {
                            acc += tmp[u * 8 + x] * basis[v * 8 + x];
                        }
                        let q = QTABLE[u * 8 + v] * table_scale;
                        coef[u * 8 + v] = (acc / q).round() * q;
                    }
                }
                // block = B^T * coef * B
                for y in 0..8 {
                    for v in 0..8 {
                        let mut acc = 0.0;
                        for u in 0..8 {
                            acc += basis[u * 8 + y] * coef[u * 8 + v];
                        }
                        tmp[y * 8 + v] = acc;
                    }
                }
                let dst = out.plane_mut(ch);
                for y in 0..8 {
                    let sy = by * 8 + y;
                    if sy >= h {
                        continue;
                    }
                    for x in 0..8 {
                        let sx = bx * 8 + x;
                        if sx >= w {
                            continue;
                        }
                        let mut acc = 0.0;
                        for v in 0..8 {
                            acc += tmp[y * 8 + v] * basis[v * 8 + x];
                        }
                        dst[sy * w + sx] = (acc + 128.0).clamp(0.0, 255.0).round();
                    }
                }
            }
        }
    }
    out
}
