//! Config-driven experiment orchestration.
//!
//! A run covers: dataset generation and splitting, extractor training (or
//! checkpoint loading), synthesizer training, the attack battery over test
//! images with source×target expansion, degradation channels, metric
//! evaluation, and reporting. Images are the unit of parallelism; every
//! reduction is performed in index order so a fixed config reproduces its
//! outputs byte for byte.

pub mod plot;
pub mod report;

use crate::attack::{run_attack, AttackConfig};
use crate::degrade::{jpeg_roundtrip, video_roundtrip, Chain, VideoCodecConfig};
use crate::error::{Error, Result};
use crate::extractor::{
    decode_landmarks, train_extractor, Architecture, Checkpoint,
    ExtractorSpec, TrainHyper,
};
use crate::faces::DatasetHandle;
use crate::landmarks::LandmarkSet;
use crate::metrics::{landmark_roi, mask_ssim, nme};
use crate::synth::{aligned_crop, train_synthesizer, SynthCheckpoint, SynthHyper};
use crate::tensor::ImageTensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_image_size")]
    pub image_size: (usize, usize),
}

fn default_image_size() -> (usize, usize) {
    crate::faces::DEFAULT_IMAGE_SIZE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_early_stop")]
    pub early_stop_nme: Option<f64>,
}

fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    5e-3
}
fn default_early_stop() -> Option<f64> {
    Some(0.042)
}

impl TrainSpec {
    fn hyper(&self) -> TrainHyper {
        TrainHyper {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            early_stop_nme: self.early_stop_nme,
            sigma: crate::faces::DEFAULT_SIGMA,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorEntry {
    pub arch: String,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<TrainSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackEntry {
    pub id: String,
    #[serde(flatten)]
    pub config: AttackConfig,
}

/// Degradation channel tag; the CSV column uses the same string form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Degradation {
    None,
    Jpeg(u8),
    VideoC,
    VideoC2,
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degradation::None => write!(f, "none"),
            Degradation::Jpeg(q) => write!(f, "jpeg_q{q}"),
            Degradation::VideoC => write!(f, "video_c"),
            Degradation::VideoC2 => write!(f, "video_c2"),
        }
    }
}

impl FromStr for Degradation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Degradation> {
        match s {
            "none" => Ok(Degradation::None),
            "video_c" => Ok(Degradation::VideoC),
            "video_c2" => Ok(Degradation::VideoC2),
            other => {
                if let Some(q) = other.strip_prefix("jpeg_q") {
                    let q: u8 = q
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad degradation {other:?}")))?;
                    Ok(Degradation::Jpeg(q))
                } else {
                    Err(Error::InvalidConfig(format!("bad degradation {other:?}")))
                }
            }
        }
    }
}

impl Serialize for Degradation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Degradation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricsToggles {
    #[serde(default = "default_true")]
    pub ssim_i: bool,
    #[serde(default = "default_true")]
    pub ssim_w: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MetricsToggles {
    fn default() -> Self {
        MetricsToggles {
            ssim_i: true,
            ssim_w: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_synth_epochs")]
    pub epochs: usize,
    #[serde(default = "default_crop")]
    pub crop_size: usize,
    #[serde(default = "default_max_crops")]
    pub max_crops: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_synth_epochs() -> usize {
    14
}
fn default_crop() -> usize {
    64
}
fn default_max_crops() -> usize {
    320
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            epochs: default_synth_epochs(),
            crop_size: default_crop(),
            max_crops: default_max_crops(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_ratios")]
    pub split_ratios: (f64, f64, f64),
    #[serde(default)]
    pub split_seed: u64,
    pub extractors: Vec<ExtractorEntry>,
    #[serde(default)]
    pub attacks: Vec<AttackEntry>,
    #[serde(default = "default_degradations")]
    pub degradations: Vec<Degradation>,
    #[serde(default)]
    pub metrics: MetricsToggles,
    /// Emit clean ("none" attack) rows alongside the attack rows.
    #[serde(default = "default_true")]
    pub include_clean: bool,
    #[serde(default = "default_test_images")]
    pub test_images: usize,
    #[serde(default = "default_roi_margin")]
    pub roi_margin: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub synth: SynthSpec,
    #[serde(default)]
    pub video_codec: VideoCodecConfig,
}

fn default_ratios() -> (f64, f64, f64) {
    (0.8, 0.1, 0.1)
}
fn default_degradations() -> Vec<Degradation> {
    vec![Degradation::None]
}
fn default_test_images() -> usize {
    50
}
fn default_roi_margin() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub image_id: String,
    /// Target extractor (the one being evaluated).
    pub extractor: String,
    /// "none" or "<attack id>@<source arch>".
    pub attack: String,
    pub degradation: String,
    pub nme: f64,
    pub ssim_i: Option<f64>,
    pub ssim_w: Option<f64>,
}

/// Flat record list with cell-uniqueness enforcement and aggregation views.
#[derive(Debug, Clone, Default)]
pub struct ResultTable {
    records: Vec<EvaluationRecord>,
}

impl ResultTable {
    pub fn new() -> Self {
        ResultTable::default()
    }

    pub fn from_records(records: Vec<EvaluationRecord>) -> Result<ResultTable> {
        let mut t = ResultTable::new();
        for r in records {
            t.push(r)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, rec: EvaluationRecord) -> Result<()> {
        if self
            .records
            .iter()
            .any(|r| r.image_id == rec.image_id && r.extractor == rec.extractor && r.attack == rec.attack && r.degradation == rec.degradation)
        {
            return Err(Error::InvalidConfig(format!(
                "duplicate cell ({}, {}, {}, {})",
                rec.image_id, rec.extractor, rec.attack, rec.degradation
            )));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sort(&mut self) {
        self.records.sort_by(|a, b| {
            (&a.attack, &a.extractor, &a.degradation, &a.image_id)
                .cmp(&(&b.attack, &b.extractor, &b.degradation, &b.image_id))
        });
    }

    pub fn mean_nme_where<F: Fn(&EvaluationRecord) -> bool>(&self, f: F) -> Option<f64> {
        let vals: Vec<f64> = self.records.iter().filter(|r| f(r)).map(|r| r.nme).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_ssim_i_where<F: Fn(&EvaluationRecord) -> bool>(&self, f: F) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| f(r))
            .filter_map(|r| r.ssim_i)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_ssim_w_where<F: Fn(&EvaluationRecord) -> bool>(&self, f: F) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| f(r))
            .filter_map(|r| r.ssim_w)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Everything a finished run exposes for inspection and assertions.
pub struct ExperimentRun {
    pub table: ResultTable,
    /// Per-cell failures that were recorded and skipped.
    pub failures: Vec<String>,
    pub checkpoints: Vec<(String, Checkpoint)>,
    pub synth: Option<SynthCheckpoint>,
    pub test_set: DatasetHandle,
}

pub fn attack_label(entry_id: &str, source_arch: &str) -> String {
    format!("{entry_id}@{source_arch}")
}

/// Dataset generation + deterministic three-way split.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<(DatasetHandle, DatasetHandle, DatasetHandle)> {
    let full = DatasetHandle::generate(cfg.dataset.size, cfg.dataset.seed, cfg.dataset.image_size);
    full.split(cfg.split_ratios, cfg.split_seed)
}

/// Load or train every configured extractor. A training stanza wins over a
/// missing checkpoint file; having neither is a config error.
pub fn prepare_extractors(
    cfg: &ExperimentConfig,
    train: &DatasetHandle,
    val: &DatasetHandle,
) -> Result<Vec<(String, Checkpoint)>> {
    if cfg.extractors.is_empty() {
        return Err(Error::InvalidConfig("no extractors configured".into()));
    }
    let mut out = Vec::new();
    for entry in &cfg.extractors {
        let arch = Architecture::from_name(&entry.arch)?;
        let ckpt = if let Some(path) = &entry.checkpoint {
            if path.is_file() {
                Checkpoint::load(path)?
            } else if let Some(ts) = &entry.train {
                let spec = ExtractorSpec::new(arch, train.schema.len(), cfg.dataset.image_size)?;
                let ck = train_extractor(&spec, train, val, &ts.hyper())?;
                ck.save(path)?;
                ck
            } else {
                return Err(Error::InvalidConfig(format!(
                    "extractor {}: checkpoint {} missing and no training stanza",
                    entry.arch,
                    path.display()
                )));
            }
        } else if let Some(ts) = &entry.train {
            let spec = ExtractorSpec::new(arch, train.schema.len(), cfg.dataset.image_size)?;
            train_extractor(&spec, train, val, &ts.hyper())?
        } else {
            return Err(Error::InvalidConfig(format!(
                "extractor {}: neither checkpoint nor training stanza",
                entry.arch
            )));
        };
        out.push((entry.arch.clone(), ckpt));
    }
    Ok(out)
}

/// Train the shared synthesizer on clean-aligned training crops.
pub fn prepare_synth(cfg: &ExperimentConfig, train: &DatasetHandle) -> Result<SynthCheckpoint> {
    let n = train.len().min(cfg.synth.max_crops);
    let crops: Vec<ImageTensor> = (0..n)
        .into_par_iter()
        .map(|i| {
            let img = train.load_image(i)?;
            aligned_crop(&img, &train.records[i].landmarks, cfg.synth.crop_size)
        })
        .collect::<Result<Vec<_>>>()?;
    train_synthesizer(
        &crops,
        &SynthHyper {
            epochs: cfg.synth.epochs,
            seed: cfg.synth.seed,
            ..SynthHyper::default()
        },
    )
}

fn degrade_image(img: &ImageTensor, deg: Degradation, codec: &VideoCodecConfig) -> Result<ImageTensor> {
    match deg {
        Degradation::None => Ok(img.clone()),
        Degradation::Jpeg(q) => jpeg_roundtrip(img, q),
        Degradation::VideoC => Ok(video_roundtrip(std::slice::from_ref(img), Chain::C, codec)?.remove(0)),
        Degradation::VideoC2 => Ok(video_roundtrip(std::slice::from_ref(img), Chain::C2, codec)?.remove(0)),
    }
}

struct PerImageOutput {
    records: Vec<EvaluationRecord>,
    failures: Vec<String>,
}

/// The attack battery over the first `test_images` of the test split.
pub fn run_battery(
    cfg: &ExperimentConfig,
    ckpts: &[(String, Checkpoint)],
    synth: Option<&SynthCheckpoint>,
    test: &DatasetHandle,
) -> Result<(ResultTable, Vec<String>)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("battery needs test images".into()));
    }
    let n = test.len().min(cfg.test_images.max(1));
    let image_size = cfg.dataset.image_size;

    let per_image: Vec<PerImageOutput> = (0..n)
        .into_par_iter()
        .map(|idx| -> Result<PerImageOutput> {
            let mut out = PerImageOutput {
                records: Vec::new(),
                failures: Vec::new(),
            };
            let rec = &test.records[idx];
            let image = test.load_image(idx)?;
            let gt = &rec.landmarks;
            let roi = landmark_roi(gt, cfg.roi_margin, image_size)?;

            // clean decoded landmarks per target, reused for ssim_w alignment
            let mut clean_decode: BTreeMap<&str, LandmarkSet> = BTreeMap::new();
            for (name, ckpt) in ckpts {
                let maps = ckpt.forward(&image)?;
                clean_decode.insert(name, decode_landmarks(&maps, image_size, test.schema.clone())?);
            }

            let eval_cell = |attack_id: String,
                                 candidate: &ImageTensor,
                                 out: &mut PerImageOutput|
             -> Result<()> {
                for deg in &cfg.degradations {
                    let degraded = match degrade_image(candidate, *deg, &cfg.video_codec) {
                        Ok(d) => d,
                        Err(e) => {
                            out.failures.push(format!(
                                "{}/{attack_id}/{deg}: degradation failed: {e}",
                                rec.id
                            ));
                            continue;
                        }
                    };
                    for (target, ckpt) in ckpts {
                        let maps = ckpt.forward(&degraded)?;
                        let pred = decode_landmarks(&maps, image_size, test.schema.clone())?;
                        let nme_val = nme(&pred, gt)?;
                        let ssim_i = if cfg.metrics.ssim_i {
                            match mask_ssim(&degraded, &image, &roi) {
                                Ok(v) => Some(v),
                                Err(e) => {
                                    out.failures.push(format!(
                                        "{}/{attack_id}/{deg}/{target}: ssim_i failed: {e}",
                                        rec.id
                                    ));
                                    None
                                }
                            }
                        } else {
                            None
                        };
                        let ssim_w = match (cfg.metrics.ssim_w, synth) {
                            (true, Some(sc)) => {
                                match crate::synth::ssim_w_pipeline(
                                    &degraded,
                                    &clean_decode[target.as_str()],
                                    &pred,
                                    sc,
                                ) {
                                    Ok(v) => Some(v),
                                    Err(e) => {
                                        out.failures.push(format!(
                                            "{}/{attack_id}/{deg}/{target}: ssim_w failed: {e}",
                                            rec.id
                                        ));
                                        None
                                    }
                                }
                            }
                            _ => None,
                        };
                        out.records.push(EvaluationRecord {
                            image_id: rec.id.clone(),
                            extractor: target.clone(),
                            attack: attack_id.clone(),
                            degradation: deg.to_string(),
                            nme: nme_val,
                            ssim_i,
                            ssim_w,
                        });
                    }
                }
                Ok(())
            };

            if cfg.include_clean {
                eval_cell("none".to_string(), &image, &mut out)?;
            }
            for (source, ckpt) in ckpts {
                for entry in &cfg.attacks {
                    match run_attack(ckpt, &image, &entry.config) {
                        Ok(res) => {
                            eval_cell(attack_label(&entry.id, source), &res.adversarial, &mut out)?
                        }
                        Err(e) => out.failures.push(format!(
                            "{}/{}@{source}: attack failed: {e}",
                            rec.id, entry.id
                        )),
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = ResultTable::new();
    let mut failures = Vec::new();
    let mut seen = BTreeSet::new();
    for mut img_out in per_image {
        for r in img_out.records.drain(..) {
            let key = (
                r.image_id.clone(),
                r.extractor.clone(),
                r.attack.clone(),
                r.degradation.clone(),
            );
            if !seen.insert(key) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate cell ({}, {}, {}, {})",
                    r.image_id, r.extractor, r.attack, r.degradation
                )));
            }
            table.records.push(r);
        }
        failures.extend(img_out.failures);
    }
    table.sort();
    Ok((table, failures))
}

/// Full protocol: dataset, extractors, synthesizer, battery.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        let (train, val, test) = prepare_dataset(cfg)?;
        let ckpts = prepare_extractors(cfg, &train, &val)?;
        let synth = if cfg.metrics.ssim_w {
            Some(prepare_synth(cfg, &train)?)
        } else {
            None
        };
        let (table, failures) = run_battery(cfg, &ckpts, synth.as_ref(), &test)?;
        Ok(ExperimentRun {
            table,
            failures,
            checkpoints: ckpts,
            synth,
            test_set: test,
        })
    })
}

/// Mean-NME (and mean-SSIM_W) matrix view: rows are perturbation sources,
/// columns are attacked extractors.
#[derive(Debug, Clone, Serialize)]
pub struct TransferMatrix {
    pub attack_id: String,
    pub degradation: String,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub nme: Vec<Vec<f64>>,
    pub ssim_w: Vec<Vec<Option<f64>>>,
}

impl TransferMatrix {
    pub fn nme_cell(&self, source: &str, target: &str) -> Option<f64> {
        let i = self.sources.iter().position(|s| s == source)?;
        let j = self.targets.iter().position(|t| t == target)?;
        Some(self.nme[i][j])
    }
}

/// Build the source×target matrix for one attack id at one degradation.
pub fn transfer_matrix(table: &ResultTable, attack_id: &str, degradation: &str) -> Result<TransferMatrix> {
    let mut sources = BTreeSet::new();
    let mut targets = BTreeSet::new();
    let prefix = format!("{attack_id}@");
    for r in table.records() {
        targets.insert(r.extractor.clone());
        if let Some(src) = r.attack.strip_prefix(&prefix) {
            sources.insert(src.to_string());
        }
    }
    if sources.is_empty() {
        return Err(Error::MissingCells(vec![format!("no rows for attack {attack_id}")]));
    }
    let sources: Vec<String> = sources.into_iter().collect();
    let targets: Vec<String> = targets.into_iter().collect();
    let mut nme = vec![vec![0.0; targets.len()]; sources.len()];
    let mut ssim_w = vec![vec![None; targets.len()]; sources.len()];
    let mut missing = Vec::new();
    for (i, src) in sources.iter().enumerate() {
        let label = attack_label(attack_id, src);
        for (j, tgt) in targets.iter().enumerate() {
            let sel = |r: &EvaluationRecord| {
                r.attack == label && &r.extractor == tgt && r.degradation == degradation
            };
            match table.mean_nme_where(sel) {
                Some(v) => nme[i][j] = v,
                None => missing.push(format!("{src}->{tgt}@{degradation}")),
            }
            ssim_w[i][j] = table.mean_ssim_w_where(sel);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    Ok(TransferMatrix {
        attack_id: attack_id.to_string(),
        degradation: degradation.to_string(),
        sources,
        targets,
        nme,
        ssim_w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha,
    MaxIters,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub mean_nme: f64,
    pub mean_ssim_i: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCurves {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// One curve per extractor, keyed by architecture name.
    pub curves: BTreeMap<String, Vec<SweepPoint>>,
}

/// White-box ablation over step size or iteration count.
///
/// The iteration-count axis exploits the prefix property of projected runs:
/// one full-length attack per image is snapshotted at every requested count,
/// which is iterate-identical to running each count separately.
pub fn ablation_sweep(
    cfg: &ExperimentConfig,
    ckpts: &[(String, Checkpoint)],
    test: &DatasetHandle,
    base: &AttackConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<SweepCurves> {
    if values.len() < 2 {
        return Err(Error::InvalidConfig("sweep needs at least 2 values".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset("sweep needs test images".into()));
    }
    let n = test.len().min(cfg.test_images.max(1));
    let image_size = cfg.dataset.image_size;
    let mut curves = BTreeMap::new();

    for (name, ckpt) in ckpts {
        // per image × value accumulators
        let per_image: Vec<Vec<(f64, Option<f64>)>> = (0..n)
            .into_par_iter()
            .map(|idx| -> Result<Vec<(f64, Option<f64>)>> {
                let image = test.load_image(idx)?;
                let gt = &test.records[idx].landmarks;
                let roi = landmark_roi(gt, cfg.roi_margin, image_size)?;
                let evaluate = |img: &ImageTensor| -> Result<(f64, Option<f64>)> {
                    let maps = ckpt.forward(img)?;
                    let pred = decode_landmarks(&maps, image_size, test.schema.clone())?;
                    let nme_val = nme(&pred, gt)?;
                    let s = cfg
                        .metrics
                        .ssim_i
                        .then(|| mask_ssim(img, &image, &roi))
                        .transpose()?;
                    Ok((nme_val, s))
                };
                match axis {
                    SweepAxis::Alpha => {
                        let mut row = Vec::with_capacity(values.len());
                        for &alpha in values {
                            let cfg_a = AttackConfig { alpha, ..base.clone() };
                            let res = run_attack(ckpt, &image, &cfg_a)?;
                            row.push(evaluate(&res.adversarial)?);
                        }
                        Ok(row)
                    }
                    SweepAxis::MaxIters => {
                        let wanted: Vec<usize> = values.iter().map(|v| v.round() as usize).collect();
                        let t_max = *wanted.iter().max().expect("nonempty");
                        let cfg_t = AttackConfig { max_iters: t_max, ..base.clone() };
                        let mut snaps: BTreeMap<usize, ImageTensor> = BTreeMap::new();
                        crate::attack::run_attack_traced(
                            ckpt,
                            &image,
                            &cfg_t,
                            crate::attack::TRANS_SCALE_RANGE,
                            |t, img| {
                                if wanted.contains(&t) {
                                    snaps.insert(t, img.clone());
                                }
                            },
                        )?;
                        let mut row = Vec::with_capacity(values.len());
                        for &t in &wanted {
                            // attacks that stopped early keep their last iterate
                            let img = snaps
                                .range(..=t)
                                .next_back()
                                .map(|(_, im)| im.clone())
                                .unwrap_or_else(|| image.clone());
                            row.push(evaluate(&img)?);
                        }
                        Ok(row)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let mut points = Vec::with_capacity(values.len());
        for (vi, &value) in values.iter().enumerate() {
            let nmes: Vec<f64> = per_image.iter().map(|row| row[vi].0).collect();
            let ssims: Vec<f64> = per_image.iter().filter_map(|row| row[vi].1).collect();
            points.push(SweepPoint {
                value,
                mean_nme: nmes.iter().sum::<f64>() / nmes.len() as f64,
                mean_ssim_i: (!ssims.is_empty())
                    .then(|| ssims.iter().sum::<f64>() / ssims.len() as f64),
            });
        }
        curves.insert(name.clone(), points);
    }
    Ok(SweepCurves {
        axis,
        values: values.to_vec(),
        curves,
    })
}

/// Clean-row means must reproduce [`evaluate_extractor`] on the same slice.
pub fn clean_nme_from_table(table: &ResultTable, extractor: &str) -> Option<f64> {
    table.mean_nme_where(|r| r.attack == "none" && r.degradation == "none" && r.extractor == extractor)
}

pub use report::emit_report;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{BudgetMode, Variant};
    use crate::extractor::evaluate_extractor;

    fn tiny_config(out_dir: Option<PathBuf>) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec {
                size: 30,
                seed: 77,
                image_size: (128, 128),
            },
            split_ratios: (0.7, 0.15, 0.15),
            split_seed: 1,
            extractors: vec![
                ExtractorEntry {
                    arch: "hourglass-mini".into(),
                    checkpoint: None,
                    train: Some(TrainSpec {
                        epochs: 0,
                        ..serde_json::from_str("{}").unwrap()
                    }),
                },
                ExtractorEntry {
                    arch: "encdec-mini".into(),
                    checkpoint: None,
                    train: Some(TrainSpec {
                        epochs: 0,
                        ..serde_json::from_str("{}").unwrap()
                    }),
                },
            ],
            attacks: vec![
                AttackEntry {
                    id: "LB".into(),
                    config: AttackConfig {
                        max_iters: 2,
                        ..AttackConfig::default()
                    },
                },
                AttackEntry {
                    id: "Base2".into(),
                    config: AttackConfig {
                        variant: Variant::IFGSM,
                        max_iters: 2,
                        budget_mode: BudgetMode::Project,
                        ..AttackConfig::default()
                    },
                },
            ],
            degradations: vec![Degradation::None],
            metrics: MetricsToggles {
                ssim_i: false,
                ssim_w: false,
            },
            include_clean: false,
            test_images: 3,
            roi_margin: 0.25,
            out_dir,
            jobs: 2,
            synth: SynthSpec::default(),
            video_codec: VideoCodecConfig::default(),
        }
    }

    #[test]
    fn record_count_matches_source_target_expansion() {
        let cfg = tiny_config(None);
        let run = run_experiment(&cfg).unwrap();
        // 2 extractors (sources) x 2 attacks x 2 targets x 1 degradation x 3 images
        assert_eq!(run.table.len(), 2 * 2 * 2 * 3);
        assert!(run.failures.is_empty());
    }

    #[test]
    fn clean_rows_match_evaluate_extractor() {
        let mut cfg = tiny_config(None);
        cfg.include_clean = true;
        cfg.attacks.clear();
        let run = run_experiment(&cfg).unwrap();
        let mut test_slice = run.test_set.clone();
        test_slice.records.truncate(cfg.test_images);
        for (name, ckpt) in &run.checkpoints {
            let direct = evaluate_extractor(ckpt, &test_slice).unwrap();
            let from_table = clean_nme_from_table(&run.table, name).unwrap();
            assert!(
                (direct - from_table).abs() < 1e-12,
                "{name}: {direct} vs {from_table}"
            );
        }
    }

    #[test]
    fn rerun_is_deterministic() {
        let cfg = tiny_config(None);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.table.records(), b.table.records());
    }

    #[test]
    fn duplicate_cells_are_rejected() {
        let rec = EvaluationRecord {
            image_id: "a".into(),
            extractor: "x".into(),
            attack: "none".into(),
            degradation: "none".into(),
            nme: 0.1,
            ssim_i: None,
            ssim_w: None,
        };
        let mut t = ResultTable::new();
        t.push(rec.clone()).unwrap();
        assert!(t.push(rec).is_err());
    }

    #[test]
    fn transfer_matrix_requires_full_coverage() {
        let cfg = tiny_config(None);
        let run = run_experiment(&cfg).unwrap();
        let m = transfer_matrix(&run.table, "LB", "none").unwrap();
        assert_eq!(m.sources.len(), 2);
        assert_eq!(m.targets.len(), 2);
        assert!(transfer_matrix(&run.table, "nonexistent", "none").is_err());
        assert!(matches!(
            transfer_matrix(&run.table, "LB", "jpeg_q75"),
            Err(Error::MissingCells(_))
        ));
    }

    #[test]
    fn single_extractor_transfer_matrix_is_white_box_mean() {
        let mut cfg = tiny_config(None);
        cfg.extractors.truncate(1);
        cfg.attacks.truncate(1);
        let run = run_experiment(&cfg).unwrap();
        let m = transfer_matrix(&run.table, "LB", "none").unwrap();
        assert_eq!((m.sources.len(), m.targets.len()), (1, 1));
        let direct = run
            .table
            .mean_nme_where(|r| r.attack == "LB@hourglass-mini")
            .unwrap();
        assert!((m.nme[0][0] - direct).abs() < 1e-12);
    }

    #[test]
    fn sweep_produces_one_point_per_value() {
        let cfg = tiny_config(None);
        let run = run_experiment(&cfg).unwrap();
        let base = AttackConfig {
            max_iters: 3,
            ..AttackConfig::default()
        };
        let sweep = ablation_sweep(
            &cfg,
            &run.checkpoints,
            &run.test_set,
            &base,
            SweepAxis::Alpha,
            &[0.5, 1.0, 1.5],
        )
        .unwrap();
        for pts in sweep.curves.values() {
            assert_eq!(pts.len(), 3);
        }
        assert!(ablation_sweep(
            &cfg,
            &run.checkpoints,
            &run.test_set,
            &base,
            SweepAxis::Alpha,
            &[1.0]
        )
        .is_err());
    }

    #[test]
    fn iteration_sweep_t0_is_exactly_clean() {
        let cfg = tiny_config(None);
        let run = run_experiment(&cfg).unwrap();
        let base = AttackConfig::default();
        let sweep = ablation_sweep(
            &cfg,
            &run.checkpoints,
            &run.test_set,
            &base,
            SweepAxis::MaxIters,
            &[0.0, 2.0],
        )
        .unwrap();
        let mut test_slice = run.test_set.clone();
        test_slice.records.truncate(cfg.test_images);
        for (name, ckpt) in &run.checkpoints {
            let clean = evaluate_extractor(ckpt, &test_slice).unwrap();
            let t0 = sweep.curves[name][0].mean_nme;
            assert_eq!(t0, clean, "{name}");
        }
    }

    #[test]
    fn degradation_tags_round_trip() {
        for d in [
            Degradation::None,
            Degradation::Jpeg(75),
            Degradation::VideoC,
            Degradation::VideoC2,
        ] {
            let s = d.to_string();
            assert_eq!(s.parse::<Degradation>().unwrap(), d);
        }
        assert!("jpeg_qx".parse::<Degradation>().is_err());
    }
}
