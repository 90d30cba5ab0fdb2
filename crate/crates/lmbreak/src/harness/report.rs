//! CSV / JSON / SVG report emission with an artifact manifest.

use super::plot::{line_chart, Series};
use super::{Degradation, EvaluationRecord, ResultTable};
use crate::error::{Error, Result};
use crate::faces::Fnv1a;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub fn table_to_csv(table: &ResultTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in table.records() {
        w.serialize(rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv flush: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::InvalidConfig(format!("csv: {e}"))
    }
}

pub fn table_from_csv_path(path: &Path) -> Result<ResultTable> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::InvalidConfig(format!("csv open {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for row in rdr.deserialize::<EvaluationRecord>() {
        records.push(row?);
    }
    ResultTable::from_records(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryCell {
    pub attack: String,
    pub extractor: String,
    pub degradation: String,
    pub count: usize,
    pub mean_nme: f64,
    pub mean_ssim_i: Option<f64>,
    pub mean_ssim_w: Option<f64>,
}

/// Per-(attack, extractor, degradation) means in deterministic order.
pub fn summarize(table: &ResultTable) -> Vec<SummaryCell> {
    let mut groups: BTreeMap<(String, String, String), Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in table.records() {
        groups
            .entry((r.attack.clone(), r.extractor.clone(), r.degradation.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((attack, extractor, degradation), rows)| {
            let n = rows.len();
            let mean_nme = rows.iter().map(|r| r.nme).sum::<f64>() / n as f64;
            let si: Vec<f64> = rows.iter().filter_map(|r| r.ssim_i).collect();
            let sw: Vec<f64> = rows.iter().filter_map(|r| r.ssim_w).collect();
            SummaryCell {
                attack,
                extractor,
                degradation,
                count: n,
                mean_nme,
                mean_ssim_i: (!si.is_empty()).then(|| si.iter().sum::<f64>() / si.len() as f64),
                mean_ssim_w: (!sw.is_empty()).then(|| sw.iter().sum::<f64>() / sw.len() as f64),
            }
        })
        .collect()
}

/// Severity order for plot x-axes: none, JPEG by decreasing quality, then
/// the video chains.
fn degradation_rank(d: &Degradation) -> (u8, i32) {
    match d {
        Degradation::None => (0, 0),
        Degradation::Jpeg(q) => (1, -(*q as i32)),
        Degradation::VideoC => (2, 0),
        Degradation::VideoC2 => (3, 0),
    }
}

/// Write `results.csv`, `summary.json`, one NME/SSIM chart pair per
/// extractor, and `manifest.json` (path, size, fnv1a64 per artifact).
/// Returns the written paths, manifest last.
pub fn emit_report(table: &ResultTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if table.is_empty() {
        return Err(Error::EmptyDataset("emit_report on empty table".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();

    let csv_path = out_dir.join("results.csv");
    std::fs::write(&csv_path, table_to_csv(table)?).map_err(|e| Error::io(&csv_path, e))?;
    written.push(csv_path);

    let summary = summarize(table);
    let summary_path = out_dir.join("summary.json");
    let body = serde_json::to_string_pretty(&serde_json::json!({ "cells": summary }))?;
    std::fs::write(&summary_path, body).map_err(|e| Error::io(&summary_path, e))?;
    written.push(summary_path);

    // plot panels: per extractor, one line per attack over degradations
    let mut extractors: Vec<String> = table.records().iter().map(|r| r.extractor.clone()).collect();
    extractors.sort();
    extractors.dedup();
    let mut attacks: Vec<String> = table.records().iter().map(|r| r.attack.clone()).collect();
    attacks.sort();
    attacks.dedup();
    let mut degradations: Vec<Degradation> = table
        .records()
        .iter()
        .filter_map(|r| Degradation::from_str(&r.degradation).ok())
        .collect();
    degradations.sort_by_key(degradation_rank);
    degradations.dedup();
    let deg_labels: Vec<String> = degradations.iter().map(|d| d.to_string()).collect();

    for ext in &extractors {
        let mut nme_series = Vec::new();
        let mut ssim_series = Vec::new();
        for atk in &attacks {
            let mut nme_ys = Vec::new();
            let mut ssim_ys = Vec::new();
            for dl in &deg_labels {
                let nme = table
                    .mean_nme_where(|r| &r.extractor == ext && &r.attack == atk && &r.degradation == dl)
                    .unwrap_or(f64::NAN);
                nme_ys.push(nme);
                ssim_ys.push(
                    table
                        .mean_ssim_w_where(|r| {
                            &r.extractor == ext && &r.attack == atk && &r.degradation == dl
                        })
                        .unwrap_or(f64::NAN),
                );
            }
            nme_series.push(Series { label: atk.clone(), ys: nme_ys });
            if ssim_ys.iter().any(|v| v.is_finite()) {
                ssim_series.push(Series { label: atk.clone(), ys: ssim_ys });
            }
        }
        let nme_path = out_dir.join(format!("nme_{ext}.svg"));
        line_chart(&nme_path, &format!("NME on {ext}"), &deg_labels, "mean NME", &nme_series)?;
        written.push(nme_path);
        if !ssim_series.is_empty() {
            let sw_path = out_dir.join(format!("ssim_w_{ext}.svg"));
            line_chart(
                &sw_path,
                &format!("SSIM_W on {ext}"),
                &deg_labels,
                "mean SSIM_W",
                &ssim_series,
            )?;
            written.push(sw_path);
        }
    }

    let manifest_path = out_dir.join("manifest.json");
    write_manifest(&written, out_dir, &manifest_path)?;
    written.push(manifest_path);
    Ok(written)
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    bytes: u64,
    fnv1a64: String,
}

/// Hash and list artifacts. Any file set can be recorded, e.g. exported
/// datasets or checkpoints; paths are stored relative to the manifest dir.
pub fn write_manifest(files: &[PathBuf], base: &Path, manifest_path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    for f in files {
        let bytes = std::fs::read(f).map_err(|e| Error::io(f, e))?;
        let mut h = Fnv1a::new();
        h.update(&bytes);
        let rel = f.strip_prefix(base).unwrap_or(f);
        entries.push(ManifestEntry {
            path: rel.to_string_lossy().into_owned(),
            bytes: bytes.len() as u64,
            fnv1a64: format!("{:016x}", h.finish()),
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let body = serde_json::to_string_pretty(&serde_json::json!({ "artifacts": entries }))?;
    std::fs::write(manifest_path, body).map_err(|e| Error::io(manifest_path, e))
}

/// Recursively collect files under a directory (for manifesting exports).
pub fn collect_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> ResultTable {
        let mut t = ResultTable::new();
        for (img, atk, deg, nme) in [
            ("i1", "none", "none", 0.03),
            ("i2", "none", "none", 0.05),
            ("i1", "LB@a", "none", 0.50),
            ("i2", "LB@a", "none", 0.70),
            ("i1", "LB@a", "jpeg_q75", 0.40),
            ("i2", "LB@a", "jpeg_q75", 0.60),
        ] {
            t.push(EvaluationRecord {
                image_id: img.into(),
                extractor: "hourglass-mini".into(),
                attack: atk.into(),
                degradation: deg.into(),
                nme,
                ssim_i: Some(0.8),
                ssim_w: Some(0.7),
            })
            .unwrap();
        }
        t
    }

    #[test]
    fn csv_round_trip_preserves_records() {
        let t = sample_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, table_to_csv(&t).unwrap()).unwrap();
        let back = table_from_csv_path(&path).unwrap();
        assert_eq!(back.records(), t.records());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image_id,extractor,attack,degradation,nme,ssim_i,ssim_w"));
    }

    #[test]
    fn summary_means_match_recomputation_from_csv() {
        let t = sample_table();
        let cells = summarize(&t);
        let lb_none = cells
            .iter()
            .find(|c| c.attack == "LB@a" && c.degradation == "none")
            .unwrap();
        assert_eq!(lb_none.count, 2);
        assert!((lb_none.mean_nme - 0.6).abs() < 1e-12);
        // recompute from the serialized csv
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, table_to_csv(&t).unwrap()).unwrap();
        let back = table_from_csv_path(&path).unwrap();
        let mean: f64 = back
            .records()
            .iter()
            .filter(|r| r.attack == "LB@a" && r.degradation == "none")
            .map(|r| r.nme)
            .sum::<f64>()
            / 2.0;
        assert!((mean - lb_none.mean_nme).abs() < 1e-12);
    }

    #[test]
    fn emit_report_writes_all_artifacts_with_manifest() {
        let t = sample_table();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&t, dir.path()).unwrap();
        assert_eq!(t.len(), {
            let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
            csv.lines().count() - 1
        });
        for f in &files {
            let meta = std::fs::metadata(f).unwrap();
            assert!(meta.len() > 0, "{} is empty", f.display());
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        let listed = manifest["artifacts"].as_array().unwrap().len();
        assert_eq!(listed, files.len() - 1); // manifest does not list itself
        assert!(dir.path().join("nme_hourglass-mini.svg").is_file());
        assert!(dir.path().join("ssim_w_hourglass-mini.svg").is_file());
    }

    #[test]
    fn emit_report_rejects_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&ResultTable::new(), dir.path()).is_err());
    }
}
