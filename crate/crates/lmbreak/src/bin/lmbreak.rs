//! Command-line front end for the experiment harness.

use clap::{Parser, Subcommand, ValueEnum};
use lmbreak::error::{Error, Result};
use lmbreak::extractor::evaluate_extractor;
use lmbreak::harness::report::{collect_files, table_from_csv_path, write_manifest};
use lmbreak::harness::{
    ablation_sweep, emit_report, prepare_dataset, prepare_extractors, prepare_synth,
    run_experiment, transfer_matrix, ExperimentConfig, SweepAxis,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "lmbreak",
    about = "Craft L∞-bounded perturbations against heat-map landmark extractors and measure the downstream damage",
    version
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides dataset and split seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); overrides the config.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset and export PNGs + annotations.
    GenData,
    /// Train the configured extractors (and the synthesizer) and save
    /// checkpoints.
    Train,
    /// Craft adversarial images for the test split and save them with
    /// per-attack traces.
    Attack,
    /// Run the full battery and emit the report (CSV, JSON, plots,
    /// manifest).
    Evaluate,
    /// White-box ablation sweep over a parameter axis.
    Sweep {
        #[arg(long, value_enum, default_value = "max-iters")]
        axis: AxisArg,
        /// Comma-separated values, e.g. "0,5,10,15,20,25".
        #[arg(long, default_value = "0,5,10,15,20,25")]
        values: String,
    },
    /// Re-aggregate an existing results.csv into summary + plots.
    Report {
        /// Path to a previously emitted results.csv.
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Alpha,
    MaxIters,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--config is required for this subcommand".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.dataset.seed = seed;
        cfg.split_seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.out_dir
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no output directory (set out_dir or pass --out)".into()))
}

fn manifest_dir(dir: &Path) -> Result<()> {
    let files: Vec<PathBuf> = collect_files(dir)?
        .into_iter()
        .filter(|p| p.file_name().map(|n| n != "manifest.json").unwrap_or(true))
        .collect();
    write_manifest(&files, dir, &dir.join("manifest.json"))
}

fn with_pool<T>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?.join("dataset");
    let full = lmbreak::faces::DatasetHandle::generate(
        cfg.dataset.size,
        cfg.dataset.seed,
        cfg.dataset.image_size,
    );
    full.export(&dir)?;
    manifest_dir(&dir)?;
    println!(
        "exported {} records to {} (seed {})",
        full.len(),
        dir.display(),
        cfg.dataset.seed
    );
    Ok(())
}

fn checkpoint_path(dir: &Path, arch: &str) -> PathBuf {
    dir.join("checkpoints").join(format!("{arch}.lmck"))
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut cfg = cfg.clone();
    // route checkpoints into out_dir so later stages can pick them up
    for entry in &mut cfg.extractors {
        if entry.checkpoint.is_none() {
            entry.checkpoint = Some(checkpoint_path(&dir, &entry.arch));
        }
    }
    let (train, val, _) = prepare_dataset(&cfg)?;
    let ckpts = prepare_extractors(&cfg, &train, &val)?;
    for (name, ckpt) in &ckpts {
        println!(
            "{name}: {} params, best val NME {:.4} after {} epochs",
            ckpt.spec.param_count, ckpt.meta.best_val_nme, ckpt.meta.epochs_run
        );
    }
    if cfg.metrics.ssim_w {
        let synth = prepare_synth(&cfg, &train)?;
        let path = dir.join("checkpoints").join("synthesizer.lmck");
        synth.save(&path)?;
        println!(
            "synthesizer: recon MSE {:.5} after {} epochs -> {}",
            synth.meta.recon_mse,
            synth.meta.epochs_run,
            path.display()
        );
    }
    manifest_dir(&dir.join("checkpoints"))?;
    Ok(())
}

/// Reuse checkpoints saved by `train` when the config has no explicit paths.
fn wire_checkpoints(cfg: &mut ExperimentConfig, dir: &Path) {
    for entry in &mut cfg.extractors {
        if entry.checkpoint.is_none() {
            let candidate = checkpoint_path(dir, &entry.arch);
            if candidate.is_file() || entry.train.is_none() {
                entry.checkpoint = Some(candidate);
            }
        }
    }
}

fn cmd_attack(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut cfg = cfg.clone();
    wire_checkpoints(&mut cfg, &dir);
    let (train, val, test) = prepare_dataset(&cfg)?;
    let ckpts = prepare_extractors(&cfg, &train, &val)?;
    let n = test.len().min(cfg.test_images.max(1));
    let adv_root = dir.join("adv");
    let mut traces = Vec::new();
    for (source, ckpt) in &ckpts {
        for entry in &cfg.attacks {
            let label = lmbreak::harness::attack_label(&entry.id, source);
            let sub = adv_root.join(&label);
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for idx in 0..n {
                let image = test.load_image(idx)?;
                let res = lmbreak::attack::run_attack(ckpt, &image, &entry.config)?;
                let id = &test.records[idx].id;
                res.adversarial.save_png(&sub.join(format!("{id}.png")))?;
                traces.push(serde_json::json!({
                    "attack": label,
                    "image": id,
                    "iterations": res.iterations,
                    "linf_dev": res.linf_dev,
                    "final_loss": res.final_loss,
                    "termination": res.termination,
                    "loss_trace": res.loss_trace,
                }));
            }
            println!("{label}: crafted {n} adversarial images -> {}", sub.display());
        }
    }
    let trace_path = adv_root.join("traces.json");
    std::fs::write(&trace_path, serde_json::to_string_pretty(&traces)?)
        .map_err(|e| Error::io(&trace_path, e))?;
    manifest_dir(&adv_root)?;
    Ok(())
}

fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut cfg = cfg.clone();
    cfg.out_dir = Some(dir.clone());
    wire_checkpoints(&mut cfg, &dir);
    let run = run_experiment(&cfg)?;
    let report_dir = dir.join("report");
    let files = emit_report(&run.table, &report_dir)?;
    println!("wrote {} artifacts to {}", files.len(), report_dir.display());
    for (name, ckpt) in &run.checkpoints {
        let mut slice = run.test_set.clone();
        slice.records.truncate(cfg.test_images);
        let clean = evaluate_extractor(ckpt, &slice)?;
        println!("{name}: clean NME {clean:.4}");
    }
    for entry in &cfg.attacks {
        match transfer_matrix(&run.table, &entry.id, "none") {
            Ok(m) => {
                println!("transfer matrix for {} (mean NME):", entry.id);
                print!("{:>22}", "source \\ target");
                for t in &m.targets {
                    print!("{t:>22}");
                }
                println!();
                for (i, s) in m.sources.iter().enumerate() {
                    print!("{s:>22}");
                    for j in 0..m.targets.len() {
                        print!("{:>22.4}", m.nme[i][j]);
                    }
                    println!();
                }
            }
            Err(e) => println!("transfer matrix for {}: {e}", entry.id),
        }
    }
    if !run.failures.is_empty() {
        println!("{} cell failures:", run.failures.len());
        for f in &run.failures {
            println!("  {f}");
        }
    }
    let meta_path = dir.join("run_meta.json");
    let meta = serde_json::json!({
        "timestamp_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "config": cfg,
        "failures": run.failures,
    });
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, axis: AxisArg, values: &str) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut cfg = cfg.clone();
    wire_checkpoints(&mut cfg, &dir);
    let values: Vec<f64> = values
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("bad sweep value {s:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let axis = match axis {
        AxisArg::Alpha => SweepAxis::Alpha,
        AxisArg::MaxIters => SweepAxis::MaxIters,
    };
    let (train, val, test) = prepare_dataset(&cfg)?;
    let ckpts = prepare_extractors(&cfg, &train, &val)?;
    let base = cfg
        .attacks
        .first()
        .map(|a| a.config.clone())
        .unwrap_or_default();
    let curves = ablation_sweep(&cfg, &ckpts, &test, &base, axis, &values)?;
    let sweep_dir = dir.join("sweep");
    std::fs::create_dir_all(&sweep_dir).map_err(|e| Error::io(&sweep_dir, e))?;
    // CSV: extractor,value,mean_nme,mean_ssim_i
    let mut csv = String::from("extractor,value,mean_nme,mean_ssim_i\n");
    for (name, pts) in &curves.curves {
        for p in pts {
            csv.push_str(&format!(
                "{name},{},{},{}\n",
                p.value,
                p.mean_nme,
                p.mean_ssim_i.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
    }
    let csv_path = sweep_dir.join("sweep.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let labels: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    let series: Vec<lmbreak::harness::plot::Series> = curves
        .curves
        .iter()
        .map(|(name, pts)| lmbreak::harness::plot::Series {
            label: name.clone(),
            ys: pts.iter().map(|p| p.mean_nme).collect(),
        })
        .collect();
    let axis_name = match axis {
        SweepAxis::Alpha => "alpha",
        SweepAxis::MaxIters => "max_iters",
    };
    lmbreak::harness::plot::line_chart(
        &sweep_dir.join("sweep_nme.svg"),
        &format!("NME vs {axis_name}"),
        &labels,
        "mean NME",
        &series,
    )?;
    manifest_dir(&sweep_dir)?;
    println!("sweep over {axis_name} written to {}", sweep_dir.display());
    Ok(())
}

fn cmd_report(cfg: &ExperimentConfig, results: &Path) -> Result<()> {
    let dir = out_dir(cfg)?.join("report");
    let table = table_from_csv_path(results)?;
    let files = emit_report(&table, &dir)?;
    println!("wrote {} artifacts to {}", files.len(), dir.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = (|| -> Result<()> {
        match &cli.command {
            Command::Report { results } => {
                let cfg = load_config(&cli)?;
                cmd_report(&cfg, results)
            }
            Command::GenData => {
                let cfg = load_config(&cli)?;
                cmd_gen_data(&cfg)
            }
            Command::Train => {
                let cfg = load_config(&cli)?;
                with_pool(cfg.jobs, || cmd_train(&cfg))
            }
            Command::Attack => {
                let cfg = load_config(&cli)?;
                with_pool(cfg.jobs, || cmd_attack(&cfg))
            }
            Command::Evaluate => {
                let cfg = load_config(&cli)?;
                cmd_evaluate(&cfg)
            }
            Command::Sweep { axis, values } => {
                let cfg = load_config(&cli)?;
                with_pool(cfg.jobs, || cmd_sweep(&cfg, *axis, values))
            }
        }
    })();
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
