//! Command-line front end. Every command reads one JSON config (or the
//! defaults), applies `--seed` and `--set` overrides and runs on a worker
//! pool capped by `DCN_THREADS`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::coattn::DirectionMode;
use crate::config::DcnConfig;
use crate::encoder::Extraction;
use crate::error::{DcnError, Result};
use crate::gradcheck::GradCheckOptions;
use crate::model::{grad_check_model, tiny_config, Dcn};
use crate::predict::{count_params, HeadVariant, SummaryMode};
use crate::train::baseline::mean_pool_baseline;
use crate::train::data::{oracle_table, Dataset, SyntheticSample};
use crate::train::stats::{layer_attention_stats, stats_csv};
use crate::train::trainer::{metrics_csv, predict_all, score_predictions};
use crate::train::{evaluate, thread_pool, train_loop};

#[derive(Parser, Debug)]
#[command(name = "dcn", version, about = "Dense co-attention network: train, evaluate and inspect")]
pub struct Cli {
    /// JSON config; omitted fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Dotted-path override such as `train.lr=0` or `direction=image_guided`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct OutArg {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CheckpointArg {
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train on the synthetic task; writes config.json, metrics.csv and checkpoint/.
    Train(OutArg),
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train one model per ablation row and write ablation.csv.
    Ablate(OutArg),
    /// Full-model gradient check against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Dump attention maps and weights for test samples (or `--samples`).
    ExportAttn {
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// JSON array of samples, as written by `gen-data`.
        #[arg(long, value_name = "FILE")]
        samples: Option<PathBuf>,
        /// Number of test samples exported when `--samples` is absent.
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Mean/std of the layer attention weights per question type.
    LayerStats {
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Learnable parameter count with per-component breakdown.
    CountParams {
        /// Report full-size dimensions for all three heads.
        #[arg(long)]
        full_scale: bool,
    },
    /// Write the synthetic train/test splits as JSON.
    GenData(OutArg),
    /// Train and score the region-blind mean-pool logistic baseline.
    Baseline,
}

/// Config from `--config`, then `--set`, then `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<DcnConfig> {
    resolve_config_over(cli, DcnConfig::default())
}

/// Like [`resolve_config`] with `fallback` standing in for a missing `--config`.
pub fn resolve_config_over(cli: &Cli, fallback: DcnConfig) -> Result<DcnConfig> {
    let base = match &cli.config {
        Some(path) => DcnConfig::load(path)?,
        None => fallback,
    };
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    base.with_overrides(&overrides)
}

/// Checkpoint commands take the architecture from the manifest; only
/// `data.*` overrides are meaningful there.
fn checkpoint_model(cli: &Cli, dir: &Path) -> Result<(Dcn, Dataset)> {
    let model = checkpoint::load(dir)?;
    if let Some(bad) = cli.set.iter().find(|s| !s.starts_with("data.")) {
        return Err(DcnError::config(
            bad.split('=').next().unwrap_or(bad),
            "only data.* may be overridden for a saved checkpoint",
        ));
    }
    let cfg = model.config().with_overrides(&cli.set)?;
    let data = Dataset::generate(&cfg)?;
    Ok((model, data))
}

fn write_config(dir: &Path, cfg: &DcnConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json() + "\n")?;
    Ok(())
}

fn cmd_train(cfg: &DcnConfig, out: &Path) -> Result<String> {
    write_config(out, cfg)?;
    let data = Dataset::generate(cfg)?;
    let mut model = Dcn::new(cfg)?;
    let outcome = train_loop(&mut model, &data, Some(out))?;
    Ok(format!(
        "{}best test accuracy {:.4} at epoch {}\n",
        metrics_csv(&outcome.log),
        outcome.best_accuracy,
        outcome.best_epoch
    ))
}

fn cmd_eval(cli: &Cli, dir: &Path, out: Option<&Path>) -> Result<String> {
    let (model, data) = checkpoint_model(cli, dir)?;
    let report = evaluate(&model, &data, &data.test)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval.json"), json.clone() + "\n")?;
    }
    Ok(format!("accuracy {:.4} ({}/{})\n", report.accuracy, report.correct, report.total))
}

/// One ablation variant: table category, row label, overrides on the base.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub category: &'static str,
    pub detail: String,
    pub overrides: Vec<String>,
}

fn starred(label: String, is_base: bool) -> String {
    if is_base {
        label + "*"
    } else {
        label
    }
}

/// Axes varied one at a time from `base`: direction, memory size, heads,
/// depth, answer-summary mode and extraction mode.
pub fn ablation_grid(base: &DcnConfig) -> Vec<AblationRow> {
    let mut rows = Vec::with_capacity(17);
    for mode in [DirectionMode::Both, DirectionMode::ImageGuided, DirectionMode::QuestionGuided] {
        let name = serde_json::to_value(mode).expect("serializes");
        rows.push(AblationRow {
            category: "attention_direction",
            detail: starred(mode.label().to_string(), mode == base.direction),
            overrides: vec![format!("direction={}", name.as_str().expect("string"))],
        });
    }
    for k in [1, 3, 5] {
        rows.push(AblationRow {
            category: "memory_slots",
            detail: starred(format!("K={k}"), k == base.k),
            overrides: vec![format!("k={k}")],
        });
    }
    for h in [2, 4, 8] {
        rows.push(AblationRow {
            category: "heads",
            detail: starred(format!("h={h}"), h == base.h),
            overrides: vec![format!("h={h}")],
        });
    }
    for l in 1..=4 {
        rows.push(AblationRow {
            category: "layers",
            detail: starred(format!("L={l}"), l == base.l),
            overrides: vec![format!("l={l}")],
        });
    }
    for (mode, label, key) in [
        (SummaryMode::Attention, "self-attention", "attention"),
        (SummaryMode::Average, "avg of features", "average"),
    ] {
        rows.push(AblationRow {
            category: "prediction_layer",
            detail: starred(label.to_string(), mode == base.summary),
            overrides: vec![format!("summary={key}")],
        });
    }
    for (mode, label, key) in [
        (Extraction::LayerAttention, "layer attention", "layer_attention"),
        (Extraction::LastLayer, "only last conv layer", "last_layer"),
    ] {
        rows.push(AblationRow {
            category: "extraction_layer",
            detail: starred(label.to_string(), mode == base.extraction),
            overrides: vec![format!("extraction={key}")],
        });
    }
    rows
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs every row (identical configs are trained once) and writes
/// `ablation.csv`. Failures are recorded and the grid continues.
pub fn run_ablation(base: &DcnConfig, out: &Path) -> Result<String> {
    fs::create_dir_all(out)?;
    let mut cache: Vec<(DcnConfig, std::result::Result<f64, String>)> = Vec::new();
    let mut csv = String::from("category,detail,accuracy,overrides\n");
    for (i, row) in ablation_grid(base).iter().enumerate() {
        let result = match base.with_overrides(&row.overrides) {
            Err(e) => Err(e.to_string()),
            Ok(cfg) => match cache.iter().find(|(c, _)| *c == cfg) {
                Some((_, r)) => r.clone(),
                None => {
                    let dir = out.join(format!("row{i:02}"));
                    let r = (|| -> Result<f64> {
                        write_config(&dir, &cfg)?;
                        let data = Dataset::generate(&cfg)?;
                        let mut model = Dcn::new(&cfg)?;
                        Ok(train_loop(&mut model, &data, Some(&dir))?.best_accuracy)
                    })()
                    .map_err(|e| e.to_string());
                    cache.push((cfg, r.clone()));
                    r
                }
            },
        };
        let acc = match &result {
            Ok(a) => format!("{a:?}"),
            Err(e) => {
                eprintln!("ablation row {} {} failed: {e}", row.category, row.detail);
                "NaN".to_string()
            }
        };
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            row.category,
            csv_field(&row.detail),
            acc,
            csv_field(&row.overrides.join(" "))
        );
        fs::write(out.join("ablation.csv"), &csv)?;
    }
    Ok(csv)
}

fn cmd_gradcheck(cfg: &DcnConfig, step: f64, tol: f64) -> Result<String> {
    let check = grad_check_model(cfg, GradCheckOptions { step, tol })?;
    let mut out = String::from("block,max_rel_error,max_abs_error\n");
    for b in &check.report.blocks {
        let _ = writeln!(out, "{},{:e},{:e}", check.names[b.index], b.max_rel_error, b.max_abs_error);
    }
    let _ = writeln!(
        out,
        "max relative error {:e} (tol {:e}): {}",
        check.report.max_rel_error,
        tol,
        if check.report.passed { "PASS" } else { "FAIL" }
    );
    if !check.report.passed {
        return Err(DcnError::Numerical(format!("gradient check failed\n{out}")));
    }
    Ok(out)
}

fn cmd_export(cli: &Cli, dir: &Path, samples: Option<&Path>, count: usize, out: &Path) -> Result<String> {
    let (model, data) = checkpoint_model(cli, dir)?;
    let samples: Vec<SyntheticSample> = match samples {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => data.test.iter().take(count).cloned().collect(),
    };
    let truth = oracle_table(&samples, &data.vocab)?;
    let predicted = predict_all(&model, &data, &samples)?;
    let mut summary = String::from("sample,question,answer,predicted\n");
    for (i, s) in samples.iter().enumerate() {
        let ex = data.example(s)?;
        crate::export::export_attention(&model, &ex, out.join(format!("sample{i:03}")))?;
        let words: Vec<String> = s.question.iter().map(|&t| data.vocab.word(t)).collect();
        let _ = writeln!(summary, "{i},{},{},{}", words.join(" "), truth[i], predicted[i]);
    }
    fs::write(out.join("samples.csv"), &summary)?;
    Ok(format!("exported {} samples to {}\n", samples.len(), out.display()))
}

fn cmd_layer_stats(cli: &Cli, dir: &Path, out: &Path) -> Result<String> {
    let (model, data) = checkpoint_model(cli, dir)?;
    let stats = layer_attention_stats(&model, &data, &data.test)?;
    let csv = stats_csv(&stats);
    fs::create_dir_all(out)?;
    fs::write(out.join("layer_stats.csv"), &csv)?;
    Ok(csv)
}

fn cmd_count_params(cfg: &DcnConfig, full_scale: bool) -> Result<String> {
    let mut out = String::new();
    let configs: Vec<DcnConfig> = if full_scale {
        [HeadVariant::Inner, HeadVariant::SumMlp, HeadVariant::CatMlp]
            .into_iter()
            .map(DcnConfig::full_scale)
            .collect()
    } else {
        vec![cfg.clone()]
    };
    for c in &configs {
        let count = count_params(c);
        let _ = writeln!(out, "head {}: {} parameters", u32::from(c.head), count.total);
        for (name, n) in &count.breakdown {
            let _ = writeln!(out, "  {name}: {n}");
        }
    }
    Ok(out)
}

fn cmd_gen_data(cfg: &DcnConfig, out: &Path) -> Result<String> {
    let data = Dataset::generate(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("train.json"), serde_json::to_string(&data.train)?)?;
    fs::write(out.join("test.json"), serde_json::to_string(&data.test)?)?;
    let truth = oracle_table(&data.test, &data.vocab)?;
    let oracle = score_predictions(&truth, &truth, cfg.n_attributes)?;
    Ok(format!(
        "{} train / {} test samples, oracle test accuracy {:.4}\n",
        data.train.len(),
        data.test.len(),
        oracle.accuracy
    ))
}

fn cmd_baseline(cfg: &DcnConfig) -> Result<String> {
    let data = Dataset::generate(cfg)?;
    let r = mean_pool_baseline(&data, 300)?;
    Ok(format!(
        "mean-pool baseline: train accuracy {:.4}, test accuracy {:.4} (chance {:.4})\n",
        r.train_accuracy,
        r.test_accuracy,
        1.0 / cfg.n_attributes as f64
    ))
}

/// Executes the parsed command and returns what it prints on success.
pub fn run(cli: &Cli) -> Result<String> {
    let pool = thread_pool()?;
    pool.install(|| match &cli.command {
        Command::Train(a) => cmd_train(&resolve_config(cli)?, &a.out),
        Command::Eval { ckpt, out } => cmd_eval(cli, &ckpt.checkpoint, out.as_deref()),
        Command::Ablate(a) => run_ablation(&resolve_config(cli)?, &a.out),
        Command::Gradcheck { step, tol } => cmd_gradcheck(&resolve_config_over(cli, tiny_config())?, *step, *tol),
        Command::ExportAttn {
            ckpt,
            samples,
            count,
            out,
        } => cmd_export(cli, &ckpt.checkpoint, samples.as_deref(), *count, out),
        Command::LayerStats { ckpt, out } => cmd_layer_stats(cli, &ckpt.checkpoint, out),
        Command::CountParams { full_scale } => cmd_count_params(&resolve_config(cli)?, *full_scale),
        Command::GenData(a) => cmd_gen_data(&resolve_config(cli)?, &a.out),
        Command::Baseline => cmd_baseline(&resolve_config(cli)?),
    })
}
