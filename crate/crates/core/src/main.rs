use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rankformer::bench::{run_bench, BenchGrid};
use rankformer::config::RunConfig;
use rankformer::data::{apply_k_core, load_interactions, split_dataset, DatasetSplit, InputFormat};
use rankformer::eval::{evaluate_split, layer_sweep, write_metrics_csv, HeldOut, SweepEncoder};
use rankformer::train::{train, write_history_csv};
use rankformer::verify::{self, VerifyLevel, VerifyOptions};
use rankformer::{EmbeddingMatrix, InteractionGraph};

#[derive(Parser)]
#[command(name = "rankformer", version, about = "Ranking-derived graph transformer for implicit-feedback recommendation")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible sequential runs, 0 uses all cores.
    #[arg(long, global = true, env = "RANKFORMER_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set tau=0.3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding (or receiving) the prepared split.
    #[arg(long)]
    split_dir: Option<PathBuf>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[String]) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        overrides.extend_from_slice(extra);
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(d) = &self.split_dir {
            overrides.push(format!("split_dir={}", d.display()));
        }
        if let Some(d) = &self.out_dir {
            overrides.push(format!("out_dir={}", d.display()));
        }
        Ok(RunConfig::resolve(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Fast,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Load interactions, apply k-core filtering and write the train/val/test split.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Interaction file (TSV or CSV, `#` comments).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        k_core: Option<usize>,
        /// Ratios as train:val:test.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Train base embeddings with BPR and write checkpoint, history and metrics.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint of base embeddings through the configured encoder.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Untrained layer sweep for Rankformer (τ grid) and LightGCN.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the oracle property suites.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        level: Level,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shift the fast layer output by this amount (suite sensitivity check).
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb: f64,
    },
    /// Time the fast and naive layers over a size grid and check scaling.
    Bench {
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
}

fn setup_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let input = cfg.input.as_deref().context("no input file (use --input or input = ...)")?;
    let format = cfg.format.unwrap_or_else(|| InputFormat::from_path(input));
    let raw = load_interactions(input, format)?;
    println!("loaded {} interactions from {}", raw.len(), input.display());
    let core = apply_k_core(&raw, cfg.k_core)?;
    let full = InteractionGraph::from_edges(&core.pairs)?;
    println!(
        "graph after {}-core: n={} m={} E={}",
        cfg.k_core,
        full.n_users(),
        full.n_items(),
        full.n_edges()
    );
    let split = split_dataset(&core, cfg.split_ratios(), cfg.seed, cfg.split_mode)?;
    let manifest = split.write(&cfg.split_dir)?;
    cfg.write_into(&cfg.split_dir)?;
    println!(
        "split seed={} train={} val={} test={} -> {}",
        manifest.seed,
        manifest.train_edges,
        manifest.val_edges,
        manifest.test_edges,
        cfg.split_dir.display()
    );
    println!("train sha256 {}", manifest.train_sha256);
    Ok(())
}

fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    DatasetSplit::read(&cfg.split_dir).with_context(|| format!("reading split from {}", cfg.split_dir.display()))
}

fn report_metrics(split: &DatasetSplit, cfg: &RunConfig, z: &EmbeddingMatrix, out: &Path) -> Result<()> {
    let val = evaluate_split(split, z, HeldOut::Val, &cfg.eval);
    let test = evaluate_split(split, z, HeldOut::Test, &cfg.eval);
    for (label, r) in [("val", &val), ("test", &test)] {
        for (j, k) in r.ks.iter().enumerate() {
            println!(
                "{label}: recall@{k}={:.4} ndcg@{k}={:.4} users={}",
                r.recall[j], r.ndcg[j], r.users_evaluated
            );
        }
    }
    write_metrics_csv(&out.join("metrics.csv"), &[(HeldOut::Val, &val), (HeldOut::Test, &test)])?;
    Ok(())
}

fn manifest_entries(cfg: &RunConfig, extra: &[(&str, String)]) -> Vec<(String, String)> {
    let mut kv = vec![("version".to_owned(), env!("CARGO_PKG_VERSION").to_owned())];
    kv.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    kv.extend(cfg.to_text().lines().filter_map(|l| {
        l.split_once(" = ").map(|(k, v)| (k.to_owned(), v.to_owned()))
    }));
    kv
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let out = &cfg.out_dir;
    cfg.write_into(out)?;
    let encoder = cfg.encoder();
    let outcome = train(&split, &encoder, &cfg.train)?;
    write_history_csv(&out.join("history.csv"), &outcome.history)?;
    if outcome.skipped_positives > 0 {
        log::warn!("{} positives skipped (users without negatives)", outcome.skipped_positives);
    }
    let ckpt = out.join("embeddings.bin");
    outcome.best.save(
        &ckpt,
        &manifest_entries(cfg, &[("best_epoch", outcome.best_epoch.to_string())]),
    )?;
    println!(
        "best epoch {} (val ndcg@20 {:.4}), {} epochs run{}",
        outcome.best_epoch,
        outcome.best_val_ndcg,
        outcome.history.len(),
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    let z = encoder.forward(&split.graph, &outcome.best)?;
    report_metrics(&split, cfg, &z, out)?;
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let split = load_split(cfg)?;
    let base = EmbeddingMatrix::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if base.n_users() != split.graph.n_users() || base.n_items() != split.graph.n_items() {
        bail!(
            "checkpoint shape {}x{} does not match split {}x{}",
            base.n_users(),
            base.n_items(),
            split.graph.n_users(),
            split.graph.n_items()
        );
    }
    cfg.write_into(&cfg.out_dir)?;
    let z = cfg.encoder().forward(&split.graph, &base)?;
    report_metrics(&split, cfg, &z, &cfg.out_dir)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    cfg.write_into(&cfg.out_dir)?;
    let mut encoders: Vec<SweepEncoder> = cfg
        .sweep_taus
        .iter()
        .map(|&tau| SweepEncoder::Rankformer {
            tau,
            alpha: cfg.rankformer.alpha,
        })
        .collect();
    encoders.push(SweepEncoder::LightGcn);
    let table = layer_sweep(&split, &encoders, cfg.sweep_max_layers, cfg.train.dim, cfg.seed)?;
    let path = cfg.out_dir.join("sweep.csv");
    table.write_csv(&path)?;
    for row in &table.rows {
        println!("{:<20} L={} ndcg@20={:.4}", row.encoder, row.layers, row.ndcg20);
    }
    let depths = 1..=cfg.sweep_max_layers.max(1);
    if let (Some(r), Some(l)) = (table.best("rankformer", depths.clone()), table.best("lightgcn", depths)) {
        println!(
            "best rankformer {} L={} {:.4} vs best lightgcn L={} {:.4}",
            r.encoder, r.layers, r.ndcg20, l.layers, l.ndcg20
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Prepare {
            cfg,
            input,
            k_core,
            ratios,
        } => {
            let mut extra = Vec::new();
            if let Some(i) = input {
                extra.push(format!("input={}", i.display()));
            }
            if let Some(k) = k_core {
                extra.push(format!("k_core={k}"));
            }
            if let Some(r) = ratios {
                extra.push(format!("ratios={r}"));
            }
            let cfg = cfg.resolve(&extra)?;
            setup_threads(cli.threads.unwrap_or(cfg.threads))?;
            cmd_prepare(&cfg)?;
        }
        Command::Train { cfg, epochs } => {
            let extra: Vec<String> = epochs.map(|e| format!("epochs={e}")).into_iter().collect();
            let cfg = cfg.resolve(&extra)?;
            setup_threads(cli.threads.unwrap_or(cfg.threads))?;
            cmd_train(&cfg)?;
        }
        Command::Evaluate { cfg, checkpoint } => {
            let cfg = cfg.resolve(&[])?;
            setup_threads(cli.threads.unwrap_or(cfg.threads))?;
            cmd_evaluate(&cfg, &checkpoint)?;
        }
        Command::Sweep { cfg } => {
            let cfg = cfg.resolve(&[])?;
            setup_threads(cli.threads.unwrap_or(cfg.threads))?;
            cmd_sweep(&cfg)?;
        }
        Command::Verify { level, seed, perturb } => {
            setup_threads(cli.threads.unwrap_or(0))?;
            let level = match level {
                Level::Fast => VerifyLevel::Fast,
                Level::Full => VerifyLevel::Full,
            };
            let report = verify::run(
                level,
                &VerifyOptions {
                    perturb_fast: perturb,
                    seed,
                },
            );
            println!("{report}");
            return Ok(report.passed());
        }
        Command::Bench { reps, seed, out } => {
            // Scaling is measured on one worker unless a count is given.
            setup_threads(cli.threads.unwrap_or(1))?;
            let report = run_bench(&BenchGrid::default(), reps, seed)?;
            report.write_csv(&out)?;
            for r in &report.rows {
                let p = r.point;
                println!(
                    "{:<17} {:<5} n={} m={} E={} d={} median {:.4}s spread {:.0}%",
                    r.group,
                    r.path.label(),
                    p.n,
                    p.m,
                    p.e,
                    p.d,
                    r.timing.median,
                    r.timing.spread * 100.0
                );
            }
            for c in &report.checks {
                println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("wrote {}", out.display());
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
