use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use react_core::data::{generate_corpus, make_splits, read_corpus, synthetic_splits, write_corpus, LabelSpace, Sample};
use react_core::metrics::write_predictions;
use react_core::par::Exec;
use react_core::train::{
    default_variants, evaluate, linear_probe, rank_actors, retrieval_recall, run_ablation, train, Checkpoint, ProbeConfig,
    SupervisionMode, TrainOptions,
};
use react_core::verify::gradient_suite;
use react_core::{ModelConfig, ReactModel};

const CONFIG_HELP: &str = "CONFIGURATION\n\nEvery command that takes --config reads a TOML file; omitted keys keep \
their defaults. The full reference, with defaults:\n";

#[derive(Parser)]
#[command(name = "react", version, about = "Grounded group-activity recognition on synthetic and annotated clips")]
#[command(after_help = after_help())]
struct Cli {
    /// Evaluate independent samples one after another instead of in parallel.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

fn after_help() -> String {
    format!("{CONFIG_HELP}\n{}", ModelConfig::reference())
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Weak,
}

impl From<Mode> for SupervisionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Full => SupervisionMode::Full,
            Mode::Weak => SupervisionMode::Weak,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured synthetic corpus to a directory.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes metrics.jsonl, best.ckpt, last.ckpt and test predictions.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        /// Overrides both the training and the data seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus directory from gen-data; the synthetic corpus is generated in memory otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on its test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated: mca, merged-mca, mpca, prf, iou, recall@K.
        #[arg(long, default_value = "mca,merged-mca,prf")]
        metrics: String,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write prediction records here.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Rank each test clip's actor queries against a text prompt.
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Actors listed per clip.
        #[arg(long, default_value_t = 3)]
        top: usize,
    },
    /// Run the finite-difference gradient suite over every op and block.
    Gradcheck,
    /// Sweep the encoder, decoder and actor-fusion switches over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a linear group classifier on frozen group embeddings of a checkpoint.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
    },
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => ModelConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ModelConfig::default()),
    }
}

fn labels_for(cfg: &ModelConfig) -> Result<LabelSpace> {
    let labels = LabelSpace::synthetic(cfg.model.num_actions)?;
    if labels.groups.len() != cfg.model.num_groups {
        bail!(
            "synthetic labels have {} group classes but model.num_groups = {}",
            labels.groups.len(),
            cfg.model.num_groups
        );
    }
    Ok(labels)
}

fn splits(cfg: &ModelConfig, labels: &LabelSpace, data: Option<&Path>, exec: Exec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    match data {
        None => Ok(synthetic_splits(cfg, labels, exec)?),
        Some(dir) => {
            let samples = read_corpus(dir, labels, cfg.model.frames, cfg.video.frame_rate)
                .with_context(|| format!("reading corpus {}", dir.display()))?;
            let r = cfg.data.train_ratio;
            Ok(make_splits(&samples, |s| &s.annotation.clip_id, (r, 1.0 - r), cfg.data.seed)?)
        }
    }
}

fn restore(path: &Path) -> Result<(Checkpoint, ReactModel)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let (model, _) = ReactModel::new(&ckpt.config, ckpt.vocab.clone(), ckpt.seed)?;
    Ok((ckpt, model))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let labels = labels_for(&cfg)?;
            let scenes = generate_corpus(&cfg, &labels, exec)?;
            let reseeds: u32 = scenes.iter().map(|s| s.reseeds).sum();
            let (clips, anns): (Vec<_>, Vec<_>) = scenes.into_iter().map(|s| (s.clip, s.annotation)).unzip();
            write_corpus(&out, &clips, &anns, &labels)?;
            println!("wrote {} clips to {} ({reseeds} placements redrawn)", clips.len(), out.display());
        }
        Command::Train { config, mode, seed, data, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
                cfg.data.seed = s;
            }
            let labels = labels_for(&cfg)?;
            let (train_set, test_set) = splits(&cfg, &labels, data.as_deref(), exec)?;
            let opts = TrainOptions { mode: mode.into(), exec, out_dir: Some(out.clone()) };
            let outcome = train(&cfg, &labels, &train_set, &test_set, &opts)?;
            println!("steps {}  loss {:.4} -> {:.4}", outcome.steps, outcome.initial_loss, outcome.final_loss);
            if let Some(report) = &outcome.final_eval {
                println!("{}", serde_json::to_string_pretty(report)?);
                let (_, preds) = evaluate(&outcome.model, &outcome.store, &labels, &test_set, exec)?;
                write_predictions(BufWriter::new(File::create(out.join("predictions.txt"))?), &preds)?;
            }
        }
        Command::Eval { checkpoint, metrics, data, predictions } => {
            let (ckpt, model) = restore(&checkpoint)?;
            let labels = labels_for(&ckpt.config)?;
            let (_, test_set) = splits(&ckpt.config, &labels, data.as_deref(), exec)?;
            if test_set.is_empty() {
                bail!("the checkpoint's configuration leaves no test clips");
            }
            let (report, preds) = evaluate(&model, &ckpt.params, &labels, &test_set, exec)?;
            let mut out = serde_json::Map::new();
            for m in metrics.split(',').map(str::trim).filter(|m| !m.is_empty()) {
                let value = match m {
                    "mca" => serde_json::json!(report.mca),
                    "merged-mca" => serde_json::json!(report.merged_mca),
                    "mpca" => serde_json::json!(report.mpca),
                    "iou" => serde_json::json!(report.mean_iou),
                    "prf" => serde_json::to_value(report.actions)?,
                    _ => match m.strip_prefix("recall@").map(str::parse::<usize>) {
                        Some(Ok(k)) => {
                            let r = retrieval_recall(&model, &ckpt.params, &labels, &test_set, &[k], exec)?;
                            serde_json::json!(r[0].1)
                        }
                        _ => bail!("unknown metric {m:?}"),
                    },
                };
                out.insert(m.to_string(), value);
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
            if let Some(p) = predictions {
                write_predictions(BufWriter::new(File::create(&p)?), &preds)?;
            }
        }
        Command::Retrieve { checkpoint, prompt, data, top } => {
            let (ckpt, model) = restore(&checkpoint)?;
            let labels = labels_for(&ckpt.config)?;
            let (_, test_set) = splits(&ckpt.config, &labels, data.as_deref(), exec)?;
            let query = model.tokenize(&prompt)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for s in &test_set {
                let ranked = rank_actors(&model, &ckpt.params, s, &query)?;
                let shown = &ranked[..top.min(ranked.len())];
                let line = serde_json::json!({ "clip_id": s.annotation.clip_id, "actors": shown });
                writeln!(w, "{line}")?;
            }
        }
        Command::Gradcheck => {
            let entries = gradient_suite(exec)?;
            let mut failed = 0;
            for e in &entries {
                let status = if e.passes() { "ok" } else { "FAIL" };
                failed += usize::from(!e.passes());
                println!("{:<22} {:>10.3e} {:>7} checked {:>4} kinks  {status}", e.name, e.max_rel_error, e.checked, e.kinks);
            }
            if failed > 0 {
                bail!("{failed} gradient checks failed");
            }
            println!("all {} gradient checks passed", entries.len());
        }
        Command::Ablate { config, seeds, out } => {
            let cfg = load_config(config.as_deref())?;
            let opts = TrainOptions { exec, out_dir: out.clone(), ..Default::default() };
            let summary = run_ablation(&cfg, &default_variants(&cfg), &seeds, &opts)?;
            println!("{:<18} {:>10} {:>10}", "variant", "merged-mca", "iou");
            for (name, mca, iou) in &summary.means {
                println!("{name:<18} {mca:>10.4} {iou:>10.4}");
            }
            if let Some(dir) = out {
                std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&summary)?)?;
            }
        }
        Command::Probe { checkpoint, data, epochs } => {
            let (ckpt, _) = restore(&checkpoint)?;
            let labels = labels_for(&ckpt.config)?;
            let (train_set, test_set) = splits(&ckpt.config, &labels, data.as_deref(), exec)?;
            let cfg = ProbeConfig { epochs, seed: ckpt.seed, ..ProbeConfig::default() };
            let report = linear_probe(&ckpt, &train_set, &test_set, &cfg, exec)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
