use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use proposal_cascade::cascade::EdgeSource;
use proposal_cascade::io::{
    read_json, read_model_dir, read_proposals_csv, write_curve_csv, write_json, write_model,
    write_proposals_csv, AnnotationFile, PipelineConfig, TubesFile,
};
use proposal_cascade::pipeline;
use proposal_cascade::synth::{synth_generate, SynthConfig};
use proposal_cascade::windowing::{ScaleSet, ShapeBank, DEFAULT_BANK_SIZE, DEFAULT_POOL_BOUND};

/// Object and action proposals from precomputed feature maps.
#[derive(Parser)]
#[command(name = "pcascade", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EdgeArg {
    /// Gradient magnitude of the fine feature layer.
    Fine,
    /// Edge maps stored next to the feature maps.
    Ingested,
}

#[derive(Subcommand)]
enum Command {
    /// Select window shapes (in coarse cells) from annotated boxes.
    SelectWindows {
        #[arg(long)]
        annotations: PathBuf,
        /// Largest window side in cells.
        #[arg(long, default_value_t = DEFAULT_POOL_BOUND)]
        pool: u32,
        /// Number of shapes to keep.
        #[arg(long, default_value_t = DEFAULT_BANK_SIZE)]
        count: usize,
        /// Short sides of the scales, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = ScaleSet::default().sides)]
        scales: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train linear models for one or both stages.
    Train {
        /// Feature-map directory with a manifest.json.
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        /// Stage to train (1 or 2); both when omitted.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: Option<u8>,
        /// Scale to train; all scales when omitted.
        #[arg(long)]
        scale: Option<usize>,
        /// Model file with --stage and --scale, otherwise a directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON or TOML configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the cascade on every image of a feature-map directory.
    Propose {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        /// Directory of model files.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured evaluation target.
        #[arg(long)]
        beta: Option<f64>,
        /// Overrides the configured edge source.
        #[arg(long, value_enum)]
        edge_source: Option<EdgeArg>,
        /// Keep at most this many proposals per image.
        #[arg(long)]
        limit: Option<usize>,
        /// CSV with image_id,rank,x0,y0,x1,y1,score.
        #[arg(long)]
        out: PathBuf,
    },
    /// Link per-frame proposals (image ids `<video>/<frame>`) into tubes.
    LinkTubes {
        /// A proposals CSV or a directory of them.
        #[arg(long)]
        proposals: PathBuf,
        /// Proposals per frame used for linking.
        #[arg(long, default_value_t = 100)]
        per_frame: usize,
        #[arg(long, default_value_t = 20)]
        max_tubes: usize,
        /// Minimum IoU between linked boxes.
        #[arg(long, default_value_t = proposal_cascade::tubes::DEFAULT_LINK_IOU)]
        gate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall against annotated boxes at several proposal budgets.
    EvalRecall {
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![10, 100, 1000])]
        budgets: Vec<usize>,
        /// CSV with axis = budget and value = recall.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON with AUC, average recall and budget statistics.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Action recall of tubes against annotated videos.
    EvalTubes {
        #[arg(long)]
        tubes: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Minimum tube overlap for a hit.
        #[arg(long, default_value_t = 0.5)]
        ovr: f64,
        /// Tubes per video considered; all when omitted.
        #[arg(long)]
        max_tubes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic planted-object dataset.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        images: usize,
        #[arg(long, default_value_t = 0)]
        videos: usize,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        /// Upper bound on objects per image.
        #[arg(long, default_value_t = SynthConfig::default().objects_per_image)]
        objects: usize,
        /// Standard deviation of the background noise.
        #[arg(long, default_value_t = SynthConfig::default().noise_level)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    })
}

fn read_bank(path: &Path) -> Result<ShapeBank> {
    let bank: ShapeBank = read_json(path)?;
    // Re-validate: the JSON may have been edited by hand.
    Ok(ShapeBank::new(bank.pool_bound, bank.shapes)?)
}

fn read_proposal_rows(path: &Path) -> Result<Vec<proposal_cascade::io::ProposalRow>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no .csv files in {}", path.display());
        }
        let mut rows = Vec::new();
        for f in files {
            rows.extend(read_proposals_csv(&f)?);
        }
        Ok(rows)
    } else {
        Ok(read_proposals_csv(path)?)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SelectWindows { annotations, pool, count, scales, out } => {
            let ann = AnnotationFile::read(&annotations)?;
            let scales = ScaleSet::new(scales)?;
            let bank = pipeline::bank_from_annotations(&ann, &scales, pool, count)?;
            write_json(&out, &bank)?;
        }
        Command::Train { tensors, annotations, bank, stage, scale, out, seed, config } => {
            let cfg = load_config(config.as_deref())?;
            let ann = AnnotationFile::read(&annotations)?;
            let bank = read_bank(&bank)?;
            let stages = match stage {
                Some(s) => vec![s],
                None => vec![1, 2],
            };
            let single = stage.is_some() && scale.is_some();
            let models = pipeline::train_from_dir(&tensors, &ann, &bank, &stages, scale, seed, &cfg)?;
            for m in &models {
                let path = if single {
                    out.clone()
                } else {
                    out.join(format!("stage{}_s{}.json", m.stage, m.model.scale_id))
                };
                write_model(&path, &m.model, m.stage, m.channels)?;
            }
        }
        Command::Propose { tensors, bank, models, config, beta, edge_source, limit, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(b) = beta {
                cfg.cascade.beta = b;
            }
            if let Some(e) = edge_source {
                cfg.edge_source = match e {
                    EdgeArg::Fine => EdgeSource::FineFeatures,
                    EdgeArg::Ingested => EdgeSource::Ingested,
                };
            }
            let bank = read_bank(&bank)?;
            let models = read_model_dir(&models)?;
            let rows = pipeline::propose_dir(&tensors, &bank, &models, &cfg, limit)?;
            write_proposals_csv(&out, &rows)?;
        }
        Command::LinkTubes { proposals, per_frame, max_tubes, gate, out } => {
            let rows = read_proposal_rows(&proposals)?;
            let tubes = pipeline::link_tubes_rows(&rows, per_frame, max_tubes, gate)?;
            tubes.write(&out)?;
        }
        Command::EvalRecall { proposals, annotations, iou, budgets, out, summary } => {
            let rows = read_proposal_rows(&proposals)?;
            let ann = AnnotationFile::read(&annotations)?;
            let report = pipeline::eval_recall_rows(&rows, &ann, iou, &budgets)?;
            let points: Vec<(f64, f64)> = report
                .budgets
                .iter()
                .zip(&report.recall)
                .map(|(&b, &r)| (b as f64, r))
                .collect();
            write_curve_csv(&out, &points)?;
            if let Some(s) = summary {
                write_json(&s, &report)?;
            }
        }
        Command::EvalTubes { tubes, annotations, ovr, max_tubes, out } => {
            let tubes = TubesFile::read(&tubes)?;
            let ann = AnnotationFile::read(&annotations)?;
            let report = pipeline::eval_tubes_file(&tubes, &ann, ovr, max_tubes)?;
            write_json(&out, &report)?;
        }
        Command::Synth { seed, images, videos, frames, objects, noise, out } => {
            let cfg = SynthConfig {
                seed,
                images,
                videos,
                frames,
                objects_per_image: objects,
                noise_level: noise,
                ..SynthConfig::default()
            };
            let ds = synth_generate(&cfg)?;
            ds.write(&out, &cfg.scales)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            let code = e
                .downcast_ref::<proposal_cascade::Error>()
                .map_or(1, |e| e.code());
            ExitCode::from(code as u8)
        }
    }
}
