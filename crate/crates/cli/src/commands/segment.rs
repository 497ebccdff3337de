use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use sa_core::data::frames::load_frames;
use sa_core::data::window::SEQ_LEN;
use sa_core::graph::GcnAutoencoder;
use sa_core::labels::{curves_for_videos, read_ratings};
use sa_core::model::{write_predictions, SaModel, SaPrediction};
use sa_core::pipeline::{
    boundary_map, feature_rows, label_trajectory, predicted_trajectory, prepare_videos, video_lengths, PreparedVideo,
};
use sa_core::segmentation::{write_curve_tsv, write_segments};
use sa_core::CoreError;
use sa_numerics::Checkpoint;
use serde::Serialize;

use super::{read_events_opt, render_tables, segment_all, segment_rows, segmentation_table, summaries, with_pool, SegmentationSummary};
use crate::error::{CliError, Result};
use crate::output::{OutputDir, RunConfig, CONFIG_FILE};
use crate::settings::{Overrides, Settings};

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    /// Directory written by `train` (checkpoints and config.json).
    #[arg(long = "model-dir", required_unless_present = "oracle")]
    pub model_dir: Option<PathBuf>,
    #[arg(long)]
    pub frames: PathBuf,
    /// Ground-truth events; enables MoF / IoU.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Expert ratings; required by `--oracle`.
    #[arg(long, required_if_eq("oracle", "true"))]
    pub ratings: Option<PathBuf>,
    /// Segment the ground-truth label trajectory instead of model output.
    #[arg(long, requires = "events")]
    pub oracle: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SegmentReport<'a> {
    config: &'a RunConfig,
    method: &'a str,
    videos: Vec<SegmentationSummary>,
    tables: &'a [sa_core::evaluation::report::Table],
}

/// The frozen encoder and classifier of a training run, plus its settings.
pub(crate) struct TrainedModels {
    pub encoder: GcnAutoencoder,
    pub model: SaModel,
    pub config: RunConfig,
}

pub(crate) fn load_models(dir: &Path) -> Result<TrainedModels> {
    let load = |name: &str| Checkpoint::load(&dir.join(name)).map_err(|e| CliError::Input(CoreError::from(e)));
    Ok(TrainedModels {
        encoder: GcnAutoencoder::from_checkpoint(&load("gae.json")?)?,
        model: SaModel::from_checkpoint(&load("model.json")?)?,
        config: RunConfig::load(dir)?,
    })
}

/// Per-frame model predictions and the class trajectory of every video.
pub(crate) fn predict_videos(
    videos: &[PreparedVideo],
    models: &TrainedModels,
    settings: &Settings,
) -> std::result::Result<Vec<(Vec<SaPrediction>, Vec<f64>)>, CoreError> {
    if settings.pipeline.features.dim(models.encoder.config.embed_dim) != models.model.config.input_dim {
        return Err(CoreError::Config(format!(
            "features `{}` do not match the model's input width {}",
            settings.pipeline.features, models.model.config.input_dim
        )));
    }
    videos
        .par_iter()
        .map(|v| {
            if v.frames.len() < SEQ_LEN {
                return Ok((Vec::new(), Vec::new()));
            }
            let rows = feature_rows(v, &models.encoder, settings.pipeline.features)?;
            predicted_trajectory(&models.model, v, &rows)
        })
        .collect()
}

pub fn run(args: &SegmentArgs, flags: &Overrides, config_file: Option<&Path>) -> Result<()> {
    let models = match (&args.model_dir, args.oracle) {
        (Some(dir), false) => Some(load_models(dir)?),
        _ => None,
    };
    let base = models.as_ref().map(|m| m.config.pipeline.clone());
    let settings = Settings::layered(base, config_file, flags)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("frames", &args.frames)];
    inputs.extend(args.events.as_deref().map(|p| ("events", p)));
    inputs.extend(args.ratings.as_deref().filter(|_| args.oracle).map(|p| ("ratings", p)));
    inputs.extend(args.model_dir.as_deref().filter(|_| !args.oracle).map(|p| ("model_dir", p)));
    let run_config = RunConfig::new("segment", &inputs, config_file, &settings);

    let events = read_events_opt(args.events.as_deref())?;
    let videos = prepare_videos(load_frames(&args.frames)?, settings.pipeline.geometry)?;
    let out = OutputDir::create(&args.out)?;

    let (method, trajectories) = match &models {
        None => {
            let ratings_path = args
                .ratings
                .as_deref()
                .ok_or_else(|| CliError::Config("--oracle needs --ratings".into()))?;
            let ratings = read_ratings(ratings_path)?;
            let curves = curves_for_videos(&ratings, &boundary_map(&events), &video_lengths(&videos))?;
            let traj: Vec<(String, Vec<f64>)> = curves
                .iter()
                .map(|(id, c)| (id.clone(), label_trajectory(c)))
                .collect();
            ("ground-truth labels", traj)
        }
        Some(m) => {
            let preds = with_pool(settings.threads, || predict_videos(&videos, m, &settings))??;
            let mut file = std::fs::File::create(out.path("predictions.jsonl"))
                .map(std::io::BufWriter::new)
                .map_err(|e| CoreError::Io {
                    path: out.path("predictions.jsonl"),
                    source: e,
                })?;
            let io_err = |e| CliError::Input(CoreError::Io {
                path: out.path("predictions.jsonl"),
                source: e,
            });
            for (v, (p, _)) in videos.iter().zip(&preds) {
                write_predictions(&mut file, &v.video_id, &v.frame_idx()[..p.len()], p).map_err(io_err)?;
            }
            file.flush().map_err(io_err)?;
            let traj = videos
                .iter()
                .zip(preds)
                .map(|(v, (_, t))| (v.video_id.clone(), t))
                .collect();
            ("model", traj)
        }
    };

    let segs = with_pool(settings.threads, || {
        segment_all(&trajectories, &events, &settings.pipeline.smoothing, SEQ_LEN)
    })??;
    write_segments(&out.path("segments.csv"), &segment_rows(&segs, &events))?;
    let curves: Vec<(String, Vec<f64>, Vec<f64>)> = segs
        .iter()
        .map(|s| (s.video_id.clone(), s.raw.clone(), s.smoothed.clone()))
        .collect();
    write_curve_tsv(&out.path("curve.tsv"), &curves)?;

    let tables = vec![segmentation_table(method, &segs)];
    out.write_json(
        "report.json",
        &SegmentReport {
            config: &run_config,
            method,
            videos: summaries(&segs),
            tables: &tables,
        },
    )?;
    let text = render_tables(&tables);
    out.write_text("report.txt", &text)?;
    out.write_json(CONFIG_FILE, &run_config)?;
    print!("{text}");
    Ok(())
}
