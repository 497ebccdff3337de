use std::path::{Path, PathBuf};

use clap::Args;
use sa_core::data::events::read_events;
use sa_core::data::frames::load_frames;
use sa_core::data::window::SEQ_LEN;
use sa_core::evaluation::report::{Table, CLASSIFICATION_COLUMNS};
use sa_core::labels::read_ratings;
use sa_core::model::{evaluate, HeadKind, ModelEvaluation};
use sa_core::pipeline::{build_labeled_data, prepare_videos};
use serde::Serialize;

use super::segment::{load_models, predict_videos};
use super::train::LEVELS;
use super::{render_tables, segment_all, segmentation_table, split_list, summaries, with_pool, SegmentationSummary};
use crate::error::Result;
use crate::output::{OutputDir, RunConfig, CONFIG_FILE};
use crate::settings::{Overrides, Settings};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long = "model-dir")]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    /// Comma-separated video ids to evaluate; all videos when omitted.
    #[arg(long)]
    pub videos: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    config: &'a RunConfig,
    classification: &'a ModelEvaluation,
    segmentation: Vec<SegmentationSummary>,
    tables: &'a [Table],
}

/// Classification metrics on every labelled window plus model-in-the-loop
/// segmentation of every video.
pub fn run(args: &EvalArgs, flags: &Overrides, config_file: Option<&Path>) -> Result<()> {
    let models = load_models(&args.model_dir)?;
    let settings = Settings::layered(Some(models.config.pipeline.clone()), config_file, flags)?;
    let run_config = RunConfig::new(
        "eval",
        &[
            ("model_dir", &args.model_dir),
            ("frames", &args.frames),
            ("ratings", &args.ratings),
            ("events", &args.events),
        ],
        config_file,
        &settings,
    );
    let cfg = settings.pipeline.resolved();
    let wanted = split_list(&args.videos);
    let mut videos = prepare_videos(load_frames(&args.frames)?, cfg.geometry)?;
    if !wanted.is_empty() {
        videos.retain(|v| wanted.contains(&v.video_id));
    }
    let ratings = read_ratings(&args.ratings)?;
    let events = read_events(&args.events)?;

    let (evaluation, segs) = with_pool(settings.threads, || -> Result<_> {
        let data = build_labeled_data(&videos, &models.encoder, &ratings, &events, &cfg)?;
        let evaluation = evaluate(&models.model, &data.samples)?;
        let preds = predict_videos(&videos, &models, &settings)?;
        let traj: Vec<(String, Vec<f64>)> = videos
            .iter()
            .zip(preds)
            .map(|(v, (_, t))| (v.video_id.clone(), t))
            .collect();
        let segs = segment_all(&traj, &events, &cfg.smoothing, SEQ_LEN)?;
        Ok((evaluation, segs))
    })??;

    let mut cls = Table::new("Ternary SA classification", "Model", &CLASSIFICATION_COLUMNS);
    cls.push_classification(
        format!("Transformer ({})", cfg.features.label()),
        std::slice::from_ref(&evaluation.ternary),
    );
    let mut tables = vec![cls];
    if models.model.config.head == HeadKind::Binary {
        if let Some(levels) = &evaluation.per_level {
            let mut t = Table::new("Binary SA classification per level", "SA level", &CLASSIFICATION_COLUMNS);
            for (name, r) in LEVELS.iter().zip(levels) {
                t.push_classification(*name, std::slice::from_ref(r));
            }
            tables.push(t);
        }
    }
    tables.push(segmentation_table("model", &segs));

    let out = OutputDir::create(&args.out)?;
    out.write_json(
        "report.json",
        &EvalReport {
            config: &run_config,
            classification: &evaluation,
            segmentation: summaries(&segs),
            tables: &tables,
        },
    )?;
    let text = render_tables(&tables);
    out.write_text("report.txt", &text)?;
    out.write_json(CONFIG_FILE, &run_config)?;
    print!("{text}");
    Ok(())
}
