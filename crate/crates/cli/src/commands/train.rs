use std::path::{Path, PathBuf};

use clap::Args;
use sa_core::data::events::read_events;
use sa_core::data::frames::load_frames;
use sa_core::evaluation::report::{Table, CLASSIFICATION_COLUMNS};
use sa_core::evaluation::ClassificationReport;
use sa_core::graph::write_embeddings;
use sa_core::labels::read_ratings;
use sa_core::model::{cross_validate, FeatureSet, HeadKind, ModelEvaluation};
use sa_core::pipeline::{build_labeled_data, prepare_videos, train_pipeline, PipelineConfig, TrainOutcome};
use sa_core::CoreError;
use serde::Serialize;

use super::{render_tables, split_list, with_pool};
use crate::error::{CliError, Result};
use crate::output::{OutputDir, RunConfig, CONFIG_FILE};
use crate::settings::{Overrides, Settings};

pub const LEVELS: [&str; 3] = ["Perception", "Comprehension", "Projection"];

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated video ids held out from training and cross-validation.
    #[arg(long = "test-videos")]
    pub test_videos: Option<String>,
    /// Skip k-fold cross-validation and fit only the final model.
    #[arg(long = "no-cv")]
    pub no_cv: bool,
    /// Also cross-validate every feature-group combination.
    #[arg(long)]
    pub ablation: bool,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a RunConfig,
    outcome: &'a TrainOutcome,
    ablation: Vec<AblationRun>,
    tables: &'a [Table],
}

#[derive(Debug, Clone, Serialize)]
struct AblationRun {
    features: FeatureSet,
    folds: Vec<ClassificationReport>,
}

fn per_level_rows(table: &mut Table, evals: &[&ModelEvaluation]) {
    for (i, level) in LEVELS.iter().enumerate() {
        let reports: Vec<ClassificationReport> = evals
            .iter()
            .filter_map(|e| e.per_level.as_ref().map(|p| p[i].clone()))
            .collect();
        if !reports.is_empty() {
            table.push_classification(*level, &reports);
        }
    }
}

fn model_label(cfg: &PipelineConfig) -> String {
    format!("Transformer ({})", cfg.features.label())
}

fn tables(cfg: &PipelineConfig, outcome: &TrainOutcome, ablation: &[AblationRun]) -> Vec<Table> {
    let mut out = Vec::new();
    if let Some(cv) = &outcome.cv {
        let k = cv.folds.len();
        let mut t = Table::new(
            &format!("Ternary SA classification ({k}-fold cross-validation, mean ± std)"),
            "Model",
            &CLASSIFICATION_COLUMNS,
        );
        t.push_classification(model_label(cfg), &cv.ternary_reports());
        out.push(t);
        if cfg.model.head == HeadKind::Binary {
            let mut t = Table::new(
                &format!("Binary SA classification per level ({k}-fold cross-validation)"),
                "SA level",
                &CLASSIFICATION_COLUMNS,
            );
            per_level_rows(&mut t, &cv.folds.iter().map(|f| &f.evaluation).collect::<Vec<_>>());
            out.push(t);
        }
    }

    let mut t = Table::new("Final model (ternary)", "Split", &CLASSIFICATION_COLUMNS);
    let splits = [
        ("train", Some(&outcome.final_train)),
        ("validation", outcome.final_validation.as_ref()),
        ("test", outcome.test.as_ref()),
    ];
    for (name, eval) in splits {
        if let Some(e) = eval {
            t.push_classification(name, std::slice::from_ref(&e.ternary));
        }
    }
    out.push(t);
    if cfg.model.head == HeadKind::Binary {
        let (name, eval) = match (&outcome.test, &outcome.final_validation) {
            (Some(e), _) => ("test", e),
            (None, Some(e)) => ("validation", e),
            (None, None) => ("train", &outcome.final_train),
        };
        let mut t = Table::new(
            &format!("Final model per SA level ({name})"),
            "SA level",
            &CLASSIFICATION_COLUMNS,
        );
        per_level_rows(&mut t, &[eval]);
        out.push(t);
    }

    if !ablation.is_empty() {
        let mut t = Table::new(
            "Feature ablation (ternary, cross-validated)",
            "Features",
            &CLASSIFICATION_COLUMNS,
        );
        for run in ablation {
            t.push_classification(run.features.label(), &run.folds);
        }
        out.push(t);
    }
    out
}

pub fn run(args: &TrainArgs, flags: &Overrides, config_file: Option<&Path>) -> Result<()> {
    let settings = Settings::layered(None, config_file, flags)?;
    let run_config = RunConfig::new(
        "train",
        &[("frames", &args.frames), ("ratings", &args.ratings), ("events", &args.events)],
        config_file,
        &settings,
    );
    let frames = load_frames(&args.frames)?;
    let ratings = read_ratings(&args.ratings)?;
    let events = read_events(&args.events)?;
    let test_videos = split_list(&args.test_videos);
    let cfg = &settings.pipeline;
    if args.ablation && cfg.model.folds < 2 {
        return Err(CliError::Config("--ablation needs --folds of at least 2".into()));
    }

    let (trained, ablation, embeddings) = with_pool(settings.threads, || -> Result<_> {
        let trained = train_pipeline(frames.clone(), &ratings, &events, cfg, &test_videos, !args.no_cv)
            .map_err(CliError::from_training)?;
        let resolved = cfg.resolved();
        let videos = prepare_videos(frames, resolved.geometry)?;
        let mut ablation = Vec::new();
        if args.ablation {
            for features in FeatureSet::combinations() {
                let mut c = cfg.clone();
                c.features = features;
                let c = c.resolved();
                let data = build_labeled_data(&videos, &trained.encoder, &ratings, &events, &c)?;
                let pool: Vec<_> = data
                    .samples
                    .into_iter()
                    .filter(|s| !test_videos.contains(&s.video_id))
                    .collect();
                let cv = cross_validate(&pool, &c.model, c.balance).map_err(CliError::from_training)?;
                ablation.push(AblationRun {
                    features,
                    folds: cv.ternary_reports(),
                });
            }
        }
        let mut embeddings = (Vec::new(), Vec::new());
        for v in &videos {
            embeddings.1.extend(trained.encoder.embed_all(&v.graphs)?);
            embeddings.0.extend(v.frames.iter().cloned());
        }
        Ok((trained, ablation, embeddings))
    })??;

    let out = OutputDir::create(&args.out)?;
    let save = |name: &str, ckpt: sa_numerics::Checkpoint| -> Result<()> {
        ckpt.save(&out.path(name)).map_err(|e| CliError::Input(CoreError::from(e)))
    };
    save("gae.json", trained.encoder.to_checkpoint()?)?;
    save("model.json", trained.model.to_checkpoint()?)?;
    write_embeddings(&out.path("embeddings.jsonl"), &embeddings.0, &embeddings.1)?;

    let tables = tables(cfg, &trained.outcome, &ablation);
    out.write_json(
        "report.json",
        &TrainReport {
            config: &run_config,
            outcome: &trained.outcome,
            ablation,
            tables: &tables,
        },
    )?;
    let text = render_tables(&tables);
    out.write_text("report.txt", &text)?;
    out.write_json(CONFIG_FILE, &run_config)?;
    print!("{text}");
    Ok(())
}
