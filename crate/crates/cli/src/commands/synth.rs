use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use sa_core::data::events::write_events;
use sa_core::data::frames::write_frames;
use sa_core::data::synth::{generate_scenario, ScenarioScript};
use sa_core::labels::{write_labels, write_ratings};
use sa_core::CoreError;
use sa_numerics::RngSeed;

use crate::error::{CliError, Result};
use crate::output::{OutputDir, RunConfig, CONFIG_FILE};
use crate::settings::{Overrides, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Twelve videos of 50–60 s; trains in well under a minute.
    Desk,
    /// Eleven videos of two to three minutes at 50 fps.
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Scenario script (JSON). Mutually exclusive with `--preset`.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub script: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub out: PathBuf,
}

fn load_script(path: &Path) -> Result<ScenarioScript> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Input(CoreError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    })
}

/// Writes `frames.jsonl`, `ratings.csv`, `events.csv`, the ground-truth
/// `labels.jsonl` and the resolved `script.json`.
pub fn run(args: &SynthArgs, flags: &Overrides, config_file: Option<&Path>) -> Result<()> {
    let settings = Settings::layered(None, config_file, flags)?;
    let mut script = match (&args.script, args.preset) {
        (Some(path), _) => load_script(path)?,
        (None, Some(Preset::Desk)) => ScenarioScript::desk_scale(settings.pipeline.seed),
        (None, Some(Preset::Full)) => ScenarioScript::full_scale(settings.pipeline.seed),
        (None, None) => return Err(CliError::Config("either --script or --preset is required".into())),
    };
    if let Some(seed) = flags.seed {
        script.seed = RngSeed(seed);
    }
    script.validate()?;
    let scenario = generate_scenario(&script)?;

    let out = OutputDir::create(&args.out)?;
    write_frames(&out.path("frames.jsonl"), &scenario.frames)?;
    write_ratings(&out.path("ratings.csv"), &scenario.ratings)?;
    write_events(&out.path("events.csv"), &scenario.events)?;
    let curves: Vec<_> = scenario.curves.into_iter().collect();
    write_labels(&out.path("labels.jsonl"), &curves)?;
    out.write_json("script.json", &script)?;
    let inputs: Vec<(&str, &Path)> = args.script.as_deref().map(|p| ("script", p)).into_iter().collect();
    out.write_json(CONFIG_FILE, &RunConfig::new("synth", &inputs, config_file, &settings))?;
    log::info!(
        "wrote {} frames across {} videos to {}",
        scenario.frames.len(),
        script.videos.len(),
        args.out.display()
    );
    Ok(())
}
