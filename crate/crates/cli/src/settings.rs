//! Layered run configuration: defaults, then the `SA_ASSESS_CONFIG` file,
//! then command-line flags.

use std::path::Path;

use clap::Args;
use sa_core::data::balance::BalanceMode;
use sa_core::model::{FeatureSet, HeadKind};
use sa_core::pipeline::PipelineConfig;
use sa_numerics::RngSeed;

use crate::error::{CliError, Result};

pub const CONFIG_ENV: &str = "SA_ASSESS_CONFIG";

/// Flags shared by every subcommand. Unset flags leave lower layers intact.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-fold and per-video parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Feature groups joined by `+`, e.g. `bbox+pose+graph`.
    #[arg(long, global = true)]
    pub features: Option<FeatureSet>,
    #[arg(long, global = true)]
    pub head: Option<HeadKind>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Graph embedding width per node.
    #[arg(long = "g-dim", global = true)]
    pub g_dim: Option<usize>,
    /// Smoothing window in frames (odd, at least 3).
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Boundary threshold on the smoothed class trajectory.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Upper bound on classifier epochs.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long = "gae-epochs", global = true)]
    pub gae_epochs: Option<usize>,
}

/// The effective settings of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub threads: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            threads: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_balance(value: &str) -> Result<Option<BalanceMode>> {
    match value {
        "none" => Ok(None),
        "down" | "downsample" => Ok(Some(BalanceMode::Downsample)),
        other => match other.strip_prefix("up:") {
            Some(n) => Ok(Some(BalanceMode::Upsample {
                per_class: parse("balance", n)?,
            })),
            None => Err(CliError::Config(format!(
                "`balance`: expected none, down or up:<per_class>, got `{other}`"
            ))),
        },
    }
}

impl Settings {
    /// Applies one `key = value` entry; keys accept `-` or `_`.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key.replace('-', "_").as_str() {
            "seed" => p.seed = RngSeed(parse(key, value)?),
            "threads" => self.threads = parse(key, value)?,
            "features" => p.features = parse(key, value)?,
            "head" => p.model.head = parse(key, value)?,
            "folds" => p.model.folds = parse(key, value)?,
            "g_dim" => p.gcn.embed_dim = parse(key, value)?,
            "window" => p.smoothing.window = parse(key, value)?,
            "sigma" => p.smoothing.sigma = Some(parse(key, value)?),
            "tau" => p.smoothing.tau = parse(key, value)?,
            "min_gap" => p.smoothing.min_gap = parse(key, value)?,
            "epochs" => p.model.max_epochs = parse(key, value)?,
            "patience" => p.model.patience = parse(key, value)?,
            "lr" => p.model.learning_rate = parse(key, value)?,
            "batch_size" => p.model.batch_size = parse(key, value)?,
            "dropout" => p.model.dropout = parse(key, value)?,
            "layers" => p.model.layers = parse(key, value)?,
            "heads" => p.model.heads = parse(key, value)?,
            "proj_dim" => p.model.proj_dim = parse(key, value)?,
            "ff_dim" => p.model.ff_dim = parse(key, value)?,
            "residual" => p.model.residual = parse(key, value)?,
            "gae_epochs" => p.gcn.epochs = parse(key, value)?,
            "gae_lr" => p.gcn.learning_rate = parse(key, value)?,
            "gae_hidden" => p.gcn.hidden_dim = parse(key, value)?,
            "normalize_adjacency" => p.gcn.normalize_adjacency = parse(key, value)?,
            "stride" => p.stride = parse(key, value)?,
            "graph_stride" => p.graph_stride = parse(key, value)?,
            "balance" => p.balance = parse_balance(value)?,
            "frame_width" => p.geometry.width = parse(key, value)?,
            "frame_height" => p.geometry.height = parse(key, value)?,
            _ => return Err(CliError::Config(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    /// Reads a plain-text file of `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
            })?;
            self.apply(key.trim(), value.trim()).map_err(|e| match e {
                CliError::Config(msg) => CliError::Config(format!("{}:{}: {msg}", path.display(), i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        let p = &mut self.pipeline;
        if let Some(v) = o.seed {
            p.seed = RngSeed(v);
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
        if let Some(v) = o.features {
            p.features = v;
        }
        if let Some(v) = o.head {
            p.model.head = v;
        }
        if let Some(v) = o.folds {
            p.model.folds = v;
        }
        if let Some(v) = o.g_dim {
            p.gcn.embed_dim = v;
        }
        if let Some(v) = o.window {
            p.smoothing.window = v;
        }
        if let Some(v) = o.tau {
            p.smoothing.tau = v;
        }
        if let Some(v) = o.epochs {
            p.model.max_epochs = v;
        }
        if let Some(v) = o.gae_epochs {
            p.gcn.epochs = v;
        }
    }

    /// Defaults < `base` < config file < flags.
    pub fn layered(base: Option<PipelineConfig>, file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(b) = base {
            s.pipeline = b;
        }
        if let Some(path) = file {
            s.apply_file(path)?;
        }
        s.apply_overrides(flags);
        if s.threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        s.pipeline.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nseed = 7\ntau=0.75\ng-dim = 4 # trailing\nbalance = up:50\n").unwrap();
        let flags = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let s = Settings::layered(None, Some(&path), &flags).unwrap();
        assert_eq!(s.pipeline.seed, RngSeed(9));
        assert_eq!(s.pipeline.smoothing.tau, 0.75);
        assert_eq!(s.pipeline.gcn.embed_dim, 4);
        assert_eq!(s.pipeline.balance, Some(BalanceMode::Upsample { per_class: 50 }));
        assert_eq!(s.pipeline.model.folds, PipelineConfig::default().model.folds);
    }

    #[test]
    fn bad_entries_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed = 1\nwidth_of_things = 3\n").unwrap();
        let err = Settings::layered(None, Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert_eq!(err.exit_code(), 2);
        std::fs::write(&path, "window = 4\n").unwrap();
        assert!(Settings::layered(None, Some(&path), &Overrides::default()).is_err());
    }
}
