pub mod eval;
pub mod segment;
pub mod synth;
pub mod train;
pub mod verify;

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use sa_core::data::events::VideoEvents;
use sa_core::evaluation::report::{Cell, Table, SEGMENTATION_COLUMNS};
use sa_core::pipeline::{event_vocabulary, segment_trajectory, VideoSegmentation};
use sa_core::segmentation::{SegmentRow, SmoothingConfig};
use sa_core::CoreError;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Runs `f` on a dedicated pool of `threads` workers.
pub(crate) fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub(crate) fn split_list(list: &Option<String>) -> Vec<String> {
    list.as_deref()
        .map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default()
}

pub(crate) fn read_events_opt(path: Option<&Path>) -> Result<Vec<VideoEvents>> {
    Ok(match path {
        Some(p) => sa_core::data::events::read_events(p)?,
        None => Vec::new(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentationSummary {
    pub video_id: String,
    pub boundaries: Vec<usize>,
    pub mof: Option<f64>,
    pub mof_balanced: Option<f64>,
    pub iou: Option<f64>,
}

/// Segments every `(video_id, trajectory)` pair in parallel, in input order.
/// Trajectories shorter than one window are skipped with a warning.
pub(crate) fn segment_all(
    trajectories: &[(String, Vec<f64>)],
    events: &[VideoEvents],
    smoothing: &SmoothingConfig,
    min_len: usize,
) -> std::result::Result<Vec<VideoSegmentation>, CoreError> {
    let vocab = event_vocabulary(events);
    let results: Vec<Option<std::result::Result<VideoSegmentation, CoreError>>> = trajectories
        .par_iter()
        .map(|(video_id, traj)| {
            if traj.len() < min_len {
                warn!("video {video_id}: {} frames is shorter than one window; skipped", traj.len());
                return None;
            }
            let truth = events.iter().find(|e| &e.video_id == video_id);
            Some(segment_trajectory(video_id, traj, smoothing, truth.map(|e| (e, vocab.as_slice()))))
        })
        .collect();
    results.into_iter().flatten().collect()
}

pub(crate) fn segment_rows(segs: &[VideoSegmentation], events: &[VideoEvents]) -> Vec<SegmentRow> {
    let vocab = event_vocabulary(events);
    let mut rows = Vec::new();
    for s in segs {
        for &b in &s.predicted.boundaries {
            let matched_event = s
                .matched
                .as_ref()
                .map_or_else(String::new, |m| vocab[m[b]].clone());
            rows.push(SegmentRow {
                video_id: s.video_id.clone(),
                boundary_frame: b,
                matched_event,
            });
        }
    }
    rows
}

pub(crate) fn summaries(segs: &[VideoSegmentation]) -> Vec<SegmentationSummary> {
    segs.iter()
        .map(|s| SegmentationSummary {
            video_id: s.video_id.clone(),
            boundaries: s.predicted.boundaries.clone(),
            mof: s.mof,
            mof_balanced: s.mof_balanced,
            iou: s.iou,
        })
        .collect()
}

/// Per-video MoF / IoU rows plus their mean, labelled with `method`.
pub(crate) fn segmentation_table(method: &str, segs: &[VideoSegmentation]) -> Table {
    let mut t = Table::new(
        &format!("Temporal segmentation ({method})"),
        "Video",
        &SEGMENTATION_COLUMNS,
    );
    let cell = |v: Option<f64>| v.map_or_else(Cell::missing, Cell::value);
    for s in segs {
        t.push(s.video_id.clone(), vec![cell(s.mof), cell(s.iou), cell(s.mof_balanced)]);
    }
    let agg = |f: fn(&VideoSegmentation) -> Option<f64>| Cell::aggregate(&segs.iter().map(f).collect::<Vec<_>>());
    t.push(
        format!("{method} (mean)"),
        vec![agg(|s| s.mof), agg(|s| s.iou), agg(|s| s.mof_balanced)],
    );
    t
}

pub(crate) fn render_tables(tables: &[Table]) -> String {
    tables.iter().map(Table::render).collect::<Vec<_>>().join("\n")
}
