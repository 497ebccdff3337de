//! Event-boundary ground truth (`events.csv`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub video_id: String,
    pub boundary_frame: usize,
    pub event_name: String,
}

/// Event starts of one video; `boundaries[i]` opens the event `names[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoEvents {
    pub video_id: String,
    pub boundaries: Vec<usize>,
    pub names: Vec<String>,
}

pub fn read_events(path: &Path) -> Result<Vec<VideoEvents>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: Vec<VideoEvents> = Vec::new();
    for (i, rec) in rdr.deserialize::<EventRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| CoreError::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        match out.iter_mut().find(|v| v.video_id == row.video_id) {
            Some(v) => {
                if row.boundary_frame <= *v.boundaries.last().unwrap() {
                    return Err(CoreError::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!(
                            "video {}: boundaries must be strictly ascending",
                            row.video_id
                        ),
                    });
                }
                v.boundaries.push(row.boundary_frame);
                v.names.push(row.event_name);
            }
            None => out.push(VideoEvents {
                video_id: row.video_id,
                boundaries: vec![row.boundary_frame],
                names: vec![row.event_name],
            }),
        }
    }
    out.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(out)
}

pub fn write_events(path: &Path, events: &[VideoEvents]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for v in events {
        for (b, n) in v.boundaries.iter().zip(&v.names) {
            w.serialize(EventRow {
                video_id: v.video_id.clone(),
                boundary_frame: *b,
                event_name: n.clone(),
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> CoreError {
    CoreError::Parse {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line() as usize),
        msg: e.to_string(),
    }
}
