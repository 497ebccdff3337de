use std::io::Write;

use serde::Serialize;
use sa_numerics::Tensor;

use super::network::{HeadKind, SaModel, OUTPUTS};
use crate::error::{CoreError, Result};
use crate::labels::accumulate_ternary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaPrediction {
    pub head: HeadKind,
    /// Per-level sigmoids (binary) or a class distribution (ternary).
    pub probs: [f64; 3],
}

impl SaPrediction {
    /// Ternary class: argmax with ties to the lower class, or the prefix rule
    /// applied to thresholded bits for the binary head.
    pub fn class(&self) -> u8 {
        match self.head {
            HeadKind::Ternary => {
                let mut best = 0;
                for c in 1..OUTPUTS {
                    if self.probs[c] > self.probs[best] {
                        best = c;
                    }
                }
                best as u8
            }
            HeadKind::Binary => accumulate_ternary(self.probs.map(|p| u8::from(p >= 0.5))).1,
        }
    }
}

/// One prediction per frame from stride-1 windows over `features`.
///
/// Frame `t ≥ seq_len - 1` gets the window ending at `t`; earlier frames
/// repeat the first window's prediction.
pub fn predict_curve(model: &SaModel, features: &[Vec<f64>]) -> Result<Vec<SaPrediction>> {
    let (l, f) = (model.config.seq_len, model.config.input_dim);
    if features.len() < l {
        return Err(CoreError::invalid(format!(
            "video of {} frames is shorter than the {l}-frame window",
            features.len()
        )));
    }
    if let Some(row) = features.iter().find(|r| r.len() != f) {
        return Err(CoreError::invalid(format!(
            "feature row of length {}, model expects {f}",
            row.len()
        )));
    }
    let flat: Vec<f64> = features.concat();
    let windows = features.len() - l + 1;
    let mut out = Vec::with_capacity(features.len());
    const CHUNK: usize = 256;
    for start in (0..windows).step_by(CHUNK) {
        let b = CHUNK.min(windows - start);
        let mut x = Vec::with_capacity(b * l * f);
        for w in start..start + b {
            x.extend_from_slice(&flat[w * f..(w + l) * f]);
        }
        let p = model.predict_batch(&Tensor::new(vec![b, l, f], x)?)?;
        out.extend(p.data().chunks(OUTPUTS).map(|r| SaPrediction {
            head: model.config.head,
            probs: [r[0], r[1], r[2]],
        }));
    }
    let first = out[0];
    let mut curve = vec![first; l - 1];
    curve.extend(out);
    Ok(curve)
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    video_id: &'a str,
    frame_idx: u64,
    cls: u8,
    probs: [f64; 3],
}

/// Appends `predictions.jsonl` rows for one video.
pub fn write_predictions<W: Write>(
    out: &mut W,
    video_id: &str,
    frame_idx: &[u64],
    predictions: &[SaPrediction],
) -> std::io::Result<()> {
    for (&f, p) in frame_idx.iter().zip(predictions) {
        let rec = PredictionRecord {
            video_id,
            frame_idx: f,
            cls: p.class(),
            probs: p.probs,
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
