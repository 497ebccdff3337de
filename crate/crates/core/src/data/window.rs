use log::warn;
use sa_numerics::Tensor;

use crate::data::frames::FrameFeatures;
use crate::error::{CoreError, Result};

pub const SEQ_LEN: usize = 15;

/// A run of `len` consecutive frames of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub video_id: String,
    /// Position of the first frame within the video's frame list.
    pub start: usize,
    pub start_frame: u64,
    pub len: usize,
}

impl Window {
    pub fn last(&self) -> usize {
        self.start + self.len - 1
    }
}

/// A windowed model input with the labels of its last frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub video_id: String,
    pub start_frame: u64,
    /// `[seq_len, f_total]`.
    pub features: Tensor,
    pub target_binary: [u8; 3],
    pub target_ternary: u8,
}

/// Cuts each video into windows of `length` frames every `stride` frames.
///
/// Windows never cross a change of `video_id`; a trailing remainder shorter
/// than `length` is dropped.
pub fn window_sequences(frames: &[FrameFeatures], length: usize, stride: usize) -> Result<Vec<Window>> {
    if length == 0 || stride == 0 {
        return Err(CoreError::Config(format!(
            "window length and stride must be positive (got {length}, {stride})"
        )));
    }
    let mut out = Vec::new();
    let mut begin = 0;
    while begin < frames.len() {
        let id = &frames[begin].video_id;
        let end = frames[begin..]
            .iter()
            .position(|f| &f.video_id != id)
            .map_or(frames.len(), |p| begin + p);
        let n = end - begin;
        if n < length {
            warn!("video {id}: {n} frames is shorter than the window length {length}; no windows");
        }
        let mut s = 0;
        while s + length <= n {
            out.push(Window {
                video_id: id.clone(),
                start: s,
                start_frame: frames[begin + s].frame_idx,
                len: length,
            });
            s += stride;
        }
        begin = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn frames(video: &str, n: usize) -> Vec<FrameFeatures> {
        (0..n)
            .map(|i| FrameFeatures {
                video_id: video.into(),
                frame_idx: i as u64,
                t_ms: 0.0,
                objects: BTreeMap::new(),
                imputed: BTreeMap::new(),
            })
            .collect()
    }

    #[test]
    fn counts() {
        assert_eq!(window_sequences(&frames("a", 45), 15, 15).unwrap().len(), 3);
        assert_eq!(window_sequences(&frames("a", 14), 15, 15).unwrap().len(), 0);
        let w = window_sequences(&frames("a", 16), 15, 15).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].start, w[0].last()), (0, 14));
    }

    #[test]
    fn never_spans_videos() {
        let mut f = frames("a", 20);
        f.extend(frames("b", 20));
        let w = window_sequences(&f, 15, 15).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].video_id, "b");
        assert_eq!(w[1].start, 0);
    }

    #[test]
    fn stride_one_overlaps() {
        assert_eq!(window_sequences(&frames("a", 20), 15, 1).unwrap().len(), 6);
        assert!(window_sequences(&frames("a", 20), 0, 1).is_err());
    }
}
