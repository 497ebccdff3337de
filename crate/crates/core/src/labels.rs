//! Expert clip ratings to per-frame SA curves and discrete targets.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::events::csv_err;
use crate::error::{CoreError, Result};

pub const CLIPS_PER_VIDEO: usize = 10;
pub const HIGH_SA_THRESHOLD: f64 = 3.0;
pub const NUM_TERNARY_CLASSES: usize = 3;

/// One rater's scores for one clip. Ratings refer to the clip's final frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaAnnotation {
    pub video_id: String,
    pub clip_idx: usize,
    pub rater_id: String,
    pub perception: u8,
    pub comprehension: u8,
    pub projection: u8,
}

impl SaAnnotation {
    pub fn scores(&self) -> [u8; 3] {
        [self.perception, self.comprehension, self.projection]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.clip_idx >= CLIPS_PER_VIDEO {
            return Err(format!("clip_idx {} must be < {CLIPS_PER_VIDEO}", self.clip_idx));
        }
        if let Some(r) = self.scores().iter().find(|r| !(1..=5).contains(*r)) {
            return Err(format!("rating {r} outside [1, 5]"));
        }
        Ok(())
    }
}

pub fn read_ratings(path: &Path) -> Result<Vec<SaAnnotation>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SaAnnotation>().enumerate() {
        let parse = |msg: String| CoreError::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg,
        };
        let a = rec.map_err(|e| parse(e.to_string()))?;
        a.validate().map_err(parse)?;
        out.push(a);
    }
    Ok(out)
}

pub fn write_ratings(path: &Path, ratings: &[SaAnnotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in ratings {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Last frame of clip `clip_idx` when a video of `video_len` frames is cut
/// into ten equal clips.
pub fn clip_final_frame(clip_idx: usize, video_len: usize) -> usize {
    ((clip_idx + 1) * video_len / CLIPS_PER_VIDEO).saturating_sub(1)
}

/// A rated point on the curve: rater-averaged (Per, Com, Pro) at `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub frame: usize,
    pub value: [f64; 3],
}

/// Averages all raters of each clip of one video into anchors, ordered by frame.
pub fn average_raters(annotations: &[SaAnnotation], video_len: usize) -> Result<Vec<Anchor>> {
    let mut sums: BTreeMap<usize, ([f64; 3], usize)> = BTreeMap::new();
    for a in annotations {
        a.validate().map_err(CoreError::Invalid)?;
        let e = sums.entry(a.clip_idx).or_insert(([0.0; 3], 0));
        for (s, r) in e.0.iter_mut().zip(a.scores()) {
            *s += f64::from(r);
        }
        e.1 += 1;
    }
    let anchors: Vec<Anchor> = sums
        .into_iter()
        .map(|(clip, (s, n))| Anchor {
            frame: clip_final_frame(clip, video_len),
            value: s.map(|v| v / n as f64),
        })
        .collect();
    for pair in anchors.windows(2) {
        if pair[0].frame == pair[1].frame {
            return Err(CoreError::invalid(format!(
                "two clips end at frame {} (video of {video_len} frames is too short)",
                pair[0].frame
            )));
        }
    }
    Ok(anchors)
}

/// Per-frame (Per, Com, Pro) values of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SaCurve {
    pub values: Vec<[f64; 3]>,
}

impl SaCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn labels(&self) -> Vec<SaLabel> {
        self.values.iter().map(|v| SaLabel::from_values(*v)).collect()
    }
}

/// Builds the continuous SA curve of one video.
///
/// Every event starts at 0 (frame 0 counts as an event start). Inside an
/// event the curve is piecewise linear through the rated anchors that fall
/// in it and holds the last anchor's value until the next event starts.
/// A boundary and a clip end on the same frame resolve to the boundary.
pub fn build_curve(anchors: &[Anchor], boundaries: &[usize], video_len: usize) -> Result<SaCurve> {
    if anchors.is_empty() {
        return Err(CoreError::invalid("at least one rated clip is required"));
    }
    if let Some(b) = boundaries.iter().find(|&&b| b >= video_len) {
        return Err(CoreError::invalid(format!(
            "boundary {b} outside video of {video_len} frames"
        )));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::invalid("boundaries must be strictly ascending"));
    }
    if let Some(a) = anchors.iter().find(|a| a.frame >= video_len) {
        return Err(CoreError::invalid(format!(
            "anchor at frame {} outside video of {video_len} frames",
            a.frame
        )));
    }
    if anchors.windows(2).any(|w| w[0].frame >= w[1].frame) {
        return Err(CoreError::invalid("duplicate or unsorted anchor frames"));
    }

    let mut starts: Vec<usize> = boundaries.to_vec();
    if starts.first() != Some(&0) {
        starts.insert(0, 0);
    }
    let mut values = vec![[0.0; 3]; video_len];
    for (k, &start) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(video_len);
        let mut prev = Anchor {
            frame: start,
            value: [0.0; 3],
        };
        for a in anchors.iter().filter(|a| a.frame > start && a.frame < end) {
            for f in prev.frame..=a.frame {
                let t = (f - prev.frame) as f64 / (a.frame - prev.frame) as f64;
                values[f] = lerp(prev.value, a.value, t);
            }
            prev = *a;
        }
        for v in &mut values[prev.frame..end] {
            *v = prev.value;
        }
    }
    Ok(SaCurve { values })
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|i| if t == 1.0 { b[i] } else { a[i] + (b[i] - a[i]) * t })
}

pub fn binarize(value: f64) -> u8 {
    u8::from(value >= HIGH_SA_THRESHOLD)
}

/// Length of the all-high prefix of `[Per, Com, Pro]` and the class it maps to.
pub fn accumulate_ternary(bits: [u8; 3]) -> (u8, u8) {
    let acc = bits.iter().take_while(|&&b| b == 1).count() as u8;
    (acc, acc.min(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaLabel {
    pub binary: [u8; 3],
    pub accumulated: u8,
    pub ternary: u8,
}

impl SaLabel {
    pub fn from_values(v: [f64; 3]) -> Self {
        let binary = v.map(binarize);
        let (accumulated, ternary) = accumulate_ternary(binary);
        Self {
            binary,
            accumulated,
            ternary,
        }
    }
}

#[derive(Serialize)]
struct LabelRecord<'a> {
    video_id: &'a str,
    frame_idx: usize,
    per: f64,
    com: f64,
    pro: f64,
    bin: [u8; 3],
    acc: u8,
    cls: u8,
}

/// Writes `labels.jsonl` for a set of `(video_id, curve)` pairs.
pub fn write_labels(path: &Path, curves: &[(String, SaCurve)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (video_id, curve) in curves {
        for (frame_idx, v) in curve.values.iter().enumerate() {
            let l = SaLabel::from_values(*v);
            let rec = LabelRecord {
                video_id,
                frame_idx,
                per: v[0],
                com: v[1],
                pro: v[2],
                bin: l.binary,
                acc: l.accumulated,
                cls: l.ternary,
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| CoreError::io(path, e.into()))?;
            w.write_all(b"\n").map_err(|e| CoreError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Curves for every video that has ratings, keyed by video id.
pub fn curves_for_videos(
    ratings: &[SaAnnotation],
    boundaries: &BTreeMap<String, Vec<usize>>,
    video_lens: &BTreeMap<String, usize>,
) -> Result<BTreeMap<String, SaCurve>> {
    let mut out = BTreeMap::new();
    for (video_id, &len) in video_lens {
        let rows: Vec<SaAnnotation> = ratings
            .iter()
            .filter(|r| &r.video_id == video_id)
            .cloned()
            .collect();
        if rows.is_empty() {
            return Err(CoreError::invalid(format!("video {video_id} has no ratings")));
        }
        let anchors = average_raters(&rows, len)?;
        let b = boundaries.get(video_id).map_or(&[][..], Vec::as_slice);
        let curve = build_curve(&anchors, b, len)
            .map_err(|e| CoreError::invalid(format!("video {video_id}: {e}")))?;
        out.insert(video_id.clone(), curve);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor(frame: usize, v: f64) -> Anchor {
        Anchor {
            frame,
            value: [v; 3],
        }
    }

    #[test]
    fn midpoint_between_anchors() {
        let c = build_curve(&[anchor(1500, 1.0), anchor(3000, 5.0)], &[0], 3001).unwrap();
        assert_eq!(c.values[2250], [3.0; 3]);
        assert_eq!(c.values[1500], [1.0; 3]);
        assert_eq!(c.values[3000], [5.0; 3]);
    }

    #[test]
    fn boundary_resets_to_zero() {
        let c = build_curve(&[anchor(99, 4.0), anchor(199, 5.0)], &[0, 120], 200).unwrap();
        assert_eq!(c.values[120], [0.0; 3]);
        assert_eq!(c.values[0], [0.0; 3]);
        // between 99 and the next boundary the last rating holds
        assert_eq!(c.values[110], [4.0; 3]);
    }

    #[test]
    fn single_anchor_ramp() {
        let c = build_curve(&[anchor(100, 4.0)], &[0], 101).unwrap();
        for f in 0..=100 {
            assert!((c.values[f][0] - 4.0 * f as f64 / 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_wins_over_clip_end() {
        let c = build_curve(&[anchor(50, 4.0), anchor(99, 5.0)], &[0, 50], 100).unwrap();
        assert_eq!(c.values[50], [0.0; 3]);
        assert_eq!(c.values[99], [5.0; 3]);
    }

    #[test]
    fn curve_errors() {
        assert!(build_curve(&[], &[0], 10).is_err());
        assert!(build_curve(&[anchor(5, 1.0)], &[0, 10], 10).is_err());
        assert!(build_curve(&[anchor(5, 1.0), anchor(5, 2.0)], &[0], 10).is_err());
    }

    #[test]
    fn clip_ends() {
        assert_eq!(clip_final_frame(0, 1000), 99);
        assert_eq!(clip_final_frame(9, 1000), 999);
        assert_eq!(clip_final_frame(2, 1005), 300);
    }

    #[test]
    fn raters_averaged() {
        let r = |rater: &str, p: u8| SaAnnotation {
            video_id: "v".into(),
            clip_idx: 0,
            rater_id: rater.into(),
            perception: p,
            comprehension: 2,
            projection: 1,
        };
        let a = average_raters(&[r("a", 3), r("b", 4)], 100).unwrap();
        assert_eq!(a, vec![Anchor { frame: 9, value: [3.5, 2.0, 1.0] }]);
        assert!(average_raters(&[r("a", 6)], 100).is_err());
        let tiny = SaAnnotation { clip_idx: 1, ..r("a", 3) };
        assert!(average_raters(&[r("a", 3), tiny], 5).is_err());
    }

    #[test]
    fn threshold_and_accumulation() {
        assert_eq!(binarize(3.0), 1);
        assert_eq!(binarize(2.999), 0);
        assert_eq!(binarize(0.0), 0);
        assert_eq!(accumulate_ternary([0, 1, 1]), (0, 0));
        assert_eq!(accumulate_ternary([1, 1, 1]), (3, 2));
        assert_eq!(accumulate_ternary([1, 0, 1]), (1, 1));
        assert_eq!(accumulate_ternary([1, 1, 0]), (2, 2));
    }

    #[test]
    fn ratings_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ratings.csv");
        let rows = vec![SaAnnotation {
            video_id: "v".into(),
            clip_idx: 3,
            rater_id: "r1".into(),
            perception: 5,
            comprehension: 4,
            projection: 1,
        }];
        write_ratings(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("video_id,clip_idx,rater_id,perception,comprehension,projection\n"));
        assert_eq!(read_ratings(&p).unwrap(), rows);
        std::fs::write(&p, "video_id,clip_idx,rater_id,perception,comprehension,projection\nv,10,r,1,1,1\n")
            .unwrap();
        assert!(read_ratings(&p).unwrap_err().to_string().contains(":2:"));
    }

    #[test]
    fn labels_jsonl_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        let curve = SaCurve {
            values: vec![[0.0; 3], [3.0, 3.5, 1.0]],
        };
        write_labels(&p, &[("v".into(), curve)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let second: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(second["bin"], serde_json::json!([1, 1, 0]));
        assert_eq!(second["acc"], 2);
        assert_eq!(second["cls"], 2);
        assert_eq!(second["frame_idx"], 1);
    }
}
