//! Per-frame perception output for the four scene objects and its
//! newline-delimited JSON encoding (`frames.jsonl`).

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const NUM_KEYPOINTS: usize = 17;

/// Longest gap, in frames, over which a missing object is carried forward
/// from its last real detection (0.5 s at 50 fps).
pub const CARRY_FORWARD_FRAMES: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Bystander,
    Instructor,
    Patient,
    Drone,
}

impl Role {
    /// Canonical node order used everywhere a role ordering matters.
    pub const ALL: [Role; 4] = [Role::Bystander, Role::Instructor, Role::Patient, Role::Drone];

    pub fn has_keypoints(self) -> bool {
        self != Role::Drone
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Bystander => "bystander",
            Role::Instructor => "instructor",
            Role::Patient => "patient",
            Role::Drone => "drone",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectFeatures {
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<[f64; 2]>>,
    /// Relative disparity at the box center.
    pub depth: f64,
    pub track_id: i64,
}

impl ObjectFeatures {
    pub fn center(&self) -> [f64; 2] {
        [
            (self.bbox[0] + self.bbox[2]) / 2.0,
            (self.bbox[1] + self.bbox[3]) / 2.0,
        ]
    }

    pub fn zero_filled(role: Role) -> Self {
        Self {
            bbox: [0.0; 4],
            keypoints: role.has_keypoints().then(|| vec![[0.0; 2]; NUM_KEYPOINTS]),
            depth: 0.0,
            track_id: -1,
        }
    }

    pub fn validate(&self, role: Role) -> std::result::Result<(), String> {
        let [x1, y1, x2, y2] = self.bbox;
        if !self.bbox.iter().all(|v| v.is_finite()) {
            return Err(format!("{role}: bbox has non-finite coordinates"));
        }
        if !(x1 < x2) {
            return Err(format!("{role}: bbox requires x1 < x2 (got x1={x1}, x2={x2})"));
        }
        if !(y1 < y2) {
            return Err(format!("{role}: bbox requires y1 < y2 (got y1={y1}, y2={y2})"));
        }
        if !self.depth.is_finite() {
            return Err(format!("{role}: depth must be finite"));
        }
        match (&self.keypoints, role.has_keypoints()) {
            (Some(k), true) if k.len() != NUM_KEYPOINTS => Err(format!(
                "{role}: expected {NUM_KEYPOINTS} keypoints, got {}",
                k.len()
            )),
            (Some(k), true) if !k.iter().flatten().all(|v| v.is_finite()) => {
                Err(format!("{role}: keypoints must be finite"))
            }
            (None, true) => Err(format!("{role}: keypoints are required")),
            (Some(_), false) => Err(format!("{role}: keypoints must be absent")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    CarriedForward,
    ZeroFilled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub video_id: String,
    pub frame_idx: u64,
    pub t_ms: f64,
    pub objects: BTreeMap<Role, ObjectFeatures>,
    /// Roles whose features were filled in at load time.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub imputed: BTreeMap<Role, Imputation>,
}

impl FrameFeatures {
    pub fn object(&self, role: Role) -> Result<&ObjectFeatures> {
        self.objects.get(&role).ok_or_else(|| {
            CoreError::invalid(format!(
                "video {} frame {}: missing {role}",
                self.video_id, self.frame_idx
            ))
        })
    }
}

/// Frames of one video, ordered by `frame_idx`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFrames {
    pub video_id: String,
    pub frames: Vec<FrameFeatures>,
}

impl VideoFrames {
    /// Number of frame slots the video spans (`last frame_idx + 1`).
    pub fn span(&self) -> usize {
        self.frames.last().map_or(0, |f| f.frame_idx as usize + 1)
    }
}

/// Groups frames (already sorted by video then frame) into videos.
pub fn split_videos(frames: Vec<FrameFeatures>) -> Vec<VideoFrames> {
    let mut out: Vec<VideoFrames> = Vec::new();
    for f in frames {
        match out.last_mut() {
            Some(v) if v.video_id == f.video_id => v.frames.push(f),
            _ => out.push(VideoFrames {
                video_id: f.video_id.clone(),
                frames: vec![f],
            }),
        }
    }
    out
}

/// Reads and validates `frames.jsonl`, imputing missing objects.
///
/// Within each video, `frame_idx` must strictly increase in file order.
/// Output is sorted by `(video_id, frame_idx)`.
pub fn load_frames(path: &Path) -> Result<Vec<FrameFeatures>> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut last_idx: BTreeMap<String, u64> = BTreeMap::new();
    let mut frames = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| CoreError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let frame: FrameFeatures =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        for (role, obj) in &frame.objects {
            if frame.imputed.get(role) == Some(&Imputation::ZeroFilled) {
                continue;
            }
            obj.validate(*role).map_err(parse_err)?;
        }
        if !frame.t_ms.is_finite() {
            return Err(parse_err("t_ms must be finite".into()));
        }
        if let Some(&prev) = last_idx.get(&frame.video_id) {
            if frame.frame_idx <= prev {
                return Err(parse_err(format!(
                    "video {}: frame_idx {} out of order (previous {prev})",
                    frame.video_id, frame.frame_idx
                )));
            }
        }
        last_idx.insert(frame.video_id.clone(), frame.frame_idx);
        frames.push(frame);
    }
    // stable: keeps per-video file order, which is already increasing
    frames.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    impute_missing(&mut frames);
    Ok(frames)
}

/// Fills absent roles: carry forward the last real detection when it is at
/// most [`CARRY_FORWARD_FRAMES`] old, otherwise zero-fill. Both are flagged.
pub fn impute_missing(frames: &mut [FrameFeatures]) {
    let mut last_seen: BTreeMap<(String, Role), (u64, ObjectFeatures)> = BTreeMap::new();
    for frame in frames.iter_mut() {
        for role in Role::ALL {
            let key = (frame.video_id.clone(), role);
            if frame.objects.contains_key(&role) {
                if !frame.imputed.contains_key(&role) {
                    last_seen.insert(key, (frame.frame_idx, frame.objects[&role].clone()));
                }
                continue;
            }
            let (obj, how) = match last_seen.get(&key) {
                Some((idx, obj)) if frame.frame_idx - idx <= CARRY_FORWARD_FRAMES => {
                    (obj.clone(), Imputation::CarriedForward)
                }
                _ => (ObjectFeatures::zero_filled(role), Imputation::ZeroFilled),
            };
            frame.objects.insert(role, obj);
            frame.imputed.insert(role, how);
        }
    }
}

pub fn write_frames(path: &Path, frames: &[FrameFeatures]) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for f in frames {
        let line = serde_json::to_string(f).map_err(|e| CoreError::invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CoreError::io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Image size used to bring pixel coordinates into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub width: f64,
    pub height: f64,
}

impl Default for FrameGeometry {
    fn default() -> Self {
        Self {
            width: 1920.0,
            height: 1080.0,
        }
    }
}

/// Divides coordinates by the frame size and min-max scales depth over the video.
///
/// Zero-filled objects keep their zeros.
pub fn normalize_video(frames: &[FrameFeatures], geom: FrameGeometry) -> Vec<FrameFeatures> {
    let real = |f: &FrameFeatures, r: &Role| f.imputed.get(r) != Some(&Imputation::ZeroFilled);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for f in frames {
        for (r, o) in &f.objects {
            if real(f, r) {
                lo = lo.min(o.depth);
                hi = hi.max(o.depth);
            }
        }
    }
    let range = hi - lo;
    frames
        .iter()
        .map(|f| {
            let mut f = f.clone();
            let zero: Vec<Role> = f
                .imputed
                .iter()
                .filter(|(_, how)| **how == Imputation::ZeroFilled)
                .map(|(r, _)| *r)
                .collect();
            for (r, o) in f.objects.iter_mut() {
                if zero.contains(r) {
                    continue;
                }
                o.bbox = [
                    o.bbox[0] / geom.width,
                    o.bbox[1] / geom.height,
                    o.bbox[2] / geom.width,
                    o.bbox[3] / geom.height,
                ];
                if let Some(k) = o.keypoints.as_mut() {
                    for p in k.iter_mut() {
                        *p = [p[0] / geom.width, p[1] / geom.height];
                    }
                }
                o.depth = if range > 0.0 { (o.depth - lo) / range } else { 0.0 };
            }
            f
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(role: Role, x: f64) -> ObjectFeatures {
        ObjectFeatures {
            bbox: [x, 10.0, x + 50.0, 110.0],
            keypoints: role.has_keypoints().then(|| vec![[x + 1.0, 20.0]; NUM_KEYPOINTS]),
            depth: 0.5,
            track_id: role.index() as i64 + 1,
        }
    }

    fn frame(video: &str, idx: u64, roles: &[Role]) -> FrameFeatures {
        FrameFeatures {
            video_id: video.into(),
            frame_idx: idx,
            t_ms: idx as f64 * 20.0,
            objects: roles.iter().map(|&r| (r, obj(r, idx as f64))).collect(),
            imputed: BTreeMap::new(),
        }
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_three_records() {
        let lines: Vec<String> = (0..3)
            .map(|i| serde_json::to_string(&frame("v1", i, &Role::ALL)).unwrap())
            .collect();
        let f = write_lines(&lines);
        let frames = load_frames(f.path()).unwrap();
        assert_eq!(frames.len(), 3);
        assert!(frames.iter().all(|f| f.imputed.is_empty()));
    }

    #[test]
    fn rejects_inverted_bbox_with_line_number() {
        let mut bad = frame("v1", 1, &Role::ALL);
        bad.objects.get_mut(&Role::Patient).unwrap().bbox = [60.0, 0.0, 50.0, 10.0];
        let lines = vec![
            serde_json::to_string(&frame("v1", 0, &Role::ALL)).unwrap(),
            serde_json::to_string(&bad).unwrap(),
        ];
        let f = write_lines(&lines);
        let msg = load_frames(f.path()).unwrap_err().to_string();
        assert!(msg.contains(":2:") && msg.contains("x1 < x2"), "{msg}");
    }

    #[test]
    fn rejects_out_of_order_frames() {
        let lines = vec![
            serde_json::to_string(&frame("v1", 5, &Role::ALL)).unwrap(),
            serde_json::to_string(&frame("v1", 3, &Role::ALL)).unwrap(),
        ];
        let f = write_lines(&lines);
        assert!(load_frames(f.path()).unwrap_err().to_string().contains("out of order"));
    }

    #[test]
    fn rejects_drone_keypoints() {
        let mut o = obj(Role::Bystander, 0.0);
        assert!(o.validate(Role::Drone).is_err());
        o.keypoints = None;
        assert!(o.validate(Role::Bystander).is_err());
    }

    #[test]
    fn missing_drone_carried_forward() {
        let humans = [Role::Bystander, Role::Instructor, Role::Patient];
        let lines = vec![
            serde_json::to_string(&frame("v1", 0, &Role::ALL)).unwrap(),
            serde_json::to_string(&frame("v1", 1, &humans)).unwrap(),
        ];
        let f = write_lines(&lines);
        let frames = load_frames(f.path()).unwrap();
        assert_eq!(
            frames[1].imputed.get(&Role::Drone),
            Some(&Imputation::CarriedForward)
        );
        assert_eq!(frames[1].objects[&Role::Drone], frames[0].objects[&Role::Drone]);
    }

    #[test]
    fn stale_detection_is_zero_filled() {
        let humans = [Role::Bystander, Role::Instructor, Role::Patient];
        let mut frames = vec![frame("v1", 0, &Role::ALL), frame("v1", 26, &humans)];
        impute_missing(&mut frames);
        assert_eq!(frames[1].imputed[&Role::Drone], Imputation::ZeroFilled);
        assert_eq!(frames[1].objects[&Role::Drone].bbox, [0.0; 4]);
        // exactly 25 frames old is still carried
        let mut frames = vec![frame("v1", 0, &Role::ALL), frame("v1", 25, &humans)];
        impute_missing(&mut frames);
        assert_eq!(frames[1].imputed[&Role::Drone], Imputation::CarriedForward);
    }

    #[test]
    fn normalization_bounds() {
        let frames = vec![frame("v", 0, &Role::ALL), frame("v", 1, &Role::ALL)];
        let mut frames = frames;
        frames[1].objects.get_mut(&Role::Drone).unwrap().depth = 2.0;
        let n = normalize_video(&frames, FrameGeometry::default());
        assert_eq!(n[1].objects[&Role::Drone].depth, 1.0);
        assert_eq!(n[0].objects[&Role::Drone].depth, 0.0);
        assert_eq!(n[0].objects[&Role::Bystander].bbox[2], 50.0 / 1920.0);
    }
}
