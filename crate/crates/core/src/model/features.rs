use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::frames::{FrameFeatures, Role, NUM_KEYPOINTS};
use crate::error::{CoreError, Result};

/// Which per-frame feature groups feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub bbox: bool,
    pub pose: bool,
    pub graph: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet {
        bbox: true,
        pose: true,
        graph: true,
    };

    /// Every non-empty combination, in ablation-table order.
    pub fn combinations() -> Vec<FeatureSet> {
        let b = |bbox, pose, graph| FeatureSet { bbox, pose, graph };
        vec![
            b(true, false, false),
            b(false, true, false),
            b(false, false, true),
            b(true, true, false),
            b(true, false, true),
            b(false, true, true),
            b(true, true, true),
        ]
    }

    pub fn dim(&self, embed_dim: usize) -> usize {
        usize::from(self.bbox) * 4
            + usize::from(self.pose) * 2 * NUM_KEYPOINTS
            + usize::from(self.graph) * crate::graph::NUM_NODES * embed_dim
    }

    /// Row label for ablation tables, e.g. `Bbox + Graph`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.bbox {
            parts.push("Bbox");
        }
        if self.pose {
            parts.push("Pose");
        }
        if self.graph {
            parts.push("Graph");
        }
        parts.join(" + ")
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.bbox {
            parts.push("bbox");
        }
        if self.pose {
            parts.push("pose");
        }
        if self.graph {
            parts.push("graph");
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for FeatureSet {
    type Err = CoreError;

    /// Parses `bbox`, `pose`, `graph` joined by `+` (or `all`).
    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Self::ALL);
        }
        let mut set = FeatureSet {
            bbox: false,
            pose: false,
            graph: false,
        };
        for part in s.split('+').map(str::trim) {
            let slot = match part {
                "bbox" => &mut set.bbox,
                "pose" => &mut set.pose,
                "graph" => &mut set.graph,
                other => {
                    return Err(CoreError::Config(format!(
                        "unknown feature group `{other}` (expected bbox, pose, graph)"
                    )))
                }
            };
            if *slot {
                return Err(CoreError::Config(format!("feature group `{part}` listed twice")));
            }
            *slot = true;
        }
        Ok(set)
    }
}

/// `[bbox (4) | keypoints (34) | embedding (4g)]` of the bystander, restricted to `set`.
pub fn concat_features(frame: &FrameFeatures, embedding: &[f64], set: FeatureSet, embed_dim: usize) -> Result<Vec<f64>> {
    let expected = crate::graph::NUM_NODES * embed_dim;
    if set.graph && embedding.len() != expected {
        return Err(CoreError::invalid(format!(
            "embedding of length {} for frame {} of {}, expected {expected}",
            embedding.len(),
            frame.frame_idx,
            frame.video_id
        )));
    }
    let by = frame.object(Role::Bystander)?;
    let mut x = Vec::with_capacity(set.dim(embed_dim));
    if set.bbox {
        x.extend_from_slice(&by.bbox);
    }
    if set.pose {
        match &by.keypoints {
            Some(kp) => x.extend(kp.iter().flatten()),
            None => x.extend(std::iter::repeat(0.0).take(2 * NUM_KEYPOINTS)),
        }
    }
    if set.graph {
        x.extend_from_slice(embedding);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_dims() {
        assert_eq!(FeatureSet::ALL.dim(8), 70);
        let b: FeatureSet = "bbox".parse().unwrap();
        assert_eq!(b.dim(8), 4);
        assert_eq!("bbox+pose".parse::<FeatureSet>().unwrap().dim(8), 38);
        assert_eq!("all".parse::<FeatureSet>().unwrap(), FeatureSet::ALL);
        assert!("bbox+bbox".parse::<FeatureSet>().is_err());
        assert!("depth".parse::<FeatureSet>().is_err());
        assert_eq!(FeatureSet::ALL.to_string(), "bbox+pose+graph");
        assert_eq!("pose+graph".parse::<FeatureSet>().unwrap().label(), "Pose + Graph");
        assert_eq!(FeatureSet::combinations().len(), 7);
    }
}
