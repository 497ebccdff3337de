//! Stage wiring shared by the command-line tool and the end-to-end tests:
//! frames → graphs → embeddings → feature rows → labeled windows → model →
//! per-frame trajectory → segmentation.

use std::collections::BTreeMap;

use sa_numerics::{RngSeed, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::balance::BalanceMode;
use crate::data::events::VideoEvents;
use crate::data::frames::{normalize_video, split_videos, FrameFeatures, FrameGeometry, VideoFrames};
use crate::data::window::{window_sequences, SequenceSample, SEQ_LEN};
use crate::error::{CoreError, Result};
use crate::evaluation::{balanced_mof, iou, mof};
use crate::graph::{assemble_graph, train_autoencoder, AutoencoderHistory, GcnAutoencoder, GcnConfig, InteractionGraph};
use crate::labels::{curves_for_videos, SaAnnotation, SaCurve, SaLabel};
use crate::model::{
    concat_features, cross_validate, evaluate, predict_curve, train, CvReport, FeatureSet, ModelEvaluation, SaModel,
    SaModelConfig, SaPrediction, TrainHistory,
};
use crate::model::fold_assignment;
use crate::segmentation::{detect_boundaries, gaussian_smooth, match_segments, Segmentation, SmoothingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub features: FeatureSet,
    pub geometry: FrameGeometry,
    pub gcn: GcnConfig,
    pub model: SaModelConfig,
    /// Stride of training windows (window length is `model.seq_len`).
    pub stride: usize,
    /// Use every n-th frame's graph for autoencoder training.
    pub graph_stride: usize,
    pub balance: Option<BalanceMode>,
    pub smoothing: SmoothingConfig,
    pub seed: RngSeed,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            features: FeatureSet::ALL,
            geometry: FrameGeometry::default(),
            gcn: GcnConfig::default(),
            model: SaModelConfig::default(),
            stride: SEQ_LEN,
            graph_stride: 1,
            balance: Some(BalanceMode::Downsample),
            smoothing: SmoothingConfig::default(),
            seed: RngSeed::default(),
        }
    }
}

impl PipelineConfig {
    /// Propagates the master seed and the derived input width into the stage configs.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.gcn.seed = self.seed.derive(10);
        c.model.seed = self.seed.derive(20);
        c.model.input_dim = self.features.dim(self.gcn.embed_dim);
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.graph_stride == 0 {
            return Err(CoreError::Config("strides must be positive".into()));
        }
        if self.features.dim(self.gcn.embed_dim) == 0 {
            return Err(CoreError::Config("at least one feature group is required".into()));
        }
        self.smoothing.validate()?;
        self.resolved().model.validate()
    }
}

/// One video's normalized frames and derived per-frame data.
#[derive(Debug, Clone)]
pub struct PreparedVideo {
    pub video_id: String,
    pub frames: Vec<FrameFeatures>,
    pub graphs: Vec<InteractionGraph>,
}

impl PreparedVideo {
    pub fn frame_idx(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.frame_idx).collect()
    }

    /// Frames spanned, counting from frame 0.
    pub fn len(&self) -> usize {
        self.frames.last().map_or(0, |f| f.frame_idx as usize + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn prepare_videos(frames: Vec<FrameFeatures>, geometry: FrameGeometry) -> Result<Vec<PreparedVideo>> {
    split_videos(frames)
        .into_iter()
        .map(|VideoFrames { video_id, frames }| {
            let frames = normalize_video(&frames, geometry);
            let graphs = frames.iter().map(assemble_graph).collect::<Result<Vec<_>>>()?;
            Ok(PreparedVideo {
                video_id,
                frames,
                graphs,
            })
        })
        .collect()
}

pub fn train_graph_encoder(
    videos: &[PreparedVideo],
    config: &PipelineConfig,
) -> Result<(GcnAutoencoder, AutoencoderHistory)> {
    let graphs: Vec<InteractionGraph> = videos
        .iter()
        .flat_map(|v| v.graphs.iter().step_by(config.graph_stride).cloned())
        .collect();
    train_autoencoder(&graphs, config.resolved().gcn)
}

/// Per-frame classifier inputs of one video.
pub fn feature_rows(video: &PreparedVideo, encoder: &GcnAutoencoder, features: FeatureSet) -> Result<Vec<Vec<f64>>> {
    let g = encoder.config.embed_dim;
    let embeddings = if features.graph {
        encoder.embed_all(&video.graphs)?
    } else {
        vec![Vec::new(); video.graphs.len()]
    };
    video
        .frames
        .iter()
        .zip(&embeddings)
        .map(|(f, e)| concat_features(f, e, features, g))
        .collect()
}

/// Labels of each loaded frame, looked up by `frame_idx` on the video's curve.
pub fn frame_labels(video: &PreparedVideo, curve: &SaCurve) -> Result<Vec<SaLabel>> {
    video
        .frames
        .iter()
        .map(|f| {
            curve
                .values
                .get(f.frame_idx as usize)
                .map(|v| SaLabel::from_values(*v))
                .ok_or_else(|| {
                    CoreError::invalid(format!("frame {} of {} lies beyond its SA curve", f.frame_idx, video.video_id))
                })
        })
        .collect()
}

/// Labeled windows of one video; each takes the label of its last frame.
pub fn sequence_samples(
    video: &PreparedVideo,
    rows: &[Vec<f64>],
    labels: &[SaLabel],
    length: usize,
    stride: usize,
) -> Result<Vec<SequenceSample>> {
    let width = rows.first().map_or(0, Vec::len);
    window_sequences(&video.frames, length, stride)?
        .into_iter()
        .map(|w| {
            let data: Vec<f64> = rows[w.start..w.start + w.len].concat();
            let label = labels[w.last()];
            Ok(SequenceSample {
                video_id: w.video_id,
                start_frame: w.start_frame,
                features: Tensor::new(vec![w.len, width], data)?,
                target_binary: label.binary,
                target_ternary: label.ternary,
            })
        })
        .collect()
}

pub fn video_lengths(videos: &[PreparedVideo]) -> BTreeMap<String, usize> {
    videos.iter().map(|v| (v.video_id.clone(), v.len())).collect()
}

pub fn boundary_map(events: &[VideoEvents]) -> BTreeMap<String, Vec<usize>> {
    events.iter().map(|e| (e.video_id.clone(), e.boundaries.clone())).collect()
}

/// Event names across all videos in sorted order; a name's position is its class.
pub fn event_vocabulary(events: &[VideoEvents]) -> Vec<String> {
    let set: std::collections::BTreeSet<&String> = events.iter().flat_map(|e| &e.names).collect();
    set.into_iter().cloned().collect()
}

#[derive(Debug, Clone)]
pub struct LabeledData {
    pub rows: BTreeMap<String, Vec<Vec<f64>>>,
    pub labels: BTreeMap<String, Vec<SaLabel>>,
    pub curves: BTreeMap<String, SaCurve>,
    pub samples: Vec<SequenceSample>,
}

pub fn build_labeled_data(
    videos: &[PreparedVideo],
    encoder: &GcnAutoencoder,
    ratings: &[SaAnnotation],
    events: &[VideoEvents],
    config: &PipelineConfig,
) -> Result<LabeledData> {
    let curves = curves_for_videos(ratings, &boundary_map(events), &video_lengths(videos))?;
    let mut data = LabeledData {
        rows: BTreeMap::new(),
        labels: BTreeMap::new(),
        curves,
        samples: Vec::new(),
    };
    for v in videos {
        let rows = feature_rows(v, encoder, config.features)?;
        let labels = frame_labels(v, &data.curves[&v.video_id])?;
        data.samples
            .extend(sequence_samples(v, &rows, &labels, config.model.seq_len, config.stride)?);
        data.rows.insert(v.video_id.clone(), rows);
        data.labels.insert(v.video_id.clone(), labels);
    }
    Ok(data)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub autoencoder_history: AutoencoderHistory,
    pub cv: Option<CvReport>,
    pub final_history: TrainHistory,
    pub final_train: ModelEvaluation,
    pub final_validation: Option<ModelEvaluation>,
    pub test: Option<ModelEvaluation>,
    pub num_sequences: usize,
}

pub struct TrainedPipeline {
    pub encoder: GcnAutoencoder,
    pub model: SaModel,
    pub outcome: TrainOutcome,
}

/// Full training: autoencoder, then (optionally) cross-validation, then a final
/// model fitted on a seeded `(k-1)/k` split whose other part drives early stopping.
///
/// Sequences of `test_videos` are held out from both and evaluated at the end.
pub fn train_pipeline(
    frames: Vec<FrameFeatures>,
    ratings: &[SaAnnotation],
    events: &[VideoEvents],
    config: &PipelineConfig,
    test_videos: &[String],
    run_cv: bool,
) -> Result<TrainedPipeline> {
    config.validate()?;
    let cfg = config.resolved();
    let videos = prepare_videos(frames, cfg.geometry)?;
    if let Some(missing) = test_videos.iter().find(|t| !videos.iter().any(|v| &&v.video_id == t)) {
        return Err(CoreError::invalid(format!("test video `{missing}` not found in frames")));
    }
    let (encoder, autoencoder_history) = train_graph_encoder(&videos, &cfg)?;
    let data = build_labeled_data(&videos, &encoder, ratings, events, &cfg)?;
    let (test, pool): (Vec<SequenceSample>, Vec<SequenceSample>) =
        data.samples.into_iter().partition(|s| test_videos.contains(&s.video_id));
    if pool.is_empty() {
        return Err(CoreError::invalid("no training sequences (videos shorter than one window?)"));
    }

    let cv = if run_cv {
        Some(cross_validate(&pool, &cfg.model, cfg.balance)?)
    } else {
        None
    };

    let folds = cfg.model.folds.max(2).min(pool.len());
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    if folds >= 2 && pool.len() >= 2 {
        let assignment = fold_assignment(pool.len(), folds, cfg.model.seed.derive(4))?;
        for (s, f) in pool.iter().zip(assignment) {
            if f == 0 { va.push(s.clone()) } else { tr.push(s.clone()) }
        }
    } else {
        tr = pool.clone();
    }
    if let Some(mode) = cfg.balance {
        tr = crate::model::train::balance_training(&tr, mode, cfg.model.seed.derive(5))?;
    }
    let (model, final_history) = train(SaModel::new(cfg.model.clone())?, &tr, &va)?;
    let final_train = evaluate(&model, &tr)?;
    let final_validation = if va.is_empty() { None } else { Some(evaluate(&model, &va)?) };
    let test_eval = if test.is_empty() { None } else { Some(evaluate(&model, &test)?) };
    Ok(TrainedPipeline {
        encoder,
        model,
        outcome: TrainOutcome {
            autoencoder_history,
            cv,
            final_history,
            final_train,
            final_validation,
            test: test_eval,
            num_sequences: pool.len() + test.len(),
        },
    })
}

/// Smoothing, boundary detection and (with ground truth) matching for one video.
#[derive(Debug, Clone, Serialize)]
pub struct VideoSegmentation {
    pub video_id: String,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub predicted: Segmentation,
    /// Per-frame event class after matching, when ground truth is known.
    pub matched: Option<Vec<usize>>,
    pub truth: Option<Vec<usize>>,
    pub mof: Option<f64>,
    pub mof_balanced: Option<f64>,
    pub iou: Option<f64>,
}

/// Segments a per-frame class trajectory; `truth` is the video's event list
/// plus the shared event vocabulary.
pub fn segment_trajectory(
    video_id: &str,
    trajectory: &[f64],
    smoothing: &SmoothingConfig,
    truth: Option<(&VideoEvents, &[String])>,
) -> Result<VideoSegmentation> {
    let smoothed = gaussian_smooth(trajectory, smoothing)?;
    let predicted = detect_boundaries(&smoothed, smoothing)?;
    let mut out = VideoSegmentation {
        video_id: video_id.to_string(),
        raw: trajectory.to_vec(),
        smoothed,
        predicted,
        matched: None,
        truth: None,
        mof: None,
        mof_balanced: None,
        iou: None,
    };
    if let Some((events, vocab)) = truth {
        let class = |name: &String| vocab.iter().position(|n| n == name).expect("name in vocabulary");
        let truth_seg = Segmentation::new(events.boundaries.clone(), trajectory.len())?;
        let truth_labels: Vec<usize> = events.names.iter().map(class).collect();
        let matched = match_segments(&out.predicted, &truth_seg, &truth_labels)?;
        let truth_frames = truth_seg.expand(&truth_labels);
        out.mof = Some(mof(&truth_frames, &matched)?);
        out.mof_balanced = Some(balanced_mof(&truth_frames, &matched)?);
        out.iou = Some(iou(&truth_frames, &matched)?);
        out.matched = Some(matched);
        out.truth = Some(truth_frames);
    }
    Ok(out)
}

/// Per-frame ternary trajectory predicted by the model for a prepared video.
///
/// Videos with gaps in `frame_idx` are expanded to every frame by holding the
/// last prediction.
pub fn predicted_trajectory(model: &SaModel, video: &PreparedVideo, rows: &[Vec<f64>]) -> Result<(Vec<SaPrediction>, Vec<f64>)> {
    let preds = predict_curve(model, rows)?;
    let mut traj = vec![0.0; video.len()];
    let mut last = f64::from(preds[0].class());
    let mut k = 0;
    for (t, slot) in traj.iter_mut().enumerate() {
        while k < video.frames.len() && video.frames[k].frame_idx as usize <= t {
            last = f64::from(preds[k].class());
            k += 1;
        }
        *slot = last;
    }
    Ok((preds, traj))
}

/// Ground-truth ternary trajectory of a curve.
pub fn label_trajectory(curve: &SaCurve) -> Vec<f64> {
    curve.labels().iter().map(|l| f64::from(l.ternary)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_scenario, EventScript, SaRamp, ScenarioScript, VideoScript};
    use sa_numerics::RngSeed;

    #[test]
    fn two_event_ground_truth_gives_two_segments() {
        let ev = |name: &str| EventScript {
            name: name.into(),
            duration_frames: 100,
            ramp: SaRamp {
                rise_frames: 100,
                peak: [5.0; 3],
            },
        };
        let script = ScenarioScript {
            fps: 50.0,
            frame: FrameGeometry::default(),
            position_noise: 0.0,
            rating_noise: 0.0,
            raters: 2,
            seed: RngSeed(3),
            videos: vec![VideoScript {
                video_id: "v".into(),
                events: vec![ev("a"), ev("b")],
            }],
        };
        let s = generate_scenario(&script).unwrap();
        let traj = label_trajectory(&s.curves["v"]);
        let seg = segment_trajectory("v", &traj, &SmoothingConfig::default(), None).unwrap();
        assert_eq!(seg.predicted.boundaries.len(), 2);
        assert!(seg.predicted.boundaries[1].abs_diff(100) <= 13, "{:?}", seg.predicted.boundaries);
    }
}
