//! Transformer SA classifier: features, network, training and inference.

mod features;
mod network;
mod predict;
pub(crate) mod train;

pub use features::{concat_features, FeatureSet};
pub use network::{HeadKind, SaModel, SaModelConfig};
pub use predict::{predict_curve, write_predictions, SaPrediction};
pub use train::{
    cross_validate, evaluate, fold_assignment, train, CvReport, EarlyStopping, FoldResult, ModelEvaluation,
    StopDecision, TrainHistory,
};
