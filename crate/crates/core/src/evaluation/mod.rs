pub mod metrics;
pub mod report;

pub use metrics::{
    balanced_mof, classification_metrics, iou, iou_ignoring, mof, ClassificationReport, ConfusionMatrix,
};
pub use report::{Cell, Table};
