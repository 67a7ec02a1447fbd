//! Segmentation metrics, banded evaluation reports and the ablation runner.

mod metrics;
mod report;

pub use metrics::{
    accuracy_from_counts, binary_miou, confusion_counts, iou, miou, obstacle_regions, pixel_accuracy,
    swap_classes, ConfusionCounts, Region, NON_RAILWAY, RAILWAY,
};
pub use report::{
    evaluate_bands, flow_heatmap, overlay, run_ablation, timestamp_now, AblationReport, AblationRow, Band,
    BandMetrics, EvalOptions, EvalReport, PerClassIou, AVERAGING, DEFAULT_THRESHOLD,
};

#[cfg(test)]
mod tests;
