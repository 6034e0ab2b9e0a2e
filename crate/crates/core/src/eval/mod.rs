//! Image-level AUROC, score histograms and the bank/data ablations.

mod ablation;
mod metrics;

pub use ablation::{
    bank_subsets, run_ablation, score_items, AblationReport, AblationRow, ReducedRow, TestItem, REDUCED_BANKS,
    REDUCED_FRACTIONS,
};
pub use metrics::{auroc, class_iou, label_aurocs, score_histogram, ScoreHistogram, ScoreSelector, ScoredSample};
