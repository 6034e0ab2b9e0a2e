//! Few-shot part segmentation: a pixel classifier over fixed features and
//! coordinates, trained with Dice + CE on labeled images and entropy +
//! histogram matching on unlabeled ones.

mod checkpoint;
mod classifier;
pub mod losses;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path};
pub use classifier::{predict, ForwardCache, PixelClassifier, CLASSIFIER_MAGIC};
pub use losses::{ce_loss, dice_loss, entropy_loss, hist_loss, LossGrad};
pub use train::{
    assign_product_type, augment, total_loss, train, train_with_progress, BatchItem, LabeledSample, LossBreakdown,
    LossWeights, TrainConfig, UnlabeledSample,
};
