//! Memory banks over segmentation-derived statistics, nearest-neighbour
//! scoring, leave-one-out train scores and adaptive scaling.

mod bank;
mod embed;
mod set;

pub use bank::{loo_scores, nn_score, normalize, patch_score, sq_dist, BankKind, MemoryBank, BANK_MAGIC, SCALE_EPS};
pub use embed::{class_histogram, composition_embedding, embed_features, ImageEmbeddings};
pub use set::{build_banks, final_score, BankScores, BankSet, BANKSET_MAGIC};
