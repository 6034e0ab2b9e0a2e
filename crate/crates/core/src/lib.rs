//! Part-segmentation-based anomaly detection on synthetic industrial scenes.
//!
//! A few-shot pixel classifier segments each image into components; class
//! histograms, per-class feature compositions and patch features of normal
//! images populate three memory banks, and a test image is scored by its
//! scaled nearest-neighbour distances to each bank.

pub mod error;
pub mod eval;
pub mod featex;
pub mod membank;
pub mod pipeline;
pub mod seed;
pub mod segtrain;
pub mod synthgen;
pub mod tensorio;

pub use error::{PsadError, Result};
pub use eval::{auroc, AblationReport, ScoredSample};
pub use featex::{PatchGrid, PixelFeatureMap};
pub use membank::{BankKind, BankSet, MemoryBank};
pub use pipeline::{Dataset, EvalReport, PipelineConfig};
pub use seed::derive_seed;
pub use segtrain::{PixelClassifier, TrainConfig};
pub use synthgen::{AnomalyKind, SampleLabel};
pub use tensorio::{ProbMap, SegMap, Tensor};
