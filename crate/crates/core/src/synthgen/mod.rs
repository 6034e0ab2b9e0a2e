//! Deterministic synthetic "industrial product" scenes with ground-truth part
//! segmentation and controlled logical/structural anomalies.

mod blueprint;
mod dataset;
mod scene;

pub use blueprint::{default_suite, family_by_name, BlueprintFamily, ComponentSpec, SceneBlueprint, Shape, MAX_JITTER};
pub use dataset::{generate_dataset, load_manifest, DatasetCounts, DatasetManifest, ImageEntry, Role, MANIFEST_FILE};
pub use scene::{generate_scene, AnomalyKind, AnomalySpec, SampleLabel, Scene};
