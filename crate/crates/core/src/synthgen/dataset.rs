use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blueprint::BlueprintFamily;
use super::scene::{generate_scene, AnomalyKind, AnomalySpec, SampleLabel};
use crate::error::{PsadError, Result};
use crate::seed::derive_seed;
use crate::tensorio::{write_segmap, write_tensor};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetCounts {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test_normal: usize,
    pub n_test_la: usize,
    pub n_test_sa: usize,
}

impl Default for DatasetCounts {
    fn default() -> Self {
        DatasetCounts {
            n_labeled: 5,
            n_unlabeled: 40,
            n_test_normal: 20,
            n_test_la: 20,
            n_test_sa: 20,
        }
    }
}

impl DatasetCounts {
    pub fn total(&self) -> usize {
        self.n_labeled + self.n_unlabeled + self.n_test_normal + self.n_test_la + self.n_test_sa
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Labeled,
    Unlabeled,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: String,
    /// Image path relative to the dataset root.
    pub image: String,
    /// Ground truth visible to the trainer; labeled images only.
    pub gt: Option<String>,
    /// Ground truth held back for evaluation.
    pub eval_gt: Option<String>,
    pub role: Role,
    pub label: SampleLabel,
    pub product_type: u32,
    pub seed: u64,
    pub anomaly: Option<AnomalySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub family: String,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub n_types: usize,
    pub seed: u64,
    pub counts: DatasetCounts,
    pub images: Vec<ImageEntry>,
}

impl DatasetManifest {
    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ImageEntry> {
        self.images.iter().filter(move |e| e.role == role)
    }
}

fn logical_targets(family: &BlueprintFamily, kind: AnomalyKind) -> Vec<u16> {
    let bp = &family.types[0];
    (1..bp.n_classes as u16)
        .filter(|&class| {
            family.types.iter().all(|t| {
                let Some(comp) = t.components.iter().find(|c| c.class_id == class) else {
                    return false;
                };
                kind != AnomalyKind::SwappedPosition
                    || t.components
                        .iter()
                        .any(|c| c.class_id != class && c.shape == comp.shape)
            })
        })
        .collect()
}

/// Generates a full dataset under `out_dir` and returns its manifest.
pub fn generate_dataset(
    family: &BlueprintFamily,
    counts: DatasetCounts,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    family.validate()?;
    let n_types = family.types.len();
    if counts.n_labeled < n_types {
        return Err(PsadError::Spec(format!(
            "family {} has {n_types} product types; need at least one labeled image each",
            family.name
        )));
    }

    for sub in ["images", "gt", "gt_eval"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| PsadError::io(&dir, e))?;
    }

    let mut type_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synthgen/types"));
    let mut plan: Vec<(Role, String, u32, Option<AnomalySpec>)> = Vec::with_capacity(counts.total());
    for i in 0..counts.n_labeled {
        plan.push((Role::Labeled, format!("labeled_{i:03}"), (i % n_types) as u32, None));
    }
    for i in 0..counts.n_unlabeled {
        let t = type_rng.gen_range(0..n_types) as u32;
        plan.push((Role::Unlabeled, format!("unlabeled_{i:03}"), t, None));
    }
    for i in 0..counts.n_test_normal {
        let t = type_rng.gen_range(0..n_types) as u32;
        plan.push((Role::Test, format!("test_normal_{i:03}"), t, None));
    }
    let la_targets: Vec<Vec<u16>> = AnomalyKind::LOGICAL
        .iter()
        .map(|&k| logical_targets(family, k))
        .collect();
    for i in 0..counts.n_test_la {
        let t = type_rng.gen_range(0..n_types) as u32;
        let k = i % AnomalyKind::LOGICAL.len();
        let kind = AnomalyKind::LOGICAL[k];
        let targets = &la_targets[k];
        if targets.is_empty() {
            return Err(PsadError::Spec(format!(
                "family {} admits no {kind:?} target",
                family.name
            )));
        }
        let target_class = targets[(i / AnomalyKind::LOGICAL.len()) % targets.len()];
        let spec = AnomalySpec {
            kind,
            target_class,
            magnitude: kind.default_magnitude(),
        };
        plan.push((Role::Test, format!("test_la_{i:03}"), t, Some(spec)));
    }
    let n_classes = family.n_classes();
    for i in 0..counts.n_test_sa {
        let t = type_rng.gen_range(0..n_types) as u32;
        let kind = AnomalyKind::STRUCTURAL[i % 2];
        let target_class = ((i / 2) % n_classes) as u16;
        let spec = AnomalySpec {
            kind,
            target_class,
            magnitude: kind.default_magnitude(),
        };
        plan.push((Role::Test, format!("test_sa_{i:03}"), t, Some(spec)));
    }

    let mut images = Vec::with_capacity(plan.len());
    for (index, (role, id, product_type, anomaly)) in plan.into_iter().enumerate() {
        let scene_seed = derive_seed(seed, &format!("synthgen/scene/{index}"));
        let bp = &family.types[product_type as usize];
        let scene = generate_scene(bp, anomaly.as_ref(), scene_seed)?;

        let image = format!("images/{id}.pft");
        write_tensor(&scene.image, out_dir.join(&image))?;
        let (gt, eval_gt) = if role == Role::Labeled {
            let p = format!("gt/{id}.psm");
            write_segmap(&scene.gt, out_dir.join(&p))?;
            (Some(p), None)
        } else {
            let p = format!("gt_eval/{id}.psm");
            write_segmap(&scene.gt, out_dir.join(&p))?;
            (None, Some(p))
        };
        images.push(ImageEntry {
            id,
            image,
            gt,
            eval_gt,
            role,
            label: scene.label,
            product_type,
            seed: scene_seed,
            anomaly,
        });
    }

    let bp = &family.types[0];
    let manifest = DatasetManifest {
        family: family.name.clone(),
        height: bp.height,
        width: bp.width,
        n_classes: bp.n_classes,
        n_types,
        seed,
        counts,
        images,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| PsadError::json(&path, e))?;
    std::fs::write(&path, json).map_err(|e| PsadError::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| PsadError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| PsadError::json(&path, e))
}
