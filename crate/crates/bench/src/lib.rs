//! Fixtures shared by the criterion benches.

use psad_core::membank::{build_banks, BankKind, BankSet, MemoryBank};
use psad_core::segtrain::{train, LabeledSample, TrainConfig};
use psad_core::synthgen::{family_by_name, generate_scene};
use psad_core::{PixelClassifier, Tensor};

/// Normal scene of the first product type of `family`.
pub fn scene(family: &str, seed: u64) -> Tensor<f32> {
    let fam = family_by_name(family).expect("built-in family");
    generate_scene(&fam.types[0], None, seed)
        .expect("valid blueprint")
        .image
}

pub fn labeled_samples(family: &str, n: u64) -> Vec<LabeledSample> {
    let fam = family_by_name(family).expect("built-in family");
    (0..n)
        .map(|s| {
            let sc = generate_scene(&fam.types[0], None, s).expect("valid blueprint");
            LabeledSample::new(sc.image, sc.gt, 0).expect("scene fits the feature window")
        })
        .collect()
}

/// Briefly trained classifier; good enough to exercise inference paths.
pub fn quick_classifier(family: &str) -> PixelClassifier {
    let cfg = TrainConfig {
        warmup_iterations: 20,
        main_iterations: 0,
        ..TrainConfig::default()
    };
    train(&labeled_samples(family, 3), &[], &cfg).expect("training converges numerically")
}

pub fn banks(family: &str, n_train: u64) -> BankSet {
    let images: Vec<_> = (0..n_train).map(|s| scene(family, 100 + s)).collect();
    build_banks(&images, &quick_classifier(family), 8).expect("enough training images")
}

/// `n_groups` groups of `group_size` pseudo-random vectors.
pub fn synthetic_patch_bank(n_groups: usize, group_size: usize, dim: usize) -> Vec<f64> {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    (0..n_groups * group_size * dim)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

pub fn patch_bank(n_groups: usize, group_size: usize, dim: usize) -> MemoryBank {
    MemoryBank::new(
        BankKind::Patch,
        dim,
        group_size,
        synthetic_patch_bank(n_groups, group_size, dim),
    )
    .expect("valid bank")
}
