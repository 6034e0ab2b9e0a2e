use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{label_aurocs, ScoredSample};
use crate::error::Result;
use crate::membank::{BankKind, BankSet, ImageEmbeddings};
use crate::seed::derive_seed;
use crate::segtrain::PixelClassifier;
use crate::synthgen::SampleLabel;

/// Training-set fractions of the reduced-data sweep, largest first.
pub const REDUCED_FRACTIONS: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

/// Banks used by the reduced-data sweep's headline AUROC (hist + comp).
pub const REDUCED_BANKS: [bool; 3] = [true, true, false];

/// A test image's embeddings plus its ground-truth label.
#[derive(Debug, Clone)]
pub struct TestItem {
    pub id: String,
    pub label: SampleLabel,
    pub anomaly: Option<String>,
    pub embeddings: ImageEmbeddings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub banks: Vec<String>,
    pub adaptive_scaling: bool,
    pub la_auroc: f64,
    pub sa_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedRow {
    pub fraction: f64,
    pub n_train: usize,
    /// hist + comp with adaptive scaling.
    pub la_auroc: f64,
    /// All three banks with adaptive scaling.
    pub la_auroc_final: f64,
    pub sa_auroc_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub n_train: usize,
    pub grid: Vec<AblationRow>,
    pub reduced: Vec<ReducedRow>,
}

impl AblationReport {
    pub fn row(&self, banks: [bool; 3], adaptive_scaling: bool) -> Option<&AblationRow> {
        let names = bank_names(banks);
        self.grid
            .iter()
            .find(|r| r.banks == names && r.adaptive_scaling == adaptive_scaling)
    }
}

fn bank_names(banks: [bool; 3]) -> Vec<String> {
    BankKind::ALL
        .iter()
        .zip(banks)
        .filter(|(_, on)| *on)
        .map(|(k, _)| k.name().to_string())
        .collect()
}

/// The seven non-empty bank subsets, in bitmask order.
pub fn bank_subsets() -> Vec<[bool; 3]> {
    (1u8..8).map(|m| [m & 1 != 0, m & 2 != 0, m & 4 != 0]).collect()
}

pub fn score_items(banks: &BankSet, items: &[TestItem]) -> Result<Vec<ScoredSample>> {
    items
        .par_iter()
        .map(|t| {
            let s = banks.score_embeddings(&t.embeddings)?;
            Ok(ScoredSample {
                id: t.id.clone(),
                label: t.label,
                anomaly: t.anomaly.clone(),
                raw: s.raw,
                s_hist: s.normalized[0],
                s_comp: s.normalized[1],
                s_patch: s.normalized[2],
                s_final: s.final_score(),
            })
        })
        .collect()
}

/// Bank-subset x scaling grid on the full training set, then the reduced-data
/// sweep over nested seeded subsets of it.
pub fn run_ablation(
    clf: &PixelClassifier,
    stride: usize,
    train: &[ImageEmbeddings],
    test: &[TestItem],
    seed: u64,
) -> Result<AblationReport> {
    let full = BankSet::from_embeddings(clf.clone(), stride, train)?;
    let samples = score_items(&full, test)?;
    let mut grid = Vec::with_capacity(14);
    for banks in bank_subsets() {
        for scaled in [false, true] {
            let (la, sa) = label_aurocs(&samples, |s| s.combined(banks, scaled))?;
            grid.push(AblationRow {
                banks: bank_names(banks),
                adaptive_scaling: scaled,
                la_auroc: la,
                sa_auroc: sa,
            });
        }
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "reduced-data")));
    let mut reduced = Vec::with_capacity(REDUCED_FRACTIONS.len());
    for fraction in REDUCED_FRACTIONS {
        let n = ((train.len() as f64 * fraction).round() as usize).clamp(2, train.len());
        let mut idx = order[..n].to_vec();
        idx.sort_unstable();
        let subset: Vec<ImageEmbeddings> = idx.iter().map(|&i| train[i].clone()).collect();
        let banks = BankSet::from_embeddings(clf.clone(), stride, &subset)?;
        let scored = score_items(&banks, test)?;
        let (la, _) = label_aurocs(&scored, |s| s.combined(REDUCED_BANKS, true))?;
        let (la_f, sa_f) = label_aurocs(&scored, |s| s.s_final)?;
        reduced.push(ReducedRow {
            fraction,
            n_train: n,
            la_auroc: la,
            la_auroc_final: la_f,
            sa_auroc_final: sa_f,
        });
    }
    Ok(AblationReport {
        seed,
        n_train: train.len(),
        grid,
        reduced,
    })
}
