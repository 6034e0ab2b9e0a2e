//! End-to-end wiring shared by the CLI, the acceptance suite and the benches:
//! configuration, dataset access, training, bank building and evaluation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PsadError, Result};
use crate::eval::{
    class_iou, label_aurocs, run_ablation, score_histogram, score_items, AblationReport, ScoreHistogram, ScoreSelector,
    ScoredSample, TestItem,
};
use crate::featex::{global_embedding_from, pixel_features, DEFAULT_STRIDE};
use crate::membank::{
    class_histogram, composition_embedding, embed_features, nn_score, normalize, BankKind, BankSet, ImageEmbeddings,
    MemoryBank,
};
use crate::seed::derive_seed;
use crate::segtrain::{
    assign_product_type, train_with_progress, LabeledSample, LossBreakdown, PixelClassifier, TrainConfig,
    UnlabeledSample,
};
use crate::synthgen::{
    family_by_name, generate_dataset, load_manifest, AnomalyKind, DatasetCounts, DatasetManifest, ImageEntry, Role,
};
use crate::tensorio::{read_segmap, read_tensor, SegMap, Tensor};

/// Root seed of the fixed benchmark.
pub const BENCHMARK_SEED: u64 = 20240601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub banks: PathBuf,
    pub report: PathBuf,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            data: "data".into(),
            checkpoint: "segmenter.pcl".into(),
            banks: "banks.pbs".into(),
            report: "report.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Blueprint family name (`tray`, `bottle`, `connector`).
    pub family: String,
    pub counts: DatasetCounts,
    /// `train.seed` is replaced by a stage seed derived from `seed`.
    pub train: TrainConfig,
    pub stride: usize,
    pub histogram_bins: usize,
    pub seed: u64,
    pub paths: PathConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            family: "tray".into(),
            counts: DatasetCounts::default(),
            train: TrainConfig::default(),
            stride: DEFAULT_STRIDE,
            histogram_bins: 20,
            seed: BENCHMARK_SEED,
            paths: PathConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PsadError::io(path, e))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PsadError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        family_by_name(&self.family).map_err(|e| PsadError::Config(e.to_string()))?;
        self.train.validate()?;
        if self.stride == 0 {
            return Err(PsadError::Config("stride must be at least 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(PsadError::Config("histogram_bins must be at least 1".into()));
        }
        Ok(())
    }

    /// Training configuration with its stage seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train"),
            ..self.train.clone()
        }
    }
}

/// A generated dataset on disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn generate(cfg: &PipelineConfig, out_dir: &Path) -> Result<Self> {
        let family = family_by_name(&cfg.family)?;
        let manifest = generate_dataset(&family, cfg.counts, derive_seed(cfg.seed, "generate"), out_dir)?;
        Ok(Dataset {
            root: out_dir.to_path_buf(),
            manifest,
        })
    }

    pub fn open(root: &Path) -> Result<Self> {
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest: load_manifest(root)?,
        })
    }

    pub fn entries(&self, role: Role) -> Vec<&ImageEntry> {
        self.manifest.with_role(role).collect()
    }

    pub fn image(&self, entry: &ImageEntry) -> Result<Tensor<f32>> {
        read_tensor(self.root.join(&entry.image))
    }

    /// Training ground truth of a labeled image.
    pub fn gt(&self, entry: &ImageEntry) -> Result<SegMap> {
        let rel = entry
            .gt
            .as_ref()
            .ok_or_else(|| PsadError::Contract(format!("{} has no training ground truth", entry.id)))?;
        read_segmap(self.root.join(rel))
    }

    /// Held-out ground truth of a non-labeled image.
    pub fn eval_gt(&self, entry: &ImageEntry) -> Result<SegMap> {
        let rel = entry
            .eval_gt
            .as_ref()
            .ok_or_else(|| PsadError::Contract(format!("{} has no evaluation ground truth", entry.id)))?;
        read_segmap(self.root.join(rel))
    }
}

/// Loads the labeled and unlabeled splits, assigns a product type to every
/// unlabeled image (nearest labeled global embedding) and trains.
pub fn train_segmenter(
    data: &Dataset,
    cfg: &TrainConfig,
    on_iteration: impl FnMut(usize, &LossBreakdown),
) -> Result<PixelClassifier> {
    let labeled = data
        .entries(Role::Labeled)
        .par_iter()
        .map(|e| LabeledSample::new(data.image(e)?, data.gt(e)?, e.product_type))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(Vec<f64>, u32)> = labeled
        .iter()
        .map(|s| (global_embedding_from(&s.features), s.product_type))
        .collect();
    let unlabeled = data
        .entries(Role::Unlabeled)
        .par_iter()
        .map(|e| {
            let feats = pixel_features(&data.image(e)?)?;
            let t = assign_product_type(&global_embedding_from(&feats), &refs)?;
            Ok(UnlabeledSample::new(feats, t))
        })
        .collect::<Result<Vec<_>>>()?;
    train_with_progress(&labeled, &unlabeled, cfg, on_iteration)
}

fn embed_entries(
    data: &Dataset,
    entries: &[&ImageEntry],
    clf: &PixelClassifier,
    stride: usize,
) -> Result<Vec<ImageEmbeddings>> {
    entries
        .par_iter()
        .map(|e| embed_features(clf, &pixel_features(&data.image(e)?)?, stride))
        .collect()
}

/// Bank inputs: embeddings of the unlabeled training images.
pub fn train_embeddings(data: &Dataset, clf: &PixelClassifier, stride: usize) -> Result<Vec<ImageEmbeddings>> {
    embed_entries(data, &data.entries(Role::Unlabeled), clf, stride)
}

pub fn build_dataset_banks(data: &Dataset, clf: &PixelClassifier, stride: usize) -> Result<BankSet> {
    BankSet::from_embeddings(clf.clone(), stride, &train_embeddings(data, clf, stride)?)
}

pub fn test_items(data: &Dataset, clf: &PixelClassifier, stride: usize) -> Result<Vec<TestItem>> {
    let entries = data.entries(Role::Test);
    let emb = embed_entries(data, &entries, clf, stride)?;
    Ok(entries
        .iter()
        .zip(emb)
        .map(|(e, embeddings)| TestItem {
            id: e.id.clone(),
            label: e.label,
            anomaly: e.anomaly.as_ref().map(|a| {
                serde_json::to_value(a.kind)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default()
            }),
            embeddings,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAuroc {
    pub score: ScoreSelector,
    pub la_auroc: f64,
    pub sa_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub family: String,
    pub n_train: usize,
    pub n_normal: usize,
    pub n_la: usize,
    pub n_sa: usize,
    /// Final-score AUROCs.
    pub la_auroc: f64,
    pub sa_auroc: f64,
    pub per_score: Vec<ScoreAuroc>,
    /// Per-class IoU of predicted against held-out segmentation on normal
    /// test images; `null` for classes that never occur.
    pub class_iou: Vec<Option<f64>>,
    pub min_class_iou: f64,
    pub histograms: Vec<ScoreHistogram>,
    pub samples: Vec<ScoredSample>,
}

pub fn evaluate(data: &Dataset, banks: &BankSet, n_bins: usize) -> Result<EvalReport> {
    let items = test_items(data, &banks.classifier, banks.stride)?;
    let samples = score_items(banks, &items)?;
    let per_score = ScoreSelector::ALL
        .iter()
        .map(|&sel| {
            let (la, sa) = label_aurocs(&samples, |s| s.get(sel))?;
            Ok(ScoreAuroc {
                score: sel,
                la_auroc: la,
                sa_auroc: sa,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (la_auroc, sa_auroc) = label_aurocs(&samples, |s| s.s_final)?;

    let entries = data.entries(Role::Test);
    let normal: Vec<(usize, SegMap)> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label == crate::synthgen::SampleLabel::Normal)
        .map(|(i, e)| Ok((i, data.eval_gt(e)?)))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&SegMap, &SegMap)> = normal.iter().map(|(i, gt)| (&items[*i].embeddings.seg, gt)).collect();
    let class_iou = class_iou(&pairs, data.manifest.n_classes)?;
    let min_class_iou = class_iou.iter().flatten().copied().fold(f64::INFINITY, f64::min);

    let histograms = ScoreSelector::ALL
        .iter()
        .map(|&sel| score_histogram(&samples, sel, n_bins))
        .collect::<Result<Vec<_>>>()?;
    let count = |l| samples.iter().filter(|s| s.label == l).count();
    use crate::synthgen::SampleLabel::*;
    Ok(EvalReport {
        family: data.manifest.family.clone(),
        n_train: banks.hist.num_groups(),
        n_normal: count(Normal),
        n_la: count(Logical),
        n_sa: count(Structural),
        la_auroc,
        sa_auroc,
        per_score,
        class_iou,
        min_class_iou,
        histograms,
        samples,
    })
}

pub fn ablate(data: &Dataset, clf: &PixelClassifier, stride: usize, seed: u64) -> Result<AblationReport> {
    let train = train_embeddings(data, clf, stride)?;
    let test = test_items(data, clf, stride)?;
    run_ablation(clf, stride, &train, &test, derive_seed(seed, "ablation"))
}

/// Scores of one histogram-preserving swap in ground-truth space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessRow {
    pub id: String,
    pub s_hist: f64,
    pub s_comp: f64,
}

/// Histogram and composition banks built from the held-out ground truth of
/// the training images, then used to score every `swapped_position` test
/// image through its own ground truth. Isolates what the two embeddings can
/// see from segmentation errors.
pub fn composition_witness(data: &Dataset) -> Result<Vec<WitnessRow>> {
    let n = data.manifest.n_classes;
    let gt_embed = |e: &ImageEntry| -> Result<ImageEmbeddings> {
        let feats = pixel_features(&data.image(e)?)?;
        let seg = data.eval_gt(e)?;
        Ok(ImageEmbeddings {
            hist: class_histogram(&seg, n),
            comp: composition_embedding(&feats.visual, &seg, n)?,
            patches: Vec::new(),
            patch_dim: 1,
            seg,
        })
    };
    let train = data
        .entries(Role::Unlabeled)
        .par_iter()
        .map(|e| gt_embed(e))
        .collect::<Result<Vec<_>>>()?;
    let flat = |f: fn(&ImageEmbeddings) -> &Vec<f64>| {
        train
            .iter()
            .flat_map(|e| f(e).iter().map(|&v| v as f32 as f64))
            .collect::<Vec<_>>()
    };
    let hist = MemoryBank::new(BankKind::Hist, n, 1, flat(|e| &e.hist))?;
    let comp = MemoryBank::new(BankKind::Comp, train[0].comp.len(), 1, flat(|e| &e.comp))?;
    data.entries(Role::Test)
        .into_iter()
        .filter(|e| e.anomaly.map(|a| a.kind) == Some(AnomalyKind::SwappedPosition))
        .map(|e| {
            let g = gt_embed(e)?;
            Ok(WitnessRow {
                id: e.id.clone(),
                s_hist: normalize(nn_score(&hist, &g.hist)?, &hist),
                s_comp: normalize(nn_score(&comp, &g.comp)?, &comp),
            })
        })
        .collect()
}

/// Everything the fixed-seed benchmark measures for one family.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkOutcome {
    pub family: String,
    pub seconds: f64,
    pub eval: EvalReport,
    pub ablation: AblationReport,
    pub witness: Vec<WitnessRow>,
    /// Normalized leave-one-out scores of each built bank.
    pub loo_normalized: Vec<Vec<f64>>,
    #[serde(skip)]
    pub banks: BankSet,
}

/// generate, train, build banks, evaluate (timed), then ablate and run the
/// witness.
pub fn run_benchmark(cfg: &PipelineConfig, dir: &Path) -> Result<BenchmarkOutcome> {
    let started = std::time::Instant::now();
    let data = Dataset::generate(cfg, dir)?;
    let clf = train_segmenter(&data, &cfg.train_config(), |_, _| {})?;
    let banks = build_dataset_banks(&data, &clf, cfg.stride)?;
    let eval = evaluate(&data, &banks, cfg.histogram_bins)?;
    let seconds = started.elapsed().as_secs_f64();
    let ablation = ablate(&data, &clf, cfg.stride, cfg.seed)?;
    let witness = composition_witness(&data)?;
    let loo_normalized = BankKind::ALL
        .iter()
        .map(|&k| {
            let b = banks.bank(k);
            b.train_scores().iter().map(|&s| normalize(s, b)).collect()
        })
        .collect();
    Ok(BenchmarkOutcome {
        family: cfg.family.clone(),
        seconds,
        eval,
        ablation,
        witness,
        loo_normalized,
        banks,
    })
}

/// Serializes `value` as pretty JSON into `path`.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PsadError::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| PsadError::io(path, e))
}
