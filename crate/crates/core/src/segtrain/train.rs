use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::PixelClassifier;
use super::losses::{ce_loss, dice_loss, entropy_loss, hist_loss};
use crate::error::{PsadError, Result};
use crate::featex::{pixel_features, PixelFeatureMap, COORD_DIM, VISUAL_DIM};
use crate::seed::derive_seed;
use crate::tensorio::{ProbMap, SegMap, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of cross-entropy relative to Dice.
    pub lambda_ce: f64,
    pub lambda_entropy: f64,
    pub lambda_hist: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Labeled images per batch once unlabeled images join (main phase).
    pub labeled_per_batch: usize,
    /// Supervised-only iterations (Dice + CE).
    pub warmup_iterations: usize,
    /// Iterations with the full objective.
    pub main_iterations: usize,
    /// Width of the optional ReLU layer; 0 keeps the classifier linear.
    pub hidden_units: usize,
    /// Seeded horizontal flips and +-2 px translations of labeled images.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_ce: 10.0,
            lambda_entropy: 10.0,
            lambda_hist: 10.0,
            learning_rate: 0.001,
            weight_decay: 1e-4,
            batch_size: 5,
            labeled_per_batch: 2,
            warmup_iterations: 200,
            main_iterations: 200,
            hidden_units: 32,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_ce, self.lambda_entropy, self.lambda_hist];
        if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(PsadError::Config(format!(
                "loss weights must be positive, got {lambdas:?}"
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(PsadError::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(PsadError::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 || self.labeled_per_batch == 0 || self.labeled_per_batch > self.batch_size {
            return Err(PsadError::Config(format!(
                "need 1 <= labeled_per_batch ({}) <= batch_size ({})",
                self.labeled_per_batch, self.batch_size
            )));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            ce: self.lambda_ce,
            entropy: self.lambda_entropy,
            hist: self.lambda_hist,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub entropy: f64,
    pub hist: f64,
}

pub struct LabeledSample {
    pub image: Tensor<f32>,
    pub features: PixelFeatureMap,
    pub seg: SegMap,
    pub product_type: u32,
}

impl LabeledSample {
    pub fn new(image: Tensor<f32>, seg: SegMap, product_type: u32) -> Result<Self> {
        let (h, w, _) = image.dims3()?;
        if seg.height() != h || seg.width() != w {
            return Err(PsadError::Contract(format!(
                "segmap {}x{} does not match image {h}x{w}",
                seg.height(),
                seg.width()
            )));
        }
        let features = pixel_features(&image)?;
        Ok(LabeledSample {
            image,
            features,
            seg,
            product_type,
        })
    }
}

/// Unlabeled training image with its assigned product type. Reads of the
/// features are counted so tests can check which phase touched them.
pub struct UnlabeledSample {
    features: PixelFeatureMap,
    product_type: u32,
    reads: AtomicUsize,
}

impl UnlabeledSample {
    pub fn new(features: PixelFeatureMap, product_type: u32) -> Self {
        UnlabeledSample {
            features,
            product_type,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn features(&self) -> &PixelFeatureMap {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.features
    }

    pub fn product_type(&self) -> u32 {
        self.product_type
    }

    pub fn read_count(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

pub enum BatchItem<'a> {
    Labeled {
        features: &'a PixelFeatureMap,
        seg: &'a SegMap,
    },
    Unlabeled {
        features: &'a PixelFeatureMap,
        product_type: u32,
        reference: &'a SegMap,
        reference_type: u32,
    },
}

/// Per-term batch means and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub dice: f64,
    pub ce: f64,
    pub entropy: f64,
    pub hist: f64,
    pub total: f64,
}

/// Batch objective and its parameter gradient.
///
/// Labeled items contribute `Dice + lambda_ce * CE`, unlabeled items
/// `lambda_entropy * H + lambda_hist * L_hist`; each group is averaged over
/// its own item count.
pub fn total_loss(
    clf: &PixelClassifier,
    batch: &[BatchItem<'_>],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if batch.is_empty() {
        return Err(PsadError::Contract("empty training batch".into()));
    }
    let n_lab = batch.iter().filter(|b| matches!(b, BatchItem::Labeled { .. })).count();
    let n_unl = batch.len() - n_lab;

    let per_item: Vec<Result<([f64; 4], Vec<f64>)>> = batch
        .par_iter()
        .map(|item| {
            let feats = match item {
                BatchItem::Labeled { features, .. } | BatchItem::Unlabeled { features, .. } => *features,
            };
            let (logits, cache) = clf.forward(feats)?;
            let probs = ProbMap::from_logits(feats.height(), feats.width(), clf.n_classes(), &logits);
            let (terms, grad_logits) = match item {
                BatchItem::Labeled { seg, .. } => {
                    let dice = dice_loss(&probs, seg)?;
                    let ce = ce_loss(&probs, seg)?;
                    let scale = 1.0 / n_lab as f64;
                    let g: Vec<f64> = dice
                        .grad
                        .iter()
                        .zip(&ce.grad)
                        .map(|(d, c)| scale * (d + weights.ce * c))
                        .collect();
                    ([dice.value, ce.value, 0.0, 0.0], g)
                }
                BatchItem::Unlabeled {
                    product_type,
                    reference,
                    reference_type,
                    ..
                } => {
                    let ent = entropy_loss(&probs);
                    let hist = hist_loss(&probs, *product_type, reference, *reference_type)?;
                    let scale = 1.0 / n_unl as f64;
                    let g: Vec<f64> = ent
                        .grad
                        .iter()
                        .zip(&hist.grad)
                        .map(|(e, h)| scale * (weights.entropy * e + weights.hist * h))
                        .collect();
                    ([0.0, 0.0, ent.value, hist.value], g)
                }
            };
            Ok((terms, clf.backward(&cache, &grad_logits)))
        })
        .collect();

    // Fixed-order reduction keeps results independent of thread scheduling.
    let mut sums = [0.0f64; 4];
    let mut grad = vec![0.0; clf.params().len()];
    for r in per_item {
        let (terms, g) = r?;
        for (s, t) in sums.iter_mut().zip(terms) {
            *s += t;
        }
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let lab = n_lab.max(1) as f64;
    let unl = n_unl.max(1) as f64;
    let mut out = LossBreakdown {
        dice: sums[0] / lab,
        ce: sums[1] / lab,
        entropy: sums[2] / unl,
        hist: sums[3] / unl,
        total: 0.0,
    };
    out.total = out.dice + weights.ce * out.ce + weights.entropy * out.entropy + weights.hist * out.hist;
    Ok((out, grad))
}

/// Adam moment estimates with decoupled weight decay.
struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Horizontal flip (optional) followed by a translation with edge replication;
/// image and labels move together.
pub fn augment(image: &Tensor<f32>, seg: &SegMap, flip: bool, dx: i64, dy: i64) -> Result<(Tensor<f32>, SegMap)> {
    let (h, w, c) = image.dims3()?;
    let mut data = vec![0.0f32; h * w * c];
    let mut labels = vec![0u16; h * w];
    for y in 0..h {
        let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as usize;
        for x in 0..w {
            let tx = (x as i64 - dx).clamp(0, w as i64 - 1) as usize;
            let sx = if flip { w - 1 - tx } else { tx };
            data[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(image.pixel(sy, sx));
            labels[y * w + x] = seg.labels()[sy * w + sx];
        }
    }
    Ok((
        Tensor::new(vec![h, w, c], data)?,
        SegMap::new(h, w, seg.n_classes(), labels)?,
    ))
}

fn input_statistics(labeled: &[LabeledSample]) -> (Vec<f64>, Vec<f64>) {
    let d = VISUAL_DIM + COORD_DIM;
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut n = 0.0;
    let mut row = vec![0.0; d];
    for s in labeled {
        for p in 0..s.features.num_pixels() {
            s.features.input_row(p, &mut row);
            for j in 0..d {
                sum[j] += row[j];
                sq[j] += row[j] * row[j];
            }
            n += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let scale = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6))
        .collect();
    (mean, scale)
}

/// Trains the pixel classifier; see [`TrainConfig`] for the schedule.
pub fn train(labeled: &[LabeledSample], unlabeled: &[UnlabeledSample], cfg: &TrainConfig) -> Result<PixelClassifier> {
    train_with_progress(labeled, unlabeled, cfg, |_, _| {})
}

pub fn train_with_progress(
    labeled: &[LabeledSample],
    unlabeled: &[UnlabeledSample],
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(usize, &LossBreakdown),
) -> Result<PixelClassifier> {
    cfg.validate()?;
    let Some(first) = labeled.first() else {
        return Err(PsadError::Contract("training needs at least one labeled image".into()));
    };
    let n_classes = first.seg.n_classes();
    if labeled.iter().any(|s| s.seg.n_classes() != n_classes) {
        return Err(PsadError::Contract("labeled images disagree on the class count".into()));
    }

    let mut by_type: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in labeled.iter().enumerate() {
        by_type.entry(s.product_type).or_default().push(i);
    }
    if let Some(u) = unlabeled.iter().find(|u| !by_type.contains_key(&u.product_type)) {
        return Err(PsadError::Contract(format!(
            "unlabeled image assigned to type {} which has no labeled image",
            u.product_type
        )));
    }

    let in_dim = VISUAL_DIM + COORD_DIM;
    let mut clf = PixelClassifier::initialized(
        in_dim,
        cfg.hidden_units,
        n_classes,
        derive_seed(cfg.seed, "segtrain/init"),
    );
    let (mean, scale) = input_statistics(labeled);
    clf.set_normalization(mean, scale);

    let weights = cfg.weights();
    let mut opt = AdamW::new(clf.params().len(), cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "segtrain/batches"));

    for it in 0..cfg.warmup_iterations + cfg.main_iterations {
        let main_phase = it >= cfg.warmup_iterations && !unlabeled.is_empty();
        let n_lab = if main_phase {
            cfg.labeled_per_batch
        } else {
            cfg.batch_size
        };

        let mut owned: Vec<(PixelFeatureMap, SegMap)> = Vec::with_capacity(n_lab);
        for _ in 0..n_lab {
            let s = &labeled[rng.gen_range(0..labeled.len())];
            if cfg.augment {
                let flip = rng.gen_bool(0.5);
                let dx = rng.gen_range(-2..=2);
                let dy = rng.gen_range(-2..=2);
                let (img, seg) = augment(&s.image, &s.seg, flip, dx, dy)?;
                owned.push((pixel_features(&img)?, seg));
            } else {
                owned.push((s.features.clone(), s.seg.clone()));
            }
        }

        let mut batch: Vec<BatchItem<'_>> = owned
            .iter()
            .map(|(features, seg)| BatchItem::Labeled { features, seg })
            .collect();
        if main_phase {
            for _ in n_lab..cfg.batch_size {
                let u = &unlabeled[rng.gen_range(0..unlabeled.len())];
                let candidates = &by_type[&u.product_type];
                let r = &labeled[candidates[rng.gen_range(0..candidates.len())]];
                batch.push(BatchItem::Unlabeled {
                    features: u.features(),
                    product_type: u.product_type,
                    reference: &r.seg,
                    reference_type: r.product_type,
                });
            }
        }

        let (losses, grad) = total_loss(&clf, &batch, &weights)?;
        for (term, value) in [
            ("dice loss", losses.dice),
            ("cross-entropy loss", losses.ce),
            ("entropy loss", losses.entropy),
            ("histogram loss", losses.hist),
        ] {
            if !value.is_finite() {
                return Err(PsadError::Train { term, iteration: it });
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(PsadError::Train {
                term: "gradient",
                iteration: it,
            });
        }
        opt.step(clf.params_mut(), &grad);
        on_iteration(it, &losses);
    }

    clf.round_to_f32();
    Ok(clf)
}

/// Nearest labeled image in global-embedding space decides the type; ties go
/// to the lowest labeled index.
pub fn assign_product_type(embedding: &[f64], labeled: &[(Vec<f64>, u32)]) -> Result<u32> {
    let mut best: Option<(f64, u32)> = None;
    for (e, t) in labeled {
        if e.len() != embedding.len() {
            return Err(PsadError::Contract("embedding dimensions differ".into()));
        }
        let d: f64 = e.iter().zip(embedding).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, *t));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| PsadError::Contract("type assignment needs at least one labeled image".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_reference_hyperparameters() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.lambda_ce, cfg.lambda_entropy, cfg.lambda_hist), (10.0, 10.0, 10.0));
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.batch_size, 5);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = TrainConfig {
            lambda_hist: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.lambda_hist = 1.0;
        cfg.labeled_per_batch = 6;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"lambda_ce": 1.0, "lamda_h": 2.0}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"main_iterations": 3}"#).unwrap();
        assert_eq!(ok.main_iterations, 3);
        assert_eq!(ok.warmup_iterations, 200);
    }

    #[test]
    fn type_assignment() {
        let labeled = vec![(vec![0.0, 0.0], 0), (vec![1.0, 1.0], 1), (vec![1.0, 1.0], 2)];
        assert_eq!(assign_product_type(&[0.9, 1.2], &labeled).unwrap(), 1);
        assert_eq!(assign_product_type(&[0.0, 0.0], &labeled).unwrap(), 0);
        assert_eq!(assign_product_type(&[50.0, -3.0], &labeled[..1]).unwrap(), 0);
        assert!(assign_product_type(&[0.0], &[]).is_err());
    }

    #[test]
    fn augmentation_moves_labels_with_pixels() {
        let mut data = vec![0.0f32; 4 * 5 * 3];
        let mut labels = vec![0u16; 20];
        // Marker at (y=1, x=1).
        data[6 * 3] = 1.0;
        labels[6] = 1;
        let img = Tensor::new(vec![4, 5, 3], data).unwrap();
        let seg = SegMap::new(4, 5, 2, labels).unwrap();
        let (ai, asg) = augment(&img, &seg, true, -1, 1).unwrap();
        // Flip sends x=1 to x=3, shift by (-1, +1) lands on (2, 2).
        assert_eq!(asg.get(2, 2), 1);
        assert_eq!(ai.pixel(2, 2)[0], 1.0);
        assert_eq!(asg.class_counts()[1], 1);
    }
}
