#![allow(dead_code)]

use psad_core::eval::auroc;
use psad_core::featex::{pixel_features, PatchGrid, PixelFeatureMap};
use psad_core::membank::{loo_scores, nn_score, patch_score, BankKind, MemoryBank};
use psad_core::segtrain::{
    ce_loss, dice_loss, entropy_loss, hist_loss, total_loss, BatchItem, LossGrad, LossWeights, PixelClassifier,
};
use psad_core::tensorio::{ProbMap, SegMap, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Relative-error denominators are floored here so that gradient entries
/// that are zero up to rounding do not divide by ~0.
pub const REL_FLOOR: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub struct LogitInstance {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub logits: Vec<f64>,
    pub labels: SegMap,
    pub reference: SegMap,
}

pub fn logit_instance(seed: u64) -> LogitInstance {
    let mut r = rng(seed);
    let h = r.gen_range(2..6);
    let w = r.gen_range(2..6);
    let c = r.gen_range(2..6);
    let logits = (0..h * w * c).map(|_| r.gen_range(-3.0..3.0)).collect();
    let mut seg = || SegMap::new(h, w, c, (0..h * w).map(|_| r.gen_range(0..c as u16)).collect()).unwrap();
    let labels = seg();
    let reference = seg();
    LogitInstance {
        h,
        w,
        c,
        logits,
        labels,
        reference,
    }
}

/// Max relative error between the analytic logit gradient of `loss` and
/// central finite differences.
pub fn logit_fd_error(inst: &LogitInstance, loss: impl Fn(&ProbMap) -> LossGrad) -> f64 {
    let probs = |l: &[f64]| ProbMap::from_logits(inst.h, inst.w, inst.c, l);
    let analytic = loss(&probs(&inst.logits)).grad;
    let mut worst: f64 = 0.0;
    let mut l = inst.logits.clone();
    for i in 0..l.len() {
        let x = l[i];
        l[i] = x + FD_STEP;
        let up = loss(&probs(&l)).value;
        l[i] = x - FD_STEP;
        let down = loss(&probs(&l)).value;
        l[i] = x;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

pub const LOSS_NAMES: [&str; 4] = ["cross-entropy", "dice", "entropy", "histogram"];

/// Worst relative error per loss over `n` seeded instances.
pub fn gradient_suite(n: u64) -> [f64; 4] {
    let mut worst = [0.0f64; 4];
    for seed in 0..n {
        let inst = logit_instance(1000 + seed);
        let errs = [
            logit_fd_error(&inst, |p| ce_loss(p, &inst.labels).unwrap()),
            logit_fd_error(&inst, |p| dice_loss(p, &inst.labels).unwrap()),
            logit_fd_error(&inst, entropy_loss),
            logit_fd_error(&inst, |p| hist_loss(p, 0, &inst.reference, 0).unwrap()),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    worst
}

pub fn random_image(r: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
    Tensor::new(vec![h, w, 3], (0..h * w * 3).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Finite-difference check of the full batch objective with respect to
/// classifier parameters, through the optional hidden layer.
pub fn classifier_fd_error(seed: u64, hidden: usize, n_checked: usize) -> f64 {
    let mut r = rng(seed);
    let c = 3;
    let feats: Vec<PixelFeatureMap> = (0..2)
        .map(|_| pixel_features(&random_image(&mut r, 33, 33)).unwrap())
        .collect();
    let seg =
        |r: &mut ChaCha8Rng| SegMap::new(33, 33, c, (0..33 * 33).map(|_| r.gen_range(0..c as u16)).collect()).unwrap();
    let (y, yref) = (seg(&mut r), seg(&mut r));
    let mut clf = PixelClassifier::initialized(feats[0].input_dim(), hidden, c, seed);
    for p in clf.params_mut() {
        *p += r.gen_range(-0.3..0.3);
    }
    let batch = [
        BatchItem::Labeled {
            features: &feats[0],
            seg: &y,
        },
        BatchItem::Unlabeled {
            features: &feats[1],
            product_type: 0,
            reference: &yref,
            reference_type: 0,
        },
    ];
    let weights = LossWeights {
        ce: 10.0,
        entropy: 10.0,
        hist: 10.0,
    };
    let (_, analytic) = total_loss(&clf, &batch, &weights).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..n_checked {
        let i = r.gen_range(0..clf.params().len());
        let x = clf.params()[i];
        clf.params_mut()[i] = x + FD_STEP;
        let up = total_loss(&clf, &batch, &weights).unwrap().0.total;
        clf.params_mut()[i] = x - FD_STEP;
        let down = total_loss(&clf, &batch, &weights).unwrap().0.total;
        clf.params_mut()[i] = x;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

pub fn oracle_nn(bank: &[Vec<f64>], q: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for e in bank {
        let d = sq(e, q);
        if d < best {
            best = d;
        }
    }
    best
}

pub fn oracle_patch(bank: &[Vec<f64>], test: &[Vec<f64>]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for t in test {
        let d = oracle_nn(bank, t);
        if d > worst {
            worst = d;
        }
    }
    worst
}

/// Rebuild-and-score: image k's patches against every other image's.
pub fn oracle_loo(groups: &[Vec<Vec<f64>>]) -> Vec<f64> {
    (0..groups.len())
        .map(|k| {
            let rest: Vec<Vec<f64>> = groups
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != k)
                .flat_map(|(_, g)| g.iter().cloned())
                .collect();
            oracle_patch(&rest, &groups[k])
        })
        .collect()
}

pub fn oracle_auroc(normal: &[f64], anomalous: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in anomalous {
        for &n in normal {
            if a > n {
                wins += 1.0;
            } else if a == n {
                wins += 0.5;
            }
        }
    }
    wins / (normal.len() * anomalous.len()) as f64
}

pub fn random_vectors(r: &mut ChaCha8Rng, n: usize, d: usize, quantized: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if quantized {
                        r.gen_range(0..4) as f64 * 0.5
                    } else {
                        r.gen_range(-2.0..2.0)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn patch_grid(patches: &[Vec<f64>]) -> PatchGrid {
    let d = patches[0].len();
    PatchGrid {
        grid: Tensor::new(vec![1, patches.len(), d], patches.concat()).unwrap(),
        stride: 1,
    }
}

#[derive(Debug, Default)]
pub struct OracleTally {
    pub instances: usize,
    pub mismatches: Vec<String>,
}

/// Randomized instances of every nearest-neighbour score and of AUROC,
/// compared against the loops above: bit-equal scores, AUROC within 1e-12.
pub fn oracle_suite(n: u64) -> OracleTally {
    let mut tally = OracleTally::default();
    for seed in 0..n {
        let mut r = rng(5000 + seed);
        let quantized = seed % 3 == 0;
        let d = r.gen_range(1..6);
        let n_groups = r.gen_range(2..9);
        let group = r.gen_range(1..6);
        let groups: Vec<Vec<Vec<f64>>> = (0..n_groups)
            .map(|_| random_vectors(&mut r, group, d, quantized))
            .collect();
        let flat: Vec<f64> = groups.iter().flatten().flatten().copied().collect();
        let all: Vec<Vec<f64>> = groups.iter().flatten().cloned().collect();

        let bank = MemoryBank::new(BankKind::Patch, d, group, flat.clone()).unwrap();
        let q = random_vectors(&mut r, 1, d, quantized).remove(0);
        if nn_score(&bank, &q).unwrap().to_bits() != oracle_nn(&all, &q).to_bits() {
            tally.mismatches.push(format!("nn_score seed {seed}"));
        }
        let n_test = r.gen_range(1..10);
        let test = random_vectors(&mut r, n_test, d, quantized);
        if patch_score(&bank, &patch_grid(&test)).unwrap().to_bits() != oracle_patch(&all, &test).to_bits() {
            tally.mismatches.push(format!("patch_score seed {seed}"));
        }
        let loo = loo_scores(&flat, d, group).unwrap();
        let want = oracle_loo(&groups);
        if loo.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            tally.mismatches.push(format!("loo_scores seed {seed}"));
        }

        let normal: Vec<f64> = (0..r.gen_range(1..40))
            .map(|_| {
                if quantized {
                    r.gen_range(0..5) as f64
                } else {
                    r.gen_range(0.0..1.0)
                }
            })
            .collect();
        let anomalous: Vec<f64> = (0..r.gen_range(1..40))
            .map(|_| {
                if quantized {
                    r.gen_range(0..5) as f64
                } else {
                    r.gen_range(0.2..1.2)
                }
            })
            .collect();
        if (auroc(&normal, &anomalous).unwrap() - oracle_auroc(&normal, &anomalous)).abs() > 1e-12 {
            tally.mismatches.push(format!("auroc seed {seed}"));
        }
        tally.instances += 1;
    }
    tally
}

pub fn f32_values(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-100.0f32..100.0) as f64).collect()
}

pub fn random_classifier(r: &mut ChaCha8Rng) -> PixelClassifier {
    let in_dim = r.gen_range(1..8);
    let hidden = if r.gen_bool(0.5) { 0 } else { r.gen_range(1..6) };
    let c = r.gen_range(1..6);
    let n = PixelClassifier::num_params(in_dim, hidden, c);
    PixelClassifier::from_parts(
        in_dim,
        hidden,
        c,
        f32_values(r, in_dim),
        f32_values(r, in_dim),
        f32_values(r, n),
    )
    .unwrap()
}

pub fn random_bank(r: &mut ChaCha8Rng) -> MemoryBank {
    let kind = [BankKind::Hist, BankKind::Comp, BankKind::Patch][r.gen_range(0..3)];
    let group = if kind == BankKind::Patch { r.gen_range(1..5) } else { 1 };
    let d = r.gen_range(1..6);
    let n_groups = r.gen_range(2..7);
    MemoryBank::new(kind, d, group, f32_values(r, n_groups * group * d)).unwrap()
}

/// Encode/decode through real files for every on-disk format; returns the
/// names of formats whose round trip was not bit-exact.
pub fn format_suite(n: u64, dir: &std::path::Path) -> Vec<String> {
    use psad_core::tensorio::{read_segmap, read_tensor, write_segmap, write_tensor};
    let mut bad = Vec::new();
    for seed in 0..n {
        let mut r = rng(9000 + seed);
        let shape: Vec<usize> = (0..r.gen_range(1..5)).map(|_| r.gen_range(1..6)).collect();
        let len = shape.iter().product();
        let t = Tensor::new(
            shape,
            (0..len).map(|_| f32::from_bits(r.gen::<u32>() & 0x7f7f_ffff)).collect(),
        )
        .unwrap();
        let p = dir.join("t.pft");
        write_tensor(&t, &p).unwrap();
        let back = read_tensor(&p).unwrap();
        if back.shape() != t.shape()
            || back
                .data()
                .iter()
                .zip(t.data())
                .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            bad.push(format!("PFT1 seed {seed}"));
        }

        let (h, w, c) = (r.gen_range(1..40), r.gen_range(1..40), r.gen_range(1..300));
        let s = SegMap::new(h, w, c, (0..h * w).map(|_| r.gen_range(0..c as u16)).collect()).unwrap();
        let p = dir.join("s.psm");
        write_segmap(&s, &p).unwrap();
        if read_segmap(&p).unwrap() != s {
            bad.push(format!("PSM1 seed {seed}"));
        }

        let clf = random_classifier(&mut r);
        let p = dir.join("c.pcl");
        clf.save(&p).unwrap();
        if PixelClassifier::load(&p).unwrap() != clf {
            bad.push(format!("PCL1 seed {seed}"));
        }

        let bank = random_bank(&mut r);
        let p = dir.join("b.pmb");
        std::fs::write(&p, bank.encode()).unwrap();
        if MemoryBank::decode(&std::fs::read(&p).unwrap()).unwrap() != bank {
            bad.push(format!("PMB1 seed {seed}"));
        }
    }
    bad
}
