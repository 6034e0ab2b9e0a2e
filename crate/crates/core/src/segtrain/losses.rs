//! Segmentation losses with gradients taken with respect to the pre-softmax
//! logits, laid out `[pixel, class]` like [`ProbMap::probs`].

use crate::error::{PsadError, Result};
use crate::tensorio::{ProbMap, SegMap};

/// Probability floor inside logarithms.
pub const LOG_EPS: f64 = 1e-12;
/// Additive smoothing of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_shapes(p: &ProbMap, y: &SegMap) -> Result<()> {
    if p.height() != y.height() || p.width() != y.width() || p.n_classes() != y.n_classes() {
        return Err(PsadError::Contract(format!(
            "prediction {}x{}x{} does not match labels {}x{}x{}",
            p.height(),
            p.width(),
            p.n_classes(),
            y.height(),
            y.width(),
            y.n_classes()
        )));
    }
    Ok(())
}

/// Pulls `dL/dp` back through the row-wise softmax: `p_m (g_m - <p, g>)`.
fn softmax_backward(p: &ProbMap, mut grad_p: Vec<f64>) -> Vec<f64> {
    let c = p.n_classes();
    for (row, g) in p.probs().chunks_exact(c).zip(grad_p.chunks_exact_mut(c)) {
        let dot: f64 = row.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for (gm, &pm) in g.iter_mut().zip(row) {
            *gm = pm * (*gm - dot);
        }
    }
    grad_p
}

/// Mean pixel-wise cross-entropy.
pub fn ce_loss(p: &ProbMap, y: &SegMap) -> Result<LossGrad> {
    check_shapes(p, y)?;
    let c = p.n_classes();
    let n = p.num_pixels() as f64;
    let mut value = 0.0;
    let mut grad = p.probs().to_vec();
    for (i, &label) in y.labels().iter().enumerate() {
        let label = label as usize;
        value -= p.row(i)[label].max(LOG_EPS).ln();
        grad[i * c + label] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(LossGrad { value: value / n, grad })
}

/// Multi-class soft Dice, averaged over classes, smoothed by [`DICE_SMOOTH`].
pub fn dice_loss(p: &ProbMap, y: &SegMap) -> Result<LossGrad> {
    check_shapes(p, y)?;
    let c = p.n_classes();
    let mut inter = vec![0.0; c];
    let mut pred = vec![0.0; c];
    let mut truth = vec![0.0; c];
    for (i, &label) in y.labels().iter().enumerate() {
        let row = p.row(i);
        for n in 0..c {
            pred[n] += row[n];
        }
        inter[label as usize] += row[label as usize];
        truth[label as usize] += 1.0;
    }
    let denom: Vec<f64> = (0..c).map(|n| pred[n] + truth[n] + DICE_SMOOTH).collect();
    let numer: Vec<f64> = (0..c).map(|n| 2.0 * inter[n] + DICE_SMOOTH).collect();
    let value = 1.0 - (0..c).map(|n| numer[n] / denom[n]).sum::<f64>() / c as f64;

    let mut grad_p = vec![0.0; p.probs().len()];
    for (i, &label) in y.labels().iter().enumerate() {
        for n in 0..c {
            let y_in = if label as usize == n { 1.0 } else { 0.0 };
            grad_p[i * c + n] = -(2.0 * y_in * denom[n] - numer[n]) / (denom[n] * denom[n]) / c as f64;
        }
    }
    Ok(LossGrad {
        value,
        grad: softmax_backward(p, grad_p),
    })
}

/// Mean pixel-wise Shannon entropy.
pub fn entropy_loss(p: &ProbMap) -> LossGrad {
    let n = p.num_pixels() as f64;
    let mut value = 0.0;
    let grad_p: Vec<f64> = p
        .probs()
        .iter()
        .map(|&q| {
            let l = q.max(LOG_EPS).ln();
            value -= q * l;
            if q > LOG_EPS {
                -(l + 1.0) / n
            } else {
                -l / n
            }
        })
        .collect();
    LossGrad {
        value: value / n,
        grad: softmax_backward(p, grad_p),
    }
}

/// Mean absolute difference between a reference map's class fractions and
/// the soft class fractions of an unlabeled prediction. Both must belong to
/// the same product type.
pub fn hist_loss(p_u: &ProbMap, u_type: u32, y_l: &SegMap, l_type: u32) -> Result<LossGrad> {
    if u_type != l_type {
        return Err(PsadError::Contract(format!(
            "histogram reference of product type {l_type} used for an image of type {u_type}"
        )));
    }
    if p_u.n_classes() != y_l.n_classes() {
        return Err(PsadError::Contract(format!(
            "class count mismatch: {} vs {}",
            p_u.n_classes(),
            y_l.n_classes()
        )));
    }
    let c = p_u.n_classes();
    let n_u = p_u.num_pixels() as f64;
    let n_l = y_l.num_pixels() as f64;
    let target: Vec<f64> = y_l.class_counts().iter().map(|&k| k as f64 / n_l).collect();
    let mut soft = vec![0.0; c];
    for row in p_u.probs().chunks_exact(c) {
        for (s, &q) in soft.iter_mut().zip(row) {
            *s += q;
        }
    }
    soft.iter_mut().for_each(|s| *s /= n_u);

    let value = target.iter().zip(&soft).map(|(t, q)| (t - q).abs()).sum::<f64>() / c as f64;
    // d|t - q|/dq = -sign(t - q), with sign(0) = 0 at the kink.
    let dq: Vec<f64> = target
        .iter()
        .zip(&soft)
        .map(|(t, q)| {
            let d = t - q;
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            -s / (c as f64 * n_u)
        })
        .collect();
    let grad_p: Vec<f64> = (0..p_u.probs().len()).map(|k| dq[k % c]).collect();
    Ok(LossGrad {
        value,
        grad: softmax_backward(p_u, grad_p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(y: &SegMap) -> ProbMap {
        let c = y.n_classes();
        let mut probs = vec![0.0; y.num_pixels() * c];
        for (i, &l) in y.labels().iter().enumerate() {
            probs[i * c + l as usize] = 1.0;
        }
        ProbMap::new(y.height(), y.width(), c, probs).unwrap()
    }

    fn uniform(h: usize, w: usize, c: usize) -> ProbMap {
        ProbMap::new(h, w, c, vec![1.0 / c as f64; h * w * c]).unwrap()
    }

    #[test]
    fn ce_zero_and_uniform() {
        let y = SegMap::new(2, 3, 4, vec![0, 1, 2, 3, 0, 1]).unwrap();
        assert_eq!(ce_loss(&onehot(&y), &y).unwrap().value, 0.0);
        let v = ce_loss(&uniform(2, 3, 4), &y).unwrap().value;
        assert!((v - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_clamps_zero_probability() {
        let y = SegMap::new(1, 1, 2, vec![1]).unwrap();
        let p = ProbMap::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let v = ce_loss(&p, &y).unwrap().value;
        assert!((v + LOG_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn dice_perfect_and_disjoint() {
        // 2 classes, 1024 pixels each.
        let labels: Vec<u16> = (0..2048).map(|i| (i % 2) as u16).collect();
        let y = SegMap::new(32, 64, 2, labels).unwrap();
        assert!(dice_loss(&onehot(&y), &y).unwrap().value < 1e-3);

        // All mass on class 2, which never appears in y.
        let y = SegMap::new(32, 64, 3, (0..2048).map(|i| (i % 2) as u16).collect()).unwrap();
        let mut probs = vec![0.0; 2048 * 3];
        for i in 0..2048 {
            probs[i * 3 + 2] = 1.0;
        }
        let p = ProbMap::new(32, 64, 3, probs).unwrap();
        // Classes 0/1: eps/(1024+eps); class 2: eps/(2048+eps).
        let expected = 1.0 - (2.0 / 1025.0 + 1.0 / 2049.0) / 3.0;
        assert!((dice_loss(&p, &y).unwrap().value - expected).abs() < 1e-12);
        assert!(dice_loss(&p, &y).unwrap().value > 0.99);
    }

    #[test]
    fn entropy_onehot_and_uniform() {
        let y = SegMap::new(2, 2, 5, vec![0, 4, 2, 1]).unwrap();
        assert_eq!(entropy_loss(&onehot(&y)).value, 0.0);
        assert!((entropy_loss(&uniform(3, 3, 5)).value - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hist_zero_case_and_hand_value() {
        let y = SegMap::new(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(hist_loss(&onehot(&y), 0, &y, 0).unwrap().value, 0.0);

        // Soft fractions (0.25, 0.75) against (0.5, 0.5).
        let p = ProbMap::new(2, 2, 2, vec![0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75]).unwrap();
        assert!((hist_loss(&p, 0, &y, 0).unwrap().value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn hist_rejects_type_mismatch() {
        let y = SegMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let err = hist_loss(&onehot(&y), 1, &y, 0).unwrap_err();
        assert!(matches!(err, PsadError::Contract(_)));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let y = SegMap::new(1, 2, 2, vec![0, 1]).unwrap();
        assert!(ce_loss(&uniform(2, 1, 2), &y).is_err());
        assert!(dice_loss(&uniform(1, 2, 3), &y).is_err());
    }
}
