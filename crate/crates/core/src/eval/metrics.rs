use serde::{Deserialize, Serialize};

use crate::error::{PsadError, Result};
use crate::synthgen::SampleLabel;
use crate::tensorio::SegMap;

/// Mann-Whitney AUROC with ties credited one half.
///
/// The result is computed from whichever side has the smaller U statistic
/// and mirrored, so `auroc(a, b) + auroc(b, a) == 1.0` holds exactly.
pub fn auroc(normal: &[f64], anomalous: &[f64]) -> Result<f64> {
    if normal.is_empty() || anomalous.is_empty() {
        return Err(PsadError::Contract(format!(
            "AUROC needs both classes, got {} normal and {} anomalous scores",
            normal.len(),
            anomalous.len()
        )));
    }
    if normal.iter().chain(anomalous).any(|v| v.is_nan()) {
        return Err(PsadError::Contract("NaN score passed to AUROC".into()));
    }
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&v| (v, false))
        .chain(anomalous.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Rank sum of the anomalous side, doubled so tied midranks stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let n_anom = all[i..j].iter().filter(|e| e.1).count() as u128;
        // Ranks i+1..=j, mean (i + 1 + j) / 2.
        rank_sum2 += n_anom * (i as u128 + 1 + j as u128);
        i = j;
    }
    let (n, m) = (normal.len() as u128, anomalous.len() as u128);
    let u2 = rank_sum2 - m * (m + 1);
    let total2 = 2 * n * m;
    let other2 = total2 - u2;
    Ok(if u2 <= other2 {
        u2 as f64 / total2 as f64
    } else {
        1.0 - other2 as f64 / total2 as f64
    })
}

/// Which score a histogram or AUROC is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSelector {
    Hist,
    Comp,
    Patch,
    Final,
}

impl ScoreSelector {
    pub const ALL: [ScoreSelector; 4] = [
        ScoreSelector::Hist,
        ScoreSelector::Comp,
        ScoreSelector::Patch,
        ScoreSelector::Final,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreSelector::Hist => "hist",
            ScoreSelector::Comp => "comp",
            ScoreSelector::Patch => "patch",
            ScoreSelector::Final => "final",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub label: SampleLabel,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub anomaly: Option<String>,
    /// Unscaled nearest-neighbour scores (hist, comp, patch).
    pub raw: [f64; 3],
    pub s_hist: f64,
    pub s_comp: f64,
    pub s_patch: f64,
    pub s_final: f64,
}

impl ScoredSample {
    pub fn get(&self, sel: ScoreSelector) -> f64 {
        match sel {
            ScoreSelector::Hist => self.s_hist,
            ScoreSelector::Comp => self.s_comp,
            ScoreSelector::Patch => self.s_patch,
            ScoreSelector::Final => self.s_final,
        }
    }

    /// Sum over the selected banks of either normalized or raw scores.
    pub fn combined(&self, banks: [bool; 3], scaled: bool) -> f64 {
        let vals = if scaled {
            [self.s_hist, self.s_comp, self.s_patch]
        } else {
            self.raw
        };
        vals.iter().zip(banks).filter(|(_, on)| *on).map(|(v, _)| v).sum()
    }
}

/// LA and SA AUROC of an arbitrary per-sample score against the normal pool.
pub fn label_aurocs(samples: &[ScoredSample], score: impl Fn(&ScoredSample) -> f64) -> Result<(f64, f64)> {
    let pick = |l: SampleLabel| samples.iter().filter(|s| s.label == l).map(&score).collect::<Vec<_>>();
    let normal = pick(SampleLabel::Normal);
    Ok((
        auroc(&normal, &pick(SampleLabel::Logical))?,
        auroc(&normal, &pick(SampleLabel::Structural))?,
    ))
}

/// Equal-width binned counts per label over `[0, max score]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreHistogram {
    pub selector: ScoreSelector,
    /// `n_bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub normal: Vec<usize>,
    pub logical: Vec<usize>,
    pub structural: Vec<usize>,
}

impl ScoreHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,normal,LA,SA\n");
        for b in 0..self.normal.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.edges[b],
                self.edges[b + 1],
                self.normal[b],
                self.logical[b],
                self.structural[b]
            ));
        }
        out
    }
}

pub fn score_histogram(samples: &[ScoredSample], selector: ScoreSelector, n_bins: usize) -> Result<ScoreHistogram> {
    if n_bins == 0 {
        return Err(PsadError::Contract("histogram needs at least one bin".into()));
    }
    let max = samples.iter().map(|s| s.get(selector)).fold(0.0, f64::max);
    let edges = (0..=n_bins).map(|b| max * b as f64 / n_bins as f64).collect();
    let mut hist = ScoreHistogram {
        selector,
        edges,
        normal: vec![0; n_bins],
        logical: vec![0; n_bins],
        structural: vec![0; n_bins],
    };
    for s in samples {
        let v = s.get(selector);
        let bin = if max > 0.0 {
            ((v / max * n_bins as f64) as usize).min(n_bins - 1)
        } else {
            0
        };
        match s.label {
            SampleLabel::Normal => hist.normal[bin] += 1,
            SampleLabel::Logical => hist.logical[bin] += 1,
            SampleLabel::Structural => hist.structural[bin] += 1,
        }
    }
    Ok(hist)
}

/// Per-class IoU pooled over all pixels of all image pairs. A class absent
/// from both predictions and ground truth gets `None`.
pub fn class_iou(pairs: &[(&SegMap, &SegMap)], n_classes: usize) -> Result<Vec<Option<f64>>> {
    let mut inter = vec![0u64; n_classes];
    let mut union = vec![0u64; n_classes];
    for (pred, gt) in pairs {
        if pred.labels().len() != gt.labels().len() {
            return Err(PsadError::Contract("prediction and ground truth differ in size".into()));
        }
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            let (p, g) = (p as usize, g as usize);
            if p >= n_classes || g >= n_classes {
                return Err(PsadError::Contract(format!("label outside {n_classes} classes")));
            }
            if p == g {
                inter[p] += 1;
                union[p] += 1;
            } else {
                union[p] += 1;
                union[g] += 1;
            }
        }
    }
    Ok(inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.75);
        assert_eq!(auroc(&[2.0, 4.0], &[1.0, 3.0]).unwrap(), 0.25);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
    }

    fn sample(label: SampleLabel, v: f64) -> ScoredSample {
        ScoredSample {
            id: String::new(),
            label,
            anomaly: None,
            raw: [v; 3],
            s_hist: v,
            s_comp: v,
            s_patch: v,
            s_final: 3.0 * v,
        }
    }

    #[test]
    fn histogram_single_and_constant() {
        let h = score_histogram(&[sample(SampleLabel::Logical, 0.7)], ScoreSelector::Hist, 4).unwrap();
        assert_eq!(h.logical, vec![0, 0, 0, 1]);
        assert_eq!(h.normal.iter().sum::<usize>(), 0);

        let same: Vec<_> = (0..5).map(|_| sample(SampleLabel::Normal, 0.0)).collect();
        let h = score_histogram(&same, ScoreSelector::Final, 3).unwrap();
        assert_eq!(h.normal, vec![5, 0, 0]);
        assert!(score_histogram(&same, ScoreSelector::Final, 0).is_err());
        assert!(h.to_csv().starts_with("bin_start,bin_end,normal,LA,SA\n0,0,5,0,0\n"));
    }

    #[test]
    fn iou_pooled() {
        let a = SegMap::new(1, 4, 2, vec![0, 0, 1, 1]).unwrap();
        let b = SegMap::new(1, 4, 2, vec![0, 1, 1, 1]).unwrap();
        let iou = class_iou(&[(&a, &b)], 3).unwrap();
        assert_eq!(iou, vec![Some(0.5), Some(2.0 / 3.0), None]);
    }
}
