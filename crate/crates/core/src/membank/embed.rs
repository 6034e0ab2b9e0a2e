use crate::error::{PsadError, Result};
use crate::featex::{patch_embeddings_from, PixelFeatureMap};
use crate::segtrain::{predict, PixelClassifier};
use crate::tensorio::{SegMap, Tensor};

/// Per-class pixel fractions, background included.
pub fn class_histogram(seg: &SegMap, n_classes: usize) -> Vec<f64> {
    let mut hist = vec![0.0; n_classes];
    for &l in seg.labels() {
        hist[l as usize] += 1.0;
    }
    let n = seg.num_pixels() as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    hist
}

/// Concatenated per-class mean feature vectors; absent classes give zeros.
pub fn composition_embedding(feats: &Tensor<f64>, seg: &SegMap, n_classes: usize) -> Result<Vec<f64>> {
    let (h, w, d) = feats.dims3()?;
    if (h, w) != (seg.height(), seg.width()) {
        return Err(PsadError::Contract(format!(
            "feature map {h}x{w} does not match segmentation {}x{}",
            seg.height(),
            seg.width()
        )));
    }
    let mut sums = vec![0.0; n_classes * d];
    let mut counts = vec![0usize; n_classes];
    for (px, &l) in feats.data().chunks_exact(d).zip(seg.labels()) {
        let l = l as usize;
        counts[l] += 1;
        for (s, &v) in sums[l * d..(l + 1) * d].iter_mut().zip(px) {
            *s += v;
        }
    }
    for (block, &n) in sums.chunks_exact_mut(d).zip(&counts) {
        if n > 0 {
            block.iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    Ok(sums)
}

/// Everything one image contributes to (or is scored against) the banks.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbeddings {
    pub hist: Vec<f64>,
    pub comp: Vec<f64>,
    /// `n_patches x dim`, row-major.
    pub patches: Vec<f64>,
    pub patch_dim: usize,
    pub seg: SegMap,
}

impl ImageEmbeddings {
    pub fn num_patches(&self) -> usize {
        self.patches.len() / self.patch_dim
    }

    pub(crate) fn round_to_f32(&mut self) {
        for v in self.hist.iter_mut().chain(&mut self.comp).chain(&mut self.patches) {
            *v = *v as f32 as f64;
        }
    }
}

pub fn embed_features(clf: &PixelClassifier, feats: &PixelFeatureMap, stride: usize) -> Result<ImageEmbeddings> {
    let (_, seg) = predict(clf, feats)?;
    let n_classes = clf.n_classes();
    let grid = patch_embeddings_from(feats, stride)?;
    let patch_dim = grid.dim();
    Ok(ImageEmbeddings {
        hist: class_histogram(&seg, n_classes),
        comp: composition_embedding(&feats.visual, &seg, n_classes)?,
        patches: grid.grid.into_data(),
        patch_dim,
        seg,
    })
}
