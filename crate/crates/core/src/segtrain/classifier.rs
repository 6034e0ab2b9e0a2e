use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PsadError, Result};
use crate::featex::PixelFeatureMap;
use crate::tensorio::{read_file, write_file, ByteReader, ByteWriter, ProbMap, SegMap};

pub const CLASSIFIER_MAGIC: &[u8; 4] = b"PCL1";

/// Per-pixel softmax classifier over standardized features and coordinates.
///
/// Linear by default; `hidden > 0` inserts one ReLU layer of that width.
/// Parameters live in one flat vector:
/// `W1 [in x k] | b1 [k] | W2 [k x C] | b2 [C]` (hidden) or `W [in x C] | b [C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelClassifier {
    in_dim: usize,
    hidden: usize,
    n_classes: usize,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    params: Vec<f64>,
}

/// Per-pixel activations retained for the backward pass.
pub struct ForwardCache {
    inputs: Vec<f64>,
    hidden: Vec<f64>,
}

impl PixelClassifier {
    pub fn num_params(in_dim: usize, hidden: usize, n_classes: usize) -> usize {
        if hidden == 0 {
            in_dim * n_classes + n_classes
        } else {
            in_dim * hidden + hidden + hidden * n_classes + n_classes
        }
    }

    /// Identity input normalization, all-zero parameters.
    pub fn zeros(in_dim: usize, hidden: usize, n_classes: usize) -> Self {
        PixelClassifier {
            in_dim,
            hidden,
            n_classes,
            input_mean: vec![0.0; in_dim],
            input_scale: vec![1.0; in_dim],
            params: vec![0.0; Self::num_params(in_dim, hidden, n_classes)],
        }
    }

    /// Zero-initialized linear head, or He-uniform first layer when hidden.
    pub fn initialized(in_dim: usize, hidden: usize, n_classes: usize, seed: u64) -> Self {
        let mut clf = Self::zeros(in_dim, hidden, n_classes);
        if hidden > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a1 = (6.0 / in_dim as f64).sqrt();
            for w in &mut clf.params[..in_dim * hidden] {
                *w = rng.gen_range(-a1..a1);
            }
            let off = in_dim * hidden + hidden;
            let a2 = (1.0 / hidden as f64).sqrt();
            for w in &mut clf.params[off..off + hidden * n_classes] {
                *w = rng.gen_range(-a2..a2);
            }
        }
        clf
    }

    pub fn from_parts(
        in_dim: usize,
        hidden: usize,
        n_classes: usize,
        input_mean: Vec<f64>,
        input_scale: Vec<f64>,
        params: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || n_classes == 0 {
            return Err(PsadError::Contract("classifier dimensions must be positive".into()));
        }
        if input_mean.len() != in_dim || input_scale.len() != in_dim {
            return Err(PsadError::Contract(
                "normalization length differs from input dim".into(),
            ));
        }
        if params.len() != Self::num_params(in_dim, hidden, n_classes) {
            return Err(PsadError::Contract(format!(
                "expected {} parameters, got {}",
                Self::num_params(in_dim, hidden, n_classes),
                params.len()
            )));
        }
        Ok(PixelClassifier {
            in_dim,
            hidden,
            n_classes,
            input_mean,
            input_scale,
            params,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_normalization(&mut self, mean: Vec<f64>, scale: Vec<f64>) {
        assert_eq!(mean.len(), self.in_dim);
        assert_eq!(scale.len(), self.in_dim);
        self.input_mean = mean;
        self.input_scale = scale;
    }

    /// Rounds every stored value to `f32` precision, matching what a
    /// checkpoint file can hold.
    pub fn round_to_f32(&mut self) {
        for v in self
            .params
            .iter_mut()
            .chain(self.input_mean.iter_mut())
            .chain(self.input_scale.iter_mut())
        {
            *v = *v as f32 as f64;
        }
    }

    fn check_features(&self, feats: &PixelFeatureMap) -> Result<()> {
        if feats.input_dim() != self.in_dim {
            return Err(PsadError::Contract(format!(
                "classifier expects {} input features, feature map provides {}",
                self.in_dim,
                feats.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits `[P, C]` plus the cache needed by [`Self::backward`].
    pub fn forward(&self, feats: &PixelFeatureMap) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_features(feats)?;
        let (d, k, c) = (self.in_dim, self.hidden, self.n_classes);
        let n = feats.num_pixels();
        let mut inputs = vec![0.0; n * d];
        for (p, x) in inputs.chunks_exact_mut(d).enumerate() {
            feats.input_row(p, x);
            for ((v, m), s) in x.iter_mut().zip(&self.input_mean).zip(&self.input_scale) {
                *v = (*v - m) / s;
            }
        }
        let mut logits = vec![0.0; n * c];
        let mut hidden = Vec::new();
        if k == 0 {
            let (w, b) = self.params.split_at(d * c);
            affine(&inputs, w, b, d, c, &mut logits);
        } else {
            let (w1, rest) = self.params.split_at(d * k);
            let (b1, rest) = rest.split_at(k);
            let (w2, b2) = rest.split_at(k * c);
            hidden = vec![0.0; n * k];
            affine(&inputs, w1, b1, d, k, &mut hidden);
            hidden.iter_mut().for_each(|h| *h = h.max(0.0));
            affine(&hidden, w2, b2, k, c, &mut logits);
        }
        Ok((logits, ForwardCache { inputs, hidden }))
    }

    /// Parameter gradient given `dL/dlogits`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Vec<f64> {
        let (d, k, c) = (self.in_dim, self.hidden, self.n_classes);
        let mut grad = vec![0.0; self.params.len()];
        if k == 0 {
            let (gw, gb) = grad.split_at_mut(d * c);
            affine_backward(&cache.inputs, grad_logits, d, c, gw, gb);
        } else {
            let (gw1, rest) = grad.split_at_mut(d * k);
            let (gb1, rest) = rest.split_at_mut(k);
            let (gw2, gb2) = rest.split_at_mut(k * c);
            affine_backward(&cache.hidden, grad_logits, k, c, gw2, gb2);
            let w2 = &self.params[d * k + k..d * k + k + k * c];
            let n = grad_logits.len() / c;
            let mut grad_hidden = vec![0.0; n * k];
            for p in 0..n {
                let gl = &grad_logits[p * c..(p + 1) * c];
                let h = &cache.hidden[p * k..(p + 1) * k];
                for j in 0..k {
                    if h[j] > 0.0 {
                        let row = &w2[j * c..(j + 1) * c];
                        grad_hidden[p * k + j] = row.iter().zip(gl).map(|(w, g)| w * g).sum();
                    }
                }
            }
            affine_backward(&cache.inputs, &grad_hidden, d, k, gw1, gb1);
        }
        grad
    }

    pub fn probabilities(&self, feats: &PixelFeatureMap) -> Result<ProbMap> {
        let (logits, _) = self.forward(feats)?;
        Ok(ProbMap::from_logits(
            feats.height(),
            feats.width(),
            self.n_classes,
            &logits,
        ))
    }

    pub fn encode(&self) -> Vec<u8> {
        let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        let mut w = ByteWriter::new();
        w.bytes(CLASSIFIER_MAGIC)
            .u32(self.in_dim as u32)
            .u32(self.hidden as u32)
            .u32(self.n_classes as u32)
            .f32s(&to32(&self.input_mean))
            .f32s(&to32(&self.input_scale))
            .f32s(&to32(&self.params));
        w.into_bytes()
    }

    pub fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(CLASSIFIER_MAGIC)?;
        let in_dim = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let n_classes = r.u32()? as usize;
        if in_dim == 0 || n_classes == 0 || n_classes > u16::MAX as usize {
            return Err(PsadError::Format(format!(
                "implausible classifier dims in={in_dim} classes={n_classes}"
            )));
        }
        let to64 = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
        let mean = to64(r.f32s(in_dim)?);
        let scale = to64(r.f32s(in_dim)?);
        let params = to64(r.f32s(Self::num_params(in_dim, hidden, n_classes))?);
        Self::from_parts(in_dim, hidden, n_classes, mean, scale, params).map_err(|e| PsadError::Format(e.to_string()))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let clf = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(clf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_file(path, &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        Self::decode(&bytes).map_err(|e| crate::tensorio::with_path(e, path))
    }
}

/// `out[p] = x[p] W + b` for row-major `W [d_in x d_out]`.
fn affine(x: &[f64], w: &[f64], b: &[f64], d_in: usize, d_out: usize, out: &mut [f64]) {
    for (xr, or) in x.chunks_exact(d_in).zip(out.chunks_exact_mut(d_out)) {
        or.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wr = &w[i * d_out..(i + 1) * d_out];
            for (o, &wij) in or.iter_mut().zip(wr) {
                *o += xi * wij;
            }
        }
    }
}

fn affine_backward(x: &[f64], g: &[f64], d_in: usize, d_out: usize, gw: &mut [f64], gb: &mut [f64]) {
    for (xr, gr) in x.chunks_exact(d_in).zip(g.chunks_exact(d_out)) {
        for (b, &gj) in gb.iter_mut().zip(gr) {
            *b += gj;
        }
        for (i, &xi) in xr.iter().enumerate() {
            let row = &mut gw[i * d_out..(i + 1) * d_out];
            for (w, &gj) in row.iter_mut().zip(gr) {
                *w += xi * gj;
            }
        }
    }
}

/// Softmax probabilities and per-pixel argmax (ties to the lowest class).
pub fn predict(clf: &PixelClassifier, feats: &PixelFeatureMap) -> Result<(ProbMap, SegMap)> {
    let probs = clf.probabilities(feats)?;
    let seg = probs.argmax();
    Ok((probs, seg))
}
