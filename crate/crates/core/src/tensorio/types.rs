use crate::error::{PsadError, Result};

/// Row-major dense array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(PsadError::Contract("tensor must have at least one dimension".into()));
        }
        if shape.contains(&0) {
            return Err(PsadError::Contract(format!("zero-sized dimension in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(PsadError::Contract(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(H, W, C)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(PsadError::Contract(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Channel slice of pixel `(y, x)` of an `[H, W, C]` tensor.
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let (w, c) = (self.shape[1], self.shape[2]);
        let at = (y * w + x) * c;
        &self.data[at..at + c]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Tensor<f32> {
    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(f64::from)
    }
}

impl Tensor<f64> {
    pub fn to_f32(&self) -> Tensor<f32> {
        self.map(|v| v as f32)
    }
}

/// Hard per-pixel class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    height: usize,
    width: usize,
    n_classes: usize,
    labels: Vec<u16>,
}

impl SegMap {
    pub fn new(height: usize, width: usize, n_classes: usize, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(PsadError::Contract("segmap dimensions must be positive".into()));
        }
        if n_classes == 0 || n_classes > u16::MAX as usize {
            return Err(PsadError::Contract(format!("invalid class count {n_classes}")));
        }
        if labels.len() != height * width {
            return Err(PsadError::Contract(format!(
                "segmap {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(PsadError::Contract(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(SegMap {
            height,
            width,
            n_classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    /// Pixel count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Per-pixel class probabilities, `[H, W, N_C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    n_classes: usize,
    probs: Vec<f64>,
}

impl ProbMap {
    pub const SIMPLEX_TOL: f64 = 1e-6;

    pub fn new(height: usize, width: usize, n_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != height * width * n_classes || n_classes == 0 {
            return Err(PsadError::Contract(format!(
                "probmap {height}x{width}x{n_classes} got {} values",
                probs.len()
            )));
        }
        let map = ProbMap {
            height,
            width,
            n_classes,
            probs,
        };
        if !map.is_valid() {
            return Err(PsadError::Contract("probability rows are not on the simplex".into()));
        }
        Ok(map)
    }

    /// Row-wise softmax of `[P, N_C]` logits.
    pub fn from_logits(height: usize, width: usize, n_classes: usize, logits: &[f64]) -> Self {
        assert_eq!(logits.len(), height * width * n_classes);
        let mut probs = vec![0.0; logits.len()];
        for (row, out) in logits.chunks_exact(n_classes).zip(probs.chunks_exact_mut(n_classes)) {
            softmax_into(row, out);
        }
        ProbMap {
            height,
            width,
            n_classes,
            probs,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.probs[pixel * self.n_classes..(pixel + 1) * self.n_classes]
    }

    pub fn is_valid(&self) -> bool {
        self.probs.chunks_exact(self.n_classes).all(|row| {
            row.iter().all(|&p| (0.0..=1.0).contains(&p)) && (row.iter().sum::<f64>() - 1.0).abs() <= Self::SIMPLEX_TOL
        })
    }

    /// Per-pixel argmax; ties resolve to the lowest class index.
    pub fn argmax(&self) -> SegMap {
        let labels = self
            .probs
            .chunks_exact(self.n_classes)
            .map(|row| {
                let mut best = 0;
                for (n, &p) in row.iter().enumerate().skip(1) {
                    if p > row[best] {
                        best = n;
                    }
                }
                best as u16
            })
            .collect();
        SegMap {
            height: self.height,
            width: self.width,
            n_classes: self.n_classes,
            labels,
        }
    }
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
