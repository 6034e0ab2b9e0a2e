//! Training-free feature extraction.
//!
//! Per pixel and per window radius in [`SCALES`] we compute the channel-wise
//! box mean, the gradient magnitude of that box mean (central differences),
//! and the local standard deviation. Windows use replicate padding, so every
//! map keeps the input's spatial size. Coordinates are kept separately so the
//! patch bank can stay position-agnostic.

use crate::error::{PsadError, Result};
use crate::tensorio::Tensor;

/// Box-window radii, smallest first.
pub const SCALES: [usize; 3] = [1, 4, 16];
/// mean + gradient + std, each over 3 color channels.
pub const FEATURES_PER_SCALE: usize = 9;
pub const VISUAL_DIM: usize = SCALES.len() * FEATURES_PER_SCALE;
pub const COORD_DIM: usize = 2;
pub const DEFAULT_STRIDE: usize = 8;
/// Smallest accepted image side: the widest window must fit.
pub const MIN_SIDE: usize = 2 * SCALES[SCALES.len() - 1] + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureMap {
    /// `[H, W, VISUAL_DIM]`
    pub visual: Tensor<f64>,
    /// `[H, W, 2]`, `(x / (W-1), y / (H-1))`.
    pub coords: Tensor<f64>,
}

impl PixelFeatureMap {
    pub fn height(&self) -> usize {
        self.visual.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.visual.shape()[1]
    }

    pub fn num_pixels(&self) -> usize {
        self.height() * self.width()
    }

    /// Width of the classifier input: visual features plus coordinates.
    pub fn input_dim(&self) -> usize {
        VISUAL_DIM + COORD_DIM
    }

    /// Writes the classifier input of pixel `p` (row-major index) into `out`.
    pub fn input_row(&self, p: usize, out: &mut [f64]) {
        out[..VISUAL_DIM].copy_from_slice(&self.visual.data()[p * VISUAL_DIM..(p + 1) * VISUAL_DIM]);
        out[VISUAL_DIM..].copy_from_slice(&self.coords.data()[p * COORD_DIM..(p + 1) * COORD_DIM]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    /// `[H_p, W_p, VISUAL_DIM]`
    pub grid: Tensor<f64>,
    pub stride: usize,
}

impl PatchGrid {
    pub fn num_patches(&self) -> usize {
        self.grid.shape()[0] * self.grid.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.grid.shape()[2]
    }

    pub fn patches(&self) -> impl Iterator<Item = &[f64]> {
        self.grid.data().chunks_exact(self.dim())
    }
}

fn check_image(image: &Tensor<f32>) -> Result<(usize, usize)> {
    let (h, w, c) = image.dims3()?;
    if c != 3 {
        return Err(PsadError::Contract(format!("expected 3 color channels, got {c}")));
    }
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(PsadError::Size(format!(
            "image {h}x{w} is smaller than the {MIN_SIDE}x{MIN_SIDE} window"
        )));
    }
    Ok((h, w))
}

/// Summed-area table over a replicate-padded single channel.
struct PaddedIntegral {
    sums: Vec<f64>,
    sq_sums: Vec<f64>,
    stride: usize,
}

impl PaddedIntegral {
    fn new(plane: &[f64], h: usize, w: usize, pad: usize) -> Self {
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let stride = pw + 1;
        let mut sums = vec![0.0; (ph + 1) * stride];
        let mut sq_sums = vec![0.0; (ph + 1) * stride];
        for py in 0..ph {
            let y = py.saturating_sub(pad).min(h - 1);
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for px in 0..pw {
                let x = px.saturating_sub(pad).min(w - 1);
                let v = plane[y * w + x];
                row += v;
                row_sq += v * v;
                let at = (py + 1) * stride + px + 1;
                sums[at] = sums[at - stride] + row;
                sq_sums[at] = sq_sums[at - stride] + row_sq;
            }
        }
        PaddedIntegral { sums, sq_sums, stride }
    }

    /// Sum and squared sum over the `(2r+1)^2` window centered on original pixel `(y, x)`.
    fn window(&self, y: usize, x: usize, pad: usize, r: usize) -> (f64, f64) {
        // Padded coordinates of the window's top-left and bottom-right (inclusive).
        let (y0, x0) = (y + pad - r, x + pad - r);
        let (y1, x1) = (y + pad + r + 1, x + pad + r + 1);
        let s = self.stride;
        let rect = |t: &[f64]| t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0];
        (rect(&self.sums), rect(&self.sq_sums))
    }
}

/// Per-pixel multi-scale features plus normalized coordinates.
pub fn pixel_features(image: &Tensor<f32>) -> Result<PixelFeatureMap> {
    let (h, w) = check_image(image)?;
    let pad = SCALES[SCALES.len() - 1];
    let mut visual = vec![0.0f64; h * w * VISUAL_DIM];

    for ch in 0..3 {
        // Offsetting by a reference value keeps constant images exactly
        // constant through the summed-area tables.
        let reference = image.data()[ch] as f64;
        let plane: Vec<f64> = image
            .data()
            .chunks_exact(3)
            .map(|px| px[ch] as f64 - reference)
            .collect();
        let integral = PaddedIntegral::new(&plane, h, w, pad);

        for (si, &r) in SCALES.iter().enumerate() {
            let n = ((2 * r + 1) * (2 * r + 1)) as f64;
            let mut mean = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    let (s, sq) = integral.window(y, x, pad, r);
                    let m = s / n;
                    let var = (sq / n - m * m).max(0.0);
                    let p = y * w + x;
                    mean[p] = m;
                    let base = p * VISUAL_DIM + si * FEATURES_PER_SCALE;
                    visual[base + ch] = m + reference;
                    visual[base + 6 + ch] = var.sqrt();
                }
            }
            for y in 0..h {
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                for x in 0..w {
                    let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                    let gx = (mean[y * w + xr] - mean[y * w + xl]) / 2.0;
                    let gy = (mean[yd * w + x] - mean[yu * w + x]) / 2.0;
                    let base = (y * w + x) * VISUAL_DIM + si * FEATURES_PER_SCALE;
                    visual[base + 3 + ch] = (gx * gx + gy * gy).sqrt();
                }
            }
        }
    }

    let mut coords = Vec::with_capacity(h * w * COORD_DIM);
    for y in 0..h {
        for x in 0..w {
            coords.push(x as f64 / (w - 1) as f64);
            coords.push(y as f64 / (h - 1) as f64);
        }
    }

    Ok(PixelFeatureMap {
        visual: Tensor::new(vec![h, w, VISUAL_DIM], visual)?,
        coords: Tensor::new(vec![h, w, COORD_DIM], coords)?,
    })
}

/// Row/column of the pixel a patch cell is centered on.
pub fn patch_center(cell: usize, stride: usize) -> usize {
    cell * stride + stride / 2
}

/// 3x3-average-pooled visual features sampled every `stride` pixels.
pub fn patch_embeddings_from(feats: &PixelFeatureMap, stride: usize) -> Result<PatchGrid> {
    let (h, w) = (feats.height(), feats.width());
    if stride == 0 {
        return Err(PsadError::Contract("patch stride must be at least 1".into()));
    }
    if stride > h.min(w) {
        return Err(PsadError::Size(format!(
            "stride {stride} exceeds image side {}",
            h.min(w)
        )));
    }
    let (hp, wp) = (h / stride, w / stride);
    let visual = feats.visual.data();
    let mut grid = vec![0.0; hp * wp * VISUAL_DIM];
    for i in 0..hp {
        let cy = patch_center(i, stride);
        for j in 0..wp {
            let cx = patch_center(j, stride);
            let out = &mut grid[(i * wp + j) * VISUAL_DIM..(i * wp + j + 1) * VISUAL_DIM];
            for dy in -1i64..=1 {
                let y = (cy as i64 + dy).clamp(0, h as i64 - 1) as usize;
                for dx in -1i64..=1 {
                    let x = (cx as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let src = &visual[(y * w + x) * VISUAL_DIM..(y * w + x + 1) * VISUAL_DIM];
                    for (o, &v) in out.iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
            for o in out.iter_mut() {
                *o /= 9.0;
            }
        }
    }
    Ok(PatchGrid {
        grid: Tensor::new(vec![hp, wp, VISUAL_DIM], grid)?,
        stride,
    })
}

pub fn patch_embeddings(image: &Tensor<f32>, stride: usize) -> Result<PatchGrid> {
    check_image(image)?;
    if stride == 0 || stride > image.shape()[0].min(image.shape()[1]) {
        return Err(PsadError::Size(format!("invalid patch stride {stride}")));
    }
    patch_embeddings_from(&pixel_features(image)?, stride)
}

/// Spatial mean of the visual channels.
pub fn global_embedding_from(feats: &PixelFeatureMap) -> Vec<f64> {
    let mut acc = vec![0.0; VISUAL_DIM];
    for px in feats.visual.data().chunks_exact(VISUAL_DIM) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += v;
        }
    }
    let n = feats.num_pixels() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub fn global_embedding(image: &Tensor<f32>) -> Result<Vec<f64>> {
    Ok(global_embedding_from(&pixel_features(image)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_image(h: usize, w: usize, color: [f32; 3]) -> Tensor<f32> {
        let data = (0..h * w).flat_map(|_| color).collect();
        Tensor::new(vec![h, w, 3], data).unwrap()
    }

    fn noise_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| rng.gen::<f32>()).collect();
        Tensor::new(vec![h, w, 3], data).unwrap()
    }

    #[test]
    fn constant_image_has_flat_features() {
        let color = [0.3f32, 0.55, 0.9];
        let f = pixel_features(&constant_image(40, 50, color)).unwrap();
        for px in f.visual.data().chunks_exact(VISUAL_DIM) {
            for s in 0..SCALES.len() {
                let b = s * FEATURES_PER_SCALE;
                for ch in 0..3 {
                    assert_eq!(px[b + ch], color[ch] as f64);
                    assert_eq!(px[b + 3 + ch], 0.0);
                    assert_eq!(px[b + 6 + ch], 0.0);
                }
            }
        }
        let g = global_embedding(&constant_image(40, 50, color)).unwrap();
        assert_eq!(&g[..3], &[color[0] as f64, color[1] as f64, color[2] as f64]);
    }

    #[test]
    fn coordinate_corners() {
        let f = pixel_features(&noise_image(33, 40, 1)).unwrap();
        assert_eq!(f.coords.pixel(0, 0), &[0.0, 0.0]);
        assert_eq!(f.coords.pixel(32, 39), &[1.0, 1.0]);
    }

    #[test]
    fn too_small_image_is_a_size_error() {
        let err = pixel_features(&constant_image(32, 64, [0.0; 3])).unwrap_err();
        assert!(matches!(err, PsadError::Size(_)));
    }

    #[test]
    fn features_are_reproducible() {
        let img = noise_image(64, 64, 9);
        assert_eq!(pixel_features(&img).unwrap(), pixel_features(&img).unwrap());
    }

    #[test]
    fn box_mean_matches_direct_window_sum() {
        let img = noise_image(36, 38, 3);
        let f = pixel_features(&img).unwrap();
        let (h, w) = (36i64, 38i64);
        for &(y, x) in &[(0i64, 0i64), (5, 30), (35, 37), (18, 1)] {
            for (si, &r) in SCALES.iter().enumerate() {
                let r = r as i64;
                for ch in 0..3 {
                    let (mut s, mut sq, mut n) = (0.0f64, 0.0f64, 0.0f64);
                    for yy in y - r..=y + r {
                        for xx in x - r..=x + r {
                            let v = img.pixel(yy.clamp(0, h - 1) as usize, xx.clamp(0, w - 1) as usize)[ch] as f64;
                            s += v;
                            sq += v * v;
                            n += 1.0;
                        }
                    }
                    let m = s / n;
                    let sd = (sq / n - m * m).max(0.0).sqrt();
                    let px = f.visual.pixel(y as usize, x as usize);
                    let b = si * FEATURES_PER_SCALE;
                    assert!((px[b + ch] - m).abs() < 1e-10);
                    assert!((px[b + 6 + ch] - sd).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn patch_grid_shape_and_uniformity() {
        let g = patch_embeddings(&constant_image(64, 64, [0.2, 0.4, 0.6]), 8).unwrap();
        assert_eq!(g.grid.shape(), &[8, 8, VISUAL_DIM]);
        assert_eq!(g.num_patches(), 64);
        let first = g.patches().next().unwrap().to_vec();
        assert!(g.patches().all(|p| p == first.as_slice()));
    }

    #[test]
    fn invalid_stride() {
        let img = constant_image(40, 40, [0.0; 3]);
        assert!(patch_embeddings(&img, 0).is_err());
        assert!(matches!(patch_embeddings(&img, 41), Err(PsadError::Size(_))));
    }

    #[test]
    fn patch_pooling_matches_loop_oracle() {
        let img = noise_image(35, 41, 5);
        let f = pixel_features(&img).unwrap();
        let stride = 5;
        let g = patch_embeddings_from(&f, stride).unwrap();
        assert_eq!(g.grid.shape(), &[7, 8, VISUAL_DIM]);
        for i in 0..7 {
            for j in 0..8 {
                let (cy, cx) = (i * stride + stride / 2, j * stride + stride / 2);
                let got = g.grid.pixel(i, j);
                #[allow(clippy::needless_range_loop)]
                for d in 0..VISUAL_DIM {
                    let mut acc = 0.0;
                    for yy in cy as i64 - 1..=cy as i64 + 1 {
                        for xx in cx as i64 - 1..=cx as i64 + 1 {
                            let y = yy.clamp(0, 34) as usize;
                            let x = xx.clamp(0, 40) as usize;
                            acc += f.visual.pixel(y, x)[d];
                        }
                    }
                    assert!((got[d] - acc / 9.0).abs() < 1e-12);
                }
            }
        }
    }
}
