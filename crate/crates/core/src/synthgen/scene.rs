use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blueprint::{bbox_gap, ComponentSpec, SceneBlueprint, MAX_JITTER};
use crate::error::{PsadError, Result};
use crate::tensorio::{SegMap, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    MissingComponent,
    ExtraComponent,
    SwappedPosition,
    WrongSize,
    Scratch,
    Stain,
}

impl AnomalyKind {
    pub const LOGICAL: [AnomalyKind; 4] = [
        AnomalyKind::MissingComponent,
        AnomalyKind::ExtraComponent,
        AnomalyKind::SwappedPosition,
        AnomalyKind::WrongSize,
    ];
    pub const STRUCTURAL: [AnomalyKind; 2] = [AnomalyKind::Scratch, AnomalyKind::Stain];

    pub fn is_logical(self) -> bool {
        Self::LOGICAL.contains(&self)
    }

    pub fn label(self) -> SampleLabel {
        if self.is_logical() {
            SampleLabel::Logical
        } else {
            SampleLabel::Structural
        }
    }

    /// Magnitude used by the dataset generator.
    pub fn default_magnitude(self) -> f64 {
        match self {
            AnomalyKind::WrongSize => 1.5,
            AnomalyKind::Scratch => 0.8,
            AnomalyKind::Stain => 4.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub target_class: u16,
    /// Kind-specific: size factor for `wrong_size`, blend strength for
    /// `scratch`, radius for `stain`; unused otherwise.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleLabel {
    #[serde(rename = "normal")]
    Normal,
    #[serde(rename = "LA")]
    Logical,
    #[serde(rename = "SA")]
    Structural,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Tensor<f32>,
    pub gt: SegMap,
    pub label: SampleLabel,
}

// Independent random streams so that structural defects leave layout and
// texture untouched, and a normal scene shares both with its defective twin.
const LAYOUT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const ANOMALY_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Placed {
    spec: ComponentSpec,
    center: (i32, i32),
}

/// Renders one scene. Deterministic in `(bp, anomaly, seed)`.
pub fn generate_scene(bp: &SceneBlueprint, anomaly: Option<&AnomalySpec>, seed: u64) -> Result<Scene> {
    bp.validate()?;
    if let Some(a) = anomaly {
        let present = a.target_class == 0 || bp.components.iter().any(|c| c.class_id == a.target_class);
        if !present {
            return Err(PsadError::Spec(format!(
                "anomaly target class {} absent from blueprint",
                a.target_class
            )));
        }
    }

    let mut layout_rng = stream(seed, LAYOUT_STREAM);
    let mut placed: Vec<Placed> = bp
        .components
        .iter()
        .map(|c| {
            let dx = layout_rng.gen_range(-MAX_JITTER..=MAX_JITTER);
            let dy = layout_rng.gen_range(-MAX_JITTER..=MAX_JITTER);
            Placed {
                spec: c.clone(),
                center: (c.center.0 + dx, c.center.1 + dy),
            }
        })
        .collect();

    let mut anomaly_rng = stream(seed, ANOMALY_STREAM);
    if let Some(a) = anomaly {
        apply_logical(bp, &mut placed, a, &mut anomaly_rng)?;
    }

    let (h, w) = (bp.height, bp.width);
    let mut noise_rng = stream(seed, NOISE_STREAM);
    let mut image = vec![0.0f32; h * w * 3];
    let mut labels = vec![0u16; h * w];
    // Background texture first; components overwrite with their own noise.
    // Noise is drawn for every pixel and layer in a fixed order so the stream
    // is layout-independent.
    let bg_noise: Vec<f32> = (0..h * w * 3).map(|_| noise_rng.gen_range(-1.0f32..=1.0)).collect();
    let fg_noise: Vec<f32> = (0..h * w * 3).map(|_| noise_rng.gen_range(-1.0f32..=1.0)).collect();
    for p in 0..h * w {
        for ch in 0..3 {
            image[p * 3 + ch] = bp.background_color[ch] + bp.background_noise * bg_noise[p * 3 + ch];
        }
    }
    for comp in &placed {
        let (x0, y0, x1, y1) = comp.spec.bbox_at(comp.center);
        for y in y0.max(0)..y1.min(h as i32) {
            for x in x0.max(0)..x1.min(w as i32) {
                if !comp.spec.shape.contains(x - comp.center.0, y - comp.center.1) {
                    continue;
                }
                let p = y as usize * w + x as usize;
                labels[p] = comp.spec.class_id;
                for ch in 0..3 {
                    image[p * 3 + ch] = comp.spec.color[ch] + comp.spec.noise * fg_noise[p * 3 + ch];
                }
            }
        }
    }

    if let Some(a) = anomaly {
        match a.kind {
            AnomalyKind::Scratch => draw_scratch(&mut image, h, w, &placed, a, &mut anomaly_rng),
            AnomalyKind::Stain => draw_stain(&mut image, h, w, &placed, a, &mut anomaly_rng),
            _ => {}
        }
    }

    for v in image.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Scene {
        image: Tensor::new(vec![h, w, 3], image)?,
        gt: SegMap::new(h, w, bp.n_classes, labels)?,
        label: anomaly.map_or(SampleLabel::Normal, |a| a.kind.label()),
    })
}

fn first_of_class(placed: &[Placed], class: u16) -> Result<usize> {
    placed
        .iter()
        .position(|p| p.spec.class_id == class)
        .ok_or_else(|| PsadError::Spec(format!("no component of class {class}")))
}

fn apply_logical(bp: &SceneBlueprint, placed: &mut Vec<Placed>, a: &AnomalySpec, rng: &mut ChaCha8Rng) -> Result<()> {
    match a.kind {
        AnomalyKind::MissingComponent => {
            let i = first_of_class(placed, a.target_class)?;
            placed.remove(i);
        }
        AnomalyKind::ExtraComponent => {
            let i = first_of_class(placed, a.target_class)?;
            let spec = placed[i].spec.clone();
            let center = free_position(bp, placed, &spec, rng)
                .ok_or_else(|| PsadError::Spec(format!("no room for an extra class {} component", a.target_class)))?;
            placed.push(Placed { spec, center });
        }
        AnomalyKind::SwappedPosition => {
            let i = first_of_class(placed, a.target_class)?;
            let shape = placed[i].spec.shape;
            let j = placed
                .iter()
                .position(|p| p.spec.class_id != a.target_class && p.spec.shape == shape)
                .ok_or_else(|| {
                    PsadError::Spec(format!(
                        "class {} has no same-shaped partner of another class to swap with",
                        a.target_class
                    ))
                })?;
            let ci = placed[i].center;
            placed[i].center = placed[j].center;
            placed[j].center = ci;
        }
        AnomalyKind::WrongSize => {
            if a.magnitude <= 0.0 {
                return Err(PsadError::Spec("wrong_size magnitude must be positive".into()));
            }
            let i = first_of_class(placed, a.target_class)?;
            let mut comp = placed.remove(i);
            comp.spec.shape = comp.spec.shape.scaled(a.magnitude);
            // Drawn first so that an enlarged part never hides its neighbours.
            placed.insert(0, comp);
        }
        AnomalyKind::Scratch | AnomalyKind::Stain => {}
    }
    Ok(())
}

/// Random free center for `spec`, keeping the usual background gap to every
/// placed component. Falls back to a deterministic raster scan.
fn free_position(
    bp: &SceneBlueprint,
    placed: &[Placed],
    spec: &ComponentSpec,
    rng: &mut ChaCha8Rng,
) -> Option<(i32, i32)> {
    let (x0, y0, x1, y1) = spec.shape.extent();
    let (w, h) = (bp.width as i32, bp.height as i32);
    let (cx_lo, cx_hi) = (1 - x0, w - 1 - x1);
    let (cy_lo, cy_hi) = (1 - y0, h - 1 - y1);
    if cx_lo > cx_hi || cy_lo > cy_hi {
        return None;
    }
    let fits = |c: (i32, i32)| {
        let bb = spec.bbox_at(c);
        placed.iter().all(|p| bbox_gap(bb, p.spec.bbox_at(p.center)) >= 2)
    };
    for _ in 0..500 {
        let c = (rng.gen_range(cx_lo..=cx_hi), rng.gen_range(cy_lo..=cy_hi));
        if fits(c) {
            return Some(c);
        }
    }
    (cy_lo..=cy_hi)
        .flat_map(|y| (cx_lo..=cx_hi).map(move |x| (x, y)))
        .find(|&c| fits(c))
}

/// Center of the defect: inside a component of the target class, or anywhere
/// on the canvas for the background class.
fn defect_anchor(h: usize, w: usize, placed: &[Placed], target: u16, rng: &mut ChaCha8Rng) -> (f64, f64) {
    if let Some(p) = placed.iter().find(|p| p.spec.class_id == target) {
        let (x0, y0, x1, y1) = p.spec.shape.extent();
        let fx = rng.gen_range(0.3..0.7);
        let fy = rng.gen_range(0.3..0.7);
        (
            (p.center.0 + x0) as f64 + fx * (x1 - x0) as f64,
            (p.center.1 + y0) as f64 + fy * (y1 - y0) as f64,
        )
    } else {
        (rng.gen_range(8.0..w as f64 - 8.0), rng.gen_range(8.0..h as f64 - 8.0))
    }
}

fn draw_scratch(image: &mut [f32], h: usize, w: usize, placed: &[Placed], a: &AnomalySpec, rng: &mut ChaCha8Rng) {
    const COLOR: [f32; 3] = [0.97, 0.97, 0.95];
    let (cx, cy) = defect_anchor(h, w, placed, a.target_class, rng);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let half_len: f64 = rng.gen_range(6.0..10.0);
    let (dx, dy) = (angle.cos(), angle.sin());
    let alpha = a.magnitude.clamp(0.0, 1.0) as f32;
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            let along = px * dx + py * dy;
            let across = (px * dy - py * dx).abs();
            if along.abs() <= half_len && across <= 0.8 {
                let p = (y * w + x) * 3;
                for ch in 0..3 {
                    image[p + ch] = (1.0 - alpha) * image[p + ch] + alpha * COLOR[ch];
                }
            }
        }
    }
}

fn draw_stain(image: &mut [f32], h: usize, w: usize, placed: &[Placed], a: &AnomalySpec, rng: &mut ChaCha8Rng) {
    const COLOR: [f32; 3] = [0.4, 0.28, 0.08];
    let (cx, cy) = defect_anchor(h, w, placed, a.target_class, rng);
    let radius = a.magnitude.max(1.0);
    for y in 0..h {
        for x in 0..w {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            // Soft rim one pixel wide.
            let alpha = (0.9 * (radius + 0.5 - d).clamp(0.0, 1.0)) as f32;
            if alpha > 0.0 {
                let p = (y * w + x) * 3;
                for ch in 0..3 {
                    image[p + ch] = (1.0 - alpha) * image[p + ch] + alpha * COLOR[ch];
                }
            }
        }
    }
}
