use serde::{Deserialize, Serialize};

use crate::error::{PsadError, Result};

/// Largest per-axis offset applied to a component's nominal position.
pub const MAX_JITTER: i32 = 3;

/// Minimum background gap between nominal bounding boxes; survives worst-case jitter.
const MIN_GAP: i32 = 2 * MAX_JITTER + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect { width: i32, height: i32 },
    Disc { radius: i32 },
}

impl Shape {
    /// Half-open offsets `(x0, y0, x1, y1)` of the footprint relative to the center.
    pub fn extent(&self) -> (i32, i32, i32, i32) {
        match *self {
            Shape::Rect { width, height } => {
                let x0 = -(width / 2);
                let y0 = -(height / 2);
                (x0, y0, x0 + width, y0 + height)
            }
            Shape::Disc { radius } => (-radius, -radius, radius + 1, radius + 1),
        }
    }

    pub fn contains(&self, dx: i32, dy: i32) -> bool {
        let (x0, y0, x1, y1) = self.extent();
        if dx < x0 || dx >= x1 || dy < y0 || dy >= y1 {
            return false;
        }
        match *self {
            Shape::Rect { .. } => true,
            Shape::Disc { radius } => dx * dx + dy * dy <= radius * radius,
        }
    }

    /// Exact number of covered pixels.
    pub fn pixel_count(&self) -> usize {
        match *self {
            Shape::Rect { width, height } => (width * height) as usize,
            Shape::Disc { radius } => {
                let mut n = 0;
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        if dx * dx + dy * dy <= radius * radius {
                            n += 1;
                        }
                    }
                }
                n
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Shape {
        let s = |v: i32| ((v as f64 * factor).round() as i32).max(1);
        match *self {
            Shape::Rect { width, height } => Shape::Rect {
                width: s(width),
                height: s(height),
            },
            Shape::Disc { radius } => Shape::Disc { radius: s(radius) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub class_id: u16,
    pub shape: Shape,
    /// Nominal center `(x, y)` in pixels.
    pub center: (i32, i32),
    pub color: [f32; 3],
    /// Half-width of the uniform per-pixel texture noise.
    pub noise: f32,
}

impl ComponentSpec {
    pub(crate) fn bbox_at(&self, center: (i32, i32)) -> (i32, i32, i32, i32) {
        let (x0, y0, x1, y1) = self.shape.extent();
        (center.0 + x0, center.1 + y0, center.0 + x1, center.1 + y1)
    }
}

/// Layout of one product type. Class 0 is background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBlueprint {
    pub height: usize,
    pub width: usize,
    pub product_type: u32,
    pub n_classes: usize,
    pub background_color: [f32; 3],
    pub background_noise: f32,
    pub components: Vec<ComponentSpec>,
}

impl SceneBlueprint {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(PsadError::Spec(
                "need background plus at least one component class".into(),
            ));
        }
        let mut seen = vec![false; self.n_classes];
        seen[0] = true;
        for c in &self.components {
            let id = c.class_id as usize;
            if id == 0 || id >= self.n_classes {
                return Err(PsadError::Spec(format!(
                    "component class {id} outside 1..{}",
                    self.n_classes
                )));
            }
            seen[id] = true;
            let (x0, y0, x1, y1) = c.bbox_at(c.center);
            if x0 < MAX_JITTER
                || y0 < MAX_JITTER
                || x1 > self.width as i32 - MAX_JITTER
                || y1 > self.height as i32 - MAX_JITTER
            {
                return Err(PsadError::Spec(format!(
                    "class {id} component at {:?} can leave the canvas under jitter",
                    c.center
                )));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(PsadError::Spec(format!("class ids not contiguous: {missing} unused")));
        }
        for (i, a) in self.components.iter().enumerate() {
            for b in &self.components[i + 1..] {
                let gap = bbox_gap(a.bbox_at(a.center), b.bbox_at(b.center));
                if gap < MIN_GAP {
                    return Err(PsadError::Spec(format!(
                        "components of classes {} and {} are {gap} px apart, need {MIN_GAP}",
                        a.class_id, b.class_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ground-truth class fractions of an unperturbed scene.
    pub fn class_fractions(&self) -> Vec<f64> {
        let total = (self.height * self.width) as f64;
        let mut counts = vec![0usize; self.n_classes];
        let mut fg = 0;
        for c in &self.components {
            let n = c.shape.pixel_count();
            counts[c.class_id as usize] += n;
            fg += n;
        }
        counts[0] = self.height * self.width - fg;
        counts.into_iter().map(|n| n as f64 / total).collect()
    }
}

/// Background pixels separating two half-open boxes along the larger axis gap.
pub(crate) fn bbox_gap(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> i32 {
    let gx = (b.0 - a.2).max(a.0 - b.2);
    let gy = (b.1 - a.3).max(a.1 - b.3);
    gx.max(gy)
}

/// A product family: one or more sub-types sharing the class set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlueprintFamily {
    pub name: String,
    pub types: Vec<SceneBlueprint>,
}

impl BlueprintFamily {
    pub fn n_classes(&self) -> usize {
        self.types[0].n_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(PsadError::Spec(format!("family {} has no types", self.name)));
        }
        let first = &self.types[0];
        for (i, t) in self.types.iter().enumerate() {
            t.validate()?;
            if t.product_type as usize != i {
                return Err(PsadError::Spec(format!("type index {i} tagged {}", t.product_type)));
            }
            if t.n_classes != first.n_classes || t.height != first.height || t.width != first.width {
                return Err(PsadError::Spec("sub-types must share canvas and class set".into()));
            }
        }
        Ok(())
    }
}

fn disc(class_id: u16, radius: i32, center: (i32, i32), color: [f32; 3]) -> ComponentSpec {
    ComponentSpec {
        class_id,
        shape: Shape::Disc { radius },
        center,
        color,
        noise: 0.04,
    }
}

fn rect(class_id: u16, width: i32, height: i32, center: (i32, i32), color: [f32; 3]) -> ComponentSpec {
    ComponentSpec {
        class_id,
        shape: Shape::Rect { width, height },
        center,
        color,
        noise: 0.04,
    }
}

fn blueprint(
    product_type: u32,
    n_classes: usize,
    background: [f32; 3],
    components: Vec<ComponentSpec>,
) -> SceneBlueprint {
    SceneBlueprint {
        height: 64,
        width: 64,
        product_type,
        n_classes,
        background_color: background,
        background_noise: 0.04,
        components,
    }
}

/// The built-in benchmark suite: three families, the second with two sub-types.
pub fn default_suite() -> Vec<BlueprintFamily> {
    let tray = BlueprintFamily {
        name: "tray".into(),
        types: vec![blueprint(
            0,
            5,
            [0.16, 0.17, 0.2],
            vec![
                rect(1, 26, 14, (17, 13), [0.78, 0.72, 0.5]),
                disc(2, 5, (17, 32), [0.85, 0.25, 0.2]),
                disc(3, 5, (54, 12), [0.2, 0.35, 0.85]),
                rect(4, 10, 22, (46, 45), [0.3, 0.75, 0.35]),
            ],
        )],
    };
    let bottle = BlueprintFamily {
        name: "bottle".into(),
        types: vec![
            blueprint(
                0,
                4,
                [0.22, 0.2, 0.18],
                vec![
                    rect(1, 12, 34, (16, 32), [0.9, 0.55, 0.15]),
                    disc(2, 6, (51, 11), [0.95, 0.9, 0.3]),
                    disc(3, 6, (35, 32), [0.85, 0.85, 0.9]),
                ],
            ),
            blueprint(
                1,
                4,
                [0.12, 0.18, 0.22],
                vec![
                    rect(1, 38, 14, (32, 13), [0.8, 0.45, 0.9]),
                    disc(2, 6, (11, 52), [0.95, 0.9, 0.3]),
                    disc(3, 6, (32, 33), [0.85, 0.85, 0.9]),
                ],
            ),
        ],
    };
    let connector = BlueprintFamily {
        name: "connector".into(),
        types: vec![blueprint(
            0,
            5,
            [0.2, 0.2, 0.2],
            vec![
                rect(1, 12, 12, (10, 32), [0.9, 0.45, 0.1]),
                rect(2, 12, 12, (52, 54), [0.15, 0.6, 0.9]),
                rect(3, 18, 6, (32, 32), [0.85, 0.8, 0.25]),
                disc(4, 4, (10, 14), [0.75, 0.2, 0.6]),
            ],
        )],
    };
    vec![tray, bottle, connector]
}

pub fn family_by_name(name: &str) -> Result<BlueprintFamily> {
    default_suite()
        .into_iter()
        .find(|f| f.name == name)
        .ok_or_else(|| PsadError::Spec(format!("unknown blueprint family {name:?}")))
}
