//! Synthetic multi-sprite scenes with pixel-exact ground truth.
//!
//! Scenes are solid backgrounds with a handful of hard-edged sprites painted
//! in order; later sprites overwrite earlier ones, and the label map records
//! which sprite is visible at each pixel (0 is background).

mod dataset;
pub mod raster;

pub use dataset::{
    write_dataset, Batch, DatasetHandle, Manifest, SplitData, Split, IMAGES_FILE, LABELS_FILE,
    MANIFEST_FILE,
};
pub use raster::{Geometry, SpriteShape};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    Gray,
    Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub image_size: usize,
    pub channels: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shape_set: Vec<SpriteShape>,
    /// Sprite extent as a fraction of the image side.
    pub scale_range: (f64, f64),
    pub allow_occlusion: bool,
    pub background_mode: BackgroundMode,
    /// Require every sprite color to differ clearly from every other sprite.
    #[serde(default)]
    pub distinct_colors: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_size: 32,
            channels: 3,
            min_objects: 1,
            max_objects: 2,
            shape_set: vec![SpriteShape::Ellipse, SpriteShape::Rectangle, SpriteShape::Triangle],
            scale_range: (0.25, 0.45),
            allow_occlusion: true,
            background_mode: BackgroundMode::Gray,
            distinct_colors: true,
        }
    }
}

/// Minimum L∞ distance (in raw 0..255 units) between a sprite color and the
/// background, and between sprites when `distinct_colors` is set.
const MIN_COLOR_GAP: i32 = 64;
const PLACEMENT_ATTEMPTS: usize = 1000;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(LabError::config("image_size", "must be positive"));
        }
        if self.channels == 0 {
            return Err(LabError::config("channels", "must be positive"));
        }
        if self.min_objects < 1 {
            return Err(LabError::config("min_objects", "must be at least 1"));
        }
        if self.max_objects < self.min_objects {
            return Err(LabError::config(
                "max_objects",
                format!(
                    "must be >= min_objects ({} < {})",
                    self.max_objects, self.min_objects
                ),
            ));
        }
        if self.max_objects > u8::MAX as usize {
            return Err(LabError::config("max_objects", "labels are stored as u8"));
        }
        if self.shape_set.is_empty() {
            return Err(LabError::config("shape_set", "must not be empty"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(LabError::config(
                "scale_range",
                format!("must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"),
            ));
        }
        Ok(())
    }

    /// Validate against a model with `slots` slots; one slot is reserved for
    /// the background.
    pub fn validate_for_slots(&self, slots: usize) -> Result<()> {
        self.validate()?;
        if self.max_objects + 1 > slots {
            return Err(LabError::config(
                "max_objects",
                format!("must be <= K - 1 = {}", slots.saturating_sub(1)),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub geometry: Geometry,
    pub color: Vec<u8>,
}

/// Everything needed to render a scene: background color and sprites in
/// draw order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub background: Vec<u8>,
    pub sprites: Vec<Sprite>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major H×W×C values in [−1, 1].
    pub image: Vec<f32>,
    /// Row-major H×W labels; 0 is background, `j` is the j-th drawn sprite.
    pub labels: Vec<u8>,
}

impl SegmentationSample {
    pub fn pixel_count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Affine map from raw 8-bit intensities to [−1, 1].
pub fn standardize_image(raw: &[i32]) -> Result<Vec<f32>> {
    raw.iter()
        .enumerate()
        .map(|(i, &v)| {
            if (0..=255).contains(&v) {
                Ok((v as f64 / 127.5 - 1.0) as f32)
            } else {
                Err(LabError::Data {
                    index: i,
                    message: format!("raw intensity {v} outside [0, 255]"),
                })
            }
        })
        .collect()
}

fn random_color<R: Rng>(rng: &mut R, channels: usize) -> Vec<u8> {
    (0..channels).map(|_| rng.random::<u8>()).collect()
}

fn color_gap(a: &[u8], b: &[u8]) -> i32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as i32 - y as i32).abs())
        .max()
        .unwrap_or(0)
}

fn random_geometry<R: Rng>(rng: &mut R, spec: &SceneSpec) -> Geometry {
    let size = spec.image_size as f64;
    let shape = spec.shape_set[rng.random_range(0..spec.shape_set.len())];
    let (lo, hi) = spec.scale_range;
    let mut extent = || {
        if hi > lo {
            rng.random_range(lo..=hi) * size
        } else {
            lo * size
        }
    };
    let (w, h) = (extent(), extent());
    let cx = rng.random_range(w / 2.0..=(size - w / 2.0).max(w / 2.0));
    let cy = rng.random_range(h / 2.0..=(size - h / 2.0).max(h / 2.0));
    match shape {
        SpriteShape::Ellipse => Geometry::Ellipse {
            cx,
            cy,
            rx: w / 2.0,
            ry: h / 2.0,
        },
        SpriteShape::Rectangle => Geometry::Rectangle {
            cx,
            cy,
            hw: w / 2.0,
            hh: h / 2.0,
        },
        SpriteShape::Triangle => {
            // Isosceles triangle inscribed in the w×h box, apex up or down.
            let (top, bottom) = (cy - h / 2.0, cy + h / 2.0);
            let vertices = if rng.random_bool(0.5) {
                [(cx, top), (cx + w / 2.0, bottom), (cx - w / 2.0, bottom)]
            } else {
                [(cx, bottom), (cx - w / 2.0, top), (cx + w / 2.0, top)]
            };
            Geometry::Triangle { vertices }
        }
    }
}

fn boxes_overlap(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

/// Draw the background and sprites of scene `seed`, without rendering.
pub fn scene_layout(spec: &SceneSpec, seed: u64) -> Result<SceneLayout> {
    spec.validate()?;
    let mut rng = seed::rng(seed, seed::SCENE, &[]);
    let background = match spec.background_mode {
        BackgroundMode::Gray => vec![rng.random::<u8>(); spec.channels],
        BackgroundMode::Color => random_color(&mut rng, spec.channels),
    };
    let count = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut sprites: Vec<Sprite> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let geometry = random_geometry(&mut rng, spec);
            if !spec.allow_occlusion
                && sprites
                    .iter()
                    .any(|s| boxes_overlap(s.geometry.bounds(), geometry.bounds()))
            {
                continue;
            }
            let color = loop {
                let c = random_color(&mut rng, spec.channels);
                let clear_of_background = color_gap(&c, &background) >= MIN_COLOR_GAP;
                let clear_of_others = !spec.distinct_colors
                    || sprites.iter().all(|s| color_gap(&c, &s.color) >= MIN_COLOR_GAP);
                if clear_of_background && clear_of_others {
                    break c;
                }
            };
            sprites.push(Sprite { geometry, color });
            placed = true;
            break;
        }
        if !placed {
            return Err(LabError::config(
                "scale_range",
                "sprites too large to place without occlusion",
            ));
        }
    }
    Ok(SceneLayout { background, sprites })
}

/// Paint a layout with the painter's algorithm.
pub fn render(spec: &SceneSpec, layout: &SceneLayout) -> SegmentationSample {
    let size = spec.image_size;
    let channels = spec.channels;
    let mut raw = Vec::with_capacity(size * size * channels);
    for _ in 0..size * size {
        raw.extend(layout.background.iter().map(|&v| v as i32));
    }
    let mut labels = vec![0u8; size * size];
    for (j, sprite) in layout.sprites.iter().enumerate() {
        for (p, covered) in sprite.geometry.coverage(size).into_iter().enumerate() {
            if covered {
                labels[p] = (j + 1) as u8;
                for c in 0..channels {
                    raw[p * channels + c] = sprite.color[c] as i32;
                }
            }
        }
    }
    let image = standardize_image(&raw).expect("colors are u8");
    SegmentationSample {
        height: size,
        width: size,
        channels,
        image,
        labels,
    }
}

/// Generate scene number `seed`. Pure function of `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SegmentationSample> {
    let layout = scene_layout(spec, seed)?;
    Ok(render(spec, &layout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_objects_is_rejected() {
        let spec = SceneSpec {
            min_objects: 0,
            max_objects: 0,
            ..SceneSpec::default()
        };
        match generate_scene(&spec, 1) {
            Err(LabError::Config { field, .. }) => assert_eq!(field, "min_objects"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_scale_range_names_field() {
        let spec = SceneSpec {
            scale_range: (0.0, 0.5),
            ..SceneSpec::default()
        };
        assert!(matches!(spec.validate(), Err(LabError::Config { field, .. }) if field == "scale_range"));
        let spec = SceneSpec {
            scale_range: (0.5, 1.5),
            ..SceneSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn slot_budget_reserves_background() {
        let spec = SceneSpec {
            max_objects: 3,
            ..SceneSpec::default()
        };
        assert!(spec.validate_for_slots(4).is_ok());
        assert!(spec.validate_for_slots(3).is_err());
    }

    #[test]
    fn standardize_endpoints_and_midpoint() {
        let v = standardize_image(&[0, 255, 128]).unwrap();
        assert_eq!(v[0], -1.0);
        assert_eq!(v[1], 1.0);
        assert!((v[2] as f64 - (128.0 / 127.5 - 1.0)).abs() < 1e-7);
        assert!((v[2] - 0.003_921_6).abs() < 1e-6);
    }

    #[test]
    fn standardize_reports_offending_index() {
        match standardize_image(&[0, 12, 256, 3]) {
            Err(LabError::Data { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
        assert!(standardize_image(&[-1]).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, 42).unwrap();
        let b = generate_scene(&spec, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&spec, 43).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn no_occlusion_keeps_every_sprite_visible() {
        let spec = SceneSpec {
            min_objects: 3,
            max_objects: 3,
            allow_occlusion: false,
            scale_range: (0.2, 0.3),
            ..SceneSpec::default()
        };
        for seed in 0..20 {
            let s = generate_scene(&spec, seed).unwrap();
            for j in 1..=3 {
                assert!(s.pixel_count(j) > 0, "seed {seed} label {j}");
            }
        }
    }
}
