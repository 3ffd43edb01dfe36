//! Hard-edged sprite rasterization.
//!
//! A pixel belongs to a sprite when its center lies inside the sprite's
//! geometry. There is no anti-aliasing, so coverage is binary and label maps
//! are exact.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpriteShape {
    Ellipse,
    Rectangle,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    /// Axis-aligned ellipse with center and radii, in pixel units.
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    /// Axis-aligned rectangle with center and half extents.
    Rectangle { cx: f64, cy: f64, hw: f64, hh: f64 },
    Triangle { vertices: [(f64, f64); 3] },
}

impl Geometry {
    pub fn shape(&self) -> SpriteShape {
        match self {
            Geometry::Ellipse { .. } => SpriteShape::Ellipse,
            Geometry::Rectangle { .. } => SpriteShape::Rectangle,
            Geometry::Triangle { .. } => SpriteShape::Triangle,
        }
    }

    /// Whether the point `(x, y)` (column, row coordinates) is covered.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Geometry::Ellipse { cx, cy, rx, ry } => {
                let dx = (x - cx) / rx;
                let dy = (y - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            Geometry::Rectangle { cx, cy, hw, hh } => (x - cx).abs() <= hw && (y - cy).abs() <= hh,
            Geometry::Triangle { vertices: [a, b, c] } => {
                let e0 = edge(a, b, (x, y));
                let e1 = edge(b, c, (x, y));
                let e2 = edge(c, a, (x, y));
                (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
            }
        }
    }

    /// Bounding box as `(x_min, y_min, x_max, y_max)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Geometry::Ellipse { cx, cy, rx, ry } => (cx - rx, cy - ry, cx + rx, cy + ry),
            Geometry::Rectangle { cx, cy, hw, hh } => (cx - hw, cy - hh, cx + hw, cy + hh),
            Geometry::Triangle { vertices } => {
                let xs = vertices.map(|v| v.0);
                let ys = vertices.map(|v| v.1);
                (
                    xs.iter().cloned().fold(f64::INFINITY, f64::min),
                    ys.iter().cloned().fold(f64::INFINITY, f64::min),
                    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        }
    }

    /// Row-major coverage mask over a `size`×`size` pixel grid.
    pub fn coverage(&self, size: usize) -> Vec<bool> {
        let mut out = vec![false; size * size];
        let (x0, y0, x1, y1) = self.bounds();
        let clamp = |v: f64| v.floor().clamp(0.0, size as f64 - 1.0) as usize;
        for row in clamp(y0)..=clamp(y1) {
            for col in clamp(x0)..=clamp(x1) {
                if self.contains(col as f64 + 0.5, row as f64 + 0.5) {
                    out[row * size + col] = true;
                }
            }
        }
        out
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}
