//! Foreground shapes rasterized at pixel centers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Ring,
    Cross,
    Diamond,
    Star,
    Bar,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Disk,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Ring,
        ShapeKind::Cross,
        ShapeKind::Diamond,
        ShapeKind::Star,
        ShapeKind::Bar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Ring => "ring",
            ShapeKind::Cross => "cross",
            ShapeKind::Diamond => "diamond",
            ShapeKind::Star => "star",
            ShapeKind::Bar => "bar",
        }
    }

    /// Painted area divided by `r^2` for scale `r`.
    pub fn area_factor(self) -> f64 {
        match self {
            ShapeKind::Disk => PI,
            ShapeKind::Square => 4.0,
            ShapeKind::Triangle => 3.0 * 3f64.sqrt() / 4.0,
            ShapeKind::Ring => PI * (1.0 - RING_INNER * RING_INNER),
            ShapeKind::Cross => 8.0 * CROSS_ARM - 4.0 * CROSS_ARM * CROSS_ARM,
            ShapeKind::Diamond => 2.0,
            ShapeKind::Star => 5.0 * STAR_INNER * (PI / 5.0).sin(),
            ShapeKind::Bar => 4.0 * BAR_ASPECT,
        }
    }

    /// Half extents `(x, y)` of the shape's bounding square at scale `r`.
    pub fn half_extent(self, r: f64, vertical: bool) -> (f64, f64) {
        match self {
            ShapeKind::Bar if vertical => (r * BAR_ASPECT, r),
            ShapeKind::Bar => (r, r * BAR_ASPECT),
            _ => (r, r),
        }
    }
}

const RING_INNER: f64 = 0.55;
const CROSS_ARM: f64 = 0.35;
const STAR_INNER: f64 = 0.45;
const BAR_ASPECT: f64 = 0.3;

/// A shape instance: kind, center, scale and (for bars) orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub vertical: bool,
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let s = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| (p.0 - r.0) * (q.1 - r.1) - (q.0 - r.0) * (p.1 - r.1);
    let (d1, d2, d3) = (s(p, a, b), s(p, b, c), s(p, c, a));
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

fn in_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.1 > p.1) != (b.1 > p.1) && p.0 < (b.0 - a.0) * (p.1 - a.1) / (b.1 - a.1) + a.0 {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl Placement {
    /// Whether the point `(x, y)` (image coordinates) lies inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let r = self.r;
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
            ShapeKind::Triangle => {
                let v = |deg: f64| {
                    let a = deg.to_radians();
                    (r * a.cos(), r * a.sin())
                };
                in_triangle((dx, dy), v(-90.0), v(30.0), v(150.0))
            }
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= (RING_INNER * r).powi(2)
            }
            ShapeKind::Cross => {
                let t = CROSS_ARM * r;
                (dx.abs() <= r && dy.abs() <= t) || (dx.abs() <= t && dy.abs() <= r)
            }
            ShapeKind::Diamond => dx.abs() + dy.abs() <= r,
            ShapeKind::Star => {
                let poly: Vec<(f64, f64)> = (0..10)
                    .map(|k| {
                        let rad = if k % 2 == 0 { r } else { STAR_INNER * r };
                        let a = -PI / 2.0 + k as f64 * PI / 5.0;
                        (rad * a.cos(), rad * a.sin())
                    })
                    .collect();
                in_polygon((dx, dy), &poly)
            }
            ShapeKind::Bar => {
                let (hx, hy) = self.kind.half_extent(r, self.vertical);
                dx.abs() <= hx && dy.abs() <= hy
            }
        }
    }

    /// `{0, 1}` coverage of pixel centers on a `width x height` grid.
    pub fn rasterize(&self, width: usize, height: usize) -> Vec<u8> {
        let mut out = vec![0u8; width * height];
        for y in 0..height {
            for x in 0..width {
                out[y * width + x] = u8::from(self.contains(x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        out
    }
}
