//! Procedural background textures.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Planar `[3, H, W]` canvas of reals.
pub type Canvas = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFamily {
    /// Vertical sky-like gradient.
    Sky,
    /// Horizontal grass-like stripes with pixel noise.
    Grass,
    /// Low-frequency two-color value noise.
    Blotches,
    /// Two-tone gradient along a diagonal.
    Diagonal,
}

impl TextureFamily {
    pub const ALL: [TextureFamily; 4] = [
        TextureFamily::Sky,
        TextureFamily::Grass,
        TextureFamily::Blotches,
        TextureFamily::Diagonal,
    ];
}

fn color(rng: &mut Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [
        rng.random_range(lo[0]..hi[0]),
        rng.random_range(lo[1]..hi[1]),
        rng.random_range(lo[2]..hi[2]),
    ]
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

fn put(canvas: &mut Canvas, plane: usize, i: usize, c: [f64; 3]) {
    for ch in 0..3 {
        canvas[ch * plane + i] = c[ch].clamp(0.0, 1.0);
    }
}

pub fn render(family: TextureFamily, width: usize, height: usize, rng: &mut Rng) -> Canvas {
    let plane = width * height;
    let mut canvas = vec![0.0; 3 * plane];
    match family {
        TextureFamily::Sky => {
            let top = color(rng, [0.2, 0.35, 0.6], [0.5, 0.65, 0.9]);
            let bottom = color(rng, [0.55, 0.65, 0.7], [0.85, 0.9, 0.95]);
            let noise = Normal::new(0.0, 0.015).unwrap();
            for y in 0..height {
                let t = y as f64 / (height - 1).max(1) as f64;
                let c = lerp(top, bottom, t);
                for x in 0..width {
                    let n = noise.sample(rng);
                    put(&mut canvas, plane, y * width + x, [c[0] + n, c[1] + n, c[2] + n]);
                }
            }
        }
        TextureFamily::Grass => {
            let base = color(rng, [0.12, 0.35, 0.08], [0.35, 0.65, 0.3]);
            let p1 = rng.random_range(3.0..8.0);
            let p2 = rng.random_range(9.0..20.0);
            let (ph1, ph2) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
            let noise = Normal::new(0.0, 0.035).unwrap();
            for y in 0..height {
                let yf = y as f64;
                let stripe = 0.07 * (yf * std::f64::consts::TAU / p1 + ph1).sin()
                    + 0.05 * (yf * std::f64::consts::TAU / p2 + ph2).sin();
                for x in 0..width {
                    let n = noise.sample(rng);
                    let c = [base[0] + stripe + n, base[1] + stripe * 1.3 + n, base[2] + stripe * 0.6 + n];
                    put(&mut canvas, plane, y * width + x, c);
                }
            }
        }
        TextureFamily::Blotches => {
            let a = color(rng, [0.2, 0.2, 0.15], [0.6, 0.55, 0.45]);
            let b = color(rng, [0.4, 0.35, 0.3], [0.85, 0.8, 0.7]);
            let cell = if rng.random_bool(0.5) { 8 } else { 16 };
            let gw = width / cell + 2;
            let gh = height / cell + 2;
            let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
            let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
            for y in 0..height {
                let fy = y as f64 / cell as f64;
                let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
                for x in 0..width {
                    let fx = x as f64 / cell as f64;
                    let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
                    let v00 = lattice[iy * gw + ix];
                    let v01 = lattice[iy * gw + ix + 1];
                    let v10 = lattice[(iy + 1) * gw + ix];
                    let v11 = lattice[(iy + 1) * gw + ix + 1];
                    let top = v00 + tx * (v01 - v00);
                    let bot = v10 + tx * (v11 - v10);
                    put(&mut canvas, plane, y * width + x, lerp(a, b, top + ty * (bot - top)));
                }
            }
        }
        TextureFamily::Diagonal => {
            let a = color(rng, [0.15, 0.15, 0.15], [0.85, 0.85, 0.85]);
            let b = color(rng, [0.15, 0.15, 0.15], [0.85, 0.85, 0.85]);
            let base = if rng.random_bool(0.5) { 0.25 } else { 0.75 } * std::f64::consts::PI;
            let angle = base + rng.random_range(-0.2..0.2);
            let (dx, dy) = (angle.cos(), angle.sin());
            let corners = [(0.0, 0.0), (width as f64, 0.0), (0.0, height as f64), (width as f64, height as f64)];
            let proj: Vec<f64> = corners.iter().map(|(x, y)| x * dx + y * dy).collect();
            let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for y in 0..height {
                for x in 0..width {
                    let p = (x as f64 + 0.5) * dx + (y as f64 + 0.5) * dy;
                    put(&mut canvas, plane, y * width + x, lerp(a, b, (p - lo) / (hi - lo)));
                }
            }
        }
    }
    canvas
}
