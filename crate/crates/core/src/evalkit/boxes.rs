use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel box, inclusive-exclusive: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", try_from = "[usize; 4]")]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::invalid(format!("degenerate box ({x0},{y0},{x1},{y1})")));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn full(width: usize, height: usize) -> Self {
        BBox {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    /// Tight box around the non-zero cells of a `width x height` grid.
    pub fn around<V: Copy + PartialEq + Default>(values: &[V], width: usize, height: usize) -> Option<Self> {
        let zero = V::default();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..height {
            for x in 0..width {
                if values[y * width + x] != zero {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x1 > 0).then_some(BBox { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    /// Whether `other` lies entirely inside `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w * h
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl TryFrom<[usize; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [usize; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x0, self.y0, self.x1, self.y1)
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BBox::new(0, 0, 10, 10).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        let b = BBox::new(5, 0, 15, 10).unwrap();
        assert_eq!(iou(&a, &b), 50.0 / 150.0);
        let c = BBox::new(20, 20, 25, 25).unwrap();
        assert_eq!(iou(&a, &c), 0.0);
        let touching = BBox::new(10, 0, 12, 10).unwrap();
        assert_eq!(iou(&a, &touching), 0.0);
    }

    #[test]
    fn around_single_pixel() {
        let mut v = vec![0u8; 8 * 8];
        v[3 * 8 + 5] = 1;
        assert_eq!(BBox::around(&v, 8, 8), Some(BBox::new(5, 3, 6, 4).unwrap()));
        assert_eq!(BBox::around(&[0u8; 4], 2, 2), None);
    }

    #[test]
    fn degenerate_rejected_and_serde_as_array() {
        assert!(BBox::new(3, 0, 3, 5).is_err());
        let b = BBox::new(1, 2, 3, 4).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1,2,3,4]");
        assert!(serde_json::from_str::<BBox>("[3,2,1,4]").is_err());
    }
}
