//! Axis-aligned boxes in image pixels plus overlap helpers shared by the
//! heads, tracker, and evaluation modules.

/// Box as top-left corner and extents, all in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let x1 = a.x.max(b.x);
    let y1 = a.y.max(b.y);
    let x2 = (a.x + a.w).min(b.x + b.w);
    let y2 = (a.y + a.h).min(b.y + b.h);
    (x2 - x1).max(0.0) * (y2 - y1).max(0.0)
}

/// Intersection over union, in [0, 1]. Degenerate areas are clamped at 1e-9
/// rather than raising.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = (a.area() + b.area() - inter).max(1e-9);
    inter / union
}

/// Generalized IoU in [-1, 1]: IoU minus the fraction of the smallest
/// enclosing box not covered by the union.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = (a.area() + b.area() - inter).max(1e-9);
    let ex1 = a.x.min(b.x);
    let ey1 = a.y.min(b.y);
    let ex2 = (a.x + a.w).max(b.x + b.w);
    let ey2 = (a.y + a.h).max(b.y + b.h);
    let enclose = ((ex2 - ex1) * (ey2 - ey1)).max(1e-9);
    inter / union - (enclose - union) / enclose
}
