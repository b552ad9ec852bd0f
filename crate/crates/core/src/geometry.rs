//! Coordinate frames, quadrilaterals and the crop/resize transform between
//! an image and a square network patch.
//!
//! Coordinates are continuous pixels: pixel `(i, j)` covers
//! `[i, i + 1) x [j, j + 1)`, `y` grows downward. Quads store their corners
//! as top-left, top-right, bottom-right, bottom-left of the object itself,
//! which gives a positive shoelace area in this frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

fn cross(a: Point2, b: Point2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Which coordinate system a quad lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Image,
    Patch,
}

/// One object instance: four corners in TL, TR, BR, BL order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    corners: [Point2; 4],
    frame: Frame,
}

impl Quad {
    /// Validates that the corners are finite, describe a simple polygon and
    /// have positive signed area under the TL, TR, BR, BL ordering.
    pub fn new(corners: [Point2; 4], frame: Frame) -> Result<Self> {
        if corners.iter().any(|p| !p.is_finite()) {
            return Err(Error::Geometry("quad has non-finite corners".into()));
        }
        let area = signed_area(&corners);
        if !(area > 0.0) {
            return Err(Error::Geometry(format!(
                "quad corners must have positive signed area in TL,TR,BR,BL order (got {area})"
            )));
        }
        if segments_intersect(corners[0], corners[1], corners[2], corners[3])
            || segments_intersect(corners[1], corners[2], corners[3], corners[0])
        {
            return Err(Error::Geometry("quad is self-intersecting".into()));
        }
        Ok(Self { corners, frame })
    }

    pub fn from_xy(xy: [[f64; 2]; 4], frame: Frame) -> Result<Self> {
        Self::new(xy.map(|[x, y]| Point2::new(x, y)), frame)
    }

    /// Axis-aligned rectangle as a quad.
    pub fn from_rect(r: &Rect, frame: Frame) -> Self {
        Self {
            corners: [
                Point2::new(r.x0, r.y0),
                Point2::new(r.x1, r.y0),
                Point2::new(r.x1, r.y1),
                Point2::new(r.x0, r.y1),
            ],
            frame,
        }
    }

    pub fn corners(&self) -> &[Point2; 4] {
        &self.corners
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn to_xy(&self) -> [[f64; 2]; 4] {
        self.corners.map(|p| [p.x, p.y])
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.corners)
    }

    pub fn is_convex(&self) -> bool {
        is_convex(&self.corners)
    }

    /// Applies `f` to every corner and re-validates the result.
    pub fn map(&self, frame: Frame, f: impl Fn(Point2) -> Point2) -> Result<Quad> {
        Quad::new(self.corners.map(f), frame)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Quad {
        Quad {
            corners: self.corners.map(|p| Point2::new(p.x + dx, p.y + dy)),
            frame: self.frame,
        }
    }

    /// Largest corner-to-corner distance to `other`.
    pub fn max_corner_distance(&self, other: &Quad) -> f64 {
        self.corners
            .iter()
            .zip(other.corners.iter())
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max)
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return Err(Error::Geometry("rect has non-finite bounds".into()));
        }
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::Geometry(format!("degenerate rect ({x0}, {y0}, {x1}, {y1})")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> Point2 {
        Point2::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// True when the open interiors of the two rects overlap.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Smallest axis-aligned rectangle containing the quad.
pub fn tight_rect(q: &Quad) -> Result<Rect> {
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in q.corners() {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    Rect::new(x0, y0, x1, y1)
}

/// Moves every side outward by `fraction` of the dimension perpendicular to
/// it, so width and height both grow by a factor `1 + 2 * fraction`.
pub fn expand_rect(r: &Rect, fraction: f64) -> Rect {
    expand_rect_sides(r, [fraction; 4])
}

/// Per-side variant of [`expand_rect`]; fractions are left, top, right, bottom.
pub fn expand_rect_sides(r: &Rect, [left, top, right, bottom]: [f64; 4]) -> Rect {
    let (w, h) = (r.width(), r.height());
    Rect {
        x0: r.x0 - left * w,
        y0: r.y0 - top * h,
        x1: r.x1 + right * w,
        y1: r.y1 + bottom * h,
    }
}

/// Affine map between an image-frame crop rectangle and a square patch of
/// side `out_size`. The two axes scale independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchTransform {
    pub crop: Rect,
    pub out_size: usize,
    pub scale_x: f64,
    pub scale_y: f64,
}

pub fn make_transform(crop: Rect, out_size: usize) -> Result<PatchTransform> {
    let crop = Rect::new(crop.x0, crop.y0, crop.x1, crop.y1)?;
    if out_size == 0 {
        return Err(Error::Geometry("patch size must be positive".into()));
    }
    Ok(PatchTransform {
        crop,
        out_size,
        scale_x: out_size as f64 / crop.width(),
        scale_y: out_size as f64 / crop.height(),
    })
}

impl PatchTransform {
    pub fn to_patch(&self, p: Point2) -> Point2 {
        Point2::new((p.x - self.crop.x0) * self.scale_x, (p.y - self.crop.y0) * self.scale_y)
    }

    pub fn to_image(&self, p: Point2) -> Point2 {
        Point2::new(p.x / self.scale_x + self.crop.x0, p.y / self.scale_y + self.crop.y0)
    }

    pub fn quad_to_patch(&self, q: &Quad) -> Result<Quad> {
        if q.frame() != Frame::Image {
            return Err(Error::Geometry("expected an image-frame quad".into()));
        }
        q.map(Frame::Patch, |p| self.to_patch(p))
    }

    pub fn quad_to_image(&self, q: &Quad) -> Result<Quad> {
        if q.frame() != Frame::Patch {
            return Err(Error::Geometry("expected a patch-frame quad".into()));
        }
        q.map(Frame::Image, |p| self.to_image(p))
    }
}

pub fn centroid(q: &Quad) -> Point2 {
    let c = q.corners();
    Point2::new(
        0.25 * (c[0].x + c[1].x + c[2].x + c[3].x),
        0.25 * (c[0].y + c[1].y + c[2].y + c[3].y),
    )
}

/// Even-odd containment test; points on an edge or vertex count as inside.
pub fn point_in_quad(p: Point2, q: &Quad) -> bool {
    let c = q.corners();
    let scale = c.iter().map(|v| v.x.abs().max(v.y.abs())).fold(1.0, f64::max);
    let tol = 1e-12 * scale;
    let mut inside = false;
    for i in 0..4 {
        let a = c[i];
        let b = c[(i + 1) % 4];
        if point_segment_distance(p, a, b) <= tol {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Dice overlap `2 |A n B| / (|A| + |B|)` from exact polygon clipping.
pub fn quad_dice(a: &Quad, b: &Quad) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    (2.0 * intersection_area(a, b) / (area_a + area_b)).clamp(0.0, 1.0)
}

/// Exact overlap area. Non-convex quads are split into two triangles along
/// the diagonal through the reflex corner so every clip window is convex.
pub fn intersection_area(a: &Quad, b: &Quad) -> f64 {
    let (pa, pb) = (convex_pieces(a), convex_pieces(b));
    let mut total = 0.0;
    for subject in &pa {
        for window in &pb {
            total += polygon_area(&clip_polygon(subject, window)).abs();
        }
    }
    total
}

fn convex_pieces(q: &Quad) -> Vec<Vec<Point2>> {
    let c = q.corners;
    let reflex = (0..4).find(|&i| {
        let (prev, cur, next) = (c[(i + 3) % 4], c[i], c[(i + 1) % 4]);
        cross(cur.sub(prev), next.sub(cur)) < 0.0
    });
    match reflex {
        None => vec![c.to_vec()],
        Some(i) => vec![
            vec![c[i], c[(i + 1) % 4], c[(i + 2) % 4]],
            vec![c[i], c[(i + 2) % 4], c[(i + 3) % 4]],
        ],
    }
}

/// Shoelace area, positive for TL, TR, BR, BL order with y pointing down.
pub fn polygon_area(pts: &[Point2]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..pts.len() {
        let j = (i + 1) % pts.len();
        s += pts[i].x * pts[j].y - pts[j].x * pts[i].y;
    }
    0.5 * s
}

fn signed_area(c: &[Point2; 4]) -> f64 {
    polygon_area(c)
}

fn is_convex(c: &[Point2; 4]) -> bool {
    (0..4).all(|i| {
        let a = c[i];
        let b = c[(i + 1) % 4];
        let d = c[(i + 2) % 4];
        cross(b.sub(a), d.sub(b)) >= 0.0
    })
}

/// Sutherland-Hodgman: clips `subject` against the convex, positively
/// oriented `window`.
pub fn clip_polygon(subject: &[Point2], window: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    for i in 0..window.len() {
        if output.is_empty() {
            break;
        }
        let a = window[i];
        let b = window[(i + 1) % window.len()];
        let edge = b.sub(a);
        let side = |p: Point2| cross(edge, p.sub(a));
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(lerp(prev, cur, sp / (sp - sc)));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(lerp(prev, cur, sp / (sp - sc)));
            }
        }
    }
    output
}

fn lerp(a: Point2, b: Point2, t: f64) -> Point2 {
    Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
}

fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.x * ab.x + ab.y * ab.y;
    if len2 == 0.0 {
        return p.distance(&a);
    }
    let t = (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0);
    p.distance(&lerp(a, b, t))
}

fn orientation(a: Point2, b: Point2, c: Point2) -> f64 {
    cross(b.sub(a), c.sub(a))
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection, touching included.
fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}
