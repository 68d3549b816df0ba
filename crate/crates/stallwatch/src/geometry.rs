//! Boxes, stall-floor polygons, and frame-edge tests.
//!
//! Everything works in continuous pixel coordinates: origin at the top-left
//! corner of the frame, y growing downward.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Tolerance for degenerate-geometry checks (zero area, coincident points).
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has a non-finite coordinate")]
    NonFiniteVertex,
    #[error("polygon vertices {0} and {1} coincide")]
    CoincidentVertices(usize, usize),
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersection(usize, usize),
    #[error("polygon area is zero")]
    ZeroArea,
    #[error("segment endpoints coincide")]
    DegenerateSegment,
}

/// Axis-aligned bounding box: top-left corner plus extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Midpoint of the lower edge — the proxy for where the object meets the
    /// ground, used for entrance-distance checks.
    pub fn bottom_center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }
}

/// Intersection-over-union of two boxes. Boxes that only share an edge or a
/// corner count as disjoint (0.0).
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let iy = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Frame dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDims {
    pub width: f64,
    pub height: f64,
}

/// One border of the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Left,
    Right,
    Top,
    Bottom,
}

/// Line segment, used for the stall entrance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Segment {
    pub fn new(a: (f64, f64), b: (f64, f64)) -> Result<Self, GeometryError> {
        if !(a.0.is_finite() && a.1.is_finite() && b.0.is_finite() && b.1.is_finite()) {
            return Err(GeometryError::NonFiniteVertex);
        }
        if (a.0 - b.0).abs() <= GEOM_EPS && (a.1 - b.1).abs() <= GEOM_EPS {
            return Err(GeometryError::DegenerateSegment);
        }
        Ok(Self { a, b })
    }
}

impl TryFrom<[[f64; 2]; 2]> for Segment {
    type Error = GeometryError;
    fn try_from(v: [[f64; 2]; 2]) -> Result<Self, Self::Error> {
        Segment::new((v[0][0], v[0][1]), (v[1][0], v[1][1]))
    }
}

impl From<Segment> for [[f64; 2]; 2] {
    fn from(s: Segment) -> Self {
        [[s.a.0, s.a.1], [s.b.0, s.b.1]]
    }
}

/// Simple (non-self-intersecting) polygon marking the stall floor. May be
/// concave; validated on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        if vertices.iter().any(|v| !v.0.is_finite() || !v.1.is_finite()) {
            return Err(GeometryError::NonFiniteVertex);
        }
        for i in 0..n {
            let j = (i + 1) % n;
            if dist(vertices[i], vertices[j]) <= GEOM_EPS {
                return Err(GeometryError::CoincidentVertices(i, j));
            }
        }
        // Edge pairs: non-adjacent edges must not touch at all; adjacent edges
        // share exactly their common vertex and must not fold back onto each
        // other.
        for i in 0..n {
            let (a1, a2) = (vertices[i], vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                let (b1, b2) = (vertices[j], vertices[(j + 1) % n]);
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // shared vertex is a2==b1 (or b2==a1 for the wrap pair)
                    let (shared, pa, pb) = if j == i + 1 {
                        (a2, a1, b2)
                    } else {
                        (a1, a2, b1)
                    };
                    if cross(shared, pa, pb) == 0.0
                        && (pa.0 - shared.0) * (pb.0 - shared.0)
                            + (pa.1 - shared.1) * (pb.1 - shared.1)
                            > 0.0
                    {
                        return Err(GeometryError::SelfIntersection(i, j));
                    }
                } else if segments_touch(a1, a2, b1, b2) {
                    return Err(GeometryError::SelfIntersection(i, j));
                }
            }
        }
        let poly = Self { vertices };
        if poly.area() <= GEOM_EPS {
            return Err(GeometryError::ZeroArea);
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        shoelace(&self.vertices).abs()
    }
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = GeometryError;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Polygon::new(v.into_iter().map(|p| (p[0], p[1])).collect())
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices.iter().map(|&(x, y)| [x, y]).collect()
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Whether two closed segments share any point (proper crossing, endpoint
/// touch, or collinear overlap).
fn segments_touch(p1: (f64, f64), p2: (f64, f64), p3: (f64, f64), p4: (f64, f64)) -> bool {
    let d1 = cross(p3, p4, p1);
    let d2 = cross(p3, p4, p2);
    let d3 = cross(p1, p2, p3);
    let d4 = cross(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p3, p4, p1))
        || (d2 == 0.0 && on_segment(p3, p4, p2))
        || (d3 == 0.0 && on_segment(p1, p2, p3))
        || (d4 == 0.0 && on_segment(p1, p2, p4))
}

fn shoelace(vs: &[(f64, f64)]) -> f64 {
    let n = vs.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x1, y1) = vs[i];
        let (x2, y2) = vs[(i + 1) % n];
        acc += x1 * y2 - x2 * y1;
    }
    acc / 2.0
}

/// Area of `b ∩ poly`, by Sutherland–Hodgman clipping of the polygon against
/// the box's four half-planes plus a shoelace pass.
///
/// For concave subjects the clipper may emit degenerate bridge edges between
/// disconnected pieces; the clip region is convex, so those bridges cancel in
/// the signed area and the result is still exact.
pub fn box_polygon_overlap_area(b: &BBox, poly: &Polygon) -> f64 {
    // (axis: 0=x 1=y, boundary coordinate, keep side ≤ boundary?)
    let planes = [
        (0, b.x, false),
        (0, b.right(), true),
        (1, b.y, false),
        (1, b.bottom(), true),
    ];
    let mut vs: Vec<(f64, f64)> = poly.vertices().to_vec();
    for (axis, bound, keep_below) in planes {
        if vs.is_empty() {
            break;
        }
        vs = clip_half_plane(&vs, axis, bound, keep_below);
    }
    if vs.len() < 3 {
        0.0
    } else {
        shoelace(&vs).abs()
    }
}

fn clip_half_plane(vs: &[(f64, f64)], axis: usize, bound: f64, keep_below: bool) -> Vec<(f64, f64)> {
    let coord = |p: (f64, f64)| if axis == 0 { p.0 } else { p.1 };
    let inside = |p: (f64, f64)| {
        if keep_below {
            coord(p) <= bound
        } else {
            coord(p) >= bound
        }
    };
    let intersect = |s: (f64, f64), e: (f64, f64)| {
        let t = (bound - coord(s)) / (coord(e) - coord(s));
        (s.0 + t * (e.0 - s.0), s.1 + t * (e.1 - s.1))
    };
    let mut out = Vec::with_capacity(vs.len() + 2);
    for i in 0..vs.len() {
        let s = vs[(i + vs.len() - 1) % vs.len()];
        let e = vs[i];
        match (inside(s), inside(e)) {
            (true, true) => out.push(e),
            (true, false) => out.push(intersect(s, e)),
            (false, true) => {
                out.push(intersect(s, e));
                out.push(e);
            }
            (false, false) => {}
        }
    }
    out
}

/// Whether the box overlaps the polygon by strictly more than
/// `min_area_ratio` of the box's own area.
pub fn box_polygon_intersects(b: &BBox, poly: &Polygon, min_area_ratio: f64) -> bool {
    debug_assert!(b.is_valid());
    box_polygon_overlap_area(b, poly) / b.area() > min_area_ratio
}

/// Distance from a point to the nearest point of a segment.
pub fn dist_to_segment(p: (f64, f64), seg: &Segment) -> f64 {
    let (ax, ay) = seg.a;
    let (bx, by) = seg.b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0);
    dist(p, (ax + t * dx, ay + t * dy))
}

/// The frame borders the box lies within `margin_px` of.
pub fn touches_frame_edge(b: &BBox, frame: &FrameDims, margin_px: f64) -> BTreeSet<Edge> {
    let mut edges = BTreeSet::new();
    if b.x <= margin_px {
        edges.insert(Edge::Left);
    }
    if b.right() >= frame.width - margin_px {
        edges.insert(Edge::Right);
    }
    if b.y <= margin_px {
        edges.insert(Edge::Top);
    }
    if b.bottom() >= frame.height - margin_px {
        edges.insert(Edge::Bottom);
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h)
    }

    fn poly(vs: &[(f64, f64)]) -> Polygon {
        Polygon::new(vs.to_vec()).unwrap()
    }

    /// Counting oracle for IoU on integer-aligned boxes: rasterize onto a
    /// unit grid and count cells.
    fn raster_iou(a: &BBox, b: &BBox) -> f64 {
        let cell_in = |bb: &BBox, cx: i64, cy: i64| {
            (cx as f64) >= bb.x
                && ((cx + 1) as f64) <= bb.right()
                && (cy as f64) >= bb.y
                && ((cy + 1) as f64) <= bb.bottom()
        };
        let (mut inter, mut union) = (0u64, 0u64);
        for cx in -20..40 {
            for cy in -20..40 {
                let ia = cell_in(a, cx, cy);
                let ib = cell_in(b, cx, cy);
                if ia && ib {
                    inter += 1;
                }
                if ia || ib {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    }

    /// Independent point-in-polygon (crossing number) for the Monte-Carlo
    /// overlap oracle.
    fn point_in_poly(p: (f64, f64), vs: &[(f64, f64)]) -> bool {
        let mut inside = false;
        let n = vs.len();
        for i in 0..n {
            let (x1, y1) = vs[i];
            let (x2, y2) = vs[(i + 1) % n];
            if (y1 > p.1) != (y2 > p.1) {
                let xint = x1 + (p.1 - y1) / (y2 - y1) * (x2 - x1);
                if p.0 < xint {
                    inside = !inside;
                }
            }
        }
        inside
    }

    fn mc_overlap_ratio(b: &BBox, poly: &Polygon, samples: u32, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0u32;
        for _ in 0..samples {
            let px = b.x + rng.gen::<f64>() * b.w;
            let py = b.y + rng.gen::<f64>() * b.h;
            if point_in_poly((px, py), poly.vertices()) {
                hits += 1;
            }
        }
        hits as f64 / samples as f64
    }

    #[test]
    fn iou_identical_boxes_is_one() {
        let a = bx(0.0, 0.0, 4.0, 4.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_edge_touching_boxes_is_zero() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        let b = bx(2.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &b), 0.0);
        let c = bx(10.0, 10.0, 2.0, 2.0);
        assert_eq!(iou(&a, &c), 0.0);
    }

    #[test]
    fn iou_half_overlap_is_one_third() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        let b = bx(1.0, 0.0, 2.0, 2.0);
        let got = iou(&a, &b);
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
        assert!((got - raster_iou(&a, &b)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded_translation_invariant(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            aw in 0.1..40.0f64, ah in 0.1..40.0f64,
            bx_ in -50.0..50.0f64, by in -50.0..50.0f64,
            bw in 0.1..40.0f64, bh in 0.1..40.0f64,
            tx in -30.0..30.0f64, ty in -30.0..30.0f64,
        ) {
            let a = bx(ax, ay, aw, ah);
            let b = bx(bx_, by, bw, bh);
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - iou(&b, &a)).abs() < 1e-12);
            let at = bx(ax + tx, ay + ty, aw, ah);
            let bt = bx(bx_ + tx, by + ty, bw, bh);
            prop_assert!((v - iou(&at, &bt)).abs() < 1e-9);
        }
    }

    #[test]
    fn box_inside_polygon_has_full_overlap() {
        let p = poly(&[(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]);
        let b = bx(10.0, 10.0, 20.0, 20.0);
        assert!((box_polygon_overlap_area(&b, &p) - b.area()).abs() < 1e-9);
        assert!(box_polygon_intersects(&b, &p, 0.0));
        assert!(box_polygon_intersects(&b, &p, 0.99));
    }

    #[test]
    fn box_outside_polygon_does_not_intersect() {
        let p = poly(&[(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]);
        let b = bx(200.0, 200.0, 20.0, 20.0);
        assert_eq!(box_polygon_overlap_area(&b, &p), 0.0);
        assert!(!box_polygon_intersects(&b, &p, 0.0));
    }

    #[test]
    fn box_sharing_only_an_edge_does_not_intersect_at_zero_ratio() {
        let p = poly(&[(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]);
        let b = bx(100.0, 10.0, 20.0, 20.0);
        assert!(!box_polygon_intersects(&b, &p, 0.0));
    }

    #[test]
    fn box_straddling_polygon_edge_quarter_overlap() {
        // box extends 75 px left of the polygon: overlap is 25x50 of 100x50
        let p = poly(&[(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]);
        let b = bx(-75.0, 10.0, 100.0, 50.0);
        let ratio = box_polygon_overlap_area(&b, &p) / b.area();
        assert!((ratio - 0.25).abs() < 1e-12);
        assert!(box_polygon_intersects(&b, &p, 0.0));
        assert!(box_polygon_intersects(&b, &p, 0.2));
        assert!(!box_polygon_intersects(&b, &p, 0.25)); // strictly-greater rule
    }

    #[test]
    fn concave_polygon_clip_splits_into_disjoint_pieces() {
        // block with a slot cut upward from its bottom edge between x=2..4
        let u = poly(&[
            (0.0, 0.0),
            (6.0, 0.0),
            (6.0, 6.0),
            (4.0, 6.0),
            (4.0, 2.0),
            (2.0, 2.0),
            (2.0, 6.0),
            (0.0, 6.0),
        ]);
        assert!((u.area() - 28.0).abs() < 1e-12);
        // strip across the slot: two disjoint 2x2 squares remain
        let b = bx(0.0, 4.0, 6.0, 2.0);
        assert!((box_polygon_overlap_area(&b, &u) - 8.0).abs() < 1e-12);
        let mc = mc_overlap_ratio(&b, &u, 100_000, 7);
        assert!((8.0 / 12.0 - mc).abs() < 0.02);
    }

    #[test]
    fn overlap_area_matches_monte_carlo_on_random_convex_polygons() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..100u64 {
            // convex polygon: points on a circle at sorted random angles
            let cx = rng.gen_range(100.0..200.0);
            let cy = rng.gen_range(100.0..200.0);
            let r = rng.gen_range(30.0..90.0);
            let k = rng.gen_range(3..9);
            let mut angles: Vec<f64> = (0..k)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            if angles.len() < 3 {
                continue;
            }
            let p = poly(
                &angles
                    .iter()
                    .map(|t| (cx + r * t.cos(), cy + r * t.sin()))
                    .collect::<Vec<_>>(),
            );
            let b = bx(
                rng.gen_range(50.0..250.0),
                rng.gen_range(50.0..250.0),
                rng.gen_range(10.0..120.0),
                rng.gen_range(10.0..120.0),
            );
            let exact = box_polygon_overlap_area(&b, &p) / b.area();
            let mc = mc_overlap_ratio(&b, &p, 100_000, case);
            assert!(
                (exact - mc).abs() <= 0.02,
                "case {case}: exact {exact} vs mc {mc}"
            );
        }
    }

    #[test]
    fn degenerate_polygons_are_rejected() {
        assert_eq!(
            Polygon::new(vec![(0.0, 0.0), (1.0, 0.0)]),
            Err(GeometryError::TooFewVertices(2))
        );
        // collinear: the closing edge runs back over the other two
        assert!(matches!(
            Polygon::new(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]),
            Err(GeometryError::SelfIntersection(..))
        ));
        // sliver so thin its area vanishes
        assert_eq!(
            Polygon::new(vec![(0.0, 0.0), (1.0, 0.0), (0.5, 1e-12)]),
            Err(GeometryError::ZeroArea)
        );
        // bowtie
        assert!(matches!(
            Polygon::new(vec![(0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0)]),
            Err(GeometryError::SelfIntersection(..))
        ));
        // repeated vertex
        assert!(matches!(
            Polygon::new(vec![(0.0, 0.0), (0.0, 0.0), (2.0, 0.0), (1.0, 2.0)]),
            Err(GeometryError::CoincidentVertices(..))
        ));
    }

    #[test]
    fn dist_to_segment_on_segment_is_zero() {
        let s = Segment::new((0.0, 0.0), (10.0, 0.0)).unwrap();
        assert_eq!(dist_to_segment((5.0, 0.0), &s), 0.0);
    }

    #[test]
    fn dist_to_segment_perpendicular_projection() {
        let s = Segment::new((0.0, 0.0), (10.0, 0.0)).unwrap();
        assert!((dist_to_segment((5.0, 7.0), &s) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn dist_to_segment_clamps_to_nearest_endpoint() {
        let s = Segment::new((-1.0, 0.0), (1.0, 0.0)).unwrap();
        assert!((dist_to_segment((3.0, 4.0), &s) - 20.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn touches_frame_edge_respects_margin() {
        let f = FrameDims {
            width: 1280.0,
            height: 720.0,
        };
        let b = bx(0.0, 100.0, 50.0, 50.0);
        assert_eq!(
            touches_frame_edge(&b, &f, 0.0),
            BTreeSet::from([Edge::Left])
        );
        let b = bx(3.0, 100.0, 50.0, 50.0);
        assert_eq!(
            touches_frame_edge(&b, &f, 5.0),
            BTreeSet::from([Edge::Left])
        );
        assert!(touches_frame_edge(&b, &f, 2.0).is_empty());
    }

    #[test]
    fn touches_frame_edge_reports_corners() {
        let f = FrameDims {
            width: 1280.0,
            height: 720.0,
        };
        let b = bx(0.0, 0.0, 50.0, 50.0);
        assert_eq!(
            touches_frame_edge(&b, &f, 0.0),
            BTreeSet::from([Edge::Left, Edge::Top])
        );
        let b = bx(1230.0, 670.0, 50.0, 50.0);
        assert_eq!(
            touches_frame_edge(&b, &f, 0.0),
            BTreeSet::from([Edge::Right, Edge::Bottom])
        );
    }
}
