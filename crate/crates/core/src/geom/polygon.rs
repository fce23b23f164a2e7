//! Planar polygon primitives: shoelace areas, convex clipping, ear
//! triangulation, and the signed-triangle decomposition used for
//! intersection areas.
//!
//! Rings are stored *open* (first vertex not repeated); closure is implicit.
//! All coordinates are planar meters.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pt {
    pub x: f64,
    pub y: f64,
}

impl Pt {
    pub fn new(x: f64, y: f64) -> Self {
        Pt { x, y }
    }

    pub fn dist2(&self, other: Pt) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: Pt) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// Cross product of (b - a) x (c - a); positive when a,b,c turn left.
pub fn cross(a: Pt, b: Pt, c: Pt) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn of_points(pts: impl IntoIterator<Item = Pt>) -> Option<Rect> {
        let mut it = pts.into_iter();
        let first = it.next()?;
        let mut r = Rect {
            min_x: first.x,
            min_y: first.y,
            max_x: first.x,
            max_y: first.y,
        };
        for p in it {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        Some(r)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diag(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Pt) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min_x <= other.max_x
            && other.min_x <= self.max_x
            && self.min_y <= other.max_y
            && other.min_y <= self.max_y
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Pt; 4] {
        [
            Pt::new(self.min_x, self.min_y),
            Pt::new(self.max_x, self.min_y),
            Pt::new(self.max_x, self.max_y),
            Pt::new(self.min_x, self.max_y),
        ]
    }

    /// Expand by `fx * width` on each side horizontally and `fy * height`
    /// vertically.
    pub fn padded(&self, fx: f64, fy: f64) -> Rect {
        let px = self.width() * fx;
        let py = self.height() * fy;
        Rect {
            min_x: self.min_x - px,
            min_y: self.min_y - py,
            max_x: self.max_x + px,
            max_y: self.max_y + py,
        }
    }
}

/// Signed ring area via the shoelace formula; positive when CCW.
pub fn signed_area(ring: &[Pt]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..ring.len() {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        s += a.x * b.y - b.x * a.y;
    }
    s / 2.0
}

pub fn ring_area(ring: &[Pt]) -> f64 {
    signed_area(ring).abs()
}

/// Ray-crossing point-in-ring test (half-open edge rule).
pub fn point_in_ring(p: Pt, ring: &[Pt]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Do segments a-b and c-d properly cross (intersection interior to both)?
fn segments_properly_cross(a: Pt, b: Pt, c: Pt, d: Pt) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Light self-intersection check: no two non-adjacent edges may properly
/// cross. Collinear overlaps of adjacent edges are not detected.
pub fn ring_is_simple(ring: &[Pt]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            // Skip edges sharing a vertex with edge i.
            if j == i || (j + 1) % n == i || j == (i + 1) % n {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_properly_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Sutherland-Hodgman clip of an arbitrary subject ring against a convex
/// CCW clip ring. Returns the clipped ring (possibly empty).
pub fn convex_clip(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut poly: Vec<Pt> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if poly.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let mut out = Vec::with_capacity(poly.len() + 2);
        for k in 0..poly.len() {
            let p = poly[k];
            let q = poly[(k + 1) % poly.len()];
            let fp = cross(a, b, p);
            let fq = cross(a, b, q);
            if fp >= 0.0 {
                out.push(p);
                if fq < 0.0 {
                    out.push(intersect_at(p, q, fp, fq));
                }
            } else if fq >= 0.0 {
                out.push(intersect_at(p, q, fp, fq));
            }
        }
        poly = out;
    }
    poly
}

fn intersect_at(p: Pt, q: Pt, fp: f64, fq: f64) -> Pt {
    let t = fp / (fp - fq);
    Pt::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// A triangle carrying +1 (additive) or -1 (hole) weight.
#[derive(Debug, Clone, Copy)]
pub struct SignedTri {
    pub v: [Pt; 3],
    pub sign: f64,
}

impl SignedTri {
    pub fn area(&self) -> f64 {
        cross(self.v[0], self.v[1], self.v[2]).abs() / 2.0
    }

    pub fn bbox(&self) -> Rect {
        Rect::of_points(self.v.iter().copied()).unwrap()
    }
}

/// Ear-clipping triangulation of a simple ring (any orientation).
///
/// Robust enough for the well-behaved rings this crate produces (Voronoi
/// cells, admin grids); falls back to clipping the most convex corner when
/// numerical noise leaves no strict ear.
pub fn ear_triangulate(ring: &[Pt]) -> Vec<[Pt; 3]> {
    let mut pts: Vec<Pt> = Vec::with_capacity(ring.len());
    for &p in ring {
        if pts.last().is_none_or(|&q| q != p) {
            pts.push(p);
        }
    }
    if pts.len() >= 2 && pts[0] == *pts.last().unwrap() {
        pts.pop();
    }
    if pts.len() < 3 {
        return Vec::new();
    }
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }

    let scale2 = Rect::of_points(pts.iter().copied()).unwrap().diag().powi(2);
    let eps = scale2 * 1e-14;

    let mut idx: Vec<usize> = (0..pts.len()).collect();
    let mut tris = Vec::with_capacity(pts.len().saturating_sub(2));
    while idx.len() > 3 {
        let n = idx.len();
        let mut clipped = false;
        let mut best: Option<(usize, f64)> = None;
        for k in 0..n {
            let (ia, ib, ic) = (idx[(k + n - 1) % n], idx[k], idx[(k + 1) % n]);
            let (a, b, c) = (pts[ia], pts[ib], pts[ic]);
            let turn = cross(a, b, c);
            if turn <= eps {
                continue; // reflex or flat corner
            }
            if best.is_none_or(|(_, t)| turn > t) {
                best = Some((k, turn));
            }
            let mut contains_other = false;
            for &other in &idx {
                if other == ia || other == ib || other == ic {
                    continue;
                }
                if point_in_tri_closed(pts[other], a, b, c, eps) {
                    contains_other = true;
                    break;
                }
            }
            if !contains_other {
                tris.push([a, b, c]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            // Numerical stalemate: clip the widest convex corner anyway.
            let k = best.map(|(k, _)| k).unwrap_or(0);
            let n = idx.len();
            let (ia, ib, ic) = (idx[(k + n - 1) % n], idx[k], idx[(k + 1) % n]);
            tris.push([pts[ia], pts[ib], pts[ic]]);
            idx.remove(k);
        }
    }
    tris.push([pts[idx[0]], pts[idx[1]], pts[idx[2]]]);
    tris
}

fn point_in_tri_closed(p: Pt, a: Pt, b: Pt, c: Pt, eps: f64) -> bool {
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    d1 >= -eps && d2 >= -eps && d3 >= -eps
}

/// Decompose outer ring + holes into signed triangles. The indicator
/// function of the polygon equals the signed sum of triangle indicators
/// almost everywhere, so intersection areas distribute over the pieces.
pub fn signed_triangles(rings: &[Vec<Pt>]) -> Vec<SignedTri> {
    let mut out = Vec::new();
    for (i, ring) in rings.iter().enumerate() {
        let sign = if i == 0 { 1.0 } else { -1.0 };
        for v in ear_triangulate(ring) {
            out.push(SignedTri { v, sign });
        }
    }
    out
}

/// Area of the intersection of two signed-triangle decompositions.
pub fn intersection_area(a: &[SignedTri], b: &[SignedTri]) -> f64 {
    let mut total = 0.0;
    for ta in a {
        let ba = ta.bbox();
        for tb in b {
            if !ba.intersects(&tb.bbox()) {
                continue;
            }
            total += ta.sign * tb.sign * tri_tri_area(ta, tb);
        }
    }
    total.max(0.0)
}

fn tri_tri_area(a: &SignedTri, b: &SignedTri) -> f64 {
    let mut clip = b.v.to_vec();
    if signed_area(&clip) < 0.0 {
        clip.reverse();
    }
    ring_area(&convex_clip(&a.v, &clip))
}
