//! Voronoi tessellation over tower sites by incremental half-plane clipping.
//!
//! Each cell starts as the padded bounding box and is cut by the
//! perpendicular bisector against nearby sites, nearest first; once the next
//! candidate is farther than twice the cell's circumradius it cannot cut
//! anything and the cell is final. A uniform grid orders the candidates, so
//! construction is near-linear for realistic tower layouts and cells are
//! independent (built in parallel).
//!
//! Every cell edge remembers which neighbor's bisector produced it, which
//! gives boundary-sharing adjacency for free: a neighbor counts only when
//! the shared edge has positive length, so cells touching at a single point
//! (the classic four-quadrant corner) are *not* adjacent.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::polygon::{ring_area, Pt, Rect};

/// Fraction of the tower bbox added on each side so boundary cells stay
/// finite. Recorded in exports because boundary densities depend on it.
pub const BBOX_PAD_FRACTION: f64 = 0.10;

/// Fallback extent (meters) when the tower set is degenerate (single tower
/// or all towers collinear on an axis).
const MIN_EXTENT_M: f64 = 1_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum EdgeLabel {
    /// Edge lies on the padded bounding box.
    Bbox,
    /// Edge lies on the bisector against this seed index.
    Neighbor(u32),
}

/// One Voronoi cell: a convex ring plus its positive-length-edge neighbors.
#[derive(Debug, Clone)]
pub struct VoronoiCell {
    pub ring: Vec<Pt>,
    /// Seed indices sharing a boundary segment of positive length, sorted.
    pub neighbors: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Tessellation {
    pub bbox: Rect,
    pub cells: Vec<VoronoiCell>,
    /// Seeds that were nudged to break exact coordinate duplicates.
    pub perturbed: Vec<u32>,
    pub pad_fraction: f64,
}

impl Tessellation {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn area_m2(&self, i: usize) -> f64 {
        ring_area(&self.cells[i].ring)
    }

    /// Index of the cell containing `p`, by linear scan (test/debug use).
    pub fn locate(&self, p: Pt) -> Option<usize> {
        self.cells
            .iter()
            .position(|c| crate::geom::polygon::point_in_ring(p, &c.ring))
    }
}

/// Deterministically nudge exact coordinate duplicates by ~1 cm so every
/// seed owns a nonempty cell. The direction comes from a hash of the seed's
/// stable id, so reruns and reorderings agree.
pub fn perturb_duplicates(seeds: &mut [Pt], ids: &[String]) -> Vec<u32> {
    use std::collections::HashMap;
    let mut seen: HashMap<(u64, u64), u32> = HashMap::new();
    let mut perturbed = Vec::new();
    for i in 0..seeds.len() {
        loop {
            let key = (seeds[i].x.to_bits(), seeds[i].y.to_bits());
            match seen.get(&key) {
                None => {
                    seen.insert(key, i as u32);
                    break;
                }
                Some(_) => {
                    let h = fnv1a(ids[i].as_bytes());
                    let angle = (h % 360) as f64 * std::f64::consts::PI / 180.0;
                    seeds[i].x += 0.01 * angle.cos();
                    seeds[i].y += 0.01 * angle.sin();
                    if !perturbed.contains(&(i as u32)) {
                        perturbed.push(i as u32);
                    }
                }
            }
        }
    }
    perturbed
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Build the tessellation for pre-deduplicated seeds.
pub fn tessellate(seeds: &[Pt]) -> Result<Tessellation> {
    if seeds.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    let bbox = padded_bbox(seeds);
    let grid = GridIndex::build(seeds, &bbox);

    let raw: Vec<(Vec<Pt>, Vec<EdgeLabel>)> = (0..seeds.len())
        .into_par_iter()
        .map(|i| build_cell(i as u32, seeds, &bbox, &grid))
        .collect();

    // Union-symmetrize adjacency: an edge seen from either side counts.
    let eps_len2 = (bbox.diag() * 1e-9).powi(2);
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for (i, (ring, labels)) in raw.iter().enumerate() {
        let n = ring.len();
        for k in 0..n {
            if let EdgeLabel::Neighbor(j) = labels[k] {
                if ring[k].dist2(ring[(k + 1) % n]) > eps_len2 {
                    let (a, b) = ((i as u32).min(j), (i as u32).max(j));
                    pairs.push((a, b));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();

    let mut neighbor_lists: Vec<Vec<u32>> = vec![Vec::new(); seeds.len()];
    for (a, b) in pairs {
        neighbor_lists[a as usize].push(b);
        neighbor_lists[b as usize].push(a);
    }
    for list in &mut neighbor_lists {
        list.sort_unstable();
    }

    let cells = raw
        .into_iter()
        .zip(neighbor_lists)
        .map(|((ring, _), neighbors)| VoronoiCell { ring, neighbors })
        .collect();

    Ok(Tessellation {
        bbox,
        cells,
        perturbed: Vec::new(),
        pad_fraction: BBOX_PAD_FRACTION,
    })
}

fn padded_bbox(seeds: &[Pt]) -> Rect {
    let raw = Rect::of_points(seeds.iter().copied()).unwrap();
    // Degenerate extents (single tower, collinear towers) get a floor so the
    // padded box still has positive area.
    let w = raw.width().max(MIN_EXTENT_M);
    let h = raw.height().max(MIN_EXTENT_M);
    let cx = (raw.min_x + raw.max_x) / 2.0;
    let cy = (raw.min_y + raw.max_y) / 2.0;
    Rect {
        min_x: cx - w / 2.0,
        min_y: cy - h / 2.0,
        max_x: cx + w / 2.0,
        max_y: cy + h / 2.0,
    }
    .padded(BBOX_PAD_FRACTION, BBOX_PAD_FRACTION)
}

fn build_cell(i: u32, seeds: &[Pt], bbox: &Rect, grid: &GridIndex) -> (Vec<Pt>, Vec<EdgeLabel>) {
    let seed = seeds[i as usize];
    let mut verts: Vec<Pt> = bbox.corners().to_vec();
    let mut labels: Vec<EdgeLabel> = vec![EdgeLabel::Bbox; 4];
    let mut r2max = max_dist2(seed, &verts);

    let mut ring_buf: Vec<u32> = Vec::new();
    for ring in 0..grid.max_rings() {
        // Any site farther than 2*r_max cannot cut the current cell.
        let lb = grid.ring_min_dist(seed, ring);
        if lb * lb > 4.0 * r2max {
            break;
        }
        grid.collect_ring(seed, ring, &mut ring_buf);
        ring_buf.retain(|&j| j != i);
        ring_buf.sort_unstable_by(|&a, &b| {
            seed.dist2(seeds[a as usize])
                .partial_cmp(&seed.dist2(seeds[b as usize]))
                .unwrap()
                .then(a.cmp(&b))
        });
        for &j in &ring_buf {
            let other = seeds[j as usize];
            if seed.dist2(other) > 4.0 * r2max {
                break;
            }
            clip_bisector(&mut verts, &mut labels, seed, other, j);
            if verts.is_empty() {
                return (verts, labels); // only possible for duplicate seeds
            }
            r2max = max_dist2(seed, &verts);
        }
    }
    (verts, labels)
}

fn max_dist2(seed: Pt, verts: &[Pt]) -> f64 {
    verts.iter().map(|&v| seed.dist2(v)).fold(0.0, f64::max)
}

/// Clip the labeled cell by the half-plane closer to `seed` than to `other`.
fn clip_bisector(verts: &mut Vec<Pt>, labels: &mut Vec<EdgeLabel>, seed: Pt, other: Pt, j: u32) {
    let mx = (seed.x + other.x) / 2.0;
    let my = (seed.y + other.y) / 2.0;
    let ux = other.x - seed.x;
    let uy = other.y - seed.y;
    // f(p) <= 0 on the seed's side of the bisector.
    let f = |p: Pt| (p.x - mx) * ux + (p.y - my) * uy;

    let n = verts.len();
    let mut new_verts = Vec::with_capacity(n + 2);
    let mut new_labels = Vec::with_capacity(n + 2);
    for k in 0..n {
        let a = verts[k];
        let b = verts[(k + 1) % n];
        let la = labels[k];
        let fa = f(a);
        let fb = f(b);
        if fa <= 0.0 {
            new_verts.push(a);
            new_labels.push(la);
            if fb > 0.0 {
                let t = fa / (fa - fb);
                new_verts.push(Pt::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
                new_labels.push(EdgeLabel::Neighbor(j));
            }
        } else if fb <= 0.0 {
            let t = fa / (fa - fb);
            new_verts.push(Pt::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
            new_labels.push(la);
        }
    }
    *verts = new_verts;
    *labels = new_labels;
}

/// Uniform bucket grid for nearest-first candidate ordering.
struct GridIndex {
    origin_x: f64,
    origin_y: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl GridIndex {
    fn build(seeds: &[Pt], bbox: &Rect) -> GridIndex {
        let n = seeds.len().max(1);
        let target = (n as f64).sqrt().ceil() as usize;
        let nx = target.clamp(1, 512);
        let ny = target.clamp(1, 512);
        let cell = (bbox.width() / nx as f64)
            .max(bbox.height() / ny as f64)
            .max(1e-9);
        let nx = (bbox.width() / cell).ceil().max(1.0) as usize;
        let ny = (bbox.height() / cell).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); nx * ny];
        let idx_of = |p: Pt| {
            let gx = (((p.x - bbox.min_x) / cell) as usize).min(nx - 1);
            let gy = (((p.y - bbox.min_y) / cell) as usize).min(ny - 1);
            gy * nx + gx
        };
        for (i, &p) in seeds.iter().enumerate() {
            buckets[idx_of(p)].push(i as u32);
        }
        GridIndex {
            origin_x: bbox.min_x,
            origin_y: bbox.min_y,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn coords(&self, p: Pt) -> (isize, isize) {
        let gx = (((p.x - self.origin_x) / self.cell) as isize).clamp(0, self.nx as isize - 1);
        let gy = (((p.y - self.origin_y) / self.cell) as isize).clamp(0, self.ny as isize - 1);
        (gx, gy)
    }

    fn max_rings(&self) -> usize {
        self.nx.max(self.ny) + 1
    }

    /// Lower bound on the distance from `p` to any point of a ring-`k` bucket.
    fn ring_min_dist(&self, _p: Pt, k: usize) -> f64 {
        if k <= 1 {
            0.0
        } else {
            (k - 1) as f64 * self.cell
        }
    }

    /// Seeds in buckets at Chebyshev bucket-distance exactly `k` from `p`.
    fn collect_ring(&self, p: Pt, k: usize, out: &mut Vec<u32>) {
        out.clear();
        let (cx, cy) = self.coords(p);
        let k = k as isize;
        let mut push = |gx: isize, gy: isize| {
            if gx >= 0 && gy >= 0 && (gx as usize) < self.nx && (gy as usize) < self.ny {
                out.extend_from_slice(&self.buckets[gy as usize * self.nx + gx as usize]);
            }
        };
        if k == 0 {
            push(cx, cy);
            return;
        }
        for gx in (cx - k)..=(cx + k) {
            push(gx, cy - k);
            push(gx, cy + k);
        }
        for gy in (cy - k + 1)..=(cy + k - 1) {
            push(cx - k, gy);
            push(cx + k, gy);
        }
    }
}
