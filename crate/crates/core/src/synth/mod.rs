//! Seeded synthetic worlds with known ground truth.
//!
//! The generator is deliberately simple: it exists to make pipeline claims
//! falsifiable, not to model real mobility. A world has a dense urban disk
//! and sparse countryside, a nested iris/commune admin grid, per-user home
//! and work towers, and a census that equals the true home counts per unit
//! exactly. Everything derives from the seed; per-user substreams make
//! generation parallelizable without changing a single byte of output.
//!
//! A second mode emits the same continuous trajectory snapped onto tower
//! grids of different densities, the controlled setting for studying how
//! spatial delineation moves the entropy indicator.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{LogNormal, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::config::{parse_instant, DayWindow};
use crate::error::{Error, Result};
use crate::geom::polygon::Pt;
use crate::ingest::{AdminGeometry, CdrRecord, CensusRow, CensusTable, TowerRegistry};

const TAG_TOWERS: u64 = 0x01;
const TAG_USERS: u64 = 0x02;
const TAG_EVENTS: u64 = 0x03;
const TAG_EDI: u64 = 0x04;
const TAG_SWEEP_PATH: u64 = 0x05;
const TAG_SWEEP_FIXED: u64 = 0x06;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn stream(seed: u64, tag: u64, item: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(splitmix64(
        seed ^ splitmix64(tag.wrapping_mul(0x9e37).wrapping_add(item)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    /// Square region side, km.
    pub extent_km: f64,
    pub towers_dense: usize,
    pub towers_sparse: usize,
    /// Urban disk radius as a fraction of the extent.
    pub dense_radius_fraction: f64,
    pub users: usize,
    pub days: u32,
    /// Poisson mean of events per user per day.
    pub events_per_day_mean: f64,
    /// Probability a night event hits the true home tower.
    pub p_home_night: f64,
    pub p_home_day: f64,
    /// Probability a non-home day event hits the work tower.
    pub p_work_day: f64,
    /// Median commute distance, km (log-normal).
    pub work_dist_km: f64,
    pub work_dist_sigma: f64,
    /// Pool size for "nearby tower" noise events.
    pub near_towers: usize,
    /// Iris grid is `iris_grid x iris_grid`; commune grid must divide it.
    pub iris_grid: usize,
    pub commune_grid: usize,
    /// Where the synthetic region sits on Earth.
    pub origin_lonlat: (f64, f64),
    pub start: DateTime<Utc>,
    /// Night definition used during generation (matches the default study
    /// config so detection windows line up).
    pub local_offset_secs: i32,
    pub night_window: DayWindow,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 42,
            extent_km: 60.0,
            towers_dense: 146,
            towers_sparse: 254,
            dense_radius_fraction: 0.2,
            users: 2_000,
            days: 30,
            events_per_day_mean: 5.0,
            p_home_night: 0.95,
            p_home_day: 0.3,
            p_work_day: 0.8,
            work_dist_km: 8.0,
            work_dist_sigma: 0.5,
            near_towers: 8,
            iris_grid: 8,
            commune_grid: 4,
            origin_lonlat: (2.0, 47.0),
            start: parse_instant("2007-06-01").unwrap(),
            local_offset_secs: 2 * 3600,
            night_window: DayWindow::new(19 * 3600, 9 * 3600),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_home_night", self.p_home_night),
            ("p_home_day", self.p_home_day),
            ("p_work_day", self.p_work_day),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if self.towers_dense == 0 || self.towers_sparse == 0 {
            return Err(Error::Config(
                "each tower regime needs at least one tower".into(),
            ));
        }
        if self.users == 0 {
            return Err(Error::Config("users must be >= 1".into()));
        }
        if self.extent_km <= 0.0 {
            return Err(Error::Config("extent_km must be positive".into()));
        }
        if self.iris_grid == 0
            || self.commune_grid == 0
            || !self.iris_grid.is_multiple_of(self.commune_grid)
        {
            return Err(Error::Config(
                "commune_grid must divide iris_grid (nested levels)".into(),
            ));
        }
        Ok(())
    }

    fn extent_m(&self) -> f64 {
        self.extent_km * 1000.0
    }

    /// Admin grid span: wider than the region so it also covers the padded
    /// Voronoi bounding box (full-coverage crosswalks).
    fn admin_span_m(&self) -> f64 {
        self.extent_m() * 1.3
    }
}

/// What the generator knows and the pipeline must recover.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// user id -> true home cell id.
    pub homes: BTreeMap<String, String>,
    /// level name -> unit id -> true resident count.
    pub population_by_level: BTreeMap<String, BTreeMap<String, u64>>,
}

impl GroundTruth {
    /// `user_id,home_cell`, sorted by user.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "user_id,home_cell")?;
        for (user, cell) in &self.homes {
            writeln!(w, "{user},{cell}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub registry: TowerRegistry,
    pub admin: Vec<AdminGeometry>,
    /// Tower-level validation populations (true homes per cell).
    pub census_cell: CensusTable,
    /// Iris-level populations with the synthetic deprivation attribute.
    pub census_iris: CensusTable,
    pub census_commune: CensusTable,
    pub truth: GroundTruth,
    home_tower: Vec<u32>,
    work_tower: Vec<u32>,
    near: Vec<Vec<u32>>,
    user_id_width: usize,
}

/// One synthetic event, compact. `user` indexes the generated user list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthEvent {
    pub unix: i64,
    pub user: u32,
    pub cell: u32,
}

pub fn user_id(index: u32, width: usize) -> String {
    format!("u{:0width$}", index, width = width)
}

impl World {
    pub fn user_name(&self, index: u32) -> String {
        user_id(index, self.user_id_width)
    }

    pub fn true_home(&self, index: u32) -> u32 {
        self.home_tower[index as usize]
    }
}

/// Deterministic synthetic world: towers, admin grid, census, ground truth.
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let ext = config.extent_m();
    let half = ext / 2.0;
    let disk_r = config.dense_radius_fraction * ext;

    // Towers: uniform in the urban disk, uniform outside it.
    let mut rng = stream(config.seed, TAG_TOWERS, 0);
    let mut positions: Vec<Pt> = Vec::with_capacity(config.towers_dense + config.towers_sparse);
    for _ in 0..config.towers_dense {
        let r = disk_r * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        positions.push(Pt::new(r * theta.cos(), r * theta.sin()));
    }
    for _ in 0..config.towers_sparse {
        loop {
            let p = Pt::new(rng.random_range(-half..half), rng.random_range(-half..half));
            if p.x.hypot(p.y) > disk_r {
                positions.push(p);
                break;
            }
        }
    }

    let proj = crate::proj::Projection::new(config.origin_lonlat.0, config.origin_lonlat.1);
    let width = (positions.len().max(1) as f64).log10().floor() as usize + 1;
    let rows: Vec<(String, f64, f64)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (lon, lat) = proj.inverse(p.x, p.y);
            (format!("c{:0width$}", i, width = width.max(4)), lon, lat)
        })
        .collect();
    let registry = TowerRegistry::from_rows(rows, Some(config.origin_lonlat))?;

    // Admin grids, nested: commune cells are blocks of iris cells.
    let admin = build_admin_grid(config);

    // Nearest-neighbor pools and work towers.
    let pts = registry.points();
    let near: Vec<Vec<u32>> = (0..pts.len())
        .into_par_iter()
        .map(|i| k_nearest(pts, i, config.near_towers))
        .collect();

    let n_towers = pts.len() as u32;
    let work_dist = LogNormal::new((config.work_dist_km * 1000.0).ln(), config.work_dist_sigma)
        .map_err(|e| Error::Config(format!("work distance distribution: {e}")))?;
    let per_user: Vec<(u32, u32)> = (0..config.users as u64)
        .into_par_iter()
        .map(|u| {
            let mut rng = stream(config.seed, TAG_USERS, u);
            let home = rng.random_range(0..n_towers);
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let d: f64 = rng.sample(work_dist);
            let hp = pts[home as usize];
            let wp = Pt::new(
                (hp.x + d * theta.cos()).clamp(-half, half),
                (hp.y + d * theta.sin()).clamp(-half, half),
            );
            (home, nearest_tower(pts, wp))
        })
        .collect();
    let home_tower: Vec<u32> = per_user.iter().map(|&(h, _)| h).collect();
    let work_tower: Vec<u32> = per_user.iter().map(|&(_, w)| w).collect();

    let user_id_width = (config.users.max(1) as f64).log10().floor() as usize + 1;

    // Ground truth and censuses from true homes.
    let mut homes = BTreeMap::new();
    let mut pop_cell: BTreeMap<String, u64> =
        registry.ids().iter().map(|id| (id.clone(), 0)).collect();
    for (u, &home) in home_tower.iter().enumerate() {
        let uid = user_id(u as u32, user_id_width);
        let cell = registry.id(home).to_string();
        *pop_cell.get_mut(&cell).unwrap() += 1;
        homes.insert(uid, cell);
    }

    let grid = AdminGridSpec::of(config);
    let mut pop_iris: BTreeMap<String, u64> = grid.iris_ids().map(|id| (id, 0)).collect();
    let mut pop_commune: BTreeMap<String, u64> = grid.commune_ids().map(|id| (id, 0)).collect();
    for &home in &home_tower {
        let p = pts[home as usize];
        *pop_iris.get_mut(&grid.iris_id_of(p)).unwrap() += 1;
        *pop_commune.get_mut(&grid.commune_id_of(p)).unwrap() += 1;
    }

    // Deprivation-style contextual attribute: smooth field plus noise.
    let mut edi_rng = stream(config.seed, TAG_EDI, 0);
    let mut edi_iris: BTreeMap<String, f64> = BTreeMap::new();
    for (id, center) in grid.iris_centers() {
        let sx = (2.3 * std::f64::consts::PI * (center.x / grid.span + 0.15)).sin();
        let cy = (1.7 * std::f64::consts::PI * (center.y / grid.span - 0.1)).cos();
        edi_iris.insert(id, sx * cy + 0.25 * edi_rng.random_range(-1.0..1.0));
    }

    let census_cell = CensusTable {
        attr_names: vec![],
        rows: pop_cell
            .iter()
            .map(|(id, &p)| {
                (
                    id.clone(),
                    CensusRow {
                        population: p as f64,
                        attrs: vec![],
                    },
                )
            })
            .collect(),
    };
    let census_iris = CensusTable {
        attr_names: vec!["EDI".into()],
        rows: pop_iris
            .iter()
            .map(|(id, &p)| {
                (
                    id.clone(),
                    CensusRow {
                        population: p as f64,
                        attrs: vec![edi_iris[id]],
                    },
                )
            })
            .collect(),
    };
    // Commune EDI: population-weighted mean of member iris values.
    let mut commune_acc: BTreeMap<String, (f64, f64, f64, usize)> = BTreeMap::new();
    for (iris_id, &edi) in &edi_iris {
        let commune_id = grid.commune_of_iris(iris_id);
        let pop = pop_iris[iris_id] as f64;
        let e = commune_acc.entry(commune_id).or_insert((0.0, 0.0, 0.0, 0));
        e.0 += edi * pop;
        e.1 += pop;
        e.2 += edi;
        e.3 += 1;
    }
    let census_commune = CensusTable {
        attr_names: vec!["EDI".into()],
        rows: pop_commune
            .iter()
            .map(|(id, &p)| {
                let (wsum, wtot, plain, n) = commune_acc[id];
                let edi = if wtot > 0.0 {
                    wsum / wtot
                } else {
                    plain / n as f64
                };
                (
                    id.clone(),
                    CensusRow {
                        population: p as f64,
                        attrs: vec![edi],
                    },
                )
            })
            .collect(),
    };

    let truth = GroundTruth {
        homes,
        population_by_level: [
            ("cell".to_string(), pop_cell),
            ("iris".to_string(), pop_iris),
            ("commune".to_string(), pop_commune),
        ]
        .into_iter()
        .collect(),
    };

    Ok(World {
        config: config.clone(),
        registry,
        admin,
        census_cell,
        census_iris,
        census_commune,
        truth,
        home_tower,
        work_tower,
        near,
        user_id_width,
    })
}

/// Generate the event stream, sorted by (timestamp, user, cell) so output
/// is identical for any parallelism.
pub fn generate_events(world: &World) -> Vec<SynthEvent> {
    let cfg = &world.config;
    let start = cfg.start.timestamp();
    let night = cfg.night_window;
    let offset = cfg.local_offset_secs as i64;
    let mut events: Vec<SynthEvent> = (0..cfg.users as u64)
        .into_par_iter()
        .flat_map_iter(|u| {
            let mut rng = stream(cfg.seed, TAG_EVENTS, u);
            let home = world.home_tower[u as usize];
            let work = world.work_tower[u as usize];
            let mut out = Vec::new();
            for day in 0..cfg.days as i64 {
                let n: f64 = rng.sample(Poisson::new(cfg.events_per_day_mean).unwrap());
                for _ in 0..n as u32 {
                    let sec = rng.random_range(0..86_400i64);
                    let unix = start + day * 86_400 + sec;
                    let local = (unix + offset).rem_euclid(86_400) as u32;
                    let cell = if night.contains(local) {
                        if rng.random::<f64>() < cfg.p_home_night {
                            home
                        } else {
                            pick_near(&mut rng, &world.near[home as usize], home)
                        }
                    } else if rng.random::<f64>() < cfg.p_home_day {
                        home
                    } else if rng.random::<f64>() < cfg.p_work_day {
                        work
                    } else {
                        pick_near(&mut rng, &world.near[work as usize], work)
                    };
                    out.push(SynthEvent {
                        unix,
                        user: u as u32,
                        cell,
                    });
                }
            }
            out
        })
        .collect();
    events.sort_unstable_by_key(|e| (e.unix, e.user, e.cell));
    events
}

fn pick_near(rng: &mut ChaCha20Rng, pool: &[u32], fallback: u32) -> u32 {
    if pool.is_empty() {
        fallback
    } else {
        pool[rng.random_range(0..pool.len())]
    }
}

/// Materialize records (small worlds / tests).
pub fn events_to_records(world: &World, events: &[SynthEvent]) -> Vec<CdrRecord> {
    events
        .iter()
        .map(|e| CdrRecord {
            user: world.user_name(e.user),
            unix: e.unix,
            cell: e.cell,
        })
        .collect()
}

/// Stream the CDR CSV without materializing strings.
pub fn write_cdr_csv<W: std::io::Write>(
    world: &World,
    events: &[SynthEvent],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "user_id,timestamp,cell_id")?;
    for e in events {
        let ts = crate::ingest::rfc3339_utc(e.unix);
        writeln!(
            w,
            "{},{},{}",
            world.user_name(e.user),
            ts,
            world.registry.id(e.cell)
        )?;
    }
    Ok(())
}

fn nearest_tower(pts: &[Pt], p: Pt) -> u32 {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for (i, &t) in pts.iter().enumerate() {
        let d = t.dist2(p);
        if d < best_d {
            best_d = d;
            best = i as u32;
        }
    }
    best
}

fn k_nearest(pts: &[Pt], i: usize, k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..pts.len() as u32).filter(|&j| j as usize != i).collect();
    order.sort_by(|&a, &b| {
        pts[i]
            .dist2(pts[a as usize])
            .partial_cmp(&pts[i].dist2(pts[b as usize]))
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Geometry of the nested admin grids.
struct AdminGridSpec {
    span: f64,
    iris_n: usize,
    commune_n: usize,
}

impl AdminGridSpec {
    fn of(config: &WorldConfig) -> AdminGridSpec {
        AdminGridSpec {
            span: config.admin_span_m(),
            iris_n: config.iris_grid,
            commune_n: config.commune_grid,
        }
    }

    fn cell_of(&self, p: Pt, n: usize) -> (usize, usize) {
        let half = self.span / 2.0;
        let step = self.span / n as f64;
        let col = (((p.x + half) / step) as isize).clamp(0, n as isize - 1) as usize;
        let row = (((p.y + half) / step) as isize).clamp(0, n as isize - 1) as usize;
        (row, col)
    }

    fn iris_id_of(&self, p: Pt) -> String {
        let (r, c) = self.cell_of(p, self.iris_n);
        format!("iris_{r:02}_{c:02}")
    }

    fn commune_id_of(&self, p: Pt) -> String {
        let (r, c) = self.cell_of(p, self.commune_n);
        format!("com_{r:02}_{c:02}")
    }

    fn commune_of_iris(&self, iris_id: &str) -> String {
        let parts: Vec<&str> = iris_id.trim_start_matches("iris_").split('_').collect();
        let r: usize = parts[0].parse().unwrap();
        let c: usize = parts[1].parse().unwrap();
        let ratio = self.iris_n / self.commune_n;
        format!("com_{:02}_{:02}", r / ratio, c / ratio)
    }

    fn iris_ids(&self) -> impl Iterator<Item = String> + '_ {
        let n = self.iris_n;
        (0..n).flat_map(move |r| (0..n).map(move |c| format!("iris_{r:02}_{c:02}")))
    }

    fn commune_ids(&self) -> impl Iterator<Item = String> + '_ {
        let n = self.commune_n;
        (0..n).flat_map(move |r| (0..n).map(move |c| format!("com_{r:02}_{c:02}")))
    }

    fn iris_centers(&self) -> Vec<(String, Pt)> {
        let n = self.iris_n;
        let half = self.span / 2.0;
        let step = self.span / n as f64;
        (0..n)
            .flat_map(|r| {
                (0..n).map(move |c| {
                    let center = Pt::new(
                        -half + (c as f64 + 0.5) * step,
                        -half + (r as f64 + 0.5) * step,
                    );
                    (format!("iris_{r:02}_{c:02}"), center)
                })
            })
            .collect()
    }
}

fn build_admin_grid(config: &WorldConfig) -> Vec<AdminGeometry> {
    let spec = AdminGridSpec::of(config);
    let mut units = Vec::new();
    for (level, n) in [("iris", spec.iris_n), ("commune", spec.commune_n)] {
        let half = spec.span / 2.0;
        let step = spec.span / n as f64;
        for r in 0..n {
            for c in 0..n {
                let x0 = -half + c as f64 * step;
                let y0 = -half + r as f64 * step;
                let ring = vec![
                    Pt::new(x0, y0),
                    Pt::new(x0 + step, y0),
                    Pt::new(x0 + step, y0 + step),
                    Pt::new(x0, y0 + step),
                ];
                let unit_id = if level == "iris" {
                    format!("iris_{r:02}_{c:02}")
                } else {
                    format!("com_{r:02}_{c:02}")
                };
                units.push(AdminGeometry {
                    unit_id,
                    level: level.to_string(),
                    parts: vec![vec![ring]],
                });
            }
        }
    }
    units
}

// ---------------------------------------------------------------------------
// Density sweep: one trajectory model, several tower densities.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub seed: u64,
    pub extent_km: f64,
    /// Tower spacing of the coarsest grid, km.
    pub base_spacing_km: f64,
    /// Density multipliers, one grid each (1x, 4x, 16x reproduces the
    /// three-panel delineation experiment).
    pub density_factors: Vec<f64>,
    pub users: usize,
    pub events_per_user: usize,
    /// Gaussian scatter of a user's positions around the anchor, km.
    pub path_sigma_km: f64,
    /// Anchors stay this fraction away from the region edge.
    pub margin_fraction: f64,
    pub days: u32,
    pub origin_lonlat: (f64, f64),
    pub start: DateTime<Utc>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: 42,
            extent_km: 24.0,
            base_spacing_km: 2.0,
            density_factors: vec![1.0, 4.0, 16.0],
            users: 3_000,
            events_per_user: 200,
            path_sigma_km: 3.0,
            margin_fraction: 0.25,
            days: 30,
            origin_lonlat: (2.0, 47.0),
            start: parse_instant("2007-06-01").unwrap(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub factor: f64,
    pub spacing_m: f64,
    pub registry: TowerRegistry,
    first_center: f64,
    per_side: usize,
}

impl SweepGrid {
    /// Nearest grid tower by arithmetic (regular grid, no search).
    pub fn snap(&self, p: Pt) -> u32 {
        let m = self.per_side as isize;
        let ix = (((p.x - self.first_center) / self.spacing_m).round() as isize).clamp(0, m - 1);
        let iy = (((p.y - self.first_center) / self.spacing_m).round() as isize).clamp(0, m - 1);
        (iy * m + ix) as u32
    }
}

#[derive(Debug, Clone)]
pub struct DensitySweep {
    pub config: SweepConfig,
    pub grids: Vec<SweepGrid>,
}

impl DensitySweep {
    pub fn user_grid(&self, user: usize) -> usize {
        user % self.grids.len()
    }

    /// Events of one population user on their assigned grid:
    /// `(unix, tower index)`.
    pub fn user_events(&self, user: usize) -> Vec<(i64, u32)> {
        let mut rng = stream(self.config.seed, TAG_SWEEP_PATH, user as u64);
        let grid = &self.grids[self.user_grid(user)];
        self.path_events(&mut rng, grid)
    }

    /// The fixed path snapped onto grid `g`; the displacement sequence is
    /// identical across grids.
    pub fn fixed_path_events(&self, g: usize) -> Vec<(i64, u32)> {
        let mut rng = stream(self.config.seed, TAG_SWEEP_FIXED, 0);
        self.path_events(&mut rng, &self.grids[g])
    }

    fn path_events(&self, rng: &mut ChaCha20Rng, grid: &SweepGrid) -> Vec<(i64, u32)> {
        let ext = self.config.extent_km * 1000.0;
        let half = ext / 2.0;
        let margin = self.config.margin_fraction * ext;
        let anchor = Pt::new(
            rng.random_range(-half + margin..half - margin),
            rng.random_range(-half + margin..half - margin),
        );
        let sigma = self.config.path_sigma_km * 1000.0;
        let start = self.config.start.timestamp();
        let window = self.config.days as i64 * 86_400;
        (0..self.config.events_per_user)
            .map(|_| {
                let unix = start + rng.random_range(0..window);
                let dx: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
                let dy: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
                let p = Pt::new(
                    (anchor.x + dx).clamp(-half, half),
                    (anchor.y + dy).clamp(-half, half),
                );
                (unix, grid.snap(p))
            })
            .collect()
    }
}

/// Build the regular tower grids, one per density factor.
pub fn generate_sweep(config: &SweepConfig) -> Result<DensitySweep> {
    if config.density_factors.is_empty() {
        return Err(Error::Config("density_factors must not be empty".into()));
    }
    let ext = config.extent_km * 1000.0;
    let proj = crate::proj::Projection::new(config.origin_lonlat.0, config.origin_lonlat.1);
    let mut grids = Vec::new();
    for (gi, &factor) in config.density_factors.iter().enumerate() {
        if factor.is_nan() || factor <= 0.0 {
            return Err(Error::Config(format!("bad density factor {factor}")));
        }
        let spacing = config.base_spacing_km * 1000.0 / factor.sqrt();
        let per_side = (ext / spacing).floor() as usize;
        if per_side == 0 {
            return Err(Error::Config(format!(
                "factor {factor}: zero towers per side"
            )));
        }
        let first_center = -(per_side as f64) * spacing / 2.0 + spacing / 2.0;
        let width = ((per_side * per_side) as f64).log10().floor() as usize + 1;
        let mut rows = Vec::with_capacity(per_side * per_side);
        for iy in 0..per_side {
            for ix in 0..per_side {
                let x = first_center + ix as f64 * spacing;
                let y = first_center + iy as f64 * spacing;
                let (lon, lat) = proj.inverse(x, y);
                rows.push((
                    format!("g{gi}_{:0width$}", iy * per_side + ix, width = width.max(4)),
                    lon,
                    lat,
                ));
            }
        }
        let registry = TowerRegistry::from_rows(rows, Some(config.origin_lonlat))?;
        grids.push(SweepGrid {
            factor,
            spacing_m: spacing,
            registry,
            first_center,
            per_side,
        });
    }
    Ok(DensitySweep {
        config: config.clone(),
        grids,
    })
}
