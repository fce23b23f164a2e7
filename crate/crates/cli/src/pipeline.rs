//! Command implementations: every subcommand stages its outputs, writes a
//! manifest, and stays byte-deterministic for a fixed seed and config
//! regardless of worker count.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use cdrlab::config::StudyConfig;
use cdrlab::error::{Error, Result};
use cdrlab::geom;
use cdrlab::home::{self, Heuristic, HomeAccumulator, HomeAssignment, PopulationVector};
use cdrlab::indicators::{self, UserIndicatorRow};
use cdrlab::ingest::{self, AdminGeometry, CensusTable, RejectLog, TowerRegistry, UserTable};
use cdrlab::manifest::{OutputStage, RunManifest};
use cdrlab::scales::{self, AggregationMethod, Level, MultiScaleReport, VariableLevels};
use cdrlab::stats;
use cdrlab::synth;

pub struct Ctx {
    pub config: StudyConfig,
    pub out_dir: PathBuf,
    pub command_line: String,
}

impl Ctx {
    fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new(command, self.config.snapshot());
        m.note(format!("invocation: {}", self.command_line));
        m
    }
}

pub struct ReportPaths {
    pub cdr: PathBuf,
    pub towers: PathBuf,
    pub admin: PathBuf,
    pub census_cell: PathBuf,
    pub census_iris: PathBuf,
    pub census_commune: PathBuf,
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(BufReader::new(f))
}

fn write_json(stage: &mut OutputStage, name: &str, value: &serde_json::Value) -> Result<()> {
    let mut w = stage.create(name)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Internal(format!("{name}: {e}")))?;
    w.write_all(b"\n").map_err(|e| Error::io(name, e))?;
    Ok(())
}

fn io_err(name: &str) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(name, e)
}

/// Read a two-column `id,value` CSV (header required).
fn read_value_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_reader(open_input(path)?);
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::csv(path.display().to_string(), e))?;
        if record.len() < 2 {
            continue;
        }
        let id = record[0].trim().to_string();
        let value: f64 = record[1].trim().parse().map_err(|_| {
            Error::Config(format!("{}: bad number {:?}", path.display(), &record[1]))
        })?;
        out.insert(id, value);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct SynthOverrides {
    pub users: Option<usize>,
    pub days: Option<u32>,
    pub towers_dense: Option<usize>,
    pub towers_sparse: Option<usize>,
    pub events_per_day: Option<f64>,
    pub p_home_night: Option<f64>,
}

pub fn cmd_synth(ctx: &Ctx, mode: &str, ov: SynthOverrides) -> Result<()> {
    match mode {
        "world" => synth_world(ctx, ov),
        "sweep" => synth_sweep(ctx),
        other => Err(Error::Config(format!(
            "unknown synth mode {other:?} (world|sweep)"
        ))),
    }
}

fn synth_world(ctx: &Ctx, ov: SynthOverrides) -> Result<()> {
    let mut cfg = synth::WorldConfig {
        seed: ctx.config.seed,
        ..synth::WorldConfig::default()
    };
    if let Some(v) = ov.users {
        cfg.users = v;
    }
    if let Some(v) = ov.days {
        cfg.days = v;
    }
    if let Some(v) = ov.towers_dense {
        cfg.towers_dense = v;
    }
    if let Some(v) = ov.towers_sparse {
        cfg.towers_sparse = v;
    }
    if let Some(v) = ov.events_per_day {
        cfg.events_per_day_mean = v;
    }
    if let Some(v) = ov.p_home_night {
        cfg.p_home_night = v;
    }
    cfg.start = ctx.config.window_start;
    cfg.local_offset_secs = ctx.config.local_offset_secs;
    cfg.night_window = ctx.config.night_broad;

    let mut stage = OutputStage::new(&ctx.out_dir)?;
    let mut manifest = ctx.manifest("synth");
    manifest.note(format!("world config: {cfg:?}"));

    let world = stage.time("generate_world", |_| {
        cdrlab::run_with_workers(ctx.config.workers, || synth::generate_world(&cfg))?
    })?;
    let events = stage.time("generate_cdr", |_| {
        cdrlab::run_with_workers(ctx.config.workers, || Ok(synth::generate_events(&world)))?
    })?;

    stage.time("write_files", |stage| {
        ingest::write_towers_csv(&world.registry, stage.create("towers.csv")?)
            .map_err(io_err("towers.csv"))?;
        synth::write_cdr_csv(&world, &events, stage.create("cdr.csv")?)
            .map_err(io_err("cdr.csv"))?;
        let admin_json = ingest::admin_to_geojson(&world.admin, &world.registry.projection);
        write_json(stage, "admin.geojson", &admin_json)?;
        world
            .census_cell
            .write_csv(stage.create("census_cell.csv")?)
            .map_err(io_err("census_cell.csv"))?;
        world
            .census_iris
            .write_csv(stage.create("census_iris.csv")?)
            .map_err(io_err("census_iris.csv"))?;
        world
            .census_commune
            .write_csv(stage.create("census_commune.csv")?)
            .map_err(io_err("census_commune.csv"))?;
        world
            .truth
            .write_csv(stage.create("ground_truth.csv")?)
            .map_err(io_err("ground_truth.csv"))?;
        let mut cfgfile = stage.create("study_config.txt")?;
        cfgfile
            .write_all(ctx.config.render().as_bytes())
            .map_err(io_err("study_config.txt"))?;
        Ok(())
    })?;

    manifest.note(format!("events: {}", events.len()));
    stage.commit(manifest)?;
    Ok(())
}

fn synth_sweep(ctx: &Ctx) -> Result<()> {
    let cfg = synth::SweepConfig {
        seed: ctx.config.seed,
        ..synth::SweepConfig::default()
    };
    let sweep = synth::generate_sweep(&cfg)?;

    let mut stage = OutputStage::new(&ctx.out_dir)?;
    let mut manifest = ctx.manifest("synth --mode sweep");
    manifest.note(format!("sweep config: {cfg:?}"));

    for (g, grid) in sweep.grids.iter().enumerate() {
        ingest::write_towers_csv(
            &grid.registry,
            stage.create(&format!("sweep_g{g}_towers.csv"))?,
        )
        .map_err(io_err("sweep towers"))?;
        let mut w = stage.create(&format!("sweep_g{g}_cdr.csv"))?;
        writeln!(w, "user_id,timestamp,cell_id").map_err(io_err("sweep cdr"))?;
        // Population users assigned to this grid, then the fixed path as
        // its own pseudo-user, all in deterministic order.
        let width = (cfg.users.max(1) as f64).log10().floor() as usize + 1;
        for u in 0..cfg.users {
            if sweep.user_grid(u) != g {
                continue;
            }
            let mut events = sweep.user_events(u);
            events.sort_unstable();
            for (unix, cell) in events {
                let ts = ingest::rfc3339_utc(unix);
                writeln!(w, "u{u:0width$},{ts},{}", grid.registry.id(cell))
                    .map_err(io_err("sweep cdr"))?;
            }
        }
        let mut fixed = sweep.fixed_path_events(g);
        fixed.sort_unstable();
        for (unix, cell) in fixed {
            let ts = ingest::rfc3339_utc(unix);
            writeln!(w, "ufixed,{ts},{}", grid.registry.id(cell)).map_err(io_err("sweep cdr"))?;
        }
    }
    stage.commit(manifest)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest-check
// ---------------------------------------------------------------------------

pub fn cmd_ingest_check(
    ctx: &Ctx,
    cdr: &Path,
    towers: &Path,
    censuses: &[PathBuf],
    admin: Option<&Path>,
) -> Result<()> {
    let mut stage = OutputStage::new(&ctx.out_dir)?;
    let mut manifest = ctx.manifest("ingest-check");
    manifest.add_input(towers)?;
    manifest.add_input(cdr)?;

    let (registry, tower_rejects) = ingest::parse_towers(open_input(towers)?, &ctx.config)?;
    let mut users = UserTable::new();
    let mut event_count = 0u64;
    let (scan, cdr_rejects) = ingest::scan_cdr(
        open_input(cdr)?,
        &registry,
        &ctx.config,
        &mut users,
        |_, _, _| {
            event_count += 1;
        },
    )?;

    let mut summary = stage.create("ingest_summary.csv")?;
    writeln!(summary, "input,lines,accepted,rejected").map_err(io_err("ingest_summary.csv"))?;
    writeln!(
        summary,
        "towers,{},{},{}",
        registry.len() + tower_rejects.len(),
        registry.len(),
        tower_rejects.len()
    )
    .map_err(io_err("ingest_summary.csv"))?;
    writeln!(
        summary,
        "cdr,{},{},{}",
        scan.lines_in,
        scan.records_out,
        cdr_rejects.len()
    )
    .map_err(io_err("ingest_summary.csv"))?;

    tower_rejects
        .write_csv(stage.create("rejects_towers.csv")?)
        .map_err(io_err("rejects_towers.csv"))?;
    cdr_rejects
        .write_csv(stage.create("rejects_cdr.csv")?)
        .map_err(io_err("rejects_cdr.csv"))?;

    for path in censuses {
        manifest.add_input(path)?;
        let (table, rejects) = ingest::parse_census(open_input(path)?)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        writeln!(
            summary,
            "census:{name},{},{},{}",
            table.len() + rejects.len(),
            table.len(),
            rejects.len()
        )
        .map_err(io_err("ingest_summary.csv"))?;
        rejects
            .write_csv(stage.create(&format!("rejects_census_{name}.csv"))?)
            .map_err(io_err("rejects census"))?;
    }
    if let Some(path) = admin {
        manifest.add_input(path)?;
        let (units, rejects) = ingest::parse_admin(open_input(path)?, &registry.projection)?;
        writeln!(
            summary,
            "admin,{},{},{}",
            units.len() + rejects.len(),
            units.len(),
            rejects.len()
        )
        .map_err(io_err("ingest_summary.csv"))?;
        rejects
            .write_csv(stage.create("rejects_admin.csv")?)
            .map_err(io_err("rejects_admin.csv"))?;
    }
    drop(summary);

    manifest.note(format!("users seen: {}", users.len()));
    manifest.note(format!("valid events: {event_count}"));
    stage.commit(manifest)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// shared loading
// ---------------------------------------------------------------------------

struct Loaded {
    registry: TowerRegistry,
    users: UserTable,
    acc: HomeAccumulator,
    cdr_rejects: RejectLog,
    tower_rejects: RejectLog,
}

fn load_and_accumulate(ctx: &Ctx, cdr: &Path, towers: &Path) -> Result<Loaded> {
    let (registry, tower_rejects) = ingest::parse_towers(open_input(towers)?, &ctx.config)?;
    let mut users = UserTable::new();
    let mut acc = HomeAccumulator::new(&ctx.config);
    let (_, cdr_rejects) = ingest::scan_cdr(
        open_input(cdr)?,
        &registry,
        &ctx.config,
        &mut users,
        |u, t, c| {
            acc.add(u, t, c);
        },
    )?;
    Ok(Loaded {
        registry,
        users,
        acc,
        cdr_rejects,
        tower_rejects,
    })
}

fn parse_heuristics(spec: &str) -> Result<Vec<Heuristic>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Heuristic::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in spec.split(',') {
        let h = Heuristic::parse(part)
            .ok_or_else(|| Error::Config(format!("unknown heuristic {part:?} (H1..H5|all)")))?;
        out.push(h);
    }
    Ok(out)
}

fn config_heuristic(config: &StudyConfig) -> Result<Heuristic> {
    Heuristic::parse(&config.heuristic)
        .ok_or_else(|| Error::Config(format!("bad config heuristic {:?}", config.heuristic)))
}

// ---------------------------------------------------------------------------
// homes
// ---------------------------------------------------------------------------

pub fn cmd_homes(ctx: &Ctx, cdr: &Path, towers: &Path, heuristic: &str) -> Result<()> {
    let heuristics = parse_heuristics(heuristic)?;
    let mut stage = OutputStage::new(&ctx.out_dir)?;
    let mut manifest = ctx.manifest("homes");
    manifest.add_input(towers)?;
    manifest.add_input(cdr)?;

    let loaded = stage.time("ingest", |_| load_and_accumulate(ctx, cdr, towers))?;
    let results = stage.time("detect", |_| {
        cdrlab::run_with_workers(ctx.config.workers, || {
            heuristics
                .iter()
                .map(|&h| (h, loaded.acc.finalize(h, &loaded.registry, &loaded.users)))
                .collect::<Vec<_>>()
        })
    })?;

    stage.time("write", |stage| {
        let pairs: Vec<(Heuristic, &[HomeAssignment])> =
            results.iter().map(|(h, a)| (*h, a.as_slice())).collect();
        home::write_assignments_csv(&pairs, stage.create("assignments.csv")?)
            .map_err(io_err("assignments.csv"))?;
        for (h, assignments) in &results {
            let pv = home::population_vector(assignments, &loaded.registry);
            pv.write_csv(
                &loaded.registry,
                stage.create(&format!("popvec_{}.csv", h.name()))?,
            )
            .map_err(io_err("popvec"))?;
        }
        if results.len() > 1 {
            let lists: Vec<Vec<HomeAssignment>> = results.iter().map(|(_, a)| a.clone()).collect();
            let matrix = home::agreement_matrix(&lists);
            let mut w = stage.create("agreement_matrix.csv")?;
            write!(w, "heuristic").map_err(io_err("agreement_matrix.csv"))?;
            for (h, _) in &results {
                write!(w, ",{}", h.name()).map_err(io_err("agreement_matrix.csv"))?;
            }
            writeln!(w).map_err(io_err("agreement_matrix.csv"))?;
            for (i, (h, _)) in results.iter().enumerate() {
                write!(w, "{}", h.name()).map_err(io_err("agreement_matrix.csv"))?;
                for value in &matrix[i] {
                    write!(w, ",{value}").map_err(io_err("agreement_matrix.csv"))?;
                }
                writeln!(w).map_err(io_err("agreement_matrix.csv"))?;
            }
        }
        loaded
            .cdr_rejects
            .write_csv(stage.create("rejects_cdr.csv")?)
            .map_err(io_err("rejects_cdr.csv"))?;
        loaded
            .tower_rejects
            .write_csv(stage.create("rejects_towers.csv")?)
            .map_err(io_err("rejects_towers.csv"))?;
        Ok(())
    })?;

    manifest.note(format!("users: {}", loaded.users.len()));
    stage.commit(manifest)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// indicators
// ---------------------------------------------------------------------------

struct IndicatorProducts {
    rows: Vec<UserIndicatorRow>,
    calibration: Option<indicators::CalibrationTable>,
    tower_h: indicators::TowerIndicator,
    tower_cme: Option<indicators::TowerIndicator>,
}

fn compute_indicators(
    ctx: &Ctx,
    loaded: &Loaded,
    with_cme: bool,
    density: Option<&geom::DensityMap>,
) -> Result<IndicatorProducts> {
    let heuristic = config_heuristic(&ctx.config)?;
    let assignments = cdrlab::run_with_workers(ctx.config.workers, || {
        loaded
            .acc
            .finalize(heuristic, &loaded.registry, &loaded.users)
    })?;

    // Entropy for every qualifying user (sorted by user id already).
    let mut entropy: BTreeMap<String, f64> = BTreeMap::new();
    let mut rows: Vec<UserIndicatorRow> = Vec::new();
    for a in &assignments {
        if !a.qualifies {
            continue;
        }
        let u = loaded.users.get(&a.user).expect("assignment user interned");
        let dist = indicators::VisitDistribution::from_counts(loaded.acc.visit_counts(u))?;
        let h = indicators::mobility_entropy(&dist);
        entropy.insert(a.user.clone(), h);
        let (home_cell, density_val) = match (&a.home_cell, density) {
            (Some(cell), Some(d)) => {
                let idx = loaded.registry.lookup(cell).expect("home cell in registry");
                (Some(cell.clone()), Some(d.get(idx)))
            }
            (Some(cell), None) => (Some(cell.clone()), None),
            _ => (None, None),
        };
        rows.push(UserIndicatorRow {
            user: a.user.clone(),
            h_bits: h,
            cme_bits: None,
            home_cell,
            density_per_km2: density_val,
        });
    }

    let tower_h = indicators::average_by_home(&entropy, &assignments);

    let (calibration, tower_cme) = if with_cme {
        let samples: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| Some((r.h_bits, r.density_per_km2?)))
            .collect();
        let table = indicators::calibrate_baseline(
            &samples,
            ctx.config.calib_bins,
            ctx.config.calib_min_users,
        )?;
        let mut cme_values: BTreeMap<String, f64> = BTreeMap::new();
        for r in &mut rows {
            if let Some(d) = r.density_per_km2 {
                let (cme, _) = indicators::corrected_mobility_entropy(r.h_bits, d, &table)?;
                r.cme_bits = Some(cme);
                cme_values.insert(r.user.clone(), cme);
            }
        }
        let tower_cme = indicators::average_by_home(&cme_values, &assignments);
        (Some(table), Some(tower_cme))
    } else {
        (None, None)
    };

    Ok(IndicatorProducts {
        rows,
        calibration,
        tower_h,
        tower_cme,
    })
}

pub fn cmd_indicators(ctx: &Ctx, which: &str, cdr: &Path, towers: &Path) -> Result<()> {
    let with_cme = match which {
        "entropy" => false,
        "cme" => true,
        other => {
            return Err(Error::Config(format!(
                "unknown indicator {other:?} (entropy|cme)"
            )))
        }
    };

    let mut stage = OutputStage::new(&ctx.out_dir)?;
    let mut manifest = ctx.manifest(&format!("indicators {which}"));
    manifest.add_input(towers)?;
    manifest.add_input(cdr)?;

    let loaded = stage.time("ingest", |_| load_and_accumulate(ctx, cdr, towers))?;
    let density = if with_cme {
        let tess = stage.time("tessellation", |_| {
            cdrlab::run_with_workers(ctx.config.workers, || geom::build_voronoi(&loaded.registry))?
        })?;
        Some(geom::tower_density(&tess))
    } else {
        None
    };
    let products = stage.time("indicators", |_| {
        compute_indicators(ctx, &loaded, with_cme, density.as_ref())
    })?;

    stage.time("write", |stage| {
        indicators::write_user_indicators_csv(&products.rows, stage.create("user_indicators.csv")?)
            .map_err(io_err("user_indicators.csv"))?;
        products
            .tower_h
            .write_csv(stage.create("towers_H.csv")?)
            .map_err(io_err("towers_H.csv"))?;
        if let Some(table) = &products.calibration {
            table
                .write_csv(stage.create("calibration.csv")?)
                .map_err(io_err("calibration.csv"))?;
        }
        if let Some(tower_cme) = &products.tower_cme {
            tower_cme
                .write_csv(stage.create("towers_CME.csv")?)
                .map_err(io_err("towers_CME.csv"))?;
        }
        Ok(())
    })?;

    manifest.note(format!("qualifying users: {}", products.rows.len()));
    stage.commit(manifest)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

/// Align two keyed vectors on the union of their ids (absent = 0).
fn align_union(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> (Vec<String>, Vec<f64>, Vec<f64>) {
    let keys: Vec<String> = a.keys().chain(b.keys()).cloned().collect();
    let mut keys: Vec<String> = keys;
    keys.sort();
    keys.dedup();
    let va = keys
        .iter()
        .map(|k| a.get(k).copied().unwrap_or(0.0))
        .collect();
    let vb = keys
        .iter()
        .map(|k| b.get(k).copied().unwrap_or(0.0))
        .collect();
    (keys, va, vb)
}

pub fn cmd_validate(
    ctx: &Ctx,
    what: &str,
    popvec: &Path,
    census: &Path,
    towers: &Path,
) -> Result<()> {
    let mut stage = OutputStage::new(&ctx.out_dir)?;
    let mut manifest = ctx.manifest(&format!("validate {what}"));
    manifest.add_input(popvec)?;
    manifest.add_input(census)?;
    manifest.add_input(towers)?;

    let detected = read_value_csv(popvec)?;
    let reference = read_value_csv(census)?;

    match what {
        "cosine" => {
            let (keys, u, v) = align_union(&detected, &reference);
            let angle = stats::cosine_degrees(&u, &v)?;
            let mut w = stage.create("validation_cosine.csv")?;
            writeln!(w, "angle_degrees,n_units").map_err(io_err("validation_cosine.csv"))?;
            writeln!(w, "{angle},{}", keys.len()).map_err(io_err("validation_cosine.csv"))?;
        }
        "hotspots" => {
            let (registry, _) = ingest::parse_towers(open_input(towers)?, &ctx.config)?;
            let tess =
                cdrlab::run_with_workers(ctx.config.workers, || geom::build_voronoi(&registry))??;
            let weights = geom::build_adjacency(&tess, true);
            let by_tower = |m: &BTreeMap<String, f64>| -> Vec<f64> {
                (0..registry.len() as u32)
                    .map(|i| m.get(registry.id(i)).copied().unwrap_or(0.0))
                    .collect()
            };
            let x_detected = by_tower(&detected);
            let x_reference = by_tower(&reference);
            let gi_detected = stats::getis_ord_gi_star(&x_detected, &weights, ctx.config.z_crit)?;
            let gi_reference = stats::getis_ord_gi_star(&x_reference, &weights, ctx.config.z_crit)?;
            stats::write_gi_csv(
                &registry,
                &gi_detected,
                stage.create("hotspots_detected.csv")?,
            )
            .map_err(io_err("hotspots_detected.csv"))?;
            stats::write_gi_csv(
                &registry,
                &gi_reference,
                stage.create("hotspots_census.csv")?,
            )
            .map_err(io_err("hotspots_census.csv"))?;
            write_json(
                &mut stage,
                "hotspots_detected.geojson",
                &stats::gi_to_geojson(&tess, &registry, &gi_detected),
            )?;
            write_json(
                &mut stage,
                "hotspots_census.geojson",
                &stats::gi_to_geojson(&tess, &registry, &gi_reference),
            )?;
            let agreement = stats::hotspot_agreement(&gi_detected, &gi_reference)?;
            stats::write_agreement_csv(&agreement, stage.create("hotspot_agreement.csv")?)
                .map_err(io_err("hotspot_agreement.csv"))?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown validation {other:?} (cosine|hotspots)"
            )))
        }
    }

    stage.commit(manifest)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// aggregate
// ---------------------------------------------------------------------------

pub fn cmd_aggregate(
    ctx: &Ctx,
    level: &str,
    towers: &Path,
    admin: &Path,
    values: &Path,
    method: &str,
    population: Option<&Path>,
) -> Result<()> {
    let method = AggregationMethod::parse(method)
        .ok_or_else(|| Error::Config(format!("unknown aggregation method {method:?}")))?;
    let level = Level::parse(level);

    let mut stage = OutputStage::new(&ctx.out_dir)?;
    let mut manifest = ctx.manifest("aggregate");
    manifest.add_input(towers)?;
    manifest.add_input(admin)?;
    manifest.add_input(values)?;

    let (registry, _) = ingest::parse_towers(open_input(towers)?, &ctx.config)?;
    let (units, admin_rejects) = ingest::parse_admin(open_input(admin)?, &registry.projection)?;
    let tess = cdrlab::run_with_workers(ctx.config.workers, || geom::build_voronoi(&registry))??;
    let sources = geom::surfaces_from_tessellation(&tess, &registry)?;
    let targets = ingest::surfaces_of_level(&units, level.name())?;
    if targets.is_empty() {
        return Err(Error::Config(format!("no admin units at level {level}")));
    }
    let xwalk = cdrlab::run_with_workers(ctx.config.workers, || {
        geom::build_crosswalk(&sources, &targets, "cell", level.name())
    })?;

    let vals = read_value_csv(values)?;
    let pop = population.map(read_value_csv).transpose()?;
    let out = scales::aggregate(&vals, &xwalk, method, pop.as_ref())?;

    xwalk
        .write_csv(stage.create(&format!("crosswalk_{level}.csv"))?)
        .map_err(io_err("crosswalk"))?;
    let mut w = stage.create(&format!("aggregated_{level}.csv"))?;
    writeln!(w, "unit_id,value").map_err(io_err("aggregated"))?;
    for (unit, value) in &out {
        writeln!(w, "{unit},{value}").map_err(io_err("aggregated"))?;
    }
    drop(w);
    admin_rejects
        .write_csv(stage.create("rejects_admin.csv")?)
        .map_err(io_err("rejects_admin.csv"))?;

    manifest.note(format!("method: {}", method.name()));
    manifest.note(format!("partial crosswalk rows: {}", xwalk.partial_count()));
    stage.commit(manifest)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// correlate / report
// ---------------------------------------------------------------------------

struct ReportData {
    loaded: Loaded,
    admin: Vec<AdminGeometry>,
    admin_rejects: RejectLog,
    census_cell: CensusTable,
    census_iris: CensusTable,
    census_commune: CensusTable,
}

fn load_report_inputs(
    ctx: &Ctx,
    paths: &ReportPaths,
    manifest: &mut RunManifest,
) -> Result<ReportData> {
    for p in [
        &paths.towers,
        &paths.cdr,
        &paths.admin,
        &paths.census_cell,
        &paths.census_iris,
        &paths.census_commune,
    ] {
        manifest.add_input(p)?;
    }
    let loaded = load_and_accumulate(ctx, &paths.cdr, &paths.towers)?;
    let (admin, admin_rejects) =
        ingest::parse_admin(open_input(&paths.admin)?, &loaded.registry.projection)?;
    let (census_cell, _) = ingest::parse_census(open_input(&paths.census_cell)?)?;
    let (census_iris, _) = ingest::parse_census(open_input(&paths.census_iris)?)?;
    let (census_commune, _) = ingest::parse_census(open_input(&paths.census_commune)?)?;
    Ok(ReportData {
        loaded,
        admin,
        admin_rejects,
        census_cell,
        census_iris,
        census_commune,
    })
}

struct ScaleChain {
    levels: Vec<Level>,
    xw_cell_iris: geom::Crosswalk,
    xw_iris_commune: geom::Crosswalk,
}

fn build_chain(
    ctx: &Ctx,
    registry: &TowerRegistry,
    tess: &geom::Tessellation,
    admin: &[AdminGeometry],
) -> Result<ScaleChain> {
    let sources = geom::surfaces_from_tessellation(tess, registry)?;
    let iris = ingest::surfaces_of_level(admin, "iris")?;
    let commune = ingest::surfaces_of_level(admin, "commune")?;
    if iris.is_empty() || commune.is_empty() {
        return Err(Error::Config(
            "admin layer must carry both iris and commune levels".into(),
        ));
    }
    let (xw_cell_iris, xw_iris_commune) = cdrlab::run_with_workers(ctx.config.workers, || {
        (
            geom::build_crosswalk(&sources, &iris, "cell", "iris"),
            geom::build_crosswalk(&iris, &commune, "iris", "commune"),
        )
    })?;
    // Report columns follow the configured level order.
    let levels = ctx.config.levels.iter().map(|s| Level::parse(s)).collect();
    Ok(ScaleChain {
        levels,
        xw_cell_iris,
        xw_iris_commune,
    })
}

fn build_report(
    ctx: &Ctx,
    data: &ReportData,
    chain: &ScaleChain,
    tower_h: &indicators::TowerIndicator,
    tower_cme: Option<&indicators::TowerIndicator>,
    popvec_h2: &PopulationVector,
) -> Result<(MultiScaleReport, scales::SensitivityReport)> {
    let th = ctx.config.delta_r_threshold;
    let steps: Vec<(Level, &geom::Crosswalk)> = vec![
        (Level::Iris, &chain.xw_cell_iris),
        (Level::Commune, &chain.xw_iris_commune),
    ];

    // Home counts weight indicator means on the way up.
    let home_counts = tower_h.counts();
    let entropy_var = scales::derive_levels(
        "mobility_entropy",
        Level::Cell,
        tower_h.means(),
        &steps,
        AggregationMethod::PopulationWeightedMean,
        Some(home_counts.clone()),
    )?;
    let homes_var = scales::derive_levels(
        "distinct_days_homes",
        Level::Cell,
        popvec_h2.as_map(&data.loaded.registry),
        &steps,
        AggregationMethod::Sum,
        None,
    )?;
    let census_var = scales::derive_levels(
        "census_population",
        Level::Cell,
        data.census_cell.populations(),
        &steps,
        AggregationMethod::Sum,
        None,
    )?;

    let mut edi_var = VariableLevels::new("EDI");
    if let Some(edi) = data.census_iris.attribute("EDI") {
        edi_var.insert(Level::Iris, edi);
    }
    if let Some(edi) = data.census_commune.attribute("EDI") {
        edi_var.insert(Level::Commune, edi);
    }

    let mut pairs = vec![
        scales::multi_scale_correlate(&entropy_var, &edi_var, &chain.levels, th),
        scales::multi_scale_correlate(&homes_var, &census_var, &chain.levels, th),
    ];
    if let Some(tower_cme) = tower_cme {
        let cme_var = scales::derive_levels(
            "corrected_mobility_entropy",
            Level::Cell,
            tower_cme.means(),
            &steps,
            AggregationMethod::PopulationWeightedMean,
            Some(home_counts),
        )?;
        pairs.push(scales::multi_scale_correlate(
            &cme_var,
            &edi_var,
            &chain.levels,
            th,
        ));
    }

    let sensitivity = scales::sensitivity_report(&entropy_var, &census_var, &chain.levels, th);
    Ok((MultiScaleReport { pairs }, sensitivity))
}

pub fn cmd_correlate(ctx: &Ctx, paths: &ReportPaths) -> Result<()> {
    let mut stage = OutputStage::new(&ctx.out_dir)?;
    let mut manifest = ctx.manifest("correlate");
    let data = stage.time("ingest", |_| load_report_inputs(ctx, paths, &mut manifest))?;

    let tess = stage.time("tessellation", |_| {
        cdrlab::run_with_workers(ctx.config.workers, || {
            geom::build_voronoi(&data.loaded.registry)
        })?
    })?;
    let density = geom::tower_density(&tess);
    let chain = stage.time("crosswalks", |_| {
        build_chain(ctx, &data.loaded.registry, &tess, &data.admin)
    })?;

    let products = stage.time("indicators", |_| {
        compute_indicators(ctx, &data.loaded, true, Some(&density))
    })?;
    let h2 = stage.time("homes_h2", |_| {
        cdrlab::run_with_workers(ctx.config.workers, || {
            data.loaded
                .acc
                .finalize(Heuristic::H2, &data.loaded.registry, &data.loaded.users)
        })
    })?;
    let popvec_h2 = home::population_vector(&h2, &data.loaded.registry);

    let (report, sensitivity) = stage.time("correlate", |_| {
        build_report(
            ctx,
            &data,
            &chain,
            &products.tower_h,
            products.tower_cme.as_ref(),
            &popvec_h2,
        )
    })?;

    stage.time("write", |stage| {
        report
            .write_csv(stage.create("correlations.csv")?)
            .map_err(io_err("correlations.csv"))?;
        report
            .write_diffs_csv(stage.create("scale_differences.csv")?)
            .map_err(io_err("scale_differences.csv"))?;
        sensitivity
            .write_csv(stage.create("sensitivity.csv")?)
            .map_err(io_err("sensitivity.csv"))?;
        Ok(())
    })?;

    stage.commit(manifest)?;
    Ok(())
}

pub fn cmd_report(ctx: &Ctx, paths: &ReportPaths) -> Result<()> {
    let mut stage = OutputStage::new(&ctx.out_dir)?;
    let mut manifest = ctx.manifest("report");
    let data = stage.time("ingest", |_| load_report_inputs(ctx, paths, &mut manifest))?;
    let registry = &data.loaded.registry;

    // Geometry products.
    let tess = stage.time("tessellation", |_| {
        cdrlab::run_with_workers(ctx.config.workers, || geom::build_voronoi(registry))?
    })?;
    let density = geom::tower_density(&tess);
    let weights = geom::build_adjacency(&tess, true);
    let chain = stage.time("crosswalks", |_| {
        build_chain(ctx, registry, &tess, &data.admin)
    })?;

    // Homes under all five heuristics.
    let all_homes: Vec<(Heuristic, Vec<HomeAssignment>)> = stage.time("homes", |_| {
        cdrlab::run_with_workers(ctx.config.workers, || {
            Heuristic::ALL
                .iter()
                .map(|&h| (h, data.loaded.acc.finalize(h, registry, &data.loaded.users)))
                .collect()
        })
    })?;
    let popvecs: Vec<(Heuristic, PopulationVector)> = all_homes
        .iter()
        .map(|(h, a)| (*h, home::population_vector(a, registry)))
        .collect();

    // Indicators with calibration.
    let products = stage.time("indicators", |_| {
        compute_indicators(ctx, &data.loaded, true, Some(&density))
    })?;

    // Validation: cosine per heuristic plus hotspot maps for the configured
    // heuristic against the tower-level census.
    let census_by_tower: Vec<f64> = (0..registry.len() as u32)
        .map(|i| {
            data.census_cell
                .rows
                .get(registry.id(i))
                .map(|r| r.population)
                .unwrap_or(0.0)
        })
        .collect();
    let cfg_heuristic = config_heuristic(&ctx.config)?;
    let gi_pair = stage.time("validate", |stage| {
        let mut w = stage.create("validation_cosine.csv")?;
        writeln!(w, "heuristic,angle_degrees,n_units").map_err(io_err("validation_cosine.csv"))?;
        for (h, pv) in &popvecs {
            let angle = stats::cosine_degrees(&pv.as_f64(), &census_by_tower)?;
            writeln!(w, "{},{angle},{}", h.name(), registry.len())
                .map_err(io_err("validation_cosine.csv"))?;
        }
        drop(w);

        let detected = &popvecs
            .iter()
            .find(|(h, _)| *h == cfg_heuristic)
            .expect("configured heuristic present")
            .1;
        let gi_detected =
            stats::getis_ord_gi_star(&detected.as_f64(), &weights, ctx.config.z_crit)?;
        let gi_census = stats::getis_ord_gi_star(&census_by_tower, &weights, ctx.config.z_crit)?;
        Ok((gi_detected, gi_census))
    })?;

    // Scale reports.
    let popvec_h2 = &popvecs.iter().find(|(h, _)| *h == Heuristic::H2).unwrap().1;
    let (report, sensitivity) = stage.time("correlate", |_| {
        build_report(
            ctx,
            &data,
            &chain,
            &products.tower_h,
            products.tower_cme.as_ref(),
            popvec_h2,
        )
    })?;

    stage.time("write", |stage| {
        let pairs: Vec<(Heuristic, &[HomeAssignment])> =
            all_homes.iter().map(|(h, a)| (*h, a.as_slice())).collect();
        home::write_assignments_csv(&pairs, stage.create("assignments.csv")?)
            .map_err(io_err("assignments.csv"))?;
        for (h, pv) in &popvecs {
            pv.write_csv(registry, stage.create(&format!("popvec_{}.csv", h.name()))?)
                .map_err(io_err("popvec"))?;
        }
        let lists: Vec<Vec<HomeAssignment>> = all_homes.iter().map(|(_, a)| a.clone()).collect();
        let matrix = home::agreement_matrix(&lists);
        let mut w = stage.create("agreement_matrix.csv")?;
        write!(w, "heuristic").map_err(io_err("agreement_matrix.csv"))?;
        for (h, _) in &all_homes {
            write!(w, ",{}", h.name()).map_err(io_err("agreement_matrix.csv"))?;
        }
        writeln!(w).map_err(io_err("agreement_matrix.csv"))?;
        for (i, (h, _)) in all_homes.iter().enumerate() {
            write!(w, "{}", h.name()).map_err(io_err("agreement_matrix.csv"))?;
            for value in &matrix[i] {
                write!(w, ",{value}").map_err(io_err("agreement_matrix.csv"))?;
            }
            writeln!(w).map_err(io_err("agreement_matrix.csv"))?;
        }
        drop(w);

        write_json(
            stage,
            "tessellation.geojson",
            &geom::tessellation_to_geojson(&tess, registry),
        )?;
        chain
            .xw_cell_iris
            .write_csv(stage.create("crosswalk_iris.csv")?)
            .map_err(io_err("crosswalk_iris.csv"))?;
        chain
            .xw_iris_commune
            .write_csv(stage.create("crosswalk_commune.csv")?)
            .map_err(io_err("crosswalk_commune.csv"))?;

        indicators::write_user_indicators_csv(&products.rows, stage.create("user_indicators.csv")?)
            .map_err(io_err("user_indicators.csv"))?;
        if let Some(table) = &products.calibration {
            table
                .write_csv(stage.create("calibration.csv")?)
                .map_err(io_err("calibration.csv"))?;
        }
        products
            .tower_h
            .write_csv(stage.create("towers_H.csv")?)
            .map_err(io_err("towers_H.csv"))?;
        if let Some(tower_cme) = &products.tower_cme {
            tower_cme
                .write_csv(stage.create("towers_CME.csv")?)
                .map_err(io_err("towers_CME.csv"))?;
        }

        let (gi_detected, gi_census) = &gi_pair;
        stats::write_gi_csv(
            registry,
            gi_detected,
            stage.create("hotspots_detected.csv")?,
        )
        .map_err(io_err("hotspots_detected.csv"))?;
        stats::write_gi_csv(registry, gi_census, stage.create("hotspots_census.csv")?)
            .map_err(io_err("hotspots_census.csv"))?;
        write_json(
            stage,
            "hotspots_detected.geojson",
            &stats::gi_to_geojson(&tess, registry, gi_detected),
        )?;
        write_json(
            stage,
            "hotspots_census.geojson",
            &stats::gi_to_geojson(&tess, registry, gi_census),
        )?;
        let agreement = stats::hotspot_agreement(gi_detected, gi_census)?;
        stats::write_agreement_csv(&agreement, stage.create("hotspot_agreement.csv")?)
            .map_err(io_err("hotspot_agreement.csv"))?;

        report
            .write_csv(stage.create("correlations.csv")?)
            .map_err(io_err("correlations.csv"))?;
        report
            .write_diffs_csv(stage.create("scale_differences.csv")?)
            .map_err(io_err("scale_differences.csv"))?;
        sensitivity
            .write_csv(stage.create("sensitivity.csv")?)
            .map_err(io_err("sensitivity.csv"))?;

        data.loaded
            .cdr_rejects
            .write_csv(stage.create("rejects_cdr.csv")?)
            .map_err(io_err("rejects_cdr.csv"))?;
        data.loaded
            .tower_rejects
            .write_csv(stage.create("rejects_towers.csv")?)
            .map_err(io_err("rejects_towers.csv"))?;
        data.admin_rejects
            .write_csv(stage.create("rejects_admin.csv")?)
            .map_err(io_err("rejects_admin.csv"))?;
        Ok(())
    })?;

    manifest.note(format!("towers: {}", registry.len()));
    manifest.note(format!("users: {}", data.loaded.users.len()));
    manifest.note(format!(
        "partial crosswalk rows: {} (cell->iris), {} (iris->commune)",
        chain.xw_cell_iris.partial_count(),
        chain.xw_iris_commune.partial_count()
    ));
    manifest.note(format!(
        "tessellation bbox pad fraction: {}",
        tess.pad_fraction
    ));
    if !tess.perturbed.is_empty() {
        manifest.note(format!(
            "duplicate tower coordinates perturbed: {}",
            tess.perturbed.len()
        ));
    }
    stage.commit(manifest)?;
    Ok(())
}
