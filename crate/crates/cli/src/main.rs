//! cdrlab: compute mobility indicators from CDR files and validate their
//! geography against census data.
//!
//! Exit codes: 0 success, 2 missing/invalid inputs or config, 3 internal
//! invariant violation, 1 other fatal errors.

mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdrlab::{Error, StudyConfig};

#[derive(Parser)]
#[command(
    name = "cdrlab",
    version,
    about = "CDR mobility indicators and their geographical veracity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Declarative `key = value` config file (flags override file values).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; all products land here atomically with a manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Restrict the study window: START..END (RFC 3339 or YYYY-MM-DD).
    #[arg(long, global = true)]
    period: Option<String>,

    /// Master seed for synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the parallel per-user stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Args, Clone)]
struct CdrInputs {
    /// CDR events CSV: user_id,timestamp,cell_id.
    #[arg(long)]
    cdr: PathBuf,
    /// Tower registry CSV: cell_id,lon,lat.
    #[arg(long)]
    towers: PathBuf,
}

#[derive(Args, Clone)]
struct ReportInputs {
    #[command(flatten)]
    cdr: CdrInputs,
    /// Admin polygons GeoJSON (iris + commune levels).
    #[arg(long)]
    admin: PathBuf,
    /// Tower-level census CSV (the validation vector).
    #[arg(long)]
    census_cell: PathBuf,
    /// Iris-level census CSV (population plus attributes such as EDI).
    #[arg(long)]
    census_iris: PathBuf,
    /// Commune-level census CSV.
    #[arg(long)]
    census_commune: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic world (or density sweep) with ground truth.
    Synth {
        /// `world` or `sweep` (one path, several tower densities).
        #[arg(long, default_value = "world")]
        mode: String,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        towers_dense: Option<usize>,
        #[arg(long)]
        towers_sparse: Option<usize>,
        #[arg(long)]
        events_per_day: Option<f64>,
        #[arg(long)]
        p_home_night: Option<f64>,
    },
    /// Parse and validate all inputs; write reject logs and a summary.
    IngestCheck {
        #[command(flatten)]
        cdr: CdrInputs,
        /// Census CSVs to check (repeatable).
        #[arg(long)]
        census: Vec<PathBuf>,
        #[arg(long)]
        admin: Option<PathBuf>,
    },
    /// Detect homes and write assignments plus population vectors.
    Homes {
        #[command(flatten)]
        cdr: CdrInputs,
        /// H1..H5 or `all`.
        #[arg(long, default_value = "all")]
        heuristic: String,
    },
    /// Per-user indicators: `entropy` (H only) or `cme` (adds calibration).
    Indicators {
        /// `entropy` or `cme`.
        which: String,
        #[command(flatten)]
        cdr: CdrInputs,
    },
    /// Validate a detected population vector against a census vector.
    Validate {
        /// `cosine` or `hotspots`.
        what: String,
        /// Detected population vector CSV: cell_id,count.
        #[arg(long)]
        popvec: PathBuf,
        /// Census vector CSV: unit_id,population (tower-level ids).
        #[arg(long)]
        census: PathBuf,
        /// Tower registry (needed for the tessellation in `hotspots`).
        #[arg(long)]
        towers: PathBuf,
    },
    /// Aggregate a per-cell variable to an admin level via the crosswalk.
    Aggregate {
        /// Target level: iris, commune, or a custom level name.
        #[arg(long)]
        level: String,
        #[arg(long)]
        towers: PathBuf,
        #[arg(long)]
        admin: PathBuf,
        /// Values CSV: id,value.
        #[arg(long)]
        values: PathBuf,
        /// sum | mean | population_weighted_mean | areal_weighted.
        #[arg(long, default_value = "sum")]
        method: String,
        /// Population weights CSV: id,value (population_weighted_mean).
        #[arg(long)]
        population: Option<PathBuf>,
    },
    /// Multi-scale correlation report (Table-1 shape).
    Correlate {
        #[command(flatten)]
        inputs: ReportInputs,
    },
    /// Full pipeline: homes, indicators, validation, crosswalks, reports.
    Report {
        #[command(flatten)]
        inputs: ReportInputs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdrlab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Config(_) | Error::Csv { .. } => 2,
        Error::DuplicateTower(_) | Error::DuplicateUnit { .. } | Error::EmptyRegistry => 2,
        Error::InvalidPolygon { .. } => 2,
        Error::Internal(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = StudyConfig::load(cli.config.as_deref())?;
    if let Some(period) = &cli.period {
        config.set_period(period)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    let ctx = pipeline::Ctx {
        config,
        out_dir: cli.out_dir,
        command_line,
    };

    match cli.command {
        Command::Synth {
            mode,
            users,
            days,
            towers_dense,
            towers_sparse,
            events_per_day,
            p_home_night,
        } => pipeline::cmd_synth(
            &ctx,
            &mode,
            pipeline::SynthOverrides {
                users,
                days,
                towers_dense,
                towers_sparse,
                events_per_day,
                p_home_night,
            },
        ),
        Command::IngestCheck { cdr, census, admin } => {
            pipeline::cmd_ingest_check(&ctx, &cdr.cdr, &cdr.towers, &census, admin.as_deref())
        }
        Command::Homes { cdr, heuristic } => {
            pipeline::cmd_homes(&ctx, &cdr.cdr, &cdr.towers, &heuristic)
        }
        Command::Indicators { which, cdr } => {
            pipeline::cmd_indicators(&ctx, &which, &cdr.cdr, &cdr.towers)
        }
        Command::Validate {
            what,
            popvec,
            census,
            towers,
        } => pipeline::cmd_validate(&ctx, &what, &popvec, &census, &towers),
        Command::Aggregate {
            level,
            towers,
            admin,
            values,
            method,
            population,
        } => pipeline::cmd_aggregate(
            &ctx,
            &level,
            &towers,
            &admin,
            &values,
            &method,
            population.as_deref(),
        ),
        Command::Correlate { inputs } => pipeline::cmd_correlate(&ctx, &inputs.into()),
        Command::Report { inputs } => pipeline::cmd_report(&ctx, &inputs.into()),
    }
}

impl From<ReportInputs> for pipeline::ReportPaths {
    fn from(i: ReportInputs) -> Self {
        pipeline::ReportPaths {
            cdr: i.cdr.cdr,
            towers: i.cdr.towers,
            admin: i.admin,
            census_cell: i.census_cell,
            census_iris: i.census_iris,
            census_commune: i.census_commune,
        }
    }
}
