//! Mobility indicators from call detail records, and the machinery to judge
//! how much to trust them geographically.
//!
//! The pipeline runs in three stages that mirror the three places where
//! spatial error creeps into CDR-derived statistics:
//!
//! * **allocation** — [`home`] assigns each user to a home tower with one of
//!   five heuristics and [`stats`] scores the detected population against a
//!   reference census (cosine similarity in degrees, Getis-Ord G_i*
//!   hot/cold-spot maps on the tower tessellation);
//! * **delineation** — [`geom`] builds the Voronoi tessellation over tower
//!   sites, and [`indicators`] computes per-user mobility entropy plus a
//!   density-detrended corrected variant that is comparable across tower
//!   densities;
//! * **aggregation** — [`scales`] moves indicators between tower, IRIS and
//!   commune levels through area-overlap crosswalks and reports how
//!   correlations shift with scale.
//!
//! [`ingest`] parses the input files, [`synth`] generates seeded synthetic
//! worlds with known ground truth, and [`manifest`] records every run.

pub mod config;
pub mod error;
pub mod geom;
pub mod home;
pub mod indicators;
pub mod ingest;
pub mod manifest;
pub mod proj;
pub mod scales;
pub mod stats;
pub mod synth;

pub use config::StudyConfig;
pub use error::{Error, Result};

/// Run `f` on a dedicated rayon pool with `workers` threads.
///
/// Every parallel stage in the crate is an order-preserving map over a
/// sorted collection, so results are identical for any worker count.
pub fn run_with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
