//! Two-stage edge/cloud windowing for video event queries.
//!
//! An edge window groups similar frames into micro-batches, picks a
//! resolution per batch, drops batches that cannot contribute to a match,
//! and ships the rest over a simulated link. A cloud window with the same
//! `RANGE` and `SLIDE` runs the detector and matches `OBJECT` and `CONJ`
//! patterns under first-selection, consumed-consumption semantics.
//!
//! ```
//! use vidwin::{run, Config};
//!
//! let cfg = Config {
//!     query: Some("MATCH OBJECT(car) WITHIN WINDOW(5,5) ACCURACY TOP-2".into()),
//!     ..Config::default()
//! };
//! let out = run(&cfg).unwrap();
//! assert_eq!(out.summary.frames_ingested, 300);
//! ```

pub mod classifier;
pub mod cloud;
pub mod config;
pub mod edge;
pub mod filtering;
pub mod ingest;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod query;
pub mod resizer;
pub mod similarity;
pub mod transport;
pub mod types;

pub use config::{Config, ConfigError, FilterToggles, Mode};
pub use par::Parallelism;
pub use pipeline::{compare, render_comparison, run, run_many, run_with_source, RunError, RunOutput};
pub use query::{parse_query, QueryError};
pub use types::{Frame, MicroBatch, Query, Resolution, WindowSpec};
