//! Data ingestion, run configuration, output directories and the
//! command-line workflows built on them.

pub mod commands;
pub mod config;
pub mod output;
pub mod stations;

pub use commands::{config_digest, coverage, diagnose, fit, load_config, predict, process_spec, resume, simulate, FitSummary, Truth};
pub use config::{gaussian_effective_range, gaussian_effective_range_sd, parse_config, ModelName, ModelSummary, RunConfig};
pub use output::{sha256_file, verify_manifest, ErrorRecord, Manifest, OutputDir};
pub use stations::{ingest_stations, CompletenessRule, IngestReport, Station, StationTable};
