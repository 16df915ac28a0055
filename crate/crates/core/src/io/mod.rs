//! File formats: input series, run configuration and result bundles.

mod config;
mod csv_series;
mod output;

pub use config::{
    ConstantsConfig, GridConfig, InputPaths, LoadedConfig, ModelConfig, RootRule, RunConfig, SimulationConfig,
};
pub use csv_series::{format_float, parse_series_csv, read_series_csv, write_series_csv, SERIES_HEADER};
pub use output::{
    parse_samples_csv, prediction_rows, read_long_csv, read_samples_csv, samples_csv, sha256_file, sha256_hex,
    width_rows, write_config_snapshot, write_json, write_long_csv, write_samples_csv, LongRow, LONG_HEADER,
};
