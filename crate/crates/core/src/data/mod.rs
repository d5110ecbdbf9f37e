//! Monitoring data: ingestion, cleaning, temporal averaging, alignment into
//! feature frames, lag features, correlation and scaling.

mod correlation;
mod frame;
mod pipeline;
mod series;

pub use correlation::{pearson, pearson_matrix, CorrelationMatrix};
pub use frame::{
    add_lags, align, lag_column_name, minmax_fit_transform, minmax_inverse, ColumnRange, FeatureFrame,
    MinMaxScaler,
};
pub use pipeline::{prepare_dir, ParameterReport, PrepOptions, PrepReport};
pub use series::{
    clean, format_timestamp, ingest_csv, parse_duration, parse_series, parse_timestamp, temporal_average,
    window_means, write_series_csv, CleanReport, CleaningRules, Sample, TimeSeries, WindowMean, MAX_WINDOW,
    MIN_WINDOW,
};

/// Monitored parameter file names, without extension.
pub const PARAMETERS: [&str; 4] = ["skr", "qber", "visibility", "laserpower"];
