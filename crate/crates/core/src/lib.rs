//! Hourly district-heat-demand forecasting with multi-hidden-layer Elman
//! networks: data preparation, training, evaluation and experiment studies.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod enn;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod numerics;
pub mod stats;
pub mod synth;

pub use dataset::{
    build_supervectors, compute_stats, filter_working_days, load_csv, Channel, DatasetVariant,
    HourlyRecord, NormalizationStats, SuperVectorSet, TimeSeriesTable,
};
pub use enn::{EnnModel, LearningRates, TrainConfig, TrainTrace};
pub use error::{Error, Result};
pub use eval::{EvalReport, PredictionPairs};
pub use synth::SynthConfig;
pub use experiment::{
    run_data_amount_study, run_factor_study, run_sweep, DataSource, DateRange, Execution,
    ExperimentPlan, StudyReport,
};
