//! Objective evaluation: blendshape RMSE over all channels and over the
//! crucial jawOpen/mouthClose pair, and inference real-time factor against
//! a BLSTM baseline.

mod rmse;
mod rtf;
mod suite;

pub use rmse::{format_table, load_animation_dir, match_pairs, rmse, RmseReport, UtteranceRmse};
pub use rtf::{
    bench_rtf, blstm_scaling, matched_blstm, timer_resolution, BenchConfig, BenchModel, ModelTiming, RtfReport, CV_LIMIT,
    MIN_RUNS, MIN_WARMUP,
};
pub use suite::{evaluate_checkpoint, evaluate_suite, mean_predictor_report, SuiteReport, MEAN_PREDICTOR, REPORT_SCHEMA_VERSION};
