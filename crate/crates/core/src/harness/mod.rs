//! Experiment configuration, seeded multi-run execution, aggregation and
//! CSV/JSON export.

mod cli;
mod config;
mod export;
mod run;

pub use cli::{resolve_out_dir, run_cli, Cli, Command, RunArgs, OUT_DIR_ENV};
pub use config::{ComparatorConfig, ControllerEntry, CostConfig, ExperimentConfig, PolicyConfig, RunMode};
pub use export::{
    format_value, metadata_json, parse_value, series_csv, summary_csv, write_run, write_sweep, SERIES_HEADER,
    SUMMARY_HEADER,
};
pub use run::{
    aggregate, compare, comparison_lineup, controller_spec, episode_setup, mean_std, resolve_params, run_at_horizon,
    run_episode, run_experiment, stream_seed, streams, sweep, AggregateResult, ControllerAggregate, ControllerEpisode,
    EpisodeMeta, EpisodeResult, EpisodeSetup, ResolvedParams, SeriesRow, SweepResult,
};
