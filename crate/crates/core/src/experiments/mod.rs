//! Plans of training runs (single runs, the loss ablation, the beta sweep),
//! the flat config file they are described by, and their on-disk outputs.
//!
//! A plan writes `<out_dir>/<name>/<cell>/<seed>/` per run, holding
//! `config.resolved`, `train.csv`, `checkpoint`, `metrics_a2b.csv`,
//! `metrics_b2a.csv` and `figures/`, plus a `manifest_<kind>.json` and the
//! plan's tables or sweep outputs at `<out_dir>/<name>/`.

mod config;
mod figures;
mod plan;
mod plot;

pub use config::{default_beta_grid, DataSource, Preset, RunConfig, CONFIG_KEYS};
pub use figures::emit_figures;
pub use plan::{
    metrics_file, rebuild_tables, run_files, run_plan, run_single, Cell, ExperimentPlan, PlanKind, PlanOutcome,
    ResultsTable, RunManifest, RunRecord, SplitRecord, TableRow, RESOLVED_FILE,
};
pub use plot::{draw, fonts_available, sweep_plots, SweepPlot};
