use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dccycle_autograd::{DType, Real};
use serde::{Deserialize, Serialize};

use super::config::{family_slug, RunConfig};
use super::figures::emit_figures;
use crate::data::{Direction, Domain, UnpairedDataset};
use crate::losses::{LossConfig, LossFamily};
use crate::metrics::{MeanStd, MetricReport};
use crate::trainer::{evaluate, fit, FitOptions, CHECKPOINT_FILE, LOG_FILE};
use crate::{Error, Result, SOURCE_HASH};

pub const RESOLVED_FILE: &str = "config.resolved";

pub fn metrics_file(direction: Direction) -> String {
    format!("metrics_{direction}.csv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    Train,
    Ablation,
    Sweep,
}

impl PlanKind {
    /// Run-manifest name; kinds sharing an output root keep separate files.
    pub fn manifest_file(self) -> &'static str {
        match self {
            PlanKind::Train => "manifest_train.json",
            PlanKind::Ablation => "manifest_ablation.json",
            PlanKind::Sweep => "manifest_sweep.json",
        }
    }
}

/// One loss configuration of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Display label, e.g. `SSIM&CE(w)` or `beta=0.5`.
    pub label: String,
    /// Directory name.
    pub slug: String,
    pub loss: LossConfig,
}

impl Cell {
    pub fn for_loss(loss: LossConfig) -> Self {
        Cell {
            label: loss.label(),
            slug: format!(
                "{}_{}",
                family_slug(loss.family),
                if loss.dual_contrast { "w" } else { "wo" }
            ),
            loss,
        }
    }
}

/// Cells crossed with seeds; every cell shares the base configuration
/// apart from its loss settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub name: String,
    pub kind: PlanKind,
    pub base: RunConfig,
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
}

impl ExperimentPlan {
    /// The single configured cell at the configured seed.
    pub fn single(cfg: &RunConfig) -> Self {
        ExperimentPlan {
            name: cfg.name.clone(),
            kind: PlanKind::Train,
            base: cfg.clone(),
            cells: vec![Cell::for_loss(cfg.train.loss)],
            seeds: vec![cfg.train.seed],
        }
    }

    /// `{MAE&MSE, SSIM&CE} x {without, with}` dual contrast over the repeat
    /// seeds. Lambda, beta and SSIM settings come from the base config.
    pub fn ablation(cfg: &RunConfig) -> Self {
        let cells = [
            (LossFamily::MaeMse, false),
            (LossFamily::MaeMse, true),
            (LossFamily::SsimCe, false),
            (LossFamily::SsimCe, true),
        ]
        .into_iter()
        .map(|(family, dual_contrast)| {
            Cell::for_loss(LossConfig {
                family,
                dual_contrast,
                ..cfg.train.loss
            })
        })
        .collect();
        ExperimentPlan {
            name: cfg.name.clone(),
            kind: PlanKind::Ablation,
            base: cfg.clone(),
            cells,
            seeds: cfg.repeat_seeds.clone(),
        }
    }

    /// SSIM&CE with dual contrast at every beta of the grid.
    pub fn beta_sweep(cfg: &RunConfig) -> Result<Self> {
        if cfg.beta_grid.is_empty() {
            return Err(Error::Config("beta_grid: must not be empty for a sweep".into()));
        }
        let cells = cfg
            .beta_grid
            .iter()
            .map(|&beta| Cell {
                label: format!("beta={beta}"),
                slug: format!("beta_{beta}"),
                loss: LossConfig {
                    family: LossFamily::SsimCe,
                    dual_contrast: true,
                    beta,
                    ..cfg.train.loss
                },
            })
            .collect();
        Ok(ExperimentPlan {
            name: cfg.name.clone(),
            kind: PlanKind::Sweep,
            base: cfg.clone(),
            cells,
            seeds: cfg.sweep_seeds.clone(),
        })
    }

    pub fn root(&self) -> PathBuf {
        self.base.out_dir.join(&self.name)
    }

    pub fn run_dir(&self, cell: &Cell, seed: u64) -> PathBuf {
        self.root().join(&cell.slug).join(seed.to_string())
    }

    /// One bidirectional training per cell and seed.
    pub fn trainings(&self) -> usize {
        self.cells.len() * self.seeds.len()
    }

    /// Evaluated (cell, seed, direction) records.
    pub fn direction_runs(&self) -> usize {
        self.trainings() * Direction::BOTH.len()
    }

    /// The base config with a cell's loss and a seed substituted.
    pub fn run_config(&self, cell: &Cell, seed: u64) -> RunConfig {
        let mut cfg = self.base.clone();
        cfg.train.loss = cell.loss;
        cfg.train.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub error: Option<String>,
    #[serde(skip)]
    pub reports: BTreeMap<Direction, MetricReport>,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub plan: ExperimentPlan,
    pub runs: Vec<RunRecord>,
}

impl PlanOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| !r.ok()).count()
    }

    /// Per-run mean of `metric` over its test images, for one cell.
    fn per_run_means(&self, cell: &Cell, direction: Direction) -> Result<Vec<(f64, f64, f64)>> {
        self.runs
            .iter()
            .filter(|r| r.cell == cell.slug && r.ok())
            .map(|r| {
                let s = r.reports[&direction].summary()?;
                Ok((s.mae.mean, s.psnr.mean, s.ssim.mean))
            })
            .collect()
    }

    pub fn table(&self, direction: Direction) -> Result<ResultsTable> {
        let mut rows = Vec::new();
        for cell in &self.plan.cells {
            let means = self.per_run_means(cell, direction)?;
            let expected = self.plan.seeds.len();
            rows.push(TableRow::from_means(cell, &means, expected)?);
        }
        Ok(ResultsTable { direction, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub slug: String,
    pub beta: f64,
    /// Seeds that finished.
    pub n: usize,
    /// Some seeds failed.
    pub incomplete: bool,
    pub mae: Option<MeanStd>,
    pub psnr: Option<MeanStd>,
    pub ssim: Option<MeanStd>,
}

impl TableRow {
    fn from_means(cell: &Cell, means: &[(f64, f64, f64)], expected: usize) -> Result<Self> {
        let col = |f: fn(&(f64, f64, f64)) -> f64| -> Result<Option<MeanStd>> {
            if means.is_empty() {
                return Ok(None);
            }
            Ok(Some(MeanStd::of(&means.iter().map(f).collect::<Vec<_>>())?))
        };
        Ok(TableRow {
            label: cell.label.clone(),
            slug: cell.slug.clone(),
            beta: cell.loss.beta,
            n: means.len(),
            incomplete: means.len() < expected,
            mae: col(|m| m.0)?,
            psnr: col(|m| m.1)?,
            ssim: col(|m| m.2)?,
        })
    }
}

/// One direction's rows, metrics as "mean (std)" over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub direction: Direction,
    pub rows: Vec<TableRow>,
}

const DECIMALS: (usize, usize, usize) = (5, 3, 3);

fn cell_text(v: &Option<MeanStd>, decimals: usize) -> String {
    v.map(|m| m.display(decimals)).unwrap_or_else(|| "n/a".into())
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl ResultsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "cell,n,incomplete,MAE,PSNR,SSIM,mae_mean,mae_std,psnr_mean,psnr_std,ssim_mean,ssim_std\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.n,
                r.incomplete,
                cell_text(&r.mae, DECIMALS.0),
                cell_text(&r.psnr, DECIMALS.1),
                cell_text(&r.ssim, DECIMALS.2),
                num(r.mae.map(|m| m.mean)),
                num(r.mae.map(|m| m.std)),
                num(r.psnr.map(|m| m.mean)),
                num(r.psnr.map(|m| m.std)),
                num(r.ssim.map(|m| m.mean)),
                num(r.ssim.map(|m| m.std)),
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("{}\n\n| | MAE | PSNR | SSIM |\n|---|---|---|---|\n", self.direction);
        for r in &self.rows {
            let mark = if r.incomplete { " (incomplete)" } else { "" };
            out.push_str(&format!(
                "| {}{mark} | {} | {} | {} |\n",
                r.label,
                cell_text(&r.mae, DECIMALS.0),
                cell_text(&r.psnr, DECIMALS.1),
                cell_text(&r.ssim, DECIMALS.2)
            ));
        }
        out
    }

    /// Metric-vs-beta rows for sweeps.
    pub fn to_sweep_csv(&self) -> String {
        let mut out = String::from("beta,n,mae_mean,mae_std,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.beta,
                r.n,
                num(r.mae.map(|m| m.mean)),
                num(r.mae.map(|m| m.std)),
                num(r.psnr.map(|m| m.mean)),
                num(r.psnr.map(|m| m.std)),
                num(r.ssim.map(|m| m.mean)),
                num(r.ssim.map(|m| m.std)),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub test_x: Vec<String>,
    pub test_y: Vec<String>,
}

/// What `manifest.json` holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub plan: String,
    pub kind: PlanKind,
    pub config_hash: String,
    pub source_hash: String,
    pub config: String,
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
    pub directions: Vec<Direction>,
    pub trainings: usize,
    pub direction_runs: usize,
    pub splits: Vec<SplitRecord>,
    pub runs: Vec<RunRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_and_report<T: Real>(
    cfg: &RunConfig,
    data: &UnpairedDataset,
    dir: &Path,
    verbose: bool,
) -> Result<BTreeMap<Direction, MetricReport>> {
    let split = data.split(cfg.train.seed, cfg.train_fraction)?;
    let opts = FitOptions {
        out_dir: Some(dir),
        resume: true,
        halt_after: None,
        verbose,
    };
    let out = fit::<T>(data, &split, &cfg.train, &opts)?;
    let mut reports = BTreeMap::new();
    for d in Direction::BOTH {
        let report = evaluate(&out.state, data, &split, d, &cfg.train.loss.ssim)?;
        report.write_csv(dir.join(metrics_file(d)))?;
        reports.insert(d, report);
    }
    if cfg.emit_figures {
        emit_figures(&out.state.gen_g, &out.state.gen_f, data, &split, &dir.join("figures"))?;
    }
    Ok(reports)
}

/// Trains, evaluates and writes one run directory.
pub fn run_single(cfg: &RunConfig, data: &UnpairedDataset, dir: &Path, verbose: bool) -> Result<BTreeMap<Direction, MetricReport>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(RESOLVED_FILE), &cfg.to_resolved())?;
    match cfg.train.precision {
        DType::F32 => train_and_report::<f32>(cfg, data, dir, verbose),
        DType::F64 => train_and_report::<f64>(cfg, data, dir, verbose),
    }
}

/// Runs every (cell, seed) of a plan on a worker pool. A failed run is
/// recorded and the rest carry on.
pub fn run_plan(plan: &ExperimentPlan, data: &UnpairedDataset, verbose: bool) -> Result<PlanOutcome> {
    use rayon::prelude::*;
    let jobs: Vec<(&Cell, u64)> = plan
        .cells
        .iter()
        .flat_map(|c| plan.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.base.workers)
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, seed)| {
                let dir = plan.run_dir(cell, seed);
                let cfg = plan.run_config(cell, seed);
                if verbose {
                    println!("run {} seed {seed} -> {}", cell.label, dir.display());
                }
                let result = run_single(&cfg, data, &dir, verbose);
                if let Err(e) = &result {
                    log::error!("{} seed {seed} failed: {e}", cell.label);
                }
                RunRecord {
                    cell: cell.slug.clone(),
                    seed,
                    error: result.as_ref().err().map(|e| e.to_string()),
                    reports: result.unwrap_or_default(),
                    dir,
                }
            })
            .collect()
    });
    let outcome = PlanOutcome { plan: plan.clone(), runs };
    write_plan_outputs(&outcome, data)?;
    Ok(outcome)
}

fn write_plan_outputs(outcome: &PlanOutcome, data: &UnpairedDataset) -> Result<()> {
    let plan = &outcome.plan;
    let root = plan.root();
    let splits = plan
        .seeds
        .iter()
        .map(|&seed| {
            let split = data.split(seed, plan.base.train_fraction)?;
            Ok(SplitRecord {
                seed,
                test_x: split.test_ids(data, Domain::X),
                test_y: split.test_ids(data, Domain::Y),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        plan: plan.name.clone(),
        kind: plan.kind,
        config_hash: plan.base.hash(),
        source_hash: SOURCE_HASH.to_string(),
        config: plan.base.to_resolved(),
        cells: plan.cells.clone(),
        seeds: plan.seeds.clone(),
        directions: Direction::BOTH.to_vec(),
        trainings: plan.trainings(),
        direction_runs: plan.direction_runs(),
        splits,
        runs: outcome.runs.clone(),
    };
    write(&root.join(plan.kind.manifest_file()), &serde_json::to_string_pretty(&manifest)?)?;
    match plan.kind {
        PlanKind::Train => {}
        PlanKind::Ablation => {
            for d in Direction::BOTH {
                let t = outcome.table(d)?;
                write(&root.join(format!("table_{d}.csv")), &t.to_csv())?;
                write(&root.join(format!("table_{d}.md")), &t.to_markdown())?;
            }
        }
        PlanKind::Sweep => {
            let tables = Direction::BOTH.map(|d| outcome.table(d));
            let [a, b] = tables;
            let (a, b) = (a?, b?);
            write(&root.join("sweep_a2b.csv"), &a.to_sweep_csv())?;
            write(&root.join("sweep_b2a.csv"), &b.to_sweep_csv())?;
            super::plot::sweep_plots(&a, &b, &root)?;
        }
    }
    Ok(())
}

/// Recomputes a plan's tables from the per-run metric CSVs on disk.
pub fn rebuild_tables(root: &Path, kind: PlanKind) -> Result<Vec<ResultsTable>> {
    let manifest = RunManifest::load(&root.join(kind.manifest_file()))?;
    let mut tables = Vec::new();
    for d in Direction::BOTH {
        let mut rows = Vec::new();
        for cell in &manifest.cells {
            let mut means = Vec::new();
            for run in manifest.runs.iter().filter(|r| r.cell == cell.slug && r.ok()) {
                let s = MetricReport::read_csv(run.dir.join(metrics_file(d)))?.summary()?;
                means.push((s.mae.mean, s.psnr.mean, s.ssim.mean));
            }
            rows.push(TableRow::from_means(cell, &means, manifest.seeds.len())?);
        }
        tables.push(ResultsTable { direction: d, rows });
    }
    Ok(tables)
}

/// Files a finished run directory is expected to hold.
pub fn run_files() -> [String; 5] {
    [
        RESOLVED_FILE.to_string(),
        LOG_FILE.to_string(),
        CHECKPOINT_FILE.to_string(),
        metrics_file(Direction::A2b),
        metrics_file(Direction::B2a),
    ]
}
