//! Generate → corrupt → segment → evaluate over a config matrix.
//!
//! `results.csv` holds only seeded quantities so reruns reproduce it byte
//! for byte; wall-clock times go to `timings.csv`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use segres_core::corrupt::{degrade, make_scene, SceneKind};
use segres_core::driver::run;
use segres_core::metrics::segmentation_accuracy;
use serde::Serialize;

use crate::config::{DegradationEntry, ExperimentFile, ModelConfig};
use crate::imageio;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResultRow {
    pub cell: usize,
    pub scene: String,
    pub degradation: String,
    pub params: String,
    pub size: usize,
    pub phases: Option<usize>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub baseline: Option<bool>,
    pub noise: f64,
    pub blur: String,
    pub drop: f64,
    pub seed: u64,
    pub sa: Option<String>,
    pub iterations: Option<usize>,
    pub termination: Option<String>,
    pub final_energy: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct TimingRow {
    cell: usize,
    seconds: String,
}

struct Cell<'a> {
    index: usize,
    scene: &'a str,
    degradation: &'a DegradationEntry,
    params: &'a ModelConfig,
    params_name: String,
}

fn cell_dir_name(c: &Cell) -> String {
    let clean = |s: &str| s.chars().map(|ch| if ch.is_ascii_alphanumeric() || ch == '.' || ch == '-' { ch } else { '_' }).collect::<String>();
    format!("{:03}_{}_{}_{}", c.index, clean(c.scene), clean(&c.degradation.name), clean(&c.params_name))
}

fn run_cell(cfg: &ExperimentFile, c: &Cell, out_dir: &Path, row: &mut ResultRow) -> Result<()> {
    let kind: SceneKind = c.scene.parse()?;
    let spec = c.degradation.spec()?;
    let mut model = c.params.clone();
    if model.blur.is_none() {
        model.blur = Some(spec.blur.to_string());
    }
    if model.phases.is_none() {
        model.phases = Some(kind.phases());
    }
    let params = model.to_params()?;
    row.phases = Some(params.phases);
    row.mu = Some(params.mu);
    row.lambda = Some(params.lambda);
    row.baseline = Some(params.baseline);

    let scene = make_scene(kind, cfg.size, cfg.scene_seed)?;
    let (f, omega) = degrade(&scene.image, &spec)?;
    let result = run(&f, &omega, &params)?;
    let sa = segmentation_accuracy(&result.labels, &scene.truth)?;
    row.sa = Some(format!("{sa:.4}"));
    row.iterations = Some(result.trace.rows.len());
    row.termination = Some(format!("{:?}", result.trace.termination));
    row.final_energy = result.trace.rows.last().map(|r| format!("{:e}", r.energy.total));

    let dir = out_dir.join("cells").join(cell_dir_name(c));
    fs::create_dir_all(&dir)?;
    imageio::write_image(&dir.join(if f.channels() == 1 { "observed.pgm" } else { "observed.ppm" }), &f)?;
    imageio::write_labels(&dir.join("labels.pgm"), &result.labels)?;
    imageio::write_labels(&dir.join("truth.pgm"), &scene.truth)?;
    fs::write(dir.join("trace.csv"), result.trace.to_csv())?;
    Ok(())
}

/// Runs every cell (in parallel) and writes `results.csv` and `timings.csv`.
/// Returns the rows; failed cells carry their error message.
pub fn experiment(cfg: &ExperimentFile, out_dir: &Path) -> Result<Vec<ResultRow>> {
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let mut cells = Vec::new();
    for scene in &cfg.scenes {
        for degradation in &cfg.degradation {
            for (pi, params) in cfg.params.iter().enumerate() {
                let params_name = params.name.clone().unwrap_or_else(|| format!("p{pi}"));
                cells.push(Cell { index: cells.len(), scene, degradation, params, params_name });
            }
        }
    }
    log::info!("{} cells", cells.len());

    let outcomes: Vec<(ResultRow, f64)> = cells
        .par_iter()
        .map(|c| {
            let d = c.degradation;
            let mut row = ResultRow {
                cell: c.index,
                scene: c.scene.to_string(),
                degradation: d.name.clone(),
                params: c.params_name.clone(),
                size: cfg.size,
                noise: d.noise,
                blur: d.blur.clone().unwrap_or_else(|| "none".into()),
                drop: d.drop,
                seed: d.seed,
                ..ResultRow::default()
            };
            let t = Instant::now();
            if let Err(e) = run_cell(cfg, c, out_dir, &mut row) {
                log::error!("cell {} ({} / {} / {}): {e:#}", c.index, c.scene, d.name, c.params_name);
                row.error = Some(format!("{e:#}"));
            }
            (row, t.elapsed().as_secs_f64())
        })
        .collect();

    let mut results = csv::Writer::from_path(out_dir.join("results.csv"))?;
    let mut timings = csv::Writer::from_path(out_dir.join("timings.csv"))?;
    if outcomes.is_empty() {
        results.write_record(ROW_HEADER)?;
        timings.write_record(["cell", "seconds"])?;
    }
    for (row, secs) in &outcomes {
        results.serialize(row)?;
        timings.serialize(TimingRow { cell: row.cell, seconds: format!("{secs:.3}") })?;
    }
    results.flush()?;
    timings.flush()?;
    Ok(outcomes.into_iter().map(|(r, _)| r).collect())
}

/// Header written for an empty matrix; matches the field order of [`ResultRow`].
const ROW_HEADER: [&str; 18] = [
    "cell",
    "scene",
    "degradation",
    "params",
    "size",
    "phases",
    "mu",
    "lambda",
    "baseline",
    "noise",
    "blur",
    "drop",
    "seed",
    "sa",
    "iterations",
    "termination",
    "final_energy",
    "error",
];
