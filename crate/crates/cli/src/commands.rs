use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use segres_core::corrupt::{degrade, make_scene, DegradeSpec, SceneKind};
use segres_core::driver::{run, EnergyBreakdown, RunResult, Termination};
use segres_core::metrics::{align_labels, segmentation_accuracy};
use segres_core::{Codebook, ImageField, ModelParams, ObservationMask};
use serde::{Deserialize, Serialize};

use crate::config::{self, CorruptSidecar, ModelConfig};
use crate::imageio;

pub struct CorruptJob {
    pub input: PathBuf,
    pub output: PathBuf,
    pub mask: Option<PathBuf>,
    pub spec: DegradeSpec,
}

/// `out.pgm` -> `out_mask.pgm`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("png");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".spec.toml");
    output.with_file_name(name)
}

pub fn corrupt(job: &CorruptJob) -> Result<()> {
    let img = imageio::read_image(&job.input)?;
    let (out, omega) = degrade(&img, &job.spec)?;
    let mask = job.mask.clone().unwrap_or_else(|| {
        let m = sibling(&job.output, "_mask");
        // masks must stay lossless and gray
        if m.extension().is_some_and(|e| e == "ppm") { m.with_extension("pgm") } else { m }
    });
    imageio::write_image(&job.output, &out)?;
    imageio::write_mask(&mask, &omega)?;
    let side = CorruptSidecar {
        input: job.input.display().to_string(),
        output: job.output.display().to_string(),
        mask: mask.display().to_string(),
        degrade: job.spec.clone(),
    };
    config::save(&sidecar_path(&job.output), &side)?;
    log::info!("{} -> {} ({} of {} pixels observed)", job.input.display(), job.output.display(), omega.observed_count(), img.pixels());
    Ok(())
}

/// Everything needed to reproduce and interpret one segmentation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub input: String,
    pub mask: Option<String>,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub observed_pixels: usize,
    pub blur: String,
    pub params: ModelParams,
    /// `solved`, or `skipped` in baseline mode where `g` is the observation.
    pub g_step: String,
    pub termination: Termination,
    pub iterations: usize,
    pub final_energy: Option<EnergyBreakdown>,
    pub final_dc: Option<f64>,
    pub codebook: Codebook,
    pub outputs: BTreeMap<String, String>,
}

fn preview(result: &RunResult) -> Result<ImageField> {
    let (u, c) = (&result.labels, &result.codebook);
    let n = u.pixels();
    let mut data = vec![0.0; n * c.channels()];
    for (p, &l) in u.labels().iter().enumerate() {
        for j in 0..c.channels() {
            data[j * n + p] = c.get(l, j);
        }
    }
    Ok(ImageField::new(u.width(), u.height(), c.channels(), data)?)
}

/// Runs the model and writes label map, restoration, previews, trace and manifest.
pub fn segment(input: &Path, mask: Option<&Path>, model: &ModelConfig, out_dir: &Path) -> Result<Manifest> {
    let f = imageio::read_image(input)?;
    let omega = match mask {
        Some(m) => {
            let omega = imageio::read_mask(m)?;
            if !omega.matches(&f) {
                bail!("mask {}x{} does not match image {}x{}", omega.width(), omega.height(), f.width(), f.height());
            }
            omega
        }
        None => ObservationMask::full(f.width(), f.height()),
    };
    let params = model.to_params()?;
    let blur = model.blur_spec()?;
    let result = run(&f, &omega, &params)?;
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;

    let mut outputs = BTreeMap::new();
    let mut put = |key: &str, name: String| -> PathBuf {
        outputs.insert(key.to_string(), name.clone());
        out_dir.join(name)
    };
    imageio::write_labels(&put("labels", "labels.pgm".into()), &result.labels)?;
    imageio::write_label_palette(&put("labels_palette", "labels_palette.png".into()), &result.labels)?;
    imageio::write_image(&put("preview", "preview.png".into()), &preview(&result)?)?;
    let ext = if f.channels() == 1 { "pgm" } else { "ppm" };
    imageio::write_image(&put("restored", format!("restored.{ext}")), &result.g)?;
    if f.channels() > 1 {
        for (j, plane) in result.g.planes().enumerate() {
            let single = ImageField::new(f.width(), f.height(), 1, plane.to_vec())?;
            imageio::write_image(&put(&format!("restored_c{j}"), format!("restored_c{j}.pgm")), &single)?;
        }
    }
    let trace_path = put("trace", "trace.csv".into());
    fs::write(&trace_path, result.trace.to_csv())?;

    let manifest = Manifest {
        tool: "segres".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        input: input.display().to_string(),
        mask: mask.map(|m| m.display().to_string()),
        width: f.width(),
        height: f.height(),
        channels: f.channels(),
        observed_pixels: omega.observed_count(),
        blur: blur.to_string(),
        g_step: if params.baseline { "skipped" } else { "solved" }.into(),
        termination: result.trace.termination,
        iterations: result.trace.rows.len(),
        final_energy: result.trace.rows.last().map(|r| r.energy),
        final_dc: result.trace.final_dc(),
        codebook: result.codebook.clone(),
        params,
        outputs,
    };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    if manifest.termination == Termination::MaxOuter {
        log::warn!("stopped at the outer iteration limit ({}) before the codebook settled", manifest.iterations);
    }
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub pred: String,
    pub truth: String,
    pub width: usize,
    pub height: usize,
    pub phases: usize,
    pub correct: usize,
    pub total: usize,
    pub sa: f64,
}

pub fn evaluate(pred_path: &Path, truth_path: &Path, report: Option<&Path>) -> Result<EvalReport> {
    let pred = imageio::read_labels(pred_path)?;
    let truth = imageio::read_labels(truth_path)?;
    let sa = segmentation_accuracy(&pred, &truth)?;
    let phases = pred.phases().max(truth.phases());
    let aligned = align_labels(&pred, &truth, phases)?;
    let correct = aligned.labels().iter().zip(truth.labels()).filter(|(a, b)| a == b).count();
    let rep = EvalReport {
        pred: pred_path.display().to_string(),
        truth: truth_path.display().to_string(),
        width: truth.width(),
        height: truth.height(),
        phases,
        correct,
        total: truth.pixels(),
        sa,
    };
    if let Some(path) = report {
        fs::write(path, serde_json::to_string_pretty(&rep)? + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(rep)
}

pub fn scene(kind: SceneKind, size: usize, seed: u64, output: &Path, truth: Option<&Path>) -> Result<()> {
    let sc = make_scene(kind, size, seed)?;
    imageio::write_image(output, &sc.image)?;
    if let Some(t) = truth {
        imageio::write_labels(t, &sc.truth)?;
    }
    Ok(())
}
