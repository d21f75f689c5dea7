//! One training run: build, train, evaluate, and persist a
//! self-describing run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::harness::config::{CorpusConfig, ExperimentConfig};
use crate::metrics::{LorenzCurve, MetricsRow};
use crate::pipeline::{
    Arch, BudgetSpec, EvalReport, Hyper, Model, ModelGeometry, ModelManifest, ResetEvent,
    TrainOptions, TrainReport,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_CSV: &str = "train.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.vqfm";
pub const REPORT_FILE: &str = "report.json";
pub const TRAIN_CSV_HEADER: &str = "step,reconstruction,commitment,total,perplexity_mean,resets";

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub geometry: ModelGeometry,
    pub hyper: Hyper,
    pub schedule: TrainOptions,
    pub budget: Option<BudgetSpec>,
}

impl RunSpec {
    /// Matched-budget spec for one architecture of a config.
    pub fn matched(config: &ExperimentConfig, arch: Arch, seed: u64) -> Result<Self> {
        let geometry = config.geometry(arch)?;
        let schedule = TrainOptions { seed, ..config.schedule };
        Ok(Self {
            run_id: ExperimentConfig::run_id(
                arch,
                geometry.codebook_size,
                geometry.code_dim,
                seed,
            ),
            geometry,
            hyper: config.model.hyper,
            schedule,
            budget: Some(config.matched_spec()?),
        })
    }
}

/// Run-directory manifest: the run spec plus the corpus recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: RunSpec,
    pub corpus: CorpusConfig,
}

/// Report persisted as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metrics: MetricsRow,
    pub eval: EvalReport,
    pub reset_events: Vec<ResetEvent>,
    pub total_resets: u64,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub train_report: TrainReport,
    pub report: RunReport,
}

/// Execute one run into `out_dir/<run_id>/`, writing the manifest, the
/// per-step training CSV, the metrics CSV, Lorenz CSVs, the checkpoint,
/// and the JSON report.
pub fn execute_run(
    spec: &RunSpec,
    corpus_config: &CorpusConfig,
    corpus: &[Image<f32>],
    out_dir: &Path,
) -> Result<RunArtifacts> {
    let run_dir = out_dir.join(&spec.run_id);
    std::fs::create_dir_all(&run_dir)?;

    let mut model = Model::<f32>::build(spec.geometry, spec.hyper, &spec.schedule, corpus)?;
    let train_report = model.train(corpus, &spec.schedule)?;
    let eval = model.evaluate(corpus)?;
    let metrics = eval.metrics_row(&spec.run_id, spec.schedule.steps);

    let manifest = RunManifest { spec: spec.clone(), corpus: corpus_config.clone() };
    write_json(&run_dir.join(MANIFEST_FILE), &manifest)?;
    write_train_csv(&run_dir.join(TRAIN_CSV), &train_report)?;
    write_metrics_csv(&run_dir.join(METRICS_CSV), std::slice::from_ref(&metrics))?;
    write_lorenz_csvs(&run_dir, spec.geometry.arch, &eval.levels.iter().map(|l| l.lorenz.clone()).collect::<Vec<_>>())?;

    let model_manifest = ModelManifest {
        format_version: 1,
        geometry: spec.geometry,
        hyper: spec.hyper,
        schedule: spec.schedule,
        seed: spec.schedule.seed,
        budget: spec.budget,
    };
    model.save_file(&model_manifest, &run_dir.join(MODEL_FILE))?;

    let total_resets = train_report.history.iter().map(|r| r.resets).sum();
    let report = RunReport {
        metrics,
        eval,
        reset_events: train_report.reset_events.clone(),
        total_resets,
    };
    write_json(&run_dir.join(REPORT_FILE), &report)?;

    Ok(RunArtifacts { run_dir, train_report, report })
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn write_train_csv(path: &Path, report: &TrainReport) -> Result<()> {
    let mut out = String::from(TRAIN_CSV_HEADER);
    out.push('\n');
    for r in &report.history {
        let mean_perplexity =
            r.perplexities.iter().sum::<f64>() / r.perplexities.len().max(1) as f64;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.reconstruction, r.commitment, r.total, mean_perplexity, r.resets
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from(MetricsRow::CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_row());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == MetricsRow::CSV_HEADER => {}
        other => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("bad metrics header {other:?}"),
            })
        }
    }
    lines.map(MetricsRow::parse_csv_row).collect()
}

/// Two-column CSV per level: cumulative code fraction, cumulative
/// assignment share.
pub fn write_lorenz_csvs(run_dir: &Path, arch: Arch, curves: &[LorenzCurve]) -> Result<()> {
    let names: &[&str] = match arch {
        Arch::Single => &["lorenz.csv"],
        Arch::Hier => &["lorenz_bottom.csv", "lorenz_top.csv"],
    };
    for (name, curve) in names.iter().zip(curves) {
        let mut out = String::from("code_fraction,assignment_share\n");
        for (x, y) in &curve.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        std::fs::write(run_dir.join(name), out)?;
    }
    Ok(())
}

pub fn read_run_report(run_dir: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(run_dir.join(REPORT_FILE))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: 0,
        message: format!("bad report JSON: {e}"),
    })
}
