//! Collapse-intervention ablation: the {data-init, dead-code-reset} x
//! {single, hierarchical} factorial at a fixed matched budget.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::run::{execute_run, write_json, RunSpec};
use crate::metrics::Psnr;
use crate::pipeline::{Arch, TrainOptions};

pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_CSV_HEADER: &str =
    "arch,data_init,dead_code_reset,seed,status,reason,mse,psnr,normalized_perplexity,gini,dead_resets";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub arch: Arch,
    pub data_init: bool,
    pub dead_code_reset: bool,
    pub seed: u64,
    pub status: String,
    pub reason: Option<String>,
    pub run_id: Option<String>,
    pub mse: Option<f64>,
    pub psnr: Option<Psnr>,
    pub normalized_perplexity: Option<f64>,
    pub gini: Option<f64>,
    pub dead_resets: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
    pub seeds: Vec<u64>,
    /// Whether the no-data-init arms start from the collapse fixture.
    pub adversarial_init: bool,
}

/// Train every arm of the factorial per seed. Diverged arms are recorded
/// and the rest continue.
pub fn run_ablation(config: &ExperimentConfig, out_dir: &Path) -> Result<AblationReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let corpus = config.corpus.build::<f32>()?;
    let adversarial = config.schedule.adversarial_init;

    let mut plan = Vec::new();
    for arch in [Arch::Single, Arch::Hier] {
        for data_init in [true, false] {
            for reset in [true, false] {
                for &seed in &config.sweep.seeds {
                    plan.push((arch, data_init, reset, seed));
                }
            }
        }
    }

    let arms: Vec<AblationArm> = plan
        .par_iter()
        .map(|&(arch, data_init, reset, seed)| {
            let arm_dir = format!(
                "arm_{arch}_init{}_reset{}",
                u8::from(data_init),
                u8::from(reset)
            );
            let schedule = TrainOptions {
                seed,
                data_init,
                dead_code_reset: reset,
                // The collapse fixture only replaces the non-data init.
                adversarial_init: adversarial && !data_init,
                ..config.schedule
            };
            let spec = match config.geometry(arch) {
                Ok(geometry) => RunSpec {
                    run_id: ExperimentConfig::run_id(
                        arch,
                        geometry.codebook_size,
                        geometry.code_dim,
                        seed,
                    ),
                    geometry,
                    hyper: config.model.hyper,
                    schedule,
                    budget: config.matched_spec().ok(),
                },
                Err(e) => {
                    return AblationArm {
                        arch,
                        data_init,
                        dead_code_reset: reset,
                        seed,
                        status: "failed".into(),
                        reason: Some(e.to_string()),
                        run_id: None,
                        mse: None,
                        psnr: None,
                        normalized_perplexity: None,
                        gini: None,
                        dead_resets: None,
                    }
                }
            };
            match execute_run(&spec, &config.corpus, &corpus, &out_dir.join(&arm_dir)) {
                Ok(artifacts) => {
                    let m = &artifacts.report.metrics;
                    AblationArm {
                        arch,
                        data_init,
                        dead_code_reset: reset,
                        seed,
                        status: "ok".into(),
                        reason: None,
                        run_id: Some(format!("{arm_dir}/{}", spec.run_id)),
                        mse: Some(m.mse),
                        psnr: Some(m.psnr),
                        normalized_perplexity: Some(m.normalized_perplexity),
                        gini: Some(m.gini),
                        dead_resets: Some(artifacts.report.total_resets),
                    }
                }
                Err(e) => AblationArm {
                    arch,
                    data_init,
                    dead_code_reset: reset,
                    seed,
                    status: "failed".into(),
                    reason: Some(e.to_string()),
                    run_id: None,
                    mse: None,
                    psnr: None,
                    normalized_perplexity: None,
                    gini: None,
                    dead_resets: None,
                },
            }
        })
        .collect();

    let report = AblationReport {
        arms,
        seeds: config.sweep.seeds.clone(),
        adversarial_init: adversarial,
    };
    write_ablation_csv(&out_dir.join(ABLATION_CSV), &report.arms)?;
    write_json(&out_dir.join(ABLATION_JSON), &report)?;
    Ok(report)
}

pub fn write_ablation_csv(path: &Path, arms: &[AblationArm]) -> Result<()> {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for arm in arms {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            arm.arch,
            u8::from(arm.data_init),
            u8::from(arm.dead_code_reset),
            arm.seed,
            arm.status,
            arm.reason.as_deref().map(|r| r.replace([',', '\n'], ";")).unwrap_or_default(),
            opt(&arm.mse),
            arm.psnr.map(|p| p.to_string()).unwrap_or_default(),
            opt(&arm.normalized_perplexity),
            opt(&arm.gini),
            arm.dead_resets.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

impl AblationReport {
    /// The arm for one cell and seed, if it ran.
    pub fn arm(&self, arch: Arch, data_init: bool, reset: bool, seed: u64) -> Option<&AblationArm> {
        self.arms.iter().find(|a| {
            a.arch == arch && a.data_init == data_init && a.dead_code_reset == reset && a.seed == seed
        })
    }
}
