//! Matched-budget head-to-head: single-level vs hierarchical under an
//! identical schedule and seed.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::run::{execute_run, write_json, RunSpec};
use crate::metrics::MetricsRow;
use crate::pipeline::{Arch, BudgetSpec};

pub const MATCHED_CSV: &str = "matched.csv";
pub const MATCHED_JSON: &str = "matched.json";
pub const MATCHED_CSV_HEADER: &str =
    "seed,mse_single,mse_hier,rel_mse_gap,psnr_single,psnr_hier,nperp_single,nperp_hier";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub seed: u64,
    pub single: MetricsRow,
    pub hier: MetricsRow,
    /// `|mse_single - mse_hier| / mse_hier`.
    pub rel_mse_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedReport {
    pub budget: BudgetSpec,
    pub pairs: Vec<MatchedPair>,
}

/// Train both architectures per seed under the matched budget and report
/// paired metrics with the relative MSE gap.
pub fn run_matched(config: &ExperimentConfig, out_dir: &Path) -> Result<MatchedReport> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let corpus = config.corpus.build::<f32>()?;
    let budget = config.matched_spec()?;

    let jobs: Vec<(Arch, u64)> = config
        .sweep
        .seeds
        .iter()
        .flat_map(|&seed| [(Arch::Single, seed), (Arch::Hier, seed)])
        .collect();
    let results: Vec<Result<(Arch, u64, MetricsRow)>> = jobs
        .par_iter()
        .map(|&(arch, seed)| {
            let spec = RunSpec::matched(config, arch, seed)?;
            let artifacts = execute_run(&spec, &config.corpus, &corpus, out_dir)?;
            Ok((arch, seed, artifacts.report.metrics))
        })
        .collect();

    let mut pairs = Vec::new();
    for &seed in &config.sweep.seeds {
        let mut single = None;
        let mut hier = None;
        for r in &results {
            match r {
                Ok((Arch::Single, s, m)) if *s == seed => single = Some(m.clone()),
                Ok((Arch::Hier, s, m)) if *s == seed => hier = Some(m.clone()),
                _ => {}
            }
        }
        // Surface the first error for this seed, if any run failed.
        if single.is_none() || hier.is_none() {
            for r in &results {
                if let Err(e) = r {
                    return Err(Error::Config(format!("matched run failed: {e}")));
                }
            }
            return Err(Error::Config(format!("missing matched results for seed {seed}")));
        }
        let single = single.unwrap();
        let hier = hier.unwrap();
        let rel_mse_gap = if hier.mse > 0.0 {
            (single.mse - hier.mse).abs() / hier.mse
        } else {
            f64::INFINITY
        };
        pairs.push(MatchedPair { seed, single, hier, rel_mse_gap });
    }

    let report = MatchedReport { budget, pairs };
    write_matched_csv(&out_dir.join(MATCHED_CSV), &report.pairs)?;
    write_json(&out_dir.join(MATCHED_JSON), &report)?;
    Ok(report)
}

pub fn write_matched_csv(path: &Path, pairs: &[MatchedPair]) -> Result<()> {
    let mut out = String::from(MATCHED_CSV_HEADER);
    out.push('\n');
    for p in pairs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.seed,
            p.single.mse,
            p.hier.mse,
            p.rel_mse_gap,
            p.single.psnr,
            p.hier.psnr,
            p.single.normalized_perplexity,
            p.hier.normalized_perplexity,
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
