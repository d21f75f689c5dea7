//! Grid sweep over codebook size and code dimension, with monotone-trend
//! summaries.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::run::{execute_run, write_json, RunSpec};
use crate::metrics::Psnr;
use crate::pipeline::TrainOptions;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV_HEADER: &str =
    "codebook_size,code_dim,seed,status,reason,mse,psnr,perplexity,normalized_perplexity,gini,dead_resets";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub codebook_size: usize,
    pub code_dim: usize,
    pub seed: u64,
    /// "ok", "skipped" (infeasible), or "failed" (run error).
    pub status: String,
    pub reason: Option<String>,
    pub mse: Option<f64>,
    pub psnr: Option<Psnr>,
    pub perplexity: Option<f64>,
    pub normalized_perplexity: Option<f64>,
    pub gini: Option<f64>,
    /// Codes reset over the whole run.
    pub dead_resets: Option<u64>,
}

impl SweepCell {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.codebook_size,
            self.code_dim,
            self.seed,
            self.status,
            self.reason.as_deref().map(sanitize).unwrap_or_default(),
            opt(&self.mse),
            self.psnr.map(|p| p.to_string()).unwrap_or_default(),
            opt(&self.perplexity),
            opt(&self.normalized_perplexity),
            opt(&self.gini),
            self.dead_resets.map(|v| v.to_string()).unwrap_or_default(),
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Parse {
                offset: 0,
                message: format!("sweep row has {} fields, expected 11", fields.len()),
            });
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                offset: 0,
                message: format!("bad integer {s:?}: {e}"),
            })
        };
        let opt_f64 = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| Error::Parse {
                    offset: 0,
                    message: format!("bad number {s:?}: {e}"),
                })
            }
        };
        Ok(Self {
            codebook_size: parse_usize(fields[0])?,
            code_dim: parse_usize(fields[1])?,
            seed: fields[2].parse().map_err(|e| Error::Parse {
                offset: 0,
                message: format!("bad seed {:?}: {e}", fields[2]),
            })?,
            status: fields[3].to_string(),
            reason: if fields[4].is_empty() { None } else { Some(fields[4].to_string()) },
            mse: opt_f64(fields[5])?,
            psnr: if fields[6].is_empty() {
                None
            } else if fields[6] == "exact" {
                Some(Psnr::Exact)
            } else {
                Some(Psnr::Decibels(opt_f64(fields[6])?.unwrap()))
            },
            perplexity: opt_f64(fields[7])?,
            normalized_perplexity: opt_f64(fields[8])?,
            gini: opt_f64(fields[9])?,
            dead_resets: if fields[10].is_empty() {
                None
            } else {
                Some(fields[10].parse().map_err(|e| Error::Parse {
                    offset: 0,
                    message: format!("bad reset count {:?}: {e}", fields[10]),
                })?)
            },
        })
    }
}

fn sanitize(reason: &str) -> String {
    reason.replace([',', '\n'], ";")
}

/// MSE against codebook size at one code dimension (seed means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KTrend {
    pub code_dim: usize,
    pub codebook_sizes: Vec<usize>,
    pub mean_mse: Vec<f64>,
    /// Adjacent-pair increases of the seed-mean MSE as K grows.
    pub inversions: usize,
    /// Largest relative size of such an increase.
    pub max_inversion_rel: f64,
}

/// MSE against code dimension at one codebook size (seed means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DSlice {
    pub codebook_size: usize,
    pub code_dims: Vec<usize>,
    pub mean_mse: Vec<f64>,
    pub best_dim: usize,
    pub worst_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub k_trends: Vec<KTrend>,
    pub d_slices: Vec<DSlice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub summary: SweepSummary,
    pub seeds: Vec<u64>,
    pub wall_time_secs: f64,
}

/// Run the grid. Infeasible cells are skipped with a reason; failed runs
/// are recorded and do not abort the sweep. Errors out only when nothing
/// is runnable.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<SweepResult> {
    config.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let corpus = config.corpus.build::<f32>()?;
    let hier = config.hier_budget()?;
    let matched_discrete = 2 * hier.codebook_size * hier.code_dim;

    #[derive(Clone)]
    enum Planned {
        Run(RunSpec),
        Skip(String),
    }

    let mut plan: Vec<(usize, usize, u64, Planned)> = Vec::new();
    for &k in &config.sweep.codebook_sizes {
        for &d in &config.sweep.code_dims {
            for &seed in &config.sweep.seeds {
                let planned = if config.sweep.matched && k * d != matched_discrete {
                    Planned::Skip(format!(
                        "discrete codebook budget constraint violated: K*D = {} but the matched budget requires 2*Kh*Dh = {matched_discrete}",
                        k * d
                    ))
                } else {
                    match config.single_geometry_with(k, d) {
                        Ok(geometry) => Planned::Run(RunSpec {
                            run_id: ExperimentConfig::run_id(geometry.arch, k, d, seed),
                            geometry,
                            hyper: config.model.hyper,
                            schedule: TrainOptions { seed, ..config.schedule },
                            budget: None,
                        }),
                        Err(e) => Planned::Skip(e.to_string()),
                    }
                };
                plan.push((k, d, seed, planned));
            }
        }
    }
    if plan.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if !plan.iter().any(|(_, _, _, p)| matches!(p, Planned::Run(_))) {
        let reason = plan
            .iter()
            .find_map(|(_, _, _, p)| match p {
                Planned::Skip(r) => Some(r.clone()),
                _ => None,
            })
            .unwrap_or_else(|| "no feasible cells".into());
        return Err(Error::Config(format!("no feasible sweep cells: {reason}")));
    }

    let cells: Vec<SweepCell> = plan
        .par_iter()
        .map(|(k, d, seed, planned)| match planned {
            Planned::Skip(reason) => SweepCell {
                codebook_size: *k,
                code_dim: *d,
                seed: *seed,
                status: "skipped".into(),
                reason: Some(reason.clone()),
                mse: None,
                psnr: None,
                perplexity: None,
                normalized_perplexity: None,
                gini: None,
                dead_resets: None,
            },
            Planned::Run(spec) => match execute_run(spec, &config.corpus, &corpus, out_dir) {
                Ok(artifacts) => {
                    let m = &artifacts.report.metrics;
                    SweepCell {
                        codebook_size: *k,
                        code_dim: *d,
                        seed: *seed,
                        status: "ok".into(),
                        reason: None,
                        mse: Some(m.mse),
                        psnr: Some(m.psnr),
                        perplexity: Some(m.perplexity),
                        normalized_perplexity: Some(m.normalized_perplexity),
                        gini: Some(m.gini),
                        dead_resets: Some(artifacts.report.total_resets),
                    }
                }
                Err(e) => SweepCell {
                    codebook_size: *k,
                    code_dim: *d,
                    seed: *seed,
                    status: "failed".into(),
                    reason: Some(e.to_string()),
                    mse: None,
                    psnr: None,
                    perplexity: None,
                    normalized_perplexity: None,
                    gini: None,
                    dead_resets: None,
                },
            },
        })
        .collect();

    let summary = compute_summary(&cells);
    let result = SweepResult {
        cells,
        summary,
        seeds: config.sweep.seeds.clone(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    write_sweep_csv(&out_dir.join(SWEEP_CSV), &result.cells)?;
    write_json(&out_dir.join(SWEEP_JSON), &result)?;
    Ok(result)
}

/// Seed-mean trend summaries from per-cell results. Pure, so summaries
/// recomputed from the persisted CSV match in-memory values exactly.
pub fn compute_summary(cells: &[SweepCell]) -> SweepSummary {
    let mut dims: Vec<usize> = cells.iter().map(|c| c.code_dim).collect();
    dims.sort_unstable();
    dims.dedup();
    let mut sizes: Vec<usize> = cells.iter().map(|c| c.codebook_size).collect();
    sizes.sort_unstable();
    sizes.dedup();

    let mean_mse = |k: usize, d: usize| -> Option<f64> {
        let values: Vec<f64> = cells
            .iter()
            .filter(|c| c.codebook_size == k && c.code_dim == d && c.status == "ok")
            .filter_map(|c| c.mse)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };

    let mut k_trends = Vec::new();
    for &d in &dims {
        let mut ks = Vec::new();
        let mut mses = Vec::new();
        for &k in &sizes {
            if let Some(m) = mean_mse(k, d) {
                ks.push(k);
                mses.push(m);
            }
        }
        if ks.len() < 2 {
            continue;
        }
        let mut inversions = 0;
        let mut max_rel = 0.0f64;
        for w in mses.windows(2) {
            if w[1] > w[0] {
                inversions += 1;
                if w[0] > 0.0 {
                    max_rel = max_rel.max((w[1] - w[0]) / w[0]);
                }
            }
        }
        k_trends.push(KTrend {
            code_dim: d,
            codebook_sizes: ks,
            mean_mse: mses,
            inversions,
            max_inversion_rel: max_rel,
        });
    }

    let mut d_slices = Vec::new();
    for &k in &sizes {
        let mut ds = Vec::new();
        let mut mses = Vec::new();
        for &d in &dims {
            if let Some(m) = mean_mse(k, d) {
                ds.push(d);
                mses.push(m);
            }
        }
        if ds.len() < 2 {
            continue;
        }
        let best = mses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| ds[i])
            .unwrap();
        let worst = mses
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| ds[i])
            .unwrap();
        d_slices.push(DSlice {
            codebook_size: k,
            code_dims: ds,
            mean_mse: mses,
            best_dim: best,
            worst_dim: worst,
        });
    }

    SweepSummary { k_trends, d_slices }
}

pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for cell in cells {
        out.push_str(&cell.to_csv_row());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepCell>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SWEEP_CSV_HEADER => {}
        other => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("bad sweep header {other:?}"),
            })
        }
    }
    lines.map(SweepCell::parse_csv_row).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(k: usize, d: usize, seed: u64, mse: f64) -> SweepCell {
        SweepCell {
            codebook_size: k,
            code_dim: d,
            seed,
            status: "ok".into(),
            reason: None,
            mse: Some(mse),
            psnr: Some(Psnr::Decibels(10.0 * (1.0 / mse).log10())),
            perplexity: Some(10.0),
            normalized_perplexity: Some(0.5),
            gini: Some(0.2),
            dead_resets: Some(0),
        }
    }

    #[test]
    fn summary_counts_inversions() {
        let cells = vec![
            cell(64, 8, 1, 0.010),
            cell(128, 8, 1, 0.008),
            cell(256, 8, 1, 0.009),
            cell(512, 8, 1, 0.007),
        ];
        let summary = compute_summary(&cells);
        assert_eq!(summary.k_trends.len(), 1);
        let t = &summary.k_trends[0];
        assert_eq!(t.inversions, 1);
        assert!((t.max_inversion_rel - 0.125).abs() < 1e-12);
    }

    #[test]
    fn summary_averages_over_seeds() {
        let cells = vec![cell(64, 8, 1, 0.010), cell(64, 8, 2, 0.020), cell(128, 8, 1, 0.005),
            cell(128, 8, 2, 0.005)];
        let summary = compute_summary(&cells);
        let t = &summary.k_trends[0];
        assert_eq!(t.mean_mse, vec![0.015, 0.005]);
        assert_eq!(t.inversions, 0);
    }

    #[test]
    fn d_slice_finds_best_and_worst() {
        let cells = vec![
            cell(512, 4, 1, 0.008),
            cell(512, 8, 1, 0.007),
            cell(512, 32, 1, 0.012),
            cell(512, 64, 1, 0.030),
        ];
        let summary = compute_summary(&cells);
        let s = &summary.d_slices[0];
        assert_eq!(s.best_dim, 8);
        assert_eq!(s.worst_dim, 64);
    }

    #[test]
    fn sweep_csv_round_trip() {
        let cells = vec![
            cell(64, 8, 1, 0.01),
            SweepCell {
                codebook_size: 64,
                code_dim: 6,
                seed: 1,
                status: "skipped".into(),
                reason: Some("discrete codebook budget constraint violated: K*D = 384".into()),
                mse: None,
                psnr: None,
                perplexity: None,
                normalized_perplexity: None,
                gini: None,
                dead_resets: None,
            },
        ];
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("sweep.csv");
        write_sweep_csv(&path, &cells).unwrap();
        let back = read_sweep_csv(&path).unwrap();
        assert_eq!(back, cells);
        assert_eq!(compute_summary(&back), compute_summary(&cells));
    }
}
