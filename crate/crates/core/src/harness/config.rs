//! Experiment configuration: corpus recipe, model geometry, schedule,
//! and sweep ranges. Serializable to JSON and fully defaulted for
//! desk-scale runs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::io::synthetic::{gen_synthetic, SyntheticKind};
use crate::num::Scalar;
use crate::pipeline::{
    match_budget, Arch, BudgetSpec, HierBudget, Hyper, ModelGeometry, TrainOptions,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arch: Arch,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub schedule: TrainOptions,
    pub sweep: SweepConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Single,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            schedule: TrainOptions::default(),
            sweep: SweepConfig::default(),
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Corpus generation seed, independent of the run seed so every arm
    /// of a comparison sees the same data.
    pub seed: u64,
    pub items: Vec<CorpusItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub count: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            channels: 1,
            seed: 1234,
            items: vec![
                CorpusItem { kind: SyntheticKind::GaussianField { correlation: 4.0 }, count: 96 },
                CorpusItem { kind: SyntheticKind::GaussianField { correlation: 16.0 }, count: 96 },
                CorpusItem { kind: SyntheticKind::Checkerboard { period: 8 }, count: 32 },
                CorpusItem { kind: SyntheticKind::Edges, count: 32 },
            ],
        }
    }
}

impl CorpusConfig {
    pub fn total_count(&self) -> usize {
        self.items.iter().map(|i| i.count).sum()
    }

    /// Generate the corpus; each item stream gets a sub-seed derived from
    /// the corpus seed and its position.
    pub fn build<T: Scalar>(&self) -> Result<Vec<Image<T>>> {
        if self.total_count() == 0 {
            return Err(Error::Config("corpus has zero images".into()));
        }
        let mut corpus = Vec::with_capacity(self.total_count());
        for (i, item) in self.items.iter().enumerate() {
            corpus.extend(gen_synthetic::<T>(
                item.kind,
                item.count,
                self.height,
                self.width,
                self.channels,
                crate::num::subseed(self.seed, i as u64),
            )?);
        }
        Ok(corpus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_size: usize,
    /// Per-level latent channels of the hierarchical reference model; the
    /// single-level channel count is derived from the continuous-budget
    /// match.
    pub hier_latent_channels: usize,
    /// Per-level codebook size of the hierarchical reference model; the
    /// single-level codebook is derived from the discrete-budget match.
    pub hier_codebook_size: usize,
    /// Code dimension, shared by both architectures.
    pub code_dim: usize,
    pub hyper: Hyper,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            hier_latent_channels: 32,
            hier_codebook_size: 128,
            code_dim: 8,
            hyper: Hyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub codebook_sizes: Vec<usize>,
    pub code_dims: Vec<usize>,
    /// Seeds for multi-seed protocols (sweep, ablation, matched runs).
    pub seeds: Vec<u64>,
    /// When on, only cells satisfying the discrete-budget constraint
    /// against the hierarchical reference are run.
    pub matched: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            codebook_sizes: vec![64, 128, 256, 512],
            code_dims: vec![4, 8, 32, 64],
            seeds: vec![17, 43, 91],
            matched: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(format!("bad config JSON: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_json(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Grid dimensions of the bottom/single latent map.
    pub fn grid_dims(&self) -> Result<(usize, usize)> {
        let p = self.model.patch_size;
        if p == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        if self.corpus.height % p != 0 || self.corpus.width % p != 0 {
            return Err(Error::Config(format!(
                "corpus images {}x{} are not divisible by patch size {p}",
                self.corpus.height, self.corpus.width
            )));
        }
        Ok((self.corpus.height / p, self.corpus.width / p))
    }

    /// The hierarchical reference budget implied by the config.
    pub fn hier_budget(&self) -> Result<HierBudget> {
        let (gh, gw) = self.grid_dims()?;
        if gh % 2 != 0 || gw % 2 != 0 {
            return Err(Error::Config(format!(
                "latent grid {gh}x{gw} must have even dimensions for the two-level model"
            )));
        }
        Ok(HierBudget {
            bottom_h: gh,
            bottom_w: gw,
            top_h: gh / 2,
            top_w: gw / 2,
            latent_channels: self.model.hier_latent_channels,
            codebook_size: self.model.hier_codebook_size,
            code_dim: self.model.code_dim,
        })
    }

    /// The capacity-matched budget pair for this config.
    pub fn matched_spec(&self) -> Result<BudgetSpec> {
        match_budget(self.hier_budget()?, self.model.code_dim)
    }

    /// Matched model geometry for one architecture.
    pub fn geometry(&self, arch: Arch) -> Result<ModelGeometry> {
        let spec = self.matched_spec()?;
        let geometry = match arch {
            Arch::Single => ModelGeometry {
                arch,
                patch_size: self.model.patch_size,
                channels: self.corpus.channels,
                latent_channels: spec.single.latent_channels,
                codebook_size: spec.single.codebook_size,
                code_dim: spec.single.code_dim,
            },
            Arch::Hier => ModelGeometry {
                arch,
                patch_size: self.model.patch_size,
                channels: self.corpus.channels,
                latent_channels: spec.hier.latent_channels,
                codebook_size: spec.hier.codebook_size,
                code_dim: spec.hier.code_dim,
            },
        };
        self.check_latent_capacity(geometry.latent_channels)?;
        Ok(geometry)
    }

    /// Single-level geometry for a sweep cell with an explicit codebook:
    /// the continuous side stays at the matched channel count, only the
    /// discrete side varies.
    pub fn single_geometry_with(&self, codebook_size: usize, code_dim: usize) -> Result<ModelGeometry> {
        let spec = self.matched_spec()?;
        if codebook_size == 0 || code_dim == 0 {
            return Err(Error::Config("codebook size and code dimension must be positive".into()));
        }
        self.check_latent_capacity(spec.single.latent_channels)?;
        Ok(ModelGeometry {
            arch: Arch::Single,
            patch_size: self.model.patch_size,
            channels: self.corpus.channels,
            latent_channels: spec.single.latent_channels,
            codebook_size,
            code_dim,
        })
    }

    fn check_latent_capacity(&self, latent_channels: usize) -> Result<()> {
        let f = self.model.patch_size * self.model.patch_size * self.corpus.channels;
        if latent_channels > f {
            return Err(Error::Config(format!(
                "latent channels {latent_channels} exceed the patch dimension {f} (patch {} x {} channels)",
                self.model.patch_size, self.corpus.channels
            )));
        }
        Ok(())
    }

    /// Full validation before any run.
    pub fn validate(&self) -> Result<()> {
        if self.corpus.channels != 1 && self.corpus.channels != 3 {
            return Err(Error::Config(format!(
                "corpus channels must be 1 or 3, got {}",
                self.corpus.channels
            )));
        }
        if self.corpus.total_count() == 0 {
            return Err(Error::Config("corpus has zero images".into()));
        }
        if self.schedule.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.schedule.window_len == 0 {
            return Err(Error::Config("usage window length must be positive".into()));
        }
        if self.sweep.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        self.geometry(Arch::Single)?;
        self.geometry(Arch::Hier)?;
        Ok(())
    }

    /// Stable run identifier for one arm.
    pub fn run_id(arch: Arch, codebook_size: usize, code_dim: usize, seed: u64) -> String {
        format!("{arch}_k{codebook_size}_d{code_dim}_s{seed}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_matched() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let spec = cfg.matched_spec().unwrap();
        // 8x8 grid, C_h = 32 over bottom 8x8 + top 4x4 gives C_s = 40.
        assert_eq!(spec.single.latent_channels, 40);
        assert_eq!(spec.single.codebook_size, 256);
        assert_eq!(spec.single.code_dim, 8);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig::default();
        let json = cfg.to_json();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ExperimentConfig::from_json("{\"bogus\": 1}").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn indivisible_patch_size_is_a_config_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.patch_size = 7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn corpus_build_is_deterministic() {
        let cfg = CorpusConfig { items: vec![
            CorpusItem { kind: SyntheticKind::Edges, count: 3 },
        ], width: 16, height: 16, ..Default::default() };
        let a: Vec<Image<f32>> = cfg.build().unwrap();
        let b: Vec<Image<f32>> = cfg.build().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }
}
