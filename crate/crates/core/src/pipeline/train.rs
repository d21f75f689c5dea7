//! Model construction, the deterministic training loop with usage
//! tracking and dead-code resets, evaluation, and the checkpoint
//! container.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::io::bin::{write_u32, write_u64, BinReader};
use crate::metrics::{
    gini, lorenz, normalized_perplexity, perplexity, LorenzCurve, MetricsRow, Psnr, UsageStats,
};
use crate::num::{subseed, Scalar};
use crate::pipeline::budget::BudgetSpec;
use crate::pipeline::hier::HierarchicalModel;
use crate::pipeline::single::SingleLevelModel;
use crate::transform::LinearCodec;

const CONTAINER_MAGIC: &[u8; 4] = b"VQFM";
const CONTAINER_VERSION: u32 = 1;

/// Random-stream labels derived from the run seed.
mod stream {
    pub const BATCH: u64 = 1;
    pub const RESET: u64 = 2;
    pub const CODEBOOK_BOTTOM: u64 = 3;
    pub const CODEBOOK_TOP: u64 = 4;
    pub const INIT_SAMPLES: u64 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Single,
    Hier,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::Single => write!(f, "single"),
            Arch::Hier => write!(f, "hier"),
        }
    }
}

/// EMA and optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub decay: f64,
    pub smoothing_eps: f64,
    pub beta: f64,
    pub learning_rate: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            decay: crate::codebook::DEFAULT_DECAY,
            smoothing_eps: crate::codebook::DEFAULT_SMOOTHING_EPS,
            beta: 0.25,
            learning_rate: 3e-4,
        }
    }
}

/// Schedule plus intervention toggles for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Initialize codebooks from encoder outputs on random training
    /// samples (off: standard-normal entries).
    pub data_init: bool,
    /// Periodically reset codes whose windowed usage falls below the
    /// threshold.
    pub dead_code_reset: bool,
    pub window_len: usize,
    pub threshold: u64,
    pub reset_sample_size: usize,
    /// Collapse fixture: start every code at the corpus latent mean
    /// (overrides `data_init`).
    pub adversarial_init: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            seed: 17,
            data_init: true,
            dead_code_reset: true,
            window_len: 10,
            threshold: 2,
            reset_sample_size: crate::codebook::DEFAULT_RESET_SAMPLE_SIZE,
            adversarial_init: false,
        }
    }
}

/// Resolved structural parameters of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGeometry {
    pub arch: Arch,
    pub patch_size: usize,
    pub channels: usize,
    /// Latent channels at the quantizer input (per level for `hier`).
    pub latent_channels: usize,
    /// Codebook size (per level for `hier`).
    pub codebook_size: usize,
    pub code_dim: usize,
}

/// Either architecture behind one training/evaluation interface.
#[derive(Debug, Clone)]
pub enum Model<T> {
    Single(SingleLevelModel<T>),
    Hier(HierarchicalModel<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub reconstruction: f64,
    pub commitment: f64,
    pub total: f64,
    /// Batch-assignment perplexity per level.
    pub perplexities: Vec<f64>,
    pub resets: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetEvent {
    pub step: u64,
    pub level: usize,
    pub codes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainReport {
    pub steps: u64,
    pub history: Vec<StepRecord>,
    pub reset_events: Vec<ResetEvent>,
}

impl TrainReport {
    /// Moving average of the total loss over a trailing window, evaluated
    /// at a step (1-based step counts).
    pub fn smoothed_total(&self, at_step: u64, window: u64) -> Option<f64> {
        let end = self.history.iter().position(|r| r.step + 1 == at_step.max(1))?;
        let start = end.saturating_sub(window as usize - 1);
        let slice = &self.history[start..=end];
        Some(slice.iter().map(|r| r.total).sum::<f64>() / slice.len() as f64)
    }
}

/// Per-level utilization on the evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEval {
    pub perplexity: f64,
    pub normalized_perplexity: f64,
    pub gini: f64,
    pub dead_codes: u64,
    #[serde(skip)]
    pub lorenz: LorenzCurve,
}

impl Default for LorenzCurve {
    fn default() -> Self {
        Self { points: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub psnr: Psnr,
    /// Mean over levels.
    pub perplexity: f64,
    pub normalized_perplexity: f64,
    pub gini: f64,
    /// Codes with zero assignments, summed over levels.
    pub dead_code_count: u64,
    pub levels: Vec<LevelEval>,
}

impl EvalReport {
    pub fn metrics_row(&self, run_id: &str, step: u64) -> MetricsRow {
        MetricsRow {
            run_id: run_id.to_string(),
            step,
            mse: self.mse,
            psnr: self.psnr,
            perplexity: self.perplexity,
            normalized_perplexity: self.normalized_perplexity,
            gini: self.gini,
            dead_code_count: self.dead_code_count,
        }
    }
}

/// Manifest stored inside the checkpoint container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub geometry: ModelGeometry,
    pub hyper: Hyper,
    pub schedule: TrainOptions,
    pub seed: u64,
    pub budget: Option<BudgetSpec>,
}

impl<T: Scalar> Model<T> {
    /// Build a model with its codebooks initialized per the options,
    /// using encoder outputs over the corpus where required.
    pub fn build(
        geometry: ModelGeometry,
        hyper: Hyper,
        opts: &TrainOptions,
        corpus: &[Image<T>],
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("corpus is empty".into()));
        }
        let lr = T::from_config(hyper.learning_rate);
        let beta = T::from_config(hyper.beta);
        let decay = T::from_config(hyper.decay);
        let eps = T::from_config(hyper.smoothing_eps);
        let k = geometry.codebook_size;
        let d = geometry.code_dim;

        let init_images = pick_init_images(geometry, opts, corpus);
        match geometry.arch {
            Arch::Single => {
                let codec = LinearCodec::new(
                    geometry.patch_size,
                    geometry.channels,
                    geometry.latent_channels,
                    d,
                    lr,
                    beta,
                )?;
                let rows = SingleLevelModel::encode_corpus_rows(&codec, &init_images)?;
                let codebook = init_codebook(
                    rows.view().to_owned(),
                    k,
                    decay,
                    eps,
                    opts,
                    subseed(opts.seed, stream::CODEBOOK_BOTTOM),
                )?;
                Ok(Model::Single(SingleLevelModel::new(
                    codec,
                    codebook,
                    opts.window_len,
                    opts.threshold,
                )?))
            }
            Arch::Hier => {
                let dummy = Codebook::new(Array2::zeros((k, d)), decay, eps)?;
                let mut model = HierarchicalModel::new(
                    geometry.patch_size,
                    geometry.channels,
                    geometry.latent_channels,
                    d,
                    lr,
                    beta,
                    dummy.clone(),
                    dummy,
                    opts.window_len,
                    opts.threshold,
                )?;
                let (bottom_rows, top_rows) = model.encode_levels(&init_images)?;
                let bottom = init_codebook(
                    bottom_rows,
                    k,
                    decay,
                    eps,
                    opts,
                    subseed(opts.seed, stream::CODEBOOK_BOTTOM),
                )?;
                let top = init_codebook(
                    top_rows,
                    k,
                    decay,
                    eps,
                    opts,
                    subseed(opts.seed, stream::CODEBOOK_TOP),
                )?;
                model.set_codebooks(bottom, top)?;
                Ok(Model::Hier(model))
            }
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            Model::Single(_) => Arch::Single,
            Model::Hier(_) => Arch::Hier,
        }
    }

    pub fn num_levels(&self) -> usize {
        match self {
            Model::Single(_) => 1,
            Model::Hier(_) => 2,
        }
    }

    pub fn num_codes(&self) -> usize {
        match self {
            Model::Single(m) => m.num_codes(),
            Model::Hier(m) => m.num_codes(),
        }
    }

    pub fn geometry(&self) -> ModelGeometry {
        match self {
            Model::Single(m) => ModelGeometry {
                arch: Arch::Single,
                patch_size: m.codec().patch_size(),
                channels: m.codec().channels(),
                latent_channels: m.codec().latent_channels(),
                codebook_size: m.num_codes(),
                code_dim: m.codec().code_dim(),
            },
            Model::Hier(m) => ModelGeometry {
                arch: Arch::Hier,
                patch_size: m.patch_size(),
                channels: m.channels(),
                latent_channels: m.latent_channels(),
                codebook_size: m.num_codes(),
                code_dim: m.code_dim(),
            },
        }
    }

    /// Reconstruct one image (inference).
    pub fn reconstruct(&self, image: &Image<T>) -> Result<Image<T>> {
        match self {
            Model::Single(m) => Ok(m.forward(image)?.0),
            Model::Hier(m) => Ok(m.forward(image)?.reconstruction),
        }
    }

    /// Deterministic training loop: per-step straight-through update plus
    /// usage tracking; dead-code detection and reset when enabled (the
    /// affected level's window restarts after a reset batch).
    pub fn train(&mut self, corpus: &[Image<T>], opts: &TrainOptions) -> Result<TrainReport> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("corpus is empty".into()));
        }
        let mut batch_rng = ChaCha8Rng::seed_from_u64(subseed(opts.seed, stream::BATCH));
        let mut reset_rng = ChaCha8Rng::seed_from_u64(subseed(opts.seed, stream::RESET));
        let mut report = TrainReport { steps: opts.steps, ..Default::default() };
        for step in 0..opts.steps {
            let batch: Vec<Image<T>> = (0..opts.batch_size)
                .map(|_| corpus[batch_rng.random_range(0..corpus.len())].clone())
                .collect();
            let record = self.train_one(step, &batch, opts, &mut reset_rng, &mut report)?;
            report.history.push(record);
        }
        Ok(report)
    }

    fn train_one(
        &mut self,
        step: u64,
        batch: &[Image<T>],
        opts: &TrainOptions,
        reset_rng: &mut ChaCha8Rng,
        report: &mut TrainReport,
    ) -> Result<StepRecord> {
        let mut perplexities = Vec::new();
        let mut resets = 0u64;
        let losses = match self {
            Model::Single(model) => {
                let outcome = model.train_step(batch, step)?;
                let counts = model.batch_counts(&outcome);
                perplexities.push(perplexity(&UsageStats::new(counts.clone()))?);
                let (_, codebook, usage) = model.parts_mut();
                usage.push(counts)?;
                if opts.dead_code_reset {
                    let dead = usage.detect_dead()?;
                    if !dead.is_empty() {
                        codebook.reset_dead_codes(
                            &dead,
                            outcome.encoder_outputs.view(),
                            opts.reset_sample_size,
                            reset_rng.next_u64(),
                        )?;
                        usage.clear();
                        resets += dead.len() as u64;
                        report.reset_events.push(ResetEvent { step, level: 0, codes: dead });
                    }
                }
                outcome.losses
            }
            Model::Hier(model) => {
                let outcome = model.train_step(batch, step)?;
                let k = model.num_codes();
                let bottom_counts = outcome.bottom.assignment.counts(k);
                let top_counts = outcome.top.assignment.counts(k);
                perplexities.push(perplexity(&UsageStats::new(bottom_counts.clone()))?);
                perplexities.push(perplexity(&UsageStats::new(top_counts.clone()))?);
                {
                    let (bottom_usage, top_usage) = model.usage_mut();
                    bottom_usage.push(bottom_counts)?;
                    top_usage.push(top_counts)?;
                }
                if opts.dead_code_reset {
                    for (level, level_outcome) in
                        [(0usize, &outcome.bottom), (1usize, &outcome.top)]
                    {
                        let dead = {
                            let (bottom_usage, top_usage) = model.usage_mut();
                            let usage = if level == 0 { bottom_usage } else { top_usage };
                            usage.detect_dead()?
                        };
                        if dead.is_empty() {
                            continue;
                        }
                        let seed = reset_rng.next_u64();
                        {
                            let (bottom_cb, top_cb) = model.codebooks_mut();
                            let codebook = if level == 0 { bottom_cb } else { top_cb };
                            codebook.reset_dead_codes(
                                &dead,
                                level_outcome.encoder_outputs.view(),
                                opts.reset_sample_size,
                                seed,
                            )?;
                        }
                        let (bottom_usage, top_usage) = model.usage_mut();
                        let usage = if level == 0 { bottom_usage } else { top_usage };
                        usage.clear();
                        resets += dead.len() as u64;
                        report.reset_events.push(ResetEvent { step, level, codes: dead });
                    }
                }
                outcome.losses
            }
        };
        Ok(StepRecord {
            step,
            reconstruction: losses.reconstruction.to_report(),
            commitment: losses.commitment.to_report(),
            total: losses.total.to_report(),
            perplexities,
            resets,
        })
    }

    /// Evaluate reconstruction and utilization over a corpus.
    pub fn evaluate(&self, corpus: &[Image<T>]) -> Result<EvalReport> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("evaluation corpus is empty".into()));
        }
        let k = self.num_codes();
        let mut level_counts = vec![vec![0u64; k]; self.num_levels()];
        let mut total_mse = 0.0f64;
        for image in corpus {
            match self {
                Model::Single(m) => {
                    let (recon, _, assignment) = m.forward(image)?;
                    total_mse += crate::metrics::mse(image, &recon)?.to_report();
                    for &idx in &assignment.indices {
                        level_counts[0][idx] += 1;
                    }
                }
                Model::Hier(m) => {
                    let fwd = m.forward(image)?;
                    total_mse += crate::metrics::mse(image, &fwd.reconstruction)?.to_report();
                    for &idx in &fwd.bottom_assignment.indices {
                        level_counts[0][idx] += 1;
                    }
                    for &idx in &fwd.top_assignment.indices {
                        level_counts[1][idx] += 1;
                    }
                }
            }
        }
        let mse = total_mse / corpus.len() as f64;
        let mut levels = Vec::new();
        for counts in level_counts {
            let stats = UsageStats::new(counts);
            levels.push(LevelEval {
                perplexity: perplexity(&stats)?,
                normalized_perplexity: normalized_perplexity(&stats)?,
                gini: gini(&stats)?,
                dead_codes: stats.unused(),
                lorenz: lorenz(&stats)?,
            });
        }
        let n = levels.len() as f64;
        Ok(EvalReport {
            mse,
            psnr: Psnr::from_mse(mse),
            perplexity: levels.iter().map(|l| l.perplexity).sum::<f64>() / n,
            normalized_perplexity: levels.iter().map(|l| l.normalized_perplexity).sum::<f64>()
                / n,
            gini: levels.iter().map(|l| l.gini).sum::<f64>() / n,
            dead_code_count: levels.iter().map(|l| l.dead_codes).sum(),
            levels,
        })
    }

    /// Write the checkpoint container: magic "VQFM", a JSON manifest, then
    /// named codec ("VQFT") and codebook ("VQFC") blobs.
    pub fn save<W: Write>(&self, manifest: &ModelManifest, w: &mut W) -> Result<()> {
        w.write_all(CONTAINER_MAGIC)?;
        write_u32(w, CONTAINER_VERSION)?;
        let manifest_json = serde_json::to_vec(manifest)
            .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
        write_u64(w, manifest_json.len() as u64)?;
        w.write_all(&manifest_json)?;
        let blobs: Vec<(&str, Vec<u8>)> = match self {
            Model::Single(m) => {
                let mut codec = Vec::new();
                m.codec().save(&mut codec)?;
                let mut codebook = Vec::new();
                m.codebook().save(&mut codebook)?;
                vec![("codec", codec), ("codebook", codebook)]
            }
            Model::Hier(m) => {
                let mut codec = Vec::new();
                m.save_codec(&mut codec)?;
                let mut bottom = Vec::new();
                m.bottom_codebook().save(&mut bottom)?;
                let mut top = Vec::new();
                m.top_codebook().save(&mut top)?;
                vec![("codec", codec), ("codebook_bottom", bottom), ("codebook_top", top)]
            }
        };
        write_u64(w, blobs.len() as u64)?;
        for (name, bytes) in blobs {
            write_u64(w, name.len() as u64)?;
            w.write_all(name.as_bytes())?;
            write_u64(w, bytes.len() as u64)?;
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn save_file(&self, manifest: &ModelManifest, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.save(manifest, &mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load<R: Read>(r: &mut BinReader<R>) -> Result<(Self, ModelManifest)> {
        r.expect_magic(CONTAINER_MAGIC)?;
        let version = r.read_u32()?;
        if version != CONTAINER_VERSION {
            return Err(r.fail(format!("unsupported container version {version}")));
        }
        let manifest_len = r.read_dim("manifest length")?;
        if manifest_len > (1 << 24) {
            return Err(r.fail("manifest too large"));
        }
        let mut manifest_bytes = vec![0u8; manifest_len];
        r.read_bytes(&mut manifest_bytes)?;
        let manifest: ModelManifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| r.fail(format!("bad manifest JSON: {e}")))?;
        let blob_count = r.read_dim("blob count")?;
        if blob_count > 16 {
            return Err(r.fail(format!("blob count {blob_count} too large")));
        }
        let mut blobs: Vec<(String, Vec<u8>)> = Vec::with_capacity(blob_count);
        for _ in 0..blob_count {
            let name_len = r.read_dim("blob name length")?;
            if name_len > 64 {
                return Err(r.fail("blob name too long"));
            }
            let mut name = vec![0u8; name_len];
            r.read_bytes(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| r.fail("blob name not utf-8"))?;
            let len = r.read_dim("blob length")?;
            if len > (1 << 32) {
                return Err(r.fail("blob too large"));
            }
            let mut bytes = vec![0u8; len];
            r.read_bytes(&mut bytes)?;
            blobs.push((name, bytes));
        }
        let mut take = |name: &str| -> Result<Vec<u8>> {
            let pos = blobs
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Parse {
                    offset: 0,
                    message: format!("container missing blob {name}"),
                })?;
            Ok(blobs.remove(pos).1)
        };
        let schedule = manifest.schedule;
        let model = match manifest.geometry.arch {
            Arch::Single => {
                let codec_bytes = take("codec")?;
                let codebook_bytes = take("codebook")?;
                let codec = LinearCodec::load(&mut BinReader::new(&codec_bytes[..]))?;
                let codebook = Codebook::load(&mut BinReader::new(&codebook_bytes[..]))?;
                Model::Single(SingleLevelModel::from_parts(
                    codec,
                    codebook,
                    schedule.window_len,
                    schedule.threshold,
                )?)
            }
            Arch::Hier => {
                let codec_bytes = take("codec")?;
                let bottom = Codebook::load(&mut BinReader::new(&take("codebook_bottom")?[..]))?;
                let top = Codebook::load(&mut BinReader::new(&take("codebook_top")?[..]))?;
                Model::Hier(HierarchicalModel::load_codec(
                    &mut BinReader::new(&codec_bytes[..]),
                    bottom,
                    top,
                    schedule.window_len,
                    schedule.threshold,
                )?)
            }
        };
        Ok((model, manifest))
    }

    pub fn load_file(path: &Path) -> Result<(Self, ModelManifest)> {
        let file = std::fs::File::open(path)?;
        let mut r = BinReader::new(std::io::BufReader::new(file));
        let out = Self::load(&mut r)?;
        r.expect_eof()?;
        Ok(out)
    }
}

/// Random subset of corpus images used for data-driven initialization:
/// enough to cover the codebook size, at least 64, at most the corpus.
fn pick_init_images<T: Scalar>(
    geometry: ModelGeometry,
    opts: &TrainOptions,
    corpus: &[Image<T>],
) -> Vec<Image<T>> {
    let cells = (corpus[0].height() / geometry.patch_size.max(1)).max(1)
        * (corpus[0].width() / geometry.patch_size.max(1)).max(1);
    let needed = geometry.codebook_size.div_ceil(cells).max(64).min(corpus.len());
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(opts.seed, stream::INIT_SAMPLES));
    rand::seq::index::sample(&mut rng, corpus.len(), needed)
        .iter()
        .map(|i| corpus[i].clone())
        .collect()
}

/// Build one level's codebook per the configured initialization mode.
fn init_codebook<T: Scalar>(
    rows: Array2<T>,
    k: usize,
    decay: T,
    eps: T,
    opts: &TrainOptions,
    seed: u64,
) -> Result<Codebook<T>> {
    if opts.adversarial_init {
        // Every code at the corpus latent mean: guaranteed collapse.
        let n = T::from_usize(rows.nrows()).expect("row count fits scalar");
        let mean = rows.sum_axis(Axis(0)).mapv(|v| v / n);
        let mut entries = Array2::zeros((k, rows.ncols()));
        for mut row in entries.rows_mut() {
            row.assign(&mean);
        }
        return Codebook::new(entries, decay, eps);
    }
    if opts.data_init {
        return Codebook::init_from_samples(rows.view(), k, decay, eps, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = Array2::from_shape_fn((k, rows.ncols()), |_| {
        T::from_config(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
    });
    Codebook::new(entries, decay, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic::{gen_synthetic, SyntheticKind};

    fn small_corpus() -> Vec<Image<f32>> {
        let mut corpus =
            gen_synthetic(SyntheticKind::GaussianField { correlation: 4.0 }, 24, 16, 16, 1, 5)
                .unwrap();
        corpus.extend(
            gen_synthetic(SyntheticKind::Checkerboard { period: 4 }, 8, 16, 16, 1, 6).unwrap(),
        );
        corpus
    }

    fn small_geometry(arch: Arch) -> ModelGeometry {
        ModelGeometry {
            arch,
            patch_size: 4,
            channels: 1,
            latent_channels: 8,
            codebook_size: 32,
            code_dim: 4,
        }
    }

    fn quick_opts() -> TrainOptions {
        TrainOptions { steps: 30, batch_size: 8, ..Default::default() }
    }

    #[test]
    fn zero_steps_leaves_model_unchanged() {
        let corpus = small_corpus();
        let opts = TrainOptions { steps: 0, ..quick_opts() };
        let mut model =
            Model::build(small_geometry(Arch::Single), Hyper::default(), &opts, &corpus).unwrap();
        let manifest = manifest_for(&model, &opts);
        let mut before = Vec::new();
        model.save(&manifest, &mut before).unwrap();
        let report = model.train(&corpus, &opts).unwrap();
        assert!(report.history.is_empty());
        let mut after = Vec::new();
        model.save(&manifest, &mut after).unwrap();
        assert_eq!(before, after);
    }

    fn manifest_for(model: &Model<f32>, opts: &TrainOptions) -> ModelManifest {
        ModelManifest {
            format_version: CONTAINER_VERSION,
            geometry: model.geometry(),
            hyper: Hyper::default(),
            schedule: *opts,
            seed: opts.seed,
            budget: None,
        }
    }

    #[test]
    fn identical_seeds_give_bit_identical_reports_and_checkpoints() {
        let corpus = small_corpus();
        let opts = quick_opts();
        for arch in [Arch::Single, Arch::Hier] {
            let geometry = small_geometry(arch);
            let run = || {
                let mut model =
                    Model::build(geometry, Hyper::default(), &opts, &corpus).unwrap();
                let report = model.train(&corpus, &opts).unwrap();
                let mut bytes = Vec::new();
                model.save(&manifest_for(&model, &opts), &mut bytes).unwrap();
                (report, bytes)
            };
            let (r1, b1) = run();
            let (r2, b2) = run();
            assert_eq!(r1, r2, "{arch} reports differ");
            assert_eq!(b1, b2, "{arch} checkpoints differ");
        }
    }

    #[test]
    fn adversarial_init_without_resets_stays_collapsed() {
        let corpus = small_corpus();
        let opts = TrainOptions {
            adversarial_init: true,
            dead_code_reset: false,
            ..quick_opts()
        };
        let mut model =
            Model::build(small_geometry(Arch::Single), Hyper::default(), &opts, &corpus).unwrap();
        model.train(&corpus, &opts).unwrap();
        let eval = model.evaluate(&corpus).unwrap();
        assert!(eval.perplexity < 1.0 + 1e-9, "collapsed run should stay at one code");

        let opts_on = TrainOptions { dead_code_reset: true, ..opts };
        let mut model_on =
            Model::build(small_geometry(Arch::Single), Hyper::default(), &opts_on, &corpus)
                .unwrap();
        let report = model_on.train(&corpus, &opts_on).unwrap();
        assert!(!report.reset_events.is_empty(), "resets should fire");
        let eval_on = model_on.evaluate(&corpus).unwrap();
        assert!(
            eval_on.perplexity > eval.perplexity,
            "resets should raise perplexity: {} vs {}",
            eval_on.perplexity,
            eval.perplexity
        );
        assert!(eval_on.mse < eval.mse, "resets should lower mse");
    }

    #[test]
    fn container_round_trip_preserves_model() {
        let corpus = small_corpus();
        let opts = quick_opts();
        for arch in [Arch::Single, Arch::Hier] {
            let mut model =
                Model::build(small_geometry(arch), Hyper::default(), &opts, &corpus).unwrap();
            model.train(&corpus, &opts).unwrap();
            let manifest = manifest_for(&model, &opts);
            let mut bytes = Vec::new();
            model.save(&manifest, &mut bytes).unwrap();
            let (loaded, manifest2) = Model::load(&mut BinReader::new(&bytes[..])).unwrap();
            assert_eq!(manifest, manifest2);
            let mut bytes2 = Vec::new();
            loaded.save(&manifest2, &mut bytes2).unwrap();
            assert_eq!(bytes, bytes2, "container round-trip not byte-exact");
            // Loaded model reconstructs identically.
            let a = model.reconstruct(&corpus[0]).unwrap();
            let b = loaded.reconstruct(&corpus[0]).unwrap();
            assert_eq!(a.pixels(), b.pixels());
        }
    }
}
