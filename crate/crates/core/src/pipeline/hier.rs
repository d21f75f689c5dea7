//! Two-level hierarchical model: a bottom latent from the image, a top
//! latent from the pooled bottom latent, one codebook per level, and a
//! fused decode of the concatenated quantized levels.

use std::io::{Read, Write};

use ndarray::{s, Array2, Axis};

use crate::codebook::{nearest_assign, AssignmentResult, Codebook, UsageWindow};
use crate::error::{Error, Result};
use crate::grid::{Image, LatentGrid};
use crate::num::Scalar;
use crate::transform::codec::{
    identity_like, read_codec_header, write_codec_header, LossBreakdown,
};
use crate::transform::{
    cosine_basis, downsample_adjoint_cells, downsample_cells, stack_batch_cells, unpatchify,
    upsample_adjoint_cells, upsample_cells,
};
use crate::io::bin::{write_f32, BinReader};

#[derive(Debug, Clone)]
pub struct HierarchicalModel<T> {
    patch_size: usize,
    channels: usize,
    /// `F x C`: cosine-initialized patch analysis (shared encoder trunk).
    analysis: Array2<T>,
    /// `C x C`: learned map applied after 2x average pooling.
    top_encoder: Array2<T>,
    /// `C x D` per level: projections into the quantization space.
    bottom_projection: Array2<T>,
    top_projection: Array2<T>,
    /// `2D x C`: fusion of concatenated quantized levels back to the
    /// latent channel space.
    fusion: Array2<T>,
    /// `C x F`: shared inverse transform path.
    synthesis: Array2<T>,
    bottom_codebook: Codebook<T>,
    top_codebook: Codebook<T>,
    bottom_usage: UsageWindow,
    top_usage: UsageWindow,
    learning_rate: T,
    beta: T,
}

/// Inference output: reconstruction plus per-level latents and assignments.
#[derive(Debug)]
pub struct HierForward<T> {
    pub reconstruction: Image<T>,
    pub bottom_latent: LatentGrid<T>,
    pub top_latent: LatentGrid<T>,
    pub bottom_assignment: AssignmentResult<T>,
    pub top_assignment: AssignmentResult<T>,
}

/// Training-step output per level.
#[derive(Debug)]
pub struct LevelOutcome<T> {
    pub assignment: AssignmentResult<T>,
    pub encoder_outputs: Array2<T>,
}

#[derive(Debug)]
pub struct HierStepOutcome<T> {
    pub losses: LossBreakdown<T>,
    pub bottom: LevelOutcome<T>,
    pub top: LevelOutcome<T>,
}

/// Everything the backward pass needs from a forward pass.
struct Trace<T> {
    images: usize,
    grid_h: usize,
    grid_w: usize,
    cells: Array2<T>,
    bottom_pre: Array2<T>,
    bottom_enc: Array2<T>,
    bottom_assignment: AssignmentResult<T>,
    pooled: Array2<T>,
    top_pre: Array2<T>,
    top_enc: Array2<T>,
    top_assignment: AssignmentResult<T>,
    fused_input: Array2<T>,
    fused_latent: Array2<T>,
    decoded: Array2<T>,
}

struct Gradients<T> {
    analysis: Array2<T>,
    top_encoder: Array2<T>,
    bottom_projection: Array2<T>,
    top_projection: Array2<T>,
    fusion: Array2<T>,
    synthesis: Array2<T>,
    losses: LossBreakdown<T>,
}

impl<T: Scalar> HierarchicalModel<T> {
    /// Standard construction. The analysis is the truncated orthonormal
    /// cosine basis and the synthesis its transpose; projections are
    /// identity-like; the fusion starts as identity on the bottom half and
    /// zero on the top half, so the top path is recruited by training.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        patch_size: usize,
        channels: usize,
        latent_channels: usize,
        code_dim: usize,
        learning_rate: T,
        beta: T,
        bottom_codebook: Codebook<T>,
        top_codebook: Codebook<T>,
        window_len: usize,
        threshold: u64,
    ) -> Result<Self> {
        let f = patch_size * patch_size * channels;
        if latent_channels == 0 || latent_channels > f {
            return Err(Error::Contract(format!(
                "latent channels {latent_channels} must lie in 1..={f}"
            )));
        }
        let basis = cosine_basis::<T>(patch_size, channels);
        let analysis = basis.slice(s![.., ..latent_channels]).to_owned();
        let synthesis = analysis.t().to_owned();
        let mut fusion = Array2::zeros((2 * code_dim, latent_channels));
        fusion
            .slice_mut(s![..code_dim, ..])
            .assign(&identity_like(code_dim, latent_channels));
        Self::from_parts(
            patch_size,
            channels,
            analysis,
            identity_like(latent_channels, latent_channels),
            identity_like(latent_channels, code_dim),
            identity_like(latent_channels, code_dim),
            fusion,
            synthesis,
            learning_rate,
            beta,
            bottom_codebook,
            top_codebook,
            window_len,
            threshold,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        patch_size: usize,
        channels: usize,
        analysis: Array2<T>,
        top_encoder: Array2<T>,
        bottom_projection: Array2<T>,
        top_projection: Array2<T>,
        fusion: Array2<T>,
        synthesis: Array2<T>,
        learning_rate: T,
        beta: T,
        bottom_codebook: Codebook<T>,
        top_codebook: Codebook<T>,
        window_len: usize,
        threshold: u64,
    ) -> Result<Self> {
        let f = patch_size * patch_size * channels;
        let c = analysis.ncols();
        let d = bottom_projection.ncols();
        if analysis.nrows() != f
            || top_encoder.dim() != (c, c)
            || bottom_projection.nrows() != c
            || top_projection.dim() != (c, d)
            || fusion.dim() != (2 * d, c)
            || synthesis.dim() != (c, f)
        {
            return Err(Error::Contract(format!(
                "inconsistent hierarchical shapes: analysis {:?}, top_encoder {:?}, projections {:?}/{:?}, fusion {:?}, synthesis {:?}",
                analysis.dim(),
                top_encoder.dim(),
                bottom_projection.dim(),
                top_projection.dim(),
                fusion.dim(),
                synthesis.dim()
            )));
        }
        // Both level codebooks share the size and the dimension.
        if bottom_codebook.num_codes() != top_codebook.num_codes()
            || bottom_codebook.dim() != top_codebook.dim()
        {
            return Err(Error::Contract(format!(
                "level codebooks must share K and D, got {}x{} and {}x{}",
                bottom_codebook.num_codes(),
                bottom_codebook.dim(),
                top_codebook.num_codes(),
                top_codebook.dim()
            )));
        }
        if bottom_codebook.dim() != d {
            return Err(Error::Contract(format!(
                "codebook D={} does not match projection output {d}",
                bottom_codebook.dim()
            )));
        }
        let k = bottom_codebook.num_codes();
        Ok(Self {
            patch_size,
            channels,
            analysis,
            top_encoder,
            bottom_projection,
            top_projection,
            fusion,
            synthesis,
            bottom_codebook,
            top_codebook,
            bottom_usage: UsageWindow::new(k, window_len, threshold)?,
            top_usage: UsageWindow::new(k, window_len, threshold)?,
            learning_rate,
            beta,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn latent_channels(&self) -> usize {
        self.analysis.ncols()
    }

    pub fn code_dim(&self) -> usize {
        self.bottom_projection.ncols()
    }

    pub fn num_codes(&self) -> usize {
        self.bottom_codebook.num_codes()
    }

    pub fn bottom_codebook(&self) -> &Codebook<T> {
        &self.bottom_codebook
    }

    pub fn top_codebook(&self) -> &Codebook<T> {
        &self.top_codebook
    }

    pub fn fusion(&self) -> &Array2<T> {
        &self.fusion
    }

    pub(crate) fn set_codebooks(&mut self, bottom: Codebook<T>, top: Codebook<T>) -> Result<()> {
        if bottom.num_codes() != self.num_codes()
            || top.num_codes() != self.num_codes()
            || bottom.dim() != self.code_dim()
            || top.dim() != self.code_dim()
        {
            return Err(Error::Contract("replacement codebooks change K or D".into()));
        }
        self.bottom_codebook = bottom;
        self.top_codebook = top;
        Ok(())
    }

    pub(crate) fn usage_mut(&mut self) -> (&mut UsageWindow, &mut UsageWindow) {
        (&mut self.bottom_usage, &mut self.top_usage)
    }

    pub(crate) fn codebooks_mut(&mut self) -> (&mut Codebook<T>, &mut Codebook<T>) {
        (&mut self.bottom_codebook, &mut self.top_codebook)
    }

    fn check_grid(&self, grid_h: usize, grid_w: usize) -> Result<()> {
        if grid_h % 2 != 0 || grid_w % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "bottom grid {grid_h}x{grid_w} must have even dimensions for the 2x top level"
            )));
        }
        Ok(())
    }

    /// Per-level encoder outputs for a set of images, stacked row-wise.
    /// No quantization involved, so this also serves codebook
    /// initialization.
    pub fn encode_levels(&self, images: &[Image<T>]) -> Result<(Array2<T>, Array2<T>)> {
        if images.is_empty() {
            return Err(Error::InvalidInput("no images to encode".into()));
        }
        let (cells, (gh, gw)) = stack_batch_cells(self.patch_size, self.channels, images)?;
        self.check_grid(gh, gw)?;
        let bottom_pre = cells.dot(&self.analysis);
        let bottom_enc = bottom_pre.dot(&self.bottom_projection);
        let pooled = downsample_cells(&bottom_pre, images.len(), gh, gw);
        let top_enc = pooled.dot(&self.top_encoder).dot(&self.top_projection);
        Ok((bottom_enc, top_enc))
    }

    fn trace(&self, batch: &[Image<T>]) -> Result<Trace<T>> {
        let (cells, (gh, gw)) = stack_batch_cells(self.patch_size, self.channels, batch)?;
        self.check_grid(gh, gw)?;
        let images = batch.len();
        let bottom_pre = cells.dot(&self.analysis);
        let bottom_enc = bottom_pre.dot(&self.bottom_projection);
        let pooled = downsample_cells(&bottom_pre, images, gh, gw);
        let top_pre = pooled.dot(&self.top_encoder);
        let top_enc = top_pre.dot(&self.top_projection);
        if bottom_enc.iter().any(|v| !v.is_finite()) || top_enc.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite encoder outputs".into()));
        }
        let bottom_assignment = nearest_assign(bottom_enc.view(), &self.bottom_codebook)?;
        let top_assignment = nearest_assign(top_enc.view(), &self.top_codebook)?;
        let upsampled = upsample_cells(&top_assignment.quantized, images, gh / 2, gw / 2);
        let fused_input = ndarray::concatenate(
            Axis(1),
            &[bottom_assignment.quantized.view(), upsampled.view()],
        )
        .expect("matching row counts");
        let fused_latent = fused_input.dot(&self.fusion);
        let decoded = fused_latent.dot(&self.synthesis);
        Ok(Trace {
            images,
            grid_h: gh,
            grid_w: gw,
            cells,
            bottom_pre,
            bottom_enc,
            bottom_assignment,
            pooled,
            top_pre,
            top_enc,
            top_assignment,
            fused_input,
            fused_latent,
            decoded,
        })
    }

    fn gradients(&self, trace: &Trace<T>) -> Gradients<T> {
        let two = T::from_config(2.0);
        let n_rec = T::from_usize(trace.cells.len()).expect("count fits scalar");
        let n_b = T::from_usize(trace.bottom_enc.len()).expect("count fits scalar");
        let n_t = T::from_usize(trace.top_enc.len()).expect("count fits scalar");
        let d = self.code_dim();

        let residual = &trace.decoded - &trace.cells;
        let reconstruction = residual.iter().fold(T::zero(), |a, &v| a + v * v) / n_rec;
        let bottom_diff = &trace.bottom_enc - &trace.bottom_assignment.quantized;
        let top_diff = &trace.top_enc - &trace.top_assignment.quantized;
        let commitment = self.beta
            * (bottom_diff.iter().fold(T::zero(), |a, &v| a + v * v) / n_b
                + top_diff.iter().fold(T::zero(), |a, &v| a + v * v) / n_t);

        let g_decoded = residual.mapv(|v| two * v / n_rec);
        let g_synthesis = trace.fused_latent.t().dot(&g_decoded);
        let g_fused_latent = g_decoded.dot(&self.synthesis.t());
        let g_fusion = trace.fused_input.t().dot(&g_fused_latent);
        let g_fused_input = g_fused_latent.dot(&self.fusion.t());

        let g_bottom_q = g_fused_input.slice(s![.., ..d]).to_owned();
        let g_up = g_fused_input.slice(s![.., d..]).to_owned();
        let g_top_q =
            upsample_adjoint_cells(&g_up, trace.images, trace.grid_h / 2, trace.grid_w / 2);

        // Straight-through: reconstruction gradients copy through each
        // quantizer; commitment gradients add per level.
        let g_bottom_enc = &g_bottom_q + &bottom_diff.mapv(|v| two * self.beta * v / n_b);
        let g_top_enc = &g_top_q + &top_diff.mapv(|v| two * self.beta * v / n_t);

        let g_bottom_projection = trace.bottom_pre.t().dot(&g_bottom_enc);
        let mut g_bottom_pre = g_bottom_enc.dot(&self.bottom_projection.t());

        let g_top_projection = trace.top_pre.t().dot(&g_top_enc);
        let g_top_pre = g_top_enc.dot(&self.top_projection.t());
        let g_top_encoder = trace.pooled.t().dot(&g_top_pre);
        let g_pooled = g_top_pre.dot(&self.top_encoder.t());
        g_bottom_pre +=
            &downsample_adjoint_cells(&g_pooled, trace.images, trace.grid_h, trace.grid_w);

        let g_analysis = trace.cells.t().dot(&g_bottom_pre);

        Gradients {
            analysis: g_analysis,
            top_encoder: g_top_encoder,
            bottom_projection: g_bottom_projection,
            top_projection: g_top_projection,
            fusion: g_fusion,
            synthesis: g_synthesis,
            losses: LossBreakdown {
                reconstruction,
                commitment,
                total: reconstruction + commitment,
            },
        }
    }

    /// Full inference pass on one image.
    pub fn forward(&self, image: &Image<T>) -> Result<HierForward<T>> {
        let batch = [image.clone()];
        let trace = self.trace(&batch)?;
        let grid = LatentGrid::from_matrix(trace.grid_h, trace.grid_w, &trace.decoded)?;
        let reconstruction = unpatchify(&grid, self.patch_size, self.channels)?;
        Ok(HierForward {
            reconstruction,
            bottom_latent: LatentGrid::from_matrix(trace.grid_h, trace.grid_w, &trace.bottom_enc)?,
            top_latent: LatentGrid::from_matrix(
                trace.grid_h / 2,
                trace.grid_w / 2,
                &trace.top_enc,
            )?,
            bottom_assignment: trace.bottom_assignment,
            top_assignment: trace.top_assignment,
        })
    }

    /// Decode with the top quantized grid zeroed (ablation probe showing
    /// the fusion consumes both levels).
    pub fn forward_without_top(&self, image: &Image<T>) -> Result<Image<T>> {
        let batch = [image.clone()];
        let trace = self.trace(&batch)?;
        let mut fused_input = trace.fused_input.clone();
        fused_input.slice_mut(s![.., self.code_dim()..]).fill(T::zero());
        let decoded = fused_input.dot(&self.fusion).dot(&self.synthesis);
        let grid = LatentGrid::from_matrix(trace.grid_h, trace.grid_w, &decoded)?;
        unpatchify(&grid, self.patch_size, self.channels)
    }

    /// One joint training step: both levels share the reconstruction term,
    /// commitment losses sum, and each codebook takes its own EMA update.
    pub fn train_step(&mut self, batch: &[Image<T>], step: u64) -> Result<HierStepOutcome<T>> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("training batch is empty".into()));
        }
        let trace = match self.trace(batch) {
            Ok(t) => t,
            Err(Error::InvalidInput(m)) if m.contains("non-finite encoder") => {
                return Err(Error::Diverged { step, message: m })
            }
            Err(e) => return Err(e),
        };
        let grads = self.gradients(&trace);
        if !grads.losses.total.is_finite() {
            return Err(Error::Diverged {
                step,
                message: format!(
                    "non-finite loss (reconstruction {}, commitment {})",
                    grads.losses.reconstruction, grads.losses.commitment
                ),
            });
        }
        let lr = self.learning_rate;
        self.analysis.scaled_add(-lr, &grads.analysis);
        self.top_encoder.scaled_add(-lr, &grads.top_encoder);
        self.bottom_projection.scaled_add(-lr, &grads.bottom_projection);
        self.top_projection.scaled_add(-lr, &grads.top_projection);
        self.fusion.scaled_add(-lr, &grads.fusion);
        self.synthesis.scaled_add(-lr, &grads.synthesis);

        self.bottom_codebook
            .ema_update(trace.bottom_enc.view(), &trace.bottom_assignment)?;
        self.top_codebook.ema_update(trace.top_enc.view(), &trace.top_assignment)?;

        Ok(HierStepOutcome {
            losses: grads.losses,
            bottom: LevelOutcome {
                assignment: trace.bottom_assignment,
                encoder_outputs: trace.bottom_enc,
            },
            top: LevelOutcome {
                assignment: trace.top_assignment,
                encoder_outputs: trace.top_enc,
            },
        })
    }

    /// Serialize the codec side (matrices) as a "VQFT" blob; codebooks are
    /// stored separately as "VQFC" blobs.
    pub fn save_codec<W: Write>(&self, w: &mut W) -> Result<()> {
        let mats: [(&str, &Array2<T>); 6] = [
            ("analysis", &self.analysis),
            ("top_encoder", &self.top_encoder),
            ("bottom_projection", &self.bottom_projection),
            ("top_projection", &self.top_projection),
            ("fusion", &self.fusion),
            ("synthesis", &self.synthesis),
        ];
        write_codec_header(w, self.patch_size, self.channels, &mats)?;
        write_f32(w, self.learning_rate.to_f32().expect("lr fits f32"))?;
        write_f32(w, self.beta.to_f32().expect("beta fits f32"))
    }

    /// Restore the codec side; codebooks and window config come from the
    /// container.
    pub fn load_codec<R: Read>(
        r: &mut BinReader<R>,
        bottom_codebook: Codebook<T>,
        top_codebook: Codebook<T>,
        window_len: usize,
        threshold: u64,
    ) -> Result<Self> {
        let (patch_size, channels, mut mats) = read_codec_header(r, 6)?;
        let mut take = |name: &str| -> Result<Array2<T>> {
            let pos = mats
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Parse {
                    offset: 0,
                    message: format!("hierarchical checkpoint missing matrix {name}"),
                })?;
            Ok(mats.remove(pos).1)
        };
        let analysis = take("analysis")?;
        let top_encoder = take("top_encoder")?;
        let bottom_projection = take("bottom_projection")?;
        let top_projection = take("top_projection")?;
        let fusion = take("fusion")?;
        let synthesis = take("synthesis")?;
        let lr = T::from_f32(r.read_f32()?).expect("f32 widens");
        let beta = T::from_f32(r.read_f32()?).expect("f32 widens");
        Self::from_parts(
            patch_size,
            channels,
            analysis,
            top_encoder,
            bottom_projection,
            top_projection,
            fusion,
            synthesis,
            lr,
            beta,
            bottom_codebook,
            top_codebook,
            window_len,
            threshold,
        )
    }
}
