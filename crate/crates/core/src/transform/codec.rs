//! Learned linear patch codec and its straight-through training step.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::codebook::{mean_sq_diff, nearest_assign, AssignmentResult, Codebook};
use crate::error::{Error, Result};
use crate::grid::{Image, LatentGrid};
use crate::io::bin::{write_f32, write_u32, write_u64, BinReader};
use crate::io::blob::{read_blob, write_blob};
use crate::num::Scalar;
use crate::transform::{dct, patchify, unpatchify};

const CODEC_MAGIC: &[u8; 4] = b"VQFT";
const CODEC_VERSION: u32 = 1;

/// Patchifier plus learned linear maps standing in for a deep
/// encoder/decoder pair.
///
/// Encode: flatten patches, apply the analysis matrix (cosine-initialized,
/// `F x C`), then the projection into the quantization space (`C x D`).
/// Decode runs the mirror path. All four matrices are trained by plain
/// gradient descent with exact analytic gradients; the quantizer between
/// projection and unprojection is handled by the straight-through
/// estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCodec<T> {
    patch_size: usize,
    channels: usize,
    analysis: Array2<T>,
    synthesis: Array2<T>,
    projection: Array2<T>,
    unprojection: Array2<T>,
    learning_rate: T,
    beta: T,
}

impl<T: Scalar> LinearCodec<T> {
    /// Standard construction: truncated orthonormal cosine analysis,
    /// transposed synthesis, identity-like projections.
    pub fn new(
        patch_size: usize,
        channels: usize,
        latent_channels: usize,
        code_dim: usize,
        learning_rate: T,
        beta: T,
    ) -> Result<Self> {
        let f = patch_size * patch_size * channels;
        if latent_channels == 0 || latent_channels > f {
            return Err(Error::Contract(format!(
                "latent channels {latent_channels} must lie in 1..={f} for patch {patch_size} x {channels} channels"
            )));
        }
        if code_dim == 0 {
            return Err(Error::Contract("code dimension must be positive".into()));
        }
        let basis = dct::cosine_basis::<T>(patch_size, channels);
        let analysis = basis.slice(ndarray::s![.., ..latent_channels]).to_owned();
        let synthesis = analysis.t().to_owned();
        let projection = identity_like(latent_channels, code_dim);
        let unprojection = identity_like(code_dim, latent_channels);
        Self::from_parts(
            patch_size,
            channels,
            analysis,
            synthesis,
            projection,
            unprojection,
            learning_rate,
            beta,
        )
    }

    /// Build from explicit matrices (checkpoint restore, tests).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        patch_size: usize,
        channels: usize,
        analysis: Array2<T>,
        synthesis: Array2<T>,
        projection: Array2<T>,
        unprojection: Array2<T>,
        learning_rate: T,
        beta: T,
    ) -> Result<Self> {
        let f = patch_size * patch_size * channels;
        if patch_size == 0 || (channels != 1 && channels != 3) {
            return Err(Error::Contract(format!(
                "bad patch size {patch_size} or channels {channels}"
            )));
        }
        let c = analysis.ncols();
        let d = projection.ncols();
        if analysis.nrows() != f
            || synthesis.dim() != (c, f)
            || projection.nrows() != c
            || unprojection.dim() != (d, c)
        {
            return Err(Error::Contract(format!(
                "inconsistent codec shapes: analysis {:?}, synthesis {:?}, projection {:?}, unprojection {:?}",
                analysis.dim(),
                synthesis.dim(),
                projection.dim(),
                unprojection.dim()
            )));
        }
        if !(beta >= T::zero()) || !(learning_rate >= T::zero()) {
            return Err(Error::InvalidInput("learning rate and beta must be non-negative".into()));
        }
        Ok(Self {
            patch_size,
            channels,
            analysis,
            synthesis,
            projection,
            unprojection,
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

    /// Latent channels between analysis and projection.
    pub fn latent_channels(&self) -> usize {
        self.analysis.ncols()
    }

    /// Quantization-space dimension.
    pub fn code_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn learning_rate(&self) -> T {
        self.learning_rate
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn analysis(&self) -> &Array2<T> {
        &self.analysis
    }

    pub fn synthesis(&self) -> &Array2<T> {
        &self.synthesis
    }

    pub fn projection(&self) -> &Array2<T> {
        &self.projection
    }

    pub fn unprojection(&self) -> &Array2<T> {
        &self.unprojection
    }

    /// Encode stacked patch cells: returns pre-projection latents and
    /// quantizer-space latents.
    pub fn encode_cells(&self, cells: &Array2<T>) -> (Array2<T>, Array2<T>) {
        let pre = cells.dot(&self.analysis);
        let enc = pre.dot(&self.projection);
        (pre, enc)
    }

    /// Decode quantized cells back to patch space.
    pub fn decode_cells(&self, quantized: &Array2<T>) -> Array2<T> {
        quantized.dot(&self.unprojection).dot(&self.synthesis)
    }

    /// Encode an image into (pre-projection, quantizer-space) latent grids.
    pub fn encode(&self, image: &Image<T>) -> Result<(LatentGrid<T>, LatentGrid<T>)> {
        if image.channels() != self.channels {
            return Err(Error::Contract(format!(
                "image has {} channels, codec expects {}",
                image.channels(),
                self.channels
            )));
        }
        let patches = patchify(image, self.patch_size)?;
        let (pre, enc) = self.encode_cells(&patches.to_matrix());
        Ok((
            LatentGrid::from_matrix(patches.grid_h(), patches.grid_w(), &pre)?,
            LatentGrid::from_matrix(patches.grid_h(), patches.grid_w(), &enc)?,
        ))
    }

    /// Decode a quantized latent grid to an image (pixels clamped).
    pub fn decode(&self, quantized: &LatentGrid<T>) -> Result<Image<T>> {
        if quantized.dim() != self.code_dim() {
            return Err(Error::Contract(format!(
                "latent dim {} does not match codec code dim {}",
                quantized.dim(),
                self.code_dim()
            )));
        }
        let cells = self.decode_cells(&quantized.to_matrix());
        let grid = LatentGrid::from_matrix(quantized.grid_h(), quantized.grid_w(), &cells)?;
        unpatchify(&grid, self.patch_size, self.channels)
    }

    /// Apply one gradient-descent step.
    pub fn apply_gradients(&mut self, grads: &CodecGradients<T>) {
        let lr = self.learning_rate;
        self.analysis.scaled_add(-lr, &grads.analysis);
        self.synthesis.scaled_add(-lr, &grads.synthesis);
        self.projection.scaled_add(-lr, &grads.projection);
        self.unprojection.scaled_add(-lr, &grads.unprojection);
    }

    /// Serialize as a "VQFT" checkpoint.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        let mats: [(&str, &Array2<T>); 4] = [
            ("analysis", &self.analysis),
            ("synthesis", &self.synthesis),
            ("projection", &self.projection),
            ("unprojection", &self.unprojection),
        ];
        write_codec_header(w, self.patch_size, self.channels, &mats)?;
        write_f32(w, self.learning_rate.to_f32().expect("lr fits f32"))?;
        write_f32(w, self.beta.to_f32().expect("beta fits f32"))
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.save(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load<R: Read>(r: &mut BinReader<R>) -> Result<Self> {
        let (patch_size, channels, mut mats) = read_codec_header(r, 4)?;
        let take = |mats: &mut Vec<(String, Array2<T>)>, name: &str| -> Result<Array2<T>> {
            let pos = mats
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Parse {
                    offset: 0,
                    message: format!("codec checkpoint missing matrix {name}"),
                })?;
            Ok(mats.remove(pos).1)
        };
        let analysis = take(&mut mats, "analysis")?;
        let synthesis = take(&mut mats, "synthesis")?;
        let projection = take(&mut mats, "projection")?;
        let unprojection = take(&mut mats, "unprojection")?;
        let lr = T::from_f32(r.read_f32()?).expect("f32 widens");
        let beta = T::from_f32(r.read_f32()?).expect("f32 widens");
        Self::from_parts(
            patch_size,
            channels,
            analysis,
            synthesis,
            projection,
            unprojection,
            lr,
            beta,
        )
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BinReader::new(std::io::BufReader::new(file));
        let codec = Self::load(&mut r)?;
        r.expect_eof()?;
        Ok(codec)
    }
}

/// Rectangular identity: ones on the main diagonal, zeros elsewhere.
pub(crate) fn identity_like<T: Scalar>(rows: usize, cols: usize) -> Array2<T> {
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows.min(cols) {
        m[(i, i)] = T::one();
    }
    m
}

pub(crate) fn array2_to_f32<T: Scalar>(m: &Array2<T>) -> (Vec<u64>, Vec<f32>) {
    (
        vec![m.nrows() as u64, m.ncols() as u64],
        m.iter().map(|v| v.to_f32().expect("scalar narrows to f32")).collect(),
    )
}

pub(crate) fn f32_to_array2<T: Scalar>(dims: &[u64], data: Vec<f32>) -> Result<Array2<T>> {
    if dims.len() != 2 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected rank-2 matrix blob, got rank {}", dims.len()),
        });
    }
    let (rows, cols) = (dims[0] as usize, dims[1] as usize);
    Array2::from_shape_vec(
        (rows, cols),
        data.into_iter().map(|v| T::from_f32(v).expect("f32 widens")).collect(),
    )
    .map_err(|e| Error::Parse { offset: 0, message: format!("bad matrix shape: {e}") })
}

/// Shared "VQFT" header + named matrix list writer (the hierarchical model
/// reuses it with its own matrix set).
pub(crate) fn write_codec_header<T: Scalar, W: Write>(
    w: &mut W,
    patch_size: usize,
    channels: usize,
    mats: &[(&str, &Array2<T>)],
) -> Result<()> {
    w.write_all(CODEC_MAGIC)?;
    write_u32(w, CODEC_VERSION)?;
    write_u64(w, patch_size as u64)?;
    write_u64(w, channels as u64)?;
    write_u64(w, mats.len() as u64)?;
    for (name, m) in mats {
        write_u64(w, name.len() as u64)?;
        w.write_all(name.as_bytes())?;
        let (dims, data) = array2_to_f32(m);
        write_blob(w, &dims, &data)?;
    }
    Ok(())
}

pub(crate) fn read_codec_header<T: Scalar, R: Read>(
    r: &mut BinReader<R>,
    expected_matrices: usize,
) -> Result<(usize, usize, Vec<(String, Array2<T>)>)> {
    r.expect_magic(CODEC_MAGIC)?;
    let version = r.read_u32()?;
    if version != CODEC_VERSION {
        return Err(r.fail(format!("unsupported codec version {version}")));
    }
    let patch_size = r.read_dim("patch size")?;
    let channels = r.read_dim("channels")?;
    let count = r.read_dim("matrix count")?;
    if count != expected_matrices {
        return Err(r.fail(format!(
            "expected {expected_matrices} matrices, checkpoint has {count}"
        )));
    }
    let mut mats = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_dim("name length")?;
        if name_len > 64 {
            return Err(r.fail(format!("matrix name length {name_len} too large")));
        }
        let mut name = vec![0u8; name_len];
        r.read_bytes(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| r.fail("matrix name is not utf-8"))?;
        let (dims, data) = read_blob(r)?;
        mats.push((name, f32_to_array2(&dims, data)?));
    }
    Ok((patch_size, channels, mats))
}

/// Loss terms of one training step, mean-normalized over elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub reconstruction: T,
    pub commitment: T,
    pub total: T,
}

/// Analytic gradients for the four codec matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecGradients<T> {
    pub analysis: Array2<T>,
    pub synthesis: Array2<T>,
    pub projection: Array2<T>,
    pub unprojection: Array2<T>,
    pub losses: LossBreakdown<T>,
}

/// Gradients of the straight-through objective at fixed quantized values.
///
/// The reconstruction gradient flows exactly through synthesis and
/// unprojection; for the encoder side it is copied through the quantizer
/// (identity Jacobian) and combined with the commitment gradient
/// `2 beta (z_e - z_q) / numel`.
pub fn codec_gradients<T: Scalar>(
    codec: &LinearCodec<T>,
    cells: &Array2<T>,
    pre: &Array2<T>,
    enc: &Array2<T>,
    quantized: &Array2<T>,
) -> CodecGradients<T> {
    let n_rec = T::from_usize(cells.len()).expect("element count fits scalar");
    let n_lat = T::from_usize(enc.len()).expect("element count fits scalar");
    let two = T::from_config(2.0);

    let decoded_latent = quantized.dot(&codec.unprojection);
    let decoded = decoded_latent.dot(&codec.synthesis);
    let residual = &decoded - cells;
    let reconstruction = residual.iter().fold(T::zero(), |a, &v| a + v * v) / n_rec;
    let commit_diff = enc - quantized;
    let commitment =
        codec.beta * commit_diff.iter().fold(T::zero(), |a, &v| a + v * v) / n_lat;

    let g_decoded = residual.mapv(|v| two * v / n_rec);
    let g_synthesis = decoded_latent.t().dot(&g_decoded);
    let g_decoded_latent = g_decoded.dot(&codec.synthesis.t());
    let g_unprojection = quantized.t().dot(&g_decoded_latent);
    let g_quantized = g_decoded_latent.dot(&codec.unprojection.t());
    let g_enc = &g_quantized + &commit_diff.mapv(|v| two * codec.beta * v / n_lat);
    let g_projection = pre.t().dot(&g_enc);
    let g_pre = g_enc.dot(&codec.projection.t());
    let g_analysis = cells.t().dot(&g_pre);

    CodecGradients {
        analysis: g_analysis,
        synthesis: g_synthesis,
        projection: g_projection,
        unprojection: g_unprojection,
        losses: LossBreakdown {
            reconstruction,
            commitment,
            total: reconstruction + commitment,
        },
    }
}

/// What one training step produced, for usage tracking and resets.
#[derive(Debug)]
pub struct StepOutcome<T> {
    pub losses: LossBreakdown<T>,
    pub assignment: AssignmentResult<T>,
    /// Quantizer-space encoder outputs for the batch (recent outputs for
    /// dead-code resets).
    pub encoder_outputs: Array2<T>,
}

/// One straight-through training step over a batch of images: forward,
/// analytic gradient-descent update of the codec, EMA update of the
/// codebook. The codebook never receives gradients.
pub fn straight_through_step<T: Scalar>(
    codec: &mut LinearCodec<T>,
    codebook: &mut Codebook<T>,
    batch: &[Image<T>],
    step: u64,
) -> Result<StepOutcome<T>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("training batch is empty".into()));
    }
    if codec.code_dim() != codebook.dim() {
        return Err(Error::Contract(format!(
            "codec code dim {} does not match codebook D={}",
            codec.code_dim(),
            codebook.dim()
        )));
    }
    let cells = stack_batch_cells(codec.patch_size, codec.channels, batch)?.0;
    let (pre, enc) = codec.encode_cells(&cells);
    if enc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { step, message: "non-finite encoder outputs".into() });
    }
    let assignment = nearest_assign(enc.view(), codebook)?;
    let grads = codec_gradients(codec, &cells, &pre, &enc, &assignment.quantized);
    if !grads.losses.total.is_finite() {
        return Err(Error::Diverged {
            step,
            message: format!(
                "non-finite loss (reconstruction {}, commitment {})",
                grads.losses.reconstruction, grads.losses.commitment
            ),
        });
    }
    codec.apply_gradients(&grads);
    codebook.ema_update(enc.view(), &assignment)?;
    Ok(StepOutcome { losses: grads.losses, assignment, encoder_outputs: enc })
}

/// Stack the patch cells of a batch into one `(images * cells) x F`
/// matrix. All images must share dimensions.
pub fn stack_batch_cells<T: Scalar>(
    patch_size: usize,
    channels: usize,
    batch: &[Image<T>],
) -> Result<(Array2<T>, (usize, usize))> {
    let first = &batch[0];
    let grid = patchify(first, patch_size)?;
    let (gh, gw) = (grid.grid_h(), grid.grid_w());
    let dim = grid.dim();
    let mut cells = Array2::zeros((batch.len() * gh * gw, dim));
    for (i, image) in batch.iter().enumerate() {
        if image.height() != first.height()
            || image.width() != first.width()
            || image.channels() != channels
        {
            return Err(Error::Contract(format!(
                "batch image {i} has mismatched shape"
            )));
        }
        let g = if i == 0 { grid.clone() } else { patchify(image, patch_size)? };
        let m = g.to_matrix();
        cells
            .slice_mut(ndarray::s![i * gh * gw..(i + 1) * gh * gw, ..])
            .assign(&m);
    }
    Ok((cells, (gh, gw)))
}

/// Mean squared error between two stacked-cell matrices.
pub(crate) fn cells_mse<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> T {
    mean_sq_diff(
        a.as_slice().expect("standard layout"),
        b.as_slice().expect("standard layout"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::Codebook;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, h: usize, w: usize, seed: u64) -> Vec<Image<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Image::new(h, w, 1, (0..h * w).map(|_| rng.random_range(0.0..=1.0)).collect())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn lossless_ceiling_with_square_orthonormal_codec() {
        // Square analysis, transposed synthesis, identity projections, and a
        // codebook holding every encountered latent exactly: end-to-end MSE
        // below 1e-10.
        let p = 4;
        let f = p * p;
        let codec = LinearCodec::<f64>::new(p, 1, f, f, 3e-4, 0.25).unwrap();
        let batch = random_batch(2, 8, 8, 10);
        let (cells, _) = stack_batch_cells(p, 1, &batch).unwrap();
        let (_, enc) = codec.encode_cells(&cells);
        let codebook = Codebook::new(enc.clone(), 0.99, 1e-5).unwrap();
        let assign = nearest_assign(enc.view(), &codebook).unwrap();
        assert!(assign.distances.iter().all(|&d| d == 0.0));
        let decoded = codec.decode_cells(&assign.quantized);
        assert!(cells_mse(&decoded, &cells) < 1e-10);
    }

    #[test]
    fn zero_learning_rate_updates_codebook_only() {
        let p = 2;
        let mut codec = LinearCodec::<f64>::new(p, 1, 4, 2, 0.0, 0.25).unwrap();
        let before = codec.clone();
        let entries = Array2::from_shape_fn((4, 2), |(i, j)| (i as f64) - (j as f64) * 0.5);
        let mut codebook = Codebook::new(entries, 0.5, 1e-5).unwrap();
        let cb_before = codebook.clone();
        let batch = random_batch(2, 4, 4, 11);
        straight_through_step(&mut codec, &mut codebook, &batch, 0).unwrap();
        assert_eq!(codec, before, "codec must not move at lr 0");
        assert_ne!(codebook, cb_before, "codebook must still take its EMA step");
    }

    #[test]
    fn commitment_gradient_vanishes_on_codebook_points() {
        // Encoder outputs that sit exactly on code vectors: zero commitment
        // loss and zero commitment contribution to the encoder gradient.
        let p = 2;
        let codec = LinearCodec::<f64>::new(p, 1, 4, 4, 3e-4, 0.25).unwrap();
        let batch = random_batch(1, 4, 4, 12);
        let (cells, _) = stack_batch_cells(p, 1, &batch).unwrap();
        let (pre, enc) = codec.encode_cells(&cells);
        let codebook = Codebook::new(enc.clone(), 0.99, 1e-5).unwrap();
        let assign = nearest_assign(enc.view(), &codebook).unwrap();
        let grads = codec_gradients(&codec, &cells, &pre, &enc, &assign.quantized);
        assert_eq!(grads.losses.commitment, 0.0);

        // With beta zero the gradients are identical.
        let codec0 =
            LinearCodec::<f64>::from_parts(p, 1, codec.analysis.clone(), codec.synthesis.clone(),
                codec.projection.clone(), codec.unprojection.clone(), 3e-4, 0.0)
                .unwrap();
        let grads0 = codec_gradients(&codec0, &cells, &pre, &enc, &assign.quantized);
        assert_eq!(grads.analysis, grads0.analysis);
        assert_eq!(grads.projection, grads0.projection);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut codec = LinearCodec::<f32>::new(4, 3, 20, 6, 3e-4, 0.25).unwrap();
        codec.analysis[(3, 2)] = 0.1234567;
        let mut buf = Vec::new();
        codec.save(&mut buf).unwrap();
        let mut r = BinReader::new(&buf[..]);
        let codec2 = LinearCodec::<f32>::load(&mut r).unwrap();
        r.expect_eof().unwrap();
        assert_eq!(codec, codec2);
        let mut buf2 = Vec::new();
        codec2.save(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn divergence_is_reported_with_step_index() {
        // An absurd learning rate drives the loss to infinity within a few
        // steps; the error must carry the step index.
        let p = 2;
        let mut codec = LinearCodec::<f64>::new(p, 1, 4, 2, 1e12, 0.25).unwrap();
        let entries = Array2::from_shape_fn((2, 2), |(i, j)| (i + j) as f64);
        let mut codebook = Codebook::new(entries, 0.9, 1e-5).unwrap();
        let batch = random_batch(1, 4, 4, 13);
        let mut diverged_at = None;
        for step in 0..50u64 {
            match straight_through_step(&mut codec, &mut codebook, &batch, step) {
                Ok(_) => {}
                Err(Error::Diverged { step: s, .. }) => {
                    diverged_at = Some(s);
                    break;
                }
                Err(other) => panic!("unexpected error {other}"),
            }
        }
        assert!(diverged_at.is_some(), "expected divergence at lr 1e12");
    }

    #[test]
    fn encode_decode_round_trip_shapes() {
        let codec = LinearCodec::<f64>::new(8, 1, 40, 8, 3e-4, 0.25).unwrap();
        let img = random_batch(1, 64, 64, 14).pop().unwrap();
        let (pre, enc) = codec.encode(&img).unwrap();
        assert_eq!((pre.grid_h(), pre.grid_w(), pre.dim()), (8, 8, 40));
        assert_eq!((enc.grid_h(), enc.grid_w(), enc.dim()), (8, 8, 8));
        let decoded = codec.decode(&enc).unwrap();
        assert_eq!(decoded.height(), 64);
        assert_eq!(decoded.channels(), 1);
    }
}
