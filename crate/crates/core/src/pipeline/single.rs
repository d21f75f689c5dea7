//! Single-level model: one codec, one codebook, one usage window.

use ndarray::Array2;

use crate::codebook::{nearest_assign, AssignmentResult, Codebook, UsageWindow};
use crate::error::{Error, Result};
use crate::grid::{Image, LatentGrid};
use crate::num::Scalar;
use crate::transform::{straight_through_step, LinearCodec, StepOutcome};

#[derive(Debug, Clone)]
pub struct SingleLevelModel<T> {
    codec: LinearCodec<T>,
    codebook: Codebook<T>,
    usage: UsageWindow,
}

impl<T: Scalar> SingleLevelModel<T> {
    pub fn new(
        codec: LinearCodec<T>,
        codebook: Codebook<T>,
        window_len: usize,
        threshold: u64,
    ) -> Result<Self> {
        if codec.code_dim() != codebook.dim() {
            return Err(Error::Contract(format!(
                "codec code dim {} does not match codebook D={}",
                codec.code_dim(),
                codebook.dim()
            )));
        }
        let usage = UsageWindow::new(codebook.num_codes(), window_len, threshold)?;
        Ok(Self { codec, codebook, usage })
    }

    pub fn codec(&self) -> &LinearCodec<T> {
        &self.codec
    }

    pub fn codebook(&self) -> &Codebook<T> {
        &self.codebook
    }

    pub fn usage(&self) -> &UsageWindow {
        &self.usage
    }

    pub fn num_codes(&self) -> usize {
        self.codebook.num_codes()
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut LinearCodec<T>, &mut Codebook<T>, &mut UsageWindow) {
        (&mut self.codec, &mut self.codebook, &mut self.usage)
    }

    pub(crate) fn from_parts(
        codec: LinearCodec<T>,
        codebook: Codebook<T>,
        window_len: usize,
        threshold: u64,
    ) -> Result<Self> {
        Self::new(codec, codebook, window_len, threshold)
    }

    /// Full inference pass: encode, quantize, decode (pixels clamped).
    /// Returns the reconstruction, the quantizer-space latents, and the
    /// assignment.
    pub fn forward(
        &self,
        image: &Image<T>,
    ) -> Result<(Image<T>, LatentGrid<T>, AssignmentResult<T>)> {
        let (_, enc) = self.codec.encode(image)?;
        let assignment = nearest_assign(enc.to_matrix().view(), &self.codebook)?;
        let quantized =
            LatentGrid::from_matrix(enc.grid_h(), enc.grid_w(), &assignment.quantized)?;
        let reconstruction = self.codec.decode(&quantized)?;
        Ok((reconstruction, enc, assignment))
    }

    /// One training step (gradient descent on the codec, EMA on the
    /// codebook). Usage tracking and resets are orchestrated by the train
    /// loop.
    pub fn train_step(&mut self, batch: &[Image<T>], step: u64) -> Result<StepOutcome<T>> {
        straight_through_step(&mut self.codec, &mut self.codebook, batch, step)
    }

    /// Batch assignment counts for the usage window.
    pub fn batch_counts(&self, outcome: &StepOutcome<T>) -> Vec<u64> {
        outcome.assignment.counts(self.codebook.num_codes())
    }

    /// Encoder outputs for a set of images, stacked row-wise (data-driven
    /// codebook initialization).
    pub fn encode_corpus_rows(codec: &LinearCodec<T>, images: &[Image<T>]) -> Result<Array2<T>> {
        let mut rows = Vec::new();
        let mut dim = 0;
        for image in images {
            let (_, enc) = codec.encode(image)?;
            dim = enc.dim();
            rows.extend(enc.values().iter().copied());
        }
        if dim == 0 {
            return Err(Error::InvalidInput("no images to encode".into()));
        }
        Array2::from_shape_vec((rows.len() / dim, dim), rows)
            .map_err(|e| Error::Contract(format!("ragged encoder outputs: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_model(k: usize) -> SingleLevelModel<f64> {
        let codec = LinearCodec::new(2, 1, 4, 4, 3e-4, 0.25).unwrap();
        let entries = Array2::from_shape_fn((k, 4), |(i, j)| i as f64 * 0.1 + j as f64 * 0.01);
        let codebook = Codebook::new(entries, 0.99, 1e-5).unwrap();
        SingleLevelModel::new(codec, codebook, 10, 2).unwrap()
    }

    #[test]
    fn constant_image_with_exact_code_reconstructs() {
        let codec = LinearCodec::<f64>::new(2, 1, 4, 4, 3e-4, 0.25).unwrap();
        let img = Image::constant(4, 4, 1, 0.4).unwrap();
        let (_, enc) = codec.encode(&img).unwrap();
        let codebook = Codebook::new(enc.to_matrix(), 0.99, 1e-5).unwrap();
        let model = SingleLevelModel::new(codec, codebook, 10, 2).unwrap();
        let (recon, _, assignment) = model.forward(&img).unwrap();
        assert!(assignment.distances.iter().all(|&d| d == 0.0));
        for (a, b) in recon.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_code_model_quantizes_everything_to_it() {
        let model = toy_model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let img = Image::new(4, 4, 1, (0..16).map(|_| rng.random_range(0.0..=1.0)).collect())
            .unwrap();
        let (_, _, assignment) = model.forward(&img).unwrap();
        assert!(assignment.indices.iter().all(|&i| i == 0));
    }

    #[test]
    fn dimension_mismatch_is_rejected_at_construction() {
        let codec = LinearCodec::<f64>::new(2, 1, 4, 4, 3e-4, 0.25).unwrap();
        let codebook = Codebook::new(Array2::zeros((4, 3)), 0.99, 1e-5).unwrap();
        assert!(SingleLevelModel::new(codec, codebook, 10, 2).is_err());
    }
}
