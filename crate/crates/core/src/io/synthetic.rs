//! Synthetic corpus generation: Gaussian random fields, checkerboards,
//! and step edges, all deterministic per seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Correlated noise: white noise blurred so the autocorrelation falls
    /// to 1/e at the given lag.
    GaussianField { correlation: f64 },
    /// Exact two-level tiling with the given period, random phase.
    Checkerboard { period: usize },
    /// Two gray levels split by a random horizontal/vertical/diagonal edge.
    Edges,
}

/// Generate `count` images of one kind. Values are in `[0, 1]` and the
/// output is fully determined by `seed`.
pub fn gen_synthetic<T: Scalar>(
    kind: SyntheticKind,
    count: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<Image<T>>> {
    match kind {
        SyntheticKind::GaussianField { correlation } if !(correlation > 0.0) => {
            return Err(Error::Config(format!(
                "gaussian_field correlation must be positive, got {correlation}"
            )))
        }
        SyntheticKind::Checkerboard { period: 0 } => {
            return Err(Error::Config("checkerboard period must be positive".into()))
        }
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let gray = match kind {
            SyntheticKind::GaussianField { correlation } => {
                gaussian_field(height, width, correlation, &mut rng)
            }
            SyntheticKind::Checkerboard { period } => checkerboard(height, width, period, &mut rng),
            SyntheticKind::Edges => edges(height, width, &mut rng),
        };
        let pixels: Vec<T> = if channels == 1 {
            gray.iter().map(|&v| T::from_config(v)).collect()
        } else {
            gray.iter()
                .flat_map(|&v| std::iter::repeat(T::from_config(v)).take(channels))
                .collect()
        };
        out.push(Image::new(height, width, channels, pixels)?);
    }
    Ok(out)
}

fn checkerboard(height: usize, width: usize, period: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let off_y = rng.random_range(0..2 * period);
    let off_x = rng.random_range(0..2 * period);
    let mut pixels = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let tile = ((y + off_y) / period + (x + off_x) / period) % 2;
            pixels.push(tile as f64);
        }
    }
    pixels
}

fn edges(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lo: f64 = rng.random_range(0.0..0.4);
    let hi: f64 = rng.random_range(0.6..1.0);
    let orientation = rng.random_range(0..4u8);
    let frac: f64 = rng.random_range(0.25..0.75);
    let mut pixels = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let above = match orientation {
                0 => (y as f64) < frac * height as f64,
                1 => (x as f64) < frac * width as f64,
                2 => ((y + x) as f64) < frac * (height + width) as f64,
                _ => (y as f64 - x as f64) < (frac - 0.5) * (height + width) as f64,
            };
            pixels.push(if above { lo } else { hi });
        }
    }
    pixels
}

/// White noise blurred with a circular separable Gaussian of sigma = lag/2,
/// so the normalized autocovariance at `lag` is about exp(-1). Rescaled to
/// [0, 1] around the per-image mean.
fn gaussian_field(height: usize, width: usize, lag: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sigma = lag / 2.0;
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / ksum).collect();

    let mut noise = vec![0.0f64; height * width];
    for v in noise.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    // Separable circular convolution keeps the field stationary.
    let mut rows = vec![0.0f64; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (ki, &k) in kernel.iter().enumerate() {
                let dx = ki as isize - radius;
                let xx = (x as isize + dx).rem_euclid(width as isize) as usize;
                acc += k * noise[y * width + xx];
            }
            rows[y * width + x] = acc;
        }
    }
    let mut field = vec![0.0f64; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (ki, &k) in kernel.iter().enumerate() {
                let dy = ki as isize - radius;
                let yy = (y as isize + dy).rem_euclid(height as isize) as usize;
                acc += k * rows[yy * width + x];
            }
            field[y * width + x] = acc;
        }
    }
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64;
    let scale = if var > 0.0 { 1.0 / (8.0 * var.sqrt()) } else { 0.0 };
    field
        .into_iter()
        .map(|v| (0.5 + (v - mean) * scale).clamp(0.0, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_is_exact_two_level_tiling() {
        let imgs = gen_synthetic::<f64>(SyntheticKind::Checkerboard { period: 8 }, 1, 64, 64, 1, 3)
            .unwrap();
        let img = &imgs[0];
        for &v in img.pixels() {
            assert!(v == 0.0 || v == 1.0);
        }
        // Tiles are period-wide: scanning any row, runs of equal value have
        // length 8 except possibly at the phase boundary ends.
        let row: Vec<f64> = (0..64).map(|x| img.get(0, x, 0)).collect();
        let mut changes = Vec::new();
        for x in 1..64 {
            if row[x] != row[x - 1] {
                changes.push(x);
            }
        }
        for pair in changes.windows(2) {
            assert_eq!(pair[1] - pair[0], 8);
        }
    }

    #[test]
    fn same_seed_gives_identical_corpus() {
        let a = gen_synthetic::<f32>(SyntheticKind::Edges, 4, 16, 16, 1, 99).unwrap();
        let b = gen_synthetic::<f32>(SyntheticKind::Edges, 4, 16, 16, 1, 99).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic::<f32>(SyntheticKind::Edges, 4, 16, 16, 1, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_field_autocorrelation_near_inverse_e() {
        let lag = 6usize;
        let imgs = gen_synthetic::<f64>(
            SyntheticKind::GaussianField { correlation: lag as f64 },
            24,
            48,
            48,
            1,
            41,
        )
        .unwrap();
        // Monte-Carlo estimate of normalized autocovariance at the lag.
        let mut c0 = 0.0;
        let mut cl = 0.0;
        for img in &imgs {
            let px = img.pixels();
            let n = px.len() as f64;
            let mean = px.iter().copied().sum::<f64>() / n;
            for y in 0..48 {
                for x in 0..48 {
                    let a = img.get(y, x, 0) - mean;
                    let b = img.get(y, (x + lag) % 48, 0) - mean;
                    c0 += a * a;
                    cl += a * b;
                }
            }
        }
        let ratio = cl / c0;
        let target = (-1.0f64).exp();
        assert!(
            (ratio - target).abs() < 0.2 * target + 0.05,
            "autocorrelation ratio {ratio} vs target {target}"
        );
    }

    #[test]
    fn unknown_period_rejected() {
        let err =
            gen_synthetic::<f64>(SyntheticKind::Checkerboard { period: 0 }, 1, 8, 8, 1, 0)
                .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
