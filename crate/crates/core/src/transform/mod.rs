//! Analytic patch codec: patchify/unpatchify, orthonormal block transform,
//! learned linear projections, grid resampling, and the straight-through
//! training step.

pub(crate) mod codec;
mod dct;

pub use codec::{
    codec_gradients, stack_batch_cells, straight_through_step, CodecGradients, LinearCodec,
    LossBreakdown, StepOutcome,
};
pub use dct::{cosine_basis, zigzag};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{Image, LatentGrid};
use crate::num::Scalar;

/// Split an image into a grid of flattened `p x p x channels` patches.
/// `unpatchify(patchify(x))` is bit-exact.
pub fn patchify<T: Scalar>(image: &Image<T>, p: usize) -> Result<LatentGrid<T>> {
    if p == 0 {
        return Err(Error::InvalidInput("patch size must be positive".into()));
    }
    if image.height() % p != 0 || image.width() % p != 0 {
        return Err(Error::InvalidInput(format!(
            "image {}x{} not divisible by patch size {p}",
            image.height(),
            image.width()
        )));
    }
    let (gh, gw) = (image.height() / p, image.width() / p);
    let ch = image.channels();
    let dim = p * p * ch;
    let mut values = Vec::with_capacity(gh * gw * dim);
    for gi in 0..gh {
        for gj in 0..gw {
            for r in 0..p {
                for c in 0..p {
                    for k in 0..ch {
                        values.push(image.get(gi * p + r, gj * p + c, k));
                    }
                }
            }
        }
    }
    LatentGrid::new(gh, gw, dim, values)
}

/// Reassemble an image from a grid of flattened patches, clamping pixels
/// into `[0, 1]` (identity for grids produced by `patchify`).
pub fn unpatchify<T: Scalar>(grid: &LatentGrid<T>, p: usize, channels: usize) -> Result<Image<T>> {
    if grid.dim() != p * p * channels {
        return Err(Error::Contract(format!(
            "cell dimension {} does not match {p}x{p}x{channels}",
            grid.dim()
        )));
    }
    let (h, w) = (grid.grid_h() * p, grid.grid_w() * p);
    let mut pixels = vec![T::zero(); h * w * channels];
    for gi in 0..grid.grid_h() {
        for gj in 0..grid.grid_w() {
            let cell = grid.cell(gi, gj);
            for r in 0..p {
                for c in 0..p {
                    for k in 0..channels {
                        pixels[((gi * p + r) * w + gj * p + c) * channels + k] =
                            cell[(r * p + c) * channels + k];
                    }
                }
            }
        }
    }
    Image::from_clamped(h, w, channels, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Apply the orthonormal per-cell cosine transform (or its inverse).
pub fn block_transform<T: Scalar>(
    grid: &LatentGrid<T>,
    direction: Direction,
    p: usize,
    channels: usize,
) -> Result<LatentGrid<T>> {
    if grid.dim() != p * p * channels {
        return Err(Error::Contract(format!(
            "cell dimension {} does not match {p}x{p}x{channels}",
            grid.dim()
        )));
    }
    let basis = dct::cosine_basis::<T>(p, channels);
    let cells = grid.to_matrix();
    let out = match direction {
        Direction::Forward => cells.dot(&basis),
        Direction::Inverse => cells.dot(&basis.t()),
    };
    LatentGrid::from_matrix(grid.grid_h(), grid.grid_w(), &out)
}

/// Per-cell linear map: each cell vector is multiplied by `matrix`
/// (input dim x output dim).
pub fn project<T: Scalar>(grid: &LatentGrid<T>, matrix: &Array2<T>) -> Result<LatentGrid<T>> {
    if grid.dim() != matrix.nrows() {
        return Err(Error::Contract(format!(
            "cell dimension {} does not match projection input {}",
            grid.dim(),
            matrix.nrows()
        )));
    }
    let out = grid.to_matrix().dot(matrix);
    LatentGrid::from_matrix(grid.grid_h(), grid.grid_w(), &out)
}

/// Per-cell linear map back out of the quantization space.
pub fn unproject<T: Scalar>(grid: &LatentGrid<T>, matrix: &Array2<T>) -> Result<LatentGrid<T>> {
    project(grid, matrix)
}

/// 2x2 average pooling per channel.
pub fn downsample2x<T: Scalar>(grid: &LatentGrid<T>) -> Result<LatentGrid<T>> {
    if grid.grid_h() % 2 != 0 || grid.grid_w() % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "downsample needs even grid dimensions, got {}x{}",
            grid.grid_h(),
            grid.grid_w()
        )));
    }
    let cells = grid.to_matrix();
    let out = downsample_cells(&cells, 1, grid.grid_h(), grid.grid_w());
    LatentGrid::from_matrix(grid.grid_h() / 2, grid.grid_w() / 2, &out)
}

/// Nearest-neighbor 2x duplication per channel.
pub fn upsample2x<T: Scalar>(grid: &LatentGrid<T>) -> LatentGrid<T> {
    let cells = grid.to_matrix();
    let out = upsample_cells(&cells, 1, grid.grid_h(), grid.grid_w());
    LatentGrid::from_matrix(grid.grid_h() * 2, grid.grid_w() * 2, &out)
        .expect("upsampled shape is consistent")
}

/// Stacked-cell variants used by batched training. Rows are ordered
/// `(image, grid row, grid col)`; `gh`/`gw` are per-image grid dims.
pub(crate) fn downsample_cells<T: Scalar>(
    cells: &Array2<T>,
    images: usize,
    gh: usize,
    gw: usize,
) -> Array2<T> {
    let dim = cells.ncols();
    let (oh, ow) = (gh / 2, gw / 2);
    let quarter = T::from_config(0.25);
    let mut out = Array2::zeros((images * oh * ow, dim));
    for img in 0..images {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = out.row_mut(img * oh * ow + i * ow + j);
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = img * gh * gw + (2 * i + di) * gw + (2 * j + dj);
                    acc += &cells.row(src);
                }
                acc *= quarter;
            }
        }
    }
    out
}

/// Adjoint of `downsample_cells`: distribute each pooled gradient equally
/// over its 2x2 source block.
pub(crate) fn downsample_adjoint_cells<T: Scalar>(
    pooled: &Array2<T>,
    images: usize,
    gh: usize,
    gw: usize,
) -> Array2<T> {
    let dim = pooled.ncols();
    let (oh, ow) = (gh / 2, gw / 2);
    let quarter = T::from_config(0.25);
    let mut out = Array2::zeros((images * gh * gw, dim));
    for img in 0..images {
        for i in 0..oh {
            for j in 0..ow {
                let src = pooled.row(img * oh * ow + i * ow + j);
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let dst = img * gh * gw + (2 * i + di) * gw + (2 * j + dj);
                    let mut row = out.row_mut(dst);
                    row.zip_mut_with(&src, |o, &s| *o = s * quarter);
                }
            }
        }
    }
    out
}

pub(crate) fn upsample_cells<T: Scalar>(
    cells: &Array2<T>,
    images: usize,
    gh: usize,
    gw: usize,
) -> Array2<T> {
    let dim = cells.ncols();
    let (oh, ow) = (gh * 2, gw * 2);
    let mut out = Array2::zeros((images * oh * ow, dim));
    for img in 0..images {
        for i in 0..oh {
            for j in 0..ow {
                let src = cells.row(img * gh * gw + (i / 2) * gw + j / 2);
                out.row_mut(img * oh * ow + i * ow + j).assign(&src);
            }
        }
    }
    out
}

/// Adjoint of `upsample_cells`: sum each 2x2 block of upsampled gradients
/// back onto the coarse cell.
pub(crate) fn upsample_adjoint_cells<T: Scalar>(
    fine: &Array2<T>,
    images: usize,
    gh: usize,
    gw: usize,
) -> Array2<T> {
    let dim = fine.ncols();
    let (fh, fw) = (gh * 2, gw * 2);
    let mut out = Array2::zeros((images * gh * gw, dim));
    for img in 0..images {
        for i in 0..fh {
            for j in 0..fw {
                let src = fine.row(img * fh * fw + i * fw + j);
                let mut dst = out.row_mut(img * gh * gw + (i / 2) * gw + j / 2);
                dst += &src;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, ch: usize, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..h * w * ch).map(|_| rng.random_range(0.0..=1.0)).collect();
        Image::new(h, w, ch, pixels).unwrap()
    }

    #[test]
    fn patchify_layout_matches_definition() {
        // 4x4 single-channel image, p=2: cell (0,0) holds pixels
        // (0,0),(0,1),(1,0),(1,1).
        let pixels: Vec<f64> = (0..16).map(|v| v as f64 / 16.0).collect();
        let img = Image::new(4, 4, 1, pixels).unwrap();
        let grid = patchify(&img, 2).unwrap();
        assert_eq!((grid.grid_h(), grid.grid_w(), grid.dim()), (2, 2, 4));
        assert_eq!(grid.cell(0, 0), &[0.0, 1.0 / 16.0, 4.0 / 16.0, 5.0 / 16.0]);
    }

    #[test]
    fn whole_image_patch_gives_one_cell() {
        let img = random_image(4, 4, 1, 1);
        let grid = patchify(&img, 4).unwrap();
        assert_eq!((grid.grid_h(), grid.grid_w()), (1, 1));
        assert_eq!(grid.cell(0, 0), img.pixels());
    }

    #[test]
    fn patchify_round_trip_is_bit_exact() {
        let img = random_image(64, 64, 3, 2);
        let grid = patchify(&img, 8).unwrap();
        let back = unpatchify(&grid, 8, 3).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn patchify_rejects_indivisible_dims() {
        let img = random_image(6, 6, 1, 3);
        let err = patchify(&img, 4).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn block_transform_round_trip_and_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = LatentGrid::new(
            10,
            10,
            16,
            (0..1600).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let fwd = block_transform(&grid, Direction::Forward, 4, 1).unwrap();
        for (a, b) in grid.to_matrix().rows().into_iter().zip(fwd.to_matrix().rows()) {
            let na: f64 = a.iter().map(|v| v * v).sum();
            let nb: f64 = b.iter().map(|v| v * v).sum();
            assert!((na - nb).abs() < 1e-6, "energy drift {na} vs {nb}");
        }
        let back = block_transform(&fwd, Direction::Inverse, 4, 1).unwrap();
        let max_err = grid
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "round-trip error {max_err}");
    }

    #[test]
    fn block_transform_round_trip_many_random_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // 10^4 random cells in batches of 100.
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let grid = LatentGrid::new(
                10,
                10,
                4,
                (0..400).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let fwd = block_transform(&grid, Direction::Forward, 2, 1).unwrap();
            let back = block_transform(&fwd, Direction::Inverse, 2, 1).unwrap();
            for (a, b) in grid.values().iter().zip(back.values()) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-6, "worst round-trip error {worst}");
    }

    #[test]
    fn project_identity_and_scaling() {
        let grid = LatentGrid::new(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let eye = Array2::eye(3);
        assert_eq!(project(&grid, &eye).unwrap(), grid);
        let two = &eye * 2.0;
        let doubled = project(&grid, &two).unwrap();
        assert_eq!(doubled.values(), &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn project_matches_hand_matmul() {
        let grid = LatentGrid::new(1, 1, 2, vec![3.0, -1.0]).unwrap();
        let m = ndarray::array![[1.0, 0.5, 2.0], [-1.0, 1.0, 0.0]];
        let out = project(&grid, &m).unwrap();
        // (3, -1) * m = (3*1 + -1*-1, 3*0.5 + -1*1, 3*2 + 0)
        assert_eq!(out.values(), &[4.0, 0.5, 6.0]);
        assert!(matches!(
            project(&grid, &Array2::<f64>::eye(3)).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn resample_constant_grids() {
        let c = LatentGrid::new(4, 4, 2, vec![0.3; 32]).unwrap();
        let down = downsample2x(&c).unwrap();
        assert_eq!(down.values(), &[0.3; 8]);
        let up = upsample2x(&down);
        assert_eq!(up, c);
    }

    #[test]
    fn downsample_averages_and_upsample_duplicates() {
        let g = LatentGrid::new(2, 2, 1, vec![0.0, 0.0, 4.0, 4.0]).unwrap();
        let down = downsample2x(&g).unwrap();
        assert_eq!(down.values(), &[2.0]);
        let seven = LatentGrid::new(1, 1, 1, vec![7.0]).unwrap();
        let up = upsample2x(&seven);
        assert_eq!(up.values(), &[7.0; 4]);
        let odd = LatentGrid::new(3, 2, 1, vec![0.0; 6]).unwrap();
        assert!(downsample2x(&odd).is_err());
    }

    #[test]
    fn resample_adjoints_satisfy_inner_product_identity() {
        // <down(x), y> == <x, down_adj(y)> and likewise for upsampling.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((2 * 4 * 4, 3), |_| rng.random_range(-1.0..1.0f64));
        let y = Array2::from_shape_fn((2 * 2 * 2, 3), |_| rng.random_range(-1.0..1.0f64));
        let lhs = (&downsample_cells(&x, 2, 4, 4) * &y).sum();
        let rhs = (&x * &downsample_adjoint_cells(&y, 2, 4, 4)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let up_lhs = (&upsample_cells(&y, 2, 2, 2) * &x).sum();
        let up_rhs = (&y * &upsample_adjoint_cells(&x, 2, 2, 2)).sum();
        assert!((up_lhs - up_rhs).abs() < 1e-12);
    }
}
