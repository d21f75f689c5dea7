//! Orthonormal 2-D type-II cosine basis for flattened patches.

use ndarray::Array2;

use crate::num::Scalar;

/// Diagonal (zigzag) scan of a `p x p` frequency grid, low frequencies
/// first. Used to order basis columns so truncation keeps the smoothest
/// components.
pub fn zigzag(p: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(p * p);
    for s in 0..(2 * p - 1) {
        let lo = s.saturating_sub(p - 1);
        let hi = s.min(p - 1);
        if s % 2 == 0 {
            for u in (lo..=hi).rev() {
                order.push((u, s - u));
            }
        } else {
            for u in lo..=hi {
                order.push((u, s - u));
            }
        }
    }
    order
}

/// Orthonormal cosine basis over flattened `p x p x channels` patches.
///
/// Returns an `F x F` matrix (`F = p^2 * channels`) whose columns are unit
/// basis vectors: column `z * channels + c` holds the 2-D cosine mode for
/// the `z`-th zigzag frequency on channel `c`, zero on other channels.
/// Patch layout is row-major `(row, col, channel)` to match `patchify`.
pub fn cosine_basis<T: Scalar>(p: usize, channels: usize) -> Array2<T> {
    let f = p * p * channels;
    let mut basis = Array2::<T>::zeros((f, f));
    let phi = |freq: usize, idx: usize| -> f64 {
        let scale = if freq == 0 { (1.0 / p as f64).sqrt() } else { (2.0 / p as f64).sqrt() };
        scale
            * (std::f64::consts::PI * (2.0 * idx as f64 + 1.0) * freq as f64 / (2.0 * p as f64))
                .cos()
    };
    for (z, &(u, v)) in zigzag(p).iter().enumerate() {
        for ch in 0..channels {
            let col = z * channels + ch;
            for r in 0..p {
                for c in 0..p {
                    let row = (r * p + c) * channels + ch;
                    basis[(row, col)] = T::from_config(phi(u, r) * phi(v, c));
                }
            }
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn zigzag_visits_every_frequency_once() {
        for p in [1usize, 2, 4, 8] {
            let mut seen = vec![false; p * p];
            for (u, v) in zigzag(p) {
                assert!(!seen[u * p + v]);
                seen[u * p + v] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
        assert_eq!(zigzag(3)[..4], [(0, 0), (0, 1), (1, 0), (2, 0)]);
    }

    #[test]
    fn basis_is_orthonormal() {
        for (p, ch) in [(2usize, 1usize), (4, 3), (8, 1)] {
            let b = cosine_basis::<f64>(p, ch);
            let gram = b.t().dot(&b);
            for i in 0..gram.nrows() {
                for j in 0..gram.ncols() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (gram[(i, j)] - expect).abs() < 1e-12,
                        "gram[{i},{j}] = {} for p={p} ch={ch}",
                        gram[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn constant_patch_has_only_a_dc_coefficient() {
        let p = 4;
        let b = cosine_basis::<f64>(p, 1);
        let cell = Array1::from_elem(p * p, 0.7);
        let coeffs = cell.dot(&b);
        // DC sits in column 0 (zigzag starts at (0,0)) and equals v * p.
        assert!((coeffs[0] - 0.7 * p as f64).abs() < 1e-12);
        for i in 1..coeffs.len() {
            assert!(coeffs[i].abs() < 1e-12, "AC coefficient {i} = {}", coeffs[i]);
        }
    }
}
