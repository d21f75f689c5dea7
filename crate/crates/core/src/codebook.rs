//! Codebook ownership: nearest-neighbor assignment, EMA updates,
//! data-driven initialization, dead-code detection and reset, and the
//! commitment loss.
//!
//! Assignment is exhaustive squared-Euclidean search with ties broken by
//! the lowest code index; the kernel accumulates distances in index order
//! so results match a plain double-loop search bit for bit.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::io::bin::{write_f32, write_f32_slice, write_u32, write_u64, BinReader};
use crate::num::Scalar;

pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_SMOOTHING_EPS: f64 = 1e-5;
/// Number of recent encoder outputs averaged into a reset code vector.
pub const DEFAULT_RESET_SAMPLE_SIZE: usize = 8;
/// Jitter scale, as a fraction of the per-dimension standard deviation.
const JITTER_FRACTION: f64 = 0.01;

const CODEBOOK_MAGIC: &[u8; 4] = b"VQFC";
const CODEBOOK_VERSION: u32 = 1;

/// A learned dictionary of `K` prototype vectors in `R^D`, together with
/// the exponential-moving-average statistics that maintain it.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    entries: Array2<T>,
    ema_counts: Array1<T>,
    ema_sums: Array2<T>,
    decay: T,
    smoothing_eps: T,
}

impl<T: Scalar> Codebook<T> {
    /// Build a codebook from explicit entries. EMA counts start at one and
    /// sums at the entries themselves so the first update is well-posed.
    pub fn new(entries: Array2<T>, decay: T, smoothing_eps: T) -> Result<Self> {
        let counts = Array1::ones(entries.nrows());
        let sums = entries.clone();
        Self::with_stats(entries, counts, sums, decay, smoothing_eps)
    }

    /// Build from full statistics (checkpoint restore).
    pub fn with_stats(
        entries: Array2<T>,
        ema_counts: Array1<T>,
        ema_sums: Array2<T>,
        decay: T,
        smoothing_eps: T,
    ) -> Result<Self> {
        let (k, d) = entries.dim();
        if k == 0 || d == 0 {
            return Err(Error::InvalidInput("codebook needs K >= 1 and D >= 1".into()));
        }
        if ema_counts.len() != k || ema_sums.dim() != (k, d) {
            return Err(Error::Contract(format!(
                "EMA statistics shapes do not match {k}x{d} entries"
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) || ema_sums.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("codebook entries must be finite".into()));
        }
        if ema_counts.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidInput("EMA counts must be finite and non-negative".into()));
        }
        if !(decay > T::zero() && decay < T::one()) {
            return Err(Error::InvalidInput(format!("decay must lie in (0,1), got {decay}")));
        }
        if !(smoothing_eps > T::zero()) {
            return Err(Error::InvalidInput("smoothing_eps must be positive".into()));
        }
        Ok(Self { entries, ema_counts, ema_sums, decay, smoothing_eps })
    }

    /// Initialize from data: a uniform random subset of `k` distinct sample
    /// rows when enough samples exist, otherwise all samples plus jittered
    /// re-draws. Deterministic given `seed`.
    pub fn init_from_samples(
        samples: ArrayView2<T>,
        k: usize,
        decay: T,
        smoothing_eps: T,
        seed: u64,
    ) -> Result<Self> {
        let m = samples.nrows();
        let d = samples.ncols();
        if m == 0 {
            return Err(Error::InvalidInput("init_from_samples needs at least one sample".into()));
        }
        if k == 0 {
            return Err(Error::InvalidInput("codebook needs K >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Array2::zeros((k, d));
        if m >= k {
            let picks = rand::seq::index::sample(&mut rng, m, k);
            for (row, src) in picks.iter().enumerate() {
                entries.row_mut(row).assign(&samples.row(src));
            }
        } else {
            let sigma = column_std(&samples, JITTER_FRACTION);
            for row in 0..k {
                if row < m {
                    entries.row_mut(row).assign(&samples.row(row));
                } else {
                    let src = rng.random_range(0..m);
                    for (j, e) in entries.row_mut(row).iter_mut().enumerate() {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        *e = samples[(src, j)] + sigma[j] * T::from_config(noise);
                    }
                }
            }
        }
        Self::new(entries, decay, smoothing_eps)
    }

    pub fn num_codes(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> ArrayView2<'_, T> {
        self.entries.view()
    }

    pub fn entry(&self, k: usize) -> ArrayView1<'_, T> {
        self.entries.row(k)
    }

    pub fn ema_counts(&self) -> ArrayView1<'_, T> {
        self.ema_counts.view()
    }

    pub fn decay(&self) -> T {
        self.decay
    }

    pub fn smoothing_eps(&self) -> T {
        self.smoothing_eps
    }

    /// One EMA maintenance step from a batch and its assignment.
    ///
    /// Counts and sums decay toward the batch statistics; entries are then
    /// recomputed as smoothed means, with Laplace smoothing of the counts
    /// renormalized to preserve total mass. Codes missing from the batch
    /// still decay.
    pub fn ema_update(
        &mut self,
        vectors: ArrayView2<T>,
        assignment: &AssignmentResult<T>,
    ) -> Result<()> {
        let n = vectors.nrows();
        let (k, d) = self.entries.dim();
        if assignment.indices.len() != n {
            return Err(Error::Contract(format!(
                "assignment covers {} rows but batch has {n}",
                assignment.indices.len()
            )));
        }
        if vectors.ncols() != d {
            return Err(Error::Contract(format!(
                "batch dimension {} does not match codebook D={d}",
                vectors.ncols()
            )));
        }
        let mut batch_counts = vec![0usize; k];
        let mut batch_sums: Array2<T> = Array2::zeros((k, d));
        for (row, &code) in assignment.indices.iter().enumerate() {
            if code >= k {
                return Err(Error::Contract(format!("assignment index {code} out of range")));
            }
            batch_counts[code] += 1;
            let mut sum_row = batch_sums.row_mut(code);
            sum_row += &vectors.row(row);
        }
        let decay = self.decay;
        let blend = T::one() - decay;
        for code in 0..k {
            let bc = T::from_usize(batch_counts[code]).expect("count fits scalar");
            self.ema_counts[code] = decay * self.ema_counts[code] + blend * bc;
            let mut sums = self.ema_sums.row_mut(code);
            sums.zip_mut_with(&batch_sums.row(code), |s, &b| *s = decay * *s + blend * b);
        }
        let total = self.ema_counts.sum();
        if total > T::zero() {
            let k_eps = T::from_usize(k).expect("K fits scalar") * self.smoothing_eps;
            for code in 0..k {
                let smoothed = (self.ema_counts[code] + self.smoothing_eps) / (total + k_eps) * total;
                let sums = self.ema_sums.row(code);
                let mut entry = self.entries.row_mut(code);
                entry.zip_mut_with(&sums, |e, &s| *e = s / smoothed);
            }
        }
        Ok(())
    }

    /// Replace dead codes with jittered means of random recent encoder
    /// outputs, resetting their EMA statistics. Live codes are untouched.
    /// Returns the number of codes replaced.
    pub fn reset_dead_codes(
        &mut self,
        dead: &[usize],
        recent_outputs: ArrayView2<T>,
        sample_size: usize,
        seed: u64,
    ) -> Result<usize> {
        if dead.is_empty() {
            return Ok(0);
        }
        let r = recent_outputs.nrows();
        let (k, d) = self.entries.dim();
        if r == 0 {
            return Err(Error::InvalidInput("reset needs at least one recent output".into()));
        }
        if recent_outputs.ncols() != d {
            return Err(Error::Contract(format!(
                "recent outputs dimension {} does not match codebook D={d}",
                recent_outputs.ncols()
            )));
        }
        if let Some(&bad) = dead.iter().find(|&&c| c >= k) {
            return Err(Error::Contract(format!("dead code index {bad} out of range")));
        }
        if sample_size == 0 {
            return Err(Error::InvalidInput("reset sample size must be positive".into()));
        }
        let mut order: Vec<usize> = dead.to_vec();
        order.sort_unstable();
        order.dedup();

        let sigma = column_std(&recent_outputs, JITTER_FRACTION);
        let take = sample_size.min(r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = T::from_usize(take).expect("sample size fits scalar");
        for &code in &order {
            let picks = rand::seq::index::sample(&mut rng, r, take);
            let mut mean = Array1::<T>::zeros(d);
            for src in picks.iter() {
                mean += &recent_outputs.row(src);
            }
            mean.mapv_inplace(|v| v / scale);
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                mean[j] = mean[j] + sigma[j] * T::from_config(noise);
            }
            self.entries.row_mut(code).assign(&mean);
            self.ema_counts[code] = T::one();
            self.ema_sums.row_mut(code).assign(&mean);
        }
        Ok(order.len())
    }

    /// Serialize as a "VQFC" checkpoint (little-endian f32 payload).
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CODEBOOK_MAGIC)?;
        write_u32(w, CODEBOOK_VERSION)?;
        let (k, d) = self.entries.dim();
        write_u64(w, k as u64)?;
        write_u64(w, d as u64)?;
        let to_f32 = |v: &T| v.to_f32().expect("scalar narrows to f32");
        write_f32_slice(w, &self.entries.iter().map(to_f32).collect::<Vec<_>>())?;
        write_f32_slice(w, &self.ema_counts.iter().map(to_f32).collect::<Vec<_>>())?;
        write_f32_slice(w, &self.ema_sums.iter().map(to_f32).collect::<Vec<_>>())?;
        write_f32(w, to_f32(&self.decay))?;
        write_f32(w, to_f32(&self.smoothing_eps))?;
        Ok(())
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.save(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Restore from a "VQFC" checkpoint.
    pub fn load<R: Read>(r: &mut BinReader<R>) -> Result<Self> {
        r.expect_magic(CODEBOOK_MAGIC)?;
        let version = r.read_u32()?;
        if version != CODEBOOK_VERSION {
            return Err(r.fail(format!("unsupported codebook version {version}")));
        }
        let k = r.read_dim("codebook size")?;
        let d = r.read_dim("code dimension")?;
        if k == 0 || d == 0 || k.checked_mul(d).is_none() {
            return Err(r.fail(format!("bad codebook shape {k}x{d}")));
        }
        let from = |v: f32| T::from_f32(v).expect("f32 widens to scalar");
        let entries = r.read_f32_vec(k * d)?;
        let counts = r.read_f32_vec(k)?;
        let sums = r.read_f32_vec(k * d)?;
        let decay = from(r.read_f32()?);
        let eps = from(r.read_f32()?);
        let entries = Array2::from_shape_vec((k, d), entries.into_iter().map(from).collect())
            .expect("length checked");
        let counts = Array1::from_vec(counts.into_iter().map(from).collect());
        let sums = Array2::from_shape_vec((k, d), sums.into_iter().map(from).collect())
            .expect("length checked");
        Self::with_stats(entries, counts, sums, decay, eps)
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BinReader::new(std::io::BufReader::new(file));
        let cb = Self::load(&mut r)?;
        r.expect_eof()?;
        Ok(cb)
    }
}

/// Per-dimension population standard deviation, scaled by `fraction`.
fn column_std<T: Scalar>(rows: &ArrayView2<T>, fraction: f64) -> Vec<T> {
    let n = T::from_usize(rows.nrows()).expect("row count fits scalar");
    let frac = T::from_config(fraction);
    rows.axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / n;
            let var = col.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
            frac * var.sqrt()
        })
        .collect()
}

/// The result of assigning a batch of vectors to their nearest codes.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult<T> {
    /// Chosen code index per input row.
    pub indices: Vec<usize>,
    /// Selected codebook rows, bit-identical to the entries at assignment time.
    pub quantized: Array2<T>,
    /// Squared Euclidean distance to the chosen code, per input row.
    pub distances: Vec<T>,
}

impl<T: Scalar> AssignmentResult<T> {
    /// Per-code assignment counts over this batch.
    pub fn counts(&self, num_codes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_codes];
        for &idx in &self.indices {
            counts[idx] += 1;
        }
        counts
    }
}

/// Map each row of `vectors` to its nearest code by squared Euclidean
/// distance; ties go to the lowest code index.
pub fn nearest_assign<T: Scalar>(
    vectors: ArrayView2<T>,
    codebook: &Codebook<T>,
) -> Result<AssignmentResult<T>> {
    let d = codebook.dim();
    if vectors.ncols() != d {
        return Err(Error::Contract(format!(
            "input dimension {} does not match codebook D={d}",
            vectors.ncols()
        )));
    }
    for (row, r) in vectors.axis_iter(Axis(0)).enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value in input row {row}")));
        }
    }
    let entries = codebook.entries.as_slice().expect("entries are standard layout");
    let n = vectors.nrows();
    let mut rows_buf;
    let flat: &[T] = match vectors.as_slice() {
        Some(s) => s,
        None => {
            rows_buf = Vec::with_capacity(n * d);
            for r in vectors.axis_iter(Axis(0)) {
                rows_buf.extend(r.iter().copied());
            }
            &rows_buf
        }
    };
    let found: Vec<(usize, T)> = flat
        .par_chunks_exact(d.max(1))
        .map(|x| nearest_one(x, entries, d))
        .collect();

    let mut indices = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    let mut quantized = Array2::zeros((n, d));
    for (row, (idx, dist)) in found.into_iter().enumerate() {
        indices.push(idx);
        distances.push(dist);
        quantized.row_mut(row).assign(&codebook.entries.row(idx));
    }
    Ok(AssignmentResult { indices, quantized, distances })
}

/// Exhaustive scan over all codes, accumulating in index order. Partial
/// sums only grow, so a partial sum beyond the current best can be
/// abandoned without changing the argmin or the tie-break.
fn nearest_one<T: Scalar>(x: &[T], entries: &[T], d: usize) -> (usize, T) {
    let mut best_idx = 0usize;
    let mut best = T::infinity();
    for (k, code) in entries.chunks_exact(d).enumerate() {
        let mut acc = T::zero();
        for i in 0..d {
            let diff = x[i] - code[i];
            acc = acc + diff * diff;
            if acc > best {
                break;
            }
        }
        if acc < best {
            best = acc;
            best_idx = k;
        }
    }
    (best_idx, best)
}

/// Commitment penalty pulling encoder outputs toward their assigned codes:
/// `beta` times the mean squared difference over all cells and channels.
pub fn commitment_loss<T: Scalar>(
    encoder_out: &LatentGrid<T>,
    quantized: &LatentGrid<T>,
    beta: T,
) -> Result<T> {
    if encoder_out.grid_h() != quantized.grid_h()
        || encoder_out.grid_w() != quantized.grid_w()
        || encoder_out.dim() != quantized.dim()
    {
        return Err(Error::Contract(format!(
            "latent shapes differ: {}x{}x{} vs {}x{}x{}",
            encoder_out.grid_h(),
            encoder_out.grid_w(),
            encoder_out.dim(),
            quantized.grid_h(),
            quantized.grid_w(),
            quantized.dim()
        )));
    }
    Ok(beta * mean_sq_diff(encoder_out.values(), quantized.values()))
}

pub(crate) fn mean_sq_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = T::from_usize(a.len()).expect("length fits scalar");
    let sum = a
        .iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    sum / n
}

/// Sliding window of per-batch assignment counts used to detect codes that
/// receive too few assignments.
#[derive(Debug, Clone)]
pub struct UsageWindow {
    num_codes: usize,
    window_len: usize,
    threshold: u64,
    batches: VecDeque<Vec<u64>>,
}

impl UsageWindow {
    pub fn new(num_codes: usize, window_len: usize, threshold: u64) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::InvalidInput("window length must be positive".into()));
        }
        if num_codes == 0 {
            return Err(Error::InvalidInput("usage window needs at least one code".into()));
        }
        Ok(Self { num_codes, window_len, threshold, batches: VecDeque::new() })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Detection only fires once the window holds `window_len` batches.
    pub fn is_armed(&self) -> bool {
        self.batches.len() >= self.window_len
    }

    pub fn push(&mut self, counts: Vec<u64>) -> Result<()> {
        if counts.len() != self.num_codes {
            return Err(Error::Contract(format!(
                "count vector length {} does not match K={}",
                counts.len(),
                self.num_codes
            )));
        }
        self.batches.push_back(counts);
        while self.batches.len() > self.window_len {
            self.batches.pop_front();
        }
        Ok(())
    }

    /// Total per-code counts over the buffered batches.
    pub fn aggregate(&self) -> Vec<u64> {
        let mut agg = vec![0u64; self.num_codes];
        for batch in &self.batches {
            for (a, &c) in agg.iter_mut().zip(batch) {
                *a += c;
            }
        }
        agg
    }

    /// Codes whose aggregate count over a full window is below the
    /// threshold, in ascending order. Empty when the window is not armed.
    pub fn detect_dead(&self) -> Result<Vec<usize>> {
        if self.batches.is_empty() {
            return Err(Error::Contract("dead-code detection on an empty window".into()));
        }
        if !self.is_armed() {
            return Ok(Vec::new());
        }
        Ok(self
            .aggregate()
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c < self.threshold)
            .map(|(k, _)| k)
            .collect())
    }

    /// Drop all buffered batches (used to re-arm detection after a reset).
    pub fn clear(&mut self) {
        self.batches.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn book(entries: Array2<f64>) -> Codebook<f64> {
        Codebook::new(entries, 0.99, 1e-5).unwrap()
    }

    #[test]
    fn nearest_assign_matches_hand_example() {
        let cb = book(array![[0.0, 0.0], [1.0, 1.0]]);
        let out = nearest_assign(array![[0.2, 0.1]].view(), &cb).unwrap();
        assert_eq!(out.indices, vec![0]);
        assert_eq!(out.quantized.row(0).to_vec(), vec![0.0, 0.0]);
        assert_abs_diff_eq!(out.distances[0], 0.05, epsilon = 1e-12);
    }

    #[test]
    fn exact_code_hit_has_zero_distance() {
        let cb = book(array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 7.0]]);
        let out = nearest_assign(array![[3.0, 7.0]].view(), &cb).unwrap();
        assert_eq!(out.indices, vec![3]);
        assert_eq!(out.distances[0], 0.0);
    }

    #[test]
    fn equidistant_tie_goes_to_lower_index() {
        let cb = book(array![[5.0, 5.0], [-1.0, 0.0], [1.0, 0.0]]);
        let out = nearest_assign(array![[0.0, 0.0]].view(), &cb).unwrap();
        assert_eq!(out.indices, vec![1]);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let cb = book(array![[0.0, 0.0]]);
        let err = nearest_assign(array![[0.0, 0.0, 0.0]].view(), &cb).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn non_finite_input_names_the_row() {
        let cb = book(array![[0.0, 0.0]]);
        let err = nearest_assign(array![[0.0, 0.0], [f64::NAN, 0.0]].view(), &cb).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn zero_decay_update_reduces_to_batch_means() {
        let mut cb = Codebook::new(array![[0.0, 0.0], [10.0, 10.0]], 1e-12, 1e-12).unwrap();
        let batch = array![[1.0, 2.0], [3.0, 2.0], [9.0, 9.0]];
        let assign = nearest_assign(batch.view(), &cb).unwrap();
        assert_eq!(assign.indices, vec![0, 0, 1]);
        cb.ema_update(batch.view(), &assign).unwrap();
        assert_abs_diff_eq!(cb.entry(0)[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(cb.entry(0)[1], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(cb.entry(1)[0], 9.0, epsilon = 1e-6);
    }

    #[test]
    fn unassigned_code_decays_counts_but_keeps_entry() {
        let mut cb = Codebook::new(array![[0.0, 0.0], [4.0, 4.0]], 0.99, 1e-9).unwrap();
        let batch = array![[0.1, 0.0]];
        let assign = nearest_assign(batch.view(), &cb).unwrap();
        let before_count = cb.ema_counts()[1];
        cb.ema_update(batch.view(), &assign).unwrap();
        assert_abs_diff_eq!(cb.ema_counts()[1], 0.99 * before_count, epsilon = 1e-12);
        assert_abs_diff_eq!(cb.entry(1)[0], 4.0, epsilon = 1e-6);
        assert_abs_diff_eq!(cb.entry(1)[1], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn repeated_batches_converge_geometrically_to_cluster_means() {
        // Two fixed clusters; assignments never change. Entries must follow
        // the closed-form geometric series and converge to cluster means.
        let decay = 0.9;
        let mut cb = Codebook::new(array![[0.0, 0.0], [8.0, 8.0]], decay, 1e-9).unwrap();
        let batch = array![[1.0, 1.0], [3.0, 1.0], [7.0, 9.0], [9.0, 7.0]];
        let mut prev_err = f64::INFINITY;
        for t in 1..=300usize {
            let assign = nearest_assign(batch.view(), &cb).unwrap();
            assert_eq!(assign.indices, vec![0, 0, 1, 1]);
            cb.ema_update(batch.view(), &assign).unwrap();
            if t <= 5 {
                // Closed form: counts_t = decay^t * 1 + (1 - decay^t) * n_k,
                // sums_t likewise toward the per-cluster batch sums.
                let dk = decay.powi(t as i32);
                let count_expect = dk * 1.0 + (1.0 - dk) * 2.0;
                let sum0_expect = dk * 0.0 + (1.0 - dk) * 4.0;
                let total = 2.0 * count_expect;
                let smoothed = (count_expect + 1e-9) / (total + 2e-9) * total;
                assert_abs_diff_eq!(cb.entry(0)[0], sum0_expect / smoothed, epsilon = 1e-9);
            }
            let err = (cb.entry(0)[0] - 2.0).abs();
            assert!(err <= prev_err + 1e-12, "not monotone at step {t}");
            prev_err = err;
        }
        assert_abs_diff_eq!(cb.entry(0)[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(cb.entry(1)[1], 8.0, epsilon = 1e-6);
    }

    #[test]
    fn init_with_m_equal_k_permutes_samples() {
        let samples = array![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]];
        let cb = Codebook::<f64>::init_from_samples(samples.view(), 3, 0.99, 1e-5, 7).unwrap();
        let mut rows: Vec<Vec<f64>> =
            (0..3).map(|k| cb.entry(k).to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let samples = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j) % 11) as f64);
        let a = Codebook::<f64>::init_from_samples(samples.view(), 8, 0.99, 1e-5, 5).unwrap();
        let b = Codebook::<f64>::init_from_samples(samples.view(), 8, 0.99, 1e-5, 5).unwrap();
        assert_eq!(a, b);
        let c = Codebook::<f64>::init_from_samples(samples.view(), 8, 0.99, 1e-5, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_entries_are_sample_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = Array2::from_shape_fn((1000, 4), |_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let cb = Codebook::<f64>::init_from_samples(samples.view(), 64, 0.99, 1e-5, 11).unwrap();
        for k in 0..64 {
            let row = cb.entry(k);
            let found = samples
                .axis_iter(Axis(0))
                .any(|s| s.iter().zip(row.iter()).all(|(a, b)| a == b));
            assert!(found, "entry {k} is not a sample row");
        }
    }

    #[test]
    fn init_rejects_empty_samples() {
        let samples = Array2::<f64>::zeros((0, 4));
        let err =
            Codebook::<f64>::init_from_samples(samples.view(), 4, 0.99, 1e-5, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn detection_requires_full_window() {
        let mut w = UsageWindow::new(4, 10, 2).unwrap();
        assert!(w.detect_dead().is_err());
        for _ in 0..3 {
            w.push(vec![0, 5, 5, 5]).unwrap();
        }
        assert_eq!(w.detect_dead().unwrap(), Vec::<usize>::new());
        for _ in 0..7 {
            w.push(vec![0, 5, 5, 5]).unwrap();
        }
        assert!(w.is_armed());
        assert_eq!(w.detect_dead().unwrap(), vec![0]);
    }

    #[test]
    fn code_seen_once_in_window_is_dead_at_threshold_two() {
        let mut w = UsageWindow::new(2, 10, 2).unwrap();
        for i in 0..10 {
            w.push(vec![u64::from(i == 4), 10]).unwrap();
        }
        assert_eq!(w.detect_dead().unwrap(), vec![0]);
    }

    #[test]
    fn all_codes_at_threshold_are_alive() {
        let mut w = UsageWindow::new(3, 5, 2).unwrap();
        for _ in 0..5 {
            w.push(vec![1, 2, 3]).unwrap();
        }
        assert_eq!(w.detect_dead().unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn lowering_threshold_never_enlarges_dead_set() {
        let mut hi = UsageWindow::new(5, 3, 4).unwrap();
        let mut lo = UsageWindow::new(5, 3, 2).unwrap();
        let batches = [vec![0, 1, 2, 3, 4], vec![1, 0, 0, 2, 4], vec![0, 0, 1, 3, 0]];
        for b in &batches {
            hi.push(b.clone()).unwrap();
            lo.push(b.clone()).unwrap();
        }
        let dead_hi = hi.detect_dead().unwrap();
        let dead_lo = lo.detect_dead().unwrap();
        for k in &dead_lo {
            assert!(dead_hi.contains(k));
        }
    }

    #[test]
    fn empty_dead_set_is_a_no_op() {
        let mut cb = book(array![[0.0, 0.0], [1.0, 1.0]]);
        let before = cb.clone();
        let n = cb
            .reset_dead_codes(&[], Array2::<f64>::zeros((0, 2)).view(), 8, 0)
            .unwrap();
        assert_eq!(n, 0);
        assert_eq!(cb, before);
    }

    #[test]
    fn reset_with_constant_outputs_lands_on_the_constant() {
        let mut cb = book(array![[0.0, 0.0], [9.0, 9.0]]);
        let recent = Array2::from_elem((20, 2), 3.5);
        // Constant outputs have zero per-dimension std, so jitter is zero.
        cb.reset_dead_codes(&[1], recent.view(), 8, 42).unwrap();
        assert_eq!(cb.entry(1).to_vec(), vec![3.5, 3.5]);
        assert_eq!(cb.ema_counts()[1], 1.0);
        assert_eq!(cb.entry(0).to_vec(), vec![0.0, 0.0], "live code untouched");
    }

    #[test]
    fn reset_requires_recent_outputs() {
        let mut cb = book(array![[0.0, 0.0]]);
        let err = cb
            .reset_dead_codes(&[0], Array2::<f64>::zeros((0, 2)).view(), 8, 0)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn reset_codes_attract_assignments() {
        // After resetting dead codes onto recent outputs, the next pass over
        // those outputs should hit a reset code nearly always.
        let mut successes = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let recent = Array2::from_shape_fn((64, 3), |_| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
            // All mass far away so every recent vector initially maps to code 0.
            let mut cb = book(Array2::from_elem((8, 3), 100.0));
            cb.reset_dead_codes(&[1, 2, 3, 4, 5, 6, 7], recent.view(), 8, seed).unwrap();
            let assign = nearest_assign(recent.view(), &cb).unwrap();
            if assign.indices.iter().any(|&k| k > 0) {
                successes += 1;
            }
        }
        assert!(successes >= 95, "reset codes attracted assignments in {successes}/100 seeds");
    }

    #[test]
    fn commitment_loss_examples() {
        let a = LatentGrid::new(2, 2, 2, vec![1.0; 8]).unwrap();
        let b = LatentGrid::new(2, 2, 2, vec![0.0; 8]).unwrap();
        assert_eq!(commitment_loss(&a, &a, 0.25).unwrap(), 0.0);
        assert_eq!(commitment_loss(&a, &b, 0.0).unwrap(), 0.0);
        // All-ones difference over 8 elements, mean normalization.
        assert_abs_diff_eq!(commitment_loss(&a, &b, 0.25).unwrap(), 0.25, epsilon = 1e-12);
        let c = LatentGrid::new(1, 2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(commitment_loss(&a, &c, 1.0).unwrap_err(), Error::Contract(_)));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut cb = Codebook::<f32>::new(
            Array2::from_shape_fn((5, 3), |(i, j)| (i as f32 * 0.37 - j as f32 * 1.21).sin()),
            0.99,
            1e-5,
        )
        .unwrap();
        let batch = Array2::from_shape_fn((7, 3), |(i, j)| ((i + j) as f32 * 0.11).cos());
        let assign = nearest_assign(batch.view(), &cb).unwrap();
        cb.ema_update(batch.view(), &assign).unwrap();

        let mut buf = Vec::new();
        cb.save(&mut buf).unwrap();
        let mut r = BinReader::new(&buf[..]);
        let cb2 = Codebook::<f32>::load(&mut r).unwrap();
        r.expect_eof().unwrap();
        assert_eq!(cb, cb2);
        let mut buf2 = Vec::new();
        cb2.save(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }
}
