//! Scalar abstraction: the numeric core is generic over `f32`/`f64`.

use num_traits::FromPrimitive;

/// Floating-point scalar type for latents, codebooks, and codecs.
///
/// `NdFloat` brings the ndarray linear-algebra bounds; `FromPrimitive`
/// covers conversion from configuration values and integer counts.
pub trait Scalar: ndarray::NdFloat + FromPrimitive + Default + 'static {
    /// Convert an `f64` configuration value into this scalar.
    fn from_config(value: f64) -> Self {
        Self::from_f64(value).expect("config value representable as scalar")
    }

    /// Widen to `f64` for reporting.
    fn to_report(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// splitmix64 step, used to derive independent sub-seeds from a run seed.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for a labelled random stream.
pub fn subseed(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subseeds_differ_per_label() {
        let a = subseed(17, 0);
        let b = subseed(17, 1);
        assert_ne!(a, b);
        assert_eq!(a, subseed(17, 0));
    }
}
