//! Seeded rng plumbing and categorical draws shared by the samplers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Independent stream `stream` of the generator for `seed`.
///
/// Every pipeline stage draws from its own stream so stages can be re-run or
/// reordered without disturbing each other's randomness.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw an index proportionally to `exp(logw)` with a max shift.
///
/// Returns `None` when every weight is `-inf` or non-finite.
pub fn sample_from_log_weights(logw: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let max = logw.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let weights: Vec<f64> = logw
        .iter()
        .map(|&v| if v.is_finite() { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return Some(i);
        }
    }
    Some(weights.len() - 1)
}
