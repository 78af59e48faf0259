//! Scalar helpers shared by scoring, ranking and metrics, generic over float width.

use num_traits::Float;

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<F: Float>(xs: &[F]) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(F::zero(), |acc, &x| acc + x);
    Some(sum / F::from(xs.len())?)
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std<F: Float>(xs: &[F]) -> F {
    if xs.len() < 2 {
        return F::zero();
    }
    let m = mean(xs).unwrap_or_else(F::zero);
    let ss = xs.iter().fold(F::zero(), |acc, &x| acc + (x - m) * (x - m));
    let denom = F::from(xs.len() - 1).unwrap_or_else(F::one);
    (ss / denom).sqrt()
}

/// Probability of the positive option renormalized over the two option tokens.
///
/// Returns `None` when the combined mass is below `min_mass`.
pub fn renormalized_score<F: Float>(p_pos: F, p_neg: F, min_mass: F) -> Option<F> {
    let total = p_pos + p_neg;
    if total.is_nan() || total < min_mass || total <= F::zero() {
        return None;
    }
    let s = p_pos / total;
    Some(s.max(F::zero()).min(F::one()))
}
