//! Robust statistics: median/MAD depth-consistency filtering and the Wilson bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFilterParams<T: Real> {
    /// MAD multiplier.
    pub k: T,
    /// Threshold floor in metres.
    pub tau_min: T,
}

impl<T: Real> Default for DepthFilterParams<T> {
    fn default() -> Self {
        DepthFilterParams {
            k: T::lit(3.0),
            tau_min: T::lit(0.05),
        }
    }
}

impl<T: Real> DepthFilterParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > T::zero() && self.tau_min > T::zero()) {
            return Err(Error::Validation(format!(
                "depth filter needs k > 0 and tau_min > 0 (k={}, tau_min={})",
                self.k, self.tau_min
            )));
        }
        Ok(())
    }
}

/// Median of a slice (mean of the two central values for even lengths).
///
/// Reorders `values`. Returns `None` when empty.
pub fn median_in_place<T: Real>(values: &mut [T]) -> Option<T> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, |a, b| a.total_order(*b));
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let below = lower
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| a.max(b));
        Some((below + upper) * T::half())
    }
}

/// Per-frame statistics of a residual set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats<T: Real> {
    pub median: T,
    pub mad: T,
    /// `max(tau_min, k · MAD)`.
    pub threshold: T,
}

impl<T: Real> ResidualStats<T> {
    pub fn fit(residuals: impl Iterator<Item = T>, params: &DepthFilterParams<T>) -> Option<Self> {
        let mut r: Vec<T> = residuals.collect();
        let median = median_in_place(&mut r)?;
        for x in r.iter_mut() {
            *x = (*x - median).abs();
        }
        let mad = median_in_place(&mut r)?;
        Some(ResidualStats {
            median,
            mad,
            threshold: params.tau_min.max(params.k * mad),
        })
    }

    #[inline]
    pub fn retains(&self, residual: T) -> bool {
        (residual - self.median).abs() < self.threshold
    }
}

/// Keeps the point indices whose residual lies strictly within the adaptive
/// MAD threshold of the median. Output follows input order.
pub fn depth_consistency_filter<T: Real>(
    residuals: &[(usize, T)],
    params: &DepthFilterParams<T>,
) -> Vec<usize> {
    match ResidualStats::fit(residuals.iter().map(|r| r.1), params) {
        None => Vec::new(),
        Some(stats) => residuals
            .iter()
            .filter(|(_, r)| stats.retains(*r))
            .map(|(i, _)| *i)
            .collect(),
    }
}

/// Lower bound of the Wilson score interval for `successes` out of `trials`.
pub fn wilson_lower_bound<T: Real>(successes: u64, trials: u64, z: T) -> Result<T> {
    if trials == 0 {
        return Err(Error::Contract("Wilson bound needs at least one trial".into()));
    }
    if successes > trials {
        return Err(Error::Contract(format!(
            "successes {successes} exceed trials {trials}"
        )));
    }
    if successes == 0 {
        return Ok(T::zero());
    }
    let n = T::from_u64(trials).unwrap();
    let p = T::from_u64(successes).unwrap() / n;
    let z2 = z * z;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let centre = p + z2 / (two * n);
    let spread = z * (p * (T::one() - p) / n + z2 / (four * n * n)).sqrt();
    Ok(((centre - spread) / (T::one() + z2 / n)).max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filter(values: &[f64]) -> Vec<usize> {
        let r: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
        depth_consistency_filter(&r, &DepthFilterParams::default())
    }

    #[test]
    fn degenerate_mad_uses_floor() {
        assert_eq!(filter(&[0.01, 0.01, 0.01]), vec![0, 1, 2]);
    }

    #[test]
    fn single_outlier_is_rejected() {
        assert_eq!(filter(&[0.0, 0.0, 0.0, 0.0, 1.0]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn mad_scaled_threshold() {
        let r: Vec<(usize, f64)> = [0.10, 0.12, 0.14, 0.50].into_iter().enumerate().collect();
        let stats = ResidualStats::fit(r.iter().map(|x| x.1), &DepthFilterParams::default()).unwrap();
        assert!((stats.median - 0.13).abs() < 1e-12);
        assert!((stats.mad - 0.02).abs() < 1e-12);
        assert!((stats.threshold - 0.06).abs() < 1e-12);
        assert_eq!(filter(&[0.10, 0.12, 0.14, 0.50]), vec![0, 1, 2]);
    }

    #[test]
    fn empty_input_retains_nothing() {
        assert!(filter(&[]).is_empty());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median_in_place(&mut [3.0f32, 1.0, 2.0]), Some(2.0));
        assert_eq!(median_in_place(&mut [4.0f64, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median_in_place::<f64>(&mut []), None);
    }

    #[test]
    fn wilson_reference_values() {
        assert_eq!(wilson_lower_bound(0, 7, 1.96f64).unwrap(), 0.0);
        let w = wilson_lower_bound(3, 4, 1.96f64).unwrap();
        assert!((w - 0.3006).abs() < 1e-4, "{w}");
        assert!(wilson_lower_bound(1_000_000, 1_000_000, 1.96f64).unwrap() > 0.999);
        assert!(matches!(wilson_lower_bound(0, 0, 1.96f64), Err(Error::Contract(_))));
    }
}
