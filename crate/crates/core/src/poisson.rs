//! Truncated Poisson weights for mixtures over event counts.

use crate::tolerances::TOLERANCES;
use statrs::function::gamma::ln_gamma;

/// Poisson(mean) probabilities on the window `start..start + weights.len()`.
///
/// The window is cut at the smallest upper index whose remaining tail mass is
/// below [`TOLERANCES.poisson_tail`](crate::tolerances::Tolerances::poisson_tail),
/// and never extends past `poisson_cap_factor * (mean + 10)`. Lower terms are
/// dropped only while their cumulative mass stays below `1e-18`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonWeights {
    pub start: usize,
    pub weights: Vec<f64>,
}

impl PoissonWeights {
    pub fn new(mean: f64) -> Self {
        assert!(mean.is_finite() && mean >= 0.0, "Poisson mean must be finite and non-negative");
        if mean == 0.0 {
            return Self { start: 0, weights: vec![1.0] };
        }
        let cap = (TOLERANCES.poisson_cap_factor * (mean + 10.0)).floor() as usize;
        let mode = (mean.floor() as usize).min(cap);

        // Unnormalised weights relative to the mode via the exact ratio recursion.
        const NEGLIGIBLE: f64 = 1e-32;
        let mut below = Vec::new();
        let mut w = 1.0;
        let mut m = mode;
        while m > 0 {
            w *= m as f64 / mean;
            m -= 1;
            if w < NEGLIGIBLE {
                break;
            }
            below.push(w);
        }
        let lo = mode - below.len();
        let mut weights: Vec<f64> = below.into_iter().rev().collect();
        weights.push(1.0);
        let mut w = 1.0;
        let mut m = mode;
        while m < cap {
            w *= mean / (m + 1) as f64;
            m += 1;
            if w < NEGLIGIBLE && m as f64 > mean {
                break;
            }
            weights.push(w);
        }

        // The window reaches terms 32 orders below the mode on both sides, so its
        // sum is the full mass to rounding.
        let scale = 1.0 / weights.iter().sum::<f64>();
        for w in &mut weights {
            *w *= scale;
        }

        // Upper truncation at the tail threshold.
        let mut tail: f64 = 0.0;
        let mut keep = weights.len();
        for (i, w) in weights.iter().enumerate().rev() {
            if tail + w >= TOLERANCES.poisson_tail {
                keep = i + 1;
                break;
            }
            tail += w;
        }
        weights.truncate(keep.max(1));

        // Lower truncation.
        let mut drop = 0;
        let mut mass = 0.0;
        for w in &weights {
            if mass + w >= 1e-18 {
                break;
            }
            mass += w;
            drop += 1;
        }
        weights.drain(..drop);
        Self { start: lo + drop, weights }
    }

    /// One past the largest count with non-zero weight.
    pub fn end(&self) -> usize {
        self.start + self.weights.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().enumerate().map(move |(i, &w)| (self.start + i, w))
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Poisson probability mass, evaluated in log space.
pub fn poisson_pmf(mean: f64, k: u64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * mean.ln() - mean - ln_gamma(k as f64 + 1.0)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mean_is_point_mass() {
        let w = PoissonWeights::new(0.0);
        assert_eq!(w.start, 0);
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn weights_match_pmf_and_cover_mass() {
        for &mean in &[0.3, 1.0, 7.5, 42.0, 900.0, 25_000.0] {
            let w = PoissonWeights::new(mean);
            assert!((1.0 - w.total()).abs() < 1e-11, "mean {mean}: {}", w.total());
            for (k, p) in w.iter().step_by(7) {
                let direct = poisson_pmf(mean, k as u64);
                assert!((p - direct).abs() <= 1e-9 * direct.max(1e-300) + 1e-15, "mean {mean} k {k}: {p} vs {direct}");
            }
        }
    }

    #[test]
    fn upper_cut_is_the_smallest_admissible() {
        let mean = 3.0;
        let w = PoissonWeights::new(mean);
        let last = w.end() - 1;
        // Dropping one more term would leave more than the tail threshold behind.
        let tail_without_last: f64 = (last as u64..last as u64 + 200).map(|k| poisson_pmf(mean, k)).sum();
        assert!(tail_without_last >= TOLERANCES.poisson_tail);
        let tail_after: f64 = (last as u64 + 1..last as u64 + 200).map(|k| poisson_pmf(mean, k)).sum();
        assert!(tail_after < TOLERANCES.poisson_tail);
    }
}
