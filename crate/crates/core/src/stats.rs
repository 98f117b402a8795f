//! Level-set statistics: bin `(f, value)` samples by `f` and measure how far
//! the values are from being a function of `f` alone.

use serde::{Deserialize, Serialize};

pub const DEFAULT_BINS_PER_UNIT: f64 = 64.0;

/// Per-bin model removed before measuring the spread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinFit {
    Constant,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub center: f64,
    pub count: usize,
    pub mean: f64,
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedProfile {
    pub bins: Vec<Bin>,
}

impl BinnedProfile {
    pub fn max_spread(&self) -> f64 {
        self.bins.iter().map(|b| b.spread).fold(0.0, f64::max)
    }

    /// Bin whose spread is largest.
    pub fn worst(&self) -> Option<&Bin> {
        self.bins.iter().max_by(|a, b| a.spread.total_cmp(&b.spread))
    }
}

/// Bins of width `1 / bins_per_unit` starting at `lo`; empty bins are
/// dropped. Within a bin whose `f` values are not all equal, a linear fit in
/// `f` is removed first when `fit` is `Linear`.
pub fn bin_by_level(samples: &[(f64, f64)], lo: f64, bins_per_unit: f64, fit: BinFit) -> BinnedProfile {
    let width = 1.0 / bins_per_unit;
    let mut buckets: std::collections::BTreeMap<i64, Vec<(f64, f64)>> = std::collections::BTreeMap::new();
    for &(f, v) in samples {
        let k = ((f - lo) / width).floor() as i64;
        buckets.entry(k).or_default().push((f, v));
    }
    let bins = buckets
        .into_iter()
        .map(|(k, pts)| {
            let n = pts.len() as f64;
            let mean_f = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let mean_v = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sff: f64 = pts.iter().map(|p| (p.0 - mean_f).powi(2)).sum();
            let slope = if fit == BinFit::Linear && sff > 1e-24 {
                pts.iter().map(|p| (p.0 - mean_f) * (p.1 - mean_v)).sum::<f64>() / sff
            } else {
                0.0
            };
            let (mut lo_r, mut hi_r) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in &pts {
                let r = p.1 - mean_v - slope * (p.0 - mean_f);
                lo_r = lo_r.min(r);
                hi_r = hi_r.max(r);
            }
            Bin { center: lo + (k as f64 + 0.5) * width, count: pts.len(), mean: mean_v, spread: hi_r - lo_r }
        })
        .collect();
    BinnedProfile { bins }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn function_of_level_has_zero_spread() {
        let samples: Vec<(f64, f64)> = (0..200).map(|i| (i as f64 / 200.0, 3.0)).collect();
        assert_eq!(bin_by_level(&samples, 0.0, 64.0, BinFit::Constant).max_spread(), 0.0);
    }

    #[test]
    fn level_dependence_detected() {
        let samples = vec![(0.5, 1.0), (0.5, 1.2)];
        assert!((bin_by_level(&samples, 0.0, 64.0, BinFit::Linear).max_spread() - 0.2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn linear_fit_removes_affine_trend(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let samples: Vec<(f64, f64)> = (0..300).map(|i| {
                let f = i as f64 / 300.0;
                (f, a + b * f)
            }).collect();
            prop_assert!(bin_by_level(&samples, 0.0, 64.0, BinFit::Linear).max_spread() < 1e-12);
        }
    }
}
