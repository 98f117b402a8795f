//! The height function `f = |a|^2` on `S^{m+n+1} in R^{m+1} x R^{n+1}`,
//! seen in the two product charts `R^{m+1} x S^n` and `S^m x R^{n+1}`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{IsoflowError, Result};
use crate::report::CheckEntry;

/// Step of the FD normal Hessian.
pub const HESSIAN_STEP: f64 = 1e-2;
/// Half-width of the sampled Euclidean factor.
const EXTENT: f64 = 2.0;

/// Unit vector of `S^k` from `k` polar angles.
fn sphere_point(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len() + 1);
    let mut s = 1.0;
    for a in angles {
        out.push(s * a.cos());
        s *= a.sin();
    }
    out.push(s);
    out
}

/// `f` in the first chart, through the embedding `(X, y) -> (X, y)/sqrt(1+|X|^2)`.
fn f_first(x_big: &[f64], angles: &[f64]) -> f64 {
    let q = (1.0 + x_big.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let a = x_big.iter().map(|v| v / q);
    let b = sphere_point(angles).into_iter().map(|v| v / q);
    // |a|^2 = 1 - |b|^2 on the unit sphere; use the a-block directly
    let (na, nb): (f64, f64) = (a.map(|v| v * v).sum(), b.map(|v| v * v).sum());
    debug_assert!((na + nb - 1.0).abs() < 1e-12);
    na
}

/// `f` in the second chart, through `(x, Y) -> (x, Y)/sqrt(1+|Y|^2)`.
fn f_second(angles: &[f64], y_big: &[f64]) -> f64 {
    let q = (1.0 + y_big.iter().map(|v| v * v).sum::<f64>()).sqrt();
    sphere_point(angles).iter().map(|v| (v / q).powi(2)).sum()
}

/// Closed-form differential of `|X|^2/(1+|X|^2)` in the Euclidean factor
/// (the sphere factor does not enter).
fn df_first(x_big: &[f64]) -> Vec<f64> {
    let q = 1.0 + x_big.iter().map(|v| v * v).sum::<f64>();
    x_big.iter().map(|v| 2.0 * v / (q * q)).collect()
}

fn df_second(y_big: &[f64]) -> Vec<f64> {
    let q = 1.0 + y_big.iter().map(|v| v * v).sum::<f64>();
    y_big.iter().map(|v| -2.0 * v / (q * q)).collect()
}

/// Fourth-order FD Hessian of `g` at the origin of `R^k`.
fn fd_hessian(g: &dyn Fn(&[f64]) -> f64, k: usize, h: f64) -> DMatrix<f64> {
    let at = |offs: &[(usize, f64)]| {
        let mut x = vec![0.0; k];
        for &(i, s) in offs {
            x[i] += s * h;
        }
        g(&x)
    };
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            (-at(&[(i, 2.0)]) + 16.0 * at(&[(i, 1.0)]) - 30.0 * at(&[]) + 16.0 * at(&[(i, -1.0)]) - at(&[(i, -2.0)]))
                / (12.0 * h * h)
        } else {
            let c = |a: f64, b: f64| at(&[(i, a), (j, b)]);
            (8.0 * (c(1.0, -2.0) + c(2.0, -1.0) + c(-2.0, 1.0) + c(-1.0, 2.0))
                - 8.0 * (c(-1.0, -2.0) + c(-2.0, -1.0) + c(1.0, 2.0) + c(2.0, 1.0))
                - (c(2.0, -2.0) + c(-2.0, 2.0) - c(-2.0, -2.0) - c(2.0, 2.0))
                + 64.0 * (c(-1.0, -1.0) + c(1.0, 1.0) - c(1.0, -1.0) - c(-1.0, 1.0)))
                / (144.0 * h * h)
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilnorReport {
    pub m: usize,
    pub n: usize,
    /// Grid nodes where `df = 0` disagrees with membership in the declared
    /// critical set.
    pub critical_mismatches: usize,
    /// Smallest `|df|` over the non-critical nodes.
    pub min_regular_df: f64,
    /// `f` on the two critical sets (expected 0 and 1).
    pub critical_values: (f64, f64),
    /// `|H - 2 I|` on `{0} x S^n` and `|H + 2 I|` on `S^m x {0}`.
    pub hessian_errors: (f64, f64),
    /// Normal Hessian eigenvalue ranges.
    pub eigen_plus: (f64, f64),
    pub eigen_minus: (f64, f64),
    /// Largest disagreement of the two charts on their overlap.
    pub chart_consistency: f64,
    pub nodes: usize,
}

fn grid(k: usize, count: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..count).map(|i| -EXTENT + 2.0 * EXTENT * i as f64 / (count - 1) as f64).collect();
    let mut pts = vec![Vec::new()];
    for _ in 0..k {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    pts
}

fn angle_samples(k: usize) -> Vec<Vec<f64>> {
    // polar angles in (0, pi) except the last, in (0, 2 pi)
    let base = [0.4, 1.3, 2.5];
    let mut pts = vec![Vec::new()];
    for a in 0..k {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                base.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(if a + 1 == k { 2.0 * v } else { *v });
                    q
                })
            })
            .collect();
    }
    pts
}

fn eigen_range(h: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new(h.clone()).eigenvalues;
    (e.min(), e.max())
}

/// Morse-Bott certificate for `m, n <= 3`.
pub fn milnor_chart_check(m: usize, n: usize) -> Result<MilnorReport> {
    if m == 0 || n == 0 || m > 3 || n > 3 {
        return Err(IsoflowError::Config("milnor check needs 1 <= m, n <= 3".into()));
    }
    let per_axis = if m + n > 4 { 5 } else { 9 };
    let mut mismatches = 0usize;
    let mut min_regular = f64::INFINITY;
    let mut nodes = 0usize;
    let mut scan = |xs: Vec<Vec<f64>>, angles: &[Vec<f64>], df: fn(&[f64]) -> Vec<f64>| {
        for x in &xs {
            let norm = df(x).iter().map(|v| v * v).sum::<f64>().sqrt();
            let declared = x.iter().all(|v| *v == 0.0);
            for _ in angles {
                nodes += 1;
                if (norm == 0.0) != declared {
                    mismatches += 1;
                }
                if !declared {
                    min_regular = min_regular.min(norm);
                }
            }
        }
    };
    let ang_n = angle_samples(n);
    let ang_m = angle_samples(m);
    scan(grid(m + 1, per_axis), &ang_n, df_first);
    scan(grid(n + 1, per_axis), &ang_m, df_second);

    let y0 = &ang_n[ang_n.len() / 2];
    let x0 = &ang_m[ang_m.len() / 2];
    let h_plus = fd_hessian(&|x: &[f64]| f_first(x, y0), m + 1, HESSIAN_STEP);
    let h_minus = fd_hessian(&|y: &[f64]| f_second(x0, y), n + 1, HESSIAN_STEP);
    let eye = |k: usize| DMatrix::<f64>::identity(k, k) * 2.0;
    let hessian_errors = ((&h_plus - eye(m + 1)).abs().max(), (&h_minus + eye(n + 1)).abs().max());
    let eigen_plus = eigen_range(&h_plus);
    let eigen_minus = eigen_range(&h_minus);
    // full rank with a definite sign, relative to the leading scale 2
    if !(eigen_plus.0 >= 0.2) {
        return Err(IsoflowError::NotMorseBott(format!("normal Hessian on {{0}} x S^{n} has eigenvalue {}", eigen_plus.0)));
    }
    if !(eigen_minus.1 <= -0.2) {
        return Err(IsoflowError::NotMorseBott(format!("normal Hessian on S^{m} x {{0}} has eigenvalue {}", eigen_minus.1)));
    }

    // overlap: points (a, b) of the big sphere with a, b both nonzero
    let mut consistency = 0.0f64;
    for s in [0.2f64, 0.7, 1.1, 1.45] {
        for ua in &ang_m {
            for ub in &ang_n {
                let (ca, sb) = (s.cos(), s.sin());
                let a: Vec<f64> = sphere_point(ua).into_iter().map(|v| v * ca).collect();
                let b: Vec<f64> = sphere_point(ub).into_iter().map(|v| v * sb).collect();
                let (na, nb) = (ca.abs(), sb.abs());
                let x_big: Vec<f64> = a.iter().map(|v| v / nb).collect();
                let y_big: Vec<f64> = b.iter().map(|v| v / na).collect();
                let direct: f64 = a.iter().map(|v| v * v).sum();
                let f1 = f_first(&x_big, ub);
                let f2 = f_second(ua, &y_big);
                consistency = consistency.max((f1 - direct).abs()).max((f2 - direct).abs());
            }
        }
    }
    Ok(MilnorReport {
        m,
        n,
        critical_mismatches: mismatches,
        min_regular_df: min_regular,
        critical_values: (f_first(&vec![0.0; m + 1], y0), f_second(x0, &vec![0.0; n + 1])),
        hessian_errors,
        eigen_plus,
        eigen_minus,
        chart_consistency: consistency,
        nodes,
    })
}

pub fn milnor_checks(r: &MilnorReport) -> Vec<CheckEntry> {
    vec![
        CheckEntry::new("milnor.critical_set_exact", "milnor:df-vanishes-exactly-on-critical-sets", r.critical_mismatches as f64, 0.0, 0.0)
            .detail("nodes", r.nodes as f64),
        CheckEntry::exceeds("milnor.regular_elsewhere", "milnor:df-nonzero-off-critical-sets", r.min_regular_df, 0.0, 0.0),
        CheckEntry::new(
            "milnor.critical_values",
            "milnor:critical-values-zero-and-one",
            r.critical_values.0.abs().max((r.critical_values.1 - 1.0).abs()),
            1e-15,
            0.0,
        ),
        CheckEntry::new("milnor.hessian_min_set", "milnor:normal-hessian-plus-two", r.hessian_errors.0, 1e-6, HESSIAN_STEP)
            .detail("eigen_min", r.eigen_plus.0)
            .detail("eigen_max", r.eigen_plus.1),
        CheckEntry::new("milnor.hessian_max_set", "milnor:normal-hessian-minus-two", r.hessian_errors.1, 1e-6, HESSIAN_STEP)
            .detail("eigen_min", r.eigen_minus.0)
            .detail("eigen_max", r.eigen_minus.1),
        CheckEntry::new("milnor.chart_consistency", "milnor:charts-agree-on-overlap", r.chart_consistency, 1e-14, 0.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn m1_n2_is_morse_bott() {
        let r = milnor_chart_check(1, 2).unwrap();
        assert_eq!(r.critical_mismatches, 0);
        assert!(r.min_regular_df > 0.0);
        assert!(r.hessian_errors.0 < 1e-6 && r.hessian_errors.1 < 1e-6, "{:?}", r.hessian_errors);
        assert!(r.chart_consistency < 1e-14);
        assert!(milnor_checks(&r).iter().all(|c| c.passed()));
    }

    #[test]
    fn rejects_large_dimensions() {
        assert!(milnor_chart_check(4, 1).is_err());
    }

    proptest! {
        #[test]
        fn f_independent_of_sphere_factor(x in -3.0f64..3.0, y in -3.0f64..3.0, a in 0.0f64..3.0, b in 0.0f64..6.0) {
            let f1 = f_first(&[x, y], &[a, b]);
            let f2 = f_first(&[x, y], &[0.3, 1.0]);
            prop_assert!((f1 - f2).abs() < 1e-15);
            prop_assert!((f1 - (x * x + y * y) / (1.0 + x * x + y * y)).abs() < 1e-15);
        }
    }
}
