use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{horner, FslipError, Result};

/// Horner evaluation of an ascending-degree polynomial, restricted to `bounds`.
pub fn eval_regression(poly: &[f64], l: f64, bounds: [f64; 2]) -> Result<f64> {
    let [lo, hi] = bounds;
    let tol = 1e-9 * (hi - lo).abs();
    if !(l >= lo - tol && l <= hi + tol) {
        return Err(FslipError::OutOfDomain {
            what: "leg length",
            value: l,
            lo,
            hi,
        });
    }
    Ok(horner(poly, l))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub coefficients: Vec<f64>,
    /// Largest absolute residual over the samples.
    pub max_residual: f64,
    /// `max_residual` relative to the largest sample magnitude.
    pub relative_residual: f64,
}

/// Least-squares polynomial fit of the given degree.
pub fn fit_regression(samples: &[(f64, f64)], degree: usize) -> Result<RegressionFit> {
    let mut abscissae: Vec<f64> = samples.iter().map(|s| s.0).collect();
    abscissae.sort_by(f64::total_cmp);
    abscissae.dedup();
    if abscissae.len() < degree + 1 {
        return Err(FslipError::Fit(format!(
            "{} distinct abscissae cannot determine a degree-{degree} polynomial",
            abscissae.len()
        )));
    }
    if samples
        .iter()
        .any(|(l, v)| !l.is_finite() || !v.is_finite())
    {
        return Err(FslipError::Fit("non-finite sample".into()));
    }

    // Fit in a centered, scaled variable for conditioning, then expand.
    let lo = abscissae[0];
    let hi = abscissae[abscissae.len() - 1];
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let n = samples.len();
    let a = DMatrix::from_fn(n, degree + 1, |i, j| {
        ((samples[i].0 - center) / half).powi(j as i32)
    });
    let b = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(FslipError::Fit("rank-deficient sample set".into()));
    }
    let scaled = svd
        .solve(&b, 1e-14 * smax)
        .map_err(|e| FslipError::Fit(e.to_string()))?;

    // p(l) = Σ c_j ((l - center)/half)^j, expanded by binomial coefficients.
    let mut coefficients = vec![0.0; degree + 1];
    for (j, &c) in scaled.iter().enumerate() {
        let cj = c / half.powi(j as i32);
        let mut binom = 1.0;
        for k in 0..=j {
            coefficients[k] += cj * binom * (-center).powi((j - k) as i32);
            binom = binom * (j - k) as f64 / (k + 1) as f64;
        }
    }

    let mut max_residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &(l, v) in samples {
        max_residual = max_residual.max((horner(&coefficients, l) - v).abs());
        scale = scale.max(v.abs());
    }
    Ok(RegressionFit {
        coefficients,
        max_residual,
        relative_residual: if scale > 0.0 {
            max_residual / scale
        } else {
            max_residual
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation() {
        assert_eq!(eval_regression(&[3.5], 0.7, [0.6, 1.0]).unwrap(), 3.5);
        assert_eq!(eval_regression(&[1.0, 2.0], 0.5, [0.0, 1.0]).unwrap(), 2.0);
        assert!(eval_regression(&[1.0], 1.5, [0.6, 1.0]).is_err());
        assert!(eval_regression(&[1.0], f64::NAN, [0.6, 1.0]).is_err());
    }

    #[test]
    fn exact_degree_data_is_interpolated() {
        let c = [2.0, -1.0, 0.5];
        let samples: Vec<_> = [0.6, 0.8, 1.0]
            .iter()
            .map(|&l| (l, horner(&c, l)))
            .collect();
        let fit = fit_regression(&samples, 2).unwrap();
        assert!(fit.max_residual < 1e-10);
        for (a, b) in fit.coefficients.iter().zip(c) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn cubic_round_trip() {
        let c = [5.0, -3.0, 2.0, 0.7];
        let samples: Vec<_> = (0..25)
            .map(|i| {
                let l = 0.6 + 0.4 * i as f64 / 24.0;
                (l, horner(&c, l))
            })
            .collect();
        let fit = fit_regression(&samples, 3).unwrap();
        for &(l, v) in &samples {
            assert!((eval_regression(&fit.coefficients, l, [0.6, 1.0]).unwrap() - v).abs() < 1e-9);
        }
    }

    #[test]
    fn repeated_abscissa_is_rank_deficient() {
        let samples = vec![(0.8, 1.0), (0.8, 1.1), (0.8, 0.9)];
        assert!(matches!(
            fit_regression(&samples, 2),
            Err(FslipError::Fit(_))
        ));
        assert!(fit_regression(&[], 0).is_err());
    }
}
