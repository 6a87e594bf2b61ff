//! Column standardization with the population (divide by n) convention.

use serde::{Deserialize, Serialize};

use super::PrepError;
use crate::scalar::Scalar;

/// Column means and standard deviations fitted on one batch. Columns whose
/// deviation is exactly zero are flagged constant and scale to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub constant: Vec<bool>,
    pub fitted_on: u32,
}

impl<T: Scalar> ScalerParams<T> {
    pub fn columns(&self) -> usize {
        self.mean.len()
    }
}

/// Fit column statistics. Two-pass mean/variance keeps the arithmetic
/// stable at `f32` over large windows.
pub fn fit_scaler<T: Scalar>(rows: &[Vec<T>], fitted_on: u32) -> Result<ScalerParams<T>, PrepError> {
    if rows.len() < 2 {
        return Err(PrepError::TooFewRows { got: rows.len(), need: 2 });
    }
    let cols = rows[0].len();
    for r in rows {
        if r.len() != cols {
            return Err(PrepError::DimensionMismatch { expected: cols, got: r.len() });
        }
    }
    let n = T::of(rows.len() as f64);
    let mut mean = vec![T::zero(); cols];
    for r in rows {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![T::zero(); cols];
    for r in rows {
        for ((v, &x), &m) in var.iter_mut().zip(r).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let mut std = Vec::with_capacity(cols);
    let mut constant = Vec::with_capacity(cols);
    for v in var {
        let s = (v / n).sqrt();
        constant.push(s == T::zero());
        std.push(s);
    }
    Ok(ScalerParams { mean, std, constant, fitted_on })
}

/// Standardize one row in place semantics: returns the scaled copy.
pub fn apply_scaler_row<T: Scalar>(row: &[T], params: &ScalerParams<T>) -> Result<Vec<T>, PrepError> {
    if row.len() != params.columns() {
        return Err(PrepError::DimensionMismatch { expected: params.columns(), got: row.len() });
    }
    Ok(row
        .iter()
        .zip(&params.mean)
        .zip(&params.std)
        .zip(&params.constant)
        .map(|(((&x, &m), &s), &c)| if c { T::zero() } else { (x - m) / s })
        .collect())
}

pub fn apply_scaler<T: Scalar>(rows: &[Vec<T>], params: &ScalerParams<T>) -> Result<Vec<Vec<T>>, PrepError> {
    rows.iter().map(|r| apply_scaler_row(r, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn population_stats_by_hand() {
        let p = fit_scaler(&col(&[1.0, 2.0, 3.0]), 0).unwrap();
        assert_relative_eq!(p.mean[0], 2.0);
        assert_relative_eq!(p.std[0], (2.0f64 / 3.0).sqrt(), max_relative = 1e-12);
        assert!(!p.constant[0]);

        let scaled = apply_scaler(&col(&[1.0, 2.0, 3.0]), &p).unwrap();
        assert_relative_eq!(scaled[0][0], -1.224744871391589, max_relative = 1e-12);
        assert_relative_eq!(scaled[1][0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(scaled[2][0], 1.224744871391589, max_relative = 1e-12);
    }

    #[test]
    fn constant_column_flagged_and_zeroed() {
        let p = fit_scaler(&col(&[5.0, 5.0, 5.0]), 1).unwrap();
        assert_eq!(p.mean[0], 5.0);
        assert_eq!(p.std[0], 0.0);
        assert!(p.constant[0]);
        let scaled = apply_scaler(&col(&[5.0, 7.0]), &p).unwrap();
        assert_eq!(scaled[0][0], 0.0);
        assert_eq!(scaled[1][0], 0.0);
    }

    #[test]
    fn row_at_mean_maps_to_zero() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 10.0], vec![3.0, 30.0], vec![5.0, 20.0]];
        let p = fit_scaler(&rows, 0).unwrap();
        let z = apply_scaler_row(&[p.mean[0], p.mean[1]], &p).unwrap();
        assert!(z.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn standardization_is_idempotent_in_stats() {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![(i as f64 * 0.37).sin() * 5.0 + 2.0, i as f64, 9.0])
            .collect();
        let p = fit_scaler(&rows, 0).unwrap();
        let scaled = apply_scaler(&rows, &p).unwrap();
        let p2 = fit_scaler(&scaled, 0).unwrap();
        for j in 0..2 {
            assert!(p2.mean[j].abs() < 1e-9, "mean {j} = {}", p2.mean[j]);
            assert!((p2.std[j] - 1.0).abs() < 1e-9, "std {j} = {}", p2.std[j]);
        }
        // constant column stays zero
        assert!(p2.constant[2]);
    }

    #[test]
    fn errors_on_bad_shapes() {
        assert!(matches!(fit_scaler::<f64>(&[vec![1.0]], 0), Err(PrepError::TooFewRows { .. })));
        let p = fit_scaler(&col(&[1.0, 2.0]), 0).unwrap();
        assert!(matches!(
            apply_scaler_row(&[1.0, 2.0], &p),
            Err(PrepError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }
}
