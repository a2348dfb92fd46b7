//! Per-feature standardization fitted on training rows.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    /// Features with zero spread in the fitted rows; they map to 0.
    pub constant: Vec<bool>,
}

impl StandardizationStats {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Fits on a row-major `rows × width` matrix.
    pub fn fit(features: &[f64], width: usize) -> Self {
        let n = features.len().checked_div(width).unwrap_or(0);
        let mut mean = vec![0.0; width];
        for row in features.chunks(width) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        if n > 0 {
            mean.iter_mut().for_each(|m| *m /= n as f64);
        }
        let mut var = vec![0.0; width];
        for row in features.chunks(width) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| if n > 0 { (v / n as f64).sqrt() } else { 0.0 })
            .collect();
        let constant = std.iter().map(|&s| s == 0.0).collect();
        Self { mean, std, constant }
    }

    /// `(x - mean) / std` in place; constant features become 0.
    pub fn apply(&self, features: &mut [f64]) {
        let width = self.width();
        for row in features.chunks_mut(width) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = if self.constant[j] {
                    0.0
                } else {
                    (*x - self.mean[j]) / self.std[j]
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_column() {
        let mut x = vec![2.0, 4.0];
        let s = StandardizationStats::fit(&x, 1);
        assert_eq!(s.mean, vec![3.0]);
        assert_eq!(s.std, vec![1.0]);
        s.apply(&mut x);
        assert_eq!(x, vec![-1.0, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let mut x = vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0];
        let s = StandardizationStats::fit(&x, 2);
        assert!(s.constant[0] && !s.constant[1]);
        s.apply(&mut x);
        assert_eq!(x[0], 0.0);
        assert_eq!(x[2], 0.0);
        assert_eq!(x[4], 0.0);
    }
}
