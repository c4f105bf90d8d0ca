//! Ridge regression on lag features, pooled across series.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Feature layout for a lag model: `lags` lagged values, then `period - 1`
/// season dummies when enabled (season 0 is the baseline).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LagFeatures {
    pub lags: usize,
    pub season_period: Option<usize>,
}

impl LagFeatures {
    pub fn width(&self) -> usize {
        self.lags + self.season_period.map_or(0, |m| m.saturating_sub(1))
    }

    /// Features for the value at absolute time `t`, given the values before it.
    fn row(&self, before: &[f64], t: usize, out: &mut Vec<f64>) {
        let n = before.len();
        out.extend((1..=self.lags).map(|k| before[n - k]));
        if let Some(m) = self.season_period {
            let season = t % m;
            out.extend((1..m).map(|s| if s == season { 1.0 } else { 0.0 }));
        }
    }
}

/// A fitted linear lag model in original (unstandardized) units.
#[derive(Clone, Debug, PartialEq)]
pub struct LagRidgeModel {
    pub features: LagFeatures,
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

/// Builds the pooled design. `series` holds `(first absolute t, values)`.
pub fn design(features: LagFeatures, series: &[(usize, &[f64])]) -> (DMatrix<f64>, DVector<f64>) {
    let width = features.width();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut buf = Vec::with_capacity(width);
    for &(t0, values) in series {
        for i in features.lags..values.len() {
            buf.clear();
            features.row(&values[..i], t0 + i, &mut buf);
            rows.extend_from_slice(&buf);
            targets.push(values[i]);
        }
    }
    let n = targets.len();
    (DMatrix::from_row_slice(n, width, &rows), DVector::from_vec(targets))
}

/// Fits `y = c + X*beta` minimizing `(1/n)*|y - c - X*beta|^2 + ridge*|beta_std|^2`,
/// where `beta_std` are coefficients on per-column standardized features and
/// the intercept is unpenalized. Zero-variance columns get a zero coefficient.
pub fn fit(features: LagFeatures, series: &[(usize, &[f64])], ridge: f64) -> Result<LagRidgeModel> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidHyperparameter(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let (x, y) = design(features, series);
    let (n, width) = x.shape();
    if n < 2 {
        return Err(Error::SeriesTooShort { needed: features.lags + 2, have: n + features.lags });
    }
    let nf = n as f64;
    let y_mean = y.mean();
    let means: Vec<f64> = (0..width).map(|j| x.column(j).mean()).collect();
    let scales: Vec<f64> = (0..width)
        .map(|j| (x.column(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / nf).sqrt())
        .collect();
    let active: Vec<usize> = (0..width).filter(|&j| scales[j] > 1e-12 * means[j].abs().max(1.0)).collect();

    let k = active.len();
    let mut coefs = vec![0.0; width];
    if k > 0 {
        let z = DMatrix::from_fn(n, k, |i, c| {
            let j = active[c];
            (x[(i, j)] - means[j]) / scales[j]
        });
        let yc = y.map(|v| v - y_mean);
        let mut gram = z.transpose() * &z / nf;
        for d in 0..k {
            gram[(d, d)] += ridge;
        }
        let rhs = z.transpose() * yc / nf;
        let beta = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Singular(e.to_string()))?,
        };
        for (c, &j) in active.iter().enumerate() {
            coefs[j] = beta[c] / scales[j];
        }
    }
    let intercept = y_mean - coefs.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(LagRidgeModel { features, intercept, coefs })
}

impl LagRidgeModel {
    /// Recursive multi-step forecast continuing `history`, whose last value
    /// sits at absolute time `end`.
    pub fn forecast(&self, history: &[f64], end: usize, horizon: usize) -> Vec<f64> {
        let mut ext = history.to_vec();
        let mut buf = Vec::with_capacity(self.coefs.len());
        for h in 1..=horizon {
            buf.clear();
            self.features.row(&ext, end + h, &mut buf);
            let v = self.intercept + buf.iter().zip(&self.coefs).map(|(a, b)| a * b).sum::<f64>();
            ext.push(v);
        }
        ext.split_off(history.len())
    }
}
