//! Reference forecasters and the error metric.

use serde::{Deserialize, Serialize};

use crate::data::Windows;
use crate::error::{Error, Result};

/// Root mean squared error.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::shape(format!(
            "rmse: {} predictions for {} actual values",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Data("rmse of an empty sequence".into()));
    }
    let sq: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sq / predicted.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model: String,
    pub data: String,
    pub rmse: f64,
    pub samples: usize,
}

/// Persistence: the last value of each target window.
pub fn naive(samples: &Windows) -> Vec<f64> {
    (0..samples.len()).map(|k| samples.input(0, k)[samples.lookup - 1]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalForecast {
    /// Positions (into the sample set) that have a forecast.
    pub positions: Vec<usize>,
    pub predictions: Vec<f64>,
    /// Samples whose target lies less than one period into the series.
    pub skipped: usize,
}

/// Predicts each target with the value one `period` earlier in `series`, the
/// full target series the samples were cut from.
pub fn seasonal_naive(series: &[f64], samples: &Windows, period: usize) -> Result<SeasonalForecast> {
    if period == 0 {
        return Err(Error::Config("seasonal period must be at least 1".into()));
    }
    let mut out = SeasonalForecast {
        positions: Vec::new(),
        predictions: Vec::new(),
        skipped: 0,
    };
    for (k, &idx) in samples.target_index.iter().enumerate() {
        if idx >= series.len() {
            return Err(Error::Data(format!(
                "sample target record {idx} beyond a series of {}",
                series.len()
            )));
        }
        if idx < period {
            out.skipped += 1;
        } else {
            out.positions.push(k);
            out.predictions.push(series[idx - period]);
        }
    }
    Ok(out)
}

/// Linear regression on flattened windows, intercept first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub lookup: usize,
    pub names: Vec<String>,
}

impl LinearModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn weights(&self) -> &[f64] {
        &self.coefficients[1..]
    }

    pub fn predict(&self, samples: &Windows) -> Result<Vec<f64>> {
        if samples.lookup != self.lookup || samples.names != self.names {
            return Err(Error::shape(format!(
                "linear model fitted on {:?} at lookup {}, samples are {:?} at lookup {}",
                self.names, self.lookup, samples.names, samples.lookup
            )));
        }
        Ok((0..samples.len())
            .map(|k| {
                let x = samples.features(k);
                self.intercept() + x.iter().zip(self.weights()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect())
    }
}

/// Solves `(XᵀX + λ·I')β = Xᵀy` where `I'` leaves the intercept unpenalized.
/// `λ = 0` is ordinary least squares.
pub fn fit_linear(samples: &Windows, lambda: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("ridge strength must be >= 0, got {lambda}")));
    }
    let n = samples.len();
    let p = samples.lookup * samples.modalities() + 1;
    if n == 0 {
        return Err(Error::Data("no samples to fit".into()));
    }
    if lambda == 0.0 && n <= p - 1 {
        return Err(Error::Numerical(format!(
            "least squares needs more than {} samples, got {n}; use ridge (lambda > 0)",
            p - 1
        )));
    }
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut row = vec![1.0; p];
    for k in 0..n {
        row[1..].copy_from_slice(&samples.features(k));
        let y = samples.targets[k];
        for i in 0..p {
            rhs[i] += row[i] * y;
            let ri = row[i];
            for j in 0..=i {
                gram[i * p + j] += ri * row[j];
            }
        }
    }
    for i in 1..p {
        gram[i * p + i] += lambda;
    }
    let coefficients = solve_spd(&mut gram, p, &rhs).map_err(|pivot| {
        if lambda == 0.0 {
            Error::Numerical(format!(
                "normal equations are singular (pivot {pivot} collapsed); use ridge (lambda > 0)"
            ))
        } else {
            Error::Numerical(format!("ridge system is singular at pivot {pivot}"))
        }
    })?;
    Ok(LinearModel {
        coefficients,
        lambda,
        lookup: samples.lookup,
        names: samples.names.clone(),
    })
}

/// Cholesky solve of a symmetric positive definite system whose lower
/// triangle is stored row-major in `a` (overwritten by the factor). Returns
/// the failing pivot index when the matrix is not numerically positive
/// definite.
pub fn solve_spd(a: &mut [f64], n: usize, b: &[f64]) -> std::result::Result<Vec<f64>, usize> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-13;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > tol) {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= a[i * n + k] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= a[k * n + i] * z[k];
        }
        z[i] /= a[i * n + i];
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{window, Dataset};
    use chrono::NaiveDate;

    fn dataset(flow: Vec<f64>) -> Dataset {
        let t0 = NaiveDate::from_ymd_opt(2014, 1, 7).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts = (0..flow.len()).map(|i| t0 + chrono::Duration::minutes(15 * i as i64)).collect();
        Dataset::new(ts, 15, vec!["flow".into()], vec![flow]).unwrap()
    }

    #[test]
    fn rmse_hand_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&[2.5], &[-1.0]).unwrap(), 3.5);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn naive_takes_last_window_value() {
        let s = window(&dataset(vec![3.0, 7.0, 41.0, 5.0]), 3).unwrap();
        assert_eq!(naive(&s), vec![41.0]);
    }

    #[test]
    fn constant_series_is_perfect_for_both() {
        let flow = vec![12.0; 30];
        let s = window(&dataset(flow.clone()), 4).unwrap();
        assert_eq!(rmse(&naive(&s), &s.targets).unwrap(), 0.0);
        let sn = seasonal_naive(&flow, &s, 10).unwrap();
        assert_eq!(sn.skipped, 6);
        let actual: Vec<f64> = sn.positions.iter().map(|&k| s.targets[k]).collect();
        assert_eq!(rmse(&sn.predictions, &actual).unwrap(), 0.0);
    }

    #[test]
    fn exact_linear_targets_are_recovered() {
        // flow[t] = 2 + 0.5·flow[t-1] - 0.25·flow[t-2] + small forcing
        let mut flow = vec![1.0, 3.0];
        for t in 2..60 {
            let v = 2.0 + 0.5 * flow[t - 1] - 0.25 * flow[t - 2] + (t as f64 * 0.7).sin();
            flow.push(v);
        }
        let s = window(&dataset(flow), 3).unwrap();
        let s = Windows {
            targets: (0..s.len()).map(|k| 1.0 + s.features(k).iter().sum::<f64>() * 0.3).collect(),
            ..s
        };
        let fit = fit_linear(&s, 0.0).unwrap();
        assert!(rmse(&fit.predict(&s).unwrap(), &s.targets).unwrap() < 1e-8);
    }

    #[test]
    fn singular_least_squares_advises_ridge() {
        let s = window(&dataset(vec![5.0; 40]), 3).unwrap();
        let err = fit_linear(&s, 0.0).unwrap_err();
        assert!(err.to_string().contains("ridge"), "{err}");
        assert!(fit_linear(&s, 0.1).is_ok());
    }

    #[test]
    fn cholesky_small_system() {
        let mut a = vec![4.0, 0.0, 2.0, 3.0];
        let x = solve_spd(&mut a, 2, &[2.0, 1.0]).unwrap();
        // [[4,2],[2,3]] x = [2,1]
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-12);
    }
}
