//! Small summary statistics for Monte Carlo output.

use serde::{Deserialize, Serialize};

use crate::envelope::type7_quantile;
use crate::error::{Error, Result};

/// Location summary of a batch of draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
    pub mean: f64,
}

impl Spread {
    /// Summary of `values`, or `None` when empty. NaNs sort last.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            median: type7_quantile(&v, 0.5),
            lower_quartile: type7_quantile(&v, 0.25),
            upper_quartile: type7_quantile(&v, 0.75),
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    Spread::of(values).map_or(f64::NAN, |s| s.median)
}

/// Ordinary least-squares slope with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Zero when the fit uses exactly two points.
    pub std_error: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::IllPosed("x and y differ in length".into()));
    }
    if n < 2 {
        return Err(Error::IllPosed(
            "a regression needs at least two sample sizes".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::IllPosed("non-finite regression input".into()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::IllPosed("all regressors are equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let std_error = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        std_error,
    })
}

/// Slope of `log y` on `log x`.
pub fn log_log(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ols(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let f = ols(&x, &y).unwrap();
        assert!(
            (f.slope - 2.0).abs() < 1e-14
                && (f.intercept - 1.0).abs() < 1e-14
                && f.std_error < 1e-14
        );
        let g = ols(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        // Slope 0.8, intercept 0.5, residuals (-0.3, 0.9, -0.9, 0.3), RSS 1.8, Sxx 5.
        assert!((g.slope - 0.8).abs() < 1e-14);
        assert!((g.std_error - (1.8f64 / 2.0 / 5.0).sqrt()).abs() < 1e-14);
        assert!(ols(&[1.0], &[1.0]).is_err());
        let p = log_log(&[100.0, 1000.0, 10000.0], &[1.0, 0.1, 0.01]).unwrap();
        assert!((p.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spread() {
        let s = Spread::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.lower_quartile, 1.75);
        assert_eq!(s.mean, 2.5);
        assert!(Spread::of(&[]).is_none());
    }
}
