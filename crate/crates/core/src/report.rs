//! Tabular verification reports: one row per measured inequality, plus fitted constants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One measured quantity against its bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub suite: String,
    pub k: Option<usize>,
    pub j: Option<usize>,
    pub quantity: String,
    pub measured: f64,
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub rows: Vec<ReportRow>,
    pub fitted: BTreeMap<String, f64>,
}

impl BoundsReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a row; `ratio = measured / bound` (or `measured` when the bound is zero).
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        suite: &str,
        k: Option<usize>,
        j: Option<usize>,
        quantity: &str,
        measured: f64,
        bound: f64,
        pass: bool,
    ) {
        let ratio = if bound != 0.0 { measured / bound } else { measured };
        self.rows.push(ReportRow {
            suite: suite.into(),
            k,
            j,
            quantity: quantity.into(),
            measured,
            bound,
            ratio,
            pass,
        });
    }

    pub fn fit(&mut self, name: &str, value: f64) {
        self.fitted.insert(name.into(), value);
    }

    pub fn extend(&mut self, other: BoundsReport) {
        self.rows.extend(other.rows);
        self.fitted.extend(other.fitted);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn rows_for<'a>(&'a self, suite: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.suite == suite)
    }

    /// Largest ratio among rows of a suite and quantity.
    pub fn max_ratio(&self, suite: &str, quantity: &str) -> f64 {
        self.rows_for(suite).filter(|r| r.quantity == quantity).map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest ratio among rows of a suite and quantity.
    pub fn min_ratio(&self, suite: &str, quantity: &str) -> f64 {
        self.rows_for(suite).filter(|r| r.quantity == quantity).map(|r| r.ratio).fold(f64::INFINITY, f64::min)
    }
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 0.5).collect();
        let (s, c) = fit_line(&xs, &ys);
        assert!((s + 2.0).abs() < 1e-14 && (c - 0.5).abs() < 1e-14);
    }

    #[test]
    fn ratios_and_pass_flags() {
        let mut r = BoundsReport::new();
        r.push("s", Some(1), None, "q", 2.0, 4.0, true);
        r.push("s", Some(2), None, "q", 3.0, 0.0, false);
        assert_eq!(r.max_ratio("s", "q"), 3.0);
        assert_eq!(r.min_ratio("s", "q"), 0.5);
        assert!(!r.all_pass());
        assert_eq!(r.failures().count(), 1);
    }
}
