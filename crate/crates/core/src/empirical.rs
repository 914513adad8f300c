//! Order statistics and closed-form empirical functionals.

use std::path::Path;

use crate::error::{domain, Error, Result};

/// How duplicate observations are treated at construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TiePolicy {
    /// Duplicates are an error.
    #[default]
    Reject,
    /// Each duplicate is nudged upward to the next representable value above its predecessor.
    Perturb,
}

/// Direction of a double survival integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `∫₀ˣ ∫₀ᵗ S_n(s) ds dt`
    Forward,
    /// `∫ₓ^∞ ∫ₜ^∞ S_n(s) ds dt`
    Backward,
}

/// Nelson–Aalen value with a flag for the divergent final increment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NelsonAalen {
    pub value: f64,
    pub diverges: bool,
}

/// Strictly increasing positive observations with prefix sums of `x` and `x²`.
#[derive(Clone, Debug, PartialEq)]
pub struct LifetimeSample {
    values: Vec<f64>,
    sum1: Vec<f64>,
    sum2: Vec<f64>,
}

impl LifetimeSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_policy(values, TiePolicy::Reject)
    }

    pub fn with_policy(mut values: Vec<f64>, policy: TiePolicy) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(&bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::NonPositive(bad));
        }
        values.sort_by(f64::total_cmp);
        for i in 1..values.len() {
            if values[i] <= values[i - 1] {
                match policy {
                    TiePolicy::Reject => return Err(Error::Ties(values[i])),
                    TiePolicy::Perturb => values[i] = values[i - 1].next_up(),
                }
            }
        }
        let mut sum1 = Vec::with_capacity(values.len() + 1);
        let mut sum2 = Vec::with_capacity(values.len() + 1);
        let (mut s1, mut s2) = (0.0, 0.0);
        sum1.push(0.0);
        sum2.push(0.0);
        for &x in &values {
            s1 += x;
            s2 += x * x;
            sum1.push(s1);
            sum2.push(s2);
        }
        Ok(Self { values, sum1, sum2 })
    }

    /// Parses one decimal per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, policy: TiePolicy) -> Result<Self> {
        let mut values = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("not a decimal number: {line:?}"),
            })?;
            values.push(v);
        }
        Self::with_policy(values, policy)
    }

    pub fn from_path(path: impl AsRef<Path>, policy: TiePolicy) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, policy)
    }

    /// One value per line in shortest round-trip decimal form.
    pub fn to_text(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        for v in &self.values {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The largest observation `X_(n)`.
    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Number of observations `≤ t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.values.partition_point(|&v| v <= t)
    }

    /// Number of observations `< t`.
    pub fn count_lt(&self, t: f64) -> usize {
        self.values.partition_point(|&v| v < t)
    }

    /// Sum of the first `k` order statistics.
    pub fn prefix_sum(&self, k: usize) -> f64 {
        self.sum1[k]
    }

    /// Sum of squares of the first `k` order statistics.
    pub fn prefix_sum_sq(&self, k: usize) -> f64 {
        self.sum2[k]
    }

    pub fn mean(&self) -> f64 {
        self.sum1[self.len()] / self.len() as f64
    }

    pub fn ecdf(&self, t: f64) -> f64 {
        self.count_le(t) as f64 / self.len() as f64
    }

    /// `F̃_n`: the empirical distribution with the top observation's mass removed.
    pub fn reduced_ecdf(&self, t: f64) -> f64 {
        let n = self.len();
        self.count_le(t).min(n - 1) as f64 / n as f64
    }

    /// `∫₀ˣ S_n(t) dt = E_n[min(X, x)]`.
    pub fn survival_integral(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(domain("x", x));
        }
        let n = self.len();
        let k = self.count_le(x);
        Ok((self.sum1[k] + (n - k) as f64 * x) / n as f64)
    }

    pub fn survival_double_integral(&self, x: f64, direction: Direction) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(domain("x", x));
        }
        let n = self.len();
        let k = self.count_le(x);
        let above = (n - k) as f64;
        let value = match direction {
            Direction::Forward => x * self.sum1[k] - 0.5 * self.sum2[k] + 0.5 * above * x * x,
            Direction::Backward => {
                let s1 = self.sum1[n] - self.sum1[k];
                let s2 = self.sum2[n] - self.sum2[k];
                0.5 * (s2 - 2.0 * x * s1 + above * x * x)
            }
        };
        Ok((value / n as f64).max(0.0))
    }

    pub fn nelson_aalen(&self, t: f64) -> NelsonAalen {
        let n = self.len();
        let k = self.count_le(t);
        let value = (0..k).map(|i| 1.0 / (n - i) as f64).sum();
        NelsonAalen {
            value,
            diverges: k == n,
        }
    }
}
