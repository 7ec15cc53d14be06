//! The dimension condition `n(m−2) ≤ m² − 2` in exact arithmetic.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{CurvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityRow {
    pub n: i64,
    pub m: i64,
    /// `n(m − 2)`.
    pub lhs: i64,
    /// `m² − 2`.
    pub rhs: i64,
    pub feasible: bool,
    /// `c(n,m)` in lowest terms; absent for `m = 1`.
    pub coefficient_num: Option<i64>,
    pub coefficient_den: Option<i64>,
}

impl FeasibilityRow {
    pub fn new(n: i64, m: i64) -> Self {
        let (lhs, rhs) = (n * (m - 2), m * m - 2);
        let c = (m >= 2).then(|| coefficient(n, m));
        FeasibilityRow { n, m, lhs, rhs, feasible: lhs <= rhs, coefficient_num: c.map(|c| *c.numer()), coefficient_den: c.map(|c| *c.denom()) }
    }

    pub fn coefficient(&self) -> Option<Ratio<i64>> {
        Some(Ratio::new(self.coefficient_num?, self.coefficient_den?))
    }

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<i64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{},{}", self.n, self.m, self.lhs, self.rhs, self.feasible, opt(self.coefficient_num), opt(self.coefficient_den))
    }
}

pub const CSV_HEADER: &str = "n,m,lhs,rhs,feasible,coefficient_num,coefficient_den";

/// `c(n,m) = (m² − 2 − n(m − 2)) / (2(n − m)(m − 1))`, defined for
/// `2 ≤ m ≤ n − 1`.
pub fn coefficient(n: i64, m: i64) -> Ratio<i64> {
    assert!(2 <= m && m < n, "coefficient needs 2 <= m <= n-1, got n={n}, m={m}");
    Ratio::new(m * m - 2 - n * (m - 2), 2 * (n - m) * (m - 1))
}

/// Same as [`coefficient`], as a float.
pub fn coefficient_f64(n: usize, m: usize) -> f64 {
    let c = coefficient(n as i64, m as i64);
    *c.numer() as f64 / *c.denom() as f64
}

pub fn is_feasible(n: usize, m: usize) -> bool {
    1 <= m && m < n && (n as i64) * (m as i64 - 2) <= (m * m) as i64 - 2
}

/// Errors with `InfeasiblePair` unless `1 ≤ m ≤ n−1` and the dimension
/// condition holds.
pub fn require_feasible(n: usize, m: usize) -> Result<()> {
    if is_feasible(n, m) {
        Ok(())
    } else {
        Err(CurvError::InfeasiblePair { n, m })
    }
}

/// Rows for every `2 ≤ n ≤ n_max`, `1 ≤ m ≤ n − 1`.
pub fn dimension_table(n_max: usize) -> Vec<FeasibilityRow> {
    (2..=n_max as i64).flat_map(|n| (1..n).map(move |m| FeasibilityRow::new(n, m))).collect()
}

pub fn table_csv(rows: &[FeasibilityRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// `α_k = (k − 1) / 2k`.
pub fn alpha(k: i64) -> Ratio<i64> {
    Ratio::new(k - 1, 2 * k)
}

/// Checks `1 − α_{k−1} = 1 / (4 α_k)` exactly for `2 ≤ k ≤ k_max`; returns
/// the first failing `k`, if any.
pub fn alpha_identity_failure(k_max: i64) -> Option<i64> {
    (2..=k_max).find(|&k| Ratio::from_integer(1) - alpha(k - 1) != (Ratio::from_integer(4) * alpha(k)).recip())
}
