//! Chi-square statistics.
//!
//! The tail probability is the regularized upper incomplete gamma function
//! Q(dof/2, chi2/2), evaluated with the usual series / continued fraction
//! split.

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 1000;
const EPS: f64 = 3.0e-16;
const FPMIN: f64 = 1.0e-300;

/// Statistic substituted for an infinite two-distribution chi-square.
pub const CHI2_CAP: f64 = 1.0e6;

/// Attribute-value by class counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Stats(format!(
                "contingency table needs at least 2x2 cells, got {rows}x{cols}"
            )));
        }
        Ok(ContingencyTable { rows, cols, counts: vec![0; rows * cols] })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Stats("ragged contingency table".into()));
        }
        let mut t = ContingencyTable::new(rows.len(), cols)?;
        t.counts = rows.concat();
        Ok(t)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn add(&mut self, row: usize, col: usize, n: u64) {
        self.counts[row * self.cols + col] += n;
    }

    pub fn remove(&mut self, row: usize, col: usize, n: u64) {
        self.counts[row * self.cols + col] -= n;
    }

    /// Widens the table to `cols` class columns, keeping counts.
    pub fn grow_cols(&mut self, cols: usize) {
        if cols <= self.cols {
            return;
        }
        let mut counts = vec![0; self.rows * cols];
        for r in 0..self.rows {
            counts[r * cols..r * cols + self.cols]
                .copy_from_slice(&self.counts[r * self.cols..(r + 1) * self.cols]);
        }
        self.counts = counts;
        self.cols = cols;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c)).sum())
            .collect()
    }

    /// Degrees of freedom of the independence test.
    pub fn dof(&self) -> usize {
        (self.rows - 1) * (self.cols - 1)
    }
}

/// Pearson's statistic for independence of rows and columns. Cells with a
/// zero expected count contribute nothing.
pub fn chi2_statistic(table: &ContingencyTable) -> Result<f64> {
    let total = table.total();
    if total == 0 {
        return Err(Error::Stats("chi-square of an empty table".into()));
    }
    let n = total as f64;
    let row_totals = table.row_totals();
    let col_totals = table.col_totals();
    let mut chi2 = 0.0;
    for (r, &rt) in row_totals.iter().enumerate() {
        if rt == 0 {
            continue;
        }
        for (c, &ct) in col_totals.iter().enumerate() {
            if ct == 0 {
                continue;
            }
            let expected = rt as f64 * ct as f64 / n;
            let d = table.get(r, c) as f64 - expected;
            chi2 += d * d / expected;
        }
    }
    Ok(chi2)
}

/// A probability in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SignificanceProbability(f64);

impl SignificanceProbability {
    pub fn new(q: f64) -> Self {
        SignificanceProbability(q.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Probability that a chi-square variate with `dof` degrees of freedom
/// exceeds `chi2`.
pub fn chi2_tail_q(chi2: f64, dof: usize) -> Result<SignificanceProbability> {
    if dof == 0 {
        return Err(Error::Stats("chi-square needs at least one degree of freedom".into()));
    }
    if !(chi2 >= 0.0) {
        return Err(Error::Stats(format!("chi-square statistic {chi2} is negative")));
    }
    if chi2.is_infinite() {
        return Ok(SignificanceProbability::new(0.0));
    }
    gamma_q(dof as f64 / 2.0, chi2 / 2.0).map(SignificanceProbability::new)
}

/// Regularized upper incomplete gamma function Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    if x < 0.0 || a <= 0.0 {
        return Err(Error::Stats(format!("gamma_q undefined for a={a}, x={x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_series(a, x)?)
    } else {
        gamma_continued_fraction(a, x)
    }
}

/// P(a, x) by its power series, valid for x < a + 1.
fn gamma_series(a: f64, x: f64) -> Result<f64> {
    let gln = ln_gamma(a);
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITERATIONS {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            return Ok(sum * (-x + a * x.ln() - gln).exp());
        }
    }
    Err(Error::Numeric(format!("incomplete gamma series did not converge for a={a}, x={x}")))
}

/// Q(a, x) by Lentz's continued fraction, valid for x >= a + 1.
fn gamma_continued_fraction(a: f64, x: f64) -> Result<f64> {
    let gln = ln_gamma(a);
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITERATIONS {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok((-x + a * x.ln() - gln).exp() * h);
        }
    }
    Err(Error::Numeric(format!(
        "incomplete gamma continued fraction did not converge for a={a}, x={x}"
    )))
}

/// ln Γ(x) for x > 0 (Lanczos approximation, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Chi-square discrepancy of an estimated distribution against a reference,
/// computed on probabilities directly. A reference zero met by positive
/// estimated mass makes the statistic infinite, reported as [`CHI2_CAP`].
pub fn two_distribution_chi2(p_ref: &[f64], p_est: &[f64]) -> Result<f64> {
    if p_ref.len() != p_est.len() {
        return Err(Error::Stats(format!(
            "distribution lengths differ: {} vs {}",
            p_ref.len(),
            p_est.len()
        )));
    }
    if p_ref.len() < 2 {
        return Err(Error::Stats("distributions need at least two outcomes".into()));
    }
    let mut chi2 = 0.0;
    for (&r, &e) in p_ref.iter().zip(p_est) {
        if r == 0.0 {
            if e > 0.0 {
                return Ok(CHI2_CAP);
            }
            continue;
        }
        let d = e - r;
        chi2 += d * d / r;
    }
    Ok(chi2.min(CHI2_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[u64]]) -> ContingencyTable {
        ContingencyTable::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn independent_table_is_zero() {
        assert_eq!(chi2_statistic(&table(&[&[10, 10], &[10, 10]])).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_table() {
        // expected 15 in every cell, (5^2 / 15) * 4
        let v = chi2_statistic(&table(&[&[10, 20], &[20, 10]])).unwrap();
        assert!((v - 100.0 / 15.0).abs() < 1e-12);
        assert!((v - 6.6667).abs() < 1e-4);
    }

    #[test]
    fn empty_table_errors() {
        assert!(chi2_statistic(&ContingencyTable::new(2, 2).unwrap()).is_err());
        assert!(ContingencyTable::new(1, 2).is_err());
    }

    #[test]
    fn zero_column_contributes_nothing() {
        let t = table(&[&[5, 0], &[3, 0]]);
        assert_eq!(chi2_statistic(&t).unwrap(), 0.0);
    }

    #[test]
    fn grow_cols_keeps_counts() {
        let mut t = table(&[&[1, 2], &[3, 4]]);
        t.grow_cols(3);
        assert_eq!(t.get(1, 1), 4);
        assert_eq!(t.get(1, 2), 0);
        assert_eq!(t.total(), 10);
    }

    #[test]
    fn tail_at_zero_is_one() {
        assert_eq!(chi2_tail_q(0.0, 1).unwrap().value(), 1.0);
    }

    #[test]
    fn tail_at_independence_threshold() {
        let q = chi2_tail_q(7.88, 1).unwrap().value();
        assert!((q - 0.005).abs() <= 5e-4, "{q}");
        let q = chi2_tail_q(7.879, 1).unwrap().value();
        assert!((0.0045..=0.0055).contains(&q));
    }

    #[test]
    fn tail_rejects_bad_input() {
        assert!(chi2_tail_q(1.0, 0).is_err());
        assert!(chi2_tail_q(-1.0, 1).is_err());
        assert!(chi2_tail_q(f64::NAN, 1).is_err());
    }

    #[test]
    fn tail_two_dof_is_exponential() {
        for x in [0.1, 1.0, 3.0, 10.0, 40.0] {
            let q = chi2_tail_q(x, 2).unwrap().value();
            assert!((q - (-x / 2.0f64).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_distribution_examples() {
        assert_eq!(two_distribution_chi2(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = two_distribution_chi2(&[0.5, 0.5], &[0.6, 0.4]).unwrap();
        assert!((v - 0.04).abs() < 1e-9);
        assert_eq!(two_distribution_chi2(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(two_distribution_chi2(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), CHI2_CAP);
        assert!(two_distribution_chi2(&[1.0], &[1.0, 0.0]).is_err());
    }
}
