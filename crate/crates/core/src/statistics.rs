//! Rank statistics for comparing strategies: the tie-corrected Friedman test
//! (reported as Kendall's W, Q and p) and Dunn's post-hoc test with
//! Bonferroni adjustment, plus the special functions they rely on.
//!
//! Dunn's test here pools all observations and treats the groups as
//! independent samples, even when they come from the same segments. That is
//! the procedure the comparison tables are built with; it ignores the pairing
//! the Friedman test accounts for.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
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

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    if x == 0.5 {
        return 0.5 * std::f64::consts::PI.ln();
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// Regularized upper incomplete gamma function Q(a, x) = Γ(a, x) / Γ(a).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_q domain: a={a}, x={x}");
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn prefactor(a: f64, x: f64) -> f64 {
    (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * prefactor(a, x)
}

/// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    prefactor(a, x) * h
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: u32) -> Result<f64, StatsError> {
    if x.is_nan() || x < 0.0 {
        return Err(StatsError::Domain(format!(
            "chi-square statistic must be >= 0, got {x}"
        )));
    }
    if df == 0 {
        return Err(StatsError::Domain("degrees of freedom must be >= 1".into()));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_q(df as f64 / 2.0, x / 2.0))
}

/// Complementary error function, via erfc(x) = Q(1/2, x²) for x ≥ 0.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x > 27.3 {
        return 0.0;
    }
    gamma_q(0.5, x * x)
}

/// Upper tail of the standard normal distribution.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// 1-based ranks, ties sharing the mean of the positions they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Sum of t³ − t over the groups of tied values.
pub fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    /// Kendall's coefficient of concordance.
    pub w: f64,
    pub df: u32,
    pub q: f64,
    pub p: f64,
    pub n_blocks: usize,
    pub k_methods: usize,
}

/// Friedman test over `data[block][method]`.
///
/// W = 12 S / (n²(k³ − k) − n ΣT), Q = n(k − 1) W, p from the chi-square
/// upper tail with k − 1 degrees of freedom. When every block is fully tied
/// the result is W = 0, Q = 0, p = 1.
pub fn friedman(data: &[Vec<f64>]) -> Result<FriedmanResult, StatsError> {
    let n = data.len();
    if n < 2 {
        return Err(StatsError::Shape(format!("need at least 2 blocks, got {n}")));
    }
    let k = data[0].len();
    if k < 2 {
        return Err(StatsError::Shape(format!("need at least 2 methods, got {k}")));
    }
    if let Some(i) = data.iter().position(|row| row.len() != k) {
        return Err(StatsError::Shape(format!(
            "block {i} has {} values, expected {k}",
            data[i].len()
        )));
    }

    let mut rank_sums = vec![0.0; k];
    let mut ties = 0.0;
    for row in data {
        for (sum, r) in rank_sums.iter_mut().zip(midranks(row)) {
            *sum += r;
        }
        ties += tie_term(row);
    }
    let (nf, kf) = (n as f64, k as f64);
    let mean_rank_sum = nf * (kf + 1.0) / 2.0;
    let s: f64 = rank_sums.iter().map(|r| (r - mean_rank_sum).powi(2)).sum();
    let denom = nf * nf * (kf * kf * kf - kf) - nf * ties;
    let df = (k - 1) as u32;

    if denom <= 0.0 {
        return Ok(FriedmanResult {
            w: 0.0,
            df,
            q: 0.0,
            p: 1.0,
            n_blocks: n,
            k_methods: k,
        });
    }
    let w = 12.0 * s / denom;
    let q = nf * (kf - 1.0) * w;
    Ok(FriedmanResult {
        w,
        df,
        q,
        p: chi2_sf(q, df)?,
        n_blocks: n,
        k_methods: k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnResult {
    pub methods: Vec<String>,
    /// Signed z of row minus column mean rank.
    pub z: Vec<Vec<f64>>,
    pub p_raw: Vec<Vec<f64>>,
    /// Bonferroni-adjusted two-sided p-values, capped at 1.
    pub p_adj: Vec<Vec<f64>>,
    /// All pooled observations were equal, so no comparison is possible.
    pub degenerate: bool,
}

/// Dunn's test on pooled mid-ranks with tie correction.
///
/// Degenerate input (every pooled value equal) is not an error: it yields
/// `degenerate = true` with every adjusted p equal to 1.
pub fn dunn(groups: &[Vec<f64>], methods: &[String]) -> Result<DunnResult, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::Shape(format!("need at least 2 groups, got {k}")));
    }
    if methods.len() != k {
        return Err(StatsError::Shape(format!("{} names for {k} groups", methods.len())));
    }
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(StatsError::Shape(format!("group {i} is empty")));
    }

    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let ranks = midranks(&pooled);
    let n_total = pooled.len() as f64;
    let ties = tie_term(&pooled);

    let mut mean_ranks = Vec::with_capacity(k);
    let mut offset = 0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        mean_ranks.push(r / g.len() as f64);
        offset += g.len();
    }

    let variance = n_total * (n_total + 1.0) / 12.0 - ties / (12.0 * (n_total - 1.0));
    let degenerate = variance.is_nan() || variance <= 0.0 || n_total < 2.0;
    let comparisons = (k * (k - 1) / 2) as f64;

    let mut z = vec![vec![0.0; k]; k];
    let mut p_raw = vec![vec![1.0; k]; k];
    let mut p_adj = vec![vec![1.0; k]; k];
    if !degenerate {
        for i in 0..k {
            for j in (i + 1)..k {
                let se = (variance * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
                let zij = (mean_ranks[i] - mean_ranks[j]) / se;
                let p = (2.0 * normal_sf(zij.abs())).min(1.0);
                let adj = (comparisons * p).min(1.0);
                z[i][j] = zij;
                z[j][i] = -zij;
                p_raw[i][j] = p;
                p_raw[j][i] = p;
                p_adj[i][j] = adj;
                p_adj[j][i] = adj;
            }
        }
    }
    Ok(DunnResult {
        methods: methods.to_vec(),
        z,
        p_raw,
        p_adj,
        degenerate,
    })
}

/// `7.78×10⁻¹⁴` style rendering with `digits` significant decimals,
/// written as `7.78e-14`.
pub fn scientific(p: f64, digits: usize) -> String {
    format!("{p:.digits$e}")
}

impl FriedmanResult {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8}{:>10}{:>6}{:>12}{:>14}", "Source", "W", "df", "Q", "p-unc");
        let _ = writeln!(
            out,
            "{:<8}{:>10.4}{:>6}{:>12.3}{:>14}",
            "Method",
            self.w,
            self.df,
            self.q,
            scientific(self.p, 3)
        );
        out
    }
}

impl DunnResult {
    pub fn render_table(&self) -> String {
        let names: Vec<String> = self.methods.iter().map(|m| format!("Correct_{m}")).collect();
        let width = names.iter().map(String::len).max().unwrap_or(0).max(10) + 2;
        let mut out = format!("{:<width$}", "");
        for n in &names {
            let _ = write!(out, "{n:>width$}");
        }
        out.push('\n');
        for (n, row) in names.iter().zip(&self.p_adj) {
            let _ = write!(out, "{n:<width$}");
            for p in row {
                let _ = write!(out, "{p:>width$.6}");
            }
            out.push('\n');
        }
        out
    }
}
