//! Rank-based tests and descriptive statistics for the objective measures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("all differences are zero")]
    AllZero,
    #[error("need at least one comparison")]
    NoComparisons,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Friedman,
    Wilcoxon,
}

/// How the p value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PMethod {
    /// Exact distribution under within-row permutation.
    Exact,
    ChiSquare,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResult {
    pub test: TestKind,
    /// Friedman chi-square or Wilcoxon W.
    pub statistic: f64,
    pub z: Option<f64>,
    pub df: Option<usize>,
    pub p_raw: f64,
    pub p_corrected: f64,
    pub p_method: PMethod,
    pub effect_size_r: Option<f64>,
    /// Rows (Friedman) or pairs before dropping zero differences (Wilcoxon).
    pub n: usize,
    /// Set when the normal approximation rests on fewer than 10 pairs.
    pub small_sample: bool,
}

/// Ranks starting at 1; tied values share their mean rank. Returned doubled
/// so mean ranks stay integral.
fn doubled_ranks(values: &[f64]) -> (Vec<i64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0i64; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j hold ranks i+1..=j+1; twice their mean is i+j+2.
        for &o in &order[i..=j] {
            ranks[o] = (i + j + 2) as i64;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Largest number of (state, row ordering) combinations the exact Friedman
/// distribution may expand in one row before falling back to chi-square.
const EXACT_WORK_LIMIT: usize = 2_000_000;

/// Friedman test over `data` (rows are subjects, columns conditions).
/// The p value is exact when the permutation distribution is small enough
/// to enumerate and comes from chi-square with `k - 1` degrees of freedom
/// otherwise.
pub fn friedman_test(data: &[Vec<f64>]) -> Result<StatsResult, StatsError> {
    let n = data.len();
    if n < 2 {
        return Err(StatsError::Degenerate(format!("{n} rows (need at least 2)")));
    }
    let k = data[0].len();
    if k < 2 {
        return Err(StatsError::Degenerate(format!("{k} columns (need at least 2)")));
    }
    if let Some(row) = data.iter().find(|r| r.len() != k) {
        return Err(StatsError::LengthMismatch(k, row.len()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::Degenerate("non-finite value".into()));
    }

    let mut rows = Vec::with_capacity(n);
    let mut tie_sum = 0.0;
    for row in data {
        let (r, ties) = doubled_ranks(row);
        tie_sum += ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
        rows.push(r);
    }
    let sums: Vec<i64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let observed: i64 = sums.iter().map(|s| s * s).sum();

    let (nf, kf) = (n as f64, k as f64);
    let correction = 1.0 - tie_sum / (nf * kf * (kf * kf - 1.0));
    let df = k - 1;
    if correction <= 0.0 {
        // Every row is fully tied.
        return Ok(StatsResult {
            test: TestKind::Friedman,
            statistic: 0.0,
            z: None,
            df: Some(df),
            p_raw: 1.0,
            p_corrected: 1.0,
            p_method: PMethod::Exact,
            effect_size_r: None,
            n,
            small_sample: false,
        });
    }
    // Sum of squared rank sums; ranks are doubled, hence the factor 4.
    let sum_sq = observed as f64 / 4.0;
    let chi2 = (12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0)) / correction;
    let chi2 = chi2.max(0.0);

    let (p, method) = match exact_upper_tail(&rows, observed) {
        Some(p) => (p, PMethod::Exact),
        None => {
            let dist = ChiSquared::new(df as f64).expect("df >= 1");
            (dist.sf(chi2), PMethod::ChiSquare)
        }
    };
    let p = p.clamp(0.0, 1.0);
    Ok(StatsResult {
        test: TestKind::Friedman,
        statistic: chi2,
        z: None,
        df: Some(df),
        p_raw: p,
        p_corrected: p,
        p_method: method,
        effect_size_r: None,
        n,
        small_sample: false,
    })
}

/// P(sum of squared column rank sums >= observed) when each row's ranks are
/// permuted uniformly and independently. `None` if the state space is too
/// large.
fn exact_upper_tail(rows: &[Vec<i64>], observed: i64) -> Option<f64> {
    let k = rows[0].len();
    if k > 8 {
        return None;
    }
    let mut dist: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    dist.insert(vec![0; k], 1.0);
    for row in rows {
        let perms = distinct_permutations(row);
        if dist.len() * perms.len() > EXACT_WORK_LIMIT {
            return None;
        }
        let w = 1.0 / perms.iter().map(|(_, c)| *c as f64).sum::<f64>();
        let mut next: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for (state, p) in &dist {
            for (perm, count) in &perms {
                let mut s = state.clone();
                for (a, b) in s.iter_mut().zip(perm) {
                    *a += b;
                }
                // Column order does not affect the statistic.
                s.sort_unstable();
                *next.entry(s).or_insert(0.0) += p * w * *count as f64;
            }
        }
        dist = next;
    }
    let tail: f64 = dist
        .iter()
        .filter(|(s, _)| s.iter().map(|v| v * v).sum::<i64>() >= observed)
        .map(|(_, p)| p)
        .sum();
    Some(tail)
}

/// Distinct orderings of `row` with their multiplicities among all `k!`
/// permutations.
fn distinct_permutations(row: &[i64]) -> Vec<(Vec<i64>, u64)> {
    let mut counts: BTreeMap<Vec<i64>, u64> = BTreeMap::new();
    let mut items = row.to_vec();
    permute(&mut items, 0, &mut |p| *counts.entry(p.to_vec()).or_insert(0) += 1);
    let mut out: Vec<_> = counts.into_iter().collect();
    out.sort();
    out
}

fn permute(items: &mut [i64], start: usize, visit: &mut impl FnMut(&[i64])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Two-sided Wilcoxon signed-rank test of `a` against `b`, normal
/// approximation with tie-corrected variance and no continuity correction.
/// `r = Z / sqrt(2N)` with `N` the number of pairs.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<StatsResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::Degenerate("non-finite value".into()));
    }
    let pairs = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return Err(StatsError::AllZero);
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let w2: i64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let w = w2 as f64 / 2.0;
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (w - mean) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * normal.sf(z.abs())).min(1.0);
    Ok(StatsResult {
        test: TestKind::Wilcoxon,
        statistic: w,
        z: Some(z),
        df: None,
        p_raw: p,
        p_corrected: p,
        p_method: PMethod::Normal,
        effect_size_r: Some(z / (2.0 * pairs as f64).sqrt()),
        n: pairs,
        small_sample: n < 10,
    })
}

/// `min(1, p * m)`.
pub fn bonferroni(p_raw: f64, m: usize) -> Result<f64, StatsError> {
    if m == 0 {
        return Err(StatsError::NoComparisons);
    }
    Ok((p_raw * m as f64).min(1.0))
}

/// One entry of an all-pairs comparison family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub first: usize,
    pub second: usize,
    pub result: StatsResult,
}

/// Wilcoxon tests for every pair of columns of `data`, Bonferroni-corrected
/// over the `k(k-1)/2` comparisons.
pub fn pairwise_wilcoxon(data: &[Vec<f64>]) -> Result<Vec<PairwiseResult>, StatsError> {
    let k = data.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(StatsError::Degenerate(format!("{k} columns (need at least 2)")));
    }
    let m = k * (k - 1) / 2;
    let column = |j: usize| data.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let mut out = Vec::with_capacity(m);
    for i in 0..k {
        for j in i + 1..k {
            let mut result = wilcoxon_signed_rank(&column(i), &column(j))?;
            result.p_corrected = bonferroni(result.p_raw, m)?;
            out.push(PairwiseResult {
                first: i,
                second: j,
                result,
            });
        }
    }
    Ok(out)
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) q`).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (h - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

pub fn iqr(values: &[f64]) -> Option<f64> {
    Some(quantile(values, 0.75)? - quantile(values, 0.25)?)
}
