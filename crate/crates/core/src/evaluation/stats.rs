//! Rank tests and the 2x2 chi-squared test.
//!
//! Ranks are handled as doubled midranks so tied groups stay integral and
//! exact null distributions can be tabulated by counting.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::EvaluationError;
use crate::scalar::Scalar;

/// Direction of a one-sided test, stated for the first sample (or for the
/// paired differences `x - y`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// The first sample tends to be larger.
    Greater,
    /// The first sample tends to be smaller.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
    ChiSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Largest `n_a * n_b` for which tie-free Mann-Whitney p-values are exact.
pub const MWU_EXACT_CELLS: usize = 10_000;
/// Work budget for the exact tied-sample Mann-Whitney distribution.
const MWU_TIED_EXACT_WORK: usize = 20_000_000;
/// Largest number of nonzero differences for which Wilcoxon is exact.
pub const WILCOXON_EXACT_MAX: usize = 20;

fn clamp_p(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Doubled midranks of `values` (ranks start at 1), plus the sizes of the
/// tied groups.
fn doubled_midranks(values: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end+1, doubled mean = start + end + 2
        let doubled = (start + end + 2) as u64;
        for &i in &order[start..=end] {
            ranks[i] = doubled;
        }
        if end > start {
            ties.push(end - start + 1);
        }
        start = end + 1;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

/// Counts of `U` for `m` vs `n` untied observations: the coefficients of the
/// Gaussian binomial `[m + n choose m]_q`.
fn mwu_null_counts(m: usize, n: usize) -> Vec<f64> {
    let (m, n) = (m.min(n), m.max(n));
    let degree = m * n;
    let mut poly = vec![0.0; degree + 1];
    poly[0] = 1.0;
    for i in 1..=m {
        // multiply by (1 - q^(n+i))
        let shift = n + i;
        for k in (shift..=degree).rev() {
            poly[k] -= poly[k - shift];
        }
        // divide by (1 - q^i)
        for k in i..=degree {
            poly[k] += poly[k - i];
        }
    }
    poly
}

/// Counts of subset rank sums (doubled) for subsets of size `k` drawn from
/// `ranks`.
fn subset_sum_counts(ranks: &[u64], k: usize) -> Vec<f64> {
    let total: u64 = ranks.iter().sum();
    let width = total as usize + 1;
    let mut table = vec![vec![0.0f64; width]; k + 1];
    table[0][0] = 1.0;
    let mut reach = 0usize;
    for (idx, &r) in ranks.iter().enumerate() {
        let r = r as usize;
        reach += r;
        for size in (1..=k.min(idx + 1)).rev() {
            let (lower, upper) = table.split_at_mut(size);
            let src = &lower[size - 1];
            let dst = &mut upper[0];
            for s in (r..=reach.min(width - 1)).rev() {
                dst[s] += src[s - r];
            }
        }
    }
    table.swap_remove(k)
}

fn tail(counts: &[f64], observed: usize, alternative: Alternative) -> f64 {
    let total: f64 = counts.iter().sum();
    let upper: f64 = counts[observed.min(counts.len())..].iter().sum();
    let lower: f64 = counts[..=observed.min(counts.len() - 1)].iter().sum();
    let p = match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
    };
    clamp_p(p / total)
}

/// One-sided Mann-Whitney U test of `a` against `b`. The statistic is
/// `U_a`, the number of pairs with `a_i > b_j` plus half the ties.
pub fn mann_whitney_u<T: Scalar>(
    a: &[T],
    b: &[T],
    alternative: Alternative,
) -> Result<TestResult, EvaluationError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).map(|v| v.to_f64_lossy()).collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let rank_sum_a2: u64 = ranks[..na].iter().sum();
    let offset2 = (na * (na + 1)) as u64;
    let u_a2 = rank_sum_a2 - offset2;
    let statistic = u_a2 as f64 / 2.0;

    if ties.is_empty() && na * nb <= MWU_EXACT_CELLS {
        let counts = mwu_null_counts(na, nb);
        let p = tail(&counts, (u_a2 / 2) as usize, alternative);
        return Ok(TestResult {
            statistic,
            p_value: p,
            method: PValueMethod::Exact,
        });
    }

    let n = na + nb;
    let small = na.min(nb);
    if !ties.is_empty() && na * nb <= MWU_EXACT_CELLS && n * small * n * (n + 1) <= MWU_TIED_EXACT_WORK
    {
        // Tabulate the smaller group's doubled rank sum, then map back to a.
        let (sizes_a_small, group) = if na <= nb {
            (true, &ranks[..na])
        } else {
            (false, &ranks[na..])
        };
        let counts = subset_sum_counts(&ranks, small);
        let observed: u64 = group.iter().sum();
        let direction = match (sizes_a_small, alternative) {
            (true, alt) => alt,
            (false, Alternative::Greater) => Alternative::Less,
            (false, Alternative::Less) => Alternative::Greater,
        };
        let p = tail(&counts, observed as usize, direction);
        return Ok(TestResult {
            statistic,
            p_value: p,
            method: PValueMethod::Exact,
        });
    }

    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let mean = naf * nbf / 2.0;
    let variance = naf * nbf / 12.0 * ((nf + 1.0) - tie_term(&ties) / (nf * (nf - 1.0)));
    let p = normal_tail(statistic, mean, variance, alternative);
    Ok(TestResult {
        statistic,
        p_value: p,
        method: PValueMethod::Normal,
    })
}

/// Continuity-corrected normal tail.
fn normal_tail(statistic: f64, mean: f64, variance: f64, alternative: Alternative) -> f64 {
    if variance <= 0.0 {
        return 1.0;
    }
    let sd = variance.sqrt();
    let normal = standard_normal();
    let p = match alternative {
        Alternative::Greater => normal.sf((statistic - mean - 0.5) / sd),
        Alternative::Less => normal.cdf((statistic - mean + 0.5) / sd),
    };
    clamp_p(p)
}

/// One-sided Wilcoxon signed-rank test on `x - y`. Zero differences are
/// dropped; the statistic is `W+`, the rank sum of positive differences.
pub fn wilcoxon_signed_rank<T: Scalar>(
    x: &[T],
    y: &[T],
    alternative: Alternative,
) -> Result<TestResult, EvaluationError> {
    if x.len() != y.len() {
        return Err(EvaluationError::LengthMismatch(x.len(), y.len()));
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a - b).to_f64_lossy())
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(EvaluationError::AllZeroDifferences);
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_midranks(&magnitudes);
    let w_plus2: u64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let statistic = w_plus2 as f64 / 2.0;
    let n = diffs.len();

    if n <= WILCOXON_EXACT_MAX {
        // each rank independently positive or negative
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![0.0f64; total as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            reach += r;
            for s in (r..=reach).rev() {
                counts[s] += counts[s - r];
            }
        }
        let p = tail(&counts, w_plus2 as usize, alternative);
        return Ok(TestResult {
            statistic,
            p_value: p,
            method: PValueMethod::Exact,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
    Ok(TestResult {
        statistic,
        p_value: normal_tail(statistic, mean, variance, alternative),
        method: PValueMethod::Normal,
    })
}

/// Pearson chi-squared test of independence on a 2x2 table, without
/// continuity correction, one degree of freedom.
pub fn chi_squared_independence(table: [[u64; 2]; 2]) -> Result<TestResult, EvaluationError> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(EvaluationError::DegenerateMargin);
    }
    let n = (rows[0] + rows[1]) as f64;
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = rows[i] as f64 * cols[j] as f64 / n;
            statistic += (observed as f64 - expected).powi(2) / expected;
        }
    }
    let p = ChiSquared::new(1.0).expect("one degree of freedom").sf(statistic);
    Ok(TestResult {
        statistic,
        p_value: p.clamp(0.0, 1.0),
        method: PValueMethod::ChiSquared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Brute-force Mann-Whitney: enumerate every way to choose which pooled
    /// positions belong to `a`, computing U from pairwise comparisons.
    fn mwu_brute(a: &[f64], b: &[f64], alternative: Alternative) -> (f64, f64) {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let u_of = |xs: &[f64], ys: &[f64]| -> f64 {
            let mut u = 0.0;
            for x in xs {
                for y in ys {
                    if x > y {
                        u += 1.0;
                    } else if x == y {
                        u += 0.5;
                    }
                }
            }
            u
        };
        let observed = u_of(a, b);
        let n = pooled.len();
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let xs: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| pooled[i]).collect();
            let ys: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| pooled[i]).collect();
            let u = u_of(&xs, &ys);
            total += 1;
            let extreme = match alternative {
                Alternative::Greater => u >= observed - 1e-9,
                Alternative::Less => u <= observed + 1e-9,
            };
            hits += u64::from(extreme);
        }
        (observed, hits as f64 / total as f64)
    }

    /// Brute-force Wilcoxon: enumerate all sign flips of the nonzero
    /// differences, ranking magnitudes with average ranks each time.
    fn wilcoxon_brute(diffs: &[f64], alternative: Alternative) -> (f64, f64) {
        let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
        let mags: Vec<f64> = d.iter().map(|x| x.abs()).collect();
        let rank_of = |i: usize| -> f64 {
            let below = mags.iter().filter(|m| **m < mags[i]).count() as f64;
            let equal = mags.iter().filter(|m| **m == mags[i]).count() as f64;
            below + (equal + 1.0) / 2.0
        };
        let ranks: Vec<f64> = (0..d.len()).map(rank_of).collect();
        let observed: f64 = (0..d.len()).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
        let mut hits = 0u64;
        let total = 1u64 << d.len();
        for mask in 0..total {
            let w: f64 = (0..d.len()).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            let extreme = match alternative {
                Alternative::Greater => w >= observed - 1e-9,
                Alternative::Less => w <= observed + 1e-9,
            };
            hits += u64::from(extreme);
        }
        (observed, hits as f64 / total as f64)
    }

    #[test]
    fn mwu_disjoint_samples() {
        let a = [1.0, 2.0, 3.0];
        let b = [4.0, 5.0, 6.0];
        let r = mann_whitney_u(&a, &b, Alternative::Less).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.05).abs() < 1e-15);
        assert_eq!(r.method, PValueMethod::Exact);
        let swapped = mann_whitney_u(&a, &b, Alternative::Greater).unwrap();
        assert!((swapped.p_value - 1.0).abs() < 1e-15);
        let mirror = mann_whitney_u(&b, &a, Alternative::Greater).unwrap();
        assert!((mirror.p_value - 0.05).abs() < 1e-15);
    }

    #[test]
    fn mwu_identical_samples() {
        let a = [1.0, 2.0, 2.0, 5.0];
        for alt in [Alternative::Greater, Alternative::Less] {
            assert!(mann_whitney_u(&a, &a, alt).unwrap().p_value >= 0.5);
        }
    }

    #[test]
    fn mwu_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let na = rng.random_range(1..=5);
            let nb = rng.random_range(1..=(8 - na).max(1));
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| f64::from(rng.random_range(0..6u8));
            let a: Vec<f64> = (0..na).map(|_| draw(&mut rng)).collect();
            let b: Vec<f64> = (0..nb).map(|_| draw(&mut rng)).collect();
            for alt in [Alternative::Greater, Alternative::Less] {
                let got = mann_whitney_u(&a, &b, alt).unwrap();
                let (u, p) = mwu_brute(&a, &b, alt);
                assert_eq!(got.statistic, u);
                assert!((got.p_value - p).abs() < 1e-12, "{a:?} {b:?} {alt:?}");
            }
        }
    }

    #[test]
    fn mwu_exact_counts_are_symmetric_and_complete() {
        let counts = mwu_null_counts(7, 9);
        let total: f64 = counts.iter().sum();
        assert_eq!(total, 11440.0); // C(16, 7)
        for k in 0..counts.len() {
            assert_eq!(counts[k], counts[counts.len() - 1 - k]);
        }
    }

    #[test]
    fn mwu_large_sample_uses_normal() {
        let a: Vec<f64> = (0..150).map(f64::from).collect();
        let b: Vec<f64> = (0..150).map(|i| f64::from(i) + 40.5).collect();
        let r = mann_whitney_u(&a, &b, Alternative::Less).unwrap();
        assert_eq!(r.method, PValueMethod::Normal);
        assert!(r.p_value < 1e-6 && r.p_value > 0.0);
    }

    #[test]
    fn wilcoxon_all_positive() {
        let x = [5.0, 6.0, 7.0, 8.0, 9.0];
        let y = [1.0, 1.5, 2.0, 2.5, 3.0];
        let r = wilcoxon_signed_rank(&x, &y, Alternative::Greater).unwrap();
        assert_eq!(r.statistic, 15.0);
        assert!((r.p_value - 0.03125).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_errors_and_symmetry() {
        let x = [1.0, 2.0];
        assert_eq!(
            wilcoxon_signed_rank(&x, &x, Alternative::Greater),
            Err(EvaluationError::AllZeroDifferences)
        );
        assert_eq!(
            wilcoxon_signed_rank(&x, &[1.0], Alternative::Greater),
            Err(EvaluationError::LengthMismatch(2, 1))
        );
        let a = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let b = [2.0, 7.0, 1.0, 8.0, 2.0, 8.0];
        let g = wilcoxon_signed_rank(&a, &b, Alternative::Greater).unwrap();
        let l = wilcoxon_signed_rank(&b, &a, Alternative::Less).unwrap();
        assert!((g.p_value - l.p_value).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let n = rng.random_range(1..=8);
            let diffs: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-3..=3i8))).collect();
            if diffs.iter().all(|d| *d == 0.0) {
                continue;
            }
            let zeros = vec![0.0; n];
            for alt in [Alternative::Greater, Alternative::Less] {
                let got = wilcoxon_signed_rank(&diffs, &zeros, alt).unwrap();
                let (w, p) = wilcoxon_brute(&diffs, alt);
                assert_eq!(got.statistic, w);
                assert!((got.p_value - p).abs() < 1e-12, "{diffs:?} {alt:?}");
            }
        }
    }

    #[test]
    fn wilcoxon_large_sample_uses_normal() {
        let x: Vec<f64> = (0..40).map(|i| f64::from(i) + 0.5).collect();
        let y: Vec<f64> = (0..40).map(f64::from).collect();
        let r = wilcoxon_signed_rank(&x, &y, Alternative::Greater).unwrap();
        assert_eq!(r.method, PValueMethod::Normal);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn chi_squared_cases() {
        let r = chi_squared_independence([[10, 0], [0, 10]]).unwrap();
        assert!((r.statistic - 20.0).abs() < 1e-12);
        assert!(r.p_value < 1e-4);
        let r = chi_squared_independence([[5, 5], [5, 5]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert_eq!(
            chi_squared_independence([[3, 0], [4, 0]]),
            Err(EvaluationError::DegenerateMargin)
        );
    }

    /// Oracle from the closed form n (ad - bc)^2 / (r1 r2 c1 c2).
    #[test]
    fn chi_squared_matches_closed_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let t = [
                [rng.random_range(1..50u64), rng.random_range(1..50u64)],
                [rng.random_range(1..50u64), rng.random_range(1..50u64)],
            ];
            let (a, b, c, d) = (t[0][0] as f64, t[0][1] as f64, t[1][0] as f64, t[1][1] as f64);
            let n = a + b + c + d;
            let closed = n * (a * d - b * c).powi(2) / ((a + b) * (c + d) * (a + c) * (b + d));
            let got = chi_squared_independence(t).unwrap().statistic;
            assert!((got - closed).abs() < 1e-9 * closed.max(1.0));
        }
    }
}
