//! Pairwise Granger causality by nested least-squares autoregressions.
//!
//! The restricted model regresses `y[t]` on an intercept and `y[t-1..=t-m]`;
//! the unrestricted model adds `x[t-1..=t-m]`. Both use rows `t = m..L` so the
//! residual sums are comparable, and the improvement is judged by the usual
//! nested-model F statistic.

mod fdist;

pub use fdist::{f_upper_tail, ln_beta, ln_gamma, regularized_incomplete_beta};

use serde::{Deserialize, Serialize};

use crate::align::{min_aligned_len, AlignedPair};
use crate::error::{Error, Result};

/// Pivot ratio (residual variance of a column after projecting out the
/// preceding columns, relative to its own variance) below which the design
/// is treated as exactly collinear.
const COLLINEAR_RATIO: f64 = 1e-10;
/// Pivot ratio below which the system is solved with a small ridge term.
const ILL_CONDITIONED_RATIO: f64 = 1e-7;
const RIDGE_SCALE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrangerConfig {
    /// Autoregressive order `m`, in timesteps.
    pub var_order: usize,
    /// Significance level; a pair is causal when `p < significance`.
    pub significance: f64,
}

impl Default for GrangerConfig {
    fn default() -> Self {
        Self {
            var_order: 5,
            significance: 0.05,
        }
    }
}

impl GrangerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.var_order < 1 {
            return Err(Error::Config("var_order must be at least 1".into()));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::Config(format!(
                "significance must lie in (0, 1), got {}",
                self.significance
            )));
        }
        Ok(())
    }
}

/// Least-squares fit. Coefficients are `[intercept, y lags 1..=m]` for the
/// restricted model, followed by `x lags 1..=m` for the unrestricted one.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionFit {
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub n_obs: usize,
    pub n_params: usize,
    /// The normal equations were ill-conditioned and solved with a ridge term.
    pub ridge: bool,
}

impl RegressionFit {
    /// Residual sum of squares of arbitrary coefficients on the same design,
    /// used to probe optimality.
    pub fn rss_with(&self, coefficients: &[f64], y: &[f64], x: Option<&[f64]>, m: usize) -> f64 {
        let l = y.len();
        (m..l)
            .map(|t| {
                let mut pred = coefficients[0];
                for k in 1..=m {
                    pred += coefficients[k] * y[t - k];
                }
                if let Some(x) = x {
                    for k in 1..=m {
                        pred += coefficients[m + k] * x[t - k];
                    }
                }
                (y[t] - pred).powi(2)
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub f_stat: f64,
    pub p_value: f64,
    pub df1: usize,
    pub df2: usize,
    pub significant: bool,
    pub rss_restricted: f64,
    pub rss_unrestricted: f64,
    pub ridge: bool,
}

fn check_lengths(len: usize, m: usize) -> Result<()> {
    if m < 1 {
        return Err(Error::invalid("var_order must be at least 1"));
    }
    if len < min_aligned_len(m) {
        return Err(Error::invalid(format!(
            "series of length {len} too short for order {m} (need {})",
            min_aligned_len(m)
        )));
    }
    Ok(())
}

/// Lag-`k` column over regression rows `t = m..len`.
fn lag_column(series: &[f64], m: usize, k: usize) -> &[f64] {
    &series[m - k..series.len() - k]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place Cholesky of a dense symmetric matrix (row-major, `p x p`).
/// Returns the smallest pivot ratio `d_k / A_kk` seen, or `None` when a pivot
/// is not positive.
fn cholesky(a: &mut [f64], p: usize) -> Option<f64> {
    let mut worst = f64::INFINITY;
    for j in 0..p {
        let diag = a[j * p + j];
        let mut d = diag;
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 0.0) {
            return None;
        }
        worst = worst.min(d / diag);
        let l = d.sqrt();
        a[j * p + j] = l;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / l;
        }
    }
    Some(worst)
}

fn cholesky_solve(l: &[f64], p: usize, rhs: &[f64]) -> Vec<f64> {
    let mut z = rhs.to_vec();
    for i in 0..p {
        for k in 0..i {
            z[i] -= l[i * p + k] * z[k];
        }
        z[i] /= l[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            z[i] -= l[k * p + i] * z[k];
        }
        z[i] /= l[i * p + i];
    }
    z
}

/// Least squares of `target` on an intercept plus `columns`, solved through
/// the centered normal equations (the intercept is recovered from means).
fn ols(target: &[f64], columns: &[&[f64]]) -> Result<(Vec<f64>, f64, bool)> {
    let n = target.len();
    let p = columns.len();
    let y_mean = mean(target);
    let yc: Vec<f64> = target.iter().map(|v| v - y_mean).collect();
    let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| v - mu).collect())
        .collect();

    let mut gram = vec![0.0; p * p];
    for i in 0..p {
        let raw_ss = dot(columns[i], columns[i]);
        for j in 0..=i {
            let v = dot(&centered[i], &centered[j]);
            gram[i * p + j] = v;
            gram[j * p + i] = v;
        }
        if gram[i * p + i] <= 1e-14 * raw_ss || gram[i * p + i] == 0.0 {
            return Err(Error::DegenerateFit(format!(
                "lag column {} of {p} is constant",
                i + 1
            )));
        }
    }
    let rhs: Vec<f64> = centered.iter().map(|c| dot(c, &yc)).collect();

    let mut factor = gram.clone();
    let ratio = cholesky(&mut factor, p);
    let mut ridge = false;
    match ratio {
        Some(r) if r >= ILL_CONDITIONED_RATIO => {}
        Some(r) if r >= COLLINEAR_RATIO => {
            ridge = true;
            let trace: f64 = (0..p).map(|i| gram[i * p + i]).sum();
            factor = gram.clone();
            for i in 0..p {
                factor[i * p + i] += RIDGE_SCALE * trace;
            }
            if cholesky(&mut factor, p).is_none() {
                return Err(Error::DegenerateFit("ridge factorization failed".into()));
            }
        }
        _ => {
            return Err(Error::DegenerateFit(
                "lag columns are collinear".into(),
            ))
        }
    }
    let beta = cholesky_solve(&factor, p, &rhs);

    let mut rss = 0.0;
    for t in 0..n {
        let mut r = yc[t];
        for (k, b) in beta.iter().enumerate() {
            r -= b * centered[k][t];
        }
        rss += r * r;
    }
    let intercept = y_mean - beta.iter().zip(&means).map(|(b, mu)| b * mu).sum::<f64>();
    let mut coefficients = Vec::with_capacity(p + 1);
    coefficients.push(intercept);
    coefficients.extend(beta);
    Ok((coefficients, rss, ridge))
}

/// Autoregression of `y[t]` on an intercept and `y[t-1..=t-m]`.
pub fn fit_restricted(y: &[f64], m: usize) -> Result<RegressionFit> {
    check_lengths(y.len(), m)?;
    let target = &y[m..];
    let columns: Vec<&[f64]> = (1..=m).map(|k| lag_column(y, m, k)).collect();
    let (coefficients, rss, ridge) = ols(target, &columns)?;
    Ok(RegressionFit {
        coefficients,
        rss,
        n_obs: target.len(),
        n_params: m + 1,
        ridge,
    })
}

/// Regression of `y[t]` on an intercept, `y[t-1..=t-m]` and `x[t-1..=t-m]`.
pub fn fit_unrestricted(y: &[f64], x: &[f64], m: usize) -> Result<RegressionFit> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("y has {} steps, x has {}", y.len(), x.len())));
    }
    check_lengths(y.len(), m)?;
    let target = &y[m..];
    let columns: Vec<&[f64]> = (1..=m)
        .map(|k| lag_column(y, m, k))
        .chain((1..=m).map(|k| lag_column(x, m, k)))
        .collect();
    let (coefficients, rss, ridge) = ols(target, &columns)?;
    Ok(RegressionFit {
        coefficients,
        rss,
        n_obs: target.len(),
        n_params: 2 * m + 1,
        ridge,
    })
}

/// Nested F-test of the unrestricted against the restricted fit.
pub fn f_test(
    restricted: &RegressionFit,
    unrestricted: &RegressionFit,
    m: usize,
    significance: f64,
) -> Result<GrangerResult> {
    if restricted.n_obs != unrestricted.n_obs {
        return Err(Error::Shape(format!(
            "fits use {} and {} observations",
            restricted.n_obs, unrestricted.n_obs
        )));
    }
    let n = restricted.n_obs;
    if n < 2 * m + 2 {
        return Err(Error::invalid(format!(
            "{n} observations leave no residual degrees of freedom for order {m}"
        )));
    }
    let df1 = m;
    let df2 = n - 2 * m - 1;
    let (rss_r, rss_u) = (restricted.rss, unrestricted.rss);
    let (f_stat, p_value) = if rss_u == 0.0 {
        if rss_r == 0.0 {
            return Err(Error::Undecidable);
        }
        (f64::INFINITY, 0.0)
    } else {
        // rounding can leave rss_u a hair above rss_r
        let gain = (rss_r - rss_u).max(0.0);
        let f = (gain / df1 as f64) / (rss_u / df2 as f64);
        (f, f_upper_tail(f, df1, df2))
    };
    Ok(GrangerResult {
        f_stat,
        p_value,
        df1,
        df2,
        significant: p_value < significance,
        rss_restricted: rss_r,
        rss_unrestricted: rss_u,
        ridge: restricted.ridge || unrestricted.ridge,
    })
}

/// Does `cause` Granger-cause `effect`? Both series must already be aligned.
pub fn granger_test(cause: &[f64], effect: &[f64], config: &GrangerConfig) -> Result<GrangerResult> {
    let m = config.var_order;
    let restricted = fit_restricted(effect, m)?;
    let unrestricted = fit_unrestricted(effect, cause, m)?;
    f_test(&restricted, &unrestricted, m, config.significance)
}

pub fn test_aligned(pair: &AlignedPair<'_>, config: &GrangerConfig) -> Result<GrangerResult> {
    granger_test(pair.cause, pair.effect, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn recovers_noiseless_ar1() {
        let mut y = vec![1.0];
        for _ in 1..60 {
            let last = *y.last().unwrap();
            y.push(0.5 * last);
        }
        // intercept would be collinear with a pure geometric decay only if
        // the sequence were constant; it is not
        let fit = fit_restricted(&y, 1).unwrap();
        assert!((fit.coefficients[1] - 0.5).abs() < 1e-8);
        assert!(fit.rss < 1e-8);
    }

    #[test]
    fn white_noise_ar_fit_is_flat() {
        let y = noise(7, 4000);
        let fit = fit_restricted(&y, 2).unwrap();
        for c in &fit.coefficients[1..] {
            assert!(c.abs() < 0.06, "{c}");
        }
        let n = fit.n_obs as f64;
        let target = &y[2..];
        let mu = target.iter().sum::<f64>() / n;
        let var = target.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        assert!((fit.rss / (n * var) - 1.0).abs() < 0.01);
    }

    #[test]
    fn constant_and_collinear_designs_are_degenerate() {
        let y = vec![3.0; 100];
        assert!(matches!(fit_restricted(&y, 2), Err(Error::DegenerateFit(_))));
        let z = noise(3, 100);
        assert!(matches!(fit_unrestricted(&z, &z, 2), Err(Error::DegenerateFit(_))));
    }

    /// Least squares by Householder QR on the raw design, independent of the
    /// normal equations used by the library.
    fn qr_lstsq(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let (n, p) = (rows.len(), rows[0].len());
        let mut a: Vec<Vec<f64>> = rows.to_vec();
        let mut b = y.to_vec();
        for k in 0..p {
            let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
            let alpha = if a[k][k] > 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = (k..n).map(|i| a[i][k]).collect();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            for j in k..p {
                let dot: f64 = (k..n).map(|i| v[i - k] * a[i][j]).sum();
                for i in k..n {
                    a[i][j] -= 2.0 * v[i - k] * dot / vnorm2;
                }
            }
            let dot: f64 = (k..n).map(|i| v[i - k] * b[i]).sum();
            for i in k..n {
                b[i] -= 2.0 * v[i - k] * dot / vnorm2;
            }
        }
        let mut coef = vec![0.0; p];
        for k in (0..p).rev() {
            let s: f64 = (k + 1..p).map(|j| a[k][j] * coef[j]).sum();
            coef[k] = (b[k] - s) / a[k][k];
        }
        coef
    }

    #[test]
    fn driven_series_has_large_b_coefficient() {
        let x = noise(11, 600);
        let e = noise(12, 600);
        let mut y = vec![0.0; 600];
        for t in 1..600 {
            y[t] = 0.8 * x[t - 1] + 1e-3 * e[t];
        }
        let m = 2;
        let r = fit_restricted(&y, m).unwrap();
        let u = fit_unrestricted(&y, &x, m).unwrap();
        let rows: Vec<Vec<f64>> = (m..600)
            .map(|t| vec![1.0, y[t - 1], y[t - 2], x[t - 1], x[t - 2]])
            .collect();
        let oracle = qr_lstsq(&rows, &y[m..]);
        for (a, b) in u.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{:?} vs {oracle:?}", u.coefficients);
        }
        assert!((u.coefficients[3] - 0.8).abs() < 1e-3);
        // y[t-1] carries 0.8 x[t-2], so the two columns split that weight
        assert!((u.coefficients[4] + 0.8 * u.coefficients[1]).abs() < 1e-3);
        assert!(u.rss < 1e-4 * r.rss);
        let g = f_test(&r, &u, m, 0.05).unwrap();
        assert!(g.significant && g.p_value < 1e-12);
    }

    #[test]
    fn f_test_edges() {
        let fit = |rss| RegressionFit {
            coefficients: vec![],
            rss,
            n_obs: 100,
            n_params: 3,
            ridge: false,
        };
        let g = f_test(&fit(5.0), &fit(5.0), 2, 0.05).unwrap();
        assert_eq!((g.f_stat, g.p_value, g.significant), (0.0, 1.0, false));
        assert_eq!(g.df2, 95);

        let g = f_test(&fit(5.0), &fit(0.0), 2, 0.05).unwrap();
        assert_eq!((g.f_stat, g.p_value, g.significant), (f64::INFINITY, 0.0, true));

        assert!(matches!(f_test(&fit(0.0), &fit(0.0), 2, 0.05), Err(Error::Undecidable)));
    }

    #[test]
    fn short_series_rejected() {
        assert!(fit_restricted(&noise(1, 10), 1).is_err());
        assert!(fit_restricted(&noise(1, 11), 1).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nesting_and_scale_equivariance(seed in 0u64..10_000, m in 1usize..5, c in 0.01f64..100.0) {
            let y = noise(seed, 120);
            let x = noise(seed + 1_000_000, 120);
            let r = fit_restricted(&y, m).unwrap();
            let u = fit_unrestricted(&y, &x, m).unwrap();
            prop_assert!(u.rss <= r.rss * (1.0 + 1e-9));

            let g = granger_test(&x, &y, &GrangerConfig { var_order: m, significance: 0.05 }).unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let gs = granger_test(&xs, &ys, &GrangerConfig { var_order: m, significance: 0.05 }).unwrap();
            prop_assert!((g.f_stat - gs.f_stat).abs() <= 1e-8 * g.f_stat.abs().max(1e-12));
            prop_assert!((g.p_value - gs.p_value).abs() <= 1e-8 * g.p_value.max(1e-12));
        }

        #[test]
        fn p_value_monotone_in_f(df1 in 1usize..20, df2 in 1usize..500, a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(f_upper_tail(hi, df1, df2) <= f_upper_tail(lo, df1, df2) + 1e-15);
        }
    }
}
