//! Estimators and hypothesis tests shared by the validation experiments.
//!
//! Everything here is a deterministic function of its inputs (the
//! permutation null in [`tv_discretized`] draws from a fixed-seed generator),
//! so reruns agree bitwise.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// One-sample Kolmogorov-Smirnov statistic against `cdf`; `sorted` must be
/// ascending.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// KS threshold constant `c(alpha)`: 1.628 at 1%, 1.358 at 5%.
pub fn ks_constant(alpha: f64) -> Result<f64> {
    if (alpha - 0.01).abs() < 1e-12 {
        Ok(1.628)
    } else if (alpha - 0.05).abs() < 1e-12 {
        Ok(1.358)
    } else {
        Err(Error::InvalidParameter(format!(
            "KS threshold tabulated for alpha = 0.01 or 0.05 only, got {alpha}"
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub threshold: f64,
    pub passes: bool,
    pub n: usize,
}

/// One-sample KS test at level `alpha` against a monotone CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64, alpha: f64) -> Result<KsReport> {
    if samples.len() < 100 {
        return Err(Error::InvalidParameter(format!(
            "KS test needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let statistic = ks_statistic(&xs, cdf);
    let threshold = ks_constant(alpha)? / (xs.len() as f64).sqrt();
    Ok(KsReport {
        statistic,
        threshold,
        passes: statistic <= threshold,
        n: xs.len(),
    })
}

/// Two-sample KS test at level `alpha`.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<KsReport> {
    if a.len() < 100 || b.len() < 100 {
        return Err(Error::InvalidParameter(
            "two-sample KS needs at least 100 samples on each side".into(),
        ));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let mut d = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let x = xs[i].min(ys[j]);
        while i < n && xs[i] <= x {
            i += 1;
        }
        while j < m && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let threshold = ks_constant(alpha)? * ((n + m) as f64 / (n as f64 * m as f64)).sqrt();
    Ok(KsReport {
        statistic: d,
        threshold,
        passes: d <= threshold,
        n: n.min(m),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TvReport {
    /// Half-L1 distance between the binned empirical joint distributions.
    pub tv: f64,
    /// Mean of the permutation-null distribution (captures the positive
    /// bias a binned TV estimate has even when both batches share a law).
    pub null_mean: f64,
    /// Bootstrap SE of the estimate under the permutation null.
    pub null_sd: f64,
    pub bins: usize,
    pub passes: bool,
}

/// Discretized total variation between two batches of window samples
/// (windows of 1 or 2 sites, at most 32 bins per axis).
///
/// The pass rule compares the estimate against the permutation null:
/// `tv <= null_mean + 3 null_sd`, where the null is built by re-splitting
/// the pooled batches 200 times with a fixed-seed generator.
pub fn tv_discretized(a: &[Vec<f64>], b: &[Vec<f64>], bins: usize) -> Result<TvReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("empty sample batch".into()));
    }
    let dim = a[0].len();
    if dim == 0 || dim > 2 {
        return Err(Error::WindowTooLarge { sites: dim });
    }
    if bins == 0 || bins > 32 {
        return Err(Error::InvalidParameter(format!(
            "bins per axis must be in 1..=32, got {bins}"
        )));
    }
    if a.iter().chain(b).any(|w| w.len() != dim) {
        return Err(Error::InvalidParameter("ragged window samples".into()));
    }

    // Common binning over the pooled range per axis.
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for w in a.iter().chain(b) {
        for (k, &v) in w.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let cell = |w: &[f64]| -> usize {
        let mut idx = 0usize;
        for k in 0..dim {
            let span = hi[k] - lo[k];
            let t = if span > 0.0 {
                (((w[k] - lo[k]) / span) * bins as f64) as usize
            } else {
                0
            };
            idx = idx * bins + t.min(bins - 1);
        }
        idx
    };
    let n_cells = bins.pow(dim as u32);
    let tv_of = |xs: &[usize], ys: &[usize]| -> f64 {
        let mut ca = vec![0.0f64; n_cells];
        let mut cb = vec![0.0f64; n_cells];
        for &c in xs {
            ca[c] += 1.0 / xs.len() as f64;
        }
        for &c in ys {
            cb[c] += 1.0 / ys.len() as f64;
        }
        0.5 * ca.iter().zip(&cb).map(|(p, q)| (p - q).abs()).sum::<f64>()
    };

    let cells_a: Vec<usize> = a.iter().map(|w| cell(w)).collect();
    let cells_b: Vec<usize> = b.iter().map(|w| cell(w)).collect();
    let tv = tv_of(&cells_a, &cells_b);

    // Permutation null.
    let mut pooled: Vec<usize> = cells_a.iter().chain(&cells_b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7f4a_7c15);
    let reps = 200;
    let mut null = Vec::with_capacity(reps);
    for _ in 0..reps {
        pooled.shuffle(&mut rng);
        let (xs, ys) = pooled.split_at(cells_a.len());
        null.push(tv_of(xs, ys));
    }
    let null_mean = null.iter().sum::<f64>() / reps as f64;
    let null_sd =
        (null.iter().map(|v| (v - null_mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();

    Ok(TvReport {
        tv,
        null_mean,
        null_sd,
        bins,
        passes: tv <= null_mean + 3.0 * null_sd,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionReport {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub intercept_se: f64,
    pub resid_var: f64,
    pub resid_var_se: f64,
    pub n: usize,
}

/// Least squares of the site value on the sum of its neighbours.
///
/// Under the unbounded model the population slope is `ε/2d`, the intercept 0
/// and the residual variance 1.
pub fn conditional_regression(x0: &[f64], neighbor_sum: &[f64]) -> Result<RegressionReport> {
    let n = x0.len();
    if n != neighbor_sum.len() || n < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "regression needs matched samples with N >= 10^4, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_y = x0.iter().sum::<f64>() / nf;
    let mean_s = neighbor_sum.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&y, &s) in x0.iter().zip(neighbor_sum) {
        sxx += (s - mean_s) * (s - mean_s);
        sxy += (s - mean_s) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_s;
    let mut rss = 0.0;
    for (&y, &s) in x0.iter().zip(neighbor_sum) {
        let r = y - intercept - slope * s;
        rss += r * r;
    }
    let resid_var = rss / (nf - 2.0);
    let slope_se = (resid_var / sxx).sqrt();
    let intercept_se = (resid_var * (1.0 / nf + mean_s * mean_s / sxx)).sqrt();
    // Variance of the sample variance for ~Gaussian residuals: 2 sigma^4 / n.
    let resid_var_se = resid_var * (2.0 / nf).sqrt();
    Ok(RegressionReport {
        slope,
        slope_se,
        intercept,
        intercept_se,
        resid_var,
        resid_var_se,
        n,
    })
}

/// Wilson score interval for a binomial proportion at `z` standard errors.
pub fn wilson_interval(count: u64, n: u64, z: f64) -> (f64, f64) {
    let nf = n as f64;
    let p = count as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct TailCurveRow {
    pub n: u32,
    pub exceedances: u64,
    pub empirical: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// `|B|^{n-1} (1-γ)^n`, the open-active-path union bound.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailCurveReport {
    pub rows: Vec<TailCurveRow>,
    /// Arrow-to-lattice distance scale (max l1 norm over B).
    pub radius_scale: u32,
    /// Depths at which the Wilson lower bound exceeds the theoretical bound
    /// (only rows with >= 30 exceedances are eligible).
    pub flagged: Vec<u32>,
    pub passes: bool,
}

/// Exceedance curve of exploration depths against the branching bound.
pub fn tail_curve(depths: &[u32], radius_scale: u32, gamma: f64, b_size: usize) -> TailCurveReport {
    let n_total = depths.len() as u64;
    let max_depth = depths.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    let mut flagged = Vec::new();
    for n in 1..=max_depth {
        let exceedances = depths.iter().filter(|&&d| d >= n).count() as u64;
        let empirical = exceedances as f64 / n_total as f64;
        let (wilson_low, wilson_high) = wilson_interval(exceedances, n_total, 3.0);
        let bound = (b_size as f64).powi(n as i32 - 1) * (1.0 - gamma).powi(n as i32);
        if exceedances >= 30 && wilson_low > bound {
            flagged.push(n);
        }
        rows.push(TailCurveRow {
            n,
            exceedances,
            empirical,
            wilson_low,
            wilson_high,
            bound,
        });
    }
    TailCurveReport {
        rows,
        radius_scale,
        passes: flagged.is_empty(),
        flagged,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceReport {
    pub corr: f64,
    pub fisher_z: f64,
    pub fisher_se: f64,
    pub chi2: f64,
    pub chi2_threshold: f64,
    pub passes: bool,
}

/// Pearson correlation with Fisher SE plus a binned chi-square independence
/// test (8x8 quantile bins, 1% level).
pub fn independence_test(pairs: &[(f64, f64)]) -> Result<IndependenceReport> {
    let n = pairs.len();
    if n < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "independence test needs N >= 10^4, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let corr = sxy / (sxx * syy).sqrt();
    let fisher_z = 0.5 * ((1.0 + corr) / (1.0 - corr)).ln();
    let fisher_se = 1.0 / (nf - 3.0).sqrt();
    let corr_ok = fisher_z.abs() <= 3.0 * fisher_se;

    // Chi-square on quantile bins.
    let k = 8usize;
    let edges = |vals: &mut Vec<f64>| -> Vec<f64> {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (1..k).map(|i| vals[i * n / k]).collect()
    };
    let mut xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ex = edges(&mut xs);
    let ey = edges(&mut ys);
    let bin = |v: f64, e: &[f64]| e.partition_point(|&t| t < v);
    let mut table = vec![0.0f64; k * k];
    let mut row = vec![0.0f64; k];
    let mut col = vec![0.0f64; k];
    for &(x, y) in pairs {
        let (i, j) = (bin(x, &ex), bin(y, &ey));
        table[i * k + j] += 1.0;
        row[i] += 1.0;
        col[j] += 1.0;
    }
    let mut chi2 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let expect = row[i] * col[j] / nf;
            if expect > 0.0 {
                let diff = table[i * k + j] - expect;
                chi2 += diff * diff / expect;
            }
        }
    }
    let dof = ((k - 1) * (k - 1)) as f64;
    let chi2_threshold = chi2_quantile(dof, 0.99);
    let chi2_ok = chi2 <= chi2_threshold;

    Ok(IndependenceReport {
        corr,
        fisher_z,
        fisher_se,
        chi2,
        chi2_threshold,
        passes: corr_ok && chi2_ok,
    })
}

/// Wilson-Hilferty approximation of the chi-square quantile.
pub fn chi2_quantile(dof: f64, p: f64) -> f64 {
    let z = crate::gauss::std_normal_quantile(p).expect("p in (0,1)");
    let t = 1.0 - 2.0 / (9.0 * dof) + z * (2.0 / (9.0 * dof)).sqrt();
    dof * t * t * t
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical covariance of paired samples and the SE of the estimate
/// (sample SD of the centered products over sqrt n).
pub fn cov_se(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let prods: Vec<f64> = pairs.iter().map(|&(x, y)| (x - mx) * (y - my)).collect();
    let cov = prods.iter().sum::<f64>() / (n - 1.0);
    let var_prod = prods.iter().map(|v| (v - cov).powi(2)).sum::<f64>() / (n - 1.0);
    (cov, (var_prod / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::std_normal_cdf;

    #[test]
    fn ks_self_consistency_rate() {
        // Samples drawn from the hypothesized CDF pass at ~ 1 - alpha.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut passes = 0;
        let trials = 100;
        for _ in 0..trials {
            let xs: Vec<f64> = (0..10_000)
                .map(|_| crate::gauss::std_normal_quantile(rng.gen_range(1e-12..1.0)).unwrap())
                .collect();
            if ks_test(&xs, std_normal_cdf, 0.01).unwrap().passes {
                passes += 1;
            }
        }
        assert!(
            passes >= 95,
            "pass rate {passes}/100 too low for alpha=0.01"
        );
    }

    #[test]
    fn ks_rejects_constant_and_shifted() {
        let xs = vec![0.5; 1000];
        let r = ks_test(&xs, std_normal_cdf, 0.01).unwrap();
        assert!(r.statistic >= 0.5 && !r.passes);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| crate::gauss::std_normal_quantile(rng.gen_range(1e-12..1.0)).unwrap())
            .collect();
        let r = ks_test(&xs, |x| std_normal_cdf(x - 0.5), 0.01).unwrap();
        assert!(!r.passes, "power check failed: shifted null not rejected");
    }

    #[test]
    fn tv_identical_batches_zero() {
        let a: Vec<Vec<f64>> = (0..500).map(|i| vec![(i % 13) as f64]).collect();
        let r = tv_discretized(&a, &a, 16).unwrap();
        assert_eq!(r.tv, 0.0);
        assert!(r.passes);
    }

    #[test]
    fn tv_same_law_within_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draw = |rng: &mut ChaCha8Rng| {
            vec![crate::gauss::std_normal_quantile(rng.gen_range(1e-12..1.0)).unwrap()]
        };
        let a: Vec<Vec<f64>> = (0..50_000).map(|_| draw(&mut rng)).collect();
        let b: Vec<Vec<f64>> = (0..50_000).map(|_| draw(&mut rng)).collect();
        let r = tv_discretized(&a, &b, 16).unwrap();
        assert!(
            r.passes,
            "tv {} vs null {} + 3*{}",
            r.tv, r.null_mean, r.null_sd
        );
    }

    #[test]
    fn tv_detects_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<Vec<f64>> = (0..20_000)
            .map(|_| vec![crate::gauss::std_normal_quantile(rng.gen_range(1e-12..1.0)).unwrap()])
            .collect();
        let b: Vec<Vec<f64>> = a.iter().map(|w| vec![w[0] + 0.3]).collect();
        let r = tv_discretized(&a, &b, 16).unwrap();
        assert!(!r.passes);
    }

    #[test]
    fn tv_rejects_large_windows() {
        let a = vec![vec![0.0, 0.0, 0.0]];
        assert!(tv_discretized(&a, &a, 8).is_err());
    }

    #[test]
    fn regression_recovers_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x0 = Vec::new();
        let mut s = Vec::new();
        for _ in 0..20_000 {
            let sv = rng.gen_range(-2.0..2.0);
            let noise = crate::gauss::std_normal_quantile(rng.gen_range(1e-12..1.0)).unwrap();
            s.push(sv);
            x0.push(0.05 * sv + noise);
        }
        let r = conditional_regression(&x0, &s).unwrap();
        assert!((r.slope - 0.05).abs() <= 3.0 * r.slope_se);
        assert!(r.intercept.abs() <= 3.0 * r.intercept_se);
        assert!((r.resid_var - 1.0).abs() <= 3.0 * r.resid_var_se);
    }

    #[test]
    fn tail_curve_bound_column() {
        let depths = vec![0, 1, 2, 3, 0, 0];
        let rep = tail_curve(&depths, 1, 0.8, 2);
        let row3 = rep.rows.iter().find(|r| r.n == 3).unwrap();
        assert!((row3.bound - 0.032).abs() < 1e-12);
    }

    #[test]
    fn tail_curve_all_zero_when_gamma_one() {
        let depths = vec![0u32; 1000];
        let rep = tail_curve(&depths, 1, 1.0, 2);
        assert!(rep.rows.is_empty());
        assert!(rep.passes);
    }

    #[test]
    fn independence_iid_passes_adversarial_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = |rng: &mut ChaCha8Rng| {
            crate::gauss::std_normal_quantile(rng.gen_range(1e-12..1.0)).unwrap()
        };
        let indep: Vec<(f64, f64)> = (0..20_000).map(|_| (q(&mut rng), q(&mut rng))).collect();
        assert!(independence_test(&indep).unwrap().passes);

        let dep: Vec<(f64, f64)> = indep
            .iter()
            .map(|&(x, _)| (x, 0.5 * x + 0.86 * q(&mut rng)))
            .collect();
        assert!(!independence_test(&dep).unwrap().passes);
    }

    #[test]
    fn wilson_shrinks_like_inverse_sqrt_n() {
        let (lo1, hi1) = wilson_interval(100, 1000, 3.0);
        let (lo2, hi2) = wilson_interval(400, 4000, 3.0);
        let w1 = hi1 - lo1;
        let w2 = hi2 - lo2;
        assert!((w1 / w2 - 2.0).abs() < 0.1, "widths {w1} vs {w2}");
    }

    #[test]
    fn chi2_quantile_sane() {
        // chi2_{49, 0.99} ≈ 74.9.
        let q = chi2_quantile(49.0, 0.99);
        assert!((q - 74.9).abs() < 0.5, "{q}");
    }
}
