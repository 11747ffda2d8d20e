//! Closed-form and quadrature-based Gaussian quantities.
//!
//! Everything the couplers and checkers need: the standard normal density /
//! CDF / quantile, the truncated normal, the maximal coupling probabilities
//! `gamma` (truncated model), `gamma_tilde` (stratified common component)
//! and `gamma_unbounded`, the lattice covariance via the Neumann series of
//! the interaction operator, and the Gaussian tail / Lipschitz bounds used
//! by the hypothesis checkers.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::NeighborhoodSpec;

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal CDF, via erfc for accuracy in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `P(N(0,1) > x)`.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile by bisection on the CDF, absolute tolerance 1e-12.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::QuantileRange(p));
    }
    Ok(bisect_increasing(std_normal_cdf, p, -40.0, 40.0, 1e-12))
}

/// Generalized inverse of a nondecreasing function by bisection.
///
/// Returns a point `x` in `[lo, hi]` with `f` crossing `target` within `tol`
/// of `x`. On plateaus this converges to the left edge of the crossing,
/// matching the generalized-inverse convention `inf{x : f(x) >= target}`.
pub fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if !(mid > a && mid < b) {
            break; // no representable midpoint left
        }
        if f(mid) >= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    b
}

/// `N(mean, 1)` conditioned to `[-halfwidth, halfwidth]`.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub halfwidth: f64,
    mass: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, halfwidth: f64) -> Result<Self> {
        if !(halfwidth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "halfwidth must be positive, got {halfwidth}"
            )));
        }
        let mass = normal_window_mass(mean, halfwidth);
        if mass < 1e-300 {
            return Err(Error::MassUnderflow { mean, halfwidth });
        }
        Ok(Self {
            mean,
            halfwidth,
            mass,
        })
    }

    /// `P(N(mean,1) ∈ [-L, L])`, the normalizing constant.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn pdf(&self, s: f64) -> f64 {
        if s.abs() > self.halfwidth {
            0.0
        } else {
            std_normal_pdf(s - self.mean) / self.mass
        }
    }

    /// CDF, clamped to 0 below `-L` and 1 above `L`.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= -self.halfwidth {
            0.0
        } else if s >= self.halfwidth {
            1.0
        } else {
            ((std_normal_cdf(s - self.mean) - std_normal_cdf(-self.halfwidth - self.mean))
                / self.mass)
                .clamp(0.0, 1.0)
        }
    }

    /// Generalized inverse of the CDF on `[-L, L]`, bisection to 1e-12.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::QuantileRange(p));
        }
        if p == 0.0 {
            return Ok(-self.halfwidth);
        }
        if p == 1.0 {
            return Ok(self.halfwidth);
        }
        Ok(bisect_increasing(
            |s| self.cdf(s),
            p,
            -self.halfwidth,
            self.halfwidth,
            1e-12,
        ))
    }
}

/// `P(N(mean,1) ∈ [-halfwidth, halfwidth])`.
pub fn normal_window_mass(mean: f64, halfwidth: f64) -> f64 {
    // Difference of survival functions keeps precision when the window sits
    // far into one tail.
    (std_normal_sf(-halfwidth - mean) - std_normal_sf(halfwidth - mean)).max(0.0)
}

/// Composite Simpson over `n_points` (odd, >= 3) equally spaced points.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n_points: usize) -> f64 {
    assert!(n_points >= 3 && n_points % 2 == 1);
    let h = (hi - lo) / (n_points - 1) as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..n_points - 1 {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + k as f64 * h);
    }
    acc * h / 3.0
}

/// Golden-section minimization on `[a, b]`; assumes a single basin inside.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INVPHI * (b - a);
    let mut x2 = a + INVPHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INVPHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INVPHI * (b - a);
            f2 = f(x2);
        }
    }
    f1.min(f2)
}

/// Pointwise infimum over `x ∈ [-bound, bound]` of the *normalized* truncated
/// densities `t ↦ φ(t - εx) / P(N(εx,1) ∈ [-L,L])`, evaluated at `t`.
///
/// Scans `n_x` grid points plus the endpoints, then refines the best bracket
/// by golden section; the refinement pushes the grid infimum down to the true
/// one so the common component never exceeds any conditional CDF.
pub(crate) fn inf_truncated_density(t: f64, epsilon: f64, halfwidth: f64, n_x: usize) -> f64 {
    let f = |x: f64| std_normal_pdf(t - epsilon * x) / normal_window_mass(epsilon * x, halfwidth);
    let mut best = f64::INFINITY;
    let mut best_i = 0usize;
    let step = 2.0 * halfwidth / (n_x - 1) as f64;
    for i in 0..n_x {
        let x = -halfwidth + i as f64 * step;
        let v = f(x);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let lo = -halfwidth + best_i.saturating_sub(1) as f64 * step;
    let hi = (-halfwidth + (best_i + 1) as f64 * step).min(halfwidth);
    best.min(golden_min(f, lo, hi, 60))
}

/// Maximal coupling probability of the truncated model's conditional laws,
/// `∫_{-L}^{L} inf_{|x|<=L} ḡ_{εx}^L(t) dt`, by composite Simpson quadrature.
///
/// `n_t` quadrature points (odd), `n_x` inner scan points. The defaults meet
/// a 1e-6 relative accuracy target, verified by grid doubling in the tests.
pub fn gamma_truncated_with(epsilon: f64, halfwidth: f64, n_t: usize, n_x: usize) -> Result<f64> {
    if epsilon.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "|epsilon| must be < 1, got {epsilon}"
        )));
    }
    if !(halfwidth > 0.0) {
        return Err(Error::InvalidParameter("halfwidth must be positive".into()));
    }
    if epsilon == 0.0 {
        // All conditional laws coincide; the coupling probability is 1 by
        // definition, not by quadrature.
        return Ok(1.0);
    }
    Ok(simpson(
        |t| inf_truncated_density(t, epsilon, halfwidth, n_x),
        -halfwidth,
        halfwidth,
        n_t,
    ))
}

/// `gamma_truncated_with` at the default 4001 x 401 resolution.
pub fn gamma_truncated(epsilon: f64, halfwidth: f64) -> Result<f64> {
    gamma_truncated_with(epsilon, halfwidth, 4001, 401)
}

/// Maximal coupling probability of the unbounded model: 1 at `ε = 0`,
/// otherwise 0 (the infimum over unbounded means vanishes pointwise).
pub fn gamma_unbounded(epsilon: f64) -> Result<f64> {
    if epsilon.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "|epsilon| must be < 1, got {epsilon}"
        )));
    }
    Ok(if epsilon == 0.0 { 1.0 } else { 0.0 })
}

/// Unnormalized common mass of the stratified coupler:
/// `∫_{-L1}^{L1} inf_{|x|<=L1} g_{εx}(t) dt`.
///
/// For fixed `t` the infimum over admissible means `εx ∈ [-|ε|L1, |ε|L1]` is
/// attained at the endpoint farthest from `t`, so the integrand is
/// `min(φ(t - εL1), φ(t + εL1))`; the tests validate this against a grid scan.
pub fn gamma_tilde_with(epsilon: f64, l1: f64, n_t: usize) -> Result<f64> {
    if epsilon.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "|epsilon| must be < 1, got {epsilon}"
        )));
    }
    if !(l1 > 0.0) {
        return Err(Error::InvalidParameter("L1 must be positive".into()));
    }
    Ok(simpson(
        |t| gamma_tilde_integrand(t, epsilon, l1),
        -l1,
        l1,
        n_t,
    ))
}

/// Integrand of `gamma_tilde`: min of the two endpoint densities.
pub fn gamma_tilde_integrand(t: f64, epsilon: f64, l1: f64) -> f64 {
    std_normal_pdf(t - epsilon * l1).min(std_normal_pdf(t + epsilon * l1))
}

pub fn gamma_tilde(epsilon: f64, l1: f64) -> Result<f64> {
    gamma_tilde_with(epsilon, l1, 4001)
}

/// Covariance `Γ(i, j)` of the unbounded model via the Neumann series
/// `Σ_n (number of n-step nearest-neighbour walks i → j) (ε/2d)^n`.
///
/// Walk counts are carried as weights `N_n(ε/2d)^n`, which stay below
/// `|ε|^n` and cannot overflow; the series is truncated once the tail bound
/// `|ε|^{N+1}/(1-|ε|)` drops below `tolerance`.
pub fn covariance(
    epsilon: f64,
    i: &[i32],
    j: &[i32],
    tolerance: f64,
    spec: &NeighborhoodSpec,
) -> Result<f64> {
    if epsilon.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "|epsilon| must be < 1, got {epsilon}"
        )));
    }
    if i.len() != spec.dimension() || j.len() != spec.dimension() {
        return Err(Error::InvalidParameter("site dimension mismatch".into()));
    }
    let target: Vec<i32> = j.iter().zip(i).map(|(&a, &b)| a - b).collect();
    let step_weight = epsilon / spec.size() as f64;

    let mut weights: HashMap<Vec<i32>, f64> = HashMap::new();
    weights.insert(vec![0; spec.dimension()], 1.0);

    let max_terms = 128u32;
    let mut sum = 0.0f64;
    let mut comp = 0.0f64; // Kahan compensation
    let abs_eps = epsilon.abs();
    for n in 0..=max_terms {
        if let Some(&w) = weights.get(&target) {
            let y = w - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        let tail = abs_eps.powi(n as i32 + 1) / (1.0 - abs_eps);
        if tail < tolerance {
            return Ok(sum);
        }
        let mut next: HashMap<Vec<i32>, f64> = HashMap::with_capacity(weights.len() * 2);
        for (site, w) in &weights {
            for off in spec.offsets() {
                let mut s = site.clone();
                for (c, o) in s.iter_mut().zip(off) {
                    *c += o;
                }
                *next.entry(s).or_insert(0.0) += w * step_weight;
            }
        }
        weights = next;
    }
    Err(Error::ToleranceUnreachable {
        tolerance,
        max_terms,
    })
}

/// Upper bound `(2σ / (√(2π) L)) e^{-L²/(2σ²)}` on `P(|N(0,σ²)| > L)`.
pub fn gaussian_tail_bound(halfwidth: f64, sigma: f64) -> f64 {
    2.0 * sigma / (SQRT_2PI * halfwidth) * (-halfwidth * halfwidth / (2.0 * sigma * sigma)).exp()
}

/// Lipschitz bound `6 max(L,1)³ c |ε| / λ_ε²` on `1 - γ(μ_ε^L)`, with
/// `c = e^{-1/2}/√(2π)` and `λ_ε = P(N(εL,1) ∈ [-L,L])`.
pub fn lipschitz_eta_bound(epsilon: f64, halfwidth: f64) -> f64 {
    let c = (-0.5f64).exp() / SQRT_2PI;
    let l = halfwidth.max(1.0);
    let lambda = normal_window_mass(epsilon * halfwidth, halfwidth);
    6.0 * l * l * l * c * epsilon.abs() / (lambda * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::NeighborhoodSpec;
    use proptest::prelude::*;

    #[test]
    fn std_normal_basics() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((std_normal_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        let x = 1.7;
        let round = std_normal_quantile(std_normal_cdf(x)).unwrap();
        assert!((round - x).abs() < 1e-10);
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
    }

    #[test]
    fn truncated_symmetric_cases() {
        let tn = TruncatedNormal::new(0.0, 2.0).unwrap();
        assert!((tn.quantile(0.5).unwrap()).abs() < 1e-10);
        assert_eq!(tn.cdf(2.0), 1.0);
        assert_eq!(tn.cdf(-2.0), 0.0);
        assert_eq!(tn.cdf(5.0), 1.0);
    }

    #[test]
    fn truncated_mass_underflow_rejected() {
        assert!(TruncatedNormal::new(60.0, 2.0).is_err());
    }

    /// Independent oracle: tabulate the normalized CDF of N(m,1) on [-L,L]
    /// on a fine trapezoid grid and invert by linear interpolation.
    fn trunc_quantile_oracle(mean: f64, halfwidth: f64, p: f64) -> f64 {
        let n = 400_001;
        let h = 2.0 * halfwidth / (n - 1) as f64;
        let mut cum = vec![0.0f64; n];
        let mut prev = std_normal_pdf(-halfwidth - mean);
        for k in 1..n {
            let s = -halfwidth + k as f64 * h;
            let cur = std_normal_pdf(s - mean);
            cum[k] = cum[k - 1] + 0.5 * (prev + cur) * h;
            prev = cur;
        }
        let total = cum[n - 1];
        let target = p * total;
        let idx = cum.partition_point(|&c| c < target);
        if idx == 0 {
            return -halfwidth;
        }
        let (c0, c1) = (cum[idx - 1], cum[idx]);
        let s0 = -halfwidth + (idx - 1) as f64 * h;
        s0 + h * (target - c0) / (c1 - c0)
    }

    #[test]
    fn truncated_quantile_matches_grid_oracle() {
        let tn = TruncatedNormal::new(0.5, 2.0).unwrap();
        let got = tn.quantile(0.25).unwrap();
        let want = trunc_quantile_oracle(0.5, 2.0, 0.25);
        assert!((got - want).abs() < 1e-6, "quantile {got} vs oracle {want}");
    }

    proptest! {
        #[test]
        fn trunc_roundtrip(s in -1.9f64..1.9, m in -0.5f64..0.5) {
            let tn = TruncatedNormal::new(m, 2.0).unwrap();
            let back = tn.quantile(tn.cdf(s)).unwrap();
            prop_assert!((back - s).abs() < 1e-9);
        }
    }

    #[test]
    fn gamma_truncated_is_one_at_zero_interaction() {
        assert_eq!(gamma_truncated(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(gamma_truncated(0.0, 7.0).unwrap(), 1.0);
    }

    #[test]
    fn gamma_truncated_monotone_and_bounded() {
        let l = 2.0;
        let gammas: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&e| gamma_truncated(e, l).unwrap())
            .collect();
        for pair in gammas.windows(2) {
            assert!(pair[0] < pair[1], "gamma not increasing as eps decreases");
        }
        for (&e, &g) in [0.2, 0.1, 0.05, 0.025].iter().zip(&gammas) {
            assert!(g > 0.0 && g < 1.0);
            assert!(1.0 - g <= lipschitz_eta_bound(e, l));
        }
    }

    #[test]
    fn gamma_truncated_even_and_grid_stable() {
        let g1 = gamma_truncated(0.1, 2.0).unwrap();
        let g2 = gamma_truncated(-0.1, 2.0).unwrap();
        assert!((g1 - g2).abs() < 1e-12);
        let fine = gamma_truncated_with(0.1, 2.0, 8001, 801).unwrap();
        assert!(
            ((g1 - fine) / fine).abs() < 1e-6,
            "quadrature unstable: {g1} vs {fine}"
        );
    }

    #[test]
    fn gamma_unbounded_values() {
        assert_eq!(gamma_unbounded(0.0).unwrap(), 1.0);
        assert_eq!(gamma_unbounded(0.3).unwrap(), 0.0);
        assert_eq!(gamma_unbounded(-0.7).unwrap(), 0.0);
    }

    #[test]
    fn gamma_tilde_iid_case() {
        // eps = 0: the infimum is the density itself.
        let g = gamma_tilde(0.0, 2.0).unwrap();
        let want = normal_window_mass(0.0, 2.0);
        assert!((g - want).abs() < 1e-9, "{g} vs {want}");
    }

    #[test]
    fn gamma_tilde_decreases_with_interaction() {
        let g0 = gamma_tilde(0.0, 3.0).unwrap();
        let g1 = gamma_tilde(0.05, 3.0).unwrap();
        let g2 = gamma_tilde(0.01, 3.0).unwrap();
        assert!(g1 < g0);
        assert!(g1 < g2 && g2 < g0);
    }

    #[test]
    fn gamma_tilde_endpoint_min_equals_grid_scan() {
        let (eps, l1) = (0.1, 2.0);
        for k in 0..=400 {
            let t = -l1 + 2.0 * l1 * k as f64 / 400.0;
            let endpoint = gamma_tilde_integrand(t, eps, l1);
            let mut grid = f64::INFINITY;
            for m in 0..=400 {
                let x = -l1 + 2.0 * l1 * m as f64 / 400.0;
                grid = grid.min(std_normal_pdf(t - eps * x));
            }
            assert_eq!(endpoint, grid, "t = {t}");
        }
    }

    #[test]
    fn covariance_iid() {
        let spec = NeighborhoodSpec::unit_sphere(2).unwrap();
        assert_eq!(
            covariance(0.0, &[0, 0], &[0, 0], 1e-12, &spec).unwrap(),
            1.0
        );
        assert_eq!(
            covariance(0.0, &[0, 0], &[1, 0], 1e-12, &spec).unwrap(),
            0.0
        );
    }

    #[test]
    fn covariance_variance_bounds() {
        let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
        for &e in &[0.1, 0.2, 0.5, -0.3] {
            let v = covariance(e, &[0], &[0], 1e-12, &spec).unwrap();
            assert!(
                v >= 1.0 && v <= 1.0 / (1.0 - e * e) + 1e-12,
                "var {v} at eps {e}"
            );
        }
    }

    #[test]
    fn covariance_matches_tridiagonal_inverse() {
        // d=1, eps=0.2: compare with the (0,1) entry of the inverse of the
        // 401x401 matrix I - T restricted to [-200, 200]. Truncation error is
        // below 1e-10 by the path-count tail bound.
        let n = 401usize;
        let eps = 0.2;
        let mut m = nalgebra::DMatrix::<f64>::identity(n, n);
        for r in 0..n {
            if r + 1 < n {
                m[(r, r + 1)] = -eps / 2.0;
                m[(r + 1, r)] = -eps / 2.0;
            }
        }
        let inv = m.try_inverse().expect("invertible");
        let center = 200usize;
        let want = inv[(center, center + 1)];
        let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
        let got = covariance(eps, &[0], &[1], 1e-12, &spec).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        let var = covariance(eps, &[0], &[0], 1e-12, &spec).unwrap();
        assert!((var - inv[(center, center)]).abs() < 1e-10);
    }

    #[test]
    fn covariance_unreachable_tolerance_rejected() {
        let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
        // |eps|^{129}/(1-|eps|) stays far above the tolerance at eps = 0.99
        let err = covariance(0.99, &[0], &[0], 1e-9, &spec);
        assert!(matches!(err, Err(Error::ToleranceUnreachable { .. })));
    }

    #[test]
    fn covariance_symmetry_translation() {
        let spec = NeighborhoodSpec::unit_sphere(2).unwrap();
        let pairs = [([0, 0], [1, 2]), ([3, -1], [2, 0]), ([-2, 5], [-2, 4])];
        for (i, j) in pairs {
            let a = covariance(0.15, &i, &j, 1e-12, &spec).unwrap();
            let b = covariance(0.15, &j, &i, 1e-12, &spec).unwrap();
            let shifted: Vec<i32> = j.iter().zip(&i).map(|(&x, &y)| x - y).collect();
            let c = covariance(0.15, &[0, 0], &shifted, 1e-12, &spec).unwrap();
            assert!((a - b).abs() < 1e-14);
            assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn tail_bound_dominates_exact_tail() {
        for (l, s) in [(1.0, 1.0), (2.0, 1.0), (3.0, 2.0)] {
            let exact = 2.0 * std_normal_sf(l / s);
            assert!(gaussian_tail_bound(l, s) >= exact);
        }
        assert!((gaussian_tail_bound(2.0, 1.0) - 0.053_990_966_513_188_06).abs() < 1e-12);
        assert!(gaussian_tail_bound(1e6, 1.0) == 0.0);
    }

    #[test]
    fn lipschitz_bound_properties() {
        assert_eq!(lipschitz_eta_bound(0.0, 2.0), 0.0);
        // lambda_eps stays above P(N(0,1) in [0, 2L]) for |eps| <= 1.
        for &e in &[0.0, 0.3, 0.7, 1.0, -1.0] {
            let l = 2.0;
            let lambda = normal_window_mass(e * l, l);
            let floor = std_normal_cdf(2.0 * l) - 0.5;
            assert!(lambda >= floor - 1e-15);
        }
    }
}
