//! Update functions of the heat-bath dynamics.
//!
//! An update function pushes a uniform draw `u` to the conditional law of
//! the field at a site given its boundary configuration `η`, arranged so
//! that low `u` produces the same output for whole classes of `η`:
//!
//! * [`FlatCoupler`] (truncated model): for `u <= γ` the output is the
//!   generalized inverse of the common component `R` and does not depend on
//!   `η` at all; above `γ` the residual CDF `F(·|η) - R` is inverted.
//! * [`StratifiedCoupler`] (unbounded model): for `η ∈ [-L1,L1]^B` and
//!   `u <= γ̃` the output is the inverse of the common component `R̃`;
//!   otherwise `u` is located in the band `(q_n(η), q_{n+1}(η)]` and the
//!   band CDF is inverted, which keeps the output inside `[-L_{n+1}, L_{n+1}]`.
//!
//! Both common components are precomputed as dense monotone tables (4001
//! knots, per-interval Simpson) with linear interpolation; the per-`η` band
//! CDFs are expressed through the normal CDF and inverted by bisection.
//! Coalescence is exact by construction: every call below the common mass is
//! routed through the same table inverse, bit for bit.

use crate::error::{Error, Result};
use crate::gauss::{
    self, bisect_increasing, gamma_tilde_integrand, std_normal_cdf, TruncatedNormal,
};
use crate::schedule::LevelSchedule;

/// Field values on the boundary offsets, in canonical offset order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConfig {
    pub values: Vec<f64>,
}

impl BoundaryConfig {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// `m_η = ε (Σ_b η_b) / |B|`; for the nearest-neighbour B this is the
    /// conditional mean `(ε/2d) Σ η_b`.
    pub fn mean_field(&self, epsilon: f64) -> f64 {
        epsilon * self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn within(&self, halfwidth: f64) -> bool {
        self.values.iter().all(|v| v.abs() <= halfwidth)
    }
}

/// Dense monotone cumulative table of a nonnegative integrand on `[lo, hi]`.
///
/// Knot values are exact per-interval Simpson integrals (midpoint rule), so
/// the table is nondecreasing whatever the integrand; evaluation and
/// inversion interpolate linearly between knots.
#[derive(Debug, Clone)]
struct CommonTable {
    lo: f64,
    hi: f64,
    step: f64,
    cum: Vec<f64>,
}

impl CommonTable {
    fn build(f: impl Fn(f64) -> f64, lo: f64, hi: f64, knots: usize) -> Self {
        assert!(knots >= 2);
        let step = (hi - lo) / (knots - 1) as f64;
        let mut cum = Vec::with_capacity(knots);
        cum.push(0.0);
        let mut acc = 0.0;
        let mut left = f(lo);
        for k in 1..knots {
            let b = lo + k as f64 * step;
            let mid = b - 0.5 * step;
            let right = f(b);
            acc += step / 6.0 * (left + 4.0 * f(mid) + right);
            cum.push(acc);
            left = right;
        }
        Self { lo, hi, step, cum }
    }

    fn mass(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn hi(&self) -> f64 {
        self.hi
    }

    /// Table value at `s`, clamped to `[0, mass]` outside the support.
    fn value(&self, s: f64) -> f64 {
        if s <= self.lo {
            return 0.0;
        }
        if s >= self.hi() {
            return self.mass();
        }
        let pos = (s - self.lo) / self.step;
        let i = (pos.floor() as usize).min(self.cum.len() - 2);
        let frac = pos - i as f64;
        self.cum[i] + frac * (self.cum[i + 1] - self.cum[i])
    }

    /// Generalized inverse at `v ∈ [0, mass]` by binary search on the knots.
    fn inverse(&self, v: f64) -> f64 {
        let idx = self.cum.partition_point(|&c| c < v);
        if idx == 0 {
            return self.lo;
        }
        if idx >= self.cum.len() {
            return self.hi();
        }
        let (c0, c1) = (self.cum[idx - 1], self.cum[idx]);
        let s0 = self.lo + (idx - 1) as f64 * self.step;
        let s = if c1 > c0 {
            s0 + self.step * (v - c0) / (c1 - c0)
        } else {
            s0
        };
        s.clamp(self.lo, self.hi)
    }
}

const TABLE_KNOTS: usize = 4001;

/// Maximal coupling of the truncated model's conditional laws.
#[derive(Debug, Clone)]
pub struct FlatCoupler {
    pub epsilon: f64,
    pub halfwidth: f64,
    /// Total mass of the common component; equals `γ(μ_ε^L)` up to
    /// quadrature and is the branch threshold used by `update`.
    pub gamma: f64,
    table: CommonTable,
}

impl FlatCoupler {
    pub fn new(epsilon: f64, halfwidth: f64) -> Result<Self> {
        if !(epsilon.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "|epsilon| must be < 1, got {epsilon}"
            )));
        }
        if !(halfwidth > 0.0) {
            return Err(Error::InvalidParameter("halfwidth must be positive".into()));
        }
        let table = if epsilon == 0.0 {
            // All conditional laws coincide: the common component is the full
            // truncated density and γ = 1 exactly.
            let tn = TruncatedNormal::new(0.0, halfwidth)?;
            CommonTable::build(|t| tn.pdf(t), -halfwidth, halfwidth, TABLE_KNOTS)
        } else {
            CommonTable::build(
                |t| gauss::inf_truncated_density(t, epsilon, halfwidth, 401),
                -halfwidth,
                halfwidth,
                TABLE_KNOTS,
            )
        };
        let gamma = if epsilon == 0.0 { 1.0 } else { table.mass() };
        Ok(Self {
            epsilon,
            halfwidth,
            gamma,
            table,
        })
    }

    /// The coalesced value `R^{-1}(u)`, defined for `u <= γ`.
    pub fn common_value(&self, u: f64) -> Result<f64> {
        if u > self.gamma {
            return Err(Error::AboveCommonMass(u, self.gamma));
        }
        Ok(self.table.inverse(u.min(self.table.mass())))
    }

    /// `R(s)`: the cumulative common component.
    pub fn common_cdf(&self, s: f64) -> f64 {
        self.table.value(s)
    }

    /// `φ(η, u)`: inverse of `R` below `γ`, inverse of `F(·|η) - R` above.
    pub fn update(&self, eta: &BoundaryConfig, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::QuantileRange(u));
        }
        if !eta.within(self.halfwidth) {
            return Err(Error::InvalidParameter(format!(
                "boundary values must lie in [-{l}, {l}] for the truncated model",
                l = self.halfwidth
            )));
        }
        if u <= self.gamma {
            return self.common_value(u);
        }
        let tn = TruncatedNormal::new(eta.mean_field(self.epsilon), self.halfwidth)?;
        let target = u - self.gamma;
        Ok(bisect_increasing(
            |s| tn.cdf(s) - self.table.value(s),
            target,
            -self.halfwidth,
            self.halfwidth,
            1e-12,
        ))
    }

    /// Conditional law of the site given the boundary, for tests and oracles.
    pub fn conditional(&self, eta: &BoundaryConfig) -> Result<TruncatedNormal> {
        TruncatedNormal::new(eta.mean_field(self.epsilon), self.halfwidth)
    }
}

/// Stratified coupling of the unbounded model's conditional laws over the
/// bands `[-L_n, L_n]`.
#[derive(Debug, Clone)]
pub struct StratifiedCoupler {
    pub schedule: LevelSchedule,
    /// Mass of the common component `R̃`; equals `γ̃(μ_ε)` up to quadrature.
    pub gamma_tilde: f64,
    table: CommonTable,
    route_common: bool,
}

const MAX_BAND: u32 = 128;

impl StratifiedCoupler {
    pub fn new(schedule: LevelSchedule) -> Result<Self> {
        let (eps, l1) = (schedule.epsilon, schedule.l1);
        let table = CommonTable::build(|t| gamma_tilde_integrand(t, eps, l1), -l1, l1, TABLE_KNOTS);
        let gamma_tilde = table.mass();
        Ok(Self {
            schedule,
            gamma_tilde,
            table,
            route_common: true,
        })
    }

    /// Negative-control hook: disable the shared common-component routing so
    /// coalescence tests can observe the failure they guard against.
    #[doc(hidden)]
    pub fn with_common_routing_disabled(mut self) -> Self {
        self.route_common = false;
        self
    }

    /// The coalesced value `R̃^{-1}(u) ∈ [-L1, L1]`, defined for `u <= γ̃`.
    pub fn common_value(&self, u: f64) -> Result<f64> {
        if u > self.gamma_tilde {
            return Err(Error::AboveCommonMass(u, self.gamma_tilde));
        }
        Ok(self.table.inverse(u))
    }

    /// `q_n(η) = P(N(m_η, 1) ∈ (-L_n, L_n])` for `n >= 1`; band boundary 0 is
    /// `γ̃` inside `S_1^B` and 0 outside (the common component is skipped
    /// there, so the bands must tile all of `[0, 1]`).
    pub fn band_boundary(&self, n: u32, mean: f64, in_s1: bool) -> f64 {
        if n == 0 {
            if in_s1 {
                self.gamma_tilde
            } else {
                0.0
            }
        } else {
            gauss::normal_window_mass(mean, self.schedule.level_bound(n))
        }
    }

    /// `φ(η, u)`: common component below `γ̃` for boundary values inside
    /// `S_1^B`, band inversion otherwise. Pushes `u ~ U[0,1]` to `N(m_η, 1)`.
    pub fn update(&self, eta: &BoundaryConfig, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::QuantileRange(u));
        }
        let mean = eta.mean_field(self.schedule.epsilon);
        let in_s1 = eta.within(self.schedule.l1);
        if self.route_common && in_s1 && u <= self.gamma_tilde {
            return self.common_value(u);
        }
        self.band_update(mean, in_s1, u)
    }

    /// `φ(0, u)`: the update at the all-zero boundary configuration. Used to
    /// seed cutset marks; routes through `common_value` below `γ̃`.
    pub fn zero_update(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::QuantileRange(u));
        }
        if self.route_common && u <= self.gamma_tilde {
            return self.common_value(u);
        }
        self.band_update(0.0, true, u)
    }

    fn band_update(&self, mean: f64, in_s1: bool, u: f64) -> Result<f64> {
        let mut q_lo = self.band_boundary(0, mean, in_s1);
        let mut n = 0u32;
        loop {
            let q_hi = self.band_boundary(n + 1, mean, in_s1);
            if q_hi < q_lo {
                // Cannot occur under H1/H2 with a valid schedule; kept as a
                // guard because band masses are differences of CDFs.
                return Err(Error::ScheduleRejected(format!(
                    "negative band mass at n = {n}: q_{n}(eta) = {q_lo} > q_{}(eta) = {q_hi}",
                    n + 1
                )));
            }
            if u <= q_hi {
                break;
            }
            q_lo = q_hi;
            n += 1;
            if n >= MAX_BAND {
                return Err(Error::BandSearchOverflow(MAX_BAND, u));
            }
        }
        // Invert the band CDF F̂_n over [-L_{n+1}, L_{n+1}].
        let target = u - q_lo;
        let l_out = self.schedule.level_bound(n + 1);
        let l_in = if n >= 1 {
            Some(self.schedule.level_bound(n))
        } else {
            None
        };
        let f_hat = |s: f64| -> f64 {
            let outer = window_cdf(mean, l_out, s);
            match (n, in_s1, l_in) {
                (0, true, _) => outer - self.table.value(s),
                (0, false, _) => outer,
                (_, _, Some(li)) => outer - window_cdf(mean, li, s),
                _ => unreachable!(),
            }
        };
        Ok(bisect_increasing(f_hat, target, -l_out, l_out, 1e-12))
    }
}

/// `F(-l, min(s, l) | mean) = P(N(mean,1) ∈ (-l, min(s,l)])`, zero for `s <= -l`.
fn window_cdf(mean: f64, l: f64, s: f64) -> f64 {
    if s <= -l {
        0.0
    } else {
        let top = s.min(l);
        (std_normal_cdf(top - mean) - std_normal_cdf(-l - mean)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::std_normal_cdf;
    use crate::stats::ks_statistic;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn flat(eps: f64, l: f64) -> FlatCoupler {
        FlatCoupler::new(eps, l).unwrap()
    }

    fn strat(a: f64, l1: f64, eps: f64, d: usize) -> StratifiedCoupler {
        StratifiedCoupler::new(LevelSchedule::new(a, l1, eps, d).unwrap()).unwrap()
    }

    #[test]
    fn flat_coalesces_below_gamma() {
        let c = flat(0.1, 2.0);
        let etas = [
            BoundaryConfig::new(vec![1.0, -0.5]),
            BoundaryConfig::new(vec![-2.0, 2.0]),
            BoundaryConfig::new(vec![0.3, 0.3]),
        ];
        let u = c.gamma / 2.0;
        let v0 = c.update(&etas[0], u).unwrap();
        for eta in &etas {
            assert_eq!(c.update(eta, u).unwrap(), v0, "coalescence must be bitwise");
        }
        assert_eq!(c.common_value(u).unwrap(), v0);
    }

    #[test]
    fn flat_iid_equals_truncated_quantile() {
        let c = flat(0.0, 2.0);
        assert_eq!(c.gamma, 1.0);
        let tn = TruncatedNormal::new(0.0, 2.0).unwrap();
        let eta = BoundaryConfig::new(vec![1.7, -0.2]);
        for &u in &[0.01, 0.3, 0.5, 0.77, 0.999] {
            let got = c.update(&eta, u).unwrap();
            let want = tn.quantile(u).unwrap();
            assert!((got - want).abs() < 1e-5, "u={u}: {got} vs {want}");
        }
    }

    #[test]
    fn flat_mass_matches_gamma_quadrature() {
        let c = flat(0.1, 2.0);
        let g = gauss::gamma_truncated(0.1, 2.0).unwrap();
        assert!(
            (c.gamma - g).abs() < 1e-6,
            "table mass {} vs quadrature {g}",
            c.gamma
        );
    }

    #[test]
    fn flat_common_component_dominated() {
        // R(s) <= F(s | eta) for sampled eta (grid and off-grid means).
        let c = flat(0.1, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let eta = BoundaryConfig::new(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let tn = c.conditional(&eta).unwrap();
            for k in 0..=100 {
                let s = -2.0 + 4.0 * k as f64 / 100.0;
                assert!(
                    c.common_cdf(s) <= tn.cdf(s) + 1e-9,
                    "domination failed at s={s}"
                );
            }
        }
    }

    #[test]
    fn flat_update_law_ks() {
        // Fixed eta = (1.0, -0.5) at d=1, eps=0.1, L=2: empirical law of
        // outputs vs the truncated-normal CDF.
        let c = flat(0.1, 2.0);
        let eta = BoundaryConfig::new(vec![1.0, -0.5]);
        let tn = c.conditional(&eta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| c.update(&eta, rng.gen::<f64>()).unwrap())
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = ks_statistic(&xs, |s| tn.cdf(s));
        assert!(d < 1.358 / (n as f64).sqrt(), "KS statistic {d} too large");
        assert!(xs.iter().all(|v| v.abs() <= 2.0));
    }

    #[test]
    fn stratified_common_branch_bitwise() {
        // eps = 0.01, a = 0.1, L1 = 3.5 satisfies H1 (gamma_tilde > q_0).
        let c = strat(0.1, 3.5, 0.01, 1);
        let q0 = c.schedule.level_prob(0);
        assert!(c.gamma_tilde >= q0, "H1 must hold for this test setup");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let eta = BoundaryConfig::new(vec![rng.gen_range(-3.5..3.5), rng.gen_range(-3.5..3.5)]);
            let u = rng.gen::<f64>() * q0;
            let v = c.update(&eta, u).unwrap();
            let z = c.zero_update(u).unwrap();
            assert_eq!(v, z, "coalescence below q0 must be bitwise");
            assert!(v.abs() <= 3.5);
        }
    }

    #[test]
    fn stratified_level_containment() {
        // eta in S_{n+1}^B and u <= q_n  =>  output in [-L_n, L_n], n = 1..5.
        let c = strat(0.1, 3.5, 0.05, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=5u32 {
            let ln = c.schedule.level_bound(n);
            let lnp1 = c.schedule.level_bound(n + 1);
            let qn = c.schedule.level_prob(n);
            for _ in 0..200 {
                let eta = BoundaryConfig::new(vec![
                    rng.gen_range(-lnp1..lnp1),
                    rng.gen_range(-lnp1..lnp1),
                ]);
                let u = rng.gen::<f64>() * qn;
                let v = c.update(&eta, u).unwrap();
                assert!(v.abs() <= ln, "containment violated: |{v}| > L_{n} = {ln}");
            }
        }
    }

    #[test]
    fn stratified_update_law_ks() {
        // Fixed eta at d=1, eps=0.05: outputs must follow N(m_eta, 1) even
        // though eta sticks out of S_1^B bands during band inversion.
        let c = strat(0.1, 3.5, 0.05, 1);
        let eta = BoundaryConfig::new(vec![1.3, -0.4]);
        let mean = eta.mean_field(0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| c.update(&eta, rng.gen::<f64>()).unwrap())
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = ks_statistic(&xs, |s| std_normal_cdf(s - mean));
        assert!(d < 1.358 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn stratified_law_outside_s1() {
        // Boundary values far outside S_1: the common component is skipped
        // and the bands alone must reproduce the conditional law.
        let c = strat(0.1, 3.5, 0.05, 1);
        let eta = BoundaryConfig::new(vec![5.0, 9.0]);
        let mean = eta.mean_field(0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| c.update(&eta, rng.gen::<f64>()).unwrap())
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = ks_statistic(&xs, |s| std_normal_cdf(s - mean));
        assert!(d < 1.358 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn band_boundaries_strictly_increase() {
        let c = strat(0.1, 3.5, 0.05, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let inside = rng.gen::<bool>();
            let span = if inside { 3.5 } else { 20.0 };
            let eta =
                BoundaryConfig::new(vec![rng.gen_range(-span..span), rng.gen_range(-span..span)]);
            let mean = eta.mean_field(0.05);
            let in_s1 = eta.within(3.5);
            // Strictly increasing until the window mass saturates to 1.0 in
            // double precision (1 - q_n(eta) is far below machine epsilon
            // from n ≈ 3 on).
            let mut prev = c.band_boundary(0, mean, in_s1);
            for n in 1..=8 {
                let q = c.band_boundary(n, mean, in_s1);
                if prev < 1.0 {
                    assert!(q > prev, "band boundary not increasing at n={n}");
                } else {
                    assert_eq!(q, 1.0);
                }
                prev = q;
            }
        }
    }

    #[test]
    fn common_value_rejects_above_mass() {
        let c = strat(0.1, 3.5, 0.05, 1);
        assert!(c.common_value(c.gamma_tilde + 0.01).is_err());
        let f = flat(0.1, 2.0);
        assert!(f.common_value(f.gamma + 0.01).is_err());
    }

    #[test]
    fn common_value_in_s1_always() {
        let c = strat(0.1, 3.5, 0.05, 1);
        for k in 0..100 {
            let u = c.gamma_tilde * k as f64 / 99.0;
            let v = c.common_value(u).unwrap();
            assert!(v.abs() <= 3.5);
        }
    }

    #[test]
    fn negative_control_routing_disabled_breaks_coalescence() {
        let c = strat(0.1, 3.5, 0.05, 1).with_common_routing_disabled();
        let q0 = c.schedule.level_prob(0);
        let eta1 = BoundaryConfig::new(vec![2.0, -1.0]);
        let eta2 = BoundaryConfig::new(vec![-3.0, 3.0]);
        let mut diverged = false;
        for k in 1..50 {
            let u = q0 * k as f64 / 50.0;
            let a = c.update(&eta1, u).unwrap();
            let b = c.update(&eta2, u).unwrap();
            if a != b {
                diverged = true;
            }
        }
        assert!(
            diverged,
            "disabling the common routing must break coalescence"
        );
    }
}
