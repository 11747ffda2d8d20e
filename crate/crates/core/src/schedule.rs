//! Model parameters, level/probability schedules, and numeric checkers for
//! the four hypotheses behind the stratified sampler.
//!
//! The schedule family is `q_n = 1 - a e^{-(2d)^n}` and
//! `L_n = L_1 |ε|^{-(n-1)/2}`; `a` and `L_1` are free parameters exposed in
//! the experiment config. The checkers certify, for a concrete `(a, L_1)`:
//!
//! * H1: `γ̃ >= q_0` (common mass dominates the first success probability),
//! * H2: `P(|N(εL_{n+1}, 1)| > L_n) <= 1 - q_n` for `n >= 1`,
//! * H3: `4 Σ |B|^{2n+1} (1 - q_n) < 1` plus summability at witness `t = 1/2`,
//! * H4: the union-bound on `1 - μ(A_n)` tends to zero,
//!
//! together with the growth condition
//! `L_n - |ε| L_{n+1} >= sqrt(2) sqrt((2d)^n - log a)` that implies H2.
//! Infinite sums and suprema are truncated at 64 terms; the double
//! exponential decay of `1 - q_n` makes the tail negligible at double
//! precision, and the growth checker carries an explicit rate-comparison
//! certificate for n > 64.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss;
use crate::geometry::{ball_size, sphere_size};

/// Model selector: dimension, interaction strength, optional truncation.
///
/// `truncation = Some(L)` is the model with state space `[-L, L]`;
/// `None` is the unbounded Gaussian model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    pub d: usize,
    pub epsilon: f64,
    pub truncation: Option<f64>,
}

impl ModelParams {
    pub fn new(d: usize, epsilon: f64, truncation: Option<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if !(epsilon.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "|epsilon| must be < 1, got {epsilon}"
            )));
        }
        if let Some(l) = truncation {
            if !(l > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "truncation halfwidth must be positive, got {l}"
                )));
            }
        }
        Ok(Self {
            d,
            epsilon,
            truncation,
        })
    }

    /// |B| for the nearest-neighbour boundary set.
    pub fn b_size(&self) -> usize {
        2 * self.d
    }

    /// The high-noise gate `1 - 1/|B|` the truncated sampler checks against.
    pub fn high_noise_gate(&self) -> f64 {
        1.0 - 1.0 / self.b_size() as f64
    }
}

/// The level/probability schedule of the stratified coupler.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSchedule {
    pub a: f64,
    pub l1: f64,
    pub epsilon: f64,
    /// `2d`, the base of the double exponential in `q_n`.
    pub two_d: usize,
}

pub const MAX_LEVEL_TERMS: u32 = 64;

impl LevelSchedule {
    pub fn new(a: f64, l1: f64, epsilon: f64, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if epsilon == 0.0 {
            return Err(Error::ScheduleRejected(
                "epsilon = 0 is the i.i.d. field; no stratification schedule is defined".into(),
            ));
        }
        if !(epsilon.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "|epsilon| must be < 1, got {epsilon}"
            )));
        }
        if !(l1 > 0.0) {
            return Err(Error::InvalidParameter("L1 must be positive".into()));
        }
        // q_0 = 1 - a/e must lie in (0,1).
        if !(a > 0.0 && a < std::f64::consts::E) {
            return Err(Error::ScheduleRejected(format!(
                "q_0 = 1 - a/e requires 0 < a < e, got a = {a}"
            )));
        }
        Ok(Self {
            a,
            l1,
            epsilon,
            two_d: 2 * d,
        })
    }

    /// `L_n = L_1 |ε|^{-(n-1)/2}`, for `n >= 1`.
    pub fn level_bound(&self, n: u32) -> f64 {
        assert!(n >= 1, "levels are indexed from 1");
        self.l1 * self.epsilon.abs().powf(-((n as f64) - 1.0) / 2.0)
    }

    /// `q_n = 1 - a e^{-(2d)^n}`, for `n >= 0`.
    pub fn level_prob(&self, n: u32) -> f64 {
        1.0 - self.level_prob_complement(n)
    }

    /// `1 - q_n = a e^{-(2d)^n}`, kept in complement form: beyond n ≈ 6 the
    /// complement is far below machine epsilon and `q_n` rounds to 1.
    pub fn level_prob_complement(&self, n: u32) -> f64 {
        self.a * (-((self.two_d as f64).powi(n as i32))).exp()
    }

    /// `inf{k >= 0 : u <= q_k}`: the wetting reach of a mark with uniform
    /// coordinate `u`. A mark wets everything at distance strictly less than
    /// its reach (itself included when the reach is positive).
    pub fn reach_of(&self, u: f64) -> Result<u32> {
        let om_u = 1.0 - u;
        for k in 0..=MAX_LEVEL_TERMS {
            // u <= q_k  <=>  1 - u >= 1 - q_k, compared in complement form.
            if om_u >= self.level_prob_complement(k) {
                return Ok(k);
            }
        }
        Err(Error::ScheduleRejected(format!(
            "reach exceeded {MAX_LEVEL_TERMS} (u = {u}); schedule misuse"
        )))
    }

    /// `Σ_{k >= d} |B|^k (1 - q_k)`: the residual wetting probability used by
    /// dryness certificates, summed in complement form.
    pub fn wet_tail(&self, from_depth: u32, b_size: usize) -> f64 {
        let mut sum = 0.0;
        for k in from_depth..=MAX_LEVEL_TERMS {
            let term = (b_size as f64).powi(k as i32) * self.level_prob_complement(k);
            sum += term;
            if term == 0.0 {
                break;
            }
        }
        sum
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct H1Report {
    pub gamma_tilde: f64,
    pub q0: f64,
    pub passes: bool,
}

/// H1: `γ̃(μ_ε) >= q_0`, with `γ̃` from quadrature.
pub fn check_h1(schedule: &LevelSchedule) -> Result<H1Report> {
    let gamma_tilde = gauss::gamma_tilde(schedule.epsilon, schedule.l1)?;
    let q0 = schedule.level_prob(0);
    Ok(H1Report {
        gamma_tilde,
        q0,
        passes: gamma_tilde >= q0,
    })
}

/// H2 at a single `n >= 1` through the symmetrized sufficient bound
/// `2 P(N(0,1) > L_n - |ε| L_{n+1}) <= 1 - q_n`.
pub fn check_h2(schedule: &LevelSchedule, n: u32) -> bool {
    assert!(n >= 1);
    let gap = schedule.level_bound(n) - schedule.epsilon.abs() * schedule.level_bound(n + 1);
    2.0 * gauss::std_normal_sf(gap) <= schedule.level_prob_complement(n)
}

#[derive(Debug, Clone, Serialize)]
pub struct H2Report {
    pub first_violation: Option<u32>,
    pub passes: bool,
}

/// H2 for all `n <= 64`.
pub fn check_h2_all(schedule: &LevelSchedule) -> H2Report {
    let first_violation = (1..=MAX_LEVEL_TERMS).find(|&n| !check_h2(schedule, n));
    H2Report {
        first_violation,
        passes: first_violation.is_none(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct H3Report {
    /// Partial sum of `4 |B|^{2n+1} (1 - q_n)` to a machine-negligible tail.
    pub sum4: f64,
    pub passes: bool,
    /// Summability of `Σ |B|^n e^{t|B|^n} (1-q_n)` at the witness `t = 1/2`.
    pub t_exists: bool,
}

/// H3: subcriticality of the wet Boolean percolation.
pub fn check_h3(schedule: &LevelSchedule, b_size: usize) -> Result<H3Report> {
    if b_size < 2 {
        return Err(Error::InvalidParameter("|B| must be >= 2".into()));
    }
    let b = b_size as f64;
    let mut sum4 = 0.0f64;
    let mut converged = false;
    for n in 0..=MAX_LEVEL_TERMS {
        let term = 4.0 * b.powi(2 * n as i32 + 1) * schedule.level_prob_complement(n);
        sum4 += term;
        if n >= 1 && term < 1e-16 * sum4 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ScheduleRejected(format!(
            "H3 partial sums not Cauchy within {MAX_LEVEL_TERMS} terms (sum so far {sum4})"
        )));
    }

    // Witness t = 1/2: terms a |B|^n e^{-(2d)^n / 2}, which vanish
    // super-exponentially; summability certified by the same tail criterion.
    let mut wsum = 0.0f64;
    let mut t_exists = false;
    for n in 0..=MAX_LEVEL_TERMS {
        let exponent = -0.5 * (schedule.two_d as f64).powi(n as i32);
        let term = schedule.a * b.powi(n as i32) * exponent.exp();
        wsum += term;
        if n >= 1 && term < 1e-16 * wsum {
            t_exists = true;
            break;
        }
    }

    Ok(H3Report {
        sum4,
        passes: sum4 < 1.0,
        t_exists,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub min_slack: f64,
    pub passes: bool,
    pub first_violation: Option<u32>,
    /// True when `|ε|^{-1/2} >= 2d`, which rules out a crossover beyond the
    /// checked range (the left side outgrows the right per step).
    pub tail_certified: bool,
}

/// Growth condition `L_n - |ε| L_{n+1} >= sqrt(2) sqrt((2d)^n - log a)`,
/// checked for `n = 1..=64`.
pub fn check_growth(schedule: &LevelSchedule) -> Result<GrowthReport> {
    let abs_eps = schedule.epsilon.abs();
    let shrink = 1.0 - abs_eps.sqrt();
    if shrink <= 0.0 {
        return Err(Error::ScheduleRejected(format!(
            "1 - sqrt|epsilon| = {shrink} <= 0: left side of the growth condition is nonpositive"
        )));
    }
    let mut min_slack = f64::INFINITY;
    let mut first_violation = None;
    for n in 1..=MAX_LEVEL_TERMS {
        let lhs = schedule.level_bound(n) * shrink;
        let rhs = std::f64::consts::SQRT_2
            * ((schedule.two_d as f64).powi(n as i32) - schedule.a.ln()).sqrt();
        let slack = lhs - rhs;
        if slack < min_slack {
            min_slack = slack;
        }
        if slack < 0.0 && first_violation.is_none() {
            first_violation = Some(n);
        }
    }
    Ok(GrowthReport {
        min_slack,
        passes: first_violation.is_none(),
        first_violation,
        tail_certified: abs_eps.powf(-0.5) >= schedule.two_d as f64,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct H4Report {
    /// Union bound on `1 - μ(A_n)` for `n = 1..=32`, with exact ball and
    /// sphere counts and the sphere sum truncated at 64 (terms underflow
    /// long before that for any growing schedule).
    pub bounds: Vec<f64>,
    pub passes: bool,
}

impl H4Report {
    pub fn bound_at(&self, n: u32) -> f64 {
        self.bounds[(n - 1) as usize]
    }
}

/// H4: `μ(A_n) -> 1` with `A_n = {∀i, |ξ_i| <= L_{max(n, |i|)}}`,
/// via the union bound with `σ²` at its upper bound `1/(1-ε²)`.
pub fn check_h4(schedule: &LevelSchedule, params: &ModelParams) -> H4Report {
    let sigma = (1.0 / (1.0 - schedule.epsilon * schedule.epsilon)).sqrt();
    let d = params.d;
    let n_report = 32u32;
    let tail = |l: f64| gauss::gaussian_tail_bound(l, sigma);
    let mut bounds = Vec::with_capacity(n_report as usize);
    for n in 1..=n_report {
        let mut b = ball_size(d, n) as f64 * tail(schedule.level_bound(n));
        for k in n + 1..=MAX_LEVEL_TERMS {
            let term = sphere_size(d, k) as f64 * tail(schedule.level_bound(k));
            b += term;
            if term == 0.0 {
                break;
            }
        }
        bounds.push(b);
    }
    // Tends to zero: the reported tail must be strictly decreasing once
    // positive and end below 1e-9 (the exponent of L_n^2 grows like
    // |eps|^{-n}, so any valid schedule underflows much earlier).
    let last = *bounds.last().unwrap();
    let tail_decreasing = bounds
        .windows(2)
        .skip(bounds.len() / 2)
        .all(|w| w[1] < w[0] || w[1] == 0.0);
    H4Report {
        bounds,
        passes: last < 1e-9 && tail_decreasing,
    }
}

/// Outcome of every hypothesis checker on one schedule.
#[derive(Debug, Clone, Serialize)]
pub struct CheckMatrix {
    pub h1: H1Report,
    pub h2: H2Report,
    pub h3: H3Report,
    pub growth: GrowthReport,
    pub h4: H4Report,
    pub all_pass: bool,
}

pub fn check_all(schedule: &LevelSchedule, params: &ModelParams) -> Result<CheckMatrix> {
    let h1 = check_h1(schedule)?;
    let h2 = check_h2_all(schedule);
    let h3 = check_h3(schedule, params.b_size())?;
    let growth = check_growth(schedule)?;
    let h4 = check_h4(schedule, params);
    let all_pass = h1.passes && h2.passes && h3.passes && h3.t_exists && growth.passes && h4.passes;
    Ok(CheckMatrix {
        h1,
        h2,
        h3,
        growth,
        h4,
        all_pass,
    })
}

/// Result of scanning for a valid `(a, L1)` at a given interaction strength.
///
/// When no schedule exists the fields double as an infeasibility
/// certificate: `best_gamma_tilde` is the maximum of `γ̃(ε, L1)` over the
/// scanned `L1` range (growth ignored), while `q0_at_h3_max` is the smallest
/// `q_0` compatible with H3; H1 requires the former to reach the latter.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityScan {
    pub epsilon: f64,
    pub d: usize,
    /// Largest `a` for which the H3 sum stays below 1.
    pub h3_a_max: f64,
    /// `q_0` at that `a`: the smallest first success probability H3 allows.
    pub q0_at_h3_max: f64,
    pub best_gamma_tilde: f64,
    pub best_l1: f64,
    pub schedule: Option<LevelSchedule>,
}

impl FeasibilityScan {
    pub fn h1_infeasible(&self) -> bool {
        self.best_gamma_tilde < self.q0_at_h3_max
    }
}

/// Scan `(a, L1)` for a schedule passing all of H1-H4 and the growth
/// condition at interaction `epsilon` in dimension `d`.
pub fn find_schedule(epsilon: f64, d: usize) -> Result<FeasibilityScan> {
    let params = ModelParams::new(d, epsilon, None)?;
    if epsilon == 0.0 {
        return Err(Error::ScheduleRejected(
            "epsilon = 0 needs no schedule (i.i.d. field)".into(),
        ));
    }
    // H3 sum is linear in a: sum4(a) = a * S.
    let probe = LevelSchedule::new(1.0, 1.0, epsilon, d)?;
    let s = check_h3(&probe, params.b_size())?.sum4;
    let h3_a_max = 1.0 / s;
    let q0_at_h3_max = 1.0 - h3_a_max * (-1.0f64).exp();

    // Growth-free certificate: maximize gamma_tilde over L1.
    let mut best_gamma_tilde = 0.0;
    let mut best_l1 = 0.0;
    for k in 1..=400 {
        let l1 = 0.05 * k as f64;
        let g = gauss::gamma_tilde_with(epsilon, l1, 2001)?;
        if g > best_gamma_tilde {
            best_gamma_tilde = g;
            best_l1 = l1;
        }
    }

    let mut schedule = None;
    let mut best_margin = f64::NEG_INFINITY;
    if best_gamma_tilde >= q0_at_h3_max {
        let shrink = 1.0 - epsilon.abs().sqrt();
        for ka in 1..=32 {
            let a = h3_a_max * 0.97 * ka as f64 / 32.0;
            let two_d = (2 * d) as f64;
            let l1_min = std::f64::consts::SQRT_2 * (two_d - a.ln()).sqrt() / shrink;
            for kl in 0..=24 {
                let l1 = l1_min * (1.0 + 0.1 * kl as f64);
                let cand = LevelSchedule::new(a, l1, epsilon, d)?;
                let matrix = check_all(&cand, &params)?;
                if matrix.all_pass {
                    let margin = (matrix.h1.gamma_tilde - matrix.h1.q0)
                        .min(1.0 - matrix.h3.sum4)
                        .min(matrix.growth.min_slack);
                    if margin > best_margin {
                        best_margin = margin;
                        schedule = Some(cand);
                    }
                }
            }
        }
    }

    Ok(FeasibilityScan {
        epsilon,
        d,
        h3_a_max,
        q0_at_h3_max,
        best_gamma_tilde,
        best_l1,
        schedule,
    })
}
