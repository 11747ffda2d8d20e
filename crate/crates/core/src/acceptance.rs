//! The acceptance suite: nine numbered checks with pinned parameters and
//! tolerances, runnable through `cmd_validate` or the `acceptance`
//! integration test. Each check returns a pass/fail outcome with a one-line
//! detail string.
//!
//! Checks 4 and 7 pin the unbounded model at `ε = 0.05` in d = 1. At that
//! interaction strength the schedule family `q_n = 1 - a e^{-(2d)^n}`,
//! `L_n = L_1 |ε|^{-(n-1)/2}` admits no parameters satisfying the
//! hypotheses: H3 caps `a` at about 0.102, hence `q_0 >= 0.962`, while
//! `γ̃(0.05, L_1) <= 0.893` for every `L_1`, so H1 (`γ̃ >= q_0`) is
//! unsatisfiable; the checks report the certificate and fail honestly.
//! Companion checks 4b and 7b run the identical protocol at `ε = 0.01`,
//! where the hypotheses hold, and must pass.

use std::collections::HashMap;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coupler::{BoundaryConfig, FlatCoupler, StratifiedCoupler};
use crate::error::Result;
use crate::exec::{replica_seed, replicate};
use crate::gauss;
use crate::geometry::{NeighborhoodSpec, TorusWindow};
use crate::marks::MarkStore;
use crate::particle::{self, forward_glauber, window_marks, Spin, UpdateRule};
use crate::sampler::{GaussianRun, GaussianSampler, SamplerOptions, TruncatedSampler};
use crate::schedule::{self, LevelSchedule, ModelParams};
use crate::stats;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionOutcome {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub runtime_s: f64,
    pub detail: String,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:4} [{}] {:.1}s  {} — {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.runtime_s,
            self.name,
            self.detail
        )
    }
}

// Pinned experiment parameters.

/// Truncated-model interaction for check 2. Small enough that the
/// linearized slope `ε/2` of the truncated conditional mean stays within
/// the 3-SE tolerance of the regression (the exact slope carries the factor
/// `1 - 2Lφ(L)/Z ≈ 0.774` at L = 2).
pub const C2_EPSILON: f64 = 0.0125;
pub const C2_HALFWIDTH: f64 = 2.0;
pub const C2_N: u32 = 200_000;
pub const C2_WINDOW_N: u32 = 20_000;
pub const C2_SEED: u64 = 0x67b1_77aa;
pub const C2_ORACLE_SIDE: u32 = 1000;
pub const C2_ORACLE_BURN_SWEEPS: f64 = 50.0;
pub const C2_ORACLE_SNAPSHOTS: usize = 200;
pub const C2_ORACLE_SPACING: f64 = 2.0;

pub const C3_N: u32 = 100_000;
pub const C3_SEED: u64 = 0x1357_9bdf;

/// The stated unbounded-model interaction of checks 4 and 7.
pub const STATED_EPSILON: f64 = 0.05;
/// Companion interaction at which the schedule hypotheses are satisfiable.
pub const COMPANION_EPSILON: f64 = 0.01;
pub const COMPANION_A: f64 = 0.1;
pub const COMPANION_L1: f64 = 3.5;
pub const C4_N: u32 = 100_000;
pub const C4_SEED: u64 = 0x2468_ace0;

pub const C5_TRIALS: u32 = 100_000;
pub const C5_SEED: u64 = 0x00dd_ba11;
pub const C5_GAMMA: f64 = 0.8;

pub const C7_SEED: u64 = 0x7e57_ab1e;
pub const C7_N: u32 = 100_000;

pub const C8_SEED: u64 = 0x00c0_ffee;

pub fn companion_schedule() -> LevelSchedule {
    LevelSchedule::new(COMPANION_A, COMPANION_L1, COMPANION_EPSILON, 1)
        .expect("companion schedule is valid")
}

fn outcome(
    id: &'static str,
    name: &'static str,
    started: Instant,
    passed: bool,
    detail: String,
) -> CriterionOutcome {
    CriterionOutcome {
        id,
        name,
        passed,
        runtime_s: started.elapsed().as_secs_f64(),
        detail,
    }
}

/// 1: maximal-coupling quadrature at L = 2.
pub fn criterion_1() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let l = 2.0;
    let exact_one = gauss::gamma_truncated(0.0, l)? == 1.0;
    let eps = [0.2, 0.1, 0.05, 0.025];
    let gammas: Vec<f64> = eps
        .iter()
        .map(|&e| gauss::gamma_truncated(e, l))
        .collect::<Result<_>>()?;
    let increasing = gammas.windows(2).all(|w| w[0] < w[1]);
    let lipschitz = eps
        .iter()
        .zip(&gammas)
        .all(|(&e, &g)| 1.0 - g <= gauss::lipschitz_eta_bound(e, l));
    let fine = gauss::gamma_truncated_with(0.1, l, 8001, 801)?;
    let stable = ((gammas[1] - fine) / fine).abs() < 1e-6;
    let passed = exact_one && increasing && lipschitz && stable && t0.elapsed().as_secs() < 10;
    Ok(outcome(
        "1",
        "maximal-coupling quadrature",
        t0,
        passed,
        format!(
            "gamma(0)=1 {exact_one}; increasing {increasing}; 1-gamma<=eta bound {lipschitz}; \
             doubling drift {:.2e}",
            ((gammas[1] - fine) / fine).abs()
        ),
    ))
}

fn c2_coupler() -> Result<FlatCoupler> {
    FlatCoupler::new(C2_EPSILON, C2_HALFWIDTH)
}

/// The 2·10^5 exact truncated samples of check 2, reused by check 9.
pub fn c2_cftp_batch(coupler: &FlatCoupler) -> Result<Vec<f64>> {
    let spec = NeighborhoodSpec::unit_sphere(1)?;
    let sampler = TruncatedSampler::new(coupler, spec, SamplerOptions::default())?;
    let values: Vec<Result<f64>> = replicate(C2_N, |i| {
        let mut store = MarkStore::new(replica_seed(C2_SEED, i), 1);
        let (v, _) = sampler.sample(&mut store, &mut HashMap::new(), &[0])?;
        Ok(v)
    });
    values.into_iter().collect()
}

/// 2: high-noise gate + truncated CFTP exactness.
pub fn criterion_2() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let coupler = c2_coupler()?;
    let gate = 0.5;
    let gate_ok = coupler.gamma > gate;

    // (a) range check over the exact batch
    let cftp = c2_cftp_batch(&coupler)?;
    let in_range = cftp.iter().all(|v| v.abs() <= C2_HALFWIDTH);

    // (b) one-site marginal vs the forward-Glauber long-run oracle
    let torus = TorusWindow::new(1, C2_ORACLE_SIDE)?;
    let spec = NeighborhoodSpec::unit_sphere(1)?;
    let mut store = MarkStore::new(C2_SEED ^ 0xfeed, 1);
    let span = C2_ORACLE_BURN_SWEEPS + C2_ORACLE_SPACING * C2_ORACLE_SNAPSHOTS as f64;
    let tau = -span;
    let marks = window_marks(&mut store, &torus, tau);
    let mut rng = ChaCha8Rng::seed_from_u64(C2_SEED ^ 0xbeef);
    let tn = gauss::TruncatedNormal::new(0.0, C2_HALFWIDTH)?;
    let initial: Vec<f64> = (0..torus.num_sites())
        .map(|_| tn.quantile(rng.gen_range(1e-12..1.0)))
        .collect::<Result<_>>()?;
    let snapshot_times: Vec<f64> = (0..C2_ORACLE_SNAPSHOTS)
        .map(|k| tau + C2_ORACLE_BURN_SWEEPS + k as f64 * C2_ORACLE_SPACING)
        .collect();
    let (_, snaps) = forward_glauber(
        &torus,
        &spec,
        initial,
        &marks,
        &UpdateRule::Flat(&coupler),
        &snapshot_times,
    )?;
    let oracle: Vec<Vec<f64>> = snaps
        .iter()
        .flat_map(|s| s.iter().map(|&v| vec![v]))
        .collect();
    let cftp_windows: Vec<Vec<f64>> = cftp.iter().map(|&v| vec![v]).collect();
    let tv = stats::tv_discretized(&cftp_windows, &oracle, 32)?;

    // (c) conditional regression on window samples
    let sampler = TruncatedSampler::new(&coupler, spec.clone(), SamplerOptions::default())?;
    let windows: Vec<Result<(f64, f64)>> = replicate(C2_WINDOW_N, |i| {
        let mut store = MarkStore::new(replica_seed(C2_SEED ^ 0x5151, i), 1);
        let window = [vec![-1], vec![0], vec![1]];
        let (fs, _) = sampler.sample_window(&mut store, &window)?;
        Ok((fs.values[1], fs.values[0] + fs.values[2]))
    });
    let mut x0 = Vec::with_capacity(C2_WINDOW_N as usize);
    let mut s = Vec::with_capacity(C2_WINDOW_N as usize);
    for w in windows {
        let (a, b) = w?;
        x0.push(a);
        s.push(b);
    }
    let reg = stats::conditional_regression(&x0, &s)?;
    let slope_ok = (reg.slope - C2_EPSILON / 2.0).abs() <= 3.0 * reg.slope_se;

    let passed = gate_ok && in_range && tv.passes && slope_ok && t0.elapsed().as_secs() < 600;
    Ok(outcome(
        "2",
        "high-noise gate + truncated CFTP exactness",
        t0,
        passed,
        format!(
            "gamma {:.4} > 0.5 {gate_ok}; range {in_range}; TV {:.5} vs null {:.5}+3*{:.5} {}; \
             slope {:.5} vs {:.5} +- {:.5} {}",
            coupler.gamma,
            tv.tv,
            tv.null_mean,
            tv.null_sd,
            tv.passes,
            reg.slope,
            C2_EPSILON / 2.0,
            3.0 * reg.slope_se,
            slope_ok
        ),
    ))
}

/// Interaction strength whose flat coupling probability is just above 0.8
/// at L = 2 (bisection on the quadrature).
pub fn epsilon_for_gamma(target: f64, halfwidth: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0f64, 0.5f64); // gamma decreasing in eps
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let g = gauss::gamma_truncated_with(mid, halfwidth, 2001, 201)?;
        if g > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // land on the high-gamma side so the stated 0.8 bound stays valid
    Ok(lo)
}

/// 3: coding-radius tail against the branching bound.
pub fn criterion_3() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let eps = epsilon_for_gamma(0.8, 2.0)?;
    let coupler = FlatCoupler::new(eps, 2.0)?;
    let spec = NeighborhoodSpec::unit_sphere(1)?;
    let sampler = TruncatedSampler::new(&coupler, spec, SamplerOptions::default())?;
    let depths: Vec<Result<u32>> = replicate(C3_N, |i| {
        let mut store = MarkStore::new(replica_seed(C3_SEED, i), 1);
        let (_, r) = sampler.sample(&mut store, &mut HashMap::new(), &[0])?;
        Ok(r.depth)
    });
    let depths: Vec<u32> = depths.into_iter().collect::<Result<_>>()?;
    // the computed gamma is >= 0.8, so the stated bound with gamma = 0.8
    // dominates the true tail
    let rep = stats::tail_curve(&depths, 1, 0.8, 2);
    let eligible = rep.rows.iter().filter(|r| r.exceedances >= 30).count();
    let passed = rep.passes && eligible >= 3 && t0.elapsed().as_secs() < 300;
    Ok(outcome(
        "3",
        "coding-radius tail vs branching bound",
        t0,
        passed,
        format!(
            "eps {:.5} gamma {:.5}; {} depths with >=30 exceedances, flagged {:?}",
            eps, coupler.gamma, eligible, rep.flagged
        ),
    ))
}

/// Tridiagonal solve of `(I - T) x = e_mid` on `[-half, half]` (d = 1), an
/// independent dense-matrix route to the covariance.
fn tridiagonal_covariance(eps: f64, half: usize, offset: usize) -> f64 {
    let n = 2 * half + 1;
    let off = -eps / 2.0;
    // Thomas algorithm on the constant tridiagonal system
    let mut c_prime = vec![0.0f64; n];
    let mut d_prime = vec![0.0f64; n];
    let mid = half;
    let rhs = |i: usize| if i == mid { 1.0 } else { 0.0 };
    c_prime[0] = off / 1.0;
    d_prime[0] = rhs(0) / 1.0;
    for i in 1..n {
        let m = 1.0 - off * c_prime[i - 1];
        c_prime[i] = off / m;
        d_prime[i] = (rhs(i) - off * d_prime[i - 1]) / m;
    }
    let mut x = vec![0.0f64; n];
    x[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d_prime[i] - c_prime[i] * x[i + 1];
    }
    x[mid + offset]
}

/// The 10^5 unbounded-model samples at the companion interaction, reused by
/// check 9: values at sites 0 and 1 under one store per replica.
pub fn c4_companion_batch() -> Result<Vec<(f64, f64)>> {
    let coupler = StratifiedCoupler::new(companion_schedule())?;
    let sampler = GaussianSampler::new(&coupler, SamplerOptions::default())?;
    let pairs: Vec<Result<(f64, f64)>> = replicate(C4_N, |i| {
        let mut store = MarkStore::new(replica_seed(C4_SEED, i), 1);
        let mut run = GaussianRun::default();
        let (v0, _, _) = sampler.sample(&mut store, &mut run, &[0])?;
        let (v1, _, _) = sampler.sample(&mut store, &mut run, &[1])?;
        Ok((v0, v1))
    });
    pairs.into_iter().collect()
}

/// 4 as stated: `ε = 0.05`. Reports the schedule infeasibility certificate.
pub fn criterion_4_stated() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let scan = schedule::find_schedule(STATED_EPSILON, 1)?;
    match &scan.schedule {
        Some(s) => {
            // Would proceed with the sampler if a schedule existed.
            Ok(outcome(
                "4",
                "unbounded-model sampler at eps = 0.05",
                t0,
                false,
                format!("unexpectedly found schedule a={} L1={}", s.a, s.l1),
            ))
        }
        None => Ok(outcome(
            "4",
            "unbounded-model sampler at eps = 0.05",
            t0,
            false,
            format!(
                "no (a, L1) satisfies H1-H4: H3 caps a at {:.4} forcing q0 >= {:.4}, \
                 but max gamma_tilde over L1 is {:.4} (at L1 = {:.2}) < q0; H1 unsatisfiable",
                scan.h3_a_max, scan.q0_at_h3_max, scan.best_gamma_tilde, scan.best_l1
            ),
        )),
    }
}

/// 4b: the identical protocol at the companion interaction.
pub fn criterion_4_companion() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let sched = companion_schedule();
    let params = ModelParams::new(1, COMPANION_EPSILON, None)?;
    let matrix = schedule::check_all(&sched, &params)?;
    if !matrix.all_pass {
        return Ok(outcome(
            "4b",
            "unbounded-model sampler at eps = 0.01",
            t0,
            false,
            "companion schedule failed the hypothesis checks".into(),
        ));
    }
    let spec = NeighborhoodSpec::unit_sphere(1)?;
    let var = gauss::covariance(COMPANION_EPSILON, &[0], &[0], 1e-12, &spec)?;
    let cov01 = gauss::covariance(COMPANION_EPSILON, &[0], &[1], 1e-12, &spec)?;
    // cross-check the Neumann variance against the dense tridiagonal route
    let dense = tridiagonal_covariance(COMPANION_EPSILON, 200, 0);
    let dense_ok = (var - dense).abs() < 1e-10;

    let pairs = c4_companion_batch()?;
    let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let sd = var.sqrt();
    let ks = stats::ks_test(&values, |x| gauss::std_normal_cdf(x / sd), 0.01)?;
    let (cov_emp, cov_se) = stats::cov_se(&pairs);
    let cov_ok = (cov_emp - cov01).abs() <= 3.0 * cov_se;

    let passed = dense_ok && ks.passes && cov_ok && t0.elapsed().as_secs() < 900;
    Ok(outcome(
        "4b",
        "unbounded-model sampler at eps = 0.01",
        t0,
        passed,
        format!(
            "var {:.6} (dense drift {:.1e}); KS {:.5} <= {:.5} {}; cov {:.5} vs {:.5} +- {:.5} {}",
            var,
            (var - dense).abs(),
            ks.statistic,
            ks.threshold,
            ks.passes,
            cov_emp,
            cov01,
            3.0 * cov_se,
            cov_ok
        ),
    ))
}

/// 5: duality identities (binary and level) plus pathwise lemmas.
pub fn criterion_5() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let binary = particle::duality_check_binary(8, -3.0, C5_GAMMA, C5_TRIALS, C5_SEED)?;
    let sched = companion_schedule();
    let kappa = vec![Spin::Fin(1); 8];
    let level = particle::duality_check_level(8, -3.0, kappa, &sched, C5_TRIALS, C5_SEED ^ 0x99)?;
    let passed = binary.passes
        && level.passes
        && binary.pathwise_violations == 0
        && level.pathwise_violations == 0
        && t0.elapsed().as_secs() < 600;
    Ok(outcome(
        "5",
        "duality identities",
        t0,
        passed,
        format!(
            "binary |{:.5}-{:.5}| <= 3*{:.5}, level |{:.5}-{:.5}| <= 3*{:.5}, violations {}+{}",
            binary.p_forward,
            binary.p_dual,
            binary.se_combined,
            level.p_forward,
            level.p_dual,
            level.se_combined,
            binary.pathwise_violations,
            level.pathwise_violations
        ),
    ))
}

/// 6: transition-rate conformance for both particle systems.
pub fn criterion_6() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let mut all_ok = true;
    let mut worst = String::new();
    for (own, nb) in [(1u8, true), (1, false), (0, true), (0, false)] {
        let (p, want, ok) = particle::binary_rate_conformance(C5_GAMMA, own, nb, 100_000, 17);
        if !ok {
            all_ok = false;
            worst = format!("binary own={own} nb={nb}: {p:.4} vs {want:.4}");
        }
    }
    let sched = companion_schedule();
    for m in [Spin::Fin(0), Spin::Fin(1), Spin::Fin(2), Spin::PosInf] {
        for k in 0..4u32 {
            let (p, want, ok) = particle::level_rate_conformance(&sched, k, m, 100_000, 29)?;
            if !ok {
                all_ok = false;
                worst = format!("level k={k} m={m:?}: {p:.4} vs {want:.4}");
            }
        }
    }
    let passed = all_ok && t0.elapsed().as_secs() < 300;
    Ok(outcome(
        "6",
        "transition-rate conformance",
        t0,
        passed,
        if all_ok {
            "all frozen-pattern rates within 3 SE".into()
        } else {
            worst
        },
    ))
}

/// 7 as stated: `ε = 0.05`. Same infeasibility as check 4.
pub fn criterion_7_stated() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let scan = schedule::find_schedule(STATED_EPSILON, 1)?;
    Ok(outcome(
        "7",
        "l-dependent approximation at eps = 0.05",
        t0,
        scan.schedule.is_some(),
        format!(
            "requires the exact sampler, blocked by the same H1 infeasibility: \
             max gamma_tilde {:.4} < required q0 {:.4}",
            scan.best_gamma_tilde, scan.q0_at_h3_max
        ),
    ))
}

#[derive(Debug, Default, Clone)]
struct C7Replica {
    disagree: [bool; 4],
    coincidence_violation: bool,
    y_pair_l4: (f64, f64),
}

/// 7b: the l-dependent approximation protocol at the companion interaction.
pub fn criterion_7_companion() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let coupler = StratifiedCoupler::new(companion_schedule())?;
    let sampler = GaussianSampler::new(&coupler, SamplerOptions::default())?;
    let ls = [2u32, 4, 6, 8];
    let rows: Vec<Result<C7Replica>> = replicate(C7_N, |i| {
        let mut store = MarkStore::new(replica_seed(C7_SEED, i), 1);
        let mut run = GaussianRun::default();
        let (x, _, cert) = sampler.sample(&mut store, &mut run, &[0])?;
        let mut rep = C7Replica::default();
        for (k, &l) in ls.iter().enumerate() {
            let y = sampler.sample_l_dependent(&mut store, &[0], l)?;
            rep.disagree[k] = x.to_bits() != y.to_bits();
            // the first dry cutset fits within depth l/2: the exact and
            // truncated evaluations must agree bit for bit
            if cert.cutset_depth <= l / 2 && rep.disagree[k] {
                rep.coincidence_violation = true;
            }
            if l == 4 {
                // independence pair: sites 0 and 2*(l/2)+1 = 5
                let y_far = sampler.sample_l_dependent(&mut store, &[5], l)?;
                rep.y_pair_l4 = (y, y_far);
            }
        }
        Ok(rep)
    });
    let mut counts = [0u64; 4];
    let mut violations = 0u64;
    let mut pairs = Vec::with_capacity(C7_N as usize);
    for row in rows {
        let r = row?;
        for (count, hit) in counts.iter_mut().zip(r.disagree) {
            *count += u64::from(hit);
        }
        violations += u64::from(r.coincidence_violation);
        pairs.push(r.y_pair_l4);
    }
    // Geometric decay: strictly decreasing until the count floors at zero.
    // Any schedule passing H3 has 1 - q_0 <= 0.038, so the disagreement
    // probability drops by more than an order of magnitude per step of l
    // and the far counts are exact zeros at N = 10^5.
    let decay_ok = counts
        .windows(2)
        .all(|w| w[1] < w[0] || (w[0] == 0 && w[1] == 0))
        && counts[0] > 0;
    let indep = stats::independence_test(&pairs)?;
    let passed = decay_ok && indep.passes && violations == 0 && t0.elapsed().as_secs() < 1200;
    Ok(outcome(
        "7b",
        "l-dependent approximation at eps = 0.01",
        t0,
        passed,
        format!(
            "disagreements {:?} / {C7_N} decaying {decay_ok}; \
             independence corr {:.5} chi2 {:.1} {}; coincidence violations {violations}",
            counts, indep.corr, indep.chi2, indep.passes
        ),
    ))
}

/// 8: coupler property suite.
pub fn criterion_8() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    let flat = FlatCoupler::new(C2_EPSILON, C2_HALFWIDTH)?;
    let strat = StratifiedCoupler::new(companion_schedule())?;
    let q0 = strat.schedule.level_prob(0);
    let mut rng = ChaCha8Rng::seed_from_u64(C8_SEED);
    let mut violations = 0u64;
    for _ in 0..10_000 {
        // flat coalescence below gamma, bitwise
        let eta = BoundaryConfig::new(vec![
            rng.gen_range(-C2_HALFWIDTH..C2_HALFWIDTH),
            rng.gen_range(-C2_HALFWIDTH..C2_HALFWIDTH),
        ]);
        let u = rng.gen::<f64>() * flat.gamma;
        if flat.update(&eta, u)?.to_bits() != flat.common_value(u)?.to_bits() {
            violations += 1;
        }
        // stratified coalescence below q0 <= gamma_tilde, bitwise
        let eta_s = BoundaryConfig::new(vec![
            rng.gen_range(-COMPANION_L1..COMPANION_L1),
            rng.gen_range(-COMPANION_L1..COMPANION_L1),
        ]);
        let us = rng.gen::<f64>() * q0;
        if strat.update(&eta_s, us)?.to_bits() != strat.zero_update(us)?.to_bits() {
            violations += 1;
        }
        // level containment for a random band n <= 5
        let n = rng.gen_range(1..=5u32);
        let lnp1 = strat.schedule.level_bound(n + 1);
        let eta_n =
            BoundaryConfig::new(vec![rng.gen_range(-lnp1..lnp1), rng.gen_range(-lnp1..lnp1)]);
        let un = rng.gen::<f64>() * strat.schedule.level_prob(n);
        if strat.update(&eta_n, un)?.abs() > strat.schedule.level_bound(n) {
            violations += 1;
        }
    }
    // distributional checks at fixed boundaries, 1% level
    let eta = BoundaryConfig::new(vec![1.0, -0.5]);
    let tn = flat.conditional(&eta)?;
    let mut rng_flat = ChaCha8Rng::seed_from_u64(C8_SEED ^ 0xf1a7);
    let mut xs: Vec<f64> = (0..100_000)
        .map(|_| flat.update(&eta, rng_flat.gen()).unwrap())
        .collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ks_flat = stats::ks_test(&xs, |s| tn.cdf(s), 0.01)?;
    let eta_s = BoundaryConfig::new(vec![2.0, 0.7]);
    let mean = eta_s.mean_field(COMPANION_EPSILON);
    let mut rng_strat = ChaCha8Rng::seed_from_u64(C8_SEED ^ 0x57a7);
    let mut ys: Vec<f64> = (0..100_000)
        .map(|_| strat.update(&eta_s, rng_strat.gen()).unwrap())
        .collect();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ks_strat = stats::ks_test(&ys, |s| gauss::std_normal_cdf(s - mean), 0.01)?;

    let passed =
        violations == 0 && ks_flat.passes && ks_strat.passes && t0.elapsed().as_secs() < 120;
    Ok(outcome(
        "8",
        "coupler property suite",
        t0,
        passed,
        format!(
            "violations {violations}; KS flat {:.5} strat {:.5} (threshold {:.5})",
            ks_flat.statistic, ks_strat.statistic, ks_flat.threshold
        ),
    ))
}

/// 9: determinism and translation covariance.
pub fn criterion_9() -> Result<CriterionOutcome> {
    let t0 = Instant::now();
    // byte-identical rerun of the check-2 batch
    let coupler = c2_coupler()?;
    let a = c2_cftp_batch(&coupler)?;
    let b = c2_cftp_batch(&coupler)?;
    let rerun2 = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    // byte-identical rerun of the check-4 companion batch
    let p1 = c4_companion_batch()?;
    let p2 = c4_companion_batch()?;
    let rerun4 = p1
        .iter()
        .zip(&p2)
        .all(|(x, y)| x.0.to_bits() == y.0.to_bits() && x.1.to_bits() == y.1.to_bits());

    // translation covariance, bitwise, over 100 (seed, shift) pairs
    let spec = NeighborhoodSpec::unit_sphere(1)?;
    let trunc = TruncatedSampler::new(&coupler, spec, SamplerOptions::default())?;
    let strat = StratifiedCoupler::new(companion_schedule())?;
    let gauss_sampler = GaussianSampler::new(&strat, SamplerOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let mut translation_ok = true;
    for k in 0..100 {
        let seed: u64 = rng.gen();
        let shift: i32 = rng.gen_range(-1000..1000);
        let mut base = MarkStore::new(seed, 1);
        let mut shifted = MarkStore::with_origin(seed, vec![shift]);
        let (v0, _) = trunc.sample(&mut base, &mut HashMap::new(), &[0])?;
        let (vs, _) = trunc.sample(&mut shifted, &mut HashMap::new(), &[shift])?;
        if v0.to_bits() != vs.to_bits() {
            translation_ok = false;
        }
        if k < 20 {
            let mut gb = MarkStore::new(seed ^ 0xabc, 1);
            let mut gs = MarkStore::with_origin(seed ^ 0xabc, vec![shift]);
            let (g0, _, _) = gauss_sampler.sample(&mut gb, &mut GaussianRun::default(), &[0])?;
            let (g1, _, _) =
                gauss_sampler.sample(&mut gs, &mut GaussianRun::default(), &[shift])?;
            if g0.to_bits() != g1.to_bits() {
                translation_ok = false;
            }
        }
    }
    let passed = rerun2 && rerun4 && translation_ok && t0.elapsed().as_secs() < 300;
    Ok(outcome(
        "9",
        "determinism and translation covariance",
        t0,
        passed,
        format!("rerun2 {rerun2}; rerun4 {rerun4}; translation {translation_ok}"),
    ))
}

type CriterionFn = fn() -> Result<CriterionOutcome>;

/// Run the whole suite (or the subset whose id starts with `filter`).
pub fn run_all(filter: Option<&str>) -> Result<Vec<CriterionOutcome>> {
    let jobs: Vec<(&str, CriterionFn)> = vec![
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4_stated),
        ("4b", criterion_4_companion),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7_stated),
        ("7b", criterion_7_companion),
        ("8", criterion_8),
        ("9", criterion_9),
    ];
    let mut out = Vec::new();
    for (id, job) in jobs {
        if let Some(f) = filter {
            if !id.starts_with(f) {
                continue;
            }
        }
        out.push(job()?);
    }
    Ok(out)
}
