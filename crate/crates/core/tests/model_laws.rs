//! Distributional laws that tie the samplers, the dynamics and the
//! analytics together: stationarity of the dynamics started from an exact
//! sample, the joint law of neighbouring sites against a long-run forward
//! oracle, and the single-site conditional law of the unbounded model.

use std::collections::HashMap;

use gmrf_sampler::coupler::{FlatCoupler, StratifiedCoupler};
use gmrf_sampler::exec::{replica_seed, replicate};
use gmrf_sampler::gauss;
use gmrf_sampler::marks::MarkStore;
use gmrf_sampler::particle::{forward_glauber, window_marks, UpdateRule};
use gmrf_sampler::sampler::{GaussianSampler, SamplerOptions, TruncatedSampler};
use gmrf_sampler::schedule::LevelSchedule;
use gmrf_sampler::{stats, NeighborhoodSpec, TorusWindow};

/// Starting the torus dynamics from an exact truncated sample and running
/// for five time units leaves the one-site marginal unchanged (two-sample
/// KS across replicas at the 1% level).
#[test]
fn glauber_preserves_the_truncated_marginal() {
    let eps = 0.1;
    let halfwidth = 2.0;
    let side = 16u32;
    let coupler = FlatCoupler::new(eps, halfwidth).unwrap();
    let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
    let sampler = TruncatedSampler::new(&coupler, spec.clone(), SamplerOptions::default()).unwrap();
    let torus = TorusWindow::new(1, side).unwrap();
    let window: Vec<Vec<i32>> = (0..side as i32).map(|i| vec![i]).collect();

    let n = 10_000u32;
    let pairs: Vec<(f64, f64)> = replicate(n, |i| {
        let mut store = MarkStore::new(replica_seed(0x91ac, i), 1);
        let (fs, _) = sampler.sample_window(&mut store, &window).unwrap();
        let before = fs.values[0];
        // fresh marks for the forward run, shifted replica stream
        let mut fwd_store = MarkStore::new(replica_seed(0x91ac ^ 0x77, i), 1);
        let marks = window_marks(&mut fwd_store, &torus, -5.0);
        let (state, _) = forward_glauber(
            &torus,
            &spec,
            fs.values.clone(),
            &marks,
            &UpdateRule::Flat(&coupler),
            &[],
        )
        .unwrap();
        (before, state[0])
    });
    let before: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let after: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ks = stats::ks_two_sample(&before, &after, 0.01).unwrap();
    assert!(
        ks.passes,
        "marginal drifted: KS {} vs {}",
        ks.statistic, ks.threshold
    );
}

/// Joint law of a two-site window of the truncated model: the empirical
/// correlation of the exact sampler matches a long-run forward simulation.
#[test]
fn window_correlation_matches_forward_oracle() {
    let eps = 0.2;
    let halfwidth = 2.0;
    let coupler = FlatCoupler::new(eps, halfwidth).unwrap();
    let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
    let sampler = TruncatedSampler::new(&coupler, spec.clone(), SamplerOptions::default()).unwrap();

    let n = 40_000u32;
    let window = [vec![0], vec![1]];
    let cftp: Vec<(f64, f64)> = replicate(n, |i| {
        let mut store = MarkStore::new(replica_seed(0xa11ce, i), 1);
        let (fs, _) = sampler.sample_window(&mut store, &window).unwrap();
        (fs.values[0], fs.values[1])
    });

    // long-run Glauber on a large torus; harvest neighbouring pairs from
    // spaced snapshots
    let side = 500u32;
    let torus = TorusWindow::new(1, side).unwrap();
    let mut store = MarkStore::new(0xbead, 1);
    let burn = 40.0;
    let n_snap = 160usize;
    let spacing = 2.0;
    let tau = -(burn + spacing * n_snap as f64);
    let marks = window_marks(&mut store, &torus, tau);
    let snapshot_times: Vec<f64> = (0..n_snap)
        .map(|k| tau + burn + k as f64 * spacing)
        .collect();
    let initial = vec![0.0; torus.num_sites()];
    let (_, snaps) = forward_glauber(
        &torus,
        &spec,
        initial,
        &marks,
        &UpdateRule::Flat(&coupler),
        &snapshot_times,
    )
    .unwrap();
    let oracle: Vec<(f64, f64)> = snaps
        .iter()
        .flat_map(|s| (0..side as usize).map(move |i| (s[i], s[(i + 1) % side as usize])))
        .collect();

    let (cov_a, se_a) = stats::cov_se(&cftp);
    let (cov_b, se_b) = stats::cov_se(&oracle);
    let se = (se_a * se_a + se_b * se_b).sqrt();
    assert!(
        (cov_a - cov_b).abs() <= 3.0 * se,
        "cov {cov_a} vs oracle {cov_b} (3 se = {})",
        3.0 * se
    );
}

/// DLR at one site for the unbounded model: regressing the exact sample at
/// the origin on the sum of its neighbours recovers slope ε/2d, intercept 0
/// and unit residual variance.
#[test]
fn unbounded_conditional_law_regression() {
    let schedule = LevelSchedule::new(0.1, 3.5, 0.01, 1).unwrap();
    let coupler = StratifiedCoupler::new(schedule).unwrap();
    let sampler = GaussianSampler::new(&coupler, SamplerOptions::default()).unwrap();
    let n = 30_000u32;
    let window = [vec![-1], vec![0], vec![1]];
    let rows: Vec<(f64, f64)> = replicate(n, |i| {
        let mut store = MarkStore::new(replica_seed(0xd1a, i), 1);
        let (fs, _, _) = sampler.sample_window(&mut store, &window).unwrap();
        (fs.values[1], fs.values[0] + fs.values[2])
    });
    let x0: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let s: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let reg = stats::conditional_regression(&x0, &s).unwrap();
    assert!(
        (reg.slope - 0.005).abs() <= 3.0 * reg.slope_se,
        "slope {} +- {}",
        reg.slope,
        reg.slope_se
    );
    assert!(reg.intercept.abs() <= 3.0 * reg.intercept_se);
    assert!(
        (reg.resid_var - 1.0).abs() <= 3.0 * reg.resid_var_se,
        "residual variance {}",
        reg.resid_var
    );
}

/// Unbounded window covariance against the Neumann-series value.
#[test]
fn unbounded_window_covariance() {
    let schedule = LevelSchedule::new(0.1, 3.5, 0.01, 1).unwrap();
    let coupler = StratifiedCoupler::new(schedule).unwrap();
    let sampler = GaussianSampler::new(&coupler, SamplerOptions::default()).unwrap();
    let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
    let n = 30_000u32;
    let window = [vec![0], vec![1]];
    let pairs: Vec<(f64, f64)> = replicate(n, |i| {
        let mut store = MarkStore::new(replica_seed(0xfade, i), 1);
        let (fs, _, _) = sampler.sample_window(&mut store, &window).unwrap();
        (fs.values[0], fs.values[1])
    });
    let want = gauss::covariance(0.01, &[0], &[1], 1e-12, &spec).unwrap();
    let (cov, se) = stats::cov_se(&pairs);
    assert!(
        (cov - want).abs() <= 3.0 * se,
        "cov {cov} vs {want} (3 se = {})",
        3.0 * se
    );
}

/// Two exact draws of the same site from one store are, of course, equal;
/// two sites far apart reveal disjoint mark sets and are independent in law.
#[test]
fn far_sites_reveal_disjoint_marks() {
    let coupler = FlatCoupler::new(0.1, 2.0).unwrap();
    let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
    let sampler = TruncatedSampler::new(&coupler, spec, SamplerOptions::default()).unwrap();
    let mut store = MarkStore::new(0xdead, 1);
    let mut memo = HashMap::new();
    let (_, r0) = sampler.sample(&mut store, &mut memo, &[0]).unwrap();
    let (_, r1) = sampler.sample(&mut store, &mut memo, &[100]).unwrap();
    assert!(r0.radius + r1.radius < 100, "cones overlapped");
}
