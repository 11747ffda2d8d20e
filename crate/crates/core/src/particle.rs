//! Forward simulation of the auxiliary particle systems and their backward
//! duals on finite tori, with Monte Carlo duality verification.
//!
//! The binary spin system tracks coalescence of the truncated dynamics
//! (spin 0 = the value there no longer depends on the initial
//! configuration); the multi-level system tracks the band level the value
//! can be confined to. Each has a backward dual read off the same marks in
//! reverse; duality equates the forward probability of a spin 0 at the
//! origin with a reachability event of the dual.
//!
//! The duals come in two independent implementations: the transition-rule
//! sweep, and a literal path-search over the graphical representation
//! ([`binary_dual_path_config`], [`level_dual_path_config`]); tests require
//! them to agree configuration by configuration.

use std::collections::HashMap;

use crate::coupler::{BoundaryConfig, FlatCoupler, StratifiedCoupler};
use crate::error::Result;
use crate::geometry::{NeighborhoodSpec, TorusWindow};
use crate::marks::MarkStore;
use crate::schedule::LevelSchedule;

/// One update mark restricted to the window, densely indexed.
#[derive(Debug, Clone, Copy)]
pub struct WindowMark {
    pub time: f64,
    pub site: usize,
    pub u: f64,
}

/// All marks of the torus in `[tau, 0]`, ascending in time.
pub fn window_marks(store: &mut MarkStore, torus: &TorusWindow, tau: f64) -> Vec<WindowMark> {
    let mut events = Vec::new();
    for idx in 0..torus.num_sites() {
        let coords = torus.site_of(idx);
        for m in store.marks_in_window(&coords, tau) {
            events.push(WindowMark {
                time: store.time_of(m),
                site: idx,
                u: store.u_of(m),
            });
        }
    }
    events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    events
}

/// Multi-level spin value; the dual additionally uses `NegInf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Spin {
    NegInf,
    Fin(u32),
    PosInf,
}

impl Spin {
    pub fn is_finite(self) -> bool {
        matches!(self, Spin::Fin(_))
    }
}

/// Piecewise-constant trajectory of a site-indexed configuration, stored as
/// per-site change lists.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Copy> {
    pub initial: Vec<T>,
    /// `(time, new value)` per site, ascending in time.
    changes: Vec<Vec<(f64, T)>>,
    /// Number of window marks processed (each exactly once).
    pub marks_consumed: u64,
}

impl<T: Copy> Trajectory<T> {
    fn new(initial: Vec<T>) -> Self {
        let n = initial.len();
        Self {
            initial,
            changes: vec![Vec::new(); n],
            marks_consumed: 0,
        }
    }

    fn record(&mut self, time: f64, site: usize, value: T) {
        self.changes[site].push((time, value));
    }

    /// Value at `site` at time `t` for a forward (right-continuous) process.
    pub fn at(&self, site: usize, t: f64) -> T {
        let ch = &self.changes[site];
        match ch.partition_point(|&(s, _)| s <= t) {
            0 => self.initial[site],
            k => ch[k - 1].1,
        }
    }

    pub fn snapshot(&self, t: f64) -> Vec<T> {
        (0..self.initial.len()).map(|i| self.at(i, t)).collect()
    }
}

/// Binary spin system started all-1 at `tau`: an update sets the spin to 1
/// iff the mark is open (`u > γ`) and some neighbour holds spin 1.
pub fn forward_spin(
    torus: &TorusWindow,
    spec: &NeighborhoodSpec,
    tau: f64,
    gamma: f64,
    marks: &[WindowMark],
) -> Trajectory<u8> {
    let mut state = vec![1u8; torus.num_sites()];
    let mut traj = Trajectory::new(state.clone());
    for mark in marks {
        debug_assert!(mark.time >= tau);
        let neighbors = torus.neighbor_indices(mark.site, spec);
        let any_one = neighbors.iter().any(|&j| state[j] == 1);
        let new = u8::from(mark.u > gamma && any_one);
        traj.marks_consumed += 1;
        if new != state[mark.site] {
            state[mark.site] = new;
            traj.record(mark.time, mark.site, new);
        }
    }
    traj
}

/// Rate at which the binary system flips the spin at a site, as a function
/// of the own spin and whether some neighbour holds 1.
pub fn binary_flip_rate(gamma: f64, own: u8, any_neighbor_one: bool) -> f64 {
    if own == 1 {
        gamma + (1.0 - gamma) * f64::from(!any_neighbor_one)
    } else {
        (1.0 - gamma) * f64::from(any_neighbor_one)
    }
}

/// Multi-level system: with `m` the max neighbour spin, an update puts spin
/// `max(m-1, K(u))` where `K(u) = inf{k : u <= q_k}`; `m = +∞` is absorbing.
pub fn forward_level(
    torus: &TorusWindow,
    spec: &NeighborhoodSpec,
    kappa: Vec<Spin>,
    schedule: &LevelSchedule,
    marks: &[WindowMark],
) -> Result<Trajectory<Spin>> {
    let mut state = kappa;
    let mut traj = Trajectory::new(state.clone());
    for mark in marks {
        let m = torus
            .neighbor_indices(mark.site, spec)
            .into_iter()
            .map(|j| state[j])
            .max()
            .unwrap();
        let new = match m {
            Spin::PosInf => Spin::PosInf,
            Spin::Fin(mv) => {
                let floor = mv.saturating_sub(1);
                Spin::Fin(floor.max(schedule.reach_of(mark.u)?))
            }
            Spin::NegInf => unreachable!("forward spins live in N ∪ {{+∞}}"),
        };
        traj.marks_consumed += 1;
        if new != state[mark.site] {
            state[mark.site] = new;
            traj.record(mark.time, mark.site, new);
        }
    }
    Ok(traj)
}

/// Rate of a transition to spin `k` at a site whose neighbourhood max is `m`
/// (finite), per the generator of the multi-level system.
pub fn level_transition_rate(schedule: &LevelSchedule, k: u32, m: Spin) -> f64 {
    match m {
        Spin::PosInf | Spin::NegInf => 0.0,
        Spin::Fin(mv) => {
            if k == 0 {
                if mv <= 1 {
                    schedule.level_prob(0)
                } else {
                    0.0
                }
            } else if mv == k + 1 {
                schedule.level_prob(k)
            } else if mv <= k {
                schedule.level_prob(k) - schedule.level_prob(k - 1)
            } else {
                0.0
            }
        }
    }
}

/// Heat-bath update rule used by the forward field dynamics.
pub enum UpdateRule<'a> {
    Flat(&'a FlatCoupler),
    Stratified(&'a StratifiedCoupler),
}

impl UpdateRule<'_> {
    pub fn apply(&self, eta: &BoundaryConfig, u: f64) -> Result<f64> {
        match self {
            UpdateRule::Flat(c) => c.update(eta, u),
            UpdateRule::Stratified(c) => c.update(eta, u),
        }
    }
}

/// Forward Glauber dynamics of the field on the torus: each mark resamples
/// its site from the conditional law. Returns the state at each requested
/// snapshot time (ascending) and at time 0.
pub fn forward_glauber(
    torus: &TorusWindow,
    spec: &NeighborhoodSpec,
    initial: Vec<f64>,
    marks: &[WindowMark],
    rule: &UpdateRule,
    snapshot_times: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut state = initial;
    let mut snaps = Vec::with_capacity(snapshot_times.len());
    let mut next_snap = 0usize;
    for mark in marks {
        while next_snap < snapshot_times.len() && snapshot_times[next_snap] < mark.time {
            snaps.push(state.clone());
            next_snap += 1;
        }
        let eta = BoundaryConfig::new(
            torus
                .neighbor_indices(mark.site, spec)
                .into_iter()
                .map(|j| state[j])
                .collect(),
        );
        state[mark.site] = rule.apply(&eta, mark.u)?;
    }
    while next_snap < snapshot_times.len() {
        snaps.push(state.clone());
        next_snap += 1;
    }
    Ok((state, snaps))
}

/// Backward binary dual from `σ̂_0 = {0}` by the transition rules: at a mark
/// at an occupied site, recover (`u <= γ`) or infect the neighbourhood.
/// Left-continuous; the returned trajectory is indexed by backward time
/// steps: `at(site, t)` gives `σ̂_t` for `t` strictly below the previous
/// event when queried at event times, so checks evaluate at midpoints.
pub fn backward_dual_binary(
    torus: &TorusWindow,
    spec: &NeighborhoodSpec,
    origin: usize,
    marks: &[WindowMark],
    gamma: f64,
) -> BackwardTrajectory<u8> {
    let mut state = vec![0u8; torus.num_sites()];
    state[origin] = 1;
    let mut traj = BackwardTrajectory::new(state.clone());
    for mark in marks.iter().rev() {
        traj.marks_consumed += 1;
        if state[mark.site] == 0 {
            continue;
        }
        state[mark.site] = 0;
        traj.record(mark.time, mark.site, 0);
        if mark.u > gamma {
            for j in torus.neighbor_indices(mark.site, spec) {
                if state[j] == 0 {
                    state[j] = 1;
                    traj.record(mark.time, j, 1);
                }
            }
        }
    }
    traj
}

/// Backward level dual from `σ̂_0 = 0` at the origin, `+∞` elsewhere: at a
/// mark at a site with spin `s`, jump to `σ^{i,B}[s+1]` when `u <= q_s`
/// (i.e. `K(u) <= s`) and to `σ^{i,B}[-∞]` otherwise.
pub fn backward_dual_level(
    torus: &TorusWindow,
    spec: &NeighborhoodSpec,
    origin: usize,
    marks: &[WindowMark],
    schedule: &LevelSchedule,
) -> Result<BackwardTrajectory<Spin>> {
    let mut state = vec![Spin::PosInf; torus.num_sites()];
    state[origin] = Spin::Fin(0);
    let mut traj = BackwardTrajectory::new(state.clone());
    for mark in marks.iter().rev() {
        traj.marks_consumed += 1;
        let s = state[mark.site];
        if s == Spin::PosInf {
            continue;
        }
        let k = match s {
            Spin::NegInf => Spin::NegInf,
            Spin::Fin(sv) if schedule.reach_of(mark.u)? <= sv => Spin::Fin(sv + 1),
            Spin::Fin(_) => Spin::NegInf,
            Spin::PosInf => unreachable!(),
        };
        state[mark.site] = Spin::PosInf;
        traj.record(mark.time, mark.site, Spin::PosInf);
        for j in torus.neighbor_indices(mark.site, spec) {
            let new = state[j].min(k);
            if new != state[j] {
                state[j] = new;
                traj.record(mark.time, j, new);
            }
        }
    }
    Ok(traj)
}

/// Backward (left-continuous) piecewise-constant configuration store.
#[derive(Debug, Clone)]
pub struct BackwardTrajectory<T: Copy> {
    /// Configuration at time 0 (the start of the backward evolution).
    pub initial: Vec<T>,
    /// `(time, new value)` per site, recorded in decreasing time order.
    changes: Vec<Vec<(f64, T)>>,
    pub marks_consumed: u64,
}

impl<T: Copy> BackwardTrajectory<T> {
    fn new(initial: Vec<T>) -> Self {
        let n = initial.len();
        Self {
            initial,
            changes: vec![Vec::new(); n],
            marks_consumed: 0,
        }
    }

    fn record(&mut self, time: f64, site: usize, value: T) {
        self.changes[site].push((time, value));
    }

    /// `σ̂_t(site)`: the last recorded change at a time `>= t` wins (the
    /// process is left-continuous going down in time).
    pub fn at(&self, site: usize, t: f64) -> T {
        let ch = &self.changes[site];
        // changes are stored descending in time
        match ch.iter().take_while(|&&(s, _)| s >= t).last() {
            Some(&(_, v)) => v,
            None => self.initial[site],
        }
    }

    pub fn snapshot(&self, t: f64) -> Vec<T> {
        (0..self.initial.len()).map(|i| self.at(i, t)).collect()
    }
}

/// Independent path-search implementation of the binary dual: `σ̂_t` is the
/// set of sites with an open active path from the origin at time 0.
pub fn binary_dual_path_config(
    torus: &TorusWindow,
    spec: &NeighborhoodSpec,
    origin: usize,
    marks: &[WindowMark],
    gamma: f64,
    t: f64,
) -> Vec<u8> {
    let per_site = per_site_marks_desc(torus, marks);
    let mut occupied = vec![0u8; torus.num_sites()];
    // landing at (site, upper): the path sits at `site` from just below
    // `upper` down to the next mark at the site; it certifies σ̂_t(site) = 1
    // if no mark at the site lies in (t, upper).
    let mut stack: Vec<(usize, f64)> = vec![(origin, 0.0)];
    let mut seen: HashMap<(usize, u64), ()> = HashMap::new();
    while let Some((site, upper)) = stack.pop() {
        if seen.insert((site, upper.to_bits()), ()).is_some() {
            continue;
        }
        // the next mark at `site` strictly below `upper`
        let next = per_site[site].iter().find(|m| m.time < upper).copied();
        let lower = next.map_or(f64::NEG_INFINITY, |m| m.time);
        if t > lower && t <= upper {
            occupied[site] = 1;
        }
        // crossing the next mark requires it to lie above t and be open
        if let Some(m) = next {
            if m.time > t && m.u > gamma {
                for j in torus.neighbor_indices(site, spec) {
                    stack.push((j, m.time));
                }
            }
        }
    }
    occupied
}

/// Independent path-search implementation of the level dual, following the
/// distance/wetness description: `-∞` where a wet active path lands,
/// otherwise the minimal arrow distance from the root mark, `+∞` where no
/// active path lands.
pub fn level_dual_path_config(
    torus: &TorusWindow,
    spec: &NeighborhoodSpec,
    origin: usize,
    marks: &[WindowMark],
    schedule: &LevelSchedule,
    t: f64,
) -> Result<Vec<Spin>> {
    let per_site = per_site_marks_desc(torus, marks);
    let n = torus.num_sites();

    // Pass 1: minimal arrow distance to every landing interval (site, upper),
    // exploring only crossings above t.
    #[derive(Clone, Copy)]
    struct Landing {
        site: usize,
        upper: f64,
        dist: u32,
        wet: bool,
    }
    let mut best: HashMap<(usize, u64), (u32, bool)> = HashMap::new();
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(Landing {
        site: origin,
        upper: 0.0,
        dist: 0,
        wet: false,
    });
    let mut landings: Vec<Landing> = Vec::new();
    // mark distances for wetness: distance of the mark crossed equals the
    // distance of the landing interval it terminates
    while let Some(l) = queue.pop_front() {
        match best.get(&(l.site, l.upper.to_bits())) {
            Some(&(d, w)) if d <= l.dist && (w || !l.wet) => continue,
            _ => {}
        }
        best.insert((l.site, l.upper.to_bits()), (l.dist, l.wet));
        landings.push(l);
        let next = per_site[l.site].iter().find(|m| m.time < l.upper).copied();
        if let Some(m) = next {
            if m.time > t {
                // the crossed mark sits at distance l.dist from the root
                let k = schedule.reach_of(m.u)?;
                let wets_root = k > l.dist;
                let wet = l.wet || wets_root;
                for j in torus.neighbor_indices(l.site, spec) {
                    queue.push_back(Landing {
                        site: j,
                        upper: m.time,
                        dist: l.dist + 1,
                        wet,
                    });
                }
            }
        }
    }

    // Pass 2: per site, the spin at t is -∞ if some wet landing covers t,
    // else the min distance over covering landings, else +∞.
    let mut out = vec![Spin::PosInf; n];
    for l in &landings {
        let next = per_site[l.site].iter().find(|m| m.time < l.upper).copied();
        let lower = next.map_or(f64::NEG_INFINITY, |m| m.time);
        if !(t > lower && t <= l.upper) {
            continue;
        }
        out[l.site] = if l.wet {
            Spin::NegInf
        } else {
            out[l.site].min(Spin::Fin(l.dist))
        };
        if l.wet {
            out[l.site] = Spin::NegInf;
        }
    }
    Ok(out)
}

fn per_site_marks_desc(torus: &TorusWindow, marks: &[WindowMark]) -> Vec<Vec<WindowMark>> {
    let mut per: Vec<Vec<WindowMark>> = vec![Vec::new(); torus.num_sites()];
    for m in marks {
        per[m.site].push(*m);
    }
    for v in &mut per {
        v.sort_by(|a, b| b.time.partial_cmp(&a.time).unwrap());
    }
    per
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DualityReport {
    pub p_forward: f64,
    pub p_dual: f64,
    pub se_combined: f64,
    pub trials: u32,
    pub pathwise_violations: u64,
    pub passes: bool,
}

/// Monte Carlo check of the binary duality identity
/// `P(ω_0^τ(0) = 0) = P(σ̂_τ = ∅)` plus the pathwise disjointness lemma.
///
/// The two probabilities are estimated over independent stores (on shared
/// marks the two events coincide realization by realization, which would
/// make the comparison vacuous); the pathwise lemma is checked on the
/// forward store's marks.
pub fn duality_check_binary(
    side: u32,
    tau: f64,
    gamma: f64,
    trials: u32,
    master_seed: u64,
) -> Result<DualityReport> {
    let torus = TorusWindow::new(1, side)?;
    let spec = NeighborhoodSpec::unit_sphere(1)?;
    let origin = 0usize;
    let outcomes = crate::exec::replicate(trials, |i| {
        let mut store = MarkStore::new(crate::exec::replica_seed(master_seed, i), 1);
        let marks = window_marks(&mut store, &torus, tau);
        let fwd = forward_spin(&torus, &spec, tau, gamma, &marks);
        let fwd_zero = fwd.at(origin, 0.0) == 0;

        let mut dual_store = MarkStore::new(crate::exec::replica_seed(master_seed ^ 0xd0a1, i), 1);
        let dual_marks = window_marks(&mut dual_store, &torus, tau);
        let dual = backward_dual_binary(&torus, &spec, origin, &dual_marks, gamma);
        let dual_dead = dual.snapshot(tau).iter().all(|&s| s == 0);

        // Pathwise: on {ω_0(0)=0}, ω_t and σ̂_t never intersect (checked on
        // the forward store's own marks).
        let mut violations = 0u64;
        if fwd_zero {
            let shared = backward_dual_binary(&torus, &spec, origin, &marks, gamma);
            for t in check_times(&marks, tau) {
                let w = fwd.snapshot(t);
                let s = shared.snapshot(t);
                if w.iter().zip(&s).any(|(&a, &b)| a == 1 && b == 1) {
                    violations += 1;
                }
            }
            if !shared.snapshot(tau).iter().all(|&s| s == 0) {
                violations += 1;
            }
        }
        (fwd_zero, dual_dead, violations)
    });
    let mut fz = 0u64;
    let mut dd = 0u64;
    let mut viol = 0u64;
    for (a, b, v) in outcomes {
        fz += u64::from(a);
        dd += u64::from(b);
        viol += v;
    }
    let n = trials as f64;
    let p_forward = fz as f64 / n;
    let p_dual = dd as f64 / n;
    let se = ((p_forward * (1.0 - p_forward) + p_dual * (1.0 - p_dual)) / n).sqrt();
    Ok(DualityReport {
        p_forward,
        p_dual,
        se_combined: se,
        trials,
        pathwise_violations: viol,
        passes: (p_forward - p_dual).abs() <= 3.0 * se && viol == 0,
    })
}

/// Monte Carlo check of the level duality identity
/// `P(ω_0^{κ,τ}(0) = 0) = P(κ <= σ̂_τ)` plus the pathwise monotone coupling.
///
/// Probabilities over independent stores, pathwise lemma on shared marks,
/// as in [`duality_check_binary`].
pub fn duality_check_level(
    side: u32,
    tau: f64,
    kappa: Vec<Spin>,
    schedule: &LevelSchedule,
    trials: u32,
    master_seed: u64,
) -> Result<DualityReport> {
    let torus = TorusWindow::new(1, side)?;
    let spec = NeighborhoodSpec::unit_sphere(1)?;
    let origin = 0usize;
    assert!(kappa.iter().all(|s| s.is_finite()), "kappa must be finite");
    let outcomes: Vec<Result<(bool, bool, u64)>> = crate::exec::replicate(trials, |i| {
        let mut store = MarkStore::new(crate::exec::replica_seed(master_seed, i), 1);
        let marks = window_marks(&mut store, &torus, tau);
        let fwd = forward_level(&torus, &spec, kappa.clone(), schedule, &marks)?;
        let fwd_zero = fwd.at(origin, 0.0) == Spin::Fin(0);

        let mut dual_store = MarkStore::new(crate::exec::replica_seed(master_seed ^ 0xd0a1, i), 1);
        let dual_marks = window_marks(&mut dual_store, &torus, tau);
        let dual = backward_dual_level(&torus, &spec, origin, &dual_marks, schedule)?;
        let dual_dominates = dual.snapshot(tau).iter().zip(&kappa).all(|(&s, &k)| k <= s);

        let mut violations = 0u64;
        if fwd_zero {
            let shared = backward_dual_level(&torus, &spec, origin, &marks, schedule)?;
            for t in check_times(&marks, tau) {
                let w = fwd.snapshot(t);
                let s = shared.snapshot(t);
                if w.iter().zip(&s).any(|(&a, &b)| a > b) {
                    violations += 1;
                }
            }
            if !shared
                .snapshot(tau)
                .iter()
                .zip(&kappa)
                .all(|(&s, &k)| k <= s)
            {
                violations += 1;
            }
        }
        Ok((fwd_zero, dual_dominates, violations))
    });
    let mut fz = 0u64;
    let mut dd = 0u64;
    let mut viol = 0u64;
    for r in outcomes {
        let (a, b, v) = r?;
        fz += u64::from(a);
        dd += u64::from(b);
        viol += v;
    }
    let n = trials as f64;
    let p_forward = fz as f64 / n;
    let p_dual = dd as f64 / n;
    let se = ((p_forward * (1.0 - p_forward) + p_dual * (1.0 - p_dual)) / n).sqrt();
    Ok(DualityReport {
        p_forward,
        p_dual,
        se_combined: se,
        trials,
        pathwise_violations: viol,
        passes: (p_forward - p_dual).abs() <= 3.0 * se && viol == 0,
    })
}

/// Midpoints between consecutive event times (plus endpoints near `tau` and
/// 0), where both the right-continuous forward process and the
/// left-continuous dual are unambiguous.
fn check_times(marks: &[WindowMark], tau: f64) -> Vec<f64> {
    let mut times: Vec<f64> = Vec::with_capacity(marks.len() + 2);
    let mut prev = tau;
    for m in marks {
        times.push(0.5 * (prev + m.time));
        prev = m.time;
    }
    times.push(0.5 * prev);
    times
}

/// Empirical transition frequencies of the binary rule under a frozen
/// neighbourhood, against [`binary_flip_rate`].
pub fn binary_rate_conformance(
    gamma: f64,
    own: u8,
    any_neighbor_one: bool,
    draws: u32,
    seed: u64,
) -> (f64, f64, bool) {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut flips = 0u64;
    for _ in 0..draws {
        let u: f64 = rng.gen();
        let new = u8::from(u > gamma && any_neighbor_one);
        if new != own {
            flips += 1;
        }
    }
    let p = flips as f64 / draws as f64;
    let want = binary_flip_rate(gamma, own, any_neighbor_one);
    let se = (want * (1.0 - want) / draws as f64).sqrt();
    (p, want, (p - want).abs() <= 3.0 * se.max(1e-9))
}

/// Empirical frequency of reaching spin `k` from a frozen neighbourhood max
/// `m`, against [`level_transition_rate`].
pub fn level_rate_conformance(
    schedule: &LevelSchedule,
    k: u32,
    m: Spin,
    draws: u32,
    seed: u64,
) -> Result<(f64, f64, bool)> {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..draws {
        let u: f64 = rng.gen();
        let new = match m {
            Spin::PosInf => Spin::PosInf,
            Spin::Fin(mv) => Spin::Fin(mv.saturating_sub(1).max(schedule.reach_of(u)?)),
            Spin::NegInf => unreachable!(),
        };
        if new == Spin::Fin(k) {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    let want = level_transition_rate(schedule, k, m);
    let se = (want * (1.0 - want) / draws as f64).sqrt();
    Ok((p, want, (p - want).abs() <= 3.0 * se.max(1e-9)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::replica_seed;

    fn setup(side: u32, tau: f64, seed: u64) -> (TorusWindow, NeighborhoodSpec, Vec<WindowMark>) {
        let torus = TorusWindow::new(1, side).unwrap();
        let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
        let mut store = MarkStore::new(seed, 1);
        let marks = window_marks(&mut store, &torus, tau);
        (torus, spec, marks)
    }

    fn sched() -> LevelSchedule {
        LevelSchedule::new(0.1, 3.5, 0.01, 1).unwrap()
    }

    #[test]
    fn forward_spin_gamma_one_kills_everything() {
        let (torus, spec, marks) = setup(8, -6.0, 5);
        let traj = forward_spin(&torus, &spec, -6.0, 1.0, &marks);
        // after every site has been updated once, all spins are 0
        let mut updated = vec![false; torus.num_sites()];
        for m in &marks {
            updated[m.site] = true;
        }
        if updated.iter().all(|&b| b) {
            assert!(traj.snapshot(0.0).iter().all(|&s| s == 0));
        }
        assert_eq!(traj.marks_consumed, marks.len() as u64);
    }

    #[test]
    fn forward_spin_gamma_zero_all_ones_absorbing() {
        let (torus, spec, marks) = setup(8, -4.0, 6);
        let traj = forward_spin(&torus, &spec, -4.0, 0.0, &marks);
        assert!(traj.snapshot(0.0).iter().all(|&s| s == 1));
    }

    #[test]
    fn forward_level_all_infinite_absorbing() {
        let (torus, spec, marks) = setup(8, -4.0, 7);
        let kappa = vec![Spin::PosInf; torus.num_sites()];
        let traj = forward_level(&torus, &spec, kappa, &sched(), &marks).unwrap();
        assert!(traj.snapshot(0.0).iter().all(|&s| s == Spin::PosInf));
    }

    #[test]
    fn forward_level_rule_spot_checks() {
        let s = sched();
        // m = 1, u <= q_0 => spin 0
        let q0 = s.level_prob(0);
        assert_eq!(s.reach_of(q0 * 0.5).unwrap(), 0);
        // rule arithmetic: max(m-1, K)
        assert_eq!(level_transition_rate(&s, 0, Spin::Fin(1)), s.level_prob(0));
        assert_eq!(level_transition_rate(&s, 2, Spin::Fin(3)), s.level_prob(2));
        let want = s.level_prob(2) - s.level_prob(1);
        assert!((level_transition_rate(&s, 2, Spin::Fin(1)) - want).abs() < 1e-15);
    }

    #[test]
    fn binary_rates_within_3se() {
        for (own, nb) in [(1u8, true), (1, false), (0, true), (0, false)] {
            let (p, want, ok) = binary_rate_conformance(0.8, own, nb, 100_000, 99);
            assert!(ok, "own={own} nb={nb}: {p} vs {want}");
        }
    }

    #[test]
    fn level_rates_within_3se() {
        let s = sched();
        for m in [Spin::Fin(0), Spin::Fin(1), Spin::Fin(2), Spin::PosInf] {
            for k in 0..3u32 {
                let (p, want, ok) = level_rate_conformance(&s, k, m, 100_000, 7).unwrap();
                assert!(ok, "k={k} m={m:?}: {p} vs {want}");
            }
        }
    }

    #[test]
    fn dual_binary_first_origin_mark_empties_when_gamma_one() {
        let (torus, spec, marks) = setup(8, -4.0, 8);
        let dual = backward_dual_binary(&torus, &spec, 0, &marks, 1.0);
        let has_origin_mark = marks.iter().any(|m| m.site == 0);
        if has_origin_mark {
            assert!(dual.snapshot(-4.0).iter().all(|&s| s == 0));
        }
    }

    #[test]
    fn dual_binary_matches_path_search() {
        let gamma = 0.8;
        for seed in 0..400u64 {
            let (torus, spec, marks) = setup(8, -3.0, seed);
            let dual = backward_dual_binary(&torus, &spec, 0, &marks, gamma);
            for t in check_times(&marks, -3.0) {
                let transition = dual.snapshot(t);
                let path = binary_dual_path_config(&torus, &spec, 0, &marks, gamma, t);
                assert_eq!(transition, path, "seed {seed} t {t}");
            }
        }
    }

    #[test]
    fn dual_level_matches_path_search() {
        let s = sched();
        for seed in 0..400u64 {
            let (torus, spec, marks) = setup(8, -3.0, seed);
            let dual = backward_dual_level(&torus, &spec, 0, &marks, &s).unwrap();
            for t in check_times(&marks, -3.0) {
                let transition = dual.snapshot(t);
                let path = level_dual_path_config(&torus, &spec, 0, &marks, &s, t).unwrap();
                assert_eq!(transition, path, "seed {seed} t {t}");
            }
        }
    }

    #[test]
    fn dual_extinction_is_absorbing() {
        let (torus, spec, marks) = setup(8, -6.0, 44);
        let dual = backward_dual_binary(&torus, &spec, 0, &marks, 0.9);
        let mut dead_at = None;
        for t in check_times(&marks, -6.0).into_iter().rev() {
            let empty = dual.snapshot(t).iter().all(|&s| s == 0);
            if let Some(dt) = dead_at {
                if t < dt {
                    assert!(empty, "dual resurrected after dying at {dt}");
                }
            } else if empty {
                dead_at = Some(t);
            }
        }
    }

    #[test]
    fn attractiveness_in_start_time() {
        // omega^{tau'} <= omega^{tau} pathwise for tau' <= tau on shared marks
        let gamma = 0.7;
        for seed in 0..100u64 {
            let torus = TorusWindow::new(1, 8).unwrap();
            let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
            let mut store = MarkStore::new(seed, 1);
            let marks_deep = window_marks(&mut store, &torus, -5.0);
            let marks_shallow: Vec<WindowMark> = marks_deep
                .iter()
                .copied()
                .filter(|m| m.time >= -2.0)
                .collect();
            let deep = forward_spin(&torus, &spec, -5.0, gamma, &marks_deep);
            let shallow = forward_spin(&torus, &spec, -2.0, gamma, &marks_shallow);
            for t in check_times(&marks_shallow, -2.0) {
                let wd = deep.snapshot(t);
                let ws = shallow.snapshot(t);
                assert!(
                    wd.iter().zip(&ws).all(|(&a, &b)| a <= b),
                    "attractiveness violated at seed {seed} t {t}"
                );
            }
        }
    }

    #[test]
    fn duality_binary_small() {
        let rep = duality_check_binary(8, -3.0, 0.8, 20_000, 1234).unwrap();
        assert!(rep.passes, "{rep:?}");
        assert_eq!(rep.pathwise_violations, 0);
    }

    #[test]
    fn duality_binary_gamma_one_closed_form() {
        // gamma = 1: both probabilities equal P(at least one origin mark in
        // [tau, 0]) = 1 - e^{tau}.
        let tau = -3.0;
        let rep = duality_check_binary(8, tau, 1.0, 20_000, 555).unwrap();
        let want = 1.0 - tau.exp();
        let se = (want * (1.0 - want) / 20_000f64).sqrt();
        assert!(
            (rep.p_forward - want).abs() <= 4.0 * se,
            "{rep:?} want {want}"
        );
        assert!((rep.p_dual - want).abs() <= 4.0 * se);
        assert!(rep.passes);
    }

    #[test]
    fn duality_level_small() {
        let s = sched();
        let kappa = vec![Spin::Fin(1); 8];
        let rep = duality_check_level(8, -3.0, kappa, &s, 20_000, 4321).unwrap();
        assert!(rep.passes, "{rep:?}");
        assert_eq!(rep.pathwise_violations, 0);
    }

    #[test]
    fn glauber_iid_case_forgets_initial() {
        // eps = 0: after every site updates once, the field is the common
        // quantile of each site's last mark, independent of the start.
        let torus = TorusWindow::new(1, 8).unwrap();
        let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
        let coupler = FlatCoupler::new(0.0, 2.0).unwrap();
        let rule = UpdateRule::Flat(&coupler);
        let mut store = MarkStore::new(31, 1);
        let marks = window_marks(&mut store, &torus, -8.0);
        let mut updated = [false; 8];
        for m in &marks {
            updated[m.site] = true;
        }
        if updated.iter().all(|&b| b) {
            let a = forward_glauber(&torus, &spec, vec![1.9; 8], &marks, &rule, &[])
                .unwrap()
                .0;
            let b = forward_glauber(&torus, &spec, vec![-0.3; 8], &marks, &rule, &[])
                .unwrap()
                .0;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn glauber_coupling_spin_zero_implies_coalescence() {
        // two initial fields on shared marks coincide wherever the binary
        // system holds spin 0
        let torus = TorusWindow::new(1, 8).unwrap();
        let spec = NeighborhoodSpec::unit_sphere(1).unwrap();
        let coupler = FlatCoupler::new(0.1, 2.0).unwrap();
        let rule = UpdateRule::Flat(&coupler);
        for seed in 0..30u64 {
            let mut store = MarkStore::new(replica_seed(777, seed as u32), 1);
            let marks = window_marks(&mut store, &torus, -4.0);
            let spin = forward_spin(&torus, &spec, -4.0, coupler.gamma, &marks);
            let xa = forward_glauber(&torus, &spec, vec![1.5; 8], &marks, &rule, &[])
                .unwrap()
                .0;
            let xb = forward_glauber(&torus, &spec, vec![-1.5; 8], &marks, &rule, &[])
                .unwrap()
                .0;
            for site in 0..8usize {
                if spin.at(site, 0.0) == 0 {
                    assert_eq!(
                        xa[site].to_bits(),
                        xb[site].to_bits(),
                        "spin 0 without coalescence at seed {seed} site {site}"
                    );
                }
            }
        }
    }

    #[test]
    fn forward_and_backward_consume_every_mark_once() {
        let (torus, spec, marks) = setup(8, -3.0, 13);
        let fwd = forward_spin(&torus, &spec, -3.0, 0.8, &marks);
        let dual = backward_dual_binary(&torus, &spec, 0, &marks, 0.8);
        assert_eq!(fwd.marks_consumed, marks.len() as u64);
        assert_eq!(dual.marks_consumed, marks.len() as u64);
    }
}
