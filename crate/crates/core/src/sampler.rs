//! The exact samplers: truncated high-noise CFTP, stratified dry-cutset CFTP
//! for the unbounded model, and the depth-truncated approximation.
//!
//! All three read the same backward mark streams. The truncated sampler
//! explores the open cone (marks with `u > γ`) and evaluates it bottom-up;
//! the unbounded sampler certifies a dry cutset of the wet Boolean
//! percolation and propagates values from it; the depth-`⌊l/2⌋` sampler cuts
//! unconditionally at a fixed arrow distance, which yields an `l`-dependent
//! field at the cost of a bounded disagreement probability with the exact
//! sample.

use std::collections::HashMap;

use crate::coupler::{BoundaryConfig, FlatCoupler, StratifiedCoupler};
use crate::error::{Error, Result};
use crate::gauss;
use crate::geometry::{NeighborhoodSpec, Site};
use crate::marks::{ConeDag, MarkRef, MarkStore};
use crate::schedule::{check_all, ModelParams, MAX_LEVEL_TERMS};

#[derive(Debug, Clone)]
pub struct SamplerOptions {
    /// Max marks revealed per site query; exceeding it is an error, never an
    /// approximation.
    pub budget: u64,
    /// Cone node cap for the wet/dry exploration.
    pub node_budget: u64,
    /// Total-variation error budget of the dryness certificate.
    pub delta_fail: f64,
    /// Run even when the high-noise gate / hypothesis checks fail.
    pub force: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            budget: 1_000_000,
            node_budget: 10_000_000,
            delta_fail: 1e-9,
            force: false,
        }
    }
}

/// What one site query revealed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CodingReport {
    /// Max l1 distance from the queried site among sites of revealed marks.
    pub radius: u32,
    pub marks_revealed: u64,
    /// Max arrow distance reached from the root mark.
    pub depth: u32,
}

/// Certificate that every cutset mark was verified dry to a finite depth.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DrynessCertificate {
    /// Smallest first-unverified distance over the cutset marks.
    pub cert_depth: u32,
    /// Upper bound on the probability that an unexplored mark wets any mark
    /// certified dry: `Σ_marks Σ_{k >= D_mark} |B|^k (1 - q_k)`.
    pub residual: f64,
    pub marks_certified: u64,
    /// Max arrow distance of a cutset mark from the root.
    pub cutset_depth: u32,
}

/// A realized configuration on a finite window.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FieldSample {
    pub window: Vec<Site>,
    pub values: Vec<f64>,
    pub seed: u64,
    pub marks_revealed: u64,
    pub max_depth: u32,
}

fn l1_dist(a: &[i32], b: &[i32]) -> u32 {
    a.iter().zip(b).map(|(&x, &y)| (x - y).unsigned_abs()).sum()
}

/// Truncated high-noise CFTP: exact draws from the `[-L, L]` model.
pub struct TruncatedSampler<'a> {
    pub coupler: &'a FlatCoupler,
    pub spec: NeighborhoodSpec,
    pub opts: SamplerOptions,
}

impl<'a> TruncatedSampler<'a> {
    /// Checks the high-noise gate `γ > 1 - 1/|B|`; termination is unproven
    /// below the gate, so running there requires `opts.force`.
    pub fn new(
        coupler: &'a FlatCoupler,
        spec: NeighborhoodSpec,
        opts: SamplerOptions,
    ) -> Result<Self> {
        let gate = 1.0 - 1.0 / spec.size() as f64;
        if coupler.gamma <= gate && !opts.force {
            return Err(Error::GateFailed {
                gamma: coupler.gamma,
                gate,
            });
        }
        Ok(Self {
            coupler,
            spec,
            opts,
        })
    }

    /// Exact draw of the field at `site`, plus what it cost.
    ///
    /// `memo` carries values across calls against the same store, which is
    /// what makes window sampling produce the correct joint law.
    pub fn sample(
        &self,
        store: &mut MarkStore,
        memo: &mut HashMap<u64, f64>,
        site: &[i32],
    ) -> Result<(f64, CodingReport)> {
        let root = store.last_mark_before(site, 0.0);
        // Phase 1: reveal the open cone (children of every open mark).
        let mut order: Vec<(MarkRef, u32)> = vec![(root, 0)];
        let mut seen: HashMap<u64, u32> = HashMap::new();
        seen.insert(root.key(), 0);
        let mut children_of: HashMap<u64, Vec<MarkRef>> = HashMap::new();
        let mut head = 0usize;
        let mut report = CodingReport {
            radius: 0,
            marks_revealed: 1,
            depth: 0,
        };
        while head < order.len() {
            let (mark, dist) = order[head];
            head += 1;
            report.depth = report.depth.max(dist);
            report.radius = report
                .radius
                .max(l1_dist(store.site_coords(mark.site), site));
            if store.u_of(mark) <= self.coupler.gamma {
                continue; // closed: value needs no neighbours
            }
            let kids = store.children(mark, &self.spec);
            for &kid in &kids {
                if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(kid.key()) {
                    e.insert(dist + 1);
                    order.push((kid, dist + 1));
                    report.marks_revealed += 1;
                    if report.marks_revealed > self.opts.budget {
                        return Err(Error::BudgetExceeded {
                            revealed: report.marks_revealed,
                            budget: self.opts.budget,
                            context: format!(
                                "truncated sampler at depth {} radius {}",
                                dist + 1,
                                report.radius
                            ),
                        });
                    }
                }
            }
            children_of.insert(mark.key(), kids);
        }
        // Phase 2: evaluate in ascending time order (children are strictly
        // earlier, so they are ready when their parent comes up).
        let mut by_time: Vec<MarkRef> = order.iter().map(|&(m, _)| m).collect();
        by_time.sort_by(|a, b| store.time_of(*a).partial_cmp(&store.time_of(*b)).unwrap());
        for mark in by_time {
            if memo.contains_key(&mark.key()) {
                continue;
            }
            let u = store.u_of(mark);
            let value = if u <= self.coupler.gamma {
                self.coupler.common_value(u)?
            } else {
                let kids = &children_of[&mark.key()];
                let eta = BoundaryConfig::new(kids.iter().map(|k| memo[&k.key()]).collect());
                self.coupler.update(&eta, u)?
            };
            memo.insert(mark.key(), value);
        }
        Ok((memo[&root.key()], report))
    }

    /// Evaluate every site of `window` against the same store.
    pub fn sample_window(
        &self,
        store: &mut MarkStore,
        window: &[Site],
    ) -> Result<(FieldSample, Vec<CodingReport>)> {
        let mut memo = HashMap::new();
        let mut values = Vec::with_capacity(window.len());
        let mut reports = Vec::with_capacity(window.len());
        for site in window {
            let (v, r) = self.sample(store, &mut memo, site)?;
            values.push(v);
            reports.push(r);
        }
        let max_depth = reports.iter().map(|r| r.depth).max().unwrap_or(0);
        Ok((
            FieldSample {
                window: window.to_vec(),
                values,
                seed: store.master_seed(),
                marks_revealed: store.marks_generated(),
                max_depth,
            },
            reports,
        ))
    }
}

/// Per-run evaluation state of the stratified sampler, shared across the
/// sites of one window so the joint law is read off one realization.
#[derive(Default)]
pub struct GaussianRun {
    values: HashMap<u64, f64>,
    /// Longest all-wet path prefix observed from any queried root.
    pub max_wet_prefix: u32,
}

/// Stratified dry-cutset CFTP for the unbounded model.
pub struct GaussianSampler<'a> {
    pub coupler: &'a StratifiedCoupler,
    pub spec: NeighborhoodSpec,
    pub opts: SamplerOptions,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Wetness {
    /// An explored descendant wets the mark.
    Wet,
    /// No explored wetter; cone verified to the given depth.
    DryTo(u32),
}

impl<'a> GaussianSampler<'a> {
    /// Validates the schedule against H1-H4 and the growth condition unless
    /// `opts.force` is set.
    pub fn new(coupler: &'a StratifiedCoupler, opts: SamplerOptions) -> Result<Self> {
        let d = coupler.schedule.two_d / 2;
        let spec = NeighborhoodSpec::unit_sphere(d)?;
        if !opts.force {
            let params = ModelParams::new(d, coupler.schedule.epsilon, None)?;
            let matrix = check_all(&coupler.schedule, &params)?;
            if !matrix.all_pass {
                return Err(Error::ScheduleRejected(format!(
                    "hypothesis checks failed (H1 {}, H2 {}, H3 {}, growth {}, H4 {}); \
                     pass force to run anyway",
                    matrix.h1.passes,
                    matrix.h2.passes,
                    matrix.h3.passes,
                    matrix.growth.passes,
                    matrix.h4.passes
                )));
            }
        }
        Ok(Self {
            coupler,
            spec,
            opts,
        })
    }

    fn schedule(&self) -> &crate::schedule::LevelSchedule {
        &self.coupler.schedule
    }

    /// Smallest certification depth whose per-mark residual meets `target`.
    fn required_depth(&self, target: f64) -> Result<u32> {
        let b = self.spec.size();
        for depth in 1..=MAX_LEVEL_TERMS {
            if self.schedule().wet_tail(depth + 1, b) <= target {
                return Ok(depth);
            }
        }
        Err(Error::CertificateUnattainable {
            max_depth: MAX_LEVEL_TERMS,
            context: format!("per-mark residual target {target} unreachable"),
        })
    }

    /// Exact draw (up to the dryness certificate) of the field at `site`.
    pub fn sample(
        &self,
        store: &mut MarkStore,
        run: &mut GaussianRun,
        site: &[i32],
    ) -> Result<(f64, CodingReport, DrynessCertificate)> {
        let root = store.last_mark_before(site, 0.0);
        let mut cert_target = self.opts.delta_fail;
        let mut required = self.required_depth(cert_target)?;
        let mut dag = ConeDag::new(root);
        let marks_before = store.marks_generated();

        loop {
            // Walk from the root, stopping each path at its first mark that
            // is certified dry to depth `required`; deepen until every path
            // resolves.
            let explore_depth = dag.max_depth().max(required) + 2;
            dag.expand_to(store, &self.spec, explore_depth, self.opts.node_budget)?;
            if marks_before + self.opts.budget < store.marks_generated() {
                return Err(Error::BudgetExceeded {
                    revealed: store.marks_generated() - marks_before,
                    budget: self.opts.budget,
                    context: "stratified sampler exploration".into(),
                });
            }
            let wetness = self.classify(store, &dag)?;

            match self.cutset_walk(&dag, &wetness, required) {
                Some((interior, cutset)) => {
                    // Certificate: sum the per-mark residual tails.
                    let b = self.spec.size();
                    let mut residual = 0.0;
                    let mut min_cert = u32::MAX;
                    let mut cutset_depth = 0u32;
                    for &node in &cutset {
                        let Wetness::DryTo(d) = wetness[node as usize] else {
                            unreachable!("cutset marks are dry");
                        };
                        residual += self.schedule().wet_tail(d + 1, b);
                        min_cert = min_cert.min(d + 1);
                        cutset_depth = cutset_depth.max(dag.nodes[node as usize].dist);
                    }
                    if residual > self.opts.delta_fail {
                        // Tighten per-mark target and re-certify deeper.
                        cert_target = self.opts.delta_fail / (2.0 * cutset.len() as f64);
                        required = self.required_depth(cert_target)?;
                        continue;
                    }
                    let value = self.propagate(store, run, &dag, &interior, &cutset)?;
                    self.track_wet_prefix(run, &dag, &wetness);
                    let mut report = CodingReport {
                        radius: 0,
                        marks_revealed: dag.len() as u64,
                        depth: dag.max_depth(),
                    };
                    for node in &dag.nodes {
                        report.radius = report
                            .radius
                            .max(l1_dist(store.site_coords(node.mark.site), site));
                    }
                    let cert = DrynessCertificate {
                        cert_depth: min_cert,
                        residual,
                        marks_certified: cutset.len() as u64,
                        cutset_depth,
                    };
                    return Ok((value, report, cert));
                }
                None => {
                    if dag.max_depth() >= MAX_LEVEL_TERMS {
                        return Err(Error::CertificateUnattainable {
                            max_depth: MAX_LEVEL_TERMS,
                            context: format!(
                                "no dry cutset within depth {} ({} marks explored)",
                                dag.max_depth(),
                                dag.len()
                            ),
                        });
                    }
                    // deepen and retry
                }
            }
        }
    }

    /// Wetness of every node from explored information: DP in ascending
    /// time order (children strictly precede parents).
    fn classify(&self, store: &MarkStore, dag: &ConeDag) -> Result<Vec<Wetness>> {
        let mut order: Vec<u32> = (0..dag.nodes.len() as u32).collect();
        order.sort_by(|&a, &b| {
            store
                .time_of(dag.nodes[a as usize].mark)
                .partial_cmp(&store.time_of(dag.nodes[b as usize].mark))
                .unwrap()
        });
        // wet margin: max over explored descendants of K - pathlen; > 0 means wet
        let mut margin = vec![i64::MIN; dag.nodes.len()];
        let mut cert = vec![0u32; dag.nodes.len()];
        for &id in &order {
            let node = &dag.nodes[id as usize];
            let k = self.schedule().reach_of(store.u_of(node.mark))? as i64;
            let mut m = k;
            let mut c = u32::MAX;
            match &node.children {
                Some(kids) => {
                    for &kid in kids {
                        m = m.max(margin[kid as usize] - 1);
                        c = c.min(cert[kid as usize]);
                    }
                    cert[id as usize] = c.saturating_add(1);
                }
                None => {
                    cert[id as usize] = 0;
                }
            }
            margin[id as usize] = m;
        }
        Ok((0..dag.nodes.len())
            .map(|i| {
                if margin[i] > 0 {
                    Wetness::Wet
                } else {
                    Wetness::DryTo(cert[i])
                }
            })
            .collect())
    }

    /// Walk every active path from the root, stopping at the first mark
    /// certified dry to depth `required`. Returns (interior, cutset) node
    /// ids, or None if some path hits an unresolved mark.
    fn cutset_walk(
        &self,
        dag: &ConeDag,
        wetness: &[Wetness],
        required: u32,
    ) -> Option<(Vec<u32>, Vec<u32>)> {
        let mut interior = Vec::new();
        let mut cutset = Vec::new();
        let mut state = vec![0u8; dag.nodes.len()]; // 0 unseen, 1 interior, 2 cutset
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            if state[id as usize] != 0 {
                continue;
            }
            match wetness[id as usize] {
                Wetness::DryTo(d) if d >= required => {
                    state[id as usize] = 2;
                    cutset.push(id);
                }
                Wetness::Wet | Wetness::DryTo(_) => {
                    // wet, or dry but not certified deep enough
                    if let Wetness::DryTo(_) = wetness[id as usize] {
                        // insufficient certification: needs deepening
                        return None;
                    }
                    let Some(kids) = &dag.nodes[id as usize].children else {
                        return None; // wet frontier mark: deepen
                    };
                    state[id as usize] = 1;
                    interior.push(id);
                    for &k in kids {
                        stack.push(k);
                    }
                }
            }
        }
        Some((interior, cutset))
    }

    /// Assign the coalesced value to cutset marks and evaluate the interior
    /// in ascending time order.
    fn propagate(
        &self,
        store: &MarkStore,
        run: &mut GaussianRun,
        dag: &ConeDag,
        interior: &[u32],
        cutset: &[u32],
    ) -> Result<f64> {
        for &id in cutset {
            let mark = dag.nodes[id as usize].mark;
            if run.values.contains_key(&mark.key()) {
                continue;
            }
            let u = store.u_of(mark);
            // Dry implies u <= q_0, and H1 gives q_0 <= gamma_tilde.
            let v = self.coupler.common_value(u).map_err(|e| {
                Error::ScheduleRejected(format!(
                    "dry mark outside the common mass ({e}); H1 violated"
                ))
            })?;
            run.values.insert(mark.key(), v);
        }
        let mut order: Vec<u32> = interior.to_vec();
        order.sort_by(|&a, &b| {
            store
                .time_of(dag.nodes[a as usize].mark)
                .partial_cmp(&store.time_of(dag.nodes[b as usize].mark))
                .unwrap()
        });
        for &id in &order {
            let node = &dag.nodes[id as usize];
            if run.values.contains_key(&node.mark.key()) {
                continue;
            }
            let kids = node.children.as_ref().expect("interior nodes are expanded");
            let eta = BoundaryConfig::new(
                kids.iter()
                    .map(|&k| run.values[&dag.nodes[k as usize].mark.key()])
                    .collect(),
            );
            let v = self.coupler.update(&eta, store.u_of(node.mark))?;
            run.values.insert(node.mark.key(), v);
        }
        Ok(run.values[&dag.nodes[0].mark.key()])
    }

    fn track_wet_prefix(&self, run: &mut GaussianRun, dag: &ConeDag, wetness: &[Wetness]) {
        // longest all-wet path from the root through explored edges
        fn depth(dag: &ConeDag, wetness: &[Wetness], memo: &mut HashMap<u32, u32>, id: u32) -> u32 {
            if wetness[id as usize] != Wetness::Wet {
                return 0;
            }
            if let Some(&v) = memo.get(&id) {
                return v;
            }
            let mut best = 1;
            if let Some(kids) = &dag.nodes[id as usize].children {
                for &k in kids {
                    best = best.max(1 + depth(dag, wetness, memo, k));
                }
            }
            memo.insert(id, best);
            best
        }
        let mut memo = HashMap::new();
        let wp = depth(dag, wetness, &mut memo, 0);
        run.max_wet_prefix = run.max_wet_prefix.max(wp);
    }

    pub fn sample_window(
        &self,
        store: &mut MarkStore,
        window: &[Site],
    ) -> Result<(FieldSample, Vec<CodingReport>, DrynessCertificate)> {
        let mut run = GaussianRun::default();
        let mut values = Vec::with_capacity(window.len());
        let mut reports = Vec::with_capacity(window.len());
        let mut total = DrynessCertificate {
            cert_depth: u32::MAX,
            residual: 0.0,
            marks_certified: 0,
            cutset_depth: 0,
        };
        for site in window {
            let (v, r, c) = self.sample(store, &mut run, site)?;
            values.push(v);
            reports.push(r);
            total.cert_depth = total.cert_depth.min(c.cert_depth);
            total.cutset_depth = total.cutset_depth.max(c.cutset_depth);
            total.residual += c.residual;
            total.marks_certified += c.marks_certified;
        }
        let max_depth = reports.iter().map(|r| r.depth).max().unwrap_or(0);
        Ok((
            FieldSample {
                window: window.to_vec(),
                values,
                seed: store.master_seed(),
                marks_revealed: store.marks_generated(),
                max_depth,
            },
            reports,
            total,
        ))
    }

    /// Depth-truncated approximation: explore to exactly `⌊l/2⌋`, seed the
    /// frontier with `φ(0, u)` and evaluate inward. The result at `site` is
    /// a function of marks within lattice distance `r⌊l/2⌋`, so the field is
    /// `l`-dependent (`2 r ⌊l/2⌋ <= l` for the unit sphere with `r = 1`).
    ///
    /// Each site is evaluated against its own cutset, so no values are
    /// shared across sites.
    pub fn sample_l_dependent(&self, store: &mut MarkStore, site: &[i32], l: u32) -> Result<f64> {
        let depth = l / 2;
        let root = store.last_mark_before(site, 0.0);
        let mut dag = ConeDag::new(root);
        dag.expand_to(store, &self.spec, depth, self.opts.node_budget)?;
        let mut values: HashMap<u64, f64> = HashMap::new();
        let mut order: Vec<u32> = (0..dag.nodes.len() as u32).collect();
        order.sort_by(|&a, &b| {
            store
                .time_of(dag.nodes[a as usize].mark)
                .partial_cmp(&store.time_of(dag.nodes[b as usize].mark))
                .unwrap()
        });
        for &id in &order {
            let node = &dag.nodes[id as usize];
            let u = store.u_of(node.mark);
            let v = match &node.children {
                None => self.coupler.zero_update(u)?,
                Some(kids) => {
                    // Children always exist inside the explored region; the
                    // zero fallback is unreachable but kept as the guard the
                    // recursion is specified with.
                    let eta = BoundaryConfig::new(
                        kids.iter()
                            .map(|&k| {
                                values
                                    .get(&dag.nodes[k as usize].mark.key())
                                    .copied()
                                    .unwrap_or(0.0)
                            })
                            .collect(),
                    );
                    self.coupler.update(&eta, u)?
                }
            };
            values.insert(node.mark.key(), v);
        }
        Ok(values[&root.key()])
    }

    /// Window variant of the depth-truncated sampler. Each site is a factor
    /// of its own depth-`⌊l/2⌋` mark cone over the shared store, which is
    /// exactly what makes the field `l`-dependent.
    pub fn sample_l_dependent_window(
        &self,
        store: &mut MarkStore,
        window: &[Site],
        l: u32,
    ) -> Result<FieldSample> {
        let mut values = Vec::with_capacity(window.len());
        for site in window {
            values.push(self.sample_l_dependent(store, site, l)?);
        }
        Ok(FieldSample {
            window: window.to_vec(),
            values,
            seed: store.master_seed(),
            marks_revealed: store.marks_generated(),
            max_depth: l / 2,
        })
    }
}

/// The `ε = 0` unbounded model is i.i.d. standard normal: the value at a
/// site is the quantile of its last mark's uniform label.
pub fn sample_iid_gaussian(store: &mut MarkStore, site: &[i32]) -> Result<(f64, CodingReport)> {
    let root = store.last_mark_before(site, 0.0);
    let u = store.u_of(root).max(f64::MIN_POSITIVE);
    Ok((
        gauss::std_normal_quantile(u)?,
        CodingReport {
            radius: 0,
            marks_revealed: 1,
            depth: 0,
        },
    ))
}
