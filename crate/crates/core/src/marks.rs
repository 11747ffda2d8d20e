//! Lazy, deterministic, memoized generation of the Poisson update marks and
//! exploration of the active-path DAG.
//!
//! Every site of `Z^d` carries a backward stream of marks below time 0 with
//! Exp(1) gaps and i.i.d. uniform labels. Streams are generated on demand
//! from a counter-based generator keyed by `(master seed, site - origin)`,
//! so distinct sites are independent by construction, any mark can be
//! regenerated bitwise, and shifting the origin translates the whole
//! process.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{NeighborhoodSpec, Site};

/// Identifies a mark as (interned site, backward stream index); index 0 is
/// the last mark before time 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MarkRef {
    pub site: u32,
    pub idx: u32,
}

impl MarkRef {
    pub fn key(self) -> u64 {
        (self.site as u64) << 32 | self.idx as u64
    }
}

/// A materialized update mark.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMark {
    pub site: Site,
    pub time: f64,
    pub u: f64,
    pub stream_idx: u32,
}

#[derive(Debug, Clone, Default)]
struct SiteStream {
    /// Strictly decreasing negative times; `times[k]` is the (k+1)-th mark
    /// counting backward from 0.
    times: Vec<f64>,
    us: Vec<f64>,
    rng: Option<ChaCha8Rng>,
}

/// Deterministic per-site mark streams with memoization.
///
/// Single-writer: exploration extends the memo tables, so one sampler owns
/// one store. Parallelism happens across replicas, each with its own store
/// and master seed.
#[derive(Debug, Clone)]
pub struct MarkStore {
    master_seed: u64,
    origin: Site,
    site_ids: HashMap<Site, u32>,
    site_coords: Vec<Site>,
    streams: Vec<SiteStream>,
    marks_generated: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl MarkStore {
    pub fn new(master_seed: u64, d: usize) -> Self {
        Self::with_origin(master_seed, vec![0; d])
    }

    /// A store whose site keying is shifted by `origin`: the stream at
    /// `site` equals the stream of `site - origin` under a zero origin.
    /// Sampling site `i` with origin `i` therefore reproduces, bit for bit,
    /// sampling site 0 with origin 0.
    pub fn with_origin(master_seed: u64, origin: Site) -> Self {
        Self {
            master_seed,
            origin,
            site_ids: HashMap::new(),
            site_coords: Vec::new(),
            streams: Vec::new(),
            marks_generated: 0,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn dimension(&self) -> usize {
        self.origin.len()
    }

    /// Total marks materialized so far.
    pub fn marks_generated(&self) -> u64 {
        self.marks_generated
    }

    pub fn intern(&mut self, site: &[i32]) -> u32 {
        if let Some(&id) = self.site_ids.get(site) {
            return id;
        }
        let id = self.site_coords.len() as u32;
        self.site_ids.insert(site.to_vec(), id);
        self.site_coords.push(site.to_vec());
        self.streams.push(SiteStream::default());
        id
    }

    pub fn site_coords(&self, id: u32) -> &[i32] {
        &self.site_coords[id as usize]
    }

    fn stream_rng(&self, site: &[i32]) -> ChaCha8Rng {
        let mut state = self.master_seed ^ 0xA076_1D64_78BD_642F;
        let mut words = [0u64; 4];
        let feed = |v: u64, state: &mut u64| {
            *state ^= v.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
            splitmix64(state)
        };
        let mut acc = feed(self.origin.len() as u64, &mut state);
        for (c, o) in site.iter().zip(&self.origin) {
            acc = feed((c - o) as i64 as u64, &mut state);
        }
        words[0] = acc;
        words[1] = splitmix64(&mut state);
        words[2] = splitmix64(&mut state);
        words[3] = splitmix64(&mut state);
        let mut seed = [0u8; 32];
        for (k, w) in words.iter().enumerate() {
            seed[8 * k..8 * (k + 1)].copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// Make sure stream entries `0..=idx` exist at `site_id`.
    fn extend_to(&mut self, site_id: u32, idx: usize) {
        if self.streams[site_id as usize].rng.is_none() {
            let coords = self.site_coords[site_id as usize].clone();
            self.streams[site_id as usize].rng = Some(self.stream_rng(&coords));
        }
        let stream = &mut self.streams[site_id as usize];
        let rng = stream.rng.as_mut().unwrap();
        while stream.times.len() <= idx {
            let gap = -(1.0 - rng.gen::<f64>()).ln();
            let u = rng.gen::<f64>();
            let prev = stream.times.last().copied().unwrap_or(0.0);
            stream.times.push(prev - gap);
            stream.us.push(u);
            self.marks_generated += 1;
        }
    }

    /// The last mark at `site` at or before time `t` (`t <= 0`): the unique
    /// mark with maximal time `<= t`.
    pub fn last_mark_before(&mut self, site: &[i32], t: f64) -> MarkRef {
        debug_assert!(t <= 0.0, "all marks live at negative times");
        let site_id = self.intern(site);
        let mut idx = 0usize;
        loop {
            self.extend_to(site_id, idx);
            if self.streams[site_id as usize].times[idx] <= t {
                return MarkRef {
                    site: site_id,
                    idx: idx as u32,
                };
            }
            idx += 1;
        }
    }

    pub fn time_of(&self, m: MarkRef) -> f64 {
        self.streams[m.site as usize].times[m.idx as usize]
    }

    pub fn u_of(&self, m: MarkRef) -> f64 {
        self.streams[m.site as usize].us[m.idx as usize]
    }

    pub fn materialize(&self, m: MarkRef) -> UpdateMark {
        UpdateMark {
            site: self.site_coords[m.site as usize].clone(),
            time: self.time_of(m),
            u: self.u_of(m),
            stream_idx: m.idx,
        }
    }

    /// One mark per offset: the last mark strictly before `time(mark)` at
    /// each neighbouring site, in canonical offset order.
    pub fn children(&mut self, mark: MarkRef, spec: &NeighborhoodSpec) -> Vec<MarkRef> {
        let t = self.time_of(mark);
        let site = self.site_coords[mark.site as usize].clone();
        spec.offsets()
            .iter()
            .map(|off| {
                let nb: Site = site.iter().zip(off).map(|(&c, &o)| c + o).collect();
                // Strictly before: ties have probability zero and the child
                // lives below the arrow.
                let next = nextafter_down(t);
                self.last_mark_before(&nb, next)
            })
            .collect()
    }

    /// All marks of `site` with time in `[t_lo, 0]`, most recent first.
    pub fn marks_in_window(&mut self, site: &[i32], t_lo: f64) -> Vec<MarkRef> {
        let site_id = self.intern(site);
        let mut out = Vec::new();
        let mut idx = 0usize;
        loop {
            self.extend_to(site_id, idx);
            let t = self.streams[site_id as usize].times[idx];
            if t < t_lo {
                break;
            }
            out.push(MarkRef {
                site: site_id,
                idx: idx as u32,
            });
            idx += 1;
        }
        out
    }

    /// Debug dump of every memoized mark (site coords, time, u, index).
    pub fn trace(&self) -> Vec<UpdateMark> {
        let mut rows = Vec::new();
        for (sid, stream) in self.streams.iter().enumerate() {
            for k in 0..stream.times.len() {
                rows.push(UpdateMark {
                    site: self.site_coords[sid].clone(),
                    time: stream.times[k],
                    u: stream.us[k],
                    stream_idx: k as u32,
                });
            }
        }
        rows.sort_by(|a, b| {
            (&a.site, a.stream_idx)
                .partial_cmp(&(&b.site, b.stream_idx))
                .unwrap()
        });
        rows
    }
}

fn nextafter_down(t: f64) -> f64 {
    // largest float strictly below t
    if t == f64::NEG_INFINITY {
        return t;
    }
    let bits = t.to_bits();
    let next = if t > 0.0 {
        bits - 1
    } else if t == 0.0 {
        (-f64::MIN_POSITIVE).to_bits()
    } else {
        bits + 1
    };
    f64::from_bits(next)
}

/// One node of an explored cone.
#[derive(Debug, Clone)]
pub struct ConeNode {
    pub mark: MarkRef,
    /// Minimal arrow count from the root.
    pub dist: u32,
    /// Node ids of the children (one per offset), set once expanded.
    pub children: Option<Vec<u32>>,
}

/// The explored active-path DAG rooted at one mark.
///
/// Nodes are deduplicated: a mark reachable along several paths appears once
/// with its minimal distance.
#[derive(Debug, Clone)]
pub struct ConeDag {
    pub nodes: Vec<ConeNode>,
    index: HashMap<u64, u32>,
    /// Node count per distance.
    pub per_depth: Vec<u64>,
}

impl ConeDag {
    pub fn new(root: MarkRef) -> Self {
        let mut index = HashMap::new();
        index.insert(root.key(), 0);
        Self {
            nodes: vec![ConeNode {
                mark: root,
                dist: 0,
                children: None,
            }],
            index,
            per_depth: vec![1],
        }
    }

    pub fn node_of(&self, mark: MarkRef) -> Option<u32> {
        self.index.get(&mark.key()).copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> u32 {
        (self.per_depth.len() - 1) as u32
    }

    fn insert(&mut self, mark: MarkRef, dist: u32) -> u32 {
        if let Some(&id) = self.index.get(&mark.key()) {
            return id;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(ConeNode {
            mark,
            dist,
            children: None,
        });
        self.index.insert(mark.key(), id);
        if self.per_depth.len() <= dist as usize {
            self.per_depth.resize(dist as usize + 1, 0);
        }
        self.per_depth[dist as usize] += 1;
        id
    }

    /// Expand breadth-first until every node at distance < `depth` has
    /// children. Nodes discovered at distance `depth` stay unexpanded.
    pub fn expand_to(
        &mut self,
        store: &mut MarkStore,
        spec: &NeighborhoodSpec,
        depth: u32,
        node_budget: u64,
    ) -> Result<()> {
        let mut frontier: Vec<u32> = (0..self.nodes.len() as u32)
            .filter(|&id| {
                self.nodes[id as usize].children.is_none() && self.nodes[id as usize].dist < depth
            })
            .collect();
        while let Some(id) = frontier.pop() {
            let node = &self.nodes[id as usize];
            if node.children.is_some() || node.dist >= depth {
                continue;
            }
            let dist = node.dist;
            let mark = node.mark;
            let kids = store.children(mark, spec);
            let mut kid_ids = Vec::with_capacity(kids.len());
            for kid in kids {
                let kid_id = self.insert(kid, dist + 1);
                kid_ids.push(kid_id);
                if self.nodes.len() as u64 > node_budget {
                    return Err(Error::BudgetExceeded {
                        revealed: self.nodes.len() as u64,
                        budget: node_budget,
                        context: "cone exploration".into(),
                    });
                }
                if self.nodes[kid_id as usize].dist < depth
                    && self.nodes[kid_id as usize].children.is_none()
                {
                    frontier.push(kid_id);
                }
            }
            self.nodes[id as usize].children = Some(kid_ids);
        }
        Ok(())
    }
}

/// Breadth-first exploration of the cone below `root` to `max_depth`.
pub fn explore_cone(
    store: &mut MarkStore,
    spec: &NeighborhoodSpec,
    root: MarkRef,
    max_depth: u32,
    node_budget: u64,
) -> Result<ConeDag> {
    let mut dag = ConeDag::new(root);
    dag.expand_to(store, spec, max_depth, node_budget)?;
    Ok(dag)
}
