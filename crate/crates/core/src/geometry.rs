//! Lattice geometry: sites of `Z^d`, neighbourhood offsets, periodic windows.

use crate::error::{Error, Result};

/// A point of `Z^d`, coordinates in order.
pub type Site = Vec<i32>;

/// A finite symmetric set of offsets `B ⊂ Z^d \ {0}`.
///
/// The default is the unit l1-sphere, i.e. the `2d` nearest-neighbour
/// offsets, listed in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodSpec {
    d: usize,
    offsets: Vec<Site>,
}

impl NeighborhoodSpec {
    /// Nearest-neighbour offsets of `Z^d`.
    pub fn unit_sphere(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        let mut offsets = Vec::with_capacity(2 * d);
        for axis in 0..d {
            for sign in [-1i32, 1i32] {
                let mut o = vec![0i32; d];
                o[axis] = sign;
                offsets.push(o);
            }
        }
        offsets.sort();
        Ok(Self { d, offsets })
    }

    /// Build from an explicit offset set; rejects 0 ∈ B and asymmetric sets.
    pub fn from_offsets(d: usize, mut offsets: Vec<Site>) -> Result<Self> {
        if offsets.iter().any(|o| o.len() != d) {
            return Err(Error::InvalidParameter("offset dimension mismatch".into()));
        }
        if offsets.iter().any(|o| o.iter().all(|&c| c == 0)) {
            return Err(Error::InvalidParameter("0 must not belong to B".into()));
        }
        for o in &offsets {
            let neg: Site = o.iter().map(|&c| -c).collect();
            if !offsets.contains(&neg) {
                return Err(Error::InvalidParameter(format!(
                    "B is not symmetric: missing -{o:?}"
                )));
            }
        }
        offsets.sort();
        offsets.dedup();
        Ok(Self { d, offsets })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    /// |B|.
    pub fn size(&self) -> usize {
        self.offsets.len()
    }

    /// Offsets in canonical (lexicographic) order.
    pub fn offsets(&self) -> &[Site] {
        &self.offsets
    }

    /// Maximal l1 norm over B; one arrow of the graphical representation
    /// travels at most this lattice distance.
    pub fn range(&self) -> u32 {
        self.offsets
            .iter()
            .map(|o| o.iter().map(|&c| c.unsigned_abs()).sum::<u32>())
            .max()
            .unwrap_or(0)
    }
}

/// `{site + b : b ∈ B}` in canonical offset order.
pub fn neighbors(site: &[i32], spec: &NeighborhoodSpec) -> Vec<Site> {
    spec.offsets()
        .iter()
        .map(|o| site.iter().zip(o).map(|(&s, &b)| s + b).collect())
        .collect()
}

/// Number of points of `Z^d` with l1 norm exactly `k`.
pub fn sphere_size(d: usize, k: u32) -> u64 {
    // Count integer d-tuples with sum of |x_i| = k, by dimension recursion.
    let mut counts = vec![0u64; k as usize + 1];
    counts[0] = 1;
    if k >= 1 {
        counts[1..].iter_mut().for_each(|c| *c = 2); // d = 1
    }
    for _ in 1..d {
        let mut next = vec![0u64; k as usize + 1];
        for (total, slot) in next.iter_mut().enumerate() {
            for m in 0..=total {
                let ways = if m == 0 { 1 } else { 2 };
                *slot += ways * counts[total - m];
            }
        }
        counts = next;
    }
    counts[k as usize]
}

/// Number of points of `Z^d` with l1 norm at most `k`.
pub fn ball_size(d: usize, k: u32) -> u64 {
    (0..=k).map(|r| sphere_size(d, r)).sum()
}

/// A finite periodic window of `Z^d` (a torus), used by the forward
/// simulations and the duality experiments.
#[derive(Debug, Clone)]
pub struct TorusWindow {
    d: usize,
    side: u32,
}

impl TorusWindow {
    pub fn new(d: usize, side: u32) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if side < 3 {
            return Err(Error::InvalidParameter(
                "torus side must be >= 3 so B wraps injectively".into(),
            ));
        }
        Ok(Self { d, side })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn num_sites(&self) -> usize {
        (self.side as usize).pow(self.d as u32)
    }

    /// Dense index of a (wrapped) coordinate vector.
    pub fn index_of(&self, site: &[i32]) -> usize {
        let mut idx = 0usize;
        for &c in site {
            let w = c.rem_euclid(self.side as i32) as usize;
            idx = idx * self.side as usize + w;
        }
        idx
    }

    /// Coordinates of a dense index, each in `[0, side)`.
    pub fn site_of(&self, mut idx: usize) -> Site {
        let mut coords = vec![0i32; self.d];
        for slot in coords.iter_mut().rev() {
            *slot = (idx % self.side as usize) as i32;
            idx /= self.side as usize;
        }
        coords
    }

    /// Dense indices of the wrapped neighbours `site + b`, in offset order.
    pub fn neighbor_indices(&self, idx: usize, spec: &NeighborhoodSpec) -> Vec<usize> {
        let site = self.site_of(idx);
        neighbors(&site, spec)
            .iter()
            .map(|n| self.index_of(n))
            .collect()
    }
}
