//! Orderings and nearest-neighbour conditioning sets.
//!
//! Ties are always broken by the smaller original index.

use std::cmp::Ordering;

use crate::domain::{distance, Site};
use crate::error::{Error, Result};

/// Above this many sites neighbour search uses a bucket grid.
pub const BRUTE_FORCE_LIMIT: usize = 2000;

/// A processing order plus, for every position, the earlier positions it
/// conditions on.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSets {
    /// `perm[i]` is the original index processed at position `i`.
    pub perm: Vec<usize>,
    /// `sets[i]` holds positions `< i`, nearest first.
    pub sets: Vec<Vec<usize>>,
    /// Configured maximum set size.
    pub m: usize,
}

impl NeighborSets {
    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Inverse permutation: position of each original index.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.perm.len()];
        for (i, &o) in self.perm.iter().enumerate() {
            pos[o] = i;
        }
        pos
    }

    /// Original indices conditioned on at position `i`.
    pub fn neighbor_indices(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.sets[i].iter().map(move |&j| self.perm[j])
    }

    /// Positions whose sets contain each position.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.n()];
        for (i, set) in self.sets.iter().enumerate() {
            for &j in set {
                ch[j].push(i);
            }
        }
        ch
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let mut seen = vec![false; n];
        for &o in &self.perm {
            if o >= n || seen[o] {
                return Err(Error::Contract("perm is not a permutation".into()));
            }
            seen[o] = true;
        }
        if self.sets.len() != n {
            return Err(Error::Contract("one neighbor set per position required".into()));
        }
        for (i, set) in self.sets.iter().enumerate() {
            if set.len() > self.m || set.iter().any(|&j| j >= i) {
                return Err(Error::Contract(format!("neighbor set at position {i} is invalid")));
            }
        }
        Ok(())
    }

    /// Largest conditioning set actually used.
    pub fn max_set_len(&self) -> usize {
        self.sets.iter().map(Vec::len).max().unwrap_or(0)
    }
}

fn centroid(sites: &[Site]) -> Site {
    let n = sites.len() as f64;
    let (sx, sy) = sites.iter().fold((0.0, 0.0), |(a, b), s| (a + s[0], b + s[1]));
    [sx / n, sy / n]
}

/// Greedy max-min ordering. The first site is the one farthest from the
/// centroid; each later site maximizes its distance to the selected ones.
pub fn maxmin_order(sites: &[Site]) -> Result<Vec<usize>> {
    let n = sites.len();
    if n == 0 {
        return Err(Error::InvalidDataset("cannot order an empty site set".into()));
    }
    let c = centroid(sites);
    let mut first = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, s) in sites.iter().enumerate() {
        let d = distance(s, &c);
        if d > best {
            best = d;
            first = i;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = first;
    loop {
        order.push(cur);
        taken[cur] = true;
        if order.len() == n {
            break;
        }
        let mut next = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for j in 0..n {
            if taken[j] {
                continue;
            }
            let d = distance(&sites[j], &sites[cur]);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if min_d[j] > best {
                best = min_d[j];
                next = j;
            }
        }
        cur = next;
    }
    Ok(order)
}

/// Non-censored sites first in max-min order, then censored sites in
/// ascending index order.
pub fn censored_aware_order(sites: &[Site], censored: &[bool]) -> Result<Vec<usize>> {
    if sites.len() != censored.len() {
        return Err(Error::Dimension("censoring mask length differs from site count".into()));
    }
    let observed: Vec<usize> = (0..sites.len()).filter(|&i| !censored[i]).collect();
    if observed.is_empty() {
        return Err(Error::InvalidDataset("all observations are censored".into()));
    }
    let obs_sites: Vec<Site> = observed.iter().map(|&i| sites[i]).collect();
    let mut order: Vec<usize> = maxmin_order(&obs_sites)?.into_iter().map(|k| observed[k]).collect();
    order.extend((0..sites.len()).filter(|&i| censored[i]));
    Ok(order)
}

/// Observation block then prediction block, each max-min ordered.
/// Prediction `j` is index `obs_sites.len() + j` in the result.
pub fn prediction_order(obs_sites: &[Site], pred_sites: &[Site]) -> Result<Vec<usize>> {
    let n_o = obs_sites.len();
    let mut order = maxmin_order(obs_sites)?;
    order.extend(maxmin_order(pred_sites)?.into_iter().map(|j| j + n_o));
    Ok(order)
}

#[derive(Clone, Copy)]
struct Candidate {
    d: f64,
    orig: usize,
    pos: usize,
}

fn cmp_candidates(a: &Candidate, b: &Candidate) -> Ordering {
    a.d.total_cmp(&b.d).then(a.orig.cmp(&b.orig))
}

fn take_nearest(cands: &mut Vec<Candidate>, m: usize) -> Vec<usize> {
    if cands.len() > m {
        cands.select_nth_unstable_by(m, cmp_candidates);
        cands.truncate(m);
    }
    cands.sort_unstable_by(cmp_candidates);
    cands.iter().map(|c| c.pos).collect()
}

/// For every position, the up-to-`m` nearest earlier positions whose sites
/// are eligible (`eligible` is indexed by original index; `None` allows all).
pub fn conditioning_sets(
    sites: &[Site],
    perm: &[usize],
    m: usize,
    eligible: Option<&[bool]>,
) -> Result<NeighborSets> {
    let n = sites.len();
    if perm.len() != n {
        return Err(Error::Dimension("permutation length differs from site count".into()));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("M must be at least 1".into()));
    }
    if let Some(e) = eligible {
        if e.len() != n {
            return Err(Error::Dimension("eligibility mask length differs from site count".into()));
        }
    }
    let sets = if n <= BRUTE_FORCE_LIMIT {
        brute_force_sets(sites, perm, m, eligible)
    } else {
        grid_sets(sites, perm, m, eligible)
    };
    let out = NeighborSets {
        perm: perm.to_vec(),
        sets,
        m,
    };
    out.validate()?;
    Ok(out)
}

pub(crate) fn brute_force_sets(
    sites: &[Site],
    perm: &[usize],
    m: usize,
    eligible: Option<&[bool]>,
) -> Vec<Vec<usize>> {
    let ok = |o: usize| eligible.is_none_or(|e| e[o]);
    let mut cands = Vec::new();
    (0..perm.len())
        .map(|i| {
            cands.clear();
            let si = &sites[perm[i]];
            for (j, &o) in perm[..i].iter().enumerate() {
                if ok(o) {
                    cands.push(Candidate {
                        d: distance(si, &sites[o]),
                        orig: o,
                        pos: j,
                    });
                }
            }
            take_nearest(&mut cands, m)
        })
        .collect()
}

/// Incremental bucket grid: positions are inserted as they are processed,
/// and each query scans rings of cells until the k-th distance is certified.
fn grid_sets(sites: &[Site], perm: &[usize], m: usize, eligible: Option<&[bool]>) -> Vec<Vec<usize>> {
    let n = sites.len();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in sites {
        x0 = x0.min(s[0]);
        y0 = y0.min(s[1]);
        x1 = x1.max(s[0]);
        y1 = y1.max(s[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(f64::MIN_POSITIVE);
    let per_side = ((n as f64 / 4.0).sqrt().ceil() as usize).max(1);
    let h = span / per_side as f64;
    let nx = (((x1 - x0) / h).floor() as usize + 1).min(per_side + 1);
    let ny = (((y1 - y0) / h).floor() as usize + 1).min(per_side + 1);
    let cell_of = |s: &Site| -> (usize, usize) {
        let cx = (((s[0] - x0) / h).floor() as usize).min(nx - 1);
        let cy = (((s[1] - y0) / h).floor() as usize).min(ny - 1);
        (cx, cy)
    };
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    let ok = |o: usize| eligible.is_none_or(|e| e[o]);
    let mut inserted = 0usize;
    let mut cands = Vec::new();
    let mut sets = Vec::with_capacity(n);
    for i in 0..n {
        let si = &sites[perm[i]];
        let (cx, cy) = cell_of(si);
        cands.clear();
        let want = m.min(inserted);
        if want > 0 {
            let max_ring = nx.max(ny);
            for r in 0..=max_ring {
                let lo_x = cx.saturating_sub(r);
                let hi_x = (cx + r).min(nx - 1);
                let lo_y = cy.saturating_sub(r);
                let hi_y = (cy + r).min(ny - 1);
                for gx in lo_x..=hi_x {
                    for gy in lo_y..=hi_y {
                        let on_ring = gx.abs_diff(cx) == r || gy.abs_diff(cy) == r;
                        if !on_ring {
                            continue;
                        }
                        for &j in &cells[gx * ny + gy] {
                            let o = perm[j];
                            cands.push(Candidate {
                                d: distance(si, &sites[o]),
                                orig: o,
                                pos: j,
                            });
                        }
                    }
                }
                let covered = lo_x == 0 && lo_y == 0 && hi_x == nx - 1 && hi_y == ny - 1;
                if covered {
                    break;
                }
                if cands.len() >= want {
                    cands.select_nth_unstable_by(want - 1, cmp_candidates);
                    // Unvisited points lie at least r·h away.
                    if cands[want - 1].d < r as f64 * h {
                        break;
                    }
                }
            }
        }
        sets.push(take_nearest(&mut cands, m));
        if ok(perm[i]) {
            cells[cx * ny + cy].push(i);
            inserted += 1;
        }
    }
    sets
}
