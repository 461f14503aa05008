//! Head-to-bank mapping: pipeline decomposition, communication-minimal
//! tiling, and interleaved token placement.
//!
//! Three separate problems, solved in order:
//! 1. A head count rarely matches a bank count, so heads are decomposed into
//!    pipeline stages whose sizes divide the bank count.
//! 2. Within a stage, retrieval heads are grouped with nearby streaming heads
//!    into tiles so the heavy dynamic-selection work has idle neighbors to
//!    spill onto. The grouping minimizes the worst retrieval-to-streaming
//!    mesh distance, solved exactly by max-flow over a distance threshold.
//! 3. Inside a tile, each page's tokens are striped round-robin across the
//!    banks so any top-k selection lands evenly.

pub mod flow;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::arch::BankCoord;
use crate::attention::HeadKind;
use crate::error::{Error, Result};
use flow::MaxFlow;

/// Stage sizes for one pipeline segment. Every stage count divides the bank
/// count, so banks split evenly among the stage's heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<usize>,
}

impl StagePlan {
    pub fn banks_per_head(&self, stage: usize, n_banks: usize) -> usize {
        n_banks / self.stages[stage]
    }

    pub fn head_total(&self) -> usize {
        self.stages.iter().sum()
    }
}

fn divisors_desc(n: usize) -> Vec<usize> {
    let mut d: Vec<usize> = (1..=n).filter(|x| n % x == 0).collect();
    d.reverse();
    d
}

/// Split `n_heads` across `n_banks` banks into pipeline segments.
///
/// More heads than banks: chunk into bank-sized groups first. Otherwise take
/// the largest divisor of the bank count that still fits, repeatedly; each
/// resulting stage runs its heads in parallel with `n_banks / stage` banks
/// per head. Divisors may repeat (see `decompose_heads_distinct` for the
/// strict variant).
pub fn decompose_heads(n_heads: usize, n_banks: usize) -> Vec<StagePlan> {
    assert!(n_heads >= 1 && n_banks >= 1);
    if n_heads > n_banks {
        let mut segments = Vec::new();
        let mut remaining = n_heads;
        while remaining > 0 {
            let chunk = remaining.min(n_banks);
            segments.extend(decompose_heads(chunk, n_banks));
            remaining -= chunk;
        }
        return segments;
    }
    if n_banks % n_heads == 0 {
        return vec![StagePlan { stages: vec![n_heads] }];
    }
    let divisors = divisors_desc(n_banks);
    let mut stages = Vec::new();
    let mut remaining = n_heads;
    while remaining > 0 {
        let d = *divisors
            .iter()
            .find(|&&d| d <= remaining)
            .expect("1 always divides");
        stages.push(d);
        remaining -= d;
    }
    vec![StagePlan { stages }]
}

/// Strict variant: stages within a segment must use distinct divisors.
/// Minimizes the stage count by subset search; errors when no distinct
/// subset sums to the head count (e.g. prime bank counts).
pub fn decompose_heads_distinct(n_heads: usize, n_banks: usize) -> Result<Vec<StagePlan>> {
    assert!(n_heads >= 1 && n_banks >= 1);
    if n_heads > n_banks {
        let mut segments = Vec::new();
        let mut remaining = n_heads;
        while remaining > 0 {
            let chunk = remaining.min(n_banks);
            segments.extend(decompose_heads_distinct(chunk, n_banks)?);
            remaining -= chunk;
        }
        return Ok(segments);
    }
    if n_banks % n_heads == 0 {
        return Ok(vec![StagePlan { stages: vec![n_heads] }]);
    }
    let divisors = divisors_desc(n_banks);
    let mut best: Option<Vec<usize>> = None;
    // Divisor lists are tiny; depth-first over subsets with a best-count cut.
    fn search(
        divisors: &[usize],
        from: usize,
        remaining: usize,
        picked: &mut Vec<usize>,
        best: &mut Option<Vec<usize>>,
    ) {
        if remaining == 0 {
            if best.as_ref().map(|b| picked.len() < b.len()).unwrap_or(true) {
                *best = Some(picked.clone());
            }
            return;
        }
        if let Some(b) = best {
            if picked.len() + 1 >= b.len() {
                return;
            }
        }
        for i in from..divisors.len() {
            if divisors[i] > remaining {
                continue;
            }
            picked.push(divisors[i]);
            search(divisors, i + 1, remaining - divisors[i], picked, best);
            picked.pop();
        }
    }
    search(&divisors, 0, n_heads, &mut Vec::new(), &mut best);
    match best {
        Some(stages) => Ok(vec![StagePlan { stages }]),
        None => Err(Error::InfeasibleDistinctDecomposition { n_heads, n_banks }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileMember {
    pub head_index: usize,
    pub kind: HeadKind,
    pub coord: BankCoord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub members: Vec<TileMember>,
}

impl Tile {
    pub fn minority(&self) -> &TileMember {
        &self.members[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub tiles: Vec<Tile>,
    pub tile_count: usize,
    pub max_dist: usize,
}

/// Group pinned heads into tiles minimizing the worst intra-tile
/// retrieval-to-streaming Manhattan distance.
///
/// With `t = min(n_r, n_s)` tiles of capacity `ceil((n_r + n_s) / t)`, each
/// tile holds exactly one head of the rarer kind (listed first) plus its
/// assigned majority heads. Feasibility at a candidate distance is a
/// bipartite flow problem; the optimum is the smallest feasible candidate.
/// A uniform population (one kind absent) degenerates to one singleton tile
/// per head.
pub fn assign_tiles(
    heads: &[(HeadKind, BankCoord)],
    mesh_rows: usize,
    mesh_cols: usize,
) -> Result<TilePlan> {
    if heads.len() > mesh_rows * mesh_cols {
        return Err(Error::InfeasibleTiling(format!(
            "{} heads for {} banks",
            heads.len(),
            mesh_rows * mesh_cols
        )));
    }
    for (_, c) in heads {
        if c.row >= mesh_rows || c.col >= mesh_cols {
            return Err(Error::CoordOutOfBounds {
                row: c.row,
                col: c.col,
                rows: mesh_rows,
                cols: mesh_cols,
            });
        }
    }
    let retrieval: Vec<usize> = heads
        .iter()
        .enumerate()
        .filter(|(_, (k, _))| *k == HeadKind::Retrieval)
        .map(|(i, _)| i)
        .collect();
    let streaming: Vec<usize> = heads
        .iter()
        .enumerate()
        .filter(|(_, (k, _))| *k == HeadKind::Streaming)
        .map(|(i, _)| i)
        .collect();

    if retrieval.is_empty() || streaming.is_empty() {
        let tiles: Vec<Tile> = heads
            .iter()
            .enumerate()
            .map(|(i, (k, c))| Tile {
                members: vec![TileMember { head_index: i, kind: *k, coord: *c }],
            })
            .collect();
        let count = tiles.len();
        return Ok(TilePlan { tiles, tile_count: count, max_dist: 0 });
    }

    let (minority, majority) = if retrieval.len() <= streaming.len() {
        (retrieval, streaming)
    } else {
        (streaming, retrieval)
    };
    let t = minority.len();
    let capacity = (heads.len() + t - 1) / t;

    let mut candidates: Vec<usize> = minority
        .iter()
        .flat_map(|&m| majority.iter().map(move |&j| heads[m].1.manhattan(&heads[j].1)))
        .collect();
    candidates.sort_unstable();
    candidates.dedup();

    let feasible = |d: usize| -> Option<Vec<Vec<usize>>> {
        // source 0, minority 1..=t, majority t+1..=t+m, sink t+m+1.
        let m = majority.len();
        let mut net = MaxFlow::new(t + m + 2);
        let sink = t + m + 1;
        let mut handles = Vec::new();
        for (i, &hm) in minority.iter().enumerate() {
            net.add_edge(0, 1 + i, (capacity - 1) as u64);
            for (j, &hj) in majority.iter().enumerate() {
                if heads[hm].1.manhattan(&heads[hj].1) <= d {
                    handles.push((i, j, net.add_edge(1 + i, 1 + t + j, 1)));
                }
            }
        }
        for j in 0..m {
            net.add_edge(1 + t + j, sink, 1);
        }
        if net.max_flow(0, sink) != m as u64 {
            return None;
        }
        let mut assigned = vec![Vec::new(); t];
        for (i, j, h) in handles {
            if net.flow_on(h, 1) == 1 {
                assigned[i].push(j);
            }
        }
        Some(assigned)
    };

    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    if feasible(candidates[hi]).is_none() {
        return Err(Error::InfeasibleTiling("no assignment at any distance".into()));
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(candidates[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let best = candidates[lo];
    let assigned = feasible(best).expect("known feasible");

    let mut achieved = 0usize;
    let tiles: Vec<Tile> = minority
        .iter()
        .zip(&assigned)
        .map(|(&hm, js)| {
            let mut members = vec![TileMember {
                head_index: hm,
                kind: heads[hm].0,
                coord: heads[hm].1,
            }];
            for &j in js {
                let hj = majority[j];
                achieved = achieved.max(heads[hm].1.manhattan(&heads[hj].1));
                members.push(TileMember {
                    head_index: hj,
                    kind: heads[hj].0,
                    coord: heads[hj].1,
                });
            }
            Tile { members }
        })
        .collect();

    Ok(TilePlan { tiles, tile_count: t, max_dist: achieved })
}

/// Token offsets of one page dealt round-robin across a bank list:
/// token `j` lands on `banks[j % banks.len()]`.
pub fn interleave_page(page_size: usize, tile_banks: &[BankCoord]) -> Vec<Vec<usize>> {
    assert!(!tile_banks.is_empty());
    let n = tile_banks.len();
    let mut lists = vec![Vec::new(); n];
    for j in 0..page_size {
        lists[j % n].push(j);
    }
    lists
}

/// Per-page token placement over a tile's banks.
///
/// Each page is dealt round-robin starting from a bank offset rotated by its
/// page id, so the `page_size % banks` remainders spread over the banks
/// instead of always piling on the first ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterleaveMap {
    pub banks: Vec<BankCoord>,
    /// page id -> per-bank token offset lists, aligned with `banks`.
    pub entries: BTreeMap<u64, Vec<Vec<usize>>>,
}

impl InterleaveMap {
    pub fn build(page_ids: impl IntoIterator<Item = u64>, page_size: usize, banks: &[BankCoord]) -> Self {
        assert!(!banks.is_empty());
        let n = banks.len();
        let entries = page_ids
            .into_iter()
            .map(|id| {
                let offset = (id % n as u64) as usize;
                let mut lists = vec![Vec::new(); n];
                for j in 0..page_size {
                    lists[(j + offset) % n].push(j);
                }
                (id, lists)
            })
            .collect();
        Self { banks: banks.to_vec(), entries }
    }
}

/// Work a selection implies per bank: exactly the (page, token) pairs the
/// bank stores, never anything else.
pub fn co_place(selection: &[u64], imap: &InterleaveMap) -> Result<Vec<Vec<(u64, usize)>>> {
    let mut work: Vec<Vec<(u64, usize)>> = vec![Vec::new(); imap.banks.len()];
    for &id in selection {
        let lists = imap.entries.get(&id).ok_or(Error::UnknownPageId(id))?;
        for (bank, tokens) in lists.iter().enumerate() {
            work[bank].extend(tokens.iter().map(|&j| (id, j)));
        }
    }
    Ok(work)
}
