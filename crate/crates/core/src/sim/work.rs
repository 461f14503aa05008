//! Work quanta and their distribution across banks.
//!
//! The simulator never moves real tensors; it moves integer counts. A
//! [`WorkQuanta`] is the per-bank bundle of traffic and ops accumulated for
//! one pipeline stage, converted to cycles in one shot so ceilings apply per
//! stage, not per token.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::attention::{HeadKind, SparsityConfig};

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct WorkQuanta {
    /// Bits streamed from the stacked memory.
    pub dram_bits: u64,
    /// Bits served from logic-die SRAM (same datapath cycles, no DRAM energy).
    pub sram_bits: u64,
    pub macs: u64,
    /// Scalar ops outside the MAC count (softmax, comparisons, merges).
    pub scalar_ops: u64,
}

impl WorkQuanta {
    pub fn ops(&self) -> u64 {
        self.macs.saturating_mul(2).saturating_add(self.scalar_ops)
    }

    pub fn mem_bits(&self) -> u64 {
        self.dram_bits + self.sram_bits
    }
}

impl AddAssign for WorkQuanta {
    fn add_assign(&mut self, rhs: Self) {
        self.dram_bits += rhs.dram_bits;
        self.sram_bits += rhs.sram_bits;
        self.macs += rhs.macs;
        self.scalar_ops += rhs.scalar_ops;
    }
}

/// Tunable cost constants the published tables do not pin down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// MACs per token per query head for the score dot product.
    pub score_macs_per_dim: u64,
    /// MACs per token per query head for the weighted value sum.
    pub av_macs_per_dim: u64,
    /// Scalar softmax ops per token per query head.
    pub softmax_ops_per_token: u64,
    /// Bits per scalar in a shipped softmax partial.
    pub merge_value_bits: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            score_macs_per_dim: 2,
            av_macs_per_dim: 1,
            softmax_ops_per_token: 8,
            merge_value_bits: 32,
        }
    }
}

/// Token counts one head touches in one decode step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounts {
    pub seq_len: usize,
    /// Tokens in sink + local window.
    pub sink_local: usize,
    /// Leading subset of those resident in logic SRAM.
    pub resident: usize,
    /// Pages held after eviction.
    pub stored_pages: usize,
    pub selected_pages: usize,
    pub selected_tokens: usize,
    /// Pages whose metadata is scanned this step (0 when selection is
    /// trivial or the dense path is cheaper).
    pub scan_pages: usize,
}

/// Closed-form cache occupancy for a retrieval head at a given length.
///
/// The paged region only ever shrinks by whole-page evictions, so counts
/// follow directly from the config. When scanning metadata plus fetching the
/// selection would move at least as many bits as just attending every stored
/// page, the head takes the dense path (no scan) — selection cannot save
/// anything there.
pub fn cache_counts(cfg: &SparsityConfig, seq_len: usize) -> CacheCounts {
    let sink = cfg.n_sink.min(seq_len);
    let local = cfg.n_local.min(seq_len - sink);
    let sink_local = sink + local;
    let popped = seq_len - sink_local;
    let pages_raw = popped.div_ceil(cfg.page_size);
    let stored_pages = cfg.budget_pages.map_or(pages_raw, |b| pages_raw.min(b));
    let evicted_tokens = (pages_raw - stored_pages) * cfg.page_size;
    let stored_tokens = popped.saturating_sub(evicted_tokens);
    let resident = cfg.resident_tokens().min(sink_local);

    let (selected_pages, selected_tokens, scan_pages) = if stored_pages <= cfg.top_k {
        (stored_pages, stored_tokens, 0)
    } else {
        let sel_tokens = cfg.top_k * cfg.page_size;
        if sel_tokens + stored_pages >= stored_tokens {
            (stored_pages, stored_tokens, 0)
        } else {
            (cfg.top_k, sel_tokens, stored_pages)
        }
    };
    CacheCounts {
        seq_len,
        sink_local,
        resident,
        stored_pages,
        selected_pages,
        selected_tokens,
        scan_pages,
    }
}

/// One head's step work before placement: the owner-pinned part (sink +
/// local + final top-k ranking) and the spreadable part (paged tokens and
/// metadata scan).
#[derive(Debug, Clone)]
pub struct HeadWork {
    pub kind: HeadKind,
    /// Flattened bank ids of the head's own group; first entry owns the
    /// local-window FIFO and merges partials.
    pub group: Vec<usize>,
    pub pinned: WorkQuanta,
    pub bulk_tokens: u64,
    pub scan_pages: u64,
    /// Per attended token (all query heads folded in).
    pub token_quanta: WorkQuanta,
    /// Per scanned page.
    pub scan_quanta: WorkQuanta,
}

impl HeadWork {
    pub fn owner(&self) -> usize {
        self.group[0]
    }
}

/// Per-page-rotated round-robin split of `tokens` over `banks`: page `p`
/// deals token `j` to slot `(j + p) % banks`, so the remainder of every page
/// lands one slot further along.
pub fn spread_tokens(tokens: u64, page_size: u64, banks: usize) -> Vec<u64> {
    let n = banks as u64;
    let mut out = vec![0u64; banks];
    if tokens == 0 {
        return out;
    }
    let pages = tokens.div_ceil(page_size);
    for p in 0..pages {
        let size = if p == pages - 1 && tokens % page_size != 0 {
            tokens % page_size
        } else {
            page_size
        };
        let base = size / n;
        let rem = size % n;
        for (b, slot) in out.iter_mut().enumerate() {
            let r = (b as u64 + n - p % n) % n;
            *slot += base + u64::from(r < rem);
        }
    }
    out
}

/// Plain round-robin split of whole pages over banks.
pub fn spread_pages(pages: u64, banks: usize) -> Vec<u64> {
    let n = banks as u64;
    (0..banks as u64)
        .map(|b| pages / n + u64::from(b < pages % n))
        .collect()
}

/// Distribute one head's spreadable work over `target` banks (its own group,
/// or the whole tile when balancing) and pin the rest on the owner. Returns
/// per-bank quanta aligned with `target`; the owner must be part of `target`.
pub fn place_head_work(head: &HeadWork, target: &[usize], page_size: u64) -> Vec<WorkQuanta> {
    debug_assert!(target.contains(&head.owner()));
    let tokens = spread_tokens(head.bulk_tokens, page_size, target.len());
    let pages = spread_pages(head.scan_pages, target.len());
    target
        .iter()
        .enumerate()
        .map(|(slot, &bank)| {
            let mut q = WorkQuanta::default();
            if bank == head.owner() {
                q += head.pinned;
            }
            q.dram_bits += tokens[slot] * head.token_quanta.dram_bits
                + pages[slot] * head.scan_quanta.dram_bits;
            q.macs +=
                tokens[slot] * head.token_quanta.macs + pages[slot] * head.scan_quanta.macs;
            q.scalar_ops += tokens[slot] * head.token_quanta.scalar_ops
                + pages[slot] * head.scan_quanta.scalar_ops;
            q
        })
        .collect()
}

/// Banks of `target` that end up holding any of the head's tokens (they each
/// produce a softmax partial for the owner to merge).
pub fn participants(head: &HeadWork, target: &[usize], page_size: u64) -> Vec<usize> {
    let tokens = spread_tokens(head.bulk_tokens, page_size, target.len());
    target
        .iter()
        .enumerate()
        .filter(|(slot, &bank)| bank == head.owner() || tokens[*slot] > 0)
        .map(|(_, &bank)| bank)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SparsityConfig {
        SparsityConfig::default()
    }

    #[test]
    fn counts_cover_short_sequences() {
        let c = cache_counts(&cfg(), 0);
        assert_eq!(c.sink_local, 0);
        assert_eq!(c.stored_pages, 0);
        let c = cache_counts(&cfg(), 500);
        assert_eq!(c.sink_local, 500);
        assert_eq!(c.stored_pages, 0);
        assert_eq!(c.scan_pages, 0);
    }

    #[test]
    fn counts_skip_scan_when_selection_trivial() {
        // 2000 tokens: 640 sink+local, 1360 paged = 43 pages < top_k.
        let c = cache_counts(&cfg(), 2000);
        assert_eq!(c.stored_pages, 43);
        assert_eq!(c.scan_pages, 0);
        assert_eq!(c.selected_tokens, 1360);
        // Deep sequence: scan engages, selection caps at top_k pages.
        let c = cache_counts(&cfg(), 262_144);
        assert_eq!(c.stored_pages, 8172);
        assert_eq!(c.scan_pages, 8172);
        assert_eq!(c.selected_tokens, 108 * 32);
    }

    #[test]
    fn counts_never_exceed_dense_traffic() {
        // Around the top_k boundary the dense path must win; above it the
        // sparse path must fetch strictly less.
        let cfg = cfg();
        for seq in 4000..4400 {
            let c = cache_counts(&cfg, seq);
            let stored_tokens = seq - c.sink_local
                - (seq - c.sink_local).div_ceil(cfg.page_size).saturating_sub(c.stored_pages)
                    * cfg.page_size;
            assert!(
                c.selected_tokens + c.scan_pages <= stored_tokens,
                "seq {seq}: {} + {} > {stored_tokens}",
                c.selected_tokens,
                c.scan_pages
            );
        }
    }

    #[test]
    fn budget_caps_stored_pages() {
        let mut cfg = cfg();
        cfg.budget_pages = Some(16);
        let c = cache_counts(&cfg, 262_144);
        assert_eq!(c.stored_pages, 16);
        assert_eq!(c.scan_pages, 0);
        assert_eq!(c.selected_tokens, 16 * 32);
    }

    #[test]
    fn token_spreading_balances_within_one_per_page() {
        // 32-token pages over 3 banks rotate the remainder around.
        let counts = spread_tokens(3 * 32, 32, 3);
        assert_eq!(counts, vec![32, 32, 32]);
        let counts = spread_tokens(108 * 32, 32, 3);
        assert_eq!(counts, vec![1152, 1152, 1152]);
        let counts = spread_tokens(33, 32, 4);
        assert_eq!(counts.iter().sum::<u64>(), 33);
        assert!(counts.iter().all(|&c| c >= 33 / 4 && c <= 33 / 4 + 2));
    }

    #[test]
    fn page_spreading_round_robin() {
        assert_eq!(spread_pages(7, 3), vec![3, 2, 2]);
        assert_eq!(spread_pages(0, 2), vec![0, 0]);
    }
}
