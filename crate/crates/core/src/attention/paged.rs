//! Paged KV storage with box metadata and score-driven eviction.
//!
//! Tokens enter through a sink region (never evicted), then a FIFO local
//! window. Tokens aging out of the window are packed into fixed-size pages.
//! Each page keeps elementwise key bounds so a query can upper-bound its best
//! dot product against the page without touching the keys, plus an
//! accumulated-attention importance score that decides who goes when the page
//! budget is exceeded.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::softmax::dot;
use super::{RelevanceMode, SparsityConfig};
use crate::error::{Error, Result};

/// Elementwise key bounds of one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageMetadata {
    pub page_id: u64,
    /// First global token index covered by the page.
    pub token_start: usize,
    /// Rows currently present (only the newest page may be short).
    pub rows: usize,
    pub tau_min: Vec<f64>,
    pub tau_max: Vec<f64>,
}

impl PageMetadata {
    /// Build bounds over the rows present in `keys`.
    pub fn from_keys(keys: &[Vec<f64>], page_id: u64, token_start: usize) -> Result<Self> {
        let first = keys.first().ok_or(Error::EmptyPage)?;
        let dim = first.len();
        let mut tau_min = first.clone();
        let mut tau_max = first.clone();
        for k in &keys[1..] {
            debug_assert_eq!(k.len(), dim);
            for d in 0..dim {
                tau_min[d] = tau_min[d].min(k[d]);
                tau_max[d] = tau_max[d].max(k[d]);
            }
        }
        Ok(Self {
            page_id,
            token_start,
            rows: keys.len(),
            tau_min,
            tau_max,
        })
    }

    pub fn token_range(&self) -> std::ops::Range<usize> {
        self.token_start..self.token_start + self.rows
    }
}

/// Upper bound on the query's dot product against any key in the page.
///
/// The default elementwise form picks the better bound per dimension and sums,
/// which dominates `q . k` for every key inside the box. The scalar form
/// (two dot products, then max) is cheaper but not a true bound; it is kept
/// for comparison.
pub fn relevance_score(query: &[f64], meta: &PageMetadata, mode: RelevanceMode) -> Result<f64> {
    if query.len() != meta.tau_min.len() {
        return Err(Error::DimensionMismatch {
            expected: meta.tau_min.len(),
            got: query.len(),
        });
    }
    let score = match mode {
        RelevanceMode::ElementwiseMaxSum => query
            .iter()
            .zip(meta.tau_min.iter().zip(&meta.tau_max))
            .map(|(q, (lo, hi))| (q * lo).max(q * hi))
            .sum(),
        RelevanceMode::ScalarDotMax => {
            dot(query, &meta.tau_min).max(dot(query, &meta.tau_max))
        }
    };
    Ok(score)
}

/// Ids of the `k` highest-scoring pages, best first. Ties go to the lower
/// page id so runs are reproducible; metadata order does not matter.
pub fn select_topk_pages(
    query: &[f64],
    metadata: &[PageMetadata],
    k: usize,
    mode: RelevanceMode,
) -> Result<Vec<u64>> {
    let mut scored: Vec<(f64, u64)> = metadata
        .iter()
        .map(|m| relevance_score(query, m, mode).map(|s| (s, m.page_id)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("relevance scores are finite")
            .then(a.1.cmp(&b.1))
    });
    Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvPage {
    pub meta: PageMetadata,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

/// Per-head KV store: sink tokens, FIFO local window, paged middle section.
#[derive(Debug, Clone)]
pub struct PagedKvCache {
    head_dim: usize,
    page_size: usize,
    n_sink: usize,
    n_local: usize,
    budget_pages: Option<usize>,
    sink_keys: Vec<Vec<f64>>,
    sink_values: Vec<Vec<f64>>,
    local: VecDeque<(Vec<f64>, Vec<f64>)>,
    pages: Vec<KvPage>,
    importance: Vec<f64>,
    next_page_id: u64,
    seq_len: usize,
    // Selection reuse across nearby decode steps.
    pub(super) cached_selection: Option<Vec<u64>>,
    pub(super) steps_since_selection: usize,
}

impl PagedKvCache {
    pub fn new(head_dim: usize, cfg: &SparsityConfig) -> Self {
        Self {
            head_dim,
            page_size: cfg.page_size,
            n_sink: cfg.n_sink,
            n_local: cfg.n_local,
            budget_pages: cfg.budget_pages,
            sink_keys: Vec::new(),
            sink_values: Vec::new(),
            local: VecDeque::new(),
            pages: Vec::new(),
            importance: Vec::new(),
            next_page_id: 0,
            seq_len: 0,
            cached_selection: None,
            steps_since_selection: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }
    pub fn page_size(&self) -> usize {
        self.page_size
    }
    pub fn n_sink(&self) -> usize {
        self.n_sink
    }
    pub fn n_local(&self) -> usize {
        self.n_local
    }
    pub fn pages(&self) -> &[KvPage] {
        &self.pages
    }
    pub fn importance(&self) -> &[f64] {
        &self.importance
    }
    pub fn sink_kv(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.sink_keys, &self.sink_values)
    }
    pub fn local_kv(&self) -> impl Iterator<Item = (&Vec<f64>, &Vec<f64>)> {
        self.local.iter().map(|(k, v)| (k, v))
    }
    pub fn local_len(&self) -> usize {
        self.local.len()
    }

    pub fn page(&self, id: u64) -> Option<&KvPage> {
        self.pages.iter().find(|p| p.meta.page_id == id)
    }

    pub fn metadata(&self) -> impl Iterator<Item = &PageMetadata> {
        self.pages.iter().map(|p| &p.meta)
    }

    pub fn metadata_vec(&self) -> Vec<PageMetadata> {
        self.pages.iter().map(|p| p.meta.clone()).collect()
    }

    /// Append the next token. Returns the id of the page evicted to stay
    /// inside the budget, if any.
    pub fn push_token(&mut self, key: Vec<f64>, value: Vec<f64>) -> Option<u64> {
        debug_assert_eq!(key.len(), self.head_dim);
        debug_assert_eq!(value.len(), self.head_dim);
        if self.seq_len < self.n_sink {
            self.sink_keys.push(key);
            self.sink_values.push(value);
            self.seq_len += 1;
            return None;
        }
        self.local.push_back((key, value));
        self.seq_len += 1;
        if self.local.len() > self.n_local {
            let (k, v) = self.local.pop_front().expect("window non-empty");
            // The window held tokens [seq_len-1-n_local, seq_len-1]; the
            // front is the one aging out.
            let aged_index = self.seq_len - 1 - self.n_local;
            self.append_paged(k, v, aged_index);
            return self.evict_if_over_budget();
        }
        None
    }

    fn append_paged(&mut self, key: Vec<f64>, value: Vec<f64>, token_index: usize) {
        let open = self
            .pages
            .last()
            .map(|p| p.keys.len() < self.page_size)
            .unwrap_or(false);
        if open {
            let page = self.pages.last_mut().expect("checked above");
            page.keys.push(key);
            page.values.push(value);
            page.meta = PageMetadata::from_keys(&page.keys, page.meta.page_id, page.meta.token_start)
                .expect("page non-empty");
        } else {
            let id = self.next_page_id;
            self.next_page_id += 1;
            let keys = vec![key];
            let values = vec![value];
            let meta = PageMetadata::from_keys(&keys, id, token_index).expect("one row");
            self.pages.push(KvPage { meta, keys, values });
            self.importance.push(0.0);
        }
    }

    /// Add non-negative score contributions, one per page, in page order.
    pub fn update_importance(&mut self, contributions: &[f64]) -> Result<()> {
        if contributions.len() != self.pages.len() {
            return Err(Error::MisalignedImportance {
                expected: self.pages.len(),
                got: contributions.len(),
            });
        }
        for (imp, c) in self.importance.iter_mut().zip(contributions) {
            *imp += c.max(0.0);
        }
        Ok(())
    }

    /// Drop the least-important page if the budget is exceeded. Sink tokens
    /// and the local window are never candidates.
    pub fn evict_if_over_budget(&mut self) -> Option<u64> {
        let budget = self.budget_pages?;
        if self.pages.len() <= budget {
            return None;
        }
        let victim = self
            .importance
            .iter()
            .enumerate()
            .min_by(|(ia, a), (ib, b)| {
                a.partial_cmp(b)
                    .expect("importance is finite")
                    .then(self.pages[*ia].meta.page_id.cmp(&self.pages[*ib].meta.page_id))
            })
            .map(|(i, _)| i)
            .expect("over budget implies non-empty");
        let evicted = self.pages.remove(victim);
        self.importance.remove(victim);
        Some(evicted.meta.page_id)
    }
}
