//! Hybrid static/dynamic sparse attention kernel.
//!
//! This module is the functional reference: numerically exact (f64) and
//! deliberately small-scale. The simulator reuses its token-count behavior
//! but never its numerics, so the kernel doubles as the correctness oracle
//! for everything the cost model claims about attended sets.

pub mod hybrid;
pub mod paged;
pub mod softmax;

pub use hybrid::{
    classify_heads, gated_attention, median_threshold, sparse_attention_step, streaming_mask,
    AlphaEntry, HeadKind, HeadProfile,
};
pub use paged::{relevance_score, select_topk_pages, KvPage, PageMetadata, PagedKvCache};
pub use softmax::{merge_partials, SoftmaxPartial};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How page relevance is computed from the box metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceMode {
    /// Per-dimension max of `q_d * tau_min_d` and `q_d * tau_max_d`, summed.
    /// This is a provable upper bound on any in-page dot product.
    #[default]
    ElementwiseMaxSum,
    /// Max of the two full dot products. Cheaper, not a bound.
    ScalarDotMax,
}

/// What accumulates into a page's importance score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    /// Softmax mass the page received this step (bounded, scale-free).
    #[default]
    AttentionMass,
    /// Clamped relevance score of the page when selected.
    RelevanceScore,
}

fn default_page_size() -> usize {
    32
}
fn default_n_sink() -> usize {
    128
}
fn default_n_local() -> usize {
    512
}
// 128 sink + 512 local + 108 pages x 32 tokens = 4096 attended tokens
// per retrieval head.
fn default_top_k() -> usize {
    108
}
fn default_share_stride() -> usize {
    4
}

/// Sparse-attention shape knobs, shared by the kernel and the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityConfig {
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(default = "default_n_sink")]
    pub n_sink: usize,
    #[serde(default = "default_n_local")]
    pub n_local: usize,
    /// Maximum pages retained per head; `null` disables eviction.
    #[serde(default)]
    pub budget_pages: Option<usize>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Decode steps sharing one page selection.
    #[serde(default = "default_share_stride")]
    pub share_stride: usize,
    #[serde(default)]
    pub relevance: RelevanceMode,
    #[serde(default)]
    pub importance: ImportanceMode,
    /// Sink + leading-local tokens resident in logic-die SRAM. They still
    /// occupy datapath cycles but cost no stacked-memory energy. `null`
    /// means `n_sink + 64`.
    #[serde(default)]
    pub logic_resident_local: Option<usize>,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are total")
    }
}

impl SparsityConfig {
    /// Tokens a retrieval head attends once the cache is warm.
    pub fn selection_length(&self) -> usize {
        self.n_sink + self.n_local + self.top_k * self.page_size
    }

    pub fn resident_tokens(&self) -> usize {
        self.logic_resident_local.unwrap_or(self.n_sink + 64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.page_size == 0 {
            return Err(Error::InvalidConfig("page_size must be positive".into()));
        }
        if self.share_stride == 0 {
            return Err(Error::InvalidConfig("share_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn load_json(text: &str) -> Result<Self> {
        let cfg: SparsityConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("sparsity config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_hit_the_4k_selection_length() {
        let cfg = SparsityConfig::default();
        assert_eq!(cfg.page_size, 32);
        assert_eq!(cfg.selection_length(), 4096);
        assert_eq!(cfg.resident_tokens(), 192);
    }

    #[test]
    fn json_roundtrip_with_partial_fields() {
        let cfg = SparsityConfig::load_json(r#"{"page_size": 16, "top_k": 4}"#).unwrap();
        assert_eq!(cfg.page_size, 16);
        assert_eq!(cfg.top_k, 4);
        assert_eq!(cfg.n_sink, 128);
        assert!(SparsityConfig::load_json(r#"{"page_size": 0}"#).is_err());
    }
}
