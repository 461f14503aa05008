//! Head classification and the per-step hybrid attention kernel.
//!
//! Each head is either streaming (fixed sink + local window) or retrieval
//! (sink + local plus a query-dependent top-k page selection). The split is
//! decided offline by a gating parameter per head; here we only load the
//! gate values and threshold them.

use serde::{Deserialize, Serialize};

use super::paged::{relevance_score, select_topk_pages, PagedKvCache};
use super::softmax::{dot, SoftmaxPartial};
use super::{ImportanceMode, SparsityConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    Streaming,
    Retrieval,
}

/// One (layer, head) gate value, as stored in an alpha-profile file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEntry {
    pub layer: usize,
    pub head: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadProfile {
    pub layer: usize,
    pub head: usize,
    pub kind: HeadKind,
    pub alpha: f64,
}

/// Token indices a streaming head attends to: the first `n_sink` tokens plus
/// the trailing `n_local` window, deduplicated where they overlap.
pub fn streaming_mask(seq_len: usize, n_sink: usize, n_local: usize) -> Vec<usize> {
    let sink_end = n_sink.min(seq_len);
    let local_start = seq_len.saturating_sub(n_local).max(sink_end);
    (0..sink_end).chain(local_start..seq_len).collect()
}

/// Convex combination of the two attention paths, `alpha` weighting the full
/// path. Endpoints reproduce the inputs exactly.
pub fn gated_attention(full_out: &[f64], streaming_out: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if full_out.len() != streaming_out.len() {
        return Err(Error::DimensionMismatch {
            expected: full_out.len(),
            got: streaming_out.len(),
        });
    }
    if alpha == 1.0 {
        return Ok(full_out.to_vec());
    }
    if alpha == 0.0 {
        return Ok(streaming_out.to_vec());
    }
    Ok(full_out
        .iter()
        .zip(streaming_out)
        .map(|(f, s)| alpha * f + (1.0 - alpha) * s)
        .collect())
}

/// Median of the gate values; with distinct values this threshold splits an
/// even-sized population exactly in half.
pub fn median_threshold(alphas: &[f64]) -> f64 {
    let mut sorted = alphas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("alpha is finite"));
    let n = sorted.len();
    if n == 0 {
        return 0.5;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Threshold the gate values: retrieval iff `alpha >= threshold`.
pub fn classify_heads(entries: &[AlphaEntry], threshold: f64) -> Result<Vec<HeadProfile>> {
    entries
        .iter()
        .map(|e| {
            if !(0.0..=1.0).contains(&e.alpha) {
                return Err(Error::AlphaOutOfRange(e.alpha));
            }
            Ok(HeadProfile {
                layer: e.layer,
                head: e.head,
                kind: if e.alpha >= threshold {
                    HeadKind::Retrieval
                } else {
                    HeadKind::Streaming
                },
                alpha: e.alpha,
            })
        })
        .collect()
}

/// One decode step of hybrid sparse attention for a single head.
///
/// Streaming heads attend the sink tokens and the local window. Retrieval
/// heads additionally attend the top-k pages ranked by metadata relevance;
/// the selection is recomputed every `share_stride` steps and reused in
/// between. Returns the attention output and the page ids attended this step
/// (empty for streaming heads). Page importance is bumped by each selected
/// page's softmax mass (or clamped relevance score, depending on
/// `cfg.importance`).
pub fn sparse_attention_step(
    cache: &mut PagedKvCache,
    query: &[f64],
    kind: HeadKind,
    cfg: &SparsityConfig,
) -> Result<(Vec<f64>, Vec<u64>)> {
    let dim = cache.head_dim();
    if query.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: query.len(),
        });
    }
    let scale = 1.0 / (dim as f64).sqrt();

    let selection: Vec<u64> = match kind {
        HeadKind::Streaming => Vec::new(),
        HeadKind::Retrieval => {
            let reuse = cache
                .cached_selection
                .as_ref()
                .filter(|_| cache.steps_since_selection < cfg.share_stride)
                .cloned();
            let sel = match reuse {
                Some(sel) => sel,
                None => {
                    let metas = cache.metadata_vec();
                    let fresh = select_topk_pages(query, &metas, cfg.top_k, cfg.relevance)?;
                    cache.cached_selection = Some(fresh.clone());
                    cache.steps_since_selection = 0;
                    fresh
                }
            };
            cache.steps_since_selection += 1;
            // Pages evicted since the selection was made are skipped.
            sel.into_iter().filter(|id| cache.page(*id).is_some()).collect()
        }
    };

    // Gather the attended set. Every head sees sink + local; retrieval heads
    // extend it with the selected pages.
    let (sink_k, sink_v) = cache.sink_kv();
    let mut scores: Vec<f64> = Vec::new();
    let mut values: Vec<&Vec<f64>> = Vec::new();
    let mut page_of: Vec<Option<usize>> = Vec::new();
    for (k, v) in sink_k.iter().zip(sink_v) {
        scores.push(dot(query, k) * scale);
        values.push(v);
        page_of.push(None);
    }
    for (k, v) in cache.local_kv() {
        scores.push(dot(query, k) * scale);
        values.push(v);
        page_of.push(None);
    }
    let mut page_slot = Vec::with_capacity(selection.len());
    for id in &selection {
        let page = cache.page(*id).expect("filtered above");
        let slot = cache
            .pages()
            .iter()
            .position(|p| p.meta.page_id == *id)
            .expect("page present");
        page_slot.push(slot);
        for (k, v) in page.keys.iter().zip(&page.values) {
            scores.push(dot(query, k) * scale);
            values.push(v);
            page_of.push(Some(slot));
        }
    }

    if scores.is_empty() {
        return Ok((vec![0.0; dim], selection));
    }

    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    let mut out = vec![0.0; dim];
    let mut mass = vec![0.0; cache.pages().len()];
    for ((s, v), slot) in scores.iter().zip(&values).zip(&page_of) {
        let p = (s - max).exp();
        denom += p;
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += p * x;
        }
        if let Some(i) = slot {
            mass[*i] += p;
        }
    }
    for o in &mut out {
        *o /= denom;
    }

    if kind == HeadKind::Retrieval && !cache.pages().is_empty() {
        let contributions = match cfg.importance {
            ImportanceMode::AttentionMass => {
                mass.iter().map(|m| m / denom).collect::<Vec<f64>>()
            }
            ImportanceMode::RelevanceScore => {
                let mut c = vec![0.0; cache.pages().len()];
                for (id, slot) in selection.iter().zip(&page_slot) {
                    let meta = &cache.page(*id).expect("present").meta;
                    c[*slot] = relevance_score(query, meta, cfg.relevance)?.max(0.0);
                }
                c
            }
        };
        cache.update_importance(&contributions)?;
    }

    Ok((out, selection))
}

/// A well-formed partial carrying the attended set of a streaming head; used
/// by banks that own only a slice of the tokens.
pub fn absorb_mask_tokens(
    query: &[f64],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    scale: f64,
) -> SoftmaxPartial {
    let dim = query.len();
    let mut p = SoftmaxPartial::identity(dim);
    p.absorb(query, keys, values, scale);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense_attention;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mask_examples() {
        assert_eq!(streaming_mask(10, 2, 3), vec![0, 1, 7, 8, 9]);
        assert_eq!(streaming_mask(4, 3, 3), vec![0, 1, 2, 3]);
        assert!(streaming_mask(0, 5, 5).is_empty());
        assert!(streaming_mask(10, 2, 3).len() <= 5);
    }

    #[test]
    fn gating_endpoints_and_midpoint() {
        let full = vec![2.0, 4.0];
        let streaming = vec![0.0, 0.0];
        assert_eq!(gated_attention(&full, &streaming, 1.0).unwrap(), full);
        assert_eq!(gated_attention(&full, &streaming, 0.0).unwrap(), streaming);
        assert_eq!(gated_attention(&full, &streaming, 0.5).unwrap(), vec![1.0, 2.0]);
        assert!(gated_attention(&full, &streaming, 1.5).is_err());
        assert!(gated_attention(&full, &[1.0], 0.5).is_err());
    }

    #[test]
    fn classification_threshold() {
        let entries: Vec<AlphaEntry> = [1.0, 1.0, 1.0]
            .iter()
            .enumerate()
            .map(|(h, &alpha)| AlphaEntry { layer: 0, head: h, alpha })
            .collect();
        let profiles = classify_heads(&entries, 0.5).unwrap();
        assert!(profiles.iter().all(|p| p.kind == HeadKind::Retrieval));

        let entries = vec![
            AlphaEntry { layer: 0, head: 0, alpha: 0.9 },
            AlphaEntry { layer: 0, head: 1, alpha: 0.1 },
        ];
        let profiles = classify_heads(&entries, 0.5).unwrap();
        assert_eq!(profiles[0].kind, HeadKind::Retrieval);
        assert_eq!(profiles[1].kind, HeadKind::Streaming);
    }

    #[test]
    fn median_split_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let alphas: Vec<f64> = (0..32).map(|_| rng.gen::<f64>()).collect();
        let thr = median_threshold(&alphas);
        let entries: Vec<AlphaEntry> = alphas
            .iter()
            .enumerate()
            .map(|(h, &alpha)| AlphaEntry { layer: 0, head: h, alpha })
            .collect();
        let profiles = classify_heads(&entries, thr).unwrap();
        let streaming = profiles.iter().filter(|p| p.kind == HeadKind::Streaming).count();
        assert_eq!(streaming, 16);
    }

    fn push_random(cache: &mut PagedKvCache, rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut ks = Vec::new();
        let mut vs = Vec::new();
        for _ in 0..n {
            let k: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
            cache.push_token(k.clone(), v.clone());
            ks.push(k);
            vs.push(v);
        }
        (ks, vs)
    }

    #[test]
    fn retrieval_with_unbounded_selection_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let dim = 8;
        let cfg = SparsityConfig {
            page_size: 4,
            n_sink: 2,
            n_local: 3,
            budget_pages: None,
            top_k: usize::MAX,
            share_stride: 1,
            ..SparsityConfig::default()
        };
        let mut cache = PagedKvCache::new(dim, &cfg);
        let (ks, vs) = push_random(&mut cache, &mut rng, 57, dim);
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (out, _) = sparse_attention_step(&mut cache, &q, HeadKind::Retrieval, &cfg).unwrap();
        let want = dense_attention(&q, &ks, &vs, 1.0 / (dim as f64).sqrt());
        for (g, w) in out.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-6);
        }
    }

    #[test]
    fn streaming_covering_mask_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dim = 4;
        let cfg = SparsityConfig {
            page_size: 4,
            n_sink: 10,
            n_local: 10,
            ..SparsityConfig::default()
        };
        let mut cache = PagedKvCache::new(dim, &cfg);
        let (ks, vs) = push_random(&mut cache, &mut rng, 18, dim);
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (out, sel) = sparse_attention_step(&mut cache, &q, HeadKind::Streaming, &cfg).unwrap();
        assert!(sel.is_empty());
        let want = dense_attention(&q, &ks, &vs, 1.0 / (dim as f64).sqrt());
        for (g, w) in out.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-6);
        }
    }

    #[test]
    fn retrieval_without_pages_or_sink_uses_local_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let dim = 4;
        let cfg = SparsityConfig {
            page_size: 4,
            n_sink: 0,
            n_local: 5,
            top_k: 0,
            share_stride: 1,
            ..SparsityConfig::default()
        };
        let mut cache = PagedKvCache::new(dim, &cfg);
        let (ks, vs) = push_random(&mut cache, &mut rng, 21, dim);
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (out, sel) = sparse_attention_step(&mut cache, &q, HeadKind::Retrieval, &cfg).unwrap();
        assert!(sel.is_empty());
        let want = dense_attention(&q, &ks[16..], &vs[16..], 1.0 / (dim as f64).sqrt());
        for (g, w) in out.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-6);
        }
    }

    #[test]
    fn selection_shared_across_nearby_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let dim = 4;
        let cfg = SparsityConfig {
            page_size: 2,
            n_sink: 1,
            n_local: 1,
            top_k: 2,
            share_stride: 3,
            ..SparsityConfig::default()
        };
        let mut cache = PagedKvCache::new(dim, &cfg);
        push_random(&mut cache, &mut rng, 20, dim);
        let q1: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (_, sel1) = sparse_attention_step(&mut cache, &q1, HeadKind::Retrieval, &cfg).unwrap();
        // A very different query still reuses the cached selection.
        let q2: Vec<f64> = q1.iter().map(|x| -x).collect();
        let (_, sel2) = sparse_attention_step(&mut cache, &q2, HeadKind::Retrieval, &cfg).unwrap();
        assert_eq!(sel1, sel2);
        let (_, sel3) = sparse_attention_step(&mut cache, &q2, HeadKind::Retrieval, &cfg).unwrap();
        assert_eq!(sel1, sel3);
        // Fourth step recomputes; with the negated query the ranking flips.
        let (_, sel4) = sparse_attention_step(&mut cache, &q2, HeadKind::Retrieval, &cfg).unwrap();
        assert_ne!(sel1, sel4);
    }
}
