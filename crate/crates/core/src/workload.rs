//! Deterministic synthetic workloads: model shapes, gate profiles, KV traces.
//!
//! Nothing here touches real weights. Traces come from ChaCha8 streams keyed
//! by `(seed, layer * n_kv_heads + head)`, so any head's stream can be
//! regenerated independently and two runs with one seed are bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::PrecisionBits;
use crate::attention::AlphaEntry;
use crate::error::{Error, Result};

/// Transformer shape parameters the cost model needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub n_layers: usize,
    pub n_kv_heads: usize,
    pub n_q_heads: usize,
    pub head_dim: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    #[serde(default)]
    pub precision: PrecisionBits,
}

impl ModelSpec {
    /// Query heads sharing one KV head.
    pub fn group_size(&self) -> usize {
        self.n_q_heads / self.n_kv_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_layers,
            self.n_kv_heads,
            self.n_q_heads,
            self.head_dim,
            self.hidden_dim,
            self.ffn_dim,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.n_q_heads % self.n_kv_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "{} query heads not divisible by {} KV heads",
                self.n_q_heads, self.n_kv_heads
            )));
        }
        Ok(())
    }

    pub fn load_json(text: &str) -> Result<Self> {
        let model: ModelSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("model spec: {e}")))?;
        model.validate()?;
        Ok(model)
    }
}

/// Published architecture shapes for the models the experiments use.
pub fn builtin_model(name: &str) -> Result<ModelSpec> {
    let spec = match name {
        "llama2-7b" => ModelSpec {
            name: name.to_string(),
            n_layers: 32,
            n_kv_heads: 32,
            n_q_heads: 32,
            head_dim: 128,
            hidden_dim: 4096,
            ffn_dim: 11008,
            precision: PrecisionBits::default(),
        },
        "llama3-8b" => ModelSpec {
            name: name.to_string(),
            n_layers: 32,
            n_kv_heads: 8,
            n_q_heads: 32,
            head_dim: 128,
            hidden_dim: 4096,
            ffn_dim: 14336,
            precision: PrecisionBits::default(),
        },
        "mistral-7b" => ModelSpec {
            name: name.to_string(),
            n_layers: 32,
            n_kv_heads: 8,
            n_q_heads: 32,
            head_dim: 128,
            hidden_dim: 4096,
            ffn_dim: 14336,
            precision: PrecisionBits::default(),
        },
        "vicuna-13b" => ModelSpec {
            name: name.to_string(),
            n_layers: 40,
            n_kv_heads: 40,
            n_q_heads: 40,
            head_dim: 128,
            hidden_dim: 5120,
            ffn_dim: 13824,
            precision: PrecisionBits::default(),
        },
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(spec)
}

fn default_kv_lo() -> i32 {
    -128
}
fn default_kv_hi() -> i32 {
    127
}

/// Trace generation parameters. Same config, same bits out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub seed: u64,
    pub seq_len: usize,
    /// Inclusive uniform range for key/value components.
    #[serde(default = "default_kv_lo")]
    pub kv_lo: i32,
    #[serde(default = "default_kv_hi")]
    pub kv_hi: i32,
}

impl TraceConfig {
    pub fn new(seed: u64, seq_len: usize) -> Self {
        Self { seed, seq_len, kv_lo: -128, kv_hi: 127 }
    }
}

/// Key and value rows for one head, `seq_len` tokens long. Values are
/// integer-valued f64 so the functional kernel stays exact.
pub fn gen_head_trace(
    cfg: &TraceConfig,
    model: &ModelSpec,
    layer: usize,
    head: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = head_rng(cfg.seed, model, layer, head);
    let dim = model.head_dim;
    let mut keys = Vec::with_capacity(cfg.seq_len);
    let mut values = Vec::with_capacity(cfg.seq_len);
    for _ in 0..cfg.seq_len {
        keys.push((0..dim).map(|_| rng.gen_range(cfg.kv_lo..=cfg.kv_hi) as f64).collect());
        values.push((0..dim).map(|_| rng.gen_range(cfg.kv_lo..=cfg.kv_hi) as f64).collect());
    }
    (keys, values)
}

/// Per-step query row for one head, drawn from a stream disjoint from the
/// KV stream of the same head.
pub fn gen_query(cfg: &TraceConfig, model: &ModelSpec, layer: usize, head: usize, step: usize) -> Vec<f64> {
    let mut rng = head_rng(cfg.seed ^ 0x9E37_79B9_7F4A_7C15, model, layer, head);
    rng.set_word_pos((step as u128) * model.head_dim as u128 * 2);
    (0..model.head_dim)
        .map(|_| rng.gen_range(cfg.kv_lo..=cfg.kv_hi) as f64)
        .collect()
}

fn head_rng(seed: u64, model: &ModelSpec, layer: usize, head: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((layer * model.n_kv_heads + head) as u64);
    rng
}

/// Gate values hitting `floor(sparsity * heads)` streaming heads per layer
/// exactly: streaming heads draw from [0, 0.5), retrieval from [0.5, 1.0),
/// so the default 0.5 threshold recovers the split.
pub fn gen_alpha_profile(model: &ModelSpec, target_static_sparsity: f64, seed: u64) -> Result<Vec<AlphaEntry>> {
    if !(0.0..=1.0).contains(&target_static_sparsity) {
        return Err(Error::InvalidConfig(format!(
            "static sparsity {target_static_sparsity} outside [0, 1]"
        )));
    }
    let n = model.n_kv_heads;
    let n_streaming = (target_static_sparsity * n as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(model.n_layers * n);
    for layer in 0..model.n_layers {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| raw[a].partial_cmp(&raw[b]).expect("finite"));
        let mut alpha = vec![0.0; n];
        for (rank, &head) in order.iter().enumerate() {
            alpha[head] = if rank < n_streaming {
                0.499 * raw[head]
            } else {
                0.5 + 0.499 * raw[head]
            };
        }
        for (head, &a) in alpha.iter().enumerate() {
            entries.push(AlphaEntry { layer, head, alpha: a });
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{classify_heads, HeadKind};

    #[test]
    fn builtin_shapes() {
        assert_eq!(builtin_model("llama2-7b").unwrap().n_kv_heads, 32);
        assert_eq!(builtin_model("vicuna-13b").unwrap().n_kv_heads, 40);
        let l3 = builtin_model("llama3-8b").unwrap();
        assert_eq!(l3.n_kv_heads, 8);
        assert_eq!(l3.n_q_heads, 32);
        assert_eq!(l3.group_size(), 4);
        assert!(builtin_model("gpt-5").is_err());
    }

    #[test]
    fn custom_model_json_roundtrip() {
        let text = r#"{
            "name": "tiny", "n_layers": 2, "n_kv_heads": 4, "n_q_heads": 8,
            "head_dim": 16, "hidden_dim": 64, "ffn_dim": 128
        }"#;
        let m = ModelSpec::load_json(text).unwrap();
        assert_eq!(m.group_size(), 2);
        let bad = r#"{
            "name": "bad", "n_layers": 2, "n_kv_heads": 3, "n_q_heads": 8,
            "head_dim": 16, "hidden_dim": 64, "ffn_dim": 128
        }"#;
        assert!(ModelSpec::load_json(bad).is_err());
    }

    #[test]
    fn traces_reproduce_bit_identical() {
        let model = builtin_model("llama3-8b").unwrap();
        let cfg = TraceConfig::new(42, 100);
        let (k1, v1) = gen_head_trace(&cfg, &model, 3, 5);
        let (k2, v2) = gen_head_trace(&cfg, &model, 3, 5);
        assert_eq!(k1, k2);
        assert_eq!(v1, v2);
        let (k3, _) = gen_head_trace(&cfg, &model, 3, 6);
        assert_ne!(k1, k3);
        let empty = gen_head_trace(&TraceConfig::new(42, 0), &model, 0, 0);
        assert!(empty.0.is_empty() && empty.1.is_empty());
    }

    #[test]
    fn trace_histogram_roughly_uniform() {
        let model = builtin_model("llama3-8b").unwrap();
        let cfg = TraceConfig::new(7, 4096);
        let mut counts = [0u64; 256];
        let mut total = 0u64;
        // ~2 * 4096 * 128 samples from one head stream.
        let (keys, values) = gen_head_trace(&cfg, &model, 0, 0);
        for row in keys.iter().chain(values.iter()) {
            for &x in row {
                counts[(x as i64 + 128) as usize] += 1;
                total += 1;
            }
        }
        assert!(total >= 1_000_000);
        let expected = total as f64 / 256.0;
        let mut chi2 = 0.0;
        for &c in &counts {
            let frac_dev = (c as f64 / total as f64 - 1.0 / 256.0).abs();
            assert!(frac_dev < 0.01, "bin fraction off by {frac_dev}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 255 degrees of freedom; a healthy uniform sample sits near 255.
        assert!(chi2 > 120.0 && chi2 < 450.0, "chi2 = {chi2}");
    }

    #[test]
    fn alpha_profile_hits_exact_split() {
        let model = builtin_model("llama2-7b").unwrap();
        for sparsity in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let entries = gen_alpha_profile(&model, sparsity, 11).unwrap();
            let profiles = classify_heads(&entries, 0.5).unwrap();
            let want = (sparsity * model.n_kv_heads as f64).floor() as usize;
            for layer in 0..model.n_layers {
                let streaming = profiles
                    .iter()
                    .filter(|p| p.layer == layer && p.kind == HeadKind::Streaming)
                    .count();
                assert_eq!(streaming, want, "layer {layer} at sparsity {sparsity}");
            }
        }
        assert!(gen_alpha_profile(&model, 1.5, 0).is_err());
    }
}
