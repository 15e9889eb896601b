//! The policy network: vision encoder, attention-pooled state tokens, action
//! tokens, a Llama2-style causal transformer (pre-norm RMSNorm, rotary
//! embeddings, SwiGLU), and chunked action decoding.
//!
//! `forward` builds the training graph (generic over f32/f64 for gradient
//! checks); `infer` is the weight-borrowing KV-cached execution path.

mod forward;
mod infer;

pub use forward::{
    model_fd_check,
    build_sequence_loss, encode_sequence_tokens, insert_params, transformer_apply, BuiltLoss,
    ParamNodes, SeqItem,
};
pub use infer::{KvCache, Model, StateInput};

use crate::error::{Error, Result};
use crate::optim::ParamMap;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_expansion: usize,
    pub patch: usize,
    pub image_size: usize,
    pub pool_queries: usize,
    pub chunk_h: usize,
    pub cameras: usize,
    pub action_dim: usize,
    pub proprio_dim: usize,
    pub vision_dim: usize,
    pub vision_layers: usize,
    pub vision_heads: usize,
    pub max_context: usize,
    pub rope_theta: f64,
    pub rmsnorm_eps: f64,
    pub freeze_vision: bool,
}

impl ModelConfig {
    /// Acceptance-scale preset: 4 layers, latent dim 128.
    pub fn toy() -> Self {
        ModelConfig {
            layers: 4,
            dim: 128,
            heads: 4,
            mlp_expansion: 4,
            patch: 4,
            image_size: 24,
            pool_queries: 4,
            chunk_h: 16,
            cameras: 2,
            action_dim: 10,
            proprio_dim: 10,
            vision_dim: 32,
            vision_layers: 2,
            vision_heads: 2,
            max_context: 1024,
            rope_theta: 10000.0,
            rmsnorm_eps: 1e-5,
            freeze_vision: false,
        }
    }

    /// Reference preset: 12 layers, latent dim 768.
    pub fn base() -> Self {
        ModelConfig {
            layers: 12,
            dim: 768,
            heads: 12,
            vision_dim: 96,
            vision_layers: 2,
            vision_heads: 4,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.vision_dim % self.vision_heads != 0 {
            return bad(format!(
                "vision_dim {} not divisible by vision_heads {}",
                self.vision_dim, self.vision_heads
            ));
        }
        if self.image_size % self.patch != 0 {
            return bad(format!("image {} not divisible by patch {}", self.image_size, self.patch));
        }
        if (self.dim / self.heads) % 2 != 0 {
            return bad("head dim must be even for rotary embeddings".to_string());
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.patches_per_side() * self.patches_per_side()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden_dim(&self) -> usize {
        swiglu_hidden(self.dim, self.mlp_expansion)
    }

    pub fn vision_hidden_dim(&self) -> usize {
        swiglu_hidden(self.vision_dim, self.mlp_expansion)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "base" => Ok(Self::base()),
            _ => Err(Error::Config(format!("unknown model preset '{name}'"))),
        }
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("layers".into(), self.layers.to_string()),
            ("dim".into(), self.dim.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("mlp_expansion".into(), self.mlp_expansion.to_string()),
            ("patch".into(), self.patch.to_string()),
            ("image_size".into(), self.image_size.to_string()),
            ("pool_queries".into(), self.pool_queries.to_string()),
            ("chunk_h".into(), self.chunk_h.to_string()),
            ("cameras".into(), self.cameras.to_string()),
            ("action_dim".into(), self.action_dim.to_string()),
            ("proprio_dim".into(), self.proprio_dim.to_string()),
            ("vision_dim".into(), self.vision_dim.to_string()),
            ("vision_layers".into(), self.vision_layers.to_string()),
            ("vision_heads".into(), self.vision_heads.to_string()),
            ("max_context".into(), self.max_context.to_string()),
            ("rope_theta".into(), self.rope_theta.to_string()),
            ("rmsnorm_eps".into(), self.rmsnorm_eps.to_string()),
            ("freeze_vision".into(), self.freeze_vision.to_string()),
        ];
        kv.sort();
        kv
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::toy();
        let get = |k: &str| -> Result<&String> {
            kv.get(k).ok_or_else(|| Error::Config(format!("sidecar missing key '{k}'")))
        };
        macro_rules! parse {
            ($field:ident, $key:expr) => {
                cfg.$field = get($key)?
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value for {}", $key)))?;
            };
        }
        parse!(layers, "layers");
        parse!(dim, "dim");
        parse!(heads, "heads");
        parse!(mlp_expansion, "mlp_expansion");
        parse!(patch, "patch");
        parse!(image_size, "image_size");
        parse!(pool_queries, "pool_queries");
        parse!(chunk_h, "chunk_h");
        parse!(cameras, "cameras");
        parse!(action_dim, "action_dim");
        parse!(proprio_dim, "proprio_dim");
        parse!(vision_dim, "vision_dim");
        parse!(vision_layers, "vision_layers");
        parse!(vision_heads, "vision_heads");
        parse!(max_context, "max_context");
        parse!(rope_theta, "rope_theta");
        parse!(rmsnorm_eps, "rmsnorm_eps");
        parse!(freeze_vision, "freeze_vision");
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Llama-style SwiGLU hidden width: 2/3 of expansion*dim, rounded up to 8.
pub fn swiglu_hidden(dim: usize, expansion: usize) -> usize {
    let raw = 2 * expansion * dim / 3;
    raw.div_ceil(8) * 8
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<f32> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}

/// Fresh parameter set: fan-in-scaled normal matrices (std = 1/sqrt(fan_in)),
/// zero biases, unit norms. Embedding-like tables use a fixed small std.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> Result<ParamMap> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ParamMap::new();
    let dv = cfg.vision_dim;
    let hv = cfg.vision_hidden_dim();
    let d = cfg.dim;
    let h = cfg.hidden_dim();
    let nq = cfg.pool_queries;

    fn mat(w: &mut ParamMap, rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) {
        let std = 1.0 / (shape[0] as f64).sqrt();
        w.insert(name.to_string(), normal_tensor(rng, shape, std));
    }
    fn zeros(w: &mut ParamMap, name: &str, shape: &[usize]) {
        w.insert(name.to_string(), Tensor::zeros(shape));
    }
    fn ones(w: &mut ParamMap, name: &str, shape: &[usize]) {
        w.insert(name.to_string(), Tensor::filled(shape, 1.0));
    }
    let rng = &mut rng;

    mat(&mut w, rng, "vis.patch.w", &[cfg.patch_dim(), dv]);
    zeros(&mut w, "vis.patch.b", &[dv]);
    w.insert("vis.pos".to_string(), normal_tensor(rng, &[cfg.num_patches(), dv], 0.2));
    for l in 0..cfg.vision_layers {
        let p = format!("vis.l{l}");
        ones(&mut w, &format!("{p}.attn_norm"), &[dv]);
        for n in ["wq", "wk", "wv", "wo"] {
            mat(&mut w, rng, &format!("{p}.{n}"), &[dv, dv]);
        }
        ones(&mut w, &format!("{p}.mlp_norm"), &[dv]);
        mat(&mut w, rng, &format!("{p}.w1"), &[dv, hv]);
        mat(&mut w, rng, &format!("{p}.w3"), &[dv, hv]);
        mat(&mut w, rng, &format!("{p}.w2"), &[hv, dv]);
    }
    for cam in ["side", "wrist"] {
        w.insert(
            format!("pool.{cam}.queries"),
            normal_tensor(rng, &[nq, dv], 1.0 / (dv as f64).sqrt()),
        );
        mat(&mut w, rng, &format!("pool.{cam}.wk"), &[dv, dv]);
        mat(&mut w, rng, &format!("pool.{cam}.wv"), &[dv, dv]);
    }
    mat(&mut w, rng, "prop.w1", &[cfg.proprio_dim, dv]);
    zeros(&mut w, "prop.b1", &[dv]);
    mat(&mut w, rng, "prop.w2", &[dv, dv]);
    zeros(&mut w, "prop.b2", &[dv]);
    mat(&mut w, rng, "fuse.w", &[(cfg.cameras * nq + 1) * dv, d]);
    zeros(&mut w, "fuse.b", &[d]);
    mat(&mut w, rng, "act.w1", &[cfg.action_dim, d]);
    zeros(&mut w, "act.b1", &[d]);
    mat(&mut w, rng, "act.w2", &[d, d]);
    zeros(&mut w, "act.b2", &[d]);
    mat(&mut w, rng, "act.w3", &[d, d]);
    zeros(&mut w, "act.b3", &[d]);
    for l in 0..cfg.layers {
        let p = format!("tf.l{l}");
        ones(&mut w, &format!("{p}.attn_norm"), &[d]);
        for n in ["wq", "wk", "wv", "wo"] {
            mat(&mut w, rng, &format!("{p}.{n}"), &[d, d]);
        }
        ones(&mut w, &format!("{p}.mlp_norm"), &[d]);
        mat(&mut w, rng, &format!("{p}.w1"), &[d, h]);
        mat(&mut w, rng, &format!("{p}.w3"), &[d, h]);
        mat(&mut w, rng, &format!("{p}.w2"), &[h, d]);
    }
    ones(&mut w, "tf.out_norm", &[d]);
    mat(&mut w, rng, "head.action.w1", &[d, 2 * d]);
    zeros(&mut w, "head.action.b1", &[2 * d]);
    mat(&mut w, rng, "head.action.w2", &[2 * d, cfg.chunk_h * cfg.action_dim]);
    zeros(&mut w, "head.action.b2", &[cfg.chunk_h * cfg.action_dim]);
    mat(&mut w, rng, "head.state.w1", &[d, d]);
    zeros(&mut w, "head.state.b1", &[d]);
    mat(&mut w, rng, "head.state.w2", &[d, cfg.proprio_dim]);
    zeros(&mut w, "head.state.b2", &[cfg.proprio_dim]);
    Ok(w)
}

/// Patch grid of a HxWx3 u8 image, normalized to [-0.5, 0.5], row-major
/// (patch, patch_dim).
pub fn patchify(img: &[u8], image_size: usize, patch: usize) -> Tensor<f32> {
    let per_side = image_size / patch;
    let pd = patch * patch * 3;
    let mut out = Tensor::zeros(&[per_side * per_side, pd]);
    let data = out.data_mut();
    for pr in 0..per_side {
        for pc in 0..per_side {
            let p = pr * per_side + pc;
            for r in 0..patch {
                for c in 0..patch {
                    let src = ((pr * patch + r) * image_size + pc * patch + c) * 3;
                    let dst = p * pd + (r * patch + c) * 3;
                    for ch in 0..3 {
                        data[dst + ch] = img[src + ch] as f32 / 255.0 - 0.5;
                    }
                }
            }
        }
    }
    out
}

/// 16-byte configuration fingerprint stored inside the checkpoint (as a
/// float-valued meta tensor) and echoed in the sidecar.
pub fn config_hash(cfg: &ModelConfig, extra: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in cfg.to_kv().iter().chain(extra) {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash_tensor(hash_hex: &str) -> Tensor<f32> {
    let bytes: Vec<f32> = (0..16)
        .map(|i| u8::from_str_radix(&hash_hex[2 * i..2 * i + 2], 16).unwrap_or(0) as f32)
        .collect();
    Tensor::from_vec(&[16], bytes).expect("16 bytes")
}

/// Sidecar `<ckpt>.cfg` with key=value lines: model config plus training
/// hyperparameters plus the config hash.
pub fn write_sidecar(ckpt_path: &Path, cfg: &ModelConfig, extra: &[(String, String)]) -> Result<()> {
    let path = sidecar_path(ckpt_path);
    let mut lines: Vec<String> =
        cfg.to_kv().iter().chain(extra).map(|(k, v)| format!("{k}={v}")).collect();
    lines.push(format!("config_hash={}", config_hash(cfg, extra)));
    lines.sort();
    std::fs::write(&path, lines.join("\n") + "\n")
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_sidecar(ckpt_path: &Path) -> Result<BTreeMap<String, String>> {
    let path = sidecar_path(ckpt_path);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path.display().to_string(), format!("bad line '{line}'")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

pub fn sidecar_path(ckpt_path: &Path) -> std::path::PathBuf {
    let mut s = ckpt_path.as_os_str().to_os_string();
    s.push(".cfg");
    std::path::PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        assert!(ModelConfig::toy().validate().is_ok());
        assert!(ModelConfig::base().validate().is_ok());
        assert_eq!(ModelConfig::toy().num_patches(), 36);
    }

    #[test]
    fn invalid_head_split_rejected() {
        let mut cfg = ModelConfig::toy();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = ModelConfig::toy();
        let kv: BTreeMap<String, String> = cfg.to_kv().into_iter().collect();
        assert_eq!(ModelConfig::from_kv(&kv).unwrap(), cfg);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::toy();
        let a = init_weights(&cfg, 5).unwrap();
        let b = init_weights(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = init_weights(&cfg, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn patchify_extracts_blocks() {
        // 8x8 image, patch 4: patch 1 holds columns 4..8
        let mut img = vec![0u8; 8 * 8 * 3];
        for r in 0..8 {
            for c in 4..8 {
                img[(r * 8 + c) * 3] = 255;
            }
        }
        let p = patchify(&img, 8, 4);
        assert_eq!(p.shape(), &[4, 48]);
        // patch 0: all zeros -> -0.5 on red channel
        assert!((p.data()[0] + 0.5).abs() < 1e-6);
        // patch 1: red channel 255 -> +0.5
        assert!((p.data()[48] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn config_hash_changes_with_extras() {
        let cfg = ModelConfig::toy();
        let a = config_hash(&cfg, &[("loss_on_prompt".into(), "false".into())]);
        let b = config_hash(&cfg, &[("loss_on_prompt".into(), "true".into())]);
        assert_ne!(a, b);
        assert_eq!(a.len(), 32);
    }
}
