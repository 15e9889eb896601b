//! KV-cached inference: the f32 execution path used by the prompted policy.
//!
//! Mirrors the training graph op-for-op (same kernels from `tensor`), but
//! attention reads keys/values straight out of per-layer append-only caches,
//! so each new token costs work proportional to the context length once and
//! never re-encodes history.

use super::{patchify, ModelConfig};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::geom::ActionVec;
use crate::optim::ParamMap;
use crate::tensor::{self, Scalar, Tensor};
use std::path::Path;

const MASK_NEG: f32 = -1e9;

struct LayerKv {
    /// Position-major (pos, heads*head_dim) rows.
    k: Vec<f32>,
    v: Vec<f32>,
}

/// Per-layer key/value buffers; append-only, identical fill across layers.
pub struct KvCache {
    layers: Vec<LayerKv>,
    filled: usize,
    cap: usize,
}

impl KvCache {
    pub fn new(cfg: &ModelConfig) -> Self {
        KvCache {
            layers: (0..cfg.layers)
                .map(|_| LayerKv {
                    k: Vec::with_capacity(cfg.max_context * cfg.dim),
                    v: Vec::with_capacity(cfg.max_context * cfg.dim),
                })
                .collect(),
            filled: 0,
            cap: cfg.max_context,
        }
    }

    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.k.clear();
            l.v.clear();
        }
        self.filled = 0;
    }
}

/// Owned weights + config; the concrete network used by training init,
/// checkpoint IO, and the policy runtime.
pub struct Model {
    pub cfg: ModelConfig,
    pub weights: ParamMap,
}

pub struct StateInput<'a> {
    pub side: &'a [u8],
    pub wrist: &'a [u8],
    pub proprio: [f32; 10],
}

impl Model {
    pub fn new(cfg: ModelConfig, weights: ParamMap) -> Result<Self> {
        cfg.validate()?;
        Ok(Model { cfg, weights })
    }

    /// Load a checkpoint plus its sidecar config.
    pub fn load(ckpt: &Path) -> Result<Self> {
        let weights = checkpoint::load(ckpt)?;
        let kv = super::read_sidecar(ckpt)?;
        let cfg = ModelConfig::from_kv(&kv)?;
        Model::new(cfg, weights)
    }

    fn w(&self, name: &str) -> &Tensor<f32> {
        self.weights.get(name).unwrap_or_else(|| panic!("missing weight '{name}'"))
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .filter(|(k, _)| !k.starts_with("opt.") && !k.starts_with("meta."))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Encode a batch of observations into state tokens, one (dim,) vector
    /// per step. Both cameras run through the shared encoder in one batch.
    pub fn encode_states(&self, inputs: &[StateInput<'_>]) -> Result<Vec<Vec<f32>>> {
        let cfg = &self.cfg;
        let n = inputs.len();
        let np = cfg.num_patches();
        let pd = cfg.patch_dim();
        let dv = cfg.vision_dim;

        // stack side then wrist patches: (2n*np, pd)
        let mut patches = Tensor::zeros(&[2 * n * np, pd]);
        for (i, s) in inputs.iter().enumerate() {
            let p = patchify(s.side, cfg.image_size, cfg.patch);
            patches.data_mut()[i * np * pd..(i + 1) * np * pd].copy_from_slice(p.data());
            let p = patchify(s.wrist, cfg.image_size, cfg.patch);
            patches.data_mut()[(n + i) * np * pd..(n + i + 1) * np * pd].copy_from_slice(p.data());
        }
        let tokens = self.encoder_forward(&patches, 2 * n)?;

        // proprio embedding
        let mut prop = Tensor::zeros(&[n, cfg.proprio_dim]);
        for (i, s) in inputs.iter().enumerate() {
            prop.data_mut()[i * cfg.proprio_dim..(i + 1) * cfg.proprio_dim]
                .copy_from_slice(&s.proprio);
        }
        let h = tensor::add_bias(&tensor::matmul(&prop, self.w("prop.w1"))?, self.w("prop.b1"))?;
        let h = tensor::silu(&h);
        let prop_emb =
            tensor::add_bias(&tensor::matmul(&h, self.w("prop.w2"))?, self.w("prop.b2"))?;

        let pool = |cam: &str, offset: usize| -> Result<Tensor<f32>> {
            // kv set: this camera's tokens plus the proprio embedding
            let mut kvset = Tensor::zeros(&[n * (np + 1), dv]);
            for i in 0..n {
                let src = &tokens.data()[(offset + i) * np * dv..(offset + i + 1) * np * dv];
                kvset.data_mut()[i * (np + 1) * dv..i * (np + 1) * dv + np * dv]
                    .copy_from_slice(src);
                kvset.data_mut()[(i * (np + 1) + np) * dv..(i * (np + 1) + np + 1) * dv]
                    .copy_from_slice(&prop_emb.data()[i * dv..(i + 1) * dv]);
            }
            let k = tensor::matmul(&kvset, self.w(&format!("pool.{cam}.wk")))?
                .reshaped(&[n, np + 1, dv])?;
            let v = tensor::matmul(&kvset, self.w(&format!("pool.{cam}.wv")))?
                .reshaped(&[n, np + 1, dv])?;
            let (out, _) =
                tensor::attn_pool_forward(self.w(&format!("pool.{cam}.queries")), &k, &v)?;
            out.reshaped(&[n, cfg.pool_queries * dv])
        };
        let side = pool("side", 0)?;
        let wrist = pool("wrist", n)?;
        let fused = tensor::concat(&[&side, &wrist, &prop_emb], 1)?;
        let f_s = tensor::add_bias(&tensor::matmul(&fused, self.w("fuse.w"))?, self.w("fuse.b"))?;
        Ok(f_s.data().chunks(cfg.dim).map(|c| c.to_vec()).collect())
    }

    fn encoder_forward(&self, patches: &Tensor<f32>, n_imgs: usize) -> Result<Tensor<f32>> {
        let cfg = &self.cfg;
        let np = cfg.num_patches();
        let dv = cfg.vision_dim;
        let heads = cfg.vision_heads;
        let dh = dv / heads;
        let mut x =
            tensor::add_bias(&tensor::matmul(patches, self.w("vis.patch.w"))?, self.w("vis.patch.b"))?;
        let pos = self.w("vis.pos");
        for (i, row) in x.data_mut().chunks_mut(dv).enumerate() {
            let p = &pos.data()[(i % np) * dv..(i % np + 1) * dv];
            for (a, &b) in row.iter_mut().zip(p) {
                *a += b;
            }
        }
        for l in 0..cfg.vision_layers {
            let name = |s: &str| format!("vis.l{l}.{s}");
            let (xn, _) = tensor::rmsnorm_rows(&x, self.w(&name("attn_norm")), cfg.rmsnorm_eps as f32)?;
            let split = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
                tensor::permute(&t.reshaped(&[n_imgs, np, heads, dh])?, &[0, 2, 1, 3])?
                    .reshaped(&[n_imgs * heads, np, dh])
            };
            let q = split(&tensor::matmul(&xn, self.w(&name("wq")))?)?;
            let k = split(&tensor::matmul(&xn, self.w(&name("wk")))?)?;
            let v = split(&tensor::matmul(&xn, self.w(&name("wv")))?)?;
            let scores = tensor::bmm(&q, &k, true)?;
            let scores = scores.map(|s| s / (dh as f32).sqrt());
            let attn = tensor::softmax_last(&scores);
            let out = tensor::bmm(&attn, &v, false)?;
            let out = tensor::permute(&out.reshaped(&[n_imgs, heads, np, dh])?, &[0, 2, 1, 3])?
                .reshaped(&[n_imgs * np, dv])?;
            let out = tensor::matmul(&out, self.w(&name("wo")))?;
            x = tensor::add(&x, &out)?;
            let (xn, _) = tensor::rmsnorm_rows(&x, self.w(&name("mlp_norm")), cfg.rmsnorm_eps as f32)?;
            let h1 = tensor::silu(&tensor::matmul(&xn, self.w(&name("w1")))?);
            let h3 = tensor::matmul(&xn, self.w(&name("w3")))?;
            let mlp = tensor::matmul(&tensor::mul(&h1, &h3)?, self.w(&name("w2")))?;
            x = tensor::add(&x, &mlp)?;
        }
        x.reshaped(&[n_imgs, np, dv])
    }

    pub fn encode_action(&self, action: &[f32; 10]) -> Result<Vec<f32>> {
        let a = Tensor::from_vec(&[1, 10], action.to_vec())?;
        let h = tensor::add_bias(&tensor::matmul(&a, self.w("act.w1"))?, self.w("act.b1"))?;
        let h = tensor::silu(&h);
        let h = tensor::add_bias(&tensor::matmul(&h, self.w("act.w2"))?, self.w("act.b2"))?;
        let h = tensor::silu(&h);
        let y = tensor::add_bias(&tensor::matmul(&h, self.w("act.w3"))?, self.w("act.b3"))?;
        Ok(y.into_data())
    }

    /// Run new tokens through the causal transformer, appending their
    /// keys/values to the cache; returns final-layer latents for each new
    /// token. Processes only the new tokens: the cost of history is paid once.
    pub fn forward_cached(&self, new_tokens: &[Vec<f32>], cache: &mut KvCache) -> Result<Vec<Vec<f32>>> {
        let cfg = &self.cfg;
        let t_new = new_tokens.len();
        if t_new == 0 {
            return Ok(vec![]);
        }
        let start = cache.filled;
        if start + t_new > cache.cap {
            return Err(Error::ContextOverflow { needed: start + t_new, max: cache.cap });
        }
        let dim = cfg.dim;
        let heads = cfg.heads;
        let dh = cfg.head_dim();
        let len = start + t_new;
        let positions: Vec<usize> = (start..len).collect();

        let mut x = Tensor::zeros(&[t_new, dim]);
        for (i, tok) in new_tokens.iter().enumerate() {
            x.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(tok);
        }

        for l in 0..cfg.layers {
            let name = |s: &str| format!("tf.l{l}.{s}");
            let (xn, _) = tensor::rmsnorm_rows(&x, self.w(&name("attn_norm")), cfg.rmsnorm_eps as f32)?;
            let q = tensor::matmul(&xn, self.w(&name("wq")))?;
            let k = tensor::matmul(&xn, self.w(&name("wk")))?;
            let v = tensor::matmul(&xn, self.w(&name("wv")))?;
            let to_heads = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
                tensor::permute(&t.reshaped(&[t_new, heads, dh])?, &[1, 0, 2])
            };
            let q = tensor::rope(&to_heads(&q)?, &positions, cfg.rope_theta, false)?;
            let k_r = tensor::rope(&to_heads(&k)?, &positions, cfg.rope_theta, false)?;
            // append to the cache in position-major layout
            let k_store = tensor::permute(&k_r, &[1, 0, 2])?;
            let layer = &mut cache.layers[l];
            layer.k.extend_from_slice(k_store.data());
            layer.v.extend_from_slice(v.data());

            // attention against the full cache
            let mut scores: Tensor<f32> = Tensor::zeros(&[heads, t_new, len]);
            for h in 0..heads {
                unsafe {
                    f32::gemm(
                        t_new,
                        dh,
                        len,
                        1.0 / (dh as f32).sqrt(),
                        q.data().as_ptr().add(h * t_new * dh),
                        dh as isize,
                        1,
                        layer.k.as_ptr().add(h * dh),
                        1,
                        (heads * dh) as isize,
                        0.0,
                        scores.data_mut().as_mut_ptr().add(h * t_new * len),
                        len as isize,
                        1,
                    );
                }
            }
            // causal mask inside the new block
            for h in 0..heads {
                for i in 0..t_new {
                    let row = &mut scores.data_mut()
                        [(h * t_new + i) * len + start + i + 1..(h * t_new + i + 1) * len];
                    for s in row {
                        *s = MASK_NEG;
                    }
                }
            }
            let attn = tensor::softmax_last(&scores);
            let mut out: Tensor<f32> = Tensor::zeros(&[heads, t_new, dh]);
            for h in 0..heads {
                unsafe {
                    f32::gemm(
                        t_new,
                        len,
                        dh,
                        1.0,
                        attn.data().as_ptr().add(h * t_new * len),
                        len as isize,
                        1,
                        layer.v.as_ptr().add(h * dh),
                        (heads * dh) as isize,
                        1,
                        0.0,
                        out.data_mut().as_mut_ptr().add(h * t_new * dh),
                        dh as isize,
                        1,
                    );
                }
            }
            let out = tensor::permute(&out, &[1, 0, 2])?.reshaped(&[t_new, dim])?;
            let out = tensor::matmul(&out, self.w(&name("wo")))?;
            x = tensor::add(&x, &out)?;
            let (xn, _) = tensor::rmsnorm_rows(&x, self.w(&name("mlp_norm")), cfg.rmsnorm_eps as f32)?;
            let h1 = tensor::silu(&tensor::matmul(&xn, self.w(&name("w1")))?);
            let h3 = tensor::matmul(&xn, self.w(&name("w3")))?;
            let mlp = tensor::matmul(&tensor::mul(&h1, &h3)?, self.w(&name("w2")))?;
            x = tensor::add(&x, &mlp)?;
        }
        cache.filled = len;
        let (y, _) = tensor::rmsnorm_rows(&x, self.w("tf.out_norm"), cfg.rmsnorm_eps as f32)?;
        y.assert_finite("transformer output")?;
        Ok(y.data().chunks(dim).map(|c| c.to_vec()).collect())
    }

    /// Decode one state-position latent into h chunk actions: gripper
    /// squashed to [0,1], the raw rot6d channels snapped to a valid encoding
    /// through the Gram-Schmidt decode (identity if degenerate).
    pub fn action_head(&self, latent: &[f32]) -> Result<Vec<ActionVec>> {
        let cfg = &self.cfg;
        let x = Tensor::from_vec(&[1, cfg.dim], latent.to_vec())?;
        let h = tensor::add_bias(&tensor::matmul(&x, self.w("head.action.w1"))?, self.w("head.action.b1"))?;
        let h = tensor::silu(&h);
        let y = tensor::add_bias(&tensor::matmul(&h, self.w("head.action.w2"))?, self.w("head.action.b2"))?;
        let mut out = Vec::with_capacity(cfg.chunk_h);
        for c in 0..cfg.chunk_h {
            let row = &y.data()[c * cfg.action_dim..(c + 1) * cfg.action_dim];
            let mut a = [0f64; 10];
            for (i, &v) in row.iter().enumerate() {
                a[i] = v as f64;
            }
            a[9] = tensor::sigmoid_s(row[9]) as f64;
            let r6 = match crate::geom::matrix_from_rot6d(&[a[3], a[4], a[5], a[6], a[7], a[8]]) {
                Ok(m) => crate::geom::rot6d_from_matrix(&m)?,
                Err(_) => {
                    log::debug!("degenerate rot6d from action head, using identity");
                    [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
                }
            };
            a[3..9].copy_from_slice(&r6);
            out.push(ActionVec(a));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::model::forward::{insert_params, transformer_apply};
    use crate::model::init_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::toy();
        cfg.layers = 2;
        cfg.dim = 32;
        cfg.heads = 2;
        cfg.vision_dim = 16;
        cfg.vision_heads = 2;
        cfg.image_size = 8;
        cfg.patch = 4;
        cfg.max_context = 256;
        cfg
    }

    fn random_tokens(cfg: &ModelConfig, t: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| (0..cfg.dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn kv_incremental_matches_full_forward() {
        let cfg = tiny_cfg();
        for draw in 0..3 {
            let weights = init_weights(&cfg, 100 + draw).unwrap();
            let model = Model::new(cfg, weights).unwrap();
            let tokens = random_tokens(&cfg, 50, draw);
            let mut full_cache = KvCache::new(&cfg);
            let full = model.forward_cached(&tokens, &mut full_cache).unwrap();
            let mut inc_cache = KvCache::new(&cfg);
            let mut inc = Vec::new();
            for tok in &tokens {
                inc.extend(model.forward_cached(std::slice::from_ref(tok), &mut inc_cache).unwrap());
            }
            let mut worst = 0f32;
            for (a, b) in full.iter().zip(&inc) {
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).abs());
                }
            }
            assert!(worst < 1e-5, "draw {draw}: max abs diff {worst}");
        }
    }

    #[test]
    fn single_token_equals_full_forward_on_it() {
        let cfg = tiny_cfg();
        let weights = init_weights(&cfg, 3).unwrap();
        let model = Model::new(cfg, weights).unwrap();
        let tokens = random_tokens(&cfg, 1, 9);
        let mut c1 = KvCache::new(&cfg);
        let a = model.forward_cached(&tokens, &mut c1).unwrap();
        let mut c2 = KvCache::new(&cfg);
        let b = model.forward_cached(&tokens, &mut c2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infer_matches_training_graph() {
        let cfg = tiny_cfg();
        let weights = init_weights(&cfg, 17).unwrap();
        let tokens = random_tokens(&cfg, 12, 5);
        // graph path
        let mut g = Graph::<f32>::new();
        let p = insert_params(&mut g, &weights, false);
        let flat: Vec<f32> = tokens.iter().flatten().copied().collect();
        let tok_node = g.constant(Tensor::from_vec(&[12, cfg.dim], flat).unwrap());
        let out = transformer_apply(&mut g, &p, &cfg, tok_node, 0).unwrap();
        let graph_out = g.value(out).clone();
        // inference path
        let model = Model::new(cfg, weights).unwrap();
        let mut cache = KvCache::new(&cfg);
        let inf = model.forward_cached(&tokens, &mut cache).unwrap();
        let mut worst = 0f32;
        for (i, row) in inf.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                worst = worst.max((v - graph_out.data()[i * cfg.dim + j]).abs());
            }
        }
        assert!(worst < 1e-5, "graph vs infer diff {worst}");
    }

    #[test]
    fn context_overflow_rejected() {
        let cfg = tiny_cfg();
        let weights = init_weights(&cfg, 3).unwrap();
        let model = Model::new(cfg, weights).unwrap();
        let tokens = random_tokens(&cfg, cfg.max_context + 1, 0);
        let mut cache = KvCache::new(&cfg);
        assert!(matches!(
            model.forward_cached(&tokens, &mut cache),
            Err(Error::ContextOverflow { .. })
        ));
    }

    #[test]
    fn encode_states_deterministic_and_sensitive_to_wrist() {
        let cfg = tiny_cfg();
        let weights = init_weights(&cfg, 23).unwrap();
        let model = Model::new(cfg, weights).unwrap();
        let img = vec![100u8; cfg.image_size * cfg.image_size * 3];
        let mut img2 = img.clone();
        img2[0] = 250;
        let s = StateInput { side: &img, wrist: &img, proprio: [0.1; 10] };
        let a = model.encode_states(&[s]).unwrap();
        let s = StateInput { side: &img, wrist: &img, proprio: [0.1; 10] };
        let b = model.encode_states(&[s]).unwrap();
        assert_eq!(a, b, "state encoding must be deterministic");
        let s = StateInput { side: &img, wrist: &img2, proprio: [0.1; 10] };
        let c = model.encode_states(&[s]).unwrap();
        assert_ne!(a, c, "changing the wrist image must change the state token");
    }

    #[test]
    fn action_head_gripper_in_unit_interval() {
        let cfg = tiny_cfg();
        let weights = init_weights(&cfg, 29).unwrap();
        let model = Model::new(cfg, weights).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let latent: Vec<f32> = (0..cfg.dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let chunk = model.action_head(&latent).unwrap();
            assert_eq!(chunk.len(), cfg.chunk_h);
            for a in &chunk {
                assert!((0.0..=1.0).contains(&a.gripper()));
                assert!(a.0.iter().all(|v| v.is_finite()));
            }
        }
    }
}
