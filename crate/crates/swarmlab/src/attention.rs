//! Attention network producing per-constraint CBF parameters.
//!
//! For one drone the network sees the drone's own 13-scalar state block and
//! one 3-vector feature per nearby obstacle (relative position). It computes
//!
//! 1. `h = embed(own)` — a learned linear embedding of the drone state,
//! 2. scaled dot-product attention over obstacle features: keys `K_i = W_k x_i`,
//!    values `V_i = W_v x_i`, query `Q = W_q h`, weights
//!    `alpha_i = softmax(Q . K_i / sqrt(d))`, context `c = sum_i alpha_i V_i`,
//! 3. `theta = head([h; c])` — a feed-forward head with GeLU hidden layers and
//!    a softplus output, so every CBF parameter is non-negative.
//!
//! `theta` has one entry per constraint slot (obstacle slots first, then
//! drone-pair slots). During training it weights the cost advantages in the
//! policy objective and is pulled toward an inverse-clearance supervision
//! target; at evaluation time the shield reads it as class-K slopes.
//!
//! Everything is written against [`ParamSet`] with hand-derived reverse-mode
//! gradients, matching the rest of the network kernel.

use crate::error::{Error, Result};
use crate::nn::{
    glorot_tensor, init_mlp, mlp_backward, mlp_forward, Activation, GradSet, MlpCache, MlpSpec,
    ParamSet, Tensor2,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Architecture of one CBF network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbfSpec {
    /// Length of the drone's own state block (13: p_rel, q, v, omega).
    pub own_dim: usize,
    /// Obstacle feature width (3: relative position).
    pub feat_dim: usize,
    /// Embedding width of `h`.
    pub h_dim: usize,
    /// Key/value/query width `d`.
    pub key_dim: usize,
    /// Hidden sizes of the feed-forward head.
    pub head_hidden: Vec<usize>,
    /// Number of constraint slots `m`.
    pub out_dim: usize,
}

impl CbfSpec {
    pub fn new(h_dim: usize, key_dim: usize, head_hidden: Vec<usize>, out_dim: usize) -> Self {
        Self {
            own_dim: 13,
            feat_dim: 3,
            h_dim,
            key_dim,
            head_hidden,
            out_dim,
        }
    }

    pub fn embed_spec(&self) -> MlpSpec {
        MlpSpec::new("embed", vec![self.own_dim, self.h_dim])
    }

    pub fn head_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.h_dim + self.key_dim];
        sizes.extend_from_slice(&self.head_hidden);
        sizes.push(self.out_dim);
        MlpSpec::new("head", sizes).with_output(Activation::Softplus)
    }
}

/// Initialize all CBF-network parameters: embedding, the three projection
/// matrices, and the head.
pub fn init_cbf(spec: &CbfSpec, rng: &mut impl Rng) -> Result<ParamSet> {
    let mut params = init_mlp(&spec.embed_spec(), rng)?;
    params.push(glorot_tensor("wq", spec.key_dim, spec.h_dim, rng))?;
    params.push(glorot_tensor("wk", spec.key_dim, spec.feat_dim, rng))?;
    params.push(glorot_tensor("wv", spec.key_dim, spec.feat_dim, rng))?;
    crate::nn::append_mlp(&mut params, &spec.head_spec(), rng)?;
    Ok(params)
}

/// Attention weights, context vector, and CBF parameters for one drone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbfOutput {
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Intermediate values of [`attention_forward`] needed by the backward pass.
#[derive(Debug, Clone)]
pub struct AttnCache {
    pub h: Vec<f64>,
    pub feats: Vec<[f64; 3]>,
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
}

/// Full forward cache for [`cbf_forward`] / [`cbf_backward`].
#[derive(Debug, Clone)]
pub struct CbfCache {
    pub embed: MlpCache,
    pub attn: AttnCache,
    pub head: MlpCache,
}

/// Numerically stabilized softmax (max logit subtracted before exponentiation).
pub fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn project(w: &Tensor2, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.rows];
    crate::nn::matvec_into(w, x, &mut out);
    out
}

/// Scaled dot-product attention over obstacle features.
///
/// Empty feature lists yield an empty `alpha` and a zero context vector.
pub fn attention_forward(
    params: &ParamSet,
    spec: &CbfSpec,
    h: &[f64],
    feats: &[[f64; 3]],
) -> Result<(Vec<f64>, Vec<f64>, AttnCache)> {
    if h.len() != spec.h_dim {
        return Err(Error::argument(format!(
            "attention: h length {} != h_dim {}",
            h.len(),
            spec.h_dim
        )));
    }
    for (i, f) in feats.iter().enumerate() {
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric_input(format!(
                "attention: obstacle feature {i} is non-finite"
            )));
        }
    }

    let wq = params.get("wq")?;
    let wk = params.get("wk")?;
    let wv = params.get("wv")?;
    let query = project(wq, h);

    let mut keys = Vec::with_capacity(feats.len());
    let mut values = Vec::with_capacity(feats.len());
    let mut logits = Vec::with_capacity(feats.len());
    let scale = 1.0 / (spec.key_dim as f64).sqrt();
    for f in feats {
        let k = project(wk, f);
        let v = project(wv, f);
        let dot: f64 = query.iter().zip(&k).map(|(a, b)| a * b).sum();
        logits.push(dot * scale);
        keys.push(k);
        values.push(v);
    }

    let alpha = stable_softmax(&logits);
    let mut context = vec![0.0; spec.key_dim];
    for (a, v) in alpha.iter().zip(&values) {
        for (c, vv) in context.iter_mut().zip(v) {
            *c += a * vv;
        }
    }

    let cache = AttnCache {
        h: h.to_vec(),
        feats: feats.to_vec(),
        query,
        keys,
        values,
        alpha: alpha.clone(),
        context: context.clone(),
    };
    Ok((alpha, context, cache))
}

/// Feed-forward head: `theta = softplus(mlp([h; c]))`.
pub fn cbf_head(
    params: &ParamSet,
    spec: &CbfSpec,
    h: &[f64],
    context: &[f64],
) -> Result<(Vec<f64>, MlpCache)> {
    if h.len() != spec.h_dim || context.len() != spec.key_dim {
        return Err(Error::argument(format!(
            "cbf head: got h:{} c:{}, expected {}+{}",
            h.len(),
            context.len(),
            spec.h_dim,
            spec.key_dim
        )));
    }
    let mut input = Vec::with_capacity(spec.h_dim + spec.key_dim);
    input.extend_from_slice(h);
    input.extend_from_slice(context);
    mlp_forward(params, &spec.head_spec(), &input)
}

/// Full CBF network: embedding, attention, head.
pub fn cbf_forward(
    params: &ParamSet,
    spec: &CbfSpec,
    own: &[f64],
    feats: &[[f64; 3]],
) -> Result<(CbfOutput, CbfCache)> {
    let (h, embed_cache) = mlp_forward(params, &spec.embed_spec(), own)?;
    let (alpha, context, attn) = attention_forward(params, spec, &h, feats)?;
    let (theta, head_cache) = cbf_head(params, spec, &h, &context)?;
    Ok((
        CbfOutput {
            alpha,
            context,
            theta,
        },
        CbfCache {
            embed: embed_cache,
            attn,
            head: head_cache,
        },
    ))
}

/// Reverse-mode pass through the attention block alone.
///
/// Takes cotangents for `alpha` and the context vector, accumulates gradients
/// for `wq`/`wk`/`wv` into `grads`, and returns the gradient with respect to
/// `h`. Includes the softmax Jacobian.
pub fn attention_backward(
    params: &ParamSet,
    spec: &CbfSpec,
    cache: &AttnCache,
    grad_alpha: &[f64],
    grad_context: &[f64],
    grads: &mut GradSet,
) -> Result<Vec<f64>> {
    let n = cache.feats.len();
    if grad_alpha.len() != n || grad_context.len() != spec.key_dim {
        return Err(Error::argument(format!(
            "attention backward: cotangent lengths {}x{} do not match cache {}x{}",
            grad_alpha.len(),
            grad_context.len(),
            n,
            spec.key_dim
        )));
    }

    let wq = params.get("wq")?;
    let scale = 1.0 / (spec.key_dim as f64).sqrt();

    // context = sum_i alpha_i V_i
    let mut g_alpha: Vec<f64> = grad_alpha.to_vec();
    for (i, v) in cache.values.iter().enumerate() {
        let dot: f64 = grad_context.iter().zip(v).map(|(a, b)| a * b).sum();
        g_alpha[i] += dot;
        // grad V_i = alpha_i * grad_context -> accumulate into wv
        let gv = grads.get_mut("wv")?;
        for (r, gc) in grad_context.iter().enumerate() {
            let coeff = cache.alpha[i] * gc;
            for (slot, &x) in gv.row_mut(r).iter_mut().zip(&cache.feats[i]) {
                *slot += coeff * x;
            }
        }
    }

    // softmax Jacobian: grad_logit_i = alpha_i * (g_alpha_i - sum_j alpha_j g_alpha_j)
    let weighted: f64 = cache.alpha.iter().zip(&g_alpha).map(|(a, g)| a * g).sum();
    let grad_logits: Vec<f64> = cache
        .alpha
        .iter()
        .zip(&g_alpha)
        .map(|(a, g)| a * (g - weighted))
        .collect();

    // logits_i = scale * Q . K_i
    let mut grad_query = vec![0.0; spec.key_dim];
    for (i, k) in cache.keys.iter().enumerate() {
        let gl = grad_logits[i] * scale;
        for (gq, kv) in grad_query.iter_mut().zip(k) {
            *gq += gl * kv;
        }
        // grad K_i = gl * Q -> accumulate into wk
        let gk = grads.get_mut("wk")?;
        for (r, qv) in cache.query.iter().enumerate() {
            let coeff = gl * qv;
            for (slot, &x) in gk.row_mut(r).iter_mut().zip(&cache.feats[i]) {
                *slot += coeff * x;
            }
        }
    }

    // Q = wq h
    {
        let gq = grads.get_mut("wq")?;
        for (r, &g) in grad_query.iter().enumerate() {
            for (slot, &hv) in gq.row_mut(r).iter_mut().zip(&cache.h) {
                *slot += g * hv;
            }
        }
    }
    let mut grad_h = vec![0.0; spec.h_dim];
    for (r, &g) in grad_query.iter().enumerate() {
        for (gh, &wv) in grad_h.iter_mut().zip(wq.row(r)) {
            *gh += g * wv;
        }
    }
    Ok(grad_h)
}

/// Reverse-mode pass through the full CBF network given `dL/dtheta`.
pub fn cbf_backward(
    params: &ParamSet,
    spec: &CbfSpec,
    cache: &CbfCache,
    grad_theta: &[f64],
    grads: &mut GradSet,
) -> Result<()> {
    // head: softplus + MLP, gradient splits into [grad_h_head, grad_context]
    let grad_input = mlp_backward(params, &spec.head_spec(), &cache.head, grad_theta, grads)?;
    let (grad_h_head, grad_context) = grad_input.split_at(spec.h_dim);

    let grad_alpha = vec![0.0; cache.attn.feats.len()];
    let grad_h_attn =
        attention_backward(params, spec, &cache.attn, &grad_alpha, grad_context, grads)?;

    let grad_h: Vec<f64> = grad_h_head
        .iter()
        .zip(&grad_h_attn)
        .map(|(a, b)| a + b)
        .collect();
    mlp_backward(params, &spec.embed_spec(), &cache.embed, &grad_h, grads)?;
    Ok(())
}

/// Supervision-target construction for the CBF parameters.
///
/// Constraints with small clearance get large targets, saturating at `w_max`;
/// empty slots (infinite clearance) get zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfTargetConfig {
    /// Numerator of the inverse-clearance law.
    pub kappa: f64,
    /// Saturation cap for the target weight.
    pub w_max: f64,
    /// Clearance floor preventing division blow-up.
    pub delta: f64,
    /// Soft safety margin subtracted from the clearance.
    pub r_safe: f64,
}

impl Default for CbfTargetConfig {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            w_max: 10.0,
            delta: 0.01,
            r_safe: 0.3,
        }
    }
}

/// Map per-slot clearances (center distance minus combined radii; `+inf` for
/// empty slots) to target CBF parameters:
/// `min(w_max, kappa / max(clearance - r_safe, delta))`.
pub fn cbf_target(clearances: &[f64], cfg: &CbfTargetConfig) -> Vec<f64> {
    clearances
        .iter()
        .map(|&d| {
            if d.is_infinite() {
                0.0
            } else {
                (cfg.kappa / (d - cfg.r_safe).max(cfg.delta)).min(cfg.w_max)
            }
        })
        .collect()
}

/// Mean over the batch of squared Euclidean distance between predicted and
/// target CBF parameters.
pub fn cbf_loss(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::argument(format!(
            "cbf loss: batch sizes {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        if p.len() != t.len() {
            return Err(Error::argument(format!(
                "cbf loss: sample {i} lengths {} vs {}",
                p.len(),
                t.len()
            )));
        }
        total += p
            .iter()
            .zip(t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / pred.len() as f64)
}
