//! Parameterised building blocks on top of the tape.

use rand::Rng;

use crate::autodiff::{ParamStore, Session, Tensor, Var};
use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;
/// Transformer MLP hidden width as a multiple of the model width.
pub const MLP_RATIO: usize = 2;

pub fn init_linear<R: Rng>(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    store.init_normal(&format!("{prefix}.weight"), &[fan_in, fan_out], (1.0 / fan_in as f64).sqrt(), rng);
    store.init_const(&format!("{prefix}.bias"), &[1, fan_out], 0.0);
}

pub fn init_layernorm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.init_const(&format!("{prefix}.gain"), &[dim], 1.0);
    store.init_const(&format!("{prefix}.bias"), &[dim], 0.0);
}

/// `x · W + 1 bᵀ` for `x` of shape `[n, in]`.
pub fn linear(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let w = s.p(&format!("{prefix}.weight"))?;
    let b = s.p(&format!("{prefix}.bias"))?;
    let rows = s.g.value(x).dims2()?.0;
    let y = s.g.matmul(x, w)?;
    let ones = s.constant(Tensor::full(&[rows, 1], 1.0));
    let bias = s.g.matmul(ones, b)?;
    s.g.add(y, bias)
}

pub fn layernorm(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let g = s.p(&format!("{prefix}.gain"))?;
    let b = s.p(&format!("{prefix}.bias"))?;
    s.g.layernorm(x, g, b, LN_EPS)
}

pub fn init_block<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) {
    init_layernorm(store, &format!("{prefix}.ln1"), dim);
    init_linear(store, &format!("{prefix}.attn.qkv"), dim, 3 * dim, rng);
    init_linear(store, &format!("{prefix}.attn.proj"), dim, dim, rng);
    init_layernorm(store, &format!("{prefix}.ln2"), dim);
    init_linear(store, &format!("{prefix}.mlp.fc1"), dim, MLP_RATIO * dim, rng);
    init_linear(store, &format!("{prefix}.mlp.fc2"), MLP_RATIO * dim, dim, rng);
}

/// Multi-head self-attention over the rows of `x`.
pub fn attention(s: &mut Session, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let dim = s.g.value(x).dims2()?.1;
    let dh = dim / heads;
    let qkv = linear(s, &format!("{prefix}.qkv"), x)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = s.g.slice_cols(qkv, h * dh, dh)?;
        let k = s.g.slice_cols(qkv, dim + h * dh, dh)?;
        let v = s.g.slice_cols(qkv, 2 * dim + h * dh, dh)?;
        let kt = s.g.transpose(k)?;
        let scores = s.g.matmul(q, kt)?;
        let scores = s.g.scale(scores, scale)?;
        let attn = s.g.softmax(scores)?;
        outs.push(s.g.matmul(attn, v)?);
    }
    let cat = s.g.concat_cols(&outs)?;
    linear(s, &format!("{prefix}.proj"), cat)
}

/// Pre-norm transformer block.
pub fn block(s: &mut Session, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let h = layernorm(s, &format!("{prefix}.ln1"), x)?;
    let a = attention(s, &format!("{prefix}.attn"), h, heads)?;
    let x = s.g.add(x, a)?;
    let h = layernorm(s, &format!("{prefix}.ln2"), x)?;
    let h = linear(s, &format!("{prefix}.mlp.fc1"), h)?;
    let h = s.g.gelu(h)?;
    let h = linear(s, &format!("{prefix}.mlp.fc2"), h)?;
    s.g.add(x, h)
}
