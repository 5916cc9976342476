//! One transformer block applied window by window: pre-norm multi-head
//! attention with rotary positions, then a pre-norm feed-forward layer.

use crate::error::{HexstError, Result};
use crate::model::params::{Init, ModelParams, ParamLayout};
use crate::numerics::{dot, gelu, gelu_grad, layer_norm_backward, layer_norm_forward, LayerNormCache, Mask, Tensor};
use crate::rope::PositionalEncoding;
use crate::windowing::SlotPosition;

/// Rows attending to each other, plus every row's position inside its group.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGroups {
    pub windows: Vec<Vec<usize>>,
    pub positions: Vec<SlotPosition>,
}

impl AttentionGroups {
    /// A single group over all rows.
    pub fn global(positions: Vec<SlotPosition>) -> Self {
        AttentionGroups {
            windows: vec![(0..positions.len()).collect()],
            positions,
        }
    }
}

const BLOCK_TENSORS: [&str; 16] = [
    "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo",
    "attn.bo", "ln2.g", "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
];

pub fn push_block_params(layout: &mut ParamLayout, prefix: &str, dim: usize, hidden: usize) {
    for name in BLOCK_TENSORS {
        let (shape, init) = match name {
            "ln1.g" | "ln2.g" => (vec![dim], Init::Ones),
            "ffn.w1" => (vec![dim, hidden], Init::Uniform),
            "ffn.b1" => (vec![hidden], Init::Zeros),
            "ffn.w2" => (vec![hidden, dim], Init::Uniform),
            n if n.contains(".w") => (vec![dim, dim], Init::Uniform),
            _ => (vec![dim], Init::Zeros),
        };
        layout.push(format!("{prefix}{name}"), &shape, init);
    }
}

#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Tensor,
    pub bq: Vec<f64>,
    pub wk: Tensor,
    pub bk: Vec<f64>,
    pub wv: Tensor,
    pub bv: Vec<f64>,
    pub wo: Tensor,
    pub bo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Tensor,
    pub b1: Vec<f64>,
    pub w2: Tensor,
    pub b2: Vec<f64>,
}

impl BlockWeights {
    pub fn from_params(p: &ModelParams, prefix: &str) -> Self {
        let v = |n: &str| p.get(&format!("{prefix}{n}")).to_vec();
        let t = |n: &str| p.tensor(&format!("{prefix}{n}"));
        BlockWeights {
            ln1_g: v("ln1.g"),
            ln1_b: v("ln1.b"),
            wq: t("attn.wq"),
            bq: v("attn.bq"),
            wk: t("attn.wk"),
            bk: v("attn.bk"),
            wv: t("attn.wv"),
            bv: v("attn.bv"),
            wo: t("attn.wo"),
            bo: v("attn.bo"),
            ln2_g: v("ln2.g"),
            ln2_b: v("ln2.b"),
            w1: t("ffn.w1"),
            b1: v("ffn.b1"),
            w2: t("ffn.w2"),
            b2: v("ffn.b2"),
        }
    }
}

/// Activations of one block kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    a: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per window: heads × n × n attention weights.
    probs: Vec<Vec<f64>>,
    o: Tensor,
    ln2: LayerNormCache,
    c: Tensor,
    u: Tensor,
    act: Tensor,
}

impl BlockCache {
    /// Per window, heads × n × n attention weights.
    pub fn attention_weights(&self) -> &[Vec<f64>] {
        &self.probs
    }
}

fn rotate_rows(t: &mut Tensor, positions: &[SlotPosition], heads: usize, pe: &dyn PositionalEncoding, inverse: bool) {
    let dh = t.cols() / heads;
    for (i, pos) in positions.iter().enumerate() {
        let row = t.row_mut(i);
        for h in 0..heads {
            pe.rotate(&mut row[h * dh..(h + 1) * dh], pos, inverse);
        }
    }
}

/// Softmax attention inside each group; `q` and `k` are already rotated.
/// Returns the concatenated head outputs and the attention weights.
pub fn window_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    groups: &AttentionGroups,
    heads: usize,
) -> (Tensor, Vec<Vec<f64>>) {
    let dim = q.cols();
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut o = Tensor::zeros(&[q.rows(), dim]);
    let mut probs = Vec::with_capacity(groups.windows.len());
    for members in &groups.windows {
        let n = members.len();
        let mut p = vec![0.0; heads * n * n];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for (a, &i) in members.iter().enumerate() {
                let qi = &q.row(i)[cols.clone()];
                let row = &mut p[(h * n + a) * n..(h * n + a + 1) * n];
                for (b, &j) in members.iter().enumerate() {
                    row[b] = dot(qi, &k.row(j)[cols.clone()]) * scale;
                }
                crate::numerics::softmax_in_place(row);
                let out = &mut o.row_mut(i)[cols.clone()];
                for (b, &j) in members.iter().enumerate() {
                    let w = row[b];
                    for (ov, vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *ov += w * vv;
                    }
                }
            }
        }
        probs.push(p);
    }
    (o, probs)
}

fn window_attention_backward(
    d_o: &Tensor,
    cache: &BlockCache,
    groups: &AttentionGroups,
    heads: usize,
) -> (Tensor, Tensor, Tensor) {
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let dim = q.cols();
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Tensor::zeros(q.shape());
    let mut dk = Tensor::zeros(k.shape());
    let mut dv = Tensor::zeros(v.shape());
    for (members, p) in groups.windows.iter().zip(&cache.probs) {
        let n = members.len();
        let mut ds = vec![0.0; n];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for (a, &i) in members.iter().enumerate() {
                let prow = &p[(h * n + a) * n..(h * n + a + 1) * n];
                let doi = &d_o.row(i)[cols.clone()];
                let mut weighted = 0.0;
                for (b, &j) in members.iter().enumerate() {
                    ds[b] = dot(doi, &v.row(j)[cols.clone()]);
                    weighted += prow[b] * ds[b];
                    let dvj = &mut dv.row_mut(j)[cols.clone()];
                    for (g, x) in dvj.iter_mut().zip(doi) {
                        *g += prow[b] * x;
                    }
                }
                for (b, &j) in members.iter().enumerate() {
                    let s = prow[b] * (ds[b] - weighted) * scale;
                    if s == 0.0 {
                        continue;
                    }
                    for (g, x) in dq.row_mut(i)[cols.clone()].iter_mut().zip(&k.row(j)[cols.clone()]) {
                        *g += s * x;
                    }
                    for (g, x) in dk.row_mut(j)[cols.clone()].iter_mut().zip(&q.row(i)[cols.clone()]) {
                        *g += s * x;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

fn affine(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    let mut y = x.matmul(w)?;
    y.add_row_vector(b);
    Ok(y)
}

pub fn block_forward(
    x: &Tensor,
    groups: &AttentionGroups,
    w: &BlockWeights,
    pe: &dyn PositionalEncoding,
    heads: usize,
    ln_eps: f64,
) -> Result<(Tensor, BlockCache)> {
    if groups.positions.len() != x.rows() {
        return Err(HexstError::Structural(format!(
            "{} positions for {} rows",
            groups.positions.len(),
            x.rows()
        )));
    }
    let (a, ln1) = layer_norm_forward(x, &w.ln1_g, &w.ln1_b, ln_eps)?;
    let mut q = affine(&a, &w.wq, &w.bq)?;
    let mut k = affine(&a, &w.wk, &w.bk)?;
    let v = affine(&a, &w.wv, &w.bv)?;
    rotate_rows(&mut q, &groups.positions, heads, pe, false);
    rotate_rows(&mut k, &groups.positions, heads, pe, false);
    let (o, probs) = window_attention(&q, &k, &v, groups, heads);
    let x1 = x.add(&affine(&o, &w.wo, &w.bo)?);
    let (c, ln2) = layer_norm_forward(&x1, &w.ln2_g, &w.ln2_b, ln_eps)?;
    let u = affine(&c, &w.w1, &w.b1)?;
    let act = u.map(gelu);
    let out = x1.add(&affine(&act, &w.w2, &w.b2)?);
    let cache = BlockCache {
        ln1,
        a,
        q,
        k,
        v,
        probs,
        o,
        ln2,
        c,
        u,
        act,
    };
    Ok((out, cache))
}

/// Accumulates parameter gradients under `prefix` and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn block_backward(
    d_out: &Tensor,
    cache: &BlockCache,
    groups: &AttentionGroups,
    w: &BlockWeights,
    pe: &dyn PositionalEncoding,
    heads: usize,
    grads: &mut ModelParams,
    prefix: &str,
) -> Result<Tensor> {
    let mut acc = |name: &str, delta: &[f64]| grads.accumulate(&format!("{prefix}{name}"), delta);

    // feed-forward branch
    acc("ffn.w2", cache.act.matmul_tn(d_out)?.data());
    acc("ffn.b2", &d_out.sum_rows());
    let d_act = d_out.matmul_nt(&w.w2)?;
    let mut d_u = d_act;
    for (g, &u) in d_u.data_mut().iter_mut().zip(cache.u.data()) {
        *g *= gelu_grad(u);
    }
    acc("ffn.w1", cache.c.matmul_tn(&d_u)?.data());
    acc("ffn.b1", &d_u.sum_rows());
    let d_c = d_u.matmul_nt(&w.w1)?;
    let (d_x1_ln, d_g2, d_b2) = layer_norm_backward(&d_c, &cache.ln2, &w.ln2_g);
    acc("ln2.g", &d_g2);
    acc("ln2.b", &d_b2);
    let d_x1 = d_out.add(&d_x1_ln);

    // attention branch
    acc("attn.wo", cache.o.matmul_tn(&d_x1)?.data());
    acc("attn.bo", &d_x1.sum_rows());
    let d_o = d_x1.matmul_nt(&w.wo)?;
    let (mut dq, mut dk, dv) = window_attention_backward(&d_o, cache, groups, heads);
    rotate_rows(&mut dq, &groups.positions, heads, pe, true);
    rotate_rows(&mut dk, &groups.positions, heads, pe, true);
    acc("attn.wq", cache.a.matmul_tn(&dq)?.data());
    acc("attn.bq", &dq.sum_rows());
    acc("attn.wk", cache.a.matmul_tn(&dk)?.data());
    acc("attn.bk", &dk.sum_rows());
    acc("attn.wv", cache.a.matmul_tn(&dv)?.data());
    acc("attn.bv", &dv.sum_rows());
    let mut d_a = dq.matmul_nt(&w.wq)?;
    d_a.add_assign(&dk.matmul_nt(&w.wk)?);
    d_a.add_assign(&dv.matmul_nt(&w.wv)?);
    let (d_x_ln, d_g1, d_b1) = layer_norm_backward(&d_a, &cache.ln1, &w.ln1_g);
    acc("ln1.g", &d_g1);
    acc("ln1.b", &d_b1);
    Ok(d_x1.add(&d_x_ln))
}

/// One block over a single packed window (`slots × D`).
///
/// Only rows flagged in `occupancy` are read; the other rows of the result
/// are zero.
pub fn hexmsa_block(
    h_window: &Tensor,
    occupancy: &Mask,
    offsets: &[SlotPosition],
    w: &BlockWeights,
    pe: &dyn PositionalEncoding,
    heads: usize,
    ln_eps: f64,
) -> Result<Tensor> {
    let slots = h_window.rows();
    if occupancy.data().len() != slots || offsets.len() != slots {
        return Err(HexstError::Structural(format!(
            "window of {slots} slots with {} occupancy flags and {} offsets",
            occupancy.data().len(),
            offsets.len()
        )));
    }
    let filled: Vec<usize> = (0..slots).filter(|&s| occupancy.data()[s]).collect();
    if filled.is_empty() {
        return Err(HexstError::Input("window has no occupied slot".into()));
    }
    let x = h_window.select_rows(&filled);
    let groups = AttentionGroups::global(filled.iter().map(|&s| offsets[s]).collect());
    let (y, _) = block_forward(&x, &groups, w, pe, heads, ln_eps)?;
    let mut out = Tensor::zeros(h_window.shape());
    for (r, &s) in filled.iter().enumerate() {
        out.row_mut(s).copy_from_slice(y.row(r));
    }
    Ok(out)
}
