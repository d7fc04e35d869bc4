//! One transformer block with an optional focus-token sparse path.
//!
//! Dense mode runs self-attention, cross-attention and the FFN over every
//! token and refreshes the block's FFN cache. Sparse mode computes queries for
//! focus tokens only while keys and values still come from all tokens, so
//! each focus row equals the corresponding dense row. Background tokens keep
//! their hidden state and receive the FFN output cached at the last dense
//! pass. The output is scattered back to the original token order.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::AesMask;
use crate::math::{gelu, matmul, softmax_in_place, LayerNormParams, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockMode {
    Dense,
    Sparse,
}

#[derive(Debug, Clone)]
pub struct BlockWeights {
    heads: usize,
    pub norm_attn: LayerNormParams,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub norm_cross: LayerNormParams,
    pub cross_q: Matrix,
    pub cross_k: Matrix,
    pub cross_v: Matrix,
    pub cross_o: Matrix,
    pub norm_ffn: LayerNormParams,
    pub ffn_in: Matrix,
    pub ffn_in_bias: Vec<f64>,
    pub ffn_out: Matrix,
    pub ffn_out_bias: Vec<f64>,
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Matrix {
    let dist = Normal::new(0.0, std).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

fn perturbed_norm(width: usize, rng: &mut impl Rng) -> LayerNormParams {
    let noise = Normal::new(0.0, 0.05).expect("finite std");
    let mut p = LayerNormParams::identity(width);
    for g in &mut p.gain {
        *g += noise.sample(rng);
    }
    for b in &mut p.bias {
        *b = noise.sample(rng);
    }
    p
}

impl BlockWeights {
    /// Gaussian weights with `1/sqrt(fan_in)` scale drawn from `rng`.
    pub fn random(
        width: usize,
        text_width: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::config(format!(
                "width {width} is not divisible by {heads} heads"
            )));
        }
        let s = 1.0 / (width as f64).sqrt();
        let sc = 1.0 / (text_width as f64).sqrt();
        let sf = 1.0 / (ffn_hidden as f64).sqrt();
        let bias = Normal::new(0.0, 0.02).expect("finite std");
        Ok(Self {
            heads,
            norm_attn: perturbed_norm(width, rng),
            w_q: gaussian(width, width, s, rng),
            w_k: gaussian(width, width, s, rng),
            w_v: gaussian(width, width, s, rng),
            w_o: gaussian(width, width, s, rng),
            norm_cross: perturbed_norm(width, rng),
            cross_q: gaussian(width, width, s, rng),
            cross_k: gaussian(text_width, width, sc, rng),
            cross_v: gaussian(text_width, width, sc, rng),
            cross_o: gaussian(width, width, s, rng),
            norm_ffn: perturbed_norm(width, rng),
            ffn_in: gaussian(width, ffn_hidden, s, rng),
            ffn_in_bias: (0..ffn_hidden).map(|_| bias.sample(rng)).collect(),
            ffn_out: gaussian(ffn_hidden, width, sf, rng),
            ffn_out_bias: (0..width).map(|_| bias.sample(rng)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.w_q.rows()
    }

    pub fn text_width(&self) -> usize {
        self.cross_k.rows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.width() / self.heads
    }

    pub fn ffn_hidden(&self) -> usize {
        self.ffn_in.cols()
    }

    /// Self-attention output (after `W_O`) for the given query rows of an
    /// already normalized hidden state; keys and values use every row.
    fn self_attention(&self, normed: &Matrix, query_rows: Option<&[usize]>) -> Result<Matrix> {
        let keys = matmul(normed, &self.w_k)?;
        let values = matmul(normed, &self.w_v)?;
        let queries = match query_rows {
            Some(rows) => matmul(&normed.gather_rows(rows), &self.w_q)?,
            None => matmul(normed, &self.w_q)?,
        };
        let (mixed, _) = attend(&queries, &keys, &values, self.heads, false)?;
        matmul(&mixed, &self.w_o)
    }

    fn cross_attention(
        &self,
        normed: &Matrix,
        text: &Matrix,
        capture: bool,
    ) -> Result<(Matrix, Option<Matrix>)> {
        if text.cols() != self.text_width() {
            return Err(Error::shape(format!(
                "text embeddings of width {}, block expects {}",
                text.cols(),
                self.text_width()
            )));
        }
        let queries = matmul(normed, &self.cross_q)?;
        let keys = matmul(text, &self.cross_k)?;
        let values = matmul(text, &self.cross_v)?;
        let (mixed, weights) = attend(&queries, &keys, &values, self.heads, capture)?;
        Ok((matmul(&mixed, &self.cross_o)?, weights))
    }

    fn feed_forward(&self, hidden: &Matrix) -> Result<Matrix> {
        let normed = self.norm_ffn.apply(hidden)?;
        let mut inner = matmul(&normed, &self.ffn_in)?;
        inner.add_row_vector(&self.ffn_in_bias)?;
        let inner = inner.map(gelu);
        let mut out = matmul(&inner, &self.ffn_out)?;
        out.add_row_vector(&self.ffn_out_bias)?;
        Ok(out)
    }
}

/// Multi-head scaled dot-product attention. Heads are contiguous column
/// blocks of width `d / heads`; each query row is computed independently of
/// the others. With `want_weights`, also returns the head-averaged attention
/// weights (`queries x keys`).
pub fn attend(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    heads: usize,
    want_weights: bool,
) -> Result<(Matrix, Option<Matrix>)> {
    let d = queries.cols();
    if keys.cols() != d || values.cols() != d || keys.rows() != values.rows() {
        return Err(Error::shape(format!(
            "attention q {:?}, k {:?}, v {:?}",
            queries.shape(),
            keys.shape(),
            values.shape()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape(format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(queries.rows(), d);
    let mut avg = want_weights.then(|| Matrix::zeros(queries.rows(), keys.rows()));
    let keys_t = keys.transpose();
    let span = dh * keys.rows();
    for h in 0..heads {
        let q = queries.column_block(h * dh, dh);
        let kt = Matrix::new(dh, keys.rows(), keys_t.data()[h * span..(h + 1) * span].to_vec())?;
        let v = values.column_block(h * dh, dh);
        let mut scores = matmul(&q, &kt)?;
        for r in 0..scores.rows() {
            let row = scores.row_mut(r);
            for x in row.iter_mut() {
                *x *= scale;
            }
            softmax_in_place(row);
        }
        if let Some(avg) = avg.as_mut() {
            avg.add_assign(&scores)?;
        }
        out.set_column_block(h * dh, &matmul(&scores, &v)?);
    }
    let avg = avg.map(|a| a.scale(1.0 / heads as f64));
    Ok((out, avg))
}

/// Focus/background split of the token set plus the permutation that undoes
/// the gathered `[focus; background]` layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPartition {
    focus: Vec<usize>,
    background: Vec<usize>,
    /// `position[i]` is the row of token `i` in the gathered layout.
    position: Vec<usize>,
}

impl TokenPartition {
    pub fn new(tokens: usize, focus: &[usize]) -> Result<Self> {
        let mut is_focus = vec![false; tokens];
        for &i in focus {
            if i >= tokens {
                return Err(Error::shape(format!("focus index {i} out of range for {tokens} tokens")));
            }
            if is_focus[i] {
                return Err(Error::Contract(format!("focus index {i} listed twice")));
            }
            is_focus[i] = true;
        }
        if focus.is_empty() {
            return Err(Error::Contract("focus set is empty".into()));
        }
        let mut focus = focus.to_vec();
        focus.sort_unstable();
        let background: Vec<usize> = (0..tokens).filter(|&i| !is_focus[i]).collect();
        let mut position = vec![0; tokens];
        for (row, &i) in focus.iter().chain(&background).enumerate() {
            position[i] = row;
        }
        Ok(Self {
            focus,
            background,
            position,
        })
    }

    pub fn all(tokens: usize) -> Self {
        let all: Vec<usize> = (0..tokens).collect();
        Self::new(tokens, &all).expect("nonempty token set")
    }

    pub fn from_mask(mask: &AesMask) -> Self {
        Self::new(mask.len(), mask.focus_indices()).expect("masks have a nonempty focus set")
    }

    pub fn tokens(&self) -> usize {
        self.position.len()
    }

    pub fn focus(&self) -> &[usize] {
        &self.focus
    }

    pub fn background(&self) -> &[usize] {
        &self.background
    }

    pub fn is_full(&self) -> bool {
        self.background.is_empty()
    }

    /// Rows reordered as `[focus; background]`.
    pub fn gather(&self, hidden: &Matrix) -> Matrix {
        let order: Vec<usize> = self.focus.iter().chain(&self.background).copied().collect();
        hidden.gather_rows(&order)
    }

    /// Inverse of [`TokenPartition::gather`].
    pub fn restore(&self, gathered: &Matrix) -> Result<Matrix> {
        if gathered.rows() != self.tokens() {
            return Err(Error::shape(format!(
                "{} gathered rows for {} tokens",
                gathered.rows(),
                self.tokens()
            )));
        }
        Ok(gathered.gather_rows(&self.position))
    }
}

/// Post-FFN activations of every token from the block's last dense pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FfnCache {
    activations: Option<Matrix>,
    last_full_step: Option<usize>,
}

impl FfnCache {
    pub fn is_valid(&self) -> bool {
        self.activations.is_some()
    }

    pub fn is_valid_for(&self, tokens: usize, width: usize) -> bool {
        self.activations
            .as_ref()
            .is_some_and(|a| a.shape() == (tokens, width))
    }

    pub fn last_full_step(&self) -> Option<usize> {
        self.last_full_step
    }

    pub fn activations(&self) -> Option<&Matrix> {
        self.activations.as_ref()
    }

    pub fn invalidate(&mut self) {
        self.activations = None;
        self.last_full_step = None;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnOutput {
    /// FFN output for focus tokens, in focus order.
    pub focus: Matrix,
    /// Cached FFN output for background tokens, in background order.
    pub background: Matrix,
}

/// Focus-query self-attention: returns the attention output (after `W_O`)
/// for the focus tokens, in focus order. Keys and values come from all tokens.
pub fn sparse_attention(
    hidden: &Matrix,
    partition: &TokenPartition,
    weights: &BlockWeights,
) -> Result<Matrix> {
    if hidden.rows() != partition.tokens() || hidden.cols() != weights.width() {
        return Err(Error::shape(format!(
            "hidden {:?} for {} tokens of width {}",
            hidden.shape(),
            partition.tokens(),
            weights.width()
        )));
    }
    let normed = weights.norm_attn.apply(hidden)?;
    weights.self_attention(&normed, Some(partition.focus()))
}

/// Dense self-attention output for every token.
pub fn dense_attention(hidden: &Matrix, weights: &BlockWeights) -> Result<Matrix> {
    let normed = weights.norm_attn.apply(hidden)?;
    weights.self_attention(&normed, None)
}

/// Runs the FFN on the focus rows and copies background rows from the cache.
/// `focus_hidden` holds the pre-norm residual stream of the focus tokens.
pub fn sparse_ffn(
    focus_hidden: &Matrix,
    partition: &TokenPartition,
    cache: &FfnCache,
    weights: &BlockWeights,
    block: usize,
) -> Result<FfnOutput> {
    if focus_hidden.rows() != partition.focus().len() {
        return Err(Error::shape(format!(
            "{} focus rows for a partition with {} focus tokens",
            focus_hidden.rows(),
            partition.focus().len()
        )));
    }
    let cached = cache
        .activations
        .as_ref()
        .filter(|a| a.shape() == (partition.tokens(), weights.width()))
        .ok_or(Error::CacheMiss { block })?;
    Ok(FfnOutput {
        focus: weights.feed_forward(focus_hidden)?,
        background: cached.gather_rows(partition.background()),
    })
}

/// Runs the FFN on every token and stores the result in the cache.
pub fn refresh_ffn(
    hidden: &Matrix,
    cache: &mut FfnCache,
    weights: &BlockWeights,
    step: usize,
) -> Result<Matrix> {
    let out = weights.feed_forward(hidden)?;
    cache.activations = Some(out.clone());
    cache.last_full_step = Some(step);
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct BlockContext<'a> {
    /// Text-token embeddings, `M x d_c`.
    pub text: &'a Matrix,
    pub mode: BlockMode,
    pub partition: Option<&'a TokenPartition>,
    pub step: usize,
    pub capture: bool,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub hidden: Matrix,
    /// Head-averaged cross-attention weights, `N x M`, when captured.
    pub cross_attention: Option<Matrix>,
}

pub fn run_block(
    hidden: &Matrix,
    weights: &BlockWeights,
    cache: &mut FfnCache,
    ctx: &BlockContext<'_>,
) -> Result<BlockOutput> {
    if hidden.cols() != weights.width() {
        return Err(Error::shape(format!(
            "hidden width {} for block width {}",
            hidden.cols(),
            weights.width()
        )));
    }
    match ctx.mode {
        BlockMode::Dense => {
            let normed = weights.norm_attn.apply(hidden)?;
            let mut h = hidden.add(&weights.self_attention(&normed, None)?)?;
            let normed = weights.norm_cross.apply(&h)?;
            let (cross, captured) = weights.cross_attention(&normed, ctx.text, ctx.capture)?;
            h.add_assign(&cross)?;
            let ffn = refresh_ffn(&h, cache, weights, ctx.step)?;
            h.add_assign(&ffn)?;
            Ok(BlockOutput {
                hidden: h,
                cross_attention: captured,
            })
        }
        BlockMode::Sparse => {
            let partition = ctx
                .partition
                .ok_or_else(|| Error::Contract("sparse block requires a token partition".into()))?;
            if ctx.capture {
                return Err(Error::Contract(
                    "attention capture needs a dense pass over every token".into(),
                ));
            }
            if partition.tokens() != hidden.rows() {
                return Err(Error::shape(format!(
                    "partition over {} tokens for {} hidden rows",
                    partition.tokens(),
                    hidden.rows()
                )));
            }
            let focus = partition.focus();
            let normed = weights.norm_attn.apply(hidden)?;
            let mut h = hidden
                .gather_rows(focus)
                .add(&weights.self_attention(&normed, Some(focus))?)?;
            let normed = weights.norm_cross.apply(&h)?;
            let (cross, _) = weights.cross_attention(&normed, ctx.text, false)?;
            h.add_assign(&cross)?;
            let ffn = sparse_ffn(&h, partition, cache, weights, ctx.index)?;
            h.add_assign(&ffn.focus)?;

            let background = partition.background();
            let bg = hidden.gather_rows(background).add(&ffn.background)?;
            let mut out = hidden.clone();
            out.scatter_rows(focus, &h)?;
            out.scatter_rows(background, &bg)?;
            Ok(BlockOutput {
                hidden: out,
                cross_attention: None,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub tokens: usize,
    pub text_tokens: usize,
    pub width: usize,
    pub text_width: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
}

/// Analytic per-term FLOP count of one block. A multiply-add counts as two.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockFlops {
    pub self_q_proj: u64,
    pub self_kv_proj: u64,
    pub self_scores: u64,
    pub self_softmax: u64,
    pub self_weighted_sum: u64,
    pub self_out_proj: u64,
    pub cross_q_proj: u64,
    pub cross_kv_proj: u64,
    pub cross_scores: u64,
    pub cross_softmax: u64,
    pub cross_weighted_sum: u64,
    pub cross_out_proj: u64,
    pub ffn: u64,
    pub norms: u64,
    pub residual: u64,
}

impl BlockFlops {
    pub fn attention(&self) -> u64 {
        self.self_q_proj
            + self.self_kv_proj
            + self.self_scores
            + self.self_softmax
            + self.self_weighted_sum
            + self.self_out_proj
            + self.cross_q_proj
            + self.cross_kv_proj
            + self.cross_scores
            + self.cross_softmax
            + self.cross_weighted_sum
            + self.cross_out_proj
    }

    pub fn other(&self) -> u64 {
        self.norms + self.residual
    }

    pub fn total(&self) -> u64 {
        self.attention() + self.ffn + self.other()
    }
}

const NORM_FLOPS_PER_ELEMENT: u64 = 8;
const SOFTMAX_FLOPS_PER_ELEMENT: u64 = 4;
const GELU_FLOPS_PER_ELEMENT: u64 = 8;

/// FLOPs of one block evaluation. Query-side terms scale with the number of
/// focus tokens in sparse mode; key/value projections always cover all
/// tokens. Dense mode counts every token as a query.
pub fn block_flops(dims: &BlockDims, focus: usize, mode: BlockMode) -> BlockFlops {
    let n = dims.tokens as u64;
    let q = match mode {
        BlockMode::Dense => n,
        BlockMode::Sparse => (focus as u64).min(n),
    };
    let m = dims.text_tokens as u64;
    let d = dims.width as u64;
    let dc = dims.text_width as u64;
    let h = dims.heads as u64;
    let f = dims.ffn_hidden as u64;
    BlockFlops {
        self_q_proj: 2 * q * d * d,
        self_kv_proj: 2 * 2 * n * d * d,
        self_scores: 2 * q * n * d + q * n * h,
        self_softmax: SOFTMAX_FLOPS_PER_ELEMENT * h * q * n,
        self_weighted_sum: 2 * q * n * d,
        self_out_proj: 2 * q * d * d,
        cross_q_proj: 2 * q * d * d,
        cross_kv_proj: 2 * 2 * m * dc * d,
        cross_scores: 2 * q * m * d + q * m * h,
        cross_softmax: SOFTMAX_FLOPS_PER_ELEMENT * h * q * m,
        cross_weighted_sum: 2 * q * m * d,
        cross_out_proj: 2 * q * d * d,
        ffn: 2 * q * d * f + q * f + GELU_FLOPS_PER_ELEMENT * q * f + 2 * q * f * d + q * d,
        norms: NORM_FLOPS_PER_ELEMENT * (n * d + 2 * q * d),
        residual: 3 * q * d + (n - q) * d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, seed: u64) -> (Matrix, Matrix, BlockWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = BlockWeights::random(16, 8, 4, 32, &mut rng).unwrap();
        let hidden = gaussian(n, 16, 1.0, &mut rng);
        let text = gaussian(5, 8, 1.0, &mut rng);
        (hidden, text, weights)
    }

    /// Straightforward dense multi-head attention, one head and one query at
    /// a time, sharing no code with `attend`.
    fn oracle_attention(hidden: &Matrix, w: &BlockWeights) -> Matrix {
        let x = crate::math::layer_norm(hidden, &w.norm_attn.gain, &w.norm_attn.bias, w.norm_attn.eps).unwrap();
        let proj = |m: &Matrix| {
            Matrix::from_fn(x.rows(), m.cols(), |i, j| (0..x.cols()).map(|p| x.get(i, p) * m.get(p, j)).sum())
        };
        let (q, k, v) = (proj(&w.w_q), proj(&w.w_k), proj(&w.w_v));
        let dh = w.head_dim();
        let n = x.rows();
        let mut mixed = Matrix::zeros(n, w.width());
        for head in 0..w.heads() {
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| (0..dh).map(|c| q.get(i, head * dh + c) * k.get(j, head * dh + c)).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dh {
                    let val: f64 = (0..n).map(|j| e[j] / z * v.get(j, head * dh + c)).sum();
                    mixed.set(i, head * dh + c, val);
                }
            }
        }
        Matrix::from_fn(n, w.width(), |i, j| (0..w.width()).map(|p| mixed.get(i, p) * w.w_o.get(p, j)).sum())
    }

    #[test]
    fn full_partition_equals_dense_oracle() {
        let (hidden, _, w) = setup(12, 1);
        let sparse = sparse_attention(&hidden, &TokenPartition::all(12), &w).unwrap();
        let oracle = oracle_attention(&hidden, &w);
        assert!(sparse.max_abs_diff(&oracle).unwrap() <= 1e-9);
    }

    #[test]
    fn single_focus_row_equals_dense_row() {
        let (hidden, _, w) = setup(10, 2);
        let dense = dense_attention(&hidden, &w).unwrap();
        for i in 0..10 {
            let part = TokenPartition::new(10, &[i]).unwrap();
            let row = sparse_attention(&hidden, &part, &w).unwrap();
            assert_eq!(row.row(0), dense.row(i));
        }
    }

    #[test]
    fn half_focus_matches_oracle_rows() {
        let (hidden, _, w) = setup(16, 3);
        let oracle = oracle_attention(&hidden, &w);
        let focus = [0, 3, 4, 7, 9, 10, 13, 15];
        let part = TokenPartition::new(16, &focus).unwrap();
        let out = sparse_attention(&hidden, &part, &w).unwrap();
        for (k, &i) in focus.iter().enumerate() {
            for j in 0..16 {
                assert!((out.get(k, j) - oracle.get(i, j)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn partition_validation_and_restore() {
        assert!(TokenPartition::new(4, &[]).is_err());
        assert!(TokenPartition::new(4, &[4]).is_err());
        assert!(TokenPartition::new(4, &[1, 1]).is_err());
        let (hidden, _, _) = setup(7, 4);
        let p = TokenPartition::new(7, &[5, 1, 3]).unwrap();
        assert_eq!(p.focus(), &[1, 3, 5]);
        assert_eq!(p.background(), &[0, 2, 4, 6]);
        assert_eq!(p.restore(&p.gather(&hidden)).unwrap(), hidden);
    }

    #[test]
    fn ffn_cache_replays_background() {
        let (hidden, _, w) = setup(8, 5);
        let mut cache = FfnCache::default();
        let part = TokenPartition::new(8, &[2, 6]).unwrap();
        assert!(matches!(
            sparse_ffn(&hidden.gather_rows(part.focus()), &part, &cache, &w, 3),
            Err(Error::CacheMiss { block: 3 })
        ));
        let full = refresh_ffn(&hidden, &mut cache, &w, 4).unwrap();
        assert_eq!(cache.last_full_step(), Some(4));

        // Background replay is bit-exact no matter how the inputs drift.
        for k in 1..4 {
            let drifted = hidden.scale(1.0 + k as f64);
            let out = sparse_ffn(&drifted.gather_rows(part.focus()), &part, &cache, &w, 0).unwrap();
            assert_eq!(out.background, full.gather_rows(part.background()));
            assert_eq!(cache.last_full_step(), Some(4));
        }
        let all = TokenPartition::all(8);
        let out = sparse_ffn(&hidden, &all, &cache, &w, 0).unwrap();
        assert_eq!(out.focus, full);
        assert_eq!(out.background.rows(), 0);
    }

    #[test]
    fn sparse_with_full_partition_is_bit_identical_to_dense() {
        let (hidden, text, w) = setup(9, 6);
        let mut c1 = FfnCache::default();
        let mut c2 = FfnCache::default();
        let dense_ctx = BlockContext {
            text: &text,
            mode: BlockMode::Dense,
            partition: None,
            step: 0,
            capture: true,
            index: 0,
        };
        let a = run_block(&hidden, &w, &mut c1, &dense_ctx).unwrap();
        let b = run_block(&hidden, &w, &mut c2, &dense_ctx).unwrap();
        assert_eq!(a.hidden, b.hidden);
        let cap = a.cross_attention.unwrap();
        assert_eq!(cap.shape(), (9, 5));
        for r in cap.row_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        let all = TokenPartition::all(9);
        let sparse_ctx = BlockContext {
            mode: BlockMode::Sparse,
            partition: Some(&all),
            capture: false,
            step: 1,
            ..dense_ctx
        };
        let s = run_block(&hidden, &w, &mut c1, &sparse_ctx).unwrap();
        assert_eq!(s.hidden, a.hidden);
    }

    #[test]
    fn sparse_block_keeps_background_plus_cached_ffn() {
        let (hidden, text, w) = setup(10, 7);
        let mut cache = FfnCache::default();
        let dense_ctx = BlockContext {
            text: &text,
            mode: BlockMode::Dense,
            partition: None,
            step: 0,
            capture: false,
            index: 0,
        };
        run_block(&hidden, &w, &mut cache, &dense_ctx).unwrap();
        let cached = cache.activations().unwrap().clone();

        let part = TokenPartition::new(10, &[1, 4, 8]).unwrap();
        let next = hidden.scale(0.5);
        let ctx = BlockContext {
            mode: BlockMode::Sparse,
            partition: Some(&part),
            step: 1,
            ..dense_ctx
        };
        let out = run_block(&next, &w, &mut cache, &ctx).unwrap().hidden;
        assert_eq!(out.shape(), next.shape());
        for &i in part.background() {
            for j in 0..10.min(out.cols()) {
                assert_eq!(out.get(i, j), next.get(i, j) + cached.get(i, j));
            }
        }
        // The dense pass of the same input agrees on nothing in particular for
        // focus rows, but the attention part of each focus row is exact.
        let dense_attn = dense_attention(&next, &w).unwrap();
        let sparse_attn = sparse_attention(&next, &part, &w).unwrap();
        assert_eq!(sparse_attn, dense_attn.gather_rows(part.focus()));
    }

    #[test]
    fn sparse_mode_contract_errors() {
        let (hidden, text, w) = setup(6, 8);
        let mut cache = FfnCache::default();
        let part = TokenPartition::new(6, &[0]).unwrap();
        let ctx = BlockContext {
            text: &text,
            mode: BlockMode::Sparse,
            partition: None,
            step: 0,
            capture: false,
            index: 2,
        };
        assert!(matches!(run_block(&hidden, &w, &mut cache, &ctx), Err(Error::Contract(_))));
        let ctx = BlockContext { partition: Some(&part), ..ctx };
        assert!(matches!(run_block(&hidden, &w, &mut cache, &ctx), Err(Error::CacheMiss { block: 2 })));
        let ctx = BlockContext { capture: true, ..ctx };
        assert!(matches!(run_block(&hidden, &w, &mut cache, &ctx), Err(Error::Contract(_))));
    }

    fn dims() -> BlockDims {
        BlockDims {
            tokens: 64,
            text_tokens: 16,
            width: 64,
            text_width: 32,
            heads: 4,
            ffn_hidden: 256,
        }
    }

    #[test]
    fn flops_full_focus_equals_dense() {
        let d = dims();
        assert_eq!(block_flops(&d, 64, BlockMode::Sparse), block_flops(&d, 64, BlockMode::Dense));
        assert_eq!(block_flops(&d, 3, BlockMode::Dense), block_flops(&d, 64, BlockMode::Dense));
    }

    #[test]
    fn flops_half_focus_halves_query_terms() {
        let d = dims();
        let full = block_flops(&d, 64, BlockMode::Dense);
        let half = block_flops(&d, 32, BlockMode::Sparse);
        assert_eq!(half.self_scores * 2, full.self_scores);
        assert_eq!(half.self_weighted_sum * 2, full.self_weighted_sum);
        assert_eq!(half.self_q_proj * 2, full.self_q_proj);
        assert_eq!(half.ffn * 2, full.ffn);
        assert_eq!(half.self_kv_proj, full.self_kv_proj);
        assert_eq!(half.cross_kv_proj, full.cross_kv_proj);
        // Term-by-term hand count at N=64, d=64, heads=4.
        assert_eq!(full.self_scores, 2 * 64 * 64 * 64 + 64 * 64 * 4);
        assert_eq!(full.self_kv_proj, 4 * 64 * 64 * 64);
    }

    #[test]
    fn flops_monotone_in_focus() {
        let d = dims();
        let mut prev = 0;
        for focus in 1..=64 {
            let t = block_flops(&d, focus, BlockMode::Sparse).total();
            assert!(t >= prev);
            prev = t;
        }
    }
}
