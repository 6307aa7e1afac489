//! Neural building blocks composed from tensor ops: linear layers,
//! layer normalization, multi-head attention, feed-forward nets, and
//! the two transformer block shapes used by the encoders.
//!
//! Blocks register their parameters in a [`ParamStore`] under a caller
//! chosen prefix, so the full model enumerates deterministically.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{KeyMask, Tensor};

/// Epsilon added to the variance in every layer normalization.
pub const LN_EPS: f64 = 1e-5;

/// Ratio of feed-forward hidden width to its input width.
pub const FFN_HIDDEN_RATIO: usize = 4;

/// Affine map `x W + b`.
pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Linear> {
        let w = store.xavier(&format!("{prefix}.w"), d_in, d_out, rng)?;
        let b = if bias {
            Some(store.zeros_param(&format!("{prefix}.b"), &[1, d_out])?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.w)?;
        match &self.b {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

/// Per-row normalization with learned gain and bias.
pub struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<LayerNorm> {
        let gain = store.ones_param(&format!("{prefix}.g"), &[1, dim])?;
        let bias = store.zeros_param(&format!("{prefix}.b"), &[1, dim])?;
        Ok(LayerNorm { gain, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layernorm(&self.gain, &self.bias, LN_EPS)
    }
}

/// Multi-head scaled dot-product attention. Queries and keys/values may
/// come from different sequences; keys and values always share a source.
pub struct MultiHeadAttention {
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<MultiHeadAttention> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::contract(format!(
                "attention width {dim} must divide evenly into {heads} heads"
            )));
        }
        let mat = |store: &mut ParamStore, n: &str, rng: &mut ChaCha8Rng| {
            store.xavier(&format!("{prefix}.{n}"), dim, dim, rng)
        };
        let wq = mat(store, "wq", rng)?;
        let bq = store.zeros_param(&format!("{prefix}.bq"), &[1, dim])?;
        let wk = mat(store, "wk", rng)?;
        let bk = store.zeros_param(&format!("{prefix}.bk"), &[1, dim])?;
        let wv = mat(store, "wv", rng)?;
        let bv = store.zeros_param(&format!("{prefix}.bv"), &[1, dim])?;
        let wo = mat(store, "wo", rng)?;
        let bo = store.zeros_param(&format!("{prefix}.bo"), &[1, dim])?;
        Ok(MultiHeadAttention {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            heads,
            head_dim: dim / heads,
        })
    }

    /// Attends `queries` over `keys_values`. The mask hides keys; a row
    /// with no visible keys degrades to uniform weights.
    pub fn forward(
        &self,
        queries: &Tensor,
        keys_values: &Tensor,
        mask: &KeyMask,
    ) -> Result<Tensor> {
        let q = queries.matmul(&self.wq)?.add(&self.bq)?;
        let k = keys_values.matmul(&self.wk)?.add(&self.bk)?;
        let v = keys_values.matmul(&self.wv)?.add(&self.bv)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut contexts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let lo = h * self.head_dim;
            let hi = lo + self.head_dim;
            let qh = q.slice_cols(lo, hi)?;
            let kh = k.slice_cols(lo, hi)?;
            let vh = v.slice_cols(lo, hi)?;
            let logits = qh.matmul(&kh.transpose()?)?.scale(scale)?;
            let weights = logits.masked_softmax_rows(mask)?;
            contexts.push(weights.matmul(&vh)?);
        }
        let refs: Vec<&Tensor> = contexts.iter().collect();
        let ctx = Tensor::concat_cols(&refs)?;
        ctx.matmul(&self.wo)?.add(&self.bo)
    }
}

/// Two-layer perceptron with a ReLU between.
pub struct FeedForward {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<FeedForward> {
        Ok(FeedForward {
            w1: store.xavier(&format!("{prefix}.w1"), d_in, hidden, rng)?,
            b1: store.zeros_param(&format!("{prefix}.b1"), &[1, hidden])?,
            w2: store.xavier(&format!("{prefix}.w2"), hidden, d_out, rng)?,
            b2: store.zeros_param(&format!("{prefix}.b2"), &[1, d_out])?,
        })
    }

    /// Standard width: hidden = [`FFN_HIDDEN_RATIO`] times the input.
    pub fn with_default_hidden(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<FeedForward> {
        FeedForward::new(store, prefix, d_in, FFN_HIDDEN_RATIO * d_in, d_out, rng)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w1)?
            .add(&self.b1)?
            .relu()?
            .matmul(&self.w2)?
            .add(&self.b2)
    }
}

/// Self-attention transformer block, normalized after each residual.
pub struct EncoderBlock {
    mha: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<EncoderBlock> {
        Ok(EncoderBlock {
            mha: MultiHeadAttention::new(store, &format!("{prefix}.mha"), dim, heads, rng)?,
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), dim)?,
            ffn: FeedForward::with_default_hidden(
                store,
                &format!("{prefix}.ffn"),
                dim,
                dim,
                rng,
            )?,
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &KeyMask) -> Result<Tensor> {
        let attended = self.mha.forward(x, x, mask)?;
        let h = self.ln1.forward(&x.add(&attended)?)?;
        let f = self.ffn.forward(&h)?;
        self.ln2.forward(&h.add(&f)?)
    }
}

/// Cross-attention block: attend an external context, then self-attend,
/// then feed forward, normalizing after each residual.
pub struct CrossModalBlock {
    cross: MultiHeadAttention,
    ln_cross: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_self: LayerNorm,
    ffn: FeedForward,
    ln_ffn: LayerNorm,
}

impl CrossModalBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<CrossModalBlock> {
        Ok(CrossModalBlock {
            cross: MultiHeadAttention::new(store, &format!("{prefix}.cross"), dim, heads, rng)?,
            ln_cross: LayerNorm::new(store, &format!("{prefix}.ln_c"), dim)?,
            self_attn: MultiHeadAttention::new(store, &format!("{prefix}.self"), dim, heads, rng)?,
            ln_self: LayerNorm::new(store, &format!("{prefix}.ln_s"), dim)?,
            ffn: FeedForward::with_default_hidden(store, &format!("{prefix}.ffn"), dim, dim, rng)?,
            ln_ffn: LayerNorm::new(store, &format!("{prefix}.ln_f"), dim)?,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        context: &Tensor,
        context_mask: &KeyMask,
        self_mask: &KeyMask,
    ) -> Result<Tensor> {
        let c = self.cross.forward(x, context, context_mask)?;
        let h1 = self.ln_cross.forward(&x.add(&c)?)?;
        let s = self.self_attn.forward(&h1, &h1, self_mask)?;
        let h2 = self.ln_self.forward(&h1.add(&s)?)?;
        let f = self.ffn.forward(&h2)?;
        self.ln_ffn.forward(&h2.add(&f)?)
    }
}
