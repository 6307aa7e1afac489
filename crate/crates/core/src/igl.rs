//! Instruction encoding with phrase-guided gated fusion.
//!
//! An instruction is embedded (learned token and position tables behind
//! a leading classification row), contextualized by self-attention
//! blocks, then fused with a phrase-focused reading of itself: the
//! direction and landmark tokens found by the parser form the key/value
//! sequence of an extra attention pass, and a learned sigmoid gate
//! blends that phrase-focused stream back into the contextual stream
//! token by token. When the parser found no phrases at all, a learned
//! null row stands in as the key/value sequence so the pass stays well
//! defined.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{EncoderBlock, MultiHeadAttention};
use crate::param::ParamStore;
use crate::tensor::{KeyMask, Tensor};

/// Sizing for [`InstructionEncoder`].
#[derive(Clone, Copy, Debug)]
pub struct IglConfig {
    pub vocab_size: usize,
    pub d_m: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
}

/// Contextualized instruction plus bookkeeping for phrase lookups.
pub struct InstructionEncoding {
    /// `(tokens + 1, d_m)`; row 0 is the classification row.
    pub context: Tensor,
    token_count: usize,
}

impl InstructionEncoding {
    /// Sequence row for a parser token index.
    pub fn row_for_token(&self, token_idx: usize) -> Result<usize> {
        if token_idx >= self.token_count {
            return Err(Error::contract(format!(
                "token index {token_idx} out of range for {} tokens",
                self.token_count
            )));
        }
        Ok(token_idx + 1)
    }

    pub fn rows_for_tokens(&self, token_ids: &[usize]) -> Result<Vec<usize>> {
        token_ids.iter().map(|&i| self.row_for_token(i)).collect()
    }

    pub fn seq_len(&self) -> usize {
        self.token_count + 1
    }
}

/// Gated fusion result.
pub struct GatedInstruction {
    /// `K_f`: per-token blend of the two streams, same shape as the
    /// contextual encoding.
    pub fused: Tensor,
    /// Per-row gate in (0, 1), shape `(rows, 1)`.
    pub gate: Tensor,
    /// The phrase-focused stream, same shape as `fused`.
    pub guided: Tensor,
}

pub struct InstructionEncoder {
    token_emb: Tensor,
    pos_emb: Tensor,
    cls: Tensor,
    blocks: Vec<EncoderBlock>,
    null_kv: Tensor,
    phrase_attention: MultiHeadAttention,
    w_guided: Tensor,
    w_context: Tensor,
    gate_bias: Tensor,
    cfg: IglConfig,
}

impl InstructionEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: IglConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<InstructionEncoder> {
        if cfg.vocab_size == 0 || cfg.d_m == 0 || cfg.max_len < 2 {
            return Err(Error::contract(
                "instruction encoder needs a vocabulary, a positive width, and room for two rows",
            ));
        }
        let token_emb = store.xavier(&format!("{prefix}.tok"), cfg.vocab_size, cfg.d_m, rng)?;
        let pos_emb = store.xavier(&format!("{prefix}.pos"), cfg.max_len, cfg.d_m, rng)?;
        let cls = store.xavier(&format!("{prefix}.cls"), 1, cfg.d_m, rng)?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            blocks.push(EncoderBlock::new(
                store,
                &format!("{prefix}.ctx.{i}"),
                cfg.d_m,
                cfg.heads,
                rng,
            )?);
        }
        let null_kv = store.xavier(&format!("{prefix}.null"), 1, cfg.d_m, rng)?;
        let phrase_attention =
            MultiHeadAttention::new(store, &format!("{prefix}.phr"), cfg.d_m, cfg.heads, rng)?;
        let w_guided = store.xavier(&format!("{prefix}.gate.wg"), cfg.d_m, 1, rng)?;
        let w_context = store.xavier(&format!("{prefix}.gate.wc"), cfg.d_m, 1, rng)?;
        let gate_bias = store.zeros_param(&format!("{prefix}.gate.b"), &[1, 1])?;
        Ok(InstructionEncoder {
            token_emb,
            pos_emb,
            cls,
            blocks,
            null_kv,
            phrase_attention,
            w_guided,
            w_context,
            gate_bias,
            cfg,
        })
    }

    /// Embeds and contextualizes a token id sequence.
    pub fn encode(&self, token_ids: &[usize]) -> Result<InstructionEncoding> {
        if token_ids.is_empty() {
            return Err(Error::contract("cannot encode an empty instruction"));
        }
        let rows = token_ids.len() + 1;
        if rows > self.cfg.max_len {
            return Err(Error::contract(format!(
                "instruction of {} tokens exceeds the position table ({} rows)",
                token_ids.len(),
                self.cfg.max_len
            )));
        }
        let tokens = self.token_emb.gather_rows(token_ids)?;
        let seq = Tensor::concat_rows(&[&self.cls, &tokens])?;
        let pos = self.pos_emb.slice_rows(0, rows)?;
        let mut h = seq.add(&pos)?;
        let mask = KeyMask::all_visible(rows, rows);
        for block in &self.blocks {
            h = block.forward(&h, &mask)?;
        }
        Ok(InstructionEncoding {
            context: h,
            token_count: token_ids.len(),
        })
    }

    /// Fuses the contextual stream with a phrase-guided reading of it.
    /// `direction_rows` and `landmark_rows` are sequence row indices
    /// (see [`InstructionEncoding::rows_for_tokens`]).
    pub fn fuse(
        &self,
        encoding: &InstructionEncoding,
        direction_rows: &[usize],
        landmark_rows: &[usize],
    ) -> Result<GatedInstruction> {
        let context = &encoding.context;
        let (rows, _) = context.dims();
        for &r in direction_rows.iter().chain(landmark_rows) {
            if r >= rows {
                return Err(Error::contract(format!(
                    "phrase row {r} out of range for sequence of {rows}"
                )));
            }
        }
        let keys = if direction_rows.is_empty() && landmark_rows.is_empty() {
            self.null_kv.clone()
        } else {
            let mut all = direction_rows.to_vec();
            all.extend_from_slice(landmark_rows);
            context.gather_rows(&all)?
        };
        let (kv_rows, _) = keys.dims();
        let guided =
            self.phrase_attention
                .forward(context, &keys, &KeyMask::all_visible(rows, kv_rows))?;
        let preact = guided
            .matmul(&self.w_guided)?
            .add(&context.matmul(&self.w_context)?)?
            .add(&self.gate_bias)?;
        let gate = preact.sigmoid()?;
        let fused = gate
            .mul(&guided)?
            .add(&gate.one_minus()?.mul(context)?)?;
        Ok(GatedInstruction {
            fused,
            gate,
            guided,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_cfg() -> IglConfig {
        IglConfig {
            vocab_size: 12,
            d_m: 8,
            heads: 2,
            layers: 1,
            max_len: 16,
        }
    }

    fn build(seed: u64) -> (ParamStore, InstructionEncoder) {
        let mut store = ParamStore::new();
        let enc = InstructionEncoder::new(&mut store, "igl", small_cfg(), &mut rng(seed)).unwrap();
        (store, enc)
    }

    #[test]
    fn encode_prepends_classification_row() {
        let (_store, enc) = build(1);
        let out = enc.encode(&[3, 1, 4, 1, 5]).unwrap();
        assert_eq!(out.context.shape(), &[6, 8]);
        assert_eq!(out.seq_len(), 6);
        assert_eq!(out.row_for_token(0).unwrap(), 1);
        assert_eq!(out.rows_for_tokens(&[0, 4]).unwrap(), vec![1, 5]);
        assert!(out.row_for_token(5).is_err());
    }

    #[test]
    fn encode_enforces_length_and_vocabulary() {
        let (_store, enc) = build(2);
        assert!(enc.encode(&[]).is_err());
        assert!(enc.encode(&[0; 16]).is_err());
        assert!(enc.encode(&[12]).is_err());
    }

    #[test]
    fn same_seed_and_input_is_bitwise_stable() {
        let (_s1, e1) = build(7);
        let (_s2, e2) = build(7);
        let ids = [2usize, 9, 4];
        let a = e1.encode(&ids).unwrap();
        let b = e2.encode(&ids).unwrap();
        assert_eq!(a.context.to_vec(), b.context.to_vec());
        let fa = e1.fuse(&a, &[1], &[3]).unwrap();
        let fb = e2.fuse(&b, &[1], &[3]).unwrap();
        assert_eq!(fa.fused.to_vec(), fb.fused.to_vec());
    }

    #[test]
    fn gate_is_open_and_fusion_stays_inside_envelope() {
        let (_store, enc) = build(3);
        let mut r = rng(99);
        for _ in 0..20 {
            let len = r.random_range(2..10usize);
            let ids: Vec<usize> = (0..len).map(|_| r.random_range(0..12)).collect();
            let encoding = enc.encode(&ids).unwrap();
            let dir_rows = vec![1];
            let lm_rows = vec![encoding.seq_len() - 1];
            let out = enc.fuse(&encoding, &dir_rows, &lm_rows).unwrap();
            let gate = out.gate.to_vec();
            assert_eq!(gate.len(), encoding.seq_len());
            for w in &gate {
                assert!(*w > 0.0 && *w < 1.0, "gate {w} not strictly inside (0,1)");
            }
            let fused = out.fused.to_vec();
            let guided = out.guided.to_vec();
            let ctx = encoding.context.to_vec();
            for i in 0..fused.len() {
                let lo = guided[i].min(ctx[i]) - 1e-12;
                let hi = guided[i].max(ctx[i]) + 1e-12;
                assert!(
                    fused[i] >= lo && fused[i] <= hi,
                    "fused[{i}] = {} outside [{lo}, {hi}]",
                    fused[i]
                );
            }
        }
    }

    #[test]
    fn saturated_gate_bias_selects_one_stream() {
        let (store, enc) = build(4);
        let encoding = enc.encode(&[1, 2, 3]).unwrap();
        store.get("igl.gate.b").unwrap().set_data(&[40.0]).unwrap();
        let hi = enc.fuse(&encoding, &[1], &[2]).unwrap();
        assert_eq!(hi.fused.to_vec(), hi.guided.to_vec());

        store.get("igl.gate.b").unwrap().set_data(&[-40.0]).unwrap();
        let lo = enc.fuse(&encoding, &[1], &[2]).unwrap();
        let ctx = encoding.context.to_vec();
        for (f, c) in lo.fused.to_vec().iter().zip(&ctx) {
            assert!((f - c).abs() <= 1e-15 * c.abs().max(1.0), "{f} vs {c}");
        }
    }

    #[test]
    fn zeroed_phrase_attention_leaves_pure_context_blend() {
        let (store, enc) = build(5);
        for name in ["igl.phr.wo", "igl.phr.bo"] {
            let t = store.get(name).unwrap();
            t.set_data(&vec![0.0; t.len()]).unwrap();
        }
        let encoding = enc.encode(&[5, 6]).unwrap();
        let out = enc.fuse(&encoding, &[1], &[]).unwrap();
        assert_eq!(out.guided.to_vec(), vec![0.0; out.guided.len()]);
        let gate = out.gate.to_vec();
        let ctx = encoding.context.to_vec();
        let fused = out.fused.to_vec();
        let (rows, cols) = encoding.context.dims();
        for i in 0..rows {
            for j in 0..cols {
                let expect = (1.0 - gate[i]) * ctx[i * cols + j];
                assert_eq!(fused[i * cols + j], expect);
            }
        }
    }

    #[test]
    fn null_row_serves_when_no_phrases_found() {
        let (store, enc) = build(6);
        let encoding = enc.encode(&[7, 8, 9]).unwrap();
        let out = enc.fuse(&encoding, &[], &[]).unwrap();
        assert_eq!(out.fused.shape(), encoding.context.shape());

        let probe = Tensor::constant(
            out.fused.shape(),
            (0..out.fused.len()).map(|i| (i % 5) as f64 - 2.0).collect(),
        )
        .unwrap();
        out.fused
            .mul(&probe)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        let null_grad = store.get("igl.null").unwrap().grad().unwrap();
        assert!(null_grad.iter().any(|v| v.abs() > 1e-12));
    }

    #[test]
    fn fuse_rejects_out_of_range_rows() {
        let (_store, enc) = build(8);
        let encoding = enc.encode(&[1, 2]).unwrap();
        assert!(enc.fuse(&encoding, &[3], &[]).is_err());
        assert!(enc.fuse(&encoding, &[], &[9]).is_err());
    }
}
