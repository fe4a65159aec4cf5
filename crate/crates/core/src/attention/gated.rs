//! Gated multi-head scaled dot-product attention over `[B, N, C]` tokens.

use crate::error::{Error, Result};
use crate::rng::ParamSet;
use crate::tensor::{Linear, PoolKind, Tensor};

/// Self-attention with one sigmoid gate per head, computed from the mean token.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttnParams {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    /// `C → heads`, with bias.
    pub gate: Linear,
}

/// Cross-attention: queries from one modality, keys/values from the other,
/// output gated elementwise by `sigmoid(f_q · W_g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttnParams {
    pub heads: usize,
    pub query: Linear,
    /// `C → 2C`; the first `C` columns produce keys, the rest values.
    pub key_value: Linear,
    /// `C → C`, with bias.
    pub gate: Linear,
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || !channels.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "{channels} channels do not split into {heads} heads"
        )));
    }
    Ok(())
}

impl SelfAttnParams {
    pub fn init(ps: &ParamSet, channels: usize, heads: usize) -> Result<Self> {
        check_heads(channels, heads)?;
        let mut gate = ps.linear("gate", channels, heads);
        gate.bias = Some(Tensor::zeros(&[heads]));
        Ok(SelfAttnParams {
            heads,
            query: ps.linear("query", channels, channels),
            key: ps.linear("key", channels, channels),
            value: ps.linear("value", channels, channels),
            output: ps.linear("output", channels, channels),
            gate,
        })
    }

    pub fn channels(&self) -> usize {
        self.query.d_in()
    }
}

impl CrossAttnParams {
    pub fn init(ps: &ParamSet, channels: usize, heads: usize) -> Result<Self> {
        check_heads(channels, heads)?;
        let mut gate = ps.linear("gate", channels, channels);
        gate.bias = Some(Tensor::zeros(&[channels]));
        Ok(CrossAttnParams {
            heads,
            query: ps.linear("query", channels, channels),
            key_value: ps.linear("key_value", channels, 2 * channels),
            gate,
        })
    }

    pub fn channels(&self) -> usize {
        self.query.d_in()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnOutput {
    pub out: Tensor,
    /// Softmax weights `[B, heads, N, M]`.
    pub attn: Tensor,
    /// `[B, 1, heads]` for self-attention, `[B, N, C]` for cross-attention.
    pub gate: Tensor,
}

/// `[B, N, C]` → `[B, heads, N, C / heads]`.
fn split_heads(t: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, n, c) = (t.dim(0), t.dim(1), t.dim(2));
    Ok(t.reshape(&[b, n, heads, c / heads])?.permute(&[0, 2, 1, 3]))
}

/// `[B, heads, N, d]` → `[B, N, heads · d]`.
fn merge_heads(t: &Tensor) -> Result<Tensor> {
    let (b, h, n, d) = (t.dim(0), t.dim(1), t.dim(2), t.dim(3));
    t.permute(&[0, 2, 1, 3]).into_shape(&[b, n, h * d])
}

fn attend(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<(Tensor, Tensor)> {
    let (qh, kh, vh) = (split_heads(q, heads)?, split_heads(k, heads)?, split_heads(v, heads)?);
    let d = qh.dim(3) as f64;
    let scores = qh.matmul(&kh.transpose_last())?.scale(1.0 / d.sqrt());
    let attn = scores.softmax(3)?;
    let ctx = attn.matmul(&vh)?;
    Ok((ctx, attn))
}

fn check_tokens(f: &Tensor, channels: usize) -> Result<()> {
    if f.rank() != 3 || f.dim(2) != channels {
        return Err(Error::dim(format!(
            "expected [B, N, {channels}] tokens, got {:?}",
            f.shape()
        )));
    }
    Ok(())
}

pub fn gated_self_attention(f: &Tensor, p: &SelfAttnParams) -> Result<AttnOutput> {
    check_tokens(f, p.channels())?;
    let b = f.dim(0);
    let (ctx, attn) = attend(&p.query.forward(f)?, &p.key.forward(f)?, &p.value.forward(f)?, p.heads)?;
    let mean_token = f.pool(PoolKind::Mean, &[1])?;
    let gate = p.gate.forward(&mean_token)?.sigmoid();
    let gated = ctx.mul(&gate.reshape(&[b, p.heads, 1, 1])?)?;
    Ok(AttnOutput {
        out: p.output.forward(&merge_heads(&gated)?)?,
        attn,
        gate,
    })
}

pub fn gated_cross_attention(fq: &Tensor, fkv: &Tensor, p: &CrossAttnParams) -> Result<AttnOutput> {
    let c = p.channels();
    check_tokens(fq, c)?;
    check_tokens(fkv, c)?;
    if fq.dim(0) != fkv.dim(0) {
        return Err(Error::dim("query and key/value batch sizes differ"));
    }
    let q = p.query.forward(fq)?;
    let kv = p.key_value.forward(fkv)?.split(2, &[c, c])?;
    let (ctx, attn) = attend(&q, &kv[0], &kv[1], p.heads)?;
    let gate = p.gate.forward(fq)?.sigmoid();
    Ok(AttnOutput {
        out: merge_heads(&ctx)?.mul(&gate)?,
        attn,
        gate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn row_sums_ok(attn: &Tensor) -> bool {
        let m = attn.dim(3);
        attn.data()
            .chunks(m)
            .all(|row| (row.iter().sum::<f64>() - 1.0).abs() < 1e-9)
    }

    #[test]
    fn single_token_self_attention() {
        let p = SelfAttnParams::init(&ParamSet::new(1), 8, 4).unwrap();
        let f = Rng::new(1, 0).uniform_tensor(&[1, 1, 8], -1.0, 1.0);
        let out = gated_self_attention(&f, &p).unwrap();
        assert!(out.attn.data().iter().all(|&a| a == 1.0));
        // With one token the context is V itself; gate per head, then project.
        let v = p.value.forward(&f).unwrap();
        let g = p.gate.forward(&f).unwrap().sigmoid();
        let gated = Tensor::from_fn(&[1, 1, 8], |i| v.at(i) * g.data()[i[2] / 2]);
        let expect = p.output.forward(&gated).unwrap();
        assert!(out.out.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn closed_gates_annihilate_output() {
        let mut p = SelfAttnParams::init(&ParamSet::new(2), 8, 4).unwrap();
        p.gate.bias = Some(Tensor::full(&[4], f64::NEG_INFINITY));
        let f = Rng::new(2, 0).uniform_tensor(&[2, 5, 8], -1.0, 1.0);
        let out = gated_self_attention(&f, &p).unwrap();
        assert!(out.out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = SelfAttnParams::init(&ParamSet::new(3), 8, 2).unwrap();
        let f = Rng::new(3, 0).uniform_tensor(&[2, 7, 8], -4.0, 4.0);
        let out = gated_self_attention(&f, &p).unwrap();
        assert_eq!(out.attn.shape(), &[2, 2, 7, 7]);
        assert!(row_sums_ok(&out.attn));
        assert_eq!(out.out.shape(), f.shape());
    }

    #[test]
    fn cross_attention_on_constant_keys() {
        let p = CrossAttnParams::init(&ParamSet::new(4), 8, 4).unwrap();
        let fq = Rng::new(4, 0).uniform_tensor(&[1, 6, 8], -1.0, 1.0);
        let token = Rng::new(4, 1).uniform_tensor(&[1, 1, 8], -1.0, 1.0);
        let fkv = Tensor::ones(&[1, 3, 8]).mul(&token).unwrap();
        let out = gated_cross_attention(&fq, &fkv, &p).unwrap();
        let value = p.key_value.forward(&token).unwrap().split(2, &[8, 8]).unwrap()[1].clone();
        let gate = p.gate.forward(&fq).unwrap().sigmoid();
        let expect = Tensor::ones(&[1, 6, 8]).mul(&value).unwrap().mul(&gate).unwrap();
        assert!(out.out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn zero_gate_projection_halves_cross_attention() {
        let mut p = CrossAttnParams::init(&ParamSet::new(5), 4, 2).unwrap();
        let fq = Rng::new(5, 0).uniform_tensor(&[1, 3, 4], -1.0, 1.0);
        let fkv = Rng::new(5, 1).uniform_tensor(&[1, 5, 4], -1.0, 1.0);
        p.gate = Linear::zeros(4, 4);
        let half = gated_cross_attention(&fq, &fkv, &p).unwrap();
        let q = p.query.forward(&fq).unwrap();
        let kv = p.key_value.forward(&fkv).unwrap().split(2, &[4, 4]).unwrap();
        let (ctx, _) = attend(&q, &kv[0], &kv[1], 2).unwrap();
        let ungated = merge_heads(&ctx).unwrap();
        assert!(half.out.max_abs_diff(&ungated.scale(0.5)) < 1e-15);
        assert!(row_sums_ok(&half.attn));
    }

    #[test]
    fn single_key_gets_full_weight() {
        let p = CrossAttnParams::init(&ParamSet::new(6), 4, 2).unwrap();
        let fq = Rng::new(6, 0).uniform_tensor(&[1, 3, 4], -1.0, 1.0);
        let fkv = Rng::new(6, 1).uniform_tensor(&[1, 1, 4], -1.0, 1.0);
        let out = gated_cross_attention(&fq, &fkv, &p).unwrap();
        assert!(out.attn.data().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let p = CrossAttnParams::init(&ParamSet::new(7), 4, 2).unwrap();
        let r = gated_cross_attention(&Tensor::zeros(&[1, 2, 4]), &Tensor::zeros(&[1, 2, 6]), &p);
        assert!(matches!(r, Err(Error::Dimension(_))));
        assert!(SelfAttnParams::init(&ParamSet::new(7), 6, 4).is_err());
    }
}
