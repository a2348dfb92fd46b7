//! Encoder building blocks recorded on a [`Tape`].

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tape::{NormScope, Tape, Var};
use crate::tensor::Tensor;

use super::params::{AttentionParams, Dense, EncoderBlockParams, FfnParams, Mlp, NormParams};

/// Settings an encoder block needs besides its weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSettings {
    pub dropout: f64,
    pub norm_scope: NormScope,
    pub norm_eps: f64,
}

/// Scaled dot-product attention: `softmax(Q·Kᵀ / sqrt(d_k)) · V`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] {
        return Err(Error::shape("attention", &qs, &ks));
    }
    if ks[0] != vs[0] {
        return Err(Error::shape("attention", &ks, &vs));
    }
    let d_k = qs[1] as f64;
    let scores = tape.matmul_nt(q, k)?;
    let scaled = tape.scale(scores, 1.0 / d_k.sqrt())?;
    let weights = tape.softmax_rows(scaled)?;
    tape.matmul(weights, v)
}

/// Self-attention with `h` heads: `Concat(head_1..head_h) · W_O`, where
/// `head_i = attention(x·W_i^Q, x·W_i^K, x·W_i^V)`.
pub fn multi_head(tape: &mut Tape, x: Var, p: &AttentionParams<Var>) -> Result<Var> {
    let mut heads = Vec::with_capacity(p.num_heads());
    for ((wq, wk), wv) in p.query.iter().zip(&p.key).zip(&p.value) {
        let q = tape.matmul(x, *wq)?;
        let k = tape.matmul(x, *wk)?;
        let v = tape.matmul(x, *wv)?;
        heads.push(attention(tape, q, k, v)?);
    }
    let concat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    tape.matmul(concat, p.output)
}

/// `max(0, x·W1 + b1)·W2 + b2`, applied to every row (sequence position)
/// independently, i.e. a width-1 convolution.
pub fn position_ffn(tape: &mut Tape, x: Var, p: &FfnParams<Var>) -> Result<Var> {
    let h = tape.matmul(x, p.w1)?;
    let h = tape.add_row(h, p.b1)?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, p.w2)?;
    tape.add_row(o, p.b2)
}

pub fn layer_norm(tape: &mut Tape, x: Var, p: &NormParams<Var>, scope: NormScope, eps: f64) -> Result<Var> {
    tape.norm(x, p.gain, p.bias, scope, eps)
}

/// Pre-norm encoder block:
/// `a = x + Dropout(MultiHead(LN(x)))`, `out = a + Dropout(FFN(LN(a)))`.
pub fn encoder_block(
    tape: &mut Tape,
    x: Var,
    p: &EncoderBlockParams<Var>,
    settings: BlockSettings,
    training: bool,
    rng: &mut SeededRng,
) -> Result<Var> {
    let drop = if training { settings.dropout } else { 0.0 };
    let n1 = layer_norm(tape, x, &p.attn_norm, settings.norm_scope, settings.norm_eps)?;
    let attn = multi_head(tape, n1, &p.attention)?;
    let attn = tape.dropout(attn, drop, rng)?;
    let a = tape.add(x, attn)?;
    let n2 = layer_norm(tape, a, &p.ffn_norm, settings.norm_scope, settings.norm_eps)?;
    let ff = position_ffn(tape, n2, &p.ffn)?;
    let ff = tape.dropout(ff, drop, rng)?;
    tape.add(a, ff)
}

pub fn dense(tape: &mut Tape, x: Var, p: &Dense<Var>) -> Result<Var> {
    let y = tape.matmul(x, p.weight)?;
    tape.add_row(y, p.bias)
}

/// Hidden layer activation of an [`Mlp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

/// Dense stack with `act` (and optional dropout) after every layer except
/// the last, which stays linear.
pub fn mlp(
    tape: &mut Tape,
    x: Var,
    p: &Mlp<Var>,
    act: Activation,
    dropout: f64,
    rng: &mut SeededRng,
) -> Result<Var> {
    let mut h = x;
    let last = p.layers.len().saturating_sub(1);
    for (i, layer) in p.layers.iter().enumerate() {
        h = dense(tape, h, layer)?;
        if i < last {
            h = match act {
                Activation::Relu => tape.relu(h)?,
                Activation::LeakyRelu(s) => tape.leaky_relu(h, s)?,
            };
            h = tape.dropout(h, dropout, rng)?;
        }
    }
    Ok(h)
}

/// Tensor-level attention, for callers outside a training loop.
pub fn attention_tensors(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = attention(&mut tape, q, k, v)?;
    Ok(tape.value(out).clone())
}

/// Tensor-level row softmax.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(x.clone());
    let out = tape.softmax_rows(x)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn bind_attention(tape: &mut Tape, p: &AttentionParams) -> AttentionParams<Var> {
        p.map(&mut |w| tape.constant(w.clone()))
    }

    #[test]
    fn single_key_gets_full_weight() {
        let out = attention_tensors(&t(&[1, 1], &[0.0]), &t(&[1, 1], &[0.0]), &t(&[1, 1], &[5.0])).unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = t(&[2, 2], &[0.3, -1.0, 2.0, 0.5]);
        let k = t(&[3, 2], &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let v = t(&[3, 1], &[1.0, 2.0, 6.0]);
        let out = attention_tensors(&q, &k, &v).unwrap();
        for &o in out.data() {
            assert!((o - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_shape_errors() {
        let q = Tensor::zeros(&[2, 3]);
        let k = Tensor::zeros(&[2, 2]);
        assert!(attention_tensors(&q, &k, &k).is_err());
        let k = Tensor::zeros(&[2, 3]);
        let v = Tensor::zeros(&[4, 1]);
        assert!(attention_tensors(&q, &k, &v).is_err());
    }

    #[test]
    fn single_head_identity_collapses_to_attention() {
        let x = t(&[3, 1], &[0.5, -1.0, 2.0]);
        let one = t(&[1, 1], &[1.0]);
        let p = AttentionParams {
            query: vec![one.clone()],
            key: vec![one.clone()],
            value: vec![one.clone()],
            output: one,
        };
        let mut tape = Tape::new();
        let bound = bind_attention(&mut tape, &p);
        let xv = tape.constant(x.clone());
        let mh = multi_head(&mut tape, xv, &bound).unwrap();
        let direct = attention_tensors(&x, &x, &x).unwrap();
        assert!(tape.value(mh).max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn zero_projections_give_zero_output() {
        let mut rng = SeededRng::new(3);
        let mut p = AttentionParams::init(2, 3, 2, &mut rng);
        for w in p.query.iter_mut().chain(&mut p.key).chain(&mut p.value) {
            *w = Tensor::zeros(w.shape());
        }
        p.output = Tensor::zeros(p.output.shape());
        let mut tape = Tape::new();
        let bound = bind_attention(&mut tape, &p);
        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let out = multi_head(&mut tape, x, &bound).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ffn_examples() {
        let one = t(&[1, 1], &[1.0]);
        let zero = t(&[1], &[0.0]);
        let p = FfnParams {
            w1: one.clone(),
            b1: zero.clone(),
            w2: one,
            b2: zero,
        };
        let mut tape = Tape::new();
        let bound = p.map(&mut |w| tape.constant(w.clone()));
        let x = tape.constant(t(&[2, 1], &[-1.0, 2.0]));
        let y = position_ffn(&mut tape, x, &bound).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);

        let p = FfnParams {
            w1: Tensor::zeros(&[1, 4]),
            b1: Tensor::zeros(&[4]),
            w2: Tensor::zeros(&[4, 1]),
            b2: t(&[1], &[0.7]),
        };
        let bound = p.map(&mut |w| tape.constant(w.clone()));
        let x = tape.constant(t(&[3, 1], &[-1.0, 2.0, 9.0]));
        let y = position_ffn(&mut tape, x, &bound).unwrap();
        assert_eq!(tape.value(y).data(), &[0.7, 0.7, 0.7]);
    }
}
