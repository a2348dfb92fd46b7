//! Parameter containers.
//!
//! Every container is generic over the leaf type: `P = Tensor` for stored
//! weights, `P = Var` once the weights are bound to a [`Tape`](crate::Tape).
//! `visit` and `visit_mut` enumerate leaves in one fixed order; that order is
//! the contract shared by the optimizer, gradient collection and checkpoints.

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub type Named<'a, P> = Vec<(String, &'a P)>;
pub type NamedMut<'a, P> = Vec<(String, &'a mut P)>;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Fully connected layer `x · weight + bias`, `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<P = Tensor> {
    pub weight: P,
    pub bias: P,
}

impl Dense<Tensor> {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            weight: Tensor::glorot(&[fan_in, fan_out], fan_in, fan_out, rng),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

impl<P> Dense<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Dense<Q> {
        Dense {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Named<'a, P>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a, P>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Per-head query/key/value projections (`channels × head_size` each) and the
/// output projection (`num_heads·head_size × channels`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams<P = Tensor> {
    pub query: Vec<P>,
    pub key: Vec<P>,
    pub value: Vec<P>,
    pub output: P,
}

impl AttentionParams<Tensor> {
    pub fn init(channels: usize, head_size: usize, num_heads: usize, rng: &mut SeededRng) -> Self {
        let proj = |rng: &mut SeededRng| {
            (0..num_heads)
                .map(|_| Tensor::glorot(&[channels, head_size], channels, head_size, rng))
                .collect::<Vec<_>>()
        };
        let query = proj(rng);
        let key = proj(rng);
        let value = proj(rng);
        let width = num_heads * head_size;
        Self {
            query,
            key,
            value,
            output: Tensor::glorot(&[width, channels], width, channels, rng),
        }
    }
}

impl<P> AttentionParams<P> {
    pub fn num_heads(&self) -> usize {
        self.query.len()
    }

    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> AttentionParams<Q> {
        AttentionParams {
            query: self.query.iter().map(&mut *f).collect(),
            key: self.key.iter().map(&mut *f).collect(),
            value: self.value.iter().map(&mut *f).collect(),
            output: f(&self.output),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Named<'a, P>) {
        for (name, group) in [("query", &self.query), ("key", &self.key), ("value", &self.value)] {
            for (i, p) in group.iter().enumerate() {
                out.push((join(prefix, &format!("{name}.{i}")), p));
            }
        }
        out.push((join(prefix, "output"), &self.output));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a, P>) {
        for (name, group) in [
            ("query", &mut self.query),
            ("key", &mut self.key),
            ("value", &mut self.value),
        ] {
            for (i, p) in group.iter_mut().enumerate() {
                out.push((join(prefix, &format!("{name}.{i}")), p));
            }
        }
        out.push((join(prefix, "output"), &mut self.output));
    }
}

/// Position-wise feed-forward weights: `channels → filters → channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnParams<P = Tensor> {
    pub w1: P,
    pub b1: P,
    pub w2: P,
    pub b2: P,
}

impl FfnParams<Tensor> {
    pub fn init(channels: usize, filters: usize, rng: &mut SeededRng) -> Self {
        Self {
            w1: Tensor::glorot(&[channels, filters], channels, filters, rng),
            b1: Tensor::zeros(&[filters]),
            w2: Tensor::glorot(&[filters, channels], filters, channels, rng),
            b2: Tensor::zeros(&[channels]),
        }
    }
}

impl<P> FfnParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> FfnParams<Q> {
        FfnParams {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Named<'a, P>) {
        out.push((join(prefix, "w1"), &self.w1));
        out.push((join(prefix, "b1"), &self.b1));
        out.push((join(prefix, "w2"), &self.w2));
        out.push((join(prefix, "b2"), &self.b2));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a, P>) {
        out.push((join(prefix, "w1"), &mut self.w1));
        out.push((join(prefix, "b1"), &mut self.b1));
        out.push((join(prefix, "w2"), &mut self.w2));
        out.push((join(prefix, "b2"), &mut self.b2));
    }
}

/// Per-channel affine map applied after normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams<P = Tensor> {
    pub gain: P,
    pub bias: P,
}

impl NormParams<Tensor> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gain: Tensor::full(&[channels], 1.0),
            bias: Tensor::zeros(&[channels]),
        }
    }
}

impl<P> NormParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> NormParams<Q> {
        NormParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Named<'a, P>) {
        out.push((join(prefix, "gain"), &self.gain));
        out.push((join(prefix, "bias"), &self.bias));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a, P>) {
        out.push((join(prefix, "gain"), &mut self.gain));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlockParams<P = Tensor> {
    pub attn_norm: NormParams<P>,
    pub attention: AttentionParams<P>,
    pub ffn_norm: NormParams<P>,
    pub ffn: FfnParams<P>,
}

impl<P> EncoderBlockParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> EncoderBlockParams<Q> {
        EncoderBlockParams {
            attn_norm: self.attn_norm.map(f),
            attention: self.attention.map(f),
            ffn_norm: self.ffn_norm.map(f),
            ffn: self.ffn.map(f),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Named<'a, P>) {
        self.attn_norm.visit(&join(prefix, "attn_norm"), out);
        self.attention.visit(&join(prefix, "attention"), out);
        self.ffn_norm.visit(&join(prefix, "ffn_norm"), out);
        self.ffn.visit(&join(prefix, "ffn"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a, P>) {
        self.attn_norm.visit_mut(&join(prefix, "attn_norm"), out);
        self.attention.visit_mut(&join(prefix, "attention"), out);
        self.ffn_norm.visit_mut(&join(prefix, "ffn_norm"), out);
        self.ffn.visit_mut(&join(prefix, "ffn"), out);
    }
}

/// Stack of dense layers; every layer but the last is followed by an
/// activation chosen by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<P = Tensor> {
    pub layers: Vec<Dense<P>>,
}

impl Mlp<Tensor> {
    /// Layers `widths[0] → widths[1] → … → widths[last]`.
    pub fn init(widths: &[usize], rng: &mut SeededRng) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect(),
        }
    }
}

impl<P> Mlp<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Mlp<Q> {
        Mlp {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Named<'a, P>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut NamedMut<'a, P>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// Encoder stack plus the dense head applied after global average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams<P = Tensor> {
    pub blocks: Vec<EncoderBlockParams<P>>,
    pub head: Mlp<P>,
}

impl<P> ClassifierParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ClassifierParams<Q> {
        ClassifierParams {
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            head: self.head.map(f),
        }
    }

    pub fn visit(&self) -> Named<'_, P> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("block{i}"), &mut out);
        }
        self.head.visit("head", &mut out);
        out
    }

    pub fn visit_mut(&mut self) -> NamedMut<'_, P> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("block{i}"), &mut out);
        }
        self.head.visit_mut("head", &mut out);
        out
    }
}
