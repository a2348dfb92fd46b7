//! Transformer-encoder classifier.
//!
//! Each standardized feature vector of width `input_len` is read as a
//! sequence of `input_len` positions with `channels` values each. The
//! sequence passes through `num_blocks` pre-norm encoder blocks, is averaged
//! over positions, and a dense head maps the pooled vector to class
//! probabilities. There is no positional encoding, so pooled outputs are
//! invariant to a consistent permutation of the positions. `Pooling::Channels`
//! averages over channels instead and keeps one value per position.

pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::rng::SeededRng;
use crate::tape::{NormScope, Tape, Var};
use crate::tensor::Tensor;

pub use layers::{BlockSettings, Activation};
pub use params::{AttentionParams, ClassifierParams, Dense, EncoderBlockParams, FfnParams, Mlp, NormParams};
pub use train::{train, evaluate_loss_accuracy};

/// Rows per tape when a batch is processed. Fixed so that results do not
/// depend on the number of worker threads.
pub const CHUNK_ROWS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub head_size: usize,
    pub num_heads: usize,
    /// Hidden width of the position-wise feed-forward layer.
    pub filters: usize,
    pub num_blocks: usize,
    pub dropout: f64,
    pub input_len: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub mlp_units: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub norm_scope: NormScope,
    pub norm_eps: f64,
    pub pooling: Pooling,
}

/// Axis the encoder output is averaged over before the dense head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Over sequence positions, giving `channels` values per row.
    #[default]
    Positions,
    /// Over channels, giving `input_len` values per row. Not permutation
    /// invariant.
    Channels,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            head_size: 64,
            num_heads: 4,
            filters: 64,
            num_blocks: 2,
            dropout: 0.1,
            input_len: crate::FEATURE_DIM,
            channels: 1,
            num_classes: crate::NUM_CLASSES,
            mlp_units: vec![64],
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 256,
            epochs: 10,
            norm_scope: NormScope::All,
            norm_eps: 1e-6,
            pooling: Pooling::Positions,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.head_size == 0 || self.num_heads == 0 {
            return bad("head_size and num_heads must be at least 1");
        }
        if self.filters == 0 || self.input_len == 0 || self.channels == 0 {
            return bad("filters, input_len and channels must be at least 1");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.mlp_units.contains(&0) {
            return bad("mlp_units entries must be positive");
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning_rate must be positive and batch_size at least 1");
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be positive");
        }
        Ok(())
    }

    /// Width of one input row.
    pub fn row_width(&self) -> usize {
        self.input_len * self.channels
    }

    /// Width of the vector fed to the dense head.
    pub fn pooled_width(&self) -> usize {
        match self.pooling {
            Pooling::Positions => self.channels,
            Pooling::Channels => self.input_len,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn block_settings(&self) -> BlockSettings {
        BlockSettings {
            dropout: self.dropout,
            norm_scope: self.norm_scope,
            norm_eps: self.norm_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub config: ModelConfig,
    pub params: ClassifierParams,
}

impl Classifier {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let blocks = (0..config.num_blocks)
            .map(|_| EncoderBlockParams {
                attn_norm: NormParams::identity(c),
                attention: AttentionParams::init(c, config.head_size, config.num_heads, rng),
                ffn_norm: NormParams::identity(c),
                ffn: FfnParams::init(c, config.filters, rng),
            })
            .collect();
        let mut widths = vec![config.pooled_width()];
        widths.extend(&config.mlp_units);
        widths.push(config.num_classes);
        let head = Mlp::init(&widths, rng);
        Ok(Self {
            config,
            params: ClassifierParams { blocks, head },
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.visit().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records the parameters on `tape` as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> ClassifierParams<Var> {
        self.params.map(&mut |t| tape.param(t))
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.config.row_width() {
            return Err(Error::FeatureWidth {
                expected: self.config.row_width(),
                got: width,
            });
        }
        Ok(())
    }

    /// Class probabilities for `rows` (each of width `input_len·channels`),
    /// recorded on `tape`. Returns a `rows.len() × num_classes` variable.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &ClassifierParams<Var>,
        rows: &[&[f64]],
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let logits = self.logits_on_tape(tape, bound, rows, training, rng)?;
        tape.softmax_rows(logits)
    }

    /// Pre-softmax scores; see [`Classifier::forward_on_tape`].
    pub fn logits_on_tape(
        &self,
        tape: &mut Tape,
        bound: &ClassifierParams<Var>,
        rows: &[&[f64]],
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let pooled = self.pooled_on_tape(tape, bound, rows, training, rng)?;
        let drop = if training { self.config.dropout } else { 0.0 };
        layers::mlp(tape, pooled, &bound.head, Activation::Relu, drop, rng)
    }

    /// Encoder output averaged along the configured axis:
    /// `rows.len() × pooled_width`.
    pub fn pooled_on_tape(
        &self,
        tape: &mut Tape,
        bound: &ClassifierParams<Var>,
        rows: &[&[f64]],
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset("forward on zero rows".into()));
        }
        let settings = self.config.block_settings();
        let shape = [self.config.input_len, self.config.channels];
        let mut pooled = Vec::with_capacity(rows.len());
        for row in rows {
            self.check_width(row.len())?;
            let mut h = tape.constant(Tensor::new(shape.to_vec(), row.to_vec())?);
            for block in &bound.blocks {
                h = layers::encoder_block(tape, h, block, settings, training, rng)?;
            }
            pooled.push(match self.config.pooling {
                Pooling::Positions => tape.mean_rows(h)?,
                Pooling::Channels => {
                    let t = tape.transpose(h)?;
                    tape.mean_rows(t)?
                }
            });
        }
        tape.concat_rows(&pooled)
    }

    /// Eval-mode probabilities, `B × num_classes`. Each row sums to 1.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_width(batch.cols())?;
        let rows: Vec<&[f64]> = (0..batch.rows()).map(|i| batch.row(i)).collect();
        let data = self.probabilities(&rows)?;
        Ok(Tensor::from_parts(vec![rows.len(), self.config.num_classes], data))
    }

    /// Eval-mode probabilities for a list of rows, flattened row-major.
    pub fn probabilities(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        let chunks: Vec<Result<Vec<f64>>> = rows
            .par_chunks(CHUNK_ROWS)
            .map(|chunk| {
                let mut tape = Tape::new();
                let bound = self.params.map(&mut |t| tape.constant(t.clone()));
                // eval mode draws no random numbers
                let mut rng = SeededRng::new(0);
                let probs = self.forward_on_tape(&mut tape, &bound, chunk, false, &mut rng)?;
                Ok(tape.value(probs).data().to_vec())
            })
            .collect();
        let mut out = Vec::with_capacity(rows.len() * self.config.num_classes);
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Most probable class per row; ties go to the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let probs = self.forward(batch)?;
        Ok(argmax_rows(probs.data(), self.config.num_classes))
    }
}

/// Row-wise argmax with ties broken toward the lowest index.
pub fn argmax_rows(probs: &[f64], width: usize) -> Vec<usize> {
    probs
        .chunks(width)
        .map(|row| {
            let mut best = 0;
            for (j, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            head_size: 2,
            num_heads: 2,
            filters: 3,
            num_blocks: 1,
            dropout: 0.0,
            input_len: 4,
            channels: 1,
            num_classes: 15,
            mlp_units: vec![5],
            batch_size: 4,
            epochs: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn channel_pooling_keeps_positions() {
        let cfg = ModelConfig { pooling: Pooling::Channels, channels: 2, ..tiny_config() };
        let model = Classifier::new(cfg, &mut SeededRng::new(1)).unwrap();
        assert_eq!(model.params.head.layers[0].weight.shape(), &[4, 5]);
        let row = [0.1, -0.3, 0.5, 0.2, 0.0, 1.0, -1.0, 0.4];
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let pooled = model.pooled_on_tape(&mut tape, &bound, &[&row], false, &mut SeededRng::new(2)).unwrap();
        assert_eq!(tape.value(pooled).shape(), &[1, 4]);
    }

    #[test]
    fn argmax_ties_go_low() {
        let mut row = vec![0.0; 15];
        row[2] = 0.4;
        row[7] = 0.4;
        assert_eq!(argmax_rows(&row, 15), vec![2]);
        let mut row = vec![0.0; 15];
        row[0] = 0.1;
        row[1] = 0.9;
        assert_eq!(argmax_rows(&row, 15), vec![1]);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig { dropout: 1.0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { num_heads: 0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn forward_rows_are_distributions() {
        let mut rng = SeededRng::new(11);
        let model = Classifier::new(tiny_config(), &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let batch = Tensor::from_rows(&rows).unwrap();
        let probs = model.forward(&batch).unwrap();
        assert_eq!(probs.shape(), &[5, 15]);
        for i in 0..5 {
            let s: f64 = probs.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(probs.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn wrong_width_names_expected() {
        let mut rng = SeededRng::new(1);
        let model = Classifier::new(ModelConfig { num_blocks: 1, ..ModelConfig::default() }, &mut rng).unwrap();
        let err = model.forward(&Tensor::zeros(&[1, 94])).unwrap_err();
        assert!(err.to_string().contains("95"), "{err}");
    }
}
