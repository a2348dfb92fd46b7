//! Class-conditional GAN augmentation.
//!
//! One generator/discriminator pair is trained per class on that class's
//! standardized rows. Training alternates one discriminator step and one
//! generator step. The discriminator step sees generator output as a
//! constant; the generator step sees discriminator weights as constants, so
//! neither update can reach the other network's parameters.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::layers::{mlp, Activation};
use crate::model::params::Mlp;
use crate::optim::{Adam, AdamConfig};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Fewest real rows a class needs before a GAN is trained for it.
pub const MIN_CLASS_ROWS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub leaky_slope: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            feature_dim: crate::FEATURE_DIM,
            gen_hidden: vec![64, 64],
            disc_hidden: vec![64, 32],
            learning_rate: 5e-4,
            beta1: 0.5,
            beta2: 0.999,
            leaky_slope: 0.2,
            steps: 2000,
            batch_size: 64,
            seed: 42,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gan: {m}")));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1");
        }
        if self.gen_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    fn gen_widths(&self) -> Vec<usize> {
        let mut w = vec![self.latent_dim];
        w.extend(&self.gen_hidden);
        w.push(self.feature_dim);
        w
    }

    fn disc_widths(&self) -> Vec<usize> {
        let mut w = vec![self.feature_dim];
        w.extend(&self.disc_hidden);
        w.push(1);
        w
    }
}

/// Generator `latent → features` (ReLU hidden, linear output) and
/// discriminator `features → (0, 1)` (leaky ReLU hidden, sigmoid output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanPair {
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub class: usize,
    pub seed: u64,
    pub steps_trained: usize,
}

pub fn init_gan(cfg: &GanConfig, rng: &mut SeededRng) -> Result<GanPair> {
    cfg.validate()?;
    let generator = Mlp::init(&cfg.gen_widths(), rng);
    let discriminator = Mlp::init(&cfg.disc_widths(), rng);
    Ok(GanPair {
        generator,
        discriminator,
        class: 0,
        seed: rng.seed(),
        steps_trained: 0,
    })
}

/// `n × latent_dim` standard normal draws.
pub fn sample_noise(cfg: &GanConfig, rng: &mut SeededRng, n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::InvalidShape {
            shape: vec![0, cfg.latent_dim],
            reason: "noise batch needs at least one row".into(),
        });
    }
    let data = (0..n * cfg.latent_dim).map(|_| rng.normal()).collect();
    Tensor::new(vec![n, cfg.latent_dim], data)
}

fn bind_params(tape: &mut Tape, m: &Mlp) -> Mlp<Var> {
    m.map(&mut |t| tape.param(t))
}

fn bind_constants(tape: &mut Tape, m: &Mlp) -> Mlp<Var> {
    m.map(&mut |t| tape.constant(t.clone()))
}

fn no_dropout() -> SeededRng {
    SeededRng::new(0)
}

/// Generator output on the tape.
pub fn generate_on_tape(tape: &mut Tape, gen: &Mlp<Var>, z: Var) -> Result<Var> {
    mlp(tape, z, gen, Activation::Relu, 0.0, &mut no_dropout())
}

/// Discriminator probability `D(x)` on the tape, one row per sample.
pub fn discriminate_on_tape(tape: &mut Tape, disc: &Mlp<Var>, x: Var, slope: f64) -> Result<Var> {
    let logits = mlp(tape, x, disc, Activation::LeakyRelu(slope), 0.0, &mut no_dropout())?;
    tape.sigmoid(logits)
}

/// Generator loss for noise `z`, built on `tape` with whatever binding the
/// caller chose for the two networks.
pub fn gen_loss_on_tape(tape: &mut Tape, gen: &Mlp<Var>, disc: &Mlp<Var>, z: Var, slope: f64) -> Result<Var> {
    let fake = generate_on_tape(tape, gen, z)?;
    let d_fake = discriminate_on_tape(tape, disc, fake, slope)?;
    tape.gen_loss(d_fake)
}

/// Discriminator loss on `real` rows and (constant) `fake` rows.
pub fn disc_loss_on_tape(tape: &mut Tape, disc: &Mlp<Var>, real: Var, fake: Var, slope: f64) -> Result<Var> {
    let d_real = discriminate_on_tape(tape, disc, real, slope)?;
    let d_fake = discriminate_on_tape(tape, disc, fake, slope)?;
    tape.disc_loss(d_real, d_fake)
}

/// Discriminator loss on given probabilities.
pub fn disc_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let r = tape.constant(d_real.clone());
    let f = tape.constant(d_fake.clone());
    let l = tape.disc_loss(r, f)?;
    Ok(tape.value(l).item())
}

/// Generator loss on given probabilities.
pub fn gen_loss(d_fake: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(d_fake.clone());
    let l = tape.gen_loss(f)?;
    Ok(tape.value(l).item())
}

/// Generator samples for noise `z`.
pub fn generate(pair: &GanPair, z: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let gen = bind_constants(&mut tape, &pair.generator);
    let z = tape.constant(z.clone());
    let out = generate_on_tape(&mut tape, &gen, z)?;
    Ok(tape.value(out).clone())
}

/// `D(x)` for each row of `x`.
pub fn discriminate(pair: &GanPair, x: &Tensor, cfg: &GanConfig) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let disc = bind_constants(&mut tape, &pair.discriminator);
    let x = tape.constant(x.clone());
    let out = discriminate_on_tape(&mut tape, &disc, x, cfg.leaky_slope)?;
    Ok(tape.value(out).data().to_vec())
}

fn collect_grads(tape: &Tape, bound: &Mlp<Var>, target: &mut Mlp) -> Result<()> {
    let mut vars = Vec::new();
    bound.visit("", &mut vars);
    let mut params = Vec::new();
    target.visit_mut("", &mut params);
    for ((_, v), (_, p)) in vars.into_iter().zip(params) {
        match tape.grad(*v) {
            Some(g) => p.accumulate_grad(g)?,
            None => p.accumulate_grad(&vec![0.0; p.len()])?,
        }
    }
    Ok(())
}

fn named_mut<'a>(m: &'a mut Mlp, prefix: &str) -> Vec<(String, &'a mut Tensor)> {
    let mut out = Vec::new();
    m.visit_mut(prefix, &mut out);
    out
}

fn real_batch(real: &Tensor, n: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * real.cols());
    for _ in 0..n {
        data.extend_from_slice(real.row(rng.index(real.rows())));
    }
    Tensor::new(vec![n, real.cols()], data)
}

/// Per-step losses of a GAN run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub disc_loss: Vec<f64>,
    pub gen_loss: Vec<f64>,
}

/// Optimizer state for both networks, kept across calls to [`gan_step`].
pub struct GanOptimizers {
    disc: Adam,
    gen: Adam,
}

impl GanOptimizers {
    pub fn new(cfg: &GanConfig) -> Self {
        Self {
            disc: Adam::new(cfg.adam()),
            gen: Adam::new(cfg.adam()),
        }
    }
}

/// One discriminator update with generator output held constant. Returns the loss before the update.
pub fn disc_step(
    pair: &mut GanPair,
    real: &Tensor,
    cfg: &GanConfig,
    opt: &mut GanOptimizers,
    rng: &mut SeededRng,
) -> Result<f64> {
    let z = sample_noise(cfg, rng, cfg.batch_size)?;
    let fake = generate(pair, &z)?;
    let real_rows = real_batch(real, cfg.batch_size, rng)?;
    let mut tape = Tape::new();
    let disc = bind_params(&mut tape, &pair.discriminator);
    let r = tape.constant(real_rows);
    let f = tape.constant(fake);
    let loss = disc_loss_on_tape(&mut tape, &disc, r, f, cfg.leaky_slope)?;
    tape.backward(loss)?;
    collect_grads(&tape, &disc, &mut pair.discriminator)?;
    opt.disc.step(named_mut(&mut pair.discriminator, "discriminator"))?;
    Ok(tape.value(loss).item())
}

/// One generator update with discriminator weights held constant. Returns
/// the loss before the update.
pub fn gen_step(pair: &mut GanPair, cfg: &GanConfig, opt: &mut GanOptimizers, rng: &mut SeededRng) -> Result<f64> {
    let z = sample_noise(cfg, rng, cfg.batch_size)?;
    let mut tape = Tape::new();
    let gen = bind_params(&mut tape, &pair.generator);
    let disc = bind_constants(&mut tape, &pair.discriminator);
    let z = tape.constant(z);
    let loss = gen_loss_on_tape(&mut tape, &gen, &disc, z, cfg.leaky_slope)?;
    tape.backward(loss)?;
    collect_grads(&tape, &gen, &mut pair.generator)?;
    opt.gen.step(named_mut(&mut pair.generator, "generator"))?;
    Ok(tape.value(loss).item())
}

/// One discriminator update followed by one generator update.
pub fn gan_step(
    pair: &mut GanPair,
    real: &Tensor,
    cfg: &GanConfig,
    opt: &mut GanOptimizers,
    rng: &mut SeededRng,
) -> Result<(f64, f64)> {
    let d = disc_step(pair, real, cfg, opt, rng)?;
    let g = gen_step(pair, cfg, opt, rng)?;
    pair.steps_trained += 1;
    Ok((d, g))
}

/// Runs `cfg.steps` alternating updates against the rows of `real`.
pub fn train_gan(pair: &mut GanPair, real: &Tensor, cfg: &GanConfig) -> Result<GanHistory> {
    cfg.validate()?;
    if real.shape().len() != 2 || real.rows() == 0 {
        return Err(Error::EmptyDataset("GAN training needs at least one real row".into()));
    }
    if real.cols() != cfg.feature_dim {
        return Err(Error::FeatureWidth {
            expected: cfg.feature_dim,
            got: real.cols(),
        });
    }
    let mut rng = SeededRng::derived(cfg.seed, 1);
    let mut opt = GanOptimizers::new(cfg);
    let mut history = GanHistory::default();
    for _ in 0..cfg.steps {
        let (d, g) = gan_step(pair, real, cfg, &mut opt, &mut rng)?;
        history.disc_loss.push(d);
        history.gen_loss.push(g);
    }
    Ok(history)
}

/// Where a block of synthetic rows came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub class: usize,
    pub class_name: String,
    pub seed: u64,
    pub steps: usize,
    pub rows: usize,
    pub real_rows: usize,
    pub final_disc_loss: Option<f64>,
    pub final_gen_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub features: Tensor,
    pub label: usize,
    pub seed: u64,
    pub steps: usize,
}

pub fn synthesize(pair: &GanPair, n: usize, cfg: &GanConfig, rng: &mut SeededRng) -> Result<SyntheticBatch> {
    if n == 0 {
        return Err(Error::Config("synthesize needs n ≥ 1".into()));
    }
    let z = sample_noise(cfg, rng, n)?;
    let features = generate(pair, &z)?;
    if features.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "synthesize" });
    }
    Ok(SyntheticBatch {
        features,
        label: pair.class,
        seed: pair.seed,
        steps: pair.steps_trained,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refusal {
    pub class: usize,
    pub class_name: String,
    pub real_rows: usize,
    pub needed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSummary {
    pub gan: GanConfig,
    pub targets: Vec<usize>,
    pub counts_before: Vec<usize>,
    pub counts_after: Vec<usize>,
    pub records: Vec<Provenance>,
    pub refusals: Vec<Refusal>,
}

/// Seed of the GAN trained for `class`.
pub fn class_seed(seed: u64, class: usize) -> u64 {
    SeededRng::derived(seed, 0x6761_6e00 + class as u64).next_u64()
}

fn train_class(train: &LabeledDataset, class: usize, deficit: usize, cfg: &GanConfig) -> Result<(SyntheticBatch, Provenance)> {
    let seed = class_seed(cfg.seed, class);
    let class_cfg = GanConfig { seed, ..cfg.clone() };
    let rows = train.rows_of_class(class).len();
    let real = Tensor::new(vec![rows, train.width()], train.class_matrix(class))?;
    let mut pair = init_gan(&class_cfg, &mut SeededRng::derived(seed, 0))?;
    pair.class = class;
    pair.seed = seed;
    let history = train_gan(&mut pair, &real, &class_cfg)?;
    let batch = synthesize(&pair, deficit, &class_cfg, &mut SeededRng::derived(seed, 2))?;
    let record = Provenance {
        class,
        class_name: train.codec.decode(class).unwrap_or("?").to_string(),
        seed,
        steps: pair.steps_trained,
        rows: deficit,
        real_rows: rows,
        final_disc_loss: history.disc_loss.last().copied(),
        final_gen_loss: history.gen_loss.last().copied(),
    };
    Ok((batch, record))
}

/// Raises each class to its target count with rows from a GAN trained on
/// that class. Real rows are kept in place; synthetic rows are appended in
/// class order and flagged. Classes with fewer than [`MIN_CLASS_ROWS`] real
/// rows are left as they are and reported as refusals.
pub fn augment_dataset(
    train: &LabeledDataset,
    targets: &[usize],
    cfg: &GanConfig,
) -> Result<(LabeledDataset, AugmentationSummary)> {
    cfg.validate()?;
    let counts = train.class_counts();
    if targets.len() != counts.len() {
        return Err(Error::Config(format!(
            "augmentation targets list {} classes, dataset has {}",
            targets.len(),
            counts.len()
        )));
    }
    let mut jobs = Vec::new();
    let mut refusals = Vec::new();
    for (class, (&have, &want)) in counts.iter().zip(targets).enumerate() {
        let name = train.codec.decode(class).unwrap_or("?").to_string();
        if want < have {
            return Err(Error::Config(format!(
                "augmentation target {want} for {name} is below its current count {have}"
            )));
        }
        if want == have {
            continue;
        }
        if have < MIN_CLASS_ROWS {
            warn!("not augmenting {name}: {have} real rows, at least {MIN_CLASS_ROWS} needed");
            refusals.push(Refusal {
                class,
                class_name: name,
                real_rows: have,
                needed: MIN_CLASS_ROWS,
            });
            continue;
        }
        if train.width() != cfg.feature_dim {
            return Err(Error::FeatureWidth {
                expected: cfg.feature_dim,
                got: train.width(),
            });
        }
        jobs.push((class, want - have));
    }

    let results: Vec<Result<(SyntheticBatch, Provenance)>> = jobs
        .par_iter()
        .map(|&(class, deficit)| train_class(train, class, deficit, cfg))
        .collect();

    let mut out = train.clone();
    let mut records = Vec::new();
    for r in results {
        let (batch, record) = r?;
        info!(
            "{}: {} synthetic rows from {} real ({} steps)",
            record.class_name, record.rows, record.real_rows, record.steps
        );
        out.features.extend_from_slice(batch.features.data());
        out.labels.extend(std::iter::repeat_n(batch.label, batch.features.rows()));
        out.synthetic.extend(std::iter::repeat_n(true, batch.features.rows()));
        records.push(record);
    }
    let summary = AugmentationSummary {
        gan: cfg.clone(),
        targets: targets.to_vec(),
        counts_before: counts,
        counts_after: out.class_counts(),
        records,
        refusals,
    };
    Ok((out, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GanConfig {
        GanConfig {
            latent_dim: 4,
            feature_dim: 3,
            gen_hidden: vec![8],
            disc_hidden: vec![8],
            steps: 5,
            batch_size: 8,
            ..GanConfig::default()
        }
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let cfg = GanConfig::default();
        let a = init_gan(&cfg, &mut SeededRng::new(1)).unwrap();
        let b = init_gan(&cfg, &mut SeededRng::new(1)).unwrap();
        let c = init_gan(&cfg, &mut SeededRng::new(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.generator, c.generator);
        let g: Vec<_> = a.generator.layers.iter().map(|l| l.weight.shape().to_vec()).collect();
        assert_eq!(g, vec![vec![32, 64], vec![64, 64], vec![64, 95]]);
        let d: Vec<_> = a.discriminator.layers.iter().map(|l| l.weight.shape().to_vec()).collect();
        assert_eq!(d, vec![vec![95, 64], vec![64, 32], vec![32, 1]]);
    }

    #[test]
    fn noise_moments() {
        let cfg = GanConfig {
            latent_dim: 1,
            ..GanConfig::default()
        };
        let z = sample_noise(&cfg, &mut SeededRng::new(3), 100_000).unwrap();
        let n = z.len() as f64;
        let mean = z.data().iter().sum::<f64>() / n;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
        assert_eq!(z, sample_noise(&cfg, &mut SeededRng::new(3), 100_000).unwrap());
        assert!(sample_noise(&cfg, &mut SeededRng::new(3), 0).is_err());
    }

    #[test]
    fn closed_form_losses() {
        let half = Tensor::vector(&[0.5, 0.5]).unwrap();
        assert!((disc_loss(&half, &half).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((gen_loss(&half).unwrap() - 2f64.ln()).abs() < 1e-12);
        let one = Tensor::vector(&[1.0]).unwrap();
        let zero = Tensor::vector(&[0.0]).unwrap();
        assert!(disc_loss(&one, &zero).unwrap().abs() < 1e-11);
        assert!(gen_loss(&one).unwrap().abs() < 1e-11);
        let capped = gen_loss(&zero).unwrap();
        assert!((capped - 1e12f64.ln()).abs() < 1e-9 && capped.is_finite());
    }

    #[test]
    fn zero_steps_leave_pair_unchanged() {
        let cfg = GanConfig {
            steps: 0,
            ..small_cfg()
        };
        let mut pair = init_gan(&cfg, &mut SeededRng::new(4)).unwrap();
        let before = pair.clone();
        let real = Tensor::full(&[10, 3], 1.0);
        let h = train_gan(&mut pair, &real, &cfg).unwrap();
        assert_eq!(pair, before);
        assert!(h.disc_loss.is_empty());
    }

    #[test]
    fn steps_change_both_networks() {
        let cfg = small_cfg();
        let mut pair = init_gan(&cfg, &mut SeededRng::new(4)).unwrap();
        let before = pair.clone();
        let real = Tensor::full(&[10, 3], 1.0);
        let h = train_gan(&mut pair, &real, &cfg).unwrap();
        assert_ne!(pair.generator, before.generator);
        assert_ne!(pair.discriminator, before.discriminator);
        assert_eq!(h.gen_loss.len(), 5);
        assert!(h.disc_loss.iter().chain(&h.gen_loss).all(|v| v.is_finite()));
    }

    #[test]
    fn each_step_touches_only_its_network() {
        let cfg = small_cfg();
        let mut pair = init_gan(&cfg, &mut SeededRng::new(4)).unwrap();
        let real = Tensor::full(&[10, 3], 1.0);
        let mut opt = GanOptimizers::new(&cfg);
        let mut rng = SeededRng::new(5);
        let before = pair.clone();
        disc_step(&mut pair, &real, &cfg, &mut opt, &mut rng).unwrap();
        assert_eq!(pair.generator, before.generator);
        assert_ne!(pair.discriminator, before.discriminator);
        let mid = pair.clone();
        gen_step(&mut pair, &cfg, &mut opt, &mut rng).unwrap();
        assert_eq!(pair.discriminator, mid.discriminator);
        assert_ne!(pair.generator, mid.generator);
    }

    #[test]
    fn empty_real_set_is_rejected() {
        let cfg = small_cfg();
        let mut pair = init_gan(&cfg, &mut SeededRng::new(4)).unwrap();
        assert!(train_gan(&mut pair, &Tensor::zeros(&[0, 3]), &cfg).is_err());
    }

    #[test]
    fn synthesize_shape_and_reproducibility() {
        let cfg = small_cfg();
        let mut pair = init_gan(&cfg, &mut SeededRng::new(4)).unwrap();
        pair.class = 7;
        let a = synthesize(&pair, 6, &cfg, &mut SeededRng::new(9)).unwrap();
        let b = synthesize(&pair, 6, &cfg, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a.features.shape(), &[6, 3]);
        assert_eq!(a.label, 7);
        assert_eq!(a, b);
        assert!(synthesize(&pair, 0, &cfg, &mut SeededRng::new(9)).is_err());
    }
}
