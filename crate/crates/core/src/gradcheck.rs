//! Central finite-difference checks of the tape's backward rules.
//!
//! For each case every input tensor is a trainable leaf. The analytic
//! gradient comes from one backward pass; the numeric one perturbs each
//! element by `±STEP`. A tensor's error is
//! `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-8)` and a case
//! reports its worst tensor.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gan::{disc_loss_on_tape, gen_loss_on_tape};
use crate::model::layers::{attention, dense, layer_norm, mlp, multi_head, position_ffn, Activation};
use crate::model::params::{AttentionParams, ClassifierParams, Dense, FfnParams, Mlp, NormParams};
use crate::model::{Classifier, ModelConfig};
use crate::rng::SeededRng;
use crate::tape::{Fault, NormScope, Tape, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Random draws with a ReLU input closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub worst_param: String,
    pub rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub cases: Vec<CaseResult>,
    pub elapsed_secs: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.passed)
    }

    pub fn case(&self, name: &str) -> Option<&CaseResult> {
        self.cases.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            let _ = writeln!(
                s,
                "{:<4} {:<24} worst {:<28} rel {:.3e} (tol {:.0e})",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.worst_param,
                c.rel_error,
                c.tolerance
            );
        }
        let _ = writeln!(
            s,
            "{} of {} cases passed in {:.2}s",
            self.cases.iter().filter(|c| c.passed).count(),
            self.cases.len(),
            self.elapsed_secs
        );
        s
    }
}

/// Builds a scalar loss from the bound inputs, in the order they were given.
pub type LossFn<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

/// Gradients smaller than this are treated as zero. Central-difference
/// roundoff at `STEP` is around 1e-11, so an exactly zero analytic gradient
/// would otherwise fail against numerical noise.
pub const GRAD_FLOOR: f64 = 1e-6;

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(a).max(norm(n)).max(GRAD_FLOOR)
}

fn evaluate(inputs: &[(String, Tensor)], build: &LossFn) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t)).collect();
    let loss = build(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

/// Worst per-tensor relative error over `inputs`, with the tensor's name.
pub fn check(inputs: &[(String, Tensor)], build: &LossFn, fault: Option<Fault>) -> Result<(String, f64)> {
    let mut tape = fault.map_or_else(Tape::new, Tape::with_fault);
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t)).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut work: Vec<(String, Tensor)> = inputs.to_vec();
    let mut worst = (String::new(), 0.0);
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].1.len()]);
        let mut numeric = vec![0.0; analytic.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let orig = work[i].1.data()[j];
            work[i].1.data_mut()[j] = orig + STEP;
            let up = evaluate(&work, build)?;
            work[i].1.data_mut()[j] = orig - STEP;
            let down = evaluate(&work, build)?;
            work[i].1.data_mut()[j] = orig;
            *n = (up - down) / (2.0 * STEP);
        }
        let e = rel_error(&analytic, &numeric);
        if e > worst.1 || worst.0.is_empty() {
            worst = (inputs[i].0.clone(), e);
        }
    }
    Ok(worst)
}

fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("shape matches")
}

/// `sum(y ⊙ W)` for a fixed random `W`, so every output element matters.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = random(tape.shape(y), &mut SeededRng::new(seed));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn named(prefix: &str, tensors: Vec<(String, &Tensor)>) -> Vec<(String, Tensor)> {
    tensors
        .into_iter()
        .map(|(n, t)| (format!("{prefix}{n}"), t.clone()))
        .collect()
}

/// Tiny classifier used by the full-model check.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        head_size: 2,
        num_heads: 2,
        filters: 3,
        num_blocks: 1,
        dropout: 0.0,
        input_len: 4,
        channels: 1,
        mlp_units: vec![5],
        batch_size: 4,
        epochs: 1,
        ..ModelConfig::default()
    }
}

struct Case {
    name: &'static str,
    tolerance: f64,
    inputs: Vec<(String, Tensor)>,
    build: Box<LossFn<'static>>,
}

fn layer_cases(rng: &mut SeededRng) -> Vec<Case> {
    let mut cases = Vec::new();

    cases.push(Case {
        name: "attention",
        tolerance: LAYER_TOLERANCE,
        inputs: vec![
            ("q".into(), random(&[4, 3], rng)),
            ("k".into(), random(&[5, 3], rng)),
            ("v".into(), random(&[5, 2], rng)),
        ],
        build: Box::new(|t, v| {
            let y = attention(t, v[0], v[1], v[2])?;
            project(t, y, 1)
        }),
    });

    let attn = AttentionParams::init(2, 2, 2, rng);
    let mut inputs = vec![("x".to_string(), random(&[4, 2], rng))];
    let mut leaves = Vec::new();
    attn.visit("", &mut leaves);
    inputs.extend(named("", leaves));
    cases.push(Case {
        name: "multi_head_attention",
        tolerance: LAYER_TOLERANCE,
        inputs,
        build: Box::new(move |t, v| {
            let mut it = v[1..].iter().copied();
            let p = attn.map(&mut |_| it.next().expect("leaf"));
            let y = multi_head(t, v[0], &p)?;
            project(t, y, 2)
        }),
    });

    let ffn = FfnParams::init(2, 3, rng);
    let mut inputs = vec![("x".to_string(), random(&[4, 2], rng))];
    let mut leaves = Vec::new();
    ffn.visit("", &mut leaves);
    inputs.extend(named("", leaves));
    // keep pre-activations away from the ReLU kink
    for (n, t) in inputs.iter_mut() {
        if n == "b1" {
            *t = Tensor::new(vec![3], vec![0.31, -0.27, 0.45]).expect("shape");
        }
    }
    cases.push(Case {
        name: "position_ffn",
        tolerance: LAYER_TOLERANCE,
        inputs,
        build: Box::new(|t, v| {
            let p = FfnParams {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            let y = position_ffn(t, v[0], &p)?;
            project(t, y, 3)
        }),
    });

    for (name, scope) in [("layer_norm_row", NormScope::Row), ("layer_norm_all", NormScope::All)] {
        cases.push(Case {
            name,
            tolerance: LAYER_TOLERANCE,
            inputs: vec![
                ("x".into(), random(&[4, 3], rng)),
                ("gain".into(), random(&[3], rng)),
                ("bias".into(), random(&[3], rng)),
            ],
            build: Box::new(move |t, v| {
                let p = NormParams { gain: v[1], bias: v[2] };
                let y = layer_norm(t, v[0], &p, scope, 1e-6)?;
                project(t, y, 4)
            }),
        });
    }

    let head = Mlp::init(&[3, 4, 5], rng);
    let mut inputs = vec![("x".to_string(), random(&[3, 3], rng))];
    let mut leaves = Vec::new();
    head.visit("head", &mut leaves);
    inputs.extend(named("", leaves));
    cases.push(Case {
        name: "dense_head",
        tolerance: LAYER_TOLERANCE,
        inputs,
        build: Box::new(move |t, v| {
            let mut it = v[1..].iter().copied();
            let p = head.map(&mut |_| it.next().expect("leaf"));
            let y = mlp(t, v[0], &p, Activation::Relu, 0.0, &mut SeededRng::new(0))?;
            project(t, y, 5)
        }),
    });

    let dense_layer = Dense::init(3, 2, rng);
    cases.push(Case {
        name: "dense",
        tolerance: LAYER_TOLERANCE,
        inputs: vec![
            ("x".into(), random(&[2, 3], rng)),
            ("weight".into(), dense_layer.weight.clone()),
            ("bias".into(), random(&[2], rng)),
        ],
        build: Box::new(|t, v| {
            let y = dense(t, v[0], &Dense { weight: v[1], bias: v[2] })?;
            project(t, y, 6)
        }),
    });

    cases.push(Case {
        name: "softmax_cross_entropy",
        tolerance: LAYER_TOLERANCE,
        inputs: vec![("logits".into(), random(&[4, 5], rng))],
        build: Box::new(|t, v| {
            let p = t.softmax_rows(v[0])?;
            t.cross_entropy(p, &[0, 3, 4, 1])
        }),
    });

    cases.push(Case {
        name: "disc_loss_sigmoid",
        tolerance: LAYER_TOLERANCE,
        inputs: vec![
            ("real_logits".into(), random(&[6, 1], rng)),
            ("fake_logits".into(), random(&[6, 1], rng)),
        ],
        build: Box::new(|t, v| {
            let r = t.sigmoid(v[0])?;
            let f = t.sigmoid(v[1])?;
            t.disc_loss(r, f)
        }),
    });

    cases.push(Case {
        name: "gen_loss_sigmoid",
        tolerance: LAYER_TOLERANCE,
        inputs: vec![("fake_logits".into(), random(&[6, 1], rng))],
        build: Box::new(|t, v| {
            let f = t.sigmoid(v[0])?;
            t.gen_loss(f)
        }),
    });

    cases
}

fn gan_cases(rng: &mut SeededRng) -> Vec<Case> {
    // Random biases rather than the zero init: a dead hidden row would
    // otherwise put D's pre-activation exactly on the leaky ReLU kink. Half
    // scale keeps the sigmoid away from saturation.
    let shapes = (Mlp::init(&[3, 5, 4], rng), Mlp::init(&[4, 5, 1], rng));
    let mut moved = |t: &Tensor| {
        let data = random(t.shape(), rng).data().iter().map(|v| 0.5 * v).collect();
        Tensor::new(t.shape().to_vec(), data).expect("shape matches")
    };
    let gen = shapes.0.map(&mut moved);
    let disc = shapes.1.map(&mut moved);
    let z = random(&[6, 3], rng);
    let real = random(&[6, 4], rng);
    let n_gen = gen.layers.len() * 2;

    let mut inputs = Vec::new();
    let mut leaves = Vec::new();
    gen.visit("generator", &mut leaves);
    disc.visit("discriminator", &mut leaves);
    inputs.extend(named("", leaves));

    let (g1, d1, z1) = (gen.clone(), disc.clone(), z.clone());
    let coupled = Case {
        name: "gan_generator_loss",
        tolerance: LAYER_TOLERANCE,
        inputs: inputs.clone(),
        build: Box::new(move |t, v| {
            let mut it = v[..n_gen].iter().copied();
            let g = g1.map(&mut |_| it.next().expect("leaf"));
            let mut it = v[n_gen..].iter().copied();
            let d = d1.map(&mut |_| it.next().expect("leaf"));
            let z = t.constant(z1.clone());
            gen_loss_on_tape(t, &g, &d, z, 0.2)
        }),
    };

    let mut leaves = Vec::new();
    disc.visit("discriminator", &mut leaves);
    let d2 = disc.clone();
    let fake = random(&[6, 4], rng);
    let disc_case = Case {
        name: "gan_discriminator_loss",
        tolerance: LAYER_TOLERANCE,
        inputs: named("", leaves),
        build: Box::new(move |t, v| {
            let mut it = v.iter().copied();
            let d = d2.map(&mut |_| it.next().expect("leaf"));
            let r = t.constant(real.clone());
            let f = t.constant(fake.clone());
            disc_loss_on_tape(t, &d, r, f, 0.2)
        }),
    };
    vec![coupled, disc_case]
}

fn model_case(rng: &mut SeededRng) -> Result<Case> {
    let model = Classifier::new(tiny_model_config(), rng)?;
    let mut params: ClassifierParams = model.params.clone();
    // move norm parameters off the identity so their gradients are generic
    for b in &mut params.blocks {
        for n in [&mut b.attn_norm, &mut b.ffn_norm] {
            n.gain = random(n.gain.shape(), rng);
            n.bias = random(n.bias.shape(), rng);
        }
    }
    for l in &mut params.head.layers {
        l.bias = random(l.bias.shape(), rng);
    }
    let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
    let labels = vec![2, 0, 14];
    let inputs = named("", params.visit());
    let config = model.config.clone();
    Ok(Case {
        name: "tiny_classifier",
        tolerance: MODEL_TOLERANCE,
        inputs,
        build: Box::new(move |t, v| {
            let mut it = v.iter().copied();
            let bound = params.map(&mut |_| it.next().expect("leaf"));
            let m = Classifier {
                config: config.clone(),
                params: params.clone(),
            };
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let probs = m.forward_on_tape(t, &bound, &refs, false, &mut SeededRng::new(0))?;
            t.cross_entropy(probs, &labels)
        }),
    })
}

/// A draw is usable when no ReLU input sits within `KINK_MARGIN` of zero
/// and every input receives a gradient above `GRAD_FLOOR`; a fully dead
/// layer would leave everything behind it unchecked.
fn usable(c: &Case) -> Result<bool> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = c.inputs.iter().map(|(_, t)| tape.param(t)).collect();
    let loss = (c.build)(&mut tape, &vars)?;
    if tape.kink_margin() < KINK_MARGIN {
        return Ok(false);
    }
    tape.backward(loss)?;
    Ok(vars.iter().all(|&v| {
        let g = tape.grad(v).unwrap_or(&[]);
        g.iter().map(|x| x * x).sum::<f64>().sqrt() >= GRAD_FLOOR
    }))
}

/// Redraws a group of cases until every case is usable.
fn draw(rng: &mut SeededRng, make: impl Fn(&mut SeededRng) -> Result<Vec<Case>>) -> Result<Vec<Case>> {
    for _ in 1..MAX_DRAWS {
        let cases = make(rng)?;
        let mut ok = true;
        for c in &cases {
            ok &= usable(c)?;
        }
        if ok {
            return Ok(cases);
        }
    }
    make(rng)
}

/// Runs every layer check and the tiny full-model check. With a fault the
/// analytic pass uses the corrupted backward rule.
pub fn run_suite(seed: u64, fault: Option<Fault>) -> Result<GradcheckSummary> {
    let start = Instant::now();
    let mut rng = SeededRng::new(seed);
    let mut cases = draw(&mut rng, |r| Ok(layer_cases(r)))?;
    cases.extend(draw(&mut rng, |r| Ok(gan_cases(r)))?);
    cases.extend(draw(&mut rng, |r| Ok(vec![model_case(r)?]))?);
    let mut results = Vec::with_capacity(cases.len());
    for c in cases {
        let (worst_param, rel_error) = check(&c.inputs, c.build.as_ref(), fault)?;
        results.push(CaseResult {
            name: c.name.to_string(),
            worst_param,
            rel_error,
            tolerance: c.tolerance,
            passed: rel_error < c.tolerance,
        });
    }
    Ok(GradcheckSummary {
        cases: results,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_formula() {
        assert_eq!(rel_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((rel_error(&[3.0, 4.0], &[3.0, 4.0])).abs() < 1e-15);
        assert!((rel_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn suite_passes() {
        let s = run_suite(7, None).unwrap();
        assert!(s.passed(), "{}", s.to_text());
        assert_eq!(s.case("tiny_classifier").unwrap().tolerance, MODEL_TOLERANCE);
    }

    #[test]
    fn suite_passes_across_seeds() {
        for seed in 0..20 {
            let s = run_suite(seed, None).unwrap();
            assert!(s.passed(), "seed {seed}\n{}", s.to_text());
        }
    }

    #[test]
    fn zero_gradients_compare_against_the_floor() {
        assert!(rel_error(&[0.0, 0.0], &[1e-11, -2e-11]) < 1e-4);
        assert!(rel_error(&[0.0], &[1e-3]) > 0.99);
    }

    #[test]
    fn matmul_fault_is_caught() {
        let s = run_suite(7, Some(Fault::MatMul)).unwrap();
        assert!(!s.passed());
        assert!(!s.case("attention").unwrap().passed);
        assert!(!s.case("tiny_classifier").unwrap().passed);
    }

    #[test]
    fn norm_fault_is_caught() {
        let s = run_suite(7, Some(Fault::Norm)).unwrap();
        assert!(!s.case("layer_norm_row").unwrap().passed);
        assert!(s.case("attention").unwrap().passed);
    }
}
