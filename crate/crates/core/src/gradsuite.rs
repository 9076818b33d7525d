//! Finite-difference checks of every tape primitive and of the full
//! generator and retriever losses, run in `f64` with small dimensions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_examples, Corpus, Dialogue, ExampleConfig, Speaker, Split, Turn, Vocab};
use crate::error::Result;
use crate::generator::{GeneratorDims, GeneratorModel};
use crate::numerics::{bind_all, grad_check, Axis, GradCheckConfig, GradCheckReport, Tape, Tensor, Var};
use crate::retriever::{batch_loss, RetrieverModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<NamedCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

type Graph = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Checks `sum(weights * f(params))` with fixed random weights, so that
/// outputs with constant sums (softmax, normalization) still get a signal.
fn check_op(name: &str, params: Vec<Tensor<f64>>, f: &Graph, seed: u64, cfg: GradCheckConfig) -> Result<NamedCheck> {
    let probe = {
        let mut tape = Tape::new();
        let vars = bind_all(&mut tape, &params);
        let out = f(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let weights = random(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabcd), &probe);
    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    let loss_fn = |p: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let vars = bind_all(&mut tape, p);
        let out = f(&mut tape, &vars)?;
        let w = tape.input(weights.clone());
        let prod = tape.mul(out, w)?;
        let loss = tape.sum(prod);
        let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        Ok((tape.value(loss).item(), tape.backward(loss)?.into_dense(&shape_refs)))
    };
    Ok(NamedCheck {
        name: name.to_string(),
        report: grad_check(loss_fn, &params, cfg)?,
    })
}

fn primitives(seed: u64, cfg: GradCheckConfig) -> Result<Vec<NamedCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: &[usize]| random(&mut rng, s);
    let cases: Vec<(&str, Vec<Tensor<f64>>, Box<Graph>)> = vec![
        ("matmul", vec![r(&[3, 4]), r(&[4, 5])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![r(&[2, 3]), r(&[2, 3])], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![r(&[2, 3]), r(&[2, 3])], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![r(&[2, 3]), r(&[2, 3])], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("add_row", vec![r(&[3, 4]), r(&[1, 4])], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("scale", vec![r(&[2, 3])], Box::new(|t, v| Ok(t.scale(v[0], 0.7)))),
        ("concat_rows", vec![r(&[2, 3]), r(&[1, 3])], Box::new(|t, v| t.concat(&[v[0], v[1]], Axis::Rows))),
        ("concat_cols", vec![r(&[2, 3]), r(&[2, 2])], Box::new(|t, v| t.concat(&[v[0], v[1]], Axis::Cols))),
        ("slice_rows", vec![r(&[4, 3])], Box::new(|t, v| t.slice(v[0], Axis::Rows, 1, 2))),
        ("slice_cols", vec![r(&[3, 5])], Box::new(|t, v| t.slice(v[0], Axis::Cols, 2, 3))),
        ("transpose", vec![r(&[2, 5])], Box::new(|t, v| t.transpose(v[0]))),
        ("tanh", vec![r(&[2, 4])], Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("sigmoid", vec![r(&[2, 4])], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("softmax_rows", vec![r(&[3, 4])], Box::new(|t, v| t.softmax(v[0], Axis::Rows))),
        ("softmax_cols", vec![r(&[3, 4])], Box::new(|t, v| t.softmax(v[0], Axis::Cols))),
        ("embedding", vec![r(&[6, 3])], Box::new(|t, v| t.embedding(v[0], &[4, 1, 4, 0]))),
        (
            "cross_entropy",
            vec![r(&[4, 5])],
            Box::new(|t, v| t.cross_entropy(v[0], &[1, 0, 3, 4], Some(0))),
        ),
        ("mean_rows", vec![r(&[4, 3])], Box::new(|t, v| t.mean_rows(v[0]))),
        ("normalize_rows", vec![r(&[3, 4])], Box::new(|t, v| t.normalize_rows(v[0]))),
        ("sum", vec![r(&[2, 3])], Box::new(|t, v| Ok(t.sum(v[0])))),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, params, f))| check_op(name, params, f.as_ref(), seed + i as u64, cfg))
        .collect()
}

fn generator_check(seed: u64, cfg: GradCheckConfig) -> Result<NamedCheck> {
    let dims = GeneratorDims {
        vocab_size: 8,
        emb_dim: 4,
        hidden: 4,
        layers: 2,
        max_context_tokens: 8,
        max_response_tokens: 4,
    };
    let m = GeneratorModel::new(dims, "gradcheck", seed);
    let pairs = [(vec![5u32, 6, 7, 5], vec![6u32, 7]), (vec![7u32, 5], vec![5u32])];
    let shapes: Vec<Vec<usize>> = m.params.cast::<f64>().iter().map(|t| t.shape().to_vec()).collect();
    let loss_fn = |p: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut total = 0.0;
        let mut grads: Vec<Tensor<f64>> = p.iter().map(|t| Tensor::zeros(t.shape())).collect();
        let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        for (c, r) in &pairs {
            let mut tape = Tape::<f64>::new();
            let vars = bind_all(&mut tape, p);
            let tf = m.teacher_forced(&mut tape, &vars, c, r)?;
            total += tape.value(tf.loss).item();
            for (g, d) in grads.iter_mut().zip(tape.backward(tf.loss)?.into_dense(&shape_refs)) {
                g.add_assign(&d);
            }
        }
        Ok((total, grads))
    };
    Ok(NamedCheck {
        name: "seq2seq_loss".into(),
        report: grad_check(loss_fn, &m.params.cast::<f64>(), cfg)?,
    })
}

fn retriever_check(seed: u64, cfg: GradCheckConfig) -> Result<NamedCheck> {
    let d = |turns: &[&str]| Dialogue {
        persona_self: vec!["i like red .".into()],
        persona_partner: vec!["i like blue .".into()],
        turns: turns
            .iter()
            .enumerate()
            .map(|(i, t)| Turn::new(if i % 2 == 0 { Speaker::P1 } else { Speaker::P2 }, t))
            .collect(),
    };
    let corpus = Corpus {
        dialogues: vec![d(&["hi", "hello you", "red or blue ?", "blue"]), d(&["yes", "no red"])],
        split: Split::Train,
    };
    let vocab = Vocab::build(&corpus, 1)?;
    let examples = make_examples(&corpus, &vocab, &ExampleConfig::default());
    let batch: Vec<_> = examples.iter().take(3).collect();
    let m = RetrieverModel::new(vocab.len(), 5, &vocab.hash(), seed);
    let shapes: Vec<Vec<usize>> = m.params.cast::<f64>().iter().map(|t| t.shape().to_vec()).collect();
    let loss_fn = |p: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::<f64>::new();
        let vars = bind_all(&mut tape, p);
        let loss = batch_loss(&mut tape, &vars, &batch, None, 0.5)?;
        let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        Ok((tape.value(loss).item(), tape.backward(loss)?.into_dense(&shape_refs)))
    };
    Ok(NamedCheck {
        name: "retriever_loss".into(),
        report: grad_check(loss_fn, &m.params.cast::<f64>(), cfg)?,
    })
}

/// Every primitive plus both model losses. The step is small because the
/// temperature-scaled retriever loss has large third derivatives. At this
/// step a central difference of an O(1) loss carries about 1e-10 of rounding
/// noise, so derivatives under the 1e-5 floor are compared in absolute terms.
pub fn grad_suite(seed: u64) -> Result<SuiteReport> {
    let cfg = GradCheckConfig {
        step: 1e-5,
        floor: 1e-5,
        seed,
        ..GradCheckConfig::default()
    };
    let mut checks = primitives(seed, cfg)?;
    checks.push(generator_check(seed, cfg)?);
    checks.push(retriever_check(seed, cfg)?);
    let max_rel_err = checks.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
    Ok(SuiteReport {
        passed: checks.iter().all(|c| c.report.passed),
        checks,
        max_rel_err,
    })
}
