//! Finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-3;

/// The coordinate with the largest disagreement seen during a check.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCoordinate {
    pub trial: usize,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub tolerance: f64,
    pub trials: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
}

/// Relative error with a small absolute floor so that gradients that are
/// legitimately zero do not blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Scalarizes a graph output. Non-scalar outputs are contracted against a
/// fixed, non-uniform weight pattern so every output entry is exercised.
fn scalarize(tape: &mut Tape, out: Var) -> Var {
    let t = tape.value(out);
    if t.shape() == [1, 1] {
        return out;
    }
    let weights = Tensor::new(
        t.rows(),
        t.cols(),
        (0..t.len()).map(|i| 1.0 + 0.5 * (i as f64 * 1.3).sin()).collect(),
    )
    .expect("same length");
    let w = tape.constant(weights);
    let prod = tape.mul(out, w);
    tape.sum(prod)
}

fn evaluate<B>(build: &B, inputs: &[Tensor]) -> Result<f64>
where
    B: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let loss = scalarize(&mut tape, out);
    tape.check_finite()?;
    Ok(tape.value(loss).item())
}

/// Compares reverse-mode gradients of `build` against central finite
/// differences at `trials` points drawn from `sample`.
pub fn grad_check<B, S>(build: B, mut sample: S, trials: usize, tolerance: f64) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape, &[Var]) -> Var,
    S: FnMut() -> Vec<Tensor>,
{
    assert!(tolerance > 0.0, "grad_check tolerance must be positive");
    let mut max_rel_error = 0.0;
    let mut worst = None;

    for trial in 0..trials {
        let inputs = sample();

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let loss = scalarize(&mut tape, out);
        let grads = tape.backward(loss)?;

        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[i]);
            for j in 0..input.len() {
                let mut probe = inputs.clone();
                probe[i].data_mut()[j] = input.data()[j] + STEP;
                let up = evaluate(&build, &probe)?;
                probe[i].data_mut()[j] = input.data()[j] - STEP;
                let down = evaluate(&build, &probe)?;
                let numeric = (up - down) / (2.0 * STEP);
                let a = analytic.data()[j];
                let err = relative_error(a, numeric);
                if err > max_rel_error || worst.is_none() {
                    max_rel_error = err.max(max_rel_error);
                    worst = Some(WorstCoordinate {
                        trial,
                        input: i,
                        index: j,
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
    }

    Ok(GradCheckReport {
        passed: max_rel_error < tolerance,
        tolerance,
        trials,
        max_rel_error,
        worst,
    })
}

/// Result of checking one tape primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

/// Input domain of a primitive.
#[derive(Clone, Copy)]
enum Domain {
    /// Uniform on `[-2, 2]`.
    Symmetric,
    /// Uniform on `[0.05, 2]`.
    Positive,
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
type Inputs = Vec<([usize; 2], Domain)>;

fn primitives() -> Vec<(&'static str, Inputs, Build)> {
    use Domain::*;
    let m = |r, c| ([r, c], Symmetric);
    vec![
        ("matmul", vec![m(3, 4), m(4, 2)], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("add", vec![m(3, 4), m(3, 4)], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![m(3, 4), m(3, 4)], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![m(3, 4), m(3, 4)], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("add_row", vec![m(3, 4), m(1, 4)], Box::new(|t, v| t.add_row(v[0], v[1]))),
        ("scale", vec![m(3, 4)], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("offset", vec![m(3, 4)], Box::new(|t, v| t.offset(v[0], 0.4))),
        ("relu", vec![m(3, 4)], Box::new(|t, v| t.relu(v[0]))),
        ("tanh", vec![m(3, 4)], Box::new(|t, v| t.tanh(v[0]))),
        ("sigmoid", vec![m(3, 4)], Box::new(|t, v| t.sigmoid(v[0]))),
        ("exp", vec![m(3, 4)], Box::new(|t, v| t.exp(v[0]))),
        ("ln", vec![([3, 4], Positive)], Box::new(|t, v| t.ln(v[0]))),
        ("square", vec![m(3, 4)], Box::new(|t, v| t.square(v[0]))),
        ("abs", vec![m(3, 4)], Box::new(|t, v| t.abs(v[0]))),
        ("softplus", vec![m(3, 4)], Box::new(|t, v| t.softplus(v[0]))),
        ("clamp", vec![m(3, 4)], Box::new(|t, v| t.clamp(v[0], -1.0, 1.0))),
        ("sum", vec![m(3, 4)], Box::new(|t, v| t.sum(v[0]))),
        ("mean", vec![m(3, 4)], Box::new(|t, v| t.mean(v[0]))),
        ("sum_cols", vec![m(3, 4)], Box::new(|t, v| t.sum_cols(v[0]))),
        ("slice_cols", vec![m(3, 5)], Box::new(|t, v| t.slice_cols(v[0], 1, 4))),
        (
            "concat_cols",
            vec![m(3, 2), m(3, 3)],
            Box::new(|t, v| t.concat_cols(&[v[0], v[1]])),
        ),
        ("softmax_rows", vec![m(3, 4)], Box::new(|t, v| t.softmax_rows(v[0]))),
        (
            "softmax_cross_entropy",
            vec![m(3, 4)],
            Box::new(|t, v| t.softmax_cross_entropy(v[0], &[0, 3, 1])),
        ),
        (
            "bce_with_logits",
            vec![m(4, 1)],
            Box::new(|t, v| t.bce_with_logits(v[0], Tensor::column(&[1.0, 0.0, 0.0, 1.0]))),
        ),
        (
            "gaussian_nll",
            vec![m(3, 2), m(3, 2)],
            Box::new(|t, v| {
                let obs = Tensor::new(3, 2, vec![0.3, -1.1, 0.8, 0.0, -0.4, 1.9]).expect("3x2");
                t.gaussian_nll(obs, v[0], v[1])
            }),
        ),
        ("kl_std_normal", vec![m(3, 2), m(3, 2)], Box::new(|t, v| t.kl_std_normal(v[0], v[1]))),
        (
            "map",
            vec![m(3, 4)],
            Box::new(|t, v| t.map(v[0], |x| x.sin(), |x| x.cos())),
        ),
    ]
}

/// Runs [`grad_check`] on every tape primitive with `trials` random points
/// each, drawn from `[-2, 2]` (`[0.05, 2]` where the primitive needs
/// positive input).
pub fn primitive_suite(trials: usize, tolerance: f64, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, shapes, build) in primitives() {
        let report = grad_check(
            |t, v| build(t, v),
            || {
                shapes
                    .iter()
                    .map(|&([r, c], d)| {
                        let (lo, hi) = match d {
                            Domain::Symmetric => (-2.0, 2.0),
                            Domain::Positive => (0.05, 2.0),
                        };
                        let data = (0..r * c).map(|_| rng.gen_range(lo..hi)).collect();
                        Tensor::new(r, c, data).expect("shape")
                    })
                    .collect()
            },
            trials,
            tolerance,
        )?;
        out.push(SuiteEntry { name, report });
    }
    Ok(out)
}
