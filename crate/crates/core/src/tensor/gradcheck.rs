//! Central finite-difference checks of the hand-written adjoints.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{OpKind, Segments, Tape, Tensor, Var};
use crate::error::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that adjoints that are zero up to rounding are
/// compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;
/// Random input draws per operation.
pub const DRAWS_PER_OP: usize = 20;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub evaluations: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

/// Builds the graph `f` over leaves holding `inputs` and reduces its output
/// to a scalar with fixed pseudo-random weights.
fn evaluate<F>(inputs: &[Tensor], f: &F, fault: Option<(OpKind, f64)>) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if let Some((k, s)) = fault {
        tape.inject_adjoint_fault(k, s);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = if tape.value(out).len() == 1 {
        out
    } else {
        let n = tape.value(out).len();
        let w: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.7548776662).sin() + 0.3).collect();
        let wv = tape.constant(Tensor::new(tape.shape(out).to_vec(), w)?);
        let p = tape.mul(out, wv)?;
        tape.sum(p)
    };
    Ok((tape, vars, loss))
}

/// Largest relative error between the tape adjoint and central differences
/// over every entry of every input.
pub fn check_fn<F>(inputs: &[Tensor], f: F, fault: Option<(OpKind, f64)>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, vars, loss) = evaluate(inputs, &f, fault)?;
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (t, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, v);
        for i in 0..inputs[t].len() {
            let orig = probe[t].data()[i];
            probe[t].data_mut()[i] = orig + FD_STEP;
            let (tp, _, lp) = evaluate(&probe, &f, None)?;
            let up = tp.value(lp).item();
            probe[t].data_mut()[i] = orig - FD_STEP;
            let (tm, _, lm) = evaluate(&probe, &f, None)?;
            let down = tm.value(lm).item();
            probe[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

fn random_groups(rng: &mut ChaCha8Rng, n_groups: usize, n_rows: usize) -> Segments {
    let mut s = Segments::new();
    for _ in 0..n_groups {
        let size = rng.gen_range(1..=n_rows.min(4));
        s.push_group((0..size).map(|_| rng.gen_range(0..n_rows)));
    }
    s
}

/// One random check of `kind`; returns the worst relative error.
pub fn check_op(kind: OpKind, rng: &mut ChaCha8Rng, fault: Option<(OpKind, f64)>) -> Result<f64> {
    let m = rng.gen_range(1..=4);
    let k = rng.gen_range(2..=5);
    let n = rng.gen_range(1..=4);
    match kind {
        OpKind::MatMul => {
            let ins = [randn(rng, vec![m, k]), randn(rng, vec![k, n])];
            check_fn(&ins, |t, v| t.matmul(v[0], v[1]), fault)
        }
        OpKind::Linear => {
            let ins = [randn(rng, vec![m, k]), randn(rng, vec![n, k])];
            check_fn(&ins, |t, v| t.linear(v[0], v[1]), fault)
        }
        OpKind::Add => {
            let ins = [randn(rng, vec![m, k]), randn(rng, vec![m, k])];
            check_fn(&ins, |t, v| t.add(v[0], v[1]), fault)
        }
        OpKind::Sub => {
            let ins = [randn(rng, vec![m, k]), randn(rng, vec![m, k])];
            check_fn(&ins, |t, v| t.sub(v[0], v[1]), fault)
        }
        OpKind::Mul => {
            let ins = [randn(rng, vec![m, k]), randn(rng, vec![m, k])];
            check_fn(&ins, |t, v| t.mul(v[0], v[1]), fault)
        }
        OpKind::Scale => {
            let c: f64 = rng.sample(StandardNormal);
            let ins = [randn(rng, vec![m, k])];
            check_fn(&ins, move |t, v| Ok(t.scale(v[0], c)), fault)
        }
        OpKind::AddBias => {
            let ins = [randn(rng, vec![m, k]), randn(rng, vec![k])];
            check_fn(&ins, |t, v| t.add_bias(v[0], v[1]), fault)
        }
        OpKind::Gelu => {
            let mut x = randn(rng, vec![m, k]);
            x.data_mut().iter_mut().for_each(|v| *v *= 2.0);
            check_fn(&[x], |t, v| Ok(t.gelu(v[0])), fault)
        }
        OpKind::Tanh => {
            let ins = [randn(rng, vec![m, k])];
            check_fn(&ins, |t, v| Ok(t.tanh(v[0])), fault)
        }
        OpKind::LayerNorm => {
            let mut gain = randn(rng, vec![k]);
            gain.data_mut().iter_mut().for_each(|g| *g += 1.0);
            let ins = [randn(rng, vec![m, k]), gain, randn(rng, vec![k])];
            check_fn(&ins, |t, v| t.layer_norm(v[0], v[1], v[2]), fault)
        }
        OpKind::Softmax => {
            let x = randn(rng, vec![m, k]);
            let mut mask: Vec<bool> = (0..m * k).map(|_| rng.gen_bool(0.7)).collect();
            for r in 0..m {
                let j = rng.gen_range(0..k);
                mask[r * k + j] = true;
            }
            check_fn(&[x], move |t, v| t.softmax(v[0], Some(&mask)), fault)
        }
        OpKind::SegmentAttend => {
            let heads = rng.gen_range(1..=3);
            let nk = rng.gen_range(1..=5);
            let dv = heads * rng.gen_range(1..=3);
            let segs = Arc::new(random_groups(rng, m, nk));
            let ins = [
                randn(rng, vec![m, heads * k]),
                randn(rng, vec![nk, heads * k]),
                randn(rng, vec![nk, dv]),
            ];
            check_fn(
                &ins,
                move |t, v| t.segment_attend_heads(v[0], v[1], v[2], segs.clone(), heads),
                fault,
            )
        }
        OpKind::ConcatCols => {
            let ins = [randn(rng, vec![m, k]), randn(rng, vec![m, n])];
            check_fn(&ins, |t, v| t.concat_cols(v), fault)
        }
        OpKind::ConcatRows => {
            let ins = [randn(rng, vec![m, k]), randn(rng, vec![n, k])];
            check_fn(&ins, |t, v| t.concat_rows(v), fault)
        }
        OpKind::GatherRows => {
            let idx: Arc<Vec<usize>> = Arc::new((0..n + 2).map(|_| rng.gen_range(0..m)).collect());
            let ins = [randn(rng, vec![m, k])];
            check_fn(&ins, move |t, v| t.gather_rows(v[0], idx.clone()), fault)
        }
        OpKind::ScatterAddRows => {
            let idx: Arc<Vec<usize>> = Arc::new((0..m).map(|_| rng.gen_range(0..n)).collect());
            let ins = [randn(rng, vec![m, k])];
            check_fn(&ins, move |t, v| t.scatter_add_rows(v[0], idx.clone(), n), fault)
        }
        OpKind::Sum => {
            let ins = [randn(rng, vec![m, k])];
            check_fn(&ins, |t, v| Ok(t.sum(v[0])), fault)
        }
        OpKind::Mean => {
            let ins = [randn(rng, vec![m, k])];
            check_fn(&ins, |t, v| t.mean(v[0]), fault)
        }
        OpKind::Huber => {
            let target: Vec<f64> = (0..m * k).map(|_| rng.sample(StandardNormal)).collect();
            let mut pred = randn(rng, vec![m * k]);
            pred.data_mut()
                .iter_mut()
                .zip(&target)
                .for_each(|(p, t)| *p = t + 2.0 * *p);
            check_fn(&[pred], move |t, v| t.huber(v[0], &target, 1.0), fault)
        }
    }
}

/// Checks every differentiable operation at [`DRAWS_PER_OP`] random points.
pub fn check_all_ops(seed: u64, fault: Option<(OpKind, f64)>) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OpKind::ALL
        .iter()
        .map(|&kind| {
            let mut worst = 0.0f64;
            for _ in 0..DRAWS_PER_OP {
                worst = worst.max(check_op(kind, &mut rng, fault)?);
            }
            Ok(CheckResult {
                name: kind.name().to_string(),
                max_rel_err: worst,
                evaluations: DRAWS_PER_OP,
            })
        })
        .collect()
}
