//! Finite-difference check of every parameter gradient of the full network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dgann, GraphBatch, ModelConfig};
use crate::error::Result;
use crate::molgraph::{center_molecule, Atom, Bond, BondOrder, DirectedEdgeGraph, Element, Molecule};
use crate::tensor::gradcheck::{rel_err, CheckResult, FD_STEP};
use crate::tensor::{OpKind, Tape, Var};

/// Reduced configuration used for the whole-network check.
pub fn check_config() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_heads: 4,
        n_interaction: 2,
        n_transformer: 2,
        ffn_multiplier: 2,
    }
}

/// Formaldimine-like bent H–C=N fragment.
pub fn check_molecule() -> Molecule {
    let atom = |element, position| Atom { element, position };
    center_molecule(&Molecule {
        id: "gradcheck".into(),
        atoms: vec![
            atom(Element::H, [-0.94, 0.52, 0.03]),
            atom(Element::C, [0.0, 0.0, 0.0]),
            atom(Element::N, [1.07, 0.63, -0.11]),
        ],
        bonds: vec![Bond::new(0, 1, BondOrder::Single), Bond::new(1, 2, BondOrder::Double)],
    })
}

fn loss(
    model: &Dgann,
    batch: &GraphBatch,
    fault: Option<(OpKind, f64)>,
    grad: bool,
) -> Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    if let Some((k, s)) = fault {
        tape.inject_adjoint_fault(k, s);
    }
    let pv = model.register(&mut tape, grad);
    let out = model.forward_with(&mut tape, pv.clone(), batch)?;
    let l = tape.sum(out.prediction);
    Ok((tape, pv, l))
}

/// Compares the tape gradient of the prediction with central differences
/// for every scalar of every parameter. One result per parameter tensor.
pub fn check_model(seed: u64, fault: Option<(OpKind, f64)>) -> Result<Vec<CheckResult>> {
    let mut model = Dgann::new(check_config(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let graph = DirectedEdgeGraph::from_molecule(&check_molecule())?;
    let batch = GraphBatch::new(&[&graph])?;
    let (tape, pv, l) = loss(&model, &batch, fault, true)?;
    let grads = tape.backward(l)?;
    let analytic: Vec<_> = pv.iter().map(|&v| grads.wrt(&tape, v)).collect();
    drop(tape);

    let eval = |m: &Dgann| -> Result<f64> {
        let (t, _, l) = loss(m, &batch, None, false)?;
        Ok(t.value(l).item())
    };
    let mut results = Vec::with_capacity(model.params.len());
    for p in 0..model.params.len() {
        let mut worst = 0.0f64;
        let n = model.params[p].value.len();
        for i in 0..n {
            let orig = model.params[p].value.data()[i];
            model.params[p].value.data_mut()[i] = orig + FD_STEP;
            let up = eval(&model)?;
            model.params[p].value.data_mut()[i] = orig - FD_STEP;
            let down = eval(&model)?;
            model.params[p].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[p].data()[i], numeric));
        }
        results.push(CheckResult {
            name: model.params[p].name.clone(),
            max_rel_err: worst,
            evaluations: n,
        });
    }
    Ok(results)
}
