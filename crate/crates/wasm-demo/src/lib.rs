//! Browser front end: molecule inspection, the one-flow receptive field of
//! the interaction blocks, and a rotation sweep of a random-weight model.

use std::collections::VecDeque;

use dgann::model::{Dgann, GraphBatch, ModelConfig};
use dgann::molgraph::{
    center_molecule, parse_qm9_xyz, parse_sdf, perceive_bonds, rotate, write_sdf, Atom, Bond, BondOrder,
    DirectedEdgeGraph, Element, Molecule,
};
use dgann::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Larger molecules make the per-edge backward passes too slow to feel live.
pub const MAX_ATOMS: usize = 40;
pub const MAX_LAYERS: usize = 6;

const BENZENE: &str = include_str!("../../core/tests/data/sdf/benzene.sdf");
const ETHANOL_QM9: &str = include_str!("../../core/tests/data/qm9/dsgdb9nsd_000043.xyz");

fn carbon(x: f64, y: f64, z: f64) -> Atom {
    Atom {
        element: Element::C,
        position: [x, y, z],
    }
}

fn zigzag_chain(n: usize) -> Molecule {
    Molecule {
        id: format!("chain of {}", n),
        atoms: (0..n)
            .map(|i| carbon(1.25 * i as f64, 0.75 * (i % 2) as f64, 0.0))
            .collect(),
        bonds: (1..n).map(|i| Bond::new(i - 1, i, BondOrder::Single)).collect(),
    }
}

fn star(n: usize) -> Molecule {
    let mut atoms = vec![carbon(0.0, 0.0, 0.0)];
    for i in 1..n {
        let t = i as f64 * std::f64::consts::TAU / (n - 1) as f64;
        atoms.push(carbon(1.5 * t.cos(), 1.5 * t.sin(), 0.3 * (i % 2) as f64));
    }
    Molecule {
        id: format!("star of {}", n),
        atoms,
        bonds: (1..n).map(|i| Bond::new(0, i, BondOrder::Single)).collect(),
    }
}

/// Built-in example inputs as `(name, file text)`.
pub fn presets() -> Vec<(&'static str, String)> {
    vec![
        ("7-atom chain", write_sdf(&[zigzag_chain(7)])),
        ("8-atom star", write_sdf(&[star(8)])),
        ("benzene", BENZENE.to_string()),
        ("QM9 record 43", ETHANOL_QM9.to_string()),
    ]
}

/// Plain XYZ: a count line, a comment line, then `element x y z` rows.
fn parse_plain_xyz(text: &str) -> Result<Molecule, String> {
    let mut lines = text.lines();
    let n: usize = lines
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or("first line must be the atom count")?;
    let id = lines.next().unwrap_or("").trim().to_string();
    let mut atoms = Vec::with_capacity(n);
    for (i, line) in lines.take(n).enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 4 {
            return Err(format!("atom line {}: expected element x y z", i + 1));
        }
        let element: Element = f[0].parse().map_err(|e: dgann::Error| e.to_string())?;
        let mut position = [0.0; 3];
        for (p, tok) in position.iter_mut().zip(&f[1..4]) {
            *p = tok
                .parse()
                .map_err(|_| format!("atom line {}: bad coordinate '{}'", i + 1, tok))?;
        }
        atoms.push(Atom { element, position });
    }
    if atoms.len() != n {
        return Err(format!("expected {} atoms, found {}", n, atoms.len()));
    }
    let mut m = Molecule {
        id: if id.is_empty() { "molecule".into() } else { id },
        atoms,
        bonds: Vec::new(),
    };
    m.bonds = perceive_bonds(&m);
    Ok(m)
}

/// SDF/MOL (first record), QM9 extended XYZ, or plain XYZ.
pub fn read_molecule(text: &str) -> Result<Molecule, String> {
    let m = if text.contains("V2000") {
        parse_sdf(text).map_err(|e| e.to_string())?.remove(0)
    } else {
        match parse_qm9_xyz(text) {
            Ok(r) => r.molecule,
            Err(_) => parse_plain_xyz(text)?,
        }
    };
    if m.atoms.len() > MAX_ATOMS {
        return Err(format!("{} atoms; the demo handles at most {}", m.atoms.len(), MAX_ATOMS));
    }
    if m.bonds.is_empty() {
        return Err("no bonds, so there are no directed edges to show".into());
    }
    Ok(center_molecule(&m))
}

#[derive(Serialize)]
pub struct AtomView {
    pub element: &'static str,
    pub position: [f64; 3],
}

#[derive(Serialize)]
pub struct EdgeView {
    pub source: usize,
    pub target: usize,
}

#[derive(Serialize)]
pub struct MoleculeView {
    pub id: String,
    pub atoms: Vec<AtomView>,
    pub bonds: Vec<(usize, usize, &'static str)>,
    /// Directed edges in model order; edge `e ^ 1` reverses edge `e`.
    pub edges: Vec<EdgeView>,
}

pub fn inspect_molecule(text: &str) -> Result<MoleculeView, String> {
    let m = read_molecule(text)?;
    let g = DirectedEdgeGraph::from_molecule(&m).map_err(|e| e.to_string())?;
    Ok(MoleculeView {
        id: m.id.clone(),
        atoms: m
            .atoms
            .iter()
            .map(|a| AtomView {
                element: a.element.symbol(),
                position: a.position,
            })
            .collect(),
        bonds: m
            .bonds
            .iter()
            .map(|b| {
                let order = match b.order {
                    BondOrder::Single => "single",
                    BondOrder::Double => "double",
                    BondOrder::Triple => "triple",
                    BondOrder::Aromatic => "aromatic",
                };
                (b.a, b.b, order)
            })
            .collect(),
        edges: (0..g.n_edges())
            .map(|e| EdgeView {
                source: g.source[e],
                target: g.target[e],
            })
            .collect(),
    })
}

#[derive(Serialize)]
pub struct ReceptiveField {
    pub edge: usize,
    pub layers: usize,
    /// Whether `h^L` of the chosen edge depends on `h⁰` of each edge.
    pub influences: Vec<bool>,
    /// Non-backtracking hops from each edge to the chosen one.
    pub hops: Vec<Option<usize>>,
    /// `influences[f]` equals `hops[f] <= layers` for every edge.
    pub matches_hops: bool,
}

fn hops_to(g: &DirectedEdgeGraph, edge: usize) -> Vec<Option<usize>> {
    let n = g.n_edges();
    (0..n)
        .map(|start| {
            let mut dist = vec![None; n];
            dist[start] = Some(0);
            let mut q = VecDeque::from([start]);
            while let Some(x) = q.pop_front() {
                if x == edge {
                    return dist[x];
                }
                for y in 0..n {
                    if g.source[y] == g.target[x] && g.target[y] != g.source[x] && dist[y].is_none() {
                        dist[y] = Some(dist[x].unwrap() + 1);
                        q.push_back(y);
                    }
                }
            }
            None
        })
        .collect()
}

pub fn compute_receptive_field(text: &str, layers: usize, edge: usize) -> Result<ReceptiveField, String> {
    if !(1..=MAX_LAYERS).contains(&layers) {
        return Err(format!("layers must lie in 1..={}", MAX_LAYERS));
    }
    let m = read_molecule(text)?;
    let g = DirectedEdgeGraph::from_molecule(&m).map_err(|e| e.to_string())?;
    let n = g.n_edges();
    if edge >= n {
        return Err(format!("edge {} out of range ({} directed edges)", edge, n));
    }
    let config = ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_interaction: layers,
        n_transformer: 1,
        ffn_multiplier: 2,
    };
    let model = Dgann::new(config, &mut ChaCha8Rng::seed_from_u64(layers as u64)).map_err(|e| e.to_string())?;
    let batch = GraphBatch::new(&[&g]).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &batch).map_err(|e| e.to_string())?;
    let last = *out.edge_layers.last().expect("at least one layer");
    let d = config.d_model;
    let mut w = Tensor::zeros(vec![n, d]);
    for j in 0..d {
        w.data_mut()[edge * d + j] = 0.5 + ((j + 1) as f64 * 0.61).cos();
    }
    let wv = tape.constant(w);
    let prod = tape.mul(last, wv).map_err(|e| e.to_string())?;
    let s = tape.sum(prod);
    let grads = tape.backward_retaining(s, &[out.edge_init]).map_err(|e| e.to_string())?;
    let gh = grads.wrt(&tape, out.edge_init);
    let influences: Vec<bool> = (0..n).map(|f| gh.row(f).iter().any(|v| *v != 0.0)).collect();
    let hops = hops_to(&g, edge);
    let matches_hops = influences
        .iter()
        .zip(&hops)
        .all(|(&i, h)| i == h.is_some_and(|k| k <= layers));
    Ok(ReceptiveField {
        edge,
        layers,
        influences,
        hops,
        matches_hops,
    })
}

#[derive(Serialize)]
pub struct RotationSweep {
    pub degrees: Vec<f64>,
    /// Output after rotating the input about the z axis.
    pub rotated: Vec<f64>,
    /// Output after shifting the input by a large fixed offset.
    pub translated: Vec<f64>,
}

pub fn compute_rotation_sweep(text: &str, steps: usize, seed: u64) -> Result<RotationSweep, String> {
    if !(2..=360).contains(&steps) {
        return Err("steps must lie in 2..=360".into());
    }
    let m = read_molecule(text)?;
    let config = ModelConfig {
        d_model: 32,
        n_heads: 4,
        n_interaction: 2,
        n_transformer: 2,
        ffn_multiplier: 2,
    };
    let model = Dgann::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let degrees: Vec<f64> = (0..steps).map(|i| 360.0 * i as f64 / steps as f64).collect();
    let turned: Vec<Molecule> = degrees
        .iter()
        .map(|deg| {
            let (s, c) = deg.to_radians().sin_cos();
            rotate(&m, &[[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        })
        .collect();
    let shifted: Vec<Molecule> = turned
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut t = t.clone();
            let offset = [25.0 + i as f64, -40.0, 7.5 * i as f64];
            for a in &mut t.atoms {
                for k in 0..3 {
                    a.position[k] += offset[k];
                }
            }
            t
        })
        .collect();
    Ok(RotationSweep {
        degrees,
        rotated: model.predict(&turned).map_err(|e| e.to_string())?,
        translated: model.predict(&shifted).map_err(|e| e.to_string())?,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

/// JSON array of preset names.
#[wasm_bindgen]
pub fn preset_names() -> String {
    serde_json::to_string(&presets().iter().map(|p| p.0).collect::<Vec<_>>()).expect("strings serialize")
}

#[wasm_bindgen]
pub fn preset(name: &str) -> Result<String, JsValue> {
    presets()
        .into_iter()
        .find(|p| p.0 == name)
        .map(|p| p.1)
        .ok_or_else(|| JsValue::from_str(&format!("no preset '{}'", name)))
}

#[wasm_bindgen]
pub fn inspect(text: &str) -> Result<String, JsValue> {
    to_js(inspect_molecule(text))
}

#[wasm_bindgen]
pub fn receptive_field(text: &str, layers: usize, edge: usize) -> Result<String, JsValue> {
    to_js(compute_receptive_field(text, layers, edge))
}

#[wasm_bindgen]
pub fn rotation_sweep(text: &str, steps: usize, seed: u32) -> Result<String, JsValue> {
    to_js(compute_rotation_sweep(text, steps, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for (name, text) in presets() {
            let v = inspect_molecule(&text).unwrap_or_else(|e| panic!("{}: {}", name, e));
            assert_eq!(v.edges.len(), 2 * v.bonds.len());
        }
    }

    #[test]
    fn plain_xyz_gets_bonds() {
        let text = "3\nwater\nO 0 0 0.1173\nH 0 0.7572 -0.4692\nH 0 -0.7572 -0.4692\n";
        let v = inspect_molecule(text).unwrap();
        assert_eq!(v.bonds.len(), 2);
        assert!(inspect_molecule("2\nx\nO 0 0 0\n").is_err());
    }

    #[test]
    fn receptive_field_follows_hops() {
        let chain = &presets()[0].1;
        for layers in 1..=5 {
            let r = compute_receptive_field(chain, layers, 0).unwrap();
            assert!(r.matches_hops, "layers {}", layers);
            assert!(r.influences[0]);
            assert!(!r.influences[1], "the reverse edge never feeds back");
        }
        assert!(compute_receptive_field(chain, 0, 0).is_err());
        assert!(compute_receptive_field(chain, 2, 99).is_err());
    }

    #[test]
    fn rotation_moves_output_and_translation_does_not() {
        let text = &presets()[3].1;
        let s = compute_rotation_sweep(text, 12, 1).unwrap();
        assert_eq!(s.rotated.len(), 12);
        let spread = s.rotated.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - s.rotated.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(spread > 1e-6);
        for (r, t) in s.rotated.iter().zip(&s.translated) {
            assert!((r - t).abs() <= 1e-9);
        }
    }
}
