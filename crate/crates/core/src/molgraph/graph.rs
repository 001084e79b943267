use super::features::{AtomFeatures, BondFeatures, ATOM_FEATURE_DIM, BOND_FEATURE_DIM};
use super::{featurize, Molecule, Rotation};
use crate::error::{Error, Result};
use crate::tensor::Segments;

/// Width of `[e_ij; x_j]`.
pub const EDGE_INPUT_DIM: usize = BOND_FEATURE_DIM + ATOM_FEATURE_DIM;

/// Directed copies of every bond. Bond `b` yields edge `2b` (a→b) and edge
/// `2b + 1` (b→a), so the reverse of edge `e` is `e ^ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectedEdgeGraph {
    pub n_atoms: usize,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    /// Row-major `E × 17`: bond one-hot followed by source-atom features.
    pub edge_input: Vec<f64>,
    /// Row-major `E × 3`: target position minus source position.
    pub rel_pos: Vec<f64>,
    /// For edge j→i, the edges k→j with k ≠ i.
    pub incoming: Segments,
    /// For atom i, every edge terminating at i.
    pub into_atom: Segments,
    /// Row-major `N × 13`.
    pub atom_features: Vec<f64>,
    /// Row-major `N × 3`.
    pub positions: Vec<f64>,
}

impl DirectedEdgeGraph {
    pub fn n_edges(&self) -> usize {
        self.source.len()
    }

    pub fn reverse(edge: usize) -> usize {
        edge ^ 1
    }

    /// Featurizes with the built-in rules and builds the graph.
    pub fn from_molecule(m: &Molecule) -> Result<Self> {
        let (a, b) = featurize(m);
        build_directed_graph(m, &a, &b)
    }

    /// The same graph with positions and edge vectors rotated by `r`.
    pub fn rotated(&self, r: &Rotation) -> Self {
        let apply = |v: &[f64]| -> Vec<f64> {
            v.chunks_exact(3)
                .flat_map(|p| (0..3).map(move |i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]))
                .collect()
        };
        DirectedEdgeGraph {
            rel_pos: apply(&self.rel_pos),
            positions: apply(&self.positions),
            ..self.clone()
        }
    }
}

pub fn build_directed_graph(
    m: &Molecule,
    atom_features: &[AtomFeatures],
    bond_features: &[BondFeatures],
) -> Result<DirectedEdgeGraph> {
    let n = m.atoms.len();
    if atom_features.len() != n {
        return Err(Error::Data(format!(
            "{}: {} atom feature rows for {} atoms",
            m.id,
            atom_features.len(),
            n
        )));
    }
    if bond_features.len() != m.bonds.len() {
        return Err(Error::Data(format!(
            "{}: {} bond feature rows for {} bonds",
            m.id,
            bond_features.len(),
            m.bonds.len()
        )));
    }
    let n_edges = 2 * m.bonds.len();
    let mut source = Vec::with_capacity(n_edges);
    let mut target = Vec::with_capacity(n_edges);
    let mut edge_input = Vec::with_capacity(n_edges * EDGE_INPUT_DIM);
    let mut rel_pos = Vec::with_capacity(n_edges * 3);
    for (bond, bf) in m.bonds.iter().zip(bond_features) {
        for (j, i) in [(bond.a, bond.b), (bond.b, bond.a)] {
            source.push(j);
            target.push(i);
            edge_input.extend_from_slice(bf);
            edge_input.extend_from_slice(&atom_features[j]);
            let (pi, pj) = (m.atoms[i].position, m.atoms[j].position);
            rel_pos.extend((0..3).map(|c| pi[c] - pj[c]));
        }
    }
    let mut into: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &t) in target.iter().enumerate() {
        into[t].push(e);
    }
    let mut incoming = Segments::new();
    for e in 0..n_edges {
        let rev = DirectedEdgeGraph::reverse(e);
        incoming.push_group(into[source[e]].iter().copied().filter(|&k| k != rev));
    }
    Ok(DirectedEdgeGraph {
        n_atoms: n,
        source,
        target,
        edge_input,
        rel_pos,
        incoming,
        into_atom: Segments::from_groups(&into),
        atom_features: atom_features.iter().flatten().copied().collect(),
        positions: m.atoms.iter().flat_map(|a| a.position).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::fixtures::{atom, chain, methane, single};
    use crate::molgraph::Element;

    #[test]
    fn rotated_graph_matches_rotated_molecule() {
        use rand::SeedableRng;
        let m = methane();
        let r = crate::molgraph::random_rotation_matrix(&mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        let a = DirectedEdgeGraph::from_molecule(&m).unwrap().rotated(&r);
        let b = DirectedEdgeGraph::from_molecule(&crate::molgraph::rotate(&m, &r)).unwrap();
        assert_eq!(a.edge_input, b.edge_input);
        for (x, y) in a.rel_pos.iter().zip(&b.rel_pos).chain(a.positions.iter().zip(&b.positions)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn diatomic_has_empty_incoming() {
        let m = Molecule {
            id: "co".into(),
            atoms: vec![atom(Element::C, 0.0, 0.0, 0.0), atom(Element::O, 1.13, 0.0, 0.0)],
            bonds: vec![single(0, 1)],
        };
        let g = DirectedEdgeGraph::from_molecule(&m).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert!(g.incoming.group(0).is_empty() && g.incoming.group(1).is_empty());
    }

    #[test]
    fn chain_incoming() {
        // A=0, B=1, C=2; edge B→A is bond 0 reversed (edge 1), C→B is edge 3
        let g = DirectedEdgeGraph::from_molecule(&chain(3)).unwrap();
        assert_eq!((g.source[1], g.target[1]), (1, 0));
        assert_eq!((g.source[3], g.target[3]), (2, 1));
        assert_eq!(g.incoming.group(1), &[3]);
    }

    #[test]
    fn methane_incoming_counts() {
        let g = DirectedEdgeGraph::from_molecule(&methane()).unwrap();
        for e in 0..g.n_edges() {
            let expect = if g.target[e] == 0 { 0 } else { 3 };
            assert_eq!(g.incoming.group(e).len(), expect, "edge {}", e);
        }
    }

    #[test]
    fn edge_input_layout() {
        let g = DirectedEdgeGraph::from_molecule(&methane()).unwrap();
        // edge 0 is C→H: single bond then carbon features
        let row = &g.edge_input[..EDGE_INPUT_DIM];
        assert_eq!(&row[..4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(row[4 + 1], 1.0);
        assert_eq!(row[4 + 5], 6.0);
        assert_eq!(g.rel_pos[..3], [0.629, 0.629, 0.629]);
    }

    #[test]
    fn feature_count_mismatch_rejected() {
        assert!(build_directed_graph(&methane(), &[], &[]).is_err());
    }
}
