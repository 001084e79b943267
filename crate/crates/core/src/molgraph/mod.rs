//! Molecules, file parsers, atom/bond features and the directed-edge graph.

mod augment;
mod features;
mod graph;
mod perceive;
mod qm9;
mod sdf;

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub use augment::{
    center_molecule, random_rotation, random_rotation_matrix, random_translation, rotate, Rotation,
};
pub use features::{
    featurize, read_atom_features_csv, write_atom_features_csv, AtomFeatures, BondFeatures,
    ATOM_FEATURE_DIM, ATOM_FEATURE_NAMES, BOND_FEATURE_DIM,
};
pub use graph::{build_directed_graph, DirectedEdgeGraph, EDGE_INPUT_DIM};
pub use perceive::perceive_bonds;
pub use qm9::{parse_fortran_float, parse_qm9_xyz, Qm9Record, Target, HARTREE_TO_EV};
pub use sdf::{parse_sdf, write_sdf};

/// The five species present in QM9, in the fixed order used for one-hot
/// features and species counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
}

impl Element {
    pub const ALL: [Element; 5] = [Element::H, Element::C, Element::N, Element::O, Element::F];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn atomic_number(self) -> u32 {
        match self {
            Element::H => 1,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
        }
    }

    /// Single-bond covalent radius in Å.
    pub fn covalent_radius(self) -> f64 {
        match self {
            Element::H => 0.31,
            Element::C => 0.76,
            Element::N => 0.71,
            Element::O => 0.66,
            Element::F => 0.57,
        }
    }

    /// Neutral valence.
    pub fn valence(self) -> u32 {
        match self {
            Element::H | Element::F => 1,
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
        }
    }
}

impl FromStr for Element {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "H" => Ok(Element::H),
            "C" => Ok(Element::C),
            "N" => Ok(Element::N),
            "O" => Ok(Element::O),
            "F" => Ok(Element::F),
            other => Err(Error::Data(format!("unsupported element '{}'", other))),
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub element: Element,
    /// Cartesian coordinates in Å.
    pub position: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn index(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    /// MDL bond type code.
    pub fn mdl_code(self) -> u32 {
        self.index() as u32 + 1
    }

    pub fn from_mdl_code(code: u32) -> Option<BondOrder> {
        match code {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            4 => Some(BondOrder::Aromatic),
            _ => None,
        }
    }
}

/// Undirected bond; `a < b` is not required but `a != b` is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Self {
        Bond { a, b, order }
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }

    fn key(&self) -> (usize, usize) {
        (self.a.min(self.b), self.a.max(self.b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Molecule {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl Molecule {
    /// Checks index ranges and duplicate bonds; warns when the bond graph
    /// is disconnected.
    pub fn validate(&self) -> crate::Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::Data(format!("{}: molecule has no atoms", self.id)));
        }
        let mut seen = std::collections::HashSet::new();
        for bond in &self.bonds {
            if bond.a >= self.atoms.len() || bond.b >= self.atoms.len() {
                return Err(Error::Data(format!(
                    "{}: bond {}-{} out of range for {} atoms",
                    self.id,
                    bond.a,
                    bond.b,
                    self.atoms.len()
                )));
            }
            if bond.a == bond.b {
                return Err(Error::Data(format!("{}: atom {} bonded to itself", self.id, bond.a)));
            }
            if !seen.insert(bond.key()) {
                return Err(Error::Data(format!(
                    "{}: duplicate bond {}-{}",
                    self.id, bond.a, bond.b
                )));
            }
        }
        if !self.is_connected() {
            log::warn!("{}: bond graph is disconnected", self.id);
        }
        Ok(())
    }

    pub fn neighbors(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.a].push((b.b, b.order));
            adj[b.b].push((b.a, b.order));
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return true;
        }
        let adj = self.neighbors();
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &(j, _) in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|s| *s)
    }

    /// Atom counts per species in H, C, N, O, F order.
    pub fn species_counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for a in &self.atoms {
            c[a.element.index()] += 1;
        }
        c
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    /// Relabels atoms so that new atom `i` is old atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Molecule {
            id: self.id.clone(),
            atoms: perm.iter().map(|&old| self.atoms[old]).collect(),
            bonds: self
                .bonds
                .iter()
                .map(|b| Bond::new(inverse[b.a], inverse[b.b], b.order))
                .collect(),
        }
    }
}
