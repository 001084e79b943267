use std::fmt::Write as _;

use super::{BondOrder, Element, Molecule};
use crate::error::{Error, Result};

pub const ATOM_FEATURE_DIM: usize = 13;
pub const BOND_FEATURE_DIM: usize = 4;

/// Column names of the atom feature vector, also the header of feature CSVs.
pub const ATOM_FEATURE_NAMES: [&str; ATOM_FEATURE_DIM] = [
    "is_h",
    "is_c",
    "is_n",
    "is_o",
    "is_f",
    "atomic_number",
    "acceptor",
    "donor",
    "aromatic",
    "sp",
    "sp2",
    "sp3",
    "num_h",
];

pub type AtomFeatures = [f64; ATOM_FEATURE_DIM];
pub type BondFeatures = [f64; BOND_FEATURE_DIM];

/// Rule-based atom features and one-hot bond features.
///
/// Acceptor: N or O. Donor: N or O with a bonded H. Hybridization for
/// C/N/O: a triple bond or two double bonds gives sp, an aromatic or one
/// double bond gives sp2, anything else sp3.
pub fn featurize(m: &Molecule) -> (Vec<AtomFeatures>, Vec<BondFeatures>) {
    let adj = m.neighbors();
    let atoms = m
        .atoms
        .iter()
        .zip(&adj)
        .map(|(atom, nbrs)| {
            let e = atom.element;
            let mut f = [0.0; ATOM_FEATURE_DIM];
            f[e.index()] = 1.0;
            f[5] = e.atomic_number() as f64;
            let num_h = nbrs.iter().filter(|(j, _)| m.atoms[*j].element == Element::H).count();
            let polar = matches!(e, Element::N | Element::O);
            f[6] = polar as u8 as f64;
            f[7] = (polar && num_h > 0) as u8 as f64;
            let aromatic = nbrs.iter().any(|(_, o)| *o == BondOrder::Aromatic);
            f[8] = aromatic as u8 as f64;
            if matches!(e, Element::C | Element::N | Element::O) {
                let doubles = nbrs.iter().filter(|(_, o)| *o == BondOrder::Double).count();
                let triple = nbrs.iter().any(|(_, o)| *o == BondOrder::Triple);
                let slot = if triple || doubles >= 2 {
                    9
                } else if aromatic || doubles == 1 {
                    10
                } else {
                    11
                };
                f[slot] = 1.0;
            }
            f[12] = num_h as f64;
            f
        })
        .collect();
    let bonds = m
        .bonds
        .iter()
        .map(|b| {
            let mut f = [0.0; BOND_FEATURE_DIM];
            f[b.order.index()] = 1.0;
            f
        })
        .collect();
    (atoms, bonds)
}

/// Writes one row per atom with the [`ATOM_FEATURE_NAMES`] header.
pub fn write_atom_features_csv(features: &[AtomFeatures]) -> String {
    let mut s = ATOM_FEATURE_NAMES.join(",");
    s.push('\n');
    for row in features {
        let cells: Vec<String> = row.iter().map(|v| format!("{}", v)).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// Reads precomputed atom features, overriding the rule-based ones.
pub fn read_atom_features_csv(text: &str) -> Result<Vec<AtomFeatures>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty feature file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ATOM_FEATURE_NAMES {
        return Err(Error::parse(
            1,
            format!("feature header must be: {}", ATOM_FEATURE_NAMES.join(",")),
        ));
    }
    lines
        .map(|(k, line)| {
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != ATOM_FEATURE_DIM {
                return Err(Error::parse(
                    k + 1,
                    format!("expected {} columns, found {}", ATOM_FEATURE_DIM, vals.len()),
                ));
            }
            let mut f = [0.0; ATOM_FEATURE_DIM];
            for (o, v) in f.iter_mut().zip(vals) {
                *o = v
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(k + 1, format!("bad value '{}'", v.trim())))?;
            }
            Ok(f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::fixtures::{atom, water};
    use crate::molgraph::{Bond, Element::*};

    #[test]
    fn hydrogen_in_h2() {
        let m = Molecule {
            id: "h2".into(),
            atoms: vec![atom(H, 0.0, 0.0, 0.0), atom(H, 0.74, 0.0, 0.0)],
            bonds: vec![Bond::new(0, 1, BondOrder::Single)],
        };
        let (a, b) = featurize(&m);
        let mut expect = [0.0; 13];
        expect[0] = 1.0;
        expect[5] = 1.0;
        expect[12] = 1.0;
        assert_eq!(a[0], expect);
        assert_eq!(b[0], [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn water_oxygen_is_donor_and_acceptor() {
        let (a, _) = featurize(&water());
        assert_eq!(a[0][3], 1.0);
        assert_eq!(a[0][5], 8.0);
        assert_eq!((a[0][6], a[0][7]), (1.0, 1.0));
        assert_eq!(a[0][11], 1.0);
        assert_eq!(a[0][12], 2.0);
    }

    #[test]
    fn csv_round_trip() {
        let (a, _) = featurize(&water());
        let text = write_atom_features_csv(&a);
        assert_eq!(read_atom_features_csv(&text).unwrap(), a);
        let bad = text.replace("is_h", "hydrogen");
        assert!(read_atom_features_csv(&bad).is_err());
    }
}
