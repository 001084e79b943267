use std::fmt;
use std::str::FromStr;

use super::{perceive_bonds, Atom, Element, Molecule};
use crate::error::{Error, Result};

/// CODATA 2018 Hartree energy in eV, rounded to the precision used for all
/// unit conversion in this crate.
pub const HARTREE_TO_EV: f64 = 27.211386;

/// The twelve regression targets, in the fixed order used everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Target {
    Mu,
    Alpha,
    Homo,
    Lumo,
    Gap,
    R2,
    Zpve,
    U0Atom,
    UAtom,
    HAtom,
    GAtom,
    Cv,
}

impl Target {
    pub const ALL: [Target; 12] = [
        Target::Mu,
        Target::Alpha,
        Target::Homo,
        Target::Lumo,
        Target::Gap,
        Target::R2,
        Target::Zpve,
        Target::U0Atom,
        Target::UAtom,
        Target::HAtom,
        Target::GAtom,
        Target::Cv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Mu => "mu",
            Target::Alpha => "alpha",
            Target::Homo => "homo",
            Target::Lumo => "lumo",
            Target::Gap => "gap",
            Target::R2 => "r2",
            Target::Zpve => "zpve",
            Target::U0Atom => "u0_atom",
            Target::UAtom => "u_atom",
            Target::HAtom => "h_atom",
            Target::GAtom => "g_atom",
            Target::Cv => "cv",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Target::Mu => "D",
            Target::Alpha => "a0^3",
            Target::R2 => "a0^2",
            Target::Cv => "cal/(mol K)",
            _ => "eV",
        }
    }

    /// Targets that are fitted by per-species least squares before training.
    pub fn uses_lsm(self) -> bool {
        matches!(
            self,
            Target::Zpve | Target::U0Atom | Target::UAtom | Target::HAtom | Target::GAtom
        )
    }

    /// Index into an atom-reference table (U0, U, H, G) for energy targets.
    pub fn atomref_column(self) -> Option<usize> {
        match self {
            Target::U0Atom => Some(0),
            Target::UAtom => Some(1),
            Target::HAtom => Some(2),
            Target::GAtom => Some(3),
            _ => None,
        }
    }

    pub fn names() -> String {
        Target::ALL.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::Data(format!(
                    "unknown target '{}'; valid targets: {}",
                    s,
                    Target::names()
                ))
            })
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One QM9 molecule with its targets in Table-1 units. Energy targets hold
/// total energies unless an atom-reference table is applied downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct Qm9Record {
    pub index: u64,
    pub molecule: Molecule,
    pub rotational_constants: [f64; 3],
    pub targets: [f64; 12],
    pub smiles: String,
}

impl Qm9Record {
    pub fn target(&self, t: Target) -> f64 {
        self.targets[t.index()]
    }
}

/// Parses a float written with `E`, Fortran `D`/`d`, or Mathematica `*^`
/// exponents.
pub fn parse_fortran_float(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    let normalized = if s.contains("*^") {
        s.replacen("*^", "e", 1)
    } else {
        s.replace(['D', 'd'], "e")
    };
    let v: f64 = normalized.parse().ok()?;
    v.is_finite().then_some(v)
}

fn float_at(tok: &str, line: usize, what: &str) -> Result<f64> {
    parse_fortran_float(tok)
        .ok_or_else(|| Error::parse(line, format!("cannot parse {} '{}'", what, tok)))
}

/// Parses one QM9 extended-XYZ record. Bonds are perceived from geometry.
pub fn parse_qm9_xyz(text: &str) -> Result<Qm9Record> {
    let lines: Vec<&str> = text.lines().collect();
    let count_line = lines.first().ok_or_else(|| Error::parse(1, "empty file"))?;
    let n: usize = count_line
        .trim()
        .parse()
        .map_err(|_| Error::parse(1, format!("bad atom count '{}'", count_line.trim())))?;
    if n == 0 {
        return Err(Error::parse(1, "atom count is zero"));
    }

    let props: Vec<&str> = lines
        .get(1)
        .ok_or_else(|| Error::parse(2, "missing property line"))?
        .split_whitespace()
        .collect();
    if props.len() != 17 {
        return Err(Error::parse(
            2,
            format!("expected tag, index and 15 properties, found {} fields", props.len()),
        ));
    }
    if props[0] != "gdb" {
        return Err(Error::parse(2, format!("expected tag 'gdb', found '{}'", props[0])));
    }
    let index: u64 = props[1]
        .parse()
        .map_err(|_| Error::parse(2, format!("bad molecule index '{}'", props[1])))?;
    let mut p = [0.0; 15];
    for (v, tok) in p.iter_mut().zip(&props[2..]) {
        *v = float_at(tok, 2, "property")?;
    }
    // A B C mu alpha homo lumo gap r2 zpve U0 U H G Cv
    let ev = HARTREE_TO_EV;
    let targets = [
        p[3],
        p[4],
        p[5] * ev,
        p[6] * ev,
        p[7] * ev,
        p[8],
        p[9] * ev,
        p[10] * ev,
        p[11] * ev,
        p[12] * ev,
        p[13] * ev,
        p[14],
    ];

    let mut atoms = Vec::with_capacity(n);
    for k in 0..n {
        let ln = k + 3;
        let line = lines
            .get(k + 2)
            .ok_or_else(|| Error::parse(ln, format!("expected {} atom lines, file ended", n)))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 4 {
            return Err(Error::parse(ln, format!("malformed atom line '{}'", line.trim())));
        }
        let element: Element = f[0]
            .parse()
            .map_err(|e: Error| Error::parse(ln, e.to_string()))?;
        let mut position = [0.0; 3];
        for (c, tok) in position.iter_mut().zip(&f[1..4]) {
            *c = float_at(tok, ln, "coordinate")?;
        }
        atoms.push(Atom { element, position });
    }

    let smiles = lines
        .get(n + 3)
        .and_then(|l| l.split_whitespace().next())
        .unwrap_or("")
        .to_string();

    let mut molecule = Molecule {
        id: format!("gdb_{}", index),
        atoms,
        bonds: Vec::new(),
    };
    molecule.bonds = perceive_bonds(&molecule);
    molecule.validate()?;

    Ok(Qm9Record {
        index,
        molecule,
        rotational_constants: [p[0], p[1], p[2]],
        targets,
        smiles,
    })
}
