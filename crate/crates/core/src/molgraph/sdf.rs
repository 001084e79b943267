use std::fmt::Write as _;

use super::{Atom, Bond, BondOrder, Element, Molecule};
use crate::error::{Error, Result};

fn field(line: &str, start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        ""
    } else {
        line.get(start..end).unwrap_or("").trim()
    }
}

fn int(s: &str, line: usize, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("bad {} '{}'", what, s)))
}

fn float(s: &str, line: usize, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::parse(line, format!("bad {} '{}'", what, s)))
}

fn parse_counts(line: &str, ln: usize) -> Result<(usize, usize)> {
    if line.contains("V3000") {
        return Err(Error::parse(ln, "V3000 records are not supported"));
    }
    let fixed = (field(line, 0, 3), field(line, 3, 6));
    let (a, b) = if !fixed.0.is_empty() && !fixed.1.is_empty() && line.len() >= 6 {
        fixed
    } else {
        let mut it = line.split_whitespace();
        (it.next().unwrap_or(""), it.next().unwrap_or(""))
    };
    Ok((
        int(a, ln, "atom count in counts line")?,
        int(b, ln, "bond count in counts line")?,
    ))
}

fn parse_atom(line: &str, ln: usize) -> Result<Atom> {
    let (xs, ys, zs, sym) = if line.len() >= 34 {
        (field(line, 0, 10), field(line, 10, 20), field(line, 20, 30), field(line, 31, 34))
    } else {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 4 {
            return Err(Error::parse(ln, format!("expected atom line, found '{}'", line.trim())));
        }
        (f[0], f[1], f[2], f[3])
    };
    let position = [
        float(xs, ln, "x coordinate")?,
        float(ys, ln, "y coordinate")?,
        float(zs, ln, "z coordinate")?,
    ];
    let element: Element = sym
        .parse()
        .map_err(|e: Error| Error::parse(ln, e.to_string()))?;
    Ok(Atom { element, position })
}

fn parse_bond(line: &str, ln: usize, n_atoms: usize) -> Result<Bond> {
    let (a, b, t) = if line.len() >= 9 && !field(line, 6, 9).is_empty() {
        (field(line, 0, 3), field(line, 3, 6), field(line, 6, 9))
    } else {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 {
            return Err(Error::parse(ln, format!("expected bond line, found '{}'", line.trim())));
        }
        (f[0], f[1], f[2])
    };
    let a = int(a, ln, "bond atom index")?;
    let b = int(b, ln, "bond atom index")?;
    for i in [a, b] {
        if i == 0 || i > n_atoms {
            return Err(Error::parse(
                ln,
                format!("bond atom index {} out of range 1..={}", i, n_atoms),
            ));
        }
    }
    if a == b {
        return Err(Error::parse(ln, format!("atom {} bonded to itself", a)));
    }
    let code = int(t, ln, "bond type")? as u32;
    let order = BondOrder::from_mdl_code(code)
        .ok_or_else(|| Error::parse(ln, format!("unsupported bond type {}", code)))?;
    Ok(Bond::new(a - 1, b - 1, order))
}

/// Parses MOL or SDF (V2000) text. Data items after `M  END` are skipped.
pub fn parse_sdf(text: &str) -> Result<Vec<Molecule>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i..].iter().all(|l| l.trim().is_empty()) {
            break;
        }
        let start = i;
        if start + 3 >= lines.len() {
            return Err(Error::parse(lines.len() + 1, "record ended before counts line"));
        }
        let id = match lines[start].trim() {
            "" => format!("mol{}", out.len() + 1),
            s => s.to_string(),
        };
        let counts_ln = start + 4;
        let (na, nb) = parse_counts(lines[start + 3], counts_ln)?;
        if na == 0 {
            return Err(Error::parse(counts_ln, "counts line declares zero atoms"));
        }
        let mut cursor = start + 4;
        let next = |cursor: &mut usize, what: &str| -> Result<(&str, usize)> {
            let ln = *cursor + 1;
            let line = lines.get(*cursor).ok_or_else(|| {
                Error::parse(ln, format!("file ended, expected {}", what))
            })?;
            if line.trim() == "$$$$" || line.starts_with("M  END") {
                return Err(Error::parse(ln, format!("expected {}, found '{}'", what, line.trim())));
            }
            *cursor += 1;
            Ok((line, ln))
        };
        let mut atoms = Vec::with_capacity(na);
        for _ in 0..na {
            let (line, ln) = next(&mut cursor, "atom line")?;
            atoms.push(parse_atom(line, ln)?);
        }
        let mut bonds = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (line, ln) = next(&mut cursor, "bond line")?;
            bonds.push(parse_bond(line, ln, na)?);
        }
        while cursor < lines.len() && lines[cursor].trim() != "$$$$" {
            cursor += 1;
        }
        let m = Molecule { id, atoms, bonds };
        m.validate().map_err(|e| Error::parse(counts_ln, e.to_string()))?;
        out.push(m);
        i = cursor + 1;
    }
    if out.is_empty() {
        return Err(Error::parse(1, "no molecule records"));
    }
    Ok(out)
}

/// Serializes molecules as V2000 records separated by `$$$$`.
pub fn write_sdf(molecules: &[Molecule]) -> String {
    let mut s = String::new();
    for m in molecules {
        let _ = writeln!(s, "{}", m.id);
        let _ = writeln!(s, "  dgann");
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000",
            m.atoms.len(),
            m.bonds.len()
        );
        for a in &m.atoms {
            let _ = writeln!(
                s,
                "{:>10.4}{:>10.4}{:>10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0",
                a.position[0], a.position[1], a.position[2], a.element.symbol()
            );
        }
        for b in &m.bonds {
            let _ = writeln!(s, "{:>3}{:>3}{:>3}  0", b.a + 1, b.b + 1, b.order.mdl_code());
        }
        let _ = writeln!(s, "M  END");
        let _ = writeln!(s, "$$$$");
    }
    s
}
