use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dgann::molgraph::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(rel)
}

fn read(rel: &str) -> String {
    fs::read_to_string(data(rel)).unwrap()
}

fn qm9_corpus() -> Vec<Qm9Record> {
    let mut paths: Vec<_> = fs::read_dir(data("qm9"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| parse_qm9_xyz(&fs::read_to_string(p).unwrap()).unwrap())
        .collect()
}

fn bond_set(m: &Molecule) -> Vec<(usize, usize, BondOrder)> {
    let mut v: Vec<_> = m
        .bonds
        .iter()
        .map(|b| (b.a.min(b.b), b.a.max(b.b), b.order))
        .collect();
    v.sort_by_key(|x| (x.0, x.1));
    v
}

#[test]
fn water_sdf() {
    let ms = parse_sdf(&read("sdf/water.sdf")).unwrap();
    assert_eq!(ms.len(), 1);
    assert_eq!(ms[0].atoms.len(), 3);
    assert_eq!(ms[0].bonds.len(), 2);
    assert!(ms[0].bonds.iter().all(|b| b.order == BondOrder::Single));
}

#[test]
fn benzene_sdf_aromatic() {
    let ms = parse_sdf(&read("sdf/benzene.sdf")).unwrap();
    let aromatic = ms[0].bonds.iter().filter(|b| b.order == BondOrder::Aromatic).count();
    assert_eq!(aromatic, 6);
    assert_eq!(bond_set(&ms[0]), {
        let mut p = ms[0].clone();
        p.bonds = perceive_bonds(&p);
        bond_set(&p)
    });
    let (atoms, _) = featurize(&ms[0]);
    for f in &atoms[..6] {
        assert_eq!((f[8], f[10]), (1.0, 1.0));
    }
}

#[test]
fn malformed_files_rejected_with_line() {
    let expect: BTreeMap<&str, usize> = [
        ("short_atom_block.sdf", 8),
        ("bond_index_out_of_range.sdf", 9),
        ("unsupported_element.sdf", 5),
        ("bad_counts_line.sdf", 4),
        ("unsupported_bond_type.sdf", 9),
        ("v3000.sdf", 4),
        ("duplicate_bond.sdf", 4),
        ("truncated.sdf", 7),
        ("missing_property.xyz", 2),
        ("bad_float.xyz", 3),
        ("unknown_element.xyz", 3),
        ("truncated_atoms.xyz", 9),
        ("bad_atom_count.xyz", 1),
    ]
    .into_iter()
    .collect();
    let mut seen = 0;
    for entry in fs::read_dir(data("malformed")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let text = fs::read_to_string(&path).unwrap();
        let err = if name.ends_with(".sdf") {
            parse_sdf(&text).unwrap_err()
        } else {
            parse_qm9_xyz(&text).unwrap_err()
        };
        let line = expect[name.as_str()];
        assert!(
            err.to_string().starts_with(&format!("line {}:", line)),
            "{}: {}",
            name,
            err
        );
        seen += 1;
    }
    assert_eq!(seen, expect.len());
}

#[test]
fn exponent_variants_match_original() {
    let original = parse_qm9_xyz(&read("qm9/dsgdb9nsd_000043.xyz")).unwrap();
    for v in ["xyz_variants/fortran_exponent.xyz", "xyz_variants/mathematica_exponent.xyz"] {
        assert_eq!(parse_qm9_xyz(&read(v)).unwrap(), original, "{}", v);
    }
}

#[test]
fn real_records_have_finite_targets_in_range() {
    let corpus = qm9_corpus();
    assert_eq!(corpus.len(), 48);
    for r in &corpus {
        assert!(r.targets.iter().all(|t| t.is_finite()));
        let u0 = r.target(Target::U0Atom);
        // published range is printed to three decimals
        let half_ulp = 5e-4;
        assert!(
            (-19444.385 - half_ulp..=-1101.488 + half_ulp).contains(&u0),
            "{} U0 {}",
            r.index,
            u0
        );
        assert!(r.molecule.is_connected(), "{}", r.index);
    }
    let methane = corpus.iter().find(|r| r.index == 1).unwrap();
    assert_eq!(methane.molecule.species_counts(), [4, 1, 0, 0, 0]);
    assert!((methane.target(Target::U0Atom) - -40.47893 * HARTREE_TO_EV).abs() < 1e-9);
}

#[test]
fn perceived_bonds_match_reference_toolkit() {
    let reference = parse_sdf(&read("sdf/qm9_rdkit_reference.sdf")).unwrap();
    assert_eq!(reference.len(), 46);
    let corpus = qm9_corpus();
    for r in &reference {
        let rec = corpus.iter().find(|c| c.molecule.id == r.id).unwrap();
        assert_eq!(bond_set(&rec.molecule), bond_set(r), "{} {}", r.id, rec.smiles);
    }
}

#[test]
fn sdf_round_trip_on_corpus() {
    let reference = parse_sdf(&read("sdf/qm9_rdkit_reference.sdf")).unwrap();
    let back = parse_sdf(&write_sdf(&reference)).unwrap();
    assert_eq!(back, reference);
}

#[test]
fn incoming_lists_exhaustive() {
    let mut molecules: Vec<Molecule> = qm9_corpus().into_iter().map(|r| r.molecule).collect();
    molecules.push(parse_sdf(&read("sdf/water.sdf")).unwrap().remove(0));
    let small = molecules.iter().filter(|m| m.atoms.len() <= 6).count();
    assert!(small >= 6);
    for m in &molecules {
        let g = DirectedEdgeGraph::from_molecule(m).unwrap();
        assert_eq!(g.n_edges(), 2 * m.bonds.len());
        for e in 0..g.n_edges() {
            let rev = DirectedEdgeGraph::reverse(e);
            assert_eq!((g.source[rev], g.target[rev]), (g.target[e], g.source[e]));
            let mut expect: Vec<usize> = (0..g.n_edges())
                .filter(|&k| g.target[k] == g.source[e] && k != rev)
                .collect();
            expect.sort_unstable();
            let mut got = g.incoming.group(e).to_vec();
            got.sort_unstable();
            assert_eq!(got, expect);
            for c in 0..3 {
                assert_eq!(g.rel_pos[e * 3 + c], -g.rel_pos[rev * 3 + c]);
            }
        }
    }
}

#[test]
fn featurize_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for r in qm9_corpus() {
        let m = &r.molecule;
        let (a, b) = featurize(m);
        let mut perm: Vec<usize> = (0..m.atoms.len()).collect();
        perm.shuffle(&mut rng);
        let p = m.permuted(&perm);
        let (pa, pb) = featurize(&p);
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(pa[new], a[old]);
        }
        assert_eq!(pb, b);
        // perception on permuted coordinates agrees up to relabeling
        let mut again = p.clone();
        again.bonds = perceive_bonds(&p);
        assert_eq!(bond_set(&again), bond_set(&p), "{}", m.id);
    }
}

#[test]
fn features_respect_layout() {
    for r in qm9_corpus() {
        let (atoms, bonds) = featurize(&r.molecule);
        for (f, atom) in atoms.iter().zip(&r.molecule.atoms) {
            assert_eq!(f[..5].iter().sum::<f64>(), 1.0);
            assert!(f[9..12].iter().sum::<f64>() <= 1.0);
            assert_eq!(f[5], atom.element.atomic_number() as f64);
            assert!(f[12] >= 0.0);
            if matches!(atom.element, Element::H | Element::F) {
                assert_eq!(f[9..12].iter().sum::<f64>(), 0.0);
            }
        }
        for f in bonds {
            assert_eq!(f.iter().sum::<f64>(), 1.0);
        }
    }
}
