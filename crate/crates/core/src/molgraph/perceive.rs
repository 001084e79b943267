//! Bond perception from Cartesian coordinates: distance-based connectivity,
//! valence-satisfying bond-order assignment, then Hückel ring aromaticity.

use std::collections::HashSet;

use super::{Bond, BondOrder, Element, Molecule};

/// Two atoms are bonded when their distance is below this multiple of the
/// summed covalent radii.
pub const BOND_TOLERANCE: f64 = 1.25;

const MAX_RING: usize = 9;

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn connectivity(m: &Molecule) -> Vec<(usize, usize)> {
    let n = m.atoms.len();
    let cutoff = |i: usize, j: usize| {
        BOND_TOLERANCE * (m.atoms[i].element.covalent_radius() + m.atoms[j].element.covalent_radius())
    };
    let mut pairs = Vec::new();
    // Hydrogen and fluorine keep only their nearest partner.
    let monovalent = |e: Element| matches!(e, Element::H | Element::F);
    for i in 0..n {
        if !monovalent(m.atoms[i].element) {
            continue;
        }
        let best = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, dist(m.atoms[i].position, m.atoms[j].position)))
            .filter(|&(j, d)| d < cutoff(i, j))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = best {
            pairs.push((i.min(j), i.max(j)));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if monovalent(m.atoms[i].element) || monovalent(m.atoms[j].element) {
                continue;
            }
            if dist(m.atoms[i].position, m.atoms[j].position) < cutoff(i, j) {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

struct OrderSearch<'a> {
    /// Heavy-heavy bonds whose endpoints both have spare valence.
    candidates: Vec<usize>,
    ends: &'a [(usize, usize)],
    /// For each atom, the position in `candidates` of its last candidate bond.
    last_use: Vec<Option<usize>>,
    spare: Vec<u32>,
    extra: Vec<u32>,
    best: Option<(u32, Vec<u32>)>,
}

impl OrderSearch<'_> {
    fn run(&mut self, pos: usize, residual: u32) {
        if let Some((b, _)) = &self.best {
            if residual >= *b {
                return;
            }
        }
        if pos == self.candidates.len() {
            self.best = Some((residual, self.extra.clone()));
            return;
        }
        let bond = self.candidates[pos];
        let (a, b) = self.ends[bond];
        let hi = self.spare[a].min(self.spare[b]).min(2);
        for x in (0..=hi).rev() {
            self.spare[a] -= x;
            self.spare[b] -= x;
            self.extra[bond] = x;
            let mut r = residual;
            for atom in [a, b] {
                if self.last_use[atom] == Some(pos) {
                    r += self.spare[atom];
                }
            }
            self.run(pos + 1, r);
            self.spare[a] += x;
            self.spare[b] += x;
            self.extra[bond] = 0;
            if matches!(&self.best, Some((0, _))) {
                return;
            }
        }
    }
}

fn assign_orders(m: &Molecule, ends: &[(usize, usize)]) -> Vec<u32> {
    let n = m.atoms.len();
    let mut degree = vec![0u32; n];
    for &(a, b) in ends {
        degree[a] += 1;
        degree[b] += 1;
    }
    let spare: Vec<u32> = (0..n)
        .map(|i| m.atoms[i].element.valence().saturating_sub(degree[i]))
        .collect();
    let candidates: Vec<usize> = (0..ends.len())
        .filter(|&k| spare[ends[k].0] > 0 && spare[ends[k].1] > 0)
        .collect();
    let mut last_use = vec![None; n];
    for (pos, &k) in candidates.iter().enumerate() {
        last_use[ends[k].0] = Some(pos);
        last_use[ends[k].1] = Some(pos);
    }
    let base: u32 = (0..n).filter(|&i| last_use[i].is_none()).map(|i| spare[i]).sum();
    let mut search = OrderSearch {
        candidates,
        ends,
        last_use,
        spare,
        extra: vec![0; ends.len()],
        best: None,
    };
    search.run(0, base);
    let (residual, extra) = search.best.expect("search visits at least one leaf");
    if residual > 0 {
        log::debug!(
            "{}: {} unsatisfied valence(s) after bond-order assignment",
            m.id,
            residual
        );
    }
    extra
}

/// All simple cycles of length 3 to 9, each as an ordered atom list.
fn small_rings(n: usize, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut rings = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    fn dfs(
        start: usize,
        path: &mut Vec<usize>,
        adj: &[Vec<usize>],
        rings: &mut Vec<Vec<usize>>,
        seen: &mut HashSet<Vec<usize>>,
    ) {
        let cur = *path.last().unwrap();
        for &nb in &adj[cur] {
            if nb == start && path.len() >= 3 {
                let mut key = path.clone();
                key.sort_unstable();
                if seen.insert(key) {
                    rings.push(path.clone());
                }
            } else if nb > start && !path.contains(&nb) && path.len() < MAX_RING {
                path.push(nb);
                dfs(start, path, adj, rings, seen);
                path.pop();
            }
        }
    }
    for s in 0..n {
        let mut path = vec![s];
        dfs(s, &mut path, adj, &mut rings, &mut seen);
    }
    rings
}

fn ring_bonds(ring: &[usize]) -> HashSet<(usize, usize)> {
    (0..ring.len())
        .map(|k| {
            let (a, b) = (ring[k], ring[(k + 1) % ring.len()]);
            (a.min(b), a.max(b))
        })
        .collect()
}

/// Hückel test on a ring system given by its atoms and bonds.
fn is_aromatic(
    atoms: &HashSet<usize>,
    bonds: &HashSet<(usize, usize)>,
    m: &Molecule,
    adj: &[Vec<usize>],
    order: &dyn Fn(usize, usize) -> u32,
) -> bool {
    let mut pi = 0;
    for &i in atoms {
        let e = m.atoms[i].element;
        if !matches!(e, Element::C | Element::N | Element::O) {
            return false;
        }
        let in_ring_double = adj[i]
            .iter()
            .any(|&j| bonds.contains(&(i.min(j), i.max(j))) && order(i, j) == 2);
        if in_ring_double {
            pi += 1;
            continue;
        }
        let exo_double = adj[i].iter().find(|&&j| order(i, j) >= 2);
        match (e, exo_double) {
            (Element::C, Some(&j)) if matches!(m.atoms[j].element, Element::O | Element::N) => {}
            (Element::C, _) => return false,
            (Element::N, None) if adj[i].len() == 3 => pi += 2,
            (Element::O, None) if adj[i].len() == 2 => pi += 2,
            _ => return false,
        }
    }
    pi % 4 == 2
}

/// Perceives bonds (with orders and aromaticity) from atom positions.
pub fn perceive_bonds(m: &Molecule) -> Vec<Bond> {
    let ends = connectivity(m);
    let extra = assign_orders(m, &ends);
    let n = m.atoms.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &ends {
        adj[a].push(b);
        adj[b].push(a);
    }
    let order_of = |i: usize, j: usize| {
        let key = (i.min(j), i.max(j));
        ends.binary_search(&key).map(|k| 1 + extra[k]).unwrap_or(0)
    };

    let rings = small_rings(n, &adj);
    let ring_sets: Vec<(HashSet<usize>, HashSet<(usize, usize)>)> = rings
        .iter()
        .map(|r| (r.iter().copied().collect(), ring_bonds(r)))
        .collect();
    let mut aromatic: HashSet<(usize, usize)> = HashSet::new();
    for (atoms, bonds) in &ring_sets {
        if is_aromatic(atoms, bonds, m, &adj, &order_of) {
            aromatic.extend(bonds.iter().copied());
        }
    }
    let mut fused = Vec::new();
    // Fused pairs sharing one bond are also tested as one system; the shared
    // bond only counts as aromatic through an aromatic member ring.
    for x in 0..ring_sets.len() {
        for y in x + 1..ring_sets.len() {
            let (ax, bx) = &ring_sets[x];
            let (ay, by) = &ring_sets[y];
            if bx.intersection(by).count() != 1 {
                continue;
            }
            let atoms: HashSet<usize> = ax.union(ay).copied().collect();
            let bonds: HashSet<(usize, usize)> = bx.union(by).copied().collect();
            if is_aromatic(&atoms, &bonds, m, &adj, &order_of) {
                fused.extend(bx.symmetric_difference(by).copied());
            }
        }
    }
    aromatic.extend(fused);

    ends.iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let order = if aromatic.contains(&(a, b)) {
                BondOrder::Aromatic
            } else {
                match extra[k] {
                    0 => BondOrder::Single,
                    1 => BondOrder::Double,
                    _ => BondOrder::Triple,
                }
            };
            Bond::new(a, b, order)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::fixtures::{atom, methane, water};
    use crate::molgraph::Element::*;

    fn orders(m: &Molecule) -> Vec<(usize, usize, BondOrder)> {
        perceive_bonds(m).iter().map(|b| (b.a, b.b, b.order)).collect()
    }

    #[test]
    fn water_and_methane() {
        assert_eq!(perceive_bonds(&water()), water().bonds);
        assert_eq!(perceive_bonds(&methane()), methane().bonds);
    }

    #[test]
    fn hydrogen_molecule() {
        let m = Molecule {
            id: "h2".into(),
            atoms: vec![atom(H, 0.0, 0.0, 0.0), atom(H, 0.74, 0.0, 0.0)],
            bonds: vec![],
        };
        assert_eq!(orders(&m), vec![(0, 1, BondOrder::Single)]);
    }

    #[test]
    fn hydrogen_cyanide_triple() {
        let m = Molecule {
            id: "hcn".into(),
            atoms: vec![atom(C, 0.0, 0.0, 0.0), atom(N, 1.156, 0.0, 0.0), atom(H, -1.066, 0.0, 0.0)],
            bonds: vec![],
        };
        assert_eq!(
            orders(&m),
            vec![(0, 1, BondOrder::Triple), (0, 2, BondOrder::Single)]
        );
    }

    #[test]
    fn benzene_is_aromatic() {
        let mut atoms = Vec::new();
        for k in 0..6 {
            let t = k as f64 * std::f64::consts::PI / 3.0;
            atoms.push(atom(C, 1.39 * t.cos(), 1.39 * t.sin(), 0.0));
        }
        for k in 0..6 {
            let t = k as f64 * std::f64::consts::PI / 3.0;
            atoms.push(atom(H, 2.47 * t.cos(), 2.47 * t.sin(), 0.0));
        }
        let m = Molecule {
            id: "benzene".into(),
            atoms,
            bonds: vec![],
        };
        let bonds = perceive_bonds(&m);
        assert_eq!(bonds.len(), 12);
        let aromatic = bonds.iter().filter(|b| b.order == BondOrder::Aromatic).count();
        assert_eq!(aromatic, 6);
    }
}
