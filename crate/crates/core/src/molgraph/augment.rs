use rand::Rng;
use rand_distr::StandardNormal;

use super::Molecule;

pub type Rotation = [[f64; 3]; 3];

/// Translates so that the unweighted mean position is the origin.
pub fn center_molecule(m: &Molecule) -> Molecule {
    let n = m.atoms.len().max(1) as f64;
    let mut c = [0.0; 3];
    for a in &m.atoms {
        for k in 0..3 {
            c[k] += a.position[k];
        }
    }
    let c = c.map(|v| v / n);
    let mut out = m.clone();
    for a in &mut out.atoms {
        for k in 0..3 {
            a.position[k] -= c[k];
        }
    }
    out
}

/// Rotation matrix uniform on SO(3): a normalized Gaussian quaternion.
pub fn random_rotation_matrix<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let (w, x, y, z) = loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break (q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm);
        }
    };
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(m: &Molecule, r: &Rotation) -> Molecule {
    let mut out = m.clone();
    for a in &mut out.atoms {
        let p = a.position;
        a.position = std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]);
    }
    out
}

pub fn random_rotation<R: Rng + ?Sized>(m: &Molecule, rng: &mut R) -> Molecule {
    rotate(m, &random_rotation_matrix(rng))
}

/// Shifts every atom by one Gaussian offset with standard deviation `scale`.
pub fn random_translation<R: Rng + ?Sized>(m: &Molecule, rng: &mut R, scale: f64) -> Molecule {
    let t: [f64; 3] = std::array::from_fn(|_| scale * rng.sample::<f64, _>(StandardNormal));
    let mut out = m.clone();
    for a in &mut out.atoms {
        for k in 0..3 {
            a.position[k] += t[k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::fixtures::{atom, methane};
    use crate::molgraph::Element;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det(r: &Rotation) -> f64 {
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    fn dist(m: &Molecule, i: usize, j: usize) -> f64 {
        let (a, b) = (m.atoms[i].position, m.atoms[j].position);
        (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn centering() {
        let single = Molecule {
            id: "x".into(),
            atoms: vec![atom(Element::C, 1.0, 2.0, 3.0)],
            bonds: vec![],
        };
        assert_eq!(center_molecule(&single).atoms[0].position, [0.0; 3]);
        let mut m = methane();
        for a in &mut m.atoms {
            a.position[0] += 3.5;
            a.position[2] -= 1.25;
        }
        let c = center_molecule(&m);
        for k in 0..3 {
            let mean: f64 = c.atoms.iter().map(|a| a.position[k]).sum::<f64>() / 5.0;
            assert!(mean.abs() <= 1e-12);
        }
        let again = center_molecule(&c);
        for (a, b) in again.atoms.iter().zip(&c.atoms) {
            for k in 0..3 {
                assert!((a.position[k] - b.position[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rotation_is_proper_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = methane();
        for _ in 0..100 {
            let r = random_rotation_matrix(&mut rng);
            assert!((det(&r) - 1.0).abs() <= 1e-12);
            let rm = rotate(&m, &r);
            for i in 0..5 {
                for j in 0..5 {
                    assert!((dist(&m, i, j) - dist(&rm, i, j)).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn seeded_rotation_reproducible() {
        let a = random_rotation(&methane(), &mut ChaCha8Rng::seed_from_u64(3));
        let b = random_rotation(&methane(), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
