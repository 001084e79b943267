use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Species order of the count columns.
pub const SPECIES: [&str; 5] = ["H", "C", "N", "O", "F"];

/// Linear baseline `y ≈ Σ_s θ_s·count_s + θ_bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct LsmModel {
    /// Five per-species coefficients (H, C, N, O, F) then the bias.
    pub theta: [f64; 6],
    pub fitted: bool,
    pub target: String,
}

fn design(counts: &[[usize; 5]]) -> DMatrix<f64> {
    DMatrix::from_fn(counts.len(), 6, |r, c| if c < 5 { counts[r][c] as f64 } else { 1.0 })
}

impl LsmModel {
    pub fn unfitted(target: &str) -> Self {
        LsmModel {
            theta: [0.0; 6],
            fitted: false,
            target: target.to_string(),
        }
    }

    pub fn baseline(&self, counts: &[usize; 5]) -> f64 {
        counts
            .iter()
            .zip(&self.theta)
            .map(|(&c, t)| c as f64 * t)
            .sum::<f64>()
            + self.theta[5]
    }

    fn require_fitted(&self, op: &'static str) -> Result<()> {
        if self.fitted {
            Ok(())
        } else {
            Err(Error::invalid(op, format!("LSM model for '{}' is not fitted", self.target)))
        }
    }

    /// `y − X·θ`.
    pub fn residualize(&self, counts: &[[usize; 5]], y: &[f64]) -> Result<Vec<f64>> {
        self.require_fitted("residualize")?;
        check_len("residualize", counts, y)?;
        Ok(counts.iter().zip(y).map(|(c, v)| v - self.baseline(c)).collect())
    }

    /// `r + X·θ`.
    pub fn inverse(&self, counts: &[[usize; 5]], r: &[f64]) -> Result<Vec<f64>> {
        self.require_fitted("inverse")?;
        check_len("inverse", counts, r)?;
        Ok(counts.iter().zip(r).map(|(c, v)| v + self.baseline(c)).collect())
    }
}

fn check_len(op: &'static str, counts: &[[usize; 5]], y: &[f64]) -> Result<()> {
    if counts.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![counts.len(), 5],
            rhs: vec![y.len()],
        });
    }
    Ok(())
}

/// Least-squares fit through a QR decomposition of `[counts | 1]`. Falls
/// back to the SVD pseudo-inverse when the design is rank deficient (for
/// example when a species never occurs).
pub fn fit_lsm(counts: &[[usize; 5]], y: &[f64], target: &str) -> Result<LsmModel> {
    check_len("fit_lsm", counts, y)?;
    if counts.len() < 6 {
        return Err(Error::invalid(
            "fit_lsm",
            format!("need at least 6 molecules, got {}", counts.len()),
        ));
    }
    let x = design(counts);
    let rhs = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..6).map(|i| r[(i, i)].abs()).collect();
    let scale = diag.iter().cloned().fold(0.0, f64::max);
    let full_rank = diag.iter().all(|d| *d > scale * 1e-10);
    let theta = if full_rank {
        let qty = qr.q().transpose() * &rhs;
        r.solve_upper_triangular(&qty)
            .ok_or_else(|| Error::invalid("fit_lsm", "triangular solve failed"))?
    } else {
        log::warn!(
            "LSM design for '{}' is rank deficient (|R_ii| = {:?}); using the pseudo-inverse",
            target,
            diag
        );
        x.svd(true, true)
            .solve(&rhs, 1e-10 * scale.max(1.0))
            .map_err(|e| Error::invalid("fit_lsm", e))?
    };
    let mut t = [0.0; 6];
    t.copy_from_slice(theta.as_slice());
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("fit_lsm", format!("non-finite coefficients {:?}", t)));
    }
    Ok(LsmModel {
        theta: t,
        fitted: true,
        target: target.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_counts(rng: &mut ChaCha8Rng, n: usize) -> Vec<[usize; 5]> {
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(0..20),
                    rng.gen_range(1..10),
                    rng.gen_range(0..4),
                    rng.gen_range(0..4),
                    rng.gen_range(0..3),
                ]
            })
            .collect()
    }

    /// Solves the normal equations `XᵀX θ = Xᵀy` by Gauss-Jordan elimination.
    fn normal_equations(counts: &[[usize; 5]], y: &[f64]) -> [f64; 6] {
        let mut a = [[0.0f64; 7]; 6];
        for (c, v) in counts.iter().zip(y) {
            let row = [c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64, c[4] as f64, 1.0];
            for i in 0..6 {
                for j in 0..6 {
                    a[i][j] += row[i] * row[j];
                }
                a[i][6] += row[i] * v;
            }
        }
        for col in 0..6 {
            let piv = (col..6).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..6 {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for k in col..7 {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
        let mut t = [0.0; 6];
        for i in 0..6 {
            t[i] = a[i][6] / a[i][i];
        }
        t
    }

    #[test]
    fn exact_linear_targets_leave_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let counts = random_counts(&mut rng, 200);
        let truth = [-13.6, -1029.8, -1485.3, -2042.6, -2713.5, 3.2];
        let y: Vec<f64> = counts
            .iter()
            .map(|c| c.iter().zip(&truth).map(|(&n, t)| n as f64 * t).sum::<f64>() + truth[5])
            .collect();
        let m = fit_lsm(&counts, &y, "u0_atom").unwrap();
        for r in m.residualize(&counts, &y).unwrap() {
            assert!(r.abs() <= 1e-9, "{}", r);
        }
    }

    #[test]
    fn matches_normal_equation_oracle_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let counts = random_counts(&mut rng, 500);
        let truth = [0.5, 2.0, -1.0, 3.0, 0.25, 7.0];
        let y: Vec<f64> = counts
            .iter()
            .map(|c| {
                c.iter().zip(&truth).map(|(&n, t)| n as f64 * t).sum::<f64>()
                    + truth[5]
                    + rng.gen_range(-0.05..0.05)
            })
            .collect();
        let m = fit_lsm(&counts, &y, "zpve").unwrap();
        let oracle = normal_equations(&counts, &y);
        for (a, b) in m.theta.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b);
        }
        for (a, b) in m.theta.iter().zip(&truth) {
            assert!((a - b).abs() < 0.05);
        }
        let res = m.residualize(&counts, &y).unwrap();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for col in 0..6 {
            let dot: f64 = counts
                .iter()
                .zip(&res)
                .map(|(c, r)| if col < 5 { c[col] as f64 * r } else { *r })
                .sum();
            assert!(dot.abs() <= 1e-8 * ynorm, "column {} dot {}", col, dot);
        }
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let std = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / res.len() as f64).sqrt();
        assert!(mean.abs() <= 1e-8 * std);
        let back = m.inverse(&counts, &res).unwrap();
        for (a, b) in back.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn rank_deficient_design_falls_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = random_counts(&mut rng, 50);
        counts.iter_mut().for_each(|c| c[4] = 0);
        let y: Vec<f64> = counts.iter().map(|c| c[0] as f64 + 2.0 * c[1] as f64 + 1.0).collect();
        let m = fit_lsm(&counts, &y, "zpve").unwrap();
        assert!(m.theta[4].abs() < 1e-8);
        for r in m.residualize(&counts, &y).unwrap() {
            assert!(r.abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_small_or_unfitted() {
        assert!(fit_lsm(&[[1, 1, 0, 0, 0]; 5], &[1.0; 5], "zpve").is_err());
        let m = LsmModel::unfitted("zpve");
        assert!(m.residualize(&[[1, 0, 0, 0, 0]], &[1.0]).is_err());
        assert!(m.inverse(&[[1, 0, 0, 0, 0]], &[1.0]).is_err());
    }
}
