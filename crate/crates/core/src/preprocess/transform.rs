use super::lsm::{fit_lsm, LsmModel};
use crate::error::{Error, Result};
use crate::molgraph::Target;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Standardize {
    pub mean: f64,
    pub std: f64,
}

/// Target preprocessing: optional LSM residual, then optional
/// standardization, both fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetTransform {
    pub target: Target,
    pub lsm: Option<LsmModel>,
    pub standardize: Option<Standardize>,
}

impl TargetTransform {
    pub fn identity(target: Target) -> Self {
        TargetTransform {
            target,
            lsm: None,
            standardize: None,
        }
    }

    /// LSM for the targets that use it, then standardization if requested.
    pub fn fit(target: Target, counts: &[[usize; 5]], y: &[f64], standardize: bool) -> Result<Self> {
        let lsm = if target.uses_lsm() {
            Some(fit_lsm(counts, y, target.name())?)
        } else {
            None
        };
        let mut t = TargetTransform {
            target,
            lsm,
            standardize: None,
        };
        if standardize {
            let r = t.transform(counts, y)?;
            if r.len() < 2 {
                return Err(Error::invalid("standardize", "need at least 2 training targets"));
            }
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64;
            let std = var.sqrt();
            if !(std > 0.0) || !std.is_finite() {
                return Err(Error::invalid(
                    "standardize",
                    format!("training targets have zero or non-finite spread ({})", std),
                ));
            }
            t.standardize = Some(Standardize { mean, std });
        }
        Ok(t)
    }

    pub fn transform(&self, counts: &[[usize; 5]], y: &[f64]) -> Result<Vec<f64>> {
        let mut r = match &self.lsm {
            Some(l) => l.residualize(counts, y)?,
            None => y.to_vec(),
        };
        if let Some(s) = self.standardize {
            r.iter_mut().for_each(|v| *v = (*v - s.mean) / s.std);
        }
        Ok(r)
    }

    pub fn inverse(&self, counts: &[[usize; 5]], t: &[f64]) -> Result<Vec<f64>> {
        let mut r = t.to_vec();
        if let Some(s) = self.standardize {
            r.iter_mut().for_each(|v| *v = *v * s.std + s.mean);
        }
        match &self.lsm {
            Some(l) => l.inverse(counts, &r),
            None => Ok(r),
        }
    }
}
