use crate::error::{Error, Result};

/// Analysis data for mixture estimators: quantized exposures, optional
/// covariates and one outcome, all stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureData {
    pub exposure_names: Vec<String>,
    pub exposures: Vec<Vec<f64>>,
    pub covariate_names: Vec<String>,
    pub covariates: Vec<Vec<f64>>,
    pub outcome: Vec<f64>,
}

impl MixtureData {
    pub fn new(
        exposure_names: Vec<String>,
        exposures: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        if exposures.is_empty() {
            return Err(Error::InvalidModel("at least one exposure is required".into()));
        }
        if exposure_names.len() != exposures.len() || covariate_names.len() != covariates.len() {
            return Err(Error::DimensionMismatch(
                "column names do not match column count".into(),
            ));
        }
        let n = outcome.len();
        for (name, col) in exposure_names
            .iter()
            .zip(&exposures)
            .chain(covariate_names.iter().zip(&covariates))
        {
            if col.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "column `{name}` has {} rows, outcome has {n}",
                    col.len()
                )));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    column: name.clone(),
                    row,
                });
            }
        }
        if let Some(row) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                column: "outcome".into(),
                row,
            });
        }
        Ok(MixtureData {
            exposure_names,
            exposures,
            covariate_names,
            covariates,
            outcome,
        })
    }

    /// Exposures only, with default names `X1..Xd`.
    pub fn from_exposures(exposures: Vec<Vec<f64>>, outcome: Vec<f64>) -> Result<Self> {
        let names = (1..=exposures.len()).map(|j| format!("X{j}")).collect();
        Self::new(names, exposures, Vec::new(), Vec::new(), outcome)
    }

    pub fn nrows(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_exposures(&self) -> usize {
        self.exposures.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    /// Checks that every exposure value is an integer score in `0..q`.
    pub fn check_quantized(&self, q: usize) -> Result<()> {
        let max = q.saturating_sub(1);
        for (name, col) in self.exposure_names.iter().zip(&self.exposures) {
            if let Some(row) = col
                .iter()
                .position(|&v| v < 0.0 || v > max as f64 || v.fract() != 0.0)
            {
                return Err(Error::NotQuantized {
                    column: name.clone(),
                    row,
                    value: col[row],
                    max,
                });
            }
        }
        Ok(())
    }

    /// Rows selected by `rows` (repeats allowed), in that order.
    pub fn select_rows(&self, rows: &[usize]) -> MixtureData {
        let pick = |col: &Vec<f64>| rows.iter().map(|&i| col[i]).collect::<Vec<f64>>();
        MixtureData {
            exposure_names: self.exposure_names.clone(),
            exposures: self.exposures.iter().map(pick).collect(),
            covariate_names: self.covariate_names.clone(),
            covariates: self.covariates.iter().map(pick).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
        }
    }

    /// Copy with the outcome negated.
    pub fn negated_outcome(&self) -> MixtureData {
        let mut d = self.clone();
        d.outcome.iter_mut().for_each(|v| *v = -*v);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shapes_and_scores() {
        assert!(MixtureData::from_exposures(vec![vec![0.0, 1.0]], vec![1.0]).is_err());
        let d = MixtureData::from_exposures(vec![vec![0.0, 3.0, 2.0]], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(d.check_quantized(4).is_ok());
        assert!(matches!(
            d.check_quantized(3),
            Err(Error::NotQuantized { row: 1, .. })
        ));
        let picked = d.select_rows(&[2, 2, 0]);
        assert_eq!(picked.exposures[0], vec![2.0, 2.0, 0.0]);
        assert_eq!(picked.outcome, vec![3.0, 3.0, 1.0]);
    }
}
