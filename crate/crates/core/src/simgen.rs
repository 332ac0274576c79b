//! Data-generating processes for the simulation scenarios.
//!
//! Exposures are drawn directly on the quantile scale (uniform over `0..q`),
//! so quantization is a no-op. The outcome model is
//!
//! ```text
//! Y = sum_j b_j X_j + b_11 X_1^2 + b_12 X_1 X_2 + b_C C + e,   e ~ N(0, 1)
//! ```
//!
//! where `C` is an optional confounder that estimators never see.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::MixtureData;
use crate::error::{Error, Result};
use crate::qgc::{ExposureTerm, ModelSpec};

/// Realized Pearson correlation between a base vector and its copy drawn with
/// copy probability `sqrt(0.75)`, measured at n = 10^6 (see the oracle in this
/// module's tests). Equals `sqrt(0.75)` up to Monte Carlo error, not 0.75.
pub const REALIZED_CORRELATION_RHO_075: f64 = 0.866;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub beta1: f64,
    pub beta2: f64,
    /// Coefficient on `X1 * X1`.
    pub beta_11: f64,
    /// Coefficient on `X1 * X2`.
    pub beta_12: f64,
    pub beta_c: f64,
    /// Correlation label for X1/X2; the copy probability is its square root.
    pub rho_x1x2: f64,
    /// Correlation label for X1/C; the copy probability is its square root.
    pub rho_xc: f64,
    pub n: usize,
    pub d: usize,
    pub q: usize,
    /// Every exposure gets coefficient `0.25 / d` (scenario 4).
    pub equal_split_betas: bool,
}

impl ScenarioSpec {
    fn base(id: u8, n: usize, d: usize) -> Self {
        ScenarioSpec {
            id,
            beta1: 0.0,
            beta2: 0.0,
            beta_11: 0.0,
            beta_12: 0.0,
            beta_c: 0.0,
            rho_x1x2: 0.0,
            rho_xc: 0.0,
            n,
            d,
            q: 4,
            equal_split_betas: false,
        }
    }

    /// Preset for scenarios 1 through 8. Scenario 5 defaults to
    /// `beta2 = -0.1` and `rho = 0.4` (the middle of its grid); scenario 6 to
    /// `beta1 = 0.25`.
    pub fn preset(id: u8, n: usize, d: usize) -> Result<Self> {
        let mut s = Self::base(id, n, d);
        match id {
            1 => {}
            2 => {
                s.beta1 = 0.25;
                s.beta2 = -0.25;
            }
            3 => s.beta1 = 0.25,
            4 => {
                s.equal_split_betas = true;
                s.beta1 = 0.25 / d as f64;
                s.beta2 = 0.25 / d as f64;
            }
            5 => {
                s.beta1 = 0.25;
                s.beta2 = -0.1;
                s.rho_x1x2 = 0.4;
            }
            6 => {
                s.beta1 = 0.25;
                s.beta_c = 0.5;
                s.rho_xc = 0.75;
            }
            7 => {
                s.beta1 = 0.25;
                s.beta2 = 0.25;
                s.beta_12 = -0.15;
            }
            8 => {
                s.beta1 = 0.25;
                s.beta2 = 0.25;
                s.beta_11 = -0.15;
            }
            _ => return Err(Error::InvalidConfig(format!("unknown scenario {id}; expected 1-8"))),
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let coefs = [self.beta1, self.beta2, self.beta_11, self.beta_12, self.beta_c];
        if coefs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("scenario coefficients must be finite".into()));
        }
        if self.d < 2 {
            return Err(Error::InvalidConfig(format!("need d >= 2 exposures, got {}", self.d)));
        }
        if self.q < 2 {
            return Err(Error::InvalidQuantiles(self.q));
        }
        if self.n < 1 {
            return Err(Error::InvalidConfig("need n >= 1".into()));
        }
        for (name, rho) in [("rho_x1x2", self.rho_x1x2), ("rho_xc", self.rho_xc)] {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {rho}")));
            }
        }
        Ok(())
    }

    /// Main-effect coefficients for all `d` exposures.
    pub fn betas(&self) -> Vec<f64> {
        if self.equal_split_betas {
            return vec![0.25 / self.d as f64; self.d];
        }
        let mut b = vec![0.0; self.d];
        b[0] = self.beta1;
        b[1] = self.beta2;
        b
    }

    /// True `(psi1, psi2)`: the slope and curvature of the expected outcome
    /// when all exposures are set to the same level.
    pub fn truth(&self) -> (f64, f64) {
        (self.betas().iter().sum(), self.beta_11 + self.beta_12)
    }

    pub fn is_nonlinear(&self) -> bool {
        self.beta_11 != 0.0 || self.beta_12 != 0.0
    }

    pub fn copy_prob_x1x2(&self) -> f64 {
        self.rho_x1x2.sqrt()
    }

    pub fn copy_prob_xc(&self) -> f64 {
        self.rho_xc.sqrt()
    }

    fn has_confounder(&self) -> bool {
        self.beta_c != 0.0 || self.rho_xc > 0.0
    }

    /// Correctly specified quantile g-computation model for this scenario.
    pub fn qgcomp_model(&self) -> ModelSpec {
        let mut spec = ModelSpec::linear(self.d, self.q);
        if self.beta_12 != 0.0 {
            spec = spec.with_term(ExposureTerm::Product(0, 1));
        }
        if self.beta_11 != 0.0 {
            spec = spec.with_term(ExposureTerm::Square(0));
        }
        if self.is_nonlinear() {
            spec = spec.with_msm_degree(2);
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    /// Column-wise exposure scores in `0..q`.
    pub exposures: Vec<Vec<u32>>,
    pub outcome: Vec<f64>,
    /// Unmeasured confounder; never part of [`SimDataset::analysis_data`].
    pub hidden_confounder: Option<Vec<u32>>,
    pub truth: (f64, f64),
}

impl SimDataset {
    /// What an analyst would see: exposures and outcome, no confounder.
    pub fn analysis_data(&self) -> MixtureData {
        let exposures = self
            .exposures
            .iter()
            .map(|c| c.iter().map(|&v| v as f64).collect())
            .collect();
        MixtureData::from_exposures(exposures, self.outcome.clone())
            .expect("generated columns share one length")
    }

    pub fn corr_x1x2(&self) -> f64 {
        pearson_u32(&self.exposures[0], &self.exposures[1])
    }

    pub fn corr_x1c(&self) -> Option<f64> {
        self.hidden_confounder
            .as_ref()
            .map(|c| pearson_u32(&self.exposures[0], c))
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn pearson_u32(a: &[u32], b: &[u32]) -> f64 {
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    pearson(&fa, &fb)
}

/// `n` i.i.d. draws, uniform over `0..q`.
pub fn draw_quantized_uniform<R: Rng + ?Sized>(n: usize, q: usize, rng: &mut R) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..q as u32)).collect()
}

/// Element-wise: with probability `copy_prob` copy `base[i]`, otherwise take
/// `base[j]` for `j` drawn uniformly from the positions other than `i`. A
/// length-one base is always copied.
pub fn draw_correlated<R: Rng + ?Sized>(base: &[u32], copy_prob: f64, rng: &mut R) -> Vec<u32> {
    let n = base.len();
    (0..n)
        .map(|i| {
            if n == 1 || rng.random::<f64>() < copy_prob {
                base[i]
            } else {
                let j = rng.random_range(0..n - 1);
                base[if j >= i { j + 1 } else { j }]
            }
        })
        .collect()
}

/// Draws one dataset. Draw order: `X1`, `X2` (copied from `X1` when
/// `rho_x1x2 > 0`), `X3..Xd`, the confounder, then the noise.
pub fn generate_dataset<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<SimDataset> {
    spec.validate()?;
    let (n, d, q) = (spec.n, spec.d, spec.q);
    let mut exposures = Vec::with_capacity(d);
    exposures.push(draw_quantized_uniform(n, q, rng));
    let x2 = if spec.rho_x1x2 > 0.0 {
        draw_correlated(&exposures[0], spec.copy_prob_x1x2(), rng)
    } else {
        draw_quantized_uniform(n, q, rng)
    };
    exposures.push(x2);
    for _ in 2..d {
        exposures.push(draw_quantized_uniform(n, q, rng));
    }
    let confounder = spec
        .has_confounder()
        .then(|| draw_correlated(&exposures[0], spec.copy_prob_xc(), rng));

    let betas = spec.betas();
    let mut outcome: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for (col, b) in exposures.iter().zip(&betas) {
        if *b != 0.0 {
            outcome.iter_mut().zip(col).for_each(|(y, &x)| *y += b * x as f64);
        }
    }
    for i in 0..n {
        let x1 = exposures[0][i] as f64;
        let x2 = exposures[1][i] as f64;
        outcome[i] += spec.beta_11 * x1 * x1 + spec.beta_12 * x1 * x2;
        if let Some(c) = &confounder {
            outcome[i] += spec.beta_c * c[i] as f64;
        }
    }
    Ok(SimDataset {
        exposures,
        outcome,
        hidden_confounder: confounder,
        truth: spec.truth(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::fit_linear;
    use crate::rng::stream;

    #[test]
    fn uniform_levels_are_balanced() {
        let x = draw_quantized_uniform(1_000_000, 4, &mut stream(1));
        let mut counts = [0usize; 4];
        x.iter().for_each(|&v| counts[v as usize] += 1);
        for c in counts {
            assert!((c as f64 / 1e6 - 0.25).abs() < 0.002, "{counts:?}");
        }
        assert_eq!(x, draw_quantized_uniform(1_000_000, 4, &mut stream(1)));
    }

    #[test]
    fn full_copy_and_no_copy() {
        let base = draw_quantized_uniform(1_000_000, 4, &mut stream(2));
        assert_eq!(draw_correlated(&base, 1.0, &mut stream(3)), base);
        let indep = draw_correlated(&base, 0.0, &mut stream(3));
        assert!(pearson_u32(&base, &indep).abs() < 0.01);
        assert_eq!(draw_correlated(&[3], 0.0, &mut stream(3)), vec![3]);
    }

    #[test]
    fn copy_probability_sets_realized_correlation() {
        // Oracle: empirical Pearson correlation at n = 10^6.
        let base = draw_quantized_uniform(1_000_000, 4, &mut stream(4));
        let copy = draw_correlated(&base, 0.75f64.sqrt(), &mut stream(5));
        let r = pearson_u32(&base, &copy);
        assert!((r - REALIZED_CORRELATION_RHO_075).abs() < 0.002, "realized {r}");
        // The marginal stays uniform.
        let mut counts = [0usize; 4];
        copy.iter().for_each(|&v| counts[v as usize] += 1);
        assert!(counts.iter().all(|&c| (c as f64 / 1e6 - 0.25).abs() < 0.002));
    }

    #[test]
    fn null_scenario_outcome_is_standard_normal() {
        let spec = ScenarioSpec::preset(1, 1_000_000, 4).unwrap();
        let ds = generate_dataset(&spec, &mut stream(6)).unwrap();
        let n = ds.outcome.len() as f64;
        let mean = ds.outcome.iter().sum::<f64>() / n;
        let var = ds.outcome.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.05);
        assert_eq!(ds.truth, (0.0, 0.0));
    }

    #[test]
    fn equal_split_coefficients() {
        let spec = ScenarioSpec::preset(4, 10, 9).unwrap();
        assert!(spec.betas().iter().all(|&b| (b - 0.25 / 9.0).abs() < 1e-15));
        assert!((spec.truth().0 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn truths_match_scenario_table() {
        let want = [
            (1, 0.0, 0.0),
            (2, 0.0, 0.0),
            (3, 0.25, 0.0),
            (4, 0.25, 0.0),
            (6, 0.25, 0.0),
            (7, 0.5, -0.15),
            (8, 0.5, -0.15),
        ];
        for (id, p1, p2) in want {
            for d in [4, 9, 14] {
                let t = ScenarioSpec::preset(id, 500, d).unwrap().truth();
                assert!((t.0 - p1).abs() < 1e-12 && (t.1 - p2).abs() < 1e-12, "scenario {id}");
            }
        }
        for (b2, psi) in [(-0.2, 0.05), (-0.1, 0.15), (-0.05, 0.2)] {
            let mut s = ScenarioSpec::preset(5, 500, 4).unwrap();
            s.beta2 = b2;
            assert!((s.truth().0 - psi).abs() < 1e-12);
        }
        assert!(ScenarioSpec::preset(9, 500, 4).is_err());
    }

    #[test]
    fn large_sample_ols_recovers_single_effect() {
        let spec = ScenarioSpec::preset(3, 1_000_000, 6).unwrap();
        let data = generate_dataset(&spec, &mut stream(7)).unwrap().analysis_data();
        let model = ModelSpec::linear(6, 4);
        let fit = fit_linear(&model.design(&data, None).unwrap(), &data.outcome).unwrap();
        assert!((fit.beta[1] - 0.25).abs() < 0.005);
        for b in &fit.beta[2..] {
            assert!(b.abs() < 0.005, "{:?}", fit.beta);
        }
    }

    #[test]
    fn confounder_stays_hidden() {
        let spec = ScenarioSpec::preset(6, 2000, 4).unwrap();
        let ds = generate_dataset(&spec, &mut stream(8)).unwrap();
        assert!(ds.hidden_confounder.is_some());
        let data = ds.analysis_data();
        assert_eq!(data.n_exposures(), 4);
        assert_eq!(data.n_covariates(), 0);
        let r = ds.corr_x1c().unwrap();
        assert!((r - 0.866).abs() < 0.05, "{r}");
    }

    #[test]
    fn models_match_scenarios() {
        let m7 = ScenarioSpec::preset(7, 500, 4).unwrap().qgcomp_model();
        assert!(m7.exposure_terms.contains(&ExposureTerm::Product(0, 1)));
        assert_eq!(m7.msm_degree, 2);
        let m8 = ScenarioSpec::preset(8, 500, 4).unwrap().qgcomp_model();
        assert!(m8.exposure_terms.contains(&ExposureTerm::Square(0)));
        assert!(ScenarioSpec::preset(3, 500, 4).unwrap().qgcomp_model().has_closed_form());
    }
}
