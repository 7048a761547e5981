//! Synthetic data: the three-covariate Gaussian additive scenario and a
//! one-covariate logistic fixture.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{GannError, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrueFunction {
    /// `x^2`
    Square,
    /// `2x`
    Double,
    /// `sin x`
    Sine,
}

impl TrueFunction {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            TrueFunction::Square => x * x,
            TrueFunction::Double => 2.0 * x,
            TrueFunction::Sine => x.sin(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub covariate_low: f64,
    pub covariate_high: f64,
    /// One covariate `x{j+1}` per entry.
    pub true_functions: Vec<TrueFunction>,
    pub alpha0: f64,
    pub noise_mean: f64,
    pub noise_sd: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n: 30625,
            covariate_low: -2.5,
            covariate_high: 2.5,
            true_functions: vec![TrueFunction::Square, TrueFunction::Double, TrueFunction::Sine],
            alpha0: 2.0,
            noise_mean: 0.25,
            noise_sd: 1.0,
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

impl ScenarioSpec {
    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.true_functions.len()).map(|j| format!("x{j}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.true_functions.is_empty() {
            return Err(GannError::InvalidConfig(
                "scenario needs n >= 1 and at least one function".into(),
            ));
        }
        if !(self.covariate_low <= self.covariate_high) {
            return Err(GannError::InvalidConfig(
                "covariate_low must not exceed covariate_high".into(),
            ));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() || !self.noise_mean.is_finite() {
            return Err(GannError::InvalidConfig(
                "noise parameters must be finite with sd >= 0".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(GannError::InvalidConfig("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// Columns `x1..xp, y`.
    pub train: Dataset,
    pub test: Dataset,
    /// Centred true term values `x1..xp` for the training rows.
    pub true_terms_train: Dataset,
    pub true_terms_test: Dataset,
}

/// Draws covariates uniformly, centres each true function over the full
/// sample, adds normal noise and splits rows by independent Bernoulli draws.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let n = spec.n;
    let names = spec.covariate_names();
    let width = spec.covariate_high - spec.covariate_low;

    let mut xs = Vec::with_capacity(names.len());
    let mut fs = Vec::with_capacity(names.len());
    for (j, f) in spec.true_functions.iter().enumerate() {
        let mut r = rng::stream(spec.seed, j as u64);
        let x: Vec<f64> = (0..n).map(|_| spec.covariate_low + width * r.random::<f64>()).collect();
        let mut fx: Vec<f64> = x.iter().map(|&v| f.eval(v)).collect();
        let mean = fx.iter().sum::<f64>() / n as f64;
        fx.iter_mut().for_each(|v| *v -= mean);
        xs.push(x);
        fs.push(fx);
    }

    let noise = Normal::new(spec.noise_mean, spec.noise_sd)
        .map_err(|e| GannError::InvalidConfig(format!("noise distribution: {e}")))?;
    let mut noise_rng = rng::stream(spec.seed, rng::NOISE_STREAM);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eta = fs.iter().fold(spec.alpha0, |acc, f| acc + f[i]);
            eta + noise.sample(&mut noise_rng)
        })
        .collect();

    let mut split_rng = rng::stream(spec.seed, rng::SPLIT_STREAM);
    let in_train: Vec<bool> = (0..n)
        .map(|_| split_rng.random::<f64>() < spec.train_fraction)
        .collect();
    let in_test: Vec<bool> = in_train.iter().map(|t| !t).collect();

    let mut columns: Vec<(String, Vec<f64>)> = names.iter().cloned().zip(xs).collect();
    columns.push(("y".to_string(), y));
    let all = Dataset::new(columns)?;
    let truth = Dataset::new(names.into_iter().zip(fs).collect())?;
    Ok(Scenario {
        train: all.filter_rows(&in_train),
        test: all.filter_rows(&in_test),
        true_terms_train: truth.filter_rows(&in_train),
        true_terms_test: truth.filter_rows(&in_test),
    })
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Probability curve of the logistic fixture.
pub fn fixture_probability(x: f64) -> f64 {
    sigmoid(1.5 * x.sin() + 0.5 * x)
}

/// `x ~ U[-3, 3]`, `p = sigmoid(1.5 sin x + 0.5 x)`, `y ~ Bernoulli(p)`.
/// Columns `x, y, p`.
pub fn generate_binomial_fixture(n: usize, seed: u64) -> Result<Dataset> {
    if n < 100 {
        return Err(GannError::InvalidConfig(format!(
            "binomial fixture needs n >= 100, got {n}"
        )));
    }
    let mut xr = rng::stream(seed, rng::FIXTURE_X_STREAM);
    let mut yr = rng::stream(seed, rng::FIXTURE_Y_STREAM);
    let x: Vec<f64> = (0..n).map(|_| -3.0 + 6.0 * xr.random::<f64>()).collect();
    let p: Vec<f64> = x.iter().map(|&v| fixture_probability(v)).collect();
    let y: Vec<f64> = p
        .iter()
        .map(|&p| if yr.random::<f64>() < p { 1.0 } else { 0.0 })
        .collect();
    Dataset::new(vec![("x", x), ("y", y), ("p", p)])
}
