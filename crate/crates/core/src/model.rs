//! Fitting configuration, the fitted model and everything done with it
//! afterwards: prediction, partial effects, summaries and the model file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backfit::{BackfitConfig, TermEstimator, TermState};
use crate::data::Dataset;
use crate::error::{GannError, Result};
use crate::family::{Family, FamilyKind, DEFAULT_MU_CLAMP};
use crate::formula::{Formula, TermKind};
use crate::nn::{Activation, AdamConfig, AdamState, Initializer, SubNetwork, TrainOptions};
use crate::rng;
use crate::scoring::{local_scoring, LocalScoringConfig, LocalScoringTrace};

pub const MODEL_FORMAT: &str = "gann-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("mse")
    }
}

impl FromStr for LossKind {
    type Err = GannError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" | "mean_squared_error" => Ok(LossKind::Mse),
            other => Err(GannError::NotImplemented(format!("loss `{other}` (supported: mse)"))),
        }
    }
}

/// Every knob of a fit. Field names follow the usual argument names of
/// additive neural network packages; Adam's `beta1`, `beta2` and `epsilon`
/// are exposed directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub num_units: Vec<usize>,
    pub family: FamilyKind,
    pub learning_rate: f64,
    pub activation: Activation,
    pub loss: LossKind,
    pub kernel_initializer: Initializer,
    pub bias_initializer: Initializer,
    /// Only `"l2"` is supported; its strength is `l2_penalty`.
    pub kernel_regularizer: Option<String>,
    pub bias_regularizer: Option<String>,
    pub activity_regularizer: Option<String>,
    pub l2_penalty: f64,
    /// Name of a column holding sample weights.
    pub w_train: Option<String>,
    pub bf_threshold: f64,
    pub ls_threshold: f64,
    pub max_iter_backfitting: usize,
    pub max_iter_ls: usize,
    pub batch_size: usize,
    pub epochs_per_sweep: usize,
    pub seed: Option<u64>,
    pub verbose: u8,
    pub mu_clamp: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        FitConfig {
            num_units: vec![64],
            family: FamilyKind::Gaussian,
            learning_rate: adam.learning_rate,
            activation: Activation::Relu,
            loss: LossKind::Mse,
            kernel_initializer: Initializer::GlorotNormal,
            bias_initializer: Initializer::Zeros,
            kernel_regularizer: None,
            bias_regularizer: None,
            activity_regularizer: None,
            l2_penalty: 0.0,
            w_train: None,
            bf_threshold: 0.001,
            ls_threshold: 0.1,
            max_iter_backfitting: 10,
            max_iter_ls: 10,
            batch_size: 128,
            epochs_per_sweep: 1,
            seed: None,
            verbose: 1,
            mu_clamp: DEFAULT_MU_CLAMP,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
        }
    }
}

impl FitConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(GannError::InvalidConfig(msg));
        if self.num_units.is_empty() || self.num_units.contains(&0) {
            return invalid("num_units must be a non-empty list of positive integers".into());
        }
        self.adam().validate()?;
        if !(self.bf_threshold > 0.0) {
            return invalid("bf_threshold must be positive".into());
        }
        if !(self.ls_threshold > 0.0) {
            return invalid("ls_threshold must be positive".into());
        }
        if self.max_iter_backfitting == 0 || self.max_iter_ls == 0 {
            return invalid("max_iter_backfitting and max_iter_ls must be at least 1".into());
        }
        if self.batch_size == 0 || self.epochs_per_sweep == 0 {
            return invalid("batch_size and epochs_per_sweep must be positive".into());
        }
        if !(self.l2_penalty >= 0.0) || !self.l2_penalty.is_finite() {
            return invalid("l2_penalty must be nonnegative".into());
        }
        if self.verbose > 1 {
            return invalid("verbose must be 0 or 1".into());
        }
        match self
            .kernel_regularizer
            .as_deref()
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            None => {}
            Some("l2") if self.l2_penalty > 0.0 => {}
            Some("l2") => return invalid("kernel_regularizer l2 requires l2_penalty > 0".into()),
            Some(other) => {
                return Err(GannError::NotImplemented(format!(
                    "kernel_regularizer `{other}` (supported: l2)"
                )))
            }
        }
        if let Some(r) = &self.bias_regularizer {
            return Err(GannError::NotImplemented(format!("bias_regularizer `{r}`")));
        }
        if let Some(r) = &self.activity_regularizer {
            return Err(GannError::NotImplemented(format!("activity_regularizer `{r}`")));
        }
        Family::new(self.family, self.mu_clamp)?;
        Ok(())
    }

    fn scoring_config(&self) -> LocalScoringConfig {
        LocalScoringConfig {
            ls_threshold: self.ls_threshold,
            max_iter_ls: self.max_iter_ls,
            backfit: BackfitConfig {
                bf_threshold: self.bf_threshold,
                max_iter_backfitting: self.max_iter_backfitting,
                epochs_per_sweep: self.epochs_per_sweep,
                train: TrainOptions {
                    batch_size: self.batch_size,
                    l2_penalty: self.l2_penalty,
                },
            },
            keep_working_values: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedEstimator {
    Smooth {
        network: SubNetwork,
    },
    /// `f(x) = slope * (x - x_center)` before the centring offset.
    Linear {
        slope: f64,
        x_center: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedTerm {
    pub name: String,
    pub estimator: FittedEstimator,
    /// Subtracted from the raw estimator output so that the term has zero
    /// mean over the training rows.
    pub offset: f64,
    pub x_min: f64,
    pub x_max: f64,
    /// Centred term values over the training rows.
    pub fitted: Vec<f64>,
}

impl FittedTerm {
    pub fn kind(&self) -> TermKind {
        match self.estimator {
            FittedEstimator::Smooth { .. } => TermKind::Smooth,
            FittedEstimator::Linear { .. } => TermKind::Linear,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = match &self.estimator {
            FittedEstimator::Smooth { network } => network.forward(x)?,
            FittedEstimator::Linear { slope, x_center } => {
                if let Some(i) = x.iter().position(|v| !v.is_finite()) {
                    return Err(GannError::InvalidData(format!(
                        "non-finite input at row {i} for term `{}`",
                        self.name
                    )));
                }
                x.iter().map(|v| slope * (v - x_center)).collect()
            }
        };
        out.iter_mut().for_each(|v| *v -= self.offset);
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        match &self.estimator {
            FittedEstimator::Smooth { network } => network.param_count(),
            FittedEstimator::Linear { .. } => 1,
        }
    }
}

/// One row of the training history: a term's loss in one backfitting sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub iteration: usize,
    pub model: String,
    /// Running count of training passes for this term.
    pub epoch: usize,
    pub train_loss: f64,
    /// Wall-clock time; not persisted so that model files stay reproducible.
    #[serde(skip)]
    pub timestamp: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub alpha: f64,
    pub deviance: f64,
    pub deviance_ratio: f64,
    pub per_term_epoch_loss: Vec<(String, f64)>,
    pub sweeps: usize,
    pub change_ratios: Vec<Option<f64>>,
    pub backfit_converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub initial_deviance: f64,
    pub iterations: Vec<IterationSummary>,
    pub epochs: Vec<EpochRow>,
    pub converged: bool,
}

impl TrainingHistory {
    /// Columns `iteration, model, epoch, train_loss, timestamp`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "model", "epoch", "train_loss", "timestamp"])?;
        for row in &self.epochs {
            w.write_record([
                row.iteration.to_string(),
                row.model.clone(),
                row.epoch.to_string(),
                row.train_loss.to_string(),
                row.timestamp.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn from_trace(trace: &LocalScoringTrace) -> Self {
        let mut epochs = Vec::new();
        let mut counts: Vec<(String, usize)> = Vec::new();
        for it in &trace.iterations {
            for sweep in &it.sweeps {
                for tl in &sweep.term_losses {
                    let epoch = match counts.iter_mut().find(|(n, _)| *n == tl.term) {
                        Some((_, c)) => {
                            *c += 1;
                            *c
                        }
                        None => {
                            counts.push((tl.term.clone(), 1));
                            1
                        }
                    };
                    epochs.push(EpochRow {
                        iteration: it.iteration,
                        model: tl.term.clone(),
                        epoch,
                        train_loss: tl.loss,
                        timestamp: tl.timestamp.clone(),
                    });
                }
            }
        }
        TrainingHistory {
            initial_deviance: trace.initial_deviance,
            iterations: trace
                .iterations
                .iter()
                .map(|it| IterationSummary {
                    iteration: it.iteration,
                    alpha: it.alpha,
                    deviance: it.deviance,
                    deviance_ratio: it.deviance_ratio,
                    per_term_epoch_loss: it.per_term_epoch_loss.clone(),
                    sweeps: it.sweeps.len(),
                    change_ratios: it.sweeps.iter().map(|s| s.change_ratio).collect(),
                    backfit_converged: it.backfit_converged,
                })
                .collect(),
            epochs,
            converged: trace.converged,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictType {
    /// Additive predictor `alpha + sum_j f_j`.
    Link,
    /// Inverse link of the additive predictor.
    Response,
    /// One column per term.
    Terms,
}

impl FromStr for PredictType {
    type Err = GannError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "link" => Ok(PredictType::Link),
            "response" => Ok(PredictType::Response),
            "terms" => Ok(PredictType::Terms),
            other => Err(GannError::InvalidConfig(format!(
                "unknown prediction type `{other}` (expected link, response or terms)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Values(Vec<f64>),
    Terms { names: Vec<String>, columns: Vec<Vec<f64>> },
}

impl Prediction {
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Prediction::Values(v) => Some(v),
            Prediction::Terms { .. } => None,
        }
    }

    pub fn into_dataset(self, value_column: &str) -> Result<Dataset> {
        match self {
            Prediction::Values(v) => Dataset::new(vec![(value_column.to_string(), v)]),
            Prediction::Terms { names, columns } => Dataset::new(names.into_iter().zip(columns).collect()),
        }
    }
}

/// The curve `x -> f_j(x)` on an even grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialEffect {
    pub term: String,
    pub x: Vec<f64>,
    pub f_hat: Vec<f64>,
}

/// Long-format table with columns `term, x, f_hat`.
pub fn write_partial_effects_csv<W: std::io::Write>(effects: &[PartialEffect], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "x", "f_hat"])?;
    for e in effects {
        for (x, f) in e.x.iter().zip(&e.f_hat) {
            w.write_record([e.term.clone(), x.to_string(), f.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub formula: Formula,
    pub family: Family,
    pub alpha: f64,
    pub terms: Vec<FittedTerm>,
    pub training_mse: f64,
    pub sample_size: usize,
    pub history: TrainingHistory,
    pub config: FitConfig,
    /// Seed actually used (drawn at random when the config leaves it unset).
    pub seed: u64,
    /// Final additive predictor over the training rows.
    pub training_eta: Vec<f64>,
}

fn grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    (0..size)
        .map(|k| {
            if k + 1 == size {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (size - 1) as f64
            }
        })
        .collect()
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

pub fn fit(data: &Dataset, formula: &Formula, config: &FitConfig) -> Result<FittedModel> {
    config.validate()?;
    let family = Family::new(config.family, config.mu_clamp)?;
    let y = data.column(formula.response())?;
    let covariates: Vec<&[f64]> = formula
        .terms()
        .iter()
        .map(|t| data.column(&t.name))
        .collect::<Result<_>>()?;
    let weights = match &config.w_train {
        Some(name) => Some(data.column(name)?),
        None => None,
    };
    family.validate_response(y)?;
    for (term, x) in formula.terms().iter().zip(&covariates) {
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(GannError::InvalidData(format!(
                "non-finite value in column `{}` at row {i}",
                term.name
            )));
        }
    }

    let seed = config.seed.unwrap_or_else(rand::random);
    let n = y.len();
    let terms: Vec<TermState> = formula
        .terms()
        .iter()
        .enumerate()
        .map(|(j, term)| match term.kind {
            TermKind::Smooth => {
                let net = SubNetwork::with_initializers(
                    term.name.clone(),
                    &config.num_units,
                    config.activation,
                    config.kernel_initializer,
                    config.bias_initializer,
                    &mut rng::init_stream(seed, j),
                )?;
                let adam = AdamState::for_network(config.adam(), &net);
                Ok(TermState::smooth(
                    term.name.clone(),
                    net,
                    adam,
                    rng::shuffle_stream(seed, j),
                    n,
                ))
            }
            TermKind::Linear => Ok(TermState::linear(term.name.clone(), n)),
        })
        .collect::<Result<_>>()?;

    let result = local_scoring(y, &covariates, terms, &family, weights, &config.scoring_config())?;
    let training_mse = y.iter().zip(&result.mu).map(|(y, m)| (y - m).powi(2)).sum::<f64>() / n as f64;

    let fitted_terms = result
        .state
        .terms
        .into_iter()
        .zip(&covariates)
        .map(|(t, x)| {
            let (x_min, x_max) = min_max(x);
            FittedTerm {
                name: t.name,
                estimator: match t.estimator {
                    TermEstimator::Smooth { net, .. } => FittedEstimator::Smooth { network: net },
                    TermEstimator::Linear { slope, x_center } => FittedEstimator::Linear { slope, x_center },
                },
                offset: t.offset,
                x_min,
                x_max,
                fitted: t.fitted,
            }
        })
        .collect();

    Ok(FittedModel {
        formula: formula.clone(),
        family,
        alpha: result.state.alpha,
        terms: fitted_terms,
        training_mse,
        sample_size: n,
        history: TrainingHistory::from_trace(&result.trace),
        config: FitConfig {
            seed: Some(seed),
            ..config.clone()
        },
        seed,
        training_eta: result.eta,
    })
}

impl FittedModel {
    pub fn term(&self, name: &str) -> Result<&FittedTerm> {
        self.terms
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| GannError::UnknownTerm { term: name.to_string() })
    }

    /// Covariate columns a dataset must provide for prediction.
    pub fn covariate_names(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name.as_str()).collect()
    }

    fn term_columns(&self, newdata: Option<&Dataset>, selected: &[&FittedTerm]) -> Result<Vec<Vec<f64>>> {
        selected
            .iter()
            .map(|term| match newdata {
                None => Ok(term.fitted.clone()),
                Some(data) => {
                    let x = data.column(&term.name)?;
                    let outside = x.iter().filter(|v| **v < term.x_min || **v > term.x_max).count();
                    if outside > 0 {
                        log::warn!(
                            "term `{}`: {outside} value(s) outside the training range [{}, {}]; extrapolating",
                            term.name,
                            term.x_min,
                            term.x_max
                        );
                    }
                    term.predict(x)
                }
            })
            .collect()
    }

    /// Predictions for `newdata`, or for the training rows when `None`.
    /// `terms` selects and orders the columns of a `Terms` prediction and is
    /// ignored otherwise.
    pub fn predict(&self, newdata: Option<&Dataset>, kind: PredictType, terms: Option<&[&str]>) -> Result<Prediction> {
        match kind {
            PredictType::Terms => {
                let selected: Vec<&FittedTerm> = match terms {
                    Some(names) => names.iter().map(|n| self.term(n)).collect::<Result<_>>()?,
                    None => self.terms.iter().collect(),
                };
                let columns = self.term_columns(newdata, &selected)?;
                Ok(Prediction::Terms {
                    names: selected.iter().map(|t| t.name.clone()).collect(),
                    columns,
                })
            }
            PredictType::Link | PredictType::Response => {
                if let Some(names) = terms {
                    for n in names {
                        self.term(n)?;
                    }
                }
                let eta = self.link_from_columns(newdata)?;
                Ok(Prediction::Values(match kind {
                    PredictType::Response => self.family.inverse_link(&eta),
                    _ => eta,
                }))
            }
        }
    }

    fn link_from_columns(&self, newdata: Option<&Dataset>) -> Result<Vec<f64>> {
        let all: Vec<&FittedTerm> = self.terms.iter().collect();
        let columns = self.term_columns(newdata, &all)?;
        let n = match newdata {
            Some(d) => d.n_rows(),
            None => self.sample_size,
        };
        let mut eta = vec![self.alpha; n];
        for col in &columns {
            for (e, f) in eta.iter_mut().zip(col) {
                *e += f;
            }
        }
        Ok(eta)
    }

    pub fn predict_link(&self, newdata: Option<&Dataset>) -> Result<Vec<f64>> {
        self.link_from_columns(newdata)
    }

    pub fn predict_response(&self, newdata: Option<&Dataset>) -> Result<Vec<f64>> {
        Ok(self.family.inverse_link(&self.link_from_columns(newdata)?))
    }

    /// Evaluates each requested term (all when empty) on `grid_size` evenly
    /// spaced points spanning its training range, or the range found in
    /// `range_data` when given.
    pub fn partial_effects(
        &self,
        terms: &[&str],
        grid_size: usize,
        range_data: Option<&Dataset>,
    ) -> Result<Vec<PartialEffect>> {
        if grid_size < 2 {
            return Err(GannError::InvalidConfig("grid size must be at least 2".into()));
        }
        let selected: Vec<&FittedTerm> = if terms.is_empty() {
            self.terms.iter().collect()
        } else {
            terms.iter().map(|n| self.term(n)).collect::<Result<_>>()?
        };
        selected
            .into_iter()
            .map(|term| {
                let (lo, hi) = match range_data {
                    Some(d) if d.n_rows() > 0 => min_max(d.column(&term.name)?),
                    _ => (term.x_min, term.x_max),
                };
                let x = grid(lo, hi, grid_size);
                let f_hat = term.predict(&x)?;
                Ok(PartialEffect {
                    term: term.name.clone(),
                    x,
                    f_hat,
                })
            })
            .collect()
    }

    /// The short description block: class, family, formula, intercept,
    /// training MSE and sample size.
    pub fn print_block(&self) -> String {
        format!(
            "Class: gann\n\nDistribution Family:  {}\nFormula:  {}\nIntercept: {:.4}\nMSE: {:.4}\nSample size: {}\n",
            self.family.kind, self.formula, self.alpha, self.training_mse, self.sample_size
        )
    }

    pub fn summarize(&self) -> String {
        let mut out = self.print_block();
        out.push_str("\nTraining History: \n\n");
        let _ = writeln!(
            out,
            "{:>4} {:>19} {:>12} {:>6} {:>12}",
            "", "Timestamp", "Model", "Epoch", "TrainLoss"
        );
        for (i, row) in self.history.epochs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>4} {:>19} {:>12} {:>6} {:>12.4}",
                i + 1,
                row.timestamp.as_deref().unwrap_or("-"),
                row.model,
                row.epoch,
                row.train_loss
            );
        }
        out.push_str("\n\nModel architecture: \n\n");
        let rule = "_".repeat(81);
        let double = "=".repeat(81);
        let mut dense_index = 0usize;
        for term in &self.terms {
            let _ = writeln!(out, "${}", term.name);
            match &term.estimator {
                FittedEstimator::Smooth { network } => {
                    let _ = writeln!(out, "Model: \"{}\"", term.name);
                    let _ = writeln!(out, "{rule}");
                    let _ = writeln!(out, " {:<34} {:<31} {:<13}", "Layer (type)", "Output Shape", "Param #");
                    let _ = writeln!(out, "{double}");
                    for layer in network.layers() {
                        let label = if dense_index == 0 {
                            "dense (Dense)".to_string()
                        } else {
                            format!("dense_{dense_index} (Dense)")
                        };
                        dense_index += 1;
                        let shape = format!("(None, {})", layer.fan_out());
                        let _ = writeln!(out, " {:<34} {:<31} {:<13}", label, shape, layer.param_count());
                    }
                    let total = network.param_count();
                    let _ = writeln!(out, "{double}");
                    let _ = writeln!(out, "Total params: {total}");
                    let _ = writeln!(out, "Trainable params: {total}");
                    let _ = writeln!(out, "Non-trainable params: 0");
                    let _ = writeln!(out, "{rule}");
                }
                FittedEstimator::Linear { slope, .. } => {
                    let _ = writeln!(out, "linear(slope={slope:.6})");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let model =
            serde_json::to_value(self).map_err(|e| GannError::InvalidData(format!("serialising model: {e}")))?;
        let checksum = checksum(&model);
        let doc = serde_json::json!({
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "sha256": checksum,
            "model": model,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("JSON values always serialise");
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| GannError::CorruptModel(format!("not valid JSON: {e}")))?;
        if doc.get("format").and_then(|v| v.as_str()) != Some(MODEL_FORMAT) {
            return Err(GannError::CorruptModel("missing or unknown format tag".into()));
        }
        let version = doc
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| GannError::CorruptModel("missing version".into()))?;
        if version != u64::from(MODEL_VERSION) {
            return Err(GannError::VersionMismatch {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: MODEL_VERSION,
            });
        }
        let stored = doc
            .get("sha256")
            .and_then(|v| v.as_str())
            .ok_or_else(|| GannError::CorruptModel("missing checksum".into()))?;
        let model = doc
            .get("model")
            .ok_or_else(|| GannError::CorruptModel("missing model body".into()))?;
        if checksum(model) != stored {
            return Err(GannError::CorruptModel("checksum mismatch".into()));
        }
        let model: FittedModel = serde_json::from_value(model.clone())
            .map_err(|e| GannError::CorruptModel(format!("invalid model body: {e}")))?;
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let names: Vec<&str> = self.formula.term_names().collect();
        if names != self.covariate_names() {
            return Err(GannError::CorruptModel("terms do not match the formula".into()));
        }
        for (term, spec) in self.terms.iter().zip(self.formula.terms()) {
            if term.kind() != spec.kind || term.fitted.len() != self.sample_size {
                return Err(GannError::CorruptModel(format!("term `{}` is inconsistent", term.name)));
            }
            if let FittedEstimator::Smooth { network } = &term.estimator {
                SubNetwork::from_layers(network.name(), network.layers().to_vec())
                    .map_err(|e| GannError::CorruptModel(e.to_string()))?;
            }
        }
        if self.training_eta.len() != self.sample_size {
            return Err(GannError::CorruptModel(
                "training predictor has the wrong length".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn save_model(model: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    FittedModel::load(path)
}

fn checksum(model: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(model).expect("JSON values always serialise");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use crate::simulation::{generate_scenario, ScenarioSpec};
    use rand::Rng;

    fn small_config() -> FitConfig {
        FitConfig {
            num_units: vec![16],
            learning_rate: 0.01,
            batch_size: 32,
            max_iter_backfitting: 4,
            seed: Some(7),
            ..FitConfig::default()
        }
    }

    fn small_scenario() -> Dataset {
        generate_scenario(&ScenarioSpec {
            n: 600,
            seed: 3,
            ..ScenarioSpec::default()
        })
        .unwrap()
        .train
    }

    #[test]
    fn defaults() {
        let c = FitConfig::default();
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.activation, Activation::Relu);
        assert_eq!(c.loss, LossKind::Mse);
        assert_eq!(c.kernel_initializer, Initializer::GlorotNormal);
        assert_eq!(c.bias_initializer, Initializer::Zeros);
        assert_eq!(c.bf_threshold, 0.001);
        assert_eq!(c.ls_threshold, 0.1);
        assert_eq!((c.max_iter_backfitting, c.max_iter_ls), (10, 10));
        assert_eq!((c.batch_size, c.epochs_per_sweep, c.verbose), (128, 1, 1));
        assert_eq!(c.mu_clamp, 1e-5);
        assert_eq!(c.l2_penalty, 0.0);
        assert_eq!(c.family, FamilyKind::Gaussian);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = [
            FitConfig {
                num_units: vec![],
                ..FitConfig::default()
            },
            FitConfig {
                learning_rate: 0.0,
                ..FitConfig::default()
            },
            FitConfig {
                bf_threshold: -1.0,
                ..FitConfig::default()
            },
            FitConfig {
                max_iter_ls: 0,
                ..FitConfig::default()
            },
            FitConfig {
                kernel_regularizer: Some("l2".into()),
                ..FitConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(GannError::InvalidConfig(_))), "{c:?}");
        }
        let not_impl = [
            FitConfig {
                kernel_regularizer: Some("l1".into()),
                ..FitConfig::default()
            },
            FitConfig {
                bias_regularizer: Some("l2".into()),
                ..FitConfig::default()
            },
            FitConfig {
                activity_regularizer: Some("l2".into()),
                ..FitConfig::default()
            },
        ];
        for c in not_impl {
            assert!(matches!(c.validate(), Err(GannError::NotImplemented(_))));
        }
        FitConfig {
            kernel_regularizer: Some("l2".into()),
            l2_penalty: 0.01,
            ..FitConfig::default()
        }
        .validate()
        .unwrap();
        assert!("huber".parse::<LossKind>().is_err());
    }

    #[test]
    fn fit_reports_missing_columns_and_bad_responses() {
        let data = small_scenario();
        let err = fit(&data, &parse_formula("y ~ s(x1) + s(nope)").unwrap(), &small_config()).unwrap_err();
        assert!(matches!(err, GannError::MissingColumn { column } if column == "nope"));
        let err = fit(&data, &parse_formula("resp ~ s(x1)").unwrap(), &small_config()).unwrap_err();
        assert!(matches!(err, GannError::MissingColumn { column } if column == "resp"));
        let binomial = FitConfig {
            family: FamilyKind::Binomial,
            ..small_config()
        };
        let err = fit(&data, &parse_formula("y ~ s(x1)").unwrap(), &binomial).unwrap_err();
        assert!(matches!(err, GannError::InvalidResponse { .. }));
    }

    #[test]
    fn constant_response_is_degenerate() {
        let data = Dataset::new(vec![("x", vec![1.0, 2.0, 3.0]), ("y", vec![4.0; 3])]).unwrap();
        let err = fit(&data, &parse_formula("y ~ s(x)").unwrap(), &small_config()).unwrap_err();
        assert!(matches!(err, GannError::DegenerateResponse(_)));
    }

    #[test]
    fn single_linear_term_recovers_slope_and_mean() {
        let mut r = rng::stream(12, 0);
        let x: Vec<f64> = (0..300).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1e-6 * r.random_range(-1.0..1.0)).collect();
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let data = Dataset::new(vec![("x", x), ("y", y)]).unwrap();
        let model = fit(&data, &parse_formula("y ~ x").unwrap(), &small_config()).unwrap();
        let FittedEstimator::Linear { slope, .. } = model.terms[0].estimator else {
            unreachable!()
        };
        assert!((slope - 2.0).abs() < 1e-5);
        assert!((model.alpha - y_mean).abs() < 1e-12);
        assert_eq!(model.history.iterations.len(), 1);
    }

    #[test]
    fn sample_weight_column_is_used() {
        let data = Dataset::new(vec![
            ("x", vec![0.0, 1.0, 2.0, 3.0]),
            ("y", vec![0.0, 1.0, 2.0, 10.0]),
            ("w", vec![1.0, 1.0, 1.0, 0.0]),
        ])
        .unwrap();
        let cfg = FitConfig {
            w_train: Some("w".into()),
            ..small_config()
        };
        let model = fit(&data, &parse_formula("y ~ x").unwrap(), &cfg).unwrap();
        let FittedEstimator::Linear { slope, .. } = model.terms[0].estimator else {
            unreachable!()
        };
        assert!((slope - 1.0).abs() < 1e-12);
        let cfg = FitConfig {
            w_train: Some("missing".into()),
            ..small_config()
        };
        assert!(matches!(
            fit(&data, &parse_formula("y ~ x").unwrap(), &cfg),
            Err(GannError::MissingColumn { .. })
        ));
    }

    #[test]
    fn prediction_modes_are_consistent() {
        let data = small_scenario();
        let model = fit(
            &data,
            &parse_formula("y ~ s(x1) + x2 + s(x3)").unwrap(),
            &small_config(),
        )
        .unwrap();

        let Prediction::Terms { names, columns } = model.predict(Some(&data), PredictType::Terms, None).unwrap() else {
            unreachable!()
        };
        assert_eq!(names, ["x1", "x2", "x3"]);
        let link = model.predict_link(Some(&data)).unwrap();
        for i in 0..data.n_rows() {
            let mut eta = model.alpha;
            for c in &columns {
                eta += c[i];
            }
            assert_eq!(eta.to_bits(), link[i].to_bits());
        }
        assert_eq!(model.predict_response(Some(&data)).unwrap(), link);

        // the stored training values and a fresh evaluation agree
        let stored = model.predict_link(None).unwrap();
        assert_eq!(stored, model.training_eta);
        assert!(stored.iter().zip(&link).all(|(a, b)| (a - b).abs() < 1e-10));
        for c in &columns {
            assert!((c.iter().sum::<f64>() / c.len() as f64).abs() < 1e-8);
        }

        let Prediction::Terms { names, columns } = model
            .predict(Some(&data), PredictType::Terms, Some(&["x3", "x1"]))
            .unwrap()
        else {
            unreachable!()
        };
        assert_eq!(names, ["x3", "x1"]);
        assert_eq!(columns.len(), 2);
        assert!(matches!(
            model.predict(None, PredictType::Terms, Some(&["x9"])),
            Err(GannError::UnknownTerm { .. })
        ));
        let partial = Dataset::new(vec![("x1", vec![0.0])]).unwrap();
        assert!(matches!(
            model.predict(Some(&partial), PredictType::Link, None),
            Err(GannError::MissingColumn { .. })
        ));
    }

    #[test]
    fn partial_effect_grid() {
        let data = small_scenario();
        let model = fit(&data, &parse_formula("y ~ s(x1) + x2").unwrap(), &small_config()).unwrap();
        let effects = model.partial_effects(&["x2"], 2, None).unwrap();
        assert_eq!(effects.len(), 1);
        assert_eq!(effects[0].x, vec![model.terms[1].x_min, model.terms[1].x_max]);
        let all = model.partial_effects(&[], 200, None).unwrap();
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|e| e.x.len() == 200 && e.f_hat.len() == 200));
        assert!(model.partial_effects(&["zz"], 10, None).is_err());
        assert!(model.partial_effects(&[], 1, None).is_err());
        let narrow = Dataset::new(vec![("x1", vec![-1.0, 1.0])]).unwrap();
        let e = model.partial_effects(&["x1"], 3, Some(&narrow)).unwrap();
        assert_eq!(e[0].x, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn summary_layout() {
        let data = small_scenario();
        let cfg = FitConfig {
            num_units: vec![256, 128],
            max_iter_backfitting: 1,
            ..small_config()
        };
        let model = fit(&data, &parse_formula("y ~ s(x1) + x2").unwrap(), &cfg).unwrap();
        let text = model.summarize();
        let order = [
            "Class:",
            "Distribution Family:",
            "Formula:",
            "Intercept:",
            "MSE:",
            "Sample size:",
            "Training History:",
            "Model architecture:",
        ];
        let positions: Vec<usize> = order.iter().map(|s| text.find(s).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(text.contains("Formula:  y ~ s(x1) + x2"));
        assert!(text.contains(&format!("Intercept: {:.4}", model.alpha)));
        assert!(text.contains("Total params: 33539"));
        for count in ["2 ", "512 ", "32896 ", "129 "] {
            assert!(text.contains(count));
        }
        assert!(text.contains("linear(slope="));
    }

    #[test]
    fn model_file_round_trip_and_corruption() {
        let data = small_scenario();
        let model = fit(&data, &parse_formula("y ~ s(x1) + x2").unwrap(), &small_config()).unwrap();
        let text = model.to_json().unwrap();
        let back = FittedModel::from_json(&text).unwrap();
        let a = model.predict_link(Some(&data)).unwrap();
        let b = back.predict_link(Some(&data)).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(back.to_json().unwrap(), text);

        let truncated = &text[..text.len() / 2];
        assert!(matches!(
            FittedModel::from_json(truncated),
            Err(GannError::CorruptModel(_))
        ));
        let tampered = text.replacen("\"alpha\": ", "\"alpha\": 1", 1);
        assert!(matches!(
            FittedModel::from_json(&tampered),
            Err(GannError::CorruptModel(_))
        ));
        let future = text.replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(matches!(
            FittedModel::from_json(&future),
            Err(GannError::VersionMismatch { found: 9, expected: 1 })
        ));
    }
}
