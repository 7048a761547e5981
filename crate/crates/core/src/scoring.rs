//! Local scoring: the outer IRLS loop around backfitting.
//!
//! Each iteration linearises the likelihood at the current additive predictor,
//! producing a working response `z` and weights `w` (see [`crate::family`]),
//! resets the intercept to the weighted mean of `z`, and backfits the terms to
//! `(z, w)`. The loop ends when the relative deviance decrease
//! `(D_prev - D_curr) / D_prev` falls below `ls_threshold`, which includes any
//! increase in deviance, or after `max_iter_ls` iterations. The Gaussian
//! family has constant `z` and `w` and always runs exactly once.

use crate::backfit::{backfit, BackfitConfig, BackfitState, SweepRecord, TermState};
use crate::error::{GannError, Result};
use crate::family::{Family, FamilyKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalScoringConfig {
    pub ls_threshold: f64,
    pub max_iter_ls: usize,
    pub backfit: BackfitConfig,
    /// Keep `eta`, `mu`, `z` and `w` of every iteration in the trace.
    pub keep_working_values: bool,
}

impl Default for LocalScoringConfig {
    fn default() -> Self {
        LocalScoringConfig {
            ls_threshold: 0.1,
            max_iter_ls: 10,
            backfit: BackfitConfig::default(),
            keep_working_values: false,
        }
    }
}

/// Inputs to one backfitting call, as computed at the start of an iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkingValues {
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: f64,
    /// Deviance after this iteration's backfitting.
    pub deviance: f64,
    pub deviance_ratio: f64,
    /// Training loss of each term in the last backfitting sweep.
    pub per_term_epoch_loss: Vec<(String, f64)>,
    pub sweeps: Vec<SweepRecord>,
    pub backfit_converged: bool,
    pub working: Option<WorkingValues>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalScoringTrace {
    /// Deviance of the intercept-only starting point.
    pub initial_deviance: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct LocalScoringResult {
    pub state: BackfitState,
    pub trace: LocalScoringTrace,
    /// Final additive predictor over the training rows.
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
}

/// `(prev - curr) / prev`; a zero previous deviance counts as converged.
pub fn deviance_ratio(prev: f64, curr: f64) -> f64 {
    if prev == 0.0 {
        0.0
    } else {
        (prev - curr) / prev
    }
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let (num, den) = values
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(n, d), (v, w)| (n + w * v, d + w));
    num / den
}

pub fn local_scoring(
    y: &[f64],
    covariates: &[&[f64]],
    terms: Vec<TermState>,
    family: &Family,
    sample_weights: Option<&[f64]>,
    config: &LocalScoringConfig,
) -> Result<LocalScoringResult> {
    let n = y.len();
    if n < 2 {
        return Err(GannError::InvalidData(format!("need at least 2 rows, got {n}")));
    }
    if !(config.ls_threshold > 0.0) {
        return Err(GannError::InvalidConfig("ls_threshold must be positive".into()));
    }
    if config.max_iter_ls == 0 {
        return Err(GannError::InvalidConfig("max_iter_ls must be at least 1".into()));
    }
    if terms.is_empty() || terms.len() != covariates.len() {
        return Err(GannError::InvalidConfig("one covariate per term is required".into()));
    }
    family.validate_response(y)?;
    if y.iter().all(|v| *v == y[0]) {
        return Err(GannError::DegenerateResponse(format!(
            "response is constant ({})",
            y[0]
        )));
    }
    let external: Vec<f64> = match sample_weights {
        Some(w) => {
            if w.len() != n {
                return Err(GannError::InvalidData(format!(
                    "{} sample weights for {n} rows",
                    w.len()
                )));
            }
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || !(w.iter().sum::<f64>() > 0.0) {
                return Err(GannError::InvalidData(
                    "sample weights must be finite, nonnegative and not all zero".into(),
                ));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut state = BackfitState::new(family.link_scalar(y_mean), terms);
    let mut eta = state.additive_predictor();
    let mut mu = family.inverse_link(&eta);
    let initial_deviance = family.deviance(y, &mu)?;
    let mut trace = LocalScoringTrace {
        initial_deviance,
        ..LocalScoringTrace::default()
    };
    let mut prev_deviance = initial_deviance;

    for iteration in 1..=config.max_iter_ls {
        let z = family.adjusted_dependent(y, &eta, &mu);
        let w: Vec<f64> = family
            .irls_weights(&mu)
            .iter()
            .zip(&external)
            .map(|(a, b)| a * b)
            .collect();
        state.alpha = weighted_mean(&z, &w);

        let sweeps = backfit(&mut state, covariates, &z, &w, &config.backfit)?;
        let working = config.keep_working_values.then(|| WorkingValues {
            eta: eta.clone(),
            mu: mu.clone(),
            z,
            w,
        });

        eta = state.additive_predictor();
        mu = family.inverse_link(&eta);
        let deviance = family.deviance(y, &mu)?;
        let ratio = deviance_ratio(prev_deviance, deviance);
        let per_term_epoch_loss = sweeps
            .last()
            .map(|s| s.term_losses.iter().map(|t| (t.term.clone(), t.loss)).collect())
            .unwrap_or_default();
        log::info!("local scoring iteration {iteration}: deviance {deviance:.6}, ratio {ratio:.6}");
        trace.iterations.push(IterationRecord {
            iteration,
            alpha: state.alpha,
            deviance,
            deviance_ratio: ratio,
            per_term_epoch_loss,
            sweeps,
            backfit_converged: state.converged,
            working,
        });

        if family.kind == FamilyKind::Gaussian || ratio < config.ls_threshold {
            trace.converged = true;
            break;
        }
        prev_deviance = deviance;
    }

    Ok(LocalScoringResult { state, trace, eta, mu })
}
