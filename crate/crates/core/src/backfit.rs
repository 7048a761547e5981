//! Backfitting: Gauss-Seidel sweeps that refit each term to the partial
//! residuals of the working response, then recentre it.
//!
//! A sweep visits terms in formula order. For term `j` the partial residual is
//! `r = z - alpha - sum_{k != j} f_k`, where terms before `j` already carry
//! this sweep's values. Smooth terms are trained for `epochs_per_sweep`
//! epochs (warm-started from the previous sweep); linear terms take the
//! closed-form weighted least-squares slope. Each term is then centred to
//! zero mean over the training rows.
//!
//! Sweeps stop once
//! `sum_j sum_i (f_j^m - f_j^{m-1})^2 / sum_j sum_i (f_j^{m-1})^2 < bf_threshold`
//! or after `max_iter_backfitting` sweeps. The ratio is undefined while every
//! previous term is identically zero; that check is skipped unless nothing
//! changed at all.

use crate::error::{GannError, Result};
use crate::nn::{AdamState, SubNetwork, TrainOptions};
use crate::rng::StreamRng;

#[derive(Clone, Debug)]
pub enum TermEstimator {
    Smooth {
        net: SubNetwork,
        adam: AdamState,
        shuffle: StreamRng,
    },
    /// `f(x) = slope * (x - x_center)`, before the centring offset.
    Linear { slope: f64, x_center: f64 },
}

#[derive(Clone, Debug)]
pub struct TermState {
    pub name: String,
    pub estimator: TermEstimator,
    /// Current centred values `f_j(x_ij)` over the training rows.
    pub fitted: Vec<f64>,
    /// Constant removed by centring; predictions are `raw(x) - offset`.
    pub offset: f64,
}

impl TermState {
    pub fn smooth(name: impl Into<String>, net: SubNetwork, adam: AdamState, shuffle: StreamRng, n: usize) -> Self {
        TermState {
            name: name.into(),
            estimator: TermEstimator::Smooth { net, adam, shuffle },
            fitted: vec![0.0; n],
            offset: 0.0,
        }
    }

    pub fn linear(name: impl Into<String>, n: usize) -> Self {
        TermState {
            name: name.into(),
            estimator: TermEstimator::Linear {
                slope: 0.0,
                x_center: 0.0,
            },
            fitted: vec![0.0; n],
            offset: 0.0,
        }
    }

    /// Uncentred estimator output at new covariate values.
    pub fn raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.estimator {
            TermEstimator::Smooth { net, .. } => net.forward(x),
            TermEstimator::Linear { slope, x_center } => Ok(x.iter().map(|v| slope * (v - x_center)).collect()),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.raw(x)?;
        out.iter_mut().for_each(|v| *v -= self.offset);
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackfitConfig {
    pub bf_threshold: f64,
    pub max_iter_backfitting: usize,
    pub epochs_per_sweep: usize,
    pub train: TrainOptions,
}

impl Default for BackfitConfig {
    fn default() -> Self {
        BackfitConfig {
            bf_threshold: 0.001,
            max_iter_backfitting: 10,
            epochs_per_sweep: 1,
            train: TrainOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermLoss {
    pub term: String,
    pub loss: f64,
    pub timestamp: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    /// 1-based index within the current backfitting call.
    pub sweep: usize,
    /// `None` when the ratio was undefined and the check was skipped.
    pub change_ratio: Option<f64>,
    pub term_losses: Vec<TermLoss>,
}

#[derive(Clone, Debug)]
pub struct BackfitState {
    pub alpha: f64,
    pub terms: Vec<TermState>,
    pub sweep_count: usize,
    pub converged: bool,
}

impl BackfitState {
    pub fn new(alpha: f64, terms: Vec<TermState>) -> Self {
        BackfitState {
            alpha,
            terms,
            sweep_count: 0,
            converged: false,
        }
    }

    /// `alpha + sum_j f_j` over the training rows, accumulated in term order.
    pub fn additive_predictor(&self) -> Vec<f64> {
        let n = self.terms.first().map_or(0, |t| t.fitted.len());
        let mut eta = vec![self.alpha; n];
        for term in &self.terms {
            for (e, f) in eta.iter_mut().zip(&term.fitted) {
                *e += f;
            }
        }
        eta
    }
}

/// `r_i = z_i - alpha - sum_{k != skip} f_k(x_ik)`.
pub fn partial_residuals(z: &[f64], alpha: f64, terms: &[TermState], skip: usize) -> Vec<f64> {
    let mut r: Vec<f64> = z.iter().map(|v| v - alpha).collect();
    for (k, term) in terms.iter().enumerate() {
        if k == skip {
            continue;
        }
        for (ri, f) in r.iter_mut().zip(&term.fitted) {
            *ri -= f;
        }
    }
    r
}

fn weighted_mse(r: &[f64], fitted: &[f64], w: &[f64]) -> f64 {
    let (num, den) = r
        .iter()
        .zip(fitted)
        .zip(w)
        .fold((0.0, 0.0), |(n, d), ((r, f), w)| (n + w * (r - f).powi(2), d + w));
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Trains a smooth term on `(x, r)` with weights `w`; leaves the term
/// uncentred. Returns the last epoch's training loss.
pub fn fit_term_smooth(term: &mut TermState, x: &[f64], r: &[f64], w: &[f64], config: &BackfitConfig) -> Result<f64> {
    let TermEstimator::Smooth { net, adam, shuffle } = &mut term.estimator else {
        return Err(GannError::InvalidConfig(format!("term `{}` is not smooth", term.name)));
    };
    let mut loss = f64::NAN;
    for _ in 0..config.epochs_per_sweep.max(1) {
        loss = net.train_one_epoch(x, r, w, adam, &config.train, shuffle)?;
    }
    term.fitted = net.forward(x)?;
    term.offset = 0.0;
    Ok(loss)
}

/// Closed-form weighted least-squares slope of `r` on `x`; leaves the term
/// uncentred. Returns the weighted MSE of the fit.
pub fn fit_term_linear(term: &mut TermState, x: &[f64], r: &[f64], w: &[f64]) -> Result<f64> {
    if !matches!(term.estimator, TermEstimator::Linear { .. }) {
        return Err(GannError::InvalidConfig(format!("term `{}` is not linear", term.name)));
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(GannError::InvalidData(format!(
            "term `{}`: weights sum to zero",
            term.name
        )));
    }
    let x_mean = x.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let r_mean = r.iter().zip(w).map(|(r, w)| w * r).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxr = 0.0;
    for ((x, r), w) in x.iter().zip(r).zip(w) {
        let dx = x - x_mean;
        sxx += w * dx * dx;
        sxr += w * dx * (r - r_mean);
    }
    let first = x.iter().zip(w).find(|(_, w)| **w > 0.0).map(|(x, _)| *x);
    let constant = x.iter().zip(w).all(|(x, w)| *w == 0.0 || Some(*x) == first);
    if constant || !(sxx > 0.0) || !sxx.is_finite() {
        return Err(GannError::ConstantCovariate {
            term: term.name.clone(),
        });
    }
    let slope = sxr / sxx;
    term.estimator = TermEstimator::Linear {
        slope,
        x_center: x_mean,
    };
    term.fitted = x.iter().map(|v| slope * (v - x_mean)).collect();
    term.offset = 0.0;
    Ok(weighted_mse(r, &term.fitted, w))
}

/// Subtracts the unweighted mean of the fitted values and folds it into the
/// stored offset.
pub fn center_term(term: &mut TermState) {
    let n = term.fitted.len();
    if n == 0 {
        return;
    }
    let mean = term.fitted.iter().sum::<f64>() / n as f64;
    term.fitted.iter_mut().for_each(|v| *v -= mean);
    term.offset += mean;
}

/// Relative change between two snapshots of all terms' fitted values.
pub fn change_ratio(prev: &[Vec<f64>], curr: &[Vec<f64>]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, c) in prev.iter().zip(curr) {
        for (p, c) in p.iter().zip(c) {
            num += (c - p).powi(2);
            den += p * p;
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else if num == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

fn timestamp() -> String {
    chrono::Local::now().format("%Y-%m-%d %H:%M:%S").to_string()
}

/// One Gauss-Seidel pass over all terms. `covariates[j]` holds the training
/// values of term `j`'s covariate.
pub fn backfit_sweep(
    state: &mut BackfitState,
    covariates: &[&[f64]],
    z: &[f64],
    w: &[f64],
    config: &BackfitConfig,
) -> Result<SweepRecord> {
    assert_eq!(covariates.len(), state.terms.len());
    let previous: Vec<Vec<f64>> = state.terms.iter().map(|t| t.fitted.clone()).collect();
    let mut term_losses = Vec::with_capacity(state.terms.len());
    for j in 0..state.terms.len() {
        let r = partial_residuals(z, state.alpha, &state.terms, j);
        let term = &mut state.terms[j];
        let loss = match term.estimator {
            TermEstimator::Smooth { .. } => fit_term_smooth(term, covariates[j], &r, w, config)?,
            TermEstimator::Linear { .. } => fit_term_linear(term, covariates[j], &r, w)?,
        };
        center_term(term);
        term_losses.push(TermLoss {
            term: term.name.clone(),
            loss,
            timestamp: Some(timestamp()),
        });
    }
    state.sweep_count += 1;
    let current: Vec<Vec<f64>> = state.terms.iter().map(|t| t.fitted.clone()).collect();
    Ok(SweepRecord {
        sweep: state.sweep_count,
        change_ratio: change_ratio(&previous, &current),
        term_losses,
    })
}

/// Runs sweeps until the change ratio drops below `bf_threshold` or
/// `max_iter_backfitting` sweeps have run. `alpha` is held fixed.
pub fn backfit(
    state: &mut BackfitState,
    covariates: &[&[f64]],
    z: &[f64],
    w: &[f64],
    config: &BackfitConfig,
) -> Result<Vec<SweepRecord>> {
    if !(config.bf_threshold > 0.0) {
        return Err(GannError::InvalidConfig("bf_threshold must be positive".into()));
    }
    if config.max_iter_backfitting == 0 {
        return Err(GannError::InvalidConfig(
            "max_iter_backfitting must be at least 1".into(),
        ));
    }
    if z.len() != w.len() || covariates.iter().any(|x| x.len() != z.len()) {
        return Err(GannError::InvalidData("backfitting inputs differ in length".into()));
    }
    state.sweep_count = 0;
    state.converged = false;
    let mut records = Vec::new();
    while state.sweep_count < config.max_iter_backfitting {
        let record = backfit_sweep(state, covariates, z, w, config)?;
        let done = matches!(record.change_ratio, Some(r) if r < config.bf_threshold);
        log::debug!(
            "backfitting sweep {}: change ratio {:?}",
            record.sweep,
            record.change_ratio
        );
        records.push(record);
        if done {
            state.converged = true;
            break;
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, AdamConfig};
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn linear_with(name: &str, fitted: Vec<f64>) -> TermState {
        let mut t = TermState::linear(name, fitted.len());
        t.fitted = fitted;
        t
    }

    fn smooth_term(name: &str, units: &[usize], lr: f64, seed: u64, n: usize) -> TermState {
        let net = SubNetwork::new(name, units, Activation::Relu, &mut rng::init_stream(seed, 0)).unwrap();
        let adam = AdamState::for_network(
            AdamConfig {
                learning_rate: lr,
                ..AdamConfig::default()
            },
            &net,
        );
        TermState::smooth(name, net, adam, rng::shuffle_stream(seed, 0), n)
    }

    /// Solves the 2x2 weighted normal equations `[1 x]' W [1 x] b = [1 x]' W r`.
    fn normal_equations_slope(x: &[f64], r: &[f64], w: &[f64]) -> f64 {
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((x, r), w) in x.iter().zip(r).zip(w) {
            s0 += w;
            s1 += w * x;
            s2 += w * x * x;
            t0 += w * r;
            t1 += w * x * r;
        }
        (s0 * t1 - s1 * t0) / (s0 * s2 - s1 * s1)
    }

    #[test]
    fn partial_residuals_at_initialisation_equal_z() {
        let z = vec![1.0, 2.0, 3.0];
        let terms = vec![linear_with("a", vec![0.0; 3]), linear_with("b", vec![0.0; 3])];
        assert_eq!(partial_residuals(&z, 0.0, &terms, 0), z);
    }

    #[test]
    fn partial_residuals_single_term() {
        let z = vec![1.0, 2.0, 3.0];
        let terms = vec![linear_with("a", vec![5.0, 6.0, 7.0])];
        assert_eq!(partial_residuals(&z, 0.5, &terms, 0), vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn partial_residuals_two_terms_by_hand() {
        let z = vec![4.0, -1.0];
        let terms = vec![linear_with("a", vec![1.0, 2.0]), linear_with("b", vec![0.5, -3.0])];
        // skip a: z - 1 - b = [4 - 1 - 0.5, -1 - 1 + 3]
        assert_eq!(partial_residuals(&z, 1.0, &terms, 0), vec![2.5, 1.0]);
        // skip b: z - 1 - a = [4 - 1 - 1, -1 - 1 - 2]
        assert_eq!(partial_residuals(&z, 1.0, &terms, 1), vec![2.0, -4.0]);
    }

    #[test]
    fn sweep_uses_freshly_updated_terms() {
        // z = 3a + 2b with a and b orthogonal-ish; after updating a in this
        // sweep, b's residual must already exclude the new a.
        let a = vec![-1.0, 1.0, -1.0, 1.0];
        let b = vec![-1.0, -1.0, 1.0, 2.0];
        let z: Vec<f64> = a.iter().zip(&b).map(|(a, b)| 3.0 * a + 2.0 * b).collect();
        let w = vec![1.0; 4];
        let mut state = BackfitState::new(0.0, vec![TermState::linear("a", 4), TermState::linear("b", 4)]);
        backfit_sweep(&mut state, &[&a, &b], &z, &w, &BackfitConfig::default()).unwrap();

        let mut a_only = TermState::linear("a", 4);
        fit_term_linear(&mut a_only, &a, &z, &w).unwrap();
        center_term(&mut a_only);
        let expected_r: Vec<f64> = z.iter().zip(&a_only.fitted).map(|(z, f)| z - f).collect();
        let mut b_only = TermState::linear("b", 4);
        fit_term_linear(&mut b_only, &b, &expected_r, &w).unwrap();
        center_term(&mut b_only);
        assert_eq!(state.terms[1].fitted, b_only.fitted);
    }

    #[test]
    fn linear_fit_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r: Vec<f64> = x.iter().map(|x| 3.0 * x).collect();
        let mut t = TermState::linear("x", 10);
        fit_term_linear(&mut t, &x, &r, &[1.0; 10]).unwrap();
        let TermEstimator::Linear { slope, .. } = t.estimator else {
            unreachable!()
        };
        assert!((slope - 3.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_orthogonal_residual_has_zero_slope() {
        let x = vec![-1.0, 0.0, 1.0];
        let r = vec![1.0, -2.0, 1.0];
        let mut t = TermState::linear("x", 3);
        fit_term_linear(&mut t, &x, &r, &[1.0; 3]).unwrap();
        let TermEstimator::Linear { slope, .. } = t.estimator else {
            unreachable!()
        };
        assert_eq!(slope, 0.0);
    }

    #[test]
    fn linear_fit_rejects_constant_covariate() {
        let mut t = TermState::linear("k", 4);
        let err = fit_term_linear(&mut t, &[0.3; 4], &[1.0, 2.0, 3.0, 4.0], &[1.0; 4]).unwrap_err();
        assert!(matches!(err, GannError::ConstantCovariate { term } if term == "k"));
        // only positive-weight rows count
        let err = fit_term_linear(&mut t, &[0.3, 0.3, 9.0], &[1.0, 2.0, 3.0], &[1.0, 1.0, 0.0]);
        assert!(err.is_err());
    }

    #[test]
    fn linear_fit_matches_normal_equations() {
        let mut r = rng::stream(99, 0);
        let x: Vec<f64> = (0..20).map(|_| r.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| r.random_range(-5.0..5.0)).collect();
        let w: Vec<f64> = (0..20).map(|_| r.random_range(0.0..2.0)).collect();
        let mut t = TermState::linear("x", 20);
        fit_term_linear(&mut t, &x, &y, &w).unwrap();
        let TermEstimator::Linear { slope, .. } = t.estimator else {
            unreachable!()
        };
        let oracle = normal_equations_slope(&x, &y, &w);
        assert!(((slope - oracle) / oracle).abs() < 1e-10);
    }

    #[test]
    fn centering_arithmetic() {
        let mut t = linear_with("a", vec![1.0, 2.0, 3.0]);
        center_term(&mut t);
        assert_eq!(t.fitted, vec![-1.0, 0.0, 1.0]);
        assert_eq!(t.offset, 2.0);
        center_term(&mut t);
        assert_eq!(t.fitted, vec![-1.0, 0.0, 1.0]);
        assert_eq!(t.offset, 2.0);
    }

    #[test]
    fn change_ratio_cases() {
        assert_eq!(change_ratio(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]]), None);
        assert_eq!(change_ratio(&[vec![0.0, 0.0]], &[vec![0.0, 0.0]]), Some(0.0));
        assert_eq!(
            change_ratio(&[vec![1.0], vec![1.0]], &[vec![2.0], vec![1.0]]),
            Some(0.5)
        );
    }

    #[test]
    fn null_model_with_linear_terms_converges_immediately() {
        let x1: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let x2: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).cos()).collect();
        let z = vec![2.5; 30];
        let mut state = BackfitState::new(2.5, vec![TermState::linear("a", 30), TermState::linear("b", 30)]);
        let records = backfit(&mut state, &[&x1, &x2], &z, &vec![1.0; 30], &BackfitConfig::default()).unwrap();
        assert!(records.len() <= 2);
        assert!(state.converged);
        assert!(state.terms.iter().all(|t| t.fitted.iter().all(|v| v.abs() < 1e-12)));
    }

    #[test]
    fn null_signal_keeps_smooth_term_near_zero() {
        let x: Vec<f64> = (0..200).map(|i| -2.0 + i as f64 * 0.02).collect();
        let z = vec![0.0; 200];
        let mut state = BackfitState::new(0.0, vec![smooth_term("x", &[16], 0.01, 3, 200)]);
        let cfg = BackfitConfig {
            max_iter_backfitting: 5,
            epochs_per_sweep: 60,
            ..BackfitConfig::default()
        };
        backfit(&mut state, &[&x], &z, &vec![1.0; 200], &cfg).unwrap();
        assert!(state.terms[0].fitted.iter().all(|v| v.abs() < 0.1));
    }

    #[test]
    fn first_sweep_skips_undefined_criterion_and_terminates() {
        let x: Vec<f64> = (0..64).map(|i| i as f64 / 32.0 - 1.0).collect();
        let z: Vec<f64> = x.iter().map(|v| v * v).collect();
        let mut state = BackfitState::new(0.0, vec![smooth_term("x", &[8], 0.01, 1, 64)]);
        let cfg = BackfitConfig {
            bf_threshold: 1e-12,
            max_iter_backfitting: 3,
            ..BackfitConfig::default()
        };
        let records = backfit(&mut state, &[&x], &z, &vec![1.0; 64], &cfg).unwrap();
        assert_eq!(records[0].change_ratio, None);
        assert_eq!(records.len(), 3);
        assert_eq!(state.sweep_count, 3);
        assert!(!state.converged);
    }

    #[test]
    fn reported_ratio_matches_recomputation_from_snapshots() {
        let x1: Vec<f64> = (0..100).map(|i| (i as f64 * 0.13).sin() * 2.0).collect();
        let x2: Vec<f64> = (0..100).map(|i| (i as f64 * 0.71).cos() * 2.0).collect();
        let z: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a * a + 0.5 * b).collect();
        let mut state = BackfitState::new(
            1.0,
            vec![smooth_term("x1", &[8], 0.01, 5, 100), TermState::linear("x2", 100)],
        );
        let w = vec![1.0; 100];
        let cfg = BackfitConfig::default();
        backfit_sweep(&mut state, &[&x1, &x2], &z, &w, &cfg).unwrap();
        for _ in 0..3 {
            let before: Vec<Vec<f64>> = state.terms.iter().map(|t| t.fitted.clone()).collect();
            let rec = backfit_sweep(&mut state, &[&x1, &x2], &z, &w, &cfg).unwrap();
            let after: Vec<Vec<f64>> = state.terms.iter().map(|t| t.fitted.clone()).collect();
            let num: f64 = before
                .iter()
                .flatten()
                .zip(after.iter().flatten())
                .map(|(p, c)| (c - p).powi(2))
                .sum();
            let den: f64 = before.iter().flatten().map(|p| p * p).sum();
            assert!((rec.change_ratio.unwrap() - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_term_learns_a_line() {
        let mut r = rng::stream(17, 0);
        let x: Vec<f64> = (0..2000).map(|_| r.random_range(-2.5..2.5)).collect();
        let target: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let mut state = BackfitState::new(0.0, vec![smooth_term("x", &[64], 0.005, 17, 2000)]);
        let cfg = BackfitConfig {
            bf_threshold: 1e-6,
            max_iter_backfitting: 40,
            epochs_per_sweep: 1,
            train: TrainOptions {
                batch_size: 32,
                l2_penalty: 0.0,
            },
        };
        backfit(&mut state, &[&x], &target, &vec![1.0; 2000], &cfg).unwrap();
        let mean = target.iter().sum::<f64>() / 2000.0;
        let grid: Vec<f64> = (0..50).map(|i| -2.4 + i as f64 * 4.8 / 49.0).collect();
        let pred = state.terms[0].predict(&grid).unwrap();
        let worst = grid
            .iter()
            .zip(&pred)
            .map(|(g, p)| (p - (2.0 * g - mean)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.1, "max grid error {worst}");
    }

    #[test]
    fn smooth_term_recovers_parabola() {
        let mut r = rng::stream(23, 0);
        let x: Vec<f64> = (0..3000).map(|_| r.random_range(-2.5..2.5)).collect();
        let target: Vec<f64> = x.iter().map(|v| v * v).collect();
        let mean = target.iter().sum::<f64>() / 3000.0;
        let mut state = BackfitState::new(0.0, vec![smooth_term("x", &[64], 0.005, 23, 3000)]);
        let cfg = BackfitConfig {
            bf_threshold: 1e-6,
            max_iter_backfitting: 60,
            epochs_per_sweep: 1,
            train: TrainOptions {
                batch_size: 32,
                l2_penalty: 0.0,
            },
        };
        backfit(&mut state, &[&x], &target, &vec![1.0; 3000], &cfg).unwrap();
        let grid: Vec<f64> = (0..200).map(|i| -2.5 + i as f64 * 5.0 / 199.0).collect();
        let pred = state.terms[0].predict(&grid).unwrap();
        let worst = grid
            .iter()
            .zip(&pred)
            .map(|(g, p)| (p - (g * g - mean)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.25, "max grid error {worst}");
    }

    proptest! {
        #[test]
        fn centering_zeroes_the_mean(values in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            let mut t = linear_with("a", values);
            center_term(&mut t);
            let mean = t.fitted.iter().sum::<f64>() / t.fitted.len() as f64;
            prop_assert!(mean.abs() < 1e-12 * 1e3);
        }

        #[test]
        fn backfit_keeps_terms_centred_and_terminates(seed in 0u64..500, max_iter in 1usize..4) {
            let mut r = rng::stream(seed, 0);
            let n = 40;
            let x1: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let x2: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let z: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
            let mut state = BackfitState::new(0.3, vec![smooth_term("x1", &[4], 0.01, seed, n), TermState::linear("x2", n)]);
            let cfg = BackfitConfig { max_iter_backfitting: max_iter, ..BackfitConfig::default() };
            let records = backfit(&mut state, &[&x1, &x2], &z, &w, &cfg).unwrap();
            prop_assert!(records.len() <= max_iter);
            for t in &state.terms {
                let mean = t.fitted.iter().sum::<f64>() / n as f64;
                prop_assert!(mean.abs() < 1e-8);
            }
        }
    }
}
