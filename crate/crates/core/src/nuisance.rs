//! Cross-fitted nuisance estimation.
//!
//! For each fold the propensity model, the covariate-only outcome model and
//! (optionally) the provider-covariate outcome model are fitted on the
//! training rows and evaluated on the held-out rows. Provider means and
//! provider frequencies are computed per training split and averaged.

use log::warn;
use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::learners::{
    stack_classifier, stack_regressor, EnsembleSpec, GbtParams, LearnerSpec, Link, WeightLoss,
};

/// How the provider-covariate outcome regression is organized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderOutcomeMode {
    /// One regression on covariates plus provider indicators.
    OneHot,
    /// A separate regression per provider.
    PerProvider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceConfig {
    pub propensity: EnsembleSpec,
    /// Covariate-only outcome model.
    pub outcome: EnsembleSpec,
    /// Provider-covariate outcome model; defaults to `outcome`.
    pub provider_outcome: Option<EnsembleSpec>,
    pub provider_outcome_mode: ProviderOutcomeMode,
    pub outcome_link: Link,
    /// Propensity truncation bound used by the direct parameter.
    pub truncation: f64,
    /// Propensities below this value flag a practical positivity violation.
    pub violation_threshold: f64,
    /// Fit the provider-covariate outcome model and truncated propensities.
    pub direct: bool,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        let gbt = LearnerSpec::Gbt(GbtParams::default());
        Self {
            propensity: EnsembleSpec {
                members: vec![LearnerSpec::Mean, LearnerSpec::Glm, gbt.clone()],
                stacking_folds: 5,
                weight_loss: WeightLoss::Log,
                seed: 0,
            },
            outcome: EnsembleSpec {
                members: vec![LearnerSpec::Mean, LearnerSpec::Glm, gbt],
                stacking_folds: 5,
                weight_loss: WeightLoss::Squared,
                seed: 0,
            },
            provider_outcome: None,
            provider_outcome_mode: ProviderOutcomeMode::OneHot,
            outcome_link: Link::Logit,
            truncation: 1e-3,
            violation_threshold: 1e-4,
            direct: true,
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        self.propensity.validate()?;
        self.outcome.validate()?;
        if let Some(p) = &self.provider_outcome {
            p.validate()?;
        }
        if !(self.truncation >= 0.0 && self.truncation < 1.0 / m as f64) {
            return Err(Error::InvalidArgument(format!(
                "truncation bound {} must lie in [0, 1/m) with m = {m}",
                self.truncation
            )));
        }
        if !(self.violation_threshold >= 0.0) {
            return Err(Error::InvalidArgument(
                "violation threshold must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn provider_spec(&self) -> &EnsembleSpec {
        self.provider_outcome.as_ref().unwrap_or(&self.outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityFlag {
    Ok,
    PracticalViolation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderPositivity {
    pub provider: usize,
    pub min: f64,
    pub max: f64,
    /// (probability, quantile) pairs.
    pub quantiles: Vec<(f64, f64)>,
    pub below_bound: usize,
    pub flag: PositivityFlag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityReport {
    pub threshold: f64,
    pub bound: f64,
    pub providers: Vec<ProviderPositivity>,
}

impl PositivityReport {
    pub fn flagged(&self) -> impl Iterator<Item = &ProviderPositivity> {
        self.providers
            .iter()
            .filter(|p| p.flag == PositivityFlag::PracticalViolation)
    }
}

pub const REPORT_QUANTILES: [f64; 5] = [0.01, 0.05, 0.5, 0.95, 0.99];

/// Cross-fitted nuisance predictions on the scaled outcome domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceEstimates {
    /// n×m propensities before truncation.
    pub pi_hat: Array2<f64>,
    /// Truncated propensities, present when the direct parameter is requested.
    pub pi_truncated: Option<Array2<f64>>,
    pub mu_tilde: Vec<f64>,
    /// n×m provider-covariate outcome predictions, entry (i, a) at w_i.
    pub mu_bar: Option<Array2<f64>>,
    pub mu_dot: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub folds: FoldAssignment,
    pub truncation: f64,
    pub positivity: PositivityReport,
    pub diagnostics: Vec<String>,
}

impl NuisanceEstimates {
    pub fn n(&self) -> usize {
        self.mu_tilde.len()
    }

    pub fn m(&self) -> usize {
        self.p_hat.len()
    }

    /// Propensities used by the direct parameter: truncated when available.
    pub fn direct_propensity(&self) -> &Array2<f64> {
        self.pi_truncated.as_ref().unwrap_or(&self.pi_hat)
    }
}

/// Clip entries to at least `bound` and rescale the unclipped entries so each
/// row sums to one. Rescaling can push further entries below the bound, so
/// the clipping repeats until no free entry falls below it.
pub fn truncate_propensities(pi: &Array2<f64>, bound: f64) -> Array2<f64> {
    let mut out = pi.clone();
    if bound <= 0.0 {
        return out;
    }
    for mut row in out.rows_mut() {
        if row.iter().all(|&v| v >= bound) {
            continue;
        }
        let m = row.len();
        let mut clipped = vec![false; m];
        loop {
            let mut newly = false;
            for (c, &v) in row.iter().enumerate() {
                if !clipped[c] && v < bound {
                    clipped[c] = true;
                    newly = true;
                }
            }
            if !newly {
                break;
            }
            let fixed = bound * clipped.iter().filter(|&&c| c).count() as f64;
            let free: f64 = row
                .iter()
                .zip(&clipped)
                .filter(|(_, &c)| !c)
                .map(|(v, _)| v)
                .sum();
            let factor = if free > 0.0 {
                (1.0 - fixed) / free
            } else {
                0.0
            };
            for (v, &c) in row.iter_mut().zip(&clipped) {
                *v = if c { bound } else { *v * factor };
            }
        }
    }
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-provider summary of the untruncated propensity column.
pub fn positivity_report(pi: &Array2<f64>, threshold: f64, bound: f64) -> PositivityReport {
    let providers = pi
        .columns()
        .into_iter()
        .enumerate()
        .map(|(a, col)| {
            let mut v = col.to_vec();
            v.sort_by(|x, y| x.total_cmp(y));
            let min = v.first().copied().unwrap_or(f64::NAN);
            let max = v.last().copied().unwrap_or(f64::NAN);
            let quantiles = if v.is_empty() {
                Vec::new()
            } else {
                REPORT_QUANTILES
                    .iter()
                    .map(|&q| (q, quantile(&v, q)))
                    .collect()
            };
            ProviderPositivity {
                provider: a,
                min,
                max,
                quantiles,
                below_bound: v.iter().filter(|&&p| p < bound).count(),
                flag: if min < threshold {
                    PositivityFlag::PracticalViolation
                } else {
                    PositivityFlag::Ok
                },
            }
        })
        .collect();
    PositivityReport {
        threshold,
        bound,
        providers,
    }
}

/// Covariates followed by indicators for providers 1..m (provider 0 is the
/// reference level).
fn provider_design(x: ArrayView2<f64>, provider: impl Fn(usize) -> usize, m: usize) -> Array2<f64> {
    let k = x.ncols();
    let mut z = Array2::zeros((x.nrows(), k + m.saturating_sub(1)));
    z.slice_mut(s![.., ..k]).assign(&x);
    for i in 0..x.nrows() {
        let a = provider(i);
        if a > 0 {
            z[[i, k + a - 1]] = 1.0;
        }
    }
    z
}

struct FoldFit {
    valid: Vec<usize>,
    pi: Array2<f64>,
    mu_tilde: Vec<f64>,
    mu_bar: Option<Array2<f64>>,
    mu_dot: Vec<f64>,
    p_hat: Vec<f64>,
    diagnostics: Vec<String>,
}

fn fit_fold(
    d: &Dataset,
    folds: &FoldAssignment,
    j: usize,
    cfg: &NuisanceConfig,
) -> Result<FoldFit> {
    let m = d.m();
    let train = folds.training(j);
    let valid = folds.validation(j);
    let x = d.covariates();
    let a = d.providers();
    let y = d.outcomes();
    let mut counts = vec![0usize; m];
    let mut sums = vec![0.0; m];
    for &i in &train {
        counts[a[i]] += 1;
        sums[a[i]] += y[i];
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ProviderAbsentFromTraining {
            provider: d.label(missing).to_string(),
            fold: j + 1,
        });
    }
    let nt = train.len() as f64;
    let mu_dot = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let p_hat = counts.iter().map(|&c| c as f64 / nt).collect();

    let xt = x.select(Axis(0), &train);
    let xv = x.select(Axis(0), &valid);
    let at: Vec<usize> = train.iter().map(|&i| a[i]).collect();
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let mut diagnostics = Vec::new();

    let prop = stack_classifier(&cfg.propensity, xt.view(), &at, m)?;
    diagnostics.extend(
        prop.diagnostics()
            .iter()
            .map(|s| format!("fold {}: propensity: {s}", j + 1)),
    );
    let pi = prop.predict_proba(xv.view())?;

    let outcome = stack_regressor(&cfg.outcome, xt.view(), &yt, cfg.outcome_link)?;
    diagnostics.extend(
        outcome
            .diagnostics()
            .iter()
            .map(|s| format!("fold {}: outcome: {s}", j + 1)),
    );
    let mu_tilde = outcome
        .predict(xv.view())?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();

    let mu_bar = if cfg.direct {
        let spec = cfg.provider_spec();
        let mut bar = Array2::zeros((valid.len(), m));
        match cfg.provider_outcome_mode {
            ProviderOutcomeMode::OneHot => {
                let zt = provider_design(xt.view(), |r| at[r], m);
                let f = stack_regressor(spec, zt.view(), &yt, cfg.outcome_link)?;
                diagnostics.extend(
                    f.diagnostics()
                        .iter()
                        .map(|s| format!("fold {}: provider outcome: {s}", j + 1)),
                );
                for c in 0..m {
                    let zv = provider_design(xv.view(), |_| c, m);
                    for (r, v) in f.predict(zv.view())?.into_iter().enumerate() {
                        bar[[r, c]] = v.clamp(0.0, 1.0);
                    }
                }
            }
            ProviderOutcomeMode::PerProvider => {
                for c in 0..m {
                    let rows: Vec<usize> = (0..train.len()).filter(|&r| at[r] == c).collect();
                    let xc = xt.select(Axis(0), &rows);
                    let yc: Vec<f64> = rows.iter().map(|&r| yt[r]).collect();
                    let pred = if rows.len() >= 2 {
                        let f = stack_regressor(spec, xc.view(), &yc, cfg.outcome_link)?;
                        diagnostics.extend(f.diagnostics().iter().map(|s| {
                            format!("fold {}: provider {} outcome: {s}", j + 1, d.label(c))
                        }));
                        f.predict(xv.view())?
                    } else {
                        vec![yc[0]; valid.len()]
                    };
                    for (r, v) in pred.into_iter().enumerate() {
                        bar[[r, c]] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
        Some(bar)
    } else {
        None
    };

    Ok(FoldFit {
        valid,
        pi,
        mu_tilde,
        mu_bar,
        mu_dot,
        p_hat,
        diagnostics,
    })
}

/// Cross-fitted nuisances for a dataset whose outcomes already lie in [0, 1].
pub fn estimate_nuisances(
    d: &Dataset,
    folds: &FoldAssignment,
    cfg: &NuisanceConfig,
) -> Result<NuisanceEstimates> {
    let n = d.n();
    let m = d.m();
    cfg.validate(m)?;
    if folds.fold_of().len() != n {
        return Err(Error::InvalidArgument(format!(
            "fold assignment covers {} rows but the dataset has {n}",
            folds.fold_of().len()
        )));
    }
    if d.outcomes().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(
            "nuisance estimation needs outcomes scaled into [0, 1]".into(),
        ));
    }
    if !folds.is_cross_fitted() {
        warn!("nuisances fitted without cross-fitting (single-fold debug mode)");
    }
    let fits: Vec<FoldFit> = (0..folds.folds())
        .into_par_iter()
        .map(|j| fit_fold(d, folds, j, cfg))
        .collect::<Result<_>>()?;

    let mut pi_hat = Array2::zeros((n, m));
    let mut mu_tilde = vec![0.0; n];
    let mut mu_bar = cfg.direct.then(|| Array2::zeros((n, m)));
    let mut mu_dot = vec![0.0; m];
    let mut p_hat = vec![0.0; m];
    let mut diagnostics = Vec::new();
    let jf = fits.len() as f64;
    for fit in fits {
        for (r, &i) in fit.valid.iter().enumerate() {
            pi_hat.row_mut(i).assign(&fit.pi.row(r));
            mu_tilde[i] = fit.mu_tilde[r];
            if let (Some(bar), Some(fb)) = (mu_bar.as_mut(), fit.mu_bar.as_ref()) {
                bar.row_mut(i).assign(&fb.row(r));
            }
        }
        for c in 0..m {
            mu_dot[c] += fit.mu_dot[c] / jf;
            p_hat[c] += fit.p_hat[c] / jf;
        }
        diagnostics.extend(fit.diagnostics);
    }
    let total: f64 = p_hat.iter().sum();
    p_hat.iter_mut().for_each(|p| *p /= total);

    let positivity = positivity_report(&pi_hat, cfg.violation_threshold, cfg.truncation);
    let pi_truncated = cfg
        .direct
        .then(|| truncate_propensities(&pi_hat, cfg.truncation));
    Ok(NuisanceEstimates {
        pi_hat,
        pi_truncated,
        mu_tilde,
        mu_bar,
        mu_dot,
        p_hat,
        folds: folds.clone(),
        truncation: if cfg.direct { cfg.truncation } else { 0.0 },
        positivity,
        diagnostics,
    })
}
