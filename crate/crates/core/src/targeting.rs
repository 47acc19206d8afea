//! Targeted updates of the cross-fitted nuisances and the resulting
//! per-provider estimates.
//!
//! Each parameter and provider gets its own one-dimensional logistic
//! fluctuation of the relevant outcome regression, with offsets taken from
//! the pooled cross-fitted predictions. After the update the empirical mean of
//! the estimated influence function is zero, and the targeted means are
//! plugged into the parameter mappings.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{scale_outcomes, Dataset, FoldAssignment, OutcomeKind, OutcomeScale};
use crate::eif::{self, Contrast};
use crate::error::{Error, Result};
use crate::learners::glm::{self, logit, sigmoid};
use crate::nuisance::{estimate_nuisances, NuisanceConfig, NuisanceEstimates, PositivityFlag};

/// Predictions are clipped into `[CLIP, 1 - CLIP]` before taking logits.
pub const CLIP: f64 = 1e-6;
pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_NEWTON: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Phi,
    Psi1,
    Psi2,
    Er,
    Smr,
}

impl Parameter {
    pub const ALL: [Parameter; 5] = [
        Parameter::Phi,
        Parameter::Psi1,
        Parameter::Psi2,
        Parameter::Er,
        Parameter::Smr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Parameter::Phi => "phi",
            Parameter::Psi1 => "psi1",
            Parameter::Psi2 => "psi2",
            Parameter::Er => "er",
            Parameter::Smr => "smr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim().to_ascii_lowercase())
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Tmle,
    Glm,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Tmle => "tmle",
            Estimator::Glm => "glm",
        }
    }
}

/// Submodel directions for one provider.
#[derive(Debug, Clone, PartialEq)]
pub struct CleverCovariates {
    /// `1[A = a] / pi_trunc(a, w)`; present when the direct parameter is targeted.
    pub m: Option<Vec<f64>>,
    /// `1[A = a] / p(a)`.
    pub k: Vec<f64>,
    /// `pi(a, w) / p(a)` with untruncated propensities.
    pub h: Vec<f64>,
}

pub fn clever_covariates(
    a: usize,
    d: &Dataset,
    nu: &NuisanceEstimates,
    direct: bool,
) -> Result<CleverCovariates> {
    let p = nu.p_hat[a];
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "provider {} has zero marginal probability",
            d.label(a)
        )));
    }
    let providers = d.providers();
    let k = providers
        .iter()
        .map(|&ai| if ai == a { 1.0 / p } else { 0.0 })
        .collect();
    let h = nu.pi_hat.column(a).iter().map(|&pi| pi / p).collect();
    let m = if direct {
        let pi = nu.direct_propensity().column(a);
        let zero: Vec<usize> = (0..d.n())
            .filter(|&i| !(pi[i] > 0.0))
            .map(|i| i + 1)
            .collect();
        if !zero.is_empty() {
            return Err(Error::ZeroPropensity {
                provider: d.label(a).to_string(),
                rows: zero,
            });
        }
        Some(
            providers
                .iter()
                .zip(pi.iter())
                .map(|(&ai, &pi)| if ai == a { 1.0 / pi } else { 0.0 })
                .collect(),
        )
    } else {
        None
    };
    Ok(CleverCovariates { m, k, h })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluctuationFit {
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub score: f64,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_likelihood(offsets: &[f64], covariate: &[f64], y: &[f64], eps: f64) -> f64 {
    compensated_sum(offsets.iter().zip(covariate).zip(y).map(|((o, c), y)| {
        let eta = o + eps * c;
        -y * softplus(-eta) - (1.0 - y) * softplus(eta)
    }))
}

fn score_and_information(offsets: &[f64], covariate: &[f64], y: &[f64], eps: f64) -> (f64, f64) {
    let mut info = 0.0;
    let score = compensated_sum(offsets.iter().zip(covariate).zip(y).map(|((o, c), y)| {
        let eta = o + eps * c;
        // both tails computed directly so saturation does not zero the score
        let (p, q) = (sigmoid(eta), sigmoid(-eta));
        info += c * c * p * q;
        c * (y * q - (1.0 - y) * p)
    }));
    (score, info)
}

/// Maximum likelihood fit of `eps` in `logit(mean) = offset + eps * covariate`
/// by Newton's method with step halving. Convergence requires the score to be
/// at most 1e-8 in absolute value and the Newton step to be negligible, so
/// likelihoods maximized only at infinity run to the iteration cap.
pub fn fit_epsilon(offsets: &[f64], covariate: &[f64], y: &[f64]) -> FluctuationFit {
    let mut eps = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut ll = log_likelihood(offsets, covariate, y, eps);
    loop {
        let (score, info) = score_and_information(offsets, covariate, y, eps);
        let step = if info > 0.0 { score / info } else { 0.0 };
        if score.abs() <= SCORE_TOL && step.abs() <= 1e-6 * (1.0 + eps.abs()) {
            converged = true;
            break;
        }
        if iterations >= MAX_NEWTON || !(info > 0.0) || !step.is_finite() {
            break;
        }
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = eps + t * step;
            let trial_ll = log_likelihood(offsets, covariate, y, trial);
            if trial_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                eps = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (score, _) = score_and_information(offsets, covariate, y, eps);
    FluctuationFit {
        epsilon: eps,
        iterations,
        converged,
        score,
    }
}

pub fn clipped_logit(p: f64) -> f64 {
    logit(p.clamp(CLIP, 1.0 - CLIP))
}

/// A targeted mean on the scaled outcome domain together with the updated
/// regression it was plugged in from.
#[derive(Debug, Clone, PartialEq)]
pub struct Targeted {
    pub estimate: f64,
    pub updated: Vec<f64>,
    pub fit: FluctuationFit,
}

/// Provider mean via the fluctuation of the cross-fitted provider mean along
/// `1[A = a] / p(a)`.
pub fn target_psi1(a: usize, d: &Dataset, nu: &NuisanceEstimates) -> Result<Targeted> {
    let rows = d.rows_of(a);
    let p = nu.p_hat[a];
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "provider {} has zero marginal probability",
            d.label(a)
        )));
    }
    let offset = clipped_logit(nu.mu_dot[a]);
    let offsets = vec![offset; rows.len()];
    let cov = vec![1.0 / p; rows.len()];
    let y: Vec<f64> = rows.iter().map(|&i| d.outcomes()[i]).collect();
    let fit = fit_epsilon(&offsets, &cov, &y);
    let updated = sigmoid(offset + fit.epsilon / p);
    Ok(Targeted {
        estimate: updated,
        updated: vec![updated],
        fit,
    })
}

/// Reassigned mean: fluctuate the covariate-only outcome regression along
/// `pi(a, w) / p(a)` and average it over the provider's own rows.
pub fn target_psi2(a: usize, d: &Dataset, nu: &NuisanceEstimates) -> Result<Targeted> {
    let cc = clever_covariates(a, d, nu, false)?;
    let offsets: Vec<f64> = nu.mu_tilde.iter().map(|&m| clipped_logit(m)).collect();
    let fit = fit_epsilon(&offsets, &cc.h, d.outcomes());
    let updated: Vec<f64> = offsets
        .iter()
        .zip(&cc.h)
        .map(|(o, h)| sigmoid(o + fit.epsilon * h))
        .collect();
    let rows = d.rows_of(a);
    let estimate = rows.iter().map(|&i| updated[i]).sum::<f64>() / rows.len() as f64;
    Ok(Targeted {
        estimate,
        updated,
        fit,
    })
}

/// Direct parameter: fluctuate the provider-covariate regression at provider
/// `a` along `1 / pi_trunc(a, w)` and average over all rows.
pub fn target_phi(a: usize, d: &Dataset, nu: &NuisanceEstimates) -> Result<Targeted> {
    let mu_bar = nu.mu_bar.as_ref().ok_or_else(|| {
        Error::InvalidArgument("provider-covariate outcome model was not fitted".into())
    })?;
    let cc = clever_covariates(a, d, nu, true)?;
    let m = cc.m.expect("direct covariates");
    let pi = nu.direct_propensity().column(a);
    let offsets: Vec<f64> = mu_bar.column(a).iter().map(|&v| clipped_logit(v)).collect();
    let fit = fit_epsilon(&offsets, &m, d.outcomes());
    let updated: Vec<f64> = offsets
        .iter()
        .zip(pi.iter())
        .map(|(o, p)| sigmoid(o + fit.epsilon / p))
        .collect();
    let estimate = updated.iter().sum::<f64>() / updated.len() as f64;
    Ok(Targeted {
        estimate,
        updated,
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamEstimate {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// Whether every fluctuation behind the estimate converged.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderEstimates {
    pub id: usize,
    pub label: String,
    pub n: usize,
    pub values: BTreeMap<Parameter, ParamEstimate>,
    pub positivity: PositivityFlag,
    pub notes: Vec<String>,
}

impl ProviderEstimates {
    pub fn get(&self, p: Parameter) -> Option<&ParamEstimate> {
        self.values.get(&p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEstimates {
    pub estimator: Estimator,
    pub parameters: Vec<Parameter>,
    pub level: f64,
    pub folds: usize,
    pub seed: u64,
    pub scale: OutcomeScale,
    pub providers: Vec<ProviderEstimates>,
    /// n×m influence values on the original outcome scale; columns of
    /// providers without an estimate are NaN.
    pub eifs: BTreeMap<Parameter, Array2<f64>>,
}

impl ProfileEstimates {
    /// `(label, ratio, standard error)` triples for the funnel plot.
    pub fn smr_points(&self) -> Vec<(String, f64, f64)> {
        self.providers
            .iter()
            .filter_map(|p| {
                let v = p.get(Parameter::Smr)?;
                Some((p.label.clone(), v.estimate, v.se?))
            })
            .collect()
    }

    /// Joint covariance of one parameter across providers.
    pub fn covariance(&self, p: Parameter) -> Result<Array2<f64>> {
        let eif = self
            .eifs
            .get(&p)
            .ok_or_else(|| Error::InvalidArgument(format!("no influence values stored for {p}")))?;
        let cols: Vec<Vec<f64>> = eif.columns().into_iter().map(|c| c.to_vec()).collect();
        eif::joint_covariance(&cols)
    }
}

/// Parameters that must be targeted to report `requested`.
fn needed(requested: &[Parameter]) -> (bool, bool, bool) {
    let has = |p| requested.contains(&p);
    let phi = has(Parameter::Phi);
    let psi1 = has(Parameter::Psi1) || has(Parameter::Er) || has(Parameter::Smr);
    let psi2 = has(Parameter::Psi2) || has(Parameter::Er) || has(Parameter::Smr);
    (phi, psi1, psi2)
}

struct ProviderOutput {
    estimates: ProviderEstimates,
    eifs: Vec<(Parameter, Vec<f64>)>,
}

fn target_provider(
    a: usize,
    d: &Dataset,
    scale: OutcomeScale,
    nu: &NuisanceEstimates,
    requested: &[Parameter],
    level: f64,
) -> ProviderOutput {
    let (want_phi, want_psi1, want_psi2) = needed(requested);
    let width = scale.width();
    let providers = d.providers();
    let y_orig: Vec<f64> = d.outcomes().iter().map(|&v| scale.unscale(v)).collect();
    let mut values = BTreeMap::new();
    let mut eifs = Vec::new();
    let mut notes = Vec::new();
    let mut record =
        |p: Parameter, est: f64, d_orig: Vec<f64>, converged: bool, notes: &mut Vec<String>| {
            match eif::inference(&d_orig, est, level) {
                Ok(inf) => {
                    values.insert(
                        p,
                        ParamEstimate {
                            estimate: est,
                            se: Some(inf.se),
                            ci: Some((inf.ci_lo, inf.ci_hi)),
                            converged,
                        },
                    );
                    eifs.push((p, d_orig));
                }
                Err(e) => notes.push(format!("{p}: {e}")),
            }
        };
    let check = |name: Parameter, fit: &FluctuationFit, notes: &mut Vec<String>| {
        if !fit.converged {
            warn!(
                "provider {}: {name} fluctuation did not converge (score {:.3e} after {} iterations)",
                d.label(a),
                fit.score,
                fit.iterations
            );
            notes.push(format!(
                "{name} targeting not certified: score {:.3e}",
                fit.score
            ));
        }
        fit.converged
    };

    if want_phi {
        match target_phi(a, d, nu) {
            Ok(t) => {
                let ok = check(Parameter::Phi, &t.fit, &mut notes);
                let pi = nu.direct_propensity().column(a).to_vec();
                let d_s = eif::eif_phi(a, providers, d.outcomes(), &pi, &t.updated, t.estimate);
                let d_o: Vec<f64> = d_s.iter().map(|v| v * width).collect();
                record(
                    Parameter::Phi,
                    scale.unscale(t.estimate),
                    d_o,
                    ok,
                    &mut notes,
                );
            }
            Err(e) => notes.push(format!("phi: {e}")),
        }
    }
    let psi1 = if want_psi1 {
        match target_psi1(a, d, nu) {
            Ok(t) => {
                let ok = check(Parameter::Psi1, &t.fit, &mut notes);
                let est = scale.unscale(t.estimate);
                let d_o = eif::eif_psi1(a, providers, &y_orig, nu.p_hat[a], est);
                Some((est, d_o, ok))
            }
            Err(e) => {
                notes.push(format!("psi1: {e}"));
                None
            }
        }
    } else {
        None
    };
    let psi2 = if want_psi2 {
        match target_psi2(a, d, nu) {
            Ok(t) => {
                let ok = check(Parameter::Psi2, &t.fit, &mut notes);
                let pi = nu.pi_hat.column(a).to_vec();
                let d_s = eif::eif_psi2(
                    a,
                    providers,
                    d.outcomes(),
                    &pi,
                    &t.updated,
                    nu.p_hat[a],
                    t.estimate,
                );
                let d_o: Vec<f64> = d_s.iter().map(|v| v * width).collect();
                Some((scale.unscale(t.estimate), d_o, ok))
            }
            Err(e) => {
                notes.push(format!("psi2: {e}"));
                None
            }
        }
    } else {
        None
    };
    if let (Some((p1, d1, ok1)), Some((p2, d2, ok2))) = (&psi1, &psi2) {
        let ok = *ok1 && *ok2;
        if requested.contains(&Parameter::Er) {
            let d_er = eif::eif_delta(d1, d2, *p1, *p2, Contrast::Er)
                .expect("difference is always defined");
            record(Parameter::Er, p1 - p2, d_er, ok, &mut notes);
        }
        if requested.contains(&Parameter::Smr) {
            if *p2 > 0.0 {
                match eif::eif_delta(d1, d2, *p1, *p2, Contrast::Smr) {
                    Ok(d_smr) => record(Parameter::Smr, p1 / p2, d_smr, ok, &mut notes),
                    Err(e) => notes.push(format!("smr: {e}")),
                }
            } else {
                notes.push(format!("smr undefined: reassigned mean is {p2}"));
            }
        }
    }
    if requested.contains(&Parameter::Psi1) {
        if let Some((est, d_o, ok)) = psi1 {
            record(Parameter::Psi1, est, d_o, ok, &mut notes);
        }
    }
    if requested.contains(&Parameter::Psi2) {
        if let Some((est, d_o, ok)) = psi2 {
            record(Parameter::Psi2, est, d_o, ok, &mut notes);
        }
    }
    ProviderOutput {
        estimates: ProviderEstimates {
            id: a,
            label: d.label(a).to_string(),
            n: d.rows_of(a).len(),
            values,
            positivity: nu
                .positivity
                .providers
                .get(a)
                .map_or(PositivityFlag::Ok, |p| p.flag),
            notes,
        },
        eifs,
    }
}

/// Target every provider given nuisances fitted on `d_scaled`, whose
/// outcomes lie on the scaled domain described by `scale`.
pub fn target_all(
    d_scaled: &Dataset,
    scale: OutcomeScale,
    nu: &NuisanceEstimates,
    requested: &[Parameter],
    level: f64,
) -> Result<ProfileEstimates> {
    if requested.is_empty() {
        return Err(Error::InvalidArgument("no parameters requested".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} must lie in (0, 1)"
        )));
    }
    if nu.n() != d_scaled.n() || nu.m() != d_scaled.m() {
        return Err(Error::InvalidArgument(
            "nuisance estimates do not match the dataset".into(),
        ));
    }
    let n = d_scaled.n();
    let m = d_scaled.m();
    let outputs: Vec<ProviderOutput> = (0..m)
        .into_par_iter()
        .map(|a| target_provider(a, d_scaled, scale, nu, requested, level))
        .collect();
    let mut eifs: BTreeMap<Parameter, Array2<f64>> = requested
        .iter()
        .map(|&p| (p, Array2::from_elem((n, m), f64::NAN)))
        .collect();
    let mut providers = Vec::with_capacity(m);
    for (a, out) in outputs.into_iter().enumerate() {
        for (p, d) in out.eifs {
            if let Some(mat) = eifs.get_mut(&p) {
                mat.column_mut(a).assign(&ndarray::Array1::from(d));
            }
        }
        providers.push(out.estimates);
    }
    let mut parameters = requested.to_vec();
    parameters.sort();
    parameters.dedup();
    Ok(ProfileEstimates {
        estimator: Estimator::Tmle,
        parameters,
        level,
        folds: nu.folds.folds(),
        seed: nu.folds.seed(),
        scale,
        providers,
        eifs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub parameters: Vec<Parameter>,
    pub nuisance: NuisanceConfig,
    pub level: f64,
    /// Margin used when mapping continuous outcomes into (0, 1).
    pub delta: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            parameters: vec![
                Parameter::Psi1,
                Parameter::Psi2,
                Parameter::Er,
                Parameter::Smr,
            ],
            nuisance: NuisanceConfig::default(),
            level: 0.95,
            delta: 0.005,
        }
    }
}

/// Scale outcomes, fit nuisances and target every requested parameter.
pub fn compute_all(
    d: &Dataset,
    folds: &FoldAssignment,
    cfg: &EstimationConfig,
) -> Result<ProfileEstimates> {
    let (scaled, scale) = scale_outcomes(d, cfg.delta)?;
    let mut ncfg = cfg.nuisance.clone();
    ncfg.direct = cfg.parameters.contains(&Parameter::Phi);
    let nu = estimate_nuisances(&scaled, folds, &ncfg)?;
    target_all(&scaled, scale, &nu, &cfg.parameters, cfg.level)
}

/// Covariates followed by indicators for providers 1..m.
fn with_provider_dummies(
    x: ArrayView2<f64>,
    provider: impl Fn(usize) -> usize,
    m: usize,
) -> Array2<f64> {
    let k = x.ncols();
    let mut z = Array2::zeros((x.nrows(), k + m - 1));
    z.slice_mut(s![.., ..k]).assign(&x);
    for i in 0..x.nrows() {
        let a = provider(i);
        if a > 0 {
            z[[i, k + a - 1]] = 1.0;
        }
    }
    z
}

struct OutcomeGlm {
    model: glm::LinearModel,
    kind: OutcomeKind,
}

impl OutcomeGlm {
    fn fit(z: ArrayView2<f64>, y: &[f64], kind: OutcomeKind) -> Result<Self> {
        let (model, note) = match kind {
            OutcomeKind::Binary => glm::fit_logistic(z, y, 0.0)?,
            OutcomeKind::Continuous => glm::fit_linear(z, y, 0.0)?,
        };
        if let Some(note) = note {
            warn!("glm benchmark: {note}");
        }
        Ok(Self { model, kind })
    }

    fn predict(&self, z: ArrayView2<f64>) -> Vec<f64> {
        let eta = self.model.eta(z);
        match self.kind {
            OutcomeKind::Binary => eta.into_iter().map(sigmoid).collect(),
            OutcomeKind::Continuous => eta,
        }
    }
}

/// Form of the provider-covariate outcome GLM in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmForm {
    /// Separate intercept and covariate slopes per provider.
    #[default]
    ProviderSlopes,
    /// Common covariate slopes with provider indicators.
    MainEffects,
}

/// Non-targeted, non-cross-fitted plug-in benchmark from GLMs. The direct
/// mean averages the provider's fitted outcome over every row; the
/// reassigned mean averages a covariate-only GLM over the provider's rows.
/// Standard errors are not available.
pub fn glm_benchmark(
    d: &Dataset,
    requested: &[Parameter],
    form: GlmForm,
) -> Result<ProfileEstimates> {
    let m = d.m();
    let n = d.n();
    let x = d.covariates().view();
    let y = d.outcomes();
    let providers = d.providers();
    let kind = d.outcome_kind();
    let (want_phi, _, want_psi2) = needed(requested);
    let phi: Option<Vec<f64>> = if want_phi {
        match form {
            GlmForm::MainEffects => {
                let z = with_provider_dummies(x, |i| providers[i], m);
                let model = OutcomeGlm::fit(z.view(), y, kind)?;
                Some(
                    (0..m)
                        .map(|a| {
                            let za = with_provider_dummies(x, |_| a, m);
                            model.predict(za.view()).iter().sum::<f64>() / n as f64
                        })
                        .collect(),
                )
            }
            GlmForm::ProviderSlopes => Some(
                (0..m)
                    .map(|a| {
                        let rows = d.rows_of(a);
                        let xa = x.select(ndarray::Axis(0), &rows);
                        let ya: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                        let model = OutcomeGlm::fit(xa.view(), &ya, kind)?;
                        Ok(model.predict(x).iter().sum::<f64>() / n as f64)
                    })
                    .collect::<Result<_>>()?,
            ),
        }
    } else {
        None
    };
    let mu_tilde: Option<Vec<f64>> = if want_psi2 {
        Some(OutcomeGlm::fit(x, y, kind)?.predict(x))
    } else {
        None
    };
    let mut out = Vec::with_capacity(m);
    for a in 0..m {
        let rows = d.rows_of(a);
        let psi1 = d.provider_mean(a);
        let psi2 = mu_tilde
            .as_ref()
            .map(|mt| rows.iter().map(|&i| mt[i]).sum::<f64>() / rows.len() as f64);
        let mut values = BTreeMap::new();
        let mut notes = vec![match form {
            GlmForm::ProviderSlopes => {
                "GLM plug-in benchmark (provider-specific slopes)".to_string()
            }
            GlmForm::MainEffects => "GLM plug-in benchmark (main effects)".to_string(),
        }];
        let plain = |v: f64| ParamEstimate {
            estimate: v,
            se: None,
            ci: None,
            converged: true,
        };
        for &p in requested {
            let v = match p {
                Parameter::Phi => phi.as_ref().map(|f| f[a]),
                Parameter::Psi1 => Some(psi1),
                Parameter::Psi2 => psi2,
                Parameter::Er => psi2.map(|p2| psi1 - p2),
                Parameter::Smr => match psi2 {
                    Some(p2) if p2 > 0.0 => Some(psi1 / p2),
                    Some(p2) => {
                        notes.push(format!("smr undefined: reassigned mean is {p2}"));
                        None
                    }
                    None => None,
                },
            };
            if let Some(v) = v {
                values.insert(p, plain(v));
            }
        }
        out.push(ProviderEstimates {
            id: a,
            label: d.label(a).to_string(),
            n: rows.len(),
            values,
            positivity: PositivityFlag::Ok,
            notes,
        });
    }
    let mut parameters = requested.to_vec();
    parameters.sort();
    parameters.dedup();
    Ok(ProfileEstimates {
        estimator: Estimator::Glm,
        parameters,
        level: f64::NAN,
        folds: 0,
        seed: 0,
        scale: OutcomeScale::UNIT,
        providers: out,
        eifs: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{EnsembleSpec, LearnerSpec};
    use crate::nuisance::positivity_report;
    use ndarray::array;

    fn toy4() -> Dataset {
        Dataset::new(
            Array2::from_elem((4, 1), 0.5),
            vec![0, 0, 1, 1],
            vec![1.0, 0.0, 1.0, 1.0],
            OutcomeKind::Binary,
            vec!["1".into(), "2".into()],
        )
        .unwrap()
    }

    fn glm_cfg(parameters: Vec<Parameter>) -> EstimationConfig {
        EstimationConfig {
            parameters,
            nuisance: NuisanceConfig {
                propensity: EnsembleSpec::single(LearnerSpec::Glm),
                outcome: EnsembleSpec::single(LearnerSpec::Glm),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn manual_nuisances(
        pi: Array2<f64>,
        mu_tilde: Vec<f64>,
        p_hat: Vec<f64>,
        mu_dot: Vec<f64>,
    ) -> NuisanceEstimates {
        let n = mu_tilde.len();
        let positivity = positivity_report(&pi, 1e-4, 0.0);
        NuisanceEstimates {
            pi_truncated: Some(pi.clone()),
            pi_hat: pi,
            mu_bar: None,
            mu_tilde,
            mu_dot,
            p_hat,
            folds: FoldAssignment::single(n),
            truncation: 0.0,
            positivity,
            diagnostics: Vec::new(),
        }
    }

    #[test]
    fn clever_covariate_example() {
        let d = Dataset::new(
            Array2::zeros((2, 1)),
            vec![0, 1],
            vec![1.0, 0.0],
            OutcomeKind::Binary,
            vec!["1".into(), "2".into()],
        )
        .unwrap();
        let nu = manual_nuisances(
            array![[0.5, 0.5], [0.25, 0.75]],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![1.0, 0.0],
        );
        let cc = clever_covariates(0, &d, &nu, true).unwrap();
        assert_eq!(cc.m.unwrap(), vec![2.0, 0.0]);
        assert_eq!(cc.k, vec![2.0, 0.0]);
        assert_eq!(cc.h, vec![1.0, 0.5]);
    }

    #[test]
    fn constant_propensity_gives_unit_h() {
        let d = toy4();
        let nu = manual_nuisances(
            Array2::from_elem((4, 2), 0.5),
            vec![0.75; 4],
            vec![0.5, 0.5],
            vec![0.5, 1.0],
        );
        let cc = clever_covariates(1, &d, &nu, false).unwrap();
        assert!(cc.h.iter().all(|&h| h == 1.0));
    }

    #[test]
    fn single_provider_covariates() {
        let d = Dataset::new(
            Array2::zeros((3, 1)),
            vec![0, 0, 0],
            vec![1.0, 0.0, 1.0],
            OutcomeKind::Binary,
            vec!["only".into()],
        )
        .unwrap();
        let pi = array![[1.0], [1.0], [1.0]];
        let nu = manual_nuisances(pi, vec![0.6; 3], vec![1.0], vec![0.6]);
        let cc = clever_covariates(0, &d, &nu, true).unwrap();
        assert!(cc.k.iter().all(|&k| k == 1.0));
        assert_eq!(cc.m.unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn zero_propensity_names_rows() {
        let d = toy4();
        let pi = array![[0.5, 0.5], [1.0, 0.0], [0.5, 0.5], [1.0, 0.0]];
        let nu = manual_nuisances(pi, vec![0.75; 4], vec![0.5, 0.5], vec![0.5, 1.0]);
        match clever_covariates(1, &d, &nu, true) {
            Err(Error::ZeroPropensity { provider, rows }) => {
                assert_eq!(provider, "2");
                assert_eq!(rows, vec![2, 4]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_covariate_gives_zero_epsilon() {
        let f = fit_epsilon(&[0.3, -0.2, 1.0], &[0.0; 3], &[1.0, 0.0, 1.0]);
        assert_eq!(f.epsilon, 0.0);
        assert_eq!(f.score, 0.0);
        assert!(f.converged);
    }

    #[test]
    fn stationary_offsets_give_zero_epsilon() {
        // the offsets reproduce the response mean along a constant covariate
        let f = fit_epsilon(&[0.0, 0.0], &[1.0, 1.0], &[1.0, 0.0]);
        assert_eq!(f.epsilon, 0.0);
        assert!(f.converged);
    }

    #[test]
    fn separable_response_runs_to_cap() {
        let offsets = [0.2, -0.4, 0.1, 0.0];
        let cov = [1.0, 2.0, 0.5, 0.0];
        let y = [1.0, 1.0, 1.0, 0.3];
        let f = fit_epsilon(&offsets, &cov, &y);
        assert!(!f.converged);
        assert_eq!(f.iterations, MAX_NEWTON);
        // grid search: the log-likelihood keeps increasing up to the grid edge
        let grid: Vec<f64> = (0..=400).map(|g| -20.0 + 0.1 * g as f64).collect();
        let ll: Vec<f64> = grid
            .iter()
            .map(|&e| log_likelihood(&offsets, &cov, &y, e))
            .collect();
        let best = (0..ll.len())
            .max_by(|&a, &b| ll[a].total_cmp(&ll[b]))
            .unwrap();
        assert_eq!(best, grid.len() - 1);
        assert!(f.epsilon > grid[grid.len() - 1]);
        assert!(log_likelihood(&offsets, &cov, &y, f.epsilon) >= ll[best]);
    }

    #[test]
    fn fluctuation_solves_score() {
        let offsets = [0.2, -0.4, 0.1, 0.0, 1.3];
        let cov = [1.0, 2.0, 0.5, 0.0, 3.0];
        let y = [1.0, 0.0, 0.7, 0.3, 0.2];
        let f = fit_epsilon(&offsets, &cov, &y);
        assert!(f.converged && f.score.abs() <= SCORE_TOL);
    }

    #[test]
    fn toy4_indirect_parameters() {
        let d = toy4();
        let cfg = glm_cfg(vec![
            Parameter::Psi1,
            Parameter::Psi2,
            Parameter::Er,
            Parameter::Smr,
        ]);
        let est = compute_all(&d, &FoldAssignment::single(4), &cfg).unwrap();
        let get = |a: usize, p| est.providers[a].get(p).unwrap().estimate;
        assert!((get(0, Parameter::Psi1) - 0.5).abs() < 1e-8);
        assert!((get(1, Parameter::Psi1) - 1.0).abs() < 1e-8);
        assert!((get(0, Parameter::Psi2) - 0.75).abs() < 1e-8);
        assert!((get(0, Parameter::Smr) - 2.0 / 3.0).abs() < 1e-8);
        assert!((get(1, Parameter::Smr) - 4.0 / 3.0).abs() < 1e-7);
        assert!((get(0, Parameter::Er) + 0.25).abs() < 1e-8);
        let d1 = est.eifs[&Parameter::Psi1].column(0).to_vec();
        let expect = [1.0, -1.0, 0.0, 0.0];
        for (u, v) in d1.iter().zip(expect) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn toy4_direct_parameter() {
        let d = toy4();
        let est = compute_all(
            &d,
            &FoldAssignment::single(4),
            &glm_cfg(vec![Parameter::Phi]),
        )
        .unwrap();
        let phi = est.providers[1].get(Parameter::Phi).unwrap().estimate;
        assert!((phi - 1.0).abs() < 1e-6, "{phi}");
        let col = est.eifs[&Parameter::Phi].column(1);
        assert!(col.mean().unwrap().abs() < 1e-6);
    }

    /// TOY6 with saturated learners: indicator of W as the only feature.
    fn toy6() -> Dataset {
        let w = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        Dataset::new(
            Array2::from_shape_vec((6, 1), w.to_vec()).unwrap(),
            vec![0, 0, 0, 1, 1, 1],
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0],
            OutcomeKind::Binary,
            vec!["1".into(), "2".into()],
        )
        .unwrap()
    }

    #[test]
    fn toy6_reassigned_mean_and_influence() {
        let d = toy6();
        let cfg = glm_cfg(vec![Parameter::Psi2]);
        let est = compute_all(&d, &FoldAssignment::single(6), &cfg).unwrap();
        let psi2 = est.providers[0].get(Parameter::Psi2).unwrap().estimate;
        // W=0 rows: mu_tilde = 1/3; W=1 rows: mu_tilde = 1 (separated, so
        // reached only approximately); provider 1 has two W=0 rows and one W=1
        assert!((psi2 - 5.0 / 9.0).abs() < 1e-6, "{psi2}");
        // hand evaluation of the influence display with pi(1|0)=2/3,
        // pi(1|1)=1/3, p(1)=1/2
        let pi = [
            2.0 / 3.0,
            2.0 / 3.0,
            1.0 / 3.0,
            2.0 / 3.0,
            1.0 / 3.0,
            1.0 / 3.0,
        ];
        let mt = [1.0 / 3.0, 1.0 / 3.0, 1.0, 1.0 / 3.0, 1.0, 1.0];
        let y = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let a = [true, true, true, false, false, false];
        let col = est.eifs[&Parameter::Psi2].column(0);
        for i in 0..6 {
            let own = if a[i] { mt[i] - 5.0 / 9.0 } else { 0.0 };
            let expect = (pi[i] * (y[i] - mt[i]) + own) / 0.5;
            assert!(
                (col[i] - expect).abs() < 1e-5,
                "row {i}: {} vs {expect}",
                col[i]
            );
        }
    }

    #[test]
    fn smr_undefined_when_reassigned_mean_is_zero() {
        // outcomes on [-1, 1]; the scaled midpoint maps back to zero
        let d = Dataset::new(
            Array2::from_elem((4, 1), 0.0),
            vec![0, 0, 1, 1],
            vec![0.5; 4],
            OutcomeKind::Continuous,
            vec!["1".into(), "2".into()],
        )
        .unwrap();
        let scale = OutcomeScale { lo: -1.0, hi: 1.0 };
        let nu = manual_nuisances(
            Array2::from_elem((4, 2), 0.5),
            vec![0.5; 4],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
        );
        let est = target_all(&d, scale, &nu, &[Parameter::Er, Parameter::Smr], 0.95).unwrap();
        let prov = &est.providers[0];
        assert!(prov.get(Parameter::Smr).is_none());
        assert!(prov.notes.iter().any(|n| n.contains("smr undefined")));
        assert_eq!(prov.get(Parameter::Er).unwrap().estimate, 0.0);
        assert!(est.eifs[&Parameter::Smr]
            .column(0)
            .iter()
            .all(|v| v.is_nan()));

        let zeros = d
            .with_outcomes(vec![0.0; 4], OutcomeKind::Continuous)
            .unwrap();
        let glm = glm_benchmark(&zeros, &[Parameter::Smr], GlmForm::default()).unwrap();
        assert!(glm.providers[0].get(Parameter::Smr).is_none());
        assert!(glm.providers[0]
            .notes
            .iter()
            .any(|n| n.contains("smr undefined")));
    }

    #[test]
    fn glm_benchmark_exact_on_linear_truth() {
        let n = 40;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| (i % 10) as f64 / 10.0);
        let a: Vec<usize> = (0..n).map(|i| (i * 7 / 3) % 2).collect();
        let y: Vec<f64> = (0..n).map(|i| x[[i, 0]] + a[i] as f64).collect();
        let d = Dataset::new(
            x.clone(),
            a,
            y,
            OutcomeKind::Continuous,
            vec!["1".into(), "2".into()],
        )
        .unwrap();
        let wbar = x.column(0).mean().unwrap();
        for form in [GlmForm::MainEffects, GlmForm::ProviderSlopes] {
            let est = glm_benchmark(&d, &[Parameter::Phi], form).unwrap();
            assert!((est.providers[0].get(Parameter::Phi).unwrap().estimate - wbar).abs() < 1e-6);
            assert!(
                (est.providers[1].get(Parameter::Phi).unwrap().estimate - (wbar + 1.0)).abs()
                    < 1e-6
            );
            assert!(est.providers[0].get(Parameter::Phi).unwrap().se.is_none());
        }
    }

    #[test]
    fn glm_forms_differ_under_provider_specific_slopes() {
        // provider 2 has a steeper slope; only the slope form recovers it
        let n = 60;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| (i % 10) as f64 / 10.0);
        let a: Vec<usize> = (0..n)
            .map(|i| usize::from(i % 10 >= 4 && i % 3 != 0))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| x[[i, 0]] * (1.0 + 2.0 * a[i] as f64))
            .collect();
        let d = Dataset::new(
            x.clone(),
            a,
            y,
            OutcomeKind::Continuous,
            vec!["1".into(), "2".into()],
        )
        .unwrap();
        let wbar = x.column(0).mean().unwrap();
        let slopes = glm_benchmark(&d, &[Parameter::Phi], GlmForm::ProviderSlopes).unwrap();
        assert!(
            (slopes.providers[1].get(Parameter::Phi).unwrap().estimate - 3.0 * wbar).abs() < 1e-8
        );
        let main = glm_benchmark(&d, &[Parameter::Phi], GlmForm::MainEffects).unwrap();
        assert!(
            (main.providers[1].get(Parameter::Phi).unwrap().estimate - 3.0 * wbar).abs() > 0.05
        );
    }

    #[test]
    fn parameter_names_round_trip() {
        for p in Parameter::ALL {
            assert_eq!(Parameter::parse(p.as_str()), Some(p));
        }
        assert_eq!(Parameter::parse("SMR"), Some(Parameter::Smr));
        assert_eq!(Parameter::parse("bogus"), None);
    }
}
