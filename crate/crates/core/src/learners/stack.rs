//! Cross-validated convex stacking.
//!
//! Member predictions are collected out of fold, then combined with weights on
//! the probability simplex chosen by exponentiated gradient descent on the
//! cross-validated loss.

use log::warn;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit_classifier, fit_classifier_lenient, fit_regressor, ClassifierState, FittedClassifier,
    FittedRegressor, LearnerSpec, Link, RegressorState,
};
use crate::error::{Error, Result};
use crate::rng;

/// Predictions are floored at this value inside the log loss.
const LOG_FLOOR: f64 = 1e-10;
const WEIGHT_TOL: f64 = 1e-8;
const MAX_WEIGHT_ITER: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightLoss {
    Squared,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: Vec<LearnerSpec>,
    #[serde(default = "default_stacking_folds")]
    pub stacking_folds: usize,
    #[serde(default = "default_weight_loss")]
    pub weight_loss: WeightLoss,
    #[serde(default)]
    pub seed: u64,
}

fn default_stacking_folds() -> usize {
    5
}

fn default_weight_loss() -> WeightLoss {
    WeightLoss::Squared
}

impl EnsembleSpec {
    pub fn single(member: LearnerSpec) -> Self {
        Self {
            members: vec![member],
            stacking_folds: default_stacking_folds(),
            weight_loss: default_weight_loss(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::InvalidArgument(
                "an ensemble needs at least one member".into(),
            ));
        }
        if self.members.len() > 1 && self.stacking_folds < 2 {
            return Err(Error::InvalidArgument(
                "stacking_folds must be at least 2".into(),
            ));
        }
        self.members.iter().try_for_each(LearnerSpec::validate)
    }
}

/// Inner fold labels: a seeded shuffle dealt round-robin, optionally within
/// strata so every stratum is spread over the folds.
fn inner_folds(n: usize, folds: usize, seed: u64, strata: Option<&[usize]>) -> Vec<usize> {
    let mut rng = rng::stream(seed, &[0x57AC]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    if let Some(s) = strata {
        order.sort_by_key(|&i| s[i]);
    }
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    fold_of
}

fn rows(x: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Weights minimizing a convex loss over the simplex by exponentiated
/// gradient with an adaptive step. `loss_grad` returns the loss and gradient.
pub fn simplex_minimize<F>(dim: usize, mut loss_grad: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut w = vec![1.0 / dim as f64; dim];
    if dim == 1 {
        return w;
    }
    let (mut f, mut g) = loss_grad(&w);
    let mut step = 1.0;
    for _ in 0..MAX_WEIGHT_ITER {
        let gmin = g.iter().cloned().fold(f64::INFINITY, f64::min);
        let gap: f64 = w.iter().zip(&g).map(|(wi, gi)| wi * gi).sum::<f64>() - gmin;
        if gap <= WEIGHT_TOL {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial: Vec<f64> = w
                .iter()
                .zip(&g)
                .map(|(wi, gi)| wi * (-step * (gi - gmin)).exp())
                .collect();
            let s: f64 = trial.iter().sum();
            trial.iter_mut().for_each(|t| *t /= s);
            let (ft, gt) = loss_grad(&trial);
            if ft <= f {
                w = trial;
                f = ft;
                g = gt;
                step *= 2.0;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    w
}

fn squared_weights(columns: &[Vec<f64>], target: &[f64]) -> Vec<f64> {
    let l = columns.len();
    let n = target.len() as f64;
    let mut gram = vec![0.0; l * l];
    let mut cross = vec![0.0; l];
    for a in 0..l {
        cross[a] = columns[a]
            .iter()
            .zip(target)
            .map(|(u, v)| u * v)
            .sum::<f64>()
            / n;
        for b in a..l {
            let v = columns[a]
                .iter()
                .zip(&columns[b])
                .map(|(u, v)| u * v)
                .sum::<f64>()
                / n;
            gram[a * l + b] = v;
            gram[b * l + a] = v;
        }
    }
    let tt = target.iter().map(|v| v * v).sum::<f64>() / n;
    simplex_minimize(l, |w| {
        let gw: Vec<f64> = (0..l)
            .map(|a| (0..l).map(|b| gram[a * l + b] * w[b]).sum())
            .collect();
        let quad: f64 = w.iter().zip(&gw).map(|(u, v)| u * v).sum();
        let lin: f64 = w.iter().zip(&cross).map(|(u, v)| u * v).sum();
        let grad = gw.iter().zip(&cross).map(|(u, v)| 2.0 * (u - v)).collect();
        (quad - 2.0 * lin + tt, grad)
    })
}

/// Bernoulli log loss of convex combinations of `columns` against `target`.
fn binary_log_weights(columns: &[Vec<f64>], target: &[f64]) -> Vec<f64> {
    let l = columns.len();
    let n = target.len();
    simplex_minimize(l, |w| {
        let mut loss = 0.0;
        let mut grad = vec![0.0; l];
        for i in 0..n {
            let raw: f64 = (0..l).map(|a| w[a] * columns[a][i]).sum();
            let p = raw.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
            let y = target[i];
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            let d = if raw > LOG_FLOOR && raw < 1.0 - LOG_FLOOR {
                -(y / p) + (1.0 - y) / (1.0 - p)
            } else {
                0.0
            };
            for a in 0..l {
                grad[a] += d * columns[a][i];
            }
        }
        grad.iter_mut().for_each(|g| *g /= n as f64);
        (loss / n as f64, grad)
    })
}

/// Multinomial log loss: `columns[a][i]` is member a's probability of the
/// observed class of row i.
fn multinomial_log_weights(columns: &[Vec<f64>]) -> Vec<f64> {
    let l = columns.len();
    let n = columns[0].len();
    simplex_minimize(l, |w| {
        let mut loss = 0.0;
        let mut grad = vec![0.0; l];
        for i in 0..n {
            let raw: f64 = (0..l).map(|a| w[a] * columns[a][i]).sum();
            let p = raw.max(LOG_FLOOR);
            loss -= p.ln();
            if raw > LOG_FLOOR {
                for a in 0..l {
                    grad[a] -= columns[a][i] / p;
                }
            }
        }
        grad.iter_mut().for_each(|g| *g /= n as f64);
        (loss / n as f64, grad)
    })
}

/// Fit every member on the full data, dropping failures with a warning.
fn surviving<T, F>(members: &[LearnerSpec], fit: F) -> Vec<(usize, T)>
where
    T: Send,
    F: Fn(&LearnerSpec) -> Result<T> + Sync,
{
    members
        .par_iter()
        .enumerate()
        .map(|(k, spec)| (k, fit(spec)))
        .collect::<Vec<_>>()
        .into_iter()
        .filter_map(|(k, r)| match r {
            Ok(t) => Some((k, t)),
            Err(e) => {
                warn!("ensemble member {} dropped: {e}", members[k].name());
                None
            }
        })
        .collect()
}

pub fn stack_regressor(
    spec: &EnsembleSpec,
    x: ArrayView2<f64>,
    y: &[f64],
    link: Link,
) -> Result<FittedRegressor> {
    spec.validate()?;
    let n = y.len();
    if spec.members.len() == 1 {
        let member = fit_regressor(&spec.members[0], x, y, link)?;
        return Ok(wrap_regressor(vec![member], vec![1.0], x.ncols(), link));
    }
    let folds = spec.stacking_folds.min(n);
    let fold_of = inner_folds(n, folds, spec.seed, None);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|v| {
            let valid = (0..n).filter(|&i| fold_of[i] == v).collect();
            let train = (0..n).filter(|&i| fold_of[i] != v).collect();
            (train, valid)
        })
        .collect();
    // out-of-fold predictions per member
    let cv = surviving(&spec.members, |member| {
        let mut col = vec![0.0; n];
        for (train, valid) in &splits {
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let f = fit_regressor(member, rows(x, train).view(), &yt, link)?;
            let p = f.predict(rows(x, valid).view())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Learner("non-finite prediction".into()));
            }
            for (&i, v) in valid.iter().zip(p) {
                col[i] = v;
            }
        }
        let full = fit_regressor(member, x, y, link)?;
        Ok((col, full))
    });
    if cv.is_empty() {
        return Err(Error::Learner("every ensemble member failed".into()));
    }
    let (columns, fitted): (Vec<Vec<f64>>, Vec<FittedRegressor>) =
        cv.into_iter().map(|(_, t)| t).unzip();
    let weights = match spec.weight_loss {
        WeightLoss::Squared => squared_weights(&columns, y),
        WeightLoss::Log => {
            if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(
                    "log-loss stacking needs responses in [0, 1]".into(),
                ));
            }
            binary_log_weights(&columns, y)
        }
    };
    Ok(wrap_regressor(fitted, weights, x.ncols(), link))
}

fn wrap_regressor(
    members: Vec<FittedRegressor>,
    weights: Vec<f64>,
    dim: usize,
    link: Link,
) -> FittedRegressor {
    let diagnostics = members
        .iter()
        .flat_map(|m| m.diagnostics.iter().cloned())
        .collect();
    FittedRegressor {
        state: RegressorState::Stack { members, weights },
        feature_dim: dim,
        link,
        diagnostics,
    }
}

pub fn stack_classifier(
    spec: &EnsembleSpec,
    x: ArrayView2<f64>,
    a: &[usize],
    m: usize,
) -> Result<FittedClassifier> {
    spec.validate()?;
    let n = a.len();
    if spec.members.len() == 1 {
        let member = fit_classifier(&spec.members[0], x, a, m)?;
        return Ok(wrap_classifier(vec![member], vec![1.0], x.ncols(), m));
    }
    // surface the missing-class error before any member work
    let mut seen = vec![false; m];
    a.iter().filter(|&&c| c < m).for_each(|&c| seen[c] = true);
    if let Some(class) = seen.iter().position(|s| !s) {
        return Err(Error::MissingClass { class });
    }
    let folds = spec.stacking_folds.min(n);
    let fold_of = inner_folds(n, folds, spec.seed, Some(a));
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|v| {
            let valid = (0..n).filter(|&i| fold_of[i] == v).collect();
            let train = (0..n).filter(|&i| fold_of[i] != v).collect();
            (train, valid)
        })
        .collect();
    let cv = surviving(&spec.members, |member| {
        let mut probs = Array2::zeros((n, m));
        for (train, valid) in &splits {
            let at: Vec<usize> = train.iter().map(|&i| a[i]).collect();
            let f = fit_classifier_lenient(member, rows(x, train).view(), &at, m)?;
            let p = f.predict_proba(rows(x, valid).view())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Learner("non-finite prediction".into()));
            }
            for (r, &i) in valid.iter().enumerate() {
                probs.row_mut(i).assign(&p.row(r));
            }
        }
        let full = fit_classifier(member, x, a, m)?;
        Ok((probs, full))
    });
    if cv.is_empty() {
        return Err(Error::Learner("every ensemble member failed".into()));
    }
    let (probs, fitted): (Vec<Array2<f64>>, Vec<FittedClassifier>) =
        cv.into_iter().map(|(_, t)| t).unzip();
    let weights = match spec.weight_loss {
        WeightLoss::Squared => {
            let columns: Vec<Vec<f64>> =
                probs.iter().map(|p| p.iter().cloned().collect()).collect();
            let target: Vec<f64> = (0..n)
                .flat_map(|i| (0..m).map(move |c| (a[i] == c) as u8 as f64))
                .collect();
            squared_weights(&columns, &target)
        }
        WeightLoss::Log => {
            let columns: Vec<Vec<f64>> = probs
                .iter()
                .map(|p| (0..n).map(|i| p[[i, a[i]]]).collect())
                .collect();
            multinomial_log_weights(&columns)
        }
    };
    Ok(wrap_classifier(fitted, weights, x.ncols(), m))
}

fn wrap_classifier(
    members: Vec<FittedClassifier>,
    weights: Vec<f64>,
    dim: usize,
    m: usize,
) -> FittedClassifier {
    let diagnostics = members
        .iter()
        .flat_map(|c| c.diagnostics.iter().cloned())
        .collect();
    FittedClassifier {
        state: ClassifierState::Stack { members, weights },
        feature_dim: dim,
        n_classes: m,
        diagnostics,
    }
}
